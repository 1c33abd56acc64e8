use serde::{Deserialize, Serialize};

use super::{
    actir_objective, adam_step, erm_objective, irm_objective, maml_outer_step, ActirHyper,
    DomainBatch, OptimizerState,
};
use crate::datagen::{DomainDataset, DomainRng};
use crate::error::{Error, Result};
use crate::eval::invariant_accuracy;
use crate::model::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Erm,
    Irm,
    Maml,
    Actir,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Erm, Method::Irm, Method::Maml, Method::Actir];

    pub fn name(self) -> &'static str {
        match self {
            Method::Erm => "erm",
            Method::Irm => "irm",
            Method::Maml => "maml",
            Method::Actir => "actir",
        }
    }

    pub fn display(self) -> &'static str {
        match self {
            Method::Erm => "ERM",
            Method::Irm => "IRM",
            Method::Maml => "MAML",
            Method::Actir => "ACTIR",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ErmHyper {
    pub lr: f64,
    pub steps: usize,
}

impl Default for ErmHyper {
    fn default() -> Self {
        ErmHyper { lr: 1e-2, steps: 2000 }
    }
}

/// IRM penalty schedule: weight 1 for `anneal_steps`, then `penalty_weight`
/// with a fresh optimizer state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IrmHyper {
    pub penalty_weight: f64,
    pub anneal_steps: usize,
    pub lr: f64,
    pub steps: usize,
}

impl Default for IrmHyper {
    fn default() -> Self {
        IrmHyper {
            penalty_weight: 1e4,
            anneal_steps: 100,
            lr: 1e-2,
            steps: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MamlHyper {
    pub inner_lr: f64,
    pub outer_lr: f64,
    pub steps: usize,
}

impl Default for MamlHyper {
    fn default() -> Self {
        MamlHyper {
            inner_lr: 1e-2,
            outer_lr: 1e-2,
            steps: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MethodHyper {
    pub actir: ActirHyper,
    pub erm: ErmHyper,
    pub irm: IrmHyper,
    pub maml: MamlHyper,
    /// Per-domain mini-batch size; full batch when absent.
    pub batch_size: Option<usize>,
}

impl MethodHyper {
    pub fn steps(&self, method: Method) -> usize {
        match method {
            Method::Actir => self.actir.steps,
            Method::Erm => self.erm.steps,
            Method::Irm => self.irm.steps,
            Method::Maml => self.maml.steps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.actir.validate()?;
        let positive = [self.erm.lr, self.irm.lr, self.maml.outer_lr];
        if positive.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if !(self.irm.penalty_weight >= 0.0 && self.maml.inner_lr >= 0.0) {
            return Err(Error::Config(
                "irm penalty weight and maml inner lr must be nonnegative".into(),
            ));
        }
        if self.batch_size == Some(0) {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// Objective value at every step (before that step's update).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub losses: Vec<f64>,
    /// Number of completed steps of the kept parameters and their validation
    /// accuracy, when validation selection ran.
    pub selected: Option<(usize, f64)>,
}

impl TrainLog {
    pub fn first(&self) -> Option<f64> {
        self.losses.first().copied()
    }

    pub fn last(&self) -> Option<f64> {
        self.losses.last().copied()
    }
}

fn draw_batches(
    full: &[DomainBatch],
    batch_size: Option<usize>,
    rng: &mut DomainRng,
) -> Vec<DomainBatch> {
    match batch_size {
        Some(b) => full
            .iter()
            .map(|d| {
                if d.len() <= b {
                    d.clone()
                } else {
                    d.select(&rng.sample_indices(d.len(), b))
                }
            })
            .collect(),
        None => full.to_vec(),
    }
}

fn halves(batch: &DomainBatch, rng: &mut DomainRng) -> (DomainBatch, DomainBatch) {
    let mut idx: Vec<usize> = (0..batch.len()).collect();
    rng.shuffle(&mut idx);
    let cut = batch.len() / 2;
    (batch.select(&idx[..cut]), batch.select(&idx[cut..]))
}

/// Trains `params` with `method` on `domains`. Heads for the training
/// domains are added for ACTIR. `W^b` is never updated.
pub fn train(
    method: Method,
    params: &mut ModelParams,
    domains: &[DomainDataset],
    hyper: &MethodHyper,
    rng: &mut DomainRng,
) -> Result<TrainLog> {
    train_with_validation(method, params, domains, None, hyper, rng)
}

/// [`train`], with ACTIR keeping the parameters whose invariant predictor
/// scores best on `validation` (see [`ActirHyper::select_every`]).
pub fn train_with_validation(
    method: Method,
    params: &mut ModelParams,
    domains: &[DomainDataset],
    validation: Option<&DomainDataset>,
    hyper: &MethodHyper,
    rng: &mut DomainRng,
) -> Result<TrainLog> {
    hyper.validate()?;
    if domains.is_empty() {
        return Err(Error::InvalidArgument("no training domains".into()));
    }
    let full: Vec<DomainBatch> = domains
        .iter()
        .map(DomainBatch::from_dataset)
        .collect::<Result<_>>()?;
    if method == Method::Actir {
        for d in &full {
            params.add_domain(&d.domain_id);
        }
    }
    let steps = hyper.steps(method);
    let mut state = OptimizerState::new();
    let mut log = TrainLog {
        losses: Vec::with_capacity(steps),
        selected: None,
    };
    let every = hyper.actir.select_every;
    let selector = validation.filter(|_| method == Method::Actir && every > 0);
    let mut best: Option<(usize, f64, ModelParams)> = None;
    for step in 0..steps {
        let batches = draw_batches(&full, hyper.batch_size, rng);
        let value = match method {
            Method::Actir => {
                let out = actir_objective(params, &batches, &hyper.actir)?;
                adam_step(&mut state, params.trainable_mut(true), out.grads.flat(true), hyper.actir.lr)?;
                out.value
            }
            Method::Erm => {
                let pooled = DomainBatch::pooled(&batches)?;
                let out = erm_objective(params, &pooled)?;
                adam_step(&mut state, params.trainable_mut(false), out.grads.flat(false), hyper.erm.lr)?;
                out.value
            }
            Method::Irm => {
                let irm = &hyper.irm;
                if step == irm.anneal_steps && irm.anneal_steps > 0 {
                    state = OptimizerState::new();
                }
                let weight = if step < irm.anneal_steps { 1.0 } else { irm.penalty_weight };
                let out = irm_objective(params, &batches, weight)?;
                adam_step(&mut state, params.trainable_mut(false), out.grads.flat(false), irm.lr)?;
                out.value
            }
            Method::Maml => {
                let splits: Vec<_> = batches.iter().map(|b| halves(b, rng)).collect();
                maml_outer_step(params, &splits, hyper.maml.inner_lr, hyper.maml.outer_lr, &mut state)?
            }
        };
        if !value.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "{} objective became non-finite at step {}",
                method.name(),
                step
            )));
        }
        log.losses.push(value);
        if let Some(val) = selector {
            let done = step + 1;
            if (done % every == 0 && done >= hyper.actir.select_after) || done == steps {
                let acc = invariant_accuracy(params, val)?;
                if best.as_ref().map_or(true, |b| acc > b.1) {
                    best = Some((done, acc, params.clone()));
                }
            }
        }
    }
    if let Some((done, acc, kept)) = best {
        *params = kept;
        log.selected = Some((done, acc));
    }
    Ok(log)
}
