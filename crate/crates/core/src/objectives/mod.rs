//! Training objectives, the Adam optimizer and the training loops.

mod actir;
mod adam;
mod baselines;
mod train;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::causal_reg::CondProduct;
use crate::datagen::{features_of, DomainDataset, LabeledExample};
use crate::error::{Error, Result};
use crate::model::ParamGrads;

pub use actir::{actir_objective, inner_grad, inner_grad_norm_sq, inner_loss};
pub use adam::{adam_step, OptimizerState};
pub use baselines::{erm_objective, irm_objective, irm_scale_grad, maml_outer_step};
pub use train::{train, train_with_validation, ErmHyper, IrmHyper, MamlHyper, Method, MethodHyper, TrainLog};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ActirHyper {
    /// Weight of the domain-specific risk against the invariant risk.
    pub gamma: f64,
    /// Weight of the conditional-independence penalty inside the inner loss.
    pub lambda_c: f64,
    /// Weight of the inner-gradient penalty.
    pub lambda_g: f64,
    pub lr: f64,
    pub steps: usize,
    pub cond_product: CondProduct,
    /// Huber width applied to the moment entries inside the inner loss;
    /// `0` is the exact L1 norm.
    pub cond_smoothing: f64,
    /// Stop gradients through the invariant logits inside the penalty.
    pub detach_invariant: bool,
    /// Score the invariant predictor on the validation domain every
    /// `select_every` steps and keep the best parameters; `0` keeps the last.
    pub select_every: usize,
    /// Steps before validation selection starts; the final step is always
    /// a candidate.
    pub select_after: usize,
}

impl Default for ActirHyper {
    fn default() -> Self {
        ActirHyper {
            gamma: 0.5,
            lambda_c: 3.0,
            lambda_g: 3.0,
            lr: 1e-2,
            steps: 2000,
            cond_product: CondProduct::Cross,
            cond_smoothing: 0.0,
            detach_invariant: false,
            select_every: 10,
            select_after: 100,
        }
    }
}

impl ActirHyper {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma {} outside [0, 1]", self.gamma)));
        }
        if !(self.lambda_c >= 0.0 && self.lambda_g >= 0.0 && self.lr > 0.0 && self.cond_smoothing >= 0.0) {
            return Err(Error::Config(format!(
                "need lambda_c >= 0, lambda_g >= 0, lr > 0, cond_smoothing >= 0 (got {}, {}, {}, {})",
                self.lambda_c, self.lambda_g, self.lr, self.cond_smoothing
            )));
        }
        Ok(())
    }
}

/// Features and labels of one domain's batch.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainBatch {
    pub domain_id: String,
    pub x: Tensor,
    pub y: Vec<usize>,
}

impl DomainBatch {
    pub fn from_dataset(ds: &DomainDataset) -> Result<Self> {
        Ok(DomainBatch {
            domain_id: ds.domain_id.clone(),
            x: ds.features()?,
            y: ds.labels(),
        })
    }

    pub fn from_examples(domain_id: &str, examples: &[LabeledExample]) -> Result<Self> {
        Ok(DomainBatch {
            domain_id: domain_id.to_string(),
            x: features_of(examples.iter())?,
            y: examples.iter().map(|e| e.y).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> DomainBatch {
        DomainBatch {
            domain_id: self.domain_id.clone(),
            x: self.x.select_rows(idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
        }
    }

    /// All batches stacked into one (domain id of the first).
    pub fn pooled(batches: &[DomainBatch]) -> Result<DomainBatch> {
        let first = batches
            .first()
            .ok_or_else(|| Error::InvalidArgument("no batches to pool".into()))?;
        let c = first.x.cols();
        let mut vals = Vec::new();
        let mut y = Vec::new();
        for b in batches {
            if b.x.cols() != c {
                return Err(Error::shape("pooled", "feature widths differ across domains"));
            }
            vals.extend_from_slice(b.x.values());
            y.extend_from_slice(&b.y);
        }
        Ok(DomainBatch {
            domain_id: first.domain_id.clone(),
            x: Tensor::matrix(y.len(), c, vals)?,
            y,
        })
    }
}

/// Value of an objective and its gradient with respect to `Φ` and every
/// domain head.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveOutput {
    pub value: f64,
    pub grads: ParamGrads,
}

pub(crate) fn one_hot(y: &[usize], k: usize) -> Result<Tensor> {
    let mut t = Tensor::zeros(&[y.len(), k]);
    for (i, &c) in y.iter().enumerate() {
        if c >= k {
            return Err(Error::InvalidArgument(format!(
                "class index {} out of range for {} classes",
                c, k
            )));
        }
        t.set(i, c, 1.0);
    }
    Ok(t)
}
