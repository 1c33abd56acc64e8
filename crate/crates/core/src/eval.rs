//! Invariant evaluation, few-shot head adaptation and representation
//! diagnostics.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{argmax, softmax_in_place, Tensor};
use crate::datagen::{features_of, DomainDataset, DomainRng, LabeledExample};
use crate::error::{Error, Result};
use crate::model::{init_model, ModelParams, RepSplit};
use crate::objectives::{adam_step, train_with_validation, ActirHyper, Method, MethodHyper, OptimizerState};

/// Fraction of rows of `logits` whose argmax equals the label.
pub fn accuracy_of(logits: &Tensor, y: &[usize]) -> Result<f64> {
    if y.is_empty() {
        return Err(Error::InvalidArgument("accuracy of an empty dataset".into()));
    }
    if logits.rows() != y.len() {
        return Err(Error::shape(
            "accuracy",
            format!("{} logit rows for {} labels", logits.rows(), y.len()),
        ));
    }
    let hits = (0..y.len())
        .filter(|&i| argmax(logits.row(i)) == y[i])
        .count();
    Ok(hits as f64 / y.len() as f64)
}

/// Accuracy of a batch predictor `x (n x d) -> logits (n x k)` on `data`.
pub fn evaluate_accuracy<F>(predictor: F, data: &DomainDataset) -> Result<f64>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    if data.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "domain {} is empty",
            data.domain_id
        )));
    }
    let logits = predictor(&data.features()?)?;
    accuracy_of(&logits, &data.labels())
}

/// Test accuracy of `g = W^b Φ`.
pub fn invariant_accuracy(params: &ModelParams, data: &DomainDataset) -> Result<f64> {
    evaluate_accuracy(|x| params.represent(x)?.matmul_t(&params.w_base), data)
}

/// Adam on the cross-entropy of `W Φ` over fixed features `phi`, starting
/// from `init`.
fn fit_head(init: &Tensor, phi: &Tensor, y: &[usize], steps: usize, lr: f64) -> Result<Tensor> {
    let mut w = init.clone();
    let k = w.rows();
    let n = y.len() as f64;
    let mut state = OptimizerState::new();
    for _ in 0..steps {
        let mut resid = phi.matmul_t(&w)?;
        for (i, &c) in y.iter().enumerate() {
            let row = &mut resid.values_mut()[i * k..(i + 1) * k];
            softmax_in_place(row);
            row[c] -= 1.0;
        }
        let grad = resid.t_matmul(phi)?.scale(1.0 / n);
        adam_step(&mut state, vec![&mut w], vec![&grad], lr)?;
    }
    Ok(w)
}

/// A copy of `W^b` fine-tuned on `support` with `Φ` frozen.
pub fn fine_tune_head(
    params: &ModelParams,
    support: &[LabeledExample],
    steps: usize,
    lr: f64,
) -> Result<Tensor> {
    if support.is_empty() {
        return Err(Error::InvalidArgument("empty support set".into()));
    }
    let phi = params.represent(&features_of(support.iter())?)?;
    let y: Vec<usize> = support.iter().map(|e| e.y).collect();
    fit_head(&params.w_base, &phi, &y, steps, lr)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptationReport {
    pub n_support: usize,
    pub repeats: usize,
    pub mean: f64,
    pub stderr: f64,
    pub accuracies: Vec<f64>,
}

/// Mean and standard error (sample std over `√n`; zero for one value).
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

impl AdaptationReport {
    pub fn from_accuracies(n_support: usize, accuracies: Vec<f64>) -> Self {
        let (mean, stderr) = mean_stderr(&accuracies);
        AdaptationReport {
            n_support,
            repeats: accuracies.len(),
            mean,
            stderr,
            accuracies,
        }
    }
}

/// Repeated few-shot adaptation on `domain`: each repeat samples `n_support`
/// examples without replacement, fine-tunes a head on them and scores it on
/// the rest.
pub fn adaptation_protocol(
    params: &ModelParams,
    domain: &DomainDataset,
    n_support: usize,
    repeats: usize,
    steps: usize,
    lr: f64,
    rng: &mut DomainRng,
) -> Result<AdaptationReport> {
    if n_support == 0 || n_support >= domain.len() {
        return Err(Error::InvalidArgument(format!(
            "n_support {} must be in 1..{} for domain {}",
            n_support,
            domain.len(),
            domain.domain_id
        )));
    }
    if repeats == 0 {
        return Err(Error::InvalidArgument("repeats must be positive".into()));
    }
    let phi = params.represent(&domain.features()?)?;
    let y = domain.labels();
    let n = domain.len();
    let seeds: Vec<u64> = (0..repeats).map(|_| rng.next_u64()).collect();
    let accuracies = seeds
        .par_iter()
        .map(|&s| {
            let mut r = DomainRng::new(s);
            let support = r.sample_indices(n, n_support);
            let mut in_support = vec![false; n];
            for &i in &support {
                in_support[i] = true;
            }
            let rest: Vec<usize> = (0..n).filter(|&i| !in_support[i]).collect();
            let ys: Vec<usize> = support.iter().map(|&i| y[i]).collect();
            let head = fit_head(&params.w_base, &phi.select_rows(&support), &ys, steps, lr)?;
            let yr: Vec<usize> = rest.iter().map(|&i| y[i]).collect();
            accuracy_of(&phi.select_rows(&rest).matmul_t(&head)?, &yr)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(AdaptationReport::from_accuracies(n_support, accuracies))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitStats {
    pub unit: usize,
    pub mean_lo: f64,
    pub mean_hi: f64,
    pub std_lo: f64,
    pub std_hi: f64,
    /// `|mean_hi - mean_lo| / (pooled std + 1e-8)`
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub unit: usize,
    pub z: i64,
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub count: usize,
}

/// Per-unit activation statistics split by the two values of `z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitActivationStats {
    pub z_lo: i64,
    pub z_hi: i64,
    pub units: Vec<UnitStats>,
    pub histogram: Vec<HistogramBin>,
}

pub const HISTOGRAM_BINS: usize = 20;

impl UnitActivationStats {
    /// Largest score among the last units divided by the largest score among
    /// the first `k`.
    pub fn separation_ratio(&self, k: usize) -> f64 {
        let max = |it: &[UnitStats]| it.iter().map(|u| u.score).fold(0.0, f64::max);
        let inv = max(&self.units[..k.min(self.units.len())]);
        let rest = max(&self.units[k.min(self.units.len())..]);
        rest / inv.max(1e-12)
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

pub fn disentanglement_stats(
    params: &ModelParams,
    data: &DomainDataset,
) -> Result<UnitActivationStats> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    let z: Vec<i64> = data
        .examples
        .iter()
        .enumerate()
        .map(|(i, e)| {
            e.z.ok_or_else(|| Error::InvalidArgument(format!("example {i} has no z")))
        })
        .collect::<Result<_>>()?;
    let mut levels = z.clone();
    levels.sort_unstable();
    levels.dedup();
    if levels.len() != 2 {
        return Err(Error::InvalidArgument(format!(
            "z must take exactly two values, found {:?}",
            levels
        )));
    }
    let (z_lo, z_hi) = (levels[0], levels[1]);
    let phi = params.represent(&data.features()?)?;
    let mut units = Vec::new();
    let mut histogram = Vec::new();
    for u in 0..phi.cols() {
        let col: Vec<f64> = (0..phi.rows()).map(|i| phi.get(i, u)).collect();
        let lo: Vec<f64> = col.iter().zip(&z).filter(|(_, &zz)| zz == z_lo).map(|(v, _)| *v).collect();
        let hi: Vec<f64> = col.iter().zip(&z).filter(|(_, &zz)| zz == z_hi).map(|(v, _)| *v).collect();
        let (mean_lo, std_lo) = mean_std(&lo);
        let (mean_hi, std_hi) = mean_std(&hi);
        let dof = (lo.len() + hi.len()).saturating_sub(2).max(1) as f64;
        let pooled = (((lo.len().max(1) - 1) as f64 * std_lo * std_lo
            + (hi.len().max(1) - 1) as f64 * std_hi * std_hi)
            / dof)
            .sqrt();
        units.push(UnitStats {
            unit: u,
            mean_lo,
            mean_hi,
            std_lo,
            std_hi,
            score: (mean_hi - mean_lo).abs() / (pooled + 1e-8),
        });
        let min = col.iter().copied().fold(f64::INFINITY, f64::min);
        let max = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let width = (max - min) / HISTOGRAM_BINS as f64;
        for (level, vals) in [(z_lo, &lo), (z_hi, &hi)] {
            let mut counts = [0usize; HISTOGRAM_BINS];
            for &v in vals {
                let b = if width > 0.0 {
                    (((v - min) / width) as usize).min(HISTOGRAM_BINS - 1)
                } else {
                    0
                };
                counts[b] += 1;
            }
            for (b, &count) in counts.iter().enumerate() {
                histogram.push(HistogramBin {
                    unit: u,
                    z: level,
                    bin_lo: min + b as f64 * width,
                    bin_hi: min + (b + 1) as f64 * width,
                    count,
                });
            }
        }
    }
    Ok(UnitActivationStats {
        z_lo,
        z_hi,
        units,
        histogram,
    })
}

/// Outcome of a validation grid search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub best: ActirHyper,
    pub best_accuracy: f64,
    /// Validation accuracy per grid point, in grid order.
    pub scores: Vec<f64>,
}

fn prefer(a: (&ActirHyper, f64), b: (&ActirHyper, f64)) -> bool {
    let key = |h: &ActirHyper| (h.lambda_g, h.lambda_c, h.gamma, h.lr, h.steps as f64);
    if a.1 != b.1 {
        return a.1 > b.1;
    }
    key(a.0).partial_cmp(&key(b.0)) == Some(std::cmp::Ordering::Less)
}

/// Trains one ACTIR model per grid point from the same initialisation and
/// keeps the point with the best invariant accuracy on `validation`; ties go
/// to smaller `lambda_g`, then smaller `lambda_c`.
#[allow(clippy::too_many_arguments)]
pub fn select_hyperparams(
    grid: &[ActirHyper],
    base: &MethodHyper,
    split: RepSplit,
    layer_sizes: &[usize],
    train_domains: &[DomainDataset],
    validation: &DomainDataset,
    seed: u64,
) -> Result<Selection> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty hyperparameter grid".into()));
    }
    let ids: Vec<String> = train_domains.iter().map(|d| d.domain_id.clone()).collect();
    let scores = grid
        .par_iter()
        .map(|h| {
            let mut init_rng = DomainRng::for_stream(seed, "init");
            let mut params = init_model(split, layer_sizes, &ids, &mut init_rng)?;
            let mut hyper = base.clone();
            hyper.actir = h.clone();
            let mut rng = DomainRng::for_stream(seed, "train");
            train_with_validation(Method::Actir, &mut params, train_domains, Some(validation), &hyper, &mut rng)?;
            invariant_accuracy(&params, validation)
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut best = 0;
    for i in 1..grid.len() {
        if prefer((&grid[i], scores[i]), (&grid[best], scores[best])) {
            best = i;
        }
    }
    Ok(Selection {
        best: grid[best].clone(),
        best_accuracy: scores[best],
        scores,
    })
}

/// The validation grid `γ ∈ {0.1, 0.5, 0.9}`, `λ, λ_g ∈ {0.1, 1, 10}` around
/// `base`.
pub fn default_grid(base: &ActirHyper) -> Vec<ActirHyper> {
    let mut out = Vec::new();
    for gamma in [0.1, 0.5, 0.9] {
        for lambda_c in [0.1, 1.0, 10.0] {
            for lambda_g in [0.1, 1.0, 10.0] {
                out.push(ActirHyper {
                    gamma,
                    lambda_c,
                    lambda_g,
                    ..base.clone()
                });
            }
        }
    }
    out
}
