#![allow(dead_code)]

use actir::datagen::DomainRng;
use actir::model::{init_model, ModelParams, RepSplit};
use actir::objectives::DomainBatch;
use actir::Tensor;

/// 2-4-4 network (`k = 2`, `m = 2`) with random heads for `domains`.
pub fn micro_model(seed: u64, domains: &[&str]) -> ModelParams {
    let mut rng = DomainRng::new(seed);
    let ids: Vec<String> = domains.iter().map(|s| s.to_string()).collect();
    let mut p = init_model(RepSplit::new(2, 2).unwrap(), &[2, 4, 4], &ids, &mut rng).unwrap();
    for w in p.w_domain.values_mut() {
        for v in w.values_mut() {
            *v = rng.uniform_range(-0.5, 0.5);
        }
    }
    p
}

/// `n` continuous inputs with random binary labels.
pub fn micro_batch(seed: u64, id: &str, n: usize) -> DomainBatch {
    let mut rng = DomainRng::for_stream(seed, id);
    let x: Vec<f64> = (0..2 * n).map(|_| rng.uniform_range(-2.0, 2.0)).collect();
    let mut y: Vec<usize> = (0..n).map(|i| i % 2).collect();
    rng.shuffle(&mut y);
    DomainBatch {
        domain_id: id.to_string(),
        x: Tensor::matrix(n, 2, x).unwrap(),
        y,
    }
}

/// Copy of `p` with its trainable tensors replaced by `flat`.
pub fn with_trainable(p: &ModelParams, flat: &[Tensor], include_heads: bool) -> ModelParams {
    let mut q = p.clone();
    for (dst, src) in q.trainable_mut(include_heads).into_iter().zip(flat) {
        *dst = src.clone();
    }
    q
}

pub fn trainable(p: &ModelParams, include_heads: bool) -> Vec<Tensor> {
    let mut q = p.clone();
    q.trainable_mut(include_heads).into_iter().map(|t| t.clone()).collect()
}

pub fn inner_hyper(lambda_c: f64, product: actir::causal_reg::CondProduct, smoothing: f64) -> actir::objectives::ActirHyper {
    actir::objectives::ActirHyper {
        lambda_c,
        cond_product: product,
        cond_smoothing: smoothing,
        ..Default::default()
    }
}
