mod common;

use actir::autodiff::grad_check;
use actir::causal_reg::CondProduct;
use actir::objectives::{
    actir_objective, erm_objective, inner_grad, inner_grad_norm_sq, inner_loss, irm_objective,
    irm_scale_grad, ActirHyper, DomainBatch,
};
use actir::Tensor;
use common::{inner_hyper, micro_batch, micro_model, trainable, with_trainable};
use proptest::prelude::*;

const STEP: f64 = 1e-5;

fn hyper(gamma: f64, lambda_c: f64, lambda_g: f64, product: CondProduct) -> ActirHyper {
    ActirHyper {
        gamma,
        lambda_c,
        lambda_g,
        cond_product: product,
        ..ActirHyper::default()
    }
}

fn inner_grad_fd_error(seed: u64, h: &ActirHyper) -> f64 {
    let p = micro_model(seed, &["a"]);
    let b = micro_batch(seed, "a", 8);
    let analytic = inner_grad(&p, &b, h).unwrap();
    let head = p.w_domain["a"].clone();
    grad_check(
        |ws: &[Tensor]| {
            let mut q = p.clone();
            q.w_domain.insert("a".into(), ws[0].clone());
            inner_loss(&q, &b, h).unwrap()
        },
        &[head],
        &[analytic],
        STEP,
    )
}

fn norm_sq_fd_error(seed: u64, h: &ActirHyper) -> f64 {
    let p = micro_model(seed, &["a"]);
    let b = micro_batch(seed, "a", 8);
    let out = inner_grad_norm_sq(&p, &b, h).unwrap();
    let flat = trainable(&p, true);
    let analytic: Vec<Tensor> = out.grads.flat(true).into_iter().cloned().collect();
    grad_check(
        |ts: &[Tensor]| {
            let q = with_trainable(&p, ts, true);
            inner_grad_norm_sq(&q, &b, h).unwrap().value
        },
        &flat,
        &analytic,
        STEP,
    )
}

fn actir_fd_error(seed: u64, h: &ActirHyper) -> f64 {
    let p = micro_model(seed, &["a", "b"]);
    let bs = [micro_batch(seed, "a", 8), micro_batch(seed, "b", 8)];
    let out = actir_objective(&p, &bs, h).unwrap();
    let flat = trainable(&p, true);
    let analytic: Vec<Tensor> = out.grads.flat(true).into_iter().cloned().collect();
    grad_check(
        |ts: &[Tensor]| actir_objective(&with_trainable(&p, ts, true), &bs, h).unwrap().value,
        &flat,
        &analytic,
        STEP,
    )
}

fn irm_fd_error(seed: u64, weight: f64) -> f64 {
    let p = micro_model(seed, &[]);
    let bs = [micro_batch(seed, "a", 8), micro_batch(seed, "b", 8)];
    let out = irm_objective(&p, &bs, weight).unwrap();
    let flat = trainable(&p, false);
    let analytic: Vec<Tensor> = out.grads.flat(false).into_iter().cloned().collect();
    grad_check(
        |ts: &[Tensor]| irm_objective(&with_trainable(&p, ts, false), &bs, weight).unwrap().value,
        &flat,
        &analytic,
        STEP,
    )
}

#[test]
fn inner_gradient_matches_finite_differences() {
    for seed in 0..5 {
        for product in [CondProduct::Elementwise, CondProduct::Cross] {
            for lambda_c in [0.0, 1.0, 10.0] {
                for smoothing in [0.0, 0.05] {
                    let e = inner_grad_fd_error(seed, &inner_hyper(lambda_c, product, smoothing));
                    assert!(e < 1e-5, "seed {seed} {product:?} λ={lambda_c} δ={smoothing}: {e}");
                }
            }
        }
    }
}

#[test]
fn inner_gradient_is_zero_at_stationary_head() {
    // every input appears once with each label, so the convex inner problem
    // (λ = 0) has a finite minimiser
    let mut p = micro_model(3, &["a"]);
    let half = micro_batch(3, "a", 4);
    let mut b = DomainBatch::pooled(&[half.clone(), half.clone()]).unwrap();
    for i in 0..4 {
        b.y[i + 4] = 1 - b.y[i];
    }
    for _ in 0..20000 {
        let g = inner_grad(&p, &b, &inner_hyper(0.0, CondProduct::Cross, 0.0)).unwrap();
        let w = p.w_domain.get_mut("a").unwrap();
        *w = w.sub(&g.scale(0.5)).unwrap();
    }
    let v = inner_grad_norm_sq(&p, &b, &inner_hyper(0.0, CondProduct::Cross, 0.0)).unwrap().value;
    assert!(v < 1e-8, "{v}");
}

#[test]
fn saturated_batch_has_vanishing_penalty() {
    // every sample classified with a huge margin through the invariant head
    let mut p = micro_model(0, &["a"]);
    for l in &mut p.phi {
        for v in l.weight.values_mut() {
            *v = 0.0;
        }
        for v in l.bias.values_mut() {
            *v = 0.0;
        }
    }
    p.phi[1].bias.values_mut()[0] = 60.0;
    p.w_domain.insert("a".into(), Tensor::zeros(&[2, 4]));
    let mut b = micro_batch(0, "a", 8);
    b.y = vec![0; 8];
    let v = inner_grad_norm_sq(&p, &b, &inner_hyper(0.0, CondProduct::Cross, 0.0)).unwrap().value;
    assert!(v < 1e-20, "{v}");
}

#[test]
fn inner_grad_norm_sq_matches_finite_differences() {
    for seed in 0..5 {
        for smoothing in [0.0, 0.05] {
            let e = norm_sq_fd_error(seed, &inner_hyper(1.0, CondProduct::Cross, smoothing));
            assert!(e < 1e-4, "seed {seed} δ={smoothing}: {e}");
        }
    }
}

#[test]
fn detached_invariant_keeps_value_but_changes_gradient() {
    let p = micro_model(1, &["a"]);
    let b = micro_batch(1, "a", 8);
    let h = inner_hyper(1.0, CondProduct::Cross, 0.0);
    let full = inner_grad_norm_sq(&p, &b, &h).unwrap();
    let det = inner_grad_norm_sq(&p, &b, &ActirHyper { detach_invariant: true, ..h }).unwrap();
    assert_eq!(full.value, det.value);
    let diff: f64 = full
        .grads
        .flat(true)
        .iter()
        .zip(det.grads.flat(true))
        .map(|(a, b)| a.sub(b).unwrap().max_abs())
        .fold(0.0, f64::max);
    assert!(diff > 1e-9, "{diff}");
}

#[test]
fn actir_objective_matches_finite_differences() {
    for seed in 0..5 {
        for product in [CondProduct::Elementwise, CondProduct::Cross] {
            let e = actir_fd_error(seed, &hyper(0.5, 1.0, 1.0, product));
            assert!(e < 1e-4, "seed {seed} {product:?}: {e}");
            let smooth = ActirHyper { cond_smoothing: 0.05, ..hyper(0.5, 1.0, 1.0, product) };
            let e = actir_fd_error(seed, &smooth);
            assert!(e < 1e-4, "seed {seed} {product:?} smoothed: {e}");
        }
    }
}

#[test]
fn irm_objective_matches_finite_differences() {
    for seed in 0..5 {
        for w in [0.0, 1.0, 100.0] {
            let e = irm_fd_error(seed, w);
            assert!(e < 1e-4, "seed {seed} weight {w}: {e}");
        }
    }
}

#[test]
fn irm_scale_gradient_matches_finite_differences() {
    for seed in 0..5 {
        let p = micro_model(seed, &[]);
        let b = micro_batch(seed, "a", 8);
        let analytic = irm_scale_grad(&p, &b).unwrap();
        let logits = p.represent(&b.x).unwrap().matmul_t(&p.w_base).unwrap();
        let risk = |s: f64| {
            let z = logits.scale(s);
            (0..b.len())
                .map(|i| actir::autodiff::softmax_xent(z.row(i), b.y[i]).unwrap())
                .sum::<f64>()
                / b.len() as f64
        };
        let fd = (risk(1.0 + STEP) - risk(1.0 - STEP)) / (2.0 * STEP);
        let rel = (analytic - fd).abs() / (analytic.abs() + fd.abs()).max(1e-8);
        assert!(rel < 1e-5, "seed {seed}: analytic {analytic} fd {fd}");
    }
}

#[test]
fn erm_objective_matches_finite_differences() {
    let p = micro_model(1, &[]);
    let b = DomainBatch::pooled(&[micro_batch(1, "a", 8), micro_batch(1, "b", 8)]).unwrap();
    let out = erm_objective(&p, &b).unwrap();
    let analytic: Vec<Tensor> = out.grads.flat(false).into_iter().cloned().collect();
    let e = grad_check(
        |ts: &[Tensor]| erm_objective(&with_trainable(&p, ts, false), &b).unwrap().value,
        &trainable(&p, false),
        &analytic,
        STEP,
    );
    assert!(e < 1e-4, "{e}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn randomized_objectives_match_finite_differences(
        seed in any::<u64>(),
        gamma in 0.0f64..1.0,
        lambda_c in 0.1f64..10.0,
        lambda_g in 0.1f64..10.0,
        cross in any::<bool>(),
    ) {
        let product = if cross { CondProduct::Cross } else { CondProduct::Elementwise };
        let ih = inner_hyper(lambda_c, product, 0.0);
        prop_assert!(inner_grad_fd_error(seed, &ih) < 1e-4);
        prop_assert!(norm_sq_fd_error(seed, &ih) < 1e-4);
        prop_assert!(actir_fd_error(seed, &hyper(gamma, lambda_c, lambda_g, product)) < 1e-4);
        prop_assert!(irm_fd_error(seed, lambda_g) < 1e-4);
    }
}
