//! Acceptance suite. Prints one PASS/FAIL/SKIPPED line per criterion and
//! exits non-zero if any criterion fails.

mod common;

use std::path::PathBuf;
use std::time::Instant;

use actir::autodiff::grad_check;
use actir::causal_reg::{c_cond_hat, CondProduct, CondSample};
use actir::config::ExperimentConfig;
use actir::datagen::{DomainRng, MnistFiles, TaskKind};
use actir::eval::{disentanglement_stats, fine_tune_head};
use actir::experiment::{generate_domains, record_path, run_experiment, run_once, RunRecord};
use actir::objectives::{
    actir_objective, inner_grad, inner_grad_norm_sq, inner_loss, irm_objective, ActirHyper, Method,
};
use actir::report::aggregate;
use actir::Tensor;
use common::{inner_hyper, micro_batch, micro_model, trainable, with_trainable};

enum Outcome {
    Pass(String),
    Fail(String),
    Skipped(String),
}

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

struct Table {
    test: f64,
    adapt10: f64,
}

fn run_task(task: TaskKind, method: Method, runs: usize, mnist: Option<PathBuf>) -> Table {
    let dir = tempfile::tempdir().expect("temp dir");
    let mut cfg = ExperimentConfig::standard(task, method);
    cfg.runs = runs;
    cfg.out_dir = dir.path().to_path_buf();
    cfg.mnist_dir = mnist;
    let records: Vec<RunRecord> = run_experiment(&cfg).expect("experiment");
    let rows = aggregate(&records);
    let cell = |n: usize| rows.iter().find(|r| r.n_support == n).map_or(f64::NAN, |r| r.mean);
    Table { test: cell(0), adapt10: cell(10) }
}

fn pct(x: f64) -> String {
    format!("{:.2}%", 100.0 * x)
}

fn synthetic_table() -> Outcome {
    let erm = run_task(TaskKind::Synthetic, Method::Erm, 20, None);
    let irm = run_task(TaskKind::Synthetic, Method::Irm, 20, None);
    let actir = run_task(TaskKind::Synthetic, Method::Actir, 20, None);
    let ok = (0.08..=0.13).contains(&erm.test)
        && irm.test >= 0.72
        && actir.test >= 0.72
        && actir.adapt10 >= 0.85;
    verdict(
        ok,
        format!(
            "ERM {} in [8,13]; IRM {} >= 72; ACTIR {} >= 72; ACTIR adaptation(10) {} >= 85",
            pct(erm.test),
            pct(irm.test),
            pct(actir.test),
            pct(actir.adapt10)
        ),
    )
}

fn counterexample_table() -> Outcome {
    let erm = run_task(TaskKind::Counterexample, Method::Erm, 20, None);
    let irm = run_task(TaskKind::Counterexample, Method::Irm, 20, None);
    let actir = run_task(TaskKind::Counterexample, Method::Actir, 20, None);
    let ok = actir.test <= irm.test - 0.15
        && actir.adapt10 >= 0.55
        && (0.08..=0.16).contains(&erm.test);
    verdict(
        ok,
        format!(
            "ACTIR {} <= IRM {} - 15; ACTIR adaptation(10) {} >= 55; ERM {} in [8,16]",
            pct(actir.test),
            pct(irm.test),
            pct(actir.adapt10),
            pct(erm.test)
        ),
    )
}

fn mnist_dir() -> Option<PathBuf> {
    let candidates = [
        std::env::var_os("ACTIR_MNIST_DIR").map(PathBuf::from),
        Some(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist")),
    ];
    candidates
        .into_iter()
        .flatten()
        .find(|d| MnistFiles::locate(d).is_ok())
}

fn color_mnist_table() -> Outcome {
    let Some(dir) = mnist_dir() else {
        return Outcome::Skipped("MNIST files not found (set ACTIR_MNIST_DIR)".into());
    };
    let erm = run_task(TaskKind::ColorMnist, Method::Erm, 5, Some(dir.clone()));
    let actir = run_task(TaskKind::ColorMnist, Method::Actir, 5, Some(dir));
    let ok = actir.test >= 0.63 && actir.adapt10 >= 0.76 && actir.test >= erm.test + 0.25;
    verdict(
        ok,
        format!(
            "ACTIR {} >= 63; ACTIR adaptation(10) {} >= 76; ERM {} at least 25 below ACTIR",
            pct(actir.test),
            pct(actir.adapt10),
            pct(erm.test)
        ),
    )
}

fn regularizer_soundness() -> Outcome {
    let n = 10_000;
    let draw = |dependent: bool| -> Vec<CondSample> {
        let mut rng = DomainRng::new(17);
        (0..n)
            .map(|_| {
                let d = rng.below(2);
                let s = if d == 0 { -1.0 } else { 1.0 };
                let a: Vec<f64> = (0..2).map(|_| s + rng.uniform_range(-1.0, 1.0)).collect();
                let b: Vec<f64> = if dependent {
                    a.iter().map(|v| v + 0.1 * rng.uniform_range(-1.0, 1.0)).collect()
                } else {
                    (0..2).map(|_| 2.0 * s + rng.uniform_range(-1.0, 1.0)).collect()
                };
                CondSample { a, b, d }
            })
            .collect()
    };
    let indep = c_cond_hat(&draw(false)).unwrap();
    let dep = c_cond_hat(&draw(true)).unwrap();
    let bound = 5.0 / (n as f64).sqrt();
    verdict(
        indep < bound && dep >= 10.0 * indep,
        format!("independent {indep:.5} < {bound}; dependent {dep:.4} >= 10x"),
    )
}

const FD_STEP: f64 = 1e-5;

fn gradient_correctness() -> Outcome {
    let mut worst: f64 = 0.0;
    for trial in 0..100u64 {
        let mut rng = DomainRng::new(trial);
        let product = if trial % 2 == 0 { CondProduct::Cross } else { CondProduct::Elementwise };
        let lambda_c = rng.uniform_range(0.1, 10.0);
        let h = ActirHyper {
            gamma: rng.uniform(),
            lambda_c,
            lambda_g: rng.uniform_range(0.1, 10.0),
            cond_product: product,
            ..ActirHyper::default()
        };
        let p = micro_model(trial, &["a", "b"]);
        let bs = [micro_batch(trial, "a", 8), micro_batch(trial, "b", 8)];

        let ih = inner_hyper(lambda_c, product, 0.0);
        let head = p.w_domain["a"].clone();
        let g = inner_grad(&p, &bs[0], &ih).unwrap();
        worst = worst.max(grad_check(
            |w: &[Tensor]| {
                let mut q = p.clone();
                q.w_domain.insert("a".into(), w[0].clone());
                inner_loss(&q, &bs[0], &ih).unwrap()
            },
            &[head],
            &[g],
            FD_STEP,
        ));

        let flat = trainable(&p, true);
        let out = inner_grad_norm_sq(&p, &bs[0], &ih).unwrap();
        let an: Vec<Tensor> = out.grads.flat(true).into_iter().cloned().collect();
        worst = worst.max(grad_check(
            |ts: &[Tensor]| {
                inner_grad_norm_sq(&with_trainable(&p, ts, true), &bs[0], &ih).unwrap().value
            },
            &flat,
            &an,
            FD_STEP,
        ));

        let out = actir_objective(&p, &bs, &h).unwrap();
        let an: Vec<Tensor> = out.grads.flat(true).into_iter().cloned().collect();
        worst = worst.max(grad_check(
            |ts: &[Tensor]| actir_objective(&with_trainable(&p, ts, true), &bs, &h).unwrap().value,
            &flat,
            &an,
            FD_STEP,
        ));

        let w = h.lambda_g * 10.0;
        let flat_phi = trainable(&p, false);
        let out = irm_objective(&p, &bs, w).unwrap();
        let an: Vec<Tensor> = out.grads.flat(false).into_iter().cloned().collect();
        worst = worst.max(grad_check(
            |ts: &[Tensor]| irm_objective(&with_trainable(&p, ts, false), &bs, w).unwrap().value,
            &flat_phi,
            &an,
            FD_STEP,
        ));
    }
    verdict(worst < 1e-4, format!("max relative error {worst:.2e} < 1e-4 over 100 trials"))
}

fn disentanglement() -> Outcome {
    let mut cfg = ExperimentConfig::standard(TaskKind::Synthetic, Method::Actir);
    cfg.adaptation.n_support.clear();
    let mut ratios = Vec::new();
    for seed in 0..5 {
        cfg.seed = seed;
        let (_, params) = run_once(&cfg, 0, None, None).expect("training");
        let domains = generate_domains(&cfg, seed, None).expect("domains");
        let stats = disentanglement_stats(&params, &domains.test).expect("stats");
        ratios.push(stats.separation_ratio(params.split.k));
    }
    let good = ratios.iter().filter(|&&r| r >= 3.0).count();
    let shown: Vec<String> = ratios.iter().map(|r| format!("{r:.2}")).collect();
    verdict(good >= 3, format!("ratio >= 3 on {good}/5 seeds ({})", shown.join(", ")))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().expect("temp dir");
    let mut cfg = ExperimentConfig::standard(TaskKind::Synthetic, Method::Actir);
    cfg.runs = 2;
    cfg.out_dir = dir.path().to_path_buf();
    cfg.hyper.actir.steps = 300;
    cfg.adaptation.repeats = 20;
    let read = || -> Vec<Vec<u8>> {
        (0..cfg.runs)
            .map(|r| std::fs::read(record_path(&cfg.out_dir, cfg.task, cfg.method, r)).unwrap())
            .collect()
    };
    run_experiment(&cfg).expect("first invocation");
    let first = read();
    run_experiment(&cfg).expect("second invocation");
    let second = read();
    verdict(first == second, format!("{} records byte-identical", first.len()))
}

fn frozen_head() -> Outcome {
    let cfg = ExperimentConfig::standard(TaskKind::Synthetic, Method::Actir);
    let domains = generate_domains(&cfg, 0, None).expect("domains");
    let mut params = actir::experiment::fresh_model(&cfg, &domains, 0).expect("model");
    let before = params.w_base.clone();
    actir::objectives::train(
        Method::Actir,
        &mut params,
        &domains.train,
        &cfg.hyper,
        &mut DomainRng::new(0),
    )
    .expect("training");
    let base_same = params.w_base.values().iter().map(|v| v.to_bits()).eq(before.values().iter().map(|v| v.to_bits()));
    let probe = domains.test.features().unwrap();
    let phi_before = params.represent(&probe).unwrap();
    fine_tune_head(&params, &domains.test.examples[..10], 20, 1e-2).expect("fine-tune");
    let phi_after = params.represent(&probe).unwrap();
    let phi_same = phi_before.values().iter().map(|v| v.to_bits()).eq(phi_after.values().iter().map(|v| v.to_bits()));
    verdict(
        base_same && phi_same,
        format!("W^b unchanged: {base_same}; Φ outputs unchanged after fine-tuning: {phi_same}"),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("1 synthetic table", synthetic_table),
        ("2 counterexample table", counterexample_table),
        ("3 color mnist table", color_mnist_table),
        ("4 regularizer soundness", regularizer_soundness),
        ("5 gradient correctness", gradient_correctness),
        ("6 disentanglement", disentanglement),
        ("7 determinism", determinism),
        ("8 frozen head", frozen_head),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, check) in criteria {
        if !only.is_empty() && !only.iter().any(|o| name.contains(o.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = check();
        let secs = start.elapsed().as_secs_f64();
        let (tag, detail) = match outcome {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Outcome::Skipped(d) => ("SKIPPED", d),
        };
        println!("[{tag}] criterion {name}: {detail} ({secs:.1}s)");
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
