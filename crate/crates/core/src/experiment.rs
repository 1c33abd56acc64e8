//! Experiment driver: data generation, training, evaluation and adaptation
//! for every run of a config, with per-run records on disk.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::datagen::{
    build_color_mnist, ColorMnistOptions, DomainDataset, DomainRng, GeneratorSpec, MnistFiles,
    TaskKind,
};
use crate::error::{Error, Result};
use crate::eval::{
    adaptation_protocol, default_grid, invariant_accuracy, select_hyperparams, AdaptationReport,
    Selection,
};
use crate::model::{init_model, ModelParams};
use crate::objectives::{train_with_validation, ActirHyper, Method, MethodHyper, TrainLog};
use crate::report::{aggregate, write_aggregate_csv, write_atomic};

/// Everything one run produced. Serialized as the run's JSON record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub task: TaskKind,
    pub method: Method,
    pub run: usize,
    pub seed: u64,
    pub val_accuracy: f64,
    pub test_accuracy: f64,
    pub adaptation: Vec<AdaptationReport>,
    pub final_loss: Option<f64>,
    /// Training step of the kept checkpoint under validation selection.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selected_step: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selected: Option<ActirHyper>,
    pub config: ExperimentConfig,
}

/// Training, validation and test domains of one run.
#[derive(Debug, Clone)]
pub struct RunDomains {
    pub train: Vec<DomainDataset>,
    pub val: DomainDataset,
    pub test: DomainDataset,
}

impl RunDomains {
    fn from_list(mut all: Vec<DomainDataset>) -> Self {
        let test = all.pop().expect("test domain");
        let val = all.pop().expect("validation domain");
        RunDomains { train: all, val, test }
    }

    pub fn all(&self) -> impl Iterator<Item = &DomainDataset> {
        self.train.iter().chain([&self.val, &self.test])
    }
}

/// Builds the domains of a run with seed `seed`. `mnist` must be given for
/// Color MNIST.
pub fn generate_domains(
    cfg: &ExperimentConfig,
    seed: u64,
    mnist: Option<&MnistFiles>,
) -> Result<RunDomains> {
    let specs = cfg.domains.specs();
    if cfg.task != TaskKind::ColorMnist {
        let spec = GeneratorSpec {
            kind: cfg.task,
            domains: specs,
            seed,
        };
        return Ok(RunDomains::from_list(spec.generate()?));
    }
    let files = mnist.ok_or_else(|| Error::Config("color_mnist needs MNIST files".into()))?;
    let n = cfg.domains.samples;
    let (pool, test_pool) = (&files.train, &files.test);
    let n_pool_domains = specs.len() - 1;
    if n * n_pool_domains > pool.len() || n > test_pool.len() {
        return Err(Error::Config(format!(
            "{} samples per domain do not fit in {} training and {} test images",
            n,
            pool.len(),
            test_pool.len()
        )));
    }
    let mut part = DomainRng::for_stream(seed, "mnist-partition");
    let order = part.sample_indices(pool.len(), n * n_pool_domains);
    let test_idx = part.sample_indices(test_pool.len(), n);
    let opts = ColorMnistOptions::default();
    let mut out = Vec::with_capacity(specs.len());
    for (i, spec) in specs.iter().enumerate() {
        let images = if spec.id == "test" {
            test_pool.select(&test_idx)
        } else {
            pool.select(&order[i * n..(i + 1) * n])
        };
        let mut rng = DomainRng::for_stream(seed, &spec.id);
        let mut ds = build_color_mnist(&images, spec.beta, &mut rng, opts)?;
        ds.domain_id = spec.id.clone();
        out.push(ds);
    }
    Ok(RunDomains::from_list(out))
}

pub fn load_mnist(cfg: &ExperimentConfig) -> Result<Option<MnistFiles>> {
    if cfg.task != TaskKind::ColorMnist {
        return Ok(None);
    }
    let dir = cfg
        .mnist_dir
        .as_ref()
        .ok_or_else(|| Error::Config("color_mnist needs mnist_dir".into()))?;
    MnistFiles::load(dir).map(Some)
}

/// A freshly initialised model for `cfg` with a head per training domain.
pub fn fresh_model(cfg: &ExperimentConfig, domains: &RunDomains, seed: u64) -> Result<ModelParams> {
    let ids: Vec<String> = domains.train.iter().map(|d| d.domain_id.clone()).collect();
    let mut rng = DomainRng::for_stream(seed, "init");
    let mut params = init_model(cfg.model.split()?, &cfg.model.layer_sizes, &ids, &mut rng)?;
    params.adaptive_block_only = cfg.model.adaptive_block_only;
    Ok(params)
}

/// Trains `cfg.method` on the training domains of a run.
pub fn train_run(
    cfg: &ExperimentConfig,
    hyper: &MethodHyper,
    domains: &RunDomains,
    seed: u64,
) -> Result<(ModelParams, TrainLog)> {
    let mut params = fresh_model(cfg, domains, seed)?;
    let mut rng = DomainRng::for_stream(seed, "train");
    let log = train_with_validation(cfg.method, &mut params, &domains.train, Some(&domains.val), hyper, &mut rng)?;
    Ok((params, log))
}

/// One complete run: generate, train, evaluate, adapt.
pub fn run_once(
    cfg: &ExperimentConfig,
    run: usize,
    selected: Option<&ActirHyper>,
    mnist: Option<&MnistFiles>,
) -> Result<(RunRecord, ModelParams)> {
    let seed = cfg.seed + run as u64;
    let domains = generate_domains(cfg, seed, mnist)?;
    let mut hyper = cfg.hyper.clone();
    if let Some(h) = selected {
        hyper.actir = h.clone();
    }
    let (params, log) = train_run(cfg, &hyper, &domains, seed)?;
    let a = &cfg.adaptation;
    let adaptation = a
        .n_support
        .iter()
        .map(|&n| {
            let mut rng = DomainRng::for_stream(seed, &format!("adapt-{n}"));
            adaptation_protocol(&params, &domains.test, n, a.repeats, a.steps, a.lr, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    let record = RunRecord {
        task: cfg.task,
        method: cfg.method,
        run,
        seed,
        val_accuracy: invariant_accuracy(&params, &domains.val)?,
        test_accuracy: invariant_accuracy(&params, &domains.test)?,
        adaptation,
        final_loss: log.last(),
        selected_step: log.selected.map(|s| s.0),
        selected: selected.cloned(),
        config: cfg.clone(),
    };
    Ok((record, params))
}

/// Validation grid search on the base seed's domains.
pub fn select_for(cfg: &ExperimentConfig, mnist: Option<&MnistFiles>) -> Result<Selection> {
    let domains = generate_domains(cfg, cfg.seed, mnist)?;
    select_hyperparams(
        &default_grid(&cfg.hyper.actir),
        &cfg.hyper,
        cfg.model.split()?,
        &cfg.model.layer_sizes,
        &domains.train,
        &domains.val,
        cfg.seed,
    )
}

pub fn record_path(dir: &Path, task: TaskKind, method: Method, run: usize) -> PathBuf {
    dir.join("records")
        .join(format!("{}_{}_run{:03}.json", task.name(), method.name(), run))
}

/// Runs every seed of `cfg` in parallel, writes one JSON record per run and
/// refreshes `aggregate.csv` from every record in the output directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RunRecord>> {
    cfg.validate()?;
    let mnist = load_mnist(cfg)?;
    let selected = if cfg.select && cfg.method == Method::Actir {
        Some(select_for(cfg, mnist.as_ref())?.best)
    } else {
        None
    };
    let records = (0..cfg.runs)
        .into_par_iter()
        .map(|r| {
            let (record, _) = run_once(cfg, r, selected.as_ref(), mnist.as_ref())?;
            let text = serde_json::to_string_pretty(&record)?;
            write_atomic(&record_path(&cfg.out_dir, cfg.task, cfg.method, r), text.as_bytes())?;
            Ok(record)
        })
        .collect::<Result<Vec<_>>>()?;
    let all = crate::report::load_records(&cfg.out_dir)?;
    write_aggregate_csv(&cfg.out_dir.join("aggregate.csv"), &aggregate(&all))?;
    Ok(records)
}
