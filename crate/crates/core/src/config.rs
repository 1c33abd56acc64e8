//! Experiment configuration, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datagen::{DomainSpec, TaskKind};
use crate::error::{Error, Result};
use crate::model::RepSplit;
use crate::objectives::{Method, MethodHyper};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub train: Vec<f64>,
    pub val: f64,
    pub test: f64,
    /// Examples per domain.
    pub samples: usize,
}

impl DomainConfig {
    pub fn standard(task: TaskKind) -> Self {
        let (train, val) = match task {
            TaskKind::Synthetic => (vec![0.95, 0.7], 0.6),
            TaskKind::Counterexample => (vec![0.95, 0.8], 0.2),
            TaskKind::ColorMnist => (vec![0.95, 0.7], 0.2),
        };
        DomainConfig {
            train,
            val,
            test: 0.1,
            samples: match task {
                TaskKind::ColorMnist => 10_000,
                _ => 1000,
            },
        }
    }

    /// `train0, train1, ..., val, test` in that order.
    pub fn specs(&self) -> Vec<DomainSpec> {
        let mut out: Vec<DomainSpec> = self
            .train
            .iter()
            .enumerate()
            .map(|(i, &beta)| DomainSpec {
                id: format!("train{i}"),
                beta,
                n: self.samples,
            })
            .collect();
        out.push(DomainSpec { id: "val".into(), beta: self.val, n: self.samples });
        out.push(DomainSpec { id: "test".into(), beta: self.test, n: self.samples });
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Widths from input to representation.
    pub layer_sizes: Vec<usize>,
    /// Number of invariant units (= classes).
    pub k: usize,
    #[serde(default)]
    pub adaptive_block_only: bool,
}

impl ModelConfig {
    pub fn standard(task: TaskKind) -> Self {
        let layer_sizes = match task {
            TaskKind::ColorMnist => vec![2 * 14 * 14, 64, 64, 8],
            _ => vec![2, 8, 8, 8],
        };
        ModelConfig {
            layer_sizes,
            k: 2,
            adaptive_block_only: false,
        }
    }

    pub fn split(&self) -> Result<RepSplit> {
        let width = *self
            .layer_sizes
            .last()
            .ok_or_else(|| Error::Config("empty layer_sizes".into()))?;
        if width <= self.k {
            return Err(Error::Config(format!(
                "representation width {} must exceed k = {}",
                width, self.k
            )));
        }
        RepSplit::new(self.k, width - self.k).map_err(|e| Error::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptationConfig {
    pub n_support: Vec<usize>,
    pub repeats: usize,
    pub steps: usize,
    pub lr: f64,
}

impl Default for AdaptationConfig {
    fn default() -> Self {
        AdaptationConfig {
            n_support: vec![10],
            repeats: 100,
            steps: 20,
            lr: 1e-2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: TaskKind,
    pub method: Method,
    pub seed: u64,
    pub runs: usize,
    pub out_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mnist_dir: Option<PathBuf>,
    /// Grid-search ACTIR hyperparameters on the validation domain first.
    #[serde(default)]
    pub select: bool,
    pub domains: DomainConfig,
    pub model: ModelConfig,
    #[serde(default)]
    pub hyper: MethodHyper,
    #[serde(default)]
    pub adaptation: AdaptationConfig,
}

impl ExperimentConfig {
    /// Default setting for `task` and `method` with 20 runs.
    pub fn standard(task: TaskKind, method: Method) -> Self {
        let mut hyper = MethodHyper::default();
        if task == TaskKind::ColorMnist {
            hyper.batch_size = Some(256);
            hyper.actir.steps = 5000;
            hyper.erm.steps = 5000;
            hyper.irm.steps = 5000;
            hyper.maml.steps = 5000;
        }
        ExperimentConfig {
            task,
            method,
            seed: 0,
            runs: 20,
            out_dir: PathBuf::from("results"),
            mnist_dir: None,
            select: false,
            domains: DomainConfig::standard(task),
            model: ModelConfig::standard(task),
            hyper,
            adaptation: AdaptationConfig::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {}", path.display(), msg)),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::Config("runs must be at least 1".into()));
        }
        if self.domains.train.is_empty() {
            return Err(Error::Config("need at least one training domain".into()));
        }
        if self.domains.samples < 2 {
            return Err(Error::Config("need at least two samples per domain".into()));
        }
        for b in self.domains.train.iter().chain([&self.domains.val, &self.domains.test]) {
            if !(0.0..=1.0).contains(b) {
                return Err(Error::Config(format!("beta {b} outside [0, 1]")));
            }
        }
        self.model.split()?;
        let input = match self.task {
            TaskKind::ColorMnist => None,
            _ => Some(2),
        };
        if let Some(d) = input {
            if self.model.layer_sizes[0] != d {
                return Err(Error::Config(format!(
                    "{} inputs have width {}, layer_sizes starts with {}",
                    self.task.name(),
                    d,
                    self.model.layer_sizes[0]
                )));
            }
        }
        self.hyper.validate()?;
        let a = &self.adaptation;
        if a.repeats == 0 || !(a.lr > 0.0) {
            return Err(Error::Config("adaptation needs repeats >= 1 and lr > 0".into()));
        }
        if let Some(&n) = a.n_support.iter().find(|&&n| n == 0 || n >= self.domains.samples) {
            return Err(Error::Config(format!(
                "n_support {} must be in 1..{}",
                n, self.domains.samples
            )));
        }
        if self.task == TaskKind::ColorMnist {
            let dir = self
                .mnist_dir
                .as_ref()
                .ok_or_else(|| Error::Config("color_mnist needs mnist_dir".into()))?;
            crate::datagen::MnistFiles::locate(dir)?;
        }
        Ok(())
    }
}
