//! Seeded domain generators.
//!
//! Every generator is a pure function of its arguments and the [`DomainRng`]
//! it is handed; the experiment driver derives one stream per domain from
//! `(run seed, domain id)`.

mod color_mnist;
mod idx;
mod rng;
mod synthetic;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub use color_mnist::{build_color_mnist, ColorMnistOptions, MnistFiles, MnistSplit};
pub use idx::{parse_idx, read_idx, IdxData};
pub use rng::{bern_sample, rad_sample, DomainRng};
pub use synthetic::{gen_counterexample_domain, gen_synthetic_domain};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub x: Vec<f64>,
    pub y: usize,
    /// Unstable latent factor, kept for diagnostics only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainDataset {
    pub domain_id: String,
    pub beta: f64,
    pub examples: Vec<LabeledExample>,
}

impl DomainDataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn input_dim(&self) -> Option<usize> {
        self.examples.first().map(|e| e.x.len())
    }

    /// `n x d` feature matrix.
    pub fn features(&self) -> Result<Tensor> {
        features_of(self.examples.iter())
    }

    pub fn labels(&self) -> Vec<usize> {
        self.examples.iter().map(|e| e.y).collect()
    }

    pub fn subset(&self, idx: &[usize]) -> DomainDataset {
        DomainDataset {
            domain_id: self.domain_id.clone(),
            beta: self.beta,
            examples: idx.iter().map(|&i| self.examples[i].clone()).collect(),
        }
    }
}

pub(crate) fn features_of<'a>(
    examples: impl Iterator<Item = &'a LabeledExample>,
) -> Result<Tensor> {
    let rows: Vec<Vec<f64>> = examples.map(|e| e.x.clone()).collect();
    if rows.is_empty() {
        return Err(Error::InvalidArgument("no examples".into()));
    }
    Tensor::from_rows(&rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Synthetic,
    Counterexample,
    ColorMnist,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Synthetic => "synthetic",
            TaskKind::Counterexample => "counterexample",
            TaskKind::ColorMnist => "color_mnist",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub id: String,
    pub beta: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub kind: TaskKind,
    pub domains: Vec<DomainSpec>,
    pub seed: u64,
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        for d in &self.domains {
            rng::check_probability(d.beta)
                .map_err(|_| Error::Config(format!("domain {}: beta {} outside [0, 1]", d.id, d.beta)))?;
        }
        Ok(())
    }

    /// Generates the tabular domains. Color MNIST needs image data and goes
    /// through [`build_color_mnist`] instead.
    pub fn generate(&self) -> Result<Vec<DomainDataset>> {
        self.validate()?;
        self.domains
            .iter()
            .map(|d| {
                let mut rng = DomainRng::for_stream(self.seed, &d.id);
                let mut ds = match self.kind {
                    TaskKind::Synthetic => gen_synthetic_domain(d.beta, d.n, &mut rng)?,
                    TaskKind::Counterexample => gen_counterexample_domain(d.beta, d.n, &mut rng)?,
                    TaskKind::ColorMnist => {
                        return Err(Error::Config(
                            "color_mnist domains are built from MNIST files".into(),
                        ))
                    }
                };
                ds.domain_id = d.id.clone();
                Ok(ds)
            })
            .collect()
    }
}
