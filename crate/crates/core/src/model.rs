//! Representation network `Φ`, the frozen invariant head `W^b = [I_k | 0]`
//! and one linear head `W^e` per training domain.
//!
//! The invariant predictor is `g(x) = W^b Φ(x)` (the first `k` units of the
//! representation); the domain predictor is `f^e(x) = (W^b + W^e) Φ(x)`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{mlp_on_tape, Gradients, Tape, Tensor, Var};
use crate::datagen::DomainRng;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepSplit {
    /// Number of classes, which is also the number of invariant units.
    pub k: usize,
    /// Number of adaptive units.
    pub m: usize,
}

impl RepSplit {
    pub fn new(k: usize, m: usize) -> Result<Self> {
        if k < 2 || m < 1 {
            return Err(Error::InvalidArgument(format!(
                "representation split needs k >= 2 and m >= 1, got k={} m={}",
                k, m
            )));
        }
        Ok(RepSplit { k, m })
    }

    pub fn width(&self) -> usize {
        self.k + self.m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `out x in`
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub split: RepSplit,
    /// Widths from input to representation, e.g. `[2, 8, 8, 8]`.
    pub layer_sizes: Vec<usize>,
    pub phi: Vec<Layer>,
    pub w_base: Tensor,
    pub w_domain: BTreeMap<String, Tensor>,
    /// Restrict every `W^e` to act on the adaptive units only.
    #[serde(default)]
    pub adaptive_block_only: bool,
}

/// Gradient of some scalar with respect to the trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub phi: Vec<Layer>,
    pub w_domain: BTreeMap<String, Tensor>,
}

impl ParamGrads {
    /// Flat view in the order used by [`ModelParams::trainable_mut`].
    pub fn flat(&self, include_heads: bool) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = self
            .phi
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect();
        if include_heads {
            out.extend(self.w_domain.values());
        }
        out
    }
}

/// Model parameters recorded on a tape.
#[derive(Debug, Clone)]
pub struct BoundParams {
    pub phi: Vec<(Var, Var)>,
    pub w_base: Var,
    pub heads: BTreeMap<String, Var>,
    head_mask: Option<Var>,
}

pub fn base_head(split: RepSplit) -> Tensor {
    let mut w = Tensor::zeros(&[split.k, split.width()]);
    for i in 0..split.k {
        w.set(i, i, 1.0);
    }
    w
}

/// Scaled-uniform fan-in initialisation of `Φ`, `W^b = [I_k | 0]` and zero
/// domain heads for `domains`.
pub fn init_model(
    split: RepSplit,
    layer_sizes: &[usize],
    domains: &[String],
    rng: &mut DomainRng,
) -> Result<ModelParams> {
    if layer_sizes.len() < 2 {
        return Err(Error::InvalidArgument(
            "need at least an input and an output width".into(),
        ));
    }
    if layer_sizes.contains(&0) {
        return Err(Error::InvalidArgument(format!(
            "zero-width layer in {:?}",
            layer_sizes
        )));
    }
    if *layer_sizes.last().unwrap() != split.width() {
        return Err(Error::InvalidArgument(format!(
            "last layer width {} must equal k + m = {}",
            layer_sizes.last().unwrap(),
            split.width()
        )));
    }
    let phi = layer_sizes
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let weight: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| rng.uniform_range(-bound, bound))
                .collect();
            let bias: Vec<f64> = (0..fan_out)
                .map(|_| rng.uniform_range(-bound, bound))
                .collect();
            Ok(Layer {
                weight: Tensor::matrix(fan_out, fan_in, weight)?,
                bias: Tensor::vector(bias),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut model = ModelParams {
        split,
        layer_sizes: layer_sizes.to_vec(),
        phi,
        w_base: base_head(split),
        w_domain: BTreeMap::new(),
        adaptive_block_only: false,
    };
    for d in domains {
        model.add_domain(d);
    }
    Ok(model)
}

impl ModelParams {
    pub fn add_domain(&mut self, id: &str) {
        let shape = [self.split.k, self.split.width()];
        self.w_domain
            .entry(id.to_string())
            .or_insert_with(|| Tensor::zeros(&shape));
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    /// `n x (k+m)` representation of an `n x d` batch.
    pub fn represent(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let layers: Vec<(Var, Var)> = self
            .phi
            .iter()
            .map(|l| (tape.constant(l.weight.clone()), tape.constant(l.bias.clone())))
            .collect();
        let xv = tape.constant(x.clone());
        let out = mlp_on_tape(&mut tape, &layers, xv)?;
        Ok(tape.value(out).clone())
    }

    fn check_width(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::shape(
                "model input",
                format!("expected width {}, got {}", self.input_dim(), x.len()),
            ));
        }
        Ok(())
    }

    /// `Φ(x)` for one input.
    pub fn representation(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_width(x)?;
        Ok(self.represent(&Tensor::vector(x.to_vec()))?.into_values())
    }

    /// `g(x) = W^b Φ(x)`: the first `k` representation units.
    pub fn invariant_logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        let phi = self.representation(x)?;
        Ok(phi[..self.split.k].to_vec())
    }

    /// The head actually applied for domain `id`: `W^b + W^e` (with `W^e`
    /// masked to the adaptive block when configured).
    pub fn domain_head(&self, id: &str) -> Result<Tensor> {
        let we = self
            .w_domain
            .get(id)
            .ok_or_else(|| Error::UnknownDomain(id.to_string()))?;
        let we = if self.adaptive_block_only {
            we.zip_map(&self.head_mask(), "mask", |a, b| a * b)?
        } else {
            we.clone()
        };
        self.w_base.add(&we)
    }

    /// `f^e(x) = (W^b + W^e) Φ(x)`.
    pub fn domain_logits(&self, id: &str, x: &[f64]) -> Result<Vec<f64>> {
        let head = self.domain_head(id)?;
        let phi = Tensor::vector(self.representation(x)?);
        Ok(phi.matmul_t(&head)?.into_values())
    }

    /// `0/1` mask selecting the adaptive columns of a `k x (k+m)` head.
    pub fn head_mask(&self) -> Tensor {
        let (k, w) = (self.split.k, self.split.width());
        let mut mask = Tensor::zeros(&[k, w]);
        for r in 0..k {
            for c in k..w {
                mask.set(r, c, 1.0);
            }
        }
        mask
    }

    /// Records `Φ` and every `W^e` as leaves and `W^b` as a constant.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        let phi = self
            .phi
            .iter()
            .map(|l| (tape.leaf(l.weight.clone()), tape.leaf(l.bias.clone())))
            .collect();
        let w_base = tape.constant(self.w_base.clone());
        let heads = self
            .w_domain
            .iter()
            .map(|(id, w)| (id.clone(), tape.leaf(w.clone())))
            .collect();
        let head_mask = self
            .adaptive_block_only
            .then(|| tape.constant(self.head_mask()));
        BoundParams {
            phi,
            w_base,
            heads,
            head_mask,
        }
    }

    /// Mutable trainable tensors: `Φ` layers, then (optionally) domain heads
    /// in id order.
    pub fn trainable_mut(&mut self, include_heads: bool) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = self
            .phi
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect();
        if include_heads {
            out.extend(self.w_domain.values_mut());
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        crate::report::write_atomic(path, text.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

impl BoundParams {
    pub fn mask(&self) -> Option<Var> {
        self.head_mask
    }

    pub fn representation(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        mlp_on_tape(tape, &self.phi, x)
    }

    /// The effective `W^e` variable for `id`.
    pub fn head(&self, tape: &mut Tape, id: &str) -> Result<Var> {
        let w = *self
            .heads
            .get(id)
            .ok_or_else(|| Error::UnknownDomain(id.to_string()))?;
        match self.head_mask {
            Some(mask) => tape.mul(w, mask),
            None => Ok(w),
        }
    }

    pub fn collect(&self, grads: &mut Gradients) -> ParamGrads {
        ParamGrads {
            phi: self
                .phi
                .iter()
                .map(|&(w, b)| Layer {
                    weight: grads.take(w),
                    bias: grads.take(b),
                })
                .collect(),
            w_domain: self
                .heads
                .iter()
                .map(|(id, &v)| (id.clone(), grads.take(v)))
                .collect(),
        }
    }
}
