use super::tape::{xent_row, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Records a fully connected network on `tape`: `x · Wᵀ + b` per layer with a
/// rectifier between layers and none after the last. `x` is `n x d_in`;
/// each weight is `d_out x d_in`.
pub fn mlp_on_tape(tape: &mut Tape, layers: &[(Var, Var)], x: Var) -> Result<Var> {
    let mut h = x;
    for (i, &(w, b)) in layers.iter().enumerate() {
        let (out_dim, in_dim) = tape.value(w).dims();
        let width = tape.value(h).cols();
        if width != in_dim {
            return Err(Error::Layer {
                index: i,
                detail: format!("expects input width {}, got {}", in_dim, width),
            });
        }
        if tape.value(b).len() != out_dim {
            return Err(Error::Layer {
                index: i,
                detail: format!(
                    "bias length {} does not match {} output units",
                    tape.value(b).len(),
                    out_dim
                ),
            });
        }
        let z = tape.matmul_t(h, w)?;
        h = tape.add_bias(z, b)?;
        if i + 1 < layers.len() {
            h = tape.relu(h);
        }
    }
    Ok(h)
}

/// Evaluates an MLP on a single input vector, returning the output and the
/// tape holding every intermediate. Weights and input are recorded as leaves.
pub fn forward_mlp(weights: &[(Tensor, Tensor)], x: &[f64]) -> Result<(Tensor, Tape)> {
    let mut tape = Tape::new();
    let layers: Vec<(Var, Var)> = weights
        .iter()
        .map(|(w, b)| (tape.leaf(w.clone()), tape.leaf(b.clone())))
        .collect();
    let xv = tape.leaf(Tensor::vector(x.to_vec()));
    let out = mlp_on_tape(&mut tape, &layers, xv)?;
    let value = Tensor::vector(tape.value(out).values().to_vec());
    Ok((value, tape))
}

/// `-log softmax(logits)[y]`.
pub fn softmax_xent(logits: &[f64], y: usize) -> Result<f64> {
    if y >= logits.len() {
        return Err(Error::InvalidArgument(format!(
            "class index {} out of range for {} logits",
            y,
            logits.len()
        )));
    }
    Ok(xent_row(logits, y))
}
