//! Empirical conditional-independence penalty.
//!
//! If `A ⫫ B | D` then `E[A (B - E[B|D])] = 0`. The estimator centers each
//! `b_i` by the mean of `b` over the samples sharing its `d_i`, weights by
//! `a_i`, averages over the batch and takes the L1 norm of the resulting
//! moment.
//!
//! Two moment shapes are supported. [`CondProduct::Elementwise`] pairs
//! coordinate `c` of `a` with coordinate `c` of `b` (a `k`-vector).
//! [`CondProduct::Cross`] pairs every coordinate of `a` with every
//! coordinate of `b` (a `k x k` matrix); for scalar `a`, `b` the two agree.

use serde::{Deserialize, Serialize};

use crate::autodiff::{sign, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CondProduct {
    Elementwise,
    #[default]
    Cross,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CondSample {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub d: usize,
}

/// Elementwise estimator over `samples`.
pub fn c_cond_hat(samples: &[CondSample]) -> Result<f64> {
    c_cond_hat_with(samples, CondProduct::Elementwise)
}

pub fn c_cond_hat_with(samples: &[CondSample], product: CondProduct) -> Result<f64> {
    let first = samples
        .first()
        .ok_or_else(|| Error::InvalidArgument("conditional-independence penalty of an empty batch".into()))?;
    let k = first.a.len();
    for (i, s) in samples.iter().enumerate() {
        if s.a.len() != k || s.b.len() != k {
            return Err(Error::shape(
                "c_cond_hat",
                format!("sample {}: |a|={} |b|={}, expected {}", i, s.a.len(), s.b.len(), k),
            ));
        }
    }
    let a = Tensor::from_rows(&samples.iter().map(|s| s.a.clone()).collect::<Vec<_>>())?;
    let b = Tensor::from_rows(&samples.iter().map(|s| s.b.clone()).collect::<Vec<_>>())?;
    let d: Vec<usize> = samples.iter().map(|s| s.d).collect();
    Ok(moment(&a, &b, &d, product)?.values().iter().map(|v| v.abs()).sum())
}

/// The signed moment: a `1 x k` row (elementwise) or `k x k` matrix (cross)
/// whose `(c, c')` entry is `mean_i a_ic (b_ic' - mean_{j: d_j = d_i} b_jc')`.
pub fn moment(a: &Tensor, b: &Tensor, d: &[usize], product: CondProduct) -> Result<Tensor> {
    let mut tape = Tape::new();
    let (av, bv) = (tape.constant(a.clone()), tape.constant(b.clone()));
    let m = moment_on_tape(&mut tape, av, bv, d, product)?;
    Ok(tape.value(m).clone())
}

fn moment_on_tape(
    tape: &mut Tape,
    a: Var,
    b: Var,
    d: &[usize],
    product: CondProduct,
) -> Result<Var> {
    let n = tape.value(a).rows();
    if n == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if tape.value(a).dims() != tape.value(b).dims() {
        return Err(Error::shape(
            "c_cond",
            format!("a is {:?}, b is {:?}", tape.value(a).shape(), tape.value(b).shape()),
        ));
    }
    let centered = tape.center_by_group(b, d)?;
    let raw = match product {
        CondProduct::Elementwise => {
            let prod = tape.mul(a, centered)?;
            let ones = tape.constant(Tensor::filled(&[1, n], 1.0));
            tape.matmul(ones, prod)?
        }
        CondProduct::Cross => {
            let at = tape.transpose(a);
            tape.matmul(at, centered)?
        }
    };
    Ok(tape.scale(raw, 1.0 / n as f64))
}

/// Differentiable estimator for `n x k` batches `a`, `b` with labels `d`.
/// The absolute value uses the subgradient `sign(0) = 0`.
pub fn c_cond_on_tape(
    tape: &mut Tape,
    a: Var,
    b: Var,
    d: &[usize],
    product: CondProduct,
) -> Result<Var> {
    let m = moment_on_tape(tape, a, b, d, product)?;
    let abs = tape.abs(m);
    Ok(tape.sum(abs))
}

/// `Σ huber_δ(M)` over the entries of the moment: quadratic for
/// `|M| <= δ`, `|M| - δ/2` beyond. Equals [`c_cond_on_tape`] up to `δ/2` per
/// entry; `delta = 0` gives the exact L1 norm.
pub fn c_cond_smooth_on_tape(
    tape: &mut Tape,
    a: Var,
    b: Var,
    d: &[usize],
    product: CondProduct,
    delta: f64,
) -> Result<Var> {
    if delta <= 0.0 {
        return c_cond_on_tape(tape, a, b, d, product);
    }
    let m = moment_on_tape(tape, a, b, d, product)?;
    // huber(M) = u (2M - u) / 2δ with u = clamp(M, -δ, δ)
    let u = clamp_on_tape(tape, m, delta)?;
    let two_m = tape.scale(m, 2.0);
    let diff = tape.sub(two_m, u)?;
    let prod = tape.mul(u, diff)?;
    let s = tape.sum(prod);
    Ok(tape.scale(s, 0.5 / delta))
}

fn clamp_on_tape(tape: &mut Tape, m: Var, delta: f64) -> Result<Var> {
    let shape = tape.value(m).shape().to_vec();
    let lim = tape.constant(Tensor::filled(&shape, delta));
    let over = tape.sub(m, lim)?;
    let over = tape.relu(over);
    let neg = tape.scale(m, -1.0);
    let under = tape.sub(neg, lim)?;
    let under = tape.relu(under);
    let t = tape.sub(m, over)?;
    tape.add(t, under)
}

/// Closed-form (sub)gradient of the estimator with respect to a linear head
/// `W` (`k x w`) when `b = Φ Wᵀ`, as a differentiable `k x w` expression of
/// `a`, `Φ` and `W`.
///
/// With `delta = 0` the absolute value contributes `sign(M)`, treated as
/// locally constant. With `delta > 0` it is the Huber slope
/// `clamp(M / δ, -1, 1)`, which is differentiated through.
pub fn c_cond_head_grad(
    tape: &mut Tape,
    a: Var,
    phi: Var,
    head: Var,
    d: &[usize],
    product: CondProduct,
    delta: f64,
) -> Result<Var> {
    let n = tape.value(a).rows();
    let k = tape.value(a).cols();
    if tape.value(phi).rows() != n {
        return Err(Error::shape(
            "c_cond_head_grad",
            format!("{} rows of a vs {} rows of phi", n, tape.value(phi).rows()),
        ));
    }
    let phi_c = tape.center_by_group(phi, d)?;
    let at = tape.transpose(a);
    let q_raw = tape.matmul(at, phi_c)?;
    // q[c] = mean_i a_ic (Φ_i - group mean)
    let q = tape.scale(q_raw, 1.0 / n as f64);
    let w = tape.value(q).cols();
    // slope of |.| at each moment entry: 1 x k (elementwise) or k x k (cross)
    let slope = if delta > 0.0 {
        let b = tape.matmul_t(phi, head)?;
        let m = moment_on_tape(tape, a, b, d, product)?;
        let u = clamp_on_tape(tape, m, delta)?;
        tape.scale(u, 1.0 / delta)
    } else {
        let b = tape.value(phi).matmul_t(tape.value(head))?;
        let m = moment(tape.value(a), &b, d, product)?;
        tape.constant(m.map(sign))
    };
    match product {
        CondProduct::Elementwise => {
            // row c of the gradient is slope[c] * q[c]
            let col = tape.transpose(slope);
            let ones = tape.constant(Tensor::filled(&[1, w], 1.0));
            let spread = tape.matmul(col, ones)?;
            tape.mul(spread, q)
        }
        CondProduct::Cross => {
            // grad row c' = Σ_c slope[c, c'] q[c]
            debug_assert_eq!(tape.value(slope).dims(), (k, k));
            let st = tape.transpose(slope);
            tape.matmul(st, q)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(a: f64, b: f64, d: usize) -> CondSample {
        CondSample {
            a: vec![a],
            b: vec![b],
            d,
        }
    }

    #[test]
    fn worked_scalar_example() {
        let s = [scalar(1.0, 2.0, 0), scalar(-1.0, 4.0, 0), scalar(2.0, 1.0, 1)];
        let v = c_cond_hat(&s).unwrap();
        assert!((v - 2.0 / 3.0).abs() < 1e-15, "{v}");
        assert_eq!(c_cond_hat_with(&s, CondProduct::Cross).unwrap(), v);
    }

    #[test]
    fn zero_cases() {
        let zero_a = [scalar(0.0, 2.0, 0), scalar(0.0, 5.0, 0), scalar(0.0, 1.0, 1)];
        assert_eq!(c_cond_hat(&zero_a).unwrap(), 0.0);
        let const_b = [scalar(1.0, 3.0, 0), scalar(-4.0, 3.0, 0), scalar(2.0, 7.0, 1)];
        assert_eq!(c_cond_hat(&const_b).unwrap(), 0.0);
    }

    #[test]
    fn errors() {
        assert!(c_cond_hat(&[]).is_err());
        let bad = [
            CondSample { a: vec![1.0, 2.0], b: vec![1.0, 2.0], d: 0 },
            CondSample { a: vec![1.0], b: vec![1.0, 2.0], d: 0 },
        ];
        assert!(c_cond_hat(&bad).is_err());
    }

    #[test]
    fn cross_moment_sees_off_diagonal_dependence() {
        // a depends on the noise only through coordinate 0, b only through 1
        let mut s = Vec::new();
        for i in 0..8 {
            let e = if i % 2 == 0 { 1.0 } else { -1.0 };
            s.push(CondSample { a: vec![e, 0.0], b: vec![0.0, e], d: i % 4 / 2 });
        }
        assert_eq!(c_cond_hat_with(&s, CondProduct::Elementwise).unwrap(), 0.0);
        assert!(c_cond_hat_with(&s, CondProduct::Cross).unwrap() > 0.5);
    }
}
