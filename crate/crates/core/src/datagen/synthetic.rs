use super::rng::{bern_sample, rad_sample, DomainRng};
use super::{DomainDataset, LabeledExample};
use crate::error::Result;

/// Anti-causal sign process:
///
/// ```text
/// Y    <- Rad(0.5)
/// X_zp <- Y * Rad(0.75)      (stable feature)
/// Z    <- Y * Rad(beta)
/// X_z  <- Z                  (unstable feature)
/// ```
///
/// `x = (X_z, X_zp)`, `y = (Y + 1) / 2`, `z = Z`.
pub fn gen_synthetic_domain(beta: f64, n: usize, rng: &mut DomainRng) -> Result<DomainDataset> {
    super::rng::check_probability(beta)?;
    let mut examples = Vec::with_capacity(n);
    for _ in 0..n {
        let y = rad_sample(0.5, rng)?;
        let x_stable = y * rad_sample(0.75, rng)?;
        let z = y * rad_sample(beta, rng)?;
        examples.push(LabeledExample {
            x: vec![z as f64, x_stable as f64],
            y: usize::from(y > 0),
            z: Some(z as i64),
        });
    }
    Ok(DomainDataset {
        domain_id: format!("synthetic-{beta}"),
        beta,
        examples,
    })
}

/// Process where the stable feature also drives the unstable one, so the
/// conditional-independence signature fails:
///
/// ```text
/// X_y <- Bern(0.5)
/// U   <- Bern(0.75);  Y <- XOR(X_y, U)
/// U_z <- Bern(beta);  Z <- XOR(Y, U_z)
/// X_z <- XOR(Z, X_y)
/// ```
///
/// `x = (X_y, X_z)`, `z = Z`.
pub fn gen_counterexample_domain(
    beta: f64,
    n: usize,
    rng: &mut DomainRng,
) -> Result<DomainDataset> {
    super::rng::check_probability(beta)?;
    let mut examples = Vec::with_capacity(n);
    for _ in 0..n {
        let x_y = bern_sample(0.5, rng)?;
        let u = bern_sample(0.75, rng)?;
        let y = x_y ^ u;
        let u_z = bern_sample(beta, rng)?;
        let z = y ^ u_z;
        let x_z = z ^ x_y;
        examples.push(LabeledExample {
            x: vec![x_y as f64, x_z as f64],
            y: y as usize,
            z: Some(z as i64),
        });
    }
    Ok(DomainDataset {
        domain_id: format!("counterexample-{beta}"),
        beta,
        examples,
    })
}
