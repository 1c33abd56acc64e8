use super::tensor::Tensor;

/// Largest relative disagreement between `analytic` and central differences
/// of `loss` around `params`:
/// `|a - fd| / max(|a| + |fd|, 1e-8)`, maximised over every entry. The floor
/// keeps entries that are zero up to rounding from dominating.
pub fn grad_check<F>(mut loss: F, params: &[Tensor], analytic: &[Tensor], step: f64) -> f64
where
    F: FnMut(&[Tensor]) -> f64,
{
    assert!(step > 0.0, "finite-difference step must be positive");
    assert_eq!(params.len(), analytic.len());
    let mut probe = params.to_vec();
    let mut worst = 0.0f64;
    for (p, g) in analytic.iter().enumerate() {
        for i in 0..probe[p].len() {
            let orig = probe[p].values()[i];
            probe[p].values_mut()[i] = orig + step;
            let up = loss(&probe);
            probe[p].values_mut()[i] = orig - step;
            let down = loss(&probe);
            probe[p].values_mut()[i] = orig;
            let fd = (up - down) / (2.0 * step);
            let a = g.values()[i];
            worst = worst.max((a - fd).abs() / (a.abs() + fd.abs()).max(1e-8));
        }
    }
    worst
}
