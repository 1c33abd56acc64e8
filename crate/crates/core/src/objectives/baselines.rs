use super::{adam_step, one_hot, DomainBatch, ObjectiveOutput, OptimizerState};
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::{BoundParams, ModelParams};

fn invariant_logits(tape: &mut Tape, bound: &BoundParams, batch: &DomainBatch) -> Result<Var> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "empty batch for domain {}",
            batch.domain_id
        )));
    }
    let x = tape.constant(batch.x.clone());
    let phi = bound.representation(tape, x)?;
    tape.matmul_t(phi, bound.w_base)
}

/// Mean cross-entropy of the invariant predictor over the pooled batch.
pub fn erm_objective(params: &ModelParams, pooled: &DomainBatch) -> Result<ObjectiveOutput> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let g = invariant_logits(&mut tape, &bound, pooled)?;
    let loss = tape.xent_mean(g, &pooled.y)?;
    let mut grads = tape.backward(loss)?;
    Ok(ObjectiveOutput {
        value: tape.value(loss).item(),
        grads: bound.collect(&mut grads),
    })
}

/// `d/ds R(s · logits)` at `s = 1`, built in closed form:
/// `mean_i Σ_c (softmax(z_i) - y_i)_c z_ic`.
fn scale_grad_expr(tape: &mut Tape, logits: Var, y: &[usize]) -> Result<Var> {
    let (n, k) = tape.value(logits).dims();
    let probs = tape.softmax_rows(logits);
    let targets = tape.constant(one_hot(y, k)?);
    let resid = tape.sub(probs, targets)?;
    let prod = tape.mul(resid, logits)?;
    let s = tape.sum(prod);
    Ok(tape.scale(s, 1.0 / n as f64))
}

/// Closed-form scalar-multiplier gradient for one domain's invariant logits.
pub fn irm_scale_grad(params: &ModelParams, batch: &DomainBatch) -> Result<f64> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let g = invariant_logits(&mut tape, &bound, batch)?;
    let d = scale_grad_expr(&mut tape, g, &batch.y)?;
    Ok(tape.value(d).item())
}

/// `Σ_e R^e(g) + weight · Σ_e (∂_s R^e(s · g)|_{s=1})²`.
pub fn irm_objective(
    params: &ModelParams,
    batches: &[DomainBatch],
    penalty_weight: f64,
) -> Result<ObjectiveOutput> {
    if batches.is_empty() {
        return Err(Error::InvalidArgument("no training domains".into()));
    }
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let mut total: Option<Var> = None;
    for batch in batches {
        let g = invariant_logits(&mut tape, &bound, batch)?;
        let mut term = tape.xent_mean(g, &batch.y)?;
        if penalty_weight != 0.0 {
            let d = scale_grad_expr(&mut tape, g, &batch.y)?;
            let sq = tape.square(d);
            let pen = tape.scale(sq, penalty_weight);
            term = tape.add(term, pen)?;
        }
        total = Some(match total {
            Some(t) => tape.add(t, term)?,
            None => term,
        });
    }
    let total = total.expect("at least one domain");
    let mut grads = tape.backward(total)?;
    Ok(ObjectiveOutput {
        value: tape.value(total).item(),
        grads: bound.collect(&mut grads),
    })
}

/// One first-order MAML step on the last linear map.
///
/// For every domain the head starts at `W^b`, takes one gradient step of size
/// `inner_lr` on the support half, and the query loss at the adapted head is
/// differentiated with respect to `Φ` with the adapted head held constant.
/// The summed query gradient is applied with Adam at `outer_lr`. Returns the
/// summed query loss before the update.
pub fn maml_outer_step(
    params: &mut ModelParams,
    splits: &[(DomainBatch, DomainBatch)],
    inner_lr: f64,
    outer_lr: f64,
    state: &mut OptimizerState,
) -> Result<f64> {
    if splits.is_empty() {
        return Err(Error::InvalidArgument("no training domains".into()));
    }
    let k = params.split.k;
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let mut total: Option<Var> = None;
    for (support, query) in splits {
        if support.is_empty() || query.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "domain {} needs nonempty support and query halves",
                support.domain_id
            )));
        }
        let phi_s = params.represent(&support.x)?;
        let logits = phi_s.matmul_t(&params.w_base)?;
        let mut resid = logits.clone();
        {
            let c = k;
            let vals = resid.values_mut();
            for (i, &y) in support.y.iter().enumerate() {
                let row = &mut vals[i * c..(i + 1) * c];
                crate::autodiff::softmax_in_place(row);
                row[y] -= 1.0;
            }
        }
        let head_grad = resid.t_matmul(&phi_s)?.scale(1.0 / support.len() as f64);
        let adapted: Tensor = params.w_base.sub(&head_grad.scale(inner_lr))?;

        let xq = tape.constant(query.x.clone());
        let phi_q = bound.representation(&mut tape, xq)?;
        let head = tape.constant(adapted);
        let zq = tape.matmul_t(phi_q, head)?;
        let lq = tape.xent_mean(zq, &query.y)?;
        total = Some(match total {
            Some(t) => tape.add(t, lq)?,
            None => lq,
        });
    }
    let total = total.expect("at least one domain");
    let mut grads = tape.backward(total)?;
    let grads = bound.collect(&mut grads);
    let value = tape.value(total).item();
    adam_step(state, params.trainable_mut(false), grads.flat(false), outer_lr)?;
    Ok(value)
}
