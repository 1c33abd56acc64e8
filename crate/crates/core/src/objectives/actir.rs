use super::{one_hot, ActirHyper, DomainBatch, ObjectiveOutput};
use crate::autodiff::{Tape, Tensor, Var};
use crate::causal_reg::{c_cond_head_grad, c_cond_smooth_on_tape};
use crate::error::{Error, Result};
use crate::model::{BoundParams, ModelParams};

struct DomainGraph {
    /// `n x (k+m)` representation
    phi: Var,
    /// invariant logits `W^b Φ`
    g: Var,
    /// effective domain head `W^e` (masked if configured)
    head: Var,
    /// domain logits `(W^b + W^e) Φ`
    f: Var,
}

fn domain_graph(tape: &mut Tape, bound: &BoundParams, batch: &DomainBatch) -> Result<DomainGraph> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "empty batch for domain {}",
            batch.domain_id
        )));
    }
    let x = tape.constant(batch.x.clone());
    let phi = bound.representation(tape, x)?;
    let g = tape.matmul_t(phi, bound.w_base)?;
    let head = bound.head(tape, &batch.domain_id)?;
    let full = tape.add(bound.w_base, head)?;
    let f = tape.matmul_t(phi, full)?;
    Ok(DomainGraph { phi, g, head, f })
}

/// `∇_W L_inner` at the current head as an explicit expression:
/// `(softmax(F) - Y)ᵀ Φ / n + λ · ∂Ĉ/∂W`.
fn inner_grad_expr(
    tape: &mut Tape,
    bound: &BoundParams,
    dg: &DomainGraph,
    y: &[usize],
    hyper: &ActirHyper,
) -> Result<Var> {
    let n = y.len() as f64;
    let k = tape.value(dg.f).cols();
    let probs = tape.softmax_rows(dg.f);
    let targets = tape.constant(one_hot(y, k)?);
    let resid = tape.sub(probs, targets)?;
    let rt = tape.transpose(resid);
    let risk_raw = tape.matmul(rt, dg.phi)?;
    let mut grad = tape.scale(risk_raw, 1.0 / n);
    if hyper.lambda_c != 0.0 {
        let a = if hyper.detach_invariant { tape.detach(dg.g) } else { dg.g };
        let reg = c_cond_head_grad(tape, a, dg.phi, dg.head, y, hyper.cond_product, hyper.cond_smoothing)?;
        let reg = tape.scale(reg, hyper.lambda_c);
        grad = tape.add(grad, reg)?;
    }
    if let Some(mask) = bound.mask() {
        grad = tape.mul(grad, mask)?;
    }
    Ok(grad)
}

fn inner_loss_expr(tape: &mut Tape, dg: &DomainGraph, y: &[usize], hyper: &ActirHyper) -> Result<Var> {
    let risk = tape.xent_mean(dg.f, y)?;
    if hyper.lambda_c == 0.0 {
        return Ok(risk);
    }
    let b = tape.matmul_t(dg.phi, dg.head)?;
    let c = c_cond_smooth_on_tape(tape, dg.g, b, y, hyper.cond_product, hyper.cond_smoothing)?;
    let c = tape.scale(c, hyper.lambda_c);
    tape.add(risk, c)
}

/// Domain inner loss: mean cross-entropy of the domain predictor plus
/// `λ · Ĉ(W^bΦ, W^eΦ, y)`, using `lambda_c`, `cond_product` and
/// `cond_smoothing` from `hyper`.
pub fn inner_loss(params: &ModelParams, batch: &DomainBatch, hyper: &ActirHyper) -> Result<f64> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let dg = domain_graph(&mut tape, &bound, batch)?;
    let l = inner_loss_expr(&mut tape, &dg, &batch.y, hyper)?;
    Ok(tape.value(l).item())
}

/// Closed-form gradient of [`inner_loss`] with respect to the domain head.
pub fn inner_grad(params: &ModelParams, batch: &DomainBatch, hyper: &ActirHyper) -> Result<Tensor> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let dg = domain_graph(&mut tape, &bound, batch)?;
    let g = inner_grad_expr(&mut tape, &bound, &dg, &batch.y, hyper)?;
    Ok(tape.value(g).clone())
}

/// `‖∇_{W^e} L_inner‖²` with its gradient with respect to `Φ` and `W^e`.
pub fn inner_grad_norm_sq(
    params: &ModelParams,
    batch: &DomainBatch,
    hyper: &ActirHyper,
) -> Result<ObjectiveOutput> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let dg = domain_graph(&mut tape, &bound, batch)?;
    let g = inner_grad_expr(&mut tape, &bound, &dg, &batch.y, hyper)?;
    let sq = tape.square(g);
    let out = tape.sum(sq);
    let mut grads = tape.backward(out)?;
    Ok(ObjectiveOutput {
        value: tape.value(out).item(),
        grads: bound.collect(&mut grads),
    })
}

/// Outer training objective summed over training domains:
/// `γ R^e(f^e) + (1 - γ) R^e(g) + λ_g ‖∇_{W^e} L_inner^e‖²`.
pub fn actir_objective(
    params: &ModelParams,
    batches: &[DomainBatch],
    hyper: &ActirHyper,
) -> Result<ObjectiveOutput> {
    if batches.is_empty() {
        return Err(Error::InvalidArgument("no training domains".into()));
    }
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let mut terms = Vec::with_capacity(batches.len());
    for batch in batches {
        let dg = domain_graph(&mut tape, &bound, batch)?;
        let mut term = None;
        let mut push = |tape: &mut Tape, v: Var, w: f64| -> Result<()> {
            if w == 0.0 {
                return Ok(());
            }
            let s = tape.scale(v, w);
            term = Some(match term {
                Some(t) => tape.add(t, s)?,
                None => s,
            });
            Ok(())
        };
        let dom = tape.xent_mean(dg.f, &batch.y)?;
        push(&mut tape, dom, hyper.gamma)?;
        let inv = tape.xent_mean(dg.g, &batch.y)?;
        push(&mut tape, inv, 1.0 - hyper.gamma)?;
        if hyper.lambda_g != 0.0 {
            let g = inner_grad_expr(&mut tape, &bound, &dg, &batch.y, hyper)?;
            let sq = tape.square(g);
            let pen = tape.sum(sq);
            push(&mut tape, pen, hyper.lambda_g)?;
        }
        let term = match term {
            Some(t) => t,
            None => tape.scale(dom, 0.0),
        };
        terms.push(term);
    }
    let mut total = terms[0];
    for &t in &terms[1..] {
        total = tape.add(total, t)?;
    }
    let mut grads = tape.backward(total)?;
    Ok(ObjectiveOutput {
        value: tape.value(total).item(),
        grads: bound.collect(&mut grads),
    })
}
