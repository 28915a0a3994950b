//! Per-example gradient computations shared by every training loop: the weighted triplet hinge
//! step for the discriminator and the REINFORCE step for the generator.

use rand::RngCore;

use crate::error::Result;
use crate::model::{cosine, cosine_backward, EncoderParams, EncoderTrace, QCModel, QDModel};
use crate::objectives::{hinge_grad, hinge_loss};

/// Gradient destinations for an anchor/candidate encoder pair; Siamese models route both to
/// the same encoder.
pub enum GradTargets<'a> {
    Separate(&'a mut EncoderParams, &'a mut EncoderParams),
    Shared(&'a mut EncoderParams),
}

impl GradTargets<'_> {
    fn anchor(&mut self) -> &mut EncoderParams {
        match self {
            GradTargets::Separate(a, _) => a,
            GradTargets::Shared(a) => a,
        }
    }

    fn candidate(&mut self) -> &mut EncoderParams {
        match self {
            GradTargets::Separate(_, c) => c,
            GradTargets::Shared(a) => a,
        }
    }
}

/// A matcher made of an anchor encoder and a candidate encoder scored by cosine.
pub trait Towers {
    fn anchor(&self) -> &EncoderParams;
    fn candidate(&self) -> &EncoderParams;
    fn grad_targets(grads: &mut Self) -> GradTargets<'_>;
}

impl Towers for QCModel {
    fn anchor(&self) -> &EncoderParams {
        &self.question_encoder
    }
    fn candidate(&self) -> &EncoderParams {
        &self.code_encoder
    }
    fn grad_targets(grads: &mut Self) -> GradTargets<'_> {
        GradTargets::Separate(&mut grads.question_encoder, &mut grads.code_encoder)
    }
}

impl Towers for QDModel {
    fn anchor(&self) -> &EncoderParams {
        &self.question_encoder
    }
    fn candidate(&self) -> &EncoderParams {
        &self.question_encoder
    }
    fn grad_targets(grads: &mut Self) -> GradTargets<'_> {
        GradTargets::Shared(&mut grads.question_encoder)
    }
}

pub(crate) fn reborrow<'a>(rng: &'a mut Option<&mut dyn RngCore>) -> Option<&'a mut dyn RngCore> {
    match rng {
        Some(r) => Some(&mut **r),
        None => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TripletOutcome {
    /// Raw (unweighted) hinge loss.
    pub loss: f64,
    pub f_pos: f64,
    pub f_neg: f64,
}

/// Forward pass on `(anchor, positive, negative)` and accumulation of the gradient of
/// `weight · hinge` into `grads`. Dropout is active iff `dropout` is given.
#[allow(clippy::too_many_arguments)]
pub fn triplet_step<M: Towers>(
    model: &M,
    anchor: &[usize],
    positive: &[usize],
    negative: &[usize],
    margin: f64,
    weight: f64,
    mut dropout: Option<&mut dyn RngCore>,
    grads: &mut M,
) -> Result<TripletOutcome> {
    let ta = model.anchor().forward_trace(anchor, reborrow(&mut dropout))?;
    let tp = model.candidate().forward_trace(positive, reborrow(&mut dropout))?;
    let tn = model.candidate().forward_trace(negative, reborrow(&mut dropout))?;
    let f_pos = cosine(&ta.output, &tp.output)?;
    let f_neg = cosine(&ta.output, &tn.output)?;
    let loss = hinge_loss(f_pos, f_neg, margin);
    let (g_pos, g_neg) = hinge_grad(f_pos, f_neg, margin);
    if weight != 0.0 && (g_pos != 0.0 || g_neg != 0.0) {
        let (da_p, dp) = cosine_backward(&ta.output, &tp.output, weight * g_pos);
        let (da_n, dn) = cosine_backward(&ta.output, &tn.output, weight * g_neg);
        let da: Vec<f64> = da_p.iter().zip(&da_n).map(|(x, y)| x + y).collect();
        let mut targets = M::grad_targets(grads);
        model.anchor().backward(&ta, &da, targets.anchor());
        model.candidate().backward(&tp, &dp, targets.candidate());
        model.candidate().backward(&tn, &dn, targets.candidate());
    }
    Ok(TripletOutcome { loss, f_pos, f_neg })
}

/// Inference-mode sum of hinge losses over a batch of `(anchor, positive, negative)` triplets.
pub fn batch_hinge_loss<M: Towers>(model: &M, batch: &[(&[usize], &[usize], &[usize])], margin: f64) -> Result<f64> {
    let mut total = 0.0;
    for &(a, p, n) in batch {
        let ha = model.anchor().encode(a)?;
        let f_pos = cosine(&ha, &model.candidate().encode(p)?)?;
        let f_neg = cosine(&ha, &model.candidate().encode(n)?)?;
        total += hinge_loss(f_pos, f_neg, margin);
    }
    Ok(total)
}

/// Backpropagates `Σ_j score_grads[j] · ∂ cos(h_anchor, h_j)` through the sampler's encoders.
pub fn scores_backward<M: Towers>(
    model: &M,
    anchor: &EncoderTrace,
    candidates: &[&EncoderTrace],
    score_grads: &[f64],
    grads: &mut M,
) {
    let mut d_anchor = vec![0.0; anchor.output.len()];
    let mut targets = M::grad_targets(grads);
    for (trace, &g) in candidates.iter().zip(score_grads) {
        if g == 0.0 {
            continue;
        }
        let (da, dc) = cosine_backward(&anchor.output, &trace.output, g);
        d_anchor.iter_mut().zip(&da).for_each(|(x, y)| *x += y);
        model.candidate().backward(trace, &dc, targets.candidate());
    }
    model.anchor().backward(anchor, &d_anchor, targets.anchor());
}
