//! Loss, sampling and weighting math: the pairwise hinge loss, the temperature softmax the
//! adversarial sampler draws from, the REINFORCE surrogate, and the QD relevance weight
//! `w(x) = (1 - x^a)^b`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{cosine, QCModel};

/// Pairwise ranking loss `max(0, margin + f_neg - f_pos)`.
pub fn hinge_loss(f_pos: f64, f_neg: f64, margin: f64) -> f64 {
    (margin + f_neg - f_pos).max(0.0)
}

/// Subgradient of [`hinge_loss`] with respect to `(f_pos, f_neg)`; zero unless the margin is
/// violated.
pub fn hinge_grad(f_pos: f64, f_neg: f64, margin: f64) -> (f64, f64) {
    if margin + f_neg - f_pos > 0.0 {
        (-1.0, 1.0)
    } else {
        (0.0, 0.0)
    }
}

/// `softmax(scores / tau)` with max subtraction.
pub fn adversarial_distribution(scores: &[f64], tau: f64) -> Result<Vec<f64>> {
    if tau.is_nan() || tau <= 0.0 {
        return Err(Error::InvalidInput(format!("temperature must be positive, got {tau}")));
    }
    if scores.is_empty() {
        return Err(Error::InvalidInput("cannot build a distribution over zero candidates".into()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidInput("non-finite candidate score".into()));
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| ((s - max) / tau).exp()).collect();
    let z: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / z).collect())
}

/// Inverse-CDF draw from a probability vector.
pub fn draw_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding left u above the final cumulative sum
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// A negative drawn by the adversarial sampler.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvSample {
    /// Position within the candidate subset.
    pub chosen_index: usize,
    pub chosen_id: u64,
    /// `log P(ĉ | q)` under the sampler.
    pub log_prob: f64,
    /// Id of the question originally paired with the chosen snippet.
    pub paired_question_id: u64,
}

/// A candidate snippet offered to the sampler.
#[derive(Debug, Clone, Copy)]
pub struct Candidate<'a> {
    pub id: u64,
    pub tokens: &'a [usize],
    pub paired_question_id: u64,
}

/// Sampling outcome with the full distribution, which the REINFORCE gradient needs.
#[derive(Debug, Clone)]
pub struct AdversarialDraw {
    pub sample: AdvSample,
    pub probs: Vec<f64>,
    pub scores: Vec<f64>,
}

/// Draws from precomputed candidate scores.
pub fn sample_from_scores<R: Rng + ?Sized>(
    scores: &[f64],
    candidates: &[Candidate<'_>],
    tau: f64,
    rng: &mut R,
) -> Result<AdversarialDraw> {
    if candidates.is_empty() {
        return Err(Error::InvalidInput("empty candidate subset".into()));
    }
    let probs = adversarial_distribution(scores, tau)?;
    let idx = draw_index(&probs, rng);
    let cand = candidates[idx];
    Ok(AdversarialDraw {
        sample: AdvSample {
            chosen_index: idx,
            chosen_id: cand.id,
            log_prob: probs[idx].ln().min(0.0),
            paired_question_id: cand.paired_question_id,
        },
        probs,
        scores: scores.to_vec(),
    })
}

/// Scores every candidate with the generator's matcher and draws one from the tempered softmax.
pub fn sample_adversarial<R: Rng + ?Sized>(
    generator: &QCModel,
    question: &[usize],
    subset: &[Candidate<'_>],
    tau: f64,
    rng: &mut R,
) -> Result<AdversarialDraw> {
    if subset.is_empty() {
        return Err(Error::InvalidInput("empty candidate subset".into()));
    }
    let hq = generator.question_encoder.encode(question)?;
    let scores = subset
        .iter()
        .map(|c| cosine(&hq, &generator.code_encoder.encode(c.tokens)?))
        .collect::<Result<Vec<_>>>()?;
    sample_from_scores(&scores, subset, tau, rng)
}

/// Surrogate `loss · log P(ĉ|q)`; its gradient in the sampler's parameters is the one-sample
/// REINFORCE estimate. `loss` is a constant here.
pub fn reinforce_term(loss: f64, log_prob: f64) -> f64 {
    loss * log_prob
}

/// Gradient of [`reinforce_term`] with respect to the raw candidate scores:
/// `reward · (1[j = chosen] - p_j) / tau`.
pub fn reinforce_score_grads(reward: f64, probs: &[f64], chosen: usize, tau: f64) -> Vec<f64> {
    probs
        .iter()
        .enumerate()
        .map(|(j, &p)| reward * ((j == chosen) as u8 as f64 - p) / tau)
        .collect()
}

/// Affine map of a cosine score onto `[0, 1]`.
pub fn normalize_relevance(cos_score: f64) -> f64 {
    (cos_score.clamp(-1.0, 1.0) + 1.0) / 2.0
}

/// Shape of the relevance weight curve; both exponents are positive integers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegWeights {
    pub a: u32,
    pub b: u32,
}

impl Default for RegWeights {
    fn default() -> Self {
        Self { a: 1, b: 1 }
    }
}

impl RegWeights {
    pub fn new(a: u32, b: u32) -> Result<Self> {
        if a < 1 || b < 1 {
            return Err(Error::Config(format!("weight exponents must be >= 1, got a={a} b={b}")));
        }
        Ok(Self { a, b })
    }
}

const WEIGHT_TOLERANCE: f64 = 1e-9;

/// `(1 - x^a)^b`, monotonically non-increasing on `[0, 1]`.
pub fn qd_weight(x: f64, w: RegWeights) -> Result<f64> {
    if !(-WEIGHT_TOLERANCE..=1.0 + WEIGHT_TOLERANCE).contains(&x) {
        return Err(Error::InvalidInput(format!("relevance {x} outside [0, 1]")));
    }
    let x = x.clamp(0.0, 1.0);
    Ok((1.0 - x.powi(w.a as i32)).powi(w.b as i32))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hinge_examples() {
        assert_eq!(hinge_loss(0.9, 0.2, 0.05), 0.0);
        assert!((hinge_loss(0.5, 0.5, 0.05) - 0.05).abs() < 1e-15);
        assert!((hinge_loss(0.3, 0.6, 0.05) - 0.35).abs() < 1e-15);
        assert_eq!(hinge_grad(0.9, 0.2, 0.05), (0.0, 0.0));
        assert_eq!(hinge_grad(0.3, 0.6, 0.05), (-1.0, 1.0));
    }

    #[test]
    fn distribution_examples() {
        let p = adversarial_distribution(&[0.3, 0.3, 0.3, 0.3], 0.2).unwrap();
        assert!(p.iter().all(|&x| (x - 0.25).abs() < 1e-15));
        let p = adversarial_distribution(&[1.0, 0.0], 0.2).unwrap();
        let want = 5f64.exp() / (5f64.exp() + 1.0);
        assert!((p[0] - want).abs() < 1e-12);
        assert!((p[0] - 0.99331).abs() < 1e-5 && (p[1] - 0.00669).abs() < 1e-5);
        let p = adversarial_distribution(&[1.0, -1.0, 0.5], 1e6).unwrap();
        assert!(p.iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-5));
        assert!(adversarial_distribution(&[1.0], 0.0).is_err());
        assert!(adversarial_distribution(&[1.0], -1.0).is_err());
    }

    #[test]
    fn lower_temperature_sharpens() {
        let s = [0.4, 0.1, -0.2, 0.35];
        let hot = adversarial_distribution(&s, 1.0).unwrap();
        let cold = adversarial_distribution(&s, 0.2).unwrap();
        assert!(cold[0] > hot[0]);
    }

    #[test]
    fn singleton_subset_is_forced() {
        let toks = [2usize];
        let cands = [Candidate {
            id: 42,
            tokens: &toks,
            paired_question_id: 42,
        }];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = sample_from_scores(&[0.7], &cands, 0.2, &mut rng).unwrap();
        assert_eq!(d.sample.chosen_id, 42);
        assert_eq!(d.sample.log_prob, 0.0);
        assert!(sample_from_scores(&[], &[], 0.2, &mut rng).is_err());
    }

    #[test]
    fn dominant_candidate_is_sampled_almost_always() {
        let toks = [2usize];
        let cands: Vec<Candidate> = (0..5)
            .map(|i| Candidate {
                id: i,
                tokens: &toks,
                paired_question_id: i,
            })
            .collect();
        let tau = 0.2;
        // one score leads the rest by 10 / tau
        let scores = [0.0, 50.0, 0.0, 0.0, 0.0];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let hits = (0..10_000)
            .filter(|_| sample_from_scores(&scores, &cands, tau, &mut rng).unwrap().sample.chosen_id == 1)
            .count();
        assert!(hits as f64 / 1e4 > 0.99);
    }

    #[test]
    fn draws_are_reproducible() {
        let probs = [0.1, 0.6, 0.3];
        let a: Vec<usize> = {
            let mut r = ChaCha8Rng::seed_from_u64(3);
            (0..20).map(|_| draw_index(&probs, &mut r)).collect()
        };
        let b: Vec<usize> = {
            let mut r = ChaCha8Rng::seed_from_u64(3);
            (0..20).map(|_| draw_index(&probs, &mut r)).collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn zero_loss_gives_zero_reinforce_gradient() {
        assert_eq!(reinforce_term(0.0, -1.3), 0.0);
        assert!(reinforce_score_grads(0.0, &[0.2, 0.8], 1, 0.2).iter().all(|&g| g == 0.0));
    }

    #[test]
    fn relevance_and_weight_examples() {
        assert_eq!(normalize_relevance(-1.0), 0.0);
        assert_eq!(normalize_relevance(1.0), 1.0);
        assert_eq!(normalize_relevance(0.0), 0.5);
        assert_eq!(normalize_relevance(1.0 + 1e-12), 1.0);
        for (a, b) in [(1, 1), (2, 3), (3, 1)] {
            let w = RegWeights::new(a, b).unwrap();
            assert_eq!(qd_weight(0.0, w).unwrap(), 1.0);
            assert_eq!(qd_weight(1.0, w).unwrap(), 0.0);
        }
        let w = qd_weight(0.5, RegWeights::new(2, 3).unwrap()).unwrap();
        assert!((w - 0.421875).abs() < 1e-15);
        assert!(qd_weight(1.1, RegWeights::default()).is_err());
        assert!(qd_weight(-0.01, RegWeights::default()).is_err());
        assert!(RegWeights::new(0, 1).is_err());
    }
}
