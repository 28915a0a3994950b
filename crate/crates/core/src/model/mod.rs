//! Sequence encoders and the two matchers built from them: the question-code (QC) matcher with
//! separate encoders per modality, and the question-question (QD) matcher with one Siamese
//! encoder. The adversarial generator shares the QC architecture.

mod checkpoint;
mod encoder;
pub mod tensor;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, ModelKind, ModelPayload, CHECKPOINT_FORMAT};
pub use encoder::{EncoderParams, EncoderShape, EncoderTrace, LstmParams};

use crate::error::{Error, Result};
use tensor::{dot, norm};

/// Flat views over every learnable tensor, in a fixed order shared by parameters, gradients and
/// optimizer state.
pub trait Parameters {
    fn tensors(&self) -> Vec<(String, &[f64])>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|x| x.is_finite()))
    }

    fn squared_norm(&self) -> f64 {
        self.tensors().iter().map(|(_, t)| dot(t, t)).sum()
    }

    fn fill_zero(&mut self) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= factor);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelDims {
    pub nl_vocab_size: usize,
    pub code_vocab_size: usize,
    pub embedding_dim: usize,
    pub output_dim: usize,
    pub dropout_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QCModel {
    pub question_encoder: EncoderParams,
    pub code_encoder: EncoderParams,
}

impl QCModel {
    pub fn new<R: Rng + ?Sized>(dims: ModelDims, rng: &mut R) -> Result<Self> {
        let question_encoder = EncoderParams::new(
            EncoderShape {
                vocab_size: dims.nl_vocab_size,
                embedding_dim: dims.embedding_dim,
                output_dim: dims.output_dim,
                dropout_rate: dims.dropout_rate,
            },
            rng,
        )?;
        let code_encoder = EncoderParams::new(
            EncoderShape {
                vocab_size: dims.code_vocab_size,
                embedding_dim: dims.embedding_dim,
                output_dim: dims.output_dim,
                dropout_rate: dims.dropout_rate,
            },
            rng,
        )?;
        Ok(Self {
            question_encoder,
            code_encoder,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            question_encoder: self.question_encoder.zeros_like(),
            code_encoder: self.code_encoder.zeros_like(),
        }
    }
}

impl Parameters for QCModel {
    fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = self
            .question_encoder
            .tensors()
            .into_iter()
            .map(|(n, t)| (format!("question.{n}"), t))
            .collect();
        out.extend(
            self.code_encoder
                .tensors()
                .into_iter()
                .map(|(n, t)| (format!("code.{n}"), t)),
        );
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = self.question_encoder.tensors_mut();
        out.extend(self.code_encoder.tensors_mut());
        out
    }
}

/// Siamese question matcher: one encoder applied to both questions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QDModel {
    pub question_encoder: EncoderParams,
}

impl QDModel {
    pub fn new<R: Rng + ?Sized>(dims: ModelDims, rng: &mut R) -> Result<Self> {
        Ok(Self {
            question_encoder: EncoderParams::new(
                EncoderShape {
                    vocab_size: dims.nl_vocab_size,
                    embedding_dim: dims.embedding_dim,
                    output_dim: dims.output_dim,
                    dropout_rate: dims.dropout_rate,
                },
                rng,
            )?,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            question_encoder: self.question_encoder.zeros_like(),
        }
    }
}

impl Parameters for QDModel {
    fn tensors(&self) -> Vec<(String, &[f64])> {
        self.question_encoder
            .tensors()
            .into_iter()
            .map(|(n, t)| (format!("question.{n}"), t))
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.question_encoder.tensors_mut()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorMode {
    #[default]
    Untied,
    Tied,
}

/// Adversarial sampler parameters. In tied mode there is no separate state: every read goes
/// through the discriminator, so the two can never diverge.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator<M> {
    mode: GeneratorMode,
    own: Option<M>,
}

pub type GeneratorModel = Generator<QCModel>;
pub type QdGenerator = Generator<QDModel>;

impl<M: Clone> Generator<M> {
    /// Initializes the generator from the discriminator (φ ← θ).
    pub fn from_discriminator(discriminator: &M, mode: GeneratorMode) -> Self {
        let own = match mode {
            GeneratorMode::Untied => Some(discriminator.clone()),
            GeneratorMode::Tied => None,
        };
        Self { mode, own }
    }

    pub fn mode(&self) -> GeneratorMode {
        self.mode
    }

    /// Parameters used for sampling.
    pub fn params<'a>(&'a self, discriminator: &'a M) -> &'a M {
        self.own.as_ref().unwrap_or(discriminator)
    }

    /// Independent parameters, present only in untied mode.
    pub fn own_params_mut(&mut self) -> Option<&mut M> {
        self.own.as_mut()
    }

    /// Materialized copy of the effective parameters.
    pub fn snapshot(&self, discriminator: &M) -> M {
        self.params(discriminator).clone()
    }
}

/// Cosine similarity between two vectors.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 || !nu.is_finite() || !nv.is_finite() {
        return Err(Error::ZeroNorm);
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

/// Gradient of `cosine(u, v)` with respect to `u` and `v`, scaled by `upstream`.
pub fn cosine_backward(u: &[f64], v: &[f64], upstream: f64) -> (Vec<f64>, Vec<f64>) {
    let (nu, nv) = (norm(u), norm(v));
    let s = dot(u, v) / (nu * nv);
    let du = u
        .iter()
        .zip(v)
        .map(|(&a, &b)| upstream * (b / (nu * nv) - s * a / (nu * nu)))
        .collect();
    let dv = u
        .iter()
        .zip(v)
        .map(|(&a, &b)| upstream * (a / (nu * nv) - s * b / (nv * nv)))
        .collect();
    (du, dv)
}

pub fn score_qc(model: &QCModel, question: &[usize], code: &[usize]) -> Result<f64> {
    let hq = model.question_encoder.encode(question)?;
    let hc = model.code_encoder.encode(code)?;
    cosine(&hq, &hc)
}

pub fn score_qd(model: &QDModel, q1: &[usize], q2: &[usize]) -> Result<f64> {
    let a = model.question_encoder.encode(q1)?;
    let b = model.question_encoder.encode(q2)?;
    cosine(&a, &b)
}

/// Builds a QD model whose encoder is a deep copy of the QC question encoder.
pub fn init_qd_from_qc(qc: &QCModel) -> QDModel {
    QDModel {
        question_encoder: qc.question_encoder.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dims() -> ModelDims {
        ModelDims {
            nl_vocab_size: 10,
            code_vocab_size: 14,
            embedding_dim: 5,
            output_dim: 6,
            dropout_rate: 0.25,
        }
    }

    fn qc(seed: u64) -> QCModel {
        QCModel::new(dims(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn cosine_reference_cases() {
        let h = vec![0.3, -0.2, 0.7];
        assert!((cosine(&h, &h).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = h.iter().map(|x| -x).collect();
        assert!((cosine(&h, &neg).unwrap() + 1.0).abs() < 1e-12);
        let mut e1 = vec![0.0; 400];
        let mut e2 = vec![0.0; 400];
        e1[0] = 1.0;
        e2[1] = 1.0;
        assert_eq!(cosine(&e1, &e2).unwrap(), 0.0);
        assert!(matches!(cosine(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::ZeroNorm)));
    }

    #[test]
    fn cosine_backward_matches_finite_differences() {
        let u = vec![0.3, -0.5, 0.9, 0.1];
        let v = vec![-0.2, 0.4, 0.6, -0.7];
        let (du, dv) = cosine_backward(&u, &v, 1.0);
        let eps = 1e-6;
        for i in 0..4 {
            let mut up = u.clone();
            let mut um = u.clone();
            up[i] += eps;
            um[i] -= eps;
            let fd = (cosine(&up, &v).unwrap() - cosine(&um, &v).unwrap()) / (2.0 * eps);
            assert!((fd - du[i]).abs() < 1e-8);
            let mut vp = v.clone();
            let mut vm = v.clone();
            vp[i] += eps;
            vm[i] -= eps;
            let fd = (cosine(&u, &vp).unwrap() - cosine(&u, &vm).unwrap()) / (2.0 * eps);
            assert!((fd - dv[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn qc_encoders_are_independent() {
        let mut m = qc(1);
        let before = m.code_encoder.clone();
        m.question_encoder.embedding.data[0] += 1.0;
        assert_eq!(m.code_encoder, before);
    }

    #[test]
    fn qd_scores_are_symmetric_and_self_similar() {
        let qd = QDModel::new(dims(), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let a = [2, 3, 4];
        let b = [5, 6];
        assert!((score_qd(&qd, &a, &a).unwrap() - 1.0).abs() < 1e-12);
        let ab = score_qd(&qd, &a, &b).unwrap();
        assert_eq!(ab, score_qd(&qd, &b, &a).unwrap());
        assert!((-1.0..=1.0).contains(&ab));
    }

    #[test]
    fn qd_init_copies_then_isolates() {
        let qc_model = qc(3);
        let mut qd = init_qd_from_qc(&qc_model);
        let (q1, q2) = ([2, 7, 3], [4, 4, 9, 1]);
        let hq1 = qc_model.question_encoder.encode(&q1).unwrap();
        let hq2 = qc_model.question_encoder.encode(&q2).unwrap();
        assert_eq!(score_qd(&qd, &q1, &q2).unwrap(), cosine(&hq1, &hq2).unwrap());
        assert_eq!(init_qd_from_qc(&qc_model), qd);

        let qc_score = score_qc(&qc_model, &q1, &[3, 5]).unwrap();
        qd.question_encoder.forward.bias.iter_mut().for_each(|b| *b += 0.5);
        assert_eq!(score_qc(&qc_model, &q1, &[3, 5]).unwrap(), qc_score);
    }

    #[test]
    fn tied_generator_reads_discriminator() {
        let mut disc = qc(4);
        let mut generator = GeneratorModel::from_discriminator(&disc, GeneratorMode::Tied);
        assert!(generator.own_params_mut().is_none());
        disc.code_encoder.embedding.data[3] = 0.42;
        assert_eq!(generator.params(&disc), &disc);

        let mut untied = GeneratorModel::from_discriminator(&disc, GeneratorMode::Untied);
        assert_eq!(untied.params(&disc), &disc);
        untied.own_params_mut().unwrap().code_encoder.embedding.data[3] = 0.0;
        assert_ne!(untied.params(&disc), &disc);
    }

    #[test]
    fn scores_invariant_under_positive_rescaling() {
        let u = vec![0.2, -0.4, 0.1];
        let v = vec![0.5, 0.3, -0.9];
        let base = cosine(&u, &v).unwrap();
        let scaled: Vec<f64> = u.iter().map(|x| x * 7.5).collect();
        assert!((cosine(&scaled, &v).unwrap() - base).abs() < 1e-12);
    }
}
