//! Bi-directional LSTM sequence encoder with max pooling over time and a tanh squashing layer.
//!
//! The forward pass records a [`EncoderTrace`] that holds every intermediate the backward pass
//! needs, so gradients are computed exactly (no autodiff framework involved). Trailing PAD ids
//! are stripped before encoding, which makes padded and unpadded inputs produce identical
//! vectors.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::tensor::{axpy, sigmoid, Matrix};
use super::Parameters;
use crate::corpus::PAD;
use crate::error::{Error, Result};

/// One direction of the recurrent layer. Gate rows are laid out `[input, forget, cell, output]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub w_input: Matrix,
    pub w_hidden: Matrix,
    pub bias: Vec<f64>,
}

impl LstmParams {
    fn init<R: Rng + ?Sized>(input_dim: usize, hidden: usize, rng: &mut R) -> Self {
        let mut w_input = Matrix::zeros(4 * hidden, input_dim);
        let mut w_hidden = Matrix::zeros(4 * hidden, hidden);
        for gate in 0..4 {
            let wi = Matrix::orthogonal(hidden, input_dim, rng);
            let wh = Matrix::orthogonal(hidden, hidden, rng);
            let start = gate * hidden;
            w_input.data[start * input_dim..(start + hidden) * input_dim].copy_from_slice(&wi.data);
            w_hidden.data[start * hidden..(start + hidden) * hidden].copy_from_slice(&wh.data);
        }
        let mut bias = vec![0.0; 4 * hidden];
        bias[hidden..2 * hidden].iter_mut().for_each(|b| *b = 1.0);
        Self {
            w_input,
            w_hidden,
            bias,
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            w_input: Matrix::zeros(self.w_input.rows, self.w_input.cols),
            w_hidden: Matrix::zeros(self.w_hidden.rows, self.w_hidden.cols),
            bias: vec![0.0; self.bias.len()],
        }
    }

    fn hidden(&self) -> usize {
        self.w_hidden.cols
    }
}

/// Learnable state of one sequence encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub embedding: Matrix,
    pub forward: LstmParams,
    pub backward: LstmParams,
    pub dropout_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncoderShape {
    pub vocab_size: usize,
    pub embedding_dim: usize,
    /// Width of the concatenated bi-directional output; must be even.
    pub output_dim: usize,
    pub dropout_rate: f64,
}

impl EncoderParams {
    pub fn new<R: Rng + ?Sized>(shape: EncoderShape, rng: &mut R) -> Result<Self> {
        if shape.output_dim == 0 || !shape.output_dim.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "encoder output width must be a positive even number, got {}",
                shape.output_dim
            )));
        }
        if shape.vocab_size < 2 || shape.embedding_dim == 0 {
            return Err(Error::Config("encoder needs vocab_size >= 2 and embedding_dim >= 1".into()));
        }
        if !(0.0..1.0).contains(&shape.dropout_rate) {
            return Err(Error::Config(format!("dropout rate {} not in [0, 1)", shape.dropout_rate)));
        }
        let hidden = shape.output_dim / 2;
        let embedding = Matrix::uniform(shape.vocab_size, shape.embedding_dim, 0.1, rng);
        let forward = LstmParams::init(shape.embedding_dim, hidden, rng);
        let backward = LstmParams::init(shape.embedding_dim, hidden, rng);
        Ok(Self {
            embedding,
            forward,
            backward,
            dropout_rate: shape.dropout_rate,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            embedding: Matrix::zeros(self.embedding.rows, self.embedding.cols),
            forward: self.forward.zeros_like(),
            backward: self.backward.zeros_like(),
            dropout_rate: self.dropout_rate,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.embedding.rows
    }

    pub fn embedding_dim(&self) -> usize {
        self.embedding.cols
    }

    pub fn output_dim(&self) -> usize {
        2 * self.forward.hidden()
    }

    /// Inference-mode encoding (no dropout).
    pub fn encode(&self, tokens: &[usize]) -> Result<Vec<f64>> {
        Ok(self.forward_trace(tokens, None)?.output)
    }

    /// Runs the encoder and keeps the intermediates needed by [`EncoderParams::backward`].
    /// Dropout on the embeddings is applied iff `dropout_rng` is given and the rate is nonzero.
    pub fn forward_trace(
        &self,
        tokens: &[usize],
        dropout_rng: Option<&mut dyn RngCore>,
    ) -> Result<EncoderTrace> {
        let vocab = self.vocab_size();
        if let Some(&bad) = tokens.iter().find(|&&t| t >= vocab) {
            return Err(Error::IndexOutOfRange {
                index: bad,
                vocab_size: vocab,
            });
        }
        let len = tokens.iter().rposition(|&t| t != PAD).map_or(0, |p| p + 1);
        if len == 0 {
            return Err(Error::EmptySequence);
        }
        let tokens = tokens[..len].to_vec();
        let dim = self.embedding_dim();

        let mut inputs = Vec::with_capacity(len * dim);
        for &t in &tokens {
            inputs.extend_from_slice(self.embedding.row(t));
        }
        let mask = match dropout_rng {
            Some(rng) if self.dropout_rate > 0.0 => {
                let keep = 1.0 - self.dropout_rate;
                let mask: Vec<f64> = (0..len * dim)
                    .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                    .collect();
                inputs.iter_mut().zip(&mask).for_each(|(x, m)| *x *= m);
                Some(mask)
            }
            _ => None,
        };

        let fwd = run_direction(&self.forward, &inputs, dim, len, false);
        let bwd = run_direction(&self.backward, &inputs, dim, len, true);

        let hidden = self.forward.hidden();
        let mut argmax = vec![0usize; 2 * hidden];
        let mut output = vec![0.0; 2 * hidden];
        for (dir, run) in [&fwd, &bwd].into_iter().enumerate() {
            for d in 0..hidden {
                let mut best_t = 0;
                let mut best = f64::NEG_INFINITY;
                for t in 0..len {
                    let h = run.h[t * hidden + d];
                    if h > best {
                        best = h;
                        best_t = t;
                    }
                }
                argmax[dir * hidden + d] = best_t;
                output[dir * hidden + d] = best.tanh();
            }
        }

        Ok(EncoderTrace {
            tokens,
            inputs,
            mask,
            forward: fwd,
            backward: bwd,
            argmax,
            output,
        })
    }

    /// Accumulates into `grads` the gradient of a scalar loss given `d_output`, its gradient
    /// with respect to the encoder output.
    pub fn backward(&self, trace: &EncoderTrace, d_output: &[f64], grads: &mut EncoderParams) {
        let hidden = self.forward.hidden();
        let len = trace.tokens.len();
        let dim = self.embedding_dim();
        debug_assert_eq!(d_output.len(), 2 * hidden);

        let mut d_inputs = vec![0.0; len * dim];
        for (dir, (params, run, g)) in [
            (&self.forward, &trace.forward, &mut grads.forward),
            (&self.backward, &trace.backward, &mut grads.backward),
        ]
        .into_iter()
        .enumerate()
        {
            // gradient reaching each h_t from the pooling layer
            let mut d_h_pool = vec![0.0; len * hidden];
            for d in 0..hidden {
                let k = dir * hidden + d;
                let v = trace.output[k];
                d_h_pool[trace.argmax[k] * hidden + d] += d_output[k] * (1.0 - v * v);
            }
            backprop_direction(params, run, &trace.inputs, &d_h_pool, dim, len, dir == 1, g, &mut d_inputs);
        }

        for (t, &tok) in trace.tokens.iter().enumerate() {
            let dx = &mut d_inputs[t * dim..(t + 1) * dim];
            if let Some(mask) = &trace.mask {
                dx.iter_mut().zip(&mask[t * dim..(t + 1) * dim]).for_each(|(g, m)| *g *= m);
            }
            axpy(1.0, dx, grads.embedding.row_mut(tok));
        }
    }
}

impl Parameters for EncoderParams {
    fn tensors(&self) -> Vec<(String, &[f64])> {
        vec![
            ("embedding".into(), &self.embedding.data[..]),
            ("forward.w_input".into(), &self.forward.w_input.data[..]),
            ("forward.w_hidden".into(), &self.forward.w_hidden.data[..]),
            ("forward.bias".into(), &self.forward.bias[..]),
            ("backward.w_input".into(), &self.backward.w_input.data[..]),
            ("backward.w_hidden".into(), &self.backward.w_hidden.data[..]),
            ("backward.bias".into(), &self.backward.bias[..]),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            &mut self.embedding.data[..],
            &mut self.forward.w_input.data[..],
            &mut self.forward.w_hidden.data[..],
            &mut self.forward.bias[..],
            &mut self.backward.w_input.data[..],
            &mut self.backward.w_hidden.data[..],
            &mut self.backward.bias[..],
        ]
    }
}

/// Per-direction activations, indexed by time step (not processing order).
#[derive(Debug, Clone)]
pub struct DirectionRun {
    /// Activated gates `[i, f, g, o]`, `4 * hidden` per step.
    gates: Vec<f64>,
    cell: Vec<f64>,
    cell_tanh: Vec<f64>,
    h: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct EncoderTrace {
    tokens: Vec<usize>,
    /// Embeddings after dropout, `len * embedding_dim`.
    inputs: Vec<f64>,
    mask: Option<Vec<f64>>,
    forward: DirectionRun,
    backward: DirectionRun,
    argmax: Vec<usize>,
    pub output: Vec<f64>,
}

impl EncoderTrace {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

fn run_direction(params: &LstmParams, inputs: &[f64], dim: usize, len: usize, reverse: bool) -> DirectionRun {
    let hidden = params.hidden();
    let mut run = DirectionRun {
        gates: vec![0.0; len * 4 * hidden],
        cell: vec![0.0; len * hidden],
        cell_tanh: vec![0.0; len * hidden],
        h: vec![0.0; len * hidden],
    };
    let zero = vec![0.0; hidden];
    let mut z = vec![0.0; 4 * hidden];
    let order: Box<dyn Iterator<Item = usize>> = if reverse {
        Box::new((0..len).rev())
    } else {
        Box::new(0..len)
    };
    let mut prev: Option<usize> = None;
    for t in order {
        z.copy_from_slice(&params.bias);
        params.w_input.matvec_acc(&inputs[t * dim..(t + 1) * dim], &mut z);
        let (h_prev, c_prev) = match prev {
            Some(p) => (
                run.h[p * hidden..(p + 1) * hidden].to_vec(),
                run.cell[p * hidden..(p + 1) * hidden].to_vec(),
            ),
            None => (zero.clone(), zero.clone()),
        };
        params.w_hidden.matvec_acc(&h_prev, &mut z);
        let gates = &mut run.gates[t * 4 * hidden..(t + 1) * 4 * hidden];
        for k in 0..hidden {
            gates[k] = sigmoid(z[k]);
            gates[hidden + k] = sigmoid(z[hidden + k]);
            gates[2 * hidden + k] = z[2 * hidden + k].tanh();
            gates[3 * hidden + k] = sigmoid(z[3 * hidden + k]);
        }
        for k in 0..hidden {
            let c = gates[hidden + k] * c_prev[k] + gates[k] * gates[2 * hidden + k];
            let tc = c.tanh();
            run.cell[t * hidden + k] = c;
            run.cell_tanh[t * hidden + k] = tc;
            run.h[t * hidden + k] = gates[3 * hidden + k] * tc;
        }
        prev = Some(t);
    }
    run
}

#[allow(clippy::too_many_arguments)]
fn backprop_direction(
    params: &LstmParams,
    run: &DirectionRun,
    inputs: &[f64],
    d_h_pool: &[f64],
    dim: usize,
    len: usize,
    reverse: bool,
    grads: &mut LstmParams,
    d_inputs: &mut [f64],
) {
    let hidden = params.hidden();
    let mut dh_next = vec![0.0; hidden];
    let mut dc_next = vec![0.0; hidden];
    let mut dz = vec![0.0; 4 * hidden];
    let zero = vec![0.0; hidden];
    // walk steps opposite to the forward processing order
    let order: Box<dyn Iterator<Item = usize>> = if reverse {
        Box::new(0..len)
    } else {
        Box::new((0..len).rev())
    };
    for t in order {
        let prev = if reverse {
            (t + 1 < len).then_some(t + 1)
        } else {
            t.checked_sub(1)
        };
        let (h_prev, c_prev) = match prev {
            Some(p) => (&run.h[p * hidden..(p + 1) * hidden], &run.cell[p * hidden..(p + 1) * hidden]),
            None => (&zero[..], &zero[..]),
        };
        let gates = &run.gates[t * 4 * hidden..(t + 1) * 4 * hidden];
        for k in 0..hidden {
            let (i, f, g, o) = (gates[k], gates[hidden + k], gates[2 * hidden + k], gates[3 * hidden + k]);
            let tc = run.cell_tanh[t * hidden + k];
            let dh = d_h_pool[t * hidden + k] + dh_next[k];
            let dc = dc_next[k] + dh * o * (1.0 - tc * tc);
            dz[k] = dc * g * i * (1.0 - i);
            dz[hidden + k] = dc * c_prev[k] * f * (1.0 - f);
            dz[2 * hidden + k] = dc * i * (1.0 - g * g);
            dz[3 * hidden + k] = dh * tc * o * (1.0 - o);
            dc_next[k] = dc * f;
        }
        grads.w_input.outer_acc(&dz, &inputs[t * dim..(t + 1) * dim]);
        grads.w_hidden.outer_acc(&dz, h_prev);
        axpy(1.0, &dz, &mut grads.bias);
        params.w_input.matvec_t_acc(&dz, &mut d_inputs[t * dim..(t + 1) * dim]);
        dh_next.iter_mut().for_each(|x| *x = 0.0);
        params.w_hidden.matvec_t_acc(&dz, &mut dh_next);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small(seed: u64) -> EncoderParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        EncoderParams::new(
            EncoderShape {
                vocab_size: 12,
                embedding_dim: 6,
                output_dim: 8,
                dropout_rate: 0.25,
            },
            &mut rng,
        )
        .unwrap()
    }

    #[test]
    fn output_width_and_range() {
        let enc = small(1);
        let v = enc.encode(&[2, 5, 7, 3]).unwrap();
        assert_eq!(v.len(), 8);
        assert!(v.iter().all(|x| x.abs() < 1.0));
    }

    #[test]
    fn default_dimensions_give_400_wide_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let enc = EncoderParams::new(
            EncoderShape {
                vocab_size: 20,
                embedding_dim: 200,
                output_dim: 400,
                dropout_rate: 0.25,
            },
            &mut rng,
        )
        .unwrap();
        assert_eq!(enc.embedding_dim(), 200);
        let v = enc.encode(&[3, 4, 5]).unwrap();
        assert_eq!(v.len(), 400);
        assert!(v.iter().all(|x| x.abs() < 1.0 && x.is_finite()));
    }

    #[test]
    fn singleton_sequence_pools_its_only_step() {
        let enc = small(2);
        let trace = enc.forward_trace(&[4], None).unwrap();
        let h = enc.forward.hidden();
        for d in 0..h {
            assert_eq!(trace.output[d], trace.forward.h[d].tanh());
            assert_eq!(trace.output[h + d], trace.backward.h[d].tanh());
        }
    }

    #[test]
    fn trailing_padding_is_ignored() {
        let enc = small(3);
        let a = enc.encode(&[2, 9, 4]).unwrap();
        let b = enc.encode(&[2, 9, 4, PAD, PAD, PAD]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn inference_is_deterministic_and_dropout_is_not() {
        let enc = small(4);
        assert_eq!(enc.encode(&[3, 3, 8]).unwrap(), enc.encode(&[3, 3, 8]).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = enc.forward_trace(&[3, 3, 8], Some(&mut rng)).unwrap().output;
        let b = enc.forward_trace(&[3, 3, 8], Some(&mut rng)).unwrap().output;
        assert_ne!(a, b);
    }

    #[test]
    fn rejects_empty_and_out_of_range() {
        let enc = small(5);
        assert!(matches!(enc.encode(&[]), Err(Error::EmptySequence)));
        assert!(matches!(enc.encode(&[PAD, PAD]), Err(Error::EmptySequence)));
        assert!(matches!(
            enc.encode(&[2, 12]),
            Err(Error::IndexOutOfRange { index: 12, vocab_size: 12 })
        ));
    }

    #[test]
    fn odd_output_width_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let shape = EncoderShape {
            vocab_size: 4,
            embedding_dim: 2,
            output_dim: 5,
            dropout_rate: 0.0,
        };
        assert!(EncoderParams::new(shape, &mut rng).is_err());
    }
}
