//! One pass over a pairwise ranking task, shared by every training mode. A task is a list of
//! `(anchor, positive)` examples; the negative for an example is another example's positive
//! from the same group, chosen either uniformly or by the adversarial generator.

use std::collections::hash_map::Entry;
use std::collections::HashMap;

use log::trace;
use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::steps::{scores_backward, triplet_step, Towers};
use super::{SampleRecord, TrainConfig};
use crate::error::{Error, Result};
use crate::model::{cosine, EncoderTrace, Generator, GeneratorMode, Parameters, QCModel, QDModel};
use crate::objectives::{reinforce_score_grads, sample_from_scores, Candidate};
use crate::optim::Optimizer;

pub trait Trainable: Towers + Parameters + Clone + Sync {
    fn zeros_like(&self) -> Self;
}

impl Trainable for QCModel {
    fn zeros_like(&self) -> Self {
        QCModel::zeros_like(self)
    }
}

impl Trainable for QDModel {
    fn zeros_like(&self) -> Self {
        QDModel::zeros_like(self)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Example<'a> {
    pub id: u64,
    pub anchor: &'a [usize],
    pub positive: &'a [usize],
    pub group: usize,
}

pub struct PairwiseTask<'a> {
    pub examples: Vec<Example<'a>>,
    groups: Vec<Vec<usize>>,
    slot: Vec<usize>,
}

impl<'a> PairwiseTask<'a> {
    pub fn new(examples: Vec<Example<'a>>) -> Self {
        let n_groups = examples.iter().map(|e| e.group + 1).max().unwrap_or(0);
        let mut groups = vec![Vec::new(); n_groups];
        let mut slot = Vec::with_capacity(examples.len());
        for (i, e) in examples.iter().enumerate() {
            slot.push(groups[e.group].len());
            groups[e.group].push(i);
        }
        Self { examples, groups, slot }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Number of possible negatives for example `i`.
    pub fn others(&self, i: usize) -> usize {
        self.groups[self.examples[i].group].len() - 1
    }

    /// The `k`-th example other than `i` in `i`'s group.
    pub fn other(&self, i: usize, k: usize) -> usize {
        let g = &self.groups[self.examples[i].group];
        g[if k < self.slot[i] { k } else { k + 1 }]
    }
}

pub enum Negatives<'g, M> {
    Uniform,
    Adversarial {
        generator: &'g mut Generator<M>,
        optimizer: &'g mut Optimizer,
        baseline: &'g mut Option<f64>,
    },
}

impl<M> Negatives<'_, M> {
    pub fn label(&self) -> &'static str {
        match self {
            Negatives::Uniform => "uniform",
            Negatives::Adversarial { .. } => "adversarial",
        }
    }
}

/// Weight applied to the loss of example `i` against the negative drawn from example `j`.
pub type Weigher<'w> = &'w dyn Fn(usize, usize) -> Result<f64>;

#[derive(Debug, Clone, Copy, Default)]
pub struct EpochStats {
    /// Mean applied (weighted) loss.
    pub mean_loss: f64,
    pub mean_weight: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn run_epoch<M: Trainable>(
    model: &mut M,
    negatives: Negatives<'_, M>,
    task: &PairwiseTask<'_>,
    weigher: Option<Weigher<'_>>,
    cfg: &TrainConfig,
    optimizer: &mut Optimizer,
    rng: &mut ChaCha8Rng,
    epoch: usize,
    samples: &mut Vec<SampleRecord>,
) -> Result<EpochStats> {
    let mut order: Vec<usize> = (0..task.len()).filter(|&i| task.others(i) > 0).collect();
    if order.is_empty() {
        return Ok(EpochStats {
            mean_loss: 0.0,
            mean_weight: 1.0,
        });
    }
    order.shuffle(rng);
    trace!("epoch {epoch}: {} negatives", negatives.label());
    let (mut generator, mut gen_opt, mut baseline) = match negatives {
        Negatives::Adversarial {
            generator,
            optimizer,
            baseline,
        } => (Some(generator), Some(optimizer), Some(baseline)),
        Negatives::Uniform => (None, None, None),
    };

    let mut loss_sum = 0.0;
    let mut weight_sum = 0.0;
    for batch in order.chunks(cfg.batch_size) {
        let mut grads = model.zeros_like();
        let mut gen_grads: Option<M> = None;
        {
            let model_ref: &M = model;
            // generator parameters are frozen for the duration of the batch
            let sampler: Option<&M> = generator.as_deref().map(|g| g.params(model_ref));
            let untied = generator.as_deref().is_some_and(|g| g.mode() == GeneratorMode::Untied);
            if untied {
                gen_grads = sampler.map(|s| s.zeros_like());
            }
            let mut cache: HashMap<usize, EncoderTrace> = HashMap::new();

            for &i in batch {
                let ex = task.examples[i];
                let (j, log_prob, reinforce) = match sampler {
                    None => {
                        let k = rng.random_range(0..task.others(i));
                        (task.other(i, k), None, None)
                    }
                    Some(generator) => {
                        let n = task.others(i);
                        let subset: Vec<usize> = index::sample(rng, n, cfg.subset_size.min(n))
                            .into_iter()
                            .map(|k| task.other(i, k))
                            .collect();
                        let anchor = generator.anchor().forward_trace(ex.anchor, None)?;
                        for &j in &subset {
                            if let Entry::Vacant(slot) = cache.entry(j) {
                                slot.insert(generator.candidate().forward_trace(task.examples[j].positive, None)?);
                            }
                        }
                        let scores = subset
                            .iter()
                            .map(|j| cosine(&anchor.output, &cache[j].output))
                            .collect::<Result<Vec<_>>>()?;
                        let candidates: Vec<Candidate> = subset
                            .iter()
                            .map(|&j| Candidate {
                                id: task.examples[j].id,
                                tokens: task.examples[j].positive,
                                paired_question_id: task.examples[j].id,
                            })
                            .collect();
                        let draw = sample_from_scores(&scores, &candidates, cfg.tau, rng)?;
                        let j = subset[draw.sample.chosen_index];
                        let log_prob = draw.sample.log_prob;
                        (j, Some(log_prob), Some((anchor, subset, draw)))
                    }
                };

                let weight = match weigher {
                    Some(w) => w(i, j)?,
                    None => 1.0,
                };
                let out = triplet_step(
                    model_ref,
                    ex.anchor,
                    ex.positive,
                    task.examples[j].positive,
                    cfg.margin,
                    weight,
                    Some(rng),
                    &mut grads,
                )?;
                if !out.loss.is_finite() {
                    return Err(Error::Diverged {
                        epoch,
                        detail: format!("non-finite loss on example {}", ex.id),
                    });
                }
                loss_sum += weight * out.loss;
                weight_sum += weight;
                samples.push(SampleRecord {
                    epoch,
                    query_id: ex.id,
                    chosen_id: task.examples[j].id,
                    weight,
                    loss: out.loss,
                    log_prob,
                });

                if let (Some(gen_grads), Some((anchor, subset, draw)), Some(sampler), Some(baseline)) =
                    (gen_grads.as_mut(), reinforce, sampler, baseline.as_deref_mut())
                {
                    let reward = match (cfg.reinforce_baseline, *baseline) {
                        (true, Some(b)) => out.loss - b,
                        _ => out.loss,
                    };
                    if cfg.reinforce_baseline {
                        *baseline = Some(match *baseline {
                            Some(b) => cfg.baseline_decay * b + (1.0 - cfg.baseline_decay) * out.loss,
                            None => out.loss,
                        });
                    }
                    if reward != 0.0 {
                        // ascent on J: descend on -reward · log P
                        let grads_up: Vec<f64> =
                            reinforce_score_grads(reward, &draw.probs, draw.sample.chosen_index, cfg.tau)
                                .into_iter()
                                .map(|g| -g)
                                .collect();
                        let traces: Vec<&EncoderTrace> = subset.iter().map(|j| &cache[j]).collect();
                        scores_backward(sampler, &anchor, &traces, &grads_up, gen_grads);
                    }
                }
            }
        }

        let inv = 1.0 / batch.len() as f64;
        grads.scale(inv);
        optimizer.step(model, &mut grads);
        if !model.all_finite() {
            return Err(Error::Diverged {
                epoch,
                detail: "non-finite discriminator parameters".into(),
            });
        }
        if let (Some(mut g), Some(generator), Some(gen_opt)) =
            (gen_grads, generator.as_deref_mut(), gen_opt.as_deref_mut())
        {
            if let Some(own) = generator.own_params_mut() {
                g.scale(inv);
                gen_opt.step(own, &mut g);
                if !own.all_finite() {
                    return Err(Error::Diverged {
                        epoch,
                        detail: "non-finite generator parameters".into(),
                    });
                }
            }
        }
    }

    let n = order.len() as f64;
    Ok(EpochStats {
        mean_loss: loss_sum / n,
        mean_weight: weight_sum / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn others_skip_self_within_group() {
        let toks = [2usize];
        let ex = |id, group| Example {
            id,
            anchor: &toks,
            positive: &toks,
            group,
        };
        let task = PairwiseTask::new(vec![ex(0, 0), ex(1, 1), ex(2, 0), ex(3, 0), ex(4, 1)]);
        assert_eq!(task.others(0), 2);
        assert_eq!(task.others(1), 1);
        assert_eq!((0..2).map(|k| task.other(2, k)).collect::<Vec<_>>(), vec![0, 3]);
        assert_eq!(task.other(4, 0), 1);
    }

    /// Expected hinge loss of the frozen discriminator under the generator's distribution.
    fn expected_loss(disc: &QCModel, sampler: &QCModel, task: &PairwiseTask<'_>, cfg: &TrainConfig) -> f64 {
        let mut total = 0.0;
        for (i, ex) in task.examples.iter().enumerate() {
            let others: Vec<usize> = (0..task.others(i)).map(|k| task.other(i, k)).collect();
            let g = sampler.question_encoder.encode(ex.anchor).unwrap();
            let scores: Vec<f64> = others
                .iter()
                .map(|&j| cosine(&g, &sampler.code_encoder.encode(task.examples[j].positive).unwrap()).unwrap())
                .collect();
            let probs = crate::objectives::adversarial_distribution(&scores, cfg.tau).unwrap();
            let d = disc.question_encoder.encode(ex.anchor).unwrap();
            let pos = cosine(&d, &disc.code_encoder.encode(ex.positive).unwrap()).unwrap();
            for (&j, p) in others.iter().zip(probs) {
                let neg = cosine(&d, &disc.code_encoder.encode(task.examples[j].positive).unwrap()).unwrap();
                total += p * crate::objectives::hinge_loss(pos, neg, cfg.margin);
            }
        }
        total / task.len() as f64
    }

    #[test]
    fn generator_raises_expected_loss_on_frozen_discriminator() {
        use crate::training::{stream_rng, STREAM_INIT, STREAM_TRAIN};

        let seqs: Vec<(Vec<usize>, Vec<usize>)> = (0..8)
            .map(|i| (vec![2 + i % 5, 3 + i, 2], vec![2 + i, 4 + i % 3, 3]))
            .collect();
        let task = PairwiseTask::new(
            seqs.iter()
                .enumerate()
                .map(|(i, (a, p))| Example {
                    id: i as u64,
                    anchor: a,
                    positive: p,
                    group: 0,
                })
                .collect(),
        );
        let mut improved = 0;
        for seed in 0..5 {
            let cfg = TrainConfig {
                embedding_dim: 6,
                encoder_out_dim: 8,
                margin: 0.5,
                learning_rate: 0.01,
                batch_size: task.len(),
                subset_size: task.len(),
                generator_mode: GeneratorMode::Untied,
                seed,
                ..TrainConfig::default()
            };
            let mut disc = QCModel::new(cfg.dims(16, 16), &mut stream_rng(seed, STREAM_INIT)).unwrap();
            let frozen = disc.clone();
            let mut generator = Generator::from_discriminator(&disc, cfg.generator_mode);
            let before = expected_loss(&frozen, generator.params(&frozen), &task, &cfg);
            let mut disc_opt = Optimizer::new(crate::optim::OptimizerSettings {
                learning_rate: 0.0,
                l2: 0.0,
                ..cfg.optimizer_settings()
            });
            let mut gen_opt = Optimizer::new(cfg.optimizer_settings());
            let mut baseline = None;
            let mut rng = stream_rng(seed, STREAM_TRAIN);
            for step in 0..100 {
                let negatives = Negatives::Adversarial {
                    generator: &mut generator,
                    optimizer: &mut gen_opt,
                    baseline: &mut baseline,
                };
                run_epoch(&mut disc, negatives, &task, None, &cfg, &mut disc_opt, &mut rng, step, &mut Vec::new())
                    .unwrap();
            }
            assert_eq!(disc, frozen);
            let after = expected_loss(&frozen, generator.params(&frozen), &task, &cfg);
            improved += usize::from(after > before);
        }
        // one-sided sign test: 5/5 improvements has p = 1/32
        let p_value = (improved..=5).map(|k| statrs::function::factorial::binomial(5, k as u64)).sum::<f64>() / 32.0;
        assert!(p_value < 0.05, "{improved}/5 seeds improved, p = {p_value}");
    }
}
