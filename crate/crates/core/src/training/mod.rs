//! Training loops: supervised pretraining of both matchers, the regularized adversarial loop,
//! its mirror on the question-question side, and the multi-task baseline.
//!
//! Every loop draws its randomness from a ChaCha8 stream derived from `TrainConfig::seed`, so two
//! runs with the same inputs produce identical histories.

mod config;
mod epoch;
mod mtl;
mod steps;

use std::collections::HashMap;

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use config::{Ablation, QdUpdate, TrainConfig};
pub use epoch::{EpochStats, Example, Negatives, PairwiseTask, Trainable};
pub use mtl::train_mtl_dcs;
pub use steps::{batch_hinge_loss, scores_backward, triplet_step, GradTargets, Towers, TripletOutcome};

use crate::corpus::{EncodedQc, EncodedQd, EvalPool};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, EvalReport, QcPoolScorer, QdPoolScorer};
use crate::model::{
    cosine, init_qd_from_qc, EncoderParams, Generator, GeneratorModel, ModelDims, QCModel, QDModel, QdGenerator,
};
use crate::objectives::{normalize_relevance, qd_weight, RegWeights};
use crate::optim::Optimizer;
use epoch::run_epoch;

const STREAM_INIT: u64 = 0;
const STREAM_TRAIN: u64 = 1;
const STREAM_QD_SIDE: u64 = 2;

pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Dev-set metrics and training statistics for one completed epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub dev_map: f64,
    pub dev_ndcg: f64,
    /// Mean applied (weighted) loss over the epoch's examples.
    pub train_loss: f64,
    pub mean_weight: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.records
            .iter()
            .fold(None, |best: Option<&EpochRecord>, r| match best {
                Some(b) if b.dev_map >= r.dev_map => Some(b),
                _ => Some(r),
            })
    }
}

/// One training example's negative, its weight and raw loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleRecord {
    pub epoch: usize,
    pub query_id: u64,
    /// Id of the example whose positive was used as the negative.
    pub chosen_id: u64,
    pub weight: f64,
    pub loss: f64,
    /// Sampler log-probability; `None` for uniform negatives.
    pub log_prob: Option<f64>,
}

/// QC training data: the train split and the dev split with its fixed pools.
#[derive(Debug, Clone, Copy)]
pub struct QcData<'a> {
    pub train: &'a [EncodedQc],
    pub dev: &'a [EncodedQc],
    pub dev_pools: &'a [EvalPool],
}

/// QD training data. Empty `dev_pools` disables early stopping for QD-only training.
#[derive(Debug, Clone, Copy)]
pub struct QdData<'a> {
    pub train: &'a [EncodedQd],
    pub dev: &'a [EncodedQd],
    pub dev_pools: &'a [EvalPool],
}

#[derive(Debug, Clone)]
pub struct AdversarialRun {
    pub qc: QCModel,
    pub generator: GeneratorModel,
    pub qd: QDModel,
    pub history: TrainHistory,
    /// Populated only when `record_samples` is set.
    pub samples: Vec<SampleRecord>,
}

#[derive(Debug, Clone)]
pub struct QdAdversarialRun {
    pub qd: QDModel,
    pub generator: QdGenerator,
    pub history: TrainHistory,
    pub samples: Vec<SampleRecord>,
}

type Evaluator<'e, S> = &'e dyn Fn(&S) -> Result<EvalReport>;

/// Runs up to `max_epochs` epochs, evaluating after each and keeping the state with the highest
/// dev MAP. Stops after `patience` epochs without a strict improvement. With no epochs the
/// initial state is returned.
pub(crate) fn fit<S: Clone>(
    mut state: S,
    cfg: &TrainConfig,
    label: &str,
    mut run: impl FnMut(&mut S, usize) -> Result<EpochStats>,
    eval: Option<Evaluator<'_, S>>,
) -> Result<(S, TrainHistory)> {
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, S)> = None;
    let mut stale = 0;
    for epoch in 1..=cfg.max_epochs {
        let stats = run(&mut state, epoch)?;
        let (map, ndcg) = match eval {
            Some(eval) => {
                let r = eval(&state)?;
                (r.map, r.ndcg)
            }
            None => (0.0, 0.0),
        };
        info!(
            "{label} epoch {epoch}: loss {:.5} weight {:.4} dev MAP {map:.4} nDCG {ndcg:.4}",
            stats.mean_loss, stats.mean_weight
        );
        history.records.push(EpochRecord {
            epoch,
            dev_map: map,
            dev_ndcg: ndcg,
            train_loss: stats.mean_loss,
            mean_weight: stats.mean_weight,
        });
        if eval.is_none() {
            continue;
        }
        if best.as_ref().is_none_or(|(m, _)| map > *m) {
            best = Some((map, state.clone()));
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                info!("{label}: no dev improvement for {stale} epochs, stopping");
                break;
            }
        }
    }
    Ok((best.map(|(_, s)| s).unwrap_or(state), history))
}

fn qc_task(train: &[EncodedQc]) -> PairwiseTask<'_> {
    PairwiseTask::new(
        train
            .iter()
            .map(|p| Example {
                id: p.id,
                anchor: &p.question,
                positive: &p.code,
                group: 0,
            })
            .collect(),
    )
}

/// Both orientations of every duplicate pair; negatives are drawn within an orientation.
fn qd_task(train: &[EncodedQd]) -> PairwiseTask<'_> {
    let forward = train.iter().map(|p| Example {
        id: p.id,
        anchor: &p.question_a,
        positive: &p.question_b,
        group: 0,
    });
    let backward = train.iter().map(|p| Example {
        id: p.id,
        anchor: &p.question_b,
        positive: &p.question_a,
        group: 1,
    });
    PairwiseTask::new(forward.chain(backward).collect())
}

fn qc_eval<'a>(data: QcData<'a>) -> impl Fn(&QCModel) -> Result<EvalReport> + 'a {
    move |m| evaluate(&QcPoolScorer::new(m, data.dev)?, data.dev_pools)
}

fn qd_eval<'a>(data: QdData<'a>) -> impl Fn(&QDModel) -> Result<EvalReport> + 'a {
    move |m| evaluate(&QdPoolScorer::new(m, data.dev)?, data.dev_pools)
}

fn check_nonempty(what: &str, n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::InvalidInput(format!("{what} needs at least 2 examples, got {n}")));
    }
    Ok(())
}

/// Supervised QC pretraining from a fresh initialization, one uniform negative per example.
pub fn pretrain_qc(data: QcData<'_>, dims: ModelDims, cfg: &TrainConfig) -> Result<(QCModel, TrainHistory)> {
    let model = QCModel::new(dims, &mut stream_rng(cfg.seed, STREAM_INIT))?;
    pretrain_qc_from(model, data, cfg)
}

/// Supervised QC training starting from `model`.
pub fn pretrain_qc_from(model: QCModel, data: QcData<'_>, cfg: &TrainConfig) -> Result<(QCModel, TrainHistory)> {
    cfg.validate()?;
    check_nonempty("QC training", data.train.len())?;
    let task = qc_task(data.train);
    let mut opt = Optimizer::new(cfg.optimizer_settings());
    let mut rng = stream_rng(cfg.seed, STREAM_TRAIN);
    let mut sink = Vec::new();
    let eval = qc_eval(data);
    fit(
        model,
        cfg,
        "pretrain-qc",
        |m, epoch| {
            sink.clear();
            run_epoch(m, Negatives::Uniform, &task, None, cfg, &mut opt, &mut rng, epoch, &mut sink)
        },
        Some(&eval),
    )
}

/// Relevance weights for one epoch. `weight(i, j)` compares example `i`'s anchor vector with
/// the vector standing for example `j`'s positive when it is used as a negative; negatives
/// with no such vector get weight 1.
struct WeightTable {
    anchors: Vec<Vec<f64>>,
    negatives: Vec<Option<Vec<f64>>>,
    reg: RegWeights,
}

impl WeightTable {
    fn weight(&self, i: usize, j: usize) -> Result<f64> {
        match &self.negatives[j] {
            Some(v) => qd_weight(normalize_relevance(cosine(&self.anchors[i], v)?), self.reg),
            None => Ok(1.0),
        }
    }
}

fn encode_par(encoder: &EncoderParams, seqs: Vec<&[usize]>) -> Result<Vec<Vec<f64>>> {
    seqs.into_par_iter().map(|s| encoder.encode(s)).collect()
}

/// QC-side weights: the QD model compares the query with the question paired with the sampled
/// snippet.
fn qc_weights(task: &PairwiseTask<'_>, qd: &QDModel, reg: RegWeights) -> Result<WeightTable> {
    let anchors = encode_par(&qd.question_encoder, task.examples.iter().map(|e| e.anchor).collect())?;
    let negatives = anchors.iter().cloned().map(Some).collect();
    Ok(WeightTable {
        anchors,
        negatives,
        reg,
    })
}

/// For each QD example, the index of the QC training pair whose question equals the example's
/// positive question.
fn code_lookup(task: &PairwiseTask<'_>, qc_train: &[EncodedQc]) -> Vec<Option<usize>> {
    let mut by_question: HashMap<&[usize], usize> = HashMap::new();
    for (i, p) in qc_train.iter().enumerate() {
        by_question.entry(&p.question[..]).or_insert(i);
    }
    task.examples
        .iter()
        .map(|e| by_question.get(e.positive).copied())
        .collect()
}

/// QD-side weights: the QC model compares the query with the code paired with the sampled
/// question.
fn qd_weights(
    task: &PairwiseTask<'_>,
    lookup: &[Option<usize>],
    qc_train: &[EncodedQc],
    qc: &QCModel,
    reg: RegWeights,
) -> Result<WeightTable> {
    let anchors = encode_par(&qc.question_encoder, task.examples.iter().map(|e| e.anchor).collect())?;
    let negatives = lookup
        .par_iter()
        .map(|c| c.map(|c| qc.code_encoder.encode(&qc_train[c].code)).transpose())
        .collect::<Result<Vec<_>>>()?;
    Ok(WeightTable {
        anchors,
        negatives,
        reg,
    })
}

/// Persistent state of a training loop over one pairwise task.
struct Side<'a> {
    task: PairwiseTask<'a>,
    opt: Optimizer,
    gen_opt: Optimizer,
    baseline: Option<f64>,
    rng: ChaCha8Rng,
}

impl<'a> Side<'a> {
    fn new(task: PairwiseTask<'a>, cfg: &TrainConfig, stream: u64) -> Self {
        Self {
            task,
            opt: Optimizer::new(cfg.optimizer_settings()),
            gen_opt: Optimizer::new(cfg.optimizer_settings()),
            baseline: None,
            rng: stream_rng(cfg.seed, stream),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn epoch<M: Trainable>(
        &mut self,
        model: &mut M,
        generator: Option<&mut Generator<M>>,
        weights: Option<&WeightTable>,
        cfg: &TrainConfig,
        epoch: usize,
        samples: &mut Vec<SampleRecord>,
    ) -> Result<EpochStats> {
        let negatives = match generator {
            Some(generator) => Negatives::Adversarial {
                generator,
                optimizer: &mut self.gen_opt,
                baseline: &mut self.baseline,
            },
            None => Negatives::Uniform,
        };
        let weigher = weights.map(|t| move |i: usize, j: usize| t.weight(i, j));
        let weigher: Option<&dyn Fn(usize, usize) -> Result<f64>> = weigher.as_ref().map(|f| f as _);
        run_epoch(
            model,
            negatives,
            &self.task,
            weigher,
            cfg,
            &mut self.opt,
            &mut self.rng,
            epoch,
            samples,
        )
    }
}

fn sample_sink(cfg: &TrainConfig, samples: &mut Vec<SampleRecord>) {
    if !cfg.record_samples {
        samples.clear();
    }
}

/// QD pretraining: the Siamese encoder starts as a copy of `qc`'s question encoder. An empty
/// training split returns that copy untrained.
pub fn pretrain_qd(data: QdData<'_>, qc: &QCModel, cfg: &TrainConfig) -> Result<(QDModel, TrainHistory)> {
    cfg.validate()?;
    let qd = init_qd_from_qc(qc);
    if data.train.is_empty() {
        warn!("no QD training pairs; using the QC question encoder as the QD model");
        return Ok((qd, TrainHistory::default()));
    }
    check_nonempty("QD training", data.train.len())?;
    let mut side = Side::new(qd_task(data.train), cfg, STREAM_TRAIN);
    let mut sink = Vec::new();
    let eval = qd_eval(data);
    if data.dev_pools.is_empty() {
        warn!("no QD dev pools; QD pretraining runs all {} epochs", cfg.max_epochs);
    }
    fit(
        qd,
        cfg,
        "pretrain-qd",
        |m, epoch| {
            sink.clear();
            side.epoch(m, None, None, cfg, epoch, &mut sink)
        },
        (!data.dev_pools.is_empty()).then_some(&eval as &dyn Fn(&QDModel) -> Result<EvalReport>),
    )
}

/// The regularized adversarial loop on the QC side. The generator starts as a copy of `qc`
/// (or is `qc` itself in tied mode). With `qd_update = "symmetric"` and QD training data, the
/// QD model is trained adversarially after each QC epoch, weighted by the current QC model.
pub fn train_adversarial(
    qc_data: QcData<'_>,
    qd_data: Option<QdData<'_>>,
    qc: QCModel,
    qd: QDModel,
    cfg: &TrainConfig,
) -> Result<AdversarialRun> {
    cfg.validate()?;
    check_nonempty("QC training", qc_data.train.len())?;
    let adversarial = cfg.ablation != Ablation::NoRrNoAs;
    let weighted = cfg.ablation == Ablation::Full;
    info!(
        "adversarial training: ablation {:?}, sampler = {}, generator {:?}",
        cfg.ablation,
        if adversarial { "adversarial" } else { "uniform" },
        cfg.generator_mode
    );
    let reg = cfg.reg_weights();

    let mut qc_side = Side::new(qc_task(qc_data.train), cfg, STREAM_TRAIN);
    let qd_train = qd_data.map(|d| d.train).unwrap_or_default();
    let symmetric = cfg.qd_update == QdUpdate::Symmetric && qd_train.len() >= 2;
    if cfg.qd_update == QdUpdate::Symmetric && !symmetric {
        warn!("symmetric QD update requested without QD training pairs; QD model stays frozen");
    }
    let mut qd_side = symmetric.then(|| Side::new(qd_task(qd_train), cfg, STREAM_QD_SIDE));
    let lookup = qd_side.as_ref().map(|s| code_lookup(&s.task, qc_data.train));

    let generator = Generator::from_discriminator(&qc, cfg.generator_mode);
    let qd_generator = Generator::from_discriminator(&qd, cfg.generator_mode);
    let mut samples = Vec::new();
    let mut qd_sink = Vec::new();
    let eval = qc_eval(qc_data);
    let eval_state = |s: &(QCModel, GeneratorModel, QDModel, QdGenerator)| eval(&s.0);

    let ((qc, generator, qd, _), history) = fit(
        (qc, generator, qd, qd_generator),
        cfg,
        "adversarial",
        |(qc, generator, qd, qd_generator), epoch| {
            sample_sink(cfg, &mut samples);
            let weights = if weighted {
                Some(qc_weights(&qc_side.task, qd, reg)?)
            } else {
                None
            };
            let stats = qc_side.epoch(
                qc,
                adversarial.then_some(generator),
                weights.as_ref(),
                cfg,
                epoch,
                &mut samples,
            )?;
            if let (Some(side), Some(lookup)) = (qd_side.as_mut(), lookup.as_ref()) {
                for _ in 0..cfg.qd_epochs_per_qc_epoch {
                    qd_sink.clear();
                    let weights = if weighted {
                        Some(qd_weights(&side.task, lookup, qc_data.train, qc, reg)?)
                    } else {
                        None
                    };
                    side.epoch(
                        qd,
                        adversarial.then_some(&mut *qd_generator),
                        weights.as_ref(),
                        cfg,
                        epoch,
                        &mut qd_sink,
                    )?;
                }
            }
            Ok(stats)
        },
        Some(&eval_state),
    )?;
    sample_sink(cfg, &mut samples);
    Ok(AdversarialRun {
        qc,
        generator,
        qd,
        history,
        samples,
    })
}

/// The adversarial loop on the QD side: negatives are questions from other duplicate pairs,
/// and each is weighted by the QC model's score between the query and the code paired with the
/// sampled question in `qc_train` (weight 1 when the question has no code there).
pub fn train_qd_adversarial(
    data: QdData<'_>,
    qc_train: &[EncodedQc],
    qc: &QCModel,
    qd: QDModel,
    cfg: &TrainConfig,
) -> Result<QdAdversarialRun> {
    cfg.validate()?;
    check_nonempty("QD training", data.train.len())?;
    let adversarial = cfg.ablation != Ablation::NoRrNoAs;
    let weighted = cfg.ablation == Ablation::Full;
    info!(
        "QD adversarial training: ablation {:?}, sampler = {}",
        cfg.ablation,
        if adversarial { "adversarial" } else { "uniform" }
    );
    let mut side = Side::new(qd_task(data.train), cfg, STREAM_TRAIN);
    let weights = if weighted {
        let lookup = code_lookup(&side.task, qc_train);
        let found = lookup.iter().filter(|c| c.is_some()).count();
        if found < lookup.len() {
            warn!("{} of {} QD questions have no paired code; their weight is 1", lookup.len() - found, lookup.len());
        }
        Some(qd_weights(&side.task, &lookup, qc_train, qc, cfg.reg_weights())?)
    } else {
        None
    };
    let generator = Generator::from_discriminator(&qd, cfg.generator_mode);
    let mut samples = Vec::new();
    let eval = qd_eval(data);
    let eval_state = |s: &(QDModel, QdGenerator)| eval(&s.0);
    if data.dev_pools.is_empty() {
        warn!("no QD dev pools; QD training runs all {} epochs", cfg.max_epochs);
    }
    let ((qd, generator), history) = fit(
        (qd, generator),
        cfg,
        "qd-adversarial",
        |(qd, generator), epoch| {
            sample_sink(cfg, &mut samples);
            side.epoch(qd, adversarial.then_some(generator), weights.as_ref(), cfg, epoch, &mut samples)
        },
        (!data.dev_pools.is_empty())
            .then_some(&eval_state as &dyn Fn(&(QDModel, QdGenerator)) -> Result<EvalReport>),
    )?;
    sample_sink(cfg, &mut samples);
    Ok(QdAdversarialRun {
        qd,
        generator,
        history,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::build_eval_pools;
    use crate::model::{GeneratorMode, Parameters};

    /// Ten pairs with disjoint question and code tokens; dev is the training set itself.
    fn toy() -> (Vec<EncodedQc>, Vec<EvalPool>, Vec<EncodedQd>) {
        let qc: Vec<EncodedQc> = (0..10)
            .map(|i| EncodedQc {
                id: i as u64,
                question: vec![2 + 2 * i, 3 + 2 * i],
                code: vec![2 + 3 * i, 3 + 3 * i, 4 + 3 * i],
            })
            .collect();
        let pools = build_eval_pools(&qc, 9, 1).unwrap();
        let qd = (0..10)
            .map(|i| EncodedQd {
                id: i as u64,
                question_a: vec![2 + 2 * i],
                question_b: vec![3 + 2 * i],
            })
            .collect();
        (qc, pools, qd)
    }

    fn cfg() -> TrainConfig {
        TrainConfig {
            embedding_dim: 6,
            encoder_out_dim: 8,
            learning_rate: 0.01,
            batch_size: 4,
            max_epochs: 3,
            subset_size: 5,
            seed: 11,
            ..TrainConfig::default()
        }
    }

    fn dims() -> ModelDims {
        cfg().dims(22, 32)
    }

    fn qd_pools(qd: &[EncodedQd]) -> Vec<EvalPool> {
        build_eval_pools(qd, 9, 2).unwrap()
    }

    #[test]
    fn pretraining_is_deterministic() {
        let (qc, pools, _) = toy();
        let data = QcData {
            train: &qc,
            dev: &qc,
            dev_pools: &pools,
        };
        let a = pretrain_qc(data, dims(), &cfg()).unwrap();
        let b = pretrain_qc(data, dims(), &cfg()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.1.records.len(), 3);
    }

    #[test]
    fn zero_epochs_returns_the_initialization() {
        let (qc, pools, _) = toy();
        let data = QcData {
            train: &qc,
            dev: &qc,
            dev_pools: &pools,
        };
        let c = TrainConfig { max_epochs: 0, ..cfg() };
        let (model, history) = pretrain_qc(data, dims(), &c).unwrap();
        assert!(history.records.is_empty());
        assert_eq!(model, QCModel::new(dims(), &mut stream_rng(c.seed, STREAM_INIT)).unwrap());
    }

    #[test]
    fn retained_model_has_the_best_dev_map() {
        let (qc, pools, _) = toy();
        let data = QcData {
            train: &qc,
            dev: &qc,
            dev_pools: &pools,
        };
        let c = TrainConfig { max_epochs: 6, ..cfg() };
        let (model, history) = pretrain_qc(data, dims(), &c).unwrap();
        let best = history.records.iter().map(|r| r.dev_map).fold(f64::MIN, f64::max);
        let map = qc_eval(data)(&model).unwrap().map;
        assert_eq!(map, best);
        assert!(history.records.windows(2).all(|w| w[0].epoch < w[1].epoch));
    }

    #[test]
    fn empty_qd_split_returns_the_copy() {
        let (qc, pools, _) = toy();
        let model = QCModel::new(dims(), &mut stream_rng(0, 0)).unwrap();
        let data = QdData {
            train: &[],
            dev: &[],
            dev_pools: &[],
        };
        let (qd, history) = pretrain_qd(data, &model, &cfg()).unwrap();
        assert_eq!(qd.question_encoder, model.question_encoder);
        assert!(history.records.is_empty());
        let _ = (qc, pools);
    }

    fn adversarial(c: &TrainConfig) -> AdversarialRun {
        let (qc, pools, qd) = toy();
        let qdp = qd_pools(&qd);
        let qc_data = QcData {
            train: &qc,
            dev: &qc,
            dev_pools: &pools,
        };
        let qd_data = QdData {
            train: &qd,
            dev: &qd,
            dev_pools: &qdp,
        };
        let model = QCModel::new(dims(), &mut stream_rng(5, 0)).unwrap();
        let qd_model = init_qd_from_qc(&model);
        train_adversarial(qc_data, Some(qd_data), model, qd_model, c).unwrap()
    }

    #[test]
    fn tied_generator_is_the_discriminator() {
        let run = adversarial(&TrainConfig {
            generator_mode: GeneratorMode::Tied,
            ..cfg()
        });
        let mut generator = run.generator.clone();
        assert!(generator.own_params_mut().is_none());
        assert!(std::ptr::eq(run.generator.params(&run.qc), &run.qc));
    }

    #[test]
    fn untied_generator_moves_away_from_the_discriminator() {
        let run = adversarial(&cfg());
        assert_ne!(run.generator.params(&run.qc), &run.qc);
    }

    #[test]
    fn no_rr_weights_are_exactly_one() {
        let run = adversarial(&TrainConfig {
            ablation: Ablation::NoRr,
            record_samples: true,
            ..cfg()
        });
        assert!(run.history.records.iter().all(|r| r.mean_weight == 1.0));
        assert!(run.samples.iter().all(|s| s.weight == 1.0 && s.log_prob.is_some()));
    }

    #[test]
    fn uniform_ablation_logs_no_sampler_probabilities() {
        let run = adversarial(&TrainConfig {
            ablation: Ablation::NoRrNoAs,
            record_samples: true,
            ..cfg()
        });
        assert!(!run.samples.is_empty());
        assert!(run.samples.iter().all(|s| s.log_prob.is_none() && s.weight == 1.0));
    }

    #[test]
    fn applied_loss_is_bounded_by_raw_loss() {
        let run = adversarial(&TrainConfig {
            record_samples: true,
            margin: 0.5,
            ..cfg()
        });
        assert_eq!(run.samples.len(), 3 * 10);
        for s in &run.samples {
            assert!((0.0..=1.0).contains(&s.weight));
            let applied = s.weight * s.loss;
            assert!(0.0 <= applied && applied <= s.loss);
            assert_ne!(s.query_id, s.chosen_id);
        }
        assert!(run.samples.iter().any(|s| s.weight < 1.0));
    }

    #[test]
    fn samples_are_dropped_unless_requested() {
        assert!(adversarial(&cfg()).samples.is_empty());
    }

    #[test]
    fn adversarial_runs_are_reproducible() {
        let a = adversarial(&cfg());
        let b = adversarial(&cfg());
        assert_eq!(a.history, b.history);
        assert_eq!(a.qc, b.qc);
        assert_eq!(a.qd, b.qd);
    }

    #[test]
    fn frozen_qd_is_untouched() {
        let run = adversarial(&TrainConfig {
            qd_update: QdUpdate::Frozen,
            ..cfg()
        });
        let model = QCModel::new(dims(), &mut stream_rng(5, 0)).unwrap();
        assert_eq!(run.qd, init_qd_from_qc(&model));
    }

    #[test]
    fn qd_side_without_rr_or_as_is_plain_qd_training() {
        let (qc, _, qd) = toy();
        let qdp = qd_pools(&qd);
        let data = QdData {
            train: &qd,
            dev: &qd,
            dev_pools: &qdp,
        };
        let model = QCModel::new(dims(), &mut stream_rng(5, 0)).unwrap();
        let (plain, plain_history) = pretrain_qd(data, &model, &cfg()).unwrap();
        let c = TrainConfig {
            ablation: Ablation::NoRrNoAs,
            ..cfg()
        };
        let run = train_qd_adversarial(data, &qc, &model, init_qd_from_qc(&model), &c).unwrap();
        assert_eq!(run.qd, plain);
        assert_eq!(run.history, plain_history);
    }

    #[test]
    fn qd_adversarial_weights_stay_in_unit_interval() {
        let (qc, _, qd) = toy();
        // the toy's QD questions are single tokens of the QC questions, so most lack a code
        let mut qd = qd;
        qd[0].question_b = qc[1].question.clone();
        let qdp = qd_pools(&qd);
        let data = QdData {
            train: &qd,
            dev: &qd,
            dev_pools: &qdp,
        };
        let model = QCModel::new(dims(), &mut stream_rng(5, 0)).unwrap();
        let c = TrainConfig {
            record_samples: true,
            ..cfg()
        };
        let run = train_qd_adversarial(data, &qc, &model, init_qd_from_qc(&model), &c).unwrap();
        assert!(run.samples.iter().all(|s| (0.0..=1.0).contains(&s.weight)));
        assert!(run.samples.iter().any(|s| s.weight < 1.0));
        assert!(run.qd.all_finite());
    }

    #[test]
    fn mtl_without_qd_data_is_qc_pretraining() {
        let (qc, pools, _) = toy();
        let data = QcData {
            train: &qc,
            dev: &qc,
            dev_pools: &pools,
        };
        assert_eq!(
            train_mtl_dcs(data, &[], dims(), &cfg()).unwrap(),
            pretrain_qc(data, dims(), &cfg()).unwrap()
        );
    }

    #[test]
    fn divergence_is_reported() {
        let (qc, pools, _) = toy();
        let data = QcData {
            train: &qc,
            dev: &qc,
            dev_pools: &pools,
        };
        let mut model = QCModel::new(dims(), &mut stream_rng(0, 0)).unwrap();
        model.code_encoder.embedding.data[2 * 6] = f64::NAN;
        let err = pretrain_qc_from(model, data, &cfg()).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }), "{err}");
    }

    #[test]
    fn too_few_examples_is_an_error() {
        let (qc, pools, _) = toy();
        let data = QcData {
            train: &qc[..1],
            dev: &qc,
            dev_pools: &pools,
        };
        assert!(pretrain_qc(data, dims(), &cfg()).is_err());
    }
}
