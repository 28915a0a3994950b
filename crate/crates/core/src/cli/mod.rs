//! The `advcode` command-line driver: `prepare`, `train` and `eval`.
//!
//! A prepared data directory holds the split files, pool files, `vocab.json` and a manifest.
//! Training and evaluation read from it; every command writes a `manifest.json` next to its
//! outputs. Exit codes: 0 on success, 1 on a runtime failure, 2 on a usage or config error.

mod manifest;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde::Serialize;

pub use manifest::{FileDigest, RunManifest};

use crate::corpus::{
    load_pools, load_qc, load_qd, prepare_corpus, write_pools, write_qc, write_qd, EncodedQc, EncodedQd, EvalPool,
    PrepareOptions, SyntheticCorpus, SyntheticSpec, Vocabulary,
};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, export_curves, QcPoolScorer, QdPoolScorer};
use crate::model::{Checkpoint, GeneratorMode, ModelKind, ModelPayload, QCModel, QDModel};
use crate::training::{
    pretrain_qc, pretrain_qd, train_adversarial, train_mtl_dcs, train_qd_adversarial, Ablation, QcData, QdData,
    QdUpdate, TrainConfig, TrainHistory,
};

#[derive(Debug, Parser)]
#[command(name = "advcode", version, about = "Adversarial code retrieval training")]
pub struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Split a corpus, build the vocabulary and the fixed evaluation pools.
    Prepare(PrepareArgs),
    /// Train a model on a prepared data directory.
    Train(TrainArgs),
    /// Evaluate a checkpoint on fixed pools.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("source").required(true).args(["data", "synthetic"])))]
pub struct PrepareArgs {
    /// Directory with `qc.jsonl` and optionally `qd.jsonl`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Generate a synthetic corpus with K intents of M items each.
    #[arg(long, num_args = 2, value_names = ["K", "M"])]
    pub synthetic: Option<Vec<usize>>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = crate::corpus::POOL_NEGATIVES)]
    pub pool_negatives: usize,
    /// Config file; only the vocabulary settings are used here.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    PretrainQc,
    PretrainQd,
    Adv,
    AdvNoRr,
    AdvNoAs,
    MtlDcs,
    QdAdv,
}

impl Mode {
    fn name(self) -> &'static str {
        match self {
            Mode::PretrainQc => "pretrain-qc",
            Mode::PretrainQd => "pretrain-qd",
            Mode::Adv => "adv",
            Mode::AdvNoRr => "adv-no-rr",
            Mode::AdvNoAs => "adv-no-as",
            Mode::MtlDcs => "mtl-dcs",
            Mode::QdAdv => "qd-adv",
        }
    }

    fn ablation(self) -> Option<Ablation> {
        match self {
            Mode::Adv => Some(Ablation::Full),
            Mode::AdvNoRr => Some(Ablation::NoRr),
            Mode::AdvNoAs => Some(Ablation::NoRrNoAs),
            _ => None,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub mode: Mode,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Prepared data directory.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Pretrained QC model; trained inline when absent and needed.
    #[arg(long)]
    pub qc_checkpoint: Option<PathBuf>,
    /// Pretrained QD model; trained inline when absent and needed.
    #[arg(long)]
    pub qd_checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Task {
    Qc,
    Qd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitName {
    Dev,
    Test,
}

impl SplitName {
    fn as_str(self) -> &'static str {
        match self {
            SplitName::Dev => "dev",
            SplitName::Test => "test",
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Prepared data directory.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = Task::Qc)]
    pub task: Task,
    #[arg(long, value_enum, default_value_t = SplitName::Test)]
    pub split: SplitName,
    /// Pool file; defaults to the data directory's pools for the task and split.
    #[arg(long)]
    pub pools: Option<PathBuf>,
    /// Report CSV path; defaults to `eval_<task>_<split>.csv` next to the checkpoint.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Process exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 2,
        _ => 1,
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Prepare(a) => cmd_prepare(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a).map(|_| ()),
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn split_file(dir: &Path, task: &str, split: &str) -> PathBuf {
    dir.join(format!("{task}_{split}.jsonl"))
}

fn pool_file(dir: &Path, task: &str, split: &str) -> PathBuf {
    dir.join(format!("pools_{task}_{split}.jsonl"))
}

#[derive(Serialize)]
struct Labels<'a> {
    intent_of: &'a BTreeMap<u64, usize>,
}

pub fn cmd_prepare(args: &PrepareArgs) -> Result<()> {
    let cfg = match &args.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if args.pool_negatives == 0 {
        return Err(Error::Config("--pool-negatives must be positive".into()));
    }
    create_dir(&args.out)?;
    let mut inputs = Vec::new();
    let mut written = Vec::new();
    let (qc, qd) = match (&args.data, &args.synthetic) {
        (Some(dir), _) => {
            let qc_path = dir.join("qc.jsonl");
            let qd_path = dir.join("qd.jsonl");
            let qc = load_qc(&qc_path)?;
            inputs.push(qc_path);
            let qd = if qd_path.exists() {
                inputs.push(qd_path.clone());
                load_qd(&qd_path)?
            } else {
                info!("no qd.jsonl in {}; preparing QC data only", dir.display());
                Vec::new()
            };
            (qc, qd)
        }
        (None, Some(km)) => {
            let corpus = SyntheticCorpus::generate(SyntheticSpec {
                intents: km[0],
                per_intent: km[1],
                seed: args.seed,
            })?;
            let labels = args.out.join("labels.json");
            let text = serde_json::to_string_pretty(&Labels {
                intent_of: &corpus.intent_of,
            })
            .map_err(|e| Error::Serde(e.to_string()))?;
            fs::write(&labels, text + "\n").map_err(|e| Error::io(&labels, e))?;
            written.push(labels);
            (corpus.qc, corpus.qd)
        }
        (None, None) => return Err(Error::Config("one of --data or --synthetic is required".into())),
    };

    let prepared = prepare_corpus(
        &qc,
        &qd,
        PrepareOptions {
            seed: args.seed,
            pool_negatives: args.pool_negatives,
            min_freq: cfg.min_freq,
            max_vocab: cfg.max_vocab,
        },
    )?;
    let out = &args.out;
    for (split, items) in [
        ("train", &prepared.qc.train),
        ("dev", &prepared.qc.dev),
        ("test", &prepared.qc.test),
    ] {
        let p = split_file(out, "qc", split);
        write_qc(&p, items)?;
        written.push(p);
    }
    for (split, pools) in [("dev", &prepared.qc_pools.dev), ("test", &prepared.qc_pools.test)] {
        let p = pool_file(out, "qc", split);
        write_pools(&p, pools)?;
        written.push(p);
    }
    if let (Some(qd), Some(pools)) = (&prepared.qd, &prepared.qd_pools) {
        for (split, items) in [("train", &qd.train), ("dev", &qd.dev), ("test", &qd.test)] {
            let p = split_file(out, "qd", split);
            write_qd(&p, items)?;
            written.push(p);
        }
        for (split, pools) in [("dev", &pools.dev), ("test", &pools.test)] {
            let p = pool_file(out, "qd", split);
            write_pools(&p, pools)?;
            written.push(p);
        }
    }
    let vocab_path = out.join("vocab.json");
    prepared.vocab.save(&vocab_path)?;
    written.push(vocab_path);

    let mut manifest = RunManifest::new("prepare", None, args.seed, None);
    let base = args.data.clone().unwrap_or_default();
    manifest.add_inputs(&inputs, &base)?;
    manifest.add_artifacts(&written, out)?;
    manifest.write(&out.join("manifest.json"))?;
    info!(
        "prepared {} QC pairs ({}/{}/{}) into {}",
        qc.len(),
        prepared.qc.train.len(),
        prepared.qc.dev.len(),
        prepared.qc.test.len(),
        out.display()
    );
    Ok(())
}

/// Encoded contents of a prepared directory.
struct Prepared {
    vocab: Vocabulary,
    qc_train: Vec<EncodedQc>,
    qc_dev: Vec<EncodedQc>,
    qc_dev_pools: Vec<EvalPool>,
    qd_train: Vec<EncodedQd>,
    qd_dev: Vec<EncodedQd>,
    qd_dev_pools: Vec<EvalPool>,
    inputs: Vec<PathBuf>,
}

impl Prepared {
    fn load(dir: &Path, cfg: &TrainConfig) -> Result<Self> {
        let limits = cfg.limits();
        let vocab_path = dir.join("vocab.json");
        let vocab = Vocabulary::load(&vocab_path)?;
        let mut inputs = vec![vocab_path];
        let mut qc = |split: &str| -> Result<Vec<EncodedQc>> {
            let p = split_file(dir, "qc", split);
            let pairs = load_qc(&p)?;
            inputs.push(p);
            Ok(vocab.encode_qc(&pairs, limits))
        };
        let qc_train = qc("train")?;
        let qc_dev = qc("dev")?;
        let p = pool_file(dir, "qc", "dev");
        let qc_dev_pools = load_pools(&p)?;
        inputs.push(p);

        let (mut qd_train, mut qd_dev, mut qd_dev_pools) = (Vec::new(), Vec::new(), Vec::new());
        if split_file(dir, "qd", "train").exists() {
            for (split, dst) in [("train", &mut qd_train), ("dev", &mut qd_dev)] {
                let p = split_file(dir, "qd", split);
                *dst = vocab.encode_qd(&load_qd(&p)?, limits);
                inputs.push(p);
            }
            let p = pool_file(dir, "qd", "dev");
            qd_dev_pools = load_pools(&p)?;
            inputs.push(p);
        }
        Ok(Self {
            vocab,
            qc_train,
            qc_dev,
            qc_dev_pools,
            qd_train,
            qd_dev,
            qd_dev_pools,
            inputs,
        })
    }

    fn qc(&self) -> QcData<'_> {
        QcData {
            train: &self.qc_train,
            dev: &self.qc_dev,
            dev_pools: &self.qc_dev_pools,
        }
    }

    fn qd(&self) -> QdData<'_> {
        QdData {
            train: &self.qd_train,
            dev: &self.qd_dev,
            dev_pools: &self.qd_dev_pools,
        }
    }
}

/// Collects a training run's outputs and their digests.
struct Outputs<'a> {
    dir: &'a Path,
    vocab: &'a Vocabulary,
    cfg: &'a TrainConfig,
    written: Vec<PathBuf>,
}

impl Outputs<'_> {
    fn checkpoint(&mut self, name: &str, kind: ModelKind, payload: ModelPayload) -> Result<()> {
        let p = self.dir.join(name);
        Checkpoint::new(kind, self.vocab, self.cfg, payload).save(&p)?;
        self.written.push(p);
        Ok(())
    }

    fn history(&mut self, name: &str, history: &TrainHistory) -> Result<()> {
        if history.records.is_empty() {
            return Ok(());
        }
        let p = self.dir.join(name);
        export_curves(history, &p)?;
        self.written.push(p);
        Ok(())
    }
}

fn load_checkpoint(path: &Path, vocab: &Vocabulary, inputs: &mut Vec<PathBuf>) -> Result<Checkpoint> {
    let ckpt = Checkpoint::load(path)?;
    ckpt.verify_vocab(vocab)?;
    inputs.push(path.to_path_buf());
    Ok(ckpt)
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(ablation) = args.mode.ablation() {
        if args.config.is_some() && cfg.ablation != ablation && cfg.ablation != Ablation::default() {
            warn!("mode {} overrides ablation {:?} from the config", args.mode.name(), cfg.ablation);
        }
        cfg.ablation = ablation;
    }
    cfg.validate()?;
    create_dir(&args.out)?;

    let data = Prepared::load(&args.data, &cfg)?;
    let mut inputs = data.inputs.clone();
    let dims = cfg.dims(data.vocab.nl.len(), data.vocab.code.len());
    let mut out = Outputs {
        dir: &args.out,
        vocab: &data.vocab,
        cfg: &cfg,
        written: Vec::new(),
    };

    let needs_qc = !matches!(args.mode, Mode::PretrainQc | Mode::MtlDcs);
    let needs_qd = matches!(args.mode, Mode::Adv | Mode::AdvNoRr | Mode::AdvNoAs | Mode::QdAdv);
    let mut qc: Option<QCModel> = None;
    if needs_qc {
        qc = Some(match &args.qc_checkpoint {
            Some(p) => load_checkpoint(p, &data.vocab, &mut inputs)?.into_qc()?,
            None => {
                info!("no --qc-checkpoint; pretraining QC first");
                let (m, h) = pretrain_qc(data.qc(), dims, &cfg)?;
                out.history("pretrain_qc_history.csv", &h)?;
                m
            }
        });
    }
    let mut qd: Option<QDModel> = None;
    if needs_qd {
        let qc = qc.as_ref().expect("QC model is loaded when QD is needed");
        qd = Some(match &args.qd_checkpoint {
            Some(p) => load_checkpoint(p, &data.vocab, &mut inputs)?.into_qd()?,
            None => {
                info!("no --qd-checkpoint; pretraining QD first");
                let (m, h) = pretrain_qd(data.qd(), qc, &cfg)?;
                out.history("pretrain_qd_history.csv", &h)?;
                m
            }
        });
    }

    match args.mode {
        Mode::PretrainQc => {
            let (m, h) = pretrain_qc(data.qc(), dims, &cfg)?;
            out.checkpoint("qc.json", ModelKind::Qc, ModelPayload::Qc(m))?;
            out.history("history.csv", &h)?;
        }
        Mode::PretrainQd => {
            if data.qd_train.is_empty() {
                warn!("prepared data has no QD split");
            }
            let (m, h) = pretrain_qd(data.qd(), qc.as_ref().expect("loaded"), &cfg)?;
            out.checkpoint("qd.json", ModelKind::Qd, ModelPayload::Qd(m))?;
            out.history("history.csv", &h)?;
        }
        Mode::Adv | Mode::AdvNoRr | Mode::AdvNoAs => {
            let qd_data = (!data.qd_train.is_empty()).then(|| data.qd());
            let run = train_adversarial(
                data.qc(),
                qd_data,
                qc.take().expect("loaded"),
                qd.take().expect("loaded"),
                &cfg,
            )?;
            let generator = run.generator.params(&run.qc).clone();
            out.checkpoint("qc.json", ModelKind::Qc, ModelPayload::Qc(run.qc))?;
            if cfg.generator_mode == GeneratorMode::Untied && cfg.ablation != Ablation::NoRrNoAs {
                out.checkpoint("generator.json", ModelKind::Generator, ModelPayload::Qc(generator))?;
            }
            if cfg.qd_update == QdUpdate::Symmetric {
                out.checkpoint("qd.json", ModelKind::Qd, ModelPayload::Qd(run.qd))?;
            }
            out.history("history.csv", &run.history)?;
        }
        Mode::MtlDcs => {
            let (m, h) = train_mtl_dcs(data.qc(), &data.qd_train, dims, &cfg)?;
            out.checkpoint("qc.json", ModelKind::Qc, ModelPayload::Qc(m))?;
            out.history("history.csv", &h)?;
        }
        Mode::QdAdv => {
            let run = train_qd_adversarial(
                data.qd(),
                &data.qc_train,
                qc.as_ref().expect("loaded"),
                qd.take().expect("loaded"),
                &cfg,
            )?;
            out.checkpoint("qd.json", ModelKind::Qd, ModelPayload::Qd(run.qd))?;
            out.history("history.csv", &run.history)?;
        }
    }

    let mut manifest = RunManifest::new("train", Some(args.mode.name()), cfg.seed, Some(&cfg));
    manifest.add_inputs(&inputs, &args.data)?;
    manifest.add_artifacts(&out.written, &args.out)?;
    manifest.write(&args.out.join("manifest.json"))?;
    info!("wrote {} artifact(s) to {}", out.written.len(), args.out.display());
    Ok(())
}

/// Returns `(MAP, nDCG)` after printing them and writing the per-query report.
pub fn cmd_eval(args: &EvalArgs) -> Result<(f64, f64)> {
    let vocab_path = args.data.join("vocab.json");
    let vocab = Vocabulary::load(&vocab_path)?;
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    ckpt.verify_vocab(&vocab)?;
    let limits = ckpt.config.limits();
    let (task, split) = (
        match args.task {
            Task::Qc => "qc",
            Task::Qd => "qd",
        },
        args.split.as_str(),
    );
    let pools_path = args.pools.clone().unwrap_or_else(|| pool_file(&args.data, task, split));
    let pools = load_pools(&pools_path)?;
    let dataset = split_file(&args.data, task, split);
    let report = match args.task {
        Task::Qc => {
            let model = ckpt.into_qc()?;
            let items = vocab.encode_qc(&load_qc(&dataset)?, limits);
            evaluate(&QcPoolScorer::new(&model, &items)?, &pools)?
        }
        Task::Qd => {
            let model = ckpt.into_qd()?;
            let items = vocab.encode_qd(&load_qd(&dataset)?, limits);
            evaluate(&QdPoolScorer::new(&model, &items)?, &pools)?
        }
    };
    println!("MAP {:.4}  nDCG {:.4}", report.map, report.ndcg);
    let out = args.out.clone().unwrap_or_else(|| {
        args.checkpoint
            .parent()
            .unwrap_or(Path::new("."))
            .join(format!("eval_{task}_{split}.csv"))
    });
    report.write(&out)?;
    Ok((report.map, report.ndcg))
}
