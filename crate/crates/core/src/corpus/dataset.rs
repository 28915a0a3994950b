//! In-memory preparation: splits, vocabulary and evaluation pools for a QC corpus and an
//! optional QD corpus, all derived from one seed.

use log::warn;

use super::{build_eval_pools, split_dataset, EncodedQc, EncodedQd, EvalPool, Identified, QCPair, QDPair, SeqLimits};
use super::Vocabulary;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct Splits<T> {
    pub train: Vec<T>,
    pub dev: Vec<T>,
    pub test: Vec<T>,
}

impl<T: Clone> Splits<T> {
    pub fn new(items: &[T], seed: u64) -> Result<Self> {
        let (train, dev, test) = split_dataset(items, seed)?;
        Ok(Self { train, dev, test })
    }

    pub fn map<U>(&self, f: impl Fn(&[T]) -> Vec<U>) -> Splits<U> {
        Splits {
            train: f(&self.train),
            dev: f(&self.dev),
            test: f(&self.test),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoolSet {
    pub dev: Vec<EvalPool>,
    pub test: Vec<EvalPool>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrepareOptions {
    pub seed: u64,
    pub pool_negatives: usize,
    pub min_freq: usize,
    pub max_vocab: usize,
}

impl Default for PrepareOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            pool_negatives: super::POOL_NEGATIVES,
            min_freq: 1,
            max_vocab: 50_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PreparedCorpus {
    /// Built from the training splits of both tasks.
    pub vocab: Vocabulary,
    pub qc: Splits<QCPair>,
    pub qc_pools: PoolSet,
    /// Absent when there are fewer than 10 QD pairs.
    pub qd: Option<Splits<QDPair>>,
    pub qd_pools: Option<PoolSet>,
}

#[derive(Debug, Clone)]
pub struct EncodedCorpus {
    pub qc: Splits<EncodedQc>,
    pub qd: Splits<EncodedQd>,
}

/// Pools for a split, shrinking the negative count (with a warning) when the split is too small.
fn pools_for<T: Identified>(split: &[T], negatives: usize, seed: u64, what: &str) -> Result<Vec<EvalPool>> {
    if split.len() < 2 {
        warn!("{what} split has {} item(s); no pools", split.len());
        return Ok(Vec::new());
    }
    let k = negatives.min(split.len() - 1);
    if k < negatives {
        warn!("{what} split has {} items; pools use {k} negatives instead of {negatives}", split.len());
    }
    build_eval_pools(split, k, seed)
}

pub fn prepare_corpus(qc: &[QCPair], qd: &[QDPair], opts: PrepareOptions) -> Result<PreparedCorpus> {
    let seed = opts.seed;
    let qc_splits = Splits::new(qc, seed)?;
    let qd_splits = if qd.len() >= 10 {
        Some(Splits::new(qd, seed.wrapping_add(1))?)
    } else {
        if !qd.is_empty() {
            warn!("only {} QD pairs; QD data is ignored", qd.len());
        }
        None
    };
    let vocab = Vocabulary::build(
        &qc_splits.train,
        qd_splits.as_ref().map(|s| &s.train[..]).unwrap_or_default(),
        opts.min_freq,
        opts.max_vocab,
    )?;
    let qc_pools = PoolSet {
        dev: pools_for(&qc_splits.dev, opts.pool_negatives, seed.wrapping_add(2), "QC dev")?,
        test: pools_for(&qc_splits.test, opts.pool_negatives, seed.wrapping_add(3), "QC test")?,
    };
    let qd_pools = qd_splits
        .as_ref()
        .map(|s| {
            Ok::<_, crate::Error>(PoolSet {
                dev: pools_for(&s.dev, opts.pool_negatives, seed.wrapping_add(4), "QD dev")?,
                test: pools_for(&s.test, opts.pool_negatives, seed.wrapping_add(5), "QD test")?,
            })
        })
        .transpose()?;
    Ok(PreparedCorpus {
        vocab,
        qc: qc_splits,
        qc_pools,
        qd: qd_splits,
        qd_pools,
    })
}

impl PreparedCorpus {
    pub fn encode(&self, limits: SeqLimits) -> EncodedCorpus {
        let empty = Splits {
            train: Vec::new(),
            dev: Vec::new(),
            test: Vec::new(),
        };
        EncodedCorpus {
            qc: self.qc.map(|s| self.vocab.encode_qc(s, limits)),
            qd: self
                .qd
                .as_ref()
                .map(|s| s.map(|p| self.vocab.encode_qd(p, limits)))
                .unwrap_or(empty),
        }
    }
}
