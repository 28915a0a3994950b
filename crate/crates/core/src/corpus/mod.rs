//! Dataset ingestion, tokenization, vocabularies, splits and fixed evaluation pools.
//!
//! All files are line-delimited JSON. Every operation here is a pure function of its inputs and
//! seed.

mod dataset;
mod synthetic;
mod tokenize;
mod vocab;

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use log::warn;
use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub use dataset::{prepare_corpus, EncodedCorpus, PoolSet, PrepareOptions, PreparedCorpus, Splits};
pub use synthetic::{SyntheticCorpus, SyntheticSpec};
pub use tokenize::{tokenize_code, tokenize_nl, DefaultTokenizers, Tokenizers};
pub use vocab::{TokenIndex, Vocabulary, PAD_TOKEN, UNK_TOKEN};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;

/// Default number of negatives per evaluation pool.
pub const POOL_NEGATIVES: usize = 49;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Lang {
    Python,
    Sql,
    #[default]
    Other,
}

impl Lang {
    pub fn parse(s: &str) -> Self {
        match s.trim().to_ascii_lowercase().as_str() {
            "python" | "py" => Lang::Python,
            "sql" => Lang::Sql,
            _ => Lang::Other,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Lang::Python => "python",
            Lang::Sql => "sql",
            Lang::Other => "other",
        }
    }
}

/// A question paired with one code snippet.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QCPair {
    pub id: u64,
    pub question_text: String,
    pub code_text: String,
    pub question: Vec<String>,
    pub code: Vec<String>,
    pub lang: Lang,
}

/// Two questions marked as duplicates of each other.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QDPair {
    pub id: u64,
    pub q1_text: String,
    pub q2_text: String,
    pub question_a: Vec<String>,
    pub question_b: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalPool {
    pub query_id: u64,
    pub positive_id: u64,
    pub negative_ids: Vec<u64>,
}

impl EvalPool {
    /// Positive followed by negatives.
    pub fn candidates(&self) -> impl Iterator<Item = u64> + '_ {
        std::iter::once(self.positive_id).chain(self.negative_ids.iter().copied())
    }

    pub fn size(&self) -> usize {
        1 + self.negative_ids.len()
    }
}

/// Maximum sequence lengths; longer sequences keep their leading tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeqLimits {
    pub question: usize,
    pub code: usize,
}

impl Default for SeqLimits {
    fn default() -> Self {
        Self {
            question: 30,
            code: 200,
        }
    }
}

/// A QC pair mapped to vocabulary ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedQc {
    pub id: u64,
    pub question: Vec<usize>,
    pub code: Vec<usize>,
}

/// A QD pair mapped to vocabulary ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedQd {
    pub id: u64,
    pub question_a: Vec<usize>,
    pub question_b: Vec<usize>,
}

impl Vocabulary {
    pub fn encode_qc(&self, pairs: &[QCPair], limits: SeqLimits) -> Vec<EncodedQc> {
        pairs
            .iter()
            .map(|p| EncodedQc {
                id: p.id,
                question: self.nl.encode(&p.question, limits.question),
                code: self.code.encode(&p.code, limits.code),
            })
            .collect()
    }

    pub fn encode_qd(&self, pairs: &[QDPair], limits: SeqLimits) -> Vec<EncodedQd> {
        pairs
            .iter()
            .map(|p| EncodedQd {
                id: p.id,
                question_a: self.nl.encode(&p.question_a, limits.question),
                question_b: self.nl.encode(&p.question_b, limits.question),
            })
            .collect()
    }
}

impl Identified for EncodedQc {
    fn id(&self) -> u64 {
        self.id
    }
}

impl Identified for EncodedQd {
    fn id(&self) -> u64 {
        self.id
    }
}

pub trait Identified {
    fn id(&self) -> u64;
}

impl Identified for QCPair {
    fn id(&self) -> u64 {
        self.id
    }
}

impl Identified for QDPair {
    fn id(&self) -> u64 {
        self.id
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct QcRecord {
    id: u64,
    question: String,
    code: String,
    lang: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct QdRecord {
    id: u64,
    q1: String,
    q2: String,
}

fn read_records<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(line).map_err(|e| Error::Record {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push((i + 1, rec));
    }
    if out.is_empty() {
        warn!("{}: no records", path.display());
    }
    Ok(out)
}

fn write_lines<T: Serialize>(path: &Path, records: impl IntoIterator<Item = T>) -> Result<()> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, &r).map_err(|e| Error::Serde(e.to_string()))?;
        buf.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

fn check_unique(path: &Path, seen: &mut HashMap<u64, usize>, id: u64, line: usize) -> Result<()> {
    if let Some(first) = seen.insert(id, line) {
        return Err(Error::Record {
            path: path.to_path_buf(),
            line,
            message: format!("duplicate id {id} (first seen on line {first})"),
        });
    }
    Ok(())
}

/// Loads a QC file with the default tokenizers.
pub fn load_qc(path: &Path) -> Result<Vec<QCPair>> {
    load_qc_with(path, &DefaultTokenizers)
}

pub fn load_qc_with(path: &Path, tok: &dyn Tokenizers) -> Result<Vec<QCPair>> {
    let mut seen = HashMap::new();
    let mut out = Vec::new();
    for (line, rec) in read_records::<QcRecord>(path)? {
        check_unique(path, &mut seen, rec.id, line)?;
        let lang = Lang::parse(&rec.lang);
        let question = tok.nl(&rec.question);
        let code = tok.code(&rec.code, lang);
        if question.is_empty() || code.is_empty() {
            return Err(Error::Record {
                path: path.to_path_buf(),
                line,
                message: format!("record {} has an empty question or code after tokenization", rec.id),
            });
        }
        out.push(QCPair {
            id: rec.id,
            question_text: rec.question,
            code_text: rec.code,
            question,
            code,
            lang,
        });
    }
    Ok(out)
}

pub fn load_qd(path: &Path) -> Result<Vec<QDPair>> {
    load_qd_with(path, &DefaultTokenizers)
}

pub fn load_qd_with(path: &Path, tok: &dyn Tokenizers) -> Result<Vec<QDPair>> {
    let mut seen = HashMap::new();
    let mut out = Vec::new();
    for (line, rec) in read_records::<QdRecord>(path)? {
        check_unique(path, &mut seen, rec.id, line)?;
        let question_a = tok.nl(&rec.q1);
        let question_b = tok.nl(&rec.q2);
        if question_a.is_empty() || question_b.is_empty() {
            return Err(Error::Record {
                path: path.to_path_buf(),
                line,
                message: format!("record {} has an empty question after tokenization", rec.id),
            });
        }
        out.push(QDPair {
            id: rec.id,
            q1_text: rec.q1,
            q2_text: rec.q2,
            question_a,
            question_b,
        });
    }
    Ok(out)
}

pub fn write_qc(path: &Path, pairs: &[QCPair]) -> Result<()> {
    write_lines(
        path,
        pairs.iter().map(|p| QcRecord {
            id: p.id,
            question: p.question_text.clone(),
            code: p.code_text.clone(),
            lang: p.lang.as_str().to_string(),
        }),
    )
}

pub fn write_qd(path: &Path, pairs: &[QDPair]) -> Result<()> {
    write_lines(
        path,
        pairs.iter().map(|p| QdRecord {
            id: p.id,
            q1: p.q1_text.clone(),
            q2: p.q2_text.clone(),
        }),
    )
}

pub fn write_pools(path: &Path, pools: &[EvalPool]) -> Result<()> {
    write_lines(path, pools)
}

/// Reads a pool file, rejecting pools whose positive is among its negatives.
pub fn load_pools(path: &Path) -> Result<Vec<EvalPool>> {
    let mut out = Vec::new();
    for (line, pool) in read_records::<EvalPool>(path)? {
        if pool.negative_ids.contains(&pool.positive_id) {
            return Err(Error::Record {
                path: path.to_path_buf(),
                line,
                message: format!("positive {} listed among negatives", pool.positive_id),
            });
        }
        out.push(pool);
    }
    Ok(out)
}

/// Shuffles with `seed` and cuts into ⌊0.70n⌋ / ⌊0.15n⌋ / remainder.
pub fn split_dataset<T: Clone>(items: &[T], seed: u64) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    let n = items.len();
    if n < 10 {
        return Err(Error::InvalidInput(format!("need at least 10 items to split, got {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = n * 70 / 100;
    let n_dev = n * 15 / 100;
    let pick = |idx: &[usize]| idx.iter().map(|&i| items[i].clone()).collect::<Vec<_>>();
    Ok((
        pick(&order[..n_train]),
        pick(&order[n_train..n_train + n_dev]),
        pick(&order[n_train + n_dev..]),
    ))
}

/// One pool per item: the item itself is the positive and `pool_negatives` other items of the
/// same split, drawn uniformly without replacement, are the negatives.
pub fn build_eval_pools<T: Identified>(split: &[T], pool_negatives: usize, seed: u64) -> Result<Vec<EvalPool>> {
    let n = split.len();
    if n <= pool_negatives {
        return Err(Error::InvalidInput(format!(
            "split of {n} items is too small for pools with {pool_negatives} negatives"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(split
        .iter()
        .enumerate()
        .map(|(i, item)| {
            let negative_ids = index::sample(&mut rng, n - 1, pool_negatives)
                .into_iter()
                .map(|j| split[if j < i { j } else { j + 1 }].id())
                .collect();
            EvalPool {
                query_id: item.id(),
                positive_id: item.id(),
                negative_ids,
            }
        })
        .collect())
}
