//! Pooled ranking evaluation: each query ranks its single positive against a fixed pool of
//! negatives, scored with MAP and nDCG. Also learning-curve export and a paired t-test helper.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::debug;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::corpus::{EncodedQc, EncodedQd, EvalPool};
use crate::error::{Error, Result};
use crate::model::{cosine, EncoderParams, QCModel, QDModel};
use crate::training::{EpochRecord, TrainHistory};

/// Anything that can score a candidate for a query.
pub trait PoolScorer: Sync {
    fn score(&self, query_id: u64, candidate_id: u64) -> Result<f64>;
}

impl<F> PoolScorer for F
where
    F: Fn(u64, u64) -> Result<f64> + Sync,
{
    fn score(&self, query_id: u64, candidate_id: u64) -> Result<f64> {
        self(query_id, candidate_id)
    }
}

/// 1-based rank of the positive. Candidates sort by descending score, ties by ascending id.
pub fn rank_pool(scorer: &dyn PoolScorer, pool: &EvalPool) -> Result<usize> {
    let scored = pool
        .candidates()
        .map(|id| scorer.score(pool.query_id, id).map(|s| (id, s)))
        .collect::<Result<Vec<_>>>()?;
    Ok(rank_of_positive(pool.positive_id, &scored))
}

fn rank_of_positive(positive_id: u64, scored: &[(u64, f64)]) -> usize {
    let pos_score = scored
        .iter()
        .find(|(id, _)| *id == positive_id)
        .map(|&(_, s)| s)
        .expect("positive is among candidates");
    let ahead = scored
        .iter()
        .filter(|&&(id, s)| id != positive_id && (s > pos_score || (s == pos_score && id < positive_id)))
        .count();
    let ties = scored.iter().filter(|&&(id, s)| id != positive_id && s == pos_score).count();
    if ties > 0 {
        debug!("positive {positive_id} tied with {ties} candidate(s); breaking by id");
    }
    ahead + 1
}

/// With a single relevant item, average precision is `1 / rank`.
pub fn average_precision_single(rank: usize) -> Result<f64> {
    if rank < 1 {
        return Err(Error::InvalidInput("rank must be >= 1".into()));
    }
    Ok(1.0 / rank as f64)
}

/// With a single relevant item (ideal DCG = 1), nDCG is `1 / log2(rank + 1)`.
pub fn ndcg_single(rank: usize) -> Result<f64> {
    if rank < 1 {
        return Err(Error::InvalidInput("rank must be >= 1".into()));
    }
    Ok(1.0 / ((rank + 1) as f64).log2())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueryRank {
    pub query_id: u64,
    pub rank: usize,
    pub pool_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub map: f64,
    pub ndcg: f64,
    pub per_query: Vec<QueryRank>,
}

impl EvalReport {
    /// Per-query rows `query_id,rank,ap,ndcg` followed by one `mean` summary row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("query_id,rank,ap,ndcg\n");
        for q in &self.per_query {
            let ap = 1.0 / q.rank as f64;
            let nd = 1.0 / ((q.rank + 1) as f64).log2();
            let _ = writeln!(out, "{},{},{},{}", q.query_id, q.rank, ap, nd);
        }
        let _ = writeln!(out, "mean,,{},{}", self.map, self.ndcg);
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Ranks every pool and averages AP and nDCG. Pools are scored in parallel; the report is in
/// pool order.
pub fn evaluate(scorer: &dyn PoolScorer, pools: &[EvalPool]) -> Result<EvalReport> {
    if pools.is_empty() {
        return Err(Error::InvalidInput("no evaluation pools".into()));
    }
    let per_query = pools
        .par_iter()
        .map(|pool| {
            let rank = rank_pool(scorer, pool).map_err(|e| match e {
                e @ Error::MissingCandidate { .. } => e,
                other => Error::InvalidInput(format!("pool for query {}: {other}", pool.query_id)),
            })?;
            Ok(QueryRank {
                query_id: pool.query_id,
                rank,
                pool_size: pool.size(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n = per_query.len() as f64;
    let mut map = 0.0;
    let mut ndcg = 0.0;
    for q in &per_query {
        map += average_precision_single(q.rank)?;
        ndcg += ndcg_single(q.rank)?;
    }
    Ok(EvalReport {
        map: map / n,
        ndcg: ndcg / n,
        per_query,
    })
}

fn encode_all(encoder: &EncoderParams, items: Vec<(u64, &[usize])>) -> Result<HashMap<u64, Vec<f64>>> {
    items
        .into_par_iter()
        .map(|(id, toks)| encoder.encode(toks).map(|v| (id, v)))
        .collect()
}

/// QC scorer over one split: each item's question is a query and each item's code a candidate.
/// Everything is encoded once up front.
pub struct QcPoolScorer {
    questions: HashMap<u64, Vec<f64>>,
    codes: HashMap<u64, Vec<f64>>,
}

impl QcPoolScorer {
    pub fn new(model: &QCModel, split: &[EncodedQc]) -> Result<Self> {
        Ok(Self {
            questions: encode_all(&model.question_encoder, split.iter().map(|p| (p.id, &p.question[..])).collect())?,
            codes: encode_all(&model.code_encoder, split.iter().map(|p| (p.id, &p.code[..])).collect())?,
        })
    }
}

impl PoolScorer for QcPoolScorer {
    fn score(&self, query_id: u64, candidate_id: u64) -> Result<f64> {
        let missing = |c| Error::MissingCandidate {
            query_id,
            candidate_id: c,
        };
        let q = self.questions.get(&query_id).ok_or_else(|| missing(query_id))?;
        let c = self.codes.get(&candidate_id).ok_or_else(|| missing(candidate_id))?;
        cosine(q, c)
    }
}

/// QD scorer over one split of duplicate pairs: the first question of pair `i` is the query,
/// the second question of each pair is a candidate.
pub struct QdPoolScorer {
    queries: HashMap<u64, Vec<f64>>,
    candidates: HashMap<u64, Vec<f64>>,
}

impl QdPoolScorer {
    pub fn new(model: &QDModel, split: &[EncodedQd]) -> Result<Self> {
        let enc = &model.question_encoder;
        Ok(Self {
            queries: encode_all(enc, split.iter().map(|p| (p.id, &p.question_a[..])).collect())?,
            candidates: encode_all(enc, split.iter().map(|p| (p.id, &p.question_b[..])).collect())?,
        })
    }
}

impl PoolScorer for QdPoolScorer {
    fn score(&self, query_id: u64, candidate_id: u64) -> Result<f64> {
        let missing = |c| Error::MissingCandidate {
            query_id,
            candidate_id: c,
        };
        let q = self.queries.get(&query_id).ok_or_else(|| missing(query_id))?;
        let c = self.candidates.get(&candidate_id).ok_or_else(|| missing(candidate_id))?;
        cosine(q, c)
    }
}

pub const CURVE_HEADER: &str = "epoch,map,ndcg,loss,mean_weight";

pub fn curves_to_csv(history: &TrainHistory) -> String {
    let mut out = String::from(CURVE_HEADER);
    out.push('\n');
    for r in &history.records {
        let _ = writeln!(out, "{},{},{},{},{}", r.epoch, r.dev_map, r.dev_ndcg, r.train_loss, r.mean_weight);
    }
    out
}

/// Writes one CSV row per epoch under a fixed header.
pub fn export_curves(history: &TrainHistory, path: &Path) -> Result<()> {
    if history.records.is_empty() {
        return Err(Error::InvalidInput("cannot export an empty history".into()));
    }
    fs::write(path, curves_to_csv(history)).map_err(|e| Error::io(path, e))
}

pub fn parse_curves(text: &str) -> Result<TrainHistory> {
    let mut lines = text.lines();
    if lines.next() != Some(CURVE_HEADER) {
        return Err(Error::InvalidInput("curve file has an unexpected header".into()));
    }
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let bad = |what: &str| Error::InvalidInput(format!("curve row {}: {what}", i + 2));
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 5 {
            return Err(bad("expected 5 columns"));
        }
        let f = |s: &str| s.parse::<f64>().map_err(|_| bad("bad number"));
        records.push(EpochRecord {
            epoch: cols[0].parse().map_err(|_| bad("bad epoch"))?,
            dev_map: f(cols[1])?,
            dev_ndcg: f(cols[2])?,
            train_loss: f(cols[3])?,
            mean_weight: f(cols[4])?,
        });
    }
    Ok(TrainHistory { records })
}

pub fn load_curves(path: &Path) -> Result<TrainHistory> {
    parse_curves(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTest {
    pub t: f64,
    pub degrees_of_freedom: f64,
    /// One-tailed p-value for `mean(a - b) > 0`.
    pub p_value: f64,
}

/// Paired one-tailed t-test that system `a` scores higher than system `b` per query.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::InvalidInput("paired t-test needs two equal-length samples of size >= 2".into()));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let df = n - 1.0;
    if var == 0.0 {
        let p_value = if mean > 0.0 { 0.0 } else { 1.0 };
        return Ok(TTest {
            t: if mean > 0.0 { f64::INFINITY } else { f64::NEG_INFINITY },
            degrees_of_freedom: df,
            p_value,
        });
    }
    let t = mean / (var / n).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::InvalidInput(e.to_string()))?;
    Ok(TTest {
        t,
        degrees_of_freedom: df,
        p_value: 1.0 - dist.cdf(t),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pool(neg: std::ops::Range<u64>) -> EvalPool {
        EvalPool {
            query_id: 100,
            positive_id: 100,
            negative_ids: neg.collect(),
        }
    }

    #[test]
    fn rank_extremes_and_ties() {
        let p = pool(0..49);
        let top = |_q: u64, c: u64| Ok(if c == 100 { 1.0 } else { 0.0 });
        assert_eq!(rank_pool(&top, &p).unwrap(), 1);
        let bottom = |_q: u64, c: u64| Ok(if c == 100 { -1.0 } else { c as f64 });
        assert_eq!(rank_pool(&bottom, &p).unwrap(), 50);
        // tied with candidate 3 (smaller id) → placed after it
        let tied = |_q: u64, c: u64| Ok(if c == 100 || c == 3 { 0.5 } else { 0.0 });
        assert_eq!(rank_pool(&tied, &p).unwrap(), 2);
    }

    #[test]
    fn single_relevant_metrics() {
        assert_eq!(average_precision_single(1).unwrap(), 1.0);
        assert_eq!(average_precision_single(4).unwrap(), 0.25);
        assert!((average_precision_single(50).unwrap() - 0.02).abs() < 1e-15);
        assert_eq!(ndcg_single(1).unwrap(), 1.0);
        assert!((ndcg_single(3).unwrap() - 0.5).abs() < 1e-15);
        assert!((ndcg_single(7).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!(average_precision_single(0).is_err());
        assert!(ndcg_single(0).is_err());
    }

    #[test]
    fn two_pool_report() {
        let pools = vec![
            EvalPool {
                query_id: 1,
                positive_id: 1,
                negative_ids: vec![2, 3],
            },
            EvalPool {
                query_id: 2,
                positive_id: 2,
                negative_ids: vec![1, 3],
            },
        ];
        // query 1's positive on top; query 2's positive behind candidate 3
        let scorer = |q: u64, c: u64| Ok(if q == c { 0.5 } else if c == 3 { 0.2 + q as f64 * 0.2 } else { 0.0 });
        let r = evaluate(&scorer, &pools).unwrap();
        assert_eq!(r.per_query.iter().map(|q| q.rank).collect::<Vec<_>>(), vec![1, 2]);
        assert!((r.map - 0.75).abs() < 1e-15);
        assert!((r.ndcg - (1.0 + 1.0 / 3f64.log2()) / 2.0).abs() < 1e-15);
        assert!((r.ndcg - 0.8155).abs() < 1e-4);
        let csv = r.to_csv();
        assert_eq!(csv.lines().count(), 1 + 2 + 1);
    }

    #[test]
    fn missing_candidate_propagates() {
        let pools = vec![pool(0..3)];
        let scorer = |_q: u64, c: u64| {
            if c == 2 {
                Err(Error::MissingCandidate {
                    query_id: 100,
                    candidate_id: 2,
                })
            } else {
                Ok(0.0)
            }
        };
        assert!(matches!(evaluate(&scorer, &pools), Err(Error::MissingCandidate { candidate_id: 2, .. })));
        assert!(evaluate(&scorer, &[]).is_err());
    }

    #[test]
    fn curves_round_trip_and_empty_history() {
        let h = TrainHistory {
            records: (1..=3)
                .map(|e| EpochRecord {
                    epoch: e,
                    dev_map: 0.1 * e as f64 + 1e-17,
                    dev_ndcg: 1.0 / 3.0,
                    train_loss: 0.123456789012345,
                    mean_weight: 1.0,
                })
                .collect(),
        };
        let text = curves_to_csv(&h);
        assert_eq!(text.lines().count(), 4);
        assert_eq!(parse_curves(&text).unwrap(), h);
        let dir = tempfile::tempdir().unwrap();
        assert!(export_curves(&TrainHistory::default(), &dir.path().join("c.csv")).is_err());
    }

    #[test]
    fn t_test_direction() {
        let a = [0.9, 0.8, 0.85, 0.95, 0.7, 0.88];
        let b = [0.5, 0.6, 0.55, 0.5, 0.65, 0.52];
        let r = paired_t_test(&a, &b).unwrap();
        assert!(r.t > 0.0 && r.p_value < 0.01);
        let r = paired_t_test(&b, &a).unwrap();
        assert!(r.p_value > 0.99);
    }
}
