//! Synthetic one-to-many QC/QD corpus with known false negatives.
//!
//! Each of K intents has M paraphrased questions and M distinct code solutions; question `m`
//! is paired with solution `m`, so every other solution of the same intent is a false negative
//! for it. Intents come in families of four that share a question word and confusable code
//! tokens, which makes sibling intents' code hard true negatives.

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{tokenize_code, tokenize_nl, Lang, QCPair, QDPair};
use crate::error::{Error, Result};

const FILLER: &[&str] = &["how", "to", "do", "i", "get", "a", "the", "in", "with", "from"];
const SYNTAX: &[&str] = &["=", "(", ")", ",", "for", "in", "import", "return"];

const FAMILY_SIZE: usize = 4;
const NL_INTENT_WORDS: usize = 4;
const NL_FAMILY_WORDS: usize = 2;
const CODE_INTENT_TOKENS: usize = 5;
const CODE_FAMILY_TOKENS: usize = 4;
const CODE_APPROACH_TOKENS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticSpec {
    /// Number of latent intents (K).
    pub intents: usize,
    /// Paraphrases and solutions per intent (M).
    pub per_intent: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub qc: Vec<QCPair>,
    pub qd: Vec<QDPair>,
    /// QC pair id → intent.
    pub intent_of: BTreeMap<u64, usize>,
}

fn pick<'a>(pool: &'a [String], k: usize, rng: &mut ChaCha8Rng) -> Vec<&'a str> {
    pool.choose_multiple(rng, k).map(String::as_str).collect()
}

impl SyntheticCorpus {
    pub fn generate(spec: SyntheticSpec) -> Result<Self> {
        if spec.intents < 2 || spec.per_intent < 2 {
            return Err(Error::InvalidInput(
                "synthetic corpus needs at least 2 intents and 2 items per intent".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut qc = Vec::with_capacity(spec.intents * spec.per_intent);
        let mut qd = Vec::new();
        let mut intent_of = BTreeMap::new();

        for k in 0..spec.intents {
            let fam = k / FAMILY_SIZE;
            let nl_intent: Vec<String> = (0..NL_INTENT_WORDS).map(|j| format!("q{k}w{j}")).collect();
            let nl_family: Vec<String> = (0..NL_FAMILY_WORDS).map(|j| format!("qf{fam}w{j}")).collect();
            let code_intent: Vec<String> = (0..CODE_INTENT_TOKENS).map(|j| format!("k{k}t{j}")).collect();
            let code_family: Vec<String> = (0..CODE_FAMILY_TOKENS).map(|j| format!("f{fam}t{j}")).collect();
            let filler: Vec<String> = FILLER.iter().map(|s| s.to_string()).collect();
            let syntax: Vec<String> = SYNTAX.iter().map(|s| s.to_string()).collect();

            let mut questions = Vec::with_capacity(spec.per_intent);
            for m in 0..spec.per_intent {
                let mut words = pick(&filler, 1, &mut rng);
                words.extend(pick(&nl_intent, 3, &mut rng));
                words.extend(pick(&nl_family, 1, &mut rng));
                words.shuffle(&mut rng);
                let question_text = words.join(" ");

                let approach: Vec<String> =
                    (0..CODE_APPROACH_TOKENS).map(|j| format!("k{k}s{m}t{j}")).collect();
                let mut toks = pick(&code_intent, 3, &mut rng);
                toks.extend(pick(&code_family, 3, &mut rng));
                toks.extend(pick(&approach, 1, &mut rng));
                toks.extend(pick(&syntax, 1, &mut rng));
                toks.shuffle(&mut rng);
                let code_text = toks.join(" ");

                let id = (k * spec.per_intent + m) as u64;
                intent_of.insert(id, k);
                questions.push(question_text.clone());
                qc.push(QCPair {
                    id,
                    question: tokenize_nl(&question_text),
                    code: tokenize_code(&code_text, Lang::Python),
                    question_text,
                    code_text,
                    lang: Lang::Python,
                });
            }
            for a in 0..spec.per_intent {
                for b in a + 1..spec.per_intent {
                    qd.push(QDPair {
                        id: qd.len() as u64,
                        question_a: tokenize_nl(&questions[a]),
                        question_b: tokenize_nl(&questions[b]),
                        q1_text: questions[a].clone(),
                        q2_text: questions[b].clone(),
                    });
                }
            }
        }
        Ok(Self { qc, qd, intent_of })
    }

    pub fn same_intent(&self, a: u64, b: u64) -> bool {
        match (self.intent_of.get(&a), self.intent_of.get(&b)) {
            (Some(x), Some(y)) => x == y,
            _ => false,
        }
    }

    /// An unpaired candidate that nonetheless solves the query's intent.
    pub fn is_false_negative(&self, query_id: u64, candidate_id: u64) -> bool {
        query_id != candidate_id && self.same_intent(query_id, candidate_id)
    }
}
