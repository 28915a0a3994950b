//! Code retrieval training with adversarial negative sampling regularized by
//! question-description relevance.
//!
//! A discriminative question-code matcher is trained against a generator that samples hard
//! negative snippets from a tempered softmax over its own scores. Each sampled negative's loss
//! is scaled by `(1 - x^a)^b`, where `x` is a question-question relevance model's normalized
//! score between the query and the question originally paired with the sampled snippet, so
//! likely false negatives contribute less.
//!
//! Modules:
//! - [`corpus`]: dataset ingestion, tokenization, vocabularies, splits, evaluation pools.
//! - [`model`]: bi-LSTM encoders, QC/QD matchers, generator, checkpoints.
//! - [`objectives`]: hinge loss, adversarial distribution, REINFORCE, relevance weights.
//! - [`training`]: pretraining, the adversarial loop, its QD-side mirror, and MTL-DCS.
//! - [`evaluation`]: MAP/nDCG over fixed pools, curve export.
//! - [`cli`]: the `advcode` command-line driver.

pub mod cli;
pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod objectives;
pub mod optim;
pub mod training;

pub use error::{Error, Result};
