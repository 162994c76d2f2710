//! Unsupervised document-level sentiment classification trained from
//! target-opinion word pairs.
//!
//! A document classifier `q(c|x)` is learned without polarity labels by
//! maximizing a variational lower bound on the likelihood of each extracted
//! opinion word given its target word. The crate contains the full pipeline:
//!
//! * [`corpus`]: CoNLL-U / JSON-lines ingestion, vocabularies, bag-of-words
//!   features, embeddings and deterministic splits.
//! * [`extraction`]: dependency-rule and lexicon-window pair extraction with
//!   aspect assignment.
//! * [`model`]: the sentiment classifier and the opinion-word classifier.
//! * [`training`]: exact and negative-sampled objectives, the score-function
//!   estimator, the opinion-similarity regularizer and the training loop.
//! * [`evaluation`]: Hungarian cluster-to-label assignment, accuracy and the
//!   majority / lexicon baselines.
//! * [`synth`]: synthetic corpora with known latent polarities.
//! * [`verify`]: numerical self-checks run by `pairsent check`.
//! * [`cli`]: the `pairsent` command-line surface.

pub mod cli;
pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod extraction;
pub mod linalg;
pub mod model;
pub mod synth;
pub mod training;
pub mod verify;

pub use error::{Error, Result};
