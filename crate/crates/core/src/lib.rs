//! Synthetic data generation for zero-shot document-level event argument
//! extraction, built around two cooperating agents: a generation agent that
//! proposes event instances for unseen types and an extractor that scores and
//! consumes them.

pub mod corpus;
pub mod error;
pub mod eval_agent;
pub mod experiment;
pub mod gen_agent;
pub mod logging;
pub mod metrics;
pub mod micro;
pub mod nn;
pub mod ontology;
pub mod plot;
pub mod prompting;
pub mod rl;
pub mod reward;
pub mod vocab;

pub use error::{Error, Result};
