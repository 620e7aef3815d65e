//! Evaluation: exact-match Span-F1, log-likelihood sensitivity to corrupted
//! arguments, and diversity of synthetic data.

mod diversity;
mod f1;
mod perturb;

pub use diversity::{
    diversity, diversity_with, pos_tag, DimensionScores, DiversityReport, DiversityTools, FactDisagreement,
    HashedTrigramEncoder, LogicalJudge, RoundDiversity, SentenceEncoder, SeriesRow,
};
pub use f1::{span_f1, F1Report, SliceScore};
pub use perturb::{perturb, sensitivity_probe, sign_test, PerturbMode, PerturbOutcome, PerturbationReport, ProbeConfig, SignTest};
