//! Per-sample rewards for synthetic data.
//!
//! The extractor's log-likelihood is standardized over the whole synthetic
//! dataset, then a structural penalty is subtracted when a sample's share of
//! empty roles leaves the band observed in the seen training data.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{empty_argument_ratio, EventInstance, SyntheticDataset};
use crate::error::{Error, IoContext, Result};
use crate::ontology::Ontology;

/// Expected empty-argument ratio and its spread in the training data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StructureBand {
    pub tau: f64,
    pub epsilon: f64,
}

impl StructureBand {
    pub fn contains(&self, ratio: f64) -> bool {
        self.tau - self.epsilon <= ratio && ratio <= self.tau + self.epsilon
    }

    /// Distance from `ratio` to the band, zero inside it.
    pub fn distance(&self, ratio: f64) -> f64 {
        ((ratio - self.tau).abs() - self.epsilon).max(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardStats {
    /// Mean log-likelihood over the synthetic dataset.
    pub mean: f64,
    /// Population standard deviation of the log-likelihoods.
    pub std: f64,
    pub tau: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    pub sample_id: String,
    pub log_likelihood: f64,
    pub empty_ratio: f64,
    pub penalty: f64,
    pub reward: f64,
}

/// Mean and population standard deviation (two-pass).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn fit_structure_band(seen_data: &[EventInstance], ontology: &Ontology) -> Result<StructureBand> {
    if seen_data.is_empty() {
        return Err(Error::EmptyInput("seen data for the structure band"));
    }
    let ratios = seen_data
        .iter()
        .map(|inst| empty_argument_ratio(inst, ontology.get(&inst.event_type_id)?))
        .collect::<Result<Vec<_>>>()?;
    let (tau, epsilon) = mean_std(&ratios);
    Ok(StructureBand { tau, epsilon })
}

/// Bands fitted separately per seen event type.
pub fn fit_structure_band_per_type(
    seen_data: &[EventInstance],
    ontology: &Ontology,
) -> Result<BTreeMap<String, StructureBand>> {
    let mut by_type: BTreeMap<String, Vec<EventInstance>> = BTreeMap::new();
    for inst in seen_data {
        by_type.entry(inst.event_type_id.clone()).or_default().push(inst.clone());
    }
    by_type
        .into_iter()
        .map(|(ty, insts)| Ok((ty, fit_structure_band(&insts, ontology)?)))
        .collect()
}

/// Zero inside `[tau - epsilon, tau + epsilon]`, `|ratio - tau|` outside.
pub fn penalty(ratio: f64, tau: f64, epsilon: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::OutOfRange(format!("empty-argument ratio {ratio} outside [0, 1]")));
    }
    if tau - epsilon <= ratio && ratio <= tau + epsilon {
        Ok(0.0)
    } else {
        Ok((ratio - tau).abs())
    }
}

/// How the structure band is chosen for a sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BandSpec {
    Global(StructureBand),
    /// Per-type bands; types without one (all unseen types, typically) use
    /// the fallback.
    PerType {
        bands: BTreeMap<String, StructureBand>,
        fallback: StructureBand,
    },
}

impl BandSpec {
    pub fn band_for(&self, event_type_id: &str) -> StructureBand {
        match self {
            Self::Global(b) => *b,
            Self::PerType { bands, fallback } => bands.get(event_type_id).copied().unwrap_or(*fallback),
        }
    }

    fn summary(&self) -> StructureBand {
        match self {
            Self::Global(b) => *b,
            Self::PerType { fallback, .. } => *fallback,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredDataset {
    pub samples: Vec<ScoredSample>,
    pub stats: RewardStats,
    /// Set when every log-likelihood was identical and the standardized term
    /// was taken as zero.
    pub degenerate: bool,
}

/// Computes rewards for every sample of `dataset` given one log-likelihood
/// per sample. Statistics are taken over the whole dataset before any
/// sample is scored.
pub fn score_dataset(
    dataset: &SyntheticDataset,
    log_likelihoods: &[f64],
    ontology: &Ontology,
    band: &BandSpec,
    penalty_enabled: bool,
) -> Result<ScoredDataset> {
    if dataset.is_empty() {
        return Err(Error::EmptyInput("synthetic dataset to score"));
    }
    if log_likelihoods.len() != dataset.len() {
        return Err(Error::OutOfRange(format!(
            "{} log-likelihoods for {} samples",
            log_likelihoods.len(),
            dataset.len()
        )));
    }
    let (mean, std) = mean_std(log_likelihoods);
    let degenerate = std == 0.0;
    if degenerate {
        log::warn!("all {} log-likelihoods are identical; standardized reward set to 0", dataset.len());
    }
    let mut samples = Vec::with_capacity(dataset.len());
    for (sample, &ll) in dataset.samples.iter().zip(log_likelihoods) {
        let schema = ontology.get(&sample.instance.event_type_id)?;
        let ratio = empty_argument_ratio(&sample.instance, schema)?;
        let b = band.band_for(&sample.instance.event_type_id);
        let p = if penalty_enabled { penalty(ratio, b.tau, b.epsilon)? } else { 0.0 };
        let normalized = if degenerate { 0.0 } else { (ll - mean) / std };
        samples.push(ScoredSample {
            sample_id: sample.id.clone(),
            log_likelihood: ll,
            empty_ratio: ratio,
            penalty: p,
            reward: normalized - p,
        });
    }
    let summary = band.summary();
    Ok(ScoredDataset {
        samples,
        stats: RewardStats {
            mean,
            std,
            tau: summary.tau,
            epsilon: summary.epsilon,
        },
        degenerate,
    })
}

impl ScoredDataset {
    /// Attaches scores to the dataset samples (matched by position).
    pub fn attach(&self, dataset: &mut SyntheticDataset) {
        for (sample, score) in dataset.samples.iter_mut().zip(&self.samples) {
            sample.score = Some(score.clone());
        }
    }

    pub fn mean_reward(&self) -> f64 {
        mean_std(&self.samples.iter().map(|s| s.reward).collect::<Vec<_>>()).0
    }

    pub fn mean_empty_ratio(&self) -> f64 {
        mean_std(&self.samples.iter().map(|s| s.empty_ratio).collect::<Vec<_>>()).0
    }

    /// Tab-separated ledger with a commented statistics header.
    pub fn ledger(&self) -> String {
        let mut out = String::new();
        let s = &self.stats;
        let _ = writeln!(
            out,
            "# mean={:?} std={:?} tau={:?} epsilon={:?} degenerate={}",
            s.mean, s.std, s.tau, s.epsilon, self.degenerate
        );
        out.push_str("sample_id\tlog_likelihood\tempty_ratio\tpenalty\treward\n");
        for r in &self.samples {
            let _ = writeln!(
                out,
                "{}\t{:?}\t{:?}\t{:?}\t{:?}",
                r.sample_id, r.log_likelihood, r.empty_ratio, r.penalty, r.reward
            );
        }
        out
    }

    pub fn write_ledger(&self, path: &Path) -> Result<()> {
        fs::write(path, self.ledger()).io_context(|| format!("writing {}", path.display()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Document, Provenance, SyntheticSample};
    use crate::ontology::EventSchema;
    use crate::prompting::PromptPair;
    use proptest::prelude::*;

    fn ontology() -> Ontology {
        Ontology::new([EventSchema::new("t", "t", ["a", "b", "c", "d", "e"], "<arg1> <arg2> <arg3> <arg4> <arg5>").unwrap()])
    }

    fn inst(filled: usize) -> EventInstance {
        let doc = Document::from_text("d", "w0 w1 w2 w3 w4 w5").unwrap();
        let trigger = doc.span(5, 6).unwrap();
        let args = ["a", "b", "c", "d", "e"][..filled]
            .iter()
            .enumerate()
            .map(|(i, r)| (r.to_string(), vec![doc.span(i, i + 1).unwrap()]))
            .collect();
        EventInstance::new(doc, "t", trigger, args, Provenance::Gold).unwrap()
    }

    fn dataset(filled: &[usize]) -> SyntheticDataset {
        let mut ds = SyntheticDataset::new(1);
        for (i, &f) in filled.iter().enumerate() {
            ds.samples.push(SyntheticSample {
                id: format!("s{i}"),
                instance: inst(f),
                prompt: PromptPair {
                    input_text: String::new(),
                    output_text: String::new(),
                },
                score: None,
            });
        }
        ds
    }

    #[test]
    fn band_population_std() {
        // ratios 0.6, 0.4, 0.2 (2, 3, 4 of 5 roles filled)
        let band = fit_structure_band(&[inst(2), inst(3), inst(4)], &ontology()).unwrap();
        assert!((band.tau - 0.4).abs() < 1e-12);
        let expected = ((0.04 + 0.0 + 0.04) / 3.0f64).sqrt();
        assert!((band.epsilon - expected).abs() < 1e-12);
        assert!((band.epsilon - 0.163299).abs() < 1e-6);

        let flat = fit_structure_band(&[inst(3), inst(3)], &ontology()).unwrap();
        assert_eq!(flat.epsilon, 0.0);
        let single = fit_structure_band(&[inst(1)], &ontology()).unwrap();
        assert!((single.tau - 0.8).abs() < 1e-12);
        assert_eq!(single.epsilon, 0.0);
        assert!(fit_structure_band(&[], &ontology()).is_err());
    }

    #[test]
    fn penalty_cases() {
        assert_eq!(penalty(0.45, 0.4, 0.1).unwrap(), 0.0);
        assert!((penalty(0.7, 0.4, 0.1).unwrap() - 0.3).abs() < 1e-12);
        assert!((penalty(0.0, 0.4, 0.1).unwrap() - 0.4).abs() < 1e-12);
        assert!(penalty(1.2, 0.4, 0.1).is_err());
        assert!(penalty(f64::NAN, 0.4, 0.1).is_err());
    }

    #[test]
    fn score_three_samples() {
        let ds = dataset(&[3, 3, 3]);
        let band = BandSpec::Global(StructureBand { tau: 0.4, epsilon: 0.1 });
        let scored = score_dataset(&ds, &[-2.0, -4.0, -6.0], &ontology(), &band, true).unwrap();
        let rewards: Vec<f64> = scored.samples.iter().map(|s| s.reward).collect();
        assert!((scored.stats.std - 1.632993161855452).abs() < 1e-12);
        assert!((rewards[0] - 1.224744871391589).abs() < 1e-12);
        assert!(rewards[1].abs() < 1e-15);
        assert!((rewards[2] + 1.224744871391589).abs() < 1e-12);
    }

    #[test]
    fn penalty_at_mean_likelihood() {
        // the middle sample sits at the mean but has every role empty
        let ds = dataset(&[3, 0, 3]);
        let band = BandSpec::Global(StructureBand { tau: 0.4, epsilon: 0.1 });
        let scored = score_dataset(&ds, &[-2.0, -4.0, -6.0], &ontology(), &band, true).unwrap();
        assert!((scored.samples[1].reward + 0.6).abs() < 1e-12);
        let ablated = score_dataset(&ds, &[-2.0, -4.0, -6.0], &ontology(), &band, false).unwrap();
        assert_eq!(ablated.samples[1].reward, 0.0);
    }

    #[test]
    fn degenerate_variance() {
        let ds = dataset(&[0, 3]);
        let band = BandSpec::Global(StructureBand { tau: 0.4, epsilon: 0.1 });
        let scored = score_dataset(&ds, &[-3.0, -3.0], &ontology(), &band, true).unwrap();
        assert!(scored.degenerate);
        assert!((scored.samples[0].reward + 0.6).abs() < 1e-12);
        assert_eq!(scored.samples[1].reward, 0.0);
    }

    #[test]
    fn per_type_band_falls_back() {
        let spec = BandSpec::PerType {
            bands: BTreeMap::from([("x".to_string(), StructureBand { tau: 0.1, epsilon: 0.0 })]),
            fallback: StructureBand { tau: 0.5, epsilon: 0.2 },
        };
        assert_eq!(spec.band_for("x").tau, 0.1);
        assert_eq!(spec.band_for("t").tau, 0.5);
    }

    #[test]
    fn ledger_format() {
        let ds = dataset(&[3, 3]);
        let band = BandSpec::Global(StructureBand { tau: 0.4, epsilon: 0.1 });
        let scored = score_dataset(&ds, &[-1.0, -2.0], &ontology(), &band, true).unwrap();
        let ledger = scored.ledger();
        let lines: Vec<&str> = ledger.lines().collect();
        assert!(lines[0].starts_with("# mean=-1.5 std=0.5"));
        assert_eq!(lines[2], "s0\t-1.0\t0.4\t0.0\t1.0");
    }

    proptest! {
        #[test]
        fn penalty_bounded_and_monotone(tau in 0.0f64..1.0, eps in 0.0f64..0.5, r1 in 0.0f64..1.0, r2 in 0.0f64..1.0) {
            let p1 = penalty(r1, tau, eps).unwrap();
            prop_assert!(p1 >= 0.0);
            prop_assert!(p1 <= tau.max(1.0 - tau) + 1e-12);
            let band = StructureBand { tau, epsilon: eps };
            if !band.contains(r1) && !band.contains(r2) && (r1 - tau).abs() < (r2 - tau).abs() {
                prop_assert!(p1 < penalty(r2, tau, eps).unwrap());
            }
        }

        #[test]
        fn equal_penalty_preserves_likelihood_order(lls in proptest::collection::vec(-50.0f64..0.0, 2..40)) {
            let ds = dataset(&vec![3; lls.len()]);
            let band = BandSpec::Global(StructureBand { tau: 0.4, epsilon: 0.1 });
            let scored = score_dataset(&ds, &lls, &ontology(), &band, true).unwrap();
            for (a, sa) in lls.iter().zip(&scored.samples) {
                for (b, sb) in lls.iter().zip(&scored.samples) {
                    if a < b {
                        prop_assert!(sa.reward <= sb.reward);
                    }
                }
            }
        }
    }
}
