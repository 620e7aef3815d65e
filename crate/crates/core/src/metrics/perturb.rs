use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{EventInstance, Span};
use crate::error::{Error, Result};
use crate::eval_agent::{score_batch, ExtractorModel};
use crate::ontology::Ontology;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PerturbMode {
    /// Removes each filled role's arguments with probability `fraction`.
    Empty,
    /// With probability `fraction`, deranges the role assignment of an
    /// instance's filled roles.
    Mismatch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbOutcome {
    pub instances: Vec<EventInstance>,
    /// Instances left as they were because a derangement was impossible.
    pub unperturbed: usize,
}

fn derangement(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    loop {
        perm.shuffle(rng);
        if perm.iter().enumerate().all(|(i, &p)| i != p) {
            return perm;
        }
    }
}

pub fn perturb(dataset: &[EventInstance], mode: PerturbMode, fraction: f64, seed: u64) -> Result<PerturbOutcome> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::OutOfRange(format!("perturbation fraction {fraction} outside (0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut unperturbed = 0;
    let mut out = Vec::with_capacity(dataset.len());
    for inst in dataset {
        let mut inst = inst.clone();
        match mode {
            PerturbMode::Empty => {
                let roles: Vec<String> = inst.arguments.keys().cloned().collect();
                for role in roles {
                    if rng.random::<f64>() < fraction {
                        inst.arguments.remove(&role);
                    }
                }
            }
            PerturbMode::Mismatch => {
                let roles: Vec<String> = inst.arguments.keys().cloned().collect();
                if roles.len() < 2 {
                    unperturbed += 1;
                } else if rng.random::<f64>() < fraction {
                    let perm = derangement(roles.len(), &mut rng);
                    let fillers: Vec<Vec<Span>> = roles.iter().map(|r| inst.arguments[r].clone()).collect();
                    let mut moved = BTreeMap::new();
                    for (i, role) in roles.iter().enumerate() {
                        moved.insert(role.clone(), fillers[perm[i]].clone());
                    }
                    inst.arguments = moved;
                }
            }
        }
        out.push(inst);
    }
    Ok(PerturbOutcome {
        instances: out,
        unperturbed,
    })
}

/// One-sided exact binomial sign test of "first > second" on paired values;
/// ties are dropped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignTest {
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
    /// P(X >= wins) for X ~ Binomial(wins + losses, 1/2).
    pub p_value: f64,
}

pub fn sign_test(first: &[f64], second: &[f64]) -> SignTest {
    let (mut wins, mut losses, mut ties) = (0, 0, 0);
    for (a, b) in first.iter().zip(second) {
        match a.partial_cmp(b) {
            Some(std::cmp::Ordering::Greater) => wins += 1,
            Some(std::cmp::Ordering::Less) => losses += 1,
            _ => ties += 1,
        }
    }
    let n = wins + losses;
    // log C(n, k) built incrementally
    let mut log_choose = vec![0.0f64; n + 1];
    for k in 1..=n {
        log_choose[k] = log_choose[k - 1] + ((n - k + 1) as f64).ln() - (k as f64).ln();
    }
    let half = (0.5f64).ln() * n as f64;
    let p_value = (wins..=n).map(|k| (log_choose[k] + half).exp()).sum::<f64>().min(1.0);
    SignTest {
        wins,
        losses,
        ties,
        p_value,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub empty_fraction: f64,
    pub mismatch_fraction: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            empty_fraction: 0.5,
            mismatch_fraction: 1.0,
        }
    }
}

/// Paired log-likelihoods of each sample as given, with arguments removed,
/// and with arguments swapped between roles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationReport {
    pub mean_normal: f64,
    pub mean_empty: f64,
    pub mean_mismatch: f64,
    pub normal: Vec<f64>,
    pub empty: Vec<f64>,
    pub mismatch: Vec<f64>,
    pub normal_vs_empty: SignTest,
    pub normal_vs_mismatch: SignTest,
    pub mismatch_unperturbed: usize,
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

pub fn sensitivity_probe(
    model: &impl ExtractorModel,
    dataset: &[EventInstance],
    ontology: &Ontology,
    config: &ProbeConfig,
    seed: u64,
) -> Result<PerturbationReport> {
    let empty = perturb(dataset, PerturbMode::Empty, config.empty_fraction, seed)?;
    let mismatch = perturb(dataset, PerturbMode::Mismatch, config.mismatch_fraction, seed.wrapping_add(1))?;
    let score = |insts: &[EventInstance]| score_batch(model, ontology, &insts.iter().collect::<Vec<_>>());
    let normal = score(dataset)?;
    let empty_scores = score(&empty.instances)?;
    let mismatch_scores = score(&mismatch.instances)?;
    Ok(PerturbationReport {
        mean_normal: mean(&normal),
        mean_empty: mean(&empty_scores),
        mean_mismatch: mean(&mismatch_scores),
        normal_vs_empty: sign_test(&normal, &empty_scores),
        normal_vs_mismatch: sign_test(&normal, &mismatch_scores),
        normal,
        empty: empty_scores,
        mismatch: mismatch_scores,
        mismatch_unperturbed: mismatch.unperturbed,
    })
}
