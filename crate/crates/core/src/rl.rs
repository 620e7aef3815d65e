//! Reward-weighted policy-gradient updates of both agents.
//!
//! Each update ascends `(1/N) Σ α_i ∇ log P(y_i | x_i)` with plain clipped
//! gradient steps, where `α_i` is the sample's reward. For the generation
//! agent `y` is the raw generated text given the schema prompt; for the
//! extractor it is the filled template of the synthetic instance given the
//! extractor input.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval_agent::{Example, ExtractorModel};
use crate::gen_agent::LMAdapter;
use crate::metrics::F1Report;
use crate::nn::{self, Dropout};
use crate::prompting::PromptPair;
use crate::reward::RewardStats;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RLConfig {
    /// Generation-agent step size.
    pub gen_lr: f64,
    /// Extractor step size.
    pub ext_lr: f64,
    pub rounds: usize,
    pub seeds: Vec<u64>,
    pub batch_size: usize,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip: Option<f64>,
}

impl Default for RLConfig {
    fn default() -> Self {
        Self {
            gen_lr: 0.05,
            ext_lr: 0.02,
            rounds: 5,
            seeds: vec![1, 2, 3],
            batch_size: 8,
            clip: Some(1.0),
        }
    }
}

impl RLConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: &str| Err(Error::Config { field: format!("rl.{field}"), reason: reason.into() });
        if !(self.gen_lr > 0.0) {
            return bad("gen_lr", "must be positive");
        }
        if !(self.ext_lr > 0.0) {
            return bad("ext_lr", "must be positive");
        }
        if self.rounds < 1 {
            return bad("rounds", "must be at least 1");
        }
        if self.seeds.is_empty() {
            return bad("seeds", "needs at least one seed");
        }
        if self.batch_size < 1 {
            return bad("batch_size", "must be at least 1");
        }
        if matches!(self.clip, Some(c) if !(c > 0.0)) {
            return bad("clip", "must be positive");
        }
        Ok(())
    }
}

/// What one revise pass did.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReviseReport {
    pub steps: usize,
    /// Batches dropped because their gradient was not finite.
    pub skipped: usize,
    pub mean_grad_norm: f64,
}

fn revise<T>(
    items: &[(T, f64)],
    vars: &[candle_core::Var],
    lr: f64,
    batch_size: usize,
    clip: Option<f64>,
    seed: u64,
    mut logprobs: impl FnMut(&[&T], &mut Dropout) -> Result<candle_core::Tensor>,
) -> Result<ReviseReport> {
    if items.is_empty() {
        return Err(Error::EmptyInput("scored samples to revise on"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = ReviseReport::default();
    let mut norm_sum = 0.0;
    for chunk in items.chunks(batch_size.max(1)) {
        let batch: Vec<&T> = chunk.iter().map(|(x, _)| x).collect();
        let alphas: Vec<f32> = chunk.iter().map(|(_, a)| *a as f32).collect();
        let mut drop_rng = ChaCha8Rng::seed_from_u64(rng.random());
        let lp = logprobs(&batch, &mut Dropout::on(&mut drop_rng))?;
        let weights = candle_core::Tensor::from_vec(alphas, chunk.len(), &nn::device())?;
        // minimizing -mean(α log P) ascends the expected reward
        let objective = (lp * weights)?.mean_all()?.neg()?;
        let grads = objective.backward()?;
        match nn::sgd_step(&grads, vars, lr, clip)? {
            Some(norm) => {
                report.steps += 1;
                norm_sum += norm;
            }
            None => {
                report.skipped += 1;
                log::warn!("non-finite gradient in revise batch {}; skipped", report.steps + report.skipped);
            }
        }
    }
    if report.steps > 0 {
        report.mean_grad_norm = norm_sum / report.steps as f64;
    }
    Ok(report)
}

/// One pass over `(prompt/output pair, α)` for the generation agent.
pub fn revise_generation(
    agent: &impl LMAdapter,
    scored: &[(PromptPair, f64)],
    lr: f64,
    batch_size: usize,
    clip: Option<f64>,
    seed: u64,
) -> Result<ReviseReport> {
    let vars = agent.trainable();
    revise(scored, &vars, lr, batch_size, clip, seed, |batch, dropout| {
        let owned: Vec<PromptPair> = batch.iter().map(|p| (*p).clone()).collect();
        agent.logprob_batch(&owned, dropout)
    })
}

/// One pass over `(extractor example, α)`; each example's target is the
/// filled template of its synthetic instance.
pub fn revise_extractor(
    model: &impl ExtractorModel,
    scored: &[(Example, f64)],
    lr: f64,
    batch_size: usize,
    clip: Option<f64>,
    seed: u64,
) -> Result<ReviseReport> {
    let vars = model.trainable();
    revise(scored, &vars, lr, batch_size, clip, seed, |batch, dropout| model.logprob_batch(batch, dropout))
}

/// Snapshot of one interaction round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub seed: u64,
    pub round: usize,
    pub dev: F1Report,
    pub samples: usize,
    /// Mean empty-argument ratio of the synthetic data.
    pub mean_empty_ratio: Option<f64>,
    pub mean_reward: Option<f64>,
    pub mean_log_likelihood: Option<f64>,
    /// No sample survived parsing; revise was skipped.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundState {
    pub seed: u64,
    pub round: usize,
    /// Directory with both agents' parameters after this round.
    pub checkpoint_dir: std::path::PathBuf,
    /// Synthetic data of this round with rewards attached (none for round 0).
    pub dataset_path: Option<std::path::PathBuf>,
    pub stats: Option<RewardStats>,
    pub metrics: RoundMetrics,
}

/// Exact, finite-difference and sampled gradients of the expected reward of
/// a softmax policy over a handful of actions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BanditCheck {
    pub analytic: Vec<f64>,
    pub finite_difference: Vec<f64>,
    pub monte_carlo: Vec<f64>,
    pub finite_difference_deviation: f64,
    pub monte_carlo_deviation: f64,
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / z).collect()
}

pub fn expected_reward(logits: &[f64], rewards: &[f64]) -> f64 {
    softmax(logits).iter().zip(rewards).map(|(p, r)| p * r).sum()
}

/// `E_a[r_a ∇ log π(a)]` by enumerating actions.
pub fn reinforce_gradient(logits: &[f64], rewards: &[f64]) -> Vec<f64> {
    let pi = softmax(logits);
    let mut grad = vec![0.0; logits.len()];
    for a in 0..logits.len() {
        for (j, g) in grad.iter_mut().enumerate() {
            let score = if j == a { 1.0 } else { 0.0 } - pi[j];
            *g += pi[a] * rewards[a] * score;
        }
    }
    grad
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Compares the closed-form gradient `π_j (r_j - E[r])` against central
/// finite differences of the expected reward and a sampled REINFORCE
/// estimate.
pub fn gradient_estimator_check(logits: &[f64], rewards: &[f64], samples: usize, seed: u64) -> BanditCheck {
    let pi = softmax(logits);
    let mean = expected_reward(logits, rewards);
    let analytic: Vec<f64> = pi.iter().zip(rewards).map(|(p, r)| p * (r - mean)).collect();

    let h = 1e-5;
    let finite_difference: Vec<f64> = (0..logits.len())
        .map(|j| {
            let mut up = logits.to_vec();
            let mut down = logits.to_vec();
            up[j] += h;
            down[j] -= h;
            (expected_reward(&up, rewards) - expected_reward(&down, rewards)) / (2.0 * h)
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut monte_carlo = vec![0.0; logits.len()];
    for _ in 0..samples {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut a = pi.len() - 1;
        for (i, p) in pi.iter().enumerate() {
            acc += p;
            if u < acc {
                a = i;
                break;
            }
        }
        for (j, g) in monte_carlo.iter_mut().enumerate() {
            let score = if j == a { 1.0 } else { 0.0 } - pi[j];
            *g += rewards[a] * score;
        }
    }
    monte_carlo.iter_mut().for_each(|g| *g /= samples.max(1) as f64);

    BanditCheck {
        finite_difference_deviation: max_abs_diff(&finite_difference, &analytic),
        monte_carlo_deviation: max_abs_diff(&monte_carlo, &analytic),
        analytic,
        finite_difference,
        monte_carlo,
    }
}

/// Expected reward after each of `steps` ascent steps along the REINFORCE
/// gradient, starting value first.
pub fn bandit_ascent(logits: &[f64], rewards: &[f64], lr: f64, steps: usize) -> Vec<f64> {
    let mut theta = logits.to_vec();
    let mut curve = vec![expected_reward(&theta, rewards)];
    for _ in 0..steps {
        let g = reinforce_gradient(&theta, rewards);
        theta.iter_mut().zip(&g).for_each(|(t, g)| *t += lr * g);
        curve.push(expected_reward(&theta, rewards));
    }
    curve
}
