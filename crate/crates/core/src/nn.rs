//! Small transformer building blocks on top of candle.
//!
//! Parameters live in a [`ParamStore`] initialized from a seeded RNG, and
//! dropout masks are drawn from a caller-provided RNG, so that training is
//! bit-reproducible for a fixed seed.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{DType, Device, Tensor, Var, D};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

pub fn device() -> Device {
    Device::Cpu
}

/// Named trainable tensors.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn insert(&mut self, name: String, tensor: Tensor) -> Result<Var> {
        let var = Var::from_tensor(&tensor)?;
        self.vars.insert(name, var.clone());
        Ok(var)
    }

    pub fn normal(&mut self, name: impl Into<String>, shape: &[usize], std: f64, rng: &mut ChaCha8Rng) -> Result<Var> {
        let n: usize = shape.iter().product();
        let dist = Normal::new(0.0f64, std).map_err(|e| Error::OutOfRange(e.to_string()))?;
        let data: Vec<f32> = (0..n).map(|_| dist.sample(rng) as f32).collect();
        self.insert(name.into(), Tensor::from_vec(data, shape, &device())?)
    }

    pub fn constant(&mut self, name: impl Into<String>, shape: &[usize], value: f32) -> Result<Var> {
        let t = (Tensor::ones(shape, DType::F32, &device())? * value as f64)?;
        self.insert(name.into(), t)
    }

    pub fn vars(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    pub fn all(&self) -> Vec<Var> {
        self.vars.values().cloned().collect()
    }

    /// Variables whose name satisfies `pred`.
    pub fn select(&self, pred: impl Fn(&str) -> bool) -> Vec<Var> {
        self.vars.iter().filter(|(k, _)| pred(k)).map(|(_, v)| v.clone()).collect()
    }

    pub fn num_params(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    pub fn snapshot(&self) -> Result<BTreeMap<String, Vec<f32>>> {
        self.vars
            .iter()
            .map(|(k, v)| Ok((k.clone(), v.as_tensor().flatten_all()?.to_vec1::<f32>()?)))
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let map: HashMap<String, Tensor> = self.vars.iter().map(|(k, v)| (k.clone(), v.as_tensor().clone())).collect();
        candle_core::safetensors::save(&map, path)?;
        Ok(())
    }

    /// Overwrites every variable with the tensor of the same name in `path`.
    pub fn load(&self, path: &Path) -> Result<()> {
        let loaded = candle_core::safetensors::load(path, &device())?;
        for (name, var) in &self.vars {
            let t = loaded.get(name).ok_or_else(|| Error::Config {
                field: name.clone(),
                reason: format!("missing from checkpoint {}", path.display()),
            })?;
            var.set(t)?;
        }
        Ok(())
    }

    /// Copies values from another store with identical names and shapes.
    pub fn copy_from(&self, other: &ParamStore) -> Result<()> {
        for (name, var) in &self.vars {
            let src = other.vars.get(name).ok_or_else(|| Error::Config {
                field: name.clone(),
                reason: "missing from source store".into(),
            })?;
            var.set(src.as_tensor())?;
        }
        Ok(())
    }
}

/// Source of dropout masks; inference passes `None`.
pub struct Dropout<'a> {
    rng: Option<&'a mut ChaCha8Rng>,
}

impl<'a> Dropout<'a> {
    pub fn off() -> Self {
        Self { rng: None }
    }

    pub fn on(rng: &'a mut ChaCha8Rng) -> Self {
        Self { rng: Some(rng) }
    }

    pub fn apply(&mut self, x: &Tensor, p: f64) -> Result<Tensor> {
        let Some(rng) = self.rng.as_deref_mut() else {
            return Ok(x.clone());
        };
        if p <= 0.0 {
            return Ok(x.clone());
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f32> = (0..x.elem_count())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep as f32 })
            .collect();
        let mask = Tensor::from_vec(mask, x.shape(), x.device())?;
        Ok(x.mul(&mask)?)
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    weight: Var,
    bias: Var,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let std = (1.0 / d_in as f64).sqrt();
        Ok(Self {
            weight: store.normal(format!("{name}.weight"), &[d_out, d_in], std, rng)?,
            bias: store.constant(format!("{name}.bias"), &[d_out], 0.0)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let w = self.weight.as_tensor().t()?;
        Ok(x.broadcast_matmul(&w)?.broadcast_add(self.bias.as_tensor())?)
    }
}

/// Low-rank adapter settings.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoraConfig {
    pub rank: usize,
    /// Scaling numerator; the adapter output is multiplied by `alpha / rank`.
    pub alpha: f64,
    pub dropout: f64,
}

impl Default for LoraConfig {
    fn default() -> Self {
        Self {
            rank: 8,
            alpha: 32.0,
            dropout: 0.05,
        }
    }
}

/// A linear layer with an additive low-rank adapter `B A`; `B` starts at
/// zero so the adapter is initially the identity on the base layer.
#[derive(Debug, Clone)]
pub struct LoraLinear {
    base: Linear,
    a: Var,
    b: Var,
    scale: f64,
    dropout: f64,
}

impl LoraLinear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_out: usize,
        cfg: &LoraConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let base = Linear::new(store, name, d_in, d_out, rng)?;
        let a = store.normal(format!("{name}.lora_a"), &[cfg.rank, d_in], (1.0 / d_in as f64).sqrt(), rng)?;
        let b = store.constant(format!("{name}.lora_b"), &[d_out, cfg.rank], 0.0)?;
        Ok(Self {
            base,
            a,
            b,
            scale: cfg.alpha / cfg.rank as f64,
            dropout: cfg.dropout,
        })
    }

    pub fn forward(&self, x: &Tensor, dropout: &mut Dropout) -> Result<Tensor> {
        let base = self.base.forward(x)?;
        let h = dropout.apply(x, self.dropout)?;
        let low = h
            .broadcast_matmul(&self.a.as_tensor().t()?)?
            .broadcast_matmul(&self.b.as_tensor().t()?)?;
        Ok((base + (low * self.scale)?)?)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    gamma: Var,
    beta: Var,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, d: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.constant(format!("{name}.gamma"), &[d], 1.0)?,
            beta: store.constant(format!("{name}.beta"), &[d], 0.0)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(candle_nn::ops::layer_norm_slow(x, self.gamma.as_tensor(), self.beta.as_tensor(), 1e-5)?)
    }
}

/// Query/value projections are low-rank adapted; key/output are plain.
#[derive(Debug, Clone)]
pub struct Attention {
    q: LoraLinear,
    k: Linear,
    v: LoraLinear,
    o: Linear,
    heads: usize,
}

impl Attention {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, heads: usize, lora: &LoraConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(Self {
            q: LoraLinear::new(store, &format!("{name}.q"), d, d, lora, rng)?,
            k: Linear::new(store, &format!("{name}.k"), d, d, rng)?,
            v: LoraLinear::new(store, &format!("{name}.v"), d, d, lora, rng)?,
            o: Linear::new(store, &format!("{name}.o"), d, d, rng)?,
            heads,
        })
    }

    fn split_heads(&self, x: &Tensor) -> Result<Tensor> {
        let (b, t, d) = x.dims3()?;
        Ok(x.reshape((b, t, self.heads, d / self.heads))?.transpose(1, 2)?.contiguous()?)
    }

    /// `query` (B, Tq, d) attends over `memory` (B, Tk, d). `mask` is an
    /// additive bias broadcastable to (B, heads, Tq, Tk).
    pub fn forward(&self, query: &Tensor, memory: &Tensor, mask: Option<&Tensor>, dropout: &mut Dropout) -> Result<Tensor> {
        let (b, tq, d) = query.dims3()?;
        let q = self.split_heads(&self.q.forward(query, dropout)?)?;
        let k = self.split_heads(&self.k.forward(memory)?)?;
        let v = self.split_heads(&self.v.forward(memory, dropout)?)?;
        let scale = 1.0 / ((d / self.heads) as f64).sqrt();
        let mut scores = (q.matmul(&k.t()?.contiguous()?)? * scale)?;
        if let Some(mask) = mask {
            scores = scores.broadcast_add(mask)?;
        }
        let weights = candle_nn::ops::softmax_last_dim(&scores)?;
        let ctx = weights.matmul(&v)?.transpose(1, 2)?.reshape((b, tq, d))?;
        self.o.forward(&ctx)
    }
}

#[derive(Debug, Clone)]
pub struct FeedForward {
    up: Linear,
    down: Linear,
}

impl FeedForward {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(Self {
            up: Linear::new(store, &format!("{name}.up"), d, hidden, rng)?,
            down: Linear::new(store, &format!("{name}.down"), hidden, d, rng)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.down.forward(&self.up.forward(x)?.gelu_erf()?)
    }
}

/// Pre-norm block: self-attention, optional cross-attention, feed-forward.
#[derive(Debug, Clone)]
pub struct Block {
    ln_self: LayerNorm,
    self_attn: Attention,
    cross: Option<(LayerNorm, Attention)>,
    ln_ff: LayerNorm,
    ff: FeedForward,
}

impl Block {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d: usize,
        heads: usize,
        hidden: usize,
        with_cross: bool,
        lora: &LoraConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let cross = if with_cross {
            Some((
                LayerNorm::new(store, &format!("{name}.ln_cross"), d)?,
                Attention::new(store, &format!("{name}.cross"), d, heads, lora, rng)?,
            ))
        } else {
            None
        };
        Ok(Self {
            ln_self: LayerNorm::new(store, &format!("{name}.ln_self"), d)?,
            self_attn: Attention::new(store, &format!("{name}.self"), d, heads, lora, rng)?,
            cross,
            ln_ff: LayerNorm::new(store, &format!("{name}.ln_ff"), d)?,
            ff: FeedForward::new(store, &format!("{name}.ff"), d, hidden, rng)?,
        })
    }

    /// `memory` is the encoder output with its optional key mask.
    pub fn forward(
        &self,
        x: &Tensor,
        self_mask: Option<&Tensor>,
        memory: Option<(&Tensor, Option<&Tensor>)>,
        dropout: &mut Dropout,
    ) -> Result<Tensor> {
        let h = self.ln_self.forward(x)?;
        let mut x = (x + self.self_attn.forward(&h, &h, self_mask, dropout)?)?;
        if let (Some((ln, attn)), Some((mem, mem_mask))) = (&self.cross, memory) {
            let h = ln.forward(&x)?;
            x = (&x + attn.forward(&h, mem, mem_mask, dropout)?)?;
        }
        let h = self.ln_ff.forward(&x)?;
        Ok((&x + self.ff.forward(&h)?)?)
    }
}

/// Additive causal mask of shape (t, t).
pub fn causal_mask(t: usize) -> Result<Tensor> {
    let data: Vec<f32> = (0..t)
        .flat_map(|i| (0..t).map(move |j| if j <= i { 0.0 } else { f32::NEG_INFINITY }))
        .collect();
    Ok(Tensor::from_vec(data, (t, t), &device())?)
}

/// Token + learned position embeddings; the token table doubles as the
/// output projection.
#[derive(Debug, Clone)]
pub struct Embeddings {
    pub tokens: Var,
    positions: Var,
    max_len: usize,
}

impl Embeddings {
    /// Position table of its own over an existing token table.
    pub fn sharing(&self, store: &mut ParamStore, name: &str, max_len: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let d = self.tokens.dim(1)?;
        Ok(Self {
            tokens: self.tokens.clone(),
            positions: store.normal(format!("{name}.positions"), &[max_len, d], 0.02, rng)?,
            max_len,
        })
    }

    pub fn new(store: &mut ParamStore, name: &str, vocab: usize, max_len: usize, d: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(Self {
            tokens: store.normal(format!("{name}.tokens"), &[vocab, d], 0.1, rng)?,
            positions: store.normal(format!("{name}.positions"), &[max_len, d], 0.02, rng)?,
            max_len,
        })
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    /// (len) ids -> (1, len, d)
    pub fn embed(&self, ids: &[u32]) -> Result<Tensor> {
        if ids.len() > self.max_len {
            return Err(Error::ContextLength {
                len: ids.len(),
                limit: self.max_len,
            });
        }
        self.embed_batch(&[ids.to_vec()])
    }

    /// Equal-length rows -> (B, len, d)
    pub fn embed_batch(&self, rows: &[Vec<u32>]) -> Result<Tensor> {
        let t = rows[0].len();
        if t > self.max_len {
            return Err(Error::ContextLength {
                len: t,
                limit: self.max_len,
            });
        }
        let flat: Vec<u32> = rows.iter().flatten().copied().collect();
        let ids = Tensor::from_vec(flat, (rows.len() * t,), &device())?;
        let tok = self.tokens.as_tensor().index_select(&ids, 0)?.reshape((rows.len(), t, ()))?;
        let pos = self.positions.as_tensor().narrow(0, 0, t)?;
        Ok(tok.broadcast_add(&pos)?)
    }

    /// (B, T, d) -> (B, T, vocab)
    pub fn logits(&self, h: &Tensor) -> Result<Tensor> {
        Ok(h.broadcast_matmul(&self.tokens.as_tensor().t()?)?)
    }
}

/// Bias added to logits of disallowed tokens. Large enough that their
/// probability underflows to exactly zero, finite so that zero-weighted
/// padding positions never turn into NaN.
pub const MASKED_LOGIT: f32 = -1e9;

/// Additive mask over the vocabulary, one row per entry of `allowed`:
/// (rows, 1, V).
pub fn vocab_bias(allowed: &[Vec<bool>]) -> Result<Tensor> {
    let v = allowed.first().map_or(0, Vec::len);
    let data: Vec<f32> = allowed
        .iter()
        .flatten()
        .map(|&a| if a { 0.0 } else { MASKED_LOGIT })
        .collect();
    Ok(Tensor::from_vec(data, (allowed.len(), 1, v), &device())?)
}

/// Additive key mask (B, 1, 1, T) hiding padding: `lengths[b]` real
/// positions per row.
pub fn key_padding_mask(lengths: &[usize], t: usize) -> Result<Tensor> {
    let data: Vec<f32> = lengths
        .iter()
        .flat_map(|&len| (0..t).map(move |j| if j < len { 0.0 } else { MASKED_LOGIT }))
        .collect();
    Ok(Tensor::from_vec(data, (lengths.len(), 1, 1, t), &device())?)
}

/// Pads rows to a common length with `pad`.
pub fn pad_rows(rows: &[Vec<u32>], pad: u32) -> (Vec<Vec<u32>>, usize) {
    let t = rows.iter().map(Vec::len).max().unwrap_or(0);
    let padded = rows
        .iter()
        .map(|r| {
            let mut r = r.clone();
            r.resize(t, pad);
            r
        })
        .collect();
    (padded, t)
}

/// Gathers `log_probs[b, t, targets[b][t]]` from a (B, T, V) tensor into a
/// (B, T) tensor.
pub fn gather_targets(log_probs: &Tensor, targets: &[Vec<u32>]) -> Result<Tensor> {
    let (b, t, _) = log_probs.dims3()?;
    let flat: Vec<u32> = targets.iter().flatten().copied().collect();
    let idx = Tensor::from_vec(flat, (b, t, 1), &device())?;
    Ok(log_probs.gather(&idx, D::Minus1)?.squeeze(D::Minus1)?)
}

/// Sums `values` (B, T) over positions where `weights` (B rows of T) is 1,
/// giving a (B,) tensor.
pub fn masked_row_sum(values: &Tensor, weights: &[Vec<f32>]) -> Result<Tensor> {
    let (b, t) = values.dims2()?;
    let flat: Vec<f32> = weights.iter().flatten().copied().collect();
    let w = Tensor::from_vec(flat, (b, t), &device())?;
    Ok(values.mul(&w)?.sum(D::Minus1)?)
}

/// Global L2 norm of gradients over `vars`.
pub fn grad_norm(grads: &candle_core::backprop::GradStore, vars: &[Var]) -> Result<f64> {
    let mut total = 0f64;
    for v in vars {
        if let Some(g) = grads.get(v.as_tensor()) {
            total += g.sqr()?.sum_all()?.to_scalar::<f32>()? as f64;
        }
    }
    Ok(total.sqrt())
}

/// Plain gradient step `v <- v - lr * clip(g)`. Returns the pre-clip norm,
/// or `None` (and leaves parameters untouched) when the gradient is not
/// finite.
pub fn sgd_step(grads: &candle_core::backprop::GradStore, vars: &[Var], lr: f64, clip: Option<f64>) -> Result<Option<f64>> {
    let norm = grad_norm(grads, vars)?;
    if !norm.is_finite() {
        return Ok(None);
    }
    let factor = match clip {
        Some(c) if norm > c && norm > 0.0 => c / norm,
        _ => 1.0,
    };
    for v in vars {
        if let Some(g) = grads.get(v.as_tensor()) {
            let updated = (v.as_tensor() - (g * (lr * factor))?)?;
            v.set(&updated)?;
        }
    }
    Ok(Some(norm))
}

/// Rescales gradients so their global norm is at most `clip`, returning a
/// new store for use with a stateful optimizer.
pub fn clip_grads(grads: candle_core::backprop::GradStore, vars: &[Var], clip: f64) -> Result<(candle_core::backprop::GradStore, f64)> {
    let norm = grad_norm(&grads, vars)?;
    if !(norm > clip) {
        return Ok((grads, norm));
    }
    let mut grads = grads;
    let factor = clip / norm;
    for v in vars {
        if let Some(g) = grads.remove(v.as_tensor()) {
            grads.insert(v.as_tensor(), (g * factor)?);
        }
    }
    Ok((grads, norm))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn causal_mask_blocks_future() {
        let m = causal_mask(3).unwrap().to_vec2::<f32>().unwrap();
        assert_eq!(m[0][0], 0.0);
        assert!(m[0][1].is_infinite());
        assert_eq!(m[2][1], 0.0);
    }

    #[test]
    fn seeded_init_is_reproducible() {
        let build = || {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let mut store = ParamStore::new();
            Linear::new(&mut store, "l", 4, 3, &mut rng).unwrap();
            store.snapshot().unwrap()
        };
        assert_eq!(build(), build());
    }

    #[test]
    fn lora_starts_as_base_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let lora = LoraLinear::new(&mut store, "q", 6, 6, &LoraConfig::default(), &mut rng).unwrap();
        let x = Tensor::ones((1, 2, 6), DType::F32, &device()).unwrap();
        let mut drop_rng = ChaCha8Rng::seed_from_u64(1);
        let with = lora.forward(&x, &mut Dropout::on(&mut drop_rng)).unwrap();
        let base = lora.base.forward(&x).unwrap();
        let diff = (with - base).unwrap().abs().unwrap().sum_all().unwrap().to_scalar::<f32>().unwrap();
        assert_eq!(diff, 0.0);
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut a = ParamStore::new();
        Linear::new(&mut a, "l", 3, 2, &mut rng).unwrap();
        let mut b = ParamStore::new();
        Linear::new(&mut b, "l", 3, 2, &mut rng).unwrap();
        assert_ne!(a.snapshot().unwrap(), b.snapshot().unwrap());
        a.save(&dir.path().join("x.safetensors")).unwrap();
        b.load(&dir.path().join("x.safetensors")).unwrap();
        assert_eq!(a.snapshot().unwrap(), b.snapshot().unwrap());
    }
}
