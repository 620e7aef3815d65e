//! The evaluation agent: an encoder-decoder that reads
//! `<s> template <s> </s> document </s>` and writes the filled template,
//! restricted to tokens of the document, the template and a few markers.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use candle_core::{Tensor, Var, D};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, EventInstance, Provenance, Span};
use crate::error::{Error, IoContext, Result};
use crate::gen_agent::{supervised_epochs, TrainConfig};
use crate::nn::{self, causal_mask, Block, Dropout, Embeddings, LayerNorm, LoraConfig, ParamStore};
use crate::ontology::{EventSchema, Ontology};
use crate::prompting::{align_filled, anchor_fillers, build_extractor_input, fill_template, LIST_DELIMITER};
use crate::vocab::{Vocab, BOS, EOS, PAD};

/// Token ids the extractor may emit for one (schema, document) pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VocabularyMask {
    allowed: Vec<bool>,
}

impl VocabularyMask {
    /// Document tokens, template tokens (placeholders included), the list
    /// delimiter and the end token.
    pub fn new(vocab: &Vocab, schema: &EventSchema, document: &Document) -> Self {
        let mut allowed = vec![false; vocab.len()];
        for t in &document.tokens {
            allowed[vocab.id(t) as usize] = true;
        }
        for t in schema.template.split_whitespace() {
            allowed[vocab.id(t) as usize] = true;
        }
        allowed[vocab.id(LIST_DELIMITER.trim()) as usize] = true;
        allowed[vocab.special(EOS) as usize] = true;
        Self { allowed }
    }

    pub fn contains(&self, id: u32) -> bool {
        self.allowed.get(id as usize).copied().unwrap_or(false)
    }

    pub fn ids(&self) -> BTreeSet<u32> {
        (0..self.allowed.len() as u32).filter(|&i| self.allowed[i as usize]).collect()
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.allowed
    }
}

/// One prepared input (and optional target) for the extractor.
#[derive(Debug, Clone)]
pub struct Example {
    pub source: Vec<u32>,
    /// Target ids including the end token.
    pub target: Vec<u32>,
    pub mask: VocabularyMask,
}

/// What a conditional generator must offer to act as the evaluation agent.
pub trait ExtractorModel {
    fn vocab(&self) -> &Vocab;

    /// Per-example sum of target token log-probabilities under the mask, as
    /// a differentiable (B,) tensor.
    fn logprob_batch(&self, examples: &[&Example], dropout: &mut Dropout) -> Result<Tensor>;

    /// Greedy masked decoding. Returns the emitted tokens (without the end
    /// token) and whether the length budget cut the output short.
    fn decode_batch(&self, examples: &[&Example]) -> Result<Vec<(Vec<u32>, bool)>>;

    fn trainable(&self) -> Vec<Var>;

    fn params(&self) -> &ParamStore;

    fn length_normalize(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractorConfig {
    pub d_model: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub heads: usize,
    pub hidden: usize,
    pub max_source: usize,
    pub max_target: usize,
    /// Divide log-likelihoods by the target length.
    pub length_normalize: bool,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            encoder_layers: 2,
            decoder_layers: 2,
            heads: 4,
            hidden: 256,
            max_source: 128,
            max_target: 48,
            length_normalize: false,
        }
    }
}

/// Encoder-decoder transformer with one token table shared by encoder,
/// decoder and output projection.
pub struct Seq2Seq {
    pub vocab: Vocab,
    pub config: ExtractorConfig,
    store: ParamStore,
    enc_embed: Embeddings,
    dec_embed: Embeddings,
    encoder: Vec<Block>,
    decoder: Vec<Block>,
    ln_enc: LayerNorm,
    ln_dec: LayerNorm,
}

impl Seq2Seq {
    pub fn new(vocab: Vocab, config: ExtractorConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d = config.d_model;
        let lora = LoraConfig {
            dropout: 0.0,
            ..LoraConfig::default()
        };
        let enc_embed = Embeddings::new(&mut store, "enc_embed", vocab.len(), config.max_source, d, &mut rng)?;
        let dec_embed = enc_embed.sharing(&mut store, "dec_embed", config.max_target + 1, &mut rng)?;
        let encoder = (0..config.encoder_layers)
            .map(|i| Block::new(&mut store, &format!("enc{i}"), d, config.heads, config.hidden, false, &lora, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let decoder = (0..config.decoder_layers)
            .map(|i| Block::new(&mut store, &format!("dec{i}"), d, config.heads, config.hidden, true, &lora, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            ln_enc: LayerNorm::new(&mut store, "ln_enc", d)?,
            ln_dec: LayerNorm::new(&mut store, "ln_dec", d)?,
            vocab,
            config,
            store,
            enc_embed,
            dec_embed,
            encoder,
            decoder,
        })
    }

    fn encode(&self, examples: &[&Example], dropout: &mut Dropout) -> Result<(Tensor, Tensor)> {
        let rows: Vec<Vec<u32>> = examples.iter().map(|e| e.source.clone()).collect();
        let lengths: Vec<usize> = rows.iter().map(Vec::len).collect();
        let (rows, t) = nn::pad_rows(&rows, self.vocab.special(PAD));
        let key_mask = nn::key_padding_mask(&lengths, t)?;
        let mut h = self.enc_embed.embed_batch(&rows)?;
        for block in &self.encoder {
            h = block.forward(&h, Some(&key_mask), None, dropout)?;
        }
        Ok((self.ln_enc.forward(&h)?, key_mask))
    }

    /// Masked log-probabilities (B, T, V) for decoder inputs `rows`.
    fn decode_log_probs(
        &self,
        rows: &[Vec<u32>],
        memory: &(Tensor, Tensor),
        bias: &Tensor,
        dropout: &mut Dropout,
    ) -> Result<Tensor> {
        let t = rows[0].len();
        let mut h = self.dec_embed.embed_batch(rows)?;
        let mask = causal_mask(t)?;
        for block in &self.decoder {
            h = block.forward(&h, Some(&mask), Some((&memory.0, Some(&memory.1))), dropout)?;
        }
        let logits = self.dec_embed.logits(&self.ln_dec.forward(&h)?)?.broadcast_add(bias)?;
        Ok(candle_nn::ops::log_softmax(&logits, D::Minus1)?)
    }

    /// Whether `example` fits the source and target length limits.
    pub fn fits(&self, example: &Example) -> bool {
        example.source.len() <= self.config.max_source && example.target.len() <= self.config.max_target + 1
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).io_context(|| format!("creating {}", dir.display()))?;
        self.store.save(&dir.join("extractor.safetensors"))?;
        fs::write(dir.join("extractor.json"), serde_json::to_string_pretty(&self.config)?)
            .io_context(|| format!("writing {}", dir.display()))?;
        self.vocab.save(&dir.join("extractor_vocab.json"))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join("extractor.json")).io_context(|| format!("reading {}", dir.display()))?;
        let config: ExtractorConfig = serde_json::from_str(&text)?;
        let vocab = Vocab::load(&dir.join("extractor_vocab.json"))?;
        let model = Self::new(vocab, config, 0)?;
        model.store.load(&dir.join("extractor.safetensors"))?;
        Ok(model)
    }
}

impl ExtractorModel for Seq2Seq {
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn logprob_batch(&self, examples: &[&Example], dropout: &mut Dropout) -> Result<Tensor> {
        for e in examples {
            if e.source.len() > self.config.max_source {
                return Err(Error::ContextLength {
                    len: e.source.len(),
                    limit: self.config.max_source,
                });
            }
            if e.target.len() > self.config.max_target + 1 {
                return Err(Error::ContextLength {
                    len: e.target.len(),
                    limit: self.config.max_target + 1,
                });
            }
            if let Some(&bad) = e.target.iter().find(|&&id| !e.mask.contains(id)) {
                return Err(Error::MaskViolation {
                    token: self.vocab.token(bad).to_string(),
                });
            }
        }
        let memory = self.encode(examples, dropout)?;
        let bos = self.vocab.special(BOS);
        let eos = self.vocab.special(EOS);
        let inputs: Vec<Vec<u32>> = examples
            .iter()
            .map(|e| std::iter::once(bos).chain(e.target[..e.target.len() - 1].iter().copied()).collect())
            .collect();
        let (inputs, t) = nn::pad_rows(&inputs, self.vocab.special(PAD));
        let mut targets = Vec::with_capacity(examples.len());
        let mut weights = Vec::with_capacity(examples.len());
        for e in examples {
            let mut tg = e.target.clone();
            let scale = if self.config.length_normalize { 1.0 / e.target.len() as f32 } else { 1.0 };
            let mut w = vec![scale; tg.len()];
            tg.resize(t, eos);
            w.resize(t, 0.0);
            targets.push(tg);
            weights.push(w);
        }
        let masks: Vec<Vec<bool>> = examples.iter().map(|e| e.mask.allowed.clone()).collect();
        let bias = nn::vocab_bias(&masks)?;
        let log_probs = self.decode_log_probs(&inputs, &memory, &bias, dropout)?;
        let picked = nn::gather_targets(&log_probs, &targets)?;
        nn::masked_row_sum(&picked, &weights)
    }

    fn decode_batch(&self, examples: &[&Example]) -> Result<Vec<(Vec<u32>, bool)>> {
        if examples.is_empty() {
            return Ok(Vec::new());
        }
        for e in examples {
            if e.source.len() > self.config.max_source {
                return Err(Error::ContextLength {
                    len: e.source.len(),
                    limit: self.config.max_source,
                });
            }
        }
        let mut off = Dropout::off();
        let memory = self.encode(examples, &mut off)?;
        let masks: Vec<Vec<bool>> = examples.iter().map(|e| e.mask.allowed.clone()).collect();
        let bias = nn::vocab_bias(&masks)?;
        let eos = self.vocab.special(EOS);
        let mut rows: Vec<Vec<u32>> = vec![vec![self.vocab.special(BOS)]; examples.len()];
        let mut done = vec![false; examples.len()];
        for _ in 0..self.config.max_target {
            if done.iter().all(|&d| d) {
                break;
            }
            let lp = self.decode_log_probs(&rows, &memory, &bias, &mut off)?;
            let t = rows[0].len();
            let last = lp.narrow(1, t - 1, 1)?.squeeze(1)?.to_vec2::<f32>()?;
            for (b, row) in rows.iter_mut().enumerate() {
                let next = if done[b] {
                    eos
                } else {
                    // argmax over allowed ids, lowest id on ties
                    let mut best = eos;
                    let mut best_v = f32::NEG_INFINITY;
                    for (id, &v) in last[b].iter().enumerate() {
                        if examples[b].mask.allowed[id] && v > best_v {
                            best_v = v;
                            best = id as u32;
                        }
                    }
                    best
                };
                done[b] |= next == eos;
                row.push(next);
            }
        }
        Ok(rows
            .into_iter()
            .zip(done)
            .map(|(row, finished)| (row[1..].iter().copied().take_while(|&id| id != eos).collect(), !finished))
            .collect())
    }

    fn trainable(&self) -> Vec<Var> {
        self.store.all()
    }

    fn params(&self) -> &ParamStore {
        &self.store
    }

    fn length_normalize(&self) -> bool {
        self.config.length_normalize
    }
}

/// Builds the extractor example for `document`, with the filled template of
/// `instance` as target when given.
pub fn example(
    model: &impl ExtractorModel,
    schema: &EventSchema,
    document: &Document,
    instance: Option<&EventInstance>,
) -> Result<Example> {
    let vocab = model.vocab();
    let source_text = build_extractor_input(schema, document);
    let source: Vec<u32> = source_text.split_whitespace().map(|t| vocab.id(t)).collect();
    let mut target = Vec::new();
    if let Some(inst) = instance {
        let filled = fill_template(schema, inst)?;
        target.extend(filled.filled_text.split_whitespace().map(|t| vocab.id(t)));
        target.push(vocab.special(EOS));
    }
    Ok(Example {
        source,
        target,
        mask: VocabularyMask::new(vocab, schema, document),
    })
}

/// Supervised training on gold filled templates. Returns per-epoch mean
/// negative log-likelihood.
pub fn train_extractor(
    model: &mut Seq2Seq,
    seen_data: &[EventInstance],
    ontology: &Ontology,
    train: &TrainConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    if seen_data.is_empty() {
        return Err(Error::EmptyInput("seen training data"));
    }
    let examples = seen_data
        .iter()
        .map(|inst| example(&*model, ontology.get(&inst.event_type_id)?, &inst.document, Some(inst)))
        .collect::<Result<Vec<_>>>()?;
    let vars = model.trainable();
    let model = &*model;
    supervised_epochs(&examples, vars, train, seed, |batch, dropout| model.logprob_batch(batch, dropout))
}

/// ℓ = log P(filled template | extractor input) for one instance.
pub fn score_sample(model: &impl ExtractorModel, schema: &EventSchema, instance: &EventInstance) -> Result<f64> {
    let ex = example(model, schema, &instance.document, Some(instance))?;
    let lp = model.logprob_batch(&[&ex], &mut Dropout::off())?;
    Ok(lp.to_vec1::<f32>()?[0] as f64)
}

const SCORE_CHUNK: usize = 32;

/// [`score_sample`] over many instances, batched.
pub fn score_batch(model: &impl ExtractorModel, ontology: &Ontology, instances: &[&EventInstance]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(instances.len());
    for chunk in instances.chunks(SCORE_CHUNK) {
        let examples = chunk
            .iter()
            .map(|inst| example(model, ontology.get(&inst.event_type_id)?, &inst.document, Some(inst)))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&Example> = examples.iter().collect();
        let lp = model.logprob_batch(&refs, &mut Dropout::off())?;
        out.extend(lp.to_vec1::<f32>()?.into_iter().map(f64::from));
    }
    Ok(out)
}

/// Outcome of extracting one event.
#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    pub instance: EventInstance,
    pub decoded: String,
    pub truncated: bool,
    /// Set when the output could not be aligned to the template.
    pub diagnostic: Option<String>,
    /// Aligned argument strings that were not found in the document.
    pub dropped: usize,
}

fn finish_extraction(
    vocab: &Vocab,
    schema: &EventSchema,
    document: &Document,
    trigger: &Span,
    ids: &[u32],
    truncated: bool,
) -> Result<Extraction> {
    let tokens: Vec<String> = ids.iter().map(|&id| vocab.token(id).to_string()).collect();
    let decoded = tokens.join(" ");
    if truncated {
        log::warn!("extraction for {} hit the length budget; output truncated", document.doc_id);
    }
    let (arguments, dropped, diagnostic) = match align_filled(schema, &tokens) {
        Some(al) => {
            let (args, dropped) = anchor_fillers(schema, document, &al.fillers);
            (args, dropped, None)
        }
        None => (
            Default::default(),
            0,
            Some(format!("output `{decoded}` does not follow template `{}`", schema.template)),
        ),
    };
    let instance = EventInstance::new(
        document.clone(),
        schema.event_type_id.clone(),
        trigger.clone(),
        arguments,
        Provenance::Predicted,
    )
    .map_err(|e| Error::OutOfRange(format!("trigger for {}: {e}", document.doc_id)))?;
    Ok(Extraction {
        instance,
        decoded,
        truncated,
        diagnostic,
        dropped,
    })
}

/// Extracts the arguments of the event evoked by `trigger` in `document`.
pub fn extract(model: &impl ExtractorModel, schema: &EventSchema, document: &Document, trigger: &Span) -> Result<Extraction> {
    let ex = example(model, schema, document, None)?;
    let (ids, truncated) = model.decode_batch(&[&ex])?.remove(0);
    finish_extraction(model.vocab(), schema, document, trigger, &ids, truncated)
}

/// Extracts arguments for each gold instance's document and trigger.
pub fn extract_batch(model: &impl ExtractorModel, ontology: &Ontology, gold: &[EventInstance]) -> Result<Vec<Extraction>> {
    let mut out = Vec::with_capacity(gold.len());
    for chunk in gold.chunks(SCORE_CHUNK) {
        let examples = chunk
            .iter()
            .map(|inst| example(model, ontology.get(&inst.event_type_id)?, &inst.document, None))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&Example> = examples.iter().collect();
        for (inst, (ids, truncated)) in chunk.iter().zip(model.decode_batch(&refs)?) {
            let schema = ontology.get(&inst.event_type_id)?;
            out.push(finish_extraction(model.vocab(), schema, &inst.document, &inst.trigger, &ids, truncated)?);
        }
    }
    Ok(out)
}
