//! Diversity of synthetic samples along four dimensions. Every score lies
//! in [0, 1]: 0 when all compared samples are identical in that dimension,
//! 1 when no two share anything.
//!
//! * lexical: 1 - mean pairwise Jaccard similarity of distinct word 1- and
//!   2-grams of the context;
//! * syntactic: the same over part-of-speech 2- and 3-grams;
//! * semantic: 1 - mean pairwise cosine similarity of sentence vectors
//!   (non-negative by construction for the default encoder);
//! * logical: mean pairwise disagreement between the role-argument facts of
//!   two samples. Provisional; swap in a [`LogicalJudge`] backed by an
//!   entailment model for anything beyond a rough signal.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{EventInstance, SyntheticDataset, SyntheticSample};
use crate::error::{Error, IoContext, Result};

pub trait SentenceEncoder {
    fn encode(&self, text: &str) -> Vec<f64>;
}

/// Counts of hashed character trigrams.
#[derive(Debug, Clone, Copy)]
pub struct HashedTrigramEncoder {
    pub dim: usize,
}

impl Default for HashedTrigramEncoder {
    fn default() -> Self {
        Self { dim: 512 }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

impl SentenceEncoder for HashedTrigramEncoder {
    fn encode(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        let chars: Vec<char> = format!("  {}  ", text.to_lowercase()).chars().collect();
        for w in chars.windows(3) {
            let s: String = w.iter().collect();
            v[(fnv1a(s.as_bytes()) % self.dim as u64) as usize] += 1.0;
        }
        v
    }
}

/// Scores how strongly two samples contradict each other, in [0, 1].
pub trait LogicalJudge {
    fn disagreement(&self, a: &EventInstance, b: &EventInstance) -> f64;
}

/// 1 - Jaccard similarity of the (role, argument text) facts of two
/// samples; 0 when neither asserts anything.
#[derive(Debug, Clone, Copy, Default)]
pub struct FactDisagreement;

impl LogicalJudge for FactDisagreement {
    fn disagreement(&self, a: &EventInstance, b: &EventInstance) -> f64 {
        let facts = |i: &EventInstance| -> BTreeSet<(String, String)> {
            i.arguments
                .iter()
                .flat_map(|(r, spans)| spans.iter().map(move |s| (r.clone(), s.text.to_lowercase())))
                .collect()
        };
        1.0 - jaccard(&facts(a), &facts(b))
    }
}

pub struct DiversityTools<'a> {
    pub encoder: &'a dyn SentenceEncoder,
    pub judge: &'a dyn LogicalJudge,
}

const DETERMINERS: &[&str] = &["a", "an", "the", "this", "that", "these", "those", "some", "any", "no", "every"];
const PREPOSITIONS: &[&str] = &[
    "in", "on", "at", "by", "for", "from", "to", "with", "of", "into", "during", "near", "after", "before", "over",
    "under", "about", "against", "between", "through",
];
const PRONOUNS: &[&str] = &["he", "she", "it", "they", "we", "i", "you", "them", "him", "her", "us", "his", "their", "its"];
const CONJUNCTIONS: &[&str] = &["and", "or", "but", "while", "because", "although"];
const AUXILIARIES: &[&str] = &["was", "were", "is", "are", "be", "been", "has", "had", "have", "did", "do", "does", "will", "would"];

/// Coarse part-of-speech tag from a closed-class lexicon plus suffix rules.
pub fn pos_tag(token: &str) -> &'static str {
    let lower = token.to_lowercase();
    let w = lower.as_str();
    if token.chars().all(|c| c.is_ascii_punctuation()) {
        "PUNCT"
    } else if token.chars().all(|c| c.is_ascii_digit() || c == ',' || c == '.') {
        "NUM"
    } else if DETERMINERS.contains(&w) {
        "DET"
    } else if PREPOSITIONS.contains(&w) {
        "ADP"
    } else if PRONOUNS.contains(&w) {
        "PRON"
    } else if CONJUNCTIONS.contains(&w) {
        "CONJ"
    } else if AUXILIARIES.contains(&w) {
        "AUX"
    } else if token.chars().next().is_some_and(char::is_uppercase) {
        "PROPN"
    } else if w.ends_with("ed") || w.ends_with("ing") {
        "VERB"
    } else if w.ends_with("ly") {
        "ADV"
    } else if w.ends_with("ous") || w.ends_with("ful") || w.ends_with("al") || w.ends_with("ive") {
        "ADJ"
    } else {
        "NOUN"
    }
}

fn ngrams(tokens: &[String], orders: &[usize]) -> HashSet<String> {
    let mut out = HashSet::new();
    for &n in orders {
        for w in tokens.windows(n) {
            out.insert(w.join(" "));
        }
    }
    out
}

fn jaccard<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

fn jaccard_hash(a: &HashSet<String>, b: &HashSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return if na == nb { 1.0 } else { 0.0 };
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DimensionScores {
    pub lexical: f64,
    pub semantic: f64,
    pub logical: f64,
    pub syntactic: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RoundDiversity {
    /// Among samples sharing a prompt, averaged over prompts; `None` when
    /// no prompt has two samples.
    pub per_input: Option<DimensionScores>,
    /// Between samples of different prompts; `None` with a single prompt.
    pub across_input: Option<DimensionScores>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    pub rounds: BTreeMap<usize, RoundDiversity>,
}

/// One plot-ready value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesRow {
    pub round: usize,
    pub dimension: String,
    pub scope: String,
    pub value: f64,
}

impl DiversityReport {
    pub fn series(&self) -> Vec<SeriesRow> {
        let mut rows = Vec::new();
        for (&round, r) in &self.rounds {
            for (scope, scores) in [("per-input", r.per_input), ("across-input", r.across_input)] {
                let Some(s) = scores else { continue };
                for (dimension, value) in [
                    ("lexical", s.lexical),
                    ("semantic", s.semantic),
                    ("logical", s.logical),
                    ("syntactic", s.syntactic),
                ] {
                    rows.push(SeriesRow {
                        round,
                        dimension: dimension.into(),
                        scope: scope.into(),
                        value,
                    });
                }
            }
        }
        rows
    }

    /// Tab-separated `round dimension scope value` with a header line.
    pub fn write_series(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).io_context(|| format!("creating {}", path.display()))?;
        let mut text = String::from("round\tdimension\tscope\tvalue\n");
        for r in self.series() {
            text.push_str(&format!("{}\t{}\t{}\t{:?}\n", r.round, r.dimension, r.scope, r.value));
        }
        f.write_all(text.as_bytes()).io_context(|| format!("writing {}", path.display()))
    }
}

struct Features {
    words: HashSet<String>,
    pos: HashSet<String>,
    vector: Vec<f64>,
}

fn features(sample: &SyntheticSample, encoder: &dyn SentenceEncoder) -> Features {
    let tokens = &sample.instance.document.tokens;
    let tags: Vec<String> = tokens.iter().map(|t| pos_tag(t).to_string()).collect();
    Features {
        words: ngrams(tokens, &[1, 2]),
        pos: ngrams(&tags, &[2, 3]),
        vector: encoder.encode(&sample.instance.document.text()),
    }
}

fn pair_similarity(
    a: (&SyntheticSample, &Features),
    b: (&SyntheticSample, &Features),
    judge: &dyn LogicalJudge,
) -> [f64; 4] {
    [
        jaccard_hash(&a.1.words, &b.1.words),
        cosine(&a.1.vector, &b.1.vector),
        1.0 - judge.disagreement(&a.0.instance, &b.0.instance),
        jaccard_hash(&a.1.pos, &b.1.pos),
    ]
}

fn to_scores(sum: [f64; 4], n: usize) -> DimensionScores {
    let d = |i: usize| (1.0 - sum[i] / n as f64).clamp(0.0, 1.0);
    DimensionScores {
        lexical: d(0),
        semantic: d(1),
        logical: d(2),
        syntactic: d(3),
    }
}

fn round_diversity(dataset: &SyntheticDataset, tools: &DiversityTools) -> RoundDiversity {
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in dataset.samples.iter().enumerate() {
        groups.entry(s.prompt.input_text.as_str()).or_default().push(i);
    }
    let feats: Vec<Features> = dataset.samples.iter().map(|s| features(s, tools.encoder)).collect();
    let item = |i: usize| (&dataset.samples[i], &feats[i]);
    let mut notes = Vec::new();

    let mut per_prompt = Vec::new();
    for (prompt, idx) in &groups {
        if idx.len() < 2 {
            notes.push(format!("prompt with a single sample skipped for per-input diversity: {prompt}"));
            continue;
        }
        let mut sum = [0.0; 4];
        let mut n = 0;
        for (x, &i) in idx.iter().enumerate() {
            for &j in &idx[x + 1..] {
                let s = pair_similarity(item(i), item(j), tools.judge);
                (0..4).for_each(|k| sum[k] += s[k]);
                n += 1;
            }
        }
        per_prompt.push(to_scores(sum, n));
    }
    let per_input = (!per_prompt.is_empty()).then(|| {
        let m = per_prompt.len() as f64;
        DimensionScores {
            lexical: per_prompt.iter().map(|s| s.lexical).sum::<f64>() / m,
            semantic: per_prompt.iter().map(|s| s.semantic).sum::<f64>() / m,
            logical: per_prompt.iter().map(|s| s.logical).sum::<f64>() / m,
            syntactic: per_prompt.iter().map(|s| s.syntactic).sum::<f64>() / m,
        }
    });

    let group_list: Vec<&Vec<usize>> = groups.values().collect();
    let mut sum = [0.0; 4];
    let mut n = 0;
    for (x, ga) in group_list.iter().enumerate() {
        for gb in &group_list[x + 1..] {
            for &i in ga.iter() {
                for &j in gb.iter() {
                    let s = pair_similarity(item(i), item(j), tools.judge);
                    (0..4).for_each(|k| sum[k] += s[k]);
                    n += 1;
                }
            }
        }
    }
    let across_input = (n > 0).then(|| to_scores(sum, n));
    if across_input.is_none() {
        notes.push("a single prompt: across-input diversity undefined".into());
    }
    RoundDiversity {
        per_input,
        across_input,
        notes,
    }
}

/// Diversity per round with the default encoder and judge.
pub fn diversity(datasets_by_round: &BTreeMap<usize, SyntheticDataset>) -> Result<DiversityReport> {
    let encoder = HashedTrigramEncoder::default();
    diversity_with(
        datasets_by_round,
        &DiversityTools {
            encoder: &encoder,
            judge: &FactDisagreement,
        },
    )
}

pub fn diversity_with(datasets_by_round: &BTreeMap<usize, SyntheticDataset>, tools: &DiversityTools) -> Result<DiversityReport> {
    let mut report = DiversityReport::default();
    for (&round, dataset) in datasets_by_round {
        if dataset.is_empty() {
            return Err(Error::EmptyInput("synthetic dataset of a diversity round"));
        }
        report.rounds.insert(round, round_diversity(dataset, tools));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Document, Provenance};
    use crate::prompting::PromptPair;
    use proptest::prelude::*;

    fn sample(id: &str, prompt: &str, text: &str) -> SyntheticSample {
        let doc = Document::from_text(id, text).unwrap();
        let trig = doc.span(0, 1).unwrap();
        let arg = doc.span(doc.len() - 1, doc.len()).unwrap();
        let inst = EventInstance::new(doc, "t", trig, [("role".to_string(), vec![arg])].into(), Provenance::Synthetic).unwrap();
        SyntheticSample {
            id: id.into(),
            instance: inst,
            prompt: PromptPair {
                input_text: prompt.into(),
                output_text: String::new(),
            },
            score: None,
        }
    }

    fn dataset(samples: Vec<SyntheticSample>) -> BTreeMap<usize, SyntheticDataset> {
        [(1, SyntheticDataset { round_index: 1, samples })].into()
    }

    #[test]
    fn identical_contexts_have_minimum_diversity() {
        let ds = dataset((0..4).map(|i| sample(&i.to_string(), "p", "rebels attacked the market in Kabul")).collect());
        let r = diversity(&ds).unwrap();
        let s = r.rounds[&1].per_input.unwrap();
        assert_eq!((s.lexical, s.syntactic, s.logical), (0.0, 0.0, 0.0));
        assert!(s.semantic.abs() < 1e-12);
        assert!(r.rounds[&1].across_input.is_none());
    }

    #[test]
    fn disjoint_vocabularies_have_maximum_lexical_diversity() {
        let ds = dataset(vec![sample("a", "p", "alpha beta gamma"), sample("b", "p", "delta epsilon zeta")]);
        let s = diversity(&ds).unwrap().rounds[&1].per_input.unwrap();
        assert_eq!(s.lexical, 1.0);
        assert_eq!(s.logical, 1.0);
    }

    #[test]
    fn single_sample_prompts_are_noted() {
        let ds = dataset(vec![sample("a", "p", "x y"), sample("b", "q", "x z")]);
        let r = &diversity(&ds).unwrap().rounds[&1];
        assert!(r.per_input.is_none());
        assert!(r.across_input.is_some());
        assert_eq!(r.notes.len(), 2);
    }

    #[test]
    fn tagger_basics() {
        assert_eq!(pos_tag("the"), "DET");
        assert_eq!(pos_tag("Kabul"), "PROPN");
        assert_eq!(pos_tag("attacked"), "VERB");
        assert_eq!(pos_tag("."), "PUNCT");
        assert_eq!(pos_tag("market"), "NOUN");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn scores_are_bounded_and_order_free(
            texts in proptest::collection::vec(proptest::collection::vec("[a-e]{1,3}", 1..8), 3..8),
            seed in 0u64..100,
        ) {
            let samples: Vec<SyntheticSample> = texts
                .iter()
                .enumerate()
                .map(|(i, t)| sample(&i.to_string(), if i % 2 == 0 { "p" } else { "q" }, &t.join(" ")))
                .collect();
            let mut shuffled = samples.clone();
            let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
            rand::seq::SliceRandom::shuffle(shuffled.as_mut_slice(), &mut rng);
            let a = diversity(&dataset(samples)).unwrap();
            let b = diversity(&dataset(shuffled)).unwrap();
            for (x, y) in a.series().iter().zip(b.series()) {
                prop_assert!((0.0..=1.0).contains(&x.value));
                prop_assert!((x.value - y.value).abs() < 1e-9);
            }
        }
    }
}
