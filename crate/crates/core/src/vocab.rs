//! Word-level vocabulary shared by both agents.
//!
//! The extractor works directly on document tokens. The generation agent
//! reads and writes free text, which [`lm_encode`] splits on whitespace while
//! peeling trailing `, ; : .` off words as glue pieces (`##,`), so that
//! [`lm_decode`] can restore the original spacing.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::EventInstance;
use crate::error::{IoContext, Result};
use crate::ontology::EventSchema;
use crate::prompting::{build_generation_prompt, serialize_output, EMPTY_MARKER, LIST_DELIMITER};

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const SEP: &str = "<sep>";
const MAX_PLACEHOLDERS: usize = 16;

const GLUE: &str = "##";
const GLUE_CHARS: [char; 4] = [',', ';', ':', '.'];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Self { tokens, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    /// Special tokens first, then every distinct token in sorted order.
    pub fn build<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut all: Vec<String> = [PAD, UNK, BOS, EOS, SEP, "<s>", "</s>"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        all.extend((1..=MAX_PLACEHOLDERS).map(|k| format!("<arg{k}>")));
        let specials: BTreeSet<String> = all.iter().cloned().collect();
        let rest: BTreeSet<String> = tokens
            .into_iter()
            .map(|t| t.as_ref().to_string())
            .filter(|t| !specials.contains(t))
            .collect();
        all.extend(rest);
        Self::from(all)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or_else(|| self.index[UNK])
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn ids<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<u32> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn special(&self, token: &str) -> u32 {
        self.index[token]
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string(&self.tokens)?).io_context(|| format!("writing {}", path.display()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).io_context(|| format!("reading {}", path.display()))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Vocabulary covering documents, both agents' prompt and output formats,
/// templates and every role of every schema.
pub fn pipeline_vocab<'a>(instances: impl IntoIterator<Item = &'a EventInstance>, schemas: &[EventSchema]) -> Vocab {
    let mut words: BTreeSet<String> = BTreeSet::new();
    for inst in instances {
        words.extend(inst.document.tokens.iter().cloned());
        if let Some(schema) = schemas.iter().find(|s| s.event_type_id == inst.event_type_id) {
            words.extend(lm_encode(&serialize_output(inst, schema)));
        }
    }
    for schema in schemas {
        words.extend(lm_encode(&build_generation_prompt(schema)));
        words.extend(schema.template.split_whitespace().map(str::to_string));
        for role in &schema.roles {
            words.extend(lm_encode(&format!("{role}: {EMPTY_MARKER};")));
        }
    }
    words.insert(LIST_DELIMITER.trim().to_string());
    Vocab::build(words)
}

/// Splits free text into generation-agent pieces.
pub fn lm_encode(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for piece in text.split_whitespace() {
        let mut core = piece;
        let mut glued = Vec::new();
        while let Some(c) = core.chars().last() {
            let rest = &core[..core.len() - c.len_utf8()];
            // keep abbreviation dots such as `U.S.`
            let peel = GLUE_CHARS.contains(&c) && !rest.is_empty() && !(c == '.' && rest.contains('.'));
            if !peel {
                break;
            }
            glued.push(format!("{GLUE}{c}"));
            core = rest;
        }
        out.push(core.to_string());
        out.extend(glued.into_iter().rev());
    }
    out
}

/// Inverse of [`lm_encode`]: glue pieces attach to the previous piece.
pub fn lm_decode<S: AsRef<str>>(pieces: &[S]) -> String {
    let mut out = String::new();
    for piece in pieces {
        let piece = piece.as_ref();
        match piece.strip_prefix(GLUE) {
            Some(rest) if !rest.is_empty() => out.push_str(rest),
            _ => {
                if !out.is_empty() {
                    out.push(' ');
                }
                out.push_str(piece);
            }
        }
    }
    out
}
