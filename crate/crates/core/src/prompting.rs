//! Text formats exchanged with the two agents.
//!
//! The generation agent reads an instruction naming the event type and its
//! roles and writes `Context: .., Trigger: .., Role-Arguments: role: value; ..`.
//! The extractor reads `<s> template <s> </s> document </s>` and writes the
//! template with each placeholder replaced by the argument it found.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, EventInstance, Provenance, Span};
use crate::error::{Error, Result};
use crate::ontology::{normalize_role, placeholder, EventSchema};

/// Literal written for a role without an argument in generation outputs.
pub const EMPTY_MARKER: &str = "None";
/// Joins multiple fillers of one role.
pub const LIST_DELIMITER: &str = " and ";
pub const START_MARKER: &str = "<s>";
pub const END_MARKER: &str = "</s>";

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PromptPair {
    pub input_text: String,
    pub output_text: String,
}

pub fn build_generation_prompt(schema: &EventSchema) -> String {
    format!(
        "Given the event type: {} and the following roles: {}, please generate a coherent context \
         that includes the event trigger and the role-argument pairs.",
        schema.event_type_name,
        schema.roles.join(", ")
    )
}

fn normalize_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Renders an instance as a generation target, listing roles in schema order.
pub fn serialize_output(instance: &EventInstance, schema: &EventSchema) -> String {
    let pairs: Vec<String> = schema
        .roles
        .iter()
        .map(|role| {
            let fillers = instance.fillers(role);
            let value = if fillers.is_empty() {
                EMPTY_MARKER.to_string()
            } else {
                fillers.iter().map(|s| s.text.as_str()).collect::<Vec<_>>().join(LIST_DELIMITER)
            };
            format!("{role}: {value}")
        })
        .collect();
    format!(
        "Context: {}, Trigger: {}, Role-Arguments: {}.",
        instance.document.text(),
        instance.trigger.text,
        pairs.join("; ")
    )
}

pub fn prompt_pair(instance: &EventInstance, schema: &EventSchema) -> PromptPair {
    PromptPair {
        input_text: build_generation_prompt(schema),
        output_text: serialize_output(instance, schema),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectReason {
    MissingSection,
    MissingTrigger,
    EmptyContext,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseReport {
    /// Argument strings that do not occur in the context and were dropped.
    pub unanchorable: usize,
    /// `role: value` pairs naming a role outside the schema.
    pub unknown_roles: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ParseOutcome {
    Accepted {
        instance: EventInstance,
        report: ParseReport,
    },
    Rejected(RejectReason),
}

fn labels() -> &'static [Regex; 3] {
    static RE: OnceLock<[Regex; 3]> = OnceLock::new();
    RE.get_or_init(|| {
        [
            Regex::new(r"(?i)context\s*:").unwrap(),
            Regex::new(r"(?i)trigger\s*:").unwrap(),
            Regex::new(r"(?i)role\s*-\s*arguments\s*:").unwrap(),
        ]
    })
}

fn strip_trailing(s: &str, c: char) -> &str {
    let s = s.trim();
    s.strip_suffix(c).unwrap_or(s).trim()
}

/// Parses a generated sequence. Never fails: malformed outputs come back as
/// [`ParseOutcome::Rejected`].
pub fn parse_output(text: &str, schema: &EventSchema) -> ParseOutcome {
    let [ctx_re, trig_re, args_re] = labels();
    let Some(ctx) = ctx_re.find(text) else {
        return ParseOutcome::Rejected(RejectReason::MissingSection);
    };
    let Some(trig) = trig_re.find_at(text, ctx.end()) else {
        return ParseOutcome::Rejected(RejectReason::MissingSection);
    };
    let Some(args) = args_re.find_at(text, trig.end()) else {
        return ParseOutcome::Rejected(RejectReason::MissingSection);
    };
    let context = normalize_ws(strip_trailing(&text[ctx.end()..trig.start()], ','));
    let Ok(document) = Document::from_text("generated", &context) else {
        return ParseOutcome::Rejected(RejectReason::EmptyContext);
    };
    let trigger_text = normalize_ws(strip_trailing(&text[trig.end()..args.start()], ','));
    let Some(trigger) = document.find(&trigger_text) else {
        return ParseOutcome::Rejected(RejectReason::MissingTrigger);
    };

    let mut report = ParseReport::default();
    let mut arguments: BTreeMap<String, Vec<Span>> = BTreeMap::new();
    for pair in strip_trailing(&text[args.end()..], '.').split(';') {
        let Some((role, value)) = pair.split_once(':') else {
            continue;
        };
        let role = normalize_role(role);
        if schema.role_index(&role).is_none() {
            report.unknown_roles += 1;
            continue;
        }
        let value = normalize_ws(value);
        if value.is_empty() || value.eq_ignore_ascii_case(EMPTY_MARKER) {
            continue;
        }
        for filler in value.split(LIST_DELIMITER) {
            match document.find(filler) {
                Some(span) => {
                    let slot = arguments.entry(role.clone()).or_default();
                    if !slot.contains(&span) {
                        slot.push(span);
                    }
                }
                None => report.unanchorable += 1,
            }
        }
    }
    let instance = EventInstance::new(
        document,
        schema.event_type_id.clone(),
        trigger,
        arguments,
        Provenance::Synthetic,
    )
    .expect("spans anchored in the parsed document");
    ParseOutcome::Accepted { instance, report }
}

/// One placeholder substitution inside a [`FilledTemplate`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotFill {
    pub role: String,
    pub placeholder: String,
    /// Byte range of the substituted text in `filled_text`.
    pub start: usize,
    pub end: usize,
    pub filled: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilledTemplate {
    pub template_text: String,
    pub filled_text: String,
    pub slots: Vec<SlotFill>,
}

impl FilledTemplate {
    /// Puts the placeholders back, recovering the template.
    pub fn unfill(&self) -> String {
        let mut out = String::new();
        let mut last = 0;
        for slot in &self.slots {
            out.push_str(&self.filled_text[last..slot.start]);
            out.push_str(&slot.placeholder);
            last = slot.end;
        }
        out.push_str(&self.filled_text[last..]);
        out
    }
}

/// Replaces each placeholder with the role's fillers; empty roles keep their
/// placeholder.
pub fn fill_template(schema: &EventSchema, instance: &EventInstance) -> Result<FilledTemplate> {
    if instance.event_type_id != schema.event_type_id {
        return Err(Error::TypeMismatch {
            instance: instance.event_type_id.clone(),
            schema: schema.event_type_id.clone(),
        });
    }
    let values: Vec<Option<String>> = schema
        .roles
        .iter()
        .map(|role| {
            let fillers = instance.fillers(role);
            (!fillers.is_empty())
                .then(|| fillers.iter().map(|s| s.text.as_str()).collect::<Vec<_>>().join(LIST_DELIMITER))
        })
        .collect();
    Ok(fill_with(schema, &values))
}

/// Fills the template from per-role values in schema order.
pub fn fill_with(schema: &EventSchema, values: &[Option<String>]) -> FilledTemplate {
    let re = Regex::new(r"<arg(\d+)>").expect("static regex");
    let template = &schema.template;
    let mut filled_text = String::new();
    let mut slots = Vec::new();
    let mut last = 0;
    for cap in re.captures_iter(template) {
        let m = cap.get(0).unwrap();
        let idx: usize = cap[1].parse::<usize>().expect("validated schema") - 1;
        filled_text.push_str(&template[last..m.start()]);
        let start = filled_text.len();
        let value = values.get(idx).cloned().flatten();
        filled_text.push_str(value.as_deref().unwrap_or(m.as_str()));
        slots.push(SlotFill {
            role: schema.roles[idx].clone(),
            placeholder: m.as_str().to_string(),
            start,
            end: filled_text.len(),
            filled: value.is_some(),
        });
        last = m.end();
    }
    filled_text.push_str(&template[last..]);
    FilledTemplate {
        template_text: template.clone(),
        filled_text,
        slots,
    }
}

/// Extractor input: `<s> template <s> </s> document </s>`.
pub fn build_extractor_input(schema: &EventSchema, document: &Document) -> String {
    format!(
        "{START_MARKER} {} {START_MARKER} {END_MARKER} {} {END_MARKER}",
        schema.template,
        document.text()
    )
}

fn is_placeholder(token: &str) -> bool {
    token.len() > 5 && token.starts_with("<arg") && token.ends_with('>')
}

/// Result of aligning a decoded filled template back onto its template.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alignment {
    /// Filler strings per role, in schema order.
    pub fillers: Vec<Vec<String>>,
    pub aligned_literals: usize,
    pub total_literals: usize,
}

/// Recovers per-role fillers from a decoded token sequence by matching the
/// template's literal tokens (longest common subsequence, leftmost on ties).
/// Tokens between two matched literals go to the first placeholder in that
/// gap. Returns `None` when fewer than half of the literals can be matched.
pub fn align_filled(schema: &EventSchema, decoded: &[String]) -> Option<Alignment> {
    let template: Vec<&str> = schema.template.split_whitespace().collect();
    let literal_pos: Vec<usize> = (0..template.len()).filter(|&k| !is_placeholder(template[k])).collect();
    let lits: Vec<&str> = literal_pos.iter().map(|&k| template[k]).collect();
    let (m, n) = (lits.len(), decoded.len());

    // suffix LCS table
    let mut dp = vec![vec![0u16; n + 1]; m + 1];
    for i in (0..m).rev() {
        for j in (0..n).rev() {
            dp[i][j] = if lits[i] == decoded[j] {
                dp[i + 1][j + 1] + 1
            } else {
                dp[i + 1][j].max(dp[i][j + 1])
            };
        }
    }
    let mut anchor: Vec<Option<usize>> = vec![None; m];
    let (mut i, mut j) = (0, 0);
    while i < m && j < n {
        if lits[i] == decoded[j] && dp[i][j] == dp[i + 1][j + 1] + 1 {
            anchor[i] = Some(j);
            i += 1;
            j += 1;
        } else if dp[i][j + 1] == dp[i][j] {
            j += 1;
        } else {
            i += 1;
        }
    }
    let aligned = anchor.iter().filter(|a| a.is_some()).count();
    if aligned * 2 < m {
        return None;
    }

    // decoded position bounding each template token from the left/right
    let mut fillers = vec![Vec::new(); schema.num_roles()];
    let mut claimed_gaps = std::collections::BTreeSet::new();
    for (k, tok) in template.iter().enumerate() {
        if !is_placeholder(tok) {
            continue;
        }
        let left = literal_pos
            .iter()
            .zip(&anchor)
            .filter(|(&p, a)| p < k && a.is_some())
            .map(|(_, a)| a.unwrap() + 1)
            .last()
            .unwrap_or(0);
        let right = literal_pos
            .iter()
            .zip(&anchor)
            .find(|(&p, a)| p > k && a.is_some())
            .map(|(_, a)| a.unwrap())
            .unwrap_or(n);
        if !claimed_gaps.insert((left, right)) || left >= right {
            continue;
        }
        let Some(role_idx) = tok[4..tok.len() - 1].parse::<usize>().ok().and_then(|x| x.checked_sub(1)) else {
            continue;
        };
        if role_idx >= fillers.len() {
            continue;
        }
        let content: Vec<&str> = decoded[left..right]
            .iter()
            .map(String::as_str)
            .filter(|t| !is_placeholder(t))
            .collect();
        for part in content.split(|t| *t == LIST_DELIMITER.trim()) {
            if !part.is_empty() {
                fillers[role_idx].push(part.join(" "));
            }
        }
    }
    Some(Alignment {
        fillers,
        aligned_literals: aligned,
        total_literals: m,
    })
}

/// Anchors aligned filler strings to their first occurrence in `document`,
/// dropping those that do not occur. Returns the arguments and the number
/// of dropped strings.
pub fn anchor_fillers(
    schema: &EventSchema,
    document: &Document,
    fillers: &[Vec<String>],
) -> (BTreeMap<String, Vec<Span>>, usize) {
    let mut dropped = 0;
    let mut arguments: BTreeMap<String, Vec<Span>> = BTreeMap::new();
    for (role, strings) in schema.roles.iter().zip(fillers) {
        for s in strings {
            match document.find(s) {
                Some(span) => {
                    let slot = arguments.entry(role.clone()).or_default();
                    if !slot.contains(&span) {
                        slot.push(span);
                    }
                }
                None => dropped += 1,
            }
        }
    }
    (arguments, dropped)
}

/// Placeholder markers of a schema in role order.
pub fn placeholders(schema: &EventSchema) -> Vec<String> {
    (0..schema.num_roles()).map(placeholder).collect()
}
