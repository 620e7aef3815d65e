//! Documents, event annotations and corpus file formats.
//!
//! The canonical format is line-delimited JSON, one event instance per line:
//!
//! ```text
//! {"doc_id":..,"tokens":[..],"event_type_id":..,"trigger":{"start":..,"end":..,"text":..},
//!  "arguments":[{"role":..,"start":..,"end":..,"text":..}],"provenance":"gold"}
//! ```
//!
//! Spans are half-open token ranges; the redundant `text` fields must equal
//! the covered tokens joined by single spaces.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, IoContext, Result};
use crate::ontology::{normalize_role, EventSchema};
use crate::prompting::PromptPair;
use crate::reward::ScoredSample;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub tokens: Vec<String>,
}

impl Document {
    pub fn new(doc_id: impl Into<String>, tokens: Vec<String>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::EmptyInput("document has no tokens"));
        }
        Ok(Self {
            doc_id: doc_id.into(),
            tokens,
        })
    }

    /// Builds a document from whitespace-separated text.
    pub fn from_text(doc_id: impl Into<String>, text: &str) -> Result<Self> {
        Self::new(doc_id, text.split_whitespace().map(str::to_string).collect())
    }

    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn surface(&self, start: usize, end: usize) -> Option<String> {
        (start < end && end <= self.tokens.len()).then(|| self.tokens[start..end].join(" "))
    }

    pub fn span(&self, start: usize, end: usize) -> Option<Span> {
        self.surface(start, end).map(|text| Span { start, end, text })
    }

    /// First token-aligned occurrence of `phrase` (whitespace-tokenized).
    pub fn find(&self, phrase: &str) -> Option<Span> {
        let needle: Vec<&str> = phrase.split_whitespace().collect();
        if needle.is_empty() || needle.len() > self.tokens.len() {
            return None;
        }
        (0..=self.tokens.len() - needle.len())
            .find(|&i| needle.iter().zip(&self.tokens[i..]).all(|(a, b)| a == b))
            .and_then(|i| self.span(i, i + needle.len()))
    }
}

/// A half-open token span with its surface string.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Gold,
    Synthetic,
    Predicted,
}

/// One event in one document. Roles missing from `arguments` are empty.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "CanonicalRecord", try_from = "CanonicalRecord")]
pub struct EventInstance {
    pub document: Document,
    pub event_type_id: String,
    pub trigger: Span,
    pub arguments: BTreeMap<String, Vec<Span>>,
    pub provenance: Provenance,
}

impl EventInstance {
    /// Validates span bounds and surfaces; normalizes role names and drops
    /// empty argument lists.
    pub fn new(
        document: Document,
        event_type_id: impl Into<String>,
        trigger: Span,
        arguments: BTreeMap<String, Vec<Span>>,
        provenance: Provenance,
    ) -> std::result::Result<Self, SpanError> {
        check_span(&document, &trigger)?;
        let mut normalized: BTreeMap<String, Vec<Span>> = BTreeMap::new();
        for (role, spans) in arguments {
            for span in &spans {
                check_span(&document, span)?;
            }
            if !spans.is_empty() {
                normalized.entry(normalize_role(&role)).or_default().extend(spans);
            }
        }
        Ok(Self {
            document,
            event_type_id: event_type_id.into(),
            trigger,
            arguments: normalized,
            provenance,
        })
    }

    /// Key used to align predictions with gold annotations.
    pub fn key(&self) -> String {
        format!(
            "{}#{}#{}:{}",
            self.document.doc_id, self.event_type_id, self.trigger.start, self.trigger.end
        )
    }

    pub fn fillers(&self, role: &str) -> &[Span] {
        self.arguments.get(role).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn is_filled(&self, role: &str) -> bool {
        !self.fillers(role).is_empty()
    }

    /// Checks that every role belongs to the schema.
    pub fn check_schema(&self, schema: &EventSchema) -> Result<()> {
        if self.event_type_id != schema.event_type_id {
            return Err(Error::TypeMismatch {
                instance: self.event_type_id.clone(),
                schema: schema.event_type_id.clone(),
            });
        }
        if let Some(role) = self.arguments.keys().find(|r| schema.role_index(r).is_none()) {
            return Err(Error::InvalidSchema {
                event_type: schema.event_type_id.clone(),
                reason: format!("instance uses role `{role}` outside the schema"),
            });
        }
        Ok(())
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SpanError {
    #[error("span ({start}, {end}) out of bounds for {len} tokens")]
    OutOfBounds { start: usize, end: usize, len: usize },
    #[error("surface `{given}` does not match tokens `{actual}`")]
    SurfaceMismatch { given: String, actual: String },
}

fn check_span(doc: &Document, span: &Span) -> std::result::Result<(), SpanError> {
    match doc.surface(span.start, span.end) {
        None => Err(SpanError::OutOfBounds {
            start: span.start,
            end: span.end,
            len: doc.len(),
        }),
        Some(actual) if actual != span.text => Err(SpanError::SurfaceMismatch {
            given: span.text.clone(),
            actual,
        }),
        Some(_) => Ok(()),
    }
}

/// Proportion of schema roles without any argument.
pub fn empty_argument_ratio(instance: &EventInstance, schema: &EventSchema) -> Result<f64> {
    if instance.event_type_id != schema.event_type_id {
        return Err(Error::TypeMismatch {
            instance: instance.event_type_id.clone(),
            schema: schema.event_type_id.clone(),
        });
    }
    let empty = schema.roles.iter().filter(|r| !instance.is_filled(r)).count();
    Ok(empty as f64 / schema.num_roles() as f64)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct CanonicalArgument {
    role: String,
    start: usize,
    end: usize,
    text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct CanonicalRecord {
    doc_id: String,
    tokens: Vec<String>,
    event_type_id: String,
    trigger: Span,
    arguments: Vec<CanonicalArgument>,
    provenance: Provenance,
}

impl From<EventInstance> for CanonicalRecord {
    fn from(inst: EventInstance) -> Self {
        let arguments = inst
            .arguments
            .into_iter()
            .flat_map(|(role, spans)| {
                spans.into_iter().map(move |s| CanonicalArgument {
                    role: role.clone(),
                    start: s.start,
                    end: s.end,
                    text: s.text,
                })
            })
            .collect();
        Self {
            doc_id: inst.document.doc_id,
            tokens: inst.document.tokens,
            event_type_id: inst.event_type_id,
            trigger: inst.trigger,
            arguments,
            provenance: inst.provenance,
        }
    }
}

impl TryFrom<CanonicalRecord> for EventInstance {
    type Error = String;

    fn try_from(rec: CanonicalRecord) -> std::result::Result<Self, String> {
        let document = Document::new(rec.doc_id, rec.tokens).map_err(|e| e.to_string())?;
        let mut arguments: BTreeMap<String, Vec<Span>> = BTreeMap::new();
        for arg in rec.arguments {
            arguments.entry(arg.role).or_default().push(Span {
                start: arg.start,
                end: arg.end,
                text: arg.text,
            });
        }
        EventInstance::new(document, rec.event_type_id, rec.trigger, arguments, rec.provenance)
            .map_err(|e| e.to_string())
    }
}

/// Supported input layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorpusFormat {
    /// `doc_key`, nested `sentences`, `evt_triggers` and `gold_evt_links`
    /// with inclusive end offsets.
    RamsLike,
    /// `doc_id`, flat `tokens`, `event_mentions` referencing
    /// `entity_mentions` by id, exclusive end offsets.
    WikiEventsLike,
    Canonical,
}

impl std::str::FromStr for CorpusFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rams-like" => Ok(Self::RamsLike),
            "wikievents-like" => Ok(Self::WikiEventsLike),
            "canonical" => Ok(Self::Canonical),
            other => Err(Error::Config {
                field: "format".into(),
                reason: format!("unknown corpus format `{other}`"),
            }),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub lines: usize,
    pub instances: usize,
    pub rejected_out_of_bounds: usize,
    pub rejected_surface_mismatch: usize,
}

impl IngestReport {
    fn reject(&mut self, err: &SpanError) {
        match err {
            SpanError::OutOfBounds { .. } => self.rejected_out_of_bounds += 1,
            SpanError::SurfaceMismatch { .. } => self.rejected_surface_mismatch += 1,
        }
    }
}

/// Reads event instances from `path`. Malformed lines abort with the line
/// number; records whose spans fall outside the document are skipped and
/// counted in the report.
pub fn ingest(path: &Path, format: CorpusFormat) -> Result<(Vec<EventInstance>, IngestReport)> {
    let text = fs::read_to_string(path).io_context(|| format!("reading {}", path.display()))?;
    let mut report = IngestReport::default();
    let mut instances = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        report.lines += 1;
        let malformed = |reason: String| Error::MalformedRecord {
            path: path.to_path_buf(),
            line: i + 1,
            reason,
        };
        let parsed = match format {
            CorpusFormat::Canonical => {
                let rec: CanonicalRecord =
                    serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
                vec![canonical_to_instance(rec)]
            }
            CorpusFormat::RamsLike => {
                let v: Value = serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
                parse_rams(&v).map_err(malformed)?
            }
            CorpusFormat::WikiEventsLike => {
                let v: Value = serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
                parse_wikievents(&v).map_err(malformed)?
            }
        };
        for item in parsed {
            match item {
                Ok(inst) => instances.push(inst),
                Err(err) => report.reject(&err),
            }
        }
    }
    report.instances = instances.len();
    Ok((instances, report))
}

fn canonical_to_instance(rec: CanonicalRecord) -> std::result::Result<EventInstance, SpanError> {
    let Ok(document) = Document::new(rec.doc_id, rec.tokens) else {
        return Err(SpanError::OutOfBounds {
            start: rec.trigger.start,
            end: rec.trigger.end,
            len: 0,
        });
    };
    let mut arguments: BTreeMap<String, Vec<Span>> = BTreeMap::new();
    for arg in rec.arguments {
        arguments.entry(arg.role).or_default().push(Span {
            start: arg.start,
            end: arg.end,
            text: arg.text,
        });
    }
    EventInstance::new(document, rec.event_type_id, rec.trigger, arguments, rec.provenance)
}

type Parsed = Vec<std::result::Result<EventInstance, SpanError>>;

fn field<'a>(v: &'a Value, key: &str) -> std::result::Result<&'a Value, String> {
    v.get(key).ok_or_else(|| format!("missing field `{key}`"))
}

fn as_usize(v: &Value) -> std::result::Result<usize, String> {
    v.as_u64().map(|x| x as usize).ok_or_else(|| format!("expected index, got {v}"))
}

fn as_str(v: &Value) -> std::result::Result<&str, String> {
    v.as_str().ok_or_else(|| format!("expected string, got {v}"))
}

fn span_from(doc: &Document, start: usize, end: usize) -> std::result::Result<Span, SpanError> {
    doc.span(start, end).ok_or(SpanError::OutOfBounds {
        start,
        end,
        len: doc.len(),
    })
}

/// Strips the `evt089arg01` prefix RAMS puts in front of role names.
fn rams_role(label: &str) -> String {
    let re = regex::Regex::new(r"^evt\d+arg\d+").expect("static regex");
    normalize_role(&re.replace(label, ""))
}

fn parse_rams(v: &Value) -> std::result::Result<Parsed, String> {
    let doc_id = as_str(field(v, "doc_key")?)?.to_string();
    let mut tokens = Vec::new();
    for sentence in field(v, "sentences")?.as_array().ok_or("`sentences` is not a list")? {
        for tok in sentence.as_array().ok_or("sentence is not a list")? {
            tokens.push(as_str(tok)?.to_string());
        }
    }
    let document = Document::new(doc_id, tokens).map_err(|e| e.to_string())?;
    let links = field(v, "gold_evt_links")?.as_array().ok_or("`gold_evt_links` is not a list")?;
    let mut out = Vec::new();
    for trig in field(v, "evt_triggers")?.as_array().ok_or("`evt_triggers` is not a list")? {
        let t = trig.as_array().ok_or("trigger is not a list")?;
        if t.len() < 3 {
            return Err("trigger entry needs [start, end, types]".into());
        }
        let (ts, te) = (as_usize(&t[0])?, as_usize(&t[1])?);
        let event_type = t[2]
            .get(0)
            .and_then(|x| x.get(0))
            .and_then(Value::as_str)
            .ok_or("trigger entry lacks an event type")?
            .to_string();
        let result = (|| {
            let trigger = span_from(&document, ts, te + 1)?;
            let mut arguments: BTreeMap<String, Vec<Span>> = BTreeMap::new();
            for link in links {
                let (Some(tr), Some(arg), Some(role)) = (link.get(0), link.get(1), link.get(2)) else {
                    continue;
                };
                let same_trigger = tr.get(0).and_then(Value::as_u64) == Some(ts as u64)
                    && tr.get(1).and_then(Value::as_u64) == Some(te as u64);
                if !same_trigger {
                    continue;
                }
                let (Some(s), Some(e), Some(role)) = (
                    arg.get(0).and_then(Value::as_u64),
                    arg.get(1).and_then(Value::as_u64),
                    role.as_str(),
                ) else {
                    continue;
                };
                let span = span_from(&document, s as usize, e as usize + 1)?;
                arguments.entry(rams_role(role)).or_default().push(span);
            }
            EventInstance::new(document.clone(), event_type.clone(), trigger, arguments, Provenance::Gold)
        })();
        out.push(result);
    }
    Ok(out)
}

fn parse_wikievents(v: &Value) -> std::result::Result<Parsed, String> {
    let doc_id = as_str(field(v, "doc_id")?)?.to_string();
    let tokens = field(v, "tokens")?
        .as_array()
        .ok_or("`tokens` is not a list")?
        .iter()
        .map(|t| as_str(t).map(str::to_string))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let document = Document::new(doc_id, tokens).map_err(|e| e.to_string())?;
    let mut entities: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    if let Some(list) = v.get("entity_mentions").and_then(Value::as_array) {
        for ent in list {
            let id = as_str(field(ent, "id")?)?;
            entities.insert(id, (as_usize(field(ent, "start")?)?, as_usize(field(ent, "end")?)?));
        }
    }
    let mut out = Vec::new();
    for mention in field(v, "event_mentions")?.as_array().ok_or("`event_mentions` is not a list")? {
        let event_type = as_str(field(mention, "event_type")?)?.to_string();
        let trig = field(mention, "trigger")?;
        let (ts, te) = (as_usize(field(trig, "start")?)?, as_usize(field(trig, "end")?)?);
        let mut raw_args = Vec::new();
        for arg in field(mention, "arguments")?.as_array().ok_or("`arguments` is not a list")? {
            let entity = as_str(field(arg, "entity_id")?)?;
            let role = as_str(field(arg, "role")?)?;
            let &(s, e) = entities
                .get(entity)
                .ok_or_else(|| format!("argument references unknown entity `{entity}`"))?;
            raw_args.push((normalize_role(role), s, e));
        }
        let result = (|| {
            let trigger = span_from(&document, ts, te)?;
            let mut arguments: BTreeMap<String, Vec<Span>> = BTreeMap::new();
            for (role, s, e) in raw_args {
                arguments.entry(role).or_default().push(span_from(&document, s, e)?);
            }
            for spans in arguments.values_mut() {
                spans.sort();
                spans.dedup();
            }
            EventInstance::new(document.clone(), event_type, trigger, arguments, Provenance::Gold)
        })();
        out.push(result);
    }
    Ok(out)
}

/// Writes instances in the canonical format and returns the count written.
pub fn write_canonical<'a>(
    path: &Path,
    instances: impl IntoIterator<Item = &'a EventInstance>,
) -> Result<usize> {
    let file = fs::File::create(path).io_context(|| format!("creating {}", path.display()))?;
    let mut out = BufWriter::new(file);
    let mut count = 0;
    for inst in instances {
        serde_json::to_writer(&mut out, inst)?;
        out.write_all(b"\n").io_context(|| format!("writing {}", path.display()))?;
        count += 1;
    }
    out.flush().io_context(|| format!("writing {}", path.display()))?;
    Ok(count)
}

/// A generated sample together with the prompt/output pair that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSample {
    pub id: String,
    pub instance: EventInstance,
    pub prompt: PromptPair,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<ScoredSample>,
}

/// The synthetic dataset of one round: the union of per-type groups.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDataset {
    pub round_index: usize,
    pub samples: Vec<SyntheticSample>,
}

impl SyntheticDataset {
    pub fn new(round_index: usize) -> Self {
        Self {
            round_index,
            samples: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Samples grouped by event type.
    pub fn groups(&self) -> BTreeMap<&str, Vec<&SyntheticSample>> {
        let mut groups: BTreeMap<&str, Vec<&SyntheticSample>> = BTreeMap::new();
        for s in &self.samples {
            groups.entry(s.instance.event_type_id.as_str()).or_default().push(s);
        }
        groups
    }

    pub fn instances(&self) -> impl Iterator<Item = &EventInstance> {
        self.samples.iter().map(|s| &s.instance)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).io_context(|| format!("creating {}", path.display()))?;
        let mut out = BufWriter::new(file);
        serde_json::to_writer(&mut out, &serde_json::json!({ "round_index": self.round_index }))?;
        out.write_all(b"\n").io_context(|| format!("writing {}", path.display()))?;
        for sample in &self.samples {
            serde_json::to_writer(&mut out, sample)?;
            out.write_all(b"\n").io_context(|| format!("writing {}", path.display()))?;
        }
        out.flush().io_context(|| format!("writing {}", path.display()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).io_context(|| format!("reading {}", path.display()))?;
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let malformed = |line: usize, reason: String| Error::MalformedRecord {
            path: path.to_path_buf(),
            line,
            reason,
        };
        let (_, header) = lines.next().ok_or_else(|| malformed(1, "missing header".into()))?;
        let header: Value = serde_json::from_str(header).map_err(|e| malformed(1, e.to_string()))?;
        let round_index = header
            .get("round_index")
            .and_then(Value::as_u64)
            .ok_or_else(|| malformed(1, "header lacks round_index".into()))? as usize;
        let mut samples = Vec::new();
        for (i, line) in lines {
            samples.push(serde_json::from_str(line).map_err(|e| malformed(i + 1, e.to_string()))?);
        }
        Ok(Self { round_index, samples })
    }
}

/// Writes the samples with reward at or above `min_reward` (all samples when
/// `None`) in the canonical format. Returns the number of records written.
pub fn export_synthetic(dataset: &SyntheticDataset, path: &Path, min_reward: Option<f64>) -> Result<usize> {
    let mut selected = Vec::new();
    for sample in &dataset.samples {
        match (min_reward, &sample.score) {
            (None, _) => selected.push(&sample.instance),
            (Some(threshold), Some(score)) => {
                if score.reward >= threshold {
                    selected.push(&sample.instance);
                }
            }
            (Some(_), None) => {
                return Err(Error::Config {
                    field: "min_reward".into(),
                    reason: format!("sample `{}` has no reward; score the dataset first", sample.id),
                })
            }
        }
    }
    write_canonical(path, selected)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(n: usize) -> Document {
        Document::new("d", (0..n).map(|i| format!("w{i}")).collect()).unwrap()
    }

    fn schema5() -> EventSchema {
        EventSchema::new("t", "t", ["a", "b", "c", "d", "e"], "<arg1> <arg2> <arg3> <arg4> <arg5>").unwrap()
    }

    fn instance_with(filled: &[&str]) -> EventInstance {
        let d = doc(20);
        let trigger = d.span(4, 5).unwrap();
        let args = filled
            .iter()
            .enumerate()
            .map(|(i, r)| (r.to_string(), vec![d.span(i, i + 1).unwrap()]))
            .collect();
        EventInstance::new(d, "t", trigger, args, Provenance::Gold).unwrap()
    }

    #[test]
    fn empty_ratio_counts() {
        let s = schema5();
        assert!((empty_argument_ratio(&instance_with(&["a", "b", "c"]), &s).unwrap() - 0.4).abs() < 1e-12);
        assert_eq!(empty_argument_ratio(&instance_with(&["a", "b", "c", "d", "e"]), &s).unwrap(), 0.0);
        assert_eq!(empty_argument_ratio(&instance_with(&[]), &s).unwrap(), 1.0);
        let other = EventSchema::new("u", "u", ["a"], "<arg1>").unwrap();
        assert!(matches!(
            empty_argument_ratio(&instance_with(&[]), &other),
            Err(Error::TypeMismatch { .. })
        ));
    }

    #[test]
    fn empty_ratio_ignores_role_order() {
        let s = schema5();
        let mut rev = s.clone();
        rev.roles.reverse();
        let inst = instance_with(&["a", "d"]);
        assert_eq!(empty_argument_ratio(&inst, &s).unwrap(), empty_argument_ratio(&inst, &rev).unwrap());
    }

    #[test]
    fn instance_rejects_bad_spans() {
        let d = doc(20);
        let trigger = d.span(4, 5).unwrap();
        let bad = Span {
            start: 19,
            end: 25,
            text: "x".into(),
        };
        let err = EventInstance::new(d.clone(), "t", trigger.clone(), BTreeMap::from([("a".into(), vec![bad])]), Provenance::Gold);
        assert!(matches!(err, Err(SpanError::OutOfBounds { .. })));
        let wrong = Span {
            start: 1,
            end: 2,
            text: "nope".into(),
        };
        let err = EventInstance::new(d, "t", trigger, BTreeMap::from([("a".into(), vec![wrong])]), Provenance::Gold);
        assert!(matches!(err, Err(SpanError::SurfaceMismatch { .. })));
    }

    #[test]
    fn canonical_ingest_counts_rejections() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let good = instance_with(&["a"]);
        let mut line = serde_json::to_string(&good).unwrap();
        line.push('\n');
        let tokens: Vec<String> = (0..20).map(|i| format!("\"w{i}\"")).collect();
        line.push_str(&format!(
            r#"{{"doc_id":"x","tokens":[{}],"event_type_id":"t","trigger":{{"start":4,"end":5,"text":"w4"}},"arguments":[{{"role":"a","start":19,"end":25,"text":"w19"}}],"provenance":"gold"}}"#,
            tokens.join(",")
        ));
        line.push('\n');
        fs::write(&path, line).unwrap();
        let (instances, report) = ingest(&path, CorpusFormat::Canonical).unwrap();
        assert_eq!(instances, vec![good]);
        assert_eq!(instances[0].trigger.text, "w4");
        assert_eq!(report.rejected_out_of_bounds, 1);
        assert_eq!(report.instances, 1);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        fs::write(&path, "\n{not json}\n").unwrap();
        match ingest(&path, CorpusFormat::Canonical) {
            Err(Error::MalformedRecord { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rams_like_ingest() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rams.jsonl");
        let rec = serde_json::json!({
            "doc_key": "r1",
            "sentences": [["Rebels", "attacked", "the", "convoy", "."], ["It", "happened", "in", "Kabul", "."]],
            "evt_triggers": [[1, 1, [["conflict.attack.n/a", 1.0]]]],
            "gold_evt_links": [[[1, 1], [0, 0], "evt089arg01attacker"], [[1, 1], [2, 3], "evt089arg02target"], [[1, 1], [8, 8], "evt089arg03place"]]
        });
        fs::write(&path, rec.to_string()).unwrap();
        let (instances, _) = ingest(&path, CorpusFormat::RamsLike).unwrap();
        let inst = &instances[0];
        assert_eq!(inst.trigger.text, "attacked");
        assert_eq!(inst.fillers("target")[0].text, "the convoy");
        // cross-sentence argument keeps its document-level offsets
        assert_eq!(inst.fillers("place")[0], Span { start: 8, end: 9, text: "Kabul".into() });
    }

    #[test]
    fn wikievents_like_ingest() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("wiki.jsonl");
        let rec = serde_json::json!({
            "doc_id": "w1",
            "tokens": ["Ann", "and", "Bo", "met", "in", "Oslo", "."],
            "entity_mentions": [{"id": "e1", "start": 0, "end": 1, "text": "Ann"}, {"id": "e2", "start": 2, "end": 3, "text": "Bo"}, {"id": "e3", "start": 5, "end": 6, "text": "Oslo"}, {"id": "e4", "start": 5, "end": 9, "text": "bad"}],
            "event_mentions": [
                {"id": "m1", "event_type": "Contact.Meet", "trigger": {"start": 3, "end": 4, "text": "met"},
                 "arguments": [{"entity_id": "e1", "role": "Participant", "text": "Ann"}, {"entity_id": "e2", "role": "Participant", "text": "Bo"}, {"entity_id": "e3", "role": "Place", "text": "Oslo"}]},
                {"id": "m2", "event_type": "Contact.Meet", "trigger": {"start": 3, "end": 4, "text": "met"},
                 "arguments": [{"entity_id": "e4", "role": "Place", "text": "bad"}]}
            ]
        });
        fs::write(&path, rec.to_string()).unwrap();
        let (instances, report) = ingest(&path, CorpusFormat::WikiEventsLike).unwrap();
        assert_eq!(instances.len(), 1);
        assert_eq!(report.rejected_out_of_bounds, 1);
        assert_eq!(instances[0].fillers("participant").len(), 2);
    }

    fn scored_dataset(rewards: &[f64]) -> SyntheticDataset {
        let mut ds = SyntheticDataset::new(1);
        for (i, &r) in rewards.iter().enumerate() {
            let inst = instance_with(&["a"]).with_provenance(Provenance::Synthetic);
            ds.samples.push(SyntheticSample {
                id: format!("s{i}"),
                instance: inst,
                prompt: PromptPair {
                    input_text: String::new(),
                    output_text: String::new(),
                },
                score: Some(ScoredSample {
                    sample_id: format!("s{i}"),
                    log_likelihood: r,
                    empty_ratio: 0.8,
                    penalty: 0.0,
                    reward: r,
                }),
            });
        }
        ds
    }

    #[test]
    fn export_threshold_at_median() {
        let rewards: Vec<f64> = (0..100).map(|i| ((i * 37) % 100) as f64 / 10.0 - 5.0).collect();
        let mut sorted = rewards.clone();
        sorted.sort_by(f64::total_cmp);
        let median = (sorted[49] + sorted[50]) / 2.0;
        let expected = sorted.iter().filter(|&&r| r >= median).count();
        assert_eq!(expected, 50);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.jsonl");
        let ds = scored_dataset(&rewards);
        assert_eq!(export_synthetic(&ds, &path, Some(median)).unwrap(), 50);
        assert_eq!(export_synthetic(&ds, &path, Some(f64::NEG_INFINITY)).unwrap(), 100);
        // ties at the threshold are included
        assert_eq!(export_synthetic(&ds, &path, Some(sorted[10])).unwrap(), 90);
        let (back, _) = ingest(&path, CorpusFormat::Canonical).unwrap();
        assert_eq!(back.len(), 90);
        assert_eq!(back[0], ds.samples[0].instance);
    }

    #[test]
    fn export_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.jsonl");
        assert_eq!(export_synthetic(&SyntheticDataset::new(0), &path, None).unwrap(), 0);
        assert_eq!(fs::read_to_string(&path).unwrap(), "");
        let (back, _) = ingest(&path, CorpusFormat::Canonical).unwrap();
        assert!(back.is_empty());
    }

    #[test]
    fn dataset_save_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.jsonl");
        let ds = scored_dataset(&[1.0, -2.5]);
        ds.save(&path).unwrap();
        assert_eq!(SyntheticDataset::load(&path).unwrap(), ds);
    }

    #[test]
    fn document_find_is_token_aligned() {
        let d = Document::from_text("d", "the attack in Paris , the attackers left").unwrap();
        assert_eq!(d.find("attack").unwrap().start, 1);
        assert_eq!(d.find("the attackers").unwrap().start, 5);
        assert!(d.find("tack").is_none());
    }
}
