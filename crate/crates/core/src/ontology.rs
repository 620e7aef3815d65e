//! Event schemas and zero-shot splits.
//!
//! A split partitions event types into seen and unseen sets. Roles are not
//! partitioned: a role of an unseen schema is either shared (it also occurs
//! in some seen schema) or unseen-only.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};

/// Canonical role identity: lowercased and trimmed.
pub fn normalize_role(role: &str) -> String {
    role.trim().to_lowercase()
}

/// Placeholder marker for the role at `index` (zero-based) in a schema.
pub fn placeholder(index: usize) -> String {
    format!("<arg{}>", index + 1)
}

fn placeholder_regex() -> &'static Regex {
    static RE: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    RE.get_or_init(|| Regex::new(r"<arg(\d+)>").expect("static regex"))
}

/// One event type with its ordered role set and extraction template.
///
/// Placeholder `<argK>` in the template binds to `roles[K - 1]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventSchema {
    pub event_type_id: String,
    pub event_type_name: String,
    pub roles: Vec<String>,
    pub template: String,
}

impl EventSchema {
    /// Builds a schema, normalizing role names and validating the template.
    pub fn new(
        event_type_id: impl Into<String>,
        event_type_name: impl Into<String>,
        roles: impl IntoIterator<Item = impl AsRef<str>>,
        template: impl Into<String>,
    ) -> Result<Self> {
        let schema = Self {
            event_type_id: event_type_id.into(),
            event_type_name: event_type_name.into(),
            roles: roles.into_iter().map(|r| normalize_role(r.as_ref())).collect(),
            template: template.into(),
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |reason: String| Error::InvalidSchema {
            event_type: self.event_type_id.clone(),
            reason,
        };
        if self.roles.is_empty() {
            return Err(invalid("role set is empty".into()));
        }
        let mut seen = BTreeSet::new();
        for role in &self.roles {
            if role.is_empty() {
                return Err(invalid("empty role name".into()));
            }
            if !seen.insert(role.as_str()) {
                return Err(invalid(format!("duplicate role `{role}`")));
            }
        }
        if self.template.trim().is_empty() {
            return Err(invalid("empty template".into()));
        }
        let mut counts = vec![0usize; self.roles.len()];
        for cap in placeholder_regex().captures_iter(&self.template) {
            let k: usize = cap[1].parse().unwrap_or(0);
            if k == 0 || k > self.roles.len() {
                return Err(invalid(format!("placeholder <arg{k}> has no bound role")));
            }
            counts[k - 1] += 1;
        }
        if let Some(i) = counts.iter().position(|&c| c != 1) {
            return Err(invalid(format!(
                "placeholder {} occurs {} times, expected once",
                placeholder(i),
                counts[i]
            )));
        }
        Ok(())
    }

    pub fn role_index(&self, role: &str) -> Option<usize> {
        let role = normalize_role(role);
        self.roles.iter().position(|r| *r == role)
    }

    pub fn num_roles(&self) -> usize {
        self.roles.len()
    }
}

/// Whether a role occurs in at least one seen schema.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoleClass {
    Seen,
    Unseen,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OntologySplit {
    pub seen_types: BTreeSet<String>,
    pub unseen_types: BTreeSet<String>,
    /// Roles of unseen schemas that also occur in a seen schema.
    pub shared_roles: BTreeSet<String>,
    /// Roles that occur only in unseen schemas.
    pub unseen_only_roles: BTreeSet<String>,
    /// Every role of every seen schema.
    pub seen_roles: BTreeSet<String>,
}

impl OntologySplit {
    fn from_partition(
        schemas: &[EventSchema],
        seen_types: BTreeSet<String>,
        unseen_types: BTreeSet<String>,
    ) -> Self {
        let roles_of = |types: &BTreeSet<String>| -> BTreeSet<String> {
            schemas
                .iter()
                .filter(|s| types.contains(&s.event_type_id))
                .flat_map(|s| s.roles.iter().cloned())
                .collect()
        };
        let seen_roles = roles_of(&seen_types);
        let unseen_roles = roles_of(&unseen_types);
        let (shared_roles, unseen_only_roles) = unseen_roles
            .into_iter()
            .partition(|role| seen_roles.contains(role));
        Self {
            seen_types,
            unseen_types,
            shared_roles,
            unseen_only_roles,
            seen_roles,
        }
    }

    pub fn classify_role(&self, role: &str) -> RoleClass {
        if self.seen_roles.contains(&normalize_role(role)) {
            RoleClass::Seen
        } else {
            RoleClass::Unseen
        }
    }

    pub fn is_seen(&self, event_type_id: &str) -> bool {
        self.seen_types.contains(event_type_id)
    }

    pub fn is_unseen(&self, event_type_id: &str) -> bool {
        self.unseen_types.contains(event_type_id)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        fs::write(path, json + "\n").io_context(|| format!("writing {}", path.display()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).io_context(|| format!("reading {}", path.display()))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Uniformly partitions event types into seen and unseen sets.
///
/// The unseen count is `round(n * unseen_fraction)`, clamped so that both
/// sides are non-empty.
pub fn build_split(schemas: &[EventSchema], unseen_fraction: f64, seed: u64) -> Result<OntologySplit> {
    if schemas.len() < 2 {
        return Err(Error::Split(format!(
            "need at least 2 schemas to partition, got {}",
            schemas.len()
        )));
    }
    if !(unseen_fraction > 0.0 && unseen_fraction < 1.0) {
        return Err(Error::Split(format!(
            "unseen fraction must lie in (0, 1), got {unseen_fraction}"
        )));
    }
    let mut ids: Vec<String> = schemas.iter().map(|s| s.event_type_id.clone()).collect();
    ids.sort();
    ids.dedup();
    if ids.len() != schemas.len() {
        return Err(Error::Split("duplicate event type ids".into()));
    }
    let n = ids.len();
    let n_unseen = ((n as f64 * unseen_fraction).round() as usize).clamp(1, n - 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let unseen: BTreeSet<String> = ids[..n_unseen].iter().cloned().collect();
    let seen: BTreeSet<String> = ids[n_unseen..].iter().cloned().collect();
    Ok(OntologySplit::from_partition(schemas, seen, unseen))
}

/// Partition with the listed types unseen and every other type seen.
pub fn explicit_split(schemas: &[EventSchema], unseen_types: &[String]) -> Result<OntologySplit> {
    let all: BTreeSet<String> = schemas.iter().map(|s| s.event_type_id.clone()).collect();
    let unseen: BTreeSet<String> = unseen_types.iter().cloned().collect();
    if let Some(missing) = unseen.iter().find(|t| !all.contains(*t)) {
        return Err(Error::UnknownEventType(missing.clone()));
    }
    let seen: BTreeSet<String> = all.difference(&unseen).cloned().collect();
    if seen.is_empty() || unseen.is_empty() {
        return Err(Error::Split("both the seen and the unseen side must be non-empty".into()));
    }
    Ok(OntologySplit::from_partition(schemas, seen, unseen))
}

/// Cross-corpus setting: every source type is seen; target types that also
/// occur in the source are removed from the unseen set.
pub fn cross_corpus_split(
    source_schemas: &[EventSchema],
    target_schemas: &[EventSchema],
) -> Result<OntologySplit> {
    if source_schemas.is_empty() || target_schemas.is_empty() {
        return Err(Error::Split("source and target schema lists must be non-empty".into()));
    }
    let seen: BTreeSet<String> = source_schemas.iter().map(|s| s.event_type_id.clone()).collect();
    let unseen: BTreeSet<String> = target_schemas
        .iter()
        .map(|s| s.event_type_id.clone())
        .filter(|id| !seen.contains(id))
        .collect();
    if unseen.is_empty() {
        return Err(Error::Split(
            "every target event type also occurs in the source; unseen set is empty".into(),
        ));
    }
    let mut all: Vec<EventSchema> = source_schemas.to_vec();
    all.extend(target_schemas.iter().filter(|s| unseen.contains(&s.event_type_id)).cloned());
    Ok(OntologySplit::from_partition(&all, seen, unseen))
}

/// Looks up schemas by event type id.
#[derive(Debug, Clone, Default)]
pub struct Ontology {
    schemas: BTreeMap<String, EventSchema>,
}

impl Ontology {
    pub fn new(schemas: impl IntoIterator<Item = EventSchema>) -> Self {
        Self {
            schemas: schemas
                .into_iter()
                .map(|s| (s.event_type_id.clone(), s))
                .collect(),
        }
    }

    pub fn get(&self, event_type_id: &str) -> Result<&EventSchema> {
        self.schemas
            .get(event_type_id)
            .ok_or_else(|| Error::UnknownEventType(event_type_id.to_string()))
    }

    pub fn schemas(&self) -> impl Iterator<Item = &EventSchema> {
        self.schemas.values()
    }

    pub fn to_vec(&self) -> Vec<EventSchema> {
        self.schemas.values().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.schemas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.schemas.is_empty()
    }
}

/// Reads an ontology file: one JSON schema record per line.
pub fn load_ontology(path: &Path) -> Result<Vec<EventSchema>> {
    let text = fs::read_to_string(path).io_context(|| format!("reading {}", path.display()))?;
    let mut schemas = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |reason: String| Error::MalformedRecord {
            path: path.to_path_buf(),
            line: i + 1,
            reason,
        };
        let raw: EventSchema = serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
        let schema = EventSchema::new(raw.event_type_id, raw.event_type_name, raw.roles, raw.template)
            .map_err(|e| malformed(e.to_string()))?;
        schemas.push(schema);
    }
    Ok(schemas)
}

pub fn save_ontology(schemas: &[EventSchema], path: &Path) -> Result<()> {
    let mut out = Vec::new();
    for schema in schemas {
        serde_json::to_writer(&mut out, schema)?;
        out.push(b'\n');
    }
    let mut file = fs::File::create(path).io_context(|| format!("creating {}", path.display()))?;
    file.write_all(&out).io_context(|| format!("writing {}", path.display()))
}

/// Entry of a template registry file. `bindings` maps each placeholder in
/// `template` to the role it stands for.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TemplateEntry {
    pub event_type_id: String,
    pub template: String,
    pub bindings: BTreeMap<String, String>,
}

/// Applies a template registry to a set of schemas, renumbering placeholders
/// so that `<argK>` binds to the schema's K-th role.
pub fn apply_template_registry(schemas: &mut [EventSchema], path: &Path) -> Result<()> {
    let text = fs::read_to_string(path).io_context(|| format!("reading {}", path.display()))?;
    let mut entries = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let entry: TemplateEntry = serde_json::from_str(line).map_err(|e| Error::MalformedRecord {
            path: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        entries.insert(entry.event_type_id.clone(), entry);
    }
    for schema in schemas.iter_mut() {
        let Some(entry) = entries.get(&schema.event_type_id) else {
            continue;
        };
        let mut rebuilt = String::new();
        let mut last = 0;
        for m in placeholder_regex().find_iter(&entry.template) {
            rebuilt.push_str(&entry.template[last..m.start()]);
            let role = entry.bindings.get(m.as_str()).ok_or_else(|| Error::InvalidSchema {
                event_type: schema.event_type_id.clone(),
                reason: format!("placeholder {} has no binding", m.as_str()),
            })?;
            let idx = schema.role_index(role).ok_or_else(|| Error::InvalidSchema {
                event_type: schema.event_type_id.clone(),
                reason: format!("binding to unknown role `{role}`"),
            })?;
            rebuilt.push_str(&placeholder(idx));
            last = m.end();
        }
        rebuilt.push_str(&entry.template[last..]);
        schema.template = rebuilt;
        schema.validate()?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema(id: &str, roles: &[&str]) -> EventSchema {
        let template = (0..roles.len()).map(placeholder).collect::<Vec<_>>().join(" did ");
        EventSchema::new(id, id, roles.iter().copied(), template).unwrap()
    }

    fn ten_schemas() -> Vec<EventSchema> {
        (0..10)
            .map(|i| schema(&format!("type{i}"), &["place", &format!("role{i}")]))
            .collect()
    }

    #[test]
    fn split_partition_arithmetic() {
        let split = build_split(&ten_schemas(), 0.3, 7).unwrap();
        assert_eq!(split.seen_types.len(), 7);
        assert_eq!(split.unseen_types.len(), 3);
        assert!(split.seen_types.is_disjoint(&split.unseen_types));
    }

    #[test]
    fn split_is_deterministic() {
        let a = build_split(&ten_schemas(), 0.3, 7).unwrap();
        let b = build_split(&ten_schemas(), 0.3, 7).unwrap();
        assert_eq!(a, b);
        let others: Vec<_> = (0..20).map(|s| build_split(&ten_schemas(), 0.3, s).unwrap()).collect();
        assert!(others.iter().any(|o| o.unseen_types != a.unseen_types));
    }

    #[test]
    fn shared_role_bookkeeping() {
        let schemas = vec![schema("a", &["place", "attacker"]), schema("b", &["place", "victim"])];
        let split = build_split(&schemas, 0.5, 1).unwrap();
        assert_eq!(split.shared_roles, BTreeSet::from(["place".to_string()]));
        assert_eq!(split.unseen_only_roles.len(), 1);
        assert_eq!(split.classify_role("place"), RoleClass::Seen);
    }

    #[test]
    fn too_few_schemas() {
        assert!(matches!(build_split(&ten_schemas()[..1], 0.5, 0), Err(Error::Split(_))));
        assert!(build_split(&ten_schemas(), 0.0, 0).is_err());
        assert!(build_split(&ten_schemas(), 1.0, 0).is_err());
    }

    #[test]
    fn cross_corpus_removes_overlap() {
        let a = schema("A", &["x"]);
        let b = schema("B", &["y"]);
        let c = schema("C", &["victim"]);
        let d = schema("D", &["victim", "x"]);
        let split = cross_corpus_split(&[a.clone(), b.clone()], &[b.clone(), c.clone()]).unwrap();
        assert_eq!(split.seen_types, BTreeSet::from(["A".into(), "B".into()]));
        assert_eq!(split.unseen_types, BTreeSet::from(["C".into()]));

        assert!(matches!(cross_corpus_split(&[a.clone()], &[a.clone()]), Err(Error::Split(_))));

        let split = cross_corpus_split(&[a, b], &[c, d]).unwrap();
        assert!(split.unseen_only_roles.contains("victim"));
        assert!(split.shared_roles.contains("x"));
    }

    #[test]
    fn schema_validation() {
        assert!(EventSchema::new("t", "t", ["a", "A "], "<arg1> <arg2>").is_err());
        assert!(EventSchema::new("t", "t", Vec::<&str>::new(), "x").is_err());
        assert!(EventSchema::new("t", "t", ["a", "b"], "<arg1> only").is_err());
        assert!(EventSchema::new("t", "t", ["a"], "<arg1> <arg1>").is_err());
        assert!(EventSchema::new("t", "t", ["a"], "<arg1> <arg2>").is_err());
        let s = EventSchema::new("t", "t", [" Attacker "], "<arg1> attacked").unwrap();
        assert_eq!(s.roles, vec!["attacker"]);
    }

    #[test]
    fn template_registry_renumbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("templates.jsonl");
        fs::write(
            &path,
            r#"{"event_type_id":"t","template":"<arg1> hit <arg2>","bindings":{"<arg1>":"b","<arg2>":"a"}}"#,
        )
        .unwrap();
        let mut schemas = vec![EventSchema::new("t", "t", ["a", "b"], "<arg1> <arg2>").unwrap()];
        apply_template_registry(&mut schemas, &path).unwrap();
        assert_eq!(schemas[0].template, "<arg2> hit <arg1>");
    }

    #[test]
    fn ontology_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ontology.jsonl");
        let schemas = ten_schemas();
        save_ontology(&schemas, &path).unwrap();
        assert_eq!(load_ontology(&path).unwrap(), schemas);
    }
}
