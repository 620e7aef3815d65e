//! A small synthetic event world used for desk-scale experiments and tests.
//!
//! Ten event types over a shared pool of roles (`place` occurs everywhere,
//! `victim`, `instrument` and `artifact` in several types). Documents are a
//! trigger sentence followed by shuffled role sentences and distractors, so
//! arguments routinely sit in a different sentence than the trigger.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use std::fs;
use std::path::{Path, PathBuf};

use crate::corpus::{write_canonical, Document, EventInstance, Provenance, Span};
use crate::error::{IoContext, Result};
use crate::ontology::{save_ontology, EventSchema, OntologySplit};

const PERSONS: &[&str] = &[
    "Ann", "Bo", "Carl", "Dana", "Eli", "Fay", "Gus", "Hana", "Ivan", "Jin", "Kai", "Lena", "Omar", "Pia", "Raj",
    "Sara", "Tom", "Uma", "Vic", "Wes",
];
const GROUPS: &[&str] = &["rebels", "soldiers", "militants", "insurgents", "gunmen", "troops", "guards", "police"];
const ORGS: &[&str] = &["Acme", "Globex", "Initech", "Hooli", "Vandelay", "Stark", "Wayne", "Tyrell"];
const PLACES: &[&str] = &[
    "Kabul", "Paris", "Berlin", "Lagos", "Lima", "Oslo", "Cairo", "Delhi", "Quito", "Riga", "Tunis", "Hanoi",
];
const FACILITIES: &[&str] = &[
    "the embassy", "the bridge", "the market", "the convoy", "the station", "the hospital", "the airport", "the depot",
];
const WEAPONS: &[&str] = &["bomb", "rifle", "knife", "grenade", "drone", "missile", "pistol"];
const ARTIFACTS: &[&str] = &["documents", "grain", "medicine", "laptops", "gold", "cattle", "fuel", "weapons"];
const VEHICLES: &[&str] = &["truck", "plane", "train", "boat", "bus", "helicopter"];
const CRIMES: &[&str] = &["fraud", "theft", "murder", "bribery", "smuggling", "arson"];
const DAYS: &[&str] = &["Monday", "Tuesday", "Wednesday", "Thursday", "Friday", "Saturday", "Sunday"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Class {
    Person,
    Group,
    Org,
    Place,
    Facility,
    Weapon,
    Artifact,
    Vehicle,
    Crime,
}

impl Class {
    fn pool(self) -> &'static [&'static str] {
        match self {
            Class::Person => PERSONS,
            Class::Group => GROUPS,
            Class::Org => ORGS,
            Class::Place => PLACES,
            Class::Facility => FACILITIES,
            Class::Weapon => WEAPONS,
            Class::Artifact => ARTIFACTS,
            Class::Vehicle => VEHICLES,
            Class::Crime => CRIMES,
        }
    }
}

struct RoleSpec {
    name: &'static str,
    classes: &'static [Class],
    /// `{X}` is the argument, `{T}` the trigger word.
    cues: &'static [&'static str],
    max_fillers: usize,
}

const ROLES: &[RoleSpec] = &[
    RoleSpec { name: "attacker", classes: &[Class::Group], cues: &["{X} carried out the {T} .", "the {T} was blamed on {X} ."], max_fillers: 1 },
    RoleSpec { name: "target", classes: &[Class::Facility], cues: &["{X} was hit during the {T} .", "the {T} targeted {X} ."], max_fillers: 1 },
    RoleSpec { name: "instrument", classes: &[Class::Weapon], cues: &["a {X} was used .", "witnesses saw a {X} ."], max_fillers: 1 },
    RoleSpec { name: "place", classes: &[Class::Place], cues: &["it happened in {X} .", "the {T} took place in {X} ."], max_fillers: 1 },
    RoleSpec { name: "victim", classes: &[Class::Person], cues: &["{X} was the victim .", "doctors treated {X} ."], max_fillers: 1 },
    RoleSpec { name: "killer", classes: &[Class::Group, Class::Person], cues: &["{X} was blamed for the {T} .", "{X} fired the fatal shot ."], max_fillers: 1 },
    RoleSpec { name: "injurer", classes: &[Class::Group, Class::Person], cues: &["{X} caused the injuries .", "{X} opened fire ."], max_fillers: 1 },
    RoleSpec { name: "giver", classes: &[Class::Person, Class::Org], cues: &["{X} handed over the goods .", "{X} sent the package ."], max_fillers: 1 },
    RoleSpec { name: "recipient", classes: &[Class::Person, Class::Org], cues: &["{X} received the package .", "the goods went to {X} ."], max_fillers: 1 },
    RoleSpec { name: "artifact", classes: &[Class::Artifact], cues: &["the {X} changed hands .", "the {T} involved {X} ."], max_fillers: 1 },
    RoleSpec { name: "buyer", classes: &[Class::Person, Class::Org], cues: &["{X} paid for it .", "{X} made the offer ."], max_fillers: 1 },
    RoleSpec { name: "seller", classes: &[Class::Person, Class::Org], cues: &["{X} sold it .", "{X} accepted the offer ."], max_fillers: 1 },
    RoleSpec { name: "transporter", classes: &[Class::Org, Class::Person], cues: &["{X} organized the {T} .", "{X} provided the crew ."], max_fillers: 1 },
    RoleSpec { name: "passenger", classes: &[Class::Person], cues: &["{X} was on board .", "{X} travelled with them ."], max_fillers: 1 },
    RoleSpec { name: "vehicle", classes: &[Class::Vehicle], cues: &["they used a {X} .", "a {X} carried them ."], max_fillers: 1 },
    RoleSpec { name: "origin", classes: &[Class::Place], cues: &["they left {X} at dawn .", "the {T} started in {X} ."], max_fillers: 1 },
    RoleSpec { name: "destination", classes: &[Class::Place], cues: &["they arrived in {X} .", "the {T} ended in {X} ."], max_fillers: 1 },
    RoleSpec { name: "participant", classes: &[Class::Person], cues: &["{X} attended the {T} .", "{X} spoke at length ."], max_fillers: 3 },
    RoleSpec { name: "employer", classes: &[Class::Org], cues: &["{X} announced the {T} .", "{X} offered a contract ."], max_fillers: 1 },
    RoleSpec { name: "employee", classes: &[Class::Person], cues: &["{X} joined the staff .", "{X} signed the contract ."], max_fillers: 1 },
    RoleSpec { name: "jailer", classes: &[Class::Group], cues: &["{X} made the {T} .", "{X} detained the suspect ."], max_fillers: 1 },
    RoleSpec { name: "detainee", classes: &[Class::Person], cues: &["{X} was taken into custody .", "{X} was held overnight ."], max_fillers: 1 },
    RoleSpec { name: "crime", classes: &[Class::Crime], cues: &["the charge was {X} .", "prosecutors cited {X} ."], max_fillers: 1 },
    RoleSpec { name: "inspector", classes: &[Class::Person, Class::Org], cues: &["{X} led the {T} .", "{X} wrote the report ."], max_fillers: 1 },
    RoleSpec { name: "inspected", classes: &[Class::Facility], cues: &["{X} was examined closely .", "the {T} covered {X} ."], max_fillers: 1 },
];

struct TypeSpec {
    id: &'static str,
    name: &'static str,
    roles: &'static [&'static str],
    template: &'static str,
    triggers: &'static [&'static str],
}

const TYPES: &[TypeSpec] = &[
    TypeSpec { id: "conflict.attack", name: "conflict attack", roles: &["attacker", "target", "instrument", "place"], template: "<arg1> attacked <arg2> using <arg3> at <arg4> place", triggers: &["attack", "assault", "raid"] },
    TypeSpec { id: "life.die", name: "life die", roles: &["victim", "killer", "instrument", "place"], template: "<arg1> died at <arg4> place killed by <arg2> using <arg3>", triggers: &["death", "killing"] },
    TypeSpec { id: "life.injure", name: "life injure", roles: &["victim", "injurer", "instrument", "place"], template: "<arg2> injured <arg1> with <arg3> at <arg4> place", triggers: &["injury", "wounding", "shooting"] },
    TypeSpec { id: "transaction.transfer", name: "transaction transfer", roles: &["giver", "recipient", "artifact", "place"], template: "<arg1> gave <arg3> to <arg2> at <arg4> place", triggers: &["transfer", "handover", "delivery"] },
    TypeSpec { id: "transaction.purchase", name: "transaction purchase", roles: &["buyer", "seller", "artifact", "place"], template: "<arg1> bought <arg3> from <arg2> at <arg4> place", triggers: &["purchase", "sale", "deal"] },
    TypeSpec { id: "movement.transport", name: "movement transport", roles: &["transporter", "passenger", "vehicle", "origin", "destination"], template: "<arg1> transported <arg2> in <arg3> from <arg4> place to <arg5> place", triggers: &["trip", "journey", "evacuation"] },
    TypeSpec { id: "contact.meet", name: "contact meet", roles: &["participant", "place"], template: "<arg1> met at <arg2> place", triggers: &["meeting", "summit", "talks"] },
    TypeSpec { id: "personnel.hire", name: "personnel hire", roles: &["employer", "employee", "place"], template: "<arg1> hired <arg2> at <arg3> place", triggers: &["hiring", "appointment"] },
    TypeSpec { id: "justice.arrest", name: "justice arrest", roles: &["jailer", "detainee", "crime", "place"], template: "<arg1> arrested <arg2> for <arg3> at <arg4> place", triggers: &["arrest", "detention", "raid"] },
    TypeSpec { id: "inspection.inspect", name: "inspection inspect", roles: &["inspector", "inspected", "place"], template: "<arg1> inspected <arg2> at <arg3> place", triggers: &["inspection", "audit", "review"] },
];

const OPENINGS: &[&str] = &[
    "there was a {T} on {D} .",
    "officials confirmed the {T} on {D} .",
    "reports described a {T} late on {D} .",
];
const FILLERS: &[&str] = &[
    "the news spread quickly .",
    "more details are expected soon .",
    "a spokesman declined to comment .",
    "people in {P} followed the story .",
    "a statement from {O} was brief .",
];

/// Generator settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MicroConfig {
    /// Probability that any given role is left without an argument.
    pub empty_role_prob: f64,
    pub max_filler_sentences: usize,
}

impl Default for MicroConfig {
    fn default() -> Self {
        Self {
            empty_role_prob: 0.25,
            max_filler_sentences: 2,
        }
    }
}

pub struct MicroWorld {
    config: MicroConfig,
}

impl Default for MicroWorld {
    fn default() -> Self {
        Self::new(MicroConfig::default())
    }
}

fn role_spec(name: &str) -> &'static RoleSpec {
    ROLES.iter().find(|r| r.name == name).expect("role defined in micro world")
}

fn type_spec(id: &str) -> Option<&'static TypeSpec> {
    TYPES.iter().find(|t| t.id == id)
}

impl MicroWorld {
    pub fn new(config: MicroConfig) -> Self {
        Self { config }
    }

    pub fn schemas(&self) -> Vec<EventSchema> {
        TYPES
            .iter()
            .map(|t| EventSchema::new(t.id, t.name, t.roles.iter().copied(), t.template).expect("valid micro schema"))
            .collect()
    }

    /// Every word the generator can emit.
    pub fn lexicon(&self) -> BTreeSet<String> {
        let mut words = BTreeSet::new();
        let mut add = |s: &str| {
            for w in s.split_whitespace() {
                if !w.contains('{') {
                    words.insert(w.to_string());
                }
            }
        };
        for pool in [PERSONS, GROUPS, ORGS, PLACES, FACILITIES, WEAPONS, ARTIFACTS, VEHICLES, CRIMES, DAYS] {
            pool.iter().for_each(|s| add(s));
        }
        for r in ROLES {
            r.cues.iter().for_each(|s| add(s));
        }
        for t in TYPES {
            t.triggers.iter().for_each(|s| add(s));
        }
        OPENINGS.iter().chain(FILLERS).for_each(|s| add(s));
        add("and");
        words
    }

    /// Generates one gold instance of `event_type_id`.
    pub fn instance(&self, event_type_id: &str, doc_id: &str, rng: &mut ChaCha8Rng) -> Option<EventInstance> {
        let spec = type_spec(event_type_id)?;
        let trigger = *spec.triggers.choose(rng)?;
        let mut used: BTreeSet<&str> = BTreeSet::new();
        let pick = |class: Class, rng: &mut ChaCha8Rng, used: &mut BTreeSet<&'static str>| -> &'static str {
            let free: Vec<&'static str> = class.pool().iter().copied().filter(|e| !used.contains(e)).collect();
            let e = *free.choose(rng).expect("entity pools outnumber roles");
            used.insert(e);
            e
        };

        let mut filled: Vec<bool> = spec.roles.iter().map(|_| rng.random::<f64>() >= self.config.empty_role_prob).collect();
        if !filled.iter().any(|&f| f) {
            let i = rng.random_range(0..filled.len());
            filled[i] = true;
        }

        // (sentence tokens, role, filler token offsets within the sentence)
        let mut sentences: Vec<(Vec<String>, Option<&str>, Vec<(usize, usize)>)> = Vec::new();
        for (role, &is_filled) in spec.roles.iter().zip(&filled) {
            if !is_filled {
                continue;
            }
            let rs = role_spec(role);
            let count = rng.random_range(1..=rs.max_fillers);
            let mut fillers = Vec::new();
            for _ in 0..count {
                let class = *rs.classes.choose(rng).unwrap();
                fillers.push(pick(class, rng, &mut used));
            }
            let cue = *rs.cues.choose(rng).unwrap();
            let mut tokens = Vec::new();
            let mut offsets = Vec::new();
            for w in cue.split_whitespace() {
                match w {
                    "{X}" => {
                        for (k, f) in fillers.iter().enumerate() {
                            if k > 0 {
                                tokens.push("and".to_string());
                            }
                            let start = tokens.len();
                            tokens.extend(f.split_whitespace().map(str::to_string));
                            offsets.push((start, tokens.len()));
                        }
                    }
                    "{T}" => tokens.push(trigger.to_string()),
                    other => tokens.push(other.to_string()),
                }
            }
            sentences.push((tokens, Some(role), offsets));
        }
        let n_fill = rng.random_range(0..=self.config.max_filler_sentences);
        for _ in 0..n_fill {
            let f = *FILLERS.choose(rng).unwrap();
            let tokens: Vec<String> = f
                .split_whitespace()
                .map(|w| match w {
                    "{P}" => pick(Class::Place, rng, &mut used).to_string(),
                    "{O}" => pick(Class::Org, rng, &mut used).to_string(),
                    other => other.to_string(),
                })
                .collect();
            sentences.push((tokens, None, Vec::new()));
        }
        sentences.shuffle(rng);

        let opening = *OPENINGS.choose(rng).unwrap();
        let day = *DAYS.choose(rng).unwrap();
        let mut tokens: Vec<String> = Vec::new();
        let mut trigger_pos = 0;
        for w in opening.split_whitespace() {
            match w {
                "{T}" => {
                    trigger_pos = tokens.len();
                    tokens.push(trigger.to_string());
                }
                "{D}" => tokens.push(day.to_string()),
                other => tokens.push(other.to_string()),
            }
        }
        let mut spans: BTreeMap<String, Vec<(usize, usize)>> = BTreeMap::new();
        for (sent, role, offsets) in sentences {
            let base = tokens.len();
            if let Some(role) = role {
                spans
                    .entry(role.to_string())
                    .or_default()
                    .extend(offsets.iter().map(|(s, e)| (base + s, base + e)));
            }
            tokens.extend(sent);
        }
        let document = Document::new(doc_id, tokens).ok()?;
        let trigger_span = document.span(trigger_pos, trigger_pos + 1)?;
        let arguments: BTreeMap<String, Vec<Span>> = spans
            .into_iter()
            .map(|(role, offs)| {
                let spans = offs.into_iter().filter_map(|(s, e)| document.span(s, e)).collect();
                (role, spans)
            })
            .collect();
        EventInstance::new(document, event_type_id, trigger_span, arguments, Provenance::Gold).ok()
    }

    /// `per_type` instances for each listed type, interleaved by type.
    pub fn generate(&self, types: &[String], per_type: usize, prefix: &str, seed: u64) -> Vec<EventInstance> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        for i in 0..per_type {
            for ty in types {
                if let Some(inst) = self.instance(ty, &format!("{prefix}-{ty}-{i}"), &mut rng) {
                    out.push(inst);
                }
            }
        }
        out
    }

    /// Seen-type training data plus held-out gold for seen and unseen types.
    pub fn corpora(&self, split: &OntologySplit, seen_per_type: usize, heldout_per_type: usize, seed: u64) -> MicroCorpora {
        let seen_types: Vec<String> = split.seen_types.iter().cloned().collect();
        let unseen_types: Vec<String> = split.unseen_types.iter().cloned().collect();
        MicroCorpora {
            train: self.generate(&seen_types, seen_per_type, "train", seed),
            seen_heldout: self.generate(&seen_types, heldout_per_type, "heldout", seed.wrapping_add(1)),
            unseen_dev: self.generate(&unseen_types, heldout_per_type, "dev", seed.wrapping_add(2)),
        }
    }
}

/// Paths of a micro experiment written by [`MicroWorld::write_files`].
#[derive(Debug, Clone)]
pub struct MicroFiles {
    pub ontology: PathBuf,
    pub train: PathBuf,
    pub dev: PathBuf,
}

impl MicroWorld {
    /// Writes the ontology and canonical-format train and dev corpora
    /// covering every event type into `dir`.
    pub fn write_files(&self, dir: &Path, train_per_type: usize, dev_per_type: usize, seed: u64) -> Result<MicroFiles> {
        fs::create_dir_all(dir).io_context(|| format!("creating {}", dir.display()))?;
        let schemas = self.schemas();
        let types: Vec<String> = schemas.iter().map(|s| s.event_type_id.clone()).collect();
        let files = MicroFiles {
            ontology: dir.join("ontology.jsonl"),
            train: dir.join("train.jsonl"),
            dev: dir.join("dev.jsonl"),
        };
        save_ontology(&schemas, &files.ontology)?;
        write_canonical(&files.train, &self.generate(&types, train_per_type, "train", seed))?;
        write_canonical(&files.dev, &self.generate(&types, dev_per_type, "dev", seed.wrapping_add(2)))?;
        Ok(files)
    }
}

#[derive(Debug, Clone)]
pub struct MicroCorpora {
    pub train: Vec<EventInstance>,
    pub seen_heldout: Vec<EventInstance>,
    pub unseen_dev: Vec<EventInstance>,
}
