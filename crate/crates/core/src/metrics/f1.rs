use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{EventInstance, Span};
use crate::error::{Error, Result};
use crate::ontology::{OntologySplit, RoleClass};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SliceScore {
    pub gold: usize,
    pub predicted: usize,
    pub matched: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl SliceScore {
    fn from_counts(gold: usize, predicted: usize, matched: usize) -> Self {
        let precision = if predicted == 0 { 0.0 } else { matched as f64 / predicted as f64 };
        let recall = if gold == 0 { 0.0 } else { matched as f64 / gold as f64 };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            gold,
            predicted,
            matched,
            precision,
            recall,
            f1,
        }
    }
}

/// Span-F1 over roles shared with seen types, roles only in unseen types,
/// and all roles.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct F1Report {
    pub seen_role: SliceScore,
    pub unseen_role: SliceScore,
    pub overall: SliceScore,
}

/// Number of greedy one-to-one exact matches, predictions taken in document
/// order.
fn greedy_matches(predicted: &[Span], gold: &[Span]) -> usize {
    let mut pred: Vec<&Span> = predicted.iter().collect();
    pred.sort_by_key(|s| (s.start, s.end));
    let mut used = vec![false; gold.len()];
    let mut matched = 0;
    for p in pred {
        if let Some(i) = (0..gold.len()).find(|&i| !used[i] && gold[i].start == p.start && gold[i].end == p.end) {
            used[i] = true;
            matched += 1;
        }
    }
    matched
}

/// Micro-averaged exact-match Span-F1. Instances are aligned by
/// [`EventInstance::key`]; every prediction needs a gold counterpart and
/// vice versa.
pub fn span_f1(predicted: &[EventInstance], gold: &[EventInstance], split: &OntologySplit) -> Result<F1Report> {
    let gold_by_key: BTreeMap<String, &EventInstance> = gold.iter().map(|g| (g.key(), g)).collect();
    let pred_by_key: BTreeMap<String, &EventInstance> = predicted.iter().map(|p| (p.key(), p)).collect();
    if let Some(k) = pred_by_key.keys().find(|k| !gold_by_key.contains_key(*k)) {
        return Err(Error::Unaligned(k.clone()));
    }
    if let Some(k) = gold_by_key.keys().find(|k| !pred_by_key.contains_key(*k)) {
        return Err(Error::Unaligned(k.clone()));
    }
    // [seen, unseen] x (gold, predicted, matched)
    let mut counts = [[0usize; 3]; 2];
    for (key, g) in &gold_by_key {
        let p = pred_by_key[key];
        let roles: std::collections::BTreeSet<&String> = g.arguments.keys().chain(p.arguments.keys()).collect();
        for role in roles {
            let slot = match split.classify_role(role) {
                RoleClass::Seen => 0,
                RoleClass::Unseen => 1,
            };
            let (gs, ps) = (g.fillers(role), p.fillers(role));
            counts[slot][0] += gs.len();
            counts[slot][1] += ps.len();
            counts[slot][2] += greedy_matches(ps, gs);
        }
    }
    let slice = |c: [usize; 3]| SliceScore::from_counts(c[0], c[1], c[2]);
    let total = [0, 1, 2].map(|i| counts[0][i] + counts[1][i]);
    Ok(F1Report {
        seen_role: slice(counts[0]),
        unseen_role: slice(counts[1]),
        overall: slice(total),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Document, Provenance};
    use crate::ontology::{build_split, EventSchema};

    fn split() -> OntologySplit {
        let schemas = vec![
            EventSchema::new("a.seen", "a seen", ["attacker", "place"], "<arg1> at <arg2>").unwrap(),
            EventSchema::new("b.unseen", "b unseen", ["victim", "place"], "<arg1> at <arg2>").unwrap(),
        ];
        let mut s = build_split(&schemas, 0.5, 0).unwrap();
        // fix the partition regardless of the shuffle
        s.seen_types = ["a.seen".to_string()].into();
        s.unseen_types = ["b.unseen".to_string()].into();
        s.seen_roles = ["attacker".to_string(), "place".to_string()].into();
        s
    }

    fn inst(args: &[(&str, usize, usize)]) -> EventInstance {
        let doc = Document::from_text("d", "x Ann y Bo z Kabul w Cy").unwrap();
        let mut map: BTreeMap<String, Vec<Span>> = BTreeMap::new();
        for &(r, s, e) in args {
            map.entry(r.into()).or_default().push(doc.span(s, e).unwrap());
        }
        let trig = doc.span(0, 1).unwrap();
        EventInstance::new(doc, "b.unseen", trig, map, Provenance::Gold).unwrap()
    }

    #[test]
    fn hand_counted_fixture() {
        let gold = inst(&[("victim", 1, 2), ("victim", 3, 4), ("place", 5, 6)]);
        let pred = inst(&[("victim", 1, 2), ("place", 7, 8)]);
        let r = span_f1(&[pred], &[gold], &split()).unwrap();
        assert_eq!(r.overall.precision, 0.5);
        assert!((r.overall.recall - 1.0 / 3.0).abs() < 1e-12);
        assert!((r.overall.f1 - 0.4).abs() < 1e-12);
        assert_eq!(r.unseen_role.matched, 1);
        assert_eq!(r.seen_role.gold, 1);
        assert_eq!(r.seen_role.matched + r.unseen_role.matched, r.overall.matched);
    }

    #[test]
    fn identity_and_shifted_offsets() {
        let gold = inst(&[("victim", 1, 2), ("place", 5, 6)]);
        let r = span_f1(&[gold.clone()], &[gold.clone()], &split()).unwrap();
        assert_eq!((r.overall.precision, r.overall.recall, r.overall.f1), (1.0, 1.0, 1.0));
        // same string "Ann" cannot be shifted here; a wider span gets no credit
        let pred = inst(&[("victim", 1, 3), ("place", 5, 6)]);
        let r = span_f1(&[pred], &[gold], &split()).unwrap();
        assert_eq!(r.overall.matched, 1);
    }

    #[test]
    fn unaligned_ids() {
        let gold = inst(&[]);
        let mut other = gold.clone();
        other.document.doc_id = "elsewhere".into();
        assert!(matches!(span_f1(&[other], &[gold], &split()), Err(Error::Unaligned(_))));
    }

    #[test]
    fn empty_everything_is_zero() {
        let r = span_f1(&[inst(&[])], &[inst(&[])], &split()).unwrap();
        assert_eq!(r.overall.f1, 0.0);
    }
}
