//! Span-F1 on a hand-checkable example: two predicted arguments, three gold
//! arguments, one exact match.

use std::collections::BTreeMap;

use eventsynth::corpus::{Document, EventInstance, Provenance, Span};
use eventsynth::metrics::span_f1;
use eventsynth::ontology::{explicit_split, EventSchema};

fn instance(doc: &Document, args: &[(&str, &str)]) -> EventInstance {
    let mut map: BTreeMap<String, Vec<Span>> = BTreeMap::new();
    for (role, text) in args {
        map.entry(role.to_string()).or_default().push(doc.find(text).expect("argument in document"));
    }
    EventInstance::new(doc.clone(), "life.die", doc.find("killed").unwrap(), map, Provenance::Gold).unwrap()
}

fn main() -> eventsynth::Result<()> {
    let schemas = vec![
        EventSchema::new("conflict.attack", "conflict attack", ["attacker", "place"], "<arg1> attacked at <arg2>")?,
        EventSchema::new("life.die", "life die", ["victim", "place"], "<arg1> died at <arg2>")?,
    ];
    let split = explicit_split(&schemas, &["life.die".to_string()])?;
    let doc = Document::from_text("d1", "rebels killed Ann and Bo in Kabul near Lima")?;
    let gold = instance(&doc, &[("victim", "Ann"), ("victim", "Bo"), ("place", "Kabul")]);
    let pred = instance(&doc, &[("victim", "Ann"), ("place", "Lima")]);
    let report = span_f1(&[pred], &[gold], &split)?;
    for (name, s) in [("overall", &report.overall), ("seen roles", &report.seen_role), ("unseen roles", &report.unseen_role)] {
        println!(
            "{name:<13} gold {} predicted {} matched {}  P {:.3} R {:.3} F1 {:.3}",
            s.gold, s.predicted, s.matched, s.precision, s.recall, s.f1
        );
    }
    Ok(())
}
