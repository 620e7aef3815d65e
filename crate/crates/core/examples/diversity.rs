//! Lexical, syntactic, semantic and logical diversity of synthetic data,
//! within samples for the same prompt and across prompts, per round.

use std::collections::BTreeMap;

use eventsynth::corpus::{SyntheticDataset, SyntheticSample};
use eventsynth::metrics::diversity;
use eventsynth::micro::{MicroConfig, MicroWorld};
use eventsynth::ontology::{build_split, Ontology};
use eventsynth::prompting::prompt_pair;

fn round(world: &MicroWorld, ontology: &Ontology, types: &[String], index: usize, seed: u64) -> eventsynth::Result<SyntheticDataset> {
    let mut dataset = SyntheticDataset::new(index);
    for inst in world.generate(types, 6, &format!("r{index}"), seed) {
        let schema = ontology.get(&inst.event_type_id)?;
        dataset.samples.push(SyntheticSample {
            id: inst.document.doc_id.clone(),
            prompt: prompt_pair(&inst, schema),
            instance: inst,
            score: None,
        });
    }
    Ok(dataset)
}

fn main() -> eventsynth::Result<()> {
    let world = MicroWorld::default();
    let plain = MicroWorld::new(MicroConfig {
        max_filler_sentences: 0,
        ..MicroConfig::default()
    });
    let schemas = world.schemas();
    let ontology = Ontology::new(schemas.clone());
    let split = build_split(&schemas, 0.3, 7)?;
    let unseen: Vec<String> = split.unseen_types.iter().cloned().collect();
    let mut rounds = BTreeMap::new();
    rounds.insert(1, round(&plain, &ontology, &unseen, 1, 1)?);
    rounds.insert(2, round(&world, &ontology, &unseen, 2, 2)?);
    let report = diversity(&rounds)?;
    println!("round\tdimension\tscope\tvalue");
    for row in report.series() {
        println!("{}\t{}\t{}\t{:.4}", row.round, row.dimension, row.scope, row.value);
    }
    Ok(())
}
