//! Trains the extractor on seen event types of the micro world, then checks
//! that gold arguments score higher than corrupted ones on held-out data.

use std::time::Instant;

use eventsynth::eval_agent::{extract_batch, train_extractor, ExtractorConfig, Seq2Seq};
use eventsynth::gen_agent::TrainConfig;
use eventsynth::metrics::{sensitivity_probe, span_f1, ProbeConfig};
use eventsynth::micro::MicroWorld;
use eventsynth::ontology::{build_split, Ontology};
use eventsynth::vocab::Vocab;

fn main() -> eventsynth::Result<()> {
    let world = MicroWorld::default();
    let schemas = world.schemas();
    let ontology = Ontology::new(schemas.clone());
    let split = build_split(&schemas, 0.3, 7)?;
    let corpora = world.corpora(&split, 80, 30, 11);
    println!("seen types: {:?}", split.seen_types);
    println!("train {} / held-out {} / unseen dev {}", corpora.train.len(), corpora.seen_heldout.len(), corpora.unseen_dev.len());

    let mut words: Vec<String> = world.lexicon().into_iter().collect();
    for s in &schemas {
        words.extend(s.template.split_whitespace().map(str::to_string));
    }
    let mut model = Seq2Seq::new(Vocab::build(words), ExtractorConfig::default(), 1)?;
    let train = TrainConfig {
        epochs: 6,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let losses = train_extractor(&mut model, &corpora.train, &ontology, &train, 2)?;
    println!("losses {losses:.3?} in {:.1?}", start.elapsed());

    let report = sensitivity_probe(&model, &corpora.seen_heldout, &ontology, &ProbeConfig::default(), 3)?;
    println!(
        "mean ℓ normal {:.3} empty {:.3} mismatch {:.3}",
        report.mean_normal, report.mean_empty, report.mean_mismatch
    );
    println!("sign test vs empty {:?}", report.normal_vs_empty);
    println!("sign test vs mismatch {:?}", report.normal_vs_mismatch);

    let start = Instant::now();
    for (name, gold) in [("seen held-out", &corpora.seen_heldout), ("unseen dev", &corpora.unseen_dev)] {
        let predicted: Vec<_> = extract_batch(&model, &ontology, gold)?.into_iter().map(|e| e.instance).collect();
        let f1 = span_f1(&predicted, gold, &split)?;
        println!("{name}: overall F1 {:.3} (seen roles {:.3}, unseen roles {:.3})", f1.overall.f1, f1.seen_role.f1, f1.unseen_role.f1);
    }
    println!("extraction in {:.1?}", start.elapsed());
    Ok(())
}
