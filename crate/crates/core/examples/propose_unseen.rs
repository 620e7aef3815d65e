//! Fine-tunes the generation agent on seen event types and samples
//! synthetic instances for the unseen ones.

use std::time::Instant;

use eventsynth::corpus::empty_argument_ratio;
use eventsynth::gen_agent::{propose, sft_train, GenerationConfig, GptConfig, TinyGpt, TrainConfig};
use eventsynth::micro::MicroWorld;
use eventsynth::nn::LoraConfig;
use eventsynth::ontology::{build_split, Ontology};
use eventsynth::vocab::pipeline_vocab;

fn main() -> eventsynth::Result<()> {
    let world = MicroWorld::default();
    let schemas = world.schemas();
    let ontology = Ontology::new(schemas.clone());
    let split = build_split(&schemas, 0.3, 7)?;
    let corpora = world.corpora(&split, 80, 30, 11);
    let vocab = pipeline_vocab(corpora.train.iter().chain(&corpora.unseen_dev), &schemas);
    println!("vocabulary of {} pieces", vocab.len());

    let mut agent = TinyGpt::new(vocab, GptConfig::default(), LoraConfig::default(), 1)?;
    let train = TrainConfig {
        epochs: 15,
        lr: 5e-3,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let losses = sft_train(&mut agent, &corpora.train, &ontology, &split, &train, 2)?;
    println!("losses {losses:.2?} in {:.1?}", start.elapsed());

    let start = Instant::now();
    let (dataset, report) = propose(&agent, &split, &ontology, &GenerationConfig::default(), 1, 3)?;
    println!("proposed in {:.1?}: {report:?}", start.elapsed());
    let mut hist = std::collections::BTreeMap::new();
    for sample in &dataset.samples {
        let r = empty_argument_ratio(&sample.instance, ontology.get(&sample.instance.event_type_id)?)?;
        *hist.entry(format!("{r:.2}")).or_insert(0) += 1;
    }
    println!("empty-role ratio histogram {hist:?}");
    for sample in dataset.samples.iter().step_by(7) {
        let schema = ontology.get(&sample.instance.event_type_id)?;
        println!(
            "[{} rho={:.2}] {}",
            sample.id,
            empty_argument_ratio(&sample.instance, schema)?,
            sample.prompt.output_text
        );
    }
    Ok(())
}
