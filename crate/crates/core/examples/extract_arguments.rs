//! Trains the extractor on seen event types and extracts arguments of
//! unseen types by filling their templates. Decoding is restricted to the
//! document's tokens, the template tokens and a few structural tokens.

use eventsynth::eval_agent::{extract, extract_batch, train_extractor, ExtractorConfig, Seq2Seq, VocabularyMask};
use eventsynth::gen_agent::TrainConfig;
use eventsynth::metrics::span_f1;
use eventsynth::micro::MicroWorld;
use eventsynth::ontology::{build_split, Ontology};
use eventsynth::vocab::pipeline_vocab;

fn main() -> eventsynth::Result<()> {
    let world = MicroWorld::default();
    let schemas = world.schemas();
    let ontology = Ontology::new(schemas.clone());
    let split = build_split(&schemas, 0.3, 7)?;
    let corpora = world.corpora(&split, 60, 20, 11);
    let vocab = pipeline_vocab(corpora.train.iter().chain(&corpora.unseen_dev), &schemas);
    let mut model = Seq2Seq::new(vocab, ExtractorConfig::default(), 1)?;
    let train = TrainConfig {
        epochs: 5,
        ..TrainConfig::default()
    };
    let losses = train_extractor(&mut model, &corpora.train, &ontology, &train, 2)?;
    println!("training losses {losses:.2?}");

    let gold = &corpora.unseen_dev[0];
    let schema = ontology.get(&gold.event_type_id)?;
    let mask = VocabularyMask::new(&model.vocab, schema, &gold.document);
    println!("\ndocument: {}", gold.document.text());
    println!("template: {}", schema.template);
    println!("allowed output tokens: {} of {}", mask.ids().len(), model.vocab.len());
    let out = extract(&model, schema, &gold.document, &gold.trigger)?;
    println!("decoded:  {}", out.decoded);
    println!("gold:     {:?}", gold.arguments.iter().map(|(r, s)| (r, s.iter().map(|x| &x.text).collect::<Vec<_>>())).collect::<Vec<_>>());
    println!("predicted {:?}", out.instance.arguments.iter().map(|(r, s)| (r, s.iter().map(|x| &x.text).collect::<Vec<_>>())).collect::<Vec<_>>());

    let predicted: Vec<_> = extract_batch(&model, &ontology, &corpora.unseen_dev)?.into_iter().map(|e| e.instance).collect();
    let report = span_f1(&predicted, &corpora.unseen_dev, &split)?;
    println!(
        "\nunseen-type dev F1: overall {:.3}, seen roles {:.3}, unseen roles {:.3}",
        report.overall.f1, report.seen_role.f1, report.unseen_role.f1
    );
    Ok(())
}
