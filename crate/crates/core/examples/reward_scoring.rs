//! Scores a small synthetic dataset: log-likelihoods are standardized over
//! the dataset and a penalty is subtracted when a sample's share of empty
//! roles leaves the band fitted on seen training data.

use eventsynth::corpus::{SyntheticDataset, SyntheticSample};
use eventsynth::micro::{MicroConfig, MicroWorld};
use eventsynth::ontology::{build_split, Ontology};
use eventsynth::prompting::prompt_pair;
use eventsynth::reward::{fit_structure_band, score_dataset, BandSpec};

fn main() -> eventsynth::Result<()> {
    let world = MicroWorld::default();
    let schemas = world.schemas();
    let ontology = Ontology::new(schemas.clone());
    let split = build_split(&schemas, 0.3, 7)?;
    let seen = world.corpora(&split, 40, 0, 1).train;
    let band = fit_structure_band(&seen, &ontology)?;
    println!("band: tau {:.3} epsilon {:.3}", band.tau, band.epsilon);

    // stand-in synthetic data: sparse and dense instances of unseen types
    let sparse = MicroWorld::new(MicroConfig {
        empty_role_prob: 0.8,
        ..MicroConfig::default()
    });
    let unseen: Vec<String> = split.unseen_types.iter().cloned().collect();
    let mut dataset = SyntheticDataset::new(1);
    for (i, inst) in world.generate(&unseen, 2, "dense", 3).into_iter().chain(sparse.generate(&unseen, 2, "sparse", 4)).enumerate() {
        let schema = ontology.get(&inst.event_type_id)?;
        dataset.samples.push(SyntheticSample {
            id: format!("s{i}-{}", inst.document.doc_id),
            prompt: prompt_pair(&inst, schema),
            instance: inst,
            score: None,
        });
    }
    let lls: Vec<f64> = (0..dataset.len()).map(|i| -20.0 + 3.0 * ((i * 7) % 5) as f64).collect();
    let scored = score_dataset(&dataset, &lls, &ontology, &BandSpec::Global(band), true)?;
    print!("{}", scored.ledger());
    println!("mean reward {:.3e} (penalties pull it below zero), mean empty ratio {:.3}", scored.mean_reward(), scored.mean_empty_ratio());
    Ok(())
}
