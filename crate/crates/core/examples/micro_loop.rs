//! Writes a micro-world experiment, runs a short propose/score/revise loop
//! on it, exports the best-rewarded synthetic data of the last round and
//! plots the per-round series.
//!
//! Usage: `micro_loop <work dir>`

use std::path::PathBuf;

use eventsynth::experiment::{Experiment, ExperimentConfig, PathsConfig};
use eventsynth::micro::MicroWorld;
use eventsynth::plot;

fn main() -> eventsynth::Result<()> {
    eventsynth::logging::init(log::LevelFilter::Info);
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "micro-loop".into()));
    let files = MicroWorld::default().write_files(&dir.join("data"), 60, 20, 5)?;
    let mut config = ExperimentConfig {
        seed: 5,
        out_dir: dir.join("run"),
        paths: PathsConfig {
            ontology: files.ontology,
            train: files.train,
            dev: files.dev,
            ..Default::default()
        },
        ..Default::default()
    };
    config.rl.rounds = 2;
    config.rl.seeds = vec![1];
    config.generator_training.epochs = 8;
    std::fs::write(dir.join("experiment.toml"), config.to_toml()).expect("writable work dir");

    let exp = Experiment::open(config)?;
    let outcome = exp.run_rounds()?;
    for state in &outcome.states {
        let m = &state.metrics;
        println!(
            "seed {} round {}: dev F1 {:.3}, samples {}, mean reward {:?}",
            m.seed, m.round, m.dev.overall.f1, m.samples, m.mean_reward
        );
    }
    println!("best-round mean F1 {:.3}", outcome.report.mean_overall_f1);
    let (path, n) = exp.export(1, 2, Some(0.0), None)?;
    println!("exported {n} samples with non-negative reward to {}", path.display());
    let series = exp.seed_dir(1).join("series.tsv");
    plot::plot_file(&series, "micro loop", &exp.seed_dir(1).join("series.svg"))?;
    println!("plotted {}", series.display());
    Ok(())
}
