//! Runs the interaction rounds twice from the same pretrained agents, with
//! and without the structure penalty, and compares how far the empty-role
//! ratio of the final generators' samples sits from the seen-data mean.
//!
//! Usage: `structure_penalty <work dir> [rounds] [generator step size]`

use std::path::PathBuf;

use eventsynth::experiment::{Experiment, ExperimentConfig, PathsConfig};
use eventsynth::micro::MicroWorld;

const PROBE_K: usize = 60;

fn main() -> eventsynth::Result<()> {
    eventsynth::logging::init(log::LevelFilter::Warn);
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "structure-penalty".into()));
    let rounds: usize = args.next().and_then(|v| v.parse().ok()).unwrap_or(3);
    let files = MicroWorld::default().write_files(&dir.join("data"), 80, 30, 7)?;
    let mut config = ExperimentConfig {
        seed: 7,
        out_dir: dir.join("penalty-on"),
        paths: PathsConfig {
            ontology: files.ontology,
            train: files.train,
            dev: files.dev,
            ..Default::default()
        },
        ..Default::default()
    };
    config.rl.rounds = rounds;
    if let Some(lr) = args.next().and_then(|v| v.parse().ok()) {
        config.rl.gen_lr = lr;
    }
    let on = Experiment::open(config.clone())?;
    on.run_rounds()?;

    config.out_dir = dir.join("penalty-off");
    config.reward.penalty = false;
    let off = Experiment::open(config.clone())?;
    off.import_pretrained(on.root())?;
    off.run_rounds()?;

    let (mut sum_on, mut sum_off) = (0.0, 0.0);
    println!("seed  start   penalty-on  penalty-off  (mean empty ratio; tau shown below)");
    let mut tau = 0.0;
    for &seed in &config.rl.seeds {
        let start = on.structure_probe(seed, 0, PROBE_K)?;
        let a = on.structure_probe(seed, rounds, PROBE_K)?;
        let b = off.structure_probe(seed, rounds, PROBE_K)?;
        tau = a.tau;
        println!(
            "{seed:>4}  {:.3}   {:.3}       {:.3}",
            start.mean_empty_ratio, a.mean_empty_ratio, b.mean_empty_ratio
        );
        sum_on += a.distance;
        sum_off += b.distance;
    }
    let n = config.rl.seeds.len() as f64;
    println!("tau {tau:.3}");
    println!("mean |rho - tau| after round {rounds}: penalty on {:.4}, penalty off {:.4}", sum_on / n, sum_off / n);
    Ok(())
}
