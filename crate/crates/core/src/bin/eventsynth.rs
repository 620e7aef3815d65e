use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use eventsynth::experiment::{Experiment, ExperimentConfig};
use eventsynth::micro::MicroWorld;
use eventsynth::{logging, plot, Error};

#[derive(Parser)]
#[command(name = "eventsynth", version, about = "Propose-evaluate-revise synthetic data for zero-shot event argument extraction")]
struct Cli {
    /// More log output (repeat for trace).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Target {
    /// Experiment config (TOML).
    #[arg(short, long)]
    config: PathBuf,
    /// Run seed; defaults to every seed in the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct RoundTarget {
    #[command(flatten)]
    target: Target,
    #[arg(long)]
    round: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Partition event types and build the token table.
    Split {
        #[arg(short, long)]
        config: PathBuf,
    },
    /// Pretrain the generation agent on seen types.
    SftGen(Target),
    /// Pretrain the extractor on seen types.
    SftEval(Target),
    /// Sample synthetic data for unseen types.
    Propose(RoundTarget),
    /// Score synthetic data and write the reward ledger.
    Score(RoundTarget),
    /// Reward-weighted update of both agents.
    Revise(RoundTarget),
    /// Run every round for every seed and write the averaged report.
    Loop {
        #[arg(short, long)]
        config: PathBuf,
    },
    /// Span-F1 on unseen-type dev data.
    Eval(RoundTarget),
    /// Log-likelihood sensitivity to emptied and mismatched arguments.
    Probe(RoundTarget),
    /// Diversity of the synthetic data across rounds.
    Diversity(Target),
    /// Write a scored round in the canonical corpus format.
    Export {
        #[command(flatten)]
        round: RoundTarget,
        #[arg(long)]
        min_reward: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a series TSV as an SVG line chart.
    Plot {
        input: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long, default_value = "")]
        title: String,
    },
    /// Write a micro-world experiment (ontology, corpora, config) to a directory.
    InitMicro {
        dir: PathBuf,
        #[arg(long, default_value_t = 80)]
        train_per_type: usize,
        #[arg(long, default_value_t = 30)]
        dev_per_type: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

fn open(config: &PathBuf) -> eventsynth::Result<Experiment> {
    Experiment::open(ExperimentConfig::load(config)?)
}

fn seeds(exp: &Experiment, seed: Option<u64>) -> Vec<u64> {
    seed.map_or_else(|| exp.config.rl.seeds.clone(), |s| vec![s])
}

fn print<T: serde::Serialize>(value: &T) -> eventsynth::Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(command: Command) -> eventsynth::Result<()> {
    match command {
        Command::Split { config } => print(&open(&config)?.split()?),
        Command::SftGen(t) => {
            let exp = open(&t.config)?;
            for s in seeds(&exp, t.seed) {
                print(&exp.sft_gen(s)?)?;
            }
            Ok(())
        }
        Command::SftEval(t) => {
            let exp = open(&t.config)?;
            for s in seeds(&exp, t.seed) {
                print(&exp.sft_eval(s)?)?;
            }
            Ok(())
        }
        Command::Propose(r) => {
            let exp = open(&r.target.config)?;
            for s in seeds(&exp, r.target.seed) {
                print(&exp.propose(s, r.round)?)?;
            }
            Ok(())
        }
        Command::Score(r) => {
            let exp = open(&r.target.config)?;
            for s in seeds(&exp, r.target.seed) {
                print(&exp.score(s, r.round)?)?;
            }
            Ok(())
        }
        Command::Revise(r) => {
            let exp = open(&r.target.config)?;
            for s in seeds(&exp, r.target.seed) {
                print(&exp.revise(s, r.round)?)?;
            }
            Ok(())
        }
        Command::Loop { config } => print(&open(&config)?.run_rounds()?.report),
        Command::Eval(r) => {
            let exp = open(&r.target.config)?;
            for s in seeds(&exp, r.target.seed) {
                print(&exp.eval(s, r.round)?)?;
            }
            Ok(())
        }
        Command::Probe(r) => {
            let exp = open(&r.target.config)?;
            for s in seeds(&exp, r.target.seed) {
                let p = exp.probe(s, r.round)?;
                println!(
                    "seed {s}: mean normal {:.3}, empty {:.3} (p={:.3e}), mismatch {:.3} (p={:.3e})",
                    p.mean_normal, p.mean_empty, p.normal_vs_empty.p_value, p.mean_mismatch, p.normal_vs_mismatch.p_value
                );
            }
            Ok(())
        }
        Command::Diversity(t) => {
            let exp = open(&t.config)?;
            for s in seeds(&exp, t.seed) {
                for row in exp.diversity(s)?.series() {
                    println!("seed {s}\tround {}\t{}\t{}\t{:.4}", row.round, row.dimension, row.scope, row.value);
                }
            }
            Ok(())
        }
        Command::Export { round, min_reward, out } => {
            let exp = open(&round.target.config)?;
            let targets = seeds(&exp, round.target.seed);
            if targets.len() > 1 && out.is_some() {
                return Err(Error::Config {
                    field: "--out".into(),
                    reason: "needs --seed when the config lists several seeds".into(),
                });
            }
            for s in targets {
                let (path, n) = exp.export(s, round.round, min_reward, out.as_deref())?;
                println!("seed {s}: wrote {n} instances to {}", path.display());
            }
            Ok(())
        }
        Command::Plot { input, out, title } => plot::plot_file(&input, &title, &out),
        Command::InitMicro {
            dir,
            train_per_type,
            dev_per_type,
            seed,
        } => {
            let files = MicroWorld::default().write_files(&dir, train_per_type, dev_per_type, seed)?;
            let config = ExperimentConfig {
                seed,
                out_dir: "run".into(),
                paths: eventsynth::experiment::PathsConfig {
                    ontology: files.ontology.file_name().unwrap().into(),
                    train: files.train.file_name().unwrap().into(),
                    dev: files.dev.file_name().unwrap().into(),
                    ..Default::default()
                },
                ..Default::default()
            };
            let path = dir.join("experiment.toml");
            std::fs::write(&path, config.to_toml()).map_err(|source| Error::Io {
                context: format!("writing {}", path.display()),
                source,
            })?;
            println!("wrote {}", path.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    logging::init(match cli.verbose {
        0 => log::LevelFilter::Info,
        1 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    });
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            match e {
                Error::Config { .. } => ExitCode::from(1),
                _ => ExitCode::from(2),
            }
        }
    }
}
