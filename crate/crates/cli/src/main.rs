//! Command-line entry points: generate, train, predict, evaluate, rca.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bondcause_core::data::{normalize, window_corpus};
use bondcause_core::metrics::{displacement, rmsf_over_atoms, rmsf_over_time, series_table_csv, sweep_csv};
use bondcause_core::training::{metrics_csv, train};
use bondcause_core::{format, pipeline, synth, Checkpoint, Error, RegimeLabels, Result, TrajectoryCorpus};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use config::RunConfig;

#[derive(Parser)]
#[command(name = "bondcause", version, about = "Latent interaction graphs, trajectory prediction and root-cause ranking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 1 keeps every output bitwise reproducible.
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a spring system into a corpus file.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Train a model on a windowed corpus.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `data.corpus`.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Roll a checkpoint forward over every window of a corpus.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// Accept a corpus whose hash differs from the checkpoint's.
        #[arg(long)]
        allow_hash_mismatch: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Test-window errors of one or more checkpoints plus trajectory metrics.
    Evaluate {
        #[arg(long, required = true, num_args = 1..)]
        checkpoint: Vec<PathBuf>,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        allow_hash_mismatch: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Train with the root-cause preset and rank nodes.
    Rca {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Parameter(_) => 2,
        Error::Numerical(_) | Error::Diverged { .. } | Error::AbsentGradient(_) => 4,
        Error::Dimension(_) | Error::Degenerate(_) | Error::Parse { .. } | Error::HashMismatch { .. } | Error::Io(_) => 3,
    }
}

fn write(dir: &Path, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(dir.join(name), contents)?;
    log::info!("wrote {}", dir.join(name).display());
    Ok(())
}

fn prepare(common: &Common) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(common.threads.max(1))
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    fs::create_dir_all(&common.out)?;
    Ok(())
}

fn echo(dir: &Path, config: &RunConfig, corpus_hash: &str) -> Result<()> {
    write(dir, "resolved_config.toml", config.to_toml()?)?;
    write(dir, "corpus_hash.txt", format!("{corpus_hash}\n"))
}

/// Loads, optionally normalizes and windows a corpus.
fn windows(path: &Path, config: &RunConfig) -> Result<(TrajectoryCorpus, Option<RegimeLabels>)> {
    let (corpus, labels) = format::load(path)?;
    let corpus = if config.data.normalize { normalize(&corpus)? } else { corpus };
    window_corpus(&corpus, labels.as_ref(), config.data.window)
}

fn corpus_path(flag: Option<PathBuf>, config: &RunConfig) -> Result<PathBuf> {
    flag.or_else(|| config.data.corpus.clone())
        .ok_or_else(|| Error::Config("no corpus given: pass --corpus or set data.corpus".into()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { config, common } => {
            prepare(&common)?;
            let config = RunConfig::load(&config)?.resolve(common.seed);
            let section = config
                .generate
                .as_ref()
                .ok_or_else(|| Error::Config("missing [generate] section".into()))?;
            let spec = section.system(config.seed)?;
            let (corpus, labels) = synth::simulate(&spec, section.steps, config.seed)?;
            format::save(&common.out.join("corpus.txt"), &corpus, Some(&labels))?;
            write(&common.out, "system.toml", toml::to_string(&spec).map_err(|e| Error::Config(e.to_string()))?)?;
            echo(&common.out, &config, &corpus.content_hash())
        }
        Command::Train { config, corpus, common } => {
            prepare(&common)?;
            let config = RunConfig::load(&config)?.resolve(common.seed);
            let (windows, _) = windows(&corpus_path(corpus, &config)?, &config)?;
            let outcome = train(&config.train.config, &windows)?;
            outcome.best.save(&common.out.join("checkpoint.bin"))?;
            outcome.last.save(&common.out.join("last.bin"))?;
            write(&common.out, "metrics.csv", metrics_csv(&outcome.history))?;
            echo(&common.out, &config, &windows.content_hash())
        }
        Command::Predict {
            checkpoint,
            corpus,
            allow_hash_mismatch,
            common,
        } => {
            prepare(&common)?;
            let ckpt = Checkpoint::load(&checkpoint)?;
            let config = checkpoint_run_config(&ckpt, &checkpoint);
            let (windows, labels) = windows(&corpus, &config)?;
            ckpt.check_corpus(&windows, allow_hash_mismatch)?;
            let predicted = pipeline::predict(&ckpt, &windows)?;
            format::save(&common.out.join("predicted.txt"), &predicted, labels.as_ref())?;
            echo(&common.out, &config, &windows.content_hash())
        }
        Command::Evaluate {
            checkpoint,
            corpus,
            allow_hash_mismatch,
            common,
        } => {
            prepare(&common)?;
            let ckpts = checkpoint
                .iter()
                .map(|p| Checkpoint::load(p).map(|c| (p.clone(), c)))
                .collect::<Result<Vec<_>>>()?;
            let results = ckpts
                .par_iter()
                .map(|(path, ckpt)| {
                    let config = checkpoint_run_config(ckpt, path);
                    let (windows, _) = windows(&corpus, &config)?;
                    ckpt.check_corpus(&windows, allow_hash_mismatch)?;
                    let test = pipeline::test_indices(ckpt, &windows)?;
                    let row = pipeline::evaluate(ckpt, &windows, &test)?;
                    let predicted = pipeline::predict(ckpt, &windows.subset(&test))?;
                    Ok((row, predicted, windows.content_hash()))
                })
                .collect::<Result<Vec<_>>>()?;
            let rows: Vec<_> = results.iter().map(|(r, _, _)| *r).collect();
            write(&common.out, "sweep.csv", sweep_csv(&rows))?;
            for (i, (row, predicted, _)) in results.iter().enumerate() {
                let tag = if results.len() == 1 { String::new() } else { format!("_{i}_T{}", row.steps) };
                let per = |f: fn(&bondcause_core::Tensor) -> Result<Vec<f64>>| {
                    predicted.samples.iter().map(f).collect::<Result<Vec<_>>>()
                };
                write(&common.out, &format!("displacement{tag}.csv"), series_table_csv("t", &per(displacement)?))?;
                write(&common.out, &format!("rmsf_t{tag}.csv"), series_table_csv("t", &per(rmsf_over_atoms)?))?;
                write(&common.out, &format!("rmsf_atom{tag}.csv"), series_table_csv("atom", &per(rmsf_over_time)?))?;
            }
            let config = checkpoint_run_config(&ckpts[0].1, &ckpts[0].0);
            echo(&common.out, &config, &results[0].2)
        }
        Command::Rca { config, corpus, common } => {
            prepare(&common)?;
            let config = RunConfig::load(&config)?.resolve(common.seed);
            let (windows, labels) = windows(&corpus_path(corpus, &config)?, &config)?;
            let labels = labels.ok_or_else(|| Error::Config("rca needs a corpus with regime labels".into()))?;
            let r = &config.rca;
            let run = pipeline::run_rca(&config.train.config, &windows, &labels, &r.extractor, r.eps, r.k)?;
            run.outcome.best.save(&common.out.join("checkpoint.bin"))?;
            write(&common.out, "metrics.csv", metrics_csv(&run.outcome.history))?;
            write(&common.out, "report.csv", run.report.to_csv())?;
            write(&common.out, "accuracy.csv", run.report.accuracy_csv())?;
            for regime in [bondcause_core::Regime::Persist, bondcause_core::Regime::Separated] {
                let idx = labels.indices_of(regime);
                if let Some(mean) = pipeline::mean_posterior(&run.posteriors, &idx) {
                    write(&common.out, &format!("posterior_{}.csv", format!("{regime:?}").to_lowercase()), mean.to_csv())?;
                }
            }
            println!("{}", run.report.status());
            echo(&common.out, &config, &windows.content_hash())
        }
    }
}

/// The configuration a checkpoint was trained under, as a run config.
fn checkpoint_run_config(ckpt: &Checkpoint, path: &Path) -> RunConfig {
    log::debug!("using training configuration stored in {}", path.display());
    RunConfig {
        schema_version: config::SCHEMA_VERSION,
        seed: ckpt.seed,
        generate: None,
        data: config::DataSection {
            window: ckpt.params.shape.steps,
            normalize: true,
            corpus: None,
        },
        train: config::TrainSection {
            preset: config::Preset::Prediction,
            config: ckpt.config.clone(),
        },
        rca: config::RcaSection::default(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
