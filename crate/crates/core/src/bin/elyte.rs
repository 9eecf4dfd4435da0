use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use elyte_core::gbt::SearchConfig;
use elyte_core::pipeline::{
    run_evaluate, run_predict, run_pretrain, run_train, PipelineError, PretrainConfig, TrainOptions,
};
use elyte_core::transformer::{embed_molecule, load_bundle};

#[derive(Parser)]
#[command(
    name = "elyte",
    version,
    about = "Electrolyte formulation property prediction"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain the denoising model on a SMILES corpus and write a model bundle.
    Pretrain {
        #[arg(long)]
        corpus: PathBuf,
        /// JSON file with `model` and `train` sections.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: u64,
    },
    /// Print the representation of one molecule.
    Embed {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        smiles: String,
    },
    /// Split a dataset, tune and fit the regressor, and report test RMSE.
    Train {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        split_seed: u64,
        #[arg(long)]
        search_trials: usize,
        #[arg(long)]
        search_seed: u64,
        /// Replace targets by their base-10 logarithm on ingestion.
        #[arg(long)]
        log10_target: bool,
    },
    /// Predict targets for formulations with a trained regressor.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        regressor: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a trained regressor on a labeled dataset.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        regressor: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cmd: Command) -> Result<(), PipelineError> {
    match cmd {
        Command::Pretrain {
            corpus,
            config,
            out,
            seed,
        } => {
            let mut cfg: PretrainConfig = serde_json::from_str(&fs::read_to_string(&config)?)?;
            cfg.train.seed = seed;
            let (bundle, report) = run_pretrain(&corpus, &cfg, &out)?;
            println!(
                "pretrained on {} molecules: loss {:.4} -> {:.4}, masked accuracy {:.3}",
                bundle.meta.corpus_size,
                report.epoch_losses.first().copied().unwrap_or(f64::NAN),
                report.epoch_losses.last().copied().unwrap_or(f64::NAN),
                report.final_masked_accuracy
            );
        }
        Command::Embed { model, smiles } => {
            let bundle = load_bundle(&model)?;
            let r = embed_molecule(&bundle.params, &bundle.vocab, &smiles)?;
            let text: Vec<String> = r.0.iter().map(|v| v.to_string()).collect();
            println!("{}", text.join(" "));
        }
        Command::Train {
            model,
            dataset,
            out,
            split_seed,
            search_trials,
            search_seed,
            log10_target,
        } => {
            let opts = TrainOptions {
                split_seed,
                search: SearchConfig {
                    trials: search_trials,
                    seed: search_seed,
                    ..SearchConfig::default()
                },
                log10_target,
                strict_fractions: true,
            };
            let report = run_train(&model, &dataset, &opts, &out)?;
            println!(
                "train {} / test {} formulations, test RMSE {:.3}",
                report.n_train, report.n_test, report.evaluation.rmse_display
            );
        }
        Command::Predict {
            model,
            regressor,
            dataset,
            out,
        } => {
            let preds = run_predict(&model, &regressor, &dataset, &out)?;
            println!("wrote {} predictions", preds.len());
        }
        Command::Evaluate {
            model,
            regressor,
            dataset,
            out,
        } => {
            let report = run_evaluate(&model, &regressor, &dataset, &out)?;
            println!(
                "RMSE {:.3} over {} formulations",
                report.rmse_display,
                report.parity_pairs.len()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
