use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sentimtl::config::Config;
use sentimtl::model::{EncoderKind, ASSET_CACHE_ENV};
use sentimtl::runner::{
    cmd_evaluate, cmd_ingest, cmd_preprocess, cmd_report, cmd_train, selected_dev, Layout, RunError, TrainOptions,
};
use sentimtl::trainer::Scenario;

/// Cross-lingual multi-level sentiment classification experiments.
#[derive(Debug, Parser)]
#[command(name = "sentimtl", version)]
#[command(after_help = format!("The pretrained adapter reads exported features from the directory named by {ASSET_CACHE_ENV}."))]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct ConfigArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Artifact root, overriding `output_dir` from the config.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

impl ConfigArgs {
    fn load(&self) -> Result<Config, RunError> {
        let mut config = Config::load(&self.config)?;
        if let Some(dir) = &self.output_dir {
            config.output_dir = dir.clone();
        }
        Ok(config)
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load the corpora and print per-pool label counts.
    Ingest {
        #[command(flatten)]
        config: ConfigArgs,
        /// Fail with exit code 4 when counts differ from `expect.raw`.
        #[arg(long)]
        strict: bool,
    },
    /// Clean and split every pool and write the split manifest.
    Preprocess {
        #[command(flatten)]
        config: ConfigArgs,
        /// Fail with exit code 4 when counts differ from `expect.clean`.
        #[arg(long)]
        strict: bool,
        /// Split seed, overriding the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train one scenario on the prepared splits.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// SL_STL_ZERO_HR, SL_MTL_ZERO_HR, HR_STL, SLHR_MTL or SLHR_STL.
        #[arg(long)]
        scenario: Option<Scenario>,
        /// Training seed, overriding the config.
        #[arg(long)]
        seed: Option<u64>,
        /// pretrained_adapter or toy_deterministic.
        #[arg(long)]
        encoder: Option<EncoderKind>,
    },
    /// Score a run's selected checkpoint on test sets (all when none given).
    Evaluate {
        #[arg(long)]
        run_dir: PathBuf,
        /// Test set names such as sl-doc, sl-para, sl-sent, hr-doc.
        test_sets: Vec<String>,
    },
    /// Combine every evaluated run into one results table.
    Report {
        #[command(flatten)]
        config: ConfigArgs,
    },
}

fn run(command: Command) -> Result<(), RunError> {
    match command {
        Command::Ingest { config, strict } => {
            let config = config.load()?;
            let report = cmd_ingest(&config, strict)?;
            print!("{}", report.render());
        }
        Command::Preprocess { config, strict, seed } => {
            let mut config = config.load()?;
            if seed.is_some() {
                config.split.seed = seed;
            }
            let report = cmd_preprocess(&config, strict)?;
            print!("{}", report.render());
            println!("split manifest: {}", Layout::new(&config.output_dir).split_manifest().display());
        }
        Command::Train {
            config,
            scenario,
            seed,
            encoder,
        } => {
            let config = config.load()?;
            let run = cmd_train(
                &config,
                &TrainOptions {
                    scenario,
                    seed,
                    encoder,
                },
            )?;
            for e in &run.history.epochs {
                println!(
                    "epoch {}: {} steps, mean loss {:.4}, selection F1 {:.2}",
                    e.epoch,
                    e.steps,
                    e.mean_train_loss,
                    e.selection_value * 100.0
                );
            }
            if let Some(dev) = selected_dev(&run.history) {
                for (pool, m) in dev {
                    println!("dev {pool}: macro F1 {:.2}", m.macro_f1 * 100.0);
                }
            }
            println!(
                "selected {} ({} hr training instances); run directory {}",
                run.manifest.training.selected_checkpoint,
                run.manifest.training.hr_instances,
                run.run_dir.display()
            );
        }
        Command::Evaluate { run_dir, test_sets } => {
            let (_, rendered) = cmd_evaluate(&run_dir, &test_sets)?;
            print!("{}", rendered.table);
        }
        Command::Report { config } => {
            let root = match &config.output_dir {
                Some(dir) => dir.clone(),
                None => config.load()?.output_dir,
            };
            let rendered = cmd_report(&Layout::new(&root))?;
            print!("{}", rendered.table);
            println!("written to {}", Path::new(&root).join("reports").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
