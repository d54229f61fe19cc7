use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use stylesearch_cli::commands;
use stylesearch_cli::{CliError, RunConfig};
use stylesearch_core::model_file::ModelFile;

#[derive(Parser)]
#[command(name = "stylesearch", version, about = "Style-guided evolutionary search of a generator's latent space")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (key = value); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, overrides `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides gmm.seed for `fit` and evolution.seed otherwise.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample the synthetic dataset and fit scaler, PCA and mixture.
    Fit {
        #[command(flatten)]
        common: Common,
    },
    /// Evolve latents toward one style component.
    Evolve {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        /// Component index; defaults to the largest component.
        #[arg(long)]
        target: Option<usize>,
    },
    /// Run the parameter grid over the selected styles.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Reuse a fitted model instead of fitting one from the config.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Best of pop_size × generations random latents.
    Baseline {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        target: Option<usize>,
    },
    /// Export the training samples with the highest posterior for a style.
    Export {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        target: usize,
        /// Number of phenotypes to export; defaults to export.count.
        #[arg(long)]
        count: Option<usize>,
    },
}

impl Common {
    fn load(&self, seed_is_gmm: bool) -> Result<(RunConfig, PathBuf), CliError> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            if seed_is_gmm {
                cfg.gmm.seed = seed;
            } else {
                cfg.evolution.seed = seed;
            }
        }
        let out = self.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
        Ok((cfg, out))
    }
}

fn load_model(path: &Path) -> Result<ModelFile, CliError> {
    Ok(ModelFile::load(path)?)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Fit { common } => {
            let (cfg, out) = common.load(true)?;
            let res = commands::fit(&cfg, &out)?;
            println!(
                "fitted {} components on {} dimensions (from {})",
                res.model.style.n_styles(),
                res.model.style.pca.n_components(),
                res.model.style.embedding_dim()
            );
            for (c, size) in res.cluster_sizes.iter().enumerate() {
                println!("component {c}: {size} samples, mean posterior {:.4}", res.mean_own_posterior[c]);
            }
            println!("wrote {}", res.model_path.display());
        }
        Command::Evolve { common, model, target } => {
            let (cfg, out) = common.load(false)?;
            let res = commands::evolve(&cfg, &load_model(&model)?, target, &out)?;
            println!("target {}: best fitness {}", res.target, res.result.best_fitness);
            println!("wrote {}", res.stats_path.display());
        }
        Command::Sweep { common, model } => {
            let (cfg, out) = common.load(false)?;
            let model = model.as_deref().map(load_model).transpose()?;
            let res = commands::sweep(&cfg, model.as_ref(), &out)?;
            for ((cx, mt, np, ts), mean) in &res.aggregate {
                println!("p_cx={cx} p_mut={mt} n_pop={np} n_ts={ts}: {mean:.6}");
            }
            println!("wrote {}", res.detail_path.display());
        }
        Command::Baseline { common, model, target } => {
            let (cfg, out) = common.load(false)?;
            let res = commands::baseline(&cfg, &load_model(&model)?, target, &out)?;
            println!(
                "target {}: best of {} random samples {}",
                res.target, res.result.budget, res.result.best_fitness
            );
        }
        Command::Export { common, model, target, count } => {
            let (cfg, out) = common.load(false)?;
            let res = commands::export(&load_model(&model)?, target, count.unwrap_or(cfg.export_count), &out)?;
            for (rank, (idx, post)) in res.ranked.iter().enumerate() {
                println!("rank {}: sample {idx}, posterior {post}", rank + 1);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
