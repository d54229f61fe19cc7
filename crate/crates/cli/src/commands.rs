//! The pipeline commands behind each subcommand. Each writes its artifacts
//! into an output directory and returns what it wrote.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use stylesearch_core::evolution::{self, BaselineResult, EvolutionConfig, EvolutionResult};
use stylesearch_core::gmm::argmax;
use stylesearch_core::model_file::{fmt_real, ModelFile, PipelineSpec};
use stylesearch_core::phenotype::{LatentVector, Pipeline, StyleModel};
use stylesearch_core::rng::derive_seed;
use stylesearch_core::Error as CoreError;

use crate::config::{RunConfig, TargetSelection};
use crate::error::CliError;

pub const MODEL_FILE: &str = "model.txt";
pub const CLUSTER_SIZES_FILE: &str = "cluster_sizes.csv";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const SWEEP_AGGREGATE_FILE: &str = "sweep_aggregate.csv";

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CoreError::io(path, e).into())
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e).into())
}

/// Posteriors of every training sample, regenerated from the model's seeds.
pub struct DatasetPosteriors {
    pub latents: Vec<LatentVector>,
    pub posteriors: Vec<Vec<f64>>,
}

impl DatasetPosteriors {
    pub fn compute(pipeline: &Pipeline, spec: &PipelineSpec, style: &StyleModel) -> Result<Self, CliError> {
        let (latents, data) = pipeline.sample_dataset(spec.dataset_size, spec.dataset_seed)?;
        let posteriors = data
            .iter_rows()
            .collect::<Vec<_>>()
            .par_iter()
            .map(|row| style.posterior(row))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { latents, posteriors })
    }

    pub fn from_model(model: &ModelFile) -> Result<Self, CliError> {
        Self::compute(&model.pipeline.build()?, &model.pipeline, &model.style)
    }

    /// Hard-assignment count per component.
    pub fn cluster_sizes(&self, k: usize) -> Vec<usize> {
        let mut sizes = vec![0; k];
        for p in &self.posteriors {
            sizes[argmax(p)] += 1;
        }
        sizes
    }

    /// Mean posterior of each component over the samples assigned to it.
    pub fn mean_own_posterior(&self, k: usize) -> Vec<f64> {
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for p in &self.posteriors {
            let a = argmax(p);
            sums[a] += p[a];
            counts[a] += 1;
        }
        sums.iter()
            .zip(&counts)
            .map(|(s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
            .collect()
    }
}

/// Components ordered by hard-assignment size, largest first, lowest index
/// on ties.
pub fn components_by_size(sizes: &[usize]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| sizes[b].cmp(&sizes[a]).then(a.cmp(&b)));
    order
}

pub fn resolve_targets(model: &ModelFile, selection: &TargetSelection) -> Result<Vec<usize>, CliError> {
    let k = model.style.n_styles();
    match selection {
        TargetSelection::Explicit(list) => {
            for &t in list {
                check_target(model, t)?;
            }
            Ok(list.clone())
        }
        TargetSelection::TopBySize(count) => {
            let sizes = DatasetPosteriors::from_model(model)?.cluster_sizes(k);
            let mut order = components_by_size(&sizes);
            order.truncate(*count);
            Ok(order)
        }
    }
}

fn check_target(model: &ModelFile, t: usize) -> Result<(), CliError> {
    let k = model.style.n_styles();
    if t >= k {
        return Err(CoreError::IndexOutOfRange { index: t, len: k }.into());
    }
    Ok(())
}

fn target_or_largest(model: &ModelFile, target: Option<usize>) -> Result<usize, CliError> {
    match target {
        Some(t) => {
            check_target(model, t)?;
            Ok(t)
        }
        None => Ok(resolve_targets(model, &TargetSelection::TopBySize(1))?[0]),
    }
}

/// The config's generator and embedder must have the shapes the model was
/// fit with.
pub fn check_compatible(config: &PipelineSpec, model: &PipelineSpec) -> Result<(), CliError> {
    let pairs = [
        ("latent_dim", config.latent_dim, model.latent_dim),
        ("hidden_width", config.hidden_width, model.hidden_width),
        ("height", config.height, model.height),
        ("width", config.width, model.width),
        ("embedding_dim", config.embedding_dim, model.embedding_dim),
    ];
    for (name, cfg_v, model_v) in pairs {
        if cfg_v != model_v {
            return Err(CliError::Config(format!(
                "dimension mismatch: model has {name} = {model_v} but config has {name} = {cfg_v}"
            )));
        }
    }
    Ok(())
}

pub struct FitOutput {
    pub model: ModelFile,
    pub cluster_sizes: Vec<usize>,
    pub mean_own_posterior: Vec<f64>,
    pub model_path: PathBuf,
    pub sizes_path: PathBuf,
}

pub fn fit_model(cfg: &RunConfig) -> Result<(ModelFile, DatasetPosteriors), CliError> {
    let pipeline = cfg.pipeline.build()?;
    let spec = cfg.pipeline;
    let (_, data) = pipeline.sample_dataset(spec.dataset_size, spec.dataset_seed)?;
    let (style, _) = StyleModel::fit(&data, cfg.target_ratio, &cfg.gmm)?;
    let posteriors = DatasetPosteriors::compute(&pipeline, &spec, &style)?;
    Ok((ModelFile { pipeline: spec, style }, posteriors))
}

pub fn fit(cfg: &RunConfig, out: &Path) -> Result<FitOutput, CliError> {
    ensure_dir(out)?;
    let (model, posteriors) = fit_model(cfg)?;
    let k = model.style.n_styles();
    let cluster_sizes = posteriors.cluster_sizes(k);
    let mean_own_posterior = posteriors.mean_own_posterior(k);

    let model_path = out.join(MODEL_FILE);
    model.save(&model_path)?;

    let mut csv = String::from("component,size,mean_posterior\n");
    for (c, (size, mean)) in cluster_sizes.iter().zip(&mean_own_posterior).enumerate() {
        csv.push_str(&format!("{c},{size},{}\n", fmt_real(*mean)));
    }
    let sizes_path = out.join(CLUSTER_SIZES_FILE);
    write_file(&sizes_path, csv)?;

    Ok(FitOutput {
        model,
        cluster_sizes,
        mean_own_posterior,
        model_path,
        sizes_path,
    })
}

pub struct EvolveOutput {
    pub target: usize,
    pub result: EvolutionResult,
    pub stats_path: PathBuf,
    pub pgm_path: PathBuf,
    pub latent_path: PathBuf,
}

fn fitness_closure<'a>(pipeline: &'a Pipeline, style: &'a StyleModel, t: usize) -> impl Fn(&[f64]) -> f64 + Sync + 'a {
    // Errors cannot occur once dimensions are checked; NaN is rejected by the GA.
    move |z| pipeline.fitness(style, z, t).unwrap_or(f64::NAN)
}

fn run_evolution(cfg: &RunConfig, model: &ModelFile, t: usize, ga: &EvolutionConfig) -> Result<EvolutionResult, CliError> {
    let pipeline = cfg.pipeline.build()?;
    let result = evolution::evolve(ga, fitness_closure(&pipeline, &model.style, t))?;
    Ok(result)
}

pub fn evolve(cfg: &RunConfig, model: &ModelFile, target: Option<usize>, out: &Path) -> Result<EvolveOutput, CliError> {
    check_compatible(&cfg.pipeline, &model.pipeline)?;
    let t = target_or_largest(model, target)?;
    ensure_dir(out)?;
    let ga = EvolutionConfig {
        target: t,
        ..cfg.evolution.clone()
    };
    let result = run_evolution(cfg, model, t, &ga)?;

    let mut csv = String::from("generation,max_fitness,mean_fitness\n");
    for s in &result.stats {
        csv.push_str(&format!(
            "{},{},{}\n",
            s.generation,
            fmt_real(s.max_fitness),
            fmt_real(s.mean_fitness)
        ));
    }
    let stats_path = out.join(format!("evolve_t{t}.csv"));
    write_file(&stats_path, csv)?;

    let pipeline = cfg.pipeline.build()?;
    let pgm_path = out.join(format!("evolve_t{t}_best.pgm"));
    pipeline.generator.generate(&result.best_latent)?.export_pgm(&pgm_path)?;

    let latent: String = result
        .best_latent
        .iter()
        .map(|v| format!("{}\n", fmt_real(*v)))
        .collect();
    let latent_path = out.join(format!("evolve_t{t}_best_latent.txt"));
    write_file(&latent_path, latent)?;

    Ok(EvolveOutput {
        target: t,
        result,
        stats_path,
        pgm_path,
        latent_path,
    })
}

pub struct BaselineOutput {
    pub target: usize,
    pub result: BaselineResult,
    pub csv_path: PathBuf,
    pub pgm_path: PathBuf,
}

pub fn baseline(cfg: &RunConfig, model: &ModelFile, target: Option<usize>, out: &Path) -> Result<BaselineOutput, CliError> {
    check_compatible(&cfg.pipeline, &model.pipeline)?;
    let t = target_or_largest(model, target)?;
    ensure_dir(out)?;
    let pipeline = cfg.pipeline.build()?;
    let result = evolution::random_baseline(&cfg.evolution, fitness_closure(&pipeline, &model.style, t))?;

    let csv_path = out.join(format!("baseline_t{t}.csv"));
    write_file(
        &csv_path,
        format!("budget,best_fitness\n{},{}\n", result.budget, fmt_real(result.best_fitness)),
    )?;
    let pgm_path = out.join(format!("baseline_t{t}_best.pgm"));
    pipeline.generator.generate(&result.best_latent)?.export_pgm(&pgm_path)?;

    Ok(BaselineOutput {
        target: t,
        result,
        csv_path,
        pgm_path,
    })
}

pub struct ExportOutput {
    pub target: usize,
    /// (dataset index, posterior) in rank order.
    pub ranked: Vec<(usize, f64)>,
    pub pgm_paths: Vec<PathBuf>,
    pub csv_path: PathBuf,
}

pub fn export(model: &ModelFile, target: usize, count: usize, out: &Path) -> Result<ExportOutput, CliError> {
    check_target(model, target)?;
    let m = model.pipeline.dataset_size;
    if count == 0 || count > m {
        return Err(CliError::Config(format!(
            "export count must lie in 1..={m}, got {count}"
        )));
    }
    ensure_dir(out)?;
    let pipeline = model.pipeline.build()?;
    let data = DatasetPosteriors::compute(&pipeline, &model.pipeline, &model.style)?;
    let mut ranked: Vec<(usize, f64)> = data
        .posteriors
        .iter()
        .enumerate()
        .map(|(i, p)| (i, p[target]))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(count);

    let mut csv = String::from("rank,sample,posterior\n");
    let mut pgm_paths = Vec::with_capacity(count);
    for (rank, &(idx, post)) in ranked.iter().enumerate() {
        let path = out.join(format!("export_t{target}_rank{}.pgm", rank + 1));
        pipeline.generator.generate(&data.latents[idx])?.export_pgm(&path)?;
        pgm_paths.push(path);
        csv.push_str(&format!("{},{idx},{}\n", rank + 1, fmt_real(post)));
    }
    let csv_path = out.join(format!("export_t{target}.csv"));
    write_file(&csv_path, csv)?;

    Ok(ExportOutput {
        target,
        ranked,
        pgm_paths,
        csv_path,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub crossover_prob: f64,
    pub mutation_prob: f64,
    pub pop_size: usize,
    pub tournament_size: usize,
    pub style: usize,
    pub run: usize,
    pub best_fitness: f64,
}

pub struct SweepOutput {
    pub rows: Vec<SweepRow>,
    /// Per cell, the mean best fitness over styles and runs.
    pub aggregate: Vec<((f64, f64, usize, usize), f64)>,
    pub detail_path: PathBuf,
    pub aggregate_path: PathBuf,
}

/// Runs every grid cell × style × run. Jobs execute in parallel; rows are
/// emitted in grid order.
pub fn sweep(cfg: &RunConfig, model: Option<&ModelFile>, out: &Path) -> Result<SweepOutput, CliError> {
    let fitted;
    let model = match model {
        Some(m) => {
            check_compatible(&cfg.pipeline, &m.pipeline)?;
            m
        }
        None => {
            fitted = fit_model(cfg)?.0;
            &fitted
        }
    };
    let styles = resolve_targets(model, &cfg.targets)?;
    ensure_dir(out)?;
    let pipeline = cfg.pipeline.build()?;

    let cells = cfg.sweep.cells();
    let runs = cfg.sweep.runs;
    let mut jobs = Vec::new();
    for (c, &cell) in cells.iter().enumerate() {
        for &style in &styles {
            for run in 0..runs {
                let seed = derive_seed(derive_seed(derive_seed(cfg.evolution.seed, c as u64), style as u64), run as u64);
                jobs.push((cell, style, run, seed));
            }
        }
    }

    let rows = jobs
        .par_iter()
        .map(|&(cell, style, run, seed)| {
            let ga = EvolutionConfig {
                target: style,
                ..cfg.cell_config(cell, seed)
            };
            let res = evolution::evolve(&ga, fitness_closure(&pipeline, &model.style, style))?;
            Ok(SweepRow {
                crossover_prob: cell.0,
                mutation_prob: cell.1,
                pop_size: cell.2,
                tournament_size: cell.3,
                style,
                run,
                best_fitness: res.best_fitness,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;

    let per_cell = styles.len() * runs;
    let aggregate: Vec<_> = cells
        .iter()
        .zip(rows.chunks(per_cell.max(1)))
        .map(|(&cell, chunk)| {
            let mean = chunk.iter().map(|r| r.best_fitness).sum::<f64>() / chunk.len() as f64;
            (cell, mean)
        })
        .collect();

    let mut detail = String::from("p_cx,p_mut,n_pop,n_ts,style,run,best_fitness\n");
    for r in &rows {
        detail.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            fmt_real(r.crossover_prob),
            fmt_real(r.mutation_prob),
            r.pop_size,
            r.tournament_size,
            r.style,
            r.run,
            fmt_real(r.best_fitness)
        ));
    }
    let mut agg = String::from("p_cx,p_mut,n_pop,n_ts,mean_best_fitness\n");
    for ((cx, mt, np, ts), mean) in &aggregate {
        agg.push_str(&format!("{},{},{np},{ts},{}\n", fmt_real(*cx), fmt_real(*mt), fmt_real(*mean)));
    }
    let detail_path = out.join(SWEEP_FILE);
    let aggregate_path = out.join(SWEEP_AGGREGATE_FILE);
    write_file(&detail_path, detail)?;
    write_file(&aggregate_path, agg)?;

    Ok(SweepOutput {
        rows,
        aggregate,
        detail_path,
        aggregate_path,
    })
}
