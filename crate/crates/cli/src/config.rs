//! Flat `key = value` run configuration.
//!
//! One pair per line, `#` starts a comment. Every key is optional; missing
//! keys take the desk-scale defaults. Unknown keys are rejected so typos do
//! not silently fall back to a default.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use stylesearch_core::evolution::EvolutionConfig;
use stylesearch_core::gmm::GmmConfig;
use stylesearch_core::model_file::PipelineSpec;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TargetSelection {
    /// The k components with the most hard-assigned training samples.
    TopBySize(usize),
    Explicit(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    pub crossover_prob: Vec<f64>,
    pub mutation_prob: Vec<f64>,
    pub pop_size: Vec<usize>,
    pub tournament_size: Vec<usize>,
    pub runs: usize,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self {
            crossover_prob: vec![0.7, 0.9],
            mutation_prob: vec![0.2, 0.5],
            pop_size: vec![50, 100],
            tournament_size: vec![3, 6],
            runs: 1,
        }
    }
}

impl SweepGrid {
    /// Cells in fixed order: crossover, then mutation, population, tournament.
    pub fn cells(&self) -> Vec<(f64, f64, usize, usize)> {
        let mut cells = Vec::new();
        for &cx in &self.crossover_prob {
            for &mt in &self.mutation_prob {
                for &np in &self.pop_size {
                    for &ts in &self.tournament_size {
                        cells.push((cx, mt, np, ts));
                    }
                }
            }
        }
        cells
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub pipeline: PipelineSpec,
    pub target_ratio: f64,
    pub gmm: GmmConfig,
    pub evolution: EvolutionConfig,
    pub targets: TargetSelection,
    pub sweep: SweepGrid,
    pub export_count: usize,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            pipeline: PipelineSpec {
                generator_seed: 1,
                latent_dim: 16,
                hidden_width: 32,
                height: 16,
                width: 16,
                embedder_seed: 2,
                embedding_dim: 64,
                dataset_seed: 3,
                dataset_size: 2000,
            },
            target_ratio: 0.9,
            gmm: GmmConfig {
                seed: 4,
                ..GmmConfig::default()
            },
            evolution: EvolutionConfig {
                seed: 5,
                ..EvolutionConfig::default()
            },
            targets: TargetSelection::TopBySize(5),
            sweep: SweepGrid::default(),
            export_count: 3,
            output_dir: PathBuf::from("out"),
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str, line: usize) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|_| CliError::Config(format!("line {line}: invalid value {value:?} for {key}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str, line: usize) -> Result<Vec<T>, CliError> {
    let items = value
        .split(',')
        .map(|v| parse_value(key, v.trim(), line))
        .collect::<Result<Vec<T>, _>>()?;
    if items.is_empty() {
        return Err(CliError::Config(format!("line {line}: {key} needs at least one value")));
    }
    Ok(items)
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, CliError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut cfg = RunConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or_default().trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {line}: expected `key = value`")))?;
            let (key, value) = (key.trim(), value.trim());
            cfg.set(key, value, line)?;
        }
        cfg.evolution.latent_dim = cfg.pipeline.latent_dim;
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str, line: usize) -> Result<(), CliError> {
        let p = &mut self.pipeline;
        let g = &mut self.gmm;
        let e = &mut self.evolution;
        match key {
            "generator.seed" => p.generator_seed = parse_value(key, value, line)?,
            "generator.latent_dim" => p.latent_dim = parse_value(key, value, line)?,
            "generator.hidden_width" => p.hidden_width = parse_value(key, value, line)?,
            "generator.height" => p.height = parse_value(key, value, line)?,
            "generator.width" => p.width = parse_value(key, value, line)?,
            "embedder.seed" => p.embedder_seed = parse_value(key, value, line)?,
            "embedder.dim" => p.embedding_dim = parse_value(key, value, line)?,
            "dataset.seed" => p.dataset_seed = parse_value(key, value, line)?,
            "dataset.size" => p.dataset_size = parse_value(key, value, line)?,
            "pca.target_ratio" => self.target_ratio = parse_value(key, value, line)?,
            "gmm.components" => g.n_components = parse_value(key, value, line)?,
            "gmm.max_iters" => g.max_iters = parse_value(key, value, line)?,
            "gmm.tol" => g.tol = parse_value(key, value, line)?,
            "gmm.reg_covar" => g.reg_covar = parse_value(key, value, line)?,
            "gmm.seed" => g.seed = parse_value(key, value, line)?,
            "gmm.n_init" => g.n_init = parse_value(key, value, line)?,
            "evolution.pop_size" => e.pop_size = parse_value(key, value, line)?,
            "evolution.generations" => e.generations = parse_value(key, value, line)?,
            "evolution.elite" => e.elite = parse_value(key, value, line)?,
            "evolution.immigrants" => e.immigrants = parse_value(key, value, line)?,
            "evolution.tournament_size" => e.tournament_size = parse_value(key, value, line)?,
            "evolution.crossover_prob" => e.crossover_prob = parse_value(key, value, line)?,
            "evolution.mutation_prob" => e.mutation_prob = parse_value(key, value, line)?,
            "evolution.gene_mutation_prob" => e.gene_mutation_prob = parse_value(key, value, line)?,
            "evolution.seed" => e.seed = parse_value(key, value, line)?,
            "targets" => {
                self.targets = match value.strip_prefix("top:") {
                    Some(k) => TargetSelection::TopBySize(parse_value(key, k.trim(), line)?),
                    None => TargetSelection::Explicit(parse_list(key, value, line)?),
                }
            }
            "sweep.crossover_prob" => self.sweep.crossover_prob = parse_list(key, value, line)?,
            "sweep.mutation_prob" => self.sweep.mutation_prob = parse_list(key, value, line)?,
            "sweep.pop_size" => self.sweep.pop_size = parse_list(key, value, line)?,
            "sweep.tournament_size" => self.sweep.tournament_size = parse_list(key, value, line)?,
            "sweep.runs" => self.sweep.runs = parse_value(key, value, line)?,
            "export.count" => self.export_count = parse_value(key, value, line)?,
            "output_dir" => self.output_dir = PathBuf::from(value),
            _ => return Err(CliError::Config(format!("line {line}: unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let core = |e: stylesearch_core::Error| CliError::Config(e.to_string());
        self.pipeline.build().map_err(core)?;
        self.gmm.validate().map_err(core)?;
        self.evolution.validate().map_err(core)?;
        if !(self.target_ratio > 0.0 && self.target_ratio <= 1.0) {
            return Err(CliError::Config(format!(
                "pca.target_ratio must lie in (0, 1], got {}",
                self.target_ratio
            )));
        }
        if self.pipeline.dataset_size < self.gmm.n_components {
            return Err(CliError::Config(format!(
                "dataset.size ({}) must be at least gmm.components ({})",
                self.pipeline.dataset_size, self.gmm.n_components
            )));
        }
        match &self.targets {
            TargetSelection::TopBySize(0) => {
                return Err(CliError::Config("targets = top:k needs k >= 1".into()));
            }
            TargetSelection::Explicit(list) => {
                if let Some(&t) = list.iter().find(|&&t| t >= self.gmm.n_components) {
                    return Err(CliError::Config(format!(
                        "target {t} out of range for {} components",
                        self.gmm.n_components
                    )));
                }
            }
            TargetSelection::TopBySize(_) => {}
        }
        if self.sweep.runs == 0 {
            return Err(CliError::Config("sweep.runs must be positive".into()));
        }
        for cell in self.sweep.cells() {
            self.cell_config(cell, 0).validate().map_err(core)?;
        }
        Ok(())
    }

    /// Evolution settings of one sweep cell with the given seed.
    pub fn cell_config(&self, (cx, mt, np, ts): (f64, f64, usize, usize), seed: u64) -> EvolutionConfig {
        EvolutionConfig {
            crossover_prob: cx,
            mutation_prob: mt,
            pop_size: np,
            tournament_size: ts,
            seed,
            ..self.evolution.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        let cfg = RunConfig::parse("# nothing here\n\n").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.sweep.cells().len(), 16);
    }

    #[test]
    fn keys_comments_and_lists() {
        let cfg = RunConfig::parse(
            "gmm.components = 4   # fewer styles\n\
             targets = 0, 2\n\
             sweep.pop_size = 100,200\n\
             evolution.crossover_prob=0.7\n\
             output_dir = results/a\n",
        )
        .unwrap();
        assert_eq!(cfg.gmm.n_components, 4);
        assert_eq!(cfg.targets, TargetSelection::Explicit(vec![0, 2]));
        assert_eq!(cfg.sweep.pop_size, vec![100, 200]);
        assert_eq!(cfg.evolution.crossover_prob, 0.7);
        assert_eq!(cfg.output_dir, PathBuf::from("results/a"));
        assert_eq!(
            RunConfig::parse("targets = top:3").unwrap().targets,
            TargetSelection::TopBySize(3)
        );
    }

    #[test]
    fn rejects_bad_input() {
        for text in [
            "nonsense",
            "unknown.key = 1",
            "gmm.components = many",
            "evolution.crossover_prob = 1.5",
            "gmm.components = 8\ntargets = 8",
            "dataset.size = 4",
            "targets = top:0",
            "sweep.pop_size = 5",
            "pca.target_ratio = 0",
        ] {
            assert!(matches!(RunConfig::parse(text), Err(CliError::Config(_))), "{text}");
        }
    }
}
