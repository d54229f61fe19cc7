//! Versioned text persistence of a fitted style model.
//!
//! ```text
//! # stylesearch style model
//! format_version 1
//! d 64
//! q 11
//! K 8
//! target_ratio 9.0000000000000002e-1
//! ...pipeline description (seeds and dimensions)...
//! scaler_means
//! <d numbers>
//! pca_components
//! <q rows of d numbers>
//! pca_explained_variance
//! ...
//! ```
//!
//! Reals are written with 17 significant digits so every value round-trips
//! exactly. The generator and embedder are stored only as seeds and
//! dimensions; their weights are rebuilt on load.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::embedding_space::{PcaModel, Scaler};
use crate::error::{Error, Result};
use crate::gmm::GmmModel;
use crate::phenotype::{LinearEmbedder, Pipeline, StyleModel, SynthGenerator};

pub const FORMAT_VERSION: u32 = 1;

const BLOCKS: [&str; 6] = [
    "scaler_means",
    "pca_components",
    "pca_explained_variance",
    "gmm_weights",
    "gmm_means",
    "gmm_covariances",
];

/// Seeds and dimensions that regenerate the generator, the embedder and
/// the training dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PipelineSpec {
    pub generator_seed: u64,
    pub latent_dim: usize,
    pub hidden_width: usize,
    pub height: usize,
    pub width: usize,
    pub embedder_seed: u64,
    pub embedding_dim: usize,
    pub dataset_seed: u64,
    pub dataset_size: usize,
}

impl PipelineSpec {
    pub fn build(&self) -> Result<Pipeline> {
        Pipeline::new(
            SynthGenerator::new(
                self.generator_seed,
                self.latent_dim,
                self.hidden_width,
                self.height,
                self.width,
            )?,
            LinearEmbedder::new(self.embedder_seed, self.embedding_dim, self.height, self.width)?,
        )
    }

    fn fields(&self) -> [(&'static str, u64); 9] {
        [
            ("generator_seed", self.generator_seed),
            ("latent_dim", self.latent_dim as u64),
            ("hidden_width", self.hidden_width as u64),
            ("height", self.height as u64),
            ("width", self.width as u64),
            ("embedder_seed", self.embedder_seed),
            ("embedding_dim", self.embedding_dim as u64),
            ("dataset_seed", self.dataset_seed),
            ("dataset_size", self.dataset_size as u64),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub pipeline: PipelineSpec,
    pub style: StyleModel,
}

/// Fixed 17-significant-digit scientific notation.
pub fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

fn push_row(out: &mut String, values: impl IntoIterator<Item = f64>) {
    let row: Vec<String> = values.into_iter().map(fmt_real).collect();
    out.push_str(&row.join(" "));
    out.push('\n');
}

impl ModelFile {
    pub fn to_text(&self) -> String {
        let s = &self.style;
        let d = s.scaler.dim();
        let q = s.pca.n_components();
        let k = s.gmm.n_components();
        let mut out = String::new();
        out.push_str("# stylesearch style model\n");
        let _ = writeln!(out, "format_version {FORMAT_VERSION}");
        let _ = writeln!(out, "d {d}");
        let _ = writeln!(out, "q {q}");
        let _ = writeln!(out, "K {k}");
        let _ = writeln!(out, "target_ratio {}", fmt_real(s.pca.target_ratio));
        for (key, v) in self.pipeline.fields() {
            let _ = writeln!(out, "{key} {v}");
        }
        let _ = writeln!(out, "pca_total_variance {}", fmt_real(s.pca.total_variance));
        let _ = writeln!(out, "gmm_log_likelihood {}", fmt_real(s.gmm.final_log_likelihood()));

        out.push_str("scaler_means\n");
        push_row(&mut out, s.scaler.means.iter().copied());
        out.push_str("pca_components\n");
        for row in s.pca.components.row_iter() {
            push_row(&mut out, row.iter().copied());
        }
        out.push_str("pca_explained_variance\n");
        push_row(&mut out, s.pca.explained_variance.iter().copied());
        out.push_str("gmm_weights\n");
        push_row(&mut out, s.gmm.weights().iter().copied());
        out.push_str("gmm_means\n");
        for m in s.gmm.means() {
            push_row(&mut out, m.iter().copied());
        }
        out.push_str("gmm_covariances\n");
        for cov in s.gmm.covariances() {
            for row in cov.row_iter() {
                push_row(&mut out, row.iter().copied());
            }
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut header: BTreeMap<String, (usize, String)> = BTreeMap::new();
        let mut blocks: BTreeMap<&str, (usize, Vec<f64>)> = BTreeMap::new();
        let mut current: Option<&str> = None;

        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut tokens = line.split_whitespace();
            let first = tokens.next().unwrap_or_default();
            if let Some(&label) = BLOCKS.iter().find(|&&b| b == first) {
                if tokens.next().is_some() {
                    return Err(format_err(line_no, format!("block label {label} takes no value")));
                }
                if blocks.contains_key(label) {
                    return Err(format_err(line_no, format!("duplicate block {label}")));
                }
                blocks.insert(label, (line_no, Vec::new()));
                current = Some(label);
                continue;
            }
            if first.starts_with(|c: char| c.is_ascii_alphabetic()) && current.is_none() {
                let value: Vec<&str> = tokens.collect();
                if value.len() != 1 {
                    return Err(format_err(line_no, format!("header {first} needs exactly one value")));
                }
                if header
                    .insert(first.to_string(), (line_no, value[0].to_string()))
                    .is_some()
                {
                    return Err(format_err(line_no, format!("duplicate header {first}")));
                }
                continue;
            }
            let Some(label) = current else {
                return Err(format_err(line_no, "numbers before any block label".into()));
            };
            let values = &mut blocks.get_mut(label).expect("block registered").1;
            for tok in line.split_whitespace() {
                let v: f64 = tok
                    .parse()
                    .map_err(|_| format_err(line_no, format!("invalid number {tok:?}")))?;
                values.push(v);
            }
        }

        let get = |key: &str| -> Result<(usize, &str)> {
            header
                .get(key)
                .map(|(l, v)| (*l, v.as_str()))
                .ok_or_else(|| format_err(0, format!("missing header {key}")))
        };
        let int = |key: &str| -> Result<u64> {
            let (line, v) = get(key)?;
            v.parse()
                .map_err(|_| format_err(line, format!("header {key} is not an unsigned integer: {v:?}")))
        };
        let real = |key: &str| -> Result<f64> {
            let (line, v) = get(key)?;
            v.parse()
                .map_err(|_| format_err(line, format!("header {key} is not a number: {v:?}")))
        };

        let version = int("format_version")?;
        if version != u64::from(FORMAT_VERSION) {
            return Err(format_err(
                get("format_version")?.0,
                format!("unsupported format_version {version}, expected {FORMAT_VERSION}"),
            ));
        }
        let d = int("d")? as usize;
        let q = int("q")? as usize;
        let k = int("K")? as usize;
        let target_ratio = real("target_ratio")?;
        let total_variance = real("pca_total_variance")?;
        let log_likelihood = real("gmm_log_likelihood")?;
        let pipeline = PipelineSpec {
            generator_seed: int("generator_seed")?,
            latent_dim: int("latent_dim")? as usize,
            hidden_width: int("hidden_width")? as usize,
            height: int("height")? as usize,
            width: int("width")? as usize,
            embedder_seed: int("embedder_seed")?,
            embedding_dim: int("embedding_dim")? as usize,
            dataset_seed: int("dataset_seed")?,
            dataset_size: int("dataset_size")? as usize,
        };
        if pipeline.embedding_dim != d {
            return Err(format_err(
                get("embedding_dim")?.0,
                format!("embedding_dim {} disagrees with d {d}", pipeline.embedding_dim),
            ));
        }

        let mut take = |label: &'static str, expected: usize| -> Result<Vec<f64>> {
            let (line, values) = blocks
                .remove(label)
                .ok_or_else(|| format_err(0, format!("missing block {label}")))?;
            if values.len() != expected {
                return Err(format_err(
                    line,
                    format!("block {label} has {} values, expected {expected}", values.len()),
                ));
            }
            Ok(values)
        };

        let means = take("scaler_means", d)?;
        let components = take("pca_components", q * d)?;
        let explained = take("pca_explained_variance", q)?;
        let weights = take("gmm_weights", k)?;
        let gmm_means = take("gmm_means", k * q)?;
        let covs = take("gmm_covariances", k * q * q)?;

        let scaler = Scaler { means };
        let pca = PcaModel {
            components: DMatrix::from_row_slice(q, d, &components),
            explained_variance: explained,
            total_variance,
            target_ratio,
        };
        let gmm = GmmModel::new(
            weights,
            gmm_means.chunks_exact(q.max(1)).map(<[f64]>::to_vec).collect(),
            covs.chunks_exact((q * q).max(1))
                .map(|c| DMatrix::from_row_slice(q, q, c))
                .collect(),
            log_likelihood,
        )?;
        let style = StyleModel::new(scaler, pca, gmm)?;
        Ok(Self { pipeline, style })
    }
}

fn format_err(line: usize, message: String) -> Error {
    Error::ModelFormat { line, message }
}
