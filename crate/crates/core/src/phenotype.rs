//! Genotype to phenotype mapping and the style fitness.
//!
//! [`SynthGenerator`] is a fixed two-layer tanh network standing in for a
//! trained image generator, and [`LinearEmbedder`] a fixed random projection
//! standing in for a deep feature extractor. Both are fully determined by a
//! seed and their dimensions; weights are never persisted.

use std::fs;
use std::ops::Deref;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;

use crate::embedding_space::{DataMatrix, PcaModel, Scaler};
use crate::error::{Error, Result};
use crate::gmm::{GmmConfig, GmmFit, GmmModel};
use crate::rng::{standard_normal_vec, stream, Stream};

/// Genotype: a point in the generator's latent space.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentVector(Vec<f64>);

impl LatentVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("latent vector has a non-finite entry".into()));
        }
        Ok(Self(values))
    }

    /// Draws i.i.d. standard-normal entries.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, len: usize) -> Self {
        Self(standard_normal_vec(rng, len))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for LatentVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for LatentVector {
    fn from(values: Vec<f64>) -> Self {
        Self(values)
    }
}

/// Generated design: an H×W grid, row-major. Generator output lies strictly
/// inside (-1, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct Phenotype {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl Phenotype {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidData("phenotype dimensions must be positive".into()));
        }
        if pixels.len() != height * width {
            return Err(Error::dims("phenotype pixels", height * width, pixels.len()));
        }
        if pixels.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("phenotype has a non-finite pixel".into()));
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    /// Binary greyscale PGM ("P5", maxval 255).
    pub fn encode_pgm(&self) -> Vec<u8> {
        let header = format!("P5\n{} {}\n255\n", self.width, self.height);
        let mut out = Vec::with_capacity(header.len() + self.pixels.len());
        out.extend_from_slice(header.as_bytes());
        out.extend(self.pixels.iter().map(|&v| pixel_to_byte(v)));
        out
    }

    pub fn export_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.encode_pgm()).map_err(|e| Error::io(path, e))
    }
}

/// Maps [-1, 1] affinely onto [0, 255], rounding half up and clamping.
pub fn pixel_to_byte(v: f64) -> u8 {
    ((v + 1.0) / 2.0 * 255.0).round().clamp(0.0, 255.0) as u8
}

fn scaled_normals<R: Rng + ?Sized>(rng: &mut R, len: usize, fan_in: usize) -> Vec<f64> {
    let scale = 1.0 / (fan_in as f64).sqrt();
    standard_normal_vec(rng, len).into_iter().map(|v| v * scale).collect()
}

/// Dense layer y = tanh(W x + b) with W stored row-major.
fn tanh_layer(weights: &[f64], bias: &[f64], x: &[f64]) -> Vec<f64> {
    let fan_in = x.len();
    bias.iter()
        .enumerate()
        .map(|(r, b)| {
            let row = &weights[r * fan_in..(r + 1) * fan_in];
            (row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b).tanh()
        })
        .collect()
}

/// Deterministic two-layer tanh generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthGenerator {
    seed: u64,
    latent_dim: usize,
    hidden: usize,
    height: usize,
    width: usize,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
}

impl SynthGenerator {
    /// Weights are drawn from one seeded normal stream in the fixed order
    /// W1 (row-major), b1, W2 (row-major), b2, each scaled by 1/sqrt(fan_in).
    pub fn new(seed: u64, latent_dim: usize, hidden: usize, height: usize, width: usize) -> Result<Self> {
        if latent_dim == 0 || hidden == 0 || height == 0 || width == 0 {
            return Err(Error::InvalidConfig(format!(
                "generator dimensions must be >= 1 (l={latent_dim}, h={hidden}, H={height}, W={width})"
            )));
        }
        let pixels = height * width;
        let mut rng = stream(seed, Stream::Weights);
        let w1 = scaled_normals(&mut rng, hidden * latent_dim, latent_dim);
        let b1 = scaled_normals(&mut rng, hidden, latent_dim);
        let w2 = scaled_normals(&mut rng, pixels * hidden, hidden);
        let b2 = scaled_normals(&mut rng, pixels, hidden);
        Ok(Self {
            seed,
            latent_dim,
            hidden,
            height,
            width,
            w1,
            b1,
            w2,
            b2,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// (W1, b1, W2, b2), weight matrices row-major.
    pub fn layers(&self) -> (&[f64], &[f64], &[f64], &[f64]) {
        (&self.w1, &self.b1, &self.w2, &self.b2)
    }

    pub fn generate(&self, z: &[f64]) -> Result<Phenotype> {
        if z.len() != self.latent_dim {
            return Err(Error::dims("generator latent", self.latent_dim, z.len()));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("latent vector has a non-finite entry".into()));
        }
        let hidden = tanh_layer(&self.w1, &self.b1, z);
        let pixels = tanh_layer(&self.w2, &self.b2, &hidden);
        Ok(Phenotype {
            height: self.height,
            width: self.width,
            pixels,
        })
    }
}

/// Fixed random linear projection of a flattened phenotype.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearEmbedder {
    seed: u64,
    out_dim: usize,
    height: usize,
    width: usize,
    projection: Vec<f64>,
}

impl LinearEmbedder {
    pub fn new(seed: u64, out_dim: usize, height: usize, width: usize) -> Result<Self> {
        if out_dim == 0 || height == 0 || width == 0 {
            return Err(Error::InvalidConfig(format!(
                "embedder dimensions must be >= 1 (d_out={out_dim}, H={height}, W={width})"
            )));
        }
        let pixels = height * width;
        let mut rng = stream(seed, Stream::Weights);
        let projection = scaled_normals(&mut rng, out_dim * pixels, pixels);
        Ok(Self {
            seed,
            out_dim,
            height,
            width,
            projection,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    /// d_out × (H·W), row-major.
    pub fn projection(&self) -> &[f64] {
        &self.projection
    }

    pub fn embed(&self, p: &Phenotype) -> Result<Vec<f64>> {
        if p.height != self.height || p.width != self.width {
            return Err(Error::dims(
                "embedder phenotype pixels",
                self.height * self.width,
                p.height * p.width,
            ));
        }
        let n = p.pixels.len();
        Ok(self
            .projection
            .chunks_exact(n)
            .map(|row| row.iter().zip(&p.pixels).map(|(w, v)| w * v).sum())
            .collect())
    }
}

/// Scaler, PCA and mixture chained: embedding → posterior over styles.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleModel {
    pub scaler: Scaler,
    pub pca: PcaModel,
    pub gmm: GmmModel,
}

impl StyleModel {
    pub fn new(scaler: Scaler, pca: PcaModel, gmm: GmmModel) -> Result<Self> {
        if scaler.dim() != pca.input_dim() {
            return Err(Error::dims("style model PCA input", scaler.dim(), pca.input_dim()));
        }
        if pca.n_components() != gmm.dim() {
            return Err(Error::dims("style model mixture input", pca.n_components(), gmm.dim()));
        }
        Ok(Self { scaler, pca, gmm })
    }

    /// Center, reduce to the variance target, then cluster.
    pub fn fit(embeddings: &DataMatrix, target_ratio: f64, gmm_cfg: &GmmConfig) -> Result<(Self, GmmFit)> {
        let scaler = Scaler::fit(embeddings)?;
        let centered = scaler.apply_matrix(embeddings)?;
        let pca = PcaModel::fit(&centered, target_ratio)?;
        let reduced = pca.transform_matrix(&centered)?;
        let fit = GmmModel::fit(&reduced, gmm_cfg)?;
        let model = Self::new(scaler, pca, fit.model.clone())?;
        Ok((model, fit))
    }

    pub fn embedding_dim(&self) -> usize {
        self.scaler.dim()
    }

    pub fn n_styles(&self) -> usize {
        self.gmm.n_components()
    }

    pub fn reduce(&self, embedding: &[f64]) -> Result<Vec<f64>> {
        self.pca.transform(&self.scaler.apply(embedding)?)
    }

    pub fn posterior(&self, embedding: &[f64]) -> Result<Vec<f64>> {
        self.gmm.posterior(&self.reduce(embedding)?)
    }

    pub fn posterior_t(&self, embedding: &[f64], t: usize) -> Result<f64> {
        self.gmm.posterior_t(&self.reduce(embedding)?, t)
    }
}

/// f_t(z) = p_t(embedding(G(z))).
pub fn fitness(
    style: &StyleModel,
    generator: &SynthGenerator,
    embedder: &LinearEmbedder,
    z: &[f64],
    t: usize,
) -> Result<f64> {
    let embedding = embedder.embed(&generator.generate(z)?)?;
    style.posterior_t(&embedding, t)
}

/// Generator and embedder bundled, for producing embeddings of latents.
#[derive(Debug, Clone, PartialEq)]
pub struct Pipeline {
    pub generator: SynthGenerator,
    pub embedder: LinearEmbedder,
}

impl Pipeline {
    pub fn new(generator: SynthGenerator, embedder: LinearEmbedder) -> Result<Self> {
        if generator.height != embedder.height || generator.width != embedder.width {
            return Err(Error::dims(
                "embedder phenotype pixels",
                embedder.height * embedder.width,
                generator.height * generator.width,
            ));
        }
        Ok(Self { generator, embedder })
    }

    pub fn embed_latent(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.embedder.embed(&self.generator.generate(z)?)
    }

    pub fn fitness(&self, style: &StyleModel, z: &[f64], t: usize) -> Result<f64> {
        fitness(style, &self.generator, &self.embedder, z, t)
    }

    /// Samples `count` standard-normal latents from the dataset stream of
    /// `seed` and embeds their phenotypes. Row i of the matrix belongs to
    /// latent i.
    pub fn sample_dataset(&self, count: usize, seed: u64) -> Result<(Vec<LatentVector>, DataMatrix)> {
        let mut rng = stream(seed, Stream::Dataset);
        let latents: Vec<LatentVector> = (0..count)
            .map(|_| LatentVector::sample(&mut rng, self.generator.latent_dim))
            .collect();
        let rows = latents
            .par_iter()
            .map(|z| self.embed_latent(z))
            .collect::<Result<Vec<_>>>()?;
        let values = rows.into_iter().flatten().collect();
        let data = DataMatrix::new(count, self.embedder.out_dim, values)?;
        Ok((latents, data))
    }
}
