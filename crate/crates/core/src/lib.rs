//! Style-guided evolutionary search of a generator's latent space.
//!
//! The pipeline discovers "styles" as Gaussian mixture components in a
//! reduced embedding space and then evolves latent vectors whose generated
//! phenotypes maximise the posterior probability of a chosen component:
//!
//! ```text
//! z ──generate──▶ phenotype ──embed──▶ embedding ──center──▶ PCA ──▶ GMM posterior p_t
//! ```
//!
//! * [`embedding_space`]: zero-mean scaling and PCA.
//! * [`gmm`]: full-covariance Gaussian mixtures fit by EM.
//! * [`phenotype`]: deterministic synthetic generator, linear embedder, fitness.
//! * [`evolution`]: the genetic algorithm and the random-sampling baseline.
//! * [`model_file`]: versioned text persistence of fitted style models.

pub mod embedding_space;
pub mod error;
pub mod evolution;
pub mod gmm;
pub mod model_file;
pub mod phenotype;
pub mod rng;

pub use embedding_space::{DataMatrix, PcaModel, Scaler};
pub use error::{Error, Result};
pub use evolution::{EvolutionConfig, EvolutionResult, GenerationStats};
pub use gmm::{GmmConfig, GmmFit, GmmModel};
pub use phenotype::{LatentVector, LinearEmbedder, Phenotype, StyleModel, SynthGenerator};
