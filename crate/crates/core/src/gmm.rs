//! Full-covariance Gaussian mixture models fit by expectation-maximization.
//!
//! The posterior probability of a component given a point is the style
//! membership score used as the evolutionary fitness. All density work is
//! done in log space through Cholesky factors, so posteriors stay finite even
//! when every component density underflows.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::seq::index;

use crate::embedding_space::DataMatrix;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream, Stream};

/// Responsibility mass below which a component counts as collapsed.
const COLLAPSE_MASS: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct GmmConfig {
    pub n_components: usize,
    pub max_iters: usize,
    /// Relative log-likelihood improvement below which EM stops.
    pub tol: f64,
    /// Added to every covariance diagonal after each M-step.
    pub reg_covar: f64,
    pub seed: u64,
    pub n_init: usize,
}

impl Default for GmmConfig {
    fn default() -> Self {
        Self {
            n_components: 8,
            max_iters: 200,
            tol: 1e-6,
            reg_covar: 1e-6,
            seed: 0,
            n_init: 3,
        }
    }
}

impl GmmConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n_components == 0 {
            return bad("GMM needs at least one component".into());
        }
        if self.max_iters == 0 {
            return bad("GMM max_iters must be positive".into());
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return bad(format!("GMM tol must be positive, got {}", self.tol));
        }
        if !(self.reg_covar >= 0.0 && self.reg_covar.is_finite()) {
            return bad(format!("GMM reg_covar must be >= 0, got {}", self.reg_covar));
        }
        if self.n_init == 0 {
            return bad("GMM n_init must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Factor {
    /// Lower Cholesky factor of the covariance.
    chol: DMatrix<f64>,
    log_det: f64,
}

impl Factor {
    fn new(cov: &DMatrix<f64>, k: usize) -> Result<Self> {
        let chol = cov
            .clone()
            .cholesky()
            .ok_or_else(|| {
                Error::Numerical(format!("covariance of component {k} is not positive definite"))
            })?
            .unpack();
        let log_det = 2.0 * chol.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(Self { chol, log_det })
    }

    /// Squared Mahalanobis distance via forward substitution.
    fn mahalanobis_sq(&self, x: &[f64], mean: &[f64], scratch: &mut [f64]) -> f64 {
        let q = mean.len();
        let mut acc = 0.0;
        for i in 0..q {
            let mut s = x[i] - mean[i];
            for j in 0..i {
                s -= self.chol[(i, j)] * scratch[j];
            }
            let y = s / self.chol[(i, i)];
            scratch[i] = y;
            acc += y * y;
        }
        acc
    }
}

/// A fitted mixture: weights, means, covariances and cached factorizations.
#[derive(Debug, Clone)]
pub struct GmmModel {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    covariances: Vec<DMatrix<f64>>,
    final_log_likelihood: f64,
    factors: Vec<Factor>,
}

impl PartialEq for GmmModel {
    fn eq(&self, other: &Self) -> bool {
        self.weights == other.weights
            && self.means == other.means
            && self.covariances == other.covariances
            && self.final_log_likelihood.to_bits() == other.final_log_likelihood.to_bits()
    }
}

/// Outcome of [`GmmModel::fit`]: the selected model plus its EM trace.
#[derive(Debug, Clone)]
pub struct GmmFit {
    pub model: GmmModel,
    /// Mean per-sample log-likelihood after each E-step of the selected restart.
    pub log_likelihood_history: Vec<f64>,
    pub n_iter: usize,
    pub converged: bool,
    /// Number of collapsed-component reinitializations in the selected restart.
    pub reinitialized: usize,
    /// Final log-likelihood of every restart, in restart order.
    pub restart_log_likelihoods: Vec<f64>,
}

impl GmmModel {
    /// Builds a model from explicit parameters. Covariances are used as given
    /// and must be symmetric positive definite.
    pub fn new(
        weights: Vec<f64>,
        means: Vec<Vec<f64>>,
        covariances: Vec<DMatrix<f64>>,
        final_log_likelihood: f64,
    ) -> Result<Self> {
        let k = weights.len();
        if k == 0 {
            return Err(Error::InvalidData("mixture has no components".into()));
        }
        if means.len() != k {
            return Err(Error::dims("mixture means", k, means.len()));
        }
        if covariances.len() != k {
            return Err(Error::dims("mixture covariances", k, covariances.len()));
        }
        let q = means[0].len();
        if q == 0 {
            return Err(Error::InvalidData("mixture components have dimension 0".into()));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidData("mixture weights must be finite and >= 0".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidData(format!(
                "mixture weights sum to {total}, expected 1"
            )));
        }
        let mut factors = Vec::with_capacity(k);
        for (c, (mean, cov)) in means.iter().zip(&covariances).enumerate() {
            if mean.len() != q {
                return Err(Error::dims("mixture mean", q, mean.len()));
            }
            if mean.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidData(format!("component {c} mean is not finite")));
            }
            if cov.nrows() != q || cov.ncols() != q {
                return Err(Error::dims("mixture covariance", q, cov.nrows()));
            }
            for i in 0..q {
                for j in 0..i {
                    if (cov[(i, j)] - cov[(j, i)]).abs() > 1e-9 {
                        return Err(Error::InvalidData(format!(
                            "covariance of component {c} is not symmetric"
                        )));
                    }
                }
            }
            factors.push(Factor::new(cov, c)?);
        }
        Ok(Self {
            weights,
            means,
            covariances,
            final_log_likelihood,
            factors,
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn covariances(&self) -> &[DMatrix<f64>] {
        &self.covariances
    }

    /// Mean per-sample log-likelihood of the training data under this model.
    pub fn final_log_likelihood(&self) -> f64 {
        self.final_log_likelihood
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::dims("mixture input", self.dim(), x.len()));
        }
        Ok(())
    }

    /// ln(w_k) + ln N(x; mu_k, Sigma_k) for every component.
    fn weighted_log_densities(&self, x: &[f64], out: &mut [f64], scratch: &mut [f64]) {
        let q = self.dim() as f64;
        let norm = q * (2.0 * PI).ln();
        for (k, slot) in out.iter_mut().enumerate() {
            let f = &self.factors[k];
            let m = f.mahalanobis_sq(x, &self.means[k], scratch);
            *slot = self.weights[k].ln() - 0.5 * (norm + f.log_det + m);
        }
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        let mut lp = vec![0.0; self.n_components()];
        let mut scratch = vec![0.0; self.dim()];
        self.weighted_log_densities(x, &mut lp, &mut scratch);
        Ok(log_sum_exp(&lp))
    }

    pub fn posterior(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        let mut lp = vec![0.0; self.n_components()];
        let mut scratch = vec![0.0; self.dim()];
        self.weighted_log_densities(x, &mut lp, &mut scratch);
        normalize_log(&mut lp);
        Ok(lp)
    }

    pub fn posterior_t(&self, x: &[f64], t: usize) -> Result<f64> {
        if t >= self.n_components() {
            return Err(Error::IndexOutOfRange {
                index: t,
                len: self.n_components(),
            });
        }
        Ok(self.posterior(x)?[t])
    }

    /// Hard assignment: index of the largest posterior, lowest index on ties.
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.posterior(x)?))
    }

    /// Posterior of every component for every row (the E-step).
    pub fn responsibilities(&self, data: &DataMatrix) -> Result<Vec<Vec<f64>>> {
        Ok(self.e_step(data)?.0)
    }

    fn e_step(&self, data: &DataMatrix) -> Result<(Vec<Vec<f64>>, f64)> {
        if data.cols() != self.dim() {
            return Err(Error::dims("mixture input", self.dim(), data.cols()));
        }
        let k = self.n_components();
        let mut scratch = vec![0.0; self.dim()];
        let mut total = 0.0;
        let mut resp = Vec::with_capacity(data.rows());
        for row in data.iter_rows() {
            let mut lp = vec![0.0; k];
            self.weighted_log_densities(row, &mut lp, &mut scratch);
            total += normalize_log(&mut lp);
            resp.push(lp);
        }
        Ok((resp, total / data.rows() as f64))
    }

    /// One EM iteration: E-step under `self`, then the M-step. Returns the
    /// updated model and the responsibilities used to build it.
    pub fn em_step(&self, data: &DataMatrix, reg_covar: f64) -> Result<(GmmModel, Vec<Vec<f64>>)> {
        let (resp, ll) = self.e_step(data)?;
        let global = global_covariance(data, reg_covar);
        let (params, _) = m_step(data, &resp, reg_covar, &global);
        let model = GmmModel::new(params.weights, params.means, params.covariances, ll)?;
        Ok((model, resp))
    }

    /// Fits `cfg.n_init` independently seeded EM runs and keeps the one with
    /// the highest final log-likelihood (earliest restart on ties).
    pub fn fit(data: &DataMatrix, cfg: &GmmConfig) -> Result<GmmFit> {
        cfg.validate()?;
        if data.rows() < cfg.n_components {
            return Err(Error::InvalidData(format!(
                "GMM with {} components needs at least as many samples, got {}",
                cfg.n_components,
                data.rows()
            )));
        }
        let mut best: Option<GmmFit> = None;
        let mut restart_lls = Vec::with_capacity(cfg.n_init);
        for r in 0..cfg.n_init {
            let run = fit_once(data, cfg, derive_seed(cfg.seed, r as u64))?;
            let ll = run.model.final_log_likelihood;
            restart_lls.push(ll);
            if best
                .as_ref()
                .is_none_or(|b| ll > b.model.final_log_likelihood)
            {
                best = Some(run);
            }
        }
        let mut best = best.expect("n_init >= 1");
        best.restart_log_likelihoods = restart_lls;
        Ok(best)
    }
}

/// Single EM run from a seeded initialization: K distinct data points as
/// means, the global covariance for every component, uniform weights.
pub fn fit_once(data: &DataMatrix, cfg: &GmmConfig, seed: u64) -> Result<GmmFit> {
    cfg.validate()?;
    let n = data.rows();
    let k = cfg.n_components;
    if n < k {
        return Err(Error::InvalidData(format!(
            "GMM with {k} components needs at least as many samples, got {n}"
        )));
    }
    let mut rng = stream(seed, Stream::GmmInit);
    let picks = index::sample(&mut rng, n, k);
    let global = global_covariance(data, cfg.reg_covar);
    let mut model = GmmModel::new(
        vec![1.0 / k as f64; k],
        picks.iter().map(|i| data.row(i).to_vec()).collect(),
        vec![global.clone(); k],
        f64::NEG_INFINITY,
    )?;

    let mut history = Vec::new();
    let mut converged = false;
    let mut n_iter = 0;
    let mut reinitialized = 0;
    for _ in 0..cfg.max_iters {
        let (resp, ll) = model.e_step(data)?;
        if let Some(&prev) = history.last() {
            let prev: f64 = prev;
            if ll - prev < cfg.tol * prev.abs() {
                history.push(ll);
                model.final_log_likelihood = ll;
                converged = true;
                break;
            }
        }
        history.push(ll);
        let (params, collapsed) = m_step(data, &resp, cfg.reg_covar, &global);
        reinitialized += collapsed;
        model = GmmModel::new(params.weights, params.means, params.covariances, ll)?;
        n_iter += 1;
    }
    if !converged {
        let (_, ll) = model.e_step(data)?;
        history.push(ll);
        model.final_log_likelihood = ll;
    }
    Ok(GmmFit {
        model,
        log_likelihood_history: history,
        n_iter,
        converged,
        reinitialized,
        restart_log_likelihoods: Vec::new(),
    })
}

struct Params {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    covariances: Vec<DMatrix<f64>>,
}

/// Maximum-likelihood covariance (divisor n) plus `reg_covar` on the diagonal.
fn global_covariance(data: &DataMatrix, reg_covar: f64) -> DMatrix<f64> {
    let q = data.cols();
    let mean = data.column_means();
    let mut cov = DMatrix::zeros(q, q);
    for row in data.iter_rows() {
        for i in 0..q {
            let di = row[i] - mean[i];
            for j in 0..=i {
                cov[(i, j)] += di * (row[j] - mean[j]);
            }
        }
    }
    finish_covariance(&mut cov, data.rows() as f64, reg_covar);
    cov
}

/// Divides the accumulated lower triangle, mirrors it and regularizes.
fn finish_covariance(cov: &mut DMatrix<f64>, mass: f64, reg_covar: f64) {
    let q = cov.nrows();
    for i in 0..q {
        for j in 0..=i {
            let v = cov[(i, j)] / mass;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
        cov[(i, i)] += reg_covar;
    }
}

fn m_step(
    data: &DataMatrix,
    resp: &[Vec<f64>],
    reg_covar: f64,
    global: &DMatrix<f64>,
) -> (Params, usize) {
    let n = data.rows();
    let q = data.cols();
    let k = resp[0].len();

    let mut mass = vec![0.0; k];
    for r in resp {
        for (m, v) in mass.iter_mut().zip(r) {
            *m += v;
        }
    }

    let mut means = vec![vec![0.0; q]; k];
    for (row, r) in data.iter_rows().zip(resp) {
        for c in 0..k {
            for (m, x) in means[c].iter_mut().zip(row) {
                *m += r[c] * x;
            }
        }
    }

    let mut covariances = Vec::with_capacity(k);
    let mut weights = Vec::with_capacity(k);
    let mut reseeded: Vec<usize> = Vec::new();
    let mut collapsed = 0;
    for c in 0..k {
        if mass[c] < COLLAPSE_MASS {
            // Reseed from the least-explained point not already used.
            let point = least_explained_point(resp, &reseeded);
            reseeded.push(point);
            means[c] = data.row(point).to_vec();
            covariances.push(global.clone());
            weights.push(1.0 / n as f64);
            collapsed += 1;
            continue;
        }
        for m in means[c].iter_mut() {
            *m /= mass[c];
        }
        let mean = &means[c];
        let mut cov = DMatrix::zeros(q, q);
        for (row, r) in data.iter_rows().zip(resp) {
            let w = r[c];
            if w == 0.0 {
                continue;
            }
            for i in 0..q {
                let di = w * (row[i] - mean[i]);
                for j in 0..=i {
                    cov[(i, j)] += di * (row[j] - mean[j]);
                }
            }
        }
        finish_covariance(&mut cov, mass[c], reg_covar);
        covariances.push(cov);
        weights.push(mass[c] / n as f64);
    }

    let total: f64 = weights.iter().sum();
    for w in weights.iter_mut() {
        *w /= total;
    }
    (
        Params {
            weights,
            means,
            covariances,
        },
        collapsed,
    )
}

fn least_explained_point(resp: &[Vec<f64>], exclude: &[usize]) -> usize {
    let mut best = None;
    let mut best_val = f64::INFINITY;
    for (i, r) in resp.iter().enumerate() {
        if exclude.contains(&i) {
            continue;
        }
        let m = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if m < best_val {
            best_val = m;
            best = Some(i);
        }
    }
    best.unwrap_or(0)
}

/// Normalizes log-weights in place into probabilities; returns their log-sum-exp.
fn normalize_log(lp: &mut [f64]) -> f64 {
    let lse = log_sum_exp(lp);
    for v in lp.iter_mut() {
        *v = (*v - lse).exp().clamp(0.0, 1.0);
    }
    lse
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}
