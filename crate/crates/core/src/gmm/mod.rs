//! Gaussian mixtures fitted by expectation-maximization, and the per-category
//! box-mixture ensemble used as an alternative layout extrapolator.

mod ensemble;

pub use ensemble::{
    fit_ensemble, sample_layouts, CategoryMixture, CooccurrenceModel, EnsembleOptions,
    EnsembleVariant, GmmEnsemble, SampleOutput, SampleRecord,
};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::rng_from;

/// Added to a covariance diagonal whose smallest eigenvalue collapses.
pub const COVARIANCE_FLOOR: f64 = 1e-4;
/// Smallest eigenvalue below which a covariance counts as collapsed.
pub const COLLAPSE_EIGENVALUE: f64 = 1e-8;
/// Allowed per-iteration log-likelihood decrease attributed to rounding.
pub const MONOTONE_SLACK: f64 = 1e-8;

#[derive(Debug, Error, PartialEq)]
pub enum GmmError {
    #[error("need at least {k} samples for {k} components, got {n}")]
    TooFewSamples { n: usize, k: usize },
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("failed to read or write ensemble: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceKind {
    #[default]
    Full,
    Diagonal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub components: usize,
    pub max_iters: usize,
    /// Stop once the log-likelihood improves by less than this.
    pub tol: f64,
    pub seed: u64,
    pub covariance: CovarianceKind,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            components: 3,
            max_iters: 200,
            tol: 1e-6,
            seed: 0,
            covariance: CovarianceKind::Full,
        }
    }
}

/// Mixture of `K` multivariate normals in `dim` dimensions.
///
/// Covariances are stored row-major as full `dim × dim` matrices; in diagonal
/// mode the off-diagonal entries are zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixture {
    pub dim: usize,
    pub covariance: CovarianceKind,
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub covariances: Vec<Vec<f64>>,
}

/// Per-iteration trace of a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// Log-likelihood after initialization and after every accepted iteration.
    pub log_likelihoods: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Number of times a collapsed covariance was regularized.
    pub floor_applications: usize,
    /// A step that lowered the likelihood was rejected and fitting stopped.
    pub stopped_on_decrease: bool,
}

struct Params {
    weights: Vec<f64>,
    means: Vec<DVector<f64>>,
    covs: Vec<DMatrix<f64>>,
}

impl GaussianMixture {
    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn mean(&self, k: usize) -> DVector<f64> {
        DVector::from_vec(self.means[k].clone())
    }

    pub fn covariance_matrix(&self, k: usize) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.covariances[k])
    }

    fn from_params(p: &Params, kind: CovarianceKind) -> Self {
        let dim = p.means[0].len();
        Self {
            dim,
            covariance: kind,
            weights: p.weights.clone(),
            means: p.means.iter().map(|m| m.iter().copied().collect()).collect(),
            covariances: p
                .covs
                .iter()
                .map(|c| c.transpose().iter().copied().collect())
                .collect(),
        }
    }

    fn params(&self) -> Params {
        Params {
            weights: self.weights.clone(),
            means: (0..self.components()).map(|k| self.mean(k)).collect(),
            covs: (0..self.components()).map(|k| self.covariance_matrix(k)).collect(),
        }
    }

    /// Total log-likelihood of `samples` under the mixture.
    pub fn log_likelihood(&self, samples: &[Vec<f64>]) -> f64 {
        let data: Vec<DVector<f64>> = samples.iter().map(|s| DVector::from_vec(s.clone())).collect();
        e_step(&data, &self.params()).1
    }

    /// Draws one sample.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let k = if self.components() == 1 {
            0
        } else {
            WeightedIndex::new(&self.weights)
                .map(|d| d.sample(rng))
                .unwrap_or(0)
        };
        let chol = Cholesky::new(self.covariance_matrix(k))
            .expect("fitted covariances are positive definite");
        let z = DVector::from_iterator(self.dim, (0..self.dim).map(|_| rng.sample(StandardNormal)));
        let x = self.mean(k) + chol.l() * z;
        x.iter().copied().collect()
    }

    /// Checks weights, dimensions and positive definiteness.
    pub fn validate(&self) -> Result<(), String> {
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || self.weights.iter().any(|w| *w < 0.0) {
            return Err(format!("weights {:?} are not a distribution", self.weights));
        }
        if self.means.len() != self.components() || self.covariances.len() != self.components() {
            return Err("component count mismatch".into());
        }
        for k in 0..self.components() {
            let c = self.covariance_matrix(k);
            if (&c - c.transpose()).amax() > 1e-12 {
                return Err(format!("covariance {k} is not symmetric"));
            }
            if Cholesky::new(c).is_none() {
                return Err(format!("covariance {k} is not positive definite"));
            }
        }
        Ok(())
    }
}

fn log_pdf(x: &DVector<f64>, mean: &DVector<f64>, chol: &Cholesky<f64, Dyn>) -> f64 {
    let d = x.len() as f64;
    let diff = x - mean;
    let z = chol
        .l_dirty()
        .solve_lower_triangular(&diff)
        .expect("Cholesky factor is invertible");
    let log_det: f64 = chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>() * 2.0;
    -0.5 * (d * (2.0 * std::f64::consts::PI).ln() + log_det + z.norm_squared())
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Responsibilities (n × K) and total log-likelihood.
fn e_step(data: &[DVector<f64>], p: &Params) -> (Vec<Vec<f64>>, f64) {
    let chols: Vec<_> = p
        .covs
        .iter()
        .map(|c| Cholesky::new(c.clone()).expect("covariances are kept positive definite"))
        .collect();
    let mut total = 0.0;
    let resp = data
        .iter()
        .map(|x| {
            let logs: Vec<f64> = (0..p.weights.len())
                .map(|k| p.weights[k].ln() + log_pdf(x, &p.means[k], &chols[k]))
                .collect();
            let norm = log_sum_exp(&logs);
            total += norm;
            logs.iter().map(|l| (l - norm).exp()).collect()
        })
        .collect();
    (resp, total)
}

/// Adds the floor to the diagonal if the smallest eigenvalue collapsed.
fn regularize(mut cov: DMatrix<f64>, floors: &mut usize) -> DMatrix<f64> {
    cov = (&cov + cov.transpose()) * 0.5;
    let min_eig = SymmetricEigen::new(cov.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if !(min_eig >= COLLAPSE_EIGENVALUE) || Cholesky::new(cov.clone()).is_none() {
        *floors += 1;
        for i in 0..cov.nrows() {
            cov[(i, i)] += COVARIANCE_FLOOR;
        }
    }
    cov
}

fn m_step(
    data: &[DVector<f64>],
    resp: &[Vec<f64>],
    fallback_means: &[DVector<f64>],
    kind: CovarianceKind,
    floors: &mut usize,
) -> Params {
    let n = data.len();
    let d = data[0].len();
    let k_count = resp[0].len();
    let mut weights = Vec::with_capacity(k_count);
    let mut means = Vec::with_capacity(k_count);
    let mut covs = Vec::with_capacity(k_count);
    for k in 0..k_count {
        let nk: f64 = resp.iter().map(|r| r[k]).sum();
        weights.push(nk / n as f64);
        if nk <= f64::MIN_POSITIVE * n as f64 {
            means.push(fallback_means[k].clone());
            covs.push(regularize(DMatrix::zeros(d, d), floors));
            continue;
        }
        let mean = data
            .iter()
            .zip(resp)
            .fold(DVector::zeros(d), |acc, (x, r)| acc + x * r[k])
            / nk;
        let mut cov = data.iter().zip(resp).fold(DMatrix::zeros(d, d), |acc, (x, r)| {
            let diff = x - &mean;
            acc + (&diff * diff.transpose()) * r[k]
        }) / nk;
        if kind == CovarianceKind::Diagonal {
            cov = DMatrix::from_diagonal(&cov.diagonal());
        }
        means.push(mean);
        covs.push(regularize(cov, floors));
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    Params {
        weights,
        means,
        covs,
    }
}

/// k-means++ seeding: first centre uniform, later centres by squared distance.
fn kmeans_pp<R: Rng>(data: &[DVector<f64>], k: usize, rng: &mut R) -> Vec<DVector<f64>> {
    let mut centers = vec![data[rng.random_range(0..data.len())].clone()];
    while centers.len() < k {
        let d2: Vec<f64> = data
            .iter()
            .map(|x| {
                centers
                    .iter()
                    .map(|c| (x - c).norm_squared())
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let idx = match WeightedIndex::new(&d2) {
            Ok(dist) => dist.sample(rng),
            Err(_) => rng.random_range(0..data.len()),
        };
        centers.push(data[idx].clone());
    }
    centers
}

fn nearest(x: &DVector<f64>, centers: &[DVector<f64>]) -> usize {
    centers
        .iter()
        .enumerate()
        .map(|(i, c)| (i, (x - c).norm_squared()))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

/// Fits a mixture by EM from k-means++ initialization.
///
/// Initial parameters come from hard-assigning every sample to its nearest
/// seeded centre. Iteration stops at `max_iters`, when the log-likelihood gain
/// drops below `tol`, or when a step would lower the likelihood by more than
/// [`MONOTONE_SLACK`] (only possible right after a covariance was floored); in
/// the last case the previous parameters are kept.
pub fn fit_gmm(
    samples: &[Vec<f64>],
    opts: &FitOptions,
) -> Result<(GaussianMixture, FitReport), GmmError> {
    let k = opts.components;
    if k == 0 {
        return Err(GmmError::Argument("component count must be >= 1".into()));
    }
    if samples.len() < k {
        return Err(GmmError::TooFewSamples {
            n: samples.len(),
            k,
        });
    }
    let d = samples[0].len();
    if d == 0 || samples.iter().any(|s| s.len() != d) {
        return Err(GmmError::Argument("samples must share a positive dimension".into()));
    }
    if samples.iter().flatten().any(|v| !v.is_finite()) {
        return Err(GmmError::Argument("samples must be finite".into()));
    }
    let data: Vec<DVector<f64>> = samples.iter().map(|s| DVector::from_vec(s.clone())).collect();
    let mut rng = rng_from(opts.seed, &[crate::seed::stage::GMM_FIT]);
    let centers = kmeans_pp(&data, k, &mut rng);
    let hard: Vec<Vec<f64>> = data
        .iter()
        .map(|x| {
            let mut r = vec![0.0; k];
            r[nearest(x, &centers)] = 1.0;
            r
        })
        .collect();

    let mut floors = 0;
    let mut params = m_step(&data, &hard, &centers, opts.covariance, &mut floors);
    let (mut resp, mut ll) = e_step(&data, &params);
    let mut report = FitReport {
        log_likelihoods: vec![ll],
        iterations: 0,
        converged: false,
        floor_applications: 0,
        stopped_on_decrease: false,
    };
    for _ in 0..opts.max_iters {
        let next = m_step(&data, &resp, &centers, opts.covariance, &mut floors);
        let (next_resp, next_ll) = e_step(&data, &next);
        if next_ll < ll - MONOTONE_SLACK {
            report.stopped_on_decrease = true;
            break;
        }
        report.iterations += 1;
        report.log_likelihoods.push(next_ll);
        let gain = next_ll - ll;
        params = next;
        resp = next_resp;
        ll = next_ll;
        if gain < opts.tol {
            report.converged = true;
            break;
        }
    }
    report.floor_applications = floors;
    Ok((GaussianMixture::from_params(&params, opts.covariance), report))
}
