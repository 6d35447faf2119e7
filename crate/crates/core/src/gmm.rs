//! Circularly-symmetric complex Gaussian mixture models: fitting via EM,
//! density evaluation, responsibilities and binary persistence.
//!
//! All density work happens in the log domain. At M = 64 the raw complex
//! Gaussian density underflows f64, so components are compared through
//! log densities and combined with a stabilized log-sum-exp.
//!
//! Determinism: the E-step parallelizes over components and the M-step over
//! components, but every reduction over samples runs in index order, so a fit
//! is reproducible bit for bit regardless of thread count.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    add_scaled_identity, hermitian_deviation, hermitianize, log_sum_exp, C64, CMatrix, CVector,
    HermitianFactor,
};
use crate::scenarios::ChannelDataset;

const MODEL_MAGIC: &[u8; 4] = b"GMM1";
const LOG_PI: f64 = 1.144_729_885_849_400_2; // ln(pi)

/// Columns are processed in fixed-size chunks so the E/M-step working set
/// stays bounded; the chunk boundaries are part of the deterministic
/// reduction order.
const SAMPLE_CHUNK: usize = 4096;

/// A K-component circularly-symmetric complex Gaussian mixture.
///
/// Immutable after construction; safe to share across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    weights: Vec<f64>,
    means: Vec<CVector>,
    covariances: Vec<CMatrix>,
}

impl GmmModel {
    /// Validates the mixture invariants: weights nonnegative and summing to
    /// one within 1e-12, Hermitian covariance matrices with matching shapes.
    pub fn new(weights: Vec<f64>, means: Vec<CVector>, covariances: Vec<CMatrix>) -> Result<Self> {
        let k = weights.len();
        if k == 0 {
            return Err(Error::InvalidArgument("mixture needs at least one component".into()));
        }
        if means.len() != k || covariances.len() != k {
            return Err(Error::DimensionMismatch(format!(
                "weights/means/covariances counts disagree: {k}/{}/{}",
                means.len(),
                covariances.len()
            )));
        }
        let m = means[0].len();
        if weights.iter().any(|&w| w < 0.0) {
            return Err(Error::InvalidArgument("mixing weights must be nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "mixing weights sum to {total}, expected 1"
            )));
        }
        for (k, (mean, cov)) in means.iter().zip(&covariances).enumerate() {
            if mean.len() != m || cov.nrows() != m || cov.ncols() != m {
                return Err(Error::DimensionMismatch(format!(
                    "component {k} has inconsistent dimensions"
                )));
            }
            if hermitian_deviation(cov) > 1e-12 * (1.0 + cov.norm()) {
                return Err(Error::InvalidArgument(format!(
                    "covariance of component {k} is not Hermitian"
                )));
            }
        }
        Ok(Self { weights, means, covariances })
    }

    pub fn component_count(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[CVector] {
        &self.means
    }

    pub fn covariances(&self) -> &[CMatrix] {
        &self.covariances
    }

    pub fn weight(&self, k: usize) -> f64 {
        self.weights[k]
    }

    pub fn mean(&self, k: usize) -> &CVector {
        &self.means[k]
    }

    pub fn covariance(&self, k: usize) -> &CMatrix {
        &self.covariances[k]
    }

    /// Log density of the mixture at `x`, optionally after adding a noise
    /// covariance to every component (the observation density).
    pub fn log_mixture_density(&self, x: &CVector, noise_cov: Option<&CMatrix>) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "point has length {}, model dimension is {}",
                x.len(),
                self.dim()
            )));
        }
        let mut terms = Vec::with_capacity(self.component_count());
        for k in 0..self.component_count() {
            let cov = match noise_cov {
                Some(n) => self.covariances[k].clone() + n,
                None => self.covariances[k].clone(),
            };
            let logpdf = log_density_component(&self.means[k], &cov, x)
                .map_err(|e| Error::Numerical(format!("component {k}: {e}")))?;
            terms.push(self.weights[k].ln() + logpdf);
        }
        Ok(log_sum_exp(&terms))
    }

    /// GMM1 container: magic `GMM1` | u32 LE M | u32 LE K | K f64 weights |
    /// K*M complex means | K*M*M complex covariances (column-major), all
    /// little-endian.
    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MODEL_MAGIC)?;
        w.write_u32::<LittleEndian>(self.dim() as u32)?;
        w.write_u32::<LittleEndian>(self.component_count() as u32)?;
        for &weight in &self.weights {
            w.write_f64::<LittleEndian>(weight)?;
        }
        for mean in &self.means {
            for e in mean.iter() {
                w.write_f64::<LittleEndian>(e.re)?;
                w.write_f64::<LittleEndian>(e.im)?;
            }
        }
        for cov in &self.covariances {
            for e in cov.iter() {
                // nalgebra stores column-major, matching the format
                w.write_f64::<LittleEndian>(e.re)?;
                w.write_f64::<LittleEndian>(e.im)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| Error::Format("file too short for GMM1 header".into()))?;
        if &magic != MODEL_MAGIC {
            return Err(Error::Format(format!("bad magic bytes {magic:?}, expected GMM1")));
        }
        let m = r
            .read_u32::<LittleEndian>()
            .map_err(|_| Error::Format("missing dimension in GMM1 header".into()))?
            as usize;
        let k = r
            .read_u32::<LittleEndian>()
            .map_err(|_| Error::Format("missing component count in GMM1 header".into()))?
            as usize;
        if m == 0 || k == 0 {
            return Err(Error::Format("GMM1 header declares empty model".into()));
        }
        let mut weights = vec![0.0; k];
        for w in &mut weights {
            *w = read_f64(&mut r, "weights")?;
        }
        let mut means = Vec::with_capacity(k);
        for _ in 0..k {
            let mut mean = CVector::zeros(m);
            for i in 0..m {
                let re = read_f64(&mut r, "means")?;
                let im = read_f64(&mut r, "means")?;
                mean[i] = C64::new(re, im);
            }
            means.push(mean);
        }
        let mut covariances = Vec::with_capacity(k);
        for _ in 0..k {
            let mut cov = CMatrix::zeros(m, m);
            for j in 0..m {
                for i in 0..m {
                    let re = read_f64(&mut r, "covariances")?;
                    let im = read_f64(&mut r, "covariances")?;
                    cov[(i, j)] = C64::new(re, im);
                }
            }
            covariances.push(cov);
        }
        Self::new(weights, means, covariances)
    }
}

fn read_f64<R: Read>(r: &mut R, section: &str) -> Result<f64> {
    r.read_f64::<LittleEndian>().map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Truncated(format!("GMM1 payload ends inside {section}"))
        } else {
            Error::Io(e)
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitStrategy {
    KMeansPlusPlus,
    RandomResponsibility,
}

/// EM hyperparameters. The covariance floor is relative to the average
/// per-dimension sample power, so it transfers across normalizations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmConfig {
    pub component_count: usize,
    pub max_iterations: usize,
    pub rel_tolerance: f64,
    pub covariance_floor: f64,
    pub init_strategy: InitStrategy,
    pub seed: u64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            component_count: 1,
            max_iterations: 300,
            rel_tolerance: 1e-6,
            covariance_floor: 1e-6,
            init_strategy: InitStrategy::KMeansPlusPlus,
            seed: 0,
        }
    }
}

impl EmConfig {
    pub fn with_components(component_count: usize) -> Self {
        Self { component_count, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.component_count == 0 {
            return Err(Error::InvalidArgument("component count must be >= 1".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidArgument("max_iterations must be >= 1".into()));
        }
        if self.rel_tolerance <= 0.0 || self.covariance_floor <= 0.0 {
            return Err(Error::InvalidArgument("tolerances must be > 0".into()));
        }
        Ok(())
    }
}

/// Per-iteration record of an EM run.
#[derive(Debug, Clone, Default)]
pub struct FitReport {
    /// Total data log-likelihood before each M-step.
    pub log_likelihoods: Vec<f64>,
    /// (iteration, component) pairs where a starved component was reseeded.
    pub reinit_events: Vec<(usize, usize)>,
    /// Sample indices whose posterior underflowed to a uniform row.
    pub underflow_rows: Vec<usize>,
    pub converged: bool,
}

impl FitReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,log_likelihood\n");
        for (i, ll) in self.log_likelihoods.iter().enumerate() {
            out.push_str(&format!("{i},{ll}\n"));
        }
        out
    }
}

/// Posterior component probabilities for a batch of observations, one row per
/// observation; every row is nonnegative and sums to one.
#[derive(Debug, Clone)]
pub struct Responsibilities {
    values: DMatrix<f64>,
    underflow_rows: Vec<usize>,
}

impl Responsibilities {
    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn row(&self, t: usize) -> Vec<f64> {
        self.values.row(t).iter().copied().collect()
    }

    pub fn observation_count(&self) -> usize {
        self.values.nrows()
    }

    pub fn component_count(&self) -> usize {
        self.values.ncols()
    }

    /// Rows that underflowed in every component and were replaced by the
    /// uniform distribution.
    pub fn underflow_rows(&self) -> &[usize] {
        &self.underflow_rows
    }
}

/// log N_C(x; mean, covariance) = -M ln(pi) - ln det(C) - (x-mean)^H C^{-1} (x-mean),
/// evaluated through a Cholesky factorization of the covariance.
pub fn log_density_component(mean: &CVector, covariance: &CMatrix, x: &CVector) -> Result<f64> {
    let m = mean.len();
    if x.len() != m || covariance.nrows() != m || covariance.ncols() != m {
        return Err(Error::DimensionMismatch(
            "mean, covariance and point dimensions must agree".into(),
        ));
    }
    let factor = HermitianFactor::new(covariance, "component covariance")?;
    let centered = x - mean;
    Ok(-(m as f64) * LOG_PI - factor.log_det() - factor.quad_form(&centered))
}

/// Fit a mixture to the dataset with EM.
///
/// The M-step floors every covariance with `covariance_floor` times the
/// average per-dimension sample power, which keeps all factorizations
/// positive definite even when components starve. A component whose total
/// responsibility drops below 1e-12 * T is reseeded from the sample the
/// current mixture explains worst; each such event lands in the report.
pub fn fit(dataset: &ChannelDataset, config: &EmConfig) -> Result<(GmmModel, FitReport)> {
    config.validate()?;
    let t = dataset.len();
    let k = config.component_count;
    if t < k {
        return Err(Error::InvalidArgument(format!(
            "dataset has {t} samples, need at least component count {k}"
        )));
    }
    let x = dataset.as_matrix();
    let m = x.nrows();
    let floor = config.covariance_floor * dataset.mean_power() / m as f64;
    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);

    let mut resp = initial_responsibilities(&x, k, config.init_strategy, &mut rng);
    let mut report = FitReport::default();
    let mut params = m_step(&x, &resp, floor, 0, &mut report)?;

    let mut prev_ll = f64::NEG_INFINITY;
    for iter in 0..config.max_iterations {
        let e = e_step(&x, &params)?;
        resp = e.responsibilities;
        for &row in &e.underflow_rows {
            report.underflow_rows.push(row);
        }
        report.log_likelihoods.push(e.log_likelihood);
        if iter > 0 {
            let rel = (e.log_likelihood - prev_ll) / prev_ll.abs().max(f64::MIN_POSITIVE);
            if rel < config.rel_tolerance {
                report.converged = true;
                break;
            }
        }
        prev_ll = e.log_likelihood;
        params = m_step(&x, &resp, floor, iter + 1, &mut report)?;
    }

    let model = GmmModel::new(params.weights, params.means, params.covariances)?;
    Ok((model, report))
}

/// Posterior responsibilities of every observation under the observation
/// density N_C(y; mu_k, C_k + C_n). Rows whose densities all underflow are
/// set to the uniform distribution and reported.
pub fn responsibilities(
    model: &GmmModel,
    observations: &[CVector],
    observation_noise_cov: &CMatrix,
) -> Result<Responsibilities> {
    let m = model.dim();
    if observation_noise_cov.nrows() != m || observation_noise_cov.ncols() != m {
        return Err(Error::DimensionMismatch(
            "noise covariance dimension does not match the model".into(),
        ));
    }
    if observations.iter().any(|y| y.len() != m) {
        return Err(Error::DimensionMismatch(
            "observation length does not match the model".into(),
        ));
    }
    let t = observations.len();
    let k = model.component_count();

    let per_component: Vec<(f64, Vec<f64>)> = (0..k)
        .into_par_iter()
        .map(|comp| -> Result<(f64, Vec<f64>)> {
            let cov = model.covariance(comp) + observation_noise_cov;
            let factor =
                HermitianFactor::new(&cov, &format!("component {comp} observation covariance"))?;
            let base = model.weight(comp).ln() - (m as f64) * LOG_PI - factor.log_det();
            let quads: Vec<f64> = observations
                .iter()
                .map(|y| {
                    let centered = y - model.mean(comp);
                    factor.quad_form(&centered)
                })
                .collect();
            Ok((base, quads))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut values = DMatrix::zeros(t, k);
    let mut underflow_rows = Vec::new();
    let mut joint = vec![0.0; k];
    for row in 0..t {
        for comp in 0..k {
            let (base, quads) = &per_component[comp];
            joint[comp] = base - quads[row];
        }
        let lse = log_sum_exp(&joint);
        if lse.is_finite() {
            for comp in 0..k {
                values[(row, comp)] = (joint[comp] - lse).exp();
            }
        } else {
            for comp in 0..k {
                values[(row, comp)] = 1.0 / k as f64;
            }
            underflow_rows.push(row);
        }
    }
    Ok(Responsibilities { values, underflow_rows })
}

struct Params {
    weights: Vec<f64>,
    means: Vec<CVector>,
    covariances: Vec<CMatrix>,
}

struct EStep {
    responsibilities: DMatrix<f64>,
    log_likelihood: f64,
    underflow_rows: Vec<usize>,
}

fn e_step(x: &CMatrix, params: &Params) -> Result<EStep> {
    let m = x.nrows();
    let t = x.ncols();
    let k = params.weights.len();

    // log p(k) + log N_C(x_t; mu_k, C_k), one vector per component
    let log_joint: Vec<Vec<f64>> = (0..k)
        .into_par_iter()
        .map(|comp| -> Result<Vec<f64>> {
            let factor =
                HermitianFactor::new(&params.covariances[comp], &format!("component {comp}"))?;
            let base = params.weights[comp].max(f64::MIN_POSITIVE).ln()
                - (m as f64) * LOG_PI
                - factor.log_det();
            let mean = &params.means[comp];
            let mut out = vec![0.0; t];
            let mut start = 0;
            while start < t {
                let len = SAMPLE_CHUNK.min(t - start);
                let mut chunk = x.columns(start, len).clone_owned();
                for mut col in chunk.column_iter_mut() {
                    col -= mean;
                }
                factor.half_solve_mat(&mut chunk);
                for (j, col) in chunk.column_iter().enumerate() {
                    out[start + j] = base - col.norm_squared();
                }
                start += len;
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut responsibilities = DMatrix::zeros(t, k);
    let mut log_likelihood = 0.0;
    let mut underflow_rows = Vec::new();
    let mut joint = vec![0.0; k];
    for row in 0..t {
        for comp in 0..k {
            joint[comp] = log_joint[comp][row];
        }
        let lse = log_sum_exp(&joint);
        if lse.is_finite() {
            log_likelihood += lse;
            for comp in 0..k {
                responsibilities[(row, comp)] = (joint[comp] - lse).exp();
            }
        } else {
            for comp in 0..k {
                responsibilities[(row, comp)] = 1.0 / k as f64;
            }
            underflow_rows.push(row);
        }
    }
    Ok(EStep { responsibilities, log_likelihood, underflow_rows })
}

fn m_step(
    x: &CMatrix,
    resp: &DMatrix<f64>,
    floor: f64,
    iteration: usize,
    report: &mut FitReport,
) -> Result<Params> {
    let t = x.ncols();
    let k = resp.ncols();
    let totals: Vec<f64> = (0..k).map(|comp| resp.column(comp).iter().sum()).collect();
    let starving: Vec<usize> =
        (0..k).filter(|&comp| totals[comp] < 1e-12 * t as f64).collect();

    // samples the current mixture explains worst, used to reseed starved
    // components (distinct sample per component)
    let reseed_samples: Vec<usize> = if starving.is_empty() {
        Vec::new()
    } else {
        let mut max_resp: Vec<(f64, usize)> = (0..t)
            .map(|row| {
                let best = resp.row(row).iter().copied().fold(f64::NEG_INFINITY, f64::max);
                (best, row)
            })
            .collect();
        max_resp.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        max_resp.iter().take(starving.len()).map(|&(_, row)| row).collect()
    };
    let global_cov = if starving.is_empty() { None } else { Some(global_covariance(x, floor)) };

    let updated: Vec<(f64, CVector, CMatrix)> = (0..k)
        .into_par_iter()
        .map(|comp| {
            if let Some(pos) = starving.iter().position(|&c| c == comp) {
                let sample = x.column(reseed_samples[pos]).clone_owned();
                (1.0, sample, global_cov.clone().unwrap())
            } else {
                component_moments(x, resp, comp, totals[comp], floor)
            }
        })
        .collect();

    for &comp in &starving {
        report.reinit_events.push((iteration, comp));
    }

    let raw_weights: Vec<f64> = updated.iter().map(|(w, _, _)| *w).collect();
    let total: f64 = raw_weights.iter().sum();
    let weights: Vec<f64> = raw_weights.iter().map(|w| w / total).collect();
    let means: Vec<CVector> = updated.iter().map(|(_, m, _)| m.clone()).collect();
    let covariances: Vec<CMatrix> = updated.into_iter().map(|(_, _, c)| c).collect();
    Ok(Params { weights, means, covariances })
}

/// Responsibility-weighted mean and scatter of one component. Reductions run
/// chunked in index order.
fn component_moments(
    x: &CMatrix,
    resp: &DMatrix<f64>,
    comp: usize,
    total: f64,
    floor: f64,
) -> (f64, CVector, CMatrix) {
    let m = x.nrows();
    let t = x.ncols();
    let r = resp.column(comp);

    let mut mean = CVector::zeros(m);
    for (col, &w) in x.column_iter().zip(r.iter()) {
        mean.axpy(C64::new(w, 0.0), &col.clone_owned(), C64::new(1.0, 0.0));
    }
    mean /= C64::new(total, 0.0);

    let mut cov = CMatrix::zeros(m, m);
    let mut start = 0;
    while start < t {
        let len = SAMPLE_CHUNK.min(t - start);
        let mut chunk = x.columns(start, len).clone_owned();
        for (j, mut col) in chunk.column_iter_mut().enumerate() {
            col -= &mean;
            col *= C64::new(r[start + j].max(0.0).sqrt(), 0.0);
        }
        cov.gemm(C64::new(1.0, 0.0), &chunk, &chunk.adjoint(), C64::new(1.0, 0.0));
        start += len;
    }
    cov /= C64::new(total, 0.0);
    hermitianize(&mut cov);
    let cov = add_scaled_identity(&cov, floor);
    (total / t as f64, mean, cov)
}

fn global_covariance(x: &CMatrix, floor: f64) -> CMatrix {
    let m = x.nrows();
    let t = x.ncols();
    let mut mean = CVector::zeros(m);
    for col in x.column_iter() {
        mean += col;
    }
    mean /= C64::new(t as f64, 0.0);
    let mut cov = CMatrix::zeros(m, m);
    let mut start = 0;
    while start < t {
        let len = SAMPLE_CHUNK.min(t - start);
        let mut chunk = x.columns(start, len).clone_owned();
        for mut col in chunk.column_iter_mut() {
            col -= &mean;
        }
        cov.gemm(C64::new(1.0, 0.0), &chunk, &chunk.adjoint(), C64::new(1.0, 0.0));
        start += len;
    }
    cov /= C64::new(t as f64, 0.0);
    hermitianize(&mut cov);
    add_scaled_identity(&cov, floor)
}

fn initial_responsibilities(
    x: &CMatrix,
    k: usize,
    strategy: InitStrategy,
    rng: &mut ChaCha12Rng,
) -> DMatrix<f64> {
    let t = x.ncols();
    match strategy {
        InitStrategy::KMeansPlusPlus => {
            let assignments = kmeans_assignments(x, k, rng, 10);
            let mut resp = DMatrix::zeros(t, k);
            for (row, &comp) in assignments.iter().enumerate() {
                resp[(row, comp)] = 1.0;
            }
            resp
        }
        InitStrategy::RandomResponsibility => {
            let mut resp = DMatrix::zeros(t, k);
            for row in 0..t {
                let mut total = 0.0;
                for comp in 0..k {
                    let v: f64 = rng.gen::<f64>() + 1e-3;
                    resp[(row, comp)] = v;
                    total += v;
                }
                for comp in 0..k {
                    resp[(row, comp)] /= total;
                }
            }
            resp
        }
    }
}

/// k-means++ seeding followed by a few Lloyd iterations. Distances in the
/// complex space equal distances of the stacked real/imaginary vectors, so no
/// physical restacking is needed. Ties break toward the lower index.
fn kmeans_assignments(
    x: &CMatrix,
    k: usize,
    rng: &mut ChaCha12Rng,
    lloyd_iterations: usize,
) -> Vec<usize> {
    let t = x.ncols();
    let m = x.nrows();

    let mut centers: Vec<CVector> = Vec::with_capacity(k);
    let first = rng.gen_range(0..t);
    centers.push(x.column(first).clone_owned());
    let mut dist2: Vec<f64> =
        (0..t).map(|col| (x.column(col) - &centers[0]).norm_squared()).collect();
    while centers.len() < k {
        let total: f64 = dist2.iter().sum();
        let idx = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = t - 1;
            for (col, &d) in dist2.iter().enumerate() {
                target -= d;
                if target <= 0.0 {
                    chosen = col;
                    break;
                }
            }
            chosen
        } else {
            rng.gen_range(0..t)
        };
        let center = x.column(idx).clone_owned();
        for (col, d) in dist2.iter_mut().enumerate() {
            let nd = (x.column(col) - &center).norm_squared();
            if nd < *d {
                *d = nd;
            }
        }
        centers.push(center);
    }

    let mut assignments = vec![0usize; t];
    for _ in 0..lloyd_iterations {
        let new_assignments: Vec<usize> = (0..t)
            .into_par_iter()
            .map(|col| {
                let point = x.column(col);
                let mut best = 0;
                let mut best_d = f64::INFINITY;
                for (c, center) in centers.iter().enumerate() {
                    let d = (point - center).norm_squared();
                    if d < best_d {
                        best_d = d;
                        best = c;
                    }
                }
                best
            })
            .collect();
        let changed = new_assignments != assignments;
        assignments = new_assignments;
        let mut sums = vec![CVector::zeros(m); k];
        let mut counts = vec![0usize; k];
        for (col, &comp) in assignments.iter().enumerate() {
            sums[comp] += x.column(col);
            counts[comp] += 1;
        }
        for (comp, center) in centers.iter_mut().enumerate() {
            if counts[comp] > 0 {
                *center = &sums[comp] / C64::new(counts[comp] as f64, 0.0);
            }
        }
        if !changed {
            break;
        }
    }
    assignments
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{complex_gaussian_vector, stream_rng};
    use crate::scenarios::{generate_dataset, ArrayGeometry, ClusterScenario};

    fn identity_cov(m: usize) -> CMatrix {
        CMatrix::identity(m, m)
    }

    fn gaussian_dataset(m: usize, t: usize, seed: u64) -> ChannelDataset {
        let mut samples = Vec::with_capacity(t);
        for i in 0..t {
            let mut rng = stream_rng(seed, i as u64);
            samples.push(complex_gaussian_vector(&mut rng, m, 1.0));
        }
        ChannelDataset::new(m, samples, m as f64).unwrap()
    }

    #[test]
    fn scalar_density_values() {
        let mean = CVector::zeros(1);
        let cov = identity_cov(1);
        let at_mean =
            log_density_component(&mean, &cov, &CVector::zeros(1)).unwrap();
        assert!((at_mean - (-LOG_PI)).abs() < 1e-12);

        let x = CVector::from_vec(vec![C64::new(1.0, 0.0)]);
        let off = log_density_component(&mean, &cov, &x).unwrap();
        assert!((off - (-LOG_PI - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn diagonal_density_matches_hand_computation() {
        // M=2, C=diag(2,1), x=(1, 0): -2 ln pi - ln 2 - 0.5
        let mean = CVector::zeros(2);
        let mut cov = identity_cov(2);
        cov[(0, 0)] = C64::new(2.0, 0.0);
        let x = CVector::from_vec(vec![C64::new(1.0, 0.0), C64::new(0.0, 0.0)]);
        let val = log_density_component(&mean, &cov, &x).unwrap();
        let expected = -2.0 * LOG_PI - 2.0f64.ln() - 0.5;
        assert!((val - expected).abs() < 1e-12);
    }

    #[test]
    fn density_matches_dense_inverse_on_random_matrices() {
        for m in [2usize, 8, 32] {
            let mut rng = stream_rng(100 + m as u64, 0);
            let g = crate::linalg::complex_gaussian_matrix(&mut rng, m, m, 1.0);
            let mut cov = &g * g.adjoint() / C64::new(m as f64, 0.0);
            hermitianize(&mut cov);
            let cov = add_scaled_identity(&cov, 0.1);
            let mean = complex_gaussian_vector(&mut rng, m, 1.0);
            let x = complex_gaussian_vector(&mut rng, m, 1.0);

            let fast = log_density_component(&mean, &cov, &x).unwrap();
            // direct dense-inverse evaluation as the oracle
            let inv = cov.clone().try_inverse().unwrap();
            let det = cov.clone().determinant();
            let centered = &x - &mean;
            let quad = (centered.adjoint() * &inv * &centered)[(0, 0)].re;
            let direct = -(m as f64) * LOG_PI - det.re.ln() - quad;
            assert!(
                (fast - direct).abs() < 1e-8 * direct.abs().max(1.0),
                "m={m}: {fast} vs {direct}"
            );
        }
    }

    #[test]
    fn non_pd_covariance_is_a_numerical_error() {
        let mean = CVector::zeros(2);
        let mut cov = identity_cov(2);
        cov[(1, 1)] = C64::new(-1.0, 0.0);
        let err = log_density_component(&mean, &cov, &CVector::zeros(2)).unwrap_err();
        assert!(matches!(err, Error::Numerical(_)));
    }

    #[test]
    fn single_component_fit_is_the_closed_form() {
        let dataset = gaussian_dataset(3, 400, 42);
        let config = EmConfig { component_count: 1, seed: 1, ..Default::default() };
        let (model, report) = fit(&dataset, &config).unwrap();
        assert_eq!(model.component_count(), 1);
        assert!((model.weight(0) - 1.0).abs() < 1e-15);
        assert!(report.converged);

        let x = dataset.as_matrix();
        let mut mean = CVector::zeros(3);
        for col in x.column_iter() {
            mean += col;
        }
        mean /= C64::new(400.0, 0.0);
        assert!((model.mean(0) - &mean).norm() < 1e-10);

        let floor = config.covariance_floor * dataset.mean_power() / 3.0;
        let mut cov = CMatrix::zeros(3, 3);
        for col in x.column_iter() {
            let c = col.clone_owned() - &mean;
            cov += &c * c.adjoint();
        }
        cov /= C64::new(400.0, 0.0);
        hermitianize(&mut cov);
        let cov = add_scaled_identity(&cov, floor);
        assert!((model.covariance(0) - &cov).norm() < 1e-9 * cov.norm());
    }

    #[test]
    fn fit_recovers_two_separated_components() {
        let m = 4;
        let t = 3000;
        let offset = 40.0;
        let mut samples = Vec::with_capacity(t);
        for i in 0..t {
            let mut rng = stream_rng(77, i as u64);
            let mut s = complex_gaussian_vector(&mut rng, m, 1.0);
            let sign = if i % 2 == 0 { offset } else { -offset };
            s[0] += C64::new(sign, 0.0);
            samples.push(s);
        }
        let dataset = ChannelDataset::new(m, samples, m as f64).unwrap();
        let config = EmConfig { component_count: 2, seed: 5, ..Default::default() };
        let (model, report) = fit(&dataset, &config).unwrap();
        assert!(report.converged);

        let mut recovered: Vec<f64> = (0..2).map(|k| model.mean(k)[0].re).collect();
        recovered.sort_by(f64::total_cmp);
        assert!(
            (recovered[0] + offset).abs() < 0.05 * offset,
            "recovered {recovered:?}"
        );
        assert!(
            (recovered[1] - offset).abs() < 0.05 * offset,
            "recovered {recovered:?}"
        );
        for k in 0..2 {
            assert!((model.weight(k) - 0.5).abs() < 0.05);
        }
    }

    #[test]
    fn log_likelihood_is_non_decreasing() {
        for seed in 0..5u64 {
            let geometry = ArrayGeometry {
                vertical_count: 2,
                horizontal_count: 3,
                ..Default::default()
            };
            let dataset =
                generate_dataset(&ClusterScenario::default(), &geometry, 600, 6.0, seed).unwrap();
            let config = EmConfig {
                component_count: 4,
                max_iterations: 60,
                seed,
                ..Default::default()
            };
            let (_, report) = fit(&dataset, &config).unwrap();
            assert!(report.reinit_events.is_empty());
            for pair in report.log_likelihoods.windows(2) {
                let slack = 1e-9 * pair[0].abs().max(1.0);
                assert!(
                    pair[1] >= pair[0] - slack,
                    "seed {seed}: log-likelihood dropped {} -> {}",
                    pair[0],
                    pair[1]
                );
            }
        }
    }

    #[test]
    fn fit_is_deterministic() {
        let dataset = gaussian_dataset(3, 500, 9);
        let config = EmConfig { component_count: 3, max_iterations: 25, seed: 4, ..Default::default() };
        let (a, ra) = fit(&dataset, &config).unwrap();
        let (b, rb) = fit(&dataset, &config).unwrap();
        assert_eq!(a.weights(), b.weights());
        assert_eq!(a.means(), b.means());
        assert_eq!(a.covariances(), b.covariances());
        assert_eq!(ra.log_likelihoods, rb.log_likelihoods);
    }

    #[test]
    fn random_responsibility_init_converges() {
        let dataset = gaussian_dataset(3, 500, 77);
        let config = EmConfig {
            component_count: 3,
            max_iterations: 150,
            rel_tolerance: 1e-4,
            init_strategy: InitStrategy::RandomResponsibility,
            seed: 2,
            ..Default::default()
        };
        let (model, report) = fit(&dataset, &config).unwrap();
        assert!(report.converged);
        let total: f64 = model.weights().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        for pair in report.log_likelihoods.windows(2) {
            assert!(pair[1] >= pair[0] - 1e-9 * pair[0].abs().max(1.0));
        }
    }

    #[test]
    fn starved_component_is_reseeded_and_reported() {
        // 50 identical samples plus one outlier: k-means++ seeds two centers
        // on the duplicate point, so one component starts empty
        let m = 2;
        let a = CVector::from_vec(vec![C64::new(1.0, 0.0), C64::new(0.0, 1.0)]);
        let b = CVector::from_vec(vec![C64::new(-4.0, 0.0), C64::new(0.0, -4.0)]);
        let mut samples = vec![a; 50];
        samples.push(b);
        let dataset = ChannelDataset::new(m, samples, m as f64).unwrap();
        let config = EmConfig { component_count: 3, max_iterations: 10, seed: 1, ..Default::default() };
        let (model, report) = fit(&dataset, &config).unwrap();
        assert!(
            !report.reinit_events.is_empty(),
            "expected at least one reseed event, got {:?}",
            report.reinit_events
        );
        let total: f64 = model.weights().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(report.log_likelihoods.iter().all(|ll| ll.is_finite()));
    }

    #[test]
    fn too_few_samples_is_rejected() {
        let dataset = gaussian_dataset(2, 3, 1);
        let config = EmConfig { component_count: 4, ..Default::default() };
        assert!(matches!(fit(&dataset, &config), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn responsibilities_rows_sum_to_one() {
        let dataset = gaussian_dataset(3, 300, 12);
        let config = EmConfig { component_count: 3, max_iterations: 20, seed: 2, ..Default::default() };
        let (model, _) = fit(&dataset, &config).unwrap();
        let mut rng = stream_rng(55, 0);
        let obs: Vec<CVector> =
            (0..40).map(|_| complex_gaussian_vector(&mut rng, 3, 2.0)).collect();
        let noise = CMatrix::identity(3, 3) * C64::new(0.5, 0.0);
        let resp = responsibilities(&model, &obs, &noise).unwrap();
        assert!(resp.underflow_rows().is_empty());
        for row in 0..resp.observation_count() {
            let sum: f64 = resp.row(row).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn responsibilities_single_component_is_one() {
        let model = GmmModel::new(
            vec![1.0],
            vec![CVector::zeros(2)],
            vec![identity_cov(2)],
        )
        .unwrap();
        let obs = vec![CVector::from_vec(vec![C64::new(3.0, 1.0), C64::new(0.0, -2.0)])];
        let resp = responsibilities(&model, &obs, &identity_cov(2)).unwrap();
        assert_eq!(resp.row(0), vec![1.0]);
    }

    #[test]
    fn responsibilities_symmetric_components_split_evenly() {
        let mu = CVector::from_vec(vec![C64::new(2.0, 0.0)]);
        let model = GmmModel::new(
            vec![0.5, 0.5],
            vec![mu.clone(), -mu],
            vec![identity_cov(1), identity_cov(1)],
        )
        .unwrap();
        let resp = responsibilities(&model, &[CVector::zeros(1)], &identity_cov(1)).unwrap();
        let row = resp.row(0);
        assert!((row[0] - 0.5).abs() < 1e-12 && (row[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn responsibilities_identical_components_reproduce_weights() {
        let model = GmmModel::new(
            vec![0.9, 0.1],
            vec![CVector::zeros(1); 2],
            vec![identity_cov(1); 2],
        )
        .unwrap();
        let obs = vec![CVector::from_vec(vec![C64::new(0.7, -1.3)])];
        let resp = responsibilities(&model, &obs, &identity_cov(1)).unwrap();
        let row = resp.row(0);
        assert!((row[0] - 0.9).abs() < 1e-12 && (row[1] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn mixture_density_is_permutation_invariant() {
        let dataset = gaussian_dataset(2, 200, 31);
        let config = EmConfig { component_count: 3, max_iterations: 15, seed: 3, ..Default::default() };
        let (model, _) = fit(&dataset, &config).unwrap();
        let perm = [2usize, 0, 1];
        let permuted = GmmModel::new(
            perm.iter().map(|&k| model.weight(k)).collect(),
            perm.iter().map(|&k| model.mean(k).clone()).collect(),
            perm.iter().map(|&k| model.covariance(k).clone()).collect(),
        )
        .unwrap();
        let mut rng = stream_rng(13, 0);
        for _ in 0..10 {
            let x = complex_gaussian_vector(&mut rng, 2, 1.5);
            let a = model.log_mixture_density(&x, None).unwrap();
            let b = permuted.log_mixture_density(&x, None).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn model_round_trip_through_gmm1() {
        let dataset = gaussian_dataset(3, 200, 8);
        let config = EmConfig { component_count: 2, max_iterations: 10, seed: 6, ..Default::default() };
        let (model, _) = fit(&dataset, &config).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.gmm");
        model.save(&path).unwrap();
        let back = GmmModel::load(&path).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn model_load_rejects_bad_magic_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.gmm");
        std::fs::write(&path, b"XXXX").unwrap();
        assert!(matches!(GmmModel::load(&path), Err(Error::Format(_))));

        let model = GmmModel::new(
            vec![1.0],
            vec![CVector::zeros(2)],
            vec![identity_cov(2)],
        )
        .unwrap();
        let good = dir.path().join("good.gmm");
        model.save(&good).unwrap();
        let bytes = std::fs::read(&good).unwrap();
        std::fs::write(&good, &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(GmmModel::load(&good), Err(Error::Truncated(_))));
    }
}
