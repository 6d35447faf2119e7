//! The eight channel estimators behind one interface.
//!
//! Pilot-only estimators: LS, sample-covariance LMMSE (`scov`) and the GMM
//! conditional-mean estimator (`gmm`). Data-aided estimators consume a blind
//! subspace estimate: ML projection (`ml`), subspace/projected variants of
//! the sample-covariance filter (`sub_scov`, `proj_scov`) and of the GMM
//! estimator (`sub_gmm`, `proj_gmm`).
//!
//! Filter precomputation follows the complexity structure of the estimators:
//! `gmm` and `proj_gmm` reuse per-component filters keyed by the (effective)
//! noise variance, while `sub_gmm` must rebuild its J x J systems for every
//! new subspace. Every inverse is realized as a Hermitian factorization plus
//! solves.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::GmmModel;
use crate::linalg::{hermitianize, log_sum_exp, C64, CMatrix, CVector, HermitianFactor};
use crate::subspace::SubspaceBasis;

const LOG_PI: f64 = 1.144_729_885_849_400_2;

/// Everything an estimator may consume for one user in one coherence block.
#[derive(Clone, Copy)]
pub struct EstimatorInput<'a> {
    /// Decorrelated pilot observation y_p = h + n.
    pub pilot_observation: &'a CVector,
    /// Noise variance sigma^2 (SNR = 1/sigma^2).
    pub noise_variance: f64,
    /// Estimated channel subspace; present iff the estimator is data-aided.
    pub subspace: Option<&'a SubspaceBasis>,
    /// Number of users J, which is also the subspace dimension.
    pub user_count: usize,
}

impl<'a> EstimatorInput<'a> {
    pub fn validate(&self) -> Result<()> {
        if self.noise_variance <= 0.0 {
            return Err(Error::InvalidArgument("noise variance must be > 0".into()));
        }
        if self.user_count == 0 {
            return Err(Error::InvalidArgument("user count must be >= 1".into()));
        }
        if let Some(basis) = self.subspace {
            if basis.antenna_count() != self.pilot_observation.len() {
                return Err(Error::DimensionMismatch(
                    "subspace antenna count does not match the observation".into(),
                ));
            }
            if basis.dimension() != self.user_count {
                return Err(Error::DimensionMismatch(format!(
                    "subspace dimension {} does not match user count {}",
                    basis.dimension(),
                    self.user_count
                )));
            }
        }
        Ok(())
    }

    fn require_subspace(&self, name: &str) -> Result<&'a SubspaceBasis> {
        self.subspace.ok_or_else(|| {
            Error::InvalidArgument(format!("estimator {name} requires a subspace estimate"))
        })
    }
}

/// A channel estimate plus, for the GMM variants, the responsibilities that
/// weighted the per-component filters.
#[derive(Debug, Clone)]
pub struct ChannelEstimate {
    pub estimate: CVector,
    pub responsibilities: Option<Vec<f64>>,
}

impl ChannelEstimate {
    fn plain(estimate: CVector) -> Self {
        Self { estimate, responsibilities: None }
    }
}

/// Fixed registry of estimator names used by sweeps, the CLI and result CSVs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Ls,
    Ml,
    Scov,
    SubScov,
    ProjScov,
    Gmm,
    SubGmm,
    ProjGmm,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 8] = [
        EstimatorKind::Ls,
        EstimatorKind::Ml,
        EstimatorKind::Scov,
        EstimatorKind::SubScov,
        EstimatorKind::ProjScov,
        EstimatorKind::Gmm,
        EstimatorKind::SubGmm,
        EstimatorKind::ProjGmm,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            EstimatorKind::Ls => "ls",
            EstimatorKind::Ml => "ml",
            EstimatorKind::Scov => "scov",
            EstimatorKind::SubScov => "sub_scov",
            EstimatorKind::ProjScov => "proj_scov",
            EstimatorKind::Gmm => "gmm",
            EstimatorKind::SubGmm => "sub_gmm",
            EstimatorKind::ProjGmm => "proj_gmm",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|k| k.name() == name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown estimator '{name}'")))
    }

    /// Whether the estimator consumes the blind subspace estimate.
    pub fn is_data_aided(&self) -> bool {
        matches!(
            self,
            EstimatorKind::Ml
                | EstimatorKind::SubScov
                | EstimatorKind::ProjScov
                | EstimatorKind::SubGmm
                | EstimatorKind::ProjGmm
        )
    }
}

impl std::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Least squares: the pilot observation itself.
pub fn estimate_ls(input: &EstimatorInput) -> Result<ChannelEstimate> {
    input.validate()?;
    Ok(ChannelEstimate::plain(input.pilot_observation.clone()))
}

/// Subspace ML: project the pilot observation onto the estimated subspace.
pub fn estimate_ml(input: &EstimatorInput) -> Result<ChannelEstimate> {
    input.validate()?;
    let basis = input.require_subspace("ml")?;
    let v = basis.basis();
    let coeff = v.adjoint() * input.pilot_observation;
    Ok(ChannelEstimate::plain(v * coeff))
}

/// LMMSE from a sample covariance: C (C + sigma^2 I)^{-1} y_p.
pub fn estimate_scov(input: &EstimatorInput, covariance: &CMatrix) -> Result<ChannelEstimate> {
    input.validate()?;
    let m = input.pilot_observation.len();
    if covariance.nrows() != m || covariance.ncols() != m {
        return Err(Error::DimensionMismatch(
            "covariance dimension does not match the observation".into(),
        ));
    }
    let shifted = crate::linalg::add_scaled_identity(covariance, input.noise_variance);
    let factor = HermitianFactor::new(&shifted, "scov filter")?;
    let solved = factor.solve_vec(input.pilot_observation);
    Ok(ChannelEstimate::plain(covariance * solved))
}

/// Subspace-adjusted sample-covariance estimator:
/// V V^H C V (V^H C V + sigma^2 I_J)^{-1} V^H y_p.
pub fn estimate_sub_scov(input: &EstimatorInput, covariance: &CMatrix) -> Result<ChannelEstimate> {
    input.validate()?;
    let basis = input.require_subspace("sub_scov")?;
    let v = basis.basis();
    let mut projected_cov = v.adjoint() * covariance * v;
    hermitianize(&mut projected_cov);
    let shifted = crate::linalg::add_scaled_identity(&projected_cov, input.noise_variance);
    let factor = HermitianFactor::new(&shifted, "sub_scov filter")?;
    let reduced = v.adjoint() * input.pilot_observation;
    let solved = factor.solve_vec(&reduced);
    Ok(ChannelEstimate::plain(v * (projected_cov * solved)))
}

/// Projected sample-covariance estimator:
/// C (C + sigma^2 (J/M) I)^{-1} P y_p.
pub fn estimate_proj_scov(input: &EstimatorInput, covariance: &CMatrix) -> Result<ChannelEstimate> {
    input.validate()?;
    let basis = input.require_subspace("proj_scov")?;
    let m = input.pilot_observation.len();
    let scaled_noise = input.noise_variance * input.user_count as f64 / m as f64;
    let v = basis.basis();
    let projected = v * (v.adjoint() * input.pilot_observation);
    let shifted = crate::linalg::add_scaled_identity(covariance, scaled_noise);
    let factor = HermitianFactor::new(&shifted, "proj_scov filter")?;
    let solved = factor.solve_vec(&projected);
    Ok(ChannelEstimate::plain(covariance * solved))
}

/// Per-component LMMSE filters W_k = C_k (C_k + sigma^2 I)^{-1} and biases
/// b_k = mu_k - W_k mu_k, together with the factorizations needed to evaluate
/// responsibilities at the same noise level. Rebuilt whenever the (effective)
/// noise variance changes; applying them costs K matrix-vector products.
pub struct PrecomputedGmmFilters {
    noise_variance: f64,
    gains: Vec<CMatrix>,
    biases: Vec<CVector>,
    factors: Vec<HermitianFactor>,
    log_norm: Vec<f64>,
}

impl PrecomputedGmmFilters {
    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    pub fn component_count(&self) -> usize {
        self.gains.len()
    }

    pub fn gain(&self, k: usize) -> &CMatrix {
        &self.gains[k]
    }

    pub fn bias(&self, k: usize) -> &CVector {
        &self.biases[k]
    }

    fn check_fresh(&self, expected_noise: f64, context: &str) -> Result<()> {
        let scale = self.noise_variance.abs().max(expected_noise.abs());
        if (self.noise_variance - expected_noise).abs() > 1e-12 * scale {
            return Err(Error::InvalidState(format!(
                "{context}: filters built for noise variance {} but input needs {}",
                self.noise_variance, expected_noise
            )));
        }
        Ok(())
    }
}

/// Build the per-component filters for a given (effective) noise variance.
pub fn build_gmm_filters(model: &GmmModel, noise_variance: f64) -> Result<PrecomputedGmmFilters> {
    if noise_variance <= 0.0 {
        return Err(Error::InvalidArgument("effective noise variance must be > 0".into()));
    }
    let k = model.component_count();
    let m = model.dim();
    let mut gains = Vec::with_capacity(k);
    let mut biases = Vec::with_capacity(k);
    let mut factors = Vec::with_capacity(k);
    let mut log_norm = Vec::with_capacity(k);
    for comp in 0..k {
        let cov = model.covariance(comp);
        let shifted = crate::linalg::add_scaled_identity(cov, noise_variance);
        let factor = HermitianFactor::new(&shifted, &format!("gmm filter component {comp}"))?;
        // W = C (C + s I)^{-1} = ((C + s I)^{-1} C)^H; both factors are
        // Hermitian and commute, so the adjoint restores the left-multiplied
        // form without an explicit inverse.
        let gain = factor.solve_mat(cov).adjoint();
        let mean = model.mean(comp);
        let bias = mean - &gain * mean;
        log_norm.push(model.weight(comp).ln() - (m as f64) * LOG_PI - factor.log_det());
        gains.push(gain);
        biases.push(bias);
        factors.push(factor);
    }
    Ok(PrecomputedGmmFilters { noise_variance, gains, biases, factors, log_norm })
}

/// Responsibilities of `observation` under the observation densities the
/// filters were built for: softmax_k of
/// ln p(k) + ln N_C(observation; mu_k, C_k + noise I).
fn filter_responsibilities(
    model: &GmmModel,
    filters: &PrecomputedGmmFilters,
    observation: &CVector,
) -> Vec<f64> {
    let k = model.component_count();
    let mut log_joint = Vec::with_capacity(k);
    for comp in 0..k {
        let centered = observation - model.mean(comp);
        log_joint.push(filters.log_norm[comp] - filters.factors[comp].quad_form(&centered));
    }
    softmax_from_log(&log_joint)
}

fn softmax_from_log(log_joint: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(log_joint);
    if lse.is_finite() {
        log_joint.iter().map(|l| (l - lse).exp()).collect()
    } else {
        vec![1.0 / log_joint.len() as f64; log_joint.len()]
    }
}

fn combine_components(estimates: &[CVector], responsibilities: &[f64]) -> CVector {
    let mut out = CVector::zeros(estimates[0].len());
    for (est, &r) in estimates.iter().zip(responsibilities) {
        out.axpy(C64::new(r, 0.0), est, C64::new(1.0, 0.0));
    }
    out
}

/// Per-component estimates W_k y + b_k of the standalone GMM estimator.
pub fn gmm_component_estimates(
    filters: &PrecomputedGmmFilters,
    observation: &CVector,
) -> Vec<CVector> {
    (0..filters.component_count())
        .map(|comp| &filters.gains[comp] * observation + &filters.biases[comp])
        .collect()
}

/// Standalone GMM conditional-mean estimator with precomputed filters.
pub fn estimate_gmm(
    input: &EstimatorInput,
    model: &GmmModel,
    filters: &PrecomputedGmmFilters,
) -> Result<ChannelEstimate> {
    input.validate()?;
    check_model_dims(model, input)?;
    filters.check_fresh(input.noise_variance, "gmm")?;
    let responsibilities = filter_responsibilities(model, filters, input.pilot_observation);
    let components = gmm_component_estimates(filters, input.pilot_observation);
    let estimate = combine_components(&components, &responsibilities);
    Ok(ChannelEstimate { estimate, responsibilities: Some(responsibilities) })
}

/// Standalone GMM estimator without precomputed filters: every call factors
/// C_k + sigma^2 I afresh. This is the independent route used to validate the
/// precomputed path; sweeps never call it.
pub fn estimate_gmm_direct(input: &EstimatorInput, model: &GmmModel) -> Result<ChannelEstimate> {
    input.validate()?;
    check_model_dims(model, input)?;
    let y = input.pilot_observation;
    let m = model.dim();
    let k = model.component_count();
    let mut log_joint = Vec::with_capacity(k);
    let mut components = Vec::with_capacity(k);
    for comp in 0..k {
        let cov = model.covariance(comp);
        let shifted = crate::linalg::add_scaled_identity(cov, input.noise_variance);
        let factor = HermitianFactor::new(&shifted, &format!("gmm component {comp}"))?;
        let centered = y - model.mean(comp);
        log_joint.push(
            model.weight(comp).ln() - (m as f64) * LOG_PI - factor.log_det()
                - factor.quad_form(&centered),
        );
        components.push(cov * factor.solve_vec(&centered) + model.mean(comp));
    }
    let responsibilities = softmax_from_log(&log_joint);
    let estimate = combine_components(&components, &responsibilities);
    Ok(ChannelEstimate { estimate, responsibilities: Some(responsibilities) })
}

/// Subspace GMM estimator. The mixture is projected into the J-dimensional
/// subspace (means V^H mu_k, covariances V^H C_k V), the LMMSE runs there and
/// the estimate is lifted back with V. The projected filters depend on V, so
/// nothing can be precomputed across coherence blocks.
pub fn estimate_sub_gmm(input: &EstimatorInput, model: &GmmModel) -> Result<ChannelEstimate> {
    input.validate()?;
    check_model_dims(model, input)?;
    let basis = input.require_subspace("sub_gmm")?;
    let v = basis.basis();
    let j = basis.dimension();
    let reduced = v.adjoint() * input.pilot_observation;
    let k = model.component_count();
    let mut log_joint = Vec::with_capacity(k);
    let mut reduced_components = Vec::with_capacity(k);
    for comp in 0..k {
        let mean = v.adjoint() * model.mean(comp);
        let mut cov = v.adjoint() * model.covariance(comp) * v;
        hermitianize(&mut cov);
        let shifted = crate::linalg::add_scaled_identity(&cov, input.noise_variance);
        let factor = HermitianFactor::new(&shifted, &format!("sub_gmm component {comp}"))?;
        let centered = &reduced - &mean;
        // responsibility density evaluated at the projected observation
        log_joint.push(
            model.weight(comp).ln() - (j as f64) * LOG_PI - factor.log_det()
                - factor.quad_form(&centered),
        );
        reduced_components.push(&cov * factor.solve_vec(&centered) + mean);
    }
    let responsibilities = softmax_from_log(&log_joint);
    let reduced_estimate = combine_components(&reduced_components, &responsibilities);
    Ok(ChannelEstimate { estimate: v * reduced_estimate, responsibilities: Some(responsibilities) })
}

/// Per-component estimates of the subspace GMM estimator, lifted back to the
/// antenna domain: V [ V^H C_k V (V^H C_k V + s I)^{-1} (V^H y - V^H mu_k) + V^H mu_k ].
pub fn sub_gmm_component_estimates(
    input: &EstimatorInput,
    model: &GmmModel,
) -> Result<Vec<CVector>> {
    input.validate()?;
    let basis = input.require_subspace("sub_gmm")?;
    let v = basis.basis();
    let reduced = v.adjoint() * input.pilot_observation;
    let mut out = Vec::with_capacity(model.component_count());
    for comp in 0..model.component_count() {
        let mean = v.adjoint() * model.mean(comp);
        let mut cov = v.adjoint() * model.covariance(comp) * v;
        hermitianize(&mut cov);
        let shifted = crate::linalg::add_scaled_identity(&cov, input.noise_variance);
        let factor = HermitianFactor::new(&shifted, &format!("sub_gmm component {comp}"))?;
        let centered = &reduced - &mean;
        out.push(v * (&cov * factor.solve_vec(&centered) + mean));
    }
    Ok(out)
}

/// Projected GMM estimator: project the pilot observation, then run the
/// standalone combination with filters built for the Haar-approximated noise
/// covariance sigma^2 (J/M) I. Those filters depend only on (sigma^2, J), not
/// on V, so they are precomputable across coherence blocks.
pub fn estimate_proj_gmm(
    input: &EstimatorInput,
    model: &GmmModel,
    filters: &PrecomputedGmmFilters,
) -> Result<ChannelEstimate> {
    input.validate()?;
    check_model_dims(model, input)?;
    let basis = input.require_subspace("proj_gmm")?;
    let m = model.dim();
    let effective = input.noise_variance * input.user_count as f64 / m as f64;
    filters.check_fresh(effective, "proj_gmm")?;
    let v = basis.basis();
    let projected = v * (v.adjoint() * input.pilot_observation);
    let responsibilities = filter_responsibilities(model, filters, &projected);
    let components = gmm_component_estimates(filters, &projected);
    let estimate = combine_components(&components, &responsibilities);
    Ok(ChannelEstimate { estimate, responsibilities: Some(responsibilities) })
}

fn check_model_dims(model: &GmmModel, input: &EstimatorInput) -> Result<()> {
    if model.dim() != input.pilot_observation.len() {
        return Err(Error::DimensionMismatch(format!(
            "model dimension {} does not match observation length {}",
            model.dim(),
            input.pilot_observation.len()
        )));
    }
    Ok(())
}

/// Shared, read-only bundle of everything the registry dispatch needs.
pub struct EstimatorResources<'a> {
    /// Training sample covariance C = (1/|H|) sum h h^H.
    pub sample_covariance: &'a CMatrix,
    pub model: &'a GmmModel,
    /// Filters built for the plain noise variance sigma^2.
    pub filters: &'a PrecomputedGmmFilters,
    /// Filters built for the scaled noise variance sigma^2 J/M.
    pub projected_filters: &'a PrecomputedGmmFilters,
}

/// Dispatch one estimator by registry name.
pub fn run_estimator(
    kind: EstimatorKind,
    input: &EstimatorInput,
    resources: &EstimatorResources,
) -> Result<ChannelEstimate> {
    match kind {
        EstimatorKind::Ls => estimate_ls(input),
        EstimatorKind::Ml => estimate_ml(input),
        EstimatorKind::Scov => estimate_scov(input, resources.sample_covariance),
        EstimatorKind::SubScov => estimate_sub_scov(input, resources.sample_covariance),
        EstimatorKind::ProjScov => estimate_proj_scov(input, resources.sample_covariance),
        EstimatorKind::Gmm => estimate_gmm(input, resources.model, resources.filters),
        EstimatorKind::SubGmm => estimate_sub_gmm(input, resources.model),
        EstimatorKind::ProjGmm => {
            estimate_proj_gmm(input, resources.model, resources.projected_filters)
        }
    }
}
