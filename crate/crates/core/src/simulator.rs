//! Multi-user uplink coherence blocks and Monte-Carlo NMSE sweeps.
//!
//! One block holds the true channels of J users, their decorrelated pilot
//! observations and N data observations. Sweeps draw blocks from a test
//! dataset, estimate the blind subspace once per block, run the enabled
//! estimators on every user and aggregate NMSE per estimator.
//!
//! Every trial owns a random stream split from the sweep seed and all
//! reductions run in trial order, so parallel and serial execution produce
//! identical results.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{
    build_gmm_filters, estimate_gmm, estimate_proj_gmm, estimate_sub_gmm, run_estimator,
    EstimatorInput, EstimatorKind, EstimatorResources,
};
use crate::gmm::GmmModel;
use crate::linalg::{
    complex_gaussian_matrix, complex_gaussian_vector, orthonormalize, standard_complex,
    stream_rng, C64, CMatrix, CVector,
};
use crate::scenarios::ChannelDataset;
use crate::subspace::{estimate_subspace, sample_covariance, SubspaceBasis};

/// Pilot convention for a block.
///
/// `Identity` simulates the post-decorrelation model Y_p = H + N directly,
/// keeping SNR = 1/sigma^2 exact. `Dft` transmits a unitary DFT pilot matrix
/// and decorrelates explicitly; both paths are statistically identical.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PilotType {
    Identity,
    Dft,
}

/// System parameters of one simulated cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SystemConfig {
    pub antennas: usize,
    pub users: usize,
    pub snapshots: usize,
    pub snr_db: f64,
    /// Per-user symbol powers P_j; `None` means the uniform 1/J split.
    pub symbol_powers: Option<Vec<f64>>,
    pub pilot_type: PilotType,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            antennas: 64,
            users: 8,
            snapshots: 200,
            snr_db: 0.0,
            symbol_powers: None,
            pilot_type: PilotType::Identity,
        }
    }
}

impl SystemConfig {
    pub fn noise_variance(&self) -> f64 {
        10f64.powf(-self.snr_db / 10.0)
    }

    /// Resolved per-user symbol powers, summing to one.
    pub fn powers(&self) -> Vec<f64> {
        match &self.symbol_powers {
            Some(p) => p.clone(),
            None => vec![1.0 / self.users as f64; self.users],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.users == 0 || self.users > self.antennas {
            return Err(Error::InvalidArgument(format!(
                "user count {} must satisfy 1 <= J <= M = {}",
                self.users, self.antennas
            )));
        }
        if self.snapshots == 0 {
            return Err(Error::InvalidArgument("snapshot count must be >= 1".into()));
        }
        if self.snr_db.is_nan() {
            return Err(Error::InvalidArgument("SNR must not be NaN".into()));
        }
        if let Some(p) = &self.symbol_powers {
            if p.len() != self.users {
                return Err(Error::InvalidArgument(
                    "symbol power list length must equal the user count".into(),
                ));
            }
            if p.iter().any(|&v| v <= 0.0) {
                return Err(Error::InvalidArgument("symbol powers must be > 0".into()));
            }
            let total: f64 = p.iter().sum();
            if (total - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidArgument(format!(
                    "symbol powers sum to {total}, expected 1"
                )));
            }
        }
        Ok(())
    }
}

/// One coherence block: true channels, decorrelated pilot observations and
/// data observations, all sharing one noise variance.
#[derive(Debug, Clone)]
pub struct ScenarioRealization {
    pub true_channels: CMatrix,
    pub pilot_observations: CMatrix,
    pub data_observations: CMatrix,
    pub noise_variance: f64,
}

/// Unitary DFT pilot matrix (J x J); P P^H = I, so decorrelation preserves
/// the per-entry noise variance and the per-symbol pilot power is 1/J.
fn dft_pilots(users: usize) -> CMatrix {
    let j = users as f64;
    let scale = 1.0 / j.sqrt();
    CMatrix::from_fn(users, users, |row, col| {
        let phase = -std::f64::consts::TAU * (row * col) as f64 / j;
        C64::new(phase.cos() * scale, phase.sin() * scale)
    })
}

/// Simulate one coherence block for the given true channels (M x J columns).
pub fn simulate_block<R: Rng + ?Sized>(
    config: &SystemConfig,
    channels: &CMatrix,
    rng: &mut R,
) -> Result<ScenarioRealization> {
    config.validate()?;
    let m = config.antennas;
    let j = config.users;
    let n = config.snapshots;
    if channels.nrows() != m || channels.ncols() != j {
        return Err(Error::DimensionMismatch(format!(
            "channel matrix is {}x{}, config expects {m}x{j}",
            channels.nrows(),
            channels.ncols()
        )));
    }
    let noise_variance = config.noise_variance();
    let powers = config.powers();

    let mut symbols = DMatrix::zeros(j, n);
    for col in 0..n {
        for row in 0..j {
            symbols[(row, col)] = standard_complex(rng) * powers[row].sqrt();
        }
    }
    let data_observations = channels * symbols + complex_gaussian_matrix(rng, m, n, noise_variance);

    let pilot_observations = match config.pilot_type {
        PilotType::Identity => channels + complex_gaussian_matrix(rng, m, j, noise_variance),
        PilotType::Dft => {
            let pilots = dft_pilots(j);
            let received = channels * &pilots + complex_gaussian_matrix(rng, m, j, noise_variance);
            received * pilots.adjoint()
        }
    };

    Ok(ScenarioRealization {
        true_channels: channels.clone(),
        pilot_observations,
        data_observations,
        noise_variance,
    })
}

/// NMSE = (1/(M T)) sum_t ||h_t - hhat_t||^2.
pub fn nmse(truths: &[CVector], estimates: &[CVector], antennas: usize) -> Result<f64> {
    if truths.len() != estimates.len() {
        return Err(Error::InvalidArgument(format!(
            "{} truths vs {} estimates",
            truths.len(),
            estimates.len()
        )));
    }
    if truths.is_empty() {
        return Err(Error::InvalidArgument("NMSE needs at least one pair".into()));
    }
    let mut total = 0.0;
    for (h, est) in truths.iter().zip(estimates) {
        if h.len() != antennas || est.len() != antennas {
            return Err(Error::DimensionMismatch(
                "NMSE inputs must all have the antenna count as length".into(),
            ));
        }
        total += (h - est).norm_squared();
    }
    Ok(total / (antennas as f64 * truths.len() as f64))
}

/// Which system parameter a sweep walks over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Snr,
    Snapshots,
    Users,
}

impl std::fmt::Display for SweepParam {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SweepParam::Snr => "snr",
            SweepParam::Snapshots => "snapshots",
            SweepParam::Users => "users",
        })
    }
}

/// Sweep specification: the swept parameter and its grid, the estimators to
/// run, the Monte-Carlo trial count and the master seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub param: SweepParam,
    pub grid: Vec<f64>,
    pub estimators: Vec<EstimatorKind>,
    pub trials: usize,
    pub include_pilots: bool,
    pub seed: u64,
}

impl SweepSpec {
    fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::InvalidArgument("sweep grid must not be empty".into()));
        }
        if self.estimators.is_empty() {
            return Err(Error::InvalidArgument("sweep needs at least one estimator".into()));
        }
        if self.trials == 0 {
            return Err(Error::InvalidArgument("trial count must be >= 1".into()));
        }
        if matches!(self.param, SweepParam::Snapshots | SweepParam::Users) {
            for &g in &self.grid {
                if g < 1.0 || g.fract() != 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "{} grid values must be positive integers, got {g}",
                        self.param
                    )));
                }
            }
        }
        Ok(())
    }

    fn apply(&self, template: &SystemConfig, value: f64) -> SystemConfig {
        let mut cfg = template.clone();
        match self.param {
            SweepParam::Snr => cfg.snr_db = value,
            SweepParam::Snapshots => cfg.snapshots = value as usize,
            SweepParam::Users => {
                cfg.users = value as usize;
                // explicit power lists are tied to the template's J
                cfg.symbol_powers = None;
            }
        }
        cfg
    }

    fn format_grid_value(&self, value: f64) -> String {
        match self.param {
            SweepParam::Snr => format!("{value}"),
            SweepParam::Snapshots | SweepParam::Users => format!("{}", value as u64),
        }
    }
}

/// Per-estimator NMSE along a sweep grid.
#[derive(Debug, Clone)]
pub struct SweepResult {
    pub param: SweepParam,
    pub grid: Vec<f64>,
    /// NMSE curves in the order the estimators were requested.
    pub nmse: Vec<(EstimatorKind, Vec<f64>)>,
    pub trials: usize,
    pub seed: u64,
    pub config: SystemConfig,
    grid_labels: Vec<String>,
}

impl SweepResult {
    /// CSV layout: `param,estimator,nmse,trials,seed`, one row per
    /// (grid point, estimator).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("param,estimator,nmse,trials,seed\n");
        for (gi, label) in self.grid_labels.iter().enumerate() {
            for (kind, values) in &self.nmse {
                out.push_str(&format!(
                    "{label},{kind},{},{},{}\n",
                    values[gi], self.trials, self.seed
                ));
            }
        }
        out
    }

    pub fn curve(&self, kind: EstimatorKind) -> Option<&[f64]> {
        self.nmse.iter().find(|(k, _)| *k == kind).map(|(_, v)| v.as_slice())
    }
}

/// Run a Monte-Carlo NMSE sweep.
///
/// Per grid point and trial: draw J distinct users from the test set,
/// simulate a block, estimate the subspace once, then run every enabled
/// estimator on every user. The sample covariance for the `scov` family comes
/// from the training dataset; the GMM filters are rebuilt per grid point.
pub fn run_sweep(
    template: &SystemConfig,
    spec: &SweepSpec,
    train: &ChannelDataset,
    test: &ChannelDataset,
    model: &GmmModel,
) -> Result<SweepResult> {
    spec.validate()?;
    template.validate()?;
    if train.antennas() != template.antennas || test.antennas() != template.antennas {
        return Err(Error::DimensionMismatch(
            "dataset antenna count does not match the system config".into(),
        ));
    }
    if model.dim() != template.antennas {
        return Err(Error::DimensionMismatch(
            "model dimension does not match the system config".into(),
        ));
    }
    let scov = sample_covariance(&train.as_matrix())?;
    let needs_subspace = spec.estimators.iter().any(|e| e.is_data_aided());

    let mut curves: Vec<Vec<f64>> = vec![Vec::with_capacity(spec.grid.len()); spec.estimators.len()];
    let mut grid_labels = Vec::with_capacity(spec.grid.len());
    for (grid_index, &value) in spec.grid.iter().enumerate() {
        let cfg = spec.apply(template, value);
        cfg.validate()?;
        grid_labels.push(spec.format_grid_value(value));
        let j = cfg.users;
        if test.len() < j {
            return Err(Error::InvalidArgument(format!(
                "test set has {} samples but a block needs {j} distinct users",
                test.len()
            )));
        }
        let sigma2 = cfg.noise_variance();
        let filters = build_gmm_filters(model, sigma2)?;
        let projected_filters =
            build_gmm_filters(model, sigma2 * j as f64 / cfg.antennas as f64)?;
        let resources = EstimatorResources {
            sample_covariance: &scov,
            model,
            filters: &filters,
            projected_filters: &projected_filters,
        };

        let per_trial: Vec<Result<Vec<f64>>> = (0..spec.trials)
            .into_par_iter()
            .map(|trial| {
                let stream = ((grid_index as u64) << 32) | trial as u64;
                let mut rng = stream_rng(spec.seed, stream);
                let indices = sample_indices(&mut rng, test.len(), j);
                let mut channels = CMatrix::zeros(cfg.antennas, j);
                for (col, idx) in indices.iter().enumerate() {
                    channels.set_column(col, test.sample(idx));
                }
                let block = simulate_block(&cfg, &channels, &mut rng)?;
                let basis: Option<SubspaceBasis> = if needs_subspace {
                    Some(estimate_subspace(
                        &block.pilot_observations,
                        &block.data_observations,
                        j,
                        spec.include_pilots,
                    )?)
                } else {
                    None
                };
                let mut errors = vec![0.0; spec.estimators.len()];
                for user in 0..j {
                    let truth: CVector = block.true_channels.column(user).clone_owned();
                    let pilot: CVector = block.pilot_observations.column(user).clone_owned();
                    for (ei, &kind) in spec.estimators.iter().enumerate() {
                        let input = EstimatorInput {
                            pilot_observation: &pilot,
                            noise_variance: sigma2,
                            subspace: if kind.is_data_aided() { basis.as_ref() } else { None },
                            user_count: j,
                        };
                        let est = run_estimator(kind, &input, &resources)?;
                        errors[ei] += (&est.estimate - &truth).norm_squared();
                    }
                }
                Ok(errors)
            })
            .collect();

        let mut totals = vec![0.0; spec.estimators.len()];
        for trial_result in per_trial {
            let errors = trial_result?;
            for (ei, err) in errors.into_iter().enumerate() {
                totals[ei] += err;
            }
        }
        let denom = cfg.antennas as f64 * spec.trials as f64 * j as f64;
        for (ei, total) in totals.into_iter().enumerate() {
            curves[ei].push(total / denom);
        }
    }

    Ok(SweepResult {
        param: spec.param,
        grid: spec.grid.clone(),
        nmse: spec.estimators.iter().copied().zip(curves).collect(),
        trials: spec.trials,
        seed: spec.seed,
        config: template.clone(),
        grid_labels,
    })
}

/// One timing measurement of the benchmark harness.
#[derive(Debug, Clone)]
pub struct BenchRow {
    pub estimator: EstimatorKind,
    pub antennas: usize,
    pub users: usize,
    pub components: usize,
    pub mean_ns: f64,
    pub std_ns: f64,
}

pub fn bench_rows_to_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from("estimator,M,J,K,mean_ns,std_ns\n");
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.estimator, row.antennas, row.users, row.components, row.mean_ns, row.std_ns
        ));
    }
    out
}

/// Wall-clock comparison of the three GMM variants: standalone GMM and
/// projected GMM apply precomputed filters, while the subspace GMM rebuilds
/// its J x J filters inside every call, which is exactly the per-block cost
/// the projected variant avoids.
pub fn benchmark_precompute(
    model: &GmmModel,
    users: usize,
    sigma2_grid: &[f64],
    repetitions: usize,
    seed: u64,
) -> Result<Vec<BenchRow>> {
    if repetitions == 0 {
        return Err(Error::InvalidArgument("benchmark repetitions must be >= 1".into()));
    }
    if sigma2_grid.is_empty() {
        return Err(Error::InvalidArgument("benchmark noise grid must not be empty".into()));
    }
    let m = model.dim();
    if users == 0 || users > m {
        return Err(Error::InvalidArgument(format!(
            "user count {users} must satisfy 1 <= J <= M = {m}"
        )));
    }
    let mut rng = stream_rng(seed, 0);
    let basis_matrix = orthonormalize(&complex_gaussian_matrix(&mut rng, m, users, 1.0));
    let basis = SubspaceBasis::new(basis_matrix, vec![0.0; users])?;
    let observation = complex_gaussian_vector(&mut rng, m, 1.0 + 1.0);

    let mut rows = Vec::with_capacity(sigma2_grid.len() * 3);
    for &sigma2 in sigma2_grid {
        if sigma2 <= 0.0 {
            return Err(Error::InvalidArgument("noise variances must be > 0".into()));
        }
        let filters = build_gmm_filters(model, sigma2)?;
        let projected_filters = build_gmm_filters(model, sigma2 * users as f64 / m as f64)?;
        let pilot_input = EstimatorInput {
            pilot_observation: &observation,
            noise_variance: sigma2,
            subspace: None,
            user_count: users,
        };
        let aided_input = EstimatorInput { subspace: Some(&basis), ..pilot_input };

        let gmm = time_loop(repetitions, || {
            estimate_gmm(&pilot_input, model, &filters).map(|e| e.estimate)
        })?;
        let sub = time_loop(repetitions, || {
            estimate_sub_gmm(&aided_input, model).map(|e| e.estimate)
        })?;
        let proj = time_loop(repetitions, || {
            estimate_proj_gmm(&aided_input, model, &projected_filters).map(|e| e.estimate)
        })?;
        for (kind, (mean_ns, std_ns)) in [
            (EstimatorKind::Gmm, gmm),
            (EstimatorKind::SubGmm, sub),
            (EstimatorKind::ProjGmm, proj),
        ] {
            rows.push(BenchRow {
                estimator: kind,
                antennas: m,
                users,
                components: model.component_count(),
                mean_ns,
                std_ns,
            });
        }
    }
    Ok(rows)
}

fn time_loop<F: FnMut() -> Result<CVector>>(
    repetitions: usize,
    mut call: F,
) -> Result<(f64, f64)> {
    std::hint::black_box(call()?); // warm-up
    let mut samples = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let start = Instant::now();
        let out = call()?;
        let elapsed = start.elapsed().as_nanos() as f64;
        std::hint::black_box(out);
        samples.push(elapsed);
    }
    let mean = samples.iter().sum::<f64>() / repetitions as f64;
    let std = if repetitions > 1 {
        (samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (repetitions as f64 - 1.0))
            .sqrt()
    } else {
        0.0
    };
    Ok((mean, std))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmm::{fit, EmConfig};
    use crate::scenarios::{generate_dataset, ArrayGeometry, ClusterScenario};

    fn desk_geometry() -> ArrayGeometry {
        ArrayGeometry { vertical_count: 2, horizontal_count: 4, ..Default::default() }
    }

    fn desk_config() -> SystemConfig {
        SystemConfig {
            antennas: 8,
            users: 2,
            snapshots: 40,
            snr_db: 0.0,
            symbol_powers: None,
            pilot_type: PilotType::Identity,
        }
    }

    fn desk_datasets() -> (ChannelDataset, ChannelDataset) {
        let geometry = desk_geometry();
        let scenario = ClusterScenario::default();
        let train = generate_dataset(&scenario, &geometry, 3000, 8.0, 100).unwrap();
        let test = generate_dataset(&scenario, &geometry, 400, 8.0, 101).unwrap();
        (train, test)
    }

    #[test]
    fn noiseless_block_has_exact_pilots() {
        let cfg = SystemConfig { snr_db: f64::INFINITY, ..desk_config() };
        let mut rng = stream_rng(1, 0);
        let channels = complex_gaussian_matrix(&mut rng, 8, 2, 1.0);
        let block = simulate_block(&cfg, &channels, &mut rng).unwrap();
        assert_eq!(block.pilot_observations, channels);
        assert_eq!(block.noise_variance, 0.0);
    }

    #[test]
    fn smallest_block_shape() {
        let cfg = SystemConfig { users: 1, snapshots: 1, ..desk_config() };
        let mut rng = stream_rng(2, 0);
        let channels = complex_gaussian_matrix(&mut rng, 8, 1, 1.0);
        let block = simulate_block(&cfg, &channels, &mut rng).unwrap();
        assert_eq!(block.data_observations.shape(), (8, 1));
        assert_eq!(block.pilot_observations.shape(), (8, 1));
    }

    #[test]
    fn pilot_noise_variance_is_calibrated() {
        // sigma^2 = 0.5 at SNR ~ 3.0103 dB; check the empirical per-entry
        // variance of Y_p - H over ~1e5 entries for both pilot conventions
        let snr_db = 10.0 * 2f64.log10();
        for pilot_type in [PilotType::Identity, PilotType::Dft] {
            let cfg = SystemConfig {
                antennas: 50,
                users: 20,
                snapshots: 1,
                snr_db,
                symbol_powers: None,
                pilot_type,
            };
            let mut rng = stream_rng(3, 0);
            let mut total = 0.0;
            let mut count = 0usize;
            for _ in 0..100 {
                let channels = complex_gaussian_matrix(&mut rng, 50, 20, 1.0);
                let block = simulate_block(&cfg, &channels, &mut rng).unwrap();
                let diff = &block.pilot_observations - &channels;
                total += diff.norm_squared();
                count += diff.len();
            }
            let variance = total / count as f64;
            assert!(
                (variance - 0.5).abs() < 0.005,
                "{pilot_type:?}: empirical variance {variance}"
            );
        }
    }

    #[test]
    fn nmse_basics() {
        let a = vec![CVector::zeros(4)];
        let m_sqrt = 2.0;
        let b = vec![CVector::from_element(4, C64::new(m_sqrt / 2.0, m_sqrt / 2.0))];
        // ||b||^2 = 4 * (1 + 1) = 8 = 2 * M -> NMSE 2
        assert!((nmse(&a, &b, 4).unwrap() - 2.0).abs() < 1e-14);
        assert_eq!(nmse(&a, &a, 4).unwrap(), 0.0);
        assert!(nmse(&a, &[], 4).is_err());
    }

    #[test]
    fn ls_nmse_is_the_noise_variance() {
        let (train, test) = desk_datasets();
        let (model, _) = fit(&train, &EmConfig::with_components(1)).unwrap();
        let spec = SweepSpec {
            param: SweepParam::Snr,
            grid: vec![0.0],
            estimators: vec![EstimatorKind::Ls],
            trials: 300,
            include_pilots: false,
            seed: 7,
        };
        let result = run_sweep(&desk_config(), &spec, &train, &test, &model).unwrap();
        let ls = result.curve(EstimatorKind::Ls).unwrap();
        assert!((ls[0] - 1.0).abs() < 0.05, "LS NMSE at 0 dB: {}", ls[0]);
    }

    #[test]
    fn sweep_is_reproducible() {
        let (train, test) = desk_datasets();
        let (model, _) = fit(&train, &EmConfig::with_components(2)).unwrap();
        let spec = SweepSpec {
            param: SweepParam::Snr,
            grid: vec![-5.0, 5.0],
            estimators: vec![EstimatorKind::Ls, EstimatorKind::Gmm, EstimatorKind::SubGmm],
            trials: 40,
            include_pilots: false,
            seed: 9,
        };
        let cfg = desk_config();
        let a = run_sweep(&cfg, &spec, &train, &test, &model).unwrap();
        let b = run_sweep(&cfg, &spec, &train, &test, &model).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
    }

    #[test]
    fn users_grid_at_m_matches_pilot_only() {
        let (train, test) = desk_datasets();
        let (model, _) = fit(&train, &EmConfig::with_components(2)).unwrap();
        let spec = SweepSpec {
            param: SweepParam::Users,
            grid: vec![8.0],
            estimators: vec![
                EstimatorKind::Ls,
                EstimatorKind::Ml,
                EstimatorKind::Gmm,
                EstimatorKind::SubGmm,
                EstimatorKind::ProjGmm,
            ],
            trials: 50,
            include_pilots: false,
            seed: 11,
        };
        let result = run_sweep(&desk_config(), &spec, &train, &test, &model).unwrap();
        let ls = result.curve(EstimatorKind::Ls).unwrap()[0];
        let ml = result.curve(EstimatorKind::Ml).unwrap()[0];
        let gmm = result.curve(EstimatorKind::Gmm).unwrap()[0];
        let sub = result.curve(EstimatorKind::SubGmm).unwrap()[0];
        let proj = result.curve(EstimatorKind::ProjGmm).unwrap()[0];
        assert!((ml - ls).abs() < 1e-6 * ls);
        assert!((sub - gmm).abs() < 1e-6 * gmm);
        assert!((proj - gmm).abs() < 1e-6 * gmm);
    }

    #[test]
    fn sweep_rejects_bad_inputs() {
        let (train, test) = desk_datasets();
        let (model, _) = fit(&train, &EmConfig::with_components(1)).unwrap();
        let mut spec = SweepSpec {
            param: SweepParam::Snr,
            grid: vec![],
            estimators: vec![EstimatorKind::Ls],
            trials: 10,
            include_pilots: false,
            seed: 0,
        };
        assert!(run_sweep(&desk_config(), &spec, &train, &test, &model).is_err());
        spec.grid = vec![0.0];
        let tiny = ChannelDataset::new(8, vec![CVector::zeros(8)], 8.0).unwrap();
        assert!(matches!(
            run_sweep(&SystemConfig { users: 2, ..desk_config() }, &spec, &train, &tiny, &model),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn csv_shape_matches_grid_and_estimators() {
        let (train, test) = desk_datasets();
        let (model, _) = fit(&train, &EmConfig::with_components(1)).unwrap();
        let spec = SweepSpec {
            param: SweepParam::Snapshots,
            grid: vec![10.0, 20.0, 40.0],
            estimators: vec![EstimatorKind::Ml, EstimatorKind::SubScov],
            trials: 10,
            include_pilots: false,
            seed: 3,
        };
        let result = run_sweep(&desk_config(), &spec, &train, &test, &model).unwrap();
        let csv = result.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "param,estimator,nmse,trials,seed");
        assert_eq!(lines.len(), 1 + 3 * 2);
        assert!(lines[1].starts_with("10,ml,"));
        assert!(lines[2].starts_with("10,sub_scov,"));
    }

    #[test]
    fn benchmark_shape_and_preconditions() {
        let (train, _) = desk_datasets();
        let (model, _) = fit(&train, &EmConfig::with_components(2)).unwrap();
        let rows = benchmark_precompute(&model, 2, &[1.0, 0.1], 5, 1).unwrap();
        assert_eq!(rows.len(), 6);
        let csv = bench_rows_to_csv(&rows);
        assert!(csv.starts_with("estimator,M,J,K,mean_ns,std_ns\n"));
        assert_eq!(csv.lines().count(), 7);
        assert!(csv.lines().nth(1).unwrap().starts_with("gmm,8,2,2,"));

        assert!(benchmark_precompute(&model, 2, &[1.0], 0, 1).is_err());
        assert!(benchmark_precompute(&model, 0, &[1.0], 3, 1).is_err());
    }

    #[test]
    fn single_component_precompute_paths_have_similar_cost() {
        // K=1: standalone and projected GMM share the apply-time structure,
        // so their per-estimate cost stays within 2x
        let mut samples = Vec::new();
        for i in 0..200u64 {
            let mut rng = stream_rng(500, i);
            samples.push(crate::linalg::complex_gaussian_vector(&mut rng, 32, 1.0));
        }
        let dataset = ChannelDataset::new(32, samples, 32.0).unwrap();
        let (model, _) = fit(&dataset, &EmConfig::with_components(1)).unwrap();
        let rows = benchmark_precompute(&model, 4, &[1.0], 400, 2).unwrap();
        let gmm = rows.iter().find(|r| r.estimator == EstimatorKind::Gmm).unwrap().mean_ns;
        let proj = rows.iter().find(|r| r.estimator == EstimatorKind::ProjGmm).unwrap().mean_ns;
        let ratio = (gmm / proj).max(proj / gmm);
        assert!(ratio < 2.0, "K=1 apply-time ratio {ratio:.2} (gmm {gmm:.0} ns, proj {proj:.0} ns)");
    }
}
