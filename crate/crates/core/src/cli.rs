//! Declarative experiment configs and the four CLI commands.
//!
//! A single TOML file describes the scenario, system, mixture, sweep and I/O
//! paths; `generate`, `fit`, `sweep` and `bench` each consume the sections
//! they need. Flat `--set section.key=value` overrides are applied to the
//! parsed TOML before deserialization, so every field is reachable from the
//! command line. One master `seed` drives every stochastic output; each
//! command derives its own sub-seed from it.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::EstimatorKind;
use crate::gmm::{fit, EmConfig, GmmModel, InitStrategy};
use crate::linalg::derive_seed;
use crate::scenarios::{
    generate_dataset, read_dataset, write_dataset, ArrayGeometry, ClusterScenario,
};
use crate::simulator::{
    bench_rows_to_csv, benchmark_precompute, run_sweep, PilotType, SweepParam, SweepResult,
    SweepSpec, SystemConfig,
};

const TAG_TRAIN: u64 = 1;
const TAG_TEST: u64 = 2;
const TAG_FIT: u64 = 3;
const TAG_SWEEP: u64 = 4;
const TAG_BENCH: u64 = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioSection {
    pub geometry: ArrayGeometry,
    pub clusters: ClusterScenario,
    pub train_count: usize,
    pub test_count: usize,
    /// Target for the empirical mean of ||h||^2; defaults to M.
    pub normalization: Option<f64>,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        Self {
            geometry: ArrayGeometry::default(),
            clusters: ClusterScenario::default(),
            train_count: 150_000,
            test_count: 1_000,
            normalization: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SystemSection {
    /// Optional; must agree with the geometry when present.
    pub antennas: Option<usize>,
    pub users: usize,
    pub snapshots: usize,
    pub snr_db: f64,
    pub symbol_powers: Option<Vec<f64>>,
    pub pilot_type: PilotType,
    pub snr_grid_db: Option<Vec<f64>>,
    pub snapshot_grid: Option<Vec<u64>>,
    pub user_grid: Option<Vec<u64>>,
}

impl Default for SystemSection {
    fn default() -> Self {
        Self {
            antennas: None,
            users: 8,
            snapshots: 200,
            snr_db: 0.0,
            symbol_powers: None,
            pilot_type: PilotType::Identity,
            snr_grid_db: Some(vec![-15.0, -10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0]),
            snapshot_grid: Some(vec![20, 50, 100, 200, 500, 1000, 2000, 5000, 10000]),
            user_grid: Some(vec![1, 2, 4, 8, 12, 16]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GmmSection {
    pub component_count: usize,
    pub max_iterations: usize,
    pub rel_tolerance: f64,
    pub covariance_floor: f64,
    pub init_strategy: InitStrategy,
    /// Explicit EM seed; defaults to a sub-seed of the master seed.
    pub seed: Option<u64>,
}

impl Default for GmmSection {
    fn default() -> Self {
        let em = EmConfig::default();
        Self {
            component_count: 64,
            max_iterations: em.max_iterations,
            rel_tolerance: em.rel_tolerance,
            covariance_floor: em.covariance_floor,
            init_strategy: em.init_strategy,
            seed: None,
        }
    }
}

impl GmmSection {
    fn to_em_config(&self, master_seed: u64) -> EmConfig {
        EmConfig {
            component_count: self.component_count,
            max_iterations: self.max_iterations,
            rel_tolerance: self.rel_tolerance,
            covariance_floor: self.covariance_floor,
            init_strategy: self.init_strategy,
            seed: self.seed.unwrap_or_else(|| derive_seed(master_seed, TAG_FIT)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepSection {
    #[serde(rename = "type")]
    pub sweep_type: SweepParam,
    pub estimators: Vec<EstimatorKind>,
    pub trials: usize,
    pub include_pilots: bool,
    /// Explicit sweep seed; defaults to a sub-seed of the master seed.
    pub seed: Option<u64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            sweep_type: SweepParam::Snr,
            estimators: EstimatorKind::ALL.to_vec(),
            trials: 1_000,
            include_pilots: false,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchSection {
    pub repetitions: usize,
    /// Noise variances to benchmark at; defaults to sigma^2 of system.snr_db.
    pub sigma2_grid: Option<Vec<f64>>,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self { repetitions: 200, sigma2_grid: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IoSection {
    pub train_path: PathBuf,
    pub test_path: PathBuf,
    pub model_path: PathBuf,
    pub output_path: PathBuf,
    pub fit_report_path: PathBuf,
}

impl Default for IoSection {
    fn default() -> Self {
        Self {
            train_path: "data/train.cvd".into(),
            test_path: "data/test.cvd".into(),
            model_path: "data/model.gmm".into(),
            output_path: "out/results.csv".into(),
            fit_report_path: "out/fit_report.csv".into(),
        }
    }
}

/// The full experiment description. `scenario`, `system`, `gmm`, `sweep` and
/// `io` are required sections; `bench` and the master `seed` are optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub scenario: ScenarioSection,
    pub system: SystemSection,
    pub gmm: GmmSection,
    pub sweep: SweepSection,
    #[serde(default)]
    pub bench: BenchSection,
    pub io: IoSection,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let value: toml::Value =
            text.parse().map_err(|e| Error::Config(format!("TOML parse error: {e}")))?;
        let config: ExperimentConfig =
            value.try_into().map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn antennas(&self) -> usize {
        self.scenario.geometry.antenna_count()
    }

    pub fn normalization(&self) -> f64 {
        self.scenario.normalization.unwrap_or(self.antennas() as f64)
    }

    pub fn system_config(&self) -> SystemConfig {
        SystemConfig {
            antennas: self.antennas(),
            users: self.system.users,
            snapshots: self.system.snapshots,
            snr_db: self.system.snr_db,
            symbol_powers: self.system.symbol_powers.clone(),
            pilot_type: self.system.pilot_type,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.geometry.validate()?;
        self.scenario.clusters.validate()?;
        if self.scenario.train_count == 0 || self.scenario.test_count == 0 {
            return Err(Error::Config("scenario counts must be >= 1".into()));
        }
        if let Some(n) = self.scenario.normalization {
            if n <= 0.0 {
                return Err(Error::Config("scenario.normalization must be > 0".into()));
            }
        }
        if let Some(m) = self.system.antennas {
            if m != self.antennas() {
                return Err(Error::Config(format!(
                    "system.antennas = {m} disagrees with the geometry ({} elements)",
                    self.antennas()
                )));
            }
        }
        self.system_config().validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.gmm.component_count == 0 {
            return Err(Error::Config("gmm.component_count must be >= 1".into()));
        }
        if self.sweep.estimators.is_empty() {
            return Err(Error::Config("sweep.estimators must not be empty".into()));
        }
        Ok(())
    }

    /// Grid for the configured sweep type, as f64 values.
    pub fn sweep_grid(&self) -> Result<Vec<f64>> {
        match self.sweep.sweep_type {
            SweepParam::Snr => self.system.snr_grid_db.clone().ok_or_else(|| {
                Error::Config("sweep type is snr but system.snr_grid_db is missing".into())
            }),
            SweepParam::Snapshots => self
                .system
                .snapshot_grid
                .as_ref()
                .map(|g| g.iter().map(|&v| v as f64).collect())
                .ok_or_else(|| {
                    Error::Config(
                        "sweep type is snapshots but system.snapshot_grid is missing".into(),
                    )
                }),
            SweepParam::Users => self
                .system
                .user_grid
                .as_ref()
                .map(|g| g.iter().map(|&v| v as f64).collect())
                .ok_or_else(|| {
                    Error::Config("sweep type is users but system.user_grid is missing".into())
                }),
        }
    }

    pub fn sweep_spec(&self) -> Result<SweepSpec> {
        Ok(SweepSpec {
            param: self.sweep.sweep_type,
            grid: self.sweep_grid()?,
            estimators: self.sweep.estimators.clone(),
            trials: self.sweep.trials,
            include_pilots: self.sweep.include_pilots,
            seed: self.sweep.seed.unwrap_or_else(|| derive_seed(self.seed, TAG_SWEEP)),
        })
    }
}

/// Flat overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    /// Redirects the command's primary output path.
    pub out: Option<PathBuf>,
    /// `generate`: training sample count.
    pub count: Option<usize>,
    /// `generate`: test sample count.
    pub test_count: Option<usize>,
    pub trials: Option<usize>,
    pub repetitions: Option<usize>,
    /// Raw `section.key=value` assignments.
    pub sets: Vec<String>,
}

/// Which output path `--out` redirects, per command.
#[derive(Debug, Clone, Copy)]
pub enum OutTarget {
    ModelPath,
    OutputPath,
    None,
}

/// Load a config file and apply overrides.
pub fn load_config(path: &Path, overrides: &Overrides, out_target: OutTarget) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    let mut value: toml::Value =
        text.parse().map_err(|e| Error::Config(format!("TOML parse error: {e}")))?;

    for assignment in &overrides.sets {
        let (key, raw) = assignment.split_once('=').ok_or_else(|| {
            Error::Config(format!("override '{assignment}' must look like section.key=value"))
        })?;
        let parsed = parse_override_value(raw);
        set_value(&mut value, key, parsed)?;
    }
    if let Some(seed) = overrides.seed {
        set_value(&mut value, "seed", toml::Value::Integer(seed as i64))?;
    }
    if let Some(count) = overrides.count {
        set_value(&mut value, "scenario.train_count", toml::Value::Integer(count as i64))?;
    }
    if let Some(count) = overrides.test_count {
        set_value(&mut value, "scenario.test_count", toml::Value::Integer(count as i64))?;
    }
    if let Some(trials) = overrides.trials {
        set_value(&mut value, "sweep.trials", toml::Value::Integer(trials as i64))?;
    }
    if let Some(reps) = overrides.repetitions {
        set_value(&mut value, "bench.repetitions", toml::Value::Integer(reps as i64))?;
    }
    if let Some(out) = &overrides.out {
        let path_value = toml::Value::String(out.display().to_string());
        match out_target {
            OutTarget::ModelPath => set_value(&mut value, "io.model_path", path_value)?,
            OutTarget::OutputPath => set_value(&mut value, "io.output_path", path_value)?,
            OutTarget::None => {}
        }
    }

    let config: ExperimentConfig = value.try_into().map_err(|e| Error::Config(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

/// Parse an override literal with TOML syntax; bare words fall back to strings.
fn parse_override_value(raw: &str) -> toml::Value {
    let snippet = format!("v = {raw}");
    match snippet.parse::<toml::Value>() {
        Ok(toml::Value::Table(mut t)) => t.remove("v").unwrap(),
        _ => toml::Value::String(raw.to_string()),
    }
}

fn set_value(root: &mut toml::Value, dotted: &str, new_value: toml::Value) -> Result<()> {
    let mut current = root;
    let parts: Vec<&str> = dotted.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let table = current.as_table_mut().ok_or_else(|| {
            Error::Config(format!("override path '{dotted}' crosses a non-table value"))
        })?;
        if i + 1 == parts.len() {
            table.insert(part.to_string(), new_value);
            return Ok(());
        }
        current = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::map::Map::new()));
    }
    Err(Error::Config(format!("empty override path '{dotted}'")))
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    Ok(())
}

#[derive(Debug)]
pub struct GenerateSummary {
    pub train_path: PathBuf,
    pub test_path: PathBuf,
    pub train_count: usize,
    pub test_count: usize,
    pub antennas: usize,
    pub train_mean_power: f64,
    pub test_mean_power: f64,
}

/// Generate the train/test datasets with disjoint sub-seeds and write both
/// CVD1 files.
pub fn cmd_generate(config: &ExperimentConfig) -> Result<GenerateSummary> {
    let normalization = config.normalization();
    let train = generate_dataset(
        &config.scenario.clusters,
        &config.scenario.geometry,
        config.scenario.train_count,
        normalization,
        derive_seed(config.seed, TAG_TRAIN),
    )?;
    let test = generate_dataset(
        &config.scenario.clusters,
        &config.scenario.geometry,
        config.scenario.test_count,
        normalization,
        derive_seed(config.seed, TAG_TEST),
    )?;
    ensure_parent(&config.io.train_path)?;
    ensure_parent(&config.io.test_path)?;
    write_dataset(&train, &config.io.train_path)?;
    write_dataset(&test, &config.io.test_path)?;
    Ok(GenerateSummary {
        train_path: config.io.train_path.clone(),
        test_path: config.io.test_path.clone(),
        train_count: train.len(),
        test_count: test.len(),
        antennas: train.antennas(),
        train_mean_power: train.mean_power(),
        test_mean_power: test.mean_power(),
    })
}

#[derive(Debug)]
pub struct FitSummary {
    pub model_path: PathBuf,
    pub report_path: PathBuf,
    pub components: usize,
    pub dimension: usize,
    pub iterations: usize,
    pub final_log_likelihood: f64,
    pub converged: bool,
}

/// Fit the mixture on the training dataset, write the GMM1 model and the
/// per-iteration log-likelihood CSV.
pub fn cmd_fit(config: &ExperimentConfig) -> Result<FitSummary> {
    let train = read_dataset(&config.io.train_path)?;
    if train.antennas() != config.antennas() {
        return Err(Error::DimensionMismatch(format!(
            "training dataset has M = {}, config geometry has M = {}",
            train.antennas(),
            config.antennas()
        )));
    }
    let em = config.gmm.to_em_config(config.seed);
    let (model, report) = fit(&train, &em)?;
    ensure_parent(&config.io.model_path)?;
    model.save(&config.io.model_path)?;
    ensure_parent(&config.io.fit_report_path)?;
    fs::write(&config.io.fit_report_path, report.to_csv())?;
    Ok(FitSummary {
        model_path: config.io.model_path.clone(),
        report_path: config.io.fit_report_path.clone(),
        components: model.component_count(),
        dimension: model.dim(),
        iterations: report.log_likelihoods.len(),
        final_log_likelihood: *report.log_likelihoods.last().unwrap_or(&f64::NAN),
        converged: report.converged,
    })
}

#[derive(Debug)]
pub struct SweepSummary {
    pub output_path: PathBuf,
    pub grid_points: usize,
    pub estimators: usize,
    pub trials: usize,
}

/// Run the configured sweep and write the results CSV.
pub fn cmd_sweep(config: &ExperimentConfig) -> Result<SweepSummary> {
    let result = run_sweep_from_config(config)?;
    ensure_parent(&config.io.output_path)?;
    fs::write(&config.io.output_path, result.to_csv())?;
    Ok(SweepSummary {
        output_path: config.io.output_path.clone(),
        grid_points: result.grid.len(),
        estimators: result.nmse.len(),
        trials: result.trials,
    })
}

/// The sweep behind `cmd_sweep`, returned in memory (used by the bindings).
pub fn run_sweep_from_config(config: &ExperimentConfig) -> Result<SweepResult> {
    let train = read_dataset(&config.io.train_path)?;
    let test = read_dataset(&config.io.test_path)?;
    let model = GmmModel::load(&config.io.model_path)?;
    if model.dim() != config.antennas() {
        return Err(Error::DimensionMismatch(format!(
            "model has M = {}, config geometry has M = {}",
            model.dim(),
            config.antennas()
        )));
    }
    let spec = config.sweep_spec()?;
    run_sweep(&config.system_config(), &spec, &train, &test, &model)
}

#[derive(Debug)]
pub struct BenchSummary {
    pub output_path: PathBuf,
    pub rows: usize,
}

/// Time the GMM estimator variants and write the timing CSV.
pub fn cmd_bench(config: &ExperimentConfig) -> Result<BenchSummary> {
    let model = GmmModel::load(&config.io.model_path)?;
    let sigma2_grid = match &config.bench.sigma2_grid {
        Some(grid) => grid.clone(),
        None => vec![config.system_config().noise_variance()],
    };
    let rows = benchmark_precompute(
        &model,
        config.system.users,
        &sigma2_grid,
        config.bench.repetitions,
        derive_seed(config.seed, TAG_BENCH),
    )?;
    ensure_parent(&config.io.output_path)?;
    fs::write(&config.io.output_path, bench_rows_to_csv(&rows))?;
    Ok(BenchSummary { output_path: config.io.output_path.clone(), rows: rows.len() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_toml() -> String {
        // every required section present, fields defaulted
        "[scenario]\n[system]\n[gmm]\n[sweep]\n[io]\n".to_string()
    }

    #[test]
    fn default_config_matches_the_headline_scales() {
        let config = ExperimentConfig::default();
        assert_eq!(config.scenario.train_count, 150_000);
        assert_eq!(config.scenario.test_count, 1_000);
        assert_eq!(config.antennas(), 64);
        assert_eq!(config.system.users, 8);
        assert_eq!(config.system.snapshots, 200);
        assert_eq!(config.gmm.component_count, 64);
        assert_eq!(config.sweep.trials, 1_000);
        assert_eq!(config.normalization(), 64.0);
    }

    #[test]
    fn minimal_config_parses_with_defaults() {
        let config = ExperimentConfig::from_toml_str(&minimal_toml()).unwrap();
        assert_eq!(config, ExperimentConfig::default());
    }

    #[test]
    fn missing_scenario_section_is_named() {
        let err = ExperimentConfig::from_toml_str("[system]\n[gmm]\n[sweep]\n[io]\n").unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Config(_)));
        assert!(msg.contains("scenario"), "error does not name the section: {msg}");
    }

    #[test]
    fn config_round_trip_is_a_fixed_point() {
        let config = ExperimentConfig::default();
        let text = config.to_toml_string().unwrap();
        let back = ExperimentConfig::from_toml_str(&text).unwrap();
        assert_eq!(back, config);
        let text2 = back.to_toml_string().unwrap();
        assert_eq!(text, text2);
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.toml");
        fs::write(&path, minimal_toml()).unwrap();
        let overrides = Overrides {
            seed: Some(99),
            count: Some(123),
            sets: vec![
                "gmm.component_count=8".into(),
                "sweep.type=\"users\"".into(),
                "scenario.geometry.horizontal_count=4".into(),
            ],
            ..Default::default()
        };
        let config = load_config(&path, &overrides, OutTarget::None).unwrap();
        assert_eq!(config.seed, 99);
        assert_eq!(config.scenario.train_count, 123);
        assert_eq!(config.gmm.component_count, 8);
        assert_eq!(config.sweep.sweep_type, SweepParam::Users);
        assert_eq!(config.antennas(), 16);
    }

    #[test]
    fn bad_estimator_name_is_a_config_error() {
        let text = minimal_toml().replace("[sweep]\n", "[sweep]\nestimators=[\"bogus\"]\n");
        let err = ExperimentConfig::from_toml_str(&text).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("bogus") || err.to_string().contains("variant"));
    }

    #[test]
    fn geometry_antenna_mismatch_is_rejected() {
        let text = minimal_toml().replace("[system]\n", "[system]\nantennas=32\n");
        let err = ExperimentConfig::from_toml_str(&text).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn sweep_grid_follows_the_type() {
        let mut config = ExperimentConfig::default();
        config.sweep.sweep_type = SweepParam::Snapshots;
        let grid = config.sweep_grid().unwrap();
        assert_eq!(grid[0], 20.0);
        config.system.snapshot_grid = None;
        let err = config.sweep_grid().unwrap_err();
        assert!(err.to_string().contains("snapshot_grid"));
    }
}
