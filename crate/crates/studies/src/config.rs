//! Run-configuration schema, loading, environment overrides and validation.
//!
//! Configurations are JSON. Relative file paths are resolved against the
//! directory containing the configuration file. Validation reports every
//! violation found, not just the first.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use v2g_core::degradation::{BatteryPackSpec, CellDegradationParams};
use v2g_core::session::{self, PerUnitSession, SessionConfig};
use v2g_core::thermal::ThermalParams;
use v2g_core::{Error, Result};

use crate::ENV_PREFIX;

/// Which study a configuration drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StudyKind {
    Temperature,
    TariffVariance,
    Charger,
    Profiles,
    Robustness,
    Projection,
}

impl std::fmt::Display for StudyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            StudyKind::Temperature => "temperature",
            StudyKind::TariffVariance => "tariff-variance",
            StudyKind::Charger => "charger",
            StudyKind::Profiles => "profiles",
            StudyKind::Robustness => "robustness",
            StudyKind::Projection => "projection",
        };
        f.write_str(name)
    }
}

/// Tariff input: either a fixed CSV profile or a synthesized one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct TariffConfig {
    /// `interval,alpha_eur_per_kwh` file with the (mean) profile.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// Inline mean profile (EUR/kWh per interval).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<Vec<f64>>,
    /// Relative standard deviation of synthesized profiles.
    #[serde(default = "default_relative_std")]
    pub relative_std: f64,
}

fn default_relative_std() -> f64 {
    0.10
}

/// Ambient temperature input: constant or a `time_h,temp_C` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmbientConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constant_c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

impl Default for AmbientConfig {
    fn default() -> Self {
        Self {
            constant_c: Some(20.0),
            path: None,
        }
    }
}

/// Thermal model configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ThermalConfig {
    pub params: ThermalParams,
    /// RK4 step in seconds.
    pub step_s: Option<f64>,
    /// Expected V2G participation level used to precompute the battery
    /// temperature for weighted-sum and robustness pipelines. The splitting
    /// game derives it from `w / T` instead.
    pub rho: Option<f64>,
}

impl ThermalConfig {
    pub fn step_s(&self) -> f64 {
        self.step_s.unwrap_or(1.0)
    }

    pub fn rho(&self) -> f64 {
        self.rho.unwrap_or(0.5)
    }
}

/// Study-specific knobs; unused fields are simply ignored by other kinds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudySpec {
    pub kind: StudyKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Splitting-game sweep; defaults to `0..=T`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w_values: Option<Vec<usize>>,
    /// Weighted-sum sweep; defaults to `T + 1` evenly spaced weights.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho_values: Option<Vec<f64>>,
    #[serde(default = "default_t_a_values")]
    pub t_a_values_c: Vec<f64>,
    #[serde(default = "default_variance_scales")]
    pub variance_scales: Vec<f64>,
    #[serde(default = "default_charger_ratings")]
    pub charger_ratings_kw: Vec<f64>,
    #[serde(default = "default_capacities")]
    pub capacities_kwh: Vec<f64>,
    #[serde(default = "default_profile_w")]
    pub profile_w_values: Vec<usize>,
    /// Monte Carlo draws per hyperparameter value.
    #[serde(default = "default_draws")]
    pub draws: usize,
    #[serde(default = "default_low_factor")]
    pub perturbation_low: f64,
    #[serde(default = "default_high_factor")]
    pub perturbation_high: f64,
    #[serde(default = "default_days_per_week")]
    pub v2g_days_per_week: usize,
    #[serde(default = "default_session_hours")]
    pub projection_session_hours: f64,
    #[serde(default = "default_daily_drive")]
    pub daily_drive_kwh: f64,
    /// Coarser RK4 step for the year-long projection runs.
    #[serde(default = "default_projection_step")]
    pub projection_step_s: f64,
    /// Also dump raw robustness samples next to the summary.
    #[serde(default)]
    pub emit_raw_samples: bool,
}

fn default_seed() -> u64 {
    42
}
fn default_t_a_values() -> Vec<f64> {
    vec![10.0, 20.0, 40.0]
}
fn default_variance_scales() -> Vec<f64> {
    vec![0.0, 1.0, 2.0]
}
fn default_charger_ratings() -> Vec<f64> {
    vec![6.6, 22.0, 50.0]
}
fn default_capacities() -> Vec<f64> {
    vec![50.0, 75.0, 100.0]
}
fn default_profile_w() -> Vec<usize> {
    vec![0, 8, 16]
}
fn default_draws() -> usize {
    100
}
fn default_low_factor() -> f64 {
    0.9
}
fn default_high_factor() -> f64 {
    1.1
}
fn default_days_per_week() -> usize {
    3
}
fn default_session_hours() -> f64 {
    12.0
}
fn default_daily_drive() -> f64 {
    5.0
}
fn default_projection_step() -> f64 {
    30.0
}

/// Complete run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub session: PerUnitSession,
    pub pack: BatteryPackSpec,
    #[serde(default)]
    pub degradation: CellDegradationParams,
    #[serde(default)]
    pub thermal: ThermalConfig,
    #[serde(default)]
    pub tariff: TariffConfig,
    #[serde(default)]
    pub ambient: AmbientConfig,
    pub study: StudySpec,
}

/// A parsed configuration with its provenance.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    /// Directory for resolving relative paths inside the configuration.
    pub base_dir: PathBuf,
    /// SHA-256 of the effective JSON (after environment overrides).
    pub config_hash: String,
}

impl LoadedConfig {
    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    /// Load the mean tariff profile (file or inline), truncated or checked
    /// against the session horizon by callers.
    pub fn mean_tariff(&self) -> Result<Vec<f64>> {
        match (&self.config.tariff.path, &self.config.tariff.mean) {
            (Some(path), None) => session::load_tariff_csv(&self.resolve(path)),
            (None, Some(mean)) => Ok(mean.clone()),
            (Some(_), Some(_)) => Err(Error::InvalidConfig(vec![
                "tariff: give either path or mean, not both".into(),
            ])),
            (None, None) => Err(Error::InvalidConfig(vec![
                "tariff: either path or mean is required".into(),
            ])),
        }
    }

    /// The session in engineering units with a tariff of the right length.
    pub fn session(&self) -> Result<SessionConfig> {
        let mean = self.mean_tariff()?;
        let t = self.config.session.t;
        if mean.len() < t {
            return Err(Error::InvalidConfig(vec![format!(
                "tariff profile has {} intervals but the session needs {t}",
                mean.len()
            )]));
        }
        let cfg = session::per_unit_to_kwh(
            &self.config.session,
            mean[..t].to_vec(),
            self.config.pack.clone(),
        );
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Apply `V2G_STUDIES_*` environment overrides onto the raw JSON value.
fn apply_env_overrides(value: &mut serde_json::Value, env: &BTreeMap<String, String>) {
    for (key, raw) in env {
        let Some(stripped) = key.strip_prefix(ENV_PREFIX) else {
            continue;
        };
        let segments: Vec<String> = stripped
            .split("__")
            .map(|s| s.to_ascii_lowercase())
            .collect();
        if segments.is_empty() {
            continue;
        }
        let mut cursor = &mut *value;
        for seg in &segments[..segments.len() - 1] {
            cursor = cursor
                .as_object_mut()
                .map(|obj| {
                    obj.entry(seg.clone())
                        .or_insert(serde_json::Value::Object(Default::default()))
                })
                .expect("override path walks through a non-object");
        }
        let leaf = segments.last().unwrap();
        let parsed = serde_json::from_str(raw)
            .unwrap_or_else(|_| serde_json::Value::String(raw.clone()));
        if let Some(obj) = cursor.as_object_mut() {
            obj.insert(leaf.clone(), parsed);
        }
    }
}

/// Parse, override and hash a configuration file.
pub fn load_config(path: &Path) -> Result<LoadedConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
    let mut value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
    let env: BTreeMap<String, String> = std::env::vars()
        .filter(|(k, _)| k.starts_with(ENV_PREFIX))
        .collect();
    apply_env_overrides(&mut value, &env);
    let canonical = serde_json::to_string(&value)
        .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
    let config_hash = hex_digest(&canonical);
    let config: RunConfig = serde_json::from_value(value)
        .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
    let base_dir = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    Ok(LoadedConfig {
        config,
        base_dir,
        config_hash,
    })
}

fn hex_digest(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    let mut out = String::with_capacity(16);
    for byte in digest.iter().take(8) {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

/// Validate a loaded configuration end to end, collecting every violation.
pub fn validate_config(loaded: &LoadedConfig) -> std::result::Result<(), Vec<String>> {
    let mut bad = Vec::new();
    let cfg = &loaded.config;

    let mut collect = |result: Result<()>| {
        if let Err(err) = result {
            match err {
                Error::InvalidConfig(list) => bad.extend(list),
                other => bad.push(other.to_string()),
            }
        }
    };
    collect(cfg.pack.validate());
    collect(cfg.degradation.validate());
    collect(cfg.thermal.params.validate());

    // Structural session checks run against a placeholder tariff so that a
    // broken tariff source cannot mask them.
    let placeholder = session::per_unit_to_kwh(
        &cfg.session,
        vec![0.0; cfg.session.t],
        cfg.pack.clone(),
    );
    collect(placeholder.validate());
    if let Err(err) = placeholder.feasibility_precheck() {
        bad.push(err.to_string());
    }

    match loaded.mean_tariff() {
        Ok(mean) => {
            if mean.len() < cfg.session.t {
                bad.push(format!(
                    "tariff profile has {} intervals but the session needs {}",
                    mean.len(),
                    cfg.session.t
                ));
            }
        }
        Err(Error::InvalidConfig(list)) => bad.extend(list),
        Err(other) => bad.push(other.to_string()),
    }
    if cfg.tariff.relative_std < 0.0 {
        bad.push(format!(
            "tariff.relative_std must be >= 0, got {}",
            cfg.tariff.relative_std
        ));
    }
    match (&cfg.ambient.constant_c, &cfg.ambient.path) {
        (None, None) => bad.push("ambient: either constant_c or path is required".into()),
        (_, Some(path)) => {
            let resolved = loaded.resolve(path);
            if !resolved.exists() {
                bad.push(format!("ambient file not found: {}", resolved.display()));
            }
        }
        _ => {}
    }

    let study = &cfg.study;
    let t = cfg.session.t;
    // Projection sessions run on their own horizon.
    let sweep_t = if study.kind == StudyKind::Projection {
        (study.projection_session_hours / cfg.session.delta_t_h).round() as usize
    } else {
        t
    };
    if let Some(w_values) = &study.w_values {
        if w_values.is_empty() {
            bad.push("study.w_values must be non-empty when given".into());
        }
        if w_values.iter().any(|&w| w > sweep_t) {
            bad.push(format!("study.w_values contains w > T = {sweep_t}"));
        }
    }
    if let Some(rho_values) = &study.rho_values {
        if rho_values.is_empty() {
            bad.push("study.rho_values must be non-empty when given".into());
        }
        if rho_values.iter().any(|&r| !(0.0..=1.0).contains(&r)) {
            bad.push("study.rho_values must lie in [0, 1]".into());
        }
    }
    match study.kind {
        StudyKind::Temperature => {
            if study.t_a_values_c.is_empty() {
                bad.push("study.t_a_values_c must be non-empty".into());
            }
        }
        StudyKind::TariffVariance => {
            if study.variance_scales.is_empty() {
                bad.push("study.variance_scales must be non-empty".into());
            }
        }
        StudyKind::Charger => {
            if study.charger_ratings_kw.is_empty() {
                bad.push("study.charger_ratings_kw must be non-empty".into());
            }
            if study.charger_ratings_kw.iter().any(|&r| r <= 0.0) {
                bad.push("study.charger_ratings_kw must be strictly positive".into());
            }
        }
        StudyKind::Profiles => {
            if study.profile_w_values.is_empty() {
                bad.push("study.profile_w_values must be non-empty".into());
            }
            if study.profile_w_values.iter().any(|&w| w > t) {
                bad.push(format!("study.profile_w_values contains w > T = {t}"));
            }
        }
        StudyKind::Robustness => {
            if study.draws == 0 {
                bad.push("study.draws must be >= 1".into());
            }
            if !(study.perturbation_low > 0.0
                && study.perturbation_low <= 1.0
                && study.perturbation_high >= 1.0)
            {
                bad.push(format!(
                    "perturbation factors must satisfy 0 < low <= 1 <= high, got [{}, {}]",
                    study.perturbation_low, study.perturbation_high
                ));
            }
        }
        StudyKind::Projection => {
            if study.capacities_kwh.is_empty() {
                bad.push("study.capacities_kwh must be non-empty".into());
            }
            if cfg.ambient.path.is_none() {
                bad.push("projection requires ambient.path with a year of data".into());
            }
            if study.projection_session_hours <= 0.0 {
                bad.push("study.projection_session_hours must be > 0".into());
            }
            if study.v2g_days_per_week > 7 {
                bad.push("study.v2g_days_per_week must be <= 7".into());
            }
        }
    }

    if bad.is_empty() {
        Ok(())
    } else {
        Err(bad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn minimal_json() -> serde_json::Value {
        serde_json::json!({
            "session": {
                "t": 16, "delta_t_h": 0.25, "p_min_kw": -22.0, "p_max_kw": 22.0,
                "e_min_pu": 0.2, "e_max_pu": 1.0, "e_0_pu": 0.5, "e_des_pu": 0.9,
                "epsilon_pu": 0.02
            },
            "pack": {
                "c_rated_ah": 1.5, "n_series": 83, "n_parallel": 94, "v_pack": 350.0,
                "pack_capacity_kwh": 50.0, "r_int_ohm": 0.1,
                "gamma_eur_per_kwh": 585.0, "n_max_cycles": 5.28
            },
            "tariff": { "mean": [0.08, 0.10, 0.14, 0.22, 0.31, 0.38, 0.27, 0.16,
                                  0.09, 0.07, 0.12, 0.19, 0.29, 0.35, 0.24, 0.11] },
            "study": { "kind": "temperature", "seed": 7 }
        })
    }

    fn write_config(value: &serde_json::Value) -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        let mut file = std::fs::File::create(&path).unwrap();
        write!(file, "{}", serde_json::to_string_pretty(value).unwrap()).unwrap();
        (dir, path)
    }

    #[test]
    fn minimal_config_parses_with_defaults() {
        let (_dir, path) = write_config(&minimal_json());
        let loaded = load_config(&path).unwrap();
        assert_eq!(loaded.config.session.eta_avg, 0.95);
        assert_eq!(loaded.config.study.draws, 100);
        assert_eq!(loaded.config.tariff.relative_std, 0.10);
        validate_config(&loaded).unwrap();
        let session = loaded.session().unwrap();
        assert_eq!(session.e_des_kwh, 45.0);
    }

    #[test]
    fn negative_epsilon_is_a_named_violation() {
        let mut value = minimal_json();
        value["session"]["epsilon_pu"] = serde_json::json!(-0.5);
        let (_dir, path) = write_config(&value);
        let loaded = load_config(&path).unwrap();
        let violations = validate_config(&loaded).unwrap_err();
        assert!(
            violations.iter().any(|v| v.contains("epsilon")),
            "{violations:?}"
        );
    }

    #[test]
    fn dangling_tariff_path_is_reported() {
        let mut value = minimal_json();
        value["tariff"] = serde_json::json!({ "path": "missing.csv" });
        let (_dir, path) = write_config(&value);
        let loaded = load_config(&path).unwrap();
        let violations = validate_config(&loaded).unwrap_err();
        assert!(
            violations.iter().any(|v| v.contains("missing.csv")),
            "{violations:?}"
        );
    }

    #[test]
    fn validation_collects_multiple_violations() {
        let mut value = minimal_json();
        value["session"]["epsilon_pu"] = serde_json::json!(-0.5);
        value["session"]["eta_avg"] = serde_json::json!(1.4);
        value["study"]["t_a_values_c"] = serde_json::json!([]);
        let (_dir, path) = write_config(&value);
        let loaded = load_config(&path).unwrap();
        let violations = validate_config(&loaded).unwrap_err();
        assert!(violations.len() >= 3, "{violations:?}");
    }

    #[test]
    fn env_override_changes_nested_key() {
        let mut env = BTreeMap::new();
        env.insert(format!("{ENV_PREFIX}STUDY__SEED"), "123".to_string());
        env.insert(
            format!("{ENV_PREFIX}SESSION__ETA_AVG"),
            "0.9".to_string(),
        );
        let mut value = minimal_json();
        apply_env_overrides(&mut value, &env);
        assert_eq!(value["study"]["seed"], serde_json::json!(123));
        assert_eq!(value["session"]["eta_avg"], serde_json::json!(0.9));
    }

    #[test]
    fn config_hash_tracks_content() {
        let (_dir, path) = write_config(&minimal_json());
        let first = load_config(&path).unwrap().config_hash;
        let second = load_config(&path).unwrap().config_hash;
        assert_eq!(first, second);
        let mut changed = minimal_json();
        changed["study"]["seed"] = serde_json::json!(8);
        let (_dir2, path2) = write_config(&changed);
        assert_ne!(first, load_config(&path2).unwrap().config_hash);
    }
}
