//! Study configuration files and the calibration cache.
//!
//! A study file has three sections:
//!
//! ```toml
//! [scenario]
//! id = 2                      # 1..5
//! covariates = "binary"       # or "continuous"
//! n_subjects = 2000
//! admin_censor = 10.0
//! missingness = "standard30"  # outcome_dependent, low10, none
//!
//! [rates]                     # give both rates, or calibrate to targets
//! target_event_fraction = 0.10
//! target_dropout_fraction = 0.50
//! cache = "calibration.toml"
//!
//! [study]
//! reps = 200
//! m = 10
//! methods = ["complete-case", "mi-approx", "mi-tve-approx", "mi-smc", "mi-tve-smc"]
//! seed = 1
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tvemi_core::pool::WaldMode;
use tvemi_core::sim::{calibrate_rates, Calibration, CalibrationTarget, Method, Missingness, ScenarioConfig, PILOT_SUBJECTS};
use tvemi_core::surv::CovariateKind;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyFile {
    pub scenario: ScenarioSection,
    #[serde(default)]
    pub rates: RatesSection,
    #[serde(default)]
    pub study: StudySection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub id: u8,
    pub covariates: String,
    #[serde(default = "default_subjects")]
    pub n_subjects: usize,
    #[serde(default = "default_horizon")]
    pub admin_censor: f64,
    #[serde(default = "default_missingness")]
    pub missingness: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatesSection {
    pub lambda_e: Option<f64>,
    pub lambda_c: Option<f64>,
    #[serde(default = "default_event_fraction")]
    pub target_event_fraction: f64,
    #[serde(default = "default_dropout_fraction")]
    pub target_dropout_fraction: f64,
    #[serde(default = "default_pilot")]
    pub pilot_subjects: usize,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default)]
    pub calibration_seed: u64,
    /// Calibration cache file, relative to the study file.
    pub cache: Option<PathBuf>,
}

impl Default for RatesSection {
    fn default() -> Self {
        RatesSection {
            lambda_e: None,
            lambda_c: None,
            target_event_fraction: default_event_fraction(),
            target_dropout_fraction: default_dropout_fraction(),
            pilot_subjects: default_pilot(),
            tolerance: default_tolerance(),
            calibration_seed: 0,
            cache: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudySection {
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default = "default_methods")]
    pub methods: Vec<String>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_iterations")]
    pub fcs_iterations: usize,
    #[serde(default = "default_cap")]
    pub rejection_cap: usize,
    #[serde(default = "default_knots")]
    pub knots: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_wald")]
    pub wald: String,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
}

impl Default for StudySection {
    fn default() -> Self {
        StudySection {
            reps: default_reps(),
            m: default_m(),
            methods: default_methods(),
            seed: default_seed(),
            fcs_iterations: default_iterations(),
            rejection_cap: default_cap(),
            knots: default_knots(),
            alpha: default_alpha(),
            wald: default_wald(),
            grid_points: default_grid_points(),
        }
    }
}

fn default_subjects() -> usize {
    2000
}
fn default_horizon() -> f64 {
    10.0
}
fn default_missingness() -> String {
    "standard30".into()
}
fn default_event_fraction() -> f64 {
    0.10
}
fn default_dropout_fraction() -> f64 {
    0.50
}
fn default_pilot() -> usize {
    PILOT_SUBJECTS
}
fn default_tolerance() -> f64 {
    0.005
}
fn default_reps() -> usize {
    500
}
fn default_m() -> usize {
    10
}
fn default_methods() -> Vec<String> {
    Method::ALL.iter().map(|m| m.to_string()).collect()
}
fn default_seed() -> u64 {
    1
}
fn default_iterations() -> usize {
    10
}
fn default_cap() -> usize {
    1000
}
fn default_knots() -> usize {
    5
}
fn default_alpha() -> f64 {
    0.05
}
fn default_wald() -> String {
    "chisq".into()
}
fn default_grid_points() -> usize {
    101
}

fn field<T, E: std::fmt::Display>(name: &str, r: Result<T, E>) -> CliResult<T> {
    r.map_err(|e| CliError::Usage(format!("{name}: {e}")))
}

/// Largest seed representable in the configuration format.
pub const MAX_SEED: u64 = i64::MAX as u64;

impl StudyFile {
    pub fn parse(text: &str, source: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("{source}: {e}")))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn covariate_kind(&self) -> CliResult<CovariateKind> {
        field("scenario.covariates", self.scenario.covariates.parse())
    }

    /// The study with the given rates, validated field by field.
    pub fn scenario_config(&self, lambda_e: f64, lambda_c: f64) -> CliResult<ScenarioConfig> {
        let s = &self.scenario;
        let st = &self.study;
        if !(1..=tvemi_core::sim::N_SCENARIOS).contains(&s.id) {
            return Err(CliError::Usage(format!(
                "scenario.id: unknown scenario {} (expected 1 to {})",
                s.id,
                tvemi_core::sim::N_SCENARIOS
            )));
        }
        let kind = self.covariate_kind()?;
        let mut c = ScenarioConfig::new(s.id, kind, lambda_e, lambda_c, st.reps);
        c.n_subjects = s.n_subjects;
        c.admin_censor = s.admin_censor;
        c.missingness = field::<Missingness, _>("scenario.missingness", s.missingness.parse())?;
        c.m = st.m;
        c.methods = st
            .methods
            .iter()
            .map(|m| field::<Method, _>("study.methods", m.parse()))
            .collect::<CliResult<_>>()?;
        if st.seed > MAX_SEED {
            return Err(CliError::Usage(format!("study.seed: must be at most {MAX_SEED}")));
        }
        c.base_seed = st.seed;
        c.fcs_iterations = st.fcs_iterations;
        c.rejection_cap = st.rejection_cap;
        c.n_knots = st.knots;
        c.alpha = st.alpha;
        c.wald = field::<WaldMode, _>("study.wald", st.wald.parse())?;
        c.grid_points = st.grid_points;
        let checks: [(&str, bool); 6] = [
            ("scenario.admin_censor", s.admin_censor > 0.0 && s.admin_censor.is_finite()),
            ("scenario.n_subjects", s.n_subjects >= 10),
            ("study.reps", st.reps >= 1),
            ("study.alpha", st.alpha > 0.0 && st.alpha < 1.0),
            ("study.fcs_iterations", st.fcs_iterations >= 1),
            ("study.rejection_cap", st.rejection_cap >= 1),
        ];
        if let Some((name, _)) = checks.iter().find(|(_, ok)| !ok) {
            return Err(CliError::Usage(format!("{name}: value out of range")));
        }
        field("study", c.validate())?;
        Ok(c)
    }

    pub fn calibration_target(&self) -> CliResult<CalibrationTarget> {
        let r = &self.rates;
        let mut t = CalibrationTarget::new(
            self.scenario.id,
            self.covariate_kind()?,
            r.target_event_fraction,
            r.target_dropout_fraction,
        );
        t.horizon = self.scenario.admin_censor;
        t.pilot_subjects = r.pilot_subjects;
        t.tolerance = r.tolerance;
        t.seed = r.calibration_seed;
        Ok(t)
    }

    /// Resolve rates: explicit values, a cached calibration, or a fresh one
    /// (stored in the cache when one is configured). `base` anchors a relative
    /// cache path.
    pub fn resolve(&self, base: &Path) -> CliResult<Resolved> {
        let rates = match (self.rates.lambda_e, self.rates.lambda_c) {
            (Some(e), Some(c)) => RateSource::Given { lambda_e: e, lambda_c: c },
            (None, None) => {
                let target = self.calibration_target()?;
                let cache = self.rates.cache.as_ref().map(|p| base.join(p));
                let cached = match &cache {
                    Some(path) => CalibrationCache::load(path)?.find(&target),
                    None => None,
                };
                match cached {
                    Some(entry) => RateSource::Cached(entry),
                    None => {
                        let cal = calibrate_rates(&target).map_err(|e| CliError::Numerical(e.to_string()))?;
                        let entry = CacheEntry::new(&target, &cal);
                        if let Some(path) = &cache {
                            let mut file = CalibrationCache::load(path)?;
                            file.entry.push(entry.clone());
                            file.store(path)?;
                        }
                        RateSource::Calibrated(entry)
                    }
                }
            }
            _ => {
                return Err(CliError::Usage(
                    "rates: give both lambda_e and lambda_c, or neither to calibrate".into(),
                ))
            }
        };
        let (e, c) = rates.rates();
        let config = self.scenario_config(e, c)?;
        Ok(Resolved { config, rates })
    }
}

/// Where a study's rates came from.
#[derive(Debug, Clone, PartialEq)]
pub enum RateSource {
    Given { lambda_e: f64, lambda_c: f64 },
    Cached(CacheEntry),
    Calibrated(CacheEntry),
}

impl RateSource {
    pub fn rates(&self) -> (f64, f64) {
        match self {
            RateSource::Given { lambda_e, lambda_c } => (*lambda_e, *lambda_c),
            RateSource::Cached(e) | RateSource::Calibrated(e) => (e.lambda_e, e.lambda_c),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            RateSource::Given { .. } => "given",
            RateSource::Cached(_) => "cached",
            RateSource::Calibrated(_) => "calibrated",
        }
    }

    pub fn entry(&self) -> Option<&CacheEntry> {
        match self {
            RateSource::Given { .. } => None,
            RateSource::Cached(e) | RateSource::Calibrated(e) => Some(e),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub config: ScenarioConfig,
    pub rates: RateSource,
}

/// One calibrated pair of rates and the target it was computed for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CacheEntry {
    pub scenario: u8,
    pub covariates: String,
    pub target_event_fraction: f64,
    pub target_dropout_fraction: f64,
    pub horizon: f64,
    pub pilot_subjects: usize,
    pub tolerance: f64,
    pub seed: u64,
    pub lambda_e: f64,
    pub lambda_c: f64,
    pub pilot_event_fraction: f64,
    pub pilot_dropout_fraction: f64,
}

impl CacheEntry {
    pub fn new(target: &CalibrationTarget, cal: &Calibration) -> Self {
        CacheEntry {
            scenario: target.scenario,
            covariates: target.kind.to_string(),
            target_event_fraction: target.event_fraction,
            target_dropout_fraction: target.dropout_fraction,
            horizon: target.horizon,
            pilot_subjects: target.pilot_subjects,
            tolerance: target.tolerance,
            seed: target.seed,
            lambda_e: cal.lambda_e,
            lambda_c: cal.lambda_c,
            pilot_event_fraction: cal.event_fraction,
            pilot_dropout_fraction: cal.dropout_fraction,
        }
    }

    fn matches(&self, t: &CalibrationTarget) -> bool {
        self.scenario == t.scenario
            && self.covariates == t.kind.to_string()
            && self.target_event_fraction == t.event_fraction
            && self.target_dropout_fraction == t.dropout_fraction
            && self.horizon == t.horizon
            && self.pilot_subjects == t.pilot_subjects
            && self.tolerance == t.tolerance
            && self.seed == t.seed
    }
}

/// Calibrated rates keyed by their targets.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationCache {
    #[serde(default)]
    pub entry: Vec<CacheEntry>,
}

impl CalibrationCache {
    /// An absent file is an empty cache.
    pub fn load(path: &Path) -> CliResult<Self> {
        match fs::read_to_string(path) {
            Ok(text) => toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display()))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Self::default()),
            Err(e) => Err(CliError::io(path, e)),
        }
    }

    pub fn store(&self, path: &Path) -> CliResult<()> {
        let text = toml::to_string(self).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        fs::write(path, text).map_err(|e| CliError::io(path, e))
    }

    pub fn find(&self, target: &CalibrationTarget) -> Option<CacheEntry> {
        self.entry.iter().find(|e| e.matches(target)).cloned()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[scenario]\nid = 1\ncovariates = \"binary\"\n[rates]\nlambda_e = 0.01\nlambda_c = 0.07\n";

    #[test]
    fn defaults_follow_the_simulation_design() {
        let f = StudyFile::parse(MINIMAL, "t").unwrap();
        let r = f.resolve(Path::new(".")).unwrap();
        assert_eq!(r.config.n_subjects, 2000);
        assert_eq!(r.config.admin_censor, 10.0);
        assert_eq!(r.config.m, 10);
        assert_eq!(r.config.n_knots, 5);
        assert_eq!(r.config.methods.len(), 6);
        assert_eq!(r.rates.label(), "given");
    }

    #[test]
    fn unknown_scenario_is_a_schema_error() {
        let text = MINIMAL.replace("id = 1", "id = 9");
        let e = StudyFile::parse(&text, "t").unwrap().resolve(Path::new(".")).unwrap_err();
        assert_eq!(e.exit_code(), 1);
        assert!(e.to_string().contains("scenario.id"), "{e}");
    }

    #[test]
    fn unknown_fields_and_values_are_rejected() {
        let e = StudyFile::parse(&format!("{MINIMAL}[study]\nrepz = 3\n"), "t").unwrap_err();
        assert!(e.to_string().contains("repz"), "{e}");
        let text = format!("{MINIMAL}[study]\nmethods = [\"mi-magic\"]\n");
        let e = StudyFile::parse(&text, "t").unwrap().resolve(Path::new(".")).unwrap_err();
        assert!(e.to_string().contains("study.methods"), "{e}");
        let text = MINIMAL.replace("lambda_c = 0.07\n", "");
        assert!(StudyFile::parse(&text, "t").unwrap().resolve(Path::new(".")).is_err());
    }

    #[test]
    fn calibration_is_cached() {
        let dir = tempfile::tempdir().unwrap();
        let text = "[scenario]\nid = 2\ncovariates = \"binary\"\n[rates]\npilot_subjects = 3000\ntolerance = 0.01\ncache = \"cal.toml\"\n";
        let f = StudyFile::parse(text, "t").unwrap();
        let first = f.resolve(dir.path()).unwrap();
        assert_eq!(first.rates.label(), "calibrated");
        let second = f.resolve(dir.path()).unwrap();
        assert_eq!(second.rates.label(), "cached");
        assert_eq!(first.config, second.config);
    }
}
