//! Command-line surface.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use tvemi_core::basis::{select_knots, TveSpec};
use tvemi_core::cox::{default_grid, fit, CoefficientLayout, TveCurve};
use tvemi_core::impute::approx::{impute_approx, ApproxConfig};
use tvemi_core::impute::smc::{impute_smc, SmcConfig};
use tvemi_core::impute::ImputedDatasets;
use tvemi_core::pool::{
    fit_imputed, mi_mtve_select, pool_models, pooled_curve, pooled_ph_test, PooledEstimate, SelectionForm, SelectionTrace,
    WaldMode,
};
use tvemi_core::sim::simulate_cohort;
use tvemi_core::surv::{CovariateKind, SurvivalDataset};
use tvemi_core::wald::{WaldReference, WaldTest};
use tvemi_core::DMatrix;

use crate::config::{StudyFile, MAX_SEED};
use crate::csvio::{self, IngestOptions};
use crate::error::{CliError, CliResult};
use crate::report::{self, StudyManifest};
use crate::runner;

#[derive(Debug, Parser)]
#[command(name = "tvemi", version, about = "Cox regression with time-varying effects and multiple imputation")]
pub struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate one simulated cohort from a study file.
    Simulate(SimulateArgs),
    /// Multiply impute missing covariates.
    Impute(ImputeArgs),
    /// Fit the Cox model to a dataset, or to long-format imputations and pool.
    Fit(FitArgs),
    /// Test proportional hazards for every covariate.
    PhTest(PhTestArgs),
    /// Impute, then select time-varying effects by forward selection.
    Select(SelectArgs),
    /// Run a replication study from a study file.
    Replicate(ReplicateArgs),
    /// Print the tables of a replication summary.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ImputeMethod {
    Approx,
    Smc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WaldArg {
    Chisq,
    D1,
}

impl From<WaldArg> for WaldMode {
    fn from(w: WaldArg) -> Self {
        match w {
            WaldArg::Chisq => WaldMode::ChiSquare,
            WaldArg::D1 => WaldMode::D1,
        }
    }
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Input CSV: time, event, optional id, covariates (or long format with imp).
    #[arg(long)]
    pub data: PathBuf,
    /// Force a covariate's kind, as name=binary or name=continuous.
    #[arg(long = "kind", value_name = "NAME=KIND")]
    pub kinds: Vec<String>,
}

impl DataArgs {
    fn options(&self) -> CliResult<IngestOptions> {
        let kinds = self
            .kinds
            .iter()
            .map(|s| {
                let (name, kind) = s
                    .split_once('=')
                    .ok_or_else(|| CliError::Usage(format!("--kind {s:?}: expected NAME=KIND")))?;
                let kind: CovariateKind = kind.parse().map_err(|e| CliError::Usage(format!("--kind {s:?}: {e}")))?;
                Ok((name.trim().to_string(), kind))
            })
            .collect::<CliResult<_>>()?;
        Ok(IngestOptions { kinds })
    }
}

#[derive(Debug, Args)]
pub struct ImputeOptions {
    #[arg(long, value_enum, default_value = "approx")]
    pub method: ImputeMethod,
    /// Number of imputations.
    #[arg(long, default_value_t = 10)]
    pub m: usize,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(..=MAX_SEED))]
    pub seed: u64,
    /// Add the H1 column to the approximate imputation model.
    #[arg(long)]
    pub include_h1: bool,
    /// Add covariate-by-outcome interactions to the approximate imputation model.
    #[arg(long)]
    pub include_interactions: bool,
    #[arg(long, default_value_t = 10)]
    pub fcs_iterations: usize,
    /// Proposals per cell before the substantive-model sampler keeps its last one.
    #[arg(long, default_value_t = 1000)]
    pub rejection_cap: usize,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Override the study seed.
    #[arg(long, value_parser = clap::value_parser!(u64).range(..=MAX_SEED))]
    pub seed: Option<u64>,
    /// Replication index; the cohort matches that replication of `replicate`.
    #[arg(long, default_value_t = 0)]
    pub rep: usize,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ImputeArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub impute: ImputeOptions,
    /// Time-varying form assumed by the imputation model: FORM for every
    /// covariate or NAME=FORM; forms are constant, linear, rcs3, rcs4, rcs5,
    /// step:C1,C2,.. and rcs:K1,K2,..
    #[arg(long = "tve", value_name = "[NAME=]FORM")]
    pub tve: Vec<String>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Time-varying form per covariate (see impute); constant by default.
    #[arg(long = "tve", value_name = "[NAME=]FORM")]
    pub tve: Vec<String>,
    #[arg(long, value_enum, default_value = "chisq")]
    pub wald: WaldArg,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Curve grid size over [0, max follow-up].
    #[arg(long, default_value_t = 101)]
    pub grid_points: usize,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct PhTestArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Time-varying form per covariate; rcs5 by default.
    #[arg(long = "tve", value_name = "[NAME=]FORM")]
    pub tve: Vec<String>,
    #[arg(long, value_enum, default_value = "chisq")]
    pub wald: WaldArg,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Also write ph_tests.csv here.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub impute: ImputeOptions,
    /// Significance level for adopting a time-varying effect.
    #[arg(long, default_value_t = 0.01)]
    pub alpha: f64,
    /// Candidate forms, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "linear,rcs3,rcs4,rcs5")]
    pub forms: Vec<SelectionForm>,
    /// Candidate covariates, comma separated; all by default.
    #[arg(long, value_delimiter = ',')]
    pub candidates: Vec<String>,
    #[arg(long, value_enum, default_value = "chisq")]
    pub wald: WaldArg,
    #[arg(long, default_value_t = 101)]
    pub grid_points: usize,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReplicateArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Override the study seed.
    #[arg(long, value_parser = clap::value_parser!(u64).range(..=MAX_SEED))]
    pub seed: Option<u64>,
    /// Override the number of replications.
    #[arg(long)]
    pub reps: Option<usize>,
    /// Override the number of imputations.
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// A summary.csv, or a directory containing one.
    pub path: PathBuf,
}

/// Parse `args` and run the command; returns the process exit code.
pub fn run_from<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).parse_default_env().try_init();
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: &Command) -> CliResult<()> {
    match command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Impute(a) => cmd_impute(a),
        Command::Fit(a) => cmd_fit(a),
        Command::PhTest(a) => cmd_ph_test(a),
        Command::Select(a) => cmd_select(a),
        Command::Replicate(a) => cmd_replicate(a),
        Command::Report(a) => cmd_report(a),
    }
}

/// Create the output directory and refuse to write over any of `inputs`.
fn prepare_out_dir(dir: &Path, outputs: &[&str], inputs: &[&Path]) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    for name in outputs {
        let target = dir.join(name);
        for input in inputs {
            if let (Ok(a), Ok(b)) = (fs::canonicalize(&target), fs::canonicalize(input)) {
                if a == b {
                    return Err(CliError::Usage(format!(
                        "output {} would overwrite input {}",
                        target.display(),
                        input.display()
                    )));
                }
            }
        }
    }
    Ok(())
}

fn create(dir: &Path, name: &str) -> CliResult<File> {
    let path = dir.join(name);
    File::create(&path).map_err(|e| CliError::io(&path, e))
}

fn write_text(dir: &Path, name: &str, text: &str) -> CliResult<()> {
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| CliError::io(&path, e))
}

/// Parse one form; spline knot counts place knots on `event_times`.
pub fn parse_form(form: &str, event_times: &[f64]) -> CliResult<TveSpec> {
    let form = form.trim();
    if let Ok(sel) = form.parse::<SelectionForm>() {
        return sel.spec(event_times).map_err(|e| CliError::from(e).context(format!("form {form:?}")));
    }
    form.parse::<TveSpec>().map_err(|e| CliError::Usage(format!("form {form:?}: {e}")))
}

/// Specs for every covariate from `FORM` / `NAME=FORM` arguments.
pub fn resolve_specs(args: &[String], dataset: &SurvivalDataset, default: &str) -> CliResult<Vec<TveSpec>> {
    let events = dataset.observed_event_times();
    let p = dataset.n_covariates();
    let mut forms: Vec<Option<String>> = vec![None; p];
    let mut all: Option<String> = None;
    for a in args {
        // a leading name is recognised only when it names a covariate
        match a.split_once('=') {
            Some((name, form)) if dataset.covariate_index(name.trim()).is_some() => {
                forms[dataset.covariate_index(name.trim()).unwrap_or_default()] = Some(form.to_string());
            }
            Some((name, _)) if !name.contains(':') => {
                return Err(CliError::Usage(format!("--tve {a:?}: no covariate named {:?}", name.trim())));
            }
            _ => all = Some(a.clone()),
        }
    }
    forms
        .into_iter()
        .map(|f| {
            let f = f.or_else(|| all.clone()).unwrap_or_else(|| default.to_string());
            parse_form(&f, &events)
        })
        .collect()
}

fn impute(dataset: &SurvivalDataset, specs: Vec<TveSpec>, o: &ImputeOptions) -> CliResult<ImputedDatasets> {
    let imputed = match o.method {
        ImputeMethod::Approx => {
            let mut c = ApproxConfig::new(specs, o.m, o.seed);
            c.fcs_iterations = o.fcs_iterations;
            c.include_h1 = o.include_h1;
            c.include_interactions = o.include_interactions;
            impute_approx(dataset, &c)
        }
        ImputeMethod::Smc => {
            let mut c = SmcConfig::new(o.m, o.seed);
            c.fcs_iterations = o.fcs_iterations;
            c.rejection_cap = o.rejection_cap;
            impute_smc(dataset, &specs, &c)
        }
    };
    imputed.map_err(|e| CliError::from(e).context("imputation"))
}

fn method_name(m: ImputeMethod) -> &'static str {
    match m {
        ImputeMethod::Approx => "approx",
        ImputeMethod::Smc => "smc",
    }
}

fn spec_strings(dataset: &SurvivalDataset, specs: &[TveSpec]) -> Vec<String> {
    dataset.meta().iter().zip(specs).map(|(m, s)| format!("{}={s}", m.name)).collect()
}

#[derive(Serialize)]
struct ImputeOptionsRecord {
    method: &'static str,
    m: usize,
    seed: u64,
    include_h1: bool,
    include_interactions: bool,
    fcs_iterations: usize,
    rejection_cap: usize,
}

impl From<&ImputeOptions> for ImputeOptionsRecord {
    fn from(o: &ImputeOptions) -> Self {
        ImputeOptionsRecord {
            method: method_name(o.method),
            m: o.m,
            seed: o.seed,
            include_h1: o.include_h1,
            include_interactions: o.include_interactions,
            fcs_iterations: o.fcs_iterations,
            rejection_cap: o.rejection_cap,
        }
    }
}

fn tool() -> String {
    format!("tvemi {}", env!("CARGO_PKG_VERSION"))
}

fn cmd_simulate(a: &SimulateArgs) -> CliResult<()> {
    let mut file = StudyFile::load(&a.config)?;
    if let Some(seed) = a.seed {
        file.study.seed = seed;
    }
    let base = a.config.parent().unwrap_or(Path::new("."));
    let resolved = file.resolve(base)?;
    let seed = resolved.config.rep_seed(a.rep);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cohort = simulate_cohort(&resolved.config, &mut rng)?;
    const OUT: [&str; 3] = ["complete.csv", "data.csv", "manifest.toml"];
    prepare_out_dir(&a.out_dir, &OUT, &[&a.config])?;
    csvio::write_dataset(&a.out_dir.join(OUT[0]), &cohort.complete)?;
    csvio::write_dataset(&a.out_dir.join(OUT[1]), &cohort.masked)?;
    #[derive(Serialize)]
    struct Manifest {
        tool: String,
        command: &'static str,
        config: StudyFile,
        rates_source: &'static str,
        rep: usize,
        rep_seed: u64,
        subjects: usize,
        events: usize,
        missing_cells: usize,
        outputs: Vec<&'static str>,
    }
    let (le, lc) = resolved.rates.rates();
    file.rates.lambda_e = Some(le);
    file.rates.lambda_c = Some(lc);
    report::write_manifest(
        &a.out_dir,
        &Manifest {
            tool: tool(),
            command: "simulate",
            config: file,
            rates_source: resolved.rates.label(),
            rep: a.rep,
            rep_seed: seed,
            subjects: cohort.complete.n_subjects(),
            events: cohort.complete.n_events(),
            missing_cells: cohort.masked.n_missing(),
            outputs: OUT.to_vec(),
        },
    )
}

fn cmd_impute(a: &ImputeArgs) -> CliResult<()> {
    let dataset = csvio::ingest_csv(&a.data.data, &a.data.options()?)?;
    let specs = resolve_specs(&a.tve, &dataset, "constant")?;
    let spec_text = spec_strings(&dataset, &specs);
    let imputed = impute(&dataset, specs, &a.impute)?;
    const OUT: [&str; 3] = ["imputations.csv", "diagnostics.csv", "manifest.toml"];
    prepare_out_dir(&a.out_dir, &OUT, &[&a.data.data])?;
    csvio::write_imputations(&a.out_dir.join(OUT[0]), &imputed)?;
    write_imputation_diagnostics(create(&a.out_dir, OUT[1])?, &imputed)?;
    #[derive(Serialize)]
    struct Manifest {
        tool: String,
        command: &'static str,
        data: String,
        kinds: Vec<String>,
        specs: Vec<String>,
        options: ImputeOptionsRecord,
        imputation_seeds: Vec<u64>,
        outputs: Vec<&'static str>,
    }
    report::write_manifest(
        &a.out_dir,
        &Manifest {
            tool: tool(),
            command: "impute",
            data: a.data.data.display().to_string(),
            kinds: kinds_of(&dataset),
            specs: spec_text,
            options: (&a.impute).into(),
            imputation_seeds: imputed.seeds().to_vec(),
            outputs: OUT.to_vec(),
        },
    )
}

fn kinds_of(dataset: &SurvivalDataset) -> Vec<String> {
    dataset.meta().iter().map(|m| format!("{}={}", m.name, m.kind)).collect()
}

fn write_imputation_diagnostics<W: Write>(writer: W, imputed: &ImputedDatasets) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(writer);
    let fail = |e: csv::Error| CliError::Data(format!("diagnostics.csv: {e}"));
    w.write_record([
        "imp",
        "seed",
        "sampled_cells",
        "cap_hits",
        "event_evaluations",
        "clamped",
        "fallbacks",
        "substantive_fits",
        "dropped_columns",
    ])
    .map_err(fail)?;
    for (i, (d, seed)) in imputed.diagnostics().iter().zip(imputed.seeds()).enumerate() {
        w.write_record([
            (i + 1).to_string(),
            seed.to_string(),
            d.sampled_cells.to_string(),
            d.cap_hits.to_string(),
            d.event_evaluations.to_string(),
            d.clamped.to_string(),
            d.fallbacks.to_string(),
            d.substantive_fits.to_string(),
            d.dropped_columns.join(";"),
        ])
        .map_err(fail)?;
    }
    w.flush().map_err(|e| CliError::Data(format!("diagnostics.csv: {e}")))
}

/// A single fitted model or a pooled set, behind one interface.
struct Fitted {
    names: Vec<String>,
    specs: Vec<TveSpec>,
    pooled: PooledEstimate,
    max_follow_up: f64,
    /// Log partial likelihood of a single fit.
    log_likelihood: Option<f64>,
}

impl Fitted {
    fn single(dataset: &SurvivalDataset, specs: &[TveSpec]) -> CliResult<Self> {
        if dataset.has_missing() {
            return Err(CliError::Data(format!(
                "{} missing covariate cells; impute first or pass long-format imputations",
                dataset.n_missing()
            )));
        }
        let x = dataset.require_complete()?.clone();
        let model = fit(dataset, specs, &x)?;
        let d = model.coefficients().len();
        Ok(Fitted {
            names: model.coefficient_names().to_vec(),
            specs: specs.to_vec(),
            pooled: PooledEstimate {
                m: 1,
                coefficients: model.coefficients().clone(),
                within: model.covariance().clone(),
                between: DMatrix::zeros(d, d),
                total: model.covariance().clone(),
            },
            max_follow_up: model.max_follow_up(),
            log_likelihood: Some(model.log_partial_likelihood()),
        })
    }

    fn pooled(imputed: &ImputedDatasets, specs: &[TveSpec]) -> CliResult<Self> {
        let models = fit_imputed(imputed, specs)?;
        let pooled = pool_models(&models)?;
        let names: Vec<String> = imputed.dataset().meta().iter().map(|m| m.name.clone()).collect();
        Ok(Fitted {
            names: CoefficientLayout::new(specs.to_vec()).coefficient_names(&names),
            specs: specs.to_vec(),
            pooled,
            max_follow_up: imputed.dataset().max_time(),
            log_likelihood: None,
        })
    }

    fn load(data: &DataArgs, tve: &[String], default: &str) -> CliResult<(SurvivalDataset, Self)> {
        let options = data.options()?;
        if csvio::is_long_format(&data.data)? {
            let imputed = csvio::read_imputations(&data.data, &options)?;
            let specs = resolve_specs(tve, imputed.dataset(), default)?;
            let fitted = Self::pooled(&imputed, &specs)?;
            Ok((imputed.dataset().clone(), fitted))
        } else {
            let dataset = csvio::ingest_csv(&data.data, &options)?;
            let specs = resolve_specs(tve, &dataset, default)?;
            let fitted = Self::single(&dataset, &specs)?;
            Ok((dataset, fitted))
        }
    }

    fn ph_test(&self, k: usize, mode: WaldMode) -> Option<CliResult<WaldTest>> {
        if !self.specs[k].is_time_varying() {
            return None;
        }
        // a single fit has no between-imputation variance for the F reference
        let mode = if self.pooled.m < 2 { WaldMode::ChiSquare } else { mode };
        Some(pooled_ph_test(&self.pooled, &self.specs, k, mode).map_err(CliError::from))
    }

    fn curve(&self, k: usize, times: &[f64]) -> CliResult<TveCurve> {
        Ok(pooled_curve(&self.pooled, &self.specs, k, times, self.max_follow_up)?)
    }

    /// Flat `key = value` export: specs, coefficients and the covariance lower
    /// triangle (total covariance when pooled).
    fn export(&self, covariates: &[String]) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "imputations = {}", self.pooled.m);
        if let Some(ll) = self.log_likelihood {
            let _ = writeln!(s, "log_partial_likelihood = {ll:e}");
        }
        let _ = writeln!(s, "max_follow_up = {}", self.max_follow_up);
        for (name, spec) in covariates.iter().zip(&self.specs) {
            let _ = writeln!(s, "spec.{name} = {spec}");
        }
        for (name, v) in self.names.iter().zip(self.pooled.coefficients.iter()) {
            let _ = writeln!(s, "coef.{name} = {v:e}");
        }
        for r in 0..self.names.len() {
            for c in 0..=r {
                let _ = writeln!(s, "cov.{}.{} = {:e}", self.names[r], self.names[c], self.pooled.total[(r, c)]);
            }
        }
        s
    }
}

fn reference_label(r: WaldReference) -> String {
    match r {
        WaldReference::ChiSquare => "chisq".into(),
        WaldReference::F { denominator_df } => format!("F({denominator_df})"),
    }
}

struct PhRow {
    covariate: String,
    form: String,
    test: Option<CliResult<WaldTest>>,
}

fn ph_rows(dataset: &SurvivalDataset, fitted: &Fitted, mode: WaldMode) -> Vec<PhRow> {
    dataset
        .meta()
        .iter()
        .enumerate()
        .map(|(k, m)| PhRow {
            covariate: m.name.clone(),
            form: fitted.specs[k].to_string(),
            test: fitted.ph_test(k, mode),
        })
        .collect()
}

fn write_ph_tests<W: Write>(writer: W, rows: &[PhRow], alpha: f64) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(writer);
    let fail = |e: csv::Error| CliError::Data(format!("ph_tests.csv: {e}"));
    w.write_record(["covariate", "form", "statistic", "df", "p_value", "reference", "reject", "note"])
        .map_err(fail)?;
    for r in rows {
        let rec: Vec<String> = match &r.test {
            None => vec![r.covariate.clone(), r.form.clone(), "".into(), "".into(), "".into(), "".into(), "".into(), "constant effect".into()],
            Some(Ok(t)) => vec![
                r.covariate.clone(),
                r.form.clone(),
                format!("{}", t.statistic),
                t.df.to_string(),
                format!("{}", t.p_value),
                reference_label(t.reference),
                (t.p_value < alpha).to_string(),
                "".into(),
            ],
            Some(Err(e)) => vec![r.covariate.clone(), r.form.clone(), "".into(), "".into(), "".into(), "".into(), "".into(), e.to_string()],
        };
        w.write_record(&rec).map_err(fail)?;
    }
    w.flush().map_err(|e| CliError::Data(format!("ph_tests.csv: {e}")))
}

fn write_curves<W: Write>(writer: W, curves: &[(String, TveCurve)]) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(writer);
    let fail = |e: csv::Error| CliError::Data(format!("curves.csv: {e}"));
    w.write_record(["covariate", "t", "estimate", "std_error", "lower95", "upper95", "outside_follow_up"])
        .map_err(fail)?;
    for (name, c) in curves {
        for i in 0..c.times.len() {
            w.write_record([
                name.clone(),
                format!("{}", c.times[i]),
                format!("{}", c.estimate[i]),
                format!("{}", c.std_error[i]),
                format!("{}", c.lower95[i]),
                format!("{}", c.upper95[i]),
                c.outside_follow_up[i].to_string(),
            ])
            .map_err(fail)?;
        }
    }
    w.flush().map_err(|e| CliError::Data(format!("curves.csv: {e}")))
}

fn check_alpha(alpha: f64) -> CliResult<()> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(CliError::Usage(format!("--alpha must lie in (0, 1], got {alpha}")))
    }
}

fn check_grid(points: usize) -> CliResult<()> {
    if points >= 2 {
        Ok(())
    } else {
        Err(CliError::Usage(format!("--grid-points must be at least 2, got {points}")))
    }
}

fn covariate_names(dataset: &SurvivalDataset) -> Vec<String> {
    dataset.meta().iter().map(|m| m.name.clone()).collect()
}

fn cmd_fit(a: &FitArgs) -> CliResult<()> {
    check_alpha(a.alpha)?;
    check_grid(a.grid_points)?;
    let (dataset, fitted) = Fitted::load(&a.data, &a.tve, "constant")?;
    let grid = default_grid(fitted.max_follow_up, a.grid_points);
    let names = covariate_names(&dataset);
    let curves = names
        .iter()
        .enumerate()
        .map(|(k, n)| fitted.curve(k, &grid).map(|c| (n.clone(), c)))
        .collect::<CliResult<Vec<_>>>()?;
    let rows = ph_rows(&dataset, &fitted, a.wald.into());
    const OUT: [&str; 4] = ["model.txt", "curves.csv", "ph_tests.csv", "manifest.toml"];
    prepare_out_dir(&a.out_dir, &OUT, &[&a.data.data])?;
    write_text(&a.out_dir, OUT[0], &fitted.export(&names))?;
    write_curves(create(&a.out_dir, OUT[1])?, &curves)?;
    write_ph_tests(create(&a.out_dir, OUT[2])?, &rows, a.alpha)?;
    #[derive(Serialize)]
    struct Manifest {
        tool: String,
        command: &'static str,
        data: String,
        kinds: Vec<String>,
        imputations: usize,
        specs: Vec<String>,
        wald: String,
        alpha: f64,
        grid_points: usize,
        outputs: Vec<&'static str>,
    }
    report::write_manifest(
        &a.out_dir,
        &Manifest {
            tool: tool(),
            command: "fit",
            data: a.data.data.display().to_string(),
            kinds: kinds_of(&dataset),
            imputations: fitted.pooled.m,
            specs: spec_strings(&dataset, &fitted.specs),
            wald: WaldMode::from(a.wald).to_string(),
            alpha: a.alpha,
            grid_points: a.grid_points,
            outputs: OUT.to_vec(),
        },
    )
}

fn cmd_ph_test(a: &PhTestArgs) -> CliResult<()> {
    check_alpha(a.alpha)?;
    let (dataset, fitted) = Fitted::load(&a.data, &a.tve, "rcs5")?;
    let rows = ph_rows(&dataset, &fitted, a.wald.into());
    println!("{:<16}{:<12}{:>12}{:>6}{:>14}  {}", "covariate", "form", "statistic", "df", "p-value", "reference");
    for r in &rows {
        let form = r.form.split(':').next().unwrap_or_default();
        match &r.test {
            None => println!("{:<16}{:<12}{:>12}", r.covariate, form, "-"),
            Some(Ok(t)) => println!(
                "{:<16}{:<12}{:>12.4}{:>6}{:>14.4e}  {}{}",
                r.covariate,
                form,
                t.statistic,
                t.df,
                t.p_value,
                reference_label(t.reference),
                if t.p_value < a.alpha { "  *" } else { "" }
            ),
            Some(Err(e)) => println!("{:<16}{:<12}  failed: {e}", r.covariate, form),
        }
    }
    if let Some(dir) = &a.out_dir {
        prepare_out_dir(dir, &["ph_tests.csv"], &[&a.data.data])?;
        write_ph_tests(create(dir, "ph_tests.csv")?, &rows, a.alpha)?;
    }
    Ok(())
}

fn write_trace<W: Write>(writer: W, trace: &SelectionTrace, names: &[String]) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(writer);
    let fail = |e: csv::Error| CliError::Data(format!("selection_trace.csv: {e}"));
    w.write_record(["round", "covariate", "form", "p_value", "adopted", "failure"]).map_err(fail)?;
    for s in &trace.steps {
        w.write_record([
            s.round.to_string(),
            names[s.covariate].clone(),
            s.form.to_string(),
            format!("{}", s.p_value),
            s.accepted.to_string(),
            s.failure.clone().unwrap_or_default(),
        ])
        .map_err(fail)?;
    }
    w.flush().map_err(|e| CliError::Data(format!("selection_trace.csv: {e}")))
}

fn cmd_select(a: &SelectArgs) -> CliResult<()> {
    check_alpha(a.alpha)?;
    check_grid(a.grid_points)?;
    if a.forms.is_empty() {
        return Err(CliError::Usage("--forms needs at least one form".into()));
    }
    let options = a.data.options()?;
    let long = csvio::is_long_format(&a.data.data)?;
    let imputed = if long {
        csvio::read_imputations(&a.data.data, &options)?
    } else {
        let dataset = csvio::ingest_csv(&a.data.data, &options)?;
        if a.impute.m < 2 {
            return Err(CliError::Usage(format!("--m {}: pooling needs at least 2 imputations", a.impute.m)));
        }
        // the imputation model allows a 5-knot spline effect for every covariate
        let knots = select_knots(&dataset.observed_event_times(), 5)?;
        let specs = vec![TveSpec::rcs(knots)?; dataset.n_covariates()];
        impute(&dataset, specs, &a.impute)?
    };
    let dataset = imputed.dataset().clone();
    let names = covariate_names(&dataset);
    let candidates: Vec<usize> = if a.candidates.is_empty() {
        (0..names.len()).collect()
    } else {
        a.candidates
            .iter()
            .map(|c| {
                dataset
                    .covariate_index(c.trim())
                    .ok_or_else(|| CliError::Usage(format!("--candidates: no covariate named {c:?}")))
            })
            .collect::<CliResult<_>>()?
    };
    let mode: WaldMode = a.wald.into();
    let trace = mi_mtve_select(&imputed, &candidates, a.alpha, &a.forms, mode)
        .map_err(|e| CliError::from(e).context("selection"))?;
    let fitted = Fitted::pooled(&imputed, &trace.final_specs).map_err(|e| e.context("final model"))?;
    let grid = default_grid(fitted.max_follow_up, a.grid_points);
    let curves = trace
        .adopted()
        .into_iter()
        .map(|(k, _)| fitted.curve(k, &grid).map(|c| (names[k].clone(), c)))
        .collect::<CliResult<Vec<_>>>()?;
    const OUT: [&str; 4] = ["selection_trace.csv", "final_model.txt", "curves.csv", "manifest.toml"];
    let mut outputs = OUT.to_vec();
    if !long {
        outputs.push("imputations.csv");
    }
    prepare_out_dir(&a.out_dir, &outputs, &[&a.data.data])?;
    write_trace(create(&a.out_dir, OUT[0])?, &trace, &names)?;
    write_text(&a.out_dir, OUT[1], &fitted.export(&names))?;
    write_curves(create(&a.out_dir, OUT[2])?, &curves)?;
    if !long {
        csvio::write_imputations(&a.out_dir.join("imputations.csv"), &imputed)?;
    }
    #[derive(Serialize)]
    struct Manifest {
        tool: String,
        command: &'static str,
        data: String,
        kinds: Vec<String>,
        imputation: Option<ImputeOptionsRecord>,
        imputations: usize,
        alpha: f64,
        forms: Vec<String>,
        candidates: Vec<String>,
        wald: String,
        adopted: Vec<String>,
        final_specs: Vec<String>,
        outputs: Vec<&'static str>,
    }
    report::write_manifest(
        &a.out_dir,
        &Manifest {
            tool: tool(),
            command: "select",
            data: a.data.data.display().to_string(),
            kinds: kinds_of(&dataset),
            imputation: (!long).then(|| (&a.impute).into()),
            imputations: imputed.m(),
            alpha: a.alpha,
            forms: a.forms.iter().map(|f| f.to_string()).collect(),
            candidates: candidates.iter().map(|&k| names[k].clone()).collect(),
            wald: mode.to_string(),
            adopted: trace.adopted().iter().map(|(k, f)| format!("{}={f}", names[*k])).collect(),
            final_specs: spec_strings(&dataset, &trace.final_specs),
            outputs,
        },
    )?;
    let adopted = trace.adopted();
    if adopted.is_empty() {
        println!("no time-varying effects adopted at alpha = {}", a.alpha);
    }
    for (k, f) in adopted {
        println!("adopted {} with a {f} time-varying effect", names[k]);
    }
    Ok(())
}

fn cmd_replicate(a: &ReplicateArgs) -> CliResult<()> {
    let mut file = StudyFile::load(&a.config)?;
    if let Some(seed) = a.seed {
        file.study.seed = seed;
    }
    if let Some(reps) = a.reps {
        file.study.reps = reps;
    }
    if let Some(m) = a.m {
        file.study.m = m;
    }
    let base = a.config.parent().unwrap_or(Path::new("."));
    let resolved = file.resolve(base)?;
    let config = &resolved.config;
    let threads = runner::worker_count()?;
    log::info!(
        "scenario {} {}: {} replications on {threads} workers",
        config.scenario,
        config.covariate_kind,
        config.n_reps
    );
    let outputs = [
        report::SUMMARY_FILE,
        report::CURVES_FILE,
        report::DIAGNOSTICS_FILE,
        report::REPS_FILE,
        report::MANIFEST_FILE,
    ];
    prepare_out_dir(&a.out_dir, &outputs, &[&a.config])?;
    let (outcomes, perf) = runner::run_study(config, threads)?;
    report::write_study_files(&a.out_dir, &perf, &outcomes, config.scenario)?;
    let seeds = (0..config.n_reps).map(|r| config.rep_seed(r)).collect();
    let manifest = StudyManifest::new("replicate", &file, &resolved.rates, &perf, seeds, threads);
    report::write_manifest(&a.out_dir, &manifest)?;
    print!("{}", report::render_summary(&report::read_summary(&a.out_dir.join(report::SUMMARY_FILE))?));
    let failures = perf.total_failures();
    if failures > 0 {
        return Err(CliError::Numerical(format!(
            "{failures} failures ({} in cohort generation) across {} replications; see {}",
            perf.generation_failures,
            config.n_reps,
            a.out_dir.join(report::REPS_FILE).display()
        )));
    }
    Ok(())
}

fn cmd_report(a: &ReportArgs) -> CliResult<()> {
    let path = if a.path.is_dir() { a.path.join(report::SUMMARY_FILE) } else { a.path.clone() };
    let table = report::read_summary(&path)?;
    print!("{}", report::render_summary(&table));
    Ok(())
}
