//! Study outputs: summary, curve, diagnostics and per-replication CSV files, the
//! run manifest, and a plain-text rendering of a summary.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use tvemi_core::sim::{Method, PerformanceReport, RepOutcome, EVALUATION_TIMES};

use crate::config::{RateSource, StudyFile};
use crate::error::{CliError, CliResult};

pub const SUMMARY_FILE: &str = "summary.csv";
pub const CURVES_FILE: &str = "curves.csv";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.csv";
pub const REPS_FILE: &str = "reps.csv";
pub const MANIFEST_FILE: &str = "manifest.toml";

fn num(v: f64) -> String {
    format!("{v}")
}

fn csv_error(path: &str) -> impl Fn(csv::Error) -> CliError + '_ {
    move |e| CliError::Data(format!("{path}: {e}"))
}

/// One row per method × covariate × metric × time point.
pub fn write_summary_to<W: Write>(writer: W, report: &PerformanceReport) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(writer);
    let fail = csv_error(SUMMARY_FILE);
    w.write_record(["method", "covariate", "metric", "time", "value", "mcse", "lower95", "upper95"])
        .map_err(&fail)?;
    for m in &report.methods {
        let method = m.method.to_string();
        let count = |metric: &str, v: usize| vec![method.clone(), String::new(), metric.into(), String::new(), v.to_string()];
        for row in [count("successes", m.successes), count("failures", m.failures)] {
            let mut row = row;
            row.extend([String::new(), String::new(), String::new()]);
            w.write_record(&row).map_err(&fail)?;
        }
        for c in &m.covariates {
            for p in &c.points {
                let t = num(p.time);
                let rows: [(&str, f64, f64, f64, f64); 5] = [
                    ("truth", p.truth, f64::NAN, f64::NAN, f64::NAN),
                    ("reference", p.reference, f64::NAN, f64::NAN, f64::NAN),
                    ("estimate", p.mean_estimate, p.bias_mcse, f64::NAN, f64::NAN),
                    ("bias", p.bias, p.bias_mcse, p.bias_lower95, p.bias_upper95),
                    ("coverage", p.coverage, p.coverage_mcse, f64::NAN, f64::NAN),
                ];
                for (metric, value, mcse, lo, hi) in rows {
                    let opt = |v: f64| if v.is_nan() && metric != "bias" { String::new() } else { num(v) };
                    w.write_record([
                        method.clone(),
                        c.name.clone(),
                        metric.into(),
                        t.clone(),
                        num(value),
                        opt(mcse),
                        opt(lo),
                        opt(hi),
                    ])
                    .map_err(&fail)?;
                }
            }
            w.write_record([
                method.clone(),
                c.name.clone(),
                "rejection".into(),
                String::new(),
                num(c.rejection),
                num(c.rejection_mcse),
                String::new(),
                String::new(),
            ])
            .map_err(&fail)?;
        }
    }
    w.flush().map_err(|e| CliError::Data(format!("{SUMMARY_FILE}: {e}")))
}

/// Mean curves and per-replication quantiles over the study grid.
pub fn write_curves_to<W: Write>(writer: W, report: &PerformanceReport, scenario: u8) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(writer);
    let fail = csv_error(CURVES_FILE);
    w.write_record(["method", "covariate", "t", "truth", "mean", "q025", "q50", "q975"])
        .map_err(&fail)?;
    for m in &report.methods {
        for (k, c) in m.covariates.iter().enumerate() {
            for (g, &t) in report.grid.iter().enumerate() {
                let truth = tvemi_core::sim::true_effect(scenario, k, t)?;
                let q = c.curve_quantiles[g];
                w.write_record([
                    m.method.to_string(),
                    c.name.clone(),
                    num(t),
                    num(truth),
                    num(c.mean_curve[g]),
                    num(q[0]),
                    num(q[1]),
                    num(q[2]),
                ])
                .map_err(&fail)?;
            }
        }
    }
    w.flush().map_err(|e| CliError::Data(format!("{CURVES_FILE}: {e}")))
}

/// Imputation diagnostics summed over successful replications.
pub fn write_diagnostics_to<W: Write>(writer: W, report: &PerformanceReport) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(writer);
    let fail = csv_error(DIAGNOSTICS_FILE);
    w.write_record([
        "method",
        "sampled_cells",
        "cap_hits",
        "event_evaluations",
        "clamped",
        "clamp_fraction",
        "fallbacks",
        "substantive_fits",
        "dropped_columns",
    ])
    .map_err(&fail)?;
    for m in &report.methods {
        if let Some(d) = &m.diagnostics {
            w.write_record([
                m.method.to_string(),
                d.sampled_cells.to_string(),
                d.cap_hits.to_string(),
                d.event_evaluations.to_string(),
                d.clamped.to_string(),
                num(d.clamp_fraction()),
                d.fallbacks.to_string(),
                d.substantive_fits.to_string(),
                d.dropped_columns.join(";"),
            ])
            .map_err(&fail)?;
        }
    }
    w.flush().map_err(|e| CliError::Data(format!("{DIAGNOSTICS_FILE}: {e}")))
}

/// Per replication, method and covariate: the test p-value and the estimates at
/// the evaluation times, or the failure.
pub fn write_reps_to<W: Write>(writer: W, outcomes: &[RepOutcome]) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(writer);
    let fail = csv_error(REPS_FILE);
    let mut header = vec!["rep".to_string(), "seed".into(), "method".into(), "covariate".into(), "ph_p_value".into()];
    for t in EVALUATION_TIMES {
        header.extend([format!("estimate_{t}"), format!("lower95_{t}"), format!("upper95_{t}")]);
    }
    header.push("failure".into());
    w.write_record(&header).map_err(&fail)?;
    for o in outcomes {
        for (method, result) in &o.methods {
            for (k, name) in ["x1", "x2"].iter().enumerate() {
                let mut row = vec![o.rep.to_string(), o.seed.to_string(), method.to_string(), name.to_string()];
                match result {
                    Ok(r) => {
                        row.push(num(r.ph_p_values[k]));
                        for &(e, lo, hi) in &r.points[k] {
                            row.extend([num(e), num(lo), num(hi)]);
                        }
                        row.push(String::new());
                    }
                    Err(f) => {
                        row.extend(std::iter::repeat_n(String::new(), 1 + 3 * EVALUATION_TIMES.len()));
                        row.push(format!("{}: {}", f.category, f.message));
                    }
                }
                w.write_record(&row).map_err(&fail)?;
            }
        }
    }
    w.flush().map_err(|e| CliError::Data(format!("{REPS_FILE}: {e}")))
}

fn create(dir: &Path, name: &str) -> CliResult<File> {
    let path = dir.join(name);
    File::create(&path).map_err(|e| CliError::io(&path, e))
}

/// Everything needed to re-derive a study's outputs.
#[derive(Debug, Clone, Serialize)]
pub struct StudyManifest {
    pub tool: String,
    pub command: String,
    pub config: StudyFile,
    pub rates_source: String,
    pub lambda_e: f64,
    pub lambda_c: f64,
    pub calibration: Option<crate::config::CacheEntry>,
    pub threads: usize,
    pub rep_seeds: Vec<u64>,
    pub failures: BTreeMap<String, BTreeMap<String, usize>>,
    pub cohort: Option<CohortSummary>,
    pub outputs: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CohortSummary {
    pub event_fraction: f64,
    pub dropout_fraction: f64,
    pub missing_x1: f64,
    pub missing_x2: f64,
    pub missing_any: f64,
    pub generation_failures: usize,
}

impl StudyManifest {
    pub fn new(
        command: &str,
        file: &StudyFile,
        rates: &RateSource,
        report: &PerformanceReport,
        rep_seeds: Vec<u64>,
        threads: usize,
    ) -> Self {
        let (lambda_e, lambda_c) = rates.rates();
        let mut config = file.clone();
        config.rates.lambda_e = Some(lambda_e);
        config.rates.lambda_c = Some(lambda_c);
        let failures = report
            .methods
            .iter()
            .filter(|m| m.failures > 0)
            .map(|m| (m.method.to_string(), m.failure_categories.iter().cloned().collect()))
            .collect();
        StudyManifest {
            tool: format!("tvemi {}", env!("CARGO_PKG_VERSION")),
            command: command.into(),
            config,
            rates_source: rates.label().into(),
            lambda_e,
            lambda_c,
            calibration: rates.entry().cloned(),
            threads,
            rep_seeds,
            failures,
            cohort: report.cohort.map(|c| CohortSummary {
                event_fraction: c.event_fraction,
                dropout_fraction: c.dropout_fraction,
                missing_x1: c.missing_first,
                missing_x2: c.missing_second,
                missing_any: c.missing_any,
                generation_failures: report.generation_failures,
            }),
            outputs: [SUMMARY_FILE, CURVES_FILE, DIAGNOSTICS_FILE, REPS_FILE, MANIFEST_FILE]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        }
    }
}

/// Serialize any manifest to TOML in `dir`.
pub fn write_manifest<T: Serialize>(dir: &Path, manifest: &T) -> CliResult<()> {
    let text = toml::to_string(manifest).map_err(|e| CliError::Data(format!("{MANIFEST_FILE}: {e}")))?;
    let mut f = create(dir, MANIFEST_FILE)?;
    f.write_all(text.as_bytes()).map_err(|e| CliError::io(&dir.join(MANIFEST_FILE), e))
}

/// Write the summary, curve, diagnostics and per-replication files into `dir`.
pub fn write_study_files(dir: &Path, report: &PerformanceReport, outcomes: &[RepOutcome], scenario: u8) -> CliResult<()> {
    write_summary_to(create(dir, SUMMARY_FILE)?, report)?;
    write_curves_to(create(dir, CURVES_FILE)?, report, scenario)?;
    write_diagnostics_to(create(dir, DIAGNOSTICS_FILE)?, report)?;
    write_reps_to(create(dir, REPS_FILE)?, outcomes)
}

/// A summary file read back as `(method, covariate, metric, time) -> (value, mcse)`.
pub type SummaryTable = BTreeMap<(String, String, String, String), (f64, f64)>;

pub fn read_summary(path: &Path) -> CliResult<SummaryTable> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let header = rdr.headers().map_err(|e| CliError::io(path, e))?.clone();
    let expected = ["method", "covariate", "metric", "time", "value", "mcse"];
    if header.iter().take(6).ne(expected.iter().copied()) {
        return Err(CliError::Data(format!("{}: not a summary file", path.display())));
    }
    let mut out = SummaryTable::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Data(format!("{}: row {}: {e}", path.display(), r + 1)))?;
        let parse = |c: usize| -> CliResult<f64> {
            let cell = &rec[c];
            if cell.is_empty() {
                return Ok(f64::NAN);
            }
            cell.parse()
                .map_err(|_| CliError::Data(format!("{}: row {}, column {}: bad number", path.display(), r + 1, expected[c])))
        };
        out.insert(
            (rec[0].to_string(), rec[1].to_string(), rec[2].to_string(), rec[3].to_string()),
            (parse(4)?, parse(5)?),
        );
    }
    Ok(out)
}

/// Tables of rejection percentages, bias and coverage, one row per method.
pub fn render_summary(table: &SummaryTable) -> String {
    let mut methods: Vec<String> = Vec::new();
    for (m, _, _, _) in table.keys() {
        if !methods.contains(m) {
            methods.push(m.clone());
        }
    }
    // canonical method order when names are known
    methods.sort_by_key(|m| m.parse::<Method>().map(|x| x as usize).unwrap_or(usize::MAX));
    let get = |m: &str, c: &str, metric: &str, t: &str| table.get(&(m.into(), c.into(), metric.into(), t.into())).copied();
    let fmt = |v: Option<(f64, f64)>, digits: usize| match v {
        Some((x, se)) if !se.is_nan() => format!("{x:.digits$} ({se:.digits$})"),
        Some((x, _)) => format!("{x:.digits$}"),
        None => "-".into(),
    };
    let mut s = String::new();
    let _ = writeln!(s, "Proportional hazards rejections, % (Monte Carlo SE)");
    let _ = writeln!(s, "{:<16}{:>18}{:>18}{:>8}{:>8}", "method", "x1", "x2", "ok", "failed");
    for m in &methods {
        let count = |metric| get(m, "", metric, "").map(|v| format!("{}", v.0)).unwrap_or_default();
        let _ = writeln!(
            s,
            "{:<16}{:>18}{:>18}{:>8}{:>8}",
            m,
            fmt(get(m, "x1", "rejection", ""), 1),
            fmt(get(m, "x2", "rejection", ""), 1),
            count("successes"),
            count("failures")
        );
    }
    for cov in ["x1", "x2"] {
        let _ = writeln!(s, "\nBias of {cov} (Monte Carlo SE); coverage %");
        let mut head = format!("{:<16}", "method");
        for t in EVALUATION_TIMES {
            let _ = write!(head, "{:>20}{:>10}", format!("bias t={t}"), "cov");
        }
        let _ = writeln!(s, "{head}");
        for m in &methods {
            let mut line = format!("{m:<16}");
            for t in EVALUATION_TIMES {
                let t = num(t);
                let _ = write!(
                    line,
                    "{:>20}{:>10}",
                    fmt(get(m, cov, "bias", &t), 3),
                    fmt(get(m, cov, "coverage", &t).map(|v| (v.0, f64::NAN)), 1)
                );
            }
            let _ = writeln!(s, "{line}");
        }
    }
    s
}
