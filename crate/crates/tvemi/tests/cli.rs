use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tvemi(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tvemi"))
        .args(args)
        .current_dir(dir)
        .env_remove("TVEMI_THREADS")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

const SMOKE: &str = r#"
[scenario]
id = 1
covariates = "binary"

[rates]
lambda_e = 0.0123
lambda_c = 0.0754

[study]
reps = 10
m = 2
fcs_iterations = 2
seed = 7
"#;

#[test]
fn replicate_smoke_run_emits_all_files() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("study.toml"), SMOKE).unwrap();
    let out = tvemi(&["replicate", "--config", "study.toml", "--out-dir", "out"], dir.path());
    for f in ["summary.csv", "curves.csv", "manifest.toml", "reps.csv", "diagnostics.csv"] {
        assert!(dir.path().join("out").join(f).is_file(), "{f} missing: {}", stderr(&out));
    }
    // the exit code reports whether any replication failed
    let summary = fs::read_to_string(dir.path().join("out/summary.csv")).unwrap();
    let failures: f64 = summary
        .lines()
        .filter(|l| l.contains(",,failures,,"))
        .map(|l| l.split(',').nth(4).unwrap().parse::<f64>().unwrap())
        .sum();
    assert_eq!(code(&out) == 0, failures == 0.0, "{}", stderr(&out));
    assert!(code(&out) == 0 || code(&out) == 3);
    let manifest = fs::read_to_string(dir.path().join("out/manifest.toml")).unwrap();
    assert!(manifest.contains("rep_seeds"));
    assert!(manifest.contains("seed = 7"));

    let report = tvemi(&["report", "out"], dir.path());
    assert_eq!(code(&report), 0);
    assert!(String::from_utf8_lossy(&report.stdout).contains("mi-tve-smc"));
}

#[test]
fn same_config_and_seed_give_identical_summaries() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMOKE.replace("reps = 10", "reps = 3").replace("m = 2", "m = 2\nmethods = [\"mi-tve-approx\", \"mi-tve-smc\"]");
    fs::write(dir.path().join("study.toml"), text).unwrap();
    let a = tvemi(&["replicate", "--config", "study.toml", "--out-dir", "a"], dir.path());
    let b = tvemi(&["replicate", "--config", "study.toml", "--out-dir", "b"], dir.path());
    assert_eq!(code(&a), code(&b));
    let sa = fs::read(dir.path().join("a/summary.csv")).unwrap();
    let sb = fs::read(dir.path().join("b/summary.csv")).unwrap();
    assert!(!sa.is_empty());
    assert_eq!(sa, sb);
    // a different seed changes the results
    let c = tvemi(&["replicate", "--config", "study.toml", "--seed", "8", "--out-dir", "c"], dir.path());
    assert!(code(&c) == 0 || code(&c) == 3);
    assert_ne!(sa, fs::read(dir.path().join("c/summary.csv")).unwrap());
}

#[test]
fn schema_errors_exit_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.toml"), SMOKE.replace("id = 1", "id = 9")).unwrap();
    let out = tvemi(&["replicate", "--config", "bad.toml", "--out-dir", "out"], dir.path());
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("scenario.id"), "{}", stderr(&out));

    fs::write(dir.path().join("typo.toml"), SMOKE.replace("reps = 10", "repz = 10")).unwrap();
    let out = tvemi(&["replicate", "--config", "typo.toml", "--out-dir", "out"], dir.path());
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("repz"), "{}", stderr(&out));

    assert_eq!(code(&tvemi(&["frobnicate"], dir.path())), 1);
    assert_eq!(code(&tvemi(&["--help"], dir.path())), 0);
}

/// Cohort with a binary `x1` whose log hazard ratio is `a + b t` and a
/// uniform `x2` with constant effect 0.5; censoring is uniform on (0, 10).
fn tve_cohort(n: usize, a: f64, b: f64, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = 0.2;
    let mut s = String::from("time,event,x1,x2\n");
    for _ in 0..n {
        let x1 = if rng.random::<f64>() < 0.5 { 1.0 } else { 0.0 };
        let x2: f64 = rng.random::<f64>() * 2.0 - 1.0;
        let e = -(1.0 - rng.random::<f64>()).ln() / (base * (0.5 * x2).exp());
        // invert the cumulative hazard of exp((a + b t) x1)
        let t_event = if x1 == 0.0 || b == 0.0 {
            e / (a * x1).exp()
        } else {
            let arg = 1.0 + e * b / a.exp();
            if arg > 0.0 {
                arg.ln() / b
            } else {
                f64::INFINITY
            }
        };
        let c = 10.0 * rng.random::<f64>();
        let (t, d) = if t_event <= c { (t_event, 1) } else { (c, 0) };
        s.push_str(&format!("{t},{d},{x1},{x2}\n"));
    }
    s
}

fn trace_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

#[test]
fn selection_adopts_a_strong_linear_effect() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("tve.csv"), tve_cohort(800, 1.5, -0.5, 3)).unwrap();
    let before = fs::read(dir.path().join("tve.csv")).unwrap();
    let out = tvemi(&["select", "--data", "tve.csv", "--m", "2", "--out-dir", "sel"], dir.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let rows = trace_rows(&dir.path().join("sel/selection_trace.csv"));
    let adopted: Vec<&Vec<String>> = rows.iter().filter(|r| r[4] == "true").collect();
    assert!(!adopted.is_empty());
    assert_eq!(adopted[0][1], "x1");
    assert!(adopted.iter().all(|r| r[1] != "x2"));
    let curves = fs::read_to_string(dir.path().join("sel/curves.csv")).unwrap();
    assert!(curves.lines().skip(1).all(|l| l.starts_with("x1,")));
    let model = fs::read_to_string(dir.path().join("sel/final_model.txt")).unwrap();
    assert!(model.contains("spec.x2 = constant"));
    // inputs are never modified
    assert_eq!(before, fs::read(dir.path().join("tve.csv")).unwrap());
}

#[test]
fn tiny_alpha_selects_nothing_on_null_data() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("null.csv"), tve_cohort(400, 0.5, 0.0, 4)).unwrap();
    let out = tvemi(&["select", "--data", "null.csv", "--m", "2", "--alpha", "1e-12", "--out-dir", "sel"], dir.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let rows = trace_rows(&dir.path().join("sel/selection_trace.csv"));
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|r| r[4] == "false"));
    let model = fs::read_to_string(dir.path().join("sel/final_model.txt")).unwrap();
    assert!(model.contains("spec.x1 = constant") && model.contains("spec.x2 = constant"));
}

#[test]
fn selection_with_one_imputation_is_a_contract_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("d.csv"), tve_cohort(100, 0.5, 0.0, 5)).unwrap();
    let out = tvemi(&["select", "--data", "d.csv", "--m", "1", "--out-dir", "sel"], dir.path());
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("at least 2"), "{}", stderr(&out));
}

#[test]
fn impute_then_fit_pools_the_imputations() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = tve_cohort(300, 0.5, 0.0, 6);
    // blank out every seventh x2 value
    text = text
        .lines()
        .enumerate()
        .map(|(i, l)| {
            if i > 0 && i % 7 == 0 {
                let mut cells: Vec<&str> = l.split(',').collect();
                cells[3] = "NA";
                cells.join(",")
            } else {
                l.to_string()
            }
        })
        .collect::<Vec<_>>()
        .join("\n");
    fs::write(dir.path().join("d.csv"), &text).unwrap();
    let imp = tvemi(
        &["impute", "--data", "d.csv", "--method", "smc", "--tve", "x1=rcs3", "--m", "3", "--out-dir", "imp"],
        dir.path(),
    );
    assert_eq!(code(&imp), 0, "{}", stderr(&imp));
    let long = fs::read_to_string(dir.path().join("imp/imputations.csv")).unwrap();
    assert!(long.starts_with("imp,id,time,event,x1,x2"));
    assert_eq!(long.lines().count(), 1 + 4 * 300);

    let fit = tvemi(&["fit", "--data", "imp/imputations.csv", "--tve", "x1=linear", "--out-dir", "fit"], dir.path());
    assert_eq!(code(&fit), 0, "{}", stderr(&fit));
    let model = fs::read_to_string(dir.path().join("fit/model.txt")).unwrap();
    assert!(model.starts_with("imputations = 3"));
    let ph = fs::read_to_string(dir.path().join("fit/ph_tests.csv")).unwrap();
    assert!(ph.lines().nth(1).unwrap().starts_with("x1,linear,"));

    // the incomplete file itself cannot be fitted
    let bad = tvemi(&["fit", "--data", "d.csv", "--out-dir", "fit2"], dir.path());
    assert_eq!(code(&bad), 2);
}

#[test]
fn data_errors_exit_with_data_code() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.csv"), "time,event,x\n1,0,1\n2,2,0\n").unwrap();
    let out = tvemi(&["ph-test", "--data", "bad.csv"], dir.path());
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("row 2"), "{}", stderr(&out));
    let out = tvemi(&["ph-test", "--data", "missing.csv"], dir.path());
    assert_eq!(code(&out), 2);
}
