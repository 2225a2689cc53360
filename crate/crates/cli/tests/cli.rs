use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_multidetect"))
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

fn write(dir: &TempDir, name: &str, text: &str) -> String {
    let p = dir.path().join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

/// Small, fast experiment on the default two-stream setup.
const SMALL: &str = r#"
[experiment]
trials = 60
horizon = 300
thetas = [1.0]
fixed_nu = [0]
"#;

// ---------------------------------------------------------------------------
// detect
// ---------------------------------------------------------------------------

#[test]
fn empty_data_file_exits_2() {
    let dir = TempDir::new().unwrap();
    let data = write(&dir, "empty.csv", "");
    let out = run(&["detect", &data]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    assert!(stderr(&out).contains("empty"));
}

#[test]
fn nan_cell_exits_2_with_row_number() {
    let dir = TempDir::new().unwrap();
    let data = write(
        &dir,
        "nan.csv",
        "t,stream_1,stream_2\n1,0.1,0.2\n2,0.3,0.4\n3,NaN,0.1\n",
    );
    let out = run(&["detect", &data]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("row 4"), "{}", stderr(&out));
}

#[test]
fn malformed_data_exits_2() {
    let dir = TempDir::new().unwrap();
    for (name, text) in [
        ("header.csv", "time,a,b\n1,0,0\n"),
        ("short.csv", "t,stream_1,stream_2\n1,0\n"),
        ("gap.csv", "t,stream_1,stream_2\n1,0,0\n3,0,0\n"),
    ] {
        let data = write(&dir, name, text);
        assert_eq!(code(&run(&["detect", &data])), 2, "{name}");
    }
}

#[test]
fn fixture_verdict_is_frozen() {
    let config = fixture("detect.toml");
    let out = run(&[
        "--config",
        config.to_str().unwrap(),
        "detect",
        fixture("change_nu50.csv").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let v = json(&out);
    assert_eq!(v["stopped"], true);
    assert_eq!(v["d"], 2);
    assert_eq!(v["T"], 60);
    assert!(v["censored_at"].is_null());
    assert_eq!(v["log_statistics_at_T"]["n"], 60);
    let lbar = &v["log_statistics_at_T"]["log_lambda_bar"];
    assert!(lbar[1][2].is_null(), "diagonal is null");
    // alarm requires log Lbar_20 >= log A_0 = log(999)
    assert!(lbar[1][0].as_f64().unwrap() >= 999f64.ln());
}

#[test]
fn emitted_path_reproduces_fixture() {
    let dir = TempDir::new().unwrap();
    let out_path = dir.path().join("path.csv");
    let config = fixture("detect.toml");
    let out = run(&[
        "--config",
        config.to_str().unwrap(),
        "simulate",
        "--emit-path",
        out_path.to_str().unwrap(),
        "--stream",
        "2",
        "--nu",
        "50",
        "--length",
        "200",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(
        fs::read(out_path).unwrap(),
        fs::read(fixture("change_nu50.csv")).unwrap()
    );
}

fn stopping_time(dir: &TempDir, alpha: f64) -> Option<u64> {
    let config = write(
        dir,
        &format!("a{alpha}.toml"),
        &format!("[targets]\nalpha = {alpha}\nbeta = {alpha}\n"),
    );
    let out = run(&[
        "--config",
        &config,
        "detect",
        fixture("change_nu50.csv").to_str().unwrap(),
    ]);
    match code(&out) {
        0 => Some(json(&out)["T"].as_u64().unwrap()),
        3 => None,
        c => panic!("exit {c}: {}", stderr(&out)),
    }
}

#[test]
fn stricter_targets_never_stop_earlier() {
    let dir = TempDir::new().unwrap();
    let loose = stopping_time(&dir, 0.5).expect("loose thresholds stop");
    let strict = stopping_time(&dir, 0.001);
    assert!(strict.is_none_or(|t| t >= loose), "loose {loose}, strict {strict:?}");
}

#[test]
fn censored_run_exits_3() {
    let dir = TempDir::new().unwrap();
    let data = write(&dir, "flat.csv", "t,stream_1,stream_2\n1,0,0\n2,0,0\n3,0,0\n");
    let out = run(&["detect", &data]);
    assert_eq!(code(&out), 3);
    let v = json(&out);
    assert_eq!(v["stopped"], false);
    assert_eq!(v["censored_at"], 3);
    assert!(v["T"].is_null());
}

#[test]
fn frame_dump_has_one_row_per_criterion() {
    let dir = TempDir::new().unwrap();
    let frames = dir.path().join("frames.csv");
    let config = fixture("detect.toml");
    let out = run(&[
        "--config",
        config.to_str().unwrap(),
        "detect",
        fixture("change_nu50.csv").to_str().unwrap(),
        "--frames",
        frames.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let text = fs::read_to_string(frames).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("n,stream,j,logLambdaBar"));
    // two streams, two criteria each, per step up to T = 60
    assert_eq!(lines.count(), 60 * 4);
}

// ---------------------------------------------------------------------------
// calibrate
// ---------------------------------------------------------------------------

#[test]
fn calibrate_standard_targets() {
    let dir = TempDir::new().unwrap();
    let config = write(&dir, "c.toml", "[targets]\nalpha = [0.1, 0.1]\nbeta = 0.1\n");
    let out = run(&["--config", &config, "calibrate"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let v = json(&out);
    assert_eq!(v["mode"], "standard");
    let log_a = &v["thresholds"]["log_a"];
    for i in 0..2 {
        let a0 = log_a[i][0].as_f64().unwrap().exp();
        assert!((a0 - 9.0).abs() < 1e-12, "{a0}");
        let j = 2 - i;
        let aij = log_a[i][j].as_f64().unwrap().exp();
        assert!((aij - 1.0 / (0.9 * 0.1)).abs() < 1e-10, "{aij}");
        assert!(log_a[i][i + 1].is_null());
        assert!((v["pfa_bound"]["per_stream"][i].as_f64().unwrap() - 0.1).abs() < 1e-15);
    }
    assert!(!v["psi"].as_array().unwrap().is_empty());
}

#[test]
fn calibrate_without_beta_uses_star_mode() {
    let dir = TempDir::new().unwrap();
    let config = write(&dir, "c.toml", "[targets]\nalpha = 0.1\nbeta_bar = [0.1, 0.2]\n");
    let v = json(&run(&["--config", &config, "calibrate"]));
    assert_eq!(v["mode"], "star");
    // A_0 = (N / alpha)(1 - alpha / N) = 19
    assert!((v["thresholds"]["log_a"][0][0].as_f64().unwrap() - 19f64.ln()).abs() < 1e-12);
}

#[test]
fn bayes_mode_reports_gammas() {
    let dir = TempDir::new().unwrap();
    let config = write(&dir, "c.toml", "[targets]\nalpha = 0.1\nbeta = 0.1\np = [0.3, 0.7]\n");
    let v = json(&run(&["--config", &config, "calibrate"]));
    assert_eq!(v["mode"], "bayes");
    assert!(v["bayes"]["gamma0"].as_f64().unwrap() > 0.0);
}

#[test]
fn invalid_targets_exit_2() {
    let dir = TempDir::new().unwrap();
    for (name, targets) in [
        ("big.toml", "alpha = [1.5, 0.1]\nbeta = 0.1"),
        ("len.toml", "alpha = [0.1]\nbeta = 0.1"),
        ("both.toml", "alpha = 0.1\nbeta = 0.1\nbeta_bar = [0.1, 0.1]"),
        ("none.toml", "alpha = [0.1, 0.1]"),
    ] {
        let config = write(&dir, name, &format!("[targets]\n{targets}\n"));
        let out = run(&["--config", &config, "calibrate"]);
        assert_eq!(code(&out), 2, "{name}");
        assert!(stderr(&out).starts_with("error:"), "{name}");
    }
}

#[test]
fn bad_config_exits_2() {
    let dir = TempDir::new().unwrap();
    let config = write(&dir, "c.toml", "[prior]\nrate = 3\n");
    assert_eq!(code(&run(&["--config", &config, "calibrate"])), 2);
    assert_eq!(code(&run(&["--config", "/nonexistent/c.toml", "calibrate"])), 2);
    assert_eq!(code(&run(&["frobnicate"])), 2);
}

#[test]
fn calibration_round_trips_through_simulate() {
    let dir = TempDir::new().unwrap();
    let config = write(
        &dir,
        "c.toml",
        "[targets]\nalpha = [0.02, 0.07]\nbeta = [[0, 0.03], [0.09, 0]]\n",
    );
    let out = run(&["--config", &config, "calibrate"]);
    assert_eq!(code(&out), 0);
    let calibration = json(&out);
    write(&dir, "cal.json", &String::from_utf8(out.stdout).unwrap());

    let sim = write(
        &dir,
        "s.toml",
        &format!("{SMALL}\n[targets]\nthresholds_file = \"cal.json\"\n"),
    );
    let out_dir = dir.path().join("out");
    let out = run(&["--config", &sim, "--out", out_dir.to_str().unwrap(), "simulate"]);
    assert!(matches!(code(&out), 0 | 3 | 4), "{}", stderr(&out));
    let report: Value = serde_json::from_slice(&fs::read(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["thresholds"], calibration["thresholds"]);
}

// ---------------------------------------------------------------------------
// simulate / report
// ---------------------------------------------------------------------------

#[test]
fn zero_trials_exit_2() {
    let dir = TempDir::new().unwrap();
    let out = run(&["--trials", "0", "--out", dir.path().to_str().unwrap(), "simulate"]);
    assert_eq!(code(&out), 2);
    assert!(!dir.path().join("report.json").exists());
}

fn simulate(dir: &TempDir, sub: &str, extra: &[&str]) -> (Output, PathBuf) {
    let config = write(dir, "small.toml", SMALL);
    let out_dir = dir.path().join(sub);
    let mut args = vec!["--config", config.as_str(), "--out", out_dir.to_str().unwrap()];
    args.extend_from_slice(extra);
    args.push("simulate");
    (run(&args), out_dir)
}

#[test]
fn same_seed_gives_identical_bytes_across_threads() {
    let dir = TempDir::new().unwrap();
    let (a, da) = simulate(&dir, "a", &["--threads", "1"]);
    let (b, db) = simulate(&dir, "b", &["--threads", "8"]);
    let (c, dc) = simulate(&dir, "c", &["--threads", "1"]);
    assert_eq!(code(&a), code(&b));
    assert_eq!(code(&a), code(&c));
    for name in ["report.json", "report.csv"] {
        let x = fs::read(da.join(name)).unwrap();
        assert_eq!(x, fs::read(db.join(name)).unwrap(), "{name} differs across threads");
        assert_eq!(x, fs::read(dc.join(name)).unwrap(), "{name} differs across runs");
    }
    let (_, dd) = simulate(&dir, "d", &["--seed", "99"]);
    assert_ne!(
        fs::read(da.join("report.json")).unwrap(),
        fs::read(dd.join("report.json")).unwrap()
    );
}

#[test]
fn flags_override_config_in_report() {
    let dir = TempDir::new().unwrap();
    let (out, d) = simulate(&dir, "o", &["--seed", "5", "--trials", "40", "--window", "150"]);
    assert!(matches!(code(&out), 0 | 4), "{}", stderr(&out));
    let report: Value = serde_json::from_slice(&fs::read(d.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["plan"]["seed"], 5);
    assert_eq!(report["plan"]["trials"], 40);
    assert_eq!(report["plan"]["window"], 150);
    let effective = fs::read_to_string(d.join("config.toml")).unwrap();
    assert!(effective.contains("seed = 5"), "{effective}");
}

#[test]
fn report_csv_columns() {
    let dir = TempDir::new().unwrap();
    let (_, d) = simulate(&dir, "o", &[]);
    let text = fs::read_to_string(d.join("report.csv")).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "estimator,stream,j,theta,k,r,estimate,ci_lower,ci_upper,theory,ratio,count"
    );
    let estimators: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    for e in ["pfa", "pmi", "delay_integrated", "delay_conditional"] {
        assert!(estimators.contains(&e), "{e} missing");
    }
}

#[test]
fn report_subcommand_rechecks_bounds() {
    let dir = TempDir::new().unwrap();
    let (out, d) = simulate(&dir, "o", &[]);
    let path = d.join("report.json");
    let again = run(&["report", path.to_str().unwrap()]);
    assert_eq!(code(&again), code(&out));

    let mut v: Value = serde_json::from_slice(&fs::read(&path).unwrap()).unwrap();
    v["checks"][0]["bound"] = Value::from(0.0);
    let broken = dir.path().join("broken.json");
    fs::write(&broken, serde_json::to_vec(&v).unwrap()).unwrap();
    let out = run(&["report", broken.to_str().unwrap()]);
    assert_eq!(code(&out), 4);
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL"));

    let mut v: Value = serde_json::from_slice(&fs::read(&path).unwrap()).unwrap();
    v["censor"]["fraction"] = Value::from(0.5);
    let censored = dir.path().join("censored.json");
    fs::write(&censored, serde_json::to_vec(&v).unwrap()).unwrap();
    let out = run(&["report", censored.to_str().unwrap()]);
    assert!(matches!(code(&out), 3 | 4));
    assert!(String::from_utf8_lossy(&out.stdout).contains("EXCEEDED"));

    fs::write(dir.path().join("junk.json"), "{}").unwrap();
    assert_eq!(
        code(&run(&["report", dir.path().join("junk.json").to_str().unwrap()])),
        2
    );
}

#[test]
fn censor_budget_exceeded_still_writes_report() {
    let dir = TempDir::new().unwrap();
    // horizon far too short for theta = 0.5 to be detected; loose targets
    // keep the bound checks out of the way
    let config = write(
        &dir,
        "c.toml",
        "[targets]\nalpha = 0.5\nbeta = 0.5\n[experiment]\ntrials = 100\nhorizon = 40\nthetas = [0.5]\n",
    );
    let out_dir = dir.path().join("o");
    let out = run(&["--config", &config, "--out", out_dir.to_str().unwrap(), "simulate"]);
    assert_eq!(
        code(&out),
        3,
        "{}{}",
        String::from_utf8_lossy(&out.stdout),
        stderr(&out)
    );
    let report: Value = serde_json::from_slice(&fs::read(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["censor"]["exceeded"], true);
}

// ---------------------------------------------------------------------------
// validate
// ---------------------------------------------------------------------------

#[test]
fn validate_writes_diagnostics() {
    let dir = TempDir::new().unwrap();
    let config = write(
        &dir,
        "v.toml",
        "[experiment]\nthetas = [1.0]\n[validate]\nks = [0]\nns = [2000]\npaths = 40\n",
    );
    let out_dir = dir.path().join("o");
    let out = run(&["--config", &config, "--out", out_dir.to_str().unwrap(), "validate"]);
    assert_eq!(
        code(&out),
        0,
        "{}{}",
        String::from_utf8_lossy(&out.stdout),
        stderr(&out)
    );
    let v: Value = serde_json::from_slice(&fs::read(out_dir.join("validate.json")).unwrap()).unwrap();
    // post-change, one pair and pre-change per stream
    assert_eq!(v["conditions"].as_array().unwrap().len(), 6);
    assert_eq!(v["flagged"], 0);
    for u in v["unit_mean"].as_array().unwrap() {
        assert!(u["z"].as_f64().unwrap().abs() < 4.0, "{u}");
    }
    assert!(out_dir.join("validate.csv").exists());
}
