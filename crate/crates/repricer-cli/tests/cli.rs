//! End-to-end tests driving the compiled binary: tiny runs of each
//! experiment kind, manifest integrity, byte-identical reruns, config
//! rejection, and the baseline-verification workflow. Workloads are kept
//! deliberately small so the unoptimized test binary stays fast.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use repricer::config::{hash_file, Manifest};

fn workspace(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("repricer_cli_{tag}_{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn repricer(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_repricer"))
        .args(args)
        .output()
        .expect("binary launches")
}

fn run_ok(config: &Path, out: &Path) {
    let res = repricer(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(
        res.status.success(),
        "run failed: {}",
        String::from_utf8_lossy(&res.stderr)
    );
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("terminated by signal")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

const TINY_DEMAND_CURVE: &str = "\
[experiment]
kind = demand_curve
seed = 1

[grid]
step = 0.5
count = 40
";

#[test]
fn list_experiments_covers_every_kind() {
    let out = repricer(&["list-experiments"]);
    assert_eq!(exit_code(&out), 0);
    let text = stdout(&out);
    for kind in [
        "demand_curve",
        "solve_policy",
        "simulate",
        "table1",
        "table2",
        "table3",
        "self_play",
        "calibrate",
        "adjustment_cost_study",
    ] {
        assert!(text.contains(kind), "{kind} missing from catalog:\n{text}");
    }
}

#[test]
fn bad_invocations_exit_one() {
    let ws = workspace("bad_invocations");
    for args in [
        &[][..],
        &["frobnicate"][..],
        &["run"][..],
        &["run", "--config"][..],
        &["run", "--config", "does_not_exist.cfg"][..],
        &["verify", "--baseline", ws.to_str().unwrap()][..],
    ] {
        let out = repricer(args);
        assert_eq!(exit_code(&out), 1, "args {args:?} should fail validation");
        assert!(!stderr(&out).is_empty(), "args {args:?} left stderr empty");
    }
}

#[test]
fn runs_are_manifested_and_rerun_byte_identical() {
    let ws = workspace("rerun");
    let cfg = write_config(&ws, "curve.cfg", TINY_DEMAND_CURVE);
    let (a, b) = (ws.join("a"), ws.join("b"));
    run_ok(&cfg, &a);
    run_ok(&cfg, &b);

    let bytes_a = fs::read(a.join("demand_curve.csv")).unwrap();
    let bytes_b = fs::read(b.join("demand_curve.csv")).unwrap();
    assert_eq!(bytes_a, bytes_b, "reruns must be byte-identical");

    let manifest = Manifest::load(&a).unwrap();
    let meta: std::collections::BTreeMap<_, _> = manifest.meta.iter().cloned().collect();
    assert_eq!(meta.get("kind").map(String::as_str), Some("demand_curve"));
    assert_eq!(meta.get("seed").map(String::as_str), Some("1"));
    let entry = manifest.file("demand_curve.csv").expect("file pinned");
    let (sha, len) = hash_file(&a.join("demand_curve.csv")).unwrap();
    assert_eq!(entry.sha256, sha, "manifest digest matches disk");
    assert_eq!(entry.bytes, len);

    let text = String::from_utf8(bytes_a).unwrap();
    let argmax_rows = text.lines().filter(|l| l.ends_with(",1")).count();
    assert_eq!(argmax_rows, 1, "exactly one price is flagged as best");
}

#[test]
fn unknown_keys_and_missing_seed_are_rejected() {
    let ws = workspace("rejects");
    let typo = write_config(
        &ws,
        "typo.cfg",
        "[experiment]\nkind = demand_curve\nseed = 1\n\n[grid]\nstep = 0.5\ncount = 40\ntypo = 3\n",
    );
    let out = repricer(&["run", "--config", typo.to_str().unwrap(), "--out", ws.join("t").to_str().unwrap()]);
    assert_eq!(exit_code(&out), 1);
    assert!(stderr(&out).contains("typo"), "stderr: {}", stderr(&out));

    let unseeded = write_config(&ws, "unseeded.cfg", "[experiment]\nkind = demand_curve\n");
    let out = repricer(&["run", "--config", unseeded.to_str().unwrap(), "--out", ws.join("u").to_str().unwrap()]);
    assert_eq!(exit_code(&out), 1);
    assert!(stderr(&out).contains("seed"), "stderr: {}", stderr(&out));
}

#[test]
fn seed_override_lands_in_the_manifest() {
    let ws = workspace("override");
    let cfg = write_config(&ws, "curve.cfg", TINY_DEMAND_CURVE);
    let out_dir = ws.join("out");
    let res = repricer(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--seed-override",
        "9",
    ]);
    assert!(res.status.success(), "{}", stderr(&res));
    let manifest = Manifest::load(&out_dir).unwrap();
    let seed = manifest.meta.iter().find(|(k, _)| k == "seed").unwrap();
    assert_eq!(seed.1, "9");
}

#[test]
fn default_output_root_honors_the_environment() {
    let ws = workspace("out_root");
    let cfg = write_config(&ws, "curve.cfg", TINY_DEMAND_CURVE);
    let root = ws.join("results");
    let res = Command::new(env!("CARGO_BIN_EXE_repricer"))
        .args(["run", "--config", cfg.to_str().unwrap()])
        .env("REPRICER_OUT_ROOT", &root)
        .output()
        .unwrap();
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    assert!(
        root.join("curve").join("demand_curve.csv").exists(),
        "output should land under $REPRICER_OUT_ROOT/<config stem>"
    );
}

#[test]
fn verify_passes_itself_and_catches_tampering_and_loss() {
    let ws = workspace("verify");
    let cfg = write_config(&ws, "curve.cfg", TINY_DEMAND_CURVE);
    let base = ws.join("base");
    run_ok(&cfg, &base);

    let clean = repricer(&[
        "verify",
        "--baseline",
        base.to_str().unwrap(),
        "--run",
        base.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&clean), 0, "{}", stdout(&clean));
    assert!(stdout(&clean).contains("OK"));

    // A cell edited after the run must be caught even though the stale
    // manifest still records the original digest.
    let tampered = ws.join("tampered");
    fs::create_dir_all(&tampered).unwrap();
    for name in ["demand_curve.csv", "manifest.txt"] {
        fs::copy(base.join(name), tampered.join(name)).unwrap();
    }
    let csv = tampered.join("demand_curve.csv");
    let text = fs::read_to_string(&csv).unwrap();
    let patched = text.replacen("0.5000,", "0.5100,", 1);
    assert_ne!(text, patched, "tamper target row exists");
    fs::write(&csv, patched).unwrap();

    let caught = repricer(&[
        "verify",
        "--baseline",
        base.to_str().unwrap(),
        "--run",
        tampered.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&caught), 2, "{}", stdout(&caught));
    assert!(stdout(&caught).contains("out of tolerance"));

    // The same deviation is admitted under a loose file tolerance.
    let admitted = repricer(&[
        "verify",
        "--baseline",
        base.to_str().unwrap(),
        "--run",
        tampered.to_str().unwrap(),
        "--tol",
        "demand_curve.csv=0.02",
    ]);
    assert_eq!(exit_code(&admitted), 0, "{}", stdout(&admitted));

    // A file listed in the manifest but gone from disk exits 1.
    let lossy = ws.join("lossy");
    fs::create_dir_all(&lossy).unwrap();
    fs::copy(base.join("manifest.txt"), lossy.join("manifest.txt")).unwrap();
    let lost = repricer(&[
        "verify",
        "--baseline",
        base.to_str().unwrap(),
        "--run",
        lossy.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&lost), 1, "{}", stdout(&lost));
    assert!(stdout(&lost).contains("MISSING"));
}

#[test]
fn tiny_solver_run_exports_policy_tables() {
    let ws = workspace("solver");
    let cfg = write_config(
        &ws,
        "policy.cfg",
        "[experiment]\nkind = solve_policy\nseed = 3\n\n[solver]\nhorizon = 4\ninitial_stock = 2\ngrid_step = 1.0\ngrid_count = 20\n",
    );
    let out_dir = ws.join("out");
    run_ok(&cfg, &out_dir);
    let text = fs::read_to_string(out_dir.join("policy_tables.csv")).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("t,n"));
    assert!(lines.count() >= 4, "tables should cover the horizon");
    assert!(Manifest::load(&out_dir).unwrap().file("policy_tables.csv").is_some());
}

#[test]
fn tiny_duopoly_study_emits_finite_cells() {
    let ws = workspace("duopoly");
    let cfg = write_config(
        &ws,
        "study.cfg",
        "[experiment]\nkind = table2\nseed = 1\n\n[solver]\nhorizon = 6\ninitial_stock = 2\ngrid_step = 1.0\ngrid_count = 25\n\n[table2]\ndelays = 0.5\nstocks = 1, 2\nanchor_price = 10\n",
    );
    let out_dir = ws.join("out");
    run_ok(&cfg, &out_dir);
    let text = fs::read_to_string(out_dir.join("table2.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3, "header plus one row per stock level");
    assert!(lines[0].contains("v_opt_d0.5"));
    for row in &lines[1..] {
        for cell in row.split(',') {
            let v: f64 = cell.parse().expect("numeric cell");
            assert!(v.is_finite());
        }
    }
}

#[test]
fn tiny_simulation_summarizes_every_episode() {
    let ws = workspace("simulate");
    let cfg = write_config(
        &ws,
        "episodes.cfg",
        "[experiment]\nkind = simulate\nseed = 2024\nscenario_count = 2\n\n[solver]\nhorizon = 20\ngrid_step = 0.1\ngrid_count = 200\n\n[scenario]\nfamily = no_trend\n",
    );
    let out_dir = ws.join("out");
    run_ok(&cfg, &out_dir);
    let summary = fs::read_to_string(out_dir.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3, "header plus one line per episode");
    assert!(out_dir.join("runs.csv").exists());
}

#[test]
fn tiny_self_play_reports_tail_prices() {
    let ws = workspace("self_play");
    let cfg = write_config(
        &ws,
        "mutual.cfg",
        "[experiment]\nkind = self_play\nseed = 5\nscenario_count = 2\n\n[demand]\narrival_rate = 40\n\n[solver]\nhorizon = 10\ninitial_stock = 2\ngrid_step = 1.0\ngrid_count = 20\n\n[self_play]\nplayers = 3\ntail_periods = 5\n",
    );
    let out_dir = ws.join("out");
    let res = repricer(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--jobs",
        "1",
    ]);
    assert!(res.status.success(), "{}", stderr(&res));
    let summary = fs::read_to_string(out_dir.join("self_play_summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
    assert!(out_dir.join("self_play_runs.csv").exists());
}

#[test]
fn tiny_adjustment_study_freezes_under_prohibitive_fees() {
    let ws = workspace("adjustment");
    let cfg = write_config(
        &ws,
        "fees.cfg",
        "[experiment]\nkind = adjustment_cost_study\nseed = 7\n\n[solver]\nhorizon = 5\ninitial_stock = 2\ngrid_step = 1.0\ngrid_count = 10\n\n[adjustment]\nfees = 0, 200\n",
    );
    let out_dir = ws.join("out");
    run_ok(&cfg, &out_dir);
    let text = fs::read_to_string(out_dir.join("adjustment_summary.csv")).unwrap();
    let prohibitive = text
        .lines()
        .find(|l| l.starts_with("200,"))
        .expect("row for the prohibitive fee");
    let cells: Vec<&str> = prohibitive.split(',').collect();
    assert_eq!(cells[2], "1", "one distinct price on the whole path");
    assert_eq!(cells[3], "0", "no price changes under a prohibitive fee");
}

#[test]
fn tiny_calibration_recovers_a_fit() {
    let ws = workspace("calibrate");
    let cfg = write_config(
        &ws,
        "fit.cfg",
        "[experiment]\nkind = calibrate\nseed = 11\n\n[calibrate]\nn_obs = 1500\nl2 = 0.01\n",
    );
    let out_dir = ws.join("out");
    run_ok(&cfg, &out_dir);
    let coeffs = fs::read_to_string(out_dir.join("coefficients.csv")).unwrap();
    assert_eq!(coeffs.lines().count(), 6, "header plus five features");
    let fit = fs::read_to_string(out_dir.join("fit.txt")).unwrap();
    assert!(fit.contains("converged = true"), "{fit}");
    assert!(fit.contains("arrival_rate = "));
    assert!(fit.contains("observations = 1500"));
}

#[test]
fn tiny_strategy_table_aggregates_scenarios() {
    let ws = workspace("table1");
    let cfg = write_config(
        &ws,
        "strategies.cfg",
        "[experiment]\nkind = table1\nseed = 42\nscenario_count = 2\n\n[solver]\nhorizon = 10\ngrid_step = 0.2\ngrid_count = 100\n\n[table1]\nfamilies = no_trend\nadjust_probs = 0.3\n",
    );
    let out_dir = ws.join("out");
    run_ok(&cfg, &out_dir);
    let text = fs::read_to_string(out_dir.join("table1.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2, "header plus a single aggregated cell");
    assert!(lines[0].starts_with("family,adjust_prob,mean_ofl_h"));
    assert!(lines[1].starts_with("no_trend,0.3"));
}
