//! `repricer` — batch experiment harness for the pricing engine.
//!
//! The binary runs every study the library supports from flat sectioned
//! key-value config files, writes plot-ready CSVs plus a `manifest.txt`
//! with a content hash per output, and can verify a run directory against
//! pinned baselines with per-table tolerances.
//!
//! Subcommands:
//! - `run --config <FILE> [--out <DIR>] [--seed-override <N>] [--jobs <N>]`
//! - `verify --baseline <DIR> --run <DIR> [--tol <NAME=TOL>[,...]]...`
//! - `list-experiments`
//!
//! The default output root is `$REPRICER_OUT_ROOT` (falling back to
//! `./runs`); a run lands in `<root>/<config file stem>/`. Every randomized
//! experiment requires an explicit `seed` in its config — the harness
//! refuses implicit entropy — and identical config + seed reproduce the
//! output files byte for byte.
//!
//! Exit codes: 0 success, 1 validation error (bad flags, malformed config,
//! missing files or baselines), 2 numerical failure (non-finite results,
//! diverged fits, tolerance violations).

use std::env;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, bail, Result};

mod experiments;
mod verify;

use experiments::NumericalFailure;

fn usage() -> &'static str {
    "repricer — batch experiment harness for the pricing engine

USAGE:
    repricer run --config <FILE> [--out <DIR>] [--seed-override <N>] [--jobs <N>]
    repricer verify --baseline <DIR> --run <DIR> [--tol <NAME=TOL>[,...]]...
    repricer list-experiments
    repricer --help

FLAGS:
    --config <FILE>      experiment config (sectioned key-value text)
    --out <DIR>          output directory (default: $REPRICER_OUT_ROOT/<config stem>,
                         falling back to ./runs/<config stem>)
    --seed-override <N>  replace the config's seed for this run
    --jobs <N>           worker threads for scenario fan-out (default: all cores)
    --baseline <DIR>     directory with pinned reference outputs + manifest
    --run <DIR>          freshly produced run directory + manifest
    --tol <SPEC>         tolerance entries `name=value`, comma separated; `name`
                         is `default`, a file name, or `file:column`; `value`
                         is an absolute bound (0.01) or relative (5%)

EXIT CODES:
    0  success          1  validation error          2  numerical failure"
}

fn main() -> ExitCode {
    let args: Vec<String> = env::args().skip(1).collect();
    match dispatch(&args) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(classify(&err))
        }
    }
}

/// Map an error chain to the exit code contract: numerical failures (diverged
/// fits, non-finite outputs) exit 2, everything else is a validation error.
fn classify(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<NumericalFailure>().is_some() {
            return 2;
        }
        if let Some(lib) = cause.downcast_ref::<repricer::Error>() {
            if matches!(lib, repricer::Error::FitDiverged(_)) {
                return 2;
            }
        }
    }
    1
}

fn dispatch(args: &[String]) -> Result<ExitCode> {
    let Some(command) = args.first() else {
        eprintln!("{}", usage());
        return Ok(ExitCode::from(1));
    };
    match command.as_str() {
        "run" => {
            let ctx = parse_run_flags(&args[1..])?;
            experiments::run(&ctx)?;
            Ok(ExitCode::SUCCESS)
        }
        "verify" => {
            let (baseline, run, tol_args) = parse_verify_flags(&args[1..])?;
            let spec = verify::ToleranceSpec::parse(&tol_args)?;
            let code = verify::verify(&baseline, &run, &spec)?;
            Ok(ExitCode::from(code))
        }
        "list-experiments" => {
            if args.len() > 1 {
                bail!("list-experiments takes no flags");
            }
            for (kind, blurb) in experiments::CATALOG {
                println!("{kind:<24} {blurb}");
            }
            Ok(ExitCode::SUCCESS)
        }
        "--help" | "-h" | "help" => {
            println!("{}", usage());
            Ok(ExitCode::SUCCESS)
        }
        other => {
            eprintln!("{}", usage());
            Err(anyhow!("unknown subcommand `{other}`"))
        }
    }
}

fn parse_run_flags(args: &[String]) -> Result<experiments::RunContext> {
    let mut config: Option<PathBuf> = None;
    let mut out: Option<PathBuf> = None;
    let mut seed_override: Option<u64> = None;
    let mut jobs: Option<usize> = None;

    let mut iter = args.iter();
    while let Some(flag) = iter.next() {
        let mut value = |name: &str| {
            iter.next()
                .ok_or_else(|| anyhow!("flag {name} needs a value"))
        };
        match flag.as_str() {
            "--config" => config = Some(PathBuf::from(value("--config")?)),
            "--out" => out = Some(PathBuf::from(value("--out")?)),
            "--seed-override" => {
                let raw = value("--seed-override")?;
                seed_override = Some(
                    raw.parse::<u64>()
                        .map_err(|e| anyhow!("--seed-override `{raw}`: {e}"))?,
                );
            }
            "--jobs" => {
                let raw = value("--jobs")?;
                let n = raw
                    .parse::<usize>()
                    .map_err(|e| anyhow!("--jobs `{raw}`: {e}"))?;
                if n == 0 {
                    bail!("--jobs must be at least 1");
                }
                jobs = Some(n);
            }
            other => bail!("unknown flag `{other}` for run (see --help)"),
        }
    }
    let config = config.ok_or_else(|| anyhow!("run requires --config <FILE>"))?;
    let out = out.unwrap_or_else(|| default_out_dir(&config));
    Ok(experiments::RunContext {
        config_path: config,
        out_dir: out,
        seed_override,
        jobs,
    })
}

/// `$REPRICER_OUT_ROOT/<config stem>`, falling back to `./runs/<config stem>`.
fn default_out_dir(config: &PathBuf) -> PathBuf {
    let root = env::var_os("REPRICER_OUT_ROOT")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"));
    let stem = config
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".to_string());
    root.join(stem)
}

fn parse_verify_flags(args: &[String]) -> Result<(PathBuf, PathBuf, Vec<String>)> {
    let mut baseline: Option<PathBuf> = None;
    let mut run: Option<PathBuf> = None;
    let mut tol_args: Vec<String> = Vec::new();

    let mut iter = args.iter();
    while let Some(flag) = iter.next() {
        let mut value = |name: &str| {
            iter.next()
                .ok_or_else(|| anyhow!("flag {name} needs a value"))
        };
        match flag.as_str() {
            "--baseline" => baseline = Some(PathBuf::from(value("--baseline")?)),
            "--run" => run = Some(PathBuf::from(value("--run")?)),
            "--tol" => tol_args.push(value("--tol")?.clone()),
            other => bail!("unknown flag `{other}` for verify (see --help)"),
        }
    }
    let baseline = baseline.ok_or_else(|| anyhow!("verify requires --baseline <DIR>"))?;
    let run = run.ok_or_else(|| anyhow!("verify requires --run <DIR>"))?;
    Ok((baseline, run, tol_args))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_classify_numerical_failures() {
        let numeric = anyhow::Error::new(experiments::NumericalFailure("bad value".into()));
        assert_eq!(classify(&numeric), 2);
        let diverged = anyhow::Error::new(repricer::Error::FitDiverged("stalled".into()))
            .context("fitting the demand model");
        assert_eq!(classify(&diverged), 2);
        assert_eq!(classify(&anyhow::anyhow!("plain validation problem")), 1);
    }

    #[test]
    fn run_flags_parse_and_default_the_output_dir() {
        let args: Vec<String> = ["--config", "configs/table2.cfg", "--jobs", "2"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let ctx = parse_run_flags(&args).unwrap();
        assert_eq!(ctx.config_path, PathBuf::from("configs/table2.cfg"));
        assert_eq!(ctx.jobs, Some(2));
        assert!(ctx.out_dir.ends_with("table2"));
        assert!(ctx.seed_override.is_none());
    }

    #[test]
    fn bad_flags_are_rejected() {
        let to_vec = |args: &[&str]| -> Vec<String> {
            args.iter().map(|s| s.to_string()).collect()
        };
        assert!(parse_run_flags(&to_vec(&["--config"])).is_err());
        assert!(parse_run_flags(&to_vec(&["--nope", "x"])).is_err());
        assert!(parse_run_flags(&to_vec(&["--config", "a", "--jobs", "0"])).is_err());
        assert!(parse_run_flags(&to_vec(&[])).is_err());
        assert!(parse_verify_flags(&to_vec(&["--baseline", "b"])).is_err());
    }
}
