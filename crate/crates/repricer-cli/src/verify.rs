//! Run-directory verification against pinned baselines.
//!
//! Both directories must contain a `manifest.txt` (written by `repricer
//! run`, or assembled alongside hand-pinned reference tables). Files are
//! matched by name across the two manifests: identical content hashes pass
//! immediately, differing CSVs are compared cell by cell with per-table (or
//! per-column) tolerances, and anything missing on either side is listed.
//!
//! Numeric cells compare as `|run − baseline| ≤ tol` (absolute) or
//! `≤ rel · |baseline|` (relative, written `5%`); non-numeric cells must
//! match exactly. Columns are matched by name against the baseline header,
//! so a baseline may pin only the columns it cares about. Manifest metadata
//! (tool version and the like) is informational and not compared.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};

use repricer::config::{hash_file, read_csv_table, Manifest};

/// One tolerance: absolute bound or relative to the baseline magnitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Tol {
    Abs(f64),
    Rel(f64),
}

impl Tol {
    fn admits(self, base: f64, run: f64) -> bool {
        let dev = (run - base).abs();
        match self {
            Tol::Abs(t) => dev <= t,
            Tol::Rel(r) => dev <= r * base.abs(),
        }
    }
}

/// Parsed `--tol` entries: a default, per-file overrides, and per-column
/// overrides (`file:column`).
#[derive(Debug)]
pub struct ToleranceSpec {
    default: Tol,
    files: BTreeMap<String, Tol>,
    cells: BTreeMap<(String, String), Tol>,
}

impl Default for ToleranceSpec {
    fn default() -> Self {
        ToleranceSpec {
            default: Tol::Abs(1e-9),
            files: BTreeMap::new(),
            cells: BTreeMap::new(),
        }
    }
}

impl ToleranceSpec {
    /// Parse repeated `--tol` arguments, each a comma-separated list of
    /// `name=value` entries.
    pub fn parse(args: &[String]) -> Result<ToleranceSpec> {
        let mut spec = ToleranceSpec::default();
        for arg in args {
            for entry in arg.split(',') {
                let entry = entry.trim();
                if entry.is_empty() {
                    continue;
                }
                let Some((name, value)) = entry.split_once('=') else {
                    bail!("tolerance entry `{entry}` is not `name=value`");
                };
                let tol = parse_tol(value.trim())
                    .with_context(|| format!("tolerance entry `{entry}`"))?;
                let name = name.trim();
                if name == "default" {
                    spec.default = tol;
                } else if let Some((file, column)) = name.split_once(':') {
                    spec.cells
                        .insert((file.trim().to_string(), column.trim().to_string()), tol);
                } else {
                    spec.files.insert(name.to_string(), tol);
                }
            }
        }
        Ok(spec)
    }

    fn for_cell(&self, file: &str, column: &str) -> Tol {
        if let Some(&t) = self.cells.get(&(file.to_string(), column.to_string())) {
            return t;
        }
        if let Some(&t) = self.files.get(file) {
            return t;
        }
        self.default
    }
}

fn parse_tol(value: &str) -> Result<Tol> {
    let (raw, relative) = match value.strip_suffix('%') {
        Some(head) => (head, true),
        None => (value, false),
    };
    let num: f64 = raw
        .trim()
        .parse()
        .map_err(|e| anyhow::anyhow!("`{value}`: {e}"))?;
    if !(num >= 0.0) || !num.is_finite() {
        bail!("`{value}`: tolerance must be a finite non-negative number");
    }
    Ok(if relative {
        Tol::Rel(num / 100.0)
    } else {
        Tol::Abs(num)
    })
}

/// Compare a run directory against a baseline directory. Prints a per-file
/// report and returns the exit code: 0 clean, 1 for missing files or shape
/// mismatches, 2 for cells out of tolerance.
pub fn verify(baseline: &Path, run: &Path, tol: &ToleranceSpec) -> Result<u8> {
    let base_manifest = Manifest::load(baseline)
        .with_context(|| format!("loading baseline manifest in {}", baseline.display()))?;
    let run_manifest = Manifest::load(run)
        .with_context(|| format!("loading run manifest in {}", run.display()))?;

    let mut missing = 0usize;
    let mut shape_errors = 0usize;
    let mut cell_violations = 0usize;

    for file in &base_manifest.files {
        let name = &file.name;
        if run_manifest.file(name).is_none() {
            println!("{name}: MISSING from run directory");
            missing += 1;
            continue;
        }
        // Hash the bytes actually on disk: recorded manifest digests are
        // provenance, not proof the files still match them.
        let Some(base_sha) = disk_sha(&baseline.join(name))? else {
            println!("{name}: MISSING from baseline directory");
            missing += 1;
            continue;
        };
        let Some(run_sha) = disk_sha(&run.join(name))? else {
            println!("{name}: MISSING from run directory");
            missing += 1;
            continue;
        };
        if base_sha == run_sha {
            println!("{name}: OK (identical)");
            continue;
        }
        if name.ends_with(".csv") {
            match compare_csv(baseline, run, name, tol)? {
                CsvOutcome::Clean { cells } => {
                    println!("{name}: OK ({cells} cells within tolerance)");
                }
                CsvOutcome::Shape(msg) => {
                    println!("{name}: SHAPE MISMATCH — {msg}");
                    shape_errors += 1;
                }
                CsvOutcome::Violations {
                    checked,
                    count,
                    worst,
                } => {
                    println!(
                        "{name}: FAIL — {count} of {checked} cells out of tolerance \
                         (worst at row {}, column {}: baseline {} vs run {})",
                        worst.row, worst.column, worst.base, worst.run
                    );
                    cell_violations += count;
                }
            }
        } else {
            println!("{name}: FAIL — content differs (non-CSV files must match exactly)");
            cell_violations += 1;
        }
    }
    for file in &run_manifest.files {
        if base_manifest.file(&file.name).is_none() {
            println!("{}: NO BASELINE pinned", file.name);
            missing += 1;
        }
    }

    let code = if missing + shape_errors > 0 {
        1
    } else if cell_violations > 0 {
        2
    } else {
        0
    };
    match code {
        0 => println!(
            "verify: OK ({} file(s) checked)",
            base_manifest.files.len()
        ),
        1 => println!(
            "verify: FAIL — {missing} file(s) missing or unpinned, {shape_errors} shape \
             mismatch(es)"
        ),
        _ => println!("verify: FAIL — {cell_violations} cell(s) out of tolerance"),
    }
    Ok(code)
}

/// Digest of the file's current contents, or `None` if it does not exist.
fn disk_sha(path: &Path) -> Result<Option<String>> {
    if !path.exists() {
        return Ok(None);
    }
    let (sha, _) = hash_file(path)?;
    Ok(Some(sha))
}

struct WorstCell {
    row: usize,
    column: String,
    base: String,
    run: String,
}

enum CsvOutcome {
    Clean { cells: usize },
    Shape(String),
    Violations {
        checked: usize,
        count: usize,
        worst: WorstCell,
    },
}

fn compare_csv(
    baseline: &Path,
    run: &Path,
    name: &str,
    tol: &ToleranceSpec,
) -> Result<CsvOutcome> {
    let base = read_csv_table(&baseline.join(name))?;
    let run_table = read_csv_table(&run.join(name))?;
    if base.rows.len() != run_table.rows.len() {
        return Ok(CsvOutcome::Shape(format!(
            "baseline has {} data rows, run has {}",
            base.rows.len(),
            run_table.rows.len()
        )));
    }

    // Columns are matched by name so the baseline may pin a subset.
    let mut column_map: Vec<(usize, usize, &str)> = Vec::with_capacity(base.header.len());
    for (bi, column) in base.header.iter().enumerate() {
        match run_table.column(column) {
            Some(ri) => column_map.push((bi, ri, column)),
            None => {
                return Ok(CsvOutcome::Shape(format!(
                    "run output has no column `{column}`"
                )))
            }
        }
    }

    let mut checked = 0usize;
    let mut count = 0usize;
    let mut worst: Option<(f64, WorstCell)> = None;
    let mut record = |severity: f64, cell: WorstCell| {
        count += 1;
        if worst.as_ref().map_or(true, |(s, _)| severity > *s) {
            worst = Some((severity, cell));
        }
    };

    for (row, (brow, rrow)) in base.rows.iter().zip(&run_table.rows).enumerate() {
        for &(bi, ri, column) in &column_map {
            let b = &brow[bi];
            let r = &rrow[ri];
            checked += 1;
            match (b.parse::<f64>(), r.parse::<f64>()) {
                (Ok(bv), Ok(rv)) => {
                    let bound = tol.for_cell(name, column);
                    if !(bv.is_finite() && rv.is_finite() && bound.admits(bv, rv)) {
                        record(
                            (rv - bv).abs(),
                            WorstCell {
                                row,
                                column: column.to_string(),
                                base: b.clone(),
                                run: r.clone(),
                            },
                        );
                    }
                }
                _ => {
                    if b != r {
                        record(
                            f64::INFINITY,
                            WorstCell {
                                row,
                                column: column.to_string(),
                                base: b.clone(),
                                run: r.clone(),
                            },
                        );
                    }
                }
            }
        }
    }

    Ok(match worst {
        None => CsvOutcome::Clean { cells: checked },
        Some((_, worst)) => CsvOutcome::Violations {
            checked,
            count,
            worst,
        },
    })
}
