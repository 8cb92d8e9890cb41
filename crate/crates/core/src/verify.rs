//! Re-check a run directory from its exported files alone.

use std::path::Path;

use serde::Serialize;

use crate::boxgrid::BoxSet;
use crate::dataio::{self, RunMetadata};
use crate::error::{Error, Result};
use crate::partition::coherence_ratio_discrete;
use crate::spectral::{bilinear, check_leading_pair, weighted_mean, weighted_norm, WeightedOperator, LEADING_PAIR_TOL};
use crate::ulam::{compensated_sum, TransitionSystem, ROW_SUM_TOL};

/// Loosest tolerance the verifier accepts for the singular vectors.
pub const VECTOR_TOL: f64 = 1e-8;
/// Recomputed coherence ratios must match the metadata to this.
pub const RATIO_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub value: f64,
    pub tol: f64,
    pub passed: bool,
}

impl Check {
    fn at_most(name: &'static str, value: f64, tol: f64) -> Self {
        // NaN fails.
        Self { name, value, tol, passed: value <= tol }
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// Fixed-width pass/fail table.
    pub fn table(&self) -> String {
        let mut s = format!("{:<22} {:>12} {:>10}  result\n", "check", "value", "tol");
        for c in &self.checks {
            let verdict = if c.passed { "PASS" } else { "FAIL" };
            s.push_str(&format!("{:<22} {:>12.3e} {:>10.1e}  {verdict}\n", c.name, c.value, c.tol));
        }
        s
    }
}

fn read_set(path: &Path, len: usize) -> Result<BoxSet> {
    let set = dataio::read_partition_csv(path)?;
    if set.universe() != len {
        return Err(Error::SizeMismatch { path: path.to_path_buf(), expected: len, found: set.universe() });
    }
    Ok(set)
}

fn max_abs(v: impl Iterator<Item = f64>) -> f64 {
    v.fold(0.0, |a: f64, x| if x.is_nan() { f64::NAN } else { a.max(x.abs()) })
}

/// Reads every artifact under `dir` and re-derives the run's invariants.
///
/// Errors only if files are missing or unreadable; a failed invariant is a
/// failed check in the report.
pub fn verify_run_dir(dir: &Path) -> Result<VerifyReport> {
    let meta: RunMetadata = dataio::read_json(&dir.join(dataio::METADATA))?;
    let matrix = dataio::read_triplets::<f64>(&dir.join(dataio::MATRIX))?;
    let p = dataio::read_weights(&dir.join(dataio::P_FILE))?;
    let q = dataio::read_weights(&dir.join(dataio::Q_FILE))?;
    let (_, x) = dataio::read_vector_csv(&dir.join(dataio::X_FILE))?;
    let (_, y) = dataio::read_vector_csv(&dir.join(dataio::Y_FILE))?;
    let (m, n) = (matrix.nrows(), matrix.ncols());
    for (name, len, want) in [(dataio::P_FILE, p.len(), m), (dataio::Q_FILE, q.len(), n), (dataio::X_FILE, x.len(), m), (dataio::Y_FILE, y.len(), n)] {
        if len != want {
            return Err(Error::SizeMismatch { path: dir.join(name), expected: want, found: len });
        }
    }
    let x1 = read_set(&dir.join(dataio::PARTITION_X), m)?;
    let y1 = read_set(&dir.join(dataio::PARTITION_Y), n)?;

    // Built field by field: `TransitionSystem::new` would reject the very
    // defects this is meant to report.
    let ts = TransitionSystem {
        matrix,
        p,
        q,
        counts: None,
        row_samples: None,
        geometry: None,
        samples_per_box: meta.samples_per_box,
        lost_mass: meta.lost_mass,
        pruned_mass: meta.pruned_mass,
    };
    let mut checks = Vec::new();
    let negative = ts.matrix.triplets().filter(|t| t.2 < 0.0).count();
    checks.push(Check::at_most("nonnegative_entries", negative as f64, 0.0));
    checks.push(Check::at_most("row_sums", max_abs(ts.matrix.row_sums().iter().map(|s| s - 1.0)), ROW_SUM_TOL));
    checks.push(Check::at_most("p_total", (compensated_sum(&ts.p) - 1.0).abs(), ROW_SUM_TOL));
    checks.push(Check::at_most("q_equals_pP", ts.max_pushforward_error(), ROW_SUM_TOL));

    let leading = match WeightedOperator::new(&ts) {
        Ok(op) => {
            let r = check_leading_pair(&op);
            r.forward.max(r.adjoint)
        }
        Err(_) => f64::NAN,
    };
    checks.push(Check::at_most("leading_pair", leading, LEADING_PAIR_TOL));

    checks.push(Check::at_most("x_mean", weighted_mean(&x, &ts.p).abs(), VECTOR_TOL));
    checks.push(Check::at_most("y_mean", weighted_mean(&y, &ts.q).abs(), VECTOR_TOL));
    let unit = meta.sigma2 > 0.0 || meta.components == 1;
    let norm_err = |v: &[f64], w: &[f64]| if unit { (weighted_norm(v, w) - 1.0).abs() } else { 0.0 };
    checks.push(Check::at_most("x_norm", norm_err(&x, &ts.p), VECTOR_TOL));
    checks.push(Check::at_most("y_norm", norm_err(&y, &ts.q), VECTOR_TOL));
    checks.push(Check::at_most("sigma2_bilinear", (bilinear(&ts, &x, &y) - meta.sigma2).abs(), VECTOR_TOL));

    let part = &meta.partition;
    let threshold_mismatch = (0..m).filter(|&i| (x[i] > part.b_star) != x1.contains(i)).count();
    let y_mismatch = (0..n).filter(|&j| (y[j] > part.c_star) != y1.contains(j)).count();
    checks.push(Check::at_most("x1_threshold", threshold_mismatch as f64, 0.0));
    checks.push(Check::at_most("y1_threshold", y_mismatch as f64, 0.0));
    let rho = |xs: &BoxSet, ys: &BoxSet| coherence_ratio_discrete(&ts, xs, ys).unwrap_or(f64::NAN);
    checks.push(Check::at_most("rho1", (rho(&x1, &y1) - part.rho1).abs(), RATIO_TOL));
    checks.push(Check::at_most("rho2", (rho(&x1.complement(), &y1.complement()) - part.rho2).abs(), RATIO_TOL));
    Ok(VerifyReport { checks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{run, RunConfig};

    fn fresh_run(dir: &Path) {
        let cfg: RunConfig = serde_json::from_value(serde_json::json!({
            "field": {"kind": "bickley"},
            "domain": {"lo": [0.0, -2.5], "hi": [std::f64::consts::PI * 6.371, 2.5], "counts": [20, 8]},
            "t": 20.0, "tau": 2.0, "step": 0.1, "samples_per_box": 16
        }))
        .unwrap();
        run(&cfg).unwrap().write(dir, &cfg).unwrap();
    }

    #[test]
    fn fresh_run_passes_every_check() {
        let dir = tempfile::tempdir().unwrap();
        fresh_run(dir.path());
        let report = verify_run_dir(dir.path()).unwrap();
        assert!(report.passed(), "{}", report.table());
    }

    #[test]
    fn edited_matrix_entry_fails_row_sums() {
        let dir = tempfile::tempdir().unwrap();
        fresh_run(dir.path());
        let path = dir.path().join(dataio::MATRIX);
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        let mut parts: Vec<String> = lines[1].split_whitespace().map(String::from).collect();
        let v: f64 = parts[2].parse().unwrap();
        parts[2] = format!("{:?}", v * 0.5);
        lines[1] = parts.join(" ");
        std::fs::write(&path, lines.join("\n") + "\n").unwrap();
        let report = verify_run_dir(dir.path()).unwrap();
        let rows = report.checks.iter().find(|c| c.name == "row_sums").unwrap();
        assert!(!rows.passed && !report.passed());
    }
}
