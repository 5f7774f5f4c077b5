//! Batch execution of a [`RunConfig`]: `results.csv`, `summary.json` and
//! `plotdata/*.csv` in the output directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::{RunConfig, Task};
use crate::elasticity::{
    cauchy_residuals, numeric_elastic_tensor, pair_elastic_tensor, quadratic_model_hessian_check, CauchyReport,
    ElasticTensor,
};
use crate::error::{Error, Result};
use crate::homogenize::{
    box_solve, cauchy_born_density, estimate_from_solves, solve_box, tiling_upper_bound_check, BoxSolve, HomogenizationResult,
    InternalMode, Model,
};
use crate::mat::Mat;
use crate::solver::SolveResult;
use crate::validation::run_suite;

pub const RESULTS_HEADER: &str = "task,model,M,s0,N,f_N,energy,iters,converged,grad_norm,start_label";
pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");
/// Slack in `f_k(solved) ≤ f_k(tiled)`.
const TILING_SLACK: f64 = 1e-9;

/// What a run produced, for the caller's exit status and console output.
#[derive(Debug)]
pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub rows: usize,
    pub failed_rows: usize,
    pub failed_properties: usize,
    /// Human-readable report lines.
    pub lines: Vec<String>,
    /// Diagnostics of failed solves.
    pub errors: Vec<String>,
}

impl RunOutcome {
    /// Success unless every solve failed or a validation property failed.
    pub fn success(&self) -> bool {
        !(self.rows > 0 && self.failed_rows == self.rows) && self.failed_properties == 0
    }
}

fn join(m: &Mat<f64>) -> String {
    m.as_slice().iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(";")
}

fn clean(s: &str) -> String {
    s.replace([',', '\n', '"'], ";")
}

struct Rows {
    task: &'static str,
    model: String,
    text: String,
    count: usize,
    failed: usize,
    errors: Vec<String>,
}

impl Rows {
    fn new(task: &'static str, model: &str) -> Self {
        Self {
            task,
            model: model.into(),
            text: format!("{RESULTS_HEADER}\n"),
            count: 0,
            failed: 0,
            errors: Vec::new(),
        }
    }

    fn push(&mut self, m: &Mat<f64>, s0: Option<&Mat<f64>>, n: usize, solve: std::result::Result<&BoxSolve<f64>, &Error>) {
        let s0 = s0.map(join).unwrap_or_default();
        let (task, model, mm) = (self.task, self.model.clone(), join(m));
        let line = match solve {
            Ok(b) => format!(
                "{task},{model},{mm},{s0},{n},{:e},{:e},{},{},{:e},{}",
                b.f_n,
                b.energy,
                b.iterations,
                b.converged,
                b.grad_norm,
                clean(&b.start_label)
            ),
            Err(e) => {
                self.failed += 1;
                self.errors.push(format!("M={mm} N={n}: {e}"));
                format!("{task},{model},{mm},{s0},{n},,,0,false,,error: {}", clean(&e.to_string()))
            }
        };
        self.count += 1;
        let _ = writeln!(self.text, "{line}");
    }
}

/// Executes the configured task and writes its artifacts under `out_dir`
/// (default: the config's `output.dir`).
pub fn run(config: &RunConfig, out_dir: Option<&Path>) -> Result<RunOutcome> {
    let out = out_dir.map(Path::to_path_buf).unwrap_or_else(|| config.output.dir.clone());
    let plot = out.join("plotdata");
    fs::create_dir_all(&plot)?;
    let model = config.build_model()?;
    let mut rows = Rows::new(config.task.as_str(), model.name());
    let mut warnings = Vec::new();
    let mut lines = Vec::new();
    let mut failed_properties = 0;
    let mut plots: Vec<(String, String)> = Vec::new();

    let results = match config.task {
        Task::Homogenize | Task::CbScan => {
            homogenize(config, &model, &mut rows, &mut warnings, &mut lines, &mut plots)?
        }
        Task::TilingCheck => tiling(config, &model, &mut rows, &mut warnings, &mut lines)?,
        Task::Elastic => elastic(config, &model, &out, &mut lines)?,
        Task::Validate => {
            let props = run_suite(config.quick, config.seed)?;
            failed_properties = props.iter().filter(|p| !p.passed).count();
            lines.extend(props.iter().map(|p| p.line()));
            serde_json::to_value(&props)?
        }
    };

    fs::write(out.join("results.csv"), &rows.text)?;
    for (name, text) in &plots {
        fs::write(plot.join(name), text)?;
    }
    let timestamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let summary = json!({
        "artifact_version": ARTIFACT_VERSION,
        "config_hash": config_hash(config)?,
        "task": config.task.as_str(),
        "model": model.name(),
        "seed": config.seed,
        "schedule": config.schedule(),
        "solver": serde_json::to_value(&config.solver)?,
        "timestamp": timestamp,
        "results": results,
        "warnings": warnings,
    });
    fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(RunOutcome {
        out_dir: out,
        rows: rows.count,
        failed_rows: rows.failed,
        failed_properties,
        lines,
        errors: rows.errors,
    })
}

/// SHA-256 of the effective config, excluding the output directory.
pub fn config_hash(config: &RunConfig) -> Result<String> {
    let mut c = config.clone();
    c.output.dir = PathBuf::new();
    let digest = Sha256::digest(serde_json::to_vec(&c)?);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

fn box_json(b: &BoxSolve<f64>) -> Value {
    json!({
        "N": b.n,
        "f_N": b.f_n,
        "energy": b.energy,
        "iters": b.iterations,
        "converged": b.converged,
        "grad_norm": b.grad_norm,
        "start_label": b.start_label,
        "mean_shift": b.mean_shift.as_ref().map(|s| s.to_rows()),
    })
}

fn estimate_json(est: &HomogenizationResult<f64>) -> Value {
    json!({
        "w_cont": est.w_cont,
        "w_fit": est.w_fit,
        "fit_coeff": est.fit_coeff,
        "fit_residual": est.fit_residual,
        "clipped": est.clipped,
        "non_monotone": est.non_monotone,
        "f_values": est.f_values,
        "per_n": est.per_n.iter().map(box_json).collect::<Vec<_>>(),
    })
}

fn homogenize(
    config: &RunConfig,
    model: &Model<f64>,
    rows: &mut Rows,
    warnings: &mut Vec<String>,
    lines: &mut Vec<String>,
    plots: &mut Vec<(String, String)>,
) -> Result<Value> {
    let scan = config.task == Task::CbScan;
    if scan && model.internal() != 0 {
        return Err(Error::Config("cb_scan is defined for Bravais models".into()));
    }
    let schedule = config.schedule();
    let opts = config.solve_options();
    let mut targets: Vec<(String, Mat<f64>, InternalMode<f64>)> = Vec::new();
    for (i, m) in config.boundary_matrices().into_iter().enumerate() {
        match (model.internal(), config.internal_targets()) {
            (0, _) => targets.push((format!("M{i}"), m, InternalMode::None)),
            (_, Some(s0s)) => {
                for (j, s0) in s0s.into_iter().enumerate() {
                    targets.push((format!("M{i}_s{j}"), m.clone(), InternalMode::Mean(s0)));
                }
            }
            (_, None) => targets.push((format!("M{i}"), m, InternalMode::Free)),
        }
    }
    let jobs: Vec<(usize, usize)> = (0..targets.len())
        .flat_map(|t| schedule.iter().map(move |&n| (t, n)))
        .collect();
    let solved: Vec<Result<SolveResult<f64>>> = jobs
        .par_iter()
        .map(|&(t, n)| solve_box(model, &targets[t].1, &targets[t].2, n, &opts))
        .collect();

    let mut solved = solved.into_iter();
    let mut entries = Vec::new();
    for (label, m, mode) in &targets {
        let s0 = match mode {
            InternalMode::Mean(s) => Some(s),
            _ => None,
        };
        let batch: Vec<Result<SolveResult<f64>>> = solved.by_ref().take(schedule.len()).collect();
        for (&n, r) in schedule.iter().zip(&batch) {
            match r {
                Ok(r) => rows.push(m, s0, n, Ok(&box_solve(model, n, r.clone()))),
                Err(e) => rows.push(m, s0, n, Err(e)),
            }
        }
        let mode_name = match mode {
            InternalMode::None => "none",
            InternalMode::Mean(_) => "mean",
            InternalMode::Free => "free",
        };
        let mut entry = json!({
            "label": label,
            "M": m.to_rows(),
            "s0": s0.map(|s| s.to_rows()),
            "internal_mode": mode_name,
        });
        let solves: Result<Vec<SolveResult<f64>>> = batch.into_iter().collect();
        let est = match solves.and_then(|s| estimate_from_solves(model, m, mode.clone(), schedule, s)) {
            Ok(est) => est,
            Err(e) => {
                warnings.push(format!("{label}: no estimate ({e})"));
                entry["error"] = json!(e.to_string());
                entries.push(entry);
                continue;
            }
        };
        warnings.extend(est.warnings.iter().map(|w| format!("{label}: {w}")));
        let w_cb = match mode {
            InternalMode::Free => None,
            _ => cauchy_born_density(model.as_ref(), m, s0).ok(),
        };
        let gap = w_cb.map(|w| w - est.w_cont);
        let mut line = format!("{label} M={}: w_cont = {:.6e}", join(m), est.w_cont);
        if let (Some(w), Some(g)) = (w_cb, gap) {
            let _ = write!(line, ", W_CB = {w:.6e}, gap = {g:.3e}");
        }
        if scan {
            let flagged = gap.is_some_and(|g| g > config.cb_threshold);
            entry["flagged"] = json!(flagged);
            if flagged {
                line.push_str(" [CB failure candidate]");
            }
        }
        lines.push(line);
        entry["w_cb"] = json!(w_cb);
        entry["cb_gap"] = json!(gap);
        entry["estimate"] = estimate_json(&est);
        entries.push(entry);

        let mut csv = String::from("N,inv_N,f_N,fit\n");
        for (&n, &f) in schedule.iter().zip(&est.f_values) {
            let inv = 1.0 / n as f64;
            let _ = writeln!(csv, "{n},{inv:e},{f:e},{:e}", est.w_fit + est.fit_coeff * inv);
        }
        plots.push((format!("{}_{label}.csv", config.task.as_str()), csv));
    }
    Ok(Value::Array(entries))
}

fn tiling(
    config: &RunConfig,
    model: &Model<f64>,
    rows: &mut Rows,
    warnings: &mut Vec<String>,
    lines: &mut Vec<String>,
) -> Result<Value> {
    let opts = config.solve_options();
    let ms = config.boundary_matrices();
    let jobs: Vec<(usize, [usize; 2])> = (0..ms.len())
        .flat_map(|i| config.tiling.iter().map(move |&p| (i, p)))
        .collect();
    let checks: Vec<_> = jobs
        .par_iter()
        .map(|&(i, [n, k])| tiling_upper_bound_check(model, &ms[i], n, k, &opts))
        .collect();
    let mut entries = Vec::new();
    for (&(i, [n, k]), check) in jobs.iter().zip(checks) {
        let m = &ms[i];
        match check {
            Ok(c) => {
                rows.push(m, None, n, Ok(&c.small_solve));
                rows.push(m, None, k, Ok(&c.large_solve));
                let dominated = c.f_k_solved <= c.f_k_tiled + TILING_SLACK;
                if !dominated {
                    warnings.push(format!("M{i} (n={n}, k={k}): solved f_k exceeds the tiled competitor"));
                }
                lines.push(format!(
                    "M{i} n={n} k={k}: f_k solved {:.9e} <= tiled {:.9e}: {}",
                    c.f_k_solved,
                    c.f_k_tiled,
                    if dominated { "yes" } else { "NO" }
                ));
                entries.push(json!({
                    "M": m.to_rows(),
                    "n": n,
                    "k": k,
                    "f_n": c.f_n,
                    "f_k_solved": c.f_k_solved,
                    "f_k_tiled": c.f_k_tiled,
                    "f_k_predicted": c.f_k_predicted,
                    "seam_cells": c.seam_cells,
                    "dominated": dominated,
                }));
            }
            Err(e) => {
                rows.push(m, None, n, Err(&e));
                rows.push(m, None, k, Err(&e));
                entries.push(json!({ "M": m.to_rows(), "n": n, "k": k, "error": e.to_string() }));
            }
        }
    }
    Ok(Value::Array(entries))
}

fn tensor_json(t: &ElasticTensor<f64>) -> Value {
    json!({
        "voigt": t.voigt().to_rows(),
        "cauchy": cauchy_json(&cauchy_residuals(t)),
    })
}

fn cauchy_json(r: &CauchyReport<f64>) -> Value {
    json!({
        "relations": r.cauchy.iter().map(|(k, v)| json!({ "relation": k, "residual": v })).collect::<Vec<_>>(),
        "max": r.max_cauchy(),
        "minor_symmetry": r.minor_symmetry,
        "major_symmetry": r.major_symmetry,
    })
}

fn elastic(config: &RunConfig, model: &Model<f64>, out: &Path, lines: &mut Vec<String>) -> Result<Value> {
    let d = model.lattice().dim();
    let zero_s = Mat::zeros(d, model.internal());
    let density = |m: &Mat<f64>| cauchy_born_density(model.as_ref(), m, Some(&zero_s));
    let numeric = numeric_elastic_tensor(&density, d, config.elastic_h)?;
    let mut result = json!({
        "h": config.elastic_h,
        "numeric": tensor_json(&numeric.tensor),
        "numeric_refined": tensor_json(&numeric.refined),
        "truncation_estimate": numeric.truncation_estimate,
    });
    let mut primary = numeric.tensor.clone();
    lines.push(format!(
        "numeric tensor (h = {}): Cauchy residual {:.3e}, truncation estimate {:.3e}",
        config.elastic_h,
        cauchy_residuals(&numeric.tensor).max_cauchy(),
        numeric.truncation_estimate
    ));
    if let Some((potential, cutoff)) = config.model_potential() {
        let formula = pair_elastic_tensor(potential.as_ref(), &config.lattice_spec()?, cutoff)?;
        let scale = formula.max_abs().max(f64::MIN_POSITIVE);
        let diff = formula
            .entries()
            .iter()
            .zip(numeric.refined.entries())
            .fold(0f64, |a, (x, y)| a.max((x - y).abs()));
        lines.push(format!(
            "pair formula: Cauchy residual {:.3e} (relative {:.3e}); numeric agreement {:.3e} relative",
            cauchy_residuals(&formula).max_cauchy(),
            cauchy_residuals(&formula).max_cauchy() / scale,
            diff / scale
        ));
        result["pair_formula"] = tensor_json(&formula);
        result["formula_vs_numeric"] = json!(diff / scale);
        primary = formula;
    }
    if let Some((q, kappa, delta)) = config.model_quadratic_form() {
        let r = quadratic_model_hessian_check(&q, kappa, delta, config.elastic_h)?;
        lines.push(format!("quadratic form Hessian identity residual {r:.3e}"));
        result["hessian_check"] = json!(r);
    }
    primary.write_csv(fs::File::create(out.join("elastic_tensor.csv"))?)?;
    numeric.tensor.write_csv(fs::File::create(out.join("elastic_tensor_numeric.csv"))?)?;
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config_str;

    fn config(task: &str, extra: &str) -> RunConfig {
        parse_config_str(&format!(
            r#"{{"lattice": {{"d": 2, "A": [[1, 0], [0, 1]]}}, "model": {{"name": "harmonic_spring"}},
                "task": "{task}", "M": [[[1.2, 0], [0, 1]], [[0.9, 0.05], [0, 1.02]]],
                "schedule": [4, 6, 8], "solver": {{"n_random_starts": 2}}{extra}}}"#
        ))
        .unwrap()
    }

    #[test]
    fn homogenize_writes_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let out = run(&config("homogenize", ""), Some(dir.path())).unwrap();
        assert!(out.success() && out.rows == 6 && out.failed_rows == 0);
        let csv = fs::read_to_string(dir.path().join("results.csv")).unwrap();
        let mut it = csv.lines();
        assert_eq!(it.next(), Some(RESULTS_HEADER));
        let first: Vec<&str> = it.next().unwrap().split(',').collect();
        assert_eq!(first.len(), 11);
        assert_eq!(&first[..5], &["homogenize", "harmonic_spring", "1.2;0;0;1", "", "4"]);
        let f: f64 = first[5].parse().unwrap();
        assert!((f - 0.04 * 4.0 / 16.0).abs() < 1e-12);
        let summary: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
        for key in ["config_hash", "task", "results", "warnings", "artifact_version"] {
            assert!(summary.get(key).is_some(), "{key}");
        }
        assert_eq!(summary["results"].as_array().unwrap().len(), 2);
        assert!(dir.path().join("plotdata/homogenize_M0.csv").exists());
    }

    #[test]
    fn results_are_reproducible() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let c = config("cb_scan", "");
        run(&c, Some(a.path())).unwrap();
        run(&c, Some(b.path())).unwrap();
        let read = |d: &Path| fs::read(d.join("results.csv")).unwrap();
        assert_eq!(read(a.path()), read(b.path()));
    }

    #[test]
    fn elastic_tiling_and_validate_tasks() {
        let dir = tempfile::tempdir().unwrap();
        let c = parse_config_str(
            r#"{"lattice": {"d": 2, "A": [[1, 0], [0, 1]]},
                "model": {"name": "pair_potential", "potential": {"kind": "harmonic_shell", "stiffness": 2}, "cutoff": 1},
                "task": "elastic"}"#,
        )
        .unwrap();
        assert!(run(&c, Some(dir.path())).unwrap().success());
        let tensor = fs::read_to_string(dir.path().join("elastic_tensor.csv")).unwrap();
        assert!(tensor.lines().nth(1).unwrap().starts_with("1,1,1,1,4"));

        let tiling = config("tiling_check", r#", "tiling": [[4, 8]]"#);
        let out = run(&tiling, Some(dir.path())).unwrap();
        assert_eq!(out.rows, 4);
        assert!(out.lines.iter().all(|l| l.ends_with("yes")), "{:?}", out.lines);

        let v = config("validate", r#", "quick": true"#);
        let out = run(&v, Some(dir.path())).unwrap();
        assert!(out.success() && out.failed_properties == 0);
    }

    #[test]
    fn hash_ignores_output_dir_but_not_seed() {
        let mut c = config("homogenize", "");
        let h = config_hash(&c).unwrap();
        c.output.dir = PathBuf::from("elsewhere");
        assert_eq!(config_hash(&c).unwrap(), h);
        c.seed = 3;
        assert_ne!(config_hash(&c).unwrap(), h);
    }
}
