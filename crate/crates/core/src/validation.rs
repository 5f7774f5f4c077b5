//! Invariant suite run by `cellhom validate`: one pass/fail line per property.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::elasticity::{cauchy_residuals, pair_elastic_tensor, quadratic_model_hessian_check, stress_free_spacing};
use crate::error::Result;
use crate::fields::{affine_deformation, certified_constants, gradient_equivalence_ratio, Deformation};
use crate::homogenize::{f_n, Model};
use crate::lattice::{CellGrid, LatticeSpec};
use crate::mat::Mat;
use crate::models::{
    affine_cell_gradient, gradient_fd_error, FrobeniusSquared, HarmonicShell, HarmonicSpring,
    LennardJones, MultilatticeHarmonic, PairPotentialModel, QuadraticForm, QuadraticFormModel, QuasiconvexWrapper,
};
use crate::solver::{assemble, multi_start_minimize, SolveOptions};

#[derive(Clone, Debug, Serialize)]
pub struct PropertyResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl PropertyResult {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.into(),
            passed,
            detail,
        }
    }

    /// `PASS name: detail` or `FAIL name: detail`.
    pub fn line(&self) -> String {
        format!("{} {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

/// The built-in models on their reference lattices.
pub fn builtin_models() -> Result<Vec<Model<f64>>> {
    let square = LatticeSpec::cubic(2, 1.0)?;
    let lj = LennardJones::with_minimum_at(1.0, 1.0, 0.0);
    Ok(vec![
        Arc::new(HarmonicSpring::new(square.clone(), 1.0, 1.0)?),
        Arc::new(PairPotentialModel::new(&square, Arc::new(lj), 2.5)?),
        Arc::new(PairPotentialModel::new(&square, Arc::new(HarmonicShell { stiffness: 2.0 }), 1.5)?),
        Arc::new(QuasiconvexWrapper::kuhn(square.clone(), Arc::new(FrobeniusSquared))?),
        Arc::new(QuadraticFormModel::new(square.clone(), QuadraticForm::isotropic(1.0, 1.0)?, 1.0, 0.2)?),
        Arc::new(MultilatticeHarmonic::new(square.with_internal(1), 1.0)?),
        Arc::new(PairPotentialModel::new(
            &LatticeSpec::cubic(3, 1.0)?,
            Arc::new(HarmonicShell { stiffness: 1.0 }),
            1.5,
        )?),
    ])
}

fn uniform(rng: &mut ChaCha8Rng, amp: f64) -> f64 {
    amp * rng.gen_range(-1.0..1.0)
}

fn random_mat(rng: &mut ChaCha8Rng, r: usize, c: usize, amp: f64) -> Mat<f64> {
    Mat::from_fn(r, c, |_, _| uniform(rng, amp))
}

/// Random rotation: a 2D angle or a 3D axis-angle pair.
pub fn random_rotation(rng: &mut ChaCha8Rng, d: usize) -> Mat<f64> {
    let angle = uniform(rng, std::f64::consts::PI);
    if d == 2 {
        return Mat::rotation_2d(angle);
    }
    loop {
        let axis = [uniform(rng, 1.0), uniform(rng, 1.0), uniform(rng, 1.0)];
        if axis.iter().map(|v| v * v).sum::<f64>() > 0.01 {
            return Mat::rotation_3d(axis, angle);
        }
    }
}

/// Random admissible state near `Z`: `(I + E)` applied to the stencil plus noise,
/// with the corner block shifted back to zero row sums.
pub fn random_cell_state(spec: &LatticeSpec<f64>, rng: &mut ChaCha8Rng, strain: f64, noise: f64) -> Mat<f64> {
    let d = spec.dim();
    let m = Mat::identity(d).add(&random_mat(rng, d, d, strain));
    let mut f = affine_cell_gradient(spec, &m).add(&random_mat(rng, d, spec.stencil_len(), noise));
    let nc = spec.n_corners();
    for i in 0..d {
        let mean = (0..nc).map(|c| f[(i, c)]).sum::<f64>() / nc as f64;
        for c in 0..f.cols() {
            f[(i, c)] -= mean;
        }
    }
    f
}

fn check_gradients(models: &[Model<f64>], samples: usize, rng: &mut ChaCha8Rng) -> PropertyResult {
    let mut worst = 0f64;
    for model in models {
        let spec = model.lattice();
        for _ in 0..samples {
            let f = random_cell_state(spec, rng, 0.2, 0.1);
            let s = random_mat(rng, spec.dim(), model.internal(), 0.2);
            worst = worst.max(gradient_fd_error(model.as_ref(), &f, &s));
        }
    }
    PropertyResult::new(
        "gradient_fd",
        worst <= 1e-6,
        format!("max relative error {worst:.2e} over {samples} states per model"),
    )
}

fn check_translation_and_frames(models: &[Model<f64>], samples: usize, rng: &mut ChaCha8Rng) -> Vec<PropertyResult> {
    let (mut trans, mut frame) = (0f64, 0f64);
    for model in models {
        let spec = model.lattice();
        let d = spec.dim();
        for _ in 0..samples {
            let f = random_cell_state(spec, rng, 0.2, 0.1);
            let s = random_mat(rng, d, model.internal(), 0.2);
            let e = model.energy(&f, &s);
            let c = random_mat(rng, d, 1, 1.0);
            let mut shifted = f.clone();
            for i in 0..d {
                for k in 0..f.cols() {
                    shifted[(i, k)] += c[(i, 0)];
                }
            }
            trans = trans.max((model.energy(&shifted, &s) - e).abs() / (1.0 + e.abs()));
            if model.frame_indifferent() {
                let r = random_rotation(rng, d);
                frame = frame.max((model.energy(&r.matmul(&f), &r.matmul(&s)) - e).abs() / (1.0 + e.abs()));
            }
        }
    }
    vec![
        PropertyResult::new("translation_invariance", trans <= 1e-12, format!("max relative change {trans:.2e}")),
        PropertyResult::new("frame_indifference", frame <= 1e-10, format!("max relative change {frame:.2e}")),
    ]
}

fn check_zero_set(models: &[Model<f64>], rotations: usize, rng: &mut ChaCha8Rng, n: usize) -> Result<PropertyResult> {
    let opts = SolveOptions {
        n_random_starts: 0,
        ..SolveOptions::default()
    };
    let mut worst = 0f64;
    let mut count = 0;
    for model in models.iter().filter(|m| m.vanishes_on_rotations() && m.internal() == 0) {
        let d = model.lattice().dim();
        for _ in 0..rotations {
            let r = random_rotation(rng, d);
            worst = worst.max(f_n(model, &r, if d == 2 { n } else { 4 }, &opts)?);
        }
        count += 1;
    }
    Ok(PropertyResult::new(
        "zero_energy_on_rotations",
        worst <= 1e-12,
        format!("max f_N(R) {worst:.2e} over {count} models"),
    ))
}

fn check_sandwich(cells: usize, rng: &mut ChaCha8Rng) -> Result<PropertyResult> {
    let mut outside = 0;
    let mut detail = String::new();
    for d in [2usize, 3] {
        let grid = Arc::new(CellGrid::new(LatticeSpec::cubic(d, 1.0)?, 3)?);
        let centre = grid.interior_cells()[0];
        let base = affine_deformation(&grid, &Mat::identity(d));
        for p in [2.0, 4.0] {
            let (lo, hi) = certified_constants(&grid, p);
            let (mut rmin, mut rmax) = (f64::INFINITY, 0f64);
            for _ in 0..cells {
                let y: Vec<f64> = base
                    .positions()
                    .iter()
                    .map(|&x| x + uniform(rng, 0.5))
                    .collect();
                let def = Deformation::new(grid.clone(), y)?;
                let r = gradient_equivalence_ratio(&def, centre, p)?;
                rmin = rmin.min(r);
                rmax = rmax.max(r);
                if r < lo * (1.0 - 1e-12) || r > hi * (1.0 + 1e-12) {
                    outside += 1;
                }
            }
            detail.push_str(&format!("d={d} p={p}: [{rmin:.4}, {rmax:.4}] in [{lo:.4}, {hi:.4}]; "));
        }
    }
    Ok(PropertyResult::new("gradient_sandwich", outside == 0, detail.trim_end_matches("; ").into()))
}

fn check_elasticity() -> Result<Vec<PropertyResult>> {
    let lj = LennardJones::with_minimum_at(1.0, 1.0, 0.0);
    let mut worst = 0f64;
    for d in [2usize, 3] {
        let a = stress_free_spacing(&lj, d, 2.5, 1.0)?;
        let t = pair_elastic_tensor(&lj, &LatticeSpec::cubic(d, a)?, 2.5 * a)?;
        worst = worst.max(cauchy_residuals(&t).max_cauchy() / t.max_abs());
    }
    let hess = quadratic_model_hessian_check(&QuadraticForm::isotropic(0.0, 1.0)?, 1.0, 0.2, 1e-3)?;
    Ok(vec![
        PropertyResult::new("pair_cauchy_relations", worst <= 1e-10, format!("max relative residual {worst:.2e}")),
        PropertyResult::new("quadratic_hessian_identity", hess <= 1e-5, format!("residual {hess:.2e}")),
    ])
}

fn check_tension(schedule: &[usize]) -> Result<PropertyResult> {
    let model: Model<f64> = Arc::new(HarmonicSpring::new(LatticeSpec::cubic(2, 1.0)?, 1.0, 1.0)?);
    let m = Mat::diag(&[1.2, 1.0]);
    let mut worst = 0f64;
    for &n in schedule {
        let exact = 0.04 * ((n - 2) * (n - 2)) as f64 / (n * n) as f64;
        worst = worst.max((f_n(&model, &m, n, &SolveOptions::default())? - exact).abs());
    }
    Ok(PropertyResult::new(
        "harmonic_tension_closed_form",
        worst <= 1e-8,
        format!("max |f_N - 0.04(N-2)^2/N^2| = {worst:.2e} for N in {schedule:?}"),
    ))
}

fn check_solver(n: usize) -> Result<Vec<PropertyResult>> {
    let spec = LatticeSpec::cubic(2, 1.0)?;
    let model: Model<f64> = Arc::new(HarmonicSpring::new(spec.clone(), 1.0, 1.0)?);
    let grid = Arc::new(CellGrid::new(spec, n)?);
    let problem = assemble(grid, model, &Mat::diag(&[0.7, 1.05]), None)?;
    let opts = SolveOptions {
        n_random_starts: 3,
        seed: 7,
        ..SolveOptions::default()
    };
    let a = multi_start_minimize(&problem, &opts)?;
    let b = multi_start_minimize(&problem, &opts)?;
    let monotone = a.energy_history.windows(2).all(|w| w[1] <= w[0]);
    let same = a.energy.to_bits() == b.energy.to_bits() && a.deformation.positions() == b.deformation.positions();
    Ok(vec![
        PropertyResult::new(
            "monotone_descent",
            monotone && a.energy >= 0.0,
            format!("{} accepted energies, final {:.6e}", a.energy_history.len(), a.energy),
        ),
        PropertyResult::new("deterministic_multistart", same, format!("best start '{}'", a.start_label)),
    ])
}

fn check_interior_counts(max_n: usize) -> Result<PropertyResult> {
    let mut ok = true;
    for d in [2usize, 3] {
        let spec = LatticeSpec::cubic(d, 1.0)?;
        for n in 3..=max_n {
            let g = CellGrid::new(spec.clone(), n)?;
            ok &= g.interior_cells().len() == (n - 2).pow(d as u32) && g.n_sites() == (n + 1).pow(d as u32);
        }
    }
    Ok(PropertyResult::new("interior_cell_count", ok, format!("N = 3..={max_n}, d = 2, 3")))
}

/// Runs every property; `quick` shrinks sample counts and box sizes.
pub fn run_suite(quick: bool, seed: u64) -> Result<Vec<PropertyResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let models = builtin_models()?;
    let mut out = vec![check_interior_counts(if quick { 8 } else { 12 })?];
    out.push(check_gradients(&models, if quick { 10 } else { 100 }, &mut rng));
    out.extend(check_translation_and_frames(&models, if quick { 10 } else { 50 }, &mut rng));
    out.push(check_zero_set(&models, if quick { 3 } else { 10 }, &mut rng, if quick { 5 } else { 8 })?);
    out.push(check_sandwich(if quick { 1000 } else { 10_000 }, &mut rng)?);
    out.extend(check_elasticity()?);
    out.push(check_tension(if quick { &[8, 16] } else { &[8, 16, 32] })?);
    out.extend(check_solver(if quick { 6 } else { 10 })?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quick_suite_passes() {
        let results = run_suite(true, 0).unwrap();
        for r in &results {
            assert!(r.passed, "{}", r.line());
        }
        assert!(results.len() >= 10);
    }
}
