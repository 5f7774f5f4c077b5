//! The cell-formula sequence `f_N(M)`, its extrapolation to the continuum
//! density, Cauchy-Born comparisons and the multilattice variants.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lattice::CellGrid;
use crate::mat::Mat;
use crate::models::{affine_cell_gradient, eval_cell_energy, CellEnergy};
use crate::scalar::Real;
use crate::solver::{assemble, multi_start_minimize, SolveOptions, SolveResult};

pub type Model<T> = Arc<dyn CellEnergy<T>>;

/// How the internal variables of a multilattice enter the cell problem.
#[derive(Clone, Debug, PartialEq)]
pub enum InternalMode<T> {
    /// Bravais model, no internal variables.
    None,
    /// Mean over interior cells pinned to `s₀`.
    Mean(Mat<T>),
    /// Unconstrained; minimized out together with the positions.
    Free,
}

impl<T: Real> InternalMode<T> {
    fn s0(&self) -> Option<&Mat<T>> {
        match self {
            InternalMode::Mean(s) => Some(s),
            _ => None,
        }
    }
}

/// Solver diagnostics for one box size.
#[derive(Clone, Debug)]
pub struct BoxSolve<T> {
    pub n: usize,
    /// `E_N / (N^d |det A|)`.
    pub f_n: T,
    pub energy: T,
    pub iterations: usize,
    pub converged: bool,
    pub grad_norm: T,
    pub start_label: String,
    /// Mean internal shift of the minimizer, for multilattice runs.
    pub mean_shift: Option<Mat<T>>,
}

#[derive(Clone, Debug)]
pub struct HomogenizationResult<T> {
    pub m: Mat<T>,
    pub s0: Option<Mat<T>>,
    pub schedule: Vec<usize>,
    /// `E_N / (N^d |det A|)` per box size.
    pub f_values: Vec<T>,
    /// Intercept of the least-squares fit `f = w + a/N`, before clipping.
    pub w_fit: T,
    /// `max(w_fit, 0)`.
    pub w_cont: T,
    /// Slope `a` of the fit.
    pub fit_coeff: T,
    /// Root-mean-square fit residual.
    pub fit_residual: T,
    pub clipped: bool,
    pub non_monotone: bool,
    pub per_n: Vec<BoxSolve<T>>,
    pub warnings: Vec<String>,
}

/// Slack on successive `f_N` differences before the sequence is flagged as
/// changing direction.
const MONOTONE_SLACK: f64 = 1e-9;

/// Gap above which [`cb_validity_scan`] flags a Cauchy-Born failure candidate.
pub const CB_GAP_THRESHOLD: f64 = 1e-3;

fn check_schedule<T: Real>(model: &Model<T>, schedule: &[usize]) -> Result<()> {
    if schedule.len() < 3 {
        return Err(Error::InvalidSchedule("need at least 3 box sizes".into()));
    }
    if schedule.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidSchedule("box sizes must be strictly increasing".into()));
    }
    let r = model.lattice().radius();
    if schedule[0] <= 2 * r {
        return Err(Error::InvalidSchedule(format!(
            "box size {} leaves no interior cells for stencil radius {r}",
            schedule[0]
        )));
    }
    Ok(())
}

fn check_mode<T: Real>(model: &Model<T>, mode: &InternalMode<T>) -> Result<()> {
    match (model.internal(), mode) {
        (0, InternalMode::None) => Ok(()),
        (0, _) => Err(Error::Incompatible("internal variables undefined for Bravais model".into())),
        (m, InternalMode::None) => Err(Error::Incompatible(format!(
            "model has {m} internal atoms; pass a mean target or free mode"
        ))),
        _ => Ok(()),
    }
}

/// Solves the pinned cell problem on `A(0,N)^d` by multi-start descent.
pub fn solve_box<T: Real>(
    model: &Model<T>,
    m: &Mat<T>,
    mode: &InternalMode<T>,
    n: usize,
    opts: &SolveOptions,
) -> Result<SolveResult<T>> {
    check_mode(model, mode)?;
    let grid = Arc::new(CellGrid::new(model.lattice().clone(), n)?);
    let problem = assemble(grid, model.clone(), m, mode.s0())?;
    let result = multi_start_minimize(&problem, opts)?;
    if let Some(field) = &result.internal {
        if let Some(s0) = mode.s0() {
            debug_assert!(field.mean().sub(s0).max_abs() <= T::lit(1e-10) * (T::one() + s0.max_abs()));
        }
    }
    Ok(result)
}

/// `f_N(M) = E_N / N^d`, the best energy found divided by the number of cells
/// of the box (an upper bound on the infimum).
pub fn f_n<T: Real>(model: &Model<T>, m: &Mat<T>, n: usize, opts: &SolveOptions) -> Result<T> {
    let r = solve_box(model, m, &InternalMode::None, n, opts)?;
    Ok(r.energy / box_cells::<T>(model, n))
}

fn box_cells<T: Real>(model: &Model<T>, n: usize) -> T {
    T::from_usize_lossy(n).powi(model.lattice().dim() as i32)
}

/// Per-size record of a solve on the `n`-box.
pub fn box_solve<T: Real>(model: &Model<T>, n: usize, r: SolveResult<T>) -> BoxSolve<T> {
    BoxSolve {
        n,
        f_n: r.energy / box_cells::<T>(model, n) / model.lattice().det_abs(),
        energy: r.energy,
        iterations: r.iterations,
        converged: r.converged,
        grad_norm: r.grad_norm,
        start_label: r.start_label,
        mean_shift: r.internal.as_ref().map(|f| f.mean()),
    }
}

/// Least-squares fit of `f = w + a/N`; returns `(w, a, rms residual)`.
pub fn fit_inverse_n<T: Real>(schedule: &[usize], f: &[T]) -> (T, T, T) {
    let k = T::from_usize_lossy(schedule.len());
    let xs: Vec<T> = schedule.iter().map(|&n| T::one() / T::from_usize_lossy(n)).collect();
    let mx = xs.iter().copied().sum::<T>() / k;
    let mf = f.iter().copied().sum::<T>() / k;
    let sxx: T = xs.iter().map(|&x| (x - mx) * (x - mx)).sum();
    let sxf: T = xs.iter().zip(f).map(|(&x, &v)| (x - mx) * (v - mf)).sum();
    let a = sxf / sxx;
    let w = mf - a * mx;
    let rss: T = xs.iter().zip(f).map(|(&x, &v)| (v - w - a * x).powi(2)).sum();
    (w, a, (rss / k).sqrt())
}

fn estimate<T: Real>(
    model: &Model<T>,
    m: &Mat<T>,
    mode: InternalMode<T>,
    schedule: &[usize],
    opts: &SolveOptions,
) -> Result<HomogenizationResult<T>> {
    check_schedule(model, schedule)?;
    check_mode(model, &mode)?;
    let solves = schedule
        .par_iter()
        .map(|&n| solve_box(model, m, &mode, n, opts))
        .collect::<Result<Vec<_>>>()?;
    estimate_from_solves(model, m, mode, schedule, solves)
}

/// Assembles the extrapolation from one solve per box size of `schedule`.
pub fn estimate_from_solves<T: Real>(
    model: &Model<T>,
    m: &Mat<T>,
    mode: InternalMode<T>,
    schedule: &[usize],
    solves: Vec<SolveResult<T>>,
) -> Result<HomogenizationResult<T>> {
    check_schedule(model, schedule)?;
    check_mode(model, &mode)?;
    if solves.len() != schedule.len() {
        return Err(Error::Shape(format!("{} solves for {} box sizes", solves.len(), schedule.len())));
    }
    let mut per_n = Vec::with_capacity(schedule.len());
    let mut warnings = Vec::new();
    for (&n, r) in schedule.iter().zip(solves) {
        if !r.converged {
            warnings.push(format!(
                "N={n}: best start '{}' stopped at gradient {:e} (upper bound only)",
                r.start_label,
                r.grad_norm.as_f64()
            ));
        }
        per_n.push(box_solve(model, n, r));
    }
    let f_values: Vec<T> = per_n.iter().map(|p| p.f_n).collect();
    let (w_fit, fit_coeff, fit_residual) = fit_inverse_n(schedule, &f_values);
    let clipped = w_fit < T::zero();
    if clipped {
        warnings.push(format!("extrapolated value {:e} clipped to 0", w_fit.as_f64()));
    }
    let slack = T::lit(MONOTONE_SLACK) * (T::one() + f_values.iter().fold(T::zero(), |a, v| a.max(v.abs())));
    let up = f_values.windows(2).any(|w| w[1] > w[0] + slack);
    let down = f_values.windows(2).any(|w| w[1] < w[0] - slack);
    let non_monotone = up && down;
    if non_monotone {
        warnings.push("f_N sequence changes direction across the schedule".into());
    }
    Ok(HomogenizationResult {
        m: m.clone(),
        s0: mode.s0().cloned(),
        schedule: schedule.to_vec(),
        f_values,
        w_fit,
        w_cont: w_fit.max(T::zero()),
        fit_coeff,
        fit_residual,
        clipped,
        non_monotone,
        per_n,
        warnings,
    })
}

/// Extrapolated continuum density `W_cont(M)` for a Bravais model.
pub fn w_cont_estimate<T: Real>(
    model: &Model<T>,
    m: &Mat<T>,
    schedule: &[usize],
    opts: &SolveOptions,
) -> Result<HomogenizationResult<T>> {
    estimate(model, m, InternalMode::None, schedule, opts)
}

/// `W_cont(M, s₀)` with the internal mean pinned to `s0`.
pub fn w_cont_multilattice<T: Real>(
    model: &Model<T>,
    m: &Mat<T>,
    s0: &Mat<T>,
    schedule: &[usize],
    opts: &SolveOptions,
) -> Result<HomogenizationResult<T>> {
    estimate(model, m, InternalMode::Mean(s0.clone()), schedule, opts)
}

/// `min_s W_cont(M, s)`: internal variables left free.
pub fn w_cont_min_over_s<T: Real>(
    model: &Model<T>,
    m: &Mat<T>,
    schedule: &[usize],
    opts: &SolveOptions,
) -> Result<HomogenizationResult<T>> {
    estimate(model, m, InternalMode::Free, schedule, opts)
}

/// `W_CB(M) = W(MZ, s) / |det A|`, stencil columns included; `s` defaults to zero.
pub fn cauchy_born_density<T: Real>(model: &dyn CellEnergy<T>, m: &Mat<T>, s: Option<&Mat<T>>) -> Result<T> {
    let spec = model.lattice();
    let f = affine_cell_gradient(spec, m);
    let zero = Mat::zeros(spec.dim(), model.internal());
    let e = eval_cell_energy(model, &f, s.unwrap_or(&zero))?;
    Ok(e / spec.det_abs())
}

#[derive(Clone, Debug)]
pub struct CbScanRow<T> {
    pub m: Mat<T>,
    pub w_cb: T,
    pub w_cont: T,
    /// `W_CB − w_cont`.
    pub gap: T,
    pub flagged: bool,
    pub estimate: HomogenizationResult<T>,
}

/// Compares `W_CB` with the extrapolated `W_cont` for each `M`; rows whose
/// gap exceeds `threshold` are flagged.
pub fn cb_validity_scan<T: Real>(
    model: &Model<T>,
    ms: &[Mat<T>],
    schedule: &[usize],
    opts: &SolveOptions,
    threshold: T,
) -> Result<Vec<CbScanRow<T>>> {
    ms.iter()
        .map(|m| {
            let w_cb = cauchy_born_density(model.as_ref(), m, None)?;
            let est = w_cont_estimate(model, m, schedule, opts)?;
            let gap = w_cb - est.w_cont;
            Ok(CbScanRow {
                m: m.clone(),
                w_cb,
                w_cont: est.w_cont,
                gap,
                flagged: gap > threshold,
                estimate: est,
            })
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct TilingCheck<T> {
    pub n: usize,
    pub k: usize,
    /// `E_n / n^d` of the small-box minimizer.
    pub f_n: T,
    pub f_k_solved: T,
    /// Energy of the tiled field divided by `k^d`.
    pub f_k_tiled: T,
    /// `((k/n)^d E_n + s·W(MZ)) / k^d` with `s` the number of seam cells;
    /// exact for unit-cell stencils when `n` divides `k`.
    pub f_k_predicted: Option<T>,
    pub seam_cells: usize,
    pub small_solve: BoxSolve<T>,
    pub large_solve: BoxSolve<T>,
}

/// Tiles the `n`-box minimizer `v_n` over the `k`-box as
/// `u_k(x) = v_n(x − nAα) + nMAα`, leaving sites outside complete tiles on
/// the affine map, and compares with a direct solve on the `k`-box.
pub fn tiling_upper_bound_check<T: Real>(
    model: &Model<T>,
    m: &Mat<T>,
    n: usize,
    k: usize,
    opts: &SolveOptions,
) -> Result<TilingCheck<T>> {
    if model.internal() != 0 {
        return Err(Error::Incompatible("tiling check is defined for Bravais models".into()));
    }
    if k < n {
        return Err(Error::InvalidParameter(format!("k = {k} must be at least n = {n}")));
    }
    let spec = model.lattice();
    let d = spec.dim();
    let small = solve_box(model, m, &InternalMode::None, n, opts)?;
    let solved = solve_box(model, m, &InternalMode::None, k, opts)?;

    let grid_k = Arc::new(CellGrid::new(spec.clone(), k)?);
    let grid_n = small.deformation.grid().clone();
    let q = k / n;
    let ma = m.matmul(spec.basis());
    let mut y = Vec::with_capacity(grid_k.n_sites() * d);
    for site in 0..grid_k.n_sites() {
        let j = grid_k.site_coords(site);
        if j.iter().all(|&jb| jb <= q * n) {
            let alpha: Vec<usize> = j.iter().map(|&jb| (jb / n).min(q - 1)).collect();
            let local: Vec<usize> = j.iter().zip(&alpha).map(|(&jb, &a)| jb - n * a).collect();
            let v = small.deformation.site(grid_n.site_index(&local));
            let shift: Vec<T> = alpha.iter().map(|&a| T::from_usize_lossy(n * a)).collect();
            let offset = ma.mul_vec(&shift);
            y.extend(v.iter().zip(offset).map(|(&a, b)| a + b));
        } else {
            let x: Vec<T> = j.iter().map(|&jb| T::from_usize_lossy(jb)).collect();
            y.extend(ma.mul_vec(&x));
        }
    }
    let tiled = crate::fields::Deformation::new(grid_k.clone(), y)?;
    let problem_k = assemble(grid_k.clone(), model.clone(), m, None)?;
    let e_tiled = problem_k.energy(&problem_k.pack(&tiled, None)?)?;

    // interior cells of the k-box lying in the boundary layer of their tile
    let seam_cells = grid_k
        .interior_cells()
        .iter()
        .filter(|&&cell| {
            let c = grid_k.cell_coords(cell);
            c.iter().any(|&cb| {
                if cb >= q * n {
                    return true;
                }
                let local = cb % n;
                local == 0 || local == n - 1
            })
        })
        .count();
    let kd = T::from_usize_lossy(k).powi(d as i32);
    let nd = T::from_usize_lossy(n).powi(d as i32);
    let f_k_predicted = (spec.stencil_len() == spec.n_corners() && k.is_multiple_of(n)).then(|| {
        let w_mz = model.energy(&affine_cell_gradient(spec, m), &Mat::zeros(d, 0));
        (T::from_usize_lossy(q).powi(d as i32) * small.energy + T::from_usize_lossy(seam_cells) * w_mz) / kd
    });
    Ok(TilingCheck {
        n,
        k,
        f_n: small.energy / nd,
        f_k_solved: solved.energy / kd,
        f_k_tiled: e_tiled / kd,
        f_k_predicted,
        seam_cells,
        small_solve: box_solve(model, n, small),
        large_solve: box_solve(model, k, solved),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::LatticeSpec;
    use crate::models::{HarmonicSpring, MultilatticeHarmonic};

    fn harmonic() -> Model<f64> {
        Arc::new(HarmonicSpring::new(LatticeSpec::cubic(2, 1.0).unwrap(), 1.0, 1.0).unwrap())
    }

    fn quick() -> SolveOptions {
        SolveOptions {
            n_random_starts: 2,
            ..SolveOptions::default()
        }
    }

    #[test]
    fn fit_recovers_exact_line() {
        let sched = [8, 16, 32, 64];
        let f: Vec<f64> = sched.iter().map(|&n| 0.3 - 1.5 / n as f64).collect();
        let (w, a, r) = fit_inverse_n(&sched, &f);
        assert!((w - 0.3).abs() < 1e-14 && (a + 1.5).abs() < 1e-12 && r < 1e-14);
    }

    #[test]
    fn schedule_validation() {
        let m = Mat::identity(2);
        for bad in [&[8, 16][..], &[8, 8, 16], &[2, 8, 16], &[16, 8, 32]] {
            assert!(matches!(
                w_cont_estimate(&harmonic(), &m, bad, &quick()),
                Err(Error::InvalidSchedule(_))
            ));
        }
    }

    #[test]
    fn cb_density_examples() {
        let h = harmonic();
        assert!((cauchy_born_density(h.as_ref(), &Mat::diag(&[1.2, 1.0]), None).unwrap() - 0.04).abs() < 1e-15);
        assert!((cauchy_born_density(h.as_ref(), &Mat::diag(&[0.5, 1.0]), None).unwrap() - 0.25).abs() < 1e-15);
        assert!(cauchy_born_density(h.as_ref(), &Mat::rotation_2d(0.7), None).unwrap() < 1e-30);
    }

    #[test]
    fn f_n_small_examples() {
        let h = harmonic();
        assert!(f_n(&h, &Mat::identity(2), 8, &quick()).unwrap() <= 1e-12);
        assert!(f_n(&h, &Mat::rotation_2d(std::f64::consts::PI / 6.0), 8, &quick()).unwrap() <= 1e-12);
        let f = f_n(&h, &Mat::diag(&[1.2, 1.0]), 8, &quick()).unwrap();
        assert!((f - 0.0225).abs() < 1e-10);
    }

    #[test]
    fn tiling_identity_and_formula() {
        let h = harmonic();
        let t = tiling_upper_bound_check(&h, &Mat::identity(2), 5, 10, &quick()).unwrap();
        assert!(t.f_k_solved <= 1e-20 && t.f_k_tiled <= 1e-20);
        let m = Mat::diag(&[0.6, 1.0]);
        let t = tiling_upper_bound_check(&h, &m, 6, 12, &quick()).unwrap();
        assert!((t.f_k_tiled - t.f_k_predicted.unwrap()).abs() < 1e-12);
        assert!(t.f_k_solved <= t.f_k_tiled + 1e-9);
        // non-multiple k: leftover band stays affine and the field is admissible
        let t = tiling_upper_bound_check(&h, &m, 6, 14, &quick()).unwrap();
        assert!(t.f_k_predicted.is_none() && t.f_k_tiled.is_finite());
    }

    #[test]
    fn multilattice_rest_state_and_mode_errors() {
        let spec = LatticeSpec::cubic(2, 1.0).unwrap().with_internal(1);
        let ml: Model<f64> = Arc::new(MultilatticeHarmonic::new(spec, 1.0).unwrap());
        let r = w_cont_multilattice(&ml, &Mat::identity(2), &Mat::zeros(2, 1), &[4, 5, 6], &quick()).unwrap();
        assert!(r.w_cont <= 1e-12);
        assert!(matches!(
            w_cont_estimate(&ml, &Mat::identity(2), &[4, 5, 6], &quick()),
            Err(Error::Incompatible(_))
        ));
        assert!(matches!(
            w_cont_min_over_s(&harmonic(), &Mat::identity(2), &[4, 5, 6], &quick()),
            Err(Error::Incompatible(_))
        ));
    }
}
