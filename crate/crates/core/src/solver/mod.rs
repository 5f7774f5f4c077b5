//! Minimization of the pinned cell problem.

mod lbfgs;
mod problem;

pub use problem::{assemble, Problem};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fields::{Deformation, InternalField};
use crate::lattice::CellGrid;
use crate::mat::Mat;
use crate::scalar::Real;

/// Bond length below which a start is nudged off the non-smooth point.
const CONTACT_LENGTH: f64 = 1e-8;
const CONTACT_NUDGE: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct SolveOptions {
    /// Sup-norm gradient tolerance.
    pub grad_tol: f64,
    pub max_iter: usize,
    /// Quasi-Newton memory length.
    pub history: usize,
    pub n_random_starts: usize,
    /// Amplitude of the uniform noise of random starts (lattice units).
    pub perturb_amp: f64,
    pub seed: u64,
    pub use_buckling_starts: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            grad_tol: 1e-8,
            max_iter: 5000,
            history: 10,
            n_random_starts: 8,
            perturb_amp: 0.1,
            seed: 0,
            use_buckling_starts: true,
        }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.grad_tol > 0.0) {
            return Err(Error::InvalidParameter("grad_tol must be positive".into()));
        }
        if self.max_iter < 1 || self.history < 1 {
            return Err(Error::InvalidParameter("max_iter and history must be at least 1".into()));
        }
        if !(self.perturb_amp >= 0.0) || !self.perturb_amp.is_finite() {
            return Err(Error::InvalidParameter("perturb_amp must be finite and nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SolveResult<T> {
    /// Total interior-cell energy.
    pub energy: T,
    pub deformation: Deformation<T>,
    pub internal: Option<InternalField<T>>,
    pub iterations: usize,
    pub converged: bool,
    pub grad_norm: T,
    pub start_label: String,
    /// Accepted energies, starting with the initial one.
    pub energy_history: Vec<T>,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Generator for start `index`; independent of scheduling.
fn start_rng(seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix(seed ^ splitmix(index.wrapping_add(0x5151))))
}

fn add_noise<T: Real>(x: &mut [T], rng: &mut ChaCha8Rng, amp: f64) {
    for v in x.iter_mut() {
        *v = *v + T::lit(amp * rng.gen_range(-1.0..=1.0));
    }
}

fn minimize_vars<T: Real>(problem: &Problem<T>, opts: &SolveOptions, mut x0: Vec<T>, label: &str) -> Result<SolveResult<T>> {
    opts.validate()?;
    if x0.len() != problem.n_vars() || x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("start"));
    }
    if problem.min_bond_length(&x0) < T::lit(CONTACT_LENGTH) {
        let mut rng = start_rng(opts.seed, u64::MAX);
        add_noise(&mut x0, &mut rng, CONTACT_NUDGE);
    }
    let out = lbfgs::lbfgs(|x| problem.energy_and_gradient(x), x0, opts)?;
    let (deformation, internal) = problem.unpack(&out.x)?;
    Ok(SolveResult {
        energy: out.f,
        deformation,
        internal,
        iterations: out.iterations,
        converged: out.converged,
        grad_norm: out.grad_norm,
        start_label: label.to_string(),
        energy_history: out.history,
    })
}

/// Quasi-Newton descent from `start` (which must satisfy the pinning). The
/// internal field defaults to `s₀` on every cell, or zero.
pub fn minimize<T: Real>(
    problem: &Problem<T>,
    opts: &SolveOptions,
    start: &Deformation<T>,
    internal: Option<&InternalField<T>>,
) -> Result<SolveResult<T>> {
    let x0 = problem.pack(start, internal)?;
    minimize_vars(problem, opts, x0, "given")
}

/// `y(x) = Mx + σ₁(j₁) + σ₂(j₂)` on free sites, with the zig-zag
/// `σ_i(z) = ½(−1)^z √(1/|m_i|² − 1) (−m_{2i}, m_{1i})` for compressed
/// columns `m_i` (and zero otherwise). Pinned sites keep `Mx`.
pub fn buckling_start<T: Real>(grid: &std::sync::Arc<CellGrid<T>>, m: &Mat<T>) -> Result<Deformation<T>> {
    if grid.dim() != 2 {
        return Err(Error::BucklingNot2d);
    }
    let amps = buckling_amplitudes(m);
    let mut def = crate::fields::affine_deformation(grid, m);
    for &site in grid.free_sites() {
        let j = grid.site_coords(site);
        let y = &mut def.positions_mut()[site * 2..site * 2 + 2];
        for (i, amp) in amps.iter().enumerate() {
            if let Some(dir) = amp {
                let sign = if j[i].is_multiple_of(2) { T::one() } else { -T::one() };
                y[0] = y[0] + sign * dir[0];
                y[1] = y[1] + sign * dir[1];
            }
        }
    }
    Ok(def)
}

/// `σ_i(0)` per column, `None` where the column is not compressed.
fn buckling_amplitudes<T: Real>(m: &Mat<T>) -> [Option<[T; 2]>; 2] {
    let half = T::lit(0.5);
    let mut out = [None, None];
    for (i, slot) in out.iter_mut().enumerate() {
        let (a, b) = (m[(0, i)], m[(1, i)]);
        let n2 = a * a + b * b;
        if n2 > T::zero() && n2 < T::one() {
            let k = half * (T::one() / n2 - T::one()).sqrt();
            *slot = Some([-b * k, a * k]);
        }
    }
    out
}

/// Runs [`minimize`] from the affine start, the buckling start (2D, when a
/// column of `M` is compressed) and `n_random_starts` noisy affine starts,
/// in parallel. Returns the lowest energy found. Energies equal up to roundoff
/// prefer a converged run, then the earlier start.
pub fn multi_start_minimize<T: Real>(problem: &Problem<T>, opts: &SolveOptions) -> Result<SolveResult<T>> {
    opts.validate()?;
    let mut starts: Vec<(String, Vec<T>)> = vec![("affine".into(), problem.affine_vars())];
    let grid = problem.grid();
    if opts.use_buckling_starts
        && grid.dim() == 2
        && buckling_amplitudes(problem.boundary_matrix()).iter().any(Option::is_some)
    {
        let def = buckling_start(grid, problem.boundary_matrix())?;
        let mut x = problem.pack(&def, None)?;
        let n_pos = problem.n_position_vars();
        x[n_pos..].copy_from_slice(&problem.affine_vars()[n_pos..]);
        starts.push(("buckling".into(), x));
    }
    for r in 0..opts.n_random_starts {
        let mut x = problem.affine_vars();
        let mut rng = start_rng(opts.seed, r as u64);
        add_noise(&mut x, &mut rng, opts.perturb_amp);
        starts.push((format!("random-{r}"), x));
    }
    let n = starts.len();
    let results: Vec<Result<SolveResult<T>>> = starts
        .into_par_iter()
        .map(|(label, x)| minimize_vars(problem, opts, x, &label))
        .collect();
    results
        .into_iter()
        .filter_map(|r| r.ok())
        .fold(None, |best: Option<SolveResult<T>>, r| match best {
            Some(b) if !better(&r, &b) => Some(b),
            _ => Some(r),
        })
        .ok_or(Error::AllStartsFailed(n))
}

fn better<T: Real>(r: &SolveResult<T>, b: &SolveResult<T>) -> bool {
    let tie = T::lit(64.0) * T::epsilon() * (T::one() + b.energy.abs());
    r.energy < b.energy - tie || (r.energy <= b.energy + tie && r.converged && !b.converged)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::fields::affine_deformation;
    use crate::lattice::LatticeSpec;
    use crate::models::{CellEnergy, HarmonicSpring, MultilatticeHarmonic, PairPotentialModel, LennardJones};

    fn harmonic_problem(n: usize, m: &Mat<f64>) -> Problem<f64> {
        let spec = LatticeSpec::cubic(2, 1.0).unwrap();
        let model: Arc<dyn CellEnergy<f64>> = Arc::new(HarmonicSpring::new(spec.clone(), 1.0, 1.0).unwrap());
        let grid = Arc::new(CellGrid::new(spec, n).unwrap());
        assemble(grid, model, m, None).unwrap()
    }

    fn ml_problem(n: usize, m: &Mat<f64>, s0: Option<&Mat<f64>>) -> Problem<f64> {
        let spec = LatticeSpec::cubic(2, 1.0).unwrap().with_internal(1);
        let model: Arc<dyn CellEnergy<f64>> = Arc::new(MultilatticeHarmonic::new(spec.clone(), 1.0).unwrap());
        let grid = Arc::new(CellGrid::new(spec, n).unwrap());
        assemble(grid, model, m, s0).unwrap()
    }

    fn fd_check(p: &Problem<f64>, x: &[f64]) -> f64 {
        let (_, g) = p.energy_and_gradient(x).unwrap();
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for k in 0..x.len() {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[k] += h;
            xm[k] -= h;
            let fd = (p.energy(&xp).unwrap() - p.energy(&xm).unwrap()) / (2.0 * h);
            worst = worst.max((fd - g[k]).abs());
        }
        let scale = g.iter().fold(1f64, |a, v| a.max(v.abs()));
        worst / scale
    }

    #[test]
    fn variable_counts() {
        let p = harmonic_problem(5, &Mat::identity(2));
        assert_eq!(p.n_vars(), 2 * 4);
        let s0 = Mat::zeros(2, 1);
        assert_eq!(ml_problem(5, &Mat::identity(2), Some(&s0)).n_internal_vars(), 2 * 9);
        assert_eq!(ml_problem(5, &Mat::identity(2), None).n_internal_vars(), 2 * 9);
    }

    #[test]
    fn incompatible_inputs_rejected() {
        let spec = LatticeSpec::cubic(2, 1.0).unwrap();
        let model: Arc<dyn CellEnergy<f64>> = Arc::new(HarmonicSpring::new(spec.clone(), 1.0, 1.0).unwrap());
        let grid = Arc::new(CellGrid::new(spec.clone(), 5).unwrap());
        assert!(matches!(
            assemble(grid.clone(), model.clone(), &Mat::identity(2), Some(&Mat::zeros(2, 1))),
            Err(Error::Incompatible(_))
        ));
        let lj: Arc<dyn CellEnergy<f64>> =
            Arc::new(PairPotentialModel::new(&spec, Arc::new(LennardJones::with_minimum_at(1.0, 1.0, 0.0)), 2.5).unwrap());
        assert!(matches!(assemble(grid, lj, &Mat::identity(2), None), Err(Error::Incompatible(_))));
    }

    #[test]
    fn affine_identity_is_critical() {
        let p = harmonic_problem(6, &Mat::identity(2));
        let (e, g) = p.energy_and_gradient(&p.affine_vars()).unwrap();
        assert_eq!(e, 0.0);
        assert!(g.iter().all(|&v| v == 0.0));
        let r = minimize(&p, &SolveOptions::default(), &affine_deformation(p.grid(), &Mat::identity(2)), None).unwrap();
        assert!(r.converged && r.iterations == 0 && r.energy == 0.0);
    }

    #[test]
    fn gradient_matches_fd_and_forces_balance() {
        let p = harmonic_problem(6, &Mat::from_row_slice(2, 2, &[0.8, 0.1, -0.2, 1.1]));
        let mut x = p.affine_vars();
        add_noise(&mut x, &mut start_rng(3, 0), 0.2);
        assert!(fd_check(&p, &x) < 1e-6);
        let sg = p.site_gradient(&x).unwrap();
        for i in 0..2 {
            let total: f64 = sg.iter().skip(i).step_by(2).sum();
            assert!(total.abs() < 1e-12);
        }
        let s0 = Mat::from_row_slice(2, 1, &[0.1, -0.05]);
        for s in [Some(&s0), None] {
            let p = ml_problem(6, &Mat::diag(&[1.1, 0.95]), s);
            let mut x = p.affine_vars();
            add_noise(&mut x, &mut start_rng(4, 1), 0.1);
            assert!(fd_check(&p, &x) < 1e-6);
        }
    }

    #[test]
    fn mean_constraint_holds_along_iterates() {
        let s0 = Mat::from_row_slice(2, 1, &[0.2, 0.0]);
        let p = ml_problem(6, &Mat::identity(2), Some(&s0));
        let mut x = p.affine_vars();
        add_noise(&mut x, &mut start_rng(5, 0), 0.05);
        let (_, f) = p.unpack(&x).unwrap();
        assert!(f.unwrap().mean().sub(&s0).max_abs() < 1e-12);
        let r = multi_start_minimize(&p, &SolveOptions { n_random_starts: 2, ..Default::default() }).unwrap();
        assert!(r.internal.unwrap().mean().sub(&s0).max_abs() < 1e-12);
    }

    #[test]
    fn tension_affine_value_and_pinning() {
        let m = Mat::diag(&[1.2, 1.0]);
        let p = harmonic_problem(8, &m);
        let start = affine_deformation(p.grid(), &m);
        let r = minimize(&p, &SolveOptions::default(), &start, None).unwrap();
        assert!((r.energy / 64.0 - 0.04 * 36.0 / 64.0).abs() < 1e-12);
        for &s in p.grid().pinned_sites() {
            assert_eq!(r.deformation.site(s), start.site(s));
        }
        assert!(r.energy_history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn start_must_respect_pinning() {
        let p = harmonic_problem(5, &Mat::identity(2));
        let bad = affine_deformation(p.grid(), &Mat::diag(&[1.1, 1.0]));
        assert!(minimize(&p, &SolveOptions::default(), &bad, None).is_err());
    }

    #[test]
    fn buckling_field() {
        let spec = LatticeSpec::<f64>::cubic(2, 1.0).unwrap();
        let grid = Arc::new(CellGrid::new(spec.clone(), 8).unwrap());
        let m = Mat::diag(&[0.5f64, 1.0]);
        let amps = buckling_amplitudes(&m);
        let a = amps[0].unwrap();
        assert!(a[0].abs() < 1e-15 && (a[1] - 0.5 * 3f64.sqrt() * 0.5).abs() < 1e-15);
        assert!(amps[1].is_none());
        let def = buckling_start(&grid, &m).unwrap();
        // horizontal bonds between two free sites have unit length
        for &s in grid.free_sites() {
            let j = grid.site_coords(s);
            let t = grid.site_index(&[j[0] + 1, j[1]]);
            if !grid.is_pinned(t) {
                let (p, q) = (def.site(s), def.site(t));
                let len = ((q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2)).sqrt();
                assert!((len - 1.0).abs() < 1e-14);
            }
        }
        let id = buckling_start(&grid, &Mat::identity(2)).unwrap();
        assert_eq!(id.positions(), affine_deformation(&grid, &Mat::identity(2)).positions());
        let g3 = Arc::new(CellGrid::new(LatticeSpec::<f64>::cubic(3, 1.0).unwrap(), 4).unwrap());
        assert!(matches!(buckling_start(&g3, &Mat::identity(3)), Err(Error::BucklingNot2d)));
    }

    #[test]
    fn buckling_relaxes_compression() {
        let m = Mat::diag(&[0.5, 1.0]);
        let p = harmonic_problem(16, &m);
        let opts = SolveOptions::default();
        let aff = minimize(&p, &opts, &affine_deformation(p.grid(), &m), None).unwrap();
        let buck = minimize(&p, &opts, &buckling_start(p.grid(), &m).unwrap(), None).unwrap();
        assert!(buck.energy < aff.energy);
    }

    #[test]
    fn multistart_is_deterministic() {
        let m = Mat::diag(&[0.7, 1.05]);
        let p = harmonic_problem(8, &m);
        let opts = SolveOptions { n_random_starts: 3, seed: 11, ..Default::default() };
        let a = multi_start_minimize(&p, &opts).unwrap();
        let b = multi_start_minimize(&p, &opts).unwrap();
        assert_eq!(a.energy.to_bits(), b.energy.to_bits());
        assert_eq!(a.start_label, b.start_label);
        assert_eq!(a.deformation.positions(), b.deformation.positions());
    }

    #[test]
    fn contact_start_is_nudged() {
        let p = harmonic_problem(5, &Mat::identity(2));
        let x = vec![0.0f64; p.n_vars()];
        assert!(p.min_bond_length(&x) < 1e-8);
        let r = minimize_vars(&p, &SolveOptions::default(), x, "contact").unwrap();
        assert!(r.energy.is_finite() && r.energy <= p.energy(&vec![0.0; p.n_vars()]).unwrap());
    }

    #[test]
    fn f32_evaluation_smoke() {
        let spec = LatticeSpec::<f32>::cubic(2, 1.0).unwrap();
        let model: Arc<dyn CellEnergy<f32>> = Arc::new(HarmonicSpring::new(spec.clone(), 1.0, 1.0).unwrap());
        let grid = Arc::new(CellGrid::new(spec, 6).unwrap());
        let p = assemble(grid, model, &Mat::diag(&[1.2f32, 1.0]), None).unwrap();
        let e = p.energy(&p.affine_vars()).unwrap();
        assert!((e / 36.0 - 0.04 * 16.0 / 36.0).abs() < 1e-5);
    }
}
