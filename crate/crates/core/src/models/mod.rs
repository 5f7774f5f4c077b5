//! Cell energies `W_cell` / `W_super-cell` with analytic gradients.
//!
//! A model sees the discrete gradient `F` of one cell (`d × n`, the first
//! `2^d` columns being the corner block) and, for multilattices, the internal
//! shifts `s` (`d × m`). Models are immutable and may be evaluated from any
//! number of threads.

mod harmonic;
mod multilattice;
mod pair;
mod quadratic;
mod wrapper;

pub use harmonic::HarmonicSpring;
pub use multilattice::MultilatticeHarmonic;
pub(crate) use pair::{for_each_in_box, SHELL_SLACK};
pub use pair::{HarmonicShell, LennardJones, PairPotential, PairPotentialModel, ZeroPotential};
pub use quadratic::{QuadraticForm, QuadraticFormModel};
pub use wrapper::{ConstantDensity, FrobeniusSquared, MatrixDensity, QuasiconvexWrapper};

use crate::error::{Error, Result};
use crate::lattice::LatticeSpec;
use crate::mat::Mat;
use crate::scalar::Real;

/// Declared growth constants:
/// `c(|F_c|^p + |s|^q) - c' ≤ W(F, s) ≤ c''(|F|^p + |s|^q + 1)`,
/// where `F_c` is the corner block.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Growth<T> {
    pub p: T,
    pub q: T,
    pub lower: T,
    pub offset: T,
    pub upper: T,
}

pub trait CellEnergy<T: Real>: Send + Sync {
    fn name(&self) -> &str;

    fn lattice(&self) -> &LatticeSpec<T>;

    /// Internal atoms per cell.
    fn internal(&self) -> usize {
        self.lattice().internal()
    }

    /// Growth constants, when the model has proven ones.
    fn growth(&self) -> Option<Growth<T>>;

    /// `W(RF, Rs) = W(F, s)` for all rotations `R`.
    fn frame_indifferent(&self) -> bool {
        true
    }

    /// Zero exactly on `SO(d)Z` plus translations.
    fn vanishes_on_rotations(&self) -> bool {
        false
    }

    /// Energy without input validation. Translation invariant in the
    /// columns of `f`.
    fn energy(&self, f: &Mat<T>, s: &Mat<T>) -> T;

    /// Energy and gradient; `df` (`d × n`) and `ds` (`d × m`) are overwritten.
    fn energy_gradient(&self, f: &Mat<T>, s: &Mat<T>, df: &mut Mat<T>, ds: &mut Mat<T>) -> T;
}

/// Relative tolerance on the corner-block row sums accepted as a discrete gradient.
pub const V0_TOLERANCE: f64 = 1e-12;

fn check_input<T: Real>(model: &dyn CellEnergy<T>, f: &Mat<T>, s: &Mat<T>) -> Result<()> {
    let spec = model.lattice();
    let (d, n, m) = (spec.dim(), spec.stencil_len(), model.internal());
    if f.rows() != d || f.cols() != n {
        return Err(Error::Shape(format!(
            "F is {}x{}, model expects {d}x{n}",
            f.rows(),
            f.cols()
        )));
    }
    if s.rows() != d || s.cols() != m {
        return Err(Error::Shape(format!(
            "s is {}x{}, model expects {d}x{m}",
            s.rows(),
            s.cols()
        )));
    }
    if !f.is_finite() || !s.is_finite() {
        return Err(Error::NonFinite("cell gradient or internal shift"));
    }
    let corners = f.left_cols(spec.n_corners());
    let worst = corners.row_sums().into_iter().fold(T::zero(), |a, x| a.max(x.abs()));
    if worst > T::lit(V0_TOLERANCE) * (T::one() + corners.max_abs()) {
        return Err(Error::NotDiscreteGradient(worst.as_f64()));
    }
    Ok(())
}

/// Validated evaluation of `W(F, s)`.
pub fn eval_cell_energy<T: Real>(model: &dyn CellEnergy<T>, f: &Mat<T>, s: &Mat<T>) -> Result<T> {
    check_input(model, f, s)?;
    Ok(model.energy(f, s))
}

/// Validated gradient `(∂W/∂F, ∂W/∂s)`.
pub fn grad_cell_energy<T: Real>(
    model: &dyn CellEnergy<T>,
    f: &Mat<T>,
    s: &Mat<T>,
) -> Result<(Mat<T>, Mat<T>)> {
    check_input(model, f, s)?;
    let mut df = Mat::zeros(f.rows(), f.cols());
    let mut ds = Mat::zeros(s.rows(), s.cols());
    model.energy_gradient(f, s, &mut df, &mut ds);
    Ok((df, ds))
}

/// `M` applied to the stencil reference vectors: the discrete gradient of
/// the affine map `x ↦ Mx` on any interior cell.
pub fn affine_cell_gradient<T: Real>(spec: &LatticeSpec<T>, m: &Mat<T>) -> Mat<T> {
    m.matmul(&spec.stencil_points())
}

/// Largest deviation between the analytic gradient and central differences
/// of the energy, relative to `max(1, |∇W|∞)`. Inputs are not validated.
pub fn gradient_fd_error<T: Real>(model: &dyn CellEnergy<T>, f: &Mat<T>, s: &Mat<T>) -> T {
    let mut df = Mat::zeros(f.rows(), f.cols());
    let mut ds = Mat::zeros(s.rows(), s.cols());
    model.energy_gradient(f, s, &mut df, &mut ds);
    let h = T::epsilon().cbrt() * (T::one() + f.norm() + s.norm());
    let central = |fp: &Mat<T>, sp: &Mat<T>, fm: &Mat<T>, sm: &Mat<T>| {
        (model.energy(fp, sp) - model.energy(fm, sm)) / (h + h)
    };
    let mut worst = T::zero();
    for i in 0..f.rows() {
        for j in 0..f.cols() {
            let (mut fp, mut fm) = (f.clone(), f.clone());
            fp[(i, j)] = fp[(i, j)] + h;
            fm[(i, j)] = fm[(i, j)] - h;
            worst = worst.max((central(&fp, s, &fm, s) - df[(i, j)]).abs());
        }
    }
    for i in 0..s.rows() {
        for j in 0..s.cols() {
            let (mut sp, mut sm) = (s.clone(), s.clone());
            sp[(i, j)] = sp[(i, j)] + h;
            sm[(i, j)] = sm[(i, j)] - h;
            worst = worst.max((central(f, &sp, f, &sm) - ds[(i, j)]).abs());
        }
    }
    worst / T::one().max(df.max_abs()).max(ds.max_abs())
}

/// Subtracts the row means of the corner block from every column.
pub(crate) fn center_columns<T: Real>(f: &Mat<T>, n_corners: usize) -> Mat<T> {
    let mut out = f.clone();
    let inv = T::one() / T::from_usize_lossy(n_corners);
    for i in 0..f.rows() {
        let mean: T = (0..n_corners).map(|j| f[(i, j)]).sum::<T>() * inv;
        for j in 0..f.cols() {
            out[(i, j)] = out[(i, j)] - mean;
        }
    }
    out
}

/// Chain rule through [`center_columns`] for the corner block, in place.
pub(crate) fn uncenter_gradient<T: Real>(g: &mut Mat<T>, n_corners: usize) {
    let inv = T::one() / T::from_usize_lossy(n_corners);
    for i in 0..g.rows() {
        let total: T = (0..g.cols()).map(|j| g[(i, j)]).sum();
        for j in 0..n_corners {
            g[(i, j)] = g[(i, j)] - total * inv;
        }
    }
}

/// Adds `scale · (|v| - rest)² ` to an accumulator and its gradient with
/// respect to `v` (zero at `v = 0`).
#[inline]
pub(crate) fn spring_term<T: Real>(v: &[T], rest: T, scale: T, grad: &mut [T]) -> T {
    let len = v.iter().map(|&x| x * x).sum::<T>().sqrt();
    let stretch = len - rest;
    if len > T::zero() {
        let g = T::lit(2.0) * scale * stretch / len;
        for (o, &x) in grad.iter_mut().zip(v) {
            *o = g * x;
        }
    } else {
        grad.iter_mut().for_each(|o| *o = T::zero());
    }
    scale * stretch * stretch
}
