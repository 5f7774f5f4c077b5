//! Elastic tensors: the closed lattice-sum formula for pair potentials,
//! finite-difference Hessians of energy densities at the identity, and the
//! Cauchy-relation residuals.

use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::homogenize::cauchy_born_density;
use crate::lattice::LatticeSpec;
use crate::mat::Mat;
use crate::models::{PairPotential, QuadraticForm, QuadraticFormModel};
use crate::scalar::Real;

/// Fourth-order tensor `c_ijkl` (0-based indices, row-major storage).
#[derive(Clone, Debug, PartialEq)]
pub struct ElasticTensor<T> {
    dim: usize,
    c: Vec<T>,
}

impl<T: Real> ElasticTensor<T> {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            c: vec![T::zero(); dim.pow(4)],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    fn idx(&self, i: usize, j: usize, k: usize, l: usize) -> usize {
        ((i * self.dim + j) * self.dim + k) * self.dim + l
    }

    pub fn get(&self, i: usize, j: usize, k: usize, l: usize) -> T {
        self.c[self.idx(i, j, k, l)]
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, l: usize, v: T) {
        let at = self.idx(i, j, k, l);
        self.c[at] = v;
    }

    pub fn entries(&self) -> &[T] {
        &self.c
    }

    pub fn max_abs(&self) -> T {
        self.c.iter().fold(T::zero(), |a, v| a.max(v.abs()))
    }

    pub fn scaled(&self, s: T) -> Self {
        Self {
            dim: self.dim,
            c: self.c.iter().map(|&v| v * s).collect(),
        }
    }

    fn max_residual(&self, f: impl Fn(usize, usize, usize, usize) -> T) -> T {
        let d = self.dim;
        let mut worst = T::zero();
        for i in 0..d {
            for j in 0..d {
                for k in 0..d {
                    for l in 0..d {
                        worst = worst.max((self.get(i, j, k, l) - f(i, j, k, l)).abs());
                    }
                }
            }
        }
        worst
    }

    /// `max |c_ijkl − c_klij|`.
    pub fn major_symmetry_residual(&self) -> T {
        self.max_residual(|i, j, k, l| self.get(k, l, i, j))
    }

    /// `max |c_ijkl − c_jikl|`.
    pub fn minor_symmetry_residual(&self) -> T {
        self.max_residual(|i, j, k, l| self.get(j, i, k, l))
    }

    /// Voigt matrix (3×3 in 2D with order 11, 22, 12; 6×6 in 3D with order
    /// 11, 22, 33, 23, 13, 12).
    pub fn voigt(&self) -> Mat<T> {
        let pairs: &[(usize, usize)] = if self.dim == 2 {
            &[(0, 0), (1, 1), (0, 1)]
        } else {
            &[(0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1)]
        };
        Mat::from_fn(pairs.len(), pairs.len(), |a, b| {
            let ((i, j), (k, l)) = (pairs[a], pairs[b]);
            self.get(i, j, k, l)
        })
    }

    /// CSV `i,j,k,l,c_ijkl` with 1-based indices.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "i,j,k,l,c_ijkl")?;
        let d = self.dim;
        for i in 0..d {
            for j in 0..d {
                for k in 0..d {
                    for l in 0..d {
                        writeln!(w, "{},{},{},{},{}", i + 1, j + 1, k + 1, l + 1, self.get(i, j, k, l))?;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Nonzero lattice vectors `A j` with `|A j| ≤ cutoff` (up to the shell slack).
pub fn lattice_shell_vectors<T: Real>(spec: &LatticeSpec<T>, cutoff: T) -> Vec<Vec<T>> {
    let d = spec.dim();
    let a_inv = spec.basis_inv();
    let reach = (0..d)
        .map(|b| {
            let row: T = (0..d).map(|i| a_inv[(b, i)] * a_inv[(b, i)]).sum::<T>().sqrt();
            (cutoff * row + T::lit(1e-9)).floor().to_i64().unwrap_or(0)
        })
        .max()
        .unwrap_or(0);
    let limit = cutoff + T::lit(crate::models::SHELL_SLACK);
    let mut out = Vec::new();
    crate::models::for_each_in_box(d, -reach, reach, |j| {
        if j.iter().all(|&v| v == 0) {
            return;
        }
        let x = spec.point(j);
        if x.iter().map(|&v| v * v).sum::<T>().sqrt() <= limit {
            out.push(x);
        }
    });
    out
}

/// `c_ijkl = (1/|det A|) Σ_{0<|x|≤cutoff} V''(|x|) x_i x_j x_k x_l/|x|²
///   + V'(|x|) (x_j x_l δ_ki/|x| − x_i x_j x_k x_l/|x|³)`,
/// the Hessian at the identity of `(1/|det A|) Σ_x V(|Mx|)`.
pub fn pair_elastic_tensor<T: Real>(
    potential: &dyn PairPotential<T>,
    spec: &LatticeSpec<T>,
    cutoff: T,
) -> Result<ElasticTensor<T>> {
    if !cutoff.is_finite() || !(cutoff > T::zero()) {
        return Err(Error::EmptyShellSet(cutoff.as_f64()));
    }
    let shells = lattice_shell_vectors(spec, cutoff);
    if shells.is_empty() {
        return Err(Error::EmptyShellSet(cutoff.as_f64()));
    }
    let d = spec.dim();
    let mut t = ElasticTensor::zeros(d);
    for x in &shells {
        let r = x.iter().map(|&v| v * v).sum::<T>().sqrt();
        let v1 = potential.first_derivative(r, r);
        let v2 = potential.second_derivative(r, r);
        if !v1.is_finite() || !v2.is_finite() {
            return Err(Error::NonFinite("potential derivative at a shell radius"));
        }
        for i in 0..d {
            for j in 0..d {
                for k in 0..d {
                    for l in 0..d {
                        let q = x[i] * x[j] * x[k] * x[l];
                        let mut v = v2 * q / (r * r) - v1 * q / (r * r * r);
                        if k == i {
                            v = v + v1 * x[j] * x[l] / r;
                        }
                        let at = t.idx(i, j, k, l);
                        t.c[at] = t.c[at] + v;
                    }
                }
            }
        }
    }
    Ok(t.scaled(T::one() / spec.det_abs()))
}

/// Lattice constant `a` of the cubic lattice `aZ^d` at which the pair
/// interactions within `cutoff_factor · a` exert no stress,
/// i.e. `Σ_x V'(a|x|) |x| = 0` over unit-lattice vectors `0 < |x| ≤ cutoff_factor`.
pub fn stress_free_spacing<T: Real>(
    potential: &dyn PairPotential<T>,
    dim: usize,
    cutoff_factor: T,
    guess: T,
) -> Result<T> {
    let unit = LatticeSpec::cubic(dim, T::one())?;
    let radii: Vec<T> = lattice_shell_vectors(&unit, cutoff_factor)
        .into_iter()
        .map(|x| x.iter().map(|&v| v * v).sum::<T>().sqrt())
        .collect();
    if radii.is_empty() {
        return Err(Error::EmptyShellSet(cutoff_factor.as_f64()));
    }
    let stress = |a: T| radii.iter().map(|&r| potential.first_derivative(a * r, a * r) * r).sum::<T>();
    let (mut lo, mut hi) = (guess, guess);
    let mut found = false;
    for _ in 0..60 {
        lo = lo * T::lit(0.9);
        hi = hi * T::lit(1.1);
        if stress(lo) < T::zero() && stress(hi) > T::zero() {
            found = true;
            break;
        }
    }
    if !found {
        return Err(Error::InvalidParameter("no stress-free spacing near the guess".into()));
    }
    for _ in 0..200 {
        let mid = (lo + hi) / T::lit(2.0);
        if mid <= lo || mid >= hi {
            break;
        }
        if stress(mid) < T::zero() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((lo + hi) / T::lit(2.0))
}

/// Matrix-to-scalar energy density.
pub type Density<'a, T> = dyn Fn(&Mat<T>) -> Result<T> + Sync + 'a;

/// Finite-difference Hessian of a density at the identity.
#[derive(Clone, Debug)]
pub struct NumericTensor<T> {
    /// Central second differences with step `h`.
    pub tensor: ElasticTensor<T>,
    /// Richardson combination of steps `h` and `h/2`.
    pub refined: ElasticTensor<T>,
    /// `max |c(h/2) − c(h)|`, a truncation error estimate for `tensor`.
    pub truncation_estimate: T,
}

fn hessian_at_identity<T: Real>(w: &Density<'_, T>, d: usize, h: T) -> Result<ElasticTensor<T>> {
    let id = Mat::identity(d);
    let eval = |m: &Mat<T>| -> Result<T> {
        let v = w(m)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite("density evaluation"))
        }
    };
    let shifted = |terms: &[(usize, T)]| {
        let mut m = id.clone();
        for &(a, s) in terms {
            m[(a / d, a % d)] = m[(a / d, a % d)] + s;
        }
        m
    };
    let w0 = eval(&id)?;
    let n = d * d;
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|a| (a..n).map(move |b| (a, b))).collect();
    let values = pairs
        .par_iter()
        .map(|&(a, b)| {
            if a == b {
                Ok((eval(&shifted(&[(a, h)]))? - T::lit(2.0) * w0 + eval(&shifted(&[(a, -h)]))?) / (h * h))
            } else {
                Ok((eval(&shifted(&[(a, h), (b, h)]))? - eval(&shifted(&[(a, h), (b, -h)]))?
                    - eval(&shifted(&[(a, -h), (b, h)]))?
                    + eval(&shifted(&[(a, -h), (b, -h)]))?)
                    / (T::lit(4.0) * h * h))
            }
        })
        .collect::<Result<Vec<T>>>()?;
    let mut t = ElasticTensor::zeros(d);
    for (&(a, b), v) in pairs.iter().zip(values) {
        t.c[a * n + b] = v;
        t.c[b * n + a] = v;
    }
    Ok(t)
}

/// `c_ijkl = ∂²W/∂M_ij∂M_kl (Id)` by central differences.
pub fn numeric_elastic_tensor<T: Real>(w: &Density<'_, T>, d: usize, h: T) -> Result<NumericTensor<T>> {
    if !(h > T::zero()) {
        return Err(Error::InvalidParameter("step must be positive".into()));
    }
    let coarse = hessian_at_identity(w, d, h)?;
    let fine = hessian_at_identity(w, d, h / T::lit(2.0))?;
    let refined = ElasticTensor {
        dim: d,
        c: coarse
            .c
            .iter()
            .zip(&fine.c)
            .map(|(&c, &f)| (T::lit(4.0) * f - c) / T::lit(3.0))
            .collect(),
    };
    let truncation_estimate = coarse.c.iter().zip(&fine.c).fold(T::zero(), |a, (&c, &f)| a.max((c - f).abs()));
    Ok(NumericTensor {
        tensor: coarse,
        refined,
        truncation_estimate,
    })
}

#[derive(Clone, Debug)]
pub struct CauchyReport<T> {
    /// `(label, |c_a − c_b|)` for each Cauchy relation.
    pub cauchy: Vec<(String, T)>,
    pub minor_symmetry: T,
    pub major_symmetry: T,
}

impl<T: Real> CauchyReport<T> {
    pub fn max_cauchy(&self) -> T {
        self.cauchy.iter().fold(T::zero(), |a, (_, v)| a.max(*v))
    }
}

/// The six Cauchy relations in 3D (`c_1122 = c_1212`, `c_2233 = c_2323`,
/// `c_3311 = c_3131`, `c_1123 = c_1213`, `c_2231 = c_2321`, `c_3312 = c_3132`)
/// or the single relation `c_1122 = c_1212` in 2D.
pub fn cauchy_residuals<T: Real>(t: &ElasticTensor<T>) -> CauchyReport<T> {
    let rel: &[([usize; 4], [usize; 4])] = if t.dim == 2 {
        &[([1, 1, 2, 2], [1, 2, 1, 2])]
    } else {
        &[
            ([1, 1, 2, 2], [1, 2, 1, 2]),
            ([2, 2, 3, 3], [2, 3, 2, 3]),
            ([3, 3, 1, 1], [3, 1, 3, 1]),
            ([1, 1, 2, 3], [1, 2, 1, 3]),
            ([2, 2, 3, 1], [2, 3, 2, 1]),
            ([3, 3, 1, 2], [3, 1, 3, 2]),
        ]
    };
    let at = |i: [usize; 4]| t.get(i[0] - 1, i[1] - 1, i[2] - 1, i[3] - 1);
    let cauchy = rel
        .iter()
        .map(|&(a, b)| {
            let label = format!("c{}{}{}{}-c{}{}{}{}", a[0], a[1], a[2], a[3], b[0], b[1], b[2], b[3]);
            (label, (at(a) - at(b)).abs())
        })
        .collect();
    CauchyReport {
        cauchy,
        minor_symmetry: t.minor_symmetry_residual(),
        major_symmetry: t.major_symmetry_residual(),
    }
}

/// Builds the quadratic-form model for `q` on the unit square lattice and
/// returns `max |½ c_ijkl − Q_(ij)(kl)|` for the finite-difference Hessian of
/// its Cauchy-Born density at step `h`.
pub fn quadratic_model_hessian_check<T: Real>(q: &QuadraticForm<T>, kappa: T, delta: T, h: T) -> Result<T> {
    let t = quadratic_model_tensor(q, kappa, delta, h)?.tensor;
    let k = q.matrix();
    let mut worst = T::zero();
    for a in 0..4 {
        for b in 0..4 {
            let half = t.get(a / 2, a % 2, b / 2, b % 2) / T::lit(2.0);
            worst = worst.max((half - k[(a, b)]).abs());
        }
    }
    Ok(worst)
}

/// Finite-difference elastic tensor of the quadratic-form model's
/// Cauchy-Born density on the unit square lattice.
pub fn quadratic_model_tensor<T: Real>(q: &QuadraticForm<T>, kappa: T, delta: T, h: T) -> Result<NumericTensor<T>> {
    let spec = LatticeSpec::cubic(2, T::one())?;
    let model = Arc::new(QuadraticFormModel::new(spec, q.clone(), kappa, delta)?);
    numeric_elastic_tensor(&|m: &Mat<T>| cauchy_born_density(model.as_ref(), m, None), 2, h)
}
