use nalgebra::{Matrix3, SymmetricEigen};

use super::{center_columns, uncenter_gradient, CellEnergy, Growth};
use crate::error::{Error, Result};
use crate::lattice::LatticeSpec;
use crate::mat::Mat;
use crate::scalar::Real;

/// Quadratic form on 2×2 matrices, `Q(X) = vec(X)ᵀ K vec(X)` with row-major
/// `vec`. Admissible forms are symmetric, vanish on skew matrices and are
/// positive definite on symmetric matrices.
#[derive(Clone, Debug)]
pub struct QuadraticForm<T> {
    k: Mat<T>,
    sym_eig: (T, T),
}

impl<T: Real> QuadraticForm<T> {
    /// `Q(E) = μ|E|² + (λ/2)(tr E)²`; its Hessian has `c_1122 = λ`, `c_1212 = μ`.
    pub fn isotropic(lambda: T, mu: T) -> Result<Self> {
        let half = T::lit(0.5);
        let k = Mat::from_fn(4, 4, |a, b| {
            let (i, j, k, l) = (a / 2, a % 2, b / 2, b % 2);
            let d = |x: usize, y: usize| if x == y { T::one() } else { T::zero() };
            mu * half * (d(i, k) * d(j, l) + d(i, l) * d(j, k)) + lambda * half * d(i, j) * d(k, l)
        });
        Self::from_matrix(k)
    }

    pub fn from_matrix(k: Mat<T>) -> Result<Self> {
        if k.rows() != 4 || k.cols() != 4 {
            return Err(Error::InadmissibleQ("matrix must be 4x4".into()));
        }
        if !k.is_finite() {
            return Err(Error::InadmissibleQ("non-finite entries".into()));
        }
        let scale = T::one().max(k.max_abs());
        let tol = T::lit(1e-12) * scale;
        if k.sub(&k.transpose()).max_abs() > tol {
            return Err(Error::InadmissibleQ("not symmetric".into()));
        }
        let skew = [T::zero(), T::one(), -T::one(), T::zero()];
        if k.mul_vec(&skew).iter().any(|x| x.abs() > tol) {
            return Err(Error::InadmissibleQ("does not vanish on skew matrices".into()));
        }
        let eig = restricted_eigenvalues(&k);
        if eig.0 <= tol {
            return Err(Error::InadmissibleQ(format!(
                "not positive definite on symmetric matrices (smallest eigenvalue {})",
                eig.0
            )));
        }
        Ok(Self { k, sym_eig: eig })
    }

    pub fn matrix(&self) -> &Mat<T> {
        &self.k
    }

    /// Extreme eigenvalues on the symmetric subspace.
    pub fn symmetric_eigenvalue_range(&self) -> (T, T) {
        self.sym_eig
    }

    pub fn value(&self, x: &Mat<T>) -> T {
        let v = x.as_slice();
        let kv = self.k.mul_vec(v);
        v.iter().zip(&kv).map(|(&a, &b)| a * b).sum()
    }

    /// `∇Q(X) = 2 K vec(X)`.
    pub fn gradient(&self, x: &Mat<T>) -> Mat<T> {
        let kv = self.k.mul_vec(x.as_slice());
        Mat::from_row_slice(2, 2, &kv).scaled(T::lit(2.0))
    }
}

fn restricted_eigenvalues<T: Real>(k: &Mat<T>) -> (T, T) {
    // orthonormal basis e11, e22, (e12 + e21)/√2 in row-major vec
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let basis = [[1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 1.0], [0.0, r, r, 0.0]];
    let m = Matrix3::from_fn(|p, q| {
        let mut acc = 0.0;
        for a in 0..4 {
            for b in 0..4 {
                acc += basis[p][a] * k[(a, b)].as_f64() * basis[q][b];
            }
        }
        acc
    });
    let e = SymmetricEigen::new(m).eigenvalues;
    (T::lit(e.min()), T::lit(e.max()))
}

/// Frame-indifferent 2D cell energy with a prescribed quadratic Hessian at
/// the reference:
///
/// `W(F) = |det A| Q(√(F'ᵀF') − I) + |F''|² + κ h(det F') (1 + |F|²)`
///
/// where `F' = F P` is the least-squares affine part of the centered corner
/// block (`P = Zᵀ(ZZᵀ)⁻¹`), `F'' = F − F'Z` is the non-affine remainder and
/// `h` is a C² cutoff equal to 1 for `det ≤ δ/2` and 0 for `det ≥ δ`.
#[derive(Clone, Debug)]
pub struct QuadraticFormModel<T> {
    spec: LatticeSpec<T>,
    q: QuadraticForm<T>,
    kappa: T,
    delta: T,
    p: Mat<T>,
    z: Mat<T>,
    zzt_eig: (T, T),
}

impl<T: Real> QuadraticFormModel<T> {
    pub fn new(spec: LatticeSpec<T>, q: QuadraticForm<T>, kappa: T, delta: T) -> Result<Self> {
        if spec.dim() != 2 || spec.stencil_len() != spec.n_corners() {
            return Err(Error::InvalidParameter(
                "quadratic-form model is defined on 2D unit cells".into(),
            ));
        }
        if !(kappa >= T::zero()) || !(delta > T::zero() && delta < T::one()) {
            return Err(Error::InvalidParameter("need kappa >= 0 and 0 < delta < 1".into()));
        }
        let z = spec.corners().clone();
        let zzt = z.matmul(&z.transpose());
        let inv = zzt
            .inverse()
            .ok_or_else(|| Error::InvalidParameter("corner matrix is rank deficient".into()))?;
        let p = z.transpose().matmul(&inv);
        let (a, b, c) = (zzt[(0, 0)], zzt[(0, 1)], zzt[(1, 1)]);
        let mid = (a + c) / T::lit(2.0);
        let rad = (((a - c) / T::lit(2.0)).powi(2) + b * b).sqrt();
        Ok(Self {
            spec,
            q,
            kappa,
            delta,
            p,
            z,
            zzt_eig: (mid - rad, mid + rad),
        })
    }

    pub fn form(&self) -> &QuadraticForm<T> {
        &self.q
    }

    fn cutoff(&self, t: T) -> (T, T) {
        let lo = self.delta / T::lit(2.0);
        if t <= lo {
            return (T::one(), T::zero());
        }
        if t >= self.delta {
            return (T::zero(), T::zero());
        }
        let w = self.delta - lo;
        let u = (t - lo) / w;
        let u2 = u * u;
        let s = u2 * u * (T::lit(10.0) - T::lit(15.0) * u + T::lit(6.0) * u2);
        let ds = T::lit(30.0) * u2 * (T::one() - u) * (T::one() - u) / w;
        (T::one() - s, -ds)
    }

    fn eval(&self, f: &Mat<T>, grad: Option<&mut Mat<T>>) -> T {
        let nc = self.spec.n_corners();
        let fc = center_columns(f, nc);
        let fp = fc.matmul(&self.p);
        let fpp = fc.sub(&fp.matmul(&self.z));
        let vol = self.spec.det_abs();
        let two = T::lit(2.0);

        let det = fp.det();
        let sigma = det.signum();
        let cof = Mat::from_row_slice(2, 2, &[fp[(1, 1)], -fp[(1, 0)], -fp[(0, 1)], fp[(0, 0)]]);
        let c = fp.transpose().matmul(&fp);
        let s = det.abs();
        let t = (c.trace() + two * s).sqrt();
        let (u, elastic) = if t > T::zero() {
            let u = c.add(&Mat::identity(2).scaled(s)).scaled(T::one() / t);
            let e = vol * self.q.value(&u.sub(&Mat::identity(2)));
            (Some(u), e)
        } else {
            (None, vol * self.q.value(&Mat::identity(2)))
        };
        let (h, dh) = self.cutoff(det);
        let fc2 = fc.norm_sq();
        let energy = elastic + fpp.norm_sq() + self.kappa * h * (T::one() + fc2);

        if let Some(g) = grad {
            let mut g_fp = Mat::zeros(2, 2);
            if let Some(u) = u {
                let gu = self.q.gradient(&u.sub(&Mat::identity(2))).scaled(vol);
                let cs = cof.scaled(sigma);
                let first = fp
                    .matmul(&gu.add(&gu.transpose()))
                    .add(&cs.scaled(gu.trace()))
                    .scaled(T::one() / t);
                let second = fp.add(&cs).scaled(gu.dot(&u) / (t * t));
                g_fp = first.sub(&second);
            }
            g_fp = g_fp.add(&cof.scaled(self.kappa * dh * (T::one() + fc2)));
            let mut out = g_fp
                .matmul(&self.p.transpose())
                .add(&fpp.scaled(two))
                .add(&fc.scaled(two * self.kappa * h));
            uncenter_gradient(&mut out, nc);
            *g = out;
        }
        energy
    }
}

impl<T: Real> CellEnergy<T> for QuadraticFormModel<T> {
    fn name(&self) -> &str {
        "quadratic_form"
    }

    fn lattice(&self) -> &LatticeSpec<T> {
        &self.spec
    }

    fn growth(&self) -> Option<Growth<T>> {
        // |F|² = |F'Z|² + |F''|², |U| = |F'|, and (|U| - √2)² ≥ |U|²/2 - 2.
        let vol = self.spec.det_abs();
        let (qmin, qmax) = self.q.symmetric_eigenvalue_range();
        let (zmin, zmax) = self.zzt_eig;
        let two = T::lit(2.0);
        let lower = (vol * qmin / (two * zmax)).min(T::one());
        let upper = (two * vol * qmax / zmin + T::one() + self.kappa).max(T::lit(4.0) * vol * qmax + self.kappa);
        Some(Growth {
            p: two,
            q: two,
            lower,
            offset: two * vol * qmin,
            upper,
        })
    }

    fn vanishes_on_rotations(&self) -> bool {
        true
    }

    fn energy(&self, f: &Mat<T>, _s: &Mat<T>) -> T {
        self.eval(f, None)
    }

    fn energy_gradient(&self, f: &Mat<T>, _s: &Mat<T>, df: &mut Mat<T>, _ds: &mut Mat<T>) -> T {
        self.eval(f, Some(df))
    }
}
