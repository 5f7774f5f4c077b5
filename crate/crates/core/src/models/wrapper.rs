use std::sync::Arc;

use super::{CellEnergy, Growth};
use crate::error::{Error, Result};
use crate::lattice::LatticeSpec;
use crate::mat::Mat;
use crate::scalar::Real;
use crate::simplex::{equivalence_constants, SimplicialDecomposition};

/// A continuum density `V: R^{d×d} → R`.
pub trait MatrixDensity<T: Real>: Send + Sync {
    fn name(&self) -> &str;
    fn value(&self, m: &Mat<T>) -> T;
    fn gradient(&self, m: &Mat<T>) -> Mat<T>;

    /// `(p, a, b)` with `a|M|^p ≤ V(M) ≤ b|M|^p`, when such bounds hold.
    fn homogeneous_bounds(&self) -> Option<(T, T, T)> {
        None
    }

    fn frame_indifferent(&self) -> bool {
        false
    }
}

/// `V(M) = |M|²` (Frobenius).
#[derive(Clone, Copy, Debug, Default)]
pub struct FrobeniusSquared;

impl<T: Real> MatrixDensity<T> for FrobeniusSquared {
    fn name(&self) -> &str {
        "frobenius_squared"
    }
    fn value(&self, m: &Mat<T>) -> T {
        m.norm_sq()
    }
    fn gradient(&self, m: &Mat<T>) -> Mat<T> {
        m.scaled(T::lit(2.0))
    }
    fn homogeneous_bounds(&self) -> Option<(T, T, T)> {
        Some((T::lit(2.0), T::one(), T::one()))
    }
    fn frame_indifferent(&self) -> bool {
        true
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ConstantDensity<T>(pub T);

impl<T: Real> MatrixDensity<T> for ConstantDensity<T> {
    fn name(&self) -> &str {
        "constant"
    }
    fn value(&self, _m: &Mat<T>) -> T {
        self.0
    }
    fn gradient(&self, m: &Mat<T>) -> Mat<T> {
        Mat::zeros(m.rows(), m.cols())
    }
    fn frame_indifferent(&self) -> bool {
        true
    }
}

/// `W(F) = Σ_S |S| V(G_S(F))`: the integral of `V` over the cell of the
/// gradient of the corner interpolant on a corner-only simplicial
/// decomposition. Its homogenized density equals `V` for quasiconvex `V`.
#[derive(Clone)]
pub struct QuasiconvexWrapper<T: Real> {
    spec: LatticeSpec<T>,
    density: Arc<dyn MatrixDensity<T>>,
    decomposition: SimplicialDecomposition<T>,
}

impl<T: Real> QuasiconvexWrapper<T> {
    pub fn new(
        spec: LatticeSpec<T>,
        density: Arc<dyn MatrixDensity<T>>,
        decomposition: SimplicialDecomposition<T>,
    ) -> Result<Self> {
        if decomposition.dim() != spec.dim() {
            return Err(Error::BadDecomposition("dimension differs from lattice".into()));
        }
        let total: T = decomposition.volumes().into_iter().sum();
        if (total - spec.det_abs()).abs() > T::lit(1e-12) * spec.det_abs() {
            return Err(Error::BadDecomposition(format!(
                "volumes sum to {total}, cell volume is {}",
                spec.det_abs()
            )));
        }
        if spec.stencil_len() != spec.n_corners() {
            return Err(Error::InvalidParameter("wrapper model uses the unit-cell stencil".into()));
        }
        Ok(Self {
            spec,
            density,
            decomposition,
        })
    }

    /// Wrapper on the Kuhn triangulation.
    pub fn kuhn(spec: LatticeSpec<T>, density: Arc<dyn MatrixDensity<T>>) -> Result<Self> {
        let dec = SimplicialDecomposition::kuhn(&spec);
        Self::new(spec, density, dec)
    }

    pub fn decomposition(&self) -> &SimplicialDecomposition<T> {
        &self.decomposition
    }
}

impl<T: Real> CellEnergy<T> for QuasiconvexWrapper<T> {
    fn name(&self) -> &str {
        "quasiconvex_wrapper"
    }

    fn lattice(&self) -> &LatticeSpec<T> {
        &self.spec
    }

    fn growth(&self) -> Option<Growth<T>> {
        let (p, a, b) = self.density.homogeneous_bounds()?;
        let vol = self.spec.det_abs();
        let (lo, hi) = equivalence_constants(self.decomposition.pieces(), vol, p);
        Some(Growth {
            p,
            q: p,
            lower: a * vol * lo,
            offset: T::zero(),
            upper: b * vol * hi,
        })
    }

    fn frame_indifferent(&self) -> bool {
        self.density.frame_indifferent()
    }

    fn energy(&self, f: &Mat<T>, _s: &Mat<T>) -> T {
        self.decomposition
            .pieces()
            .iter()
            .map(|piece| piece.volume * self.density.value(&piece.gradient(f)))
            .sum()
    }

    fn energy_gradient(&self, f: &Mat<T>, _s: &Mat<T>, df: &mut Mat<T>, _ds: &mut Mat<T>) -> T {
        df.fill(T::zero());
        let mut e = T::zero();
        for piece in self.decomposition.pieces() {
            let g = piece.gradient(f);
            e = e + piece.volume * self.density.value(&g);
            // ∂/∂F <V'(F B), ·> = V'(F B) Bᵀ
            let dg = self.density.gradient(&g).matmul(&piece.map.transpose());
            for i in 0..df.rows() {
                for j in 0..dg.cols() {
                    df[(i, j)] = df[(i, j)] + piece.volume * dg[(i, j)];
                }
            }
        }
        e
    }
}

#[cfg(test)]
mod tests {
    use super::super::affine_cell_gradient;
    use super::super::testutil::*;
    use super::*;

    fn skewed() -> LatticeSpec<f64> {
        let a = Mat::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 3f64.sqrt() / 2.0]);
        LatticeSpec::new(2, a, None, 0).unwrap()
    }

    #[test]
    fn affine_fields_give_volume_times_density() {
        for spec in [skewed(), LatticeSpec::cubic(3, 1.0).unwrap()] {
            let d = spec.dim();
            let w = QuasiconvexWrapper::kuhn(spec.clone(), Arc::new(FrobeniusSquared)).unwrap();
            let m = Mat::from_fn(d, d, |i, j| 0.3 * (i as f64) - 0.7 * (j as f64) + 1.0);
            let f = affine_cell_gradient(&spec, &m);
            let e = w.energy(&f, &Mat::zeros(d, 0));
            assert!((e - spec.det_abs() * m.norm_sq()).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_density() {
        let spec = skewed();
        let w = QuasiconvexWrapper::kuhn(spec.clone(), Arc::new(ConstantDensity(7.0))).unwrap();
        let mut rng = Lcg(1);
        let f = random_state(&spec, &mut rng, 0.5, 0.5);
        assert!((w.energy(&f, &Mat::zeros(2, 0)) - 7.0 * spec.det_abs()).abs() < 1e-14);
    }

    #[test]
    fn corner_bump_matches_direct_quadrature() {
        // unit square, Kuhn simplices {0,1,3} and {0,2,3}
        let spec = LatticeSpec::cubic(2, 1.0).unwrap();
        let w = QuasiconvexWrapper::kuhn(spec.clone(), Arc::new(FrobeniusSquared)).unwrap();
        let delta = 0.3;
        let mut f = spec.corners().clone();
        f[(0, 0)] += delta;
        let f = super::super::center_columns(&f, 4);
        // hand-computed per simplex: gradients of the interpolant on the two triangles
        let z = spec.corners();
        let mut expected = 0.0f64;
        for tri in [[0usize, 1, 3], [0, 2, 3]] {
            let dx = Mat::from_fn(2, 2, |i, k| z[(i, tri[k + 1])] - z[(i, tri[0])]);
            let dy = Mat::from_fn(2, 2, |i, k| f[(i, tri[k + 1])] - f[(i, tri[0])]);
            let g = dy.matmul(&dx.inverse().unwrap());
            expected += 0.5 * g.norm_sq();
        }
        let e = w.energy(&f, &Mat::zeros(2, 0));
        assert!((e - expected).abs() < 1e-14);
        assert!((e - 2.0).abs() > 1e-3);
    }

    #[test]
    fn gradient_matches_fd() {
        let spec = skewed();
        let w = QuasiconvexWrapper::kuhn(spec.clone(), Arc::new(FrobeniusSquared)).unwrap();
        let mut rng = Lcg(17);
        for _ in 0..30 {
            let f = random_state(&spec, &mut rng, 0.5, 0.3);
            assert!(gradient_error(&w, &f, &Mat::zeros(2, 0)) < 1e-6);
        }
    }

    #[test]
    fn mismatched_decomposition_rejected() {
        let cube = LatticeSpec::<f64>::cubic(3, 1.0).unwrap();
        let dec = SimplicialDecomposition::kuhn(&cube);
        assert!(matches!(
            QuasiconvexWrapper::new(skewed(), Arc::new(FrobeniusSquared), dec),
            Err(Error::BadDecomposition(_))
        ));
    }
}
