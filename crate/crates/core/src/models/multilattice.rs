use super::{center_columns, spring_term, uncenter_gradient, CellEnergy, Growth};
use crate::error::{Error, Result};
use crate::lattice::LatticeSpec;
use crate::mat::Mat;
use crate::scalar::Real;

/// Square lattice with one internal atom per cell.
///
/// `W(F, s) = (k/2) Σ_i (|f_i − s| − r0)² + (k/2) Σ_e (|e| − 1)²` where `f_i`
/// are the centered corner columns, `s` is the internal atom relative to the
/// cell center, `r0 = √2/2` and `e` runs over the four cell edges.
#[derive(Clone, Debug)]
pub struct MultilatticeHarmonic<T> {
    spec: LatticeSpec<T>,
    stiffness: T,
    r0: T,
}

const EDGES: [(usize, usize); 4] = [(0, 1), (2, 3), (0, 2), (1, 3)];

impl<T: Real> MultilatticeHarmonic<T> {
    pub fn new(spec: LatticeSpec<T>, stiffness: T) -> Result<Self> {
        if spec.internal() != 1 {
            return Err(Error::UnsupportedInternalCount(spec.internal()));
        }
        if spec.dim() != 2 || spec.basis() != &Mat::identity(2) || spec.stencil_len() != 4 {
            return Err(Error::InvalidParameter(
                "multilattice model needs the 2D unit square lattice".into(),
            ));
        }
        if !(stiffness > T::zero()) {
            return Err(Error::InvalidParameter("stiffness must be positive".into()));
        }
        let z = spec.corners();
        let r0 = (z[(0, 1)] * z[(0, 1)] + z[(1, 1)] * z[(1, 1)]).sqrt();
        Ok(Self { spec, stiffness, r0 })
    }

    fn eval(&self, f: &Mat<T>, s: &Mat<T>, mut grad: Option<(&mut Mat<T>, &mut Mat<T>)>) -> T {
        let fc = center_columns(f, 4);
        let scale = self.stiffness / T::lit(2.0);
        let mut g = [T::zero(); 2];
        let mut gf = Mat::zeros(2, 4);
        let mut gs = Mat::zeros(2, 1);
        let mut e = T::zero();
        for i in 0..4 {
            let v = [fc[(0, i)] - s[(0, 0)], fc[(1, i)] - s[(1, 0)]];
            e = e + spring_term(&v, self.r0, scale, &mut g);
            for r in 0..2 {
                gf[(r, i)] = gf[(r, i)] + g[r];
                gs[(r, 0)] = gs[(r, 0)] - g[r];
            }
        }
        for &(a, b) in &EDGES {
            let v = [fc[(0, b)] - fc[(0, a)], fc[(1, b)] - fc[(1, a)]];
            e = e + spring_term(&v, T::one(), scale, &mut g);
            for r in 0..2 {
                gf[(r, b)] = gf[(r, b)] + g[r];
                gf[(r, a)] = gf[(r, a)] - g[r];
            }
        }
        if let Some((df, ds)) = grad.as_mut() {
            uncenter_gradient(&mut gf, 4);
            **df = gf;
            **ds = gs;
        }
        e
    }
}

impl<T: Real> CellEnergy<T> for MultilatticeHarmonic<T> {
    fn name(&self) -> &str {
        "multilattice_harmonic"
    }

    fn lattice(&self) -> &LatticeSpec<T> {
        &self.spec
    }

    fn growth(&self) -> Option<Growth<T>> {
        let k = self.stiffness;
        Some(Growth {
            p: T::lit(2.0),
            q: T::lit(2.0),
            lower: k / T::lit(2.0),
            offset: T::lit(3.0) * k,
            upper: T::lit(6.0) * k,
        })
    }

    /// Zero on `SO(2)Z` with `s = 0`.
    fn vanishes_on_rotations(&self) -> bool {
        true
    }

    fn energy(&self, f: &Mat<T>, s: &Mat<T>) -> T {
        self.eval(f, s, None)
    }

    fn energy_gradient(&self, f: &Mat<T>, s: &Mat<T>, df: &mut Mat<T>, ds: &mut Mat<T>) -> T {
        self.eval(f, s, Some((df, ds)))
    }
}
