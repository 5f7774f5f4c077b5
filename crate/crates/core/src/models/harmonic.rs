use super::{spring_term, CellEnergy, Growth};
use crate::error::{Error, Result};
use crate::lattice::LatticeSpec;
use crate::mat::Mat;
use crate::scalar::Real;

/// Nearest-neighbour harmonic springs on the square lattice.
///
/// `W(F) = (k/2) Σ_e (|F a_e| - r0)²` over the four cell edges. Each bulk
/// edge is shared by two cells, so a bulk bond carries `k(|b| - r0)²` in
/// total.
#[derive(Clone, Debug)]
pub struct HarmonicSpring<T> {
    spec: LatticeSpec<T>,
    stiffness: T,
    rest: T,
    edges: Vec<(usize, usize)>,
}

impl<T: Real> HarmonicSpring<T> {
    pub fn new(spec: LatticeSpec<T>, stiffness: T, rest: T) -> Result<Self> {
        if spec.dim() != 2 || spec.basis() != &Mat::identity(2) || spec.stencil_len() != 4 {
            return Err(Error::InvalidParameter(
                "harmonic spring model needs the 2D unit square lattice".into(),
            ));
        }
        if !(stiffness > T::zero() && rest > T::zero()) {
            return Err(Error::InvalidParameter("stiffness and rest length must be positive".into()));
        }
        Ok(Self {
            spec,
            stiffness,
            rest,
            edges: vec![(0, 1), (2, 3), (0, 2), (1, 3)],
        })
    }

    pub fn stiffness(&self) -> T {
        self.stiffness
    }

    pub fn rest_length(&self) -> T {
        self.rest
    }
}

impl<T: Real> CellEnergy<T> for HarmonicSpring<T> {
    fn name(&self) -> &str {
        "harmonic_spring"
    }

    fn lattice(&self) -> &LatticeSpec<T> {
        &self.spec
    }

    fn growth(&self) -> Option<Growth<T>> {
        // Σ|e|² lies between 2|F|² and 4|F|² on zero-sum F (4-cycle Laplacian).
        let k = self.stiffness;
        let r2 = self.rest * self.rest;
        Some(Growth {
            p: T::lit(2.0),
            q: T::lit(2.0),
            lower: k / T::lit(2.0),
            offset: T::lit(2.0) * k * r2,
            upper: T::lit(4.0) * k * r2.max(T::one()),
        })
    }

    fn vanishes_on_rotations(&self) -> bool {
        self.rest == T::one()
    }

    fn energy(&self, f: &Mat<T>, _s: &Mat<T>) -> T {
        let scale = self.stiffness / T::lit(2.0);
        let mut sink = [T::zero(); 2];
        self.edges
            .iter()
            .map(|&(a, b)| {
                let v = [f[(0, b)] - f[(0, a)], f[(1, b)] - f[(1, a)]];
                spring_term(&v, self.rest, scale, &mut sink)
            })
            .sum()
    }

    fn energy_gradient(&self, f: &Mat<T>, _s: &Mat<T>, df: &mut Mat<T>, _ds: &mut Mat<T>) -> T {
        df.fill(T::zero());
        let scale = self.stiffness / T::lit(2.0);
        let mut g = [T::zero(); 2];
        let mut e = T::zero();
        for &(a, b) in &self.edges {
            let v = [f[(0, b)] - f[(0, a)], f[(1, b)] - f[(1, a)]];
            e = e + spring_term(&v, self.rest, scale, &mut g);
            for i in 0..2 {
                df[(i, b)] = df[(i, b)] + g[i];
                df[(i, a)] = df[(i, a)] - g[i];
            }
        }
        e
    }
}
