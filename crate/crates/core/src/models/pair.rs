use std::sync::Arc;

use super::{CellEnergy, Growth};
use crate::error::{Error, Result};
use crate::lattice::{corner_offsets, LatticeSpec};
use crate::mat::Mat;
use crate::scalar::Real;

/// Shell potential `V_r(ρ)`: interaction of two atoms at reference distance
/// `r` (the shell) and current distance `ρ`.
pub trait PairPotential<T: Real>: Send + Sync {
    fn name(&self) -> &str;
    fn energy(&self, shell: T, rho: T) -> T;
    fn first_derivative(&self, shell: T, rho: T) -> T;
    fn second_derivative(&self, shell: T, rho: T) -> T;

    /// `V_r(r) = 0` and `V_r ≥ 0` for every shell, so rigid motions cost nothing.
    fn vanishes_at_reference(&self) -> bool {
        false
    }
}

/// `4ε((σ/ρ)^12 - (σ/ρ)^6) + shift`, independent of the shell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LennardJones<T> {
    pub epsilon: T,
    pub sigma: T,
    pub shift: T,
}

impl<T: Real> LennardJones<T> {
    /// Well of depth `epsilon` at distance `r_min`, shifted up by `shift`.
    pub fn with_minimum_at(r_min: T, epsilon: T, shift: T) -> Self {
        Self {
            epsilon,
            sigma: r_min / T::lit(2.0).powf(T::lit(1.0 / 6.0)),
            shift,
        }
    }
}

impl<T: Real> PairPotential<T> for LennardJones<T> {
    fn name(&self) -> &str {
        "lennard_jones"
    }

    fn energy(&self, _shell: T, rho: T) -> T {
        let s6 = (self.sigma / rho).powi(6);
        T::lit(4.0) * self.epsilon * (s6 * s6 - s6) + self.shift
    }

    fn first_derivative(&self, _shell: T, rho: T) -> T {
        let s6 = (self.sigma / rho).powi(6);
        T::lit(4.0) * self.epsilon * (T::lit(-12.0) * s6 * s6 + T::lit(6.0) * s6) / rho
    }

    fn second_derivative(&self, _shell: T, rho: T) -> T {
        let s6 = (self.sigma / rho).powi(6);
        T::lit(4.0) * self.epsilon * (T::lit(156.0) * s6 * s6 - T::lit(42.0) * s6) / (rho * rho)
    }
}

/// `V_r(ρ) = (k/2)(ρ - r)²`: a spring whose rest length is the reference distance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HarmonicShell<T> {
    pub stiffness: T,
}

impl<T: Real> PairPotential<T> for HarmonicShell<T> {
    fn name(&self) -> &str {
        "harmonic_shell"
    }

    fn energy(&self, shell: T, rho: T) -> T {
        self.stiffness * (rho - shell) * (rho - shell) / T::lit(2.0)
    }

    fn first_derivative(&self, shell: T, rho: T) -> T {
        self.stiffness * (rho - shell)
    }

    fn second_derivative(&self, _shell: T, _rho: T) -> T {
        self.stiffness
    }

    fn vanishes_at_reference(&self) -> bool {
        true
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ZeroPotential;

impl<T: Real> PairPotential<T> for ZeroPotential {
    fn name(&self) -> &str {
        "zero"
    }
    fn energy(&self, _: T, _: T) -> T {
        T::zero()
    }
    fn first_derivative(&self, _: T, _: T) -> T {
        T::zero()
    }
    fn second_derivative(&self, _: T, _: T) -> T {
        T::zero()
    }
    fn vanishes_at_reference(&self) -> bool {
        true
    }
}

#[derive(Clone, Copy, Debug)]
struct Bond<T> {
    a: usize,
    b: usize,
    weight: T,
    shell: T,
}

/// Super-cell energy of a cut-off pair potential.
///
/// Follows the convention `E = Σ_{x ≠ x'} V_{|x-x'|}(|y(x) - y(x')|)` over
/// ordered pairs, so that the Cauchy-Born density is
/// `(1/|det A|) Σ_{x≠0} V_{|x|}(|Mx|)`. Each bond is split equally among all
/// bulk super-cells containing it.
#[derive(Clone)]
pub struct PairPotentialModel<T: Real> {
    spec: LatticeSpec<T>,
    potential: Arc<dyn PairPotential<T>>,
    cutoff: T,
    bonds: Vec<Bond<T>>,
}

/// Tolerance for deciding shell membership `|x| ≤ cutoff`.
pub(crate) const SHELL_SLACK: f64 = 1e-12;

impl<T: Real> PairPotentialModel<T> {
    pub fn new(base: &LatticeSpec<T>, potential: Arc<dyn PairPotential<T>>, cutoff: T) -> Result<Self> {
        let d = base.dim();
        let a_inv = base.basis_inv();
        if !(cutoff > T::zero()) || !cutoff.is_finite() {
            return Err(Error::EmptyStencil(cutoff.as_f64()));
        }
        let reach: Vec<i64> = (0..d)
            .map(|b| {
                let row: T = (0..d).map(|i| a_inv[(b, i)] * a_inv[(b, i)]).sum::<T>().sqrt();
                (cutoff * row + T::lit(1e-9)).floor().to_i64().unwrap_or(0)
            })
            .collect();
        let widest = *reach.iter().max().unwrap();
        if widest == 0 {
            return Err(Error::EmptyStencil(cutoff.as_f64()));
        }
        // block {-ext..1+ext}^d holds every bond of integer reach <= widest
        let ext = widest / 2;

        let mut extra = Vec::new();
        let corners = corner_offsets(d);
        for_each_in_box(d, -ext, 1 + ext, |j| {
            if !corners.contains(&j.to_vec()) {
                extra.push(j.to_vec());
            }
        });
        let spec = base.with_extra_stencil(&extra)?;
        let stencil = spec.stencil().to_vec();

        let slack = T::lit(SHELL_SLACK);
        let mut bonds = Vec::new();
        for a in 0..stencil.len() {
            for b in a + 1..stencil.len() {
                let delta: Vec<i64> = (0..d).map(|i| stencil[b][i] - stencil[a][i]).collect();
                let x = spec.point(&delta);
                let len = x.iter().map(|&v| v * v).sum::<T>().sqrt();
                if len > cutoff + slack {
                    continue;
                }
                let count = stencil
                    .iter()
                    .filter(|j| {
                        let shifted: Vec<i64> = j.iter().zip(&delta).map(|(p, q)| p + q).collect();
                        stencil.contains(&shifted)
                    })
                    .count();
                bonds.push(Bond {
                    a,
                    b,
                    weight: T::lit(2.0) / T::from_usize_lossy(count),
                    shell: len,
                });
            }
        }
        if bonds.is_empty() {
            return Err(Error::EmptyStencil(cutoff.as_f64()));
        }
        Ok(Self {
            spec,
            potential,
            cutoff,
            bonds,
        })
    }

    pub fn cutoff(&self) -> T {
        self.cutoff
    }

    pub fn potential(&self) -> &dyn PairPotential<T> {
        self.potential.as_ref()
    }

    pub fn bond_count(&self) -> usize {
        self.bonds.len()
    }
}

pub(crate) fn for_each_in_box(d: usize, lo: i64, hi: i64, mut f: impl FnMut(&[i64])) {
    let mut j = vec![lo; d];
    loop {
        f(&j);
        let mut b = 0;
        loop {
            if b == d {
                return;
            }
            j[b] += 1;
            if j[b] <= hi {
                break;
            }
            j[b] = lo;
            b += 1;
        }
    }
}

impl<T: Real> CellEnergy<T> for PairPotentialModel<T> {
    fn name(&self) -> &str {
        "pair_potential"
    }

    fn lattice(&self) -> &LatticeSpec<T> {
        &self.spec
    }

    fn growth(&self) -> Option<Growth<T>> {
        None
    }

    fn vanishes_on_rotations(&self) -> bool {
        self.potential.vanishes_at_reference()
    }

    fn energy(&self, f: &Mat<T>, _s: &Mat<T>) -> T {
        let d = f.rows();
        self.bonds
            .iter()
            .map(|bond| {
                let rho = (0..d)
                    .map(|i| {
                        let v = f[(i, bond.b)] - f[(i, bond.a)];
                        v * v
                    })
                    .sum::<T>()
                    .sqrt();
                bond.weight * self.potential.energy(bond.shell, rho)
            })
            .sum()
    }

    fn energy_gradient(&self, f: &Mat<T>, _s: &Mat<T>, df: &mut Mat<T>, _ds: &mut Mat<T>) -> T {
        df.fill(T::zero());
        let d = f.rows();
        let mut v = [T::zero(); 3];
        let mut e = T::zero();
        for bond in &self.bonds {
            for i in 0..d {
                v[i] = f[(i, bond.b)] - f[(i, bond.a)];
            }
            let rho = v[..d].iter().map(|&x| x * x).sum::<T>().sqrt();
            e = e + bond.weight * self.potential.energy(bond.shell, rho);
            if rho > T::zero() {
                let g = bond.weight * self.potential.first_derivative(bond.shell, rho) / rho;
                for i in 0..d {
                    df[(i, bond.b)] = df[(i, bond.b)] + g * v[i];
                    df[(i, bond.a)] = df[(i, bond.a)] - g * v[i];
                }
            }
        }
        e
    }
}
