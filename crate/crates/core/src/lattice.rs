//! Bravais lattice geometry and the cell/site bookkeeping of the box
//! `A(0,N)^d`.
//!
//! Conventions used everywhere in the crate:
//!
//! * Cells are labelled by integer coordinates `k ∈ {0..N-1}^d`; cell `k`
//!   spans `A(k + [0,1]^d)` and has center `A(k + ½)`.
//! * Sites are labelled by integer coordinates `j ∈ {0..N}^d` and sit at `A j`.
//! * Linear indices (cells and sites) are lexicographic with the first
//!   coordinate varying fastest.
//! * A stencil entry is an integer offset `j` from a cell's origin corner; the
//!   corresponding reference vector from the cell center is `A(j - ½)`. The
//!   first `2^d` entries are the unit-cell corners in binary order, bit `b`
//!   of the corner number giving coordinate `b`, so corner 0 is
//!   `A(-½, …, -½)`. Extra (super-cell) entries follow in the order given.

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::scalar::Real;

#[derive(Clone, Debug)]
pub struct LatticeSpec<T> {
    dim: usize,
    basis: Mat<T>,
    basis_inv: Mat<T>,
    det_abs: T,
    corners: Mat<T>,
    stencil: Vec<Vec<i64>>,
    radius: usize,
    internal: usize,
}

/// Integer offsets of the `2^d` unit-cell corners in binary order.
pub fn corner_offsets(dim: usize) -> Vec<Vec<i64>> {
    (0..1usize << dim)
        .map(|c| (0..dim).map(|b| ((c >> b) & 1) as i64).collect())
        .collect()
}

impl<T: Real> LatticeSpec<T> {
    /// Builds a lattice from its basis (columns are the lattice vectors).
    ///
    /// `extra_stencil` lists super-cell site offsets beyond the unit cell;
    /// `internal` is the number of additional atoms per cell.
    pub fn new(
        dim: usize,
        basis: Mat<T>,
        extra_stencil: Option<&[Vec<i64>]>,
        internal: usize,
    ) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::UnsupportedDimension(dim));
        }
        if basis.rows() != dim || basis.cols() != dim || !basis.is_finite() {
            return Err(Error::DegenerateLattice(dim));
        }
        let det = basis.det();
        let basis_inv = basis.inverse().ok_or(Error::DegenerateLattice(dim))?;
        if det == T::zero() {
            return Err(Error::DegenerateLattice(dim));
        }

        let mut stencil = corner_offsets(dim);
        for off in extra_stencil.unwrap_or(&[]) {
            if off.len() != dim {
                return Err(Error::BadStencil(format!(
                    "offset {off:?} does not have {dim} components"
                )));
            }
            if stencil.contains(off) {
                return Err(Error::BadStencil(format!("duplicate offset {off:?}")));
            }
            stencil.push(off.clone());
        }
        let radius = 1 + stencil
            .iter()
            .flat_map(|o| o.iter().map(|&j| (-j).max(j - 1).max(0)))
            .max()
            .unwrap_or(0) as usize;

        let half = T::lit(0.5);
        let corners = Mat::from_fn(dim, 1 << dim, |i, c| {
            (0..dim)
                .map(|b| basis[(i, b)] * (T::from_usize_lossy((c >> b) & 1) - half))
                .sum()
        });

        Ok(Self {
            dim,
            basis,
            basis_inv,
            det_abs: det.abs(),
            corners,
            stencil,
            radius,
            internal,
        })
    }

    /// Square (`d = 2`) or cubic (`d = 3`) lattice with spacing `a`.
    pub fn cubic(dim: usize, a: T) -> Result<Self> {
        Self::new(dim, Mat::identity(dim).scaled(a), None, 0)
    }

    /// Same lattice with a different set of super-cell offsets.
    pub fn with_extra_stencil(&self, extra: &[Vec<i64>]) -> Result<Self> {
        Self::new(self.dim, self.basis.clone(), Some(extra), self.internal)
    }

    /// Same lattice with `m` internal atoms per cell.
    pub fn with_internal(&self, m: usize) -> Self {
        Self {
            internal: m,
            ..self.clone()
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn basis(&self) -> &Mat<T> {
        &self.basis
    }

    pub fn basis_inv(&self) -> &Mat<T> {
        &self.basis_inv
    }

    pub fn det_abs(&self) -> T {
        self.det_abs
    }

    /// The `d × 2^d` corner matrix `Z`.
    pub fn corners(&self) -> &Mat<T> {
        &self.corners
    }

    pub fn n_corners(&self) -> usize {
        1 << self.dim
    }

    pub fn stencil(&self) -> &[Vec<i64>] {
        &self.stencil
    }

    pub fn stencil_len(&self) -> usize {
        self.stencil.len()
    }

    /// Width of the pinned boundary layer, in cells (1 for unit-cell stencils).
    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn internal(&self) -> usize {
        self.internal
    }

    /// Reference vectors `A(j - ½)` of all stencil entries as a `d × n` matrix.
    /// The first `2^d` columns equal `Z`.
    pub fn stencil_points(&self) -> Mat<T> {
        let half = T::lit(0.5);
        Mat::from_fn(self.dim, self.stencil.len(), |i, c| {
            (0..self.dim)
                .map(|b| self.basis[(i, b)] * (T::from_f64(self.stencil[c][b] as f64).unwrap() - half))
                .sum()
        })
    }

    /// Lattice point `A j`.
    pub fn point(&self, j: &[i64]) -> Vec<T> {
        (0..self.dim)
            .map(|i| {
                (0..self.dim)
                    .map(|b| self.basis[(i, b)] * T::from_f64(j[b] as f64).unwrap())
                    .sum()
            })
            .collect()
    }

    pub fn same_geometry(&self, other: &Self) -> bool {
        self.dim == other.dim && self.basis == other.basis
    }
}

/// Cell and site enumeration of the box `A(0,N)^d` with interior/boundary
/// classification. Immutable after construction.
#[derive(Clone, Debug)]
pub struct CellGrid<T> {
    spec: LatticeSpec<T>,
    n: usize,
    interior: Vec<usize>,
    boundary: Vec<usize>,
    interior_rank: Vec<Option<usize>>,
    pinned: Vec<bool>,
    free_sites: Vec<usize>,
    pinned_sites: Vec<usize>,
    free_rank: Vec<Option<usize>>,
    stencil_linear: Vec<isize>,
}

impl<T: Real> CellGrid<T> {
    pub fn new(spec: LatticeSpec<T>, n: usize) -> Result<Self> {
        let r = spec.radius();
        if n <= 2 * r {
            return Err(Error::NoInteriorCells { n, radius: r });
        }
        let d = spec.dim();
        let n_cells = n.pow(d as u32);
        let n_sites = (n + 1).pow(d as u32);

        let mut interior = Vec::new();
        let mut boundary = Vec::new();
        let mut interior_rank = vec![None; n_cells];
        let mut pinned = vec![false; n_sites];
        for cell in 0..n_cells {
            let k = unravel(cell, n, d);
            if k.iter().all(|&c| c >= r && c + r < n) {
                interior_rank[cell] = Some(interior.len());
                interior.push(cell);
            } else {
                boundary.push(cell);
                for corner in corner_offsets(d) {
                    let j: Vec<usize> = k.iter().zip(&corner).map(|(&a, &b)| a + b as usize).collect();
                    pinned[ravel(&j, n + 1)] = true;
                }
            }
        }
        let mut free_sites = Vec::new();
        let mut pinned_sites = Vec::new();
        let mut free_rank = vec![None; n_sites];
        for (site, &p) in pinned.iter().enumerate() {
            if p {
                pinned_sites.push(site);
            } else {
                free_rank[site] = Some(free_sites.len());
                free_sites.push(site);
            }
        }
        let stencil_linear = spec
            .stencil()
            .iter()
            .map(|off| {
                let mut stride = 1isize;
                let mut lin = 0isize;
                for &o in off {
                    lin += o as isize * stride;
                    stride *= (n + 1) as isize;
                }
                lin
            })
            .collect();

        Ok(Self {
            spec,
            n,
            interior,
            boundary,
            interior_rank,
            pinned,
            free_sites,
            pinned_sites,
            free_rank,
            stencil_linear,
        })
    }

    pub fn spec(&self) -> &LatticeSpec<T> {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.spec.dim()
    }

    /// Cells per side.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_cells(&self) -> usize {
        self.n.pow(self.dim() as u32)
    }

    pub fn n_sites(&self) -> usize {
        (self.n + 1).pow(self.dim() as u32)
    }

    pub fn interior_cells(&self) -> &[usize] {
        &self.interior
    }

    pub fn boundary_cells(&self) -> &[usize] {
        &self.boundary
    }

    /// Position of `cell` in [`Self::interior_cells`], if interior.
    pub fn interior_rank(&self, cell: usize) -> Option<usize> {
        self.interior_rank.get(cell).copied().flatten()
    }

    pub fn is_pinned(&self, site: usize) -> bool {
        self.pinned[site]
    }

    pub fn pinned_mask(&self) -> &[bool] {
        &self.pinned
    }

    pub fn free_sites(&self) -> &[usize] {
        &self.free_sites
    }

    pub fn pinned_sites(&self) -> &[usize] {
        &self.pinned_sites
    }

    /// Position of `site` in [`Self::free_sites`], if free.
    pub fn free_rank(&self, site: usize) -> Option<usize> {
        self.free_rank.get(site).copied().flatten()
    }

    pub fn cell_coords(&self, cell: usize) -> Vec<usize> {
        unravel(cell, self.n, self.dim())
    }

    pub fn cell_index(&self, k: &[usize]) -> usize {
        ravel(k, self.n)
    }

    pub fn site_coords(&self, site: usize) -> Vec<usize> {
        unravel(site, self.n + 1, self.dim())
    }

    pub fn site_index(&self, j: &[usize]) -> usize {
        ravel(j, self.n + 1)
    }

    /// Reference position `A j` of a site.
    pub fn site_position(&self, site: usize) -> Vec<T> {
        let j: Vec<i64> = self.site_coords(site).into_iter().map(|x| x as i64).collect();
        self.spec.point(&j)
    }

    /// Reference center `A(k + ½)` of a cell.
    pub fn cell_center(&self, cell: usize) -> Vec<T> {
        let k = self.cell_coords(cell);
        let a = self.spec.basis();
        let half = T::lit(0.5);
        (0..self.dim())
            .map(|i| {
                (0..self.dim())
                    .map(|b| a[(i, b)] * (T::from_usize_lossy(k[b]) + half))
                    .sum()
            })
            .collect()
    }

    /// Stencil sites of `cell`: the `2^d` corners in `Z` order, then any
    /// super-cell sites.
    pub fn cell_sites(&self, cell: usize) -> Result<Vec<usize>> {
        let len = self.n_cells();
        if cell >= len {
            return Err(Error::OutOfRange { index: cell, len });
        }
        let k = self.cell_coords(cell);
        self.spec
            .stencil()
            .iter()
            .map(|off| {
                let j: Option<Vec<usize>> = k
                    .iter()
                    .zip(off)
                    .map(|(&a, &o)| {
                        let v = a as i64 + o;
                        (0..=self.n as i64).contains(&v).then_some(v as usize)
                    })
                    .collect();
                j.map(|j| self.site_index(&j)).ok_or_else(|| {
                    Error::BadStencil(format!("stencil of cell {cell} leaves the box"))
                })
            })
            .collect()
    }

    /// Fast path for interior cells: writes stencil sites into `out`.
    #[inline]
    pub(crate) fn interior_cell_sites_into(&self, cell: usize, out: &mut [usize]) {
        let k = self.cell_coords(cell);
        let origin = self.site_index(&k) as isize;
        for (o, &s) in out.iter_mut().zip(&self.stencil_linear) {
            *o = (origin + s) as usize;
        }
    }
}

fn unravel(mut idx: usize, n: usize, d: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(d);
    for _ in 0..d {
        out.push(idx % n);
        idx /= n;
    }
    out
}

fn ravel(k: &[usize], n: usize) -> usize {
    k.iter().rev().fold(0, |acc, &c| acc * n + c)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square() -> LatticeSpec<f64> {
        LatticeSpec::cubic(2, 1.0).unwrap()
    }

    #[test]
    fn identity_basis_corners() {
        let s = square();
        assert_eq!(s.det_abs(), 1.0);
        let z = s.corners();
        assert_eq!(z.col(0), vec![-0.5, -0.5]);
        assert_eq!(z.col(1), vec![0.5, -0.5]);
        assert_eq!(z.col(2), vec![-0.5, 0.5]);
        assert_eq!(z.col(3), vec![0.5, 0.5]);
        assert!(z.row_sums().iter().all(|&x| x == 0.0));
        assert_eq!(s.radius(), 1);
    }

    #[test]
    fn scaled_and_triangular_determinants() {
        let s = LatticeSpec::cubic(2, 2.0).unwrap();
        assert_eq!(s.det_abs(), 4.0);
        let tri = Mat::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 3f64.sqrt() / 2.0]);
        let s = LatticeSpec::new(2, tri, None, 0).unwrap();
        assert!((s.det_abs() - 0.8660254037844386).abs() < 1e-15);
        assert!(s.corners().row_sums().iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn degenerate_and_duplicate_inputs_rejected() {
        let sing = Mat::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(matches!(
            LatticeSpec::new(2, sing, None, 0),
            Err(Error::DegenerateLattice(2))
        ));
        let dup = vec![vec![2, 0], vec![2, 0]];
        assert!(matches!(
            LatticeSpec::new(2, Mat::<f64>::identity(2), Some(&dup), 0),
            Err(Error::BadStencil(_))
        ));
        let corner = vec![vec![1, 1]];
        assert!(matches!(
            LatticeSpec::new(2, Mat::<f64>::identity(2), Some(&corner), 0),
            Err(Error::BadStencil(_))
        ));
        assert!(matches!(
            LatticeSpec::<f64>::cubic(4, 1.0),
            Err(Error::UnsupportedDimension(4))
        ));
    }

    #[test]
    fn extended_stencil_radius() {
        let s = square().with_extra_stencil(&[vec![2, 0]]).unwrap();
        assert_eq!(s.radius(), 2);
        let s = square().with_extra_stencil(&[vec![-2, 1], vec![0, 3]]).unwrap();
        assert_eq!(s.radius(), 3);
        assert_eq!(s.stencil_len(), 6);
    }

    #[test]
    fn small_grid_counts() {
        let g = CellGrid::new(square(), 3).unwrap();
        assert_eq!(g.interior_cells().len(), 1);
        assert_eq!(g.boundary_cells().len(), 8);
        assert_eq!(g.n_sites(), 16);
        // every site of a 3x3 box touches a boundary cell
        assert!(g.free_sites().is_empty());
        let g = CellGrid::new(square(), 5).unwrap();
        assert_eq!(g.interior_cells().len(), 9);
        assert_eq!(g.free_sites().len(), 4);
    }

    #[test]
    fn too_small_box_rejected() {
        assert!(matches!(
            CellGrid::new(square(), 2),
            Err(Error::NoInteriorCells { n: 2, radius: 1 })
        ));
        let wide = square().with_extra_stencil(&[vec![2, 0]]).unwrap();
        assert!(CellGrid::new(wide, 4).is_err());
    }

    #[test]
    fn interior_count_exhaustive() {
        for d in 2..=3 {
            let base = LatticeSpec::<f64>::cubic(d, 1.0).unwrap();
            let mut far = vec![0i64; d];
            far[0] = 2;
            let specs = [base.clone(), base.with_extra_stencil(&[far]).unwrap()];
            for spec in specs {
                let r = spec.radius();
                let max_n = if d == 3 { 9 } else { 12 };
                for n in 2 * r + 1..=max_n {
                    let g = CellGrid::new(spec.clone(), n).unwrap();
                    assert_eq!(g.interior_cells().len(), (n - 2 * r).pow(d as u32));
                    assert_eq!(
                        g.interior_cells().len() + g.boundary_cells().len(),
                        n.pow(d as u32)
                    );
                    assert_eq!(
                        g.free_sites().len() + g.pinned_sites().len(),
                        g.n_sites()
                    );
                }
            }
        }
    }

    #[test]
    fn free_sites_touch_only_interior_cells() {
        let g = CellGrid::new(square(), 7).unwrap();
        for cell in g.boundary_cells() {
            for s in g.cell_sites(*cell).unwrap() {
                assert!(g.is_pinned(s));
            }
        }
    }

    #[test]
    fn cell_sites_follow_corner_order() {
        let tri = Mat::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 3f64.sqrt() / 2.0]);
        let spec = LatticeSpec::new(2, tri, None, 0).unwrap();
        let g = CellGrid::new(spec, 5).unwrap();
        let z = g.spec().corners().clone();
        for &cell in g.interior_cells() {
            let center = g.cell_center(cell);
            for (i, site) in g.cell_sites(cell).unwrap().into_iter().enumerate() {
                let x = g.site_position(site);
                for r in 0..2 {
                    assert!((x[r] - (center[r] + z[(r, i)])).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn corner_cell_sites_pinned() {
        let g = CellGrid::new(square(), 3).unwrap();
        let sites = g.cell_sites(0).unwrap();
        assert_eq!(sites, vec![0, 1, 4, 5]);
        assert!(sites.iter().all(|&s| g.is_pinned(s)));
        let center = g.cell_sites(4).unwrap();
        assert_eq!(center, vec![5, 6, 9, 10]);
        assert!(matches!(g.cell_sites(9), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn construction_is_deterministic() {
        let a = CellGrid::new(square(), 6).unwrap();
        let b = CellGrid::new(square(), 6).unwrap();
        assert_eq!(a.interior_cells(), b.interior_cells());
        assert_eq!(a.free_sites(), b.free_sites());
        assert_eq!(a.pinned_mask(), b.pinned_mask());
    }
}
