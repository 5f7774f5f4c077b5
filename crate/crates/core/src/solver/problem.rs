use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fields::{affine_deformation, Deformation, InternalField};
use crate::lattice::CellGrid;
use crate::mat::Mat;
use crate::models::CellEnergy;
use crate::scalar::Real;

/// The pinned cell problem on one box: free-site positions plus, for
/// multilattice models, per-interior-cell internal shifts.
///
/// Variable layout: `d` coordinates per free site (in free-site order),
/// followed by the internal block, one `d·m` entry per interior cell. With a
/// mean target `s₀` the block holds `t_c` and `s_c = s₀ + t_c − mean(t)`, an
/// orthogonal parametrization of the constraint set (the gradient is the
/// projected one and the mean holds exactly); without one it holds `s_c`.
#[derive(Clone)]
pub struct Problem<T: Real> {
    grid: Arc<CellGrid<T>>,
    model: Arc<dyn CellEnergy<T>>,
    m: Mat<T>,
    s0: Option<Mat<T>>,
    base: Vec<T>,
    cell_sites: Vec<usize>,
    n_pos: usize,
    n_int: usize,
}

/// Builds the cell problem with boundary datum `y = Mx` and optional
/// internal mean target `s0`.
pub fn assemble<T: Real>(
    grid: Arc<CellGrid<T>>,
    model: Arc<dyn CellEnergy<T>>,
    m: &Mat<T>,
    s0: Option<&Mat<T>>,
) -> Result<Problem<T>> {
    let spec = grid.spec();
    let mspec = model.lattice();
    let d = spec.dim();
    if !spec.same_geometry(mspec) || spec.stencil() != mspec.stencil() {
        return Err(Error::Incompatible("model lattice or stencil differs from the grid".into()));
    }
    if m.rows() != d || m.cols() != d || !m.is_finite() {
        return Err(Error::Shape(format!("boundary matrix must be finite {d}x{d}")));
    }
    let mi = model.internal();
    if let Some(s0) = s0 {
        if mi == 0 {
            return Err(Error::Incompatible("internal variables undefined for Bravais model".into()));
        }
        if s0.rows() != d || s0.cols() != mi || !s0.is_finite() {
            return Err(Error::Shape(format!("s0 must be finite {d}x{mi}")));
        }
    }
    let n_int_cells = grid.interior_cells().len();
    let n = spec.stencil_len();
    let mut cell_sites = vec![0; n_int_cells * n];
    for (rank, &cell) in grid.interior_cells().iter().enumerate() {
        grid.interior_cell_sites_into(cell, &mut cell_sites[rank * n..(rank + 1) * n]);
    }
    let base = affine_deformation(&grid, m).positions().to_vec();
    Ok(Problem {
        n_pos: d * grid.free_sites().len(),
        n_int: d * mi * n_int_cells,
        grid,
        model,
        m: m.clone(),
        s0: s0.cloned(),
        base,
        cell_sites,
    })
}

impl<T: Real> Problem<T> {
    pub fn grid(&self) -> &Arc<CellGrid<T>> {
        &self.grid
    }

    pub fn model(&self) -> &Arc<dyn CellEnergy<T>> {
        &self.model
    }

    pub fn boundary_matrix(&self) -> &Mat<T> {
        &self.m
    }

    pub fn mean_target(&self) -> Option<&Mat<T>> {
        self.s0.as_ref()
    }

    pub fn n_vars(&self) -> usize {
        self.n_pos + self.n_int
    }

    pub fn n_position_vars(&self) -> usize {
        self.n_pos
    }

    pub fn n_internal_vars(&self) -> usize {
        self.n_int
    }

    fn internal_count(&self) -> usize {
        self.model.internal()
    }

    /// Variables of the affine state (internal shifts at `s₀`, or zero).
    pub fn affine_vars(&self) -> Vec<T> {
        let d = self.grid.dim();
        let mut x = Vec::with_capacity(self.n_vars());
        for &site in self.grid.free_sites() {
            x.extend_from_slice(&self.base[site * d..(site + 1) * d]);
        }
        x.resize(self.n_vars(), T::zero());
        x
    }

    /// Packs a deformation (and internal field) into variables. Pinned sites
    /// must carry the boundary datum.
    pub fn pack(&self, def: &Deformation<T>, internal: Option<&InternalField<T>>) -> Result<Vec<T>> {
        if def.grid().n_sites() != self.grid.n_sites() || def.grid().dim() != self.grid.dim() {
            return Err(Error::Shape("deformation lives on a different grid".into()));
        }
        let d = self.grid.dim();
        let y = def.positions();
        for &site in self.grid.pinned_sites() {
            let want = &self.base[site * d..(site + 1) * d];
            let got = &y[site * d..(site + 1) * d];
            let scale = T::one() + want.iter().fold(T::zero(), |a, v| a.max(v.abs()));
            if want.iter().zip(got).any(|(a, b)| (*a - *b).abs() > T::lit(1e-12) * scale) {
                return Err(Error::InvalidParameter(format!(
                    "start violates boundary pinning at site {site}"
                )));
            }
        }
        let mut x = Vec::with_capacity(self.n_vars());
        for &site in self.grid.free_sites() {
            x.extend_from_slice(&y[site * d..(site + 1) * d]);
        }
        match internal {
            None => x.resize(self.n_vars(), T::zero()),
            Some(field) => {
                let shifts = field.shifts();
                if shifts.len() != self.grid.interior_cells().len()
                    || shifts.iter().any(|s| s.cols() != self.internal_count())
                {
                    return Err(Error::Shape("internal field does not match the problem".into()));
                }
                match &self.s0 {
                    None => shifts.iter().for_each(|s| x.extend_from_slice(s.as_slice())),
                    Some(s0) => {
                        let tol = T::lit(1e-10) * (T::one() + s0.max_abs());
                        if field.mean().sub(s0).max_abs() > tol {
                            return Err(Error::InvalidParameter("internal field mean differs from s0".into()));
                        }
                        shifts.iter().for_each(|s| x.extend(s.sub(s0).as_slice()));
                    }
                }
            }
        }
        Ok(x)
    }

    /// All site positions for variables `x`.
    pub fn positions(&self, x: &[T]) -> Vec<T> {
        let d = self.grid.dim();
        let mut y = self.base.clone();
        for (k, &site) in self.grid.free_sites().iter().enumerate() {
            y[site * d..(site + 1) * d].copy_from_slice(&x[k * d..(k + 1) * d]);
        }
        y
    }

    /// Internal shifts per interior cell, flat (`d·m` per cell, row-major).
    fn shifts(&self, x: &[T]) -> Vec<T> {
        let d = self.grid.dim();
        let block = d * self.internal_count();
        let cells = self.grid.interior_cells().len();
        if block == 0 {
            return Vec::new();
        }
        let t = &x[self.n_pos..];
        match &self.s0 {
            None => t.to_vec(),
            Some(s0) => {
                let mean = block_mean(t, block, cells);
                let base = s0.as_slice();
                t.chunks(block)
                    .flat_map(|c| c.iter().enumerate().map(|(k, &v)| base[k] + v - mean[k]))
                    .collect()
            }
        }
    }

    pub fn unpack(&self, x: &[T]) -> Result<(Deformation<T>, Option<InternalField<T>>)> {
        let def = Deformation::new(self.grid.clone(), self.positions(x))?;
        let mi = self.internal_count();
        if mi == 0 {
            return Ok((def, None));
        }
        let d = self.grid.dim();
        let s = self.shifts(x);
        let cells = s
            .chunks(d * mi)
            .map(|c| Mat::from_row_slice(d, mi, c))
            .collect();
        let field = InternalField::from_cells(self.grid.clone(), cells, self.s0.clone())?;
        Ok((def, Some(field)))
    }

    /// Total interior-cell energy.
    pub fn energy(&self, x: &[T]) -> Result<T> {
        self.evaluate(x, None, None)
    }

    /// Energy and its gradient with respect to the variables.
    pub fn energy_and_gradient(&self, x: &[T]) -> Result<(T, Vec<T>)> {
        let d = self.grid.dim();
        let mut site_grad = vec![T::zero(); self.grid.n_sites() * d];
        let block = d * self.internal_count();
        let cells = self.grid.interior_cells().len();
        let mut s_grad = vec![T::zero(); cells * block];
        let e = self.evaluate(x, Some(&mut site_grad), Some(&mut s_grad))?;
        let mut g = Vec::with_capacity(self.n_vars());
        for &site in self.grid.free_sites() {
            g.extend_from_slice(&site_grad[site * d..(site + 1) * d]);
        }
        if block > 0 {
            match self.s0 {
                None => g.extend_from_slice(&s_grad),
                Some(_) => {
                    let mean = block_mean(&s_grad, block, cells);
                    g.extend(s_grad.chunks(block).flat_map(|c| c.iter().zip(&mean).map(|(&v, &m)| v - m)));
                }
            }
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::DivergedEvaluation);
        }
        Ok((e, g))
    }

    /// Gradient with respect to every site position, pinned ones included
    /// (the pseudo-forces the boundary exerts). Components sum to zero.
    pub fn site_gradient(&self, x: &[T]) -> Result<Vec<T>> {
        let mut site_grad = vec![T::zero(); self.grid.n_sites() * self.grid.dim()];
        let mut s_grad = vec![T::zero(); self.grid.interior_cells().len() * self.grid.dim() * self.internal_count()];
        self.evaluate(x, Some(&mut site_grad), Some(&mut s_grad))?;
        Ok(site_grad)
    }

    fn evaluate(&self, x: &[T], mut site_grad: Option<&mut [T]>, mut s_grad: Option<&mut [T]>) -> Result<T> {
        if x.len() != self.n_vars() {
            return Err(Error::Shape(format!("expected {} variables, got {}", self.n_vars(), x.len())));
        }
        let d = self.grid.dim();
        let spec = self.grid.spec();
        let n = spec.stencil_len();
        let nc = spec.n_corners();
        let mi = self.internal_count();
        let y = self.positions(x);
        let s_all = self.shifts(x);
        let inv = T::one() / T::from_usize_lossy(nc);

        let mut f = Mat::zeros(d, n);
        let mut s = Mat::zeros(d, mi);
        let mut df = Mat::zeros(d, n);
        let mut ds = Mat::zeros(d, mi);
        let mut total = T::zero();
        for (rank, sites) in self.cell_sites.chunks(n).enumerate() {
            for i in 0..d {
                let mean = sites[..nc].iter().map(|&st| y[st * d + i]).sum::<T>() * inv;
                for (c, &st) in sites.iter().enumerate() {
                    f[(i, c)] = y[st * d + i] - mean;
                }
            }
            if mi > 0 {
                s.as_mut_slice().copy_from_slice(&s_all[rank * d * mi..(rank + 1) * d * mi]);
            }
            let e = match site_grad.as_deref_mut() {
                None => self.model.energy(&f, &s),
                Some(sg) => {
                    let e = self.model.energy_gradient(&f, &s, &mut df, &mut ds);
                    for i in 0..d {
                        let col_total = (0..n).map(|c| df[(i, c)]).sum::<T>() * inv;
                        for (c, &st) in sites.iter().enumerate() {
                            let mut v = df[(i, c)];
                            if c < nc {
                                v = v - col_total;
                            }
                            sg[st * d + i] = sg[st * d + i] + v;
                        }
                    }
                    if let Some(sgr) = s_grad.as_deref_mut() {
                        sgr[rank * d * mi..(rank + 1) * d * mi].copy_from_slice(ds.as_slice());
                    }
                    e
                }
            };
            total = total + e;
        }
        if !total.is_finite() {
            return Err(Error::DivergedEvaluation);
        }
        Ok(total)
    }

    /// Shortest distance between two distinct stencil sites of any interior
    /// cell, or between a corner and an internal atom.
    pub(crate) fn min_bond_length(&self, x: &[T]) -> T {
        let d = self.grid.dim();
        let n = self.grid.spec().stencil_len();
        let nc = self.grid.spec().n_corners();
        let mi = self.internal_count();
        let y = self.positions(x);
        let s_all = self.shifts(x);
        let dist = |a: &[T], b: &[T]| a.iter().zip(b).map(|(&p, &q)| (p - q) * (p - q)).sum::<T>().sqrt();
        let mut best = T::infinity();
        for (rank, sites) in self.cell_sites.chunks(n).enumerate() {
            for a in 0..n {
                for b in a + 1..n {
                    best = best.min(dist(&y[sites[a] * d..][..d], &y[sites[b] * d..][..d]));
                }
            }
            if mi > 0 {
                let mean: Vec<T> = (0..d)
                    .map(|i| sites[..nc].iter().map(|&st| y[st * d + i]).sum::<T>() / T::from_usize_lossy(nc))
                    .collect();
                let s = Mat::from_row_slice(d, mi, &s_all[rank * d * mi..(rank + 1) * d * mi]);
                for j in 0..mi {
                    let atom: Vec<T> = (0..d).map(|i| mean[i] + s[(i, j)]).collect();
                    for &st in &sites[..nc] {
                        best = best.min(dist(&atom, &y[st * d..][..d]));
                    }
                }
            }
        }
        best
    }
}

/// Componentwise mean of `cells` consecutive blocks of length `block`.
fn block_mean<T: Real>(v: &[T], block: usize, cells: usize) -> Vec<T> {
    let mut mean = vec![T::zero(); block];
    for c in v.chunks(block) {
        mean.iter_mut().zip(c).for_each(|(m, &x)| *m = *m + x);
    }
    let inv = T::one() / T::from_usize_lossy(cells.max(1));
    mean.iter_mut().for_each(|m| *m = *m * inv);
    mean
}
