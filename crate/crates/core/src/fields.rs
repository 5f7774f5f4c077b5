//! Lattice deformations, internal-variable fields, discrete gradients and the
//! barycentric piecewise-affine interpolation used for diagnostics.

use std::io::Write;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::lattice::CellGrid;
use crate::mat::Mat;
use crate::scalar::Real;
use crate::simplex::{barycentric_pieces, equivalence_constants};

/// Site positions `y(x)` on a [`CellGrid`], stored site-major (`d` values per site).
#[derive(Clone, Debug)]
pub struct Deformation<T> {
    grid: Arc<CellGrid<T>>,
    y: Vec<T>,
}

impl<T: Real> Deformation<T> {
    pub fn new(grid: Arc<CellGrid<T>>, y: Vec<T>) -> Result<Self> {
        let len = grid.n_sites() * grid.dim();
        if y.len() != len {
            return Err(Error::Shape(format!("expected {len} coordinates, got {}", y.len())));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("site positions"));
        }
        Ok(Self { grid, y })
    }

    pub fn grid(&self) -> &Arc<CellGrid<T>> {
        &self.grid
    }

    /// Flat positions, `d` per site.
    pub fn positions(&self) -> &[T] {
        &self.y
    }

    pub(crate) fn positions_mut(&mut self) -> &mut [T] {
        &mut self.y
    }

    pub fn site(&self, site: usize) -> &[T] {
        let d = self.grid.dim();
        &self.y[site * d..(site + 1) * d]
    }

    /// CSV with header `site_x,site_y[,site_z],y_1,y_2[,y_3]`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let d = self.grid.dim();
        let axes = ["x", "y", "z"];
        let mut header: Vec<String> = (0..d).map(|i| format!("site_{}", axes[i])).collect();
        header.extend((1..=d).map(|i| format!("y_{i}")));
        writeln!(w, "{}", header.join(","))?;
        for site in 0..self.grid.n_sites() {
            let row: Vec<String> = self
                .grid
                .site_position(site)
                .into_iter()
                .chain(self.site(site).iter().copied())
                .map(|v| format!("{v}"))
                .collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// `y(x) = Mx` at every site.
pub fn affine_deformation<T: Real>(grid: &Arc<CellGrid<T>>, m: &Mat<T>) -> Deformation<T> {
    let d = grid.dim();
    let mut y = Vec::with_capacity(grid.n_sites() * d);
    for site in 0..grid.n_sites() {
        y.extend(m.mul_vec(&grid.site_position(site)));
    }
    Deformation {
        grid: grid.clone(),
        y,
    }
}

/// Sets every pinned site `x` to `g(x)`; free sites are left untouched.
pub fn apply_boundary<T: Real>(def: &Deformation<T>, g: impl Fn(&[T]) -> Vec<T>) -> Result<Deformation<T>> {
    let mut out = def.clone();
    let d = def.grid.dim();
    for &site in def.grid.pinned_sites() {
        let v = g(&def.grid.site_position(site));
        if v.len() != d {
            return Err(Error::Shape(format!("boundary datum has {} components", v.len())));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("boundary datum"));
        }
        out.y[site * d..(site + 1) * d].copy_from_slice(&v);
    }
    Ok(out)
}

/// `∇̄y` on an interior cell: column `i` is `y_i − ȳ` with `ȳ` the mean of the
/// `2^d` corners; super-cell columns use the same `ȳ`.
pub fn discrete_gradient<T: Real>(def: &Deformation<T>, cell: usize) -> Result<Mat<T>> {
    let grid = &def.grid;
    if cell >= grid.n_cells() {
        return Err(Error::OutOfRange {
            index: cell,
            len: grid.n_cells(),
        });
    }
    if grid.interior_rank(cell).is_none() {
        return Err(Error::BoundaryCell(cell));
    }
    let sites = grid.cell_sites(cell)?;
    Ok(gradient_from_sites(def, &sites, grid.spec().n_corners()))
}

fn gradient_from_sites<T: Real>(def: &Deformation<T>, sites: &[usize], n_corners: usize) -> Mat<T> {
    let d = def.grid.dim();
    let mut f = Mat::from_fn(d, sites.len(), |i, c| def.site(sites[c])[i]);
    let inv = T::one() / T::from_usize_lossy(n_corners);
    for i in 0..d {
        let mean = (0..n_corners).map(|c| f[(i, c)]).sum::<T>() * inv;
        for c in 0..sites.len() {
            f[(i, c)] = f[(i, c)] - mean;
        }
    }
    f
}

/// Per-interior-cell internal shifts `s` (`d × m` each), optionally carrying
/// the prescribed mean `s₀`.
#[derive(Clone, Debug)]
pub struct InternalField<T> {
    grid: Arc<CellGrid<T>>,
    m: usize,
    s: Vec<Mat<T>>,
    mean_target: Option<Mat<T>>,
}

impl<T: Real> InternalField<T> {
    /// Every interior cell carries `s0`. With `constrained`, `s0` is also
    /// recorded as the mean target.
    pub fn uniform(grid: Arc<CellGrid<T>>, s0: &Mat<T>, constrained: bool) -> Self {
        let s = vec![s0.clone(); grid.interior_cells().len()];
        Self {
            m: s0.cols(),
            grid,
            s,
            mean_target: constrained.then(|| s0.clone()),
        }
    }

    pub fn from_cells(grid: Arc<CellGrid<T>>, s: Vec<Mat<T>>, mean_target: Option<Mat<T>>) -> Result<Self> {
        let d = grid.dim();
        let cells = grid.interior_cells().len();
        if s.len() != cells {
            return Err(Error::Shape(format!("expected {cells} cell shifts, got {}", s.len())));
        }
        let m = s.first().map_or(0, |x| x.cols());
        if s.iter().any(|x| x.rows() != d || x.cols() != m) {
            return Err(Error::Shape("cell shifts must all be d x m".into()));
        }
        if s.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("internal shifts"));
        }
        Ok(Self {
            grid,
            m,
            s,
            mean_target,
        })
    }

    pub fn grid(&self) -> &Arc<CellGrid<T>> {
        &self.grid
    }

    pub fn internal_count(&self) -> usize {
        self.m
    }

    pub fn mean_target(&self) -> Option<&Mat<T>> {
        self.mean_target.as_ref()
    }

    /// Shifts indexed by interior rank.
    pub fn shifts(&self) -> &[Mat<T>] {
        &self.s
    }

    pub fn for_cell(&self, cell: usize) -> Result<&Mat<T>> {
        let rank = self.grid.interior_rank(cell).ok_or(Error::BoundaryCell(cell))?;
        Ok(&self.s[rank])
    }

    /// Arithmetic mean over interior cells.
    pub fn mean(&self) -> Mat<T> {
        let d = self.grid.dim();
        let mut acc = Mat::zeros(d, self.m);
        for s in &self.s {
            acc = acc.add(s);
        }
        acc.scaled(T::one() / T::from_usize_lossy(self.s.len().max(1)))
    }
}

/// One affine piece of the interpolant `ỹ` on a cell.
#[derive(Clone, Debug)]
pub struct InterpolationPiece<T> {
    /// Reference vertices (absolute coordinates).
    pub vertices: Vec<Vec<T>>,
    /// `ỹ` at the vertices.
    pub values: Vec<Vec<T>>,
    /// Constant gradient `∇ỹ` on the piece.
    pub gradient: Mat<T>,
    pub volume: T,
}

/// Barycentric interpolation of `y` on one cell: face barycenters take the
/// mean of the face's corner values and `ỹ` is affine on each flag simplex.
pub fn interpolate_cell<T: Real>(def: &Deformation<T>, cell: usize) -> Result<Vec<InterpolationPiece<T>>> {
    let grid = &def.grid;
    if cell >= grid.n_cells() {
        return Err(Error::OutOfRange {
            index: cell,
            len: grid.n_cells(),
        });
    }
    let spec = grid.spec();
    let nc = spec.n_corners();
    let sites = grid.cell_sites(cell)?;
    let f = gradient_from_sites(def, &sites[..nc], nc);
    let d = grid.dim();
    let center = grid.cell_center(cell);
    let ybar: Vec<T> = (0..d)
        .map(|i| (0..nc).map(|c| def.site(sites[c])[i]).sum::<T>() / T::from_usize_lossy(nc))
        .collect();
    Ok(barycentric_pieces(spec)
        .into_iter()
        .map(|piece| {
            let g = piece.gradient(&f);
            let vertices: Vec<Vec<T>> = piece
                .vertices
                .iter()
                .map(|v| v.iter().zip(&center).map(|(&a, &b)| a + b).collect())
                .collect();
            // the last vertex is the cell center, where ỹ = ȳ
            let values = piece
                .vertices
                .iter()
                .map(|v| {
                    let gv = g.mul_vec(v);
                    ybar.iter().zip(gv).map(|(&a, b)| a + b).collect()
                })
                .collect();
            InterpolationPiece {
                vertices,
                values,
                gradient: g,
                volume: piece.volume,
            }
        })
        .collect())
}

/// `⨍_cell |∇ỹ|^p / |∇̄y|^p`, with `∇̄y` the corner block. Exact, since `∇ỹ`
/// is piecewise constant.
pub fn gradient_equivalence_ratio<T: Real>(def: &Deformation<T>, cell: usize, p: T) -> Result<T> {
    let pieces = interpolate_cell(def, cell)?;
    let grid = &def.grid;
    let nc = grid.spec().n_corners();
    let sites = grid.cell_sites(cell)?;
    let f = gradient_from_sites(def, &sites[..nc], nc);
    let denom = f.norm().powf(p);
    if denom == T::zero() {
        return Err(Error::RatioUndefined);
    }
    let vol = grid.spec().det_abs();
    let avg: T = pieces.iter().map(|pc| pc.volume * pc.gradient.norm().powf(p)).sum::<T>() / vol;
    Ok(avg / denom)
}

/// Certified `(c*, C*)` bracketing [`gradient_equivalence_ratio`] for every
/// deformation on lattices with this geometry.
pub fn certified_constants<T: Real>(grid: &CellGrid<T>, p: T) -> (T, T) {
    let spec = grid.spec();
    equivalence_constants(&barycentric_pieces(spec), spec.det_abs(), p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::LatticeSpec;
    use crate::models::affine_cell_gradient;

    fn grid(d: usize, n: usize) -> Arc<CellGrid<f64>> {
        Arc::new(CellGrid::new(LatticeSpec::cubic(d, 1.0).unwrap(), n).unwrap())
    }

    fn skew_grid(n: usize) -> Arc<CellGrid<f64>> {
        let a = Mat::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 3f64.sqrt() / 2.0]);
        Arc::new(CellGrid::new(LatticeSpec::new(2, a, None, 0).unwrap(), n).unwrap())
    }

    fn noisy(g: &Arc<CellGrid<f64>>, seed: u64, amp: f64) -> Deformation<f64> {
        let mut state = seed;
        let y = (0..g.n_sites() * g.dim())
            .map(|k| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                let u = (state >> 11) as f64 / (1u64 << 53) as f64;
                let site = k / g.dim();
                g.site_position(site)[k % g.dim()] + amp * (2.0 * u - 1.0)
            })
            .collect();
        Deformation::new(g.clone(), y).unwrap()
    }

    #[test]
    fn affine_examples() {
        let g = grid(2, 5);
        let id = affine_deformation(&g, &Mat::identity(2));
        for s in 0..g.n_sites() {
            assert_eq!(id.site(s), g.site_position(s).as_slice());
        }
        let zero = affine_deformation(&g, &Mat::zeros(2, 2));
        assert!(zero.positions().iter().all(|&v| v == 0.0));
        let m = affine_deformation(&g, &Mat::diag(&[1.2, 1.0]));
        let s = g.site_index(&[3, 2]);
        assert!((m.site(s)[0] - 3.6).abs() < 1e-15 && m.site(s)[1] == 2.0);
    }

    #[test]
    fn boundary_application() {
        let g = grid(2, 6);
        let noisy = noisy(&g, 1, 0.3);
        let c = apply_boundary(&noisy, |_| vec![7.0, -1.0]).unwrap();
        for s in 0..g.n_sites() {
            if g.is_pinned(s) {
                assert_eq!(c.site(s), &[7.0, -1.0]);
            } else {
                assert_eq!(c.site(s), noisy.site(s));
            }
        }
        let m = Mat::from_row_slice(2, 2, &[1.1, 0.2, -0.1, 0.9]);
        let b = apply_boundary(&noisy, |x| m.mul_vec(x)).unwrap();
        for &s in g.pinned_sites() {
            assert_eq!(b.site(s), m.mul_vec(&g.site_position(s)).as_slice());
        }
        assert!(matches!(apply_boundary(&noisy, |_| vec![f64::NAN, 0.0]), Err(Error::NonFinite(_))));
    }

    #[test]
    fn gradient_of_affine_and_constant() {
        for g in [skew_grid(6), grid(3, 4)] {
            let d = g.dim();
            let m = Mat::from_fn(d, d, |i, j| if i == j { 1.1 } else { 0.1 * (i + 2 * j) as f64 });
            let def = affine_deformation(&g, &m);
            let want = affine_cell_gradient(g.spec(), &m);
            for &cell in g.interior_cells() {
                assert!(discrete_gradient(&def, cell).unwrap().sub(&want).max_abs() < 1e-13);
            }
            let c = Deformation::new(g.clone(), vec![2.5; g.n_sites() * d]).unwrap();
            assert_eq!(discrete_gradient(&c, g.interior_cells()[0]).unwrap().max_abs(), 0.0);
            assert!(matches!(
                discrete_gradient(&def, g.boundary_cells()[0]),
                Err(Error::BoundaryCell(_))
            ));
        }
    }

    #[test]
    fn gradient_by_hand_and_in_v0() {
        let g = grid(2, 3);
        let def = noisy(&g, 9, 0.4);
        let cell = g.interior_cells()[0];
        let f = discrete_gradient(&def, cell).unwrap();
        // corners (1,1), (2,1), (1,2), (2,2)
        let ids = [g.site_index(&[1, 1]), g.site_index(&[2, 1]), g.site_index(&[1, 2]), g.site_index(&[2, 2])];
        for i in 0..2 {
            let mean = ids.iter().map(|&s| def.site(s)[i]).sum::<f64>() / 4.0;
            for (c, &s) in ids.iter().enumerate() {
                assert!((f[(i, c)] - (def.site(s)[i] - mean)).abs() < 1e-15);
            }
            assert!(f.row_sums()[i].abs() < 1e-12);
        }
    }

    #[test]
    fn interpolation_reproduces_affine_and_corners() {
        for g in [skew_grid(4), grid(3, 3)] {
            let d = g.dim();
            let m = Mat::from_fn(d, d, |i, j| 0.3 * i as f64 - 0.2 * j as f64 + if i == j { 1.0 } else { 0.0 });
            let def = affine_deformation(&g, &m);
            let pieces = interpolate_cell(&def, 0).unwrap();
            assert_eq!(pieces.len(), if d == 2 { 8 } else { 48 });
            for pc in &pieces {
                assert!(pc.gradient.sub(&m).max_abs() < 1e-13);
            }
            let def = noisy(&g, 4, 0.3);
            let cell = g.n_cells() - 1;
            let sites = g.cell_sites(cell).unwrap();
            for pc in interpolate_cell(&def, cell).unwrap() {
                // vertex 0 is always a cell corner
                let corner = sites
                    .iter()
                    .find(|&&s| {
                        g.site_position(s).iter().zip(&pc.vertices[0]).all(|(a, b)| (a - b).abs() < 1e-12)
                    })
                    .expect("vertex 0 is a corner");
                for i in 0..d {
                    assert!((pc.values[0][i] - def.site(*corner)[i]).abs() < 1e-12);
                }
                // affine consistency along the piece
                for k in 1..=d {
                    let dx: Vec<f64> = (0..d).map(|i| pc.vertices[k][i] - pc.vertices[0][i]).collect();
                    let gdx = pc.gradient.mul_vec(&dx);
                    for i in 0..d {
                        assert!((pc.values[k][i] - pc.values[0][i] - gdx[i]).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn ratio_examples() {
        let g = skew_grid(4);
        let m = Mat::from_row_slice(2, 2, &[1.3, 0.2, -0.4, 0.8]);
        let def = affine_deformation(&g, &m);
        let mz = affine_cell_gradient(g.spec(), &m);
        for p in [2.0, 3.0, 4.0] {
            let r = gradient_equivalence_ratio(&def, 5, p).unwrap();
            assert!((r - m.norm().powf(p) / mz.norm().powf(p)).abs() < 1e-12);
        }
        let noisy_def = noisy(&g, 2, 0.3);
        let shifted: Vec<f64> = noisy_def.positions().iter().enumerate().map(|(k, &v)| v + if k % 2 == 0 { 3.0 } else { -2.0 }).collect();
        let shifted = Deformation::new(g.clone(), shifted).unwrap();
        let (a, b) = (
            gradient_equivalence_ratio(&noisy_def, 3, 2.0).unwrap(),
            gradient_equivalence_ratio(&shifted, 3, 2.0).unwrap(),
        );
        assert!((a - b).abs() < 1e-12);
        let zero = affine_deformation(&g, &Mat::zeros(2, 2));
        assert!(matches!(gradient_equivalence_ratio(&zero, 0, 2.0), Err(Error::RatioUndefined)));
    }

    #[test]
    fn internal_field_mean() {
        let g = grid(2, 5);
        let s0 = Mat::from_row_slice(2, 1, &[0.2, -0.1]);
        let f = InternalField::uniform(g.clone(), &s0, true);
        assert_eq!(f.shifts().len(), 9);
        assert!(f.mean().sub(&s0).max_abs() < 1e-15);
        assert!(matches!(f.for_cell(0), Err(Error::BoundaryCell(0))));
        assert!(InternalField::from_cells(g, vec![s0; 3], None).is_err());
    }

    #[test]
    fn csv_layout() {
        let g = grid(2, 3);
        let def = affine_deformation(&g, &Mat::identity(2));
        let mut buf = Vec::new();
        def.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "site_x,site_y,y_1,y_2");
        assert_eq!(lines.len(), 1 + 16);
        assert_eq!(lines[2], "1,0,1,0");
    }
}
