//! Simplicial decompositions of a lattice cell and the piecewise-affine
//! interpolants built on them.
//!
//! Every piece carries a linear map `B` (`2^d × d`) such that the constant
//! gradient of the interpolant on that piece is `F · B`, where `F` is the
//! `d × 2^d` block of corner values (or any translate of it: the columns of
//! `B` sum to zero).

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::lattice::LatticeSpec;
use crate::mat::Mat;
use crate::scalar::Real;

/// One affine piece of a cell decomposition.
#[derive(Clone, Debug)]
pub struct AffinePiece<T> {
    /// `d + 1` vertices, relative to the cell center.
    pub vertices: Vec<Vec<T>>,
    pub volume: T,
    /// Gradient map: piece gradient = `F · map`.
    pub map: Mat<T>,
}

impl<T: Real> AffinePiece<T> {
    /// Constant gradient of the interpolant of corner values `f` on this piece.
    pub fn gradient(&self, f: &Mat<T>) -> Mat<T> {
        let n = self.map.rows();
        if f.cols() == n {
            f.matmul(&self.map)
        } else {
            f.left_cols(n).matmul(&self.map)
        }
    }
}

/// Decomposition of the cell `A[-½,½]^d` into simplices whose vertices are
/// cell corners.
#[derive(Clone, Debug)]
pub struct SimplicialDecomposition<T> {
    dim: usize,
    simplices: Vec<Vec<usize>>,
    pieces: Vec<AffinePiece<T>>,
}

impl<T: Real> SimplicialDecomposition<T> {
    /// Kuhn (Freudenthal) triangulation: one simplex per permutation `π`,
    /// with vertices `0, e_π(1), e_π(1) + e_π(2), …` of the unit cube.
    pub fn kuhn(spec: &LatticeSpec<T>) -> Self {
        let d = spec.dim();
        let simplices = permutations(d)
            .into_iter()
            .map(|perm| {
                let mut c = 0usize;
                let mut verts = vec![c];
                for &axis in &perm {
                    c |= 1 << axis;
                    verts.push(c);
                }
                verts
            })
            .collect();
        Self::from_corner_lists(spec, simplices).expect("Kuhn triangulation is valid")
    }

    /// Decomposition given by lists of `d + 1` corner numbers per simplex.
    pub fn from_corner_lists(spec: &LatticeSpec<T>, simplices: Vec<Vec<usize>>) -> Result<Self> {
        let d = spec.dim();
        let z = spec.corners();
        let n = spec.n_corners();
        let mut pieces = Vec::with_capacity(simplices.len());
        for s in &simplices {
            if s.len() != d + 1 || s.iter().any(|&c| c >= n) {
                return Err(Error::BadDecomposition(format!("invalid vertex list {s:?}")));
            }
            let mut weights = Mat::zeros(n, d + 1);
            for (k, &c) in s.iter().enumerate() {
                weights[(c, k)] = T::one();
            }
            let vertices = s.iter().map(|&c| z.col(c)).collect();
            pieces.push(piece_from_weights(vertices, &weights).ok_or_else(|| {
                Error::BadDecomposition(format!("degenerate simplex {s:?}"))
            })?);
        }
        let total: T = pieces.iter().map(|p| p.volume).sum();
        let tol = T::lit(1e-12) * spec.det_abs();
        if (total - spec.det_abs()).abs() > tol {
            return Err(Error::BadDecomposition(format!(
                "simplex volumes sum to {total}, cell volume is {}",
                spec.det_abs()
            )));
        }
        Ok(Self {
            dim: d,
            simplices,
            pieces,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Corner numbers of each simplex.
    pub fn simplices(&self) -> &[Vec<usize>] {
        &self.simplices
    }

    pub fn pieces(&self) -> &[AffinePiece<T>] {
        &self.pieces
    }

    pub fn volumes(&self) -> Vec<T> {
        self.pieces.iter().map(|p| p.volume).collect()
    }
}

/// Recursive barycentric decomposition: each `k`-face is split into cones
/// from its barycenter over the pieces of its `(k-1)`-faces, and the
/// interpolant takes the mean of the face's corner values at the barycenter.
///
/// Pieces are the flags `vertex ⊂ edge ⊂ … ⊂ cell`, so there are
/// `2^d · d!` of them (8 in 2D, 48 in 3D), all of equal volume.
pub fn barycentric_pieces<T: Real>(spec: &LatticeSpec<T>) -> Vec<AffinePiece<T>> {
    let d = spec.dim();
    let n = spec.n_corners();
    let a = spec.basis();
    let half = T::lit(0.5);
    let mut out = Vec::with_capacity(n * factorial(d));
    for base in 0..n {
        for perm in permutations(d) {
            let mut free_mask = 0usize;
            let mut vertices = Vec::with_capacity(d + 1);
            let mut weights = Mat::zeros(n, d + 1);
            for k in 0..=d {
                if k > 0 {
                    free_mask |= 1 << perm[k - 1];
                }
                let face: Vec<usize> = (0..n).filter(|&c| (c & !free_mask) == (base & !free_mask)).collect();
                let w = T::one() / T::from_usize_lossy(face.len());
                for &c in &face {
                    weights[(c, k)] = w;
                }
                let unit: Vec<T> = (0..d)
                    .map(|b| {
                        if free_mask >> b & 1 == 1 {
                            T::zero()
                        } else {
                            T::from_usize_lossy((base >> b) & 1) - half
                        }
                    })
                    .collect();
                vertices.push((0..d).map(|i| (0..d).map(|b| a[(i, b)] * unit[b]).sum()).collect());
            }
            out.push(piece_from_weights(vertices, &weights).expect("barycentric pieces are non-degenerate"));
        }
    }
    out
}

/// Builds a piece whose vertex values are `F · weights` (columns = vertices).
fn piece_from_weights<T: Real>(vertices: Vec<Vec<T>>, weights: &Mat<T>) -> Option<AffinePiece<T>> {
    let d = vertices.len() - 1;
    let dw = Mat::from_fn(d, d, |i, k| vertices[k + 1][i] - vertices[0][i]);
    let det = dw.det();
    let inv = dw.inverse()?;
    let diff = Mat::from_fn(weights.rows(), d, |c, k| weights[(c, k + 1)] - weights[(c, 0)]);
    let volume = det.abs() / T::from_usize_lossy(factorial(d));
    Some(AffinePiece {
        vertices,
        volume,
        map: diff.matmul(&inv),
    })
}

/// Certified constants `(c*, C*)` with
/// `c*|F|^p ≤ (1/|cell|) Σ_S |S| |F B_S|^p ≤ C*|F|^p` for all `F` with zero row sums.
///
/// For `p = 2` both are attained (extreme eigenvalues of the averaged
/// quadratic form on the zero-sum subspace). For other `p` they follow from
/// Jensen's inequality and the largest single-piece gain.
pub fn equivalence_constants<T: Real>(pieces: &[AffinePiece<T>], cell_volume: T, p: T) -> (T, T) {
    let n = pieces[0].map.rows();
    let h = helmert_basis(n);
    let mut k = DMatrix::<f64>::zeros(n, n);
    let mut gain = 0f64;
    for piece in pieces {
        let b = DMatrix::from_fn(n, piece.map.cols(), |i, j| piece.map[(i, j)].as_f64());
        let bbt = &b * b.transpose();
        let w = piece.volume.as_f64() / cell_volume.as_f64();
        k += &bbt * w;
        let local = h.transpose() * &bbt * &h;
        gain = gain.max(SymmetricEigen::new(local).eigenvalues.max());
    }
    let restricted = h.transpose() * &k * &h;
    let eig = SymmetricEigen::new(restricted).eigenvalues;
    let (lo, hi) = (eig.min(), eig.max());
    let p = p.as_f64();
    let (c, big_c) = if p >= 2.0 {
        (lo.powf(p / 2.0), gain.powf((p - 2.0) / 2.0) * hi)
    } else {
        (lo * gain.powf((p - 2.0) / 2.0), hi.powf(p / 2.0))
    };
    (T::lit(c), T::lit(big_c))
}

/// Orthonormal basis (as columns) of the complement of `(1,…,1)` in `R^n`.
fn helmert_basis(n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n - 1, |i, k| {
        let k1 = (k + 1) as f64;
        let norm = (k1 * (k1 + 1.0)).sqrt();
        if i <= k {
            1.0 / norm
        } else if i == k + 1 {
            -k1 / norm
        } else {
            0.0
        }
    })
}

pub(crate) fn permutations(d: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, rest: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if rest.is_empty() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..rest.len() {
            let x = rest.remove(i);
            prefix.push(x);
            rec(prefix, rest, out);
            prefix.pop();
            rest.insert(i, x);
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut (0..d).collect(), &mut out);
    out
}

fn factorial(d: usize) -> usize {
    (1..=d).product()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn skewed() -> LatticeSpec<f64> {
        let a = Mat::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 3f64.sqrt() / 2.0]);
        LatticeSpec::new(2, a, None, 0).unwrap()
    }

    #[test]
    fn kuhn_volumes_sum_to_cell() {
        for spec in [skewed(), LatticeSpec::cubic(3, 1.3).unwrap()] {
            let dec = SimplicialDecomposition::kuhn(&spec);
            let total: f64 = dec.volumes().iter().sum();
            assert!((total - spec.det_abs()).abs() < 1e-13);
            assert_eq!(dec.simplices().len(), if spec.dim() == 2 { 2 } else { 6 });
        }
    }

    #[test]
    fn wrong_volume_rejected() {
        let spec = skewed();
        let only_one = vec![vec![0, 1, 3]];
        assert!(matches!(
            SimplicialDecomposition::from_corner_lists(&spec, only_one),
            Err(Error::BadDecomposition(_))
        ));
        let flat = vec![vec![0, 1, 1], vec![0, 2, 3]];
        assert!(SimplicialDecomposition::from_corner_lists(&spec, flat).is_err());
    }

    #[test]
    fn kuhn_covers_cell_exactly_once() {
        // sample points: each must lie in exactly one simplex (generic points)
        let spec = LatticeSpec::<f64>::cubic(3, 1.0).unwrap();
        let dec = SimplicialDecomposition::kuhn(&spec);
        let mut state = 12345u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        for _ in 0..500 {
            let x = [next(), next(), next()];
            let hits = dec
                .pieces()
                .iter()
                .filter(|p| contains(&p.vertices, &x))
                .count();
            assert_eq!(hits, 1);
        }
    }

    fn contains(v: &[Vec<f64>], x: &[f64]) -> bool {
        let d = x.len();
        let m = Mat::from_fn(d, d, |i, k| v[k + 1][i] - v[0][i]);
        let rhs: Vec<f64> = (0..d).map(|i| x[i] - v[0][i]).collect();
        let lam = m.inverse().unwrap().mul_vec(&rhs);
        let s: f64 = lam.iter().sum();
        lam.iter().all(|&l| l > 0.0) && s < 1.0
    }

    #[test]
    fn barycentric_piece_counts_and_volumes() {
        let p2 = barycentric_pieces(&skewed());
        assert_eq!(p2.len(), 8);
        let v: f64 = p2.iter().map(|p| p.volume).sum();
        assert!((v - 3f64.sqrt() / 2.0).abs() < 1e-14);
        let p3 = barycentric_pieces(&LatticeSpec::<f64>::cubic(3, 1.0).unwrap());
        assert_eq!(p3.len(), 48);
        assert!(p3.iter().all(|p| (p.volume - 1.0 / 48.0).abs() < 1e-15));
    }

    #[test]
    fn pieces_reproduce_affine_maps() {
        let spec = skewed();
        let m = Mat::from_row_slice(2, 2, &[1.3, -0.2, 0.4, 0.9]);
        let f = m.matmul(spec.corners());
        for piece in barycentric_pieces(&spec)
            .iter()
            .chain(SimplicialDecomposition::kuhn(&spec).pieces())
        {
            assert!(piece.gradient(&f).sub(&m).max_abs() < 1e-14);
        }
    }

    #[test]
    fn p2_constants_are_eigenvalue_bounds() {
        let spec = LatticeSpec::<f64>::cubic(2, 1.0).unwrap();
        let pieces = barycentric_pieces(&spec);
        let (c, big) = equivalence_constants(&pieces, 1.0, 2.0);
        assert!(c > 0.0 && c <= big);
        let (c4, big4) = equivalence_constants(&pieces, 1.0, 4.0);
        assert!((c4 - c * c).abs() < 1e-14);
        // the largest single-piece gain dominates the averaged form
        assert!(big4 >= big * big - 1e-12);
    }
}
