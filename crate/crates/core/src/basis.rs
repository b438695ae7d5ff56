//! The primitive-metric basis `{nu_i (x) nu_i}` of `Sym_n`, the dual coefficient
//! maps `L_j`, and the `Phi`/`Psi` isomorphism used by integration by parts.
//!
//! Symmetric matrices are stored as packed upper triangles (row-major over
//! `i <= j`). All linear maps in this module act on packed coordinates, so a
//! field of symmetric matrices can be pushed through them channel by channel.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default floor on `|nu . e1|` below which `Phi` is treated as singular.
pub const DEFAULT_DIRECTION_THRESHOLD: f64 = 1e-8;

/// Number of independent entries of an `n x n` symmetric matrix.
pub fn packed_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Packed position of entry `(i, j)`; symmetric in its arguments.
#[inline]
pub fn packed_index(n: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    // rows 0..i hold n + (n-1) + ... + (n-i+1) entries
    i * n - i * i.saturating_sub(1) / 2 + (j - i)
}

/// Symmetric `n x n` matrix with exact symmetry by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymMatrix {
    n: usize,
    packed: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            packed: vec![0.0; packed_len(n)],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    /// Builds from `f(i, j)` evaluated on the upper triangle only.
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut packed = Vec::with_capacity(packed_len(n));
        for i in 0..n {
            for j in i..n {
                packed.push(f(i, j));
            }
        }
        Self { n, packed }
    }

    pub fn from_packed(n: usize, packed: Vec<f64>) -> Self {
        assert_eq!(packed.len(), packed_len(n), "packed length mismatch");
        Self { n, packed }
    }

    /// `v (x) v`.
    pub fn outer(v: &[f64]) -> Self {
        Self::from_fn(v.len(), |i, j| v[i] * v[j])
    }

    /// `a . b = sym(a (x) b)`.
    pub fn sym_outer(a: &[f64], b: &[f64]) -> Self {
        assert_eq!(a.len(), b.len());
        Self::from_fn(a.len(), |i, j| 0.5 * (a[i] * b[j] + a[j] * b[i]))
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn packed(&self) -> &[f64] {
        &self.packed
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.packed[packed_index(self.n, i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        let k = packed_index(self.n, i, j);
        self.packed[k] = value;
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            n: self.n,
            packed: self.packed.iter().map(|x| s * x).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.n, other.n);
        let packed = self
            .packed
            .iter()
            .zip(&other.packed)
            .map(|(a, b)| a + b)
            .collect();
        Self { n: self.n, packed }
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scaled(-1.0))
    }

    /// Entrywise maximum norm.
    pub fn max_abs(&self) -> f64 {
        self.packed.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }
}

/// `(alpha, beta)` with `Phi(alpha, beta) = alpha . nu + sum_j beta_{j-n} nu_j (x) nu_j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsiCoordinates {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

/// The canonical direction set, `h0` and the dual maps `L_j`.
#[derive(Debug, Clone)]
pub struct PrimitiveBasis {
    n: usize,
    n_star: usize,
    directions: Vec<Vec<f64>>,
    h0: SymMatrix,
    /// Row `j` maps packed coordinates of `h` to `L_j(h)`.
    dual_coeffs: DMatrix<f64>,
    condition: f64,
}

/// Canonical ordering of the unit vectors `(e_i + e_j)/|e_i + e_j|`: `e_1`,
/// then `(e_1 + e_j)/sqrt 2` for `j >= 2`, then the remaining pairs `i <= j`
/// with `i >= 2` in lexicographic order. Exactly the first `n` directions
/// have a nonzero `e_1` component.
fn canonical_pairs(n: usize) -> Vec<(usize, usize)> {
    let mut pairs: Vec<(usize, usize)> = (0..n).map(|j| (0, j)).collect();
    for i in 1..n {
        for j in i..n {
            pairs.push((i, j));
        }
    }
    pairs
}

impl PrimitiveBasis {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::Dimension(format!("basis needs n >= 2, got {n}")));
        }
        let n_star = packed_len(n);
        let directions: Vec<Vec<f64>> = canonical_pairs(n)
            .into_iter()
            .map(|(i, j)| {
                let mut v = vec![0.0; n];
                if i == j {
                    v[i] = 1.0;
                } else {
                    v[i] = std::f64::consts::FRAC_1_SQRT_2;
                    v[j] = std::f64::consts::FRAC_1_SQRT_2;
                }
                v
            })
            .collect();

        let mut h0 = SymMatrix::zeros(n);
        let mut flat = DMatrix::zeros(n_star, n_star);
        for (k, nu) in directions.iter().enumerate() {
            let r1 = SymMatrix::outer(nu);
            h0 = h0.add(&r1);
            for (row, x) in r1.packed().iter().enumerate() {
                flat[(row, k)] = *x;
            }
        }
        let singular = flat.clone().svd(false, false).singular_values;
        let condition = singular.max() / singular.min();
        let dual_coeffs = flat.lu().try_inverse().ok_or_else(|| {
            Error::Dimension("rank-one matrices nu_i (x) nu_i are not independent".into())
        })?;
        log::debug!("primitive basis n={n}: flattening condition number {condition:.3e}");
        Ok(Self {
            n,
            n_star,
            directions,
            h0,
            dual_coeffs,
            condition,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_star(&self) -> usize {
        self.n_star
    }

    pub fn directions(&self) -> &[Vec<f64>] {
        &self.directions
    }

    pub fn direction(&self, i: usize) -> &[f64] {
        &self.directions[i]
    }

    pub fn h0(&self) -> &SymMatrix {
        &self.h0
    }

    /// Condition number of the flattening matrix of `{nu_i (x) nu_i}`.
    pub fn condition_number(&self) -> f64 {
        self.condition
    }

    /// Dual maps as a matrix acting on packed coordinates.
    pub fn dual_coeffs(&self) -> &DMatrix<f64> {
        &self.dual_coeffs
    }

    /// `(L_1(h), ..., L_{n_star}(h))`.
    pub fn coefficients(&self, h: &SymMatrix) -> Vec<f64> {
        assert_eq!(h.dim(), self.n);
        (0..self.n_star)
            .map(|j| {
                (0..self.n_star)
                    .map(|k| self.dual_coeffs[(j, k)] * h.packed[k])
                    .sum()
            })
            .collect()
    }

    /// `sum_j c_j nu_j (x) nu_j`.
    pub fn reconstruct(&self, coeffs: &[f64]) -> SymMatrix {
        assert_eq!(coeffs.len(), self.n_star);
        let mut h = SymMatrix::zeros(self.n);
        for (c, nu) in coeffs.iter().zip(&self.directions) {
            for i in 0..self.n {
                for j in i..self.n {
                    let k = packed_index(self.n, i, j);
                    h.packed[k] += c * nu[i] * nu[j];
                }
            }
        }
        h
    }

    /// Largest `r` with `L_j(h) >= r` for every `j` whenever `|h - h0|_inf <= r`
    /// (entrywise max norm). Exact for the linear maps `L_j`, since the
    /// worst perturbation of size `r` lowers `L_j` by `r * sum_k |L_jk|`.
    pub fn positivity_radius(&self) -> f64 {
        (0..self.n_star)
            .map(|j| {
                let l1: f64 = (0..self.n_star)
                    .map(|k| self.dual_coeffs[(j, k)].abs())
                    .sum();
                1.0 / (1.0 + l1)
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Precomputes `Psi` for a fixed direction.
    pub fn psi_map(&self, nu: &[f64], threshold: f64) -> Result<PsiMap> {
        PsiMap::new(self, nu, threshold)
    }
}

fn check_unit(nu: &[f64], n: usize) -> Result<()> {
    if nu.len() != n {
        return Err(Error::Dimension(format!(
            "direction has length {}, expected {n}",
            nu.len()
        )));
    }
    let norm = nu.iter().map(|x| x * x).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-12 {
        return Err(Error::Param(format!(
            "direction is not a unit vector (|nu| = {norm})"
        )));
    }
    Ok(())
}

/// `Phi` and its inverse `Psi` for one admissible direction, as dense
/// `n_star x n_star` matrices on packed coordinates.
#[derive(Debug, Clone)]
pub struct PsiMap {
    n: usize,
    nu: Vec<f64>,
    /// Columns: packed `e_k . nu` for `k < n`, then packed `nu_j (x) nu_j` for `j >= n`.
    phi: DMatrix<f64>,
    psi: DMatrix<f64>,
}

impl PsiMap {
    pub fn new(basis: &PrimitiveBasis, nu: &[f64], threshold: f64) -> Result<Self> {
        let n = basis.n();
        check_unit(nu, n)?;
        let dot = nu[0];
        if dot.abs() <= threshold {
            return Err(Error::Direction {
                nu: nu.to_vec(),
                dot,
                threshold,
            });
        }
        let n_star = basis.n_star();
        let mut phi = DMatrix::zeros(n_star, n_star);
        for k in 0..n {
            let mut e = vec![0.0; n];
            e[k] = 1.0;
            for (row, x) in SymMatrix::sym_outer(&e, nu).packed().iter().enumerate() {
                phi[(row, k)] = *x;
            }
        }
        for j in n..n_star {
            for (row, x) in SymMatrix::outer(basis.direction(j))
                .packed()
                .iter()
                .enumerate()
            {
                phi[(row, j)] = *x;
            }
        }
        let psi = phi
            .clone()
            .lu()
            .try_inverse()
            .ok_or_else(|| Error::Direction {
                nu: nu.to_vec(),
                dot,
                threshold,
            })?;
        Ok(Self {
            n,
            nu: nu.to_vec(),
            phi,
            psi,
        })
    }

    pub fn nu(&self) -> &[f64] {
        &self.nu
    }

    /// Inverse map as a matrix on packed coordinates: rows `0..n` give alpha,
    /// the rest give beta.
    pub fn psi_matrix(&self) -> &DMatrix<f64> {
        &self.psi
    }

    pub fn psi(&self, m: &SymMatrix) -> PsiCoordinates {
        assert_eq!(m.dim(), self.n);
        let p = m.packed();
        let coords: Vec<f64> = (0..self.psi.nrows())
            .map(|r| (0..p.len()).map(|k| self.psi[(r, k)] * p[k]).sum())
            .collect();
        PsiCoordinates {
            alpha: coords[..self.n].to_vec(),
            beta: coords[self.n..].to_vec(),
        }
    }

    pub fn phi(&self, coords: &PsiCoordinates) -> SymMatrix {
        let x: Vec<f64> = coords.alpha.iter().chain(&coords.beta).copied().collect();
        assert_eq!(x.len(), self.phi.ncols());
        let packed = (0..self.phi.nrows())
            .map(|r| (0..x.len()).map(|k| self.phi[(r, k)] * x[k]).sum())
            .collect();
        SymMatrix::from_packed(self.n, packed)
    }
}

/// `Psi(M)` for direction `nu`.
pub fn psi(
    basis: &PrimitiveBasis,
    m: &SymMatrix,
    nu: &[f64],
    threshold: f64,
) -> Result<PsiCoordinates> {
    Ok(PsiMap::new(basis, nu, threshold)?.psi(m))
}

/// `Phi(alpha, beta) = sym(alpha (x) nu) + sum_j beta_{j-n} nu_j (x) nu_j`,
/// evaluated directly from its definition.
pub fn phi(basis: &PrimitiveBasis, coords: &PsiCoordinates, nu: &[f64]) -> Result<SymMatrix> {
    let n = basis.n();
    check_unit(nu, n)?;
    if coords.alpha.len() != n || coords.beta.len() != basis.n_star() - n {
        return Err(Error::Dimension(
            "Psi coordinates have wrong lengths".into(),
        ));
    }
    let mut m = SymMatrix::sym_outer(&coords.alpha, nu);
    for (b, j) in coords.beta.iter().zip(n..basis.n_star()) {
        m = m.add(&SymMatrix::outer(basis.direction(j)).scaled(*b));
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn packed_layout() {
        let n = 4;
        let mut seen = vec![false; packed_len(n)];
        let mut expect = 0;
        for i in 0..n {
            for j in i..n {
                assert_eq!(packed_index(n, i, j), expect);
                assert_eq!(packed_index(n, j, i), expect);
                seen[expect] = true;
                expect += 1;
            }
        }
        assert!(seen.iter().all(|s| *s));
    }

    #[test]
    fn n2_directions_and_h0() {
        let b = PrimitiveBasis::new(2).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert_eq!(
            b.directions(),
            &[vec![1.0, 0.0], vec![s, s], vec![0.0, 1.0]]
        );
        let h0 = b.h0();
        assert_abs_diff_eq!(h0.get(0, 0), 1.5, epsilon = 1e-15);
        assert_abs_diff_eq!(h0.get(0, 1), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(h0.get(1, 1), 1.5, epsilon = 1e-15);
        for c in b.coefficients(h0) {
            assert_abs_diff_eq!(c, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn n3_ordering() {
        let b = PrimitiveBasis::new(3).unwrap();
        assert_eq!(b.n_star(), 6);
        for (i, nu) in b.directions().iter().enumerate() {
            assert_abs_diff_eq!(nu.iter().map(|x| x * x).sum::<f64>(), 1.0, epsilon = 1e-14);
            assert_eq!(nu[0] != 0.0, i < 3, "direction {i}: {nu:?}");
        }
    }

    #[test]
    fn dimension_guard() {
        assert!(matches!(PrimitiveBasis::new(1), Err(Error::Dimension(_))));
    }

    #[test]
    fn decompose_examples() {
        let b = PrimitiveBasis::new(2).unwrap();
        assert_eq!(b.coefficients(&SymMatrix::zeros(2)), vec![0.0; 3]);
        // h11 = c1 + c2/2, h12 = c2/2, h22 = c2/2 + c3 solved by hand.
        let h = SymMatrix::from_fn(2, |i, j| if i == j { 2.0 } else { 1.0 });
        let c = b.coefficients(&h);
        for (x, e) in c.iter().zip([1.0, 2.0, 1.0]) {
            assert_abs_diff_eq!(*x, e, epsilon = 1e-12);
        }
    }

    #[test]
    fn psi_examples() {
        let b = PrimitiveBasis::new(2).unwrap();
        let e1 = [1.0, 0.0];
        let z = psi(&b, &SymMatrix::zeros(2), &e1, DEFAULT_DIRECTION_THRESHOLD).unwrap();
        assert_eq!(z.alpha, vec![0.0, 0.0]);
        assert_eq!(z.beta, vec![0.0]);

        // alpha . e1 + beta e2(x)e2 = Id forces alpha = (1, 0), beta = 1.
        let id = psi(
            &b,
            &SymMatrix::identity(2),
            &e1,
            DEFAULT_DIRECTION_THRESHOLD,
        )
        .unwrap();
        assert_abs_diff_eq!(id.alpha[0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(id.alpha[1], 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(id.beta[0], 1.0, epsilon = 1e-14);

        let s = std::f64::consts::FRAC_1_SQRT_2;
        let e22 = SymMatrix::outer(&[0.0, 1.0]);
        let c = psi(&b, &e22, &[s, s], DEFAULT_DIRECTION_THRESHOLD).unwrap();
        assert_abs_diff_eq!(c.alpha[0], 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(c.alpha[1], 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(c.beta[0], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn phi_examples() {
        let b = PrimitiveBasis::new(2).unwrap();
        let e1 = [1.0, 0.0];
        let zero = PsiCoordinates {
            alpha: vec![0.0; 2],
            beta: vec![0.0],
        };
        assert_eq!(phi(&b, &zero, &e1).unwrap(), SymMatrix::zeros(2));
        let id = PsiCoordinates {
            alpha: vec![1.0, 0.0],
            beta: vec![1.0],
        };
        assert_eq!(phi(&b, &id, &e1).unwrap(), SymMatrix::identity(2));
        let off = PsiCoordinates {
            alpha: vec![0.0, 2.0],
            beta: vec![0.0],
        };
        let m = phi(&b, &off, &e1).unwrap();
        assert_eq!(
            m,
            SymMatrix::from_fn(2, |i, j| if i == j { 0.0 } else { 1.0 })
        );
    }

    #[test]
    fn direction_guard() {
        let b = PrimitiveBasis::new(2).unwrap();
        let err = psi(
            &b,
            &SymMatrix::identity(2),
            &[0.0, 1.0],
            DEFAULT_DIRECTION_THRESHOLD,
        );
        assert!(matches!(err, Err(Error::Direction { .. })));
        let err = psi(
            &b,
            &SymMatrix::identity(2),
            &[1.0, 1.0],
            DEFAULT_DIRECTION_THRESHOLD,
        );
        assert!(matches!(err, Err(Error::Param(_))));
    }

    #[test]
    fn measured_positivity_radius_n2() {
        // L = (h11 - h12, 2 h12, h22 - h12): every row has l1 norm 2.
        let b = PrimitiveBasis::new(2).unwrap();
        assert_abs_diff_eq!(b.positivity_radius(), 1.0 / 3.0, epsilon = 1e-12);
    }
}
