//! Analytic ellipsoid geometry for positive semidefinite quadratic forms.
//!
//! A PSD matrix `G` defines the manifold `{ s in range(G) : <s|G|s> = 1 }`.
//! Everything the iteration needs about that manifold - normals, curvature
//! (Weingarten map), its inverse (reverse Weingarten map), tangential
//! components and the support function - has a closed form in `G`, its
//! positive inverse and the base vector. No diagonalisation happens in these
//! formulas; eigenvalue decompositions are confined to `positive_inverse`
//! and to verification code.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::Result;

/// Dense symmetric real matrix. Construction symmetrises the input and
/// rejects anything with a symmetry residual above `1e-12 * |M|`.
/// Serializes as `{dim, data}` with row-major data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SymMatrixRepr", into = "SymMatrixRepr")]
pub struct SymMatrix(DMatrix<f64>);

#[derive(Serialize, Deserialize)]
struct SymMatrixRepr {
    dim: usize,
    data: Vec<f64>,
}

impl From<SymMatrix> for SymMatrixRepr {
    fn from(m: SymMatrix) -> Self {
        let dim = m.dim();
        let data = m.0.transpose().as_slice().to_vec();
        SymMatrixRepr { dim, data }
    }
}

impl TryFrom<SymMatrixRepr> for SymMatrix {
    type Error = Error;

    fn try_from(r: SymMatrixRepr) -> Result<Self> {
        if r.data.len() != r.dim * r.dim {
            return Err(Error::DimensionMismatch(format!(
                "{} entries for dim {}",
                r.data.len(),
                r.dim
            )));
        }
        SymMatrix::new(DMatrix::from_row_slice(r.dim, r.dim, &r.data))
    }
}

impl SymMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} not square",
                m.nrows(),
                m.ncols()
            )));
        }
        let scale = m.amax().max(f64::MIN_POSITIVE);
        let resid = (&m - m.transpose()).amax();
        if resid > 1e-12 * scale {
            return Err(Error::DimensionMismatch(format!(
                "symmetry residual {resid:.3e} above 1e-12 * {scale:.3e}"
            )));
        }
        Ok(SymMatrix((&m + m.transpose()) * 0.5))
    }

    pub fn zeros(n: usize) -> Self {
        SymMatrix(DMatrix::zeros(n, n))
    }

    pub fn identity(n: usize) -> Self {
        SymMatrix(DMatrix::identity(n, n))
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        SymMatrix(DMatrix::from_diagonal(&DVector::from_row_slice(d)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.0 * v
    }

    /// `<a|M|b>`.
    pub fn bilinear(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        (a.transpose() * &self.0 * b)[(0, 0)]
    }

    /// `<v|M^j|v>` for small non-negative `j`.
    pub fn expectation(&self, v: &DVector<f64>, j: usize) -> f64 {
        let mut acc = v.clone();
        for _ in 0..j {
            acc = &self.0 * acc;
        }
        v.dot(&acc)
    }

    /// Sorted eigenvalues of the matrix (ascending). Verification helper.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = self
            .0
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .copied()
            .collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues().first().copied().unwrap_or(0.0)
    }
}

impl std::ops::Add for &SymMatrix {
    type Output = SymMatrix;
    fn add(self, rhs: &SymMatrix) -> SymMatrix {
        SymMatrix(&self.0 + &rhs.0)
    }
}

impl std::ops::Sub for &SymMatrix {
    type Output = SymMatrix;
    fn sub(self, rhs: &SymMatrix) -> SymMatrix {
        SymMatrix(&self.0 - &rhs.0)
    }
}

/// Inverse on the span of eigenvalues above `rank_tol * lambda_max`, zero on
/// the rest. The only place the crate diagonalises inside a construction.
pub fn positive_inverse(g: &SymMatrix, rank_tol: f64) -> SymMatrix {
    let eig = g.matrix().clone().symmetric_eigen();
    let lambda_max = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let cut = rank_tol * lambda_max.max(f64::MIN_POSITIVE);
    let n = g.dim();
    let mut out = DMatrix::zeros(n, n);
    for (i, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam > cut {
            let col = eig.eigenvectors.column(i);
            out += DMatrix::from_fn(n, n, |r, c| col[r] * col[c] / lam);
        }
    }
    SymMatrix((&out + out.transpose()) * 0.5)
}

/// Default relative rank cutoff for `positive_inverse`.
pub const RANK_TOL: f64 = 1e-10;

/// `E_G(v) = v / sqrt(<v|G|v>)`, the scaling that puts `v` on the manifold.
pub fn ellipsoid_map(g: &SymMatrix, v: &DVector<f64>) -> Result<DVector<f64>> {
    let q = g.bilinear(v, v);
    let scale = g.matrix().amax() * v.norm_squared();
    if q <= 1e-14 * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::NullCone(q));
    }
    Ok(v / q.sqrt())
}

/// Unit outward normal of the `G`-manifold at the point along `v`:
/// `u = G v / sqrt(<v|G^2|v>)`.
pub fn normal(g: &SymMatrix, v: &DVector<f64>) -> Result<DVector<f64>> {
    let gv = g.apply(v);
    let norm = gv.norm();
    let scale = g.matrix().amax() * v.norm();
    if norm <= 1e-14 * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::ZeroNormal(norm));
    }
    Ok(gv / norm)
}

/// Weingarten map (curvature operator) of the `G`-manifold at the point
/// along `v`:
///
/// ```text
/// W'(G, v) = sqrt(<G>/<G^2>) (G + <G^3>/<G^2>^2 Gv vG
///                               - 1/<G^2> (Gv v G^2 + G^2 v vG))
/// ```
///
/// It annihilates the normal direction `G v` and acts on the tangent space.
pub fn weingarten(g: &SymMatrix, v: &DVector<f64>) -> Result<SymMatrix> {
    let gv = g.apply(v);
    let g2v = g.apply(&gv);
    let m1 = v.dot(&gv);
    let m2 = gv.dot(&gv);
    let m3 = gv.dot(&g2v);
    let scale = g.matrix().amax().max(f64::MIN_POSITIVE) * v.norm_squared();
    if m2 <= 1e-14 * scale * g.matrix().amax().max(f64::MIN_POSITIVE) {
        return Err(Error::ZeroNormal(m2));
    }
    if m1 <= 0.0 {
        return Err(Error::NullCone(m1));
    }
    let pref = (m1 / m2).sqrt();
    let mut inner = g.matrix().clone();
    inner += (m3 / (m2 * m2)) * (&gv * gv.transpose());
    inner -= (1.0 / m2) * (&gv * g2v.transpose() + &g2v * gv.transpose());
    SymMatrix::new(pref * inner)
}

/// Reverse Weingarten map, the inverse of the curvature operator on the
/// tangent space: `W(G, G', v) = sqrt(<G^2>/<G>) (G' - |v><v| / <G>)` where
/// `G'` is the positive inverse of `G`.
pub fn reverse_weingarten(
    g: &SymMatrix,
    g_pinv: &SymMatrix,
    v: &DVector<f64>,
) -> Result<SymMatrix> {
    let gv = g.apply(v);
    let m1 = v.dot(&gv);
    let m2 = gv.dot(&gv);
    let scale = g.matrix().amax().max(f64::MIN_POSITIVE) * v.norm_squared();
    if m1 <= 1e-14 * scale {
        return Err(Error::NullCone(m1));
    }
    let pref = (m2 / m1).sqrt();
    let inner = g_pinv.matrix() - (&(v * v.transpose()) / m1);
    SymMatrix::new(pref * inner)
}

/// Unit component of `target` orthogonal to the normal of `(g, base)`:
/// `e(G, v) = N[v - <u|v> u]` with `u = normal(G, v)`.
pub fn orth_component_matrix(
    g: &SymMatrix,
    base: &DVector<f64>,
    target: &DVector<f64>,
) -> Result<DVector<f64>> {
    let u = normal(g, base)?;
    orth_component_vector(&u, target)
}

/// Unit component of `target` orthogonal to the unit vector `reference`.
pub fn orth_component_vector(
    reference: &DVector<f64>,
    target: &DVector<f64>,
) -> Result<DVector<f64>> {
    let resid = target - reference * reference.dot(target);
    let norm = resid.norm();
    if norm <= 1e-12 * target.norm().max(f64::MIN_POSITIVE) {
        return Err(Error::ParallelVectors(norm));
    }
    Ok(resid / norm)
}

/// Support function of the `G`-manifold along the unit direction `u`:
/// `h(u) = sqrt(<u|G'|u>)`. Test helper for the finite-difference curvature
/// oracle.
pub fn support(g_pinv: &SymMatrix, u: &DVector<f64>) -> f64 {
    g_pinv.bilinear(u, u).max(0.0).sqrt()
}

/// `(A + |a><b|)^{-1}` from `A^{-1}` by the Sherman-Morrison rank-one
/// update. Errors when `1 + <b|A^{-1}|a>` vanishes.
pub fn sherman_morrison(
    a_inv: &DMatrix<f64>,
    a: &DVector<f64>,
    b: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let ia = a_inv * a;
    let bt_ia = b.dot(&ia);
    let denom = 1.0 + bt_ia;
    if denom.abs() <= 1e-14 * (1.0 + bt_ia.abs()) {
        return Err(Error::SingularUpdate(denom));
    }
    let bt_i = a_inv.transpose() * b;
    Ok(a_inv - (ia * bt_i.transpose()) / denom)
}
