//! Dense real-matrix kernel: products, norms, cosine similarities, a
//! one-sided Jacobi SVD, and the orthogonal Procrustes solver.
//!
//! Everything is 64-bit and single-threaded with fixed summation order, so
//! results are bit-reproducible across runs.

use std::fmt::Write as _;
use std::path::Path;

use crate::{Error, Result};

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Builds a matrix from row-major data, validating length and finiteness.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "data length {} != {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("matrix data".into()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyInput("matrix rows".into()));
        }
        let cols = rows[0].len();
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::DimensionMismatch("ragged rows".into()));
        }
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            data.extend_from_slice(r);
        }
        Matrix::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    /// `self * other`; summation runs over `k` in ascending order per cell.
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(
            self.cols, other.rows,
            "matmul dims {}x{} * {}x{}",
            self.rows, self.cols, other.rows, other.cols
        );
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let a_row = self.row(i);
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = other.row(k);
                for j in 0..other.cols {
                    out_row[j] += a * b_row[j];
                }
            }
        }
        out
    }

    pub fn add(&self, other: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `‖AᵀA − I‖_F`, the deviation from column orthonormality.
    pub fn orthogonality_defect(&self) -> f64 {
        let gram = self.transpose().matmul(self);
        gram.sub(&Matrix::identity(self.cols)).frobenius_norm()
    }

    /// Serializes as "rows cols" then one line per row. `f64` display
    /// round-trips exactly, which exceeds the 15-significant-digit contract.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{} {}", self.rows, self.cols);
        for i in 0..self.rows {
            let row: Vec<String> = self.row(i).iter().map(|v| format!("{v}")).collect();
            let _ = writeln!(s, "{}", row.join(" "));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Matrix> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            msg: "empty matrix file".into(),
        })?;
        let mut parts = header.split_whitespace();
        let parse_dim = |s: Option<&str>| -> Result<usize> {
            s.and_then(|t| t.parse().ok()).ok_or(Error::Parse {
                line: 1,
                msg: "expected 'rows cols' header".into(),
            })
        };
        let rows = parse_dim(parts.next())?;
        let cols = parse_dim(parts.next())?;
        let mut data = Vec::with_capacity(rows * cols);
        for (idx, line) in lines.take(rows) {
            for tok in line.split_whitespace() {
                let v: f64 = tok.parse().map_err(|_| Error::Parse {
                    line: idx + 1,
                    msg: format!("bad float '{tok}'"),
                })?;
                data.push(v);
            }
        }
        Matrix::new(rows, cols, data)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Matrix> {
        let text = std::fs::read_to_string(path)?;
        Matrix::from_text(&text)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Thin SVD `A = U · diag(sigma) · Vᵀ` with `sigma` sorted descending.
#[derive(Debug, Clone)]
pub struct SvdResult {
    pub u: Matrix,
    pub sigma: Vec<f64>,
    pub v: Matrix,
}

impl SvdResult {
    /// Reconstructs `U · diag(sigma) · Vᵀ`.
    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        for j in 0..self.sigma.len() {
            for i in 0..us.rows() {
                let v = us.at(i, j) * self.sigma[j];
                us.set(i, j, v);
            }
        }
        us.matmul(&self.v.transpose())
    }
}

const JACOBI_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;

/// Thin SVD by one-sided Jacobi rotations on the smaller dimension.
///
/// Converges when the off-diagonal mass of the implicit Gram matrix drops
/// below `1e-12` of its trace, capped at 100 sweeps. Columns associated with
/// zero singular values are completed to an orthonormal basis so `U` always
/// satisfies `UᵀU = I`.
pub fn svd(a: &Matrix) -> Result<SvdResult> {
    if !a.is_finite() {
        return Err(Error::NonFinite("svd input".into()));
    }
    if a.rows() == 0 || a.cols() == 0 {
        return Err(Error::EmptyInput("svd input".into()));
    }
    if a.rows() >= a.cols() {
        svd_tall(a)
    } else {
        let t = svd_tall(&a.transpose())?;
        Ok(SvdResult {
            u: t.v,
            sigma: t.sigma,
            v: t.u,
        })
    }
}

fn svd_tall(a: &Matrix) -> Result<SvdResult> {
    let m = a.rows();
    let n = a.cols();
    debug_assert!(m >= n);
    let mut b = a.clone();
    let mut v = Matrix::identity(n);

    // Column-pair access on row-major data: gather columns per pair.
    let col_dot = |b: &Matrix, p: usize, q: usize| -> f64 {
        let mut s = 0.0;
        for i in 0..m {
            s += b.data[i * n + p] * b.data[i * n + q];
        }
        s
    };

    for _sweep in 0..JACOBI_MAX_SWEEPS {
        // Off-diagonal mass of the implicit Gram matrix, measured pairwise
        // relative to the column norms so that small singular directions
        // converge as tightly as large ones.
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let app = col_dot(&b, p, p);
                let aqq = col_dot(&b, q, q);
                let apq = col_dot(&b, p, q);
                if apq.abs() <= JACOBI_TOL * (app * aqq).sqrt() {
                    continue;
                }
                rotated = true;
                let tau = (aqq - app) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    1.0 / (tau - (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for i in 0..m {
                    let bp = b.data[i * n + p];
                    let bq = b.data[i * n + q];
                    b.data[i * n + p] = c * bp - s * bq;
                    b.data[i * n + q] = s * bp + c * bq;
                }
                for i in 0..n {
                    let vp = v.data[i * n + p];
                    let vq = v.data[i * n + q];
                    v.data[i * n + p] = c * vp - s * vq;
                    v.data[i * n + q] = s * vp + c * vq;
                }
            }
        }
        if !rotated {
            break;
        }
    }

    let mut sigma: Vec<f64> = (0..n)
        .map(|j| {
            let mut s = 0.0;
            for i in 0..m {
                s += b.data[i * n + j] * b.data[i * n + j];
            }
            s.sqrt()
        })
        .collect();

    // Sort descending, carrying columns of B and V along.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| sigma[j].partial_cmp(&sigma[i]).unwrap().then(i.cmp(&j)));
    let mut u = Matrix::zeros(m, n);
    let mut v_sorted = Matrix::zeros(n, n);
    let mut sigma_sorted = Vec::with_capacity(n);
    for (new_j, &old_j) in order.iter().enumerate() {
        sigma_sorted.push(sigma[old_j]);
        for i in 0..m {
            u.data[i * n + new_j] = b.data[i * n + old_j];
        }
        for i in 0..n {
            v_sorted.data[i * n + new_j] = v.data[i * n + old_j];
        }
    }
    sigma = sigma_sorted;

    // Normalize columns with nonzero singular value; complete the rest.
    let scale = sigma.first().copied().unwrap_or(0.0);
    let rank_tol = scale * 1e-12;
    let mut completed = Vec::new();
    for j in 0..n {
        if sigma[j] > rank_tol {
            for i in 0..m {
                u.data[i * n + j] /= sigma[j];
            }
        } else {
            sigma[j] = sigma[j].max(0.0);
            completed.push(j);
        }
    }
    if !completed.is_empty() {
        complete_basis(&mut u, &completed);
    }
    Ok(SvdResult {
        u,
        sigma,
        v: v_sorted,
    })
}

/// Fills the listed columns of `u` with unit vectors orthogonal to all other
/// columns, chosen deterministically from the canonical basis.
fn complete_basis(u: &mut Matrix, cols: &[usize]) {
    let m = u.rows();
    let n = u.cols();
    for &j in cols {
        for i in 0..m {
            u.data[i * n + j] = 0.0;
        }
    }
    for &j in cols {
        let mut best: Option<(f64, Vec<f64>)> = None;
        for cand in 0..m {
            let mut vec = vec![0.0; m];
            vec[cand] = 1.0;
            // Two Gram-Schmidt passes against all filled columns (still-empty
            // completion slots are zero and project to nothing).
            for _ in 0..2 {
                for k in 0..n {
                    let mut proj = 0.0;
                    for i in 0..m {
                        proj += u.data[i * n + k] * vec[i];
                    }
                    for i in 0..m {
                        vec[i] -= proj * u.data[i * n + k];
                    }
                }
            }
            let nrm = norm(&vec);
            if best.as_ref().map_or(true, |(b, _)| nrm > *b) {
                best = Some((nrm, vec));
            }
            if nrm > 0.9 {
                break;
            }
        }
        let (nrm, vec) = best.expect("nonempty candidate set");
        assert!(nrm > 1e-8, "basis completion failed");
        for i in 0..m {
            u.data[i * n + j] = vec[i] / nrm;
        }
    }
}

/// Orthogonal polar factor `U·Vᵀ` of `m`; the orthogonal matrix closest to
/// `m` and the maximizer of `tr(mᵀW)` over orthogonal `W`.
pub fn orthogonal_polar_factor(m: &Matrix) -> Result<Matrix> {
    let s = svd(m)?;
    Ok(s.u.matmul(&s.v.transpose()))
}

/// Solves the orthogonal Procrustes problem for matched group embeddings:
/// returns the orthogonal `W` maximizing `Σ_{i,j} D[i,j] · (G_T W G_Sᵀ)[i,j]`,
/// computed as the polar factor of `G_Tᵀ D G_S`.
///
/// `d` must be binary with at most one 1 per row.
pub fn procrustes_solve(g_t: &Matrix, d: &Matrix, g_s: &Matrix) -> Result<Matrix> {
    if g_t.cols() != g_s.cols() {
        return Err(Error::DimensionMismatch(format!(
            "embedding dims {} vs {}",
            g_t.cols(),
            g_s.cols()
        )));
    }
    if d.rows() != g_t.rows() || d.cols() != g_s.rows() {
        return Err(Error::DimensionMismatch(format!(
            "dictionary {}x{} vs groups {} and {}",
            d.rows(),
            d.cols(),
            g_t.rows(),
            g_s.rows()
        )));
    }
    for i in 0..d.rows() {
        let mut ones = 0;
        for j in 0..d.cols() {
            let v = d.at(i, j);
            if v == 1.0 {
                ones += 1;
            } else if v != 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "dictionary entry ({i},{j}) = {v} is not binary"
                )));
            }
        }
        if ones > 1 {
            return Err(Error::InvalidConfig(format!(
                "dictionary row {i} has {ones} matches"
            )));
        }
    }
    let m = g_t.transpose().matmul(d).matmul(g_s);
    orthogonal_polar_factor(&m)
}

/// Procrustes over explicitly paired rows: `targets[i]` is matched to
/// `sources[i]`. Equivalent to `procrustes_solve` with an identity dictionary.
pub fn procrustes_from_pairs(targets: &Matrix, sources: &Matrix) -> Result<Matrix> {
    if targets.rows() != sources.rows() || targets.cols() != sources.cols() {
        return Err(Error::DimensionMismatch(format!(
            "paired anchors {}x{} vs {}x{}",
            targets.rows(),
            targets.cols(),
            sources.rows(),
            sources.cols()
        )));
    }
    if targets.rows() == 0 {
        return Err(Error::EmptyInput("anchor pairs".into()));
    }
    let m = targets.transpose().matmul(sources);
    orthogonal_polar_factor(&m)
}

/// Entry `(i,j)` is the cosine of the angle between row `i` of `a` and row
/// `j` of `b`. Errors on any zero-norm row.
pub fn cosine_similarity_matrix(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols() != b.cols() {
        return Err(Error::DimensionMismatch(format!(
            "cosine dims {} vs {}",
            a.cols(),
            b.cols()
        )));
    }
    let norms = |m: &Matrix| -> Result<Vec<f64>> {
        (0..m.rows())
            .map(|i| {
                let n = norm(m.row(i));
                if n <= 0.0 || !n.is_finite() {
                    Err(Error::ZeroNormRow(i))
                } else {
                    Ok(n)
                }
            })
            .collect()
    };
    let na = norms(a)?;
    let nb = norms(b)?;
    let mut out = Matrix::zeros(a.rows(), b.rows());
    for i in 0..a.rows() {
        for j in 0..b.rows() {
            let c = dot(a.row(i), b.row(j)) / (na[i] * nb[j]);
            out.set(i, j, c.clamp(-1.0, 1.0));
        }
    }
    Ok(out)
}

/// Random orthogonal matrix: Gram-Schmidt on a square matrix of uniform
/// draws (re-drawn in the measure-zero degenerate case).
pub fn random_orthogonal(n: usize, rng: &mut impl rand::Rng) -> Matrix {
    loop {
        let data: Vec<f64> = (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a = Matrix::new(n, n, data).expect("finite draws");
        let mut cols: Vec<Vec<f64>> = Vec::new();
        let mut ok = true;
        for j in 0..n {
            let mut v: Vec<f64> = (0..n).map(|i| a.at(i, j)).collect();
            for u in &cols {
                let p = dot(u, &v);
                for i in 0..n {
                    v[i] -= p * u[i];
                }
            }
            let nv = norm(&v);
            if nv < 1e-6 {
                ok = false;
                break;
            }
            for x in v.iter_mut() {
                *x /= nv;
            }
            cols.push(v);
        }
        if ok {
            let mut q = Matrix::zeros(n, n);
            for (j, col) in cols.iter().enumerate() {
                for i in 0..n {
                    q.set(i, j, col[i]);
                }
            }
            return q;
        }
    }
}

/// Returns a copy of `m` with every row scaled to unit length.
pub fn normalize_rows(m: &Matrix) -> Result<Matrix> {
    let mut out = m.clone();
    for i in 0..m.rows() {
        let n = norm(m.row(i));
        if n <= 0.0 || !n.is_finite() {
            return Err(Error::ZeroNormRow(i));
        }
        for v in out.row_mut(i) {
            *v /= n;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
        let data: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        Matrix::new(rows, cols, data).unwrap()
    }

    /// Independent oracle: eigenvalues of the symmetric matrix `s` by
    /// classic two-sided Jacobi iteration.
    fn symmetric_eigenvalues(s: &Matrix) -> Vec<f64> {
        let n = s.rows();
        let mut a = s.clone();
        for _ in 0..200 {
            let mut off = 0.0;
            for p in 0..n {
                for q in (p + 1)..n {
                    off += a.at(p, q) * a.at(p, q);
                }
            }
            if off.sqrt() < 1e-14 {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = a.at(p, q);
                    if apq.abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a.at(q, q) - a.at(p, p)) / (2.0 * apq);
                    let t = theta.signum() / (theta.abs() + (1.0 + theta * theta).sqrt());
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let sn = t * c;
                    for k in 0..n {
                        let akp = a.at(k, p);
                        let akq = a.at(k, q);
                        a.set(k, p, c * akp - sn * akq);
                        a.set(k, q, sn * akp + c * akq);
                    }
                    for k in 0..n {
                        let apk = a.at(p, k);
                        let aqk = a.at(q, k);
                        a.set(p, k, c * apk - sn * aqk);
                        a.set(q, k, sn * apk + c * aqk);
                    }
                }
            }
        }
        let mut eigs: Vec<f64> = (0..n).map(|i| a.at(i, i)).collect();
        eigs.sort_by(|x, y| y.partial_cmp(x).unwrap());
        eigs
    }

    #[test]
    fn svd_identity() {
        let s = svd(&Matrix::identity(3)).unwrap();
        for v in &s.sigma {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn svd_diagonal() {
        let mut a = Matrix::zeros(3, 3);
        a.set(0, 0, 3.0);
        a.set(1, 1, 2.0);
        a.set(2, 2, 1.0);
        let s = svd(&a).unwrap();
        assert!((s.sigma[0] - 3.0).abs() < 1e-12);
        assert!((s.sigma[1] - 2.0).abs() < 1e-12);
        assert!((s.sigma[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn svd_matches_gram_eigenvalue_oracle() {
        let mut rng = crate::rng::stream(11, "svd-oracle");
        let a = random_matrix(5, 3, &mut rng);
        let s = svd(&a).unwrap();

        let rec_err = s.reconstruct().sub(&a).frobenius_norm() / a.frobenius_norm();
        assert!(rec_err < 1e-10, "reconstruction error {rec_err}");

        let eigs = symmetric_eigenvalues(&a.transpose().matmul(&a));
        for (sv, ev) in s.sigma.iter().zip(&eigs) {
            assert!((sv * sv - ev).abs() < 1e-10, "sigma^2 {} vs eig {}", sv * sv, ev);
        }
    }

    #[test]
    fn svd_factors_are_orthonormal() {
        let mut rng = crate::rng::stream(3, "svd-orth");
        for &(m, n) in &[(4usize, 4usize), (6, 3), (3, 6), (5, 2)] {
            let a = random_matrix(m, n, &mut rng);
            let s = svd(&a).unwrap();
            assert!(s.u.orthogonality_defect() < 1e-8);
            assert!(s.v.orthogonality_defect() < 1e-8);
            for w in s.sigma.windows(2) {
                assert!(w[0] >= w[1]);
            }
        }
    }

    #[test]
    fn svd_rank_deficient_still_orthonormal() {
        // Two equal columns plus a zero column: rank 1 out of 3.
        let a = Matrix::from_rows(&[
            vec![1.0, 1.0, 0.0],
            vec![2.0, 2.0, 0.0],
            vec![3.0, 3.0, 0.0],
            vec![4.0, 4.0, 0.0],
        ])
        .unwrap();
        let s = svd(&a).unwrap();
        assert!(s.u.orthogonality_defect() < 1e-8);
        assert!(s.v.orthogonality_defect() < 1e-8);
        let rec = s.reconstruct().sub(&a).frobenius_norm();
        assert!(rec < 1e-8 * a.frobenius_norm().max(1.0));
        assert!(s.sigma[1] < 1e-10 && s.sigma[2] < 1e-10);
    }

    #[test]
    fn svd_sigma_invariant_under_column_permutation() {
        let mut rng = crate::rng::stream(5, "svd-perm");
        let a = random_matrix(6, 4, &mut rng);
        // permutation matrix: columns reversed
        let mut p = Matrix::zeros(4, 4);
        for j in 0..4 {
            p.set(j, 3 - j, 1.0);
        }
        let ap = a.matmul(&p);
        let s1 = svd(&a).unwrap();
        let s2 = svd(&ap).unwrap();
        for (x, y) in s1.sigma.iter().zip(&s2.sigma) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn svd_rejects_non_finite() {
        let mut a = Matrix::zeros(2, 2);
        a.data_mut()[0] = f64::NAN;
        assert!(svd(&a).is_err());
    }

    #[test]
    fn procrustes_self_alignment_is_identity() {
        let mut rng = crate::rng::stream(21, "proc-self");
        let g = random_matrix(8, 4, &mut rng);
        let w = procrustes_solve(&g, &Matrix::identity(8), &g).unwrap();
        let defect = w.sub(&Matrix::identity(4)).frobenius_norm();
        assert!(defect < 1e-8, "‖W − I‖ = {defect}");
    }

    #[test]
    fn procrustes_recovers_orthogonal_map() {
        let mut rng = crate::rng::stream(22, "proc-q");
        for _ in 0..5 {
            let g_t = random_matrix(12, 5, &mut rng);
            let q = random_orthogonal(5, &mut rng);
            let g_s = g_t.matmul(&q);
            let w = procrustes_solve(&g_t, &Matrix::identity(12), &g_s).unwrap();
            let err = w.sub(&q).frobenius_norm();
            assert!(err < 1e-8, "‖W − Q‖ = {err}");
        }
    }

    #[test]
    fn procrustes_beats_grid_sampled_rotations_in_2d() {
        // Two anchors rotated by 30 degrees.
        let theta = 30f64.to_radians();
        let rot = Matrix::from_rows(&[
            vec![theta.cos(), theta.sin()],
            vec![-theta.sin(), theta.cos()],
        ])
        .unwrap();
        let g_t = Matrix::from_rows(&[vec![1.0, 0.2], vec![-0.3, 1.1]]).unwrap();
        let g_s = g_t.matmul(&rot);
        let d = Matrix::identity(2);
        let w = procrustes_solve(&g_t, &d, &g_s).unwrap();
        assert!(w.sub(&rot).frobenius_norm() < 1e-8);

        let objective = |w: &Matrix| -> f64 {
            let sim = g_t.matmul(w).matmul(&g_s.transpose());
            (0..2).map(|i| sim.at(i, i)).sum()
        };
        let best = objective(&w);
        for k in 0..360 {
            let a = (k as f64).to_radians();
            let cand =
                Matrix::from_rows(&[vec![a.cos(), a.sin()], vec![-a.sin(), a.cos()]]).unwrap();
            assert!(objective(&cand) <= best + 1e-9);
        }
    }

    #[test]
    fn procrustes_orthogonal_even_with_sparse_dictionary() {
        let mut rng = crate::rng::stream(23, "proc-sparse");
        let g_t = random_matrix(6, 8, &mut rng);
        let g_s = random_matrix(6, 8, &mut rng);
        // Only two matched rows: cross-covariance has rank ≤ 2 in d = 8.
        let mut d = Matrix::zeros(6, 6);
        d.set(0, 3, 1.0);
        d.set(2, 5, 1.0);
        let w = procrustes_solve(&g_t, &d, &g_s).unwrap();
        assert!(w.orthogonality_defect() < 1e-8);
    }

    #[test]
    fn procrustes_rejects_bad_dictionary() {
        let g = Matrix::zeros(2, 2);
        let mut d = Matrix::zeros(2, 2);
        d.set(0, 0, 0.5);
        assert!(procrustes_solve(&g, &d, &g).is_err());
        let mut d2 = Matrix::zeros(2, 2);
        d2.set(0, 0, 1.0);
        d2.set(0, 1, 1.0);
        assert!(procrustes_solve(&g, &d2, &g).is_err());
        let d3 = Matrix::identity(3);
        assert!(procrustes_solve(&g, &d3, &g).is_err());
    }

    #[test]
    fn procrustes_invariant_to_matched_pair_scaling() {
        let mut rng = crate::rng::stream(24, "proc-scale");
        let g_t = random_matrix(10, 4, &mut rng);
        let q = random_orthogonal(4, &mut rng);
        let g_s = g_t.matmul(&q);
        // permutation dictionary: i -> (i + 1) mod 10, with G_S rows permuted to match
        let mut d = Matrix::zeros(10, 10);
        let mut g_s_perm = Matrix::zeros(10, 4);
        for i in 0..10 {
            let j = (i + 1) % 10;
            d.set(i, j, 1.0);
            for c in 0..4 {
                g_s_perm.set(j, c, g_s.at(i, c));
            }
        }
        let w0 = procrustes_solve(&g_t, &d, &g_s_perm).unwrap();
        let mut g_t2 = g_t.clone();
        let mut g_s2 = g_s_perm.clone();
        for c in 0..4 {
            let v = g_t2.at(4, c) * 3.0;
            g_t2.set(4, c, v);
            let v = g_s2.at(5, c) * 3.0;
            g_s2.set(5, c, v);
        }
        let w1 = procrustes_solve(&g_t2, &d, &g_s2).unwrap();
        assert!(w0.sub(&w1).frobenius_norm() < 1e-8);
    }

    #[test]
    fn cosine_unit_rows_diagonal() {
        let a = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let m = cosine_similarity_matrix(&a, &a).unwrap();
        assert!((m.at(0, 0) - 1.0).abs() < 1e-12);
        assert!((m.at(1, 1) - 1.0).abs() < 1e-12);
        assert!(m.at(0, 1).abs() < 1e-12);
        assert!(m.at(1, 0).abs() < 1e-12);
    }

    #[test]
    fn cosine_hand_value() {
        let a = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![1.0, 1.0]]).unwrap();
        let m = cosine_similarity_matrix(&a, &b).unwrap();
        assert!((m.at(0, 0) - 1.0 / 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn cosine_rejects_zero_row() {
        let a = Matrix::from_rows(&[vec![0.0, 0.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        match cosine_similarity_matrix(&a, &b) {
            Err(Error::ZeroNormRow(0)) => {}
            other => panic!("expected zero-norm error, got {other:?}"),
        }
    }

    #[test]
    fn matrix_text_round_trip() {
        let mut rng = crate::rng::stream(31, "mat-io");
        let a = random_matrix(4, 3, &mut rng);
        let b = Matrix::from_text(&a.to_text()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn matrix_new_validates() {
        assert!(Matrix::new(2, 2, vec![0.0; 3]).is_err());
        assert!(Matrix::new(1, 2, vec![f64::INFINITY, 0.0]).is_err());
    }
}
