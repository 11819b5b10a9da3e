//! Dense row-major matrices and the handful of kernels the rest of the crate
//! needs: products, norms, a one-sided Jacobi SVD and power iteration.
//!
//! Everything here is a pure function of its inputs and runs in a fixed
//! order, so bit-identical inputs give bit-identical outputs.

use std::fmt;
use std::ops::{Index, IndexMut};

use crate::error::{CapError, Result};

/// Row-major dense `f64` matrix.
#[derive(Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for DenseMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "DenseMatrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            writeln!(f, "  {:?}", self.row(r))?;
        }
        write!(f, "]")
    }
}

impl DenseMatrix {
    /// Builds a matrix from row-major data, rejecting wrong lengths and
    /// non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(CapError::LengthMismatch {
                expected: rows * cols,
                found: data.len(),
            });
        }
        if let Some(k) = data.iter().position(|x| !x.is_finite()) {
            return Err(CapError::NonFinite {
                row: k / cols.max(1),
                col: k % cols.max(1),
            });
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
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Square diagonal matrix.
    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    /// Builds from nested rows; ragged input is an error.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(CapError::LengthMismatch {
                    expected: c,
                    found: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(r, c, data)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    /// Outer product `x yᵀ`.
    pub fn outer(x: &[f64], y: &[f64]) -> Self {
        Self::from_fn(x.len(), y.len(), |r, c| x[r] * y[c])
    }

    /// Matrix whose columns are the given vectors (all of length `rows`).
    pub fn from_columns(rows: usize, columns: &[Vec<f64>]) -> Self {
        Self::from_fn(rows, columns.len(), |r, c| columns[c][r])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.data[r * self.cols + c]).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self[(c, r)])
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn scale(&self, k: f64) -> Self {
        self.map(|x| x * k)
    }

    fn zip_with(&self, other: &Self, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(CapError::shape(op, self.shape(), other.shape()));
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    /// `self + k * other`.
    pub fn add_scaled(&self, other: &Self, k: f64) -> Result<Self> {
        self.zip_with(other, "add_scaled", |a, b| a + k * b)
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        matmul(self, other)
    }

    /// Largest absolute entrywise difference.
    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        if self.shape() != other.shape() {
            return Err(CapError::shape("max_abs_diff", self.shape(), other.shape()));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| f64::max(m, (a - b).abs())))
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| f64::max(m, x.abs()))
    }

    /// Number of entries that are not exactly zero.
    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|&&x| x != 0.0).count()
    }
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = f64;

    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

/// Thin SVD `A = U diag(sigma) Vᵀ` with `r = min(m, n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdFactorization {
    /// m×r, orthonormal columns.
    pub u: DenseMatrix,
    /// Non-increasing, non-negative.
    pub sigma: Vec<f64>,
    /// n×r, orthonormal columns.
    pub v: DenseMatrix,
}

impl SvdFactorization {
    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    /// `U diag(weights) Vᵀ`.
    pub fn recompose_with(&self, weights: &[f64]) -> DenseMatrix {
        let (m, n) = (self.u.rows(), self.v.rows());
        let mut out = DenseMatrix::zeros(m, n);
        for (k, &w) in weights.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for i in 0..m {
                let a = w * self.u[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let row = &mut out.data[i * n..(i + 1) * n];
                for (j, x) in row.iter_mut().enumerate() {
                    *x += a * self.v[(j, k)];
                }
            }
        }
        out
    }

    pub fn recompose(&self) -> DenseMatrix {
        self.recompose_with(&self.sigma)
    }
}

/// Cyclic-sweep cap for the Jacobi iteration.
pub const SVD_MAX_SWEEPS: usize = 64;

/// Full thin SVD by one-sided Jacobi rotations.
///
/// Columns of the working copy are orthogonalised pairwise until every pair
/// satisfies `|a_p·a_q| <= tol * |a_p| |a_q|` with `tol = max(m, n) * eps`.
/// Sign is fixed so the largest-magnitude entry of each left singular vector
/// is positive (first such entry on ties).
pub fn svd(a: &DenseMatrix) -> Result<SvdFactorization> {
    if a.rows == 0 || a.cols == 0 {
        return Err(CapError::DimensionMismatch {
            op: "svd",
            expected: "at least 1x1".into(),
            found: format!("{}x{}", a.rows, a.cols),
        });
    }
    if let Some(k) = a.data.iter().position(|x| !x.is_finite()) {
        return Err(CapError::NonFinite {
            row: k / a.cols,
            col: k % a.cols,
        });
    }
    if a.rows < a.cols {
        let t = svd_tall(&a.transpose())?;
        let mut f = SvdFactorization {
            u: t.v,
            sigma: t.sigma,
            v: t.u,
        };
        fix_signs(&mut f);
        return Ok(f);
    }
    let mut f = svd_tall(a)?;
    fix_signs(&mut f);
    Ok(f)
}

/// Jacobi on a matrix with `rows >= cols`; signs not yet normalised.
fn svd_tall(a: &DenseMatrix) -> Result<SvdFactorization> {
    let (m, n) = a.shape();
    // Column-major working copies.
    let mut w: Vec<f64> = (0..n).flat_map(|c| (0..m).map(move |r| (r, c))).map(|(r, c)| a[(r, c)]).collect();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let tol = f64::EPSILON * m.max(n) as f64;

    let mut converged = n == 1;
    let mut last_off = 0.0;
    let mut sweeps = 0;
    while !converged && sweeps < SVD_MAX_SWEEPS {
        sweeps += 1;
        let mut rotated = false;
        last_off = 0.0;
        for p in 0..n - 1 {
            for q in p + 1..n {
                let (alpha, beta, gamma) = {
                    let cp = &w[p * m..(p + 1) * m];
                    let cq = &w[q * m..(q + 1) * m];
                    let mut alpha = 0.0;
                    let mut beta = 0.0;
                    let mut gamma = 0.0;
                    for (x, y) in cp.iter().zip(cq) {
                        alpha += x * x;
                        beta += y * y;
                        gamma += x * y;
                    }
                    (alpha, beta, gamma)
                };
                if alpha == 0.0 || beta == 0.0 || gamma == 0.0 {
                    continue;
                }
                let cos = gamma.abs() / (alpha.sqrt() * beta.sqrt());
                last_off = f64::max(last_off, cos);
                if cos <= tol {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut w, m, p, q, c, s);
                rotate(&mut v, n, p, q, c, s);
            }
        }
        converged = !rotated;
    }
    if !converged {
        return Err(CapError::SvdNonConvergence {
            sweeps,
            residual: last_off,
        });
    }

    let norms: Vec<f64> = (0..n)
        .map(|c| w[c * m..(c + 1) * m].iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]).then(i.cmp(&j)));

    let sigma: Vec<f64> = order.iter().map(|&k| norms[k]).collect();
    let mut u_cols: Vec<Option<Vec<f64>>> = order
        .iter()
        .map(|&k| {
            let s = norms[k];
            (s > 0.0).then(|| w[k * m..(k + 1) * m].iter().map(|x| x / s).collect())
        })
        .collect();
    complete_orthonormal(&mut u_cols, m);
    let u_cols: Vec<Vec<f64>> = u_cols.into_iter().map(Option::unwrap).collect();
    let v_cols: Vec<Vec<f64>> = order.iter().map(|&k| v[k * n..(k + 1) * n].to_vec()).collect();

    Ok(SvdFactorization {
        u: DenseMatrix::from_columns(m, &u_cols),
        sigma,
        v: DenseMatrix::from_columns(n, &v_cols),
    })
}

fn rotate(buf: &mut [f64], len: usize, p: usize, q: usize, c: f64, s: f64) {
    let (head, tail) = buf.split_at_mut(q * len);
    let cp = &mut head[p * len..(p + 1) * len];
    let cq = &mut tail[..len];
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (a, b) = (*x, *y);
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}

/// Fills `None` slots with unit vectors orthogonal to every other column,
/// drawn from the standard basis by two passes of Gram-Schmidt.
fn complete_orthonormal(cols: &mut [Option<Vec<f64>>], m: usize) {
    let mut next_basis = 0;
    for slot in 0..cols.len() {
        if cols[slot].is_some() {
            continue;
        }
        loop {
            assert!(next_basis < m, "cannot complete orthonormal basis");
            let mut e = vec![0.0; m];
            e[next_basis] = 1.0;
            next_basis += 1;
            for _ in 0..2 {
                for other in cols.iter().flatten() {
                    let d: f64 = other.iter().zip(&e).map(|(a, b)| a * b).sum();
                    for (x, o) in e.iter_mut().zip(other) {
                        *x -= d * o;
                    }
                }
            }
            let norm = e.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.5 {
                e.iter_mut().for_each(|x| *x /= norm);
                cols[slot] = Some(e);
                break;
            }
        }
    }
}

fn fix_signs(f: &mut SvdFactorization) {
    let (m, n, r) = (f.u.rows(), f.v.rows(), f.sigma.len());
    for k in 0..r {
        let mut best = 0;
        for i in 1..m {
            if f.u[(i, k)].abs() > f.u[(best, k)].abs() {
                best = i;
            }
        }
        if f.u[(best, k)] < 0.0 {
            for i in 0..m {
                f.u[(i, k)] = -f.u[(i, k)];
            }
            for j in 0..n {
                f.v[(j, k)] = -f.v[(j, k)];
            }
        }
    }
}

pub fn frobenius_norm(a: &DenseMatrix) -> f64 {
    a.data.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn l1_norm(a: &DenseMatrix) -> f64 {
    a.data.iter().map(|x| x.abs()).sum()
}

pub fn nuclear_norm(a: &DenseMatrix) -> Result<f64> {
    Ok(svd(a)?.sigma.iter().sum())
}

pub fn matmul(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.cols != b.rows {
        return Err(CapError::DimensionMismatch {
            op: "matmul",
            expected: format!("{} rows on the right operand", a.cols),
            found: format!("{}x{}", b.rows, b.cols),
        });
    }
    let (m, k, n) = (a.rows, a.cols, b.cols);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let x = a.data[i * k + p];
            if x == 0.0 {
                continue;
            }
            let brow = &b.data[p * n..(p + 1) * n];
            for (o, y) in orow.iter_mut().zip(brow) {
                *o += x * y;
            }
        }
    }
    Ok(DenseMatrix {
        rows: m,
        cols: n,
        data: out,
    })
}

const POWER_MAX_ITERS: usize = 100_000;

/// Largest singular value by power iteration on `AᵀA`.
///
/// Starts from the largest-norm row of `A` and stops once successive
/// estimates agree to a relative 1e-10. Returns 0 for the zero matrix.
pub fn spectral_norm(a: &DenseMatrix) -> f64 {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return 0.0;
    }
    let start = (0..m)
        .map(|r| (r, a.row(r).iter().map(|x| x * x).sum::<f64>()))
        .fold((0, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
    if start.1 <= 0.0 {
        return 0.0;
    }
    let mut v: Vec<f64> = a.row(start.0).to_vec();
    normalize(&mut v);
    let mut estimate = 0.0;
    let mut av = vec![0.0; m];
    for _ in 0..POWER_MAX_ITERS {
        for (r, out) in av.iter_mut().enumerate() {
            *out = a.row(r).iter().zip(&v).map(|(x, y)| x * y).sum();
        }
        let next = av.iter().map(|x| x * x).sum::<f64>().sqrt();
        let mut w = vec![0.0; n];
        for (r, &s) in av.iter().enumerate() {
            for (o, x) in w.iter_mut().zip(a.row(r)) {
                *o += s * x;
            }
        }
        if normalize(&mut w) == 0.0 {
            return next;
        }
        v = w;
        if (next - estimate).abs() <= 1e-10 * next {
            return next;
        }
        estimate = next;
    }
    estimate
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::CapRng;

    fn random(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
        let mut rng = CapRng::seed_from(seed);
        DenseMatrix::from_fn(rows, cols, |_, _| rng.standard_normal())
    }

    fn max_gram_error(q: &DenseMatrix) -> f64 {
        let g = q.transpose().matmul(q).unwrap();
        g.max_abs_diff(&DenseMatrix::identity(q.cols())).unwrap()
    }

    #[test]
    fn rejects_bad_construction() {
        assert!(DenseMatrix::new(2, 2, vec![1.0; 3]).is_err());
        assert!(matches!(
            DenseMatrix::new(1, 2, vec![1.0, f64::NAN]),
            Err(CapError::NonFinite { row: 0, col: 1 })
        ));
    }

    #[test]
    fn svd_identity_and_diagonal() {
        let f = svd(&DenseMatrix::identity(3)).unwrap();
        assert_eq!(f.sigma, vec![1.0, 1.0, 1.0]);
        assert_eq!(f.recompose(), DenseMatrix::identity(3));

        let f = svd(&DenseMatrix::from_diag(&[3.0, 2.0, 1.0])).unwrap();
        assert_eq!(f.sigma, vec![3.0, 2.0, 1.0]);
    }

    #[test]
    fn svd_random_reconstruction() {
        let a = random(8, 5, 7);
        let f = svd(&a).unwrap();
        assert!(f.recompose().max_abs_diff(&a).unwrap() < 1e-9);
        assert!(max_gram_error(&f.u) <= 1e-10);
        assert!(max_gram_error(&f.v) <= 1e-10);
    }

    #[test]
    fn svd_wide_and_rank_deficient() {
        let a = random(3, 7, 3);
        let f = svd(&a).unwrap();
        assert_eq!((f.u.shape(), f.v.shape()), ((3, 3), (7, 3)));
        assert!(f.recompose().max_abs_diff(&a).unwrap() < 1e-12);

        let x = [1.0, -2.0, 0.5, 3.0];
        let y = [2.0, 1.0, -1.0];
        let r1 = DenseMatrix::outer(&x, &y);
        let f = svd(&r1).unwrap();
        assert_eq!(f.sigma.len(), 3);
        assert!(max_gram_error(&f.u) <= 1e-10);
        assert!(f.sigma[1] < 1e-12 && f.sigma[2] < 1e-12);

        let z = svd(&DenseMatrix::zeros(4, 3)).unwrap();
        assert_eq!(z.sigma, vec![0.0; 3]);
        assert!(max_gram_error(&z.u) <= 1e-10);
    }

    #[test]
    fn svd_sign_convention() {
        let f = svd(&random(6, 4, 11)).unwrap();
        for k in 0..4 {
            let col = f.u.column(k);
            let big = col.iter().copied().fold(0.0, |m: f64, x| if x.abs() > m.abs() { x } else { m });
            assert!(big > 0.0);
        }
    }

    #[test]
    fn svd_is_deterministic() {
        let a = random(12, 9, 5);
        assert_eq!(svd(&a).unwrap(), svd(&a).unwrap());
    }

    #[test]
    fn svd_rejects_empty() {
        assert!(svd(&DenseMatrix::zeros(0, 3)).is_err());
    }

    #[test]
    fn norms_small_cases() {
        assert_eq!(frobenius_norm(&DenseMatrix::zeros(3, 2)), 0.0);
        let a = DenseMatrix::from_rows(&[&[3.0, 4.0]]).unwrap();
        assert_eq!(frobenius_norm(&a), 5.0);
        let b = DenseMatrix::from_rows(&[&[1.0, -2.0], &[3.0, -4.0]]).unwrap();
        assert_eq!(l1_norm(&b), 10.0);
        assert_eq!(l1_norm(&DenseMatrix::zeros(2, 2)), 0.0);
        let d = DenseMatrix::from_diag(&[3.0, 2.0, 1.0]);
        assert!((nuclear_norm(&d).unwrap() - 6.0).abs() < 1e-14);
        assert!((spectral_norm(&d) - 3.0).abs() < 1e-12);
        assert_eq!(spectral_norm(&DenseMatrix::zeros(2, 2)), 0.0);
    }

    #[test]
    fn rank_one_norms() {
        let x = [1.0, 2.0, 2.0];
        let y = [3.0, 4.0];
        let a = DenseMatrix::outer(&x, &y);
        assert!((nuclear_norm(&a).unwrap() - 15.0).abs() < 1e-12);
        assert!((spectral_norm(&a) - 15.0).abs() < 1e-9);
    }

    #[test]
    fn spectral_norm_matches_svd() {
        let a = random(6, 4, 21);
        let s = svd(&a).unwrap().sigma[0];
        assert!((spectral_norm(&a) - s).abs() < 1e-8);
    }

    #[test]
    fn matmul_identities_and_mismatch() {
        let a = random(3, 4, 2);
        assert_eq!(DenseMatrix::identity(3).matmul(&a).unwrap(), a);
        assert_eq!(a.matmul(&DenseMatrix::zeros(4, 2)).unwrap(), DenseMatrix::zeros(3, 2));
        assert!(a.matmul(&a).is_err());
    }
}
