//! Dense linear algebra for the small square matrices that appear in the
//! filter recursions (N rarely above a handful of states).

use std::ops::{Index, IndexMut};

use crate::error::{invalid, Error, Result};

/// Default truncation tolerance for [`mat_exp`].
pub const DEFAULT_EXPM_TOL: f64 = 1e-12;

/// Row-major `n × n` real matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_diag(d: &[f64]) -> Self {
        let mut m = Self::zeros(d.len());
        for (i, &v) in d.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    /// Builds a matrix from row-major entries.
    pub fn from_row_major(n: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return invalid("matrix dimension must be positive");
        }
        if data.len() != n * n {
            return invalid(format!(
                "expected {} entries for a {n}x{n} matrix, got {}",
                n * n,
                data.len()
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return invalid("matrix entries must be finite");
        }
        Ok(Self { n, data })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for r in rows {
            if r.len() != n {
                return invalid("rows must all have length n");
            }
            data.extend_from_slice(r);
        }
        Self::from_row_major(n, data)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Self {
        let n = self.n;
        let mut t = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            n: self.n,
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        debug_assert_eq!(self.n, other.n);
        Self {
            n: self.n,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    /// Adds `d` onto the diagonal in place.
    pub fn add_diag(&mut self, d: &[f64]) {
        debug_assert_eq!(self.n, d.len());
        for (i, &v) in d.iter().enumerate() {
            self[(i, i)] += v;
        }
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.n).map(|i| self[(i, i)]).collect()
    }

    pub fn matmul(&self, other: &Self) -> Self {
        let n = self.n;
        debug_assert_eq!(n, other.n);
        let mut out = Self::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self.data[i * n + k];
                if a == 0.0 {
                    continue;
                }
                let row = &other.data[k * n..(k + 1) * n];
                let dst = &mut out.data[i * n..(i + 1) * n];
                for (d, b) in dst.iter_mut().zip(row) {
                    *d += a * b;
                }
            }
        }
        out
    }

    /// Maximum absolute column sum.
    pub fn norm1(&self) -> f64 {
        (0..self.n)
            .map(|j| (0..self.n).map(|i| self[(i, j)].abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl Index<(usize, usize)> for SquareMatrix {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.n + j]
    }
}

impl IndexMut<(usize, usize)> for SquareMatrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.n + j]
    }
}

/// `m · x`.
pub fn mat_vec(m: &SquareMatrix, x: &[f64]) -> Result<Vec<f64>> {
    if m.n != x.len() {
        return invalid(format!(
            "dimension mismatch: {}x{} matrix times length-{} vector",
            m.n,
            m.n,
            x.len()
        ));
    }
    Ok(mat_vec_unchecked(m, x))
}

#[inline]
pub(crate) fn mat_vec_unchecked(m: &SquareMatrix, x: &[f64]) -> Vec<f64> {
    let n = m.n;
    (0..n)
        .map(|i| {
            m.data[i * n..(i + 1) * n]
                .iter()
                .zip(x)
                .map(|(a, b)| a * b)
                .sum()
        })
        .collect()
}

/// Matrix exponential by scaling and squaring with a truncated Taylor series.
///
/// The matrix is scaled by `2^-s` so that its 1-norm is at most 1/2, the
/// series is summed until the remainder bound falls below `tol` relative to
/// the scaled norm, and the result is squared `s` times.
pub fn mat_exp(m: &SquareMatrix, tol: f64) -> Result<SquareMatrix> {
    if !m.is_finite() {
        return invalid("mat_exp: non-finite entries");
    }
    if !(tol > 0.0 && tol <= 1e-6) {
        return invalid(format!("mat_exp: tol must lie in (0, 1e-6], got {tol}"));
    }
    let n = m.n;
    let norm = m.norm1();
    if norm == 0.0 {
        return Ok(SquareMatrix::identity(n));
    }
    if n == 1 {
        return Ok(SquareMatrix::from_diag(&[m[(0, 0)].exp()]));
    }

    let mut s = 0u32;
    if norm > 0.5 {
        s = (norm / 0.5).log2().ceil() as u32;
    }
    let x = m.scaled(0.5f64.powi(s as i32));
    let xnorm = norm * 0.5f64.powi(s as i32);

    let mut sum = SquareMatrix::identity(n);
    let mut term = SquareMatrix::identity(n);
    // ||X^k / k!|| <= xnorm^k / k!; with xnorm <= 1/2 the tail after term k
    // is bounded by twice the next term. Squaring amplifies the truncation
    // error by up to 2^s, so the series is run to rounding level.
    let target = tol.min(f64::EPSILON / 4.0) * xnorm;
    let mut bound = 1.0;
    for k in 1..=30u32 {
        term = term.matmul(&x).scaled(1.0 / k as f64);
        sum = sum.add(&term);
        bound *= xnorm / (k + 1) as f64;
        if 2.0 * bound <= target {
            break;
        }
    }

    for _ in 0..s {
        sum = sum.matmul(&sum);
    }
    if !sum.is_finite() {
        return Err(Error::InvalidState("mat_exp overflowed".into()));
    }
    Ok(sum)
}

/// Solves `m x = b` by Gaussian elimination with partial pivoting.
/// Returns `None` when the system is numerically singular.
pub(crate) fn solve(m: &SquareMatrix, b: &[f64]) -> Option<Vec<f64>> {
    let n = m.n;
    let mut a = m.data.clone();
    let mut x = b.to_vec();
    let scale = m.norm1().max(f64::MIN_POSITIVE);
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))
            .unwrap();
        if a[piv * n + col].abs() <= 1e-13 * scale {
            return None;
        }
        if piv != col {
            for k in 0..n {
                a.swap(col * n + k, piv * n + k);
            }
            x.swap(col, piv);
        }
        for row in col + 1..n {
            let f = a[row * n + col] / a[col * n + col];
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[row * n + k] -= f * a[col * n + k];
            }
            x[row] -= f * x[col];
        }
    }
    for row in (0..n).rev() {
        let mut acc = x[row];
        for k in row + 1..n {
            acc -= a[row * n + k] * x[k];
        }
        x[row] = acc / a[row * n + row];
    }
    Some(x)
}

/// Divides `v` by its sum in place and returns the sum. Entries in
/// `[-1e-12, 0)` are clamped to zero first.
pub(crate) fn normalize_in_place(v: &mut [f64]) -> f64 {
    for x in v.iter_mut() {
        if *x < 0.0 && *x >= -1e-12 {
            *x = 0.0;
        }
    }
    let s: f64 = v.iter().sum();
    if s > 0.0 && s.is_finite() {
        for x in v.iter_mut() {
            *x /= s;
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: &SquareMatrix, b: &SquareMatrix, tol: f64) -> bool {
        a.max_abs_diff(b) <= tol
    }

    #[test]
    fn exp_of_zero_is_identity() {
        let z = SquareMatrix::zeros(3);
        assert_eq!(mat_exp(&z, 1e-12).unwrap(), SquareMatrix::identity(3));
    }

    #[test]
    fn exp_of_diagonal() {
        let d = [-3.0, 0.5, 4.0];
        let e = mat_exp(&SquareMatrix::from_diag(&d), 1e-12).unwrap();
        for i in 0..3 {
            let want = d[i].exp();
            assert!((e[(i, i)] - want).abs() <= 1e-13 * want, "{} {}", e[(i, i)], want);
        }
        assert_eq!(e[(0, 1)], 0.0);
    }

    #[test]
    fn symmetric_two_state_generator_closed_form() {
        // eigenvalues 0 and -2 eps with eigenvectors (1,1) and (1,-1)
        let (eps, t) = (0.01, 10.0);
        let m = SquareMatrix::from_rows(&[&[-eps * t, eps * t], &[eps * t, -eps * t]]).unwrap();
        let e = mat_exp(&m, 1e-12).unwrap();
        let decay = (-2.0 * eps * t).exp();
        let want = SquareMatrix::from_rows(&[
            &[(1.0 + decay) / 2.0, (1.0 - decay) / 2.0],
            &[(1.0 - decay) / 2.0, (1.0 + decay) / 2.0],
        ])
        .unwrap();
        assert!(close(&e, &want, 1e-12), "{e:?}");
    }

    #[test]
    fn rejects_non_finite_and_bad_tol() {
        let mut m = SquareMatrix::zeros(2);
        m.data[1] = f64::NAN;
        assert!(matches!(mat_exp(&m, 1e-12), Err(Error::InvalidInput(_))));
        assert!(mat_exp(&SquareMatrix::zeros(2), 1e-3).is_err());
        assert!(SquareMatrix::from_row_major(2, vec![0.0, f64::INFINITY, 0.0, 0.0]).is_err());
    }

    #[test]
    fn mat_vec_examples() {
        let x = [1.5, -2.0, 3.0];
        assert_eq!(mat_vec(&SquareMatrix::identity(3), &x).unwrap(), x.to_vec());
        assert_eq!(
            mat_vec(&SquareMatrix::zeros(3), &x).unwrap(),
            vec![0.0, 0.0, 0.0]
        );
        let m = SquareMatrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        assert_eq!(mat_vec(&m, &[1.0, 1.0]).unwrap(), vec![3.0, 7.0]);
        assert!(mat_vec(&m, &x).is_err());
    }

    #[test]
    fn solve_small_system() {
        let m = SquareMatrix::from_rows(&[&[2.0, 1.0], &[1.0, 3.0]]).unwrap();
        let x = solve(&m, &[3.0, 5.0]).unwrap();
        assert!((x[0] - 0.8).abs() < 1e-14 && (x[1] - 1.4).abs() < 1e-14);
        let sing = SquareMatrix::from_rows(&[&[1.0, 2.0], &[2.0, 4.0]]).unwrap();
        assert!(solve(&sing, &[1.0, 1.0]).is_none());
    }

    fn matrix3() -> impl Strategy<Value = SquareMatrix> {
        proptest::collection::vec(-2.0f64..2.0, 9)
            .prop_map(|d| SquareMatrix::from_row_major(3, d).unwrap())
    }

    fn generator(n: usize) -> impl Strategy<Value = SquareMatrix> {
        proptest::collection::vec(0.0f64..3.0, n * n).prop_map(move |d| {
            let mut m = SquareMatrix::from_row_major(n, d).unwrap();
            for j in 0..n {
                m[(j, j)] = 0.0;
                let s: f64 = (0..n).map(|i| m[(i, j)]).sum();
                m[(j, j)] = -s;
            }
            m
        })
    }

    fn rel_close(a: &SquareMatrix, b: &SquareMatrix, tol: f64) -> bool {
        let scale = b.as_slice().iter().map(|v| v.abs()).fold(0.0, f64::max);
        a.max_abs_diff(b) <= tol * scale.max(1e-300)
    }

    proptest! {
        #[test]
        fn scalar_shift_factors_out(m in matrix3(), c in -2.0f64..2.0) {
            let mut shifted = m.clone();
            shifted.add_diag(&[c; 3]);
            let lhs = mat_exp(&shifted, 1e-12).unwrap();
            let rhs = mat_exp(&m, 1e-12).unwrap().scaled(c.exp());
            prop_assert!(rel_close(&lhs, &rhs, 1e-10));
        }

        #[test]
        fn generator_exponential_is_stochastic(m in generator(4), t in 0.0f64..5.0) {
            let e = mat_exp(&m.scaled(t), 1e-12).unwrap();
            for j in 0..4 {
                let s: f64 = (0..4).map(|i| e[(i, j)]).sum();
                prop_assert!((s - 1.0).abs() < 1e-10);
                for i in 0..4 {
                    prop_assert!(e[(i, j)] >= -1e-10);
                }
            }
        }

        #[test]
        fn semigroup(m in matrix3(), s in 0.0f64..1.5, t in 0.0f64..1.5) {
            let lhs = mat_exp(&m.scaled(s + t), 1e-12).unwrap();
            let rhs = mat_exp(&m.scaled(s), 1e-12).unwrap()
                .matmul(&mat_exp(&m.scaled(t), 1e-12).unwrap());
            prop_assert!(rel_close(&lhs, &rhs, 1e-9));
        }
    }
}
