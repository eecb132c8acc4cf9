//! Dense complex linear algebra.
//!
//! Everything here works on [`CMat`], a row-major matrix of `Complex64`.
//! The decompositions are small-matrix routines: one-sided Jacobi SVD,
//! Cholesky for Hermitian positive definite systems and the log-determinant
//! built on top of it.

use std::ops::{Add, Index, IndexMut, Mul, Sub};

use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Row-major dense complex matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CMat {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl CMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![C64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = C64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from row-major entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<C64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Real diagonal matrix (rectangular allowed).
    pub fn from_real_diag(rows: usize, cols: usize, diag: &[f64]) -> Self {
        let mut m = Self::zeros(rows, cols);
        for (i, &d) in diag.iter().enumerate().take(rows.min(cols)) {
            m[(i, i)] = C64::new(d, 0.0);
        }
        m
    }

    /// Column vector.
    pub fn column(v: &[C64]) -> Self {
        Self {
            rows: v.len(),
            cols: 1,
            data: v.to_vec(),
        }
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

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)].conj())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|z| z * s)
    }

    pub fn scale_c(&self, s: C64) -> Self {
        self.map(|z| z * s)
    }

    pub fn map(&self, f: impl Fn(C64) -> C64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&z| f(z)).collect(),
        }
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn col(&self, j: usize) -> Vec<C64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn set_col(&mut self, j: usize, v: &[C64]) {
        for (i, &z) in v.iter().enumerate() {
            self[(i, j)] = z;
        }
    }

    /// Columns `start .. start + n` as a new matrix.
    pub fn col_block(&self, start: usize, n: usize) -> Self {
        Self::from_fn(self.rows, n, |i, j| self[(i, start + j)])
    }

    /// Horizontal concatenation `[a_1, a_2, ...]`.
    pub fn hstack(blocks: &[CMat]) -> Result<Self> {
        let Some(first) = blocks.first() else {
            return Err(Error::Dimension("hstack of zero blocks".into()));
        };
        let rows = first.rows;
        if blocks.iter().any(|b| b.rows != rows) {
            return Err(Error::Dimension("hstack blocks differ in row count".into()));
        }
        let cols = blocks.iter().map(|b| b.cols).sum();
        let mut out = Self::zeros(rows, cols);
        let mut offset = 0;
        for b in blocks {
            for i in 0..rows {
                for j in 0..b.cols {
                    out[(i, offset + j)] = b[(i, j)];
                }
            }
            offset += b.cols;
        }
        Ok(out)
    }

    /// Splits into column blocks of width `width`.
    pub fn split_cols(&self, width: usize) -> Vec<CMat> {
        (0..self.cols / width)
            .map(|k| self.col_block(k * width, width))
            .collect()
    }

    /// `(A + A^H) / 2`.
    pub fn hermitian_part(&self) -> Self {
        Self::from_fn(self.rows, self.cols, |i, j| {
            (self[(i, j)] + self[(j, i)].conj()) * 0.5
        })
    }

    /// Frobenius norm of `A - A^H`.
    pub fn hermitian_deviation(&self) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.rows {
            for j in 0..self.cols {
                acc += (self[(i, j)] - self[(j, i)].conj()).norm_sqr();
            }
        }
        acc.sqrt()
    }

    pub fn matmul(&self, rhs: &CMat) -> CMat {
        assert_eq!(
            self.cols, rhs.rows,
            "matmul: {}x{} times {}x{}",
            self.rows, self.cols, rhs.rows, rhs.cols
        );
        let mut out = CMat::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a.re == 0.0 && a.im == 0.0 {
                    continue;
                }
                let rhs_row = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                for (o, &b) in out_row.iter_mut().zip(rhs_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self^H * rhs` without forming the adjoint.
    pub fn adjoint_mul(&self, rhs: &CMat) -> CMat {
        assert_eq!(self.rows, rhs.rows, "adjoint_mul: row counts differ");
        let mut out = CMat::zeros(self.cols, rhs.cols);
        for k in 0..self.rows {
            let rhs_row = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
            for i in 0..self.cols {
                let a = self.data[k * self.cols + i].conj();
                let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
                for (o, &b) in out_row.iter_mut().zip(rhs_row) {
                    *o += a * b;
                }
            }
        }
        out
    }
}

impl Index<(usize, usize)> for CMat {
    type Output = C64;
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for CMat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl Mul for &CMat {
    type Output = CMat;
    fn mul(self, rhs: &CMat) -> CMat {
        self.matmul(rhs)
    }
}

impl Add for &CMat {
    type Output = CMat;
    fn add(self, rhs: &CMat) -> CMat {
        assert_eq!(self.shape(), rhs.shape(), "add: shape mismatch");
        CMat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &CMat {
    type Output = CMat;
    fn sub(self, rhs: &CMat) -> CMat {
        assert_eq!(self.shape(), rhs.shape(), "sub: shape mismatch");
        CMat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

/// Thin SVD `a = left * diag(singulars) * right^H` with `r = min(rows, cols)`.
///
/// Columns of `right` are phase-normalized so that their first entry is real
/// and non-negative; `left` carries the matching phase.
#[derive(Clone, Debug)]
pub struct SvdResult {
    pub left: CMat,
    pub singulars: Vec<f64>,
    pub right: CMat,
}

impl SvdResult {
    pub fn reconstruct(&self) -> CMat {
        let r = self.singulars.len();
        let s = CMat::from_real_diag(r, r, &self.singulars);
        &(&self.left * &s) * &self.right.adjoint()
    }
}

const JACOBI_MAX_SWEEPS: usize = 80;

/// Singular value decomposition by one-sided (Hestenes) Jacobi rotations.
pub fn svd(a: &CMat) -> Result<SvdResult> {
    if !a.is_finite() {
        return Err(Error::Invalid("svd input has non-finite entries".into()));
    }
    if a.rows() >= a.cols() {
        let (left, singulars, right) = jacobi_tall(a)?;
        Ok(canonical_phase(SvdResult {
            left,
            singulars,
            right,
        }))
    } else {
        let (u, singulars, v) = jacobi_tall(&a.adjoint())?;
        Ok(canonical_phase(SvdResult {
            left: v,
            singulars,
            right: u,
        }))
    }
}

fn canonical_phase(mut s: SvdResult) -> SvdResult {
    for j in 0..s.singulars.len() {
        let lead = s.right[(0, j)];
        let mag = lead.norm();
        if mag > 0.0 {
            let rot = lead.conj() / mag;
            for i in 0..s.right.rows() {
                s.right[(i, j)] *= rot;
            }
            for i in 0..s.left.rows() {
                s.left[(i, j)] *= rot;
            }
        }
    }
    s
}

/// Jacobi on the columns of a tall (rows >= cols) matrix.
fn jacobi_tall(a: &CMat) -> Result<(CMat, Vec<f64>, CMat)> {
    let (m, n) = a.shape();
    // Work column-major: cols[j] is column j.
    let mut cols: Vec<Vec<C64>> = (0..n).map(|j| a.col(j)).collect();
    let mut v: Vec<Vec<C64>> = (0..n)
        .map(|j| {
            let mut e = vec![C64::new(0.0, 0.0); n];
            e[j] = C64::new(1.0, 0.0);
            e
        })
        .collect();
    let tol = f64::EPSILON * (m.max(1) as f64);

    let mut converged = n < 2;
    let mut sweeps = 0;
    let mut off = 0.0;
    while !converged && sweeps < JACOBI_MAX_SWEEPS {
        sweeps += 1;
        let mut rotated = false;
        off = 0.0;
        for p in 0..n - 1 {
            for q in p + 1..n {
                let alpha: f64 = cols[p].iter().map(|z| z.norm_sqr()).sum();
                let beta: f64 = cols[q].iter().map(|z| z.norm_sqr()).sum();
                let gamma: C64 = cols[p].iter().zip(&cols[q]).map(|(x, y)| x.conj() * y).sum();
                let g = gamma.norm();
                if alpha == 0.0 || beta == 0.0 || g == 0.0 {
                    continue;
                }
                let rel = g / (alpha * beta).sqrt();
                off = f64::max(off, rel);
                if rel <= tol {
                    continue;
                }
                rotated = true;
                let phase = gamma / g; // e^{j phi}
                let zeta = (beta - alpha) / (2.0 * g);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let ph_conj = phase.conj();
                // Rotate [x, y e^{-j phi}] by the real Jacobi rotation.
                for (x, y) in split_pair(&mut cols, p, q) {
                    let yt = *y * ph_conj;
                    let nx = *x * c - yt * s;
                    let ny = *x * s + yt * c;
                    *x = nx;
                    *y = ny;
                }
                for (x, y) in split_pair(&mut v, p, q) {
                    let yt = *y * ph_conj;
                    let nx = *x * c - yt * s;
                    let ny = *x * s + yt * c;
                    *x = nx;
                    *y = ny;
                }
            }
        }
        converged = !rotated;
    }
    if !converged {
        return Err(Error::SvdNoConvergence {
            sweeps,
            norm: a.norm(),
            off,
        });
    }

    let mut order: Vec<(f64, usize)> = cols
        .iter()
        .enumerate()
        .map(|(j, c)| (c.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt(), j))
        .collect();
    order.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));

    let mut left = CMat::zeros(m, n);
    let mut right = CMat::zeros(n, n);
    let mut singulars = Vec::with_capacity(n);
    let mut missing = Vec::new();
    for (k, &(sigma, j)) in order.iter().enumerate() {
        singulars.push(sigma);
        right.set_col(k, &v[j]);
        if sigma > f64::MIN_POSITIVE * 1e10 {
            let u: Vec<C64> = cols[j].iter().map(|z| z / sigma).collect();
            left.set_col(k, &u);
        } else {
            missing.push(k);
        }
    }
    complete_basis(&mut left, &missing);
    Ok((left, singulars, right))
}

fn split_pair<T>(v: &mut [Vec<T>], p: usize, q: usize) -> impl Iterator<Item = (&mut T, &mut T)> {
    debug_assert!(p < q);
    let (lo, hi) = v.split_at_mut(q);
    lo[p].iter_mut().zip(hi[0].iter_mut())
}

/// Fills the listed columns with unit vectors orthogonal to all other columns.
fn complete_basis(q: &mut CMat, missing: &[usize]) {
    let m = q.rows();
    let mut filled: Vec<usize> = (0..q.cols()).filter(|j| !missing.contains(j)).collect();
    let mut candidate = 0;
    for &k in missing {
        while candidate < m {
            let mut e = vec![C64::new(0.0, 0.0); m];
            e[candidate] = C64::new(1.0, 0.0);
            candidate += 1;
            // Two passes of modified Gram-Schmidt.
            for _ in 0..2 {
                for &j in &filled {
                    let proj: C64 = (0..m).map(|i| q[(i, j)].conj() * e[i]).sum();
                    for (i, ei) in e.iter_mut().enumerate() {
                        *ei -= q[(i, j)] * proj;
                    }
                }
            }
            let norm = e.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            if norm > 1e-6 {
                let e: Vec<C64> = e.iter().map(|z| z / norm).collect();
                q.set_col(k, &e);
                filled.push(k);
                break;
            }
        }
    }
}

/// Least-squares solution of `a x = b` for full-column-rank `a`.
pub fn lstsq(a: &CMat, b: &CMat) -> Result<CMat> {
    if a.rows() != b.rows() {
        return Err(Error::Dimension(format!(
            "lstsq: a is {}x{}, b is {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    if a.rows() < a.cols() {
        return Err(Error::RankDeficient(format!(
            "lstsq: {}x{} system cannot have full column rank",
            a.rows(),
            a.cols()
        )));
    }
    let s = svd(a)?;
    let smax = s.singulars.first().copied().unwrap_or(0.0);
    let smin = s.singulars.last().copied().unwrap_or(0.0);
    if smax == 0.0 || smin < 1e-12 * smax {
        return Err(Error::RankDeficient(format!(
            "lstsq: singular values span [{smin:.3e}, {smax:.3e}]"
        )));
    }
    // x = V diag(1/s) U^H b
    let mut ub = s.left.adjoint_mul(b);
    for (i, &sigma) in s.singulars.iter().enumerate() {
        for j in 0..ub.cols() {
            ub[(i, j)] /= sigma;
        }
    }
    Ok(&s.right * &ub)
}

/// Lower Cholesky factor of a Hermitian positive definite matrix.
pub fn cholesky(a: &CMat) -> Result<CMat> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::Dimension(format!(
            "cholesky of a non-square {}x{} matrix",
            a.rows(),
            a.cols()
        )));
    }
    let scale = a.norm().max(1.0);
    if a.hermitian_deviation() > 1e-10 * scale {
        return Err(Error::NotPositiveDefinite(format!(
            "hermitian deviation {:.3e}",
            a.hermitian_deviation()
        )));
    }
    let mut l = CMat::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)].re;
        for k in 0..j {
            d -= l[(j, k)].norm_sqr();
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::NotPositiveDefinite(format!(
                "pivot {j} is {d:.3e}"
            )));
        }
        let d = d.sqrt();
        l[(j, j)] = C64::new(d, 0.0);
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)].conj();
            }
            l[(i, j)] = s / d;
        }
    }
    Ok(l)
}

/// Solves `l x = b` for lower-triangular `l`.
pub fn solve_lower(l: &CMat, b: &CMat) -> CMat {
    let n = l.rows();
    let mut x = b.clone();
    for c in 0..b.cols() {
        for i in 0..n {
            let mut s = x[(i, c)];
            for k in 0..i {
                s -= l[(i, k)] * x[(k, c)];
            }
            x[(i, c)] = s / l[(i, i)];
        }
    }
    x
}

/// Solves `l^H x = b` for lower-triangular `l`.
pub fn solve_lower_adjoint(l: &CMat, b: &CMat) -> CMat {
    let n = l.rows();
    let mut x = b.clone();
    for c in 0..b.cols() {
        for i in (0..n).rev() {
            let mut s = x[(i, c)];
            for k in i + 1..n {
                s -= l[(k, i)].conj() * x[(k, c)];
            }
            x[(i, c)] = s / l[(i, i)];
        }
    }
    x
}

/// Solves `a x = b` for Hermitian positive definite `a`.
pub fn solve_hpd(a: &CMat, b: &CMat) -> Result<CMat> {
    if a.rows() != b.rows() {
        return Err(Error::Dimension(format!(
            "solve_hpd: a is {}x{}, b has {} rows",
            a.rows(),
            a.cols(),
            b.rows()
        )));
    }
    let l = cholesky(a)?;
    Ok(solve_lower_adjoint(&l, &solve_lower(&l, b)))
}

/// `log2 det(a)` for Hermitian positive definite `a`, from the Cholesky pivots.
pub fn logdet2_hpd(a: &CMat) -> Result<f64> {
    let l = cholesky(a)?;
    Ok((0..l.rows()).map(|i| 2.0 * l[(i, i)].re.log2()).sum())
}
