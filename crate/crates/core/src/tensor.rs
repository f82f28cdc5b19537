//! Dense vectors, row-major matrices and third-order tensors.
//!
//! Everything here is `f64` and dense. `Tensor3` stores entry `(i, j, k)` at
//! `(i * dim2 + j) * dim3 + k`, so the last index varies fastest.
//!
//! Two orderings have to agree for the gated (Kronecker) prediction paths:
//!
//! * [`kron`] emits `[u0 v0, u1 v0, .., u(n-1) v0, u0 v1, ..]`, i.e. the
//!   first argument varies fastest;
//! * [`Tensor3::mode2_unfold`] lays out column `i + k * dim1` for the index
//!   pair `(i, k)`, i.e. the mode-1 index varies fastest.
//!
//! With both conventions `kron(a, c) · S₍₂₎ᵀ` contracts `a` against mode 1 and
//! `c` against mode 3 of `S`.

use std::ops::{Index, IndexMut};

use crate::error::{shape_err, Error, Result};

fn check_finite(data: &[f64], what: &str) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::InvalidValue(format!(
            "{what} entry {i} is not finite ({})",
            data[i]
        ))),
        None => Ok(()),
    }
}

/// Dense real vector of length ≥ 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(data: Vec<f64>) -> Result<Self> {
        if data.is_empty() {
            return shape_err("vector must have length >= 1");
        }
        check_finite(&data, "vector")?;
        Ok(Vector(data))
    }

    pub fn zeros(len: usize) -> Self {
        assert!(len >= 1, "vector must have length >= 1");
        Vector(vec![0.0; len])
    }

    /// Standard basis vector `e_index`.
    pub fn basis(len: usize, index: usize) -> Self {
        let mut v = Vector::zeros(len);
        v.0[index] = 1.0;
        v
    }

    pub(crate) fn from_vec_unchecked(data: Vec<f64>) -> Self {
        debug_assert!(!data.is_empty());
        Vector(data)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn dot(&self, other: &Vector) -> Result<f64> {
        if self.len() != other.len() {
            return shape_err(format!(
                "dot of lengths {} and {}",
                self.len(),
                other.len()
            ));
        }
        Ok(dot(&self.0, &other.0))
    }

    pub fn scaled(&self, alpha: f64) -> Vector {
        Vector(self.0.iter().map(|v| alpha * v).collect())
    }

    /// `self * alpha + other * beta`
    pub fn axpby(&self, alpha: f64, other: &Vector, beta: f64) -> Result<Vector> {
        if self.len() != other.len() {
            return shape_err(format!(
                "linear combination of lengths {} and {}",
                self.len(),
                other.len()
            ));
        }
        Ok(Vector(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| alpha * a + beta * b)
                .collect(),
        ))
    }
}

impl Index<usize> for Vector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl AsRef<[f64]> for Vector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return shape_err(format!("matrix dims must be positive, got {rows}x{cols}"));
        }
        if data.len() != rows * cols {
            return shape_err(format!(
                "matrix {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                data.len()
            ));
        }
        check_finite(&data, "matrix")?;
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dims must be positive");
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Matrix::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                m[(r, c)] = f(r, c);
            }
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return shape_err("ragged rows");
        }
        Matrix::new(rows.len(), cols, rows.concat())
    }

    /// Matrix whose columns are the given vectors.
    pub fn from_columns(cols: &[&[f64]]) -> Result<Self> {
        let rows = cols.first().map_or(0, |c| c.len());
        if cols.iter().any(|c| c.len() != rows) {
            return shape_err("columns of unequal length");
        }
        if rows == 0 || cols.is_empty() {
            return shape_err("empty column set");
        }
        let mut m = Matrix::zeros(rows, cols.len());
        for (j, c) in cols.iter().enumerate() {
            for (i, v) in c.iter().enumerate() {
                m[(i, j)] = *v;
            }
        }
        Ok(m)
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

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |r, c| self[(c, r)])
    }

    /// `self · v`
    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return shape_err(format!(
                "{}x{} matrix times length-{} vector",
                self.rows,
                self.cols,
                v.len()
            ));
        }
        Ok(self.matvec_raw(v))
    }

    pub(crate) fn matvec_raw(&self, v: &[f64]) -> Vec<f64> {
        (0..self.rows).map(|r| dot(self.row(r), v)).collect()
    }

    /// `selfᵀ · v`
    pub fn t_matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.rows {
            return shape_err(format!(
                "transpose of {}x{} matrix times length-{} vector",
                self.rows,
                self.cols,
                v.len()
            ));
        }
        Ok(self.t_matvec_raw(v))
    }

    pub(crate) fn t_matvec_raw(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (r, vr) in v.iter().enumerate() {
            if *vr == 0.0 {
                continue;
            }
            for (o, m) in out.iter_mut().zip(self.row(r)) {
                *o += vr * m;
            }
        }
        out
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return shape_err(format!(
                "{}x{} times {}x{}",
                self.rows, self.cols, other.rows, other.cols
            ));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let orow = other.row(k);
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, b) in dst.iter_mut().zip(orow) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

/// Tensor mode selector for [`Tensor3::mode_product`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    First,
    Second,
    Third,
}

impl Mode {
    pub fn from_index(mode: usize) -> Result<Mode> {
        match mode {
            1 => Ok(Mode::First),
            2 => Ok(Mode::Second),
            3 => Ok(Mode::Third),
            m => Err(Error::InvalidValue(format!("tensor mode must be 1, 2 or 3, got {m}"))),
        }
    }

    fn number(self) -> usize {
        match self {
            Mode::First => 1,
            Mode::Second => 2,
            Mode::Third => 3,
        }
    }
}

/// Dense third-order tensor, last index fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    dims: [usize; 3],
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn new(dims: [usize; 3], data: Vec<f64>) -> Result<Self> {
        if dims.contains(&0) {
            return shape_err(format!("tensor dims must be positive, got {dims:?}"));
        }
        let n = dims.iter().product::<usize>();
        if data.len() != n {
            return shape_err(format!(
                "tensor {dims:?} needs {n} entries, got {}",
                data.len()
            ));
        }
        check_finite(&data, "tensor")?;
        Ok(Tensor3 { dims, data })
    }

    pub fn zeros(dims: [usize; 3]) -> Self {
        assert!(!dims.contains(&0), "tensor dims must be positive");
        Tensor3 {
            dims,
            data: vec![0.0; dims.iter().product()],
        }
    }

    pub fn from_fn(dims: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut t = Tensor3::zeros(dims);
        for i in 0..dims[0] {
            for j in 0..dims[1] {
                for k in 0..dims[2] {
                    t[(i, j, k)] = f(i, j, k);
                }
            }
        }
        t
    }

    /// `K×K×K` tensor with ones on the superdiagonal `(k, k, k)`.
    pub fn superdiagonal(k: usize) -> Self {
        Tensor3::from_fn([k, k, k], |i, j, l| if i == j && j == l { 1.0 } else { 0.0 })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    fn offset(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dims[1] + j) * self.dims[2] + k
    }

    /// Contract with `v` along `mode`. The result keeps the other two modes
    /// in ascending order.
    pub fn mode_product(&self, v: &[f64], mode: Mode) -> Result<Matrix> {
        let [d1, d2, d3] = self.dims;
        let n = mode.number();
        if v.len() != self.dims[n - 1] {
            return shape_err(format!(
                "mode-{n} product needs a length-{} vector, got length {}",
                self.dims[n - 1],
                v.len()
            ));
        }
        let out = match mode {
            Mode::First => {
                let mut m = Matrix::zeros(d2, d3);
                for (i, vi) in v.iter().enumerate() {
                    let slab = &self.data[i * d2 * d3..(i + 1) * d2 * d3];
                    for (o, t) in m.data.iter_mut().zip(slab) {
                        *o += vi * t;
                    }
                }
                m
            }
            Mode::Second => Matrix::from_fn(d1, d3, |i, k| {
                (0..d2).map(|j| self[(i, j, k)] * v[j]).sum()
            }),
            Mode::Third => Matrix::from_fn(d1, d2, |i, j| {
                let o = self.offset(i, j, 0);
                dot(&self.data[o..o + d3], v)
            }),
        };
        Ok(out)
    }

    /// Frontal slice `t[:, :, k]`.
    pub fn frontal_slice(&self, k: usize) -> Matrix {
        Matrix::from_fn(self.dims[0], self.dims[1], |i, j| self[(i, j, k)])
    }

    /// Mode-2 matricisation: `dim2 × (dim1·dim3)`, column `i + k·dim1`.
    pub fn mode2_unfold(&self) -> Matrix {
        let [d1, d2, d3] = self.dims;
        let mut m = Matrix::zeros(d2, d1 * d3);
        for i in 0..d1 {
            for j in 0..d2 {
                for k in 0..d3 {
                    m[(j, i + k * d1)] = self[(i, j, k)];
                }
            }
        }
        m
    }

    /// Inverse of [`Tensor3::mode2_unfold`].
    pub fn mode2_refold(m: &Matrix, dims: [usize; 3]) -> Result<Tensor3> {
        let [d1, d2, d3] = dims;
        if m.shape() != (d2, d1 * d3) {
            return shape_err(format!(
                "cannot refold {}x{} into {dims:?}",
                m.rows(),
                m.cols()
            ));
        }
        Ok(Tensor3::from_fn(dims, |i, j, k| m[(j, i + k * d1)]))
    }

    /// `S₍₂₎ · v` without materialising the unfolding; `v` is indexed like a
    /// column of the unfolding (mode-1 index fastest).
    pub(crate) fn mode2_unfold_matvec(&self, v: &[f64]) -> Vec<f64> {
        let [d1, d2, d3] = self.dims;
        debug_assert_eq!(v.len(), d1 * d3);
        let mut out = vec![0.0; d2];
        for i in 0..d1 {
            for (j, o) in out.iter_mut().enumerate() {
                let base = self.offset(i, j, 0);
                let mut acc = 0.0;
                for k in 0..d3 {
                    acc += self.data[base + k] * v[i + k * d1];
                }
                *o += acc;
            }
        }
        out
    }
}

impl Index<(usize, usize, usize)> for Tensor3 {
    type Output = f64;
    fn index(&self, (i, j, k): (usize, usize, usize)) -> &f64 {
        debug_assert!(i < self.dims[0] && j < self.dims[1] && k < self.dims[2]);
        &self.data[self.offset(i, j, k)]
    }
}

impl IndexMut<(usize, usize, usize)> for Tensor3 {
    fn index_mut(&mut self, (i, j, k): (usize, usize, usize)) -> &mut f64 {
        debug_assert!(i < self.dims[0] && j < self.dims[1] && k < self.dims[2]);
        let o = self.offset(i, j, k);
        &mut self.data[o]
    }
}

/// Kronecker product layer: `[u0 v0, u1 v0, …, u0 v1, …]`.
pub fn kron(u: &[f64], v: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(u.len() * v.len());
    for vb in v {
        out.extend(u.iter().map(|ua| ua * vb));
    }
    out
}

/// Hadamard product layer.
pub fn hadamard(u: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    if u.len() != v.len() {
        return shape_err(format!(
            "hadamard product of lengths {} and {}",
            u.len(),
            v.len()
        ));
    }
    Ok(u.iter().zip(v).map(|(a, b)| a * b).collect())
}

pub fn outer3(a: &[f64], b: &[f64], c: &[f64]) -> Tensor3 {
    Tensor3::from_fn([a.len(), b.len(), c.len()], |i, j, k| a[i] * b[j] * c[k])
}

/// `W[d,c,b] = Σ_k U_D[k,d] U_C[k,c] U_B[k,b]`
pub fn compose_cp(u_d: &Matrix, u_c: &Matrix, u_b: &Matrix) -> Result<Tensor3> {
    let k = u_d.rows();
    if u_c.rows() != k || u_b.rows() != k {
        return shape_err(format!(
            "CP factors need a shared rank, got {}, {}, {}",
            k,
            u_c.rows(),
            u_b.rows()
        ));
    }
    let mut w = Tensor3::zeros([u_d.cols(), u_c.cols(), u_b.cols()]);
    for r in 0..k {
        w.data
            .iter_mut()
            .zip(outer3(u_d.row(r), u_c.row(r), u_b.row(r)).data)
            .for_each(|(dst, v)| *dst += v);
    }
    Ok(w)
}

/// `W = S ×₁ U_Dᵀ ×₂ U_Cᵀ ×₃ U_Bᵀ` with factors stored rank-major
/// (`K_D×D`, `K_C×C`, `K_B×B`).
pub fn compose_tucker(s: &Tensor3, u_d: &Matrix, u_c: &Matrix, u_b: &Matrix) -> Result<Tensor3> {
    let [kd, kc, kb] = s.dims();
    if u_d.rows() != kd || u_c.rows() != kc || u_b.rows() != kb {
        return shape_err(format!(
            "Tucker core {:?} does not match factor ranks ({}, {}, {})",
            s.dims(),
            u_d.rows(),
            u_c.rows(),
            u_b.rows()
        ));
    }
    // Contract one mode at a time: S (kd,kc,kb) -> (d,kc,kb) -> (d,c,kb) -> (d,c,b).
    let (d, c, b) = (u_d.cols(), u_c.cols(), u_b.cols());
    let t1 = Tensor3::from_fn([d, kc, kb], |i, j, k| {
        (0..kd).map(|r| u_d[(r, i)] * s[(r, j, k)]).sum()
    });
    let t2 = Tensor3::from_fn([d, c, kb], |i, j, k| {
        (0..kc).map(|r| u_c[(r, j)] * t1[(i, r, k)]).sum()
    });
    Ok(Tensor3::from_fn([d, c, b], |i, j, k| {
        (0..kb).map(|r| u_b[(r, k)] * t2[(i, j, r)]).sum()
    }))
}

/// `W[d,c,b] = Σ U_D[d,k_D] S[k_D,c,k_B] U_B[k_B,b]` with `U_D` stored `D×K_D`.
pub fn compose_tt(u_d: &Matrix, s: &Tensor3, u_b: &Matrix) -> Result<Tensor3> {
    let [kd, c, kb] = s.dims();
    if u_d.cols() != kd || u_b.rows() != kb {
        return shape_err(format!(
            "TT chain broken: U_D is {}x{}, core {:?}, U_B is {}x{}",
            u_d.rows(),
            u_d.cols(),
            s.dims(),
            u_b.rows(),
            u_b.cols()
        ));
    }
    let (d, b) = (u_d.rows(), u_b.cols());
    let t1 = Tensor3::from_fn([d, c, kb], |i, j, k| {
        (0..kd).map(|r| u_d[(i, r)] * s[(r, j, k)]).sum()
    });
    Ok(Tensor3::from_fn([d, c, b], |i, j, k| {
        (0..kb).map(|r| t1[(i, j, r)] * u_b[(r, k)]).sum()
    }))
}
