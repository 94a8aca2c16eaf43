//! Dense row-major matrices and the Kronecker-family kernels.
//!
//! Flattening is always row-major (`vecr`): entry `(i, j)` of an `m x n`
//! matrix lands at index `i * n + j`. Every derivative in the crate is laid
//! out against this convention, in numerator layout.
//!
//! Kronecker-type constructions are materialized densely. Each constructor
//! checks the requested output size against an element cap and fails with
//! [`Error::SizeLimit`] instead of allocating.

use std::fmt;
use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub};

use nalgebra::DMatrix;

use crate::error::{shape_err, Error, Result};

/// Default cap on the number of scalars a single materialized matrix may hold.
pub const DEFAULT_ELEMENT_CAP: usize = 1 << 26;

#[derive(Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Mat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Mat {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            write!(f, "  ")?;
            for c in 0..self.cols {
                write!(f, "{:>12.5e} ", self[(r, c)])?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

fn check_cap(what: impl FnOnce() -> String, rows: usize, cols: usize, cap: usize) -> Result<()> {
    let requested = rows as u128 * cols as u128;
    if requested > cap as u128 {
        return Err(Error::SizeLimit {
            what: what(),
            requested,
            cap,
        });
    }
    Ok(())
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
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

    /// Builds a matrix from row-major data, rejecting bad shapes and non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Dimension(format!("{rows}x{cols} matrix")));
        }
        if data.len() != rows * cols {
            return Err(shape_err(
                "Mat::from_vec",
                format!("{} entries", rows * cols),
                format!("{} entries", data.len()),
            ));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("Mat::from_vec"));
        }
        Ok(Self { rows, cols, data })
    }

    /// Panics on ragged input; meant for literals in tests and examples.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows[0].as_ref().len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                m.data[r * cols + c] = f(r, c);
            }
        }
        m
    }

    pub fn column(values: &[f64]) -> Self {
        Self {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
    }

    pub fn row(values: &[f64]) -> Self {
        Self {
            rows: 1,
            cols: values.len(),
            data: values.to_vec(),
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            rows: 1,
            cols: 1,
            data: vec![v],
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row_slice(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }

    pub fn scale(&self, s: f64) -> Mat {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| x * s).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Mat {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Matrix product that reports a shape error instead of panicking.
    pub fn try_dot(&self, rhs: &Mat) -> Result<Mat> {
        if self.cols != rhs.rows {
            return Err(shape_err(
                "matmul",
                format!("lhs cols == rhs rows ({})", self.cols),
                format!("{}x{} * {}x{}", self.rows, self.cols, rhs.rows, rhs.cols),
            ));
        }
        Ok(self.dot(rhs))
    }

    /// Matrix product. Zero entries of `self` are skipped, which keeps the
    /// products with commutation and identity-Kronecker factors cheap.
    pub fn dot(&self, rhs: &Mat) -> Mat {
        assert_eq!(
            self.cols, rhs.rows,
            "matmul shape mismatch: {}x{} * {}x{}",
            self.rows, self.cols, rhs.rows, rhs.cols
        );
        let (n, m) = (self.rows, rhs.cols);
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let a_row = &self.data[i * self.cols..(i + 1) * self.cols];
            let o_row = &mut out[i * m..(i + 1) * m];
            for (k, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = &rhs.data[k * m..(k + 1) * m];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Mat {
            rows: n,
            cols: m,
            data: out,
        }
    }

    /// `selfᵀ · rhs` without materializing the transpose.
    pub fn t_dot(&self, rhs: &Mat) -> Mat {
        assert_eq!(self.rows, rhs.rows, "t_dot shape mismatch");
        let (n, m) = (self.cols, rhs.cols);
        let mut out = vec![0.0; n * m];
        for k in 0..self.rows {
            let a_row = self.row_slice(k);
            let b_row = rhs.row_slice(k);
            for (i, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let o_row = &mut out[i * m..(i + 1) * m];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Mat {
            rows: n,
            cols: m,
            data: out,
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&x| x == 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Largest `|m[i,j] - m[j,i]|`; infinite for non-square input.
    pub fn asymmetry(&self) -> f64 {
        if self.rows != self.cols {
            return f64::INFINITY;
        }
        let mut worst = 0.0f64;
        for r in 0..self.rows {
            for c in r + 1..self.cols {
                worst = worst.max((self[(r, c)] - self[(c, r)]).abs());
            }
        }
        worst
    }

    pub fn symmetrized(&self) -> Mat {
        let t = self.transpose();
        (self + &t).scale(0.5)
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn submatrix(&self, row0: usize, col0: usize, rows: usize, cols: usize) -> Mat {
        assert!(
            row0 + rows <= self.rows && col0 + cols <= self.cols,
            "submatrix out of range"
        );
        Mat::from_fn(rows, cols, |r, c| self[(row0 + r, col0 + c)])
    }

    pub fn set_block(&mut self, row0: usize, col0: usize, block: &Mat) {
        assert!(
            row0 + block.rows <= self.rows && col0 + block.cols <= self.cols,
            "block out of range"
        );
        for r in 0..block.rows {
            let dst = (row0 + r) * self.cols + col0;
            self.data[dst..dst + block.cols].copy_from_slice(block.row_slice(r));
        }
    }

    pub fn hstack(parts: &[&Mat]) -> Result<Mat> {
        let rows = parts[0].rows;
        if parts.iter().any(|p| p.rows != rows) {
            return Err(shape_err(
                "hstack",
                format!("{rows} rows"),
                "ragged row counts",
            ));
        }
        let cols = parts.iter().map(|p| p.cols).sum();
        let mut out = Mat::zeros(rows, cols);
        let mut c0 = 0;
        for p in parts {
            out.set_block(0, c0, p);
            c0 += p.cols;
        }
        Ok(out)
    }

    pub fn vstack(parts: &[&Mat]) -> Result<Mat> {
        let cols = parts[0].cols;
        if parts.iter().any(|p| p.cols != cols) {
            return Err(shape_err(
                "vstack",
                format!("{cols} cols"),
                "ragged column counts",
            ));
        }
        let rows = parts.iter().map(|p| p.rows).sum();
        let mut out = Mat::zeros(rows, cols);
        let mut r0 = 0;
        for p in parts {
            out.set_block(r0, 0, p);
            r0 += p.rows;
        }
        Ok(out)
    }

    /// Reinterprets the row-major buffer with a new shape.
    pub fn reshape(&self, rows: usize, cols: usize) -> Result<Mat> {
        if rows * cols != self.data.len() {
            return Err(shape_err(
                "reshape",
                format!("{} entries", self.data.len()),
                format!("{rows}x{cols}"),
            ));
        }
        Ok(Mat {
            rows,
            cols,
            data: self.data.clone(),
        })
    }

    pub fn to_nalgebra(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    pub fn from_nalgebra(m: &DMatrix<f64>) -> Mat {
        Mat::from_fn(m.nrows(), m.ncols(), |r, c| m[(r, c)])
    }
}

impl Index<(usize, usize)> for Mat {
    type Output = f64;
    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for Mat {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

impl Mul for &Mat {
    type Output = Mat;
    fn mul(self, rhs: &Mat) -> Mat {
        self.dot(rhs)
    }
}

impl Add for &Mat {
    type Output = Mat;
    fn add(self, rhs: &Mat) -> Mat {
        assert_eq!(self.shape(), rhs.shape(), "add shape mismatch");
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }
}

impl Sub for &Mat {
    type Output = Mat;
    fn sub(self, rhs: &Mat) -> Mat {
        assert_eq!(self.shape(), rhs.shape(), "sub shape mismatch");
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }
}

impl AddAssign<&Mat> for Mat {
    fn add_assign(&mut self, rhs: &Mat) {
        assert_eq!(self.shape(), rhs.shape(), "add shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&rhs.data) {
            *a += b;
        }
    }
}

impl Neg for &Mat {
    type Output = Mat;
    fn neg(self) -> Mat {
        self.scale(-1.0)
    }
}

/// Row-major flattening as a column vector.
pub fn vecr(m: &Mat) -> Mat {
    Mat::column(m.as_slice())
}

/// Inverse of [`vecr`].
pub fn unvecr(v: &Mat, rows: usize, cols: usize) -> Result<Mat> {
    v.reshape(rows, cols)
}

pub fn kron(a: &Mat, b: &Mat) -> Result<Mat> {
    kron_capped(a, b, DEFAULT_ELEMENT_CAP)
}

/// Kronecker product; block `(i, j)` of the result is `a[i, j] * b`.
pub fn kron_capped(a: &Mat, b: &Mat, cap: usize) -> Result<Mat> {
    let (rows, cols) = (a.rows * b.rows, a.cols * b.cols);
    check_cap(
        || format!("kron of {}x{} and {}x{}", a.rows, a.cols, b.rows, b.cols),
        rows,
        cols,
        cap,
    )?;
    let mut out = Mat::zeros(rows, cols);
    for i in 0..a.rows {
        for j in 0..a.cols {
            let s = a[(i, j)];
            if s == 0.0 {
                continue;
            }
            for p in 0..b.rows {
                let dst = (i * b.rows + p) * cols + j * b.cols;
                let src = b.row_slice(p);
                for (o, &x) in out.data[dst..dst + b.cols].iter_mut().zip(src) {
                    *o = s * x;
                }
            }
        }
    }
    Ok(out)
}

/// Kronecker product of a chain of factors, left to right.
pub fn kron_chain(factors: &[&Mat], cap: usize) -> Result<Mat> {
    let mut acc = factors[0].clone();
    for f in &factors[1..] {
        acc = kron_capped(&acc, f, cap)?;
    }
    Ok(acc)
}

/// [`commutation_capped`] with the default element cap.
pub fn commutation(n: usize, m: usize) -> Result<Mat> {
    commutation_capped(n, m, DEFAULT_ELEMENT_CAP)
}

/// Commutation matrix `K_{n,m}` of size `mn x mn`: for any `m x n` matrix `A`,
/// `K_{n,m} vecr(A) = vecr(Aᵀ)`.
pub fn commutation_capped(n: usize, m: usize, cap: usize) -> Result<Mat> {
    if n == 0 || m == 0 {
        return Err(Error::Dimension(format!("commutation({n}, {m})")));
    }
    let size = n * m;
    check_cap(|| format!("commutation({n}, {m})"), size, size, cap)?;
    let mut k = Mat::zeros(size, size);
    // Row (q, p) of vecr(Aᵀ) reads entry (p, q) of A.
    for q in 0..n {
        for p in 0..m {
            k[(q * m + p, p * n + q)] = 1.0;
        }
    }
    Ok(k)
}

/// Sizes of the row and column blocks a matrix is split into.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockPartition {
    pub row_sizes: Vec<usize>,
    pub col_sizes: Vec<usize>,
}

impl BlockPartition {
    pub fn new(row_sizes: Vec<usize>, col_sizes: Vec<usize>) -> Result<Self> {
        if row_sizes.is_empty() || col_sizes.is_empty() {
            return Err(Error::Partition("empty block list".into()));
        }
        if row_sizes.iter().chain(&col_sizes).any(|&s| s == 0) {
            return Err(Error::Partition("zero-sized block".into()));
        }
        Ok(Self {
            row_sizes,
            col_sizes,
        })
    }

    /// A single block covering the whole matrix.
    pub fn trivial(m: &Mat) -> Self {
        Self {
            row_sizes: vec![m.rows()],
            col_sizes: vec![m.cols()],
        }
    }

    /// `count` equal row blocks, one column block.
    pub fn uniform_rows(m: &Mat, count: usize) -> Result<Self> {
        if count == 0 || !m.rows().is_multiple_of(count) {
            return Err(Error::Partition(format!(
                "{} rows do not split into {count} equal blocks",
                m.rows()
            )));
        }
        Self::new(vec![m.rows() / count; count], vec![m.cols()])
    }

    pub fn grid_shape(&self) -> (usize, usize) {
        (self.row_sizes.len(), self.col_sizes.len())
    }

    fn check(&self, m: &Mat) -> Result<()> {
        let (r, c): (usize, usize) = (self.row_sizes.iter().sum(), self.col_sizes.iter().sum());
        if (r, c) != m.shape() {
            return Err(Error::Partition(format!(
                "partition covers {r}x{c} but matrix is {}x{}",
                m.rows(),
                m.cols()
            )));
        }
        Ok(())
    }
}

/// A matrix cut into a rectangular grid of blocks.
#[derive(Clone, Debug)]
pub struct BlockGrid {
    blocks: Vec<Vec<Mat>>,
}

impl BlockGrid {
    pub fn split(m: &Mat, p: &BlockPartition) -> Result<Self> {
        p.check(m)?;
        let mut blocks = Vec::with_capacity(p.row_sizes.len());
        let mut r0 = 0;
        for &rs in &p.row_sizes {
            let mut row = Vec::with_capacity(p.col_sizes.len());
            let mut c0 = 0;
            for &cs in &p.col_sizes {
                row.push(m.submatrix(r0, c0, rs, cs));
                c0 += cs;
            }
            blocks.push(row);
            r0 += rs;
        }
        Ok(Self { blocks })
    }

    /// Builds a grid from explicit blocks; rows of blocks must agree in height
    /// and columns of blocks in width.
    pub fn from_blocks(blocks: Vec<Vec<Mat>>) -> Result<Self> {
        if blocks.is_empty() || blocks[0].is_empty() {
            return Err(Error::Partition("empty block grid".into()));
        }
        let ncols = blocks[0].len();
        for row in &blocks {
            if row.len() != ncols {
                return Err(Error::Partition("ragged block grid".into()));
            }
            if row.iter().any(|b| b.rows() != row[0].rows()) {
                return Err(Error::Partition(
                    "block heights differ within a block row".into(),
                ));
            }
        }
        for j in 0..ncols {
            if blocks
                .iter()
                .any(|row| row[j].cols() != blocks[0][j].cols())
            {
                return Err(Error::Partition(
                    "block widths differ within a block column".into(),
                ));
            }
        }
        Ok(Self { blocks })
    }

    pub fn grid_shape(&self) -> (usize, usize) {
        (self.blocks.len(), self.blocks[0].len())
    }

    pub fn block(&self, i: usize, j: usize) -> &Mat {
        &self.blocks[i][j]
    }

    pub fn partition(&self) -> BlockPartition {
        BlockPartition {
            row_sizes: self.blocks.iter().map(|r| r[0].rows()).collect(),
            col_sizes: self.blocks[0].iter().map(|b| b.cols()).collect(),
        }
    }

    pub fn assemble(&self) -> Mat {
        let rows: Vec<Mat> = self
            .blocks
            .iter()
            .map(|r| Mat::hstack(&r.iter().collect::<Vec<_>>()).expect("validated grid"))
            .collect();
        Mat::vstack(&rows.iter().collect::<Vec<_>>()).expect("validated grid")
    }

    /// Blockwise Kronecker product of two grids of equal shape.
    pub fn khatri_rao(&self, other: &BlockGrid, cap: usize) -> Result<BlockGrid> {
        if self.grid_shape() != other.grid_shape() {
            return Err(Error::Partition(format!(
                "block grids {:?} and {:?} differ",
                self.grid_shape(),
                other.grid_shape()
            )));
        }
        let blocks = self
            .blocks
            .iter()
            .zip(&other.blocks)
            .map(|(ra, rb)| {
                ra.iter()
                    .zip(rb)
                    .map(|(a, b)| kron_capped(a, b, cap))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        BlockGrid::from_blocks(blocks)
    }
}

/// Khatri-Rao product: block `(i, j)` of the result is `kron(a_ij, b_ij)`.
pub fn khatri_rao(a: &Mat, pa: &BlockPartition, b: &Mat, pb: &BlockPartition) -> Result<Mat> {
    if pa.grid_shape() != pb.grid_shape() {
        return Err(Error::Partition(format!(
            "grid shapes {:?} and {:?} differ",
            pa.grid_shape(),
            pb.grid_shape()
        )));
    }
    let ga = BlockGrid::split(a, pa)?;
    let gb = BlockGrid::split(b, pb)?;
    Ok(ga.khatri_rao(&gb, DEFAULT_ELEMENT_CAP)?.assemble())
}

/// The `d³ x d` shuffling matrix `(I_d ⊗ K_{d,d})(vecr I_d ⊗ I_d)`.
pub fn shuffle(d: usize) -> Result<Mat> {
    let id = Mat::identity(d);
    let left = kron(&id, &commutation(d, d)?)?;
    let right = kron(&vecr(&id), &id)?;
    Ok(&left * &right)
}

/// The same matrix built as `(K_{d,d} ⊗ I_d)(I_d ⊗ vecr I_d)`.
pub fn shuffle_alt(d: usize) -> Result<Mat> {
    let id = Mat::identity(d);
    let left = kron(&commutation(d, d)?, &id)?;
    let right = kron(&id, &vecr(&id))?;
    Ok(&left * &right)
}

/// Direct sum of the given blocks.
pub fn block_diag(blocks: &[Mat]) -> Result<Mat> {
    if blocks.is_empty() {
        return Err(Error::Dimension("block_diag of an empty list".into()));
    }
    let rows = blocks.iter().map(Mat::rows).sum();
    let cols = blocks.iter().map(Mat::cols).sum();
    let mut out = Mat::zeros(rows, cols);
    let (mut r0, mut c0) = (0, 0);
    for b in blocks {
        out.set_block(r0, c0, b);
        r0 += b.rows();
        c0 += b.cols();
    }
    Ok(out)
}

/// Eigenvalues of the symmetric part of `m`, ascending.
pub fn symmetric_eigenvalues(m: &Mat) -> Vec<f64> {
    let eig = m.symmetrized().to_nalgebra().symmetric_eigen();
    let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    vals.sort_by(|a, b| a.total_cmp(b));
    vals
}

/// Singular values, descending.
pub fn singular_values(m: &Mat) -> Vec<f64> {
    let mut s: Vec<f64> = m.to_nalgebra().singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Number of singular values above `rel_tol * σ_max`.
pub fn numerical_rank(m: &Mat, rel_tol: f64) -> usize {
    let s = singular_values(m);
    let top = s.first().copied().unwrap_or(0.0);
    if top == 0.0 {
        return 0;
    }
    s.iter().filter(|&&x| x > rel_tol * top).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
        Mat::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
    }

    fn max_diff(a: &Mat, b: &Mat) -> f64 {
        (a - b).max_abs()
    }

    #[test]
    fn vecr_examples() {
        let m = Mat::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        assert_eq!(vecr(&m).as_slice(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(vecr(&Mat::identity(2)).as_slice(), &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(
            vecr(&Mat::row(&[5.0, 6.0, 7.0])).as_slice(),
            &[5.0, 6.0, 7.0]
        );
    }

    #[test]
    fn kron_examples() {
        let swap = Mat::from_rows(&[[0.0, 1.0], [1.0, 0.0]]);
        let k = kron(&Mat::identity(2), &swap).unwrap();
        let expected = block_diag(&[swap.clone(), swap.clone()]).unwrap();
        assert_eq!(k, expected);

        let m = Mat::from_rows(&[[1.0, -2.0], [0.5, 3.0]]);
        assert_eq!(kron(&Mat::scalar(3.0), &m).unwrap(), m.scale(3.0));

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let two = kron(&Mat::identity(2), &Mat::scalar(2.0)).unwrap();
        for _ in 0..5 {
            let x = random(&mut rng, 2, 1);
            let by_hand = Mat::column(&[2.0 * x[(0, 0)], 2.0 * x[(1, 0)]]);
            assert!(max_diff(&(&two * &x), &by_hand) == 0.0);
        }
    }

    #[test]
    fn kron_respects_cap() {
        let a = Mat::identity(10);
        let err = kron_capped(&a, &a, 99).unwrap_err();
        assert!(matches!(
            err,
            Error::SizeLimit {
                requested: 10000,
                ..
            }
        ));
    }

    #[test]
    fn commutation_examples() {
        let k = commutation(2, 2).unwrap();
        let v = Mat::column(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!((&k * &v).as_slice(), &[1.0, 3.0, 2.0, 4.0]);
        assert_eq!(commutation(1, 4).unwrap(), Mat::identity(4));

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(&mut rng, 2, 3);
        let k32 = commutation(3, 2).unwrap();
        assert_eq!(&k32 * &vecr(&a), vecr(&a.transpose()));
    }

    #[test]
    fn commutation_is_a_permutation() {
        let k = commutation(3, 4).unwrap();
        for r in 0..k.rows() {
            assert_eq!(k.row_slice(r).iter().filter(|&&x| x == 1.0).count(), 1);
        }
        let kt = k.transpose();
        for c in 0..k.cols() {
            assert_eq!((0..k.rows()).filter(|&r| k[(r, c)] == 1.0).count(), 1);
        }
        assert_eq!(&k * &kt, Mat::identity(12));
    }

    #[test]
    fn khatri_rao_single_block_is_kron() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random(&mut rng, 2, 3);
        let b = random(&mut rng, 3, 2);
        let kr = khatri_rao(
            &a,
            &BlockPartition::trivial(&a),
            &b,
            &BlockPartition::trivial(&b),
        )
        .unwrap();
        assert_eq!(kr, kron(&a, &b).unwrap());
    }

    #[test]
    fn khatri_rao_matches_manual_assembly() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random(&mut rng, 3, 4);
        let b = random(&mut rng, 4, 2);
        let pa = BlockPartition::new(vec![1, 2], vec![3, 1]).unwrap();
        let pb = BlockPartition::new(vec![3, 1], vec![1, 1]).unwrap();
        let kr = khatri_rao(&a, &pa, &b, &pb).unwrap();

        let blk = |m: &Mat, r0, c0, r, c| m.submatrix(r0, c0, r, c);
        let b00 = kron(&blk(&a, 0, 0, 1, 3), &blk(&b, 0, 0, 3, 1)).unwrap();
        let b01 = kron(&blk(&a, 0, 3, 1, 1), &blk(&b, 0, 1, 3, 1)).unwrap();
        let b10 = kron(&blk(&a, 1, 0, 2, 3), &blk(&b, 3, 0, 1, 1)).unwrap();
        let b11 = kron(&blk(&a, 1, 3, 2, 1), &blk(&b, 3, 1, 1, 1)).unwrap();
        let top = Mat::hstack(&[&b00, &b01]).unwrap();
        let bottom = Mat::hstack(&[&b10, &b11]).unwrap();
        assert_eq!(kr, Mat::vstack(&[&top, &bottom]).unwrap());
    }

    #[test]
    fn khatri_rao_rejects_mismatched_grids() {
        let a = Mat::identity(2);
        let pa = BlockPartition::new(vec![1, 1], vec![2]).unwrap();
        let pb = BlockPartition::trivial(&a);
        assert!(matches!(
            khatri_rao(&a, &pa, &a, &pb),
            Err(Error::Partition(_))
        ));
    }

    #[test]
    fn khatri_rao_rows_against_moment_blocks() {
        // Row-block i of X * M is x_iᵀ ⊗ M_i when X is split into rows and M into d x d blocks.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (l, d) = (3, 2);
        let x = random(&mut rng, l, d);
        let m2 = random(&mut rng, l * d, d);
        let kr = khatri_rao(
            &x,
            &BlockPartition::uniform_rows(&x, l).unwrap(),
            &m2,
            &BlockPartition::uniform_rows(&m2, l).unwrap(),
        )
        .unwrap();
        for i in 0..l {
            let xi = x.submatrix(i, 0, 1, d);
            let mi = m2.submatrix(i * d, 0, d, d);
            assert_eq!(kr.submatrix(i * d, 0, d, d * d), kron(&xi, &mi).unwrap());
        }
    }

    #[test]
    fn shuffle_forms_agree() {
        assert_eq!(shuffle(1).unwrap(), Mat::scalar(1.0));
        for d in 2..=4 {
            let s = shuffle(d).unwrap();
            assert_eq!(s.shape(), (d * d * d, d));
            assert_eq!(s, shuffle_alt(d).unwrap());
        }
    }

    #[test]
    fn block_diag_examples() {
        let single = Mat::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        assert_eq!(block_diag(std::slice::from_ref(&single)).unwrap(), single);
        let d = block_diag(&[Mat::scalar(2.0), Mat::scalar(-1.0)]).unwrap();
        assert_eq!(d, Mat::from_rows(&[[2.0, 0.0], [0.0, -1.0]]));

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let blocks: Vec<Mat> = (0..3).map(|_| random(&mut rng, 2, 2)).collect();
        let bd = block_diag(&blocks).unwrap();
        for r in 0..6 {
            for c in 0..6 {
                if r / 2 != c / 2 {
                    assert_eq!(bd[(r, c)], 0.0);
                } else {
                    assert_eq!(bd[(r, c)], blocks[r / 2][(r % 2, c % 2)]);
                }
            }
        }
        assert!(block_diag(&[]).is_err());
    }

    #[test]
    fn x_extract_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for (m, n) in [(2, 3), (3, 2), (2, 2)] {
            let a = random(&mut rng, m, n);
            let lhs = &kron(&Mat::identity(m), &commutation(m, n).unwrap()).unwrap()
                * &kron(&vecr(&a), &a).unwrap();
            let rhs = &(&kron_chain(&[&a, &a, &Mat::identity(n)], DEFAULT_ELEMENT_CAP).unwrap()
                * &kron(&Mat::identity(n), &commutation(n, n).unwrap()).unwrap())
                * &kron(&vecr(&Mat::identity(n)), &Mat::identity(n)).unwrap();
            assert!(max_diff(&lhs, &rhs) <= 1e-12);
        }
    }

    #[test]
    fn eigen_and_rank_helpers() {
        let m = Mat::from_rows(&[[2.0, 0.0], [0.0, -1.0]]);
        assert_eq!(symmetric_eigenvalues(&m), vec![-1.0, 2.0]);
        let r1 = kron(&Mat::column(&[1.0, 2.0]), &Mat::row(&[1.0, 1.0, 1.0])).unwrap();
        assert_eq!(numerical_rank(&r1, 1e-8), 1);
    }

    #[test]
    fn reshape_round_trip() {
        let m = Mat::from_rows(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]);
        assert_eq!(unvecr(&vecr(&m), 2, 3).unwrap(), m);
        assert!(unvecr(&vecr(&m), 4, 2).is_err());
    }

    #[test]
    fn from_vec_rejects_non_finite() {
        assert!(matches!(
            Mat::from_vec(1, 2, vec![1.0, f64::NAN]),
            Err(Error::NonFinite(_))
        ));
    }
}
