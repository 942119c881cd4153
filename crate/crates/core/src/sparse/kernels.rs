//! (+, ×) sparse and dense kernels.
//!
//! Every kernel is parallel over output rows. Within a row, sums run over the
//! row's non-zeros in ascending column order (or ascending `k` for the dense
//! inner products), so results do not depend on the thread count.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::sparse::{CsrMatrix, CsrPattern, DenseMatrix};

// Rows per rayon task; small rows amortize scheduling poorly.
const MIN_ROWS_PER_TASK: usize = 64;
const GEMM_ROW_BLOCK: usize = 64;

/// Diagonal of D̃^(-1/2) for a self-loop augmented matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DegreeVector {
    values: Vec<f64>,
}

impl DegreeVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::DegenerateNode(i));
        }
        Ok(Self { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Dense `n x 1` column holding the diagonal.
    pub fn as_column(&self) -> DenseMatrix {
        DenseMatrix::from_vec_unchecked(self.values.len(), 1, self.values.clone())
    }
}

/// `C = A · B`.
pub fn spmm(a: &CsrMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.n_cols() != b.n_rows() {
        return Err(Error::shape(
            "spmm",
            format!(
                "{}x{} sparse times {}x{} dense",
                a.n_rows(),
                a.n_cols(),
                b.n_rows(),
                b.n_cols()
            ),
        ));
    }
    let k = b.n_cols();
    let mut out = DenseMatrix::zeros(a.n_rows(), k);
    if k == 0 {
        return Ok(out);
    }
    out.data_mut()
        .par_chunks_mut(k)
        .with_min_len(MIN_ROWS_PER_TASK)
        .enumerate()
        .for_each(|(i, out_row)| {
            let (cols, vals) = a.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                axpy(out_row, v, b.row(j));
            }
        });
    Ok(out)
}

/// `C = A · B` treating every stored entry of `A` as 1.
///
/// Takes only the sparsity pattern, so edge values cannot be read.
pub fn spmm_unweighted(a: CsrPattern<'_>, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.n_cols() != b.n_rows() {
        return Err(Error::shape(
            "spmm_unweighted",
            format!(
                "{}x{} pattern times {}x{} dense",
                a.n_rows(),
                a.n_cols(),
                b.n_rows(),
                b.n_cols()
            ),
        ));
    }
    let k = b.n_cols();
    let mut out = DenseMatrix::zeros(a.n_rows(), k);
    if k == 0 {
        return Ok(out);
    }
    out.data_mut()
        .par_chunks_mut(k)
        .with_min_len(MIN_ROWS_PER_TASK)
        .enumerate()
        .for_each(|(i, out_row)| {
            for &j in a.row(i) {
                add_assign(out_row, b.row(j));
            }
        });
    Ok(out)
}

/// `d[i,j] = a[i,j] · <b[i,:], c[j,:]>` on the pattern of `a`.
pub fn sddmm(a: &CsrMatrix, b: &DenseMatrix, c: &DenseMatrix) -> Result<CsrMatrix> {
    if b.n_rows() != a.n_rows() || c.n_rows() != a.n_cols() || b.n_cols() != c.n_cols() {
        return Err(Error::shape(
            "sddmm",
            format!(
                "mask {}x{}, left {}x{}, right {}x{}",
                a.n_rows(),
                a.n_cols(),
                b.n_rows(),
                b.n_cols(),
                c.n_rows(),
                c.n_cols()
            ),
        ));
    }
    let mut values = vec![0.0; a.nnz()];
    let row_ptr = a.row_ptr();
    split_by_rows(&mut values, row_ptr)
        .into_par_iter()
        .with_min_len(MIN_ROWS_PER_TASK)
        .for_each(|(i, out)| {
            let (cols, vals) = a.row(i);
            let bi = b.row(i);
            for ((slot, &j), &v) in out.iter_mut().zip(cols).zip(vals) {
                *slot = v * dot(bi, c.row(j));
            }
        });
    Ok(CsrMatrix::from_parts_unchecked(
        a.n_rows(),
        a.n_cols(),
        row_ptr.to_vec(),
        a.col_idx().to_vec(),
        values,
    ))
}

/// Dense `C = A · B`.
pub fn gemm(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.n_cols() != b.n_rows() {
        return Err(Error::shape(
            "gemm",
            format!(
                "{}x{} times {}x{}",
                a.n_rows(),
                a.n_cols(),
                b.n_rows(),
                b.n_cols()
            ),
        ));
    }
    let (m, k, n) = (a.n_rows(), a.n_cols(), b.n_cols());
    let mut out = DenseMatrix::zeros(m, n);
    if m == 0 || n == 0 || k == 0 {
        return Ok(out);
    }
    let a_data = a.data();
    let b_data = b.data();
    // Fixed row blocks keep per-element arithmetic independent of thread count.
    out.data_mut()
        .par_chunks_mut(GEMM_ROW_BLOCK * n)
        .enumerate()
        .for_each(|(blk, c)| {
            let rows = c.len() / n;
            let a_blk = &a_data[blk * GEMM_ROW_BLOCK * k..];
            // SAFETY: a_blk holds `rows` rows of `k` contiguous entries, b_data is
            // k x n row-major and c is `rows` x n row-major; strides match.
            unsafe {
                matrixmultiply::dgemm(
                    rows,
                    k,
                    n,
                    1.0,
                    a_blk.as_ptr(),
                    k as isize,
                    1,
                    b_data.as_ptr(),
                    n as isize,
                    1,
                    0.0,
                    c.as_mut_ptr(),
                    n as isize,
                    1,
                );
            }
        });
    Ok(out)
}

/// `out[i,:] = d[i] · b[i,:]`, i.e. `diag(d) · B` without forming the diagonal.
pub fn scale_rows(d: &DegreeVector, b: &DenseMatrix) -> Result<DenseMatrix> {
    let mut out = b.clone();
    scale_rows_in_place(d, &mut out)?;
    Ok(out)
}

pub fn scale_rows_in_place(d: &DegreeVector, b: &mut DenseMatrix) -> Result<()> {
    if d.len() != b.n_rows() {
        return Err(Error::shape(
            "scale_rows",
            format!("{} scales for {} rows", d.len(), b.n_rows()),
        ));
    }
    let k = b.n_cols();
    if k == 0 {
        return Ok(());
    }
    let scales = d.values();
    b.data_mut()
        .par_chunks_mut(k)
        .with_min_len(MIN_ROWS_PER_TASK)
        .enumerate()
        .for_each(|(i, row)| {
            let s = scales[i];
            row.iter_mut().for_each(|v| *v *= s);
        });
    Ok(())
}

/// Ã = A + I on rows lacking a diagonal entry; existing diagonals are kept.
pub fn add_self_loops(a: &CsrMatrix) -> Result<CsrMatrix> {
    if !a.is_square() {
        return Err(Error::shape(
            "add_self_loops",
            format!("{}x{} is not square", a.n_rows(), a.n_cols()),
        ));
    }
    let n = a.n_rows();
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut col_idx = Vec::with_capacity(a.nnz() + n);
    let mut values = Vec::with_capacity(a.nnz() + n);
    row_ptr.push(0);
    for i in 0..n {
        let (cols, vals) = a.row(i);
        let split = cols.partition_point(|&c| c < i);
        col_idx.extend_from_slice(&cols[..split]);
        values.extend_from_slice(&vals[..split]);
        if cols.get(split) != Some(&i) {
            col_idx.push(i);
            values.push(1.0);
        }
        col_idx.extend_from_slice(&cols[split..]);
        values.extend_from_slice(&vals[split..]);
        row_ptr.push(col_idx.len());
    }
    Ok(CsrMatrix::from_parts_unchecked(n, n, row_ptr, col_idx, values))
}

/// `d̃_i^(-1/2)` with d̃_i the structural non-zero count of row `i`.
pub fn inv_sqrt_degrees(a: &CsrMatrix) -> Result<DegreeVector> {
    let values = a
        .degrees()
        .into_iter()
        .enumerate()
        .map(|(i, d)| {
            if d == 0 {
                Err(Error::DegenerateNode(i))
            } else {
                Ok((d as f64).sqrt().recip())
            }
        })
        .collect::<Result<Vec<_>>>()?;
    DegreeVector::new(values)
}

#[inline]
fn axpy(out: &mut [f64], alpha: f64, x: &[f64]) {
    for (o, &v) in out.iter_mut().zip(x) {
        *o += alpha * v;
    }
}

#[inline]
fn add_assign(out: &mut [f64], x: &[f64]) {
    for (o, &v) in out.iter_mut().zip(x) {
        *o += v;
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}

/// Splits a per-nnz buffer into one mutable slice per row.
pub(crate) fn split_by_rows<'a, T>(buf: &'a mut [T], row_ptr: &[usize]) -> Vec<(usize, &'a mut [T])> {
    let mut rest = buf;
    let mut out = Vec::with_capacity(row_ptr.len().saturating_sub(1));
    for (i, w) in row_ptr.windows(2).enumerate() {
        let (head, tail) = std::mem::take(&mut rest).split_at_mut(w[1] - w[0]);
        out.push((i, head));
        rest = tail;
    }
    out
}
