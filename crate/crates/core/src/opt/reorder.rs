use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::{CsrMatrix, DenseMatrix};

/// A node relabeling. `new_to_old[p]` is the original id of the node placed at `p`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Permutation {
    new_to_old: Vec<usize>,
    old_to_new: Vec<usize>,
}

impl Permutation {
    pub fn from_new_to_old(new_to_old: Vec<usize>) -> Result<Self> {
        let n = new_to_old.len();
        let mut old_to_new = vec![usize::MAX; n];
        for (new, &old) in new_to_old.iter().enumerate() {
            if old >= n || old_to_new[old] != usize::MAX {
                return Err(Error::Config(format!("not a permutation of 0..{n}")));
            }
            old_to_new[old] = new;
        }
        Ok(Self {
            new_to_old,
            old_to_new,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            new_to_old: (0..n).collect(),
            old_to_new: (0..n).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.new_to_old.len()
    }

    pub fn is_empty(&self) -> bool {
        self.new_to_old.is_empty()
    }

    pub fn is_identity(&self) -> bool {
        self.new_to_old.iter().enumerate().all(|(i, &o)| i == o)
    }

    pub fn new_to_old(&self) -> &[usize] {
        &self.new_to_old
    }

    pub fn old_to_new(&self) -> &[usize] {
        &self.old_to_new
    }

    /// Rows of `m` moved into the new order.
    pub fn permute_rows(&self, m: &DenseMatrix) -> Result<DenseMatrix> {
        self.gather(m, &self.new_to_old)
    }

    /// Inverse of [`Permutation::permute_rows`].
    pub fn unpermute_rows(&self, m: &DenseMatrix) -> Result<DenseMatrix> {
        self.gather(m, &self.old_to_new)
    }

    fn gather(&self, m: &DenseMatrix, src_of: &[usize]) -> Result<DenseMatrix> {
        if m.n_rows() != self.len() {
            return Err(Error::shape(
                "permute_rows",
                format!("{} rows for a permutation of {}", m.n_rows(), self.len()),
            ));
        }
        let k = m.n_cols();
        let mut data = Vec::with_capacity(m.data().len());
        for &src in src_of {
            data.extend_from_slice(m.row(src));
        }
        Ok(DenseMatrix::from_vec_unchecked(m.n_rows(), k, data))
    }

    /// `P·A·Pᵀ`: entry (i, j) of `a` moves to (old_to_new[i], old_to_new[j]).
    pub fn permute_symmetric(&self, a: &CsrMatrix) -> Result<CsrMatrix> {
        if !a.is_square() || a.n_rows() != self.len() {
            return Err(Error::shape(
                "permute_symmetric",
                format!(
                    "{}x{} matrix for a permutation of {}",
                    a.n_rows(),
                    a.n_cols(),
                    self.len()
                ),
            ));
        }
        let n = a.n_rows();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::with_capacity(a.nnz());
        let mut values = Vec::with_capacity(a.nnz());
        let mut scratch: Vec<(usize, f64)> = Vec::new();
        row_ptr.push(0);
        for &old in &self.new_to_old {
            let (cols, vals) = a.row(old);
            scratch.clear();
            scratch.extend(cols.iter().zip(vals).map(|(&c, &v)| (self.old_to_new[c], v)));
            scratch.sort_unstable_by_key(|&(c, _)| c);
            for &(c, v) in &scratch {
                col_idx.push(c);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        Ok(CsrMatrix::from_parts_unchecked(n, n, row_ptr, col_idx, values))
    }
}

/// Relabels nodes by descending degree (ties keep original order).
pub fn reorder_degree(a: &CsrMatrix) -> Result<(CsrMatrix, Permutation)> {
    if !a.is_square() {
        return Err(Error::shape(
            "reorder_degree",
            format!("{}x{} is not square", a.n_rows(), a.n_cols()),
        ));
    }
    let degrees = a.degrees();
    let mut order: Vec<usize> = (0..a.n_rows()).collect();
    order.sort_by(|&x, &y| degrees[y].cmp(&degrees[x]));
    let perm = Permutation::from_new_to_old(order)?;
    let reordered = perm.permute_symmetric(a)?;
    Ok((reordered, perm))
}
