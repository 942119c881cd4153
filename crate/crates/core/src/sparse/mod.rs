//! Sparse and dense matrix types and the kernels every composition is built from.

mod csr;
mod dense;
mod kernels;
mod mtx;

pub use csr::{CsrMatrix, CsrPattern};
pub use dense::DenseMatrix;
pub use kernels::{
    add_self_loops, gemm, inv_sqrt_degrees, scale_rows, scale_rows_in_place, sddmm, spmm,
    spmm_unweighted, DegreeVector,
};
pub(crate) use kernels::split_by_rows;
pub use mtx::{parse_matrix_market, read_matrix_market, write_matrix_market};
