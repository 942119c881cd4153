//! Kernel dispatch shared by the layer implementations.
//!
//! An [`Executor`] routes SpMM through the tiled kernels when a tiling config
//! is attached and can record every kernel call for shape audits.

use std::sync::Mutex;

use serde::Serialize;

use crate::error::Result;
use crate::opt::{tile, tiled_spmm, tiled_spmm_unweighted, TilingConfig};
use crate::sparse::{self, CsrMatrix, CsrPattern, DegreeVector, DenseMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Spmm,
    SpmmUnweighted,
    Sddmm,
    Gemm,
    ScaleRows,
}

/// One kernel invocation. `width` is the dense operand width the kernel ran at
/// (the `k` of SpMM/SDDMM, the output width of GEMM and scalings).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct KernelCall {
    pub kind: KernelKind,
    pub rows: usize,
    pub width: usize,
}

#[derive(Debug, Default)]
pub struct Executor {
    tiling: Option<TilingConfig>,
    trace: Option<Mutex<Vec<KernelCall>>>,
}

impl Executor {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_tiling(mut self, cfg: TilingConfig) -> Self {
        self.tiling = Some(cfg);
        self
    }

    pub fn traced(mut self) -> Self {
        self.trace = Some(Mutex::new(Vec::new()));
        self
    }

    pub fn tiling(&self) -> Option<&TilingConfig> {
        self.tiling.as_ref()
    }

    /// Calls recorded so far; empty when tracing is off.
    pub fn calls(&self) -> Vec<KernelCall> {
        self.trace
            .as_ref()
            .map(|t| t.lock().unwrap().clone())
            .unwrap_or_default()
    }

    fn record(&self, kind: KernelKind, rows: usize, width: usize) {
        if let Some(t) = &self.trace {
            t.lock().unwrap().push(KernelCall { kind, rows, width });
        }
    }

    fn tiling_for(&self, n_rows: usize, n_cols: usize) -> Option<&TilingConfig> {
        self.tiling
            .as_ref()
            .filter(|cfg| cfg.is_tiled_for(n_rows, n_cols))
    }

    pub fn spmm(&self, a: &CsrMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
        self.record(KernelKind::Spmm, a.n_rows(), b.n_cols());
        match self.tiling_for(a.n_rows(), a.n_cols()) {
            // Tiling is O(nnz), small next to the O(nnz * k) product.
            Some(cfg) => tiled_spmm(&tile(a, cfg), b),
            None => sparse::spmm(a, b),
        }
    }

    /// Unweighted SpMM over `a`'s pattern. The tiled route rebuilds segments
    /// from the pattern alone with unit values, so edge values stay unread.
    pub fn spmm_unweighted(&self, a: CsrPattern<'_>, b: &DenseMatrix) -> Result<DenseMatrix> {
        self.record(KernelKind::SpmmUnweighted, a.n_rows(), b.n_cols());
        match self.tiling_for(a.n_rows(), a.n_cols()) {
            Some(cfg) => {
                let unit = CsrMatrix::from_parts_unchecked(
                    a.n_rows(),
                    a.n_cols(),
                    a.row_ptr().to_vec(),
                    a.col_idx().to_vec(),
                    vec![1.0; a.nnz()],
                );
                tiled_spmm_unweighted(&tile(&unit, cfg), b)
            }
            None => sparse::spmm_unweighted(a, b),
        }
    }

    pub fn sddmm(&self, a: &CsrMatrix, b: &DenseMatrix, c: &DenseMatrix) -> Result<CsrMatrix> {
        self.record(KernelKind::Sddmm, a.n_rows(), b.n_cols());
        sparse::sddmm(a, b, c)
    }

    pub fn gemm(&self, a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
        self.record(KernelKind::Gemm, a.n_rows(), b.n_cols());
        sparse::gemm(a, b)
    }

    pub fn scale_rows(&self, d: &DegreeVector, b: &DenseMatrix) -> Result<DenseMatrix> {
        self.record(KernelKind::ScaleRows, b.n_rows(), b.n_cols());
        sparse::scale_rows(d, b)
    }

    pub fn scale_rows_in_place(&self, d: &DegreeVector, b: &mut DenseMatrix) -> Result<()> {
        self.record(KernelKind::ScaleRows, b.n_rows(), b.n_cols());
        sparse::scale_rows_in_place(d, b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trace_records_shapes() {
        let exec = Executor::new().traced();
        let a = CsrMatrix::identity(4);
        let b = DenseMatrix::random_uniform(4, 3, 1);
        exec.spmm(&a, &b).unwrap();
        exec.gemm(&b, &DenseMatrix::identity(3)).unwrap();
        assert_eq!(
            exec.calls(),
            vec![
                KernelCall { kind: KernelKind::Spmm, rows: 4, width: 3 },
                KernelCall { kind: KernelKind::Gemm, rows: 4, width: 3 },
            ]
        );
        assert!(Executor::new().calls().is_empty());
    }

    #[test]
    fn tiled_route_matches_plain() {
        let a = CsrMatrix::from_triplets(5, 5, &[(0, 4, 2.0), (3, 1, -1.0), (4, 4, 0.5)]).unwrap();
        let b = DenseMatrix::random_uniform(5, 2, 3);
        let exec = Executor::new().with_tiling(TilingConfig::new(2, 2, false).unwrap());
        assert_eq!(exec.spmm(&a, &b).unwrap(), sparse::spmm(&a, &b).unwrap());
        assert_eq!(
            exec.spmm_unweighted(a.pattern(), &b).unwrap(),
            sparse::spmm_unweighted(a.pattern(), &b).unwrap()
        );
    }
}
