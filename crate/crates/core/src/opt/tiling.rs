use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::{CsrMatrix, CsrPattern, DenseMatrix};

/// Column-segment width, row-tile height and whether to reorder nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TilingConfig {
    pub col_segment_width: usize,
    pub row_tile_height: usize,
    pub reorder: bool,
}

impl TilingConfig {
    pub fn new(col_segment_width: usize, row_tile_height: usize, reorder: bool) -> Result<Self> {
        let cfg = Self {
            col_segment_width,
            row_tile_height,
            reorder,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// A single segment and a single row tile covering an `n_rows x n_cols` matrix.
    pub fn untiled(n_rows: usize, n_cols: usize) -> Self {
        Self {
            col_segment_width: n_cols.max(1).next_power_of_two(),
            row_tile_height: n_rows.max(1),
            reorder: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.col_segment_width == 0 || !self.col_segment_width.is_power_of_two() {
            return Err(Error::Config(format!(
                "col_segment_width must be a power of two >= 1, got {}",
                self.col_segment_width
            )));
        }
        if self.row_tile_height == 0 {
            return Err(Error::Config("row_tile_height must be >= 1".into()));
        }
        Ok(())
    }

    /// Collapses settings that cannot change the schedule on an `n_rows x n_cols` matrix.
    pub fn effective(&self, n_rows: usize, n_cols: usize) -> Self {
        Self {
            col_segment_width: self
                .col_segment_width
                .min(n_cols.max(1).next_power_of_two()),
            row_tile_height: self.row_tile_height.min(n_rows.max(1)),
            reorder: self.reorder,
        }
    }

    /// True when the config splits an `n_rows x n_cols` matrix at all.
    pub fn is_tiled_for(&self, n_rows: usize, n_cols: usize) -> bool {
        self.col_segment_width < n_cols || self.row_tile_height < n_rows
    }
}

/// One column slice of a tiled matrix.
///
/// Only rows with entries in the slice are stored: `matrix` row `r` holds
/// original row `row_ids[r]`, with columns rebased by `col_offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub col_offset: usize,
    pub row_ids: Vec<usize>,
    pub matrix: CsrMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TiledCsr {
    n_rows: usize,
    n_cols: usize,
    segments: Vec<Segment>,
    config: TilingConfig,
}

impl TiledCsr {
    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn config(&self) -> &TilingConfig {
        &self.config
    }

    pub fn nnz(&self) -> usize {
        self.segments.iter().map(|s| s.matrix.nnz()).sum()
    }
}

/// Splits `a` into column segments of `cfg.col_segment_width` columns.
pub fn tile(a: &CsrMatrix, cfg: &TilingConfig) -> TiledCsr {
    let width = cfg.col_segment_width.max(1);
    let n_segments = a.n_cols().div_ceil(width).max(1);

    struct Builder {
        row_ids: Vec<usize>,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        values: Vec<f64>,
    }
    let mut builders: Vec<Builder> = (0..n_segments)
        .map(|_| Builder {
            row_ids: Vec::new(),
            row_ptr: vec![0],
            col_idx: Vec::new(),
            values: Vec::new(),
        })
        .collect();

    for i in 0..a.n_rows() {
        let (cols, vals) = a.row(i);
        for (&c, &v) in cols.iter().zip(vals) {
            let s = c / width;
            let b = &mut builders[s];
            if b.row_ids.last() != Some(&i) {
                if !b.row_ids.is_empty() {
                    b.row_ptr.push(b.col_idx.len());
                }
                b.row_ids.push(i);
            }
            b.col_idx.push(c - s * width);
            b.values.push(v);
        }
    }

    let segments = builders
        .into_iter()
        .enumerate()
        .map(|(s, mut b)| {
            if !b.row_ids.is_empty() {
                b.row_ptr.push(b.col_idx.len());
            }
            let col_offset = s * width;
            let seg_cols = width.min(a.n_cols() - col_offset.min(a.n_cols()));
            Segment {
                col_offset,
                matrix: CsrMatrix::from_parts_unchecked(
                    b.row_ids.len(),
                    seg_cols,
                    b.row_ptr,
                    b.col_idx,
                    b.values,
                ),
                row_ids: b.row_ids,
            }
        })
        .collect();

    TiledCsr {
        n_rows: a.n_rows(),
        n_cols: a.n_cols(),
        segments,
        config: *cfg,
    }
}

/// Segment-by-segment SpMM accumulating into the output.
///
/// Segments are visited in ascending column order and each row keeps its own
/// column order, so every output element is summed in the same order as
/// [`crate::sparse::spmm`]; the two are bit-identical.
pub fn tiled_spmm(t: &TiledCsr, b: &DenseMatrix) -> Result<DenseMatrix> {
    tiled_spmm_impl(t, b, true)
}

/// [`tiled_spmm`] with every entry treated as 1; segment values are never read.
pub fn tiled_spmm_unweighted(t: &TiledCsr, b: &DenseMatrix) -> Result<DenseMatrix> {
    tiled_spmm_impl(t, b, false)
}

fn tiled_spmm_impl(t: &TiledCsr, b: &DenseMatrix, weighted: bool) -> Result<DenseMatrix> {
    if t.n_cols != b.n_rows() {
        return Err(Error::shape(
            "tiled_spmm",
            format!(
                "{}x{} sparse times {}x{} dense",
                t.n_rows,
                t.n_cols,
                b.n_rows(),
                b.n_cols()
            ),
        ));
    }
    let k = b.n_cols();
    let mut out = DenseMatrix::zeros(t.n_rows, k);
    if k == 0 || t.n_rows == 0 {
        return Ok(out);
    }
    let height = t.config.row_tile_height.max(1);
    for seg in &t.segments {
        if seg.row_ids.is_empty() {
            continue;
        }
        let pattern: CsrPattern<'_> = seg.matrix.pattern();
        out.data_mut()
            .par_chunks_mut(height * k)
            .enumerate()
            .for_each(|(tile_no, out_tile)| {
                let first = tile_no * height;
                let last = first + out_tile.len() / k;
                let lo = seg.row_ids.partition_point(|&r| r < first);
                let hi = seg.row_ids.partition_point(|&r| r < last);
                for r in lo..hi {
                    let row = seg.row_ids[r] - first;
                    let out_row = &mut out_tile[row * k..(row + 1) * k];
                    let cols = pattern.row(r);
                    if weighted {
                        let vals = seg.matrix.row(r).1;
                        for (&c, &v) in cols.iter().zip(vals) {
                            let src = b.row(seg.col_offset + c);
                            for (o, &x) in out_row.iter_mut().zip(src) {
                                *o += v * x;
                            }
                        }
                    } else {
                        for &c in cols {
                            let src = b.row(seg.col_offset + c);
                            for (o, &x) in out_row.iter_mut().zip(src) {
                                *o += x;
                            }
                        }
                    }
                }
            });
    }
    Ok(out)
}
