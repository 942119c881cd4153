//! Optimized execution path: column-segmented, row-tiled SpMM, degree
//! reordering and an empirical auto-tuner over tiling configurations.

mod autotune;
mod reorder;
mod tiling;

pub use autotune::{
    autotune, autotune_with, default_candidates, heuristic_order, llc_bytes, time_config, time_configs,
    AutotuneOptions,
    TuningRanker, TuningReport, TuningSample, MAX_TIMED,
};
pub use reorder::{reorder_degree, Permutation};
pub use tiling::{tile, tiled_spmm, tiled_spmm_unweighted, Segment, TiledCsr, TilingConfig};
