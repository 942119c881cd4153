use std::collections::{BTreeMap, HashSet};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::reorder::reorder_degree;
use super::tiling::{tile, tiled_spmm, TilingConfig};
use crate::error::{Error, Result};
use crate::features::GraphFeatures;
use crate::profiler::median;
use crate::ranking::{encode_opt_config, BoostParams, Ensemble, RankingSet, TrainParams};
use crate::sparse::{CsrMatrix, DenseMatrix};

/// How many ranked candidates are ever timed, whatever the budget.
pub const MAX_TIMED: usize = 20;

const DEFAULT_LLC_BYTES: usize = 8 << 20;

#[derive(Debug, Clone, PartialEq)]
pub struct AutotuneOptions {
    pub budget: usize,
    pub llc_bytes: usize,
    pub reps: usize,
    pub warmup: usize,
    pub seed: u64,
}

impl Default for AutotuneOptions {
    fn default() -> Self {
        Self {
            budget: MAX_TIMED,
            llc_bytes: llc_bytes(),
            reps: 5,
            warmup: 2,
            seed: 0,
        }
    }
}

/// Last-level cache size from sysfs, or 8 MiB when unavailable.
pub fn llc_bytes() -> usize {
    (0..8)
        .rev()
        .find_map(|i| {
            let s = std::fs::read_to_string(format!("/sys/devices/system/cpu/cpu0/cache/index{i}/size")).ok()?;
            let s = s.trim();
            let (num, mult) = match s.strip_suffix('K') {
                Some(n) => (n, 1 << 10),
                None => match s.strip_suffix('M') {
                    Some(n) => (n, 1 << 20),
                    None => (s, 1),
                },
            };
            num.parse::<usize>().ok().map(|n| n * mult)
        })
        .unwrap_or(DEFAULT_LLC_BYTES)
}

/// Widths 2^10..2^18, heights {64, 512, 4096}, with and without reordering.
pub fn default_candidates() -> Vec<TilingConfig> {
    let mut out = Vec::new();
    for e in 10..=18 {
        for h in [64, 512, 4096] {
            for reorder in [false, true] {
                out.push(TilingConfig {
                    col_segment_width: 1 << e,
                    row_tile_height: h,
                    reorder,
                });
            }
        }
    }
    out
}

/// Orders candidates by distance (in powers of two) of their segment width
/// from the widest segment whose slice of the dense operand, `width * k * 8`
/// bytes, fits in half the LLC.
///
/// Widths are visited round-robin, nearest first, taking one variant from
/// each per pass, so a short prefix still spans every width even when the
/// reported cache size is off (VM hosts often expose the whole socket's L3).
/// Within a width, taller tiles come first, without reordering before with.
pub fn heuristic_order(n_rows: usize, n_cols: usize, k: usize, candidates: &[TilingConfig], llc_bytes: usize) -> Vec<TilingConfig> {
    let fit = (llc_bytes / 2 / (k.max(1) * 8)).max(1);
    let ideal = if fit.is_power_of_two() { fit } else { fit.next_power_of_two() / 2 };
    let ideal = (ideal.min(n_cols.max(1).next_power_of_two()) as f64).log2();
    let dist = |c: &TilingConfig| ((c.effective(n_rows, n_cols).col_segment_width as f64).log2() - ideal).abs();
    let mut sorted = candidates.to_vec();
    sorted.sort_by(|a, b| {
        dist(a)
            .total_cmp(&dist(b))
            .then(a.effective(n_rows, n_cols).col_segment_width.cmp(&b.effective(n_rows, n_cols).col_segment_width))
            .then(b.row_tile_height.cmp(&a.row_tile_height))
            .then(a.reorder.cmp(&b.reorder))
    });
    let mut buckets: Vec<Vec<TilingConfig>> = Vec::new();
    let mut last = None;
    for c in sorted {
        let w = c.effective(n_rows, n_cols).col_segment_width;
        if last != Some(w) {
            buckets.push(Vec::new());
            last = Some(w);
        }
        buckets.last_mut().unwrap().push(c);
    }
    let longest = buckets.iter().map(Vec::len).max().unwrap_or(0);
    (0..longest).flat_map(|i| buckets.iter().filter_map(move |b| b.get(i).cloned())).collect()
}

/// One timed (graph, k, config) observation for training a [`TuningRanker`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningSample {
    pub graph_id: String,
    pub features: GraphFeatures,
    pub k: usize,
    pub config: TilingConfig,
    pub time_s: f64,
}

/// Pairwise ranker over tiling configurations for a given graph and width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningRanker {
    pub ensemble: Ensemble,
    pub n_train_groups: usize,
}

fn tuning_row(features: &GraphFeatures, k: usize, cfg: &TilingConfig) -> Vec<f64> {
    let mut x = features.to_vec().to_vec();
    x.push(k as f64);
    x.extend(encode_opt_config(Some(cfg)));
    x
}

impl TuningRanker {
    /// Samples sharing `(graph_id, k)` form one ranking group.
    pub fn train(samples: &[TuningSample], params: &TrainParams) -> Result<Self> {
        let mut groups: BTreeMap<(&str, usize), Vec<&TuningSample>> = BTreeMap::new();
        for s in samples {
            groups.entry((&s.graph_id, s.k)).or_default().push(s);
        }
        let mut set = RankingSet::default();
        for g in groups.values().filter(|g| g.len() >= 2) {
            set.push_group(g.iter().map(|s| (tuning_row(&s.features, s.k, &s.config), s.time_s)));
        }
        if set.groups.is_empty() {
            return Err(Error::InsufficientData { groups: 0, required: 1 });
        }
        let boost = BoostParams {
            n_estimators: params.n_estimators,
            learning_rate: params.learning_rate,
            max_depth: params.max_depth,
            min_child_weight: params.min_child_weight,
            lambda: params.lambda,
            ..BoostParams::default()
        };
        Ok(Self {
            ensemble: Ensemble::fit(&set, &boost)?,
            n_train_groups: set.groups.len(),
        })
    }

    /// Candidates sorted best-first; equal scores keep the input order.
    pub fn rank(&self, features: &GraphFeatures, k: usize, candidates: &[TilingConfig]) -> Vec<TilingConfig> {
        let mut scored: Vec<(f64, TilingConfig)> = candidates
            .iter()
            .map(|c| (self.ensemble.predict(&tuning_row(features, k, c)), *c))
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0));
        scored.into_iter().map(|(_, c)| c).collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let r: Self = serde_json::from_str(&s)?;
        r.ensemble.validate()?;
        Ok(r)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningReport {
    pub best: TilingConfig,
    pub best_time_s: f64,
    /// Every timed configuration, in the order it was measured.
    pub measured: Vec<(TilingConfig, f64)>,
    /// `"ranker"`, `"heuristic"` or `"fallback"`.
    pub ranked_by: String,
}

/// Median time of one tiled SpMM of `a` (degree-reordered first when the
/// config asks for it) against a random `n_cols x k` operand. Tiling and
/// reordering are excluded from the timed region.
pub fn time_config(a: &CsrMatrix, k: usize, cfg: &TilingConfig, reps: usize, warmup: usize, seed: u64) -> Result<f64> {
    Ok(time_configs(a, k, std::slice::from_ref(cfg), reps, warmup, seed)?[0])
}

/// Like [`time_config`] for several configs, but interleaved: each of the
/// `reps` rounds runs every config once, so slow drift in machine speed
/// shifts all configs alike instead of favouring whichever ran in a quiet
/// phase. Returns per-config medians in input order.
pub fn time_configs(
    a: &CsrMatrix,
    k: usize,
    cfgs: &[TilingConfig],
    reps: usize,
    warmup: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if reps == 0 {
        return Err(Error::Config("reps must be >= 1".into()));
    }
    let reordered = if cfgs.iter().any(|c| c.reorder) {
        Some(reorder_degree(a)?.0)
    } else {
        None
    };
    let mut tiled = Vec::with_capacity(cfgs.len());
    for cfg in cfgs {
        cfg.validate()?;
        let m = if cfg.reorder { reordered.as_ref().expect("built above") } else { a };
        tiled.push(tile(m, cfg));
    }
    let b = DenseMatrix::random_uniform(a.n_cols(), k, seed);
    for t in &tiled {
        for _ in 0..warmup {
            std::hint::black_box(tiled_spmm(t, &b)?);
        }
    }
    let mut samples = vec![Vec::with_capacity(reps); tiled.len()];
    for _ in 0..reps {
        for (t, s) in tiled.iter().zip(&mut samples) {
            let started = Instant::now();
            std::hint::black_box(tiled_spmm(t, &b)?);
            s.push(started.elapsed().as_secs_f64().max(1e-9));
        }
    }
    Ok(samples.iter().map(|s| median(s)).collect())
}

/// Ranks `candidates` (by `ranker` if given, else [`heuristic_order`]),
/// times the first `min(budget, 20)` distinct schedules interleaved and
/// returns the fastest.
pub fn autotune(
    a: &CsrMatrix,
    features: &GraphFeatures,
    k: usize,
    candidates: &[TilingConfig],
    ranker: Option<&TuningRanker>,
    opts: &AutotuneOptions,
) -> Result<TuningReport> {
    let (list, ranked_by) = shortlist(a, features, k, candidates, ranker, opts);
    let times = time_configs(a, k, &list, opts.reps, opts.warmup, opts.seed)?;
    Ok(report(list.into_iter().zip(times).collect(), ranked_by))
}

/// [`autotune`] with a caller-supplied per-config measurement.
pub fn autotune_with(
    a: &CsrMatrix,
    features: &GraphFeatures,
    k: usize,
    candidates: &[TilingConfig],
    ranker: Option<&TuningRanker>,
    opts: &AutotuneOptions,
    mut measure: impl FnMut(&TilingConfig) -> Result<f64>,
) -> Result<TuningReport> {
    let (list, ranked_by) = shortlist(a, features, k, candidates, ranker, opts);
    let mut measured = Vec::with_capacity(list.len());
    for cfg in list {
        measured.push((cfg, measure(&cfg)?));
    }
    Ok(report(measured, ranked_by))
}

/// The configs to time, best-ranked first, and how they were ranked.
fn shortlist(
    a: &CsrMatrix,
    features: &GraphFeatures,
    k: usize,
    candidates: &[TilingConfig],
    ranker: Option<&TuningRanker>,
    opts: &AutotuneOptions,
) -> (Vec<TilingConfig>, &'static str) {
    let (n_rows, n_cols) = (a.n_rows(), a.n_cols());
    let valid: Vec<TilingConfig> = candidates.iter().filter(|c| c.validate().is_ok()).copied().collect();
    if valid.is_empty() || opts.budget == 0 {
        log::warn!("no usable tiling candidates; falling back to the untiled schedule");
        return (vec![TilingConfig::untiled(n_rows, n_cols)], "fallback");
    }
    if valid.len() == 1 {
        return (valid, "single");
    }
    let (ranked, ranked_by) = match ranker {
        Some(r) => (r.rank(features, k, &valid), "ranker"),
        None => (heuristic_order(n_rows, n_cols, k, &valid, opts.llc_bytes), "heuristic"),
    };
    let limit = opts.budget.min(MAX_TIMED);
    let mut seen = HashSet::new();
    let list = ranked
        .into_iter()
        .filter(|c| seen.insert(c.effective(n_rows, n_cols)))
        .take(limit)
        .collect();
    (list, ranked_by)
}

fn report(measured: Vec<(TilingConfig, f64)>, ranked_by: &str) -> TuningReport {
    let &(best, best_time_s) = measured
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("shortlist is never empty");
    TuningReport {
        best,
        best_time_s,
        measured,
        ranked_by: ranked_by.into(),
    }
}
