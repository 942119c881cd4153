//! Timing harness over (graph x sizes x composition) and NDJSON profile I/O.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::composition::{Activation, Composition, GnnModel};
use crate::error::{Error, Result};
use crate::features::{extract_features, GraphFeatures};
use crate::opt::TilingConfig;
use crate::runner::{estimate_layer_bytes, LayerProblem};
use crate::sparse::CsrMatrix;

/// Size pairs evaluated for GCN: equal, growing and shrinking widths.
pub const GCN_SIZES: [(usize, usize); 5] = [(32, 32), (32, 256), (1024, 32), (1024, 1024), (1024, 2048)];
/// Size pairs evaluated for GAT; only k1 < k2 makes the choice non-trivial.
pub const GAT_SIZES: [(usize, usize); 3] = [(32, 256), (32, 2048), (1024, 2048)];

pub const CV_UNRELIABLE: f64 = 0.3;
pub const MIN_REPS: usize = 3;

#[derive(Debug, Clone)]
pub struct NamedGraph {
    pub id: String,
    pub matrix: CsrMatrix,
}

impl NamedGraph {
    pub fn new(id: impl Into<String>, matrix: CsrMatrix) -> Self {
        Self {
            id: id.into(),
            matrix,
        }
    }
}

/// One timed observation of a composition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRecord {
    pub graph_id: String,
    pub features: GraphFeatures,
    pub model: GnnModel,
    pub k1: usize,
    pub k2: usize,
    pub composition: Composition,
    #[serde(default)]
    pub opt_config: Option<TilingConfig>,
    pub hw_tag: String,
    #[serde(default)]
    pub hw_descriptor: Vec<f64>,
    pub median_time_s: f64,
    pub iterations: usize,
    pub cv: f64,
    pub unreliable: bool,
    /// Setup excluded from the timed region (Ñ for precompute when amortized).
    pub one_time_cost_s: f64,
    pub amortized: bool,
}

impl ProfileRecord {
    /// Everything but the composition and timings; records sharing a key are ranked together.
    pub fn group_key(&self) -> String {
        let opt = match &self.opt_config {
            Some(c) => format!("{}/{}/{}", c.col_segment_width, c.row_tile_height, c.reorder),
            None => "-".into(),
        };
        format!("{}|{}|{}|{}|{}", self.graph_id, self.k1, self.k2, opt, self.hw_tag)
    }
}

/// A configuration the harness refused to run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedConfig {
    pub graph_id: String,
    pub k1: usize,
    pub k2: usize,
    pub required_bytes: u64,
    pub budget_bytes: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct ProfileOutcome {
    pub records: Vec<ProfileRecord>,
    pub skipped: Vec<SkippedConfig>,
}

#[derive(Debug, Clone)]
pub struct ProfileOptions {
    pub reps: usize,
    pub warmup: usize,
    pub seed: u64,
    pub hw_tag: String,
    pub hw_descriptor: Vec<f64>,
    /// Keep Ñ construction out of the timed region for the precompute composition.
    pub amortize_precompute: bool,
    pub opt_config: Option<TilingConfig>,
    /// Configurations whose estimated working set exceeds this are skipped.
    pub memory_budget_bytes: Option<u64>,
    pub activation: Activation,
}

impl Default for ProfileOptions {
    fn default() -> Self {
        Self {
            reps: 10,
            warmup: 3,
            seed: 0,
            hw_tag: "local".into(),
            hw_descriptor: Vec::new(),
            amortize_precompute: true,
            opt_config: None,
            memory_budget_bytes: available_memory_bytes().map(|b| b / 10 * 8),
            activation: Activation::Relu,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Timing {
    pub median_s: f64,
    pub cv: f64,
    pub samples: Vec<f64>,
}

/// Runs `f` `warmup` times untimed, then `reps` timed; reports the median.
pub fn time_iterations<T>(warmup: usize, reps: usize, mut f: impl FnMut() -> Result<T>) -> Result<Timing> {
    if reps == 0 {
        return Err(Error::Config("reps must be >= 1".into()));
    }
    for _ in 0..warmup {
        std::hint::black_box(f()?);
    }
    let mut samples = Vec::with_capacity(reps);
    for _ in 0..reps {
        let started = Instant::now();
        std::hint::black_box(f()?);
        samples.push(started.elapsed().as_secs_f64().max(1e-9));
    }
    Ok(Timing {
        median_s: median(&samples),
        cv: coefficient_of_variation(&samples),
        samples,
    })
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

fn coefficient_of_variation(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if mean <= 0.0 || xs.len() < 2 {
        return 0.0;
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    var.sqrt() / mean
}

/// Times every composition of `model` on each graph and size pair.
///
/// Graph ingestion, self-loop augmentation and feature extraction happen
/// outside the timed region. Configurations whose estimated working set
/// exceeds the memory budget are reported in [`ProfileOutcome::skipped`].
pub fn profile(
    graphs: &[NamedGraph],
    sizes: &[(usize, usize)],
    model: GnnModel,
    opts: &ProfileOptions,
) -> Result<ProfileOutcome> {
    if opts.reps < MIN_REPS {
        return Err(Error::Config(format!("reps must be >= {MIN_REPS}, got {}", opts.reps)));
    }
    let mut outcome = ProfileOutcome::default();
    for g in graphs {
        let features = extract_features(&g.matrix)?;
        for &(k1, k2) in sizes {
            let required = estimate_layer_bytes(g.matrix.n_rows(), g.matrix.nnz(), k1, k2);
            if let Some(budget) = opts.memory_budget_bytes.filter(|&b| required > b) {
                log::warn!("skipping {} at {k1}:{k2}: needs ~{required} bytes", g.id);
                outcome.skipped.push(SkippedConfig {
                    graph_id: g.id.clone(),
                    k1,
                    k2,
                    required_bytes: required,
                    budget_bytes: budget,
                    reason: "out of memory".into(),
                });
                continue;
            }
            let mut problem =
                LayerProblem::build(&g.matrix, model, k1, k2, opts.seed, opts.opt_config, opts.activation)?;
            let exec = problem.executor();
            for c in model.compositions() {
                let one_time = problem.prepare(c)?;
                let timing = if opts.amortize_precompute {
                    time_iterations(opts.warmup, opts.reps, || problem.run(&exec, c))?
                } else {
                    time_iterations(opts.warmup, opts.reps, || problem.run_with_setup(&exec, c))?
                };
                log::debug!("{} {k1}:{k2} {c}: {:.6}s (cv {:.3})", g.id, timing.median_s, timing.cv);
                outcome.records.push(ProfileRecord {
                    graph_id: g.id.clone(),
                    features,
                    model,
                    k1,
                    k2,
                    composition: c,
                    opt_config: opts.opt_config,
                    hw_tag: opts.hw_tag.clone(),
                    hw_descriptor: opts.hw_descriptor.clone(),
                    median_time_s: timing.median_s,
                    iterations: opts.reps,
                    cv: timing.cv,
                    unreliable: timing.cv > CV_UNRELIABLE,
                    one_time_cost_s: if opts.amortize_precompute { one_time } else { 0.0 },
                    amortized: opts.amortize_precompute,
                });
            }
        }
    }
    Ok(outcome)
}

pub fn write_ndjson(path: impl AsRef<Path>, records: &[ProfileRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_ndjson(path: impl AsRef<Path>) -> Result<Vec<ProfileRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (no, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: no + 1,
            msg: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// `MemAvailable` from `/proc/meminfo`, when the platform has it.
pub fn available_memory_bytes() -> Option<u64> {
    let text = std::fs::read_to_string("/proc/meminfo").ok()?;
    text.lines()
        .find_map(|l| l.strip_prefix("MemAvailable:"))
        .and_then(|rest| rest.trim().trim_end_matches("kB").trim().parse::<u64>().ok())
        .map(|kb| kb * 1024)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generate;

    fn quick() -> ProfileOptions {
        ProfileOptions {
            reps: 3,
            warmup: 1,
            memory_budget_bytes: None,
            ..ProfileOptions::default()
        }
    }

    #[test]
    fn two_records_per_config() {
        let graphs = vec![NamedGraph::new("grid", generate::grid(8, 8))];
        let out = profile(&graphs, &[(8, 8)], GnnModel::Gcn, &quick()).unwrap();
        assert_eq!(out.records.len(), 2);
        let comps: Vec<_> = out.records.iter().map(|r| r.composition).collect();
        assert_eq!(comps, vec![Composition::Dynamic, Composition::Precompute]);
        assert!(out.records.iter().all(|r| r.median_time_s > 0.0 && r.iterations >= 3));
        assert!(out.records[1].one_time_cost_s > 0.0);
        assert_eq!(out.records[0].group_key(), out.records[1].group_key());
    }

    #[test]
    fn deterministic_except_timings() {
        let graphs = vec![
            NamedGraph::new("a", generate::path(30)),
            NamedGraph::new("b", generate::star(30)),
        ];
        let strip = |mut rs: Vec<ProfileRecord>| {
            for r in &mut rs {
                r.median_time_s = 0.0;
                r.cv = 0.0;
                r.unreliable = false;
                r.one_time_cost_s = 0.0;
            }
            rs
        };
        let a = profile(&graphs, &[(4, 8)], GnnModel::Gat, &quick()).unwrap();
        let b = profile(&graphs, &[(4, 8)], GnnModel::Gat, &quick()).unwrap();
        assert_eq!(strip(a.records), strip(b.records));
    }

    #[test]
    fn memory_budget_skips() {
        let graphs = vec![NamedGraph::new("p", generate::path(100))];
        let opts = ProfileOptions {
            memory_budget_bytes: Some(1000),
            ..quick()
        };
        let out = profile(&graphs, &[(16, 16)], GnnModel::Gcn, &opts).unwrap();
        assert!(out.records.is_empty());
        assert_eq!(out.skipped.len(), 1);
        assert!(profile(&graphs, &[(4, 4)], GnnModel::Gcn, &ProfileOptions { reps: 2, ..quick() }).is_err());
    }

    #[test]
    fn ndjson_round_trip() {
        let graphs = vec![NamedGraph::new("g", generate::grid(4, 4))];
        let opts = ProfileOptions {
            opt_config: Some(TilingConfig::new(8, 4, true).unwrap()),
            amortize_precompute: false,
            ..quick()
        };
        let recs = profile(&graphs, &[(4, 2)], GnnModel::Gcn, &opts).unwrap().records;
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("p.ndjson");
        write_ndjson(&p, &recs).unwrap();
        assert_eq!(read_ndjson(&p).unwrap(), recs);
    }

    #[test]
    fn median_and_cv() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(coefficient_of_variation(&[2.0, 2.0, 2.0]), 0.0);
    }
}
