use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::gbdt::{BoostParams, Ensemble, RankingSet};
use crate::composition::{Composition, GnnModel};
use crate::error::{Error, Result};
use crate::features::GraphFeatures;
use crate::opt::TilingConfig;
use crate::profiler::ProfileRecord;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainParams {
    pub n_estimators: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_child_weight: f64,
    pub lambda: f64,
    pub min_groups: usize,
}

impl TrainParams {
    /// Settings for selecting between plain compositions.
    pub fn plain() -> Self {
        Self {
            n_estimators: 300,
            learning_rate: 0.001,
            max_depth: 6,
            min_child_weight: 1.0,
            lambda: 1.0,
            min_groups: 20,
        }
    }

    /// Settings for the tiled execution path, where the data is noisier.
    pub fn optimized() -> Self {
        Self {
            n_estimators: 410,
            learning_rate: 0.05,
            ..Self::plain()
        }
    }
}

impl Default for TrainParams {
    fn default() -> Self {
        Self::plain()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectorInput {
    pub features: GraphFeatures,
    pub k1: usize,
    pub k2: usize,
    pub opt_config: Option<TilingConfig>,
    pub hw_descriptor: Vec<f64>,
}

impl SelectorInput {
    pub fn from_record(r: &ProfileRecord) -> Self {
        Self {
            features: r.features,
            k1: r.k1,
            k2: r.k2,
            opt_config: r.opt_config,
            hw_descriptor: r.hw_descriptor.clone(),
        }
    }

    fn encode(&self, composition: Composition) -> Vec<f64> {
        let mut x = Vec::with_capacity(14 + self.hw_descriptor.len());
        x.extend(self.features.to_vec());
        x.push(self.k1 as f64);
        x.push(self.k2 as f64);
        x.extend(encode_opt_config(self.opt_config.as_ref()));
        x.extend(&self.hw_descriptor);
        x.push(composition.index() as f64);
        x
    }
}

/// `[log2 segment width, log2 tile height, reorder]`, or all `-1` when untiled.
pub fn encode_opt_config(cfg: Option<&TilingConfig>) -> [f64; 3] {
    match cfg {
        Some(c) => [
            (c.col_segment_width as f64).log2(),
            (c.row_tile_height as f64).log2(),
            if c.reorder { 1.0 } else { 0.0 },
        ],
        None => [-1.0; 3],
    }
}

pub fn feature_names(hw_len: usize) -> Vec<String> {
    let mut names: Vec<String> = GraphFeatures::NAMES.iter().map(|s| s.to_string()).collect();
    names.extend(["k1", "k2", "opt_col_segment_log2", "opt_row_tile_log2", "opt_reorder"].map(String::from));
    names.extend((0..hw_len).map(|i| format!("hw_{i}")));
    names.push("composition".into());
    names
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectorModel {
    pub format_version: u32,
    pub model_tag: GnnModel,
    pub objective: String,
    pub feature_names: Vec<String>,
    pub hw_descriptor_len: usize,
    pub params: TrainParams,
    pub n_train_groups: usize,
    pub ensemble: Ensemble,
}

impl SelectorModel {
    /// Trains on the records of `model_tag`. Groups are formed by
    /// [`ProfileRecord::group_key`]; groups missing a composition are dropped.
    pub fn train(records: &[ProfileRecord], model_tag: GnnModel, params: &TrainParams) -> Result<Self> {
        let mut groups: BTreeMap<String, Vec<&ProfileRecord>> = BTreeMap::new();
        for r in records.iter().filter(|r| r.model == model_tag) {
            groups.entry(r.group_key()).or_default().push(r);
        }
        let hw_len = groups
            .values()
            .next()
            .map_or(0, |g| g[0].hw_descriptor.len());

        let mut set = RankingSet::default();
        for (key, group) in &groups {
            if let Some(r) = group.iter().find(|r| r.hw_descriptor.len() != hw_len) {
                return Err(Error::Schema {
                    expected: format!("hw_descriptor of length {hw_len}"),
                    got: format!("length {} in group {key}", r.hw_descriptor.len()),
                });
            }
            // Fastest observation per composition.
            let mut best: BTreeMap<usize, &ProfileRecord> = BTreeMap::new();
            for r in group {
                let e = best.entry(r.composition.index()).or_insert(r);
                if r.median_time_s < e.median_time_s {
                    *e = r;
                }
            }
            if best.len() < 2 {
                log::warn!("excluding group {key}: only one composition profiled");
                continue;
            }
            set.push_group(best.values().map(|r| {
                (SelectorInput::from_record(r).encode(r.composition), r.median_time_s)
            }));
        }

        if set.groups.len() < params.min_groups {
            return Err(Error::InsufficientData {
                groups: set.groups.len(),
                required: params.min_groups,
            });
        }
        let names = feature_names(hw_len);
        let boost = BoostParams {
            n_estimators: params.n_estimators,
            learning_rate: params.learning_rate,
            max_depth: params.max_depth,
            min_child_weight: params.min_child_weight,
            lambda: params.lambda,
            min_split_gain: 1e-12,
            forced_root_feature: Some(names.len() - 1),
        };
        let ensemble = Ensemble::fit(&set, &boost)?;
        Ok(Self {
            format_version: MODEL_FORMAT_VERSION,
            model_tag,
            objective: "rank:pairwise".into(),
            feature_names: names,
            hw_descriptor_len: hw_len,
            params: params.clone(),
            n_train_groups: set.groups.len(),
            ensemble,
        })
    }

    /// A model with no trees; every query ties and returns the default.
    pub fn untrained(model_tag: GnnModel, hw_len: usize) -> Self {
        let names = feature_names(hw_len);
        Self {
            format_version: MODEL_FORMAT_VERSION,
            model_tag,
            objective: "rank:pairwise".into(),
            ensemble: Ensemble { n_features: names.len(), trees: Vec::new() },
            feature_names: names,
            hw_descriptor_len: hw_len,
            params: TrainParams::plain(),
            n_train_groups: 0,
        }
    }

    fn check_input(&self, input: &SelectorInput) -> Result<()> {
        if input.hw_descriptor.len() != self.hw_descriptor_len {
            return Err(Error::Schema {
                expected: format!("hw_descriptor of length {}", self.hw_descriptor_len),
                got: format!("length {}", input.hw_descriptor.len()),
            });
        }
        let f = input.features.to_vec();
        if f.iter().chain(&input.hw_descriptor).any(|v| !v.is_finite()) {
            return Err(Error::Precondition("selector input contains non-finite values".into()));
        }
        Ok(())
    }

    /// Ranking score per composition, in [`GnnModel::compositions`] order.
    pub fn scores(&self, input: &SelectorInput) -> Result<[(Composition, f64); 2]> {
        self.check_input(input)?;
        Ok(self
            .model_tag
            .compositions()
            .map(|c| (c, self.ensemble.predict(&input.encode(c)))))
    }

    pub fn select(&self, input: &SelectorInput) -> Result<Composition> {
        let [(default, s0), (alt, s1)] = self.scores(input)?;
        Ok(if s1 > s0 { alt } else { default })
    }

    /// Split gain per feature normalized to sum to one, descending. All zeros
    /// when no split was ever made.
    pub fn feature_importance(&self) -> Vec<(String, f64)> {
        let gains = self.ensemble.gain_by_feature();
        let total: f64 = gains.iter().sum();
        let mut out: Vec<(String, f64)> = self
            .feature_names
            .iter()
            .zip(gains)
            .map(|(n, g)| (n.clone(), if total > 0.0 { g / total } else { 0.0 }))
            .collect();
        out.sort_by(|a, b| b.1.total_cmp(&a.1));
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(s)?;
        if m.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Schema {
                expected: format!("model format version {MODEL_FORMAT_VERSION}"),
                got: m.format_version.to_string(),
            });
        }
        if m.feature_names != feature_names(m.hw_descriptor_len) || m.ensemble.n_features != m.feature_names.len() {
            return Err(Error::Schema {
                expected: feature_names(m.hw_descriptor_len).join(","),
                got: m.feature_names.join(","),
            });
        }
        m.ensemble.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::time::Instant;

    fn features(n_rows: usize, nnz_mean: f64) -> GraphFeatures {
        let n_nnzs = (n_rows as f64 * nnz_mean).round() as usize;
        GraphFeatures {
            n_rows,
            n_nnzs,
            nnz_den: n_nnzs as f64 / (n_rows as f64).powi(2),
            nnz_mean: n_nnzs as f64 / n_rows as f64,
            d_min: 1,
            d_max: (nnz_mean * 4.0) as usize,
            d_dentr: 0.5,
            e_dentr: 0.9,
        }
    }

    fn record(id: usize, f: GraphFeatures, k: (usize, usize), c: Composition, t: f64) -> ProfileRecord {
        ProfileRecord {
            graph_id: format!("g{id}"),
            features: f,
            model: c.model(),
            k1: k.0,
            k2: k.1,
            composition: c,
            opt_config: None,
            hw_tag: "test".into(),
            hw_descriptor: vec![8.0e6],
            median_time_s: t,
            iterations: 10,
            cv: 0.01,
            unreliable: false,
            one_time_cost_s: 0.0,
            amortized: true,
        }
    }

    /// Dynamic wins iff nnz_mean > 50.
    fn flip_data(n: usize, seed: u64) -> Vec<ProfileRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        for id in 0..n {
            let f = features(rng.gen_range(1000..100_000), rng.gen_range(1.0..100.0));
            let k = [(32, 32), (32, 256), (1024, 32)][rng.gen_range(0..3)];
            let base = rng.gen_range(0.001..1.0);
            let dyn_wins = f.nnz_mean > 50.0;
            out.push(record(id, f, k, Composition::Dynamic, if dyn_wins { base } else { base * 1.5 }));
            out.push(record(id, f, k, Composition::Precompute, if dyn_wins { base * 1.5 } else { base }));
        }
        out
    }

    fn input(r: &ProfileRecord) -> SelectorInput {
        SelectorInput::from_record(r)
    }

    #[test]
    fn dynamic_always_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut recs = Vec::new();
        for id in 0..30 {
            let f = features(rng.gen_range(100..10_000), rng.gen_range(1.0..100.0));
            recs.push(record(id, f, (32, 32), Composition::Dynamic, 1.0));
            recs.push(record(id, f, (32, 32), Composition::Precompute, 2.0));
        }
        let m = SelectorModel::train(&recs, GnnModel::Gcn, &TrainParams::plain()).unwrap();
        for r in &recs {
            assert_eq!(m.select(&input(r)).unwrap(), Composition::Dynamic);
        }
        let odd = SelectorInput { features: features(7, 3.0), k1: 4096, k2: 1, opt_config: None, hw_descriptor: vec![1.0] };
        assert_eq!(m.select(&odd).unwrap(), Composition::Dynamic);
    }

    #[test]
    fn untrained_model_returns_default() {
        let x = SelectorInput { features: features(100, 5.0), k1: 32, k2: 32, opt_config: None, hw_descriptor: vec![] };
        assert_eq!(SelectorModel::untrained(GnnModel::Gcn, 0).select(&x).unwrap(), Composition::Dynamic);
        assert_eq!(SelectorModel::untrained(GnnModel::Gat, 0).select(&x).unwrap(), Composition::Reuse);
    }

    #[test]
    fn flip_is_learned_and_nnz_mean_dominates() {
        let m = SelectorModel::train(&flip_data(200, 1), GnnModel::Gcn, &TrainParams::plain()).unwrap();
        let test = flip_data(200, 99);
        let mut correct = 0;
        for pair in test.chunks(2) {
            let best = if pair[0].median_time_s < pair[1].median_time_s { pair[0].composition } else { pair[1].composition };
            correct += (m.select(&input(&pair[0])).unwrap() == best) as usize;
        }
        let acc = correct as f64 / 200.0;
        assert!(acc >= 0.9, "held-out accuracy {acc}");

        let imp = m.feature_importance();
        assert_eq!(imp[0].0, "nnz_mean", "{imp:?}");
        let total: f64 = imp.iter().map(|p| p.1).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_labels_give_zero_importance() {
        let mut recs = Vec::new();
        for id in 0..25 {
            let f = features(100 + id, 10.0 + id as f64);
            recs.push(record(id, f, (32, 32), Composition::Dynamic, 1.0));
            recs.push(record(id, f, (32, 32), Composition::Precompute, 1.0));
        }
        let m = SelectorModel::train(&recs, GnnModel::Gcn, &TrainParams::plain()).unwrap();
        assert!(m.feature_importance().iter().all(|p| p.1 == 0.0));
        assert_eq!(m.select(&input(&recs[0])).unwrap(), Composition::Dynamic);
    }

    #[test]
    fn groupwise_rescaling_does_not_change_rankings() {
        let recs = flip_data(60, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut scaled = recs.clone();
        for pair in scaled.chunks_mut(2) {
            let s = rng.gen_range(0.01..100.0);
            pair.iter_mut().for_each(|r| r.median_time_s *= s);
        }
        let a = SelectorModel::train(&recs, GnnModel::Gcn, &TrainParams::optimized()).unwrap();
        let b = SelectorModel::train(&scaled, GnnModel::Gcn, &TrainParams::optimized()).unwrap();
        for r in &recs {
            assert_eq!(a.select(&input(r)).unwrap(), b.select(&input(r)).unwrap());
        }
    }

    #[test]
    fn save_load_round_trip() {
        let m = SelectorModel::train(&flip_data(40, 2), GnnModel::Gcn, &TrainParams::optimized()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        m.save(&path).unwrap();
        let back = SelectorModel::load(&path).unwrap();
        assert_eq!(back, m);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let x = SelectorInput {
                features: features(rng.gen_range(1..1_000_000), rng.gen_range(0.5..500.0)),
                k1: rng.gen_range(1..4096),
                k2: rng.gen_range(1..4096),
                opt_config: None,
                hw_descriptor: vec![rng.gen_range(0.0..1e8)],
            };
            assert_eq!(m.scores(&x).unwrap(), back.scores(&x).unwrap());
        }
    }

    #[test]
    fn training_preconditions() {
        let recs = flip_data(19, 4);
        assert!(matches!(
            SelectorModel::train(&recs, GnnModel::Gcn, &TrainParams::plain()),
            Err(Error::InsufficientData { groups: 19, required: 20 })
        ));
        // Single-composition groups are dropped, not fatal.
        let mut recs = flip_data(20, 4);
        recs.push(record(999, features(10, 2.0), (32, 32), Composition::Dynamic, 1.0));
        let m = SelectorModel::train(&recs, GnnModel::Gcn, &TrainParams::plain()).unwrap();
        assert_eq!(m.n_train_groups, 20);
        // No GAT records at all.
        assert!(SelectorModel::train(&recs, GnnModel::Gat, &TrainParams::plain()).is_err());

        let mut bad = flip_data(20, 4);
        bad[3].hw_descriptor.push(1.0);
        assert!(matches!(SelectorModel::train(&bad, GnnModel::Gcn, &TrainParams::plain()), Err(Error::Schema { .. })));
    }

    #[test]
    fn schema_and_version_checks() {
        let m = SelectorModel::train(&flip_data(20, 6), GnnModel::Gcn, &TrainParams::plain()).unwrap();
        let x = SelectorInput { features: features(10, 2.0), k1: 1, k2: 1, opt_config: None, hw_descriptor: vec![] };
        assert!(matches!(m.select(&x), Err(Error::Schema { .. })));

        let mut v: serde_json::Value = serde_json::from_str(&m.to_json().unwrap()).unwrap();
        v["format_version"] = 99.into();
        assert!(SelectorModel::from_json(&v.to_string()).is_err());
    }

    #[test]
    fn decision_latency_under_a_millisecond() {
        let m = SelectorModel::train(&flip_data(100, 8), GnnModel::Gcn, &TrainParams::optimized()).unwrap();
        let x = input(&flip_data(1, 9)[0]);
        let n = 1000;
        let t = Instant::now();
        for _ in 0..n {
            std::hint::black_box(m.select(std::hint::black_box(&x)).unwrap());
        }
        let per = t.elapsed().as_secs_f64() / n as f64;
        assert!(per <= 1e-3, "{per} s per decision");
    }
}
