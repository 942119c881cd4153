use std::path::Path;
use std::time::Instant;

use gnnmix_core::features::{extract_features, GraphFeatures};
use gnnmix_core::gcn::{ordering_heuristic, Ordering};
use gnnmix_core::generate;
use gnnmix_core::opt::{autotune, default_candidates, AutotuneOptions, TilingConfig, TuningReport};
use gnnmix_core::profiler::{self, NamedGraph, ProfileOptions, ProfileRecord, GAT_SIZES, GCN_SIZES};
use gnnmix_core::ranking::{SelectorInput, SelectorModel, TrainParams};
use gnnmix_core::runner::LayerProblem;
use gnnmix_core::sparse::{read_matrix_market, write_matrix_market, CsrMatrix, DenseMatrix};
use gnnmix_core::{Activation, Composition, Error, GnnModel, Result};
use serde_json::{json, Value};

use crate::{BenchArgs, FeaturizeArgs, GenerateArgs, GlobalOpts, ProfileArgs, RunArgs, SelectArgs, TrainArgs};

/// Reads a Matrix Market file, or builds a graph from a generator spec when
/// no such file exists. Specs without an explicit seed take `seed`.
fn load_graph(src: &str, seed: u64) -> Result<(String, CsrMatrix)> {
    let path = Path::new(src);
    if path.is_file() {
        let id = path.file_stem().map_or(src.into(), |s| s.to_string_lossy().into_owned());
        return Ok((id, read_matrix_market(path)?));
    }
    let spec = match src.split(':').next() {
        Some("er" | "powerlaw") if src.split(':').count() == 3 => format!("{src}:{seed}"),
        _ => src.to_string(),
    };
    match generate::from_spec(&spec) {
        Ok(g) => Ok((spec.replace(':', "_"), g)),
        Err(_) => Err(Error::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, "no such file or generator spec"))),
    }
}

fn load_graphs(sources: &[String], seed: u64) -> Result<Vec<NamedGraph>> {
    let mut out = Vec::new();
    for src in sources {
        let path = Path::new(src);
        if src == "bundled" {
            out.extend(generate::bundled().into_iter().map(|(id, m)| NamedGraph::new(id, m)));
        } else if path.is_dir() {
            let mut files: Vec<_> = std::fs::read_dir(path)
                .map_err(|e| Error::io(path, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "mtx"))
                .collect();
            files.sort();
            for f in files {
                let (id, m) = load_graph(&f.to_string_lossy(), seed)?;
                out.push(NamedGraph::new(id, m));
            }
        } else {
            let (id, m) = load_graph(src, seed)?;
            out.push(NamedGraph::new(id, m));
        }
    }
    if out.is_empty() {
        return Err(Error::Config("no graphs found".into()));
    }
    Ok(out)
}

fn parse_sizes(s: &str) -> Result<Vec<(usize, usize)>> {
    s.split(',')
        .map(|p| {
            let bad = || Error::Config(format!("bad size pair {p:?}, expected k1:k2"));
            let (a, b) = p.trim().split_once(':').ok_or_else(bad)?;
            let (a, b): (usize, usize) = (a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?);
            if a == 0 || b == 0 {
                return Err(bad());
            }
            Ok((a, b))
        })
        .collect()
}

fn parse_tiling(s: &str) -> Result<TilingConfig> {
    let bad = || Error::Config(format!("bad tiling {s:?}, expected width:height:reorder"));
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return Err(bad());
    }
    let reorder = match parts[2] {
        "1" | "true" | "yes" => true,
        "0" | "false" | "no" => false,
        _ => return Err(bad()),
    };
    TilingConfig::new(parts[0].parse().map_err(|_| bad())?, parts[1].parse().map_err(|_| bad())?, reorder)
}

fn parse_yes_no(s: &str) -> Result<bool> {
    match s {
        "yes" | "true" | "1" => Ok(true),
        "no" | "false" | "0" => Ok(false),
        _ => Err(Error::Config(format!("expected yes or no, got {s:?}"))),
    }
}

fn parse_models(s: &str) -> Result<Vec<GnnModel>> {
    match s {
        "all" | "both" => Ok(vec![GnnModel::Gcn, GnnModel::Gat]),
        _ => Ok(vec![s.parse()?]),
    }
}

/// Width at which the layer's sparse aggregation runs, used as the tuning width.
fn aggregation_width(model: GnnModel, k1: usize, k2: usize) -> usize {
    match model {
        GnnModel::Gcn => match ordering_heuristic(k1, k2) {
            Ordering::UpdateFirst => k2,
            Ordering::AggregateFirst => k1,
        },
        GnnModel::Gat => k2,
    }
}

/// Order-fixed sums over the output, stable across runs at a fixed thread count.
fn checksum(m: &DenseMatrix) -> Value {
    let (mut sum, mut abs) = (0.0f64, 0.0f64);
    for &v in m.data() {
        sum += v;
        abs += v.abs();
    }
    json!({ "sum": sum, "abs_sum": abs, "rows": m.n_rows(), "cols": m.n_cols() })
}

fn tune(a: &CsrMatrix, features: &GraphFeatures, k: usize, budget: usize, seed: u64) -> Result<TuningReport> {
    let opts = AutotuneOptions { budget, seed, ..AutotuneOptions::default() };
    autotune(a, features, k, &default_candidates(), None, &opts)
}

pub fn generate(_: &GlobalOpts, a: &GenerateArgs) -> Result<Value> {
    if a.bundled {
        let dir = a.out_dir.as_ref().expect("clap enforces out_dir");
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut written = Vec::new();
        for (id, m) in generate::bundled() {
            let p = dir.join(format!("{id}.mtx"));
            write_matrix_market(&p, &m)?;
            written.push(json!({ "path": p, "n_rows": m.n_rows(), "nnz": m.nnz() }));
        }
        return Ok(json!({ "written": written }));
    }
    let spec = a.spec.as_deref().expect("clap enforces spec");
    let out = a.out.as_ref().ok_or_else(|| Error::Config("--out is required with --spec".into()))?;
    let m = generate::from_spec(spec)?;
    write_matrix_market(out, &m)?;
    Ok(json!({ "written": [{ "path": out, "n_rows": m.n_rows(), "nnz": m.nnz() }] }))
}

pub fn featurize(g: &GlobalOpts, a: &FeaturizeArgs) -> Result<Value> {
    let (_, m) = load_graph(&a.graph, g.seed)?;
    Ok(serde_json::to_value(extract_features(&m)?)?)
}

pub fn profile(g: &GlobalOpts, a: &ProfileArgs) -> Result<Value> {
    let model: GnnModel = a.model.parse()?;
    let sizes = match &a.sizes {
        Some(s) => parse_sizes(s)?,
        None => match model {
            GnnModel::Gcn => GCN_SIZES.to_vec(),
            GnnModel::Gat => GAT_SIZES.to_vec(),
        },
    };
    let graphs = load_graphs(&a.graphs, g.seed)?;
    let mut opts = ProfileOptions {
        reps: a.reps,
        warmup: a.warmup,
        seed: g.seed,
        hw_tag: a.hw_tag.clone(),
        hw_descriptor: a.hw_descriptor.clone(),
        amortize_precompute: parse_yes_no(&a.amortize_precompute)?,
        opt_config: a.tiling.as_deref().map(parse_tiling).transpose()?,
        activation: a.activation.parse()?,
        ..ProfileOptions::default()
    };
    if let Some(mb) = a.memory_budget_mb {
        opts.memory_budget_bytes = Some(mb << 20);
    }
    let outcome = profiler::profile(&graphs, &sizes, model, &opts)?;
    profiler::write_ndjson(&a.out, &outcome.records)?;
    Ok(json!({
        "out": a.out,
        "records": outcome.records.len(),
        "unreliable": outcome.records.iter().filter(|r| r.unreliable).count(),
        "skipped": outcome.skipped,
    }))
}

pub fn train(_: &GlobalOpts, a: &TrainArgs) -> Result<Value> {
    let model: GnnModel = a.model.parse()?;
    let mut params = match a.preset.as_str() {
        "plain" => TrainParams::plain(),
        "optimized" | "opt" => TrainParams::optimized(),
        p => return Err(Error::Config(format!("unknown preset {p:?}"))),
    };
    if let Some(n) = a.n_estimators {
        params.n_estimators = n;
    }
    if let Some(lr) = a.learning_rate {
        params.learning_rate = lr;
    }
    if let Some(d) = a.max_depth {
        params.max_depth = d;
    }
    if let Some(m) = a.min_groups {
        params.min_groups = m;
    }
    let mut records: Vec<ProfileRecord> = Vec::new();
    for p in &a.profiles {
        records.extend(profiler::read_ndjson(p)?);
    }
    let m = SelectorModel::train(&records, model, &params)?;
    m.save(&a.out)?;
    let importance: Vec<Value> = m
        .feature_importance()
        .into_iter()
        .map(|(f, g)| json!({ "feature": f, "gain": g }))
        .collect();
    Ok(json!({
        "out": a.out,
        "model": model,
        "groups": m.n_train_groups,
        "params": m.params,
        "feature_importance": importance,
    }))
}

pub fn select(g: &GlobalOpts, a: &SelectArgs) -> Result<Value> {
    let model = SelectorModel::load(&a.model_file)?;
    let (id, m) = load_graph(&a.graph, g.seed)?;
    let started = Instant::now();
    let features = extract_features(&m)?;
    let input = SelectorInput {
        features,
        k1: a.k1,
        k2: a.k2,
        opt_config: a.tiling.as_deref().map(parse_tiling).transpose()?,
        hw_descriptor: a.hw_descriptor.clone(),
    };
    let choice = model.select(&input)?;
    let overhead = started.elapsed().as_secs_f64();
    let scores: Vec<Value> = model
        .scores(&input)?
        .iter()
        .map(|(c, s)| json!({ "composition": c, "score": s }))
        .collect();
    Ok(json!({
        "graph": id,
        "model": model.model_tag,
        "composition": choice,
        "scores": scores,
        "features": features,
        "selection_overhead_s": overhead,
    }))
}

pub fn run(g: &GlobalOpts, a: &RunArgs) -> Result<Value> {
    let model: GnnModel = a.model.parse()?;
    let activation: Activation = a.activation.parse()?;
    let auto = a.composition == "auto";
    let fixed: Option<Composition> = if auto { None } else { Some(a.composition.parse()?) };
    if let Some(c) = fixed.filter(|c| c.model() != model) {
        return Err(Error::Config(format!("{c} does not apply to {model}")));
    }
    let selector = match (auto, &a.model_file) {
        (true, None) => return Err(Error::Config("--composition auto requires --model-file".into())),
        (true, Some(p)) => {
            let s = SelectorModel::load(p)?;
            if s.model_tag != model {
                return Err(Error::Schema { expected: model.to_string(), got: s.model_tag.to_string() });
            }
            Some(s)
        }
        (false, _) => None,
    };

    let t = Instant::now();
    let (id, adj) = load_graph(&a.graph, g.seed)?;
    let ingest_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let features = extract_features(&adj)?;
    let features_s = t.elapsed().as_secs_f64();

    let mut tuning = None;
    let tiling = match (&a.tiling, a.opt) {
        (Some(s), _) => Some(parse_tiling(s)?),
        (None, true) => {
            let report = tune(&adj, &features, aggregation_width(model, a.k1, a.k2), 20, g.seed)?;
            let best = report.best;
            tuning = Some(report);
            Some(best)
        }
        (None, false) => None,
    };

    let (composition, decision_s, scores) = match &selector {
        Some(s) => {
            let t = Instant::now();
            let input = SelectorInput {
                features,
                k1: a.k1,
                k2: a.k2,
                opt_config: tiling,
                hw_descriptor: a.hw_descriptor.clone(),
            };
            let c = s.select(&input)?;
            let decision_s = t.elapsed().as_secs_f64();
            (c, decision_s, Some(s.scores(&input)?.map(|(c, v)| json!({ "composition": c, "score": v }))))
        }
        None => (fixed.expect("fixed when not auto"), 0.0, None),
    };

    let t = Instant::now();
    let mut problem = LayerProblem::build(&adj, model, a.k1, a.k2, g.seed, tiling, activation)?;
    let setup_s = t.elapsed().as_secs_f64();
    let one_time_s = problem.prepare(composition)?;
    let exec = problem.executor();
    let timing = profiler::time_iterations(a.warmup, a.reps.max(1), || problem.run(&exec, composition))?;
    let out = problem.to_original_order(problem.run(&exec, composition)?)?;

    let selection_overhead_s = if auto { features_s + decision_s } else { 0.0 };
    Ok(json!({
        "graph": id,
        "model": model,
        "k1": a.k1,
        "k2": a.k2,
        "composition": composition,
        "auto": auto,
        "scores": scores,
        "tiling": tiling,
        "tuning": tuning,
        "stage_times_s": {
            "ingest": ingest_s,
            "feature_extraction": features_s,
            "decision": decision_s,
            "setup": setup_s,
            "one_time": one_time_s,
            "iteration_median": timing.median_s,
            "iterations_total": timing.samples.iter().sum::<f64>(),
        },
        "iterations": timing.samples.len(),
        "iteration_cv": timing.cv,
        "selection_overhead_s": selection_overhead_s,
        "overhead_iterations": selection_overhead_s / timing.median_s,
        "checksum": checksum(&out),
    }))
}

pub fn bench(g: &GlobalOpts, a: &BenchArgs) -> Result<Value> {
    let graphs = load_graphs(&a.graphs, g.seed)?;
    let models = parse_models(&a.model)?;
    let mut results = Vec::new();
    for model in models {
        let sizes = match &a.sizes {
            Some(s) => parse_sizes(s)?,
            None => match model {
                GnnModel::Gcn => vec![(32, 32), (32, 256)],
                GnnModel::Gat => vec![(32, 256)],
            },
        };
        let opts = ProfileOptions {
            reps: a.reps,
            warmup: a.warmup,
            seed: g.seed,
            ..ProfileOptions::default()
        };
        for graph in &graphs {
            for &(k1, k2) in &sizes {
                let one = std::slice::from_ref(graph);
                let plain = profiler::profile(one, &[(k1, k2)], model, &opts)?;
                let mut entry = summarize(&plain.records, model);
                if !plain.skipped.is_empty() {
                    entry["skipped"] = serde_json::to_value(&plain.skipped)?;
                }
                if a.opt && plain.skipped.is_empty() {
                    let features = extract_features(&graph.matrix)?;
                    let report = tune(&graph.matrix, &features, aggregation_width(model, k1, k2), a.budget, g.seed)?;
                    let tiled_opts = ProfileOptions { opt_config: Some(report.best), ..opts.clone() };
                    let tiled = profiler::profile(one, &[(k1, k2)], model, &tiled_opts)?;
                    entry["opt"] = json!({ "tuning": report, "result": summarize(&tiled.records, model) });
                }
                entry["graph"] = json!(graph.id);
                entry["model"] = json!(model);
                entry["k1"] = json!(k1);
                entry["k2"] = json!(k2);
                results.push(entry);
            }
        }
    }
    Ok(json!({ "results": results }))
}

fn summarize(records: &[ProfileRecord], model: GnnModel) -> Value {
    let time_of = |c: Composition| records.iter().find(|r| r.composition == c).map(|r| r.median_time_s);
    let times: serde_json::Map<String, Value> = model
        .compositions()
        .iter()
        .filter_map(|&c| time_of(c).map(|t| (c.to_string(), json!(t))))
        .collect();
    let best = records.iter().min_by(|a, b| a.median_time_s.total_cmp(&b.median_time_s));
    let default_t = time_of(model.default_composition());
    json!({
        "median_time_s": times,
        "fastest": best.map(|r| r.composition),
        "speedup_over_default": match (best, default_t) {
            (Some(b), Some(d)) => json!(d / b.median_time_s),
            _ => Value::Null,
        },
        "unreliable": records.iter().any(|r| r.unreliable),
    })
}
