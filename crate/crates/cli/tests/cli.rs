use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

use gnnmix_core::generate;
use gnnmix_core::profiler::{write_ndjson, ProfileRecord};
use gnnmix_core::sparse::write_matrix_market;
use gnnmix_core::features::extract_features;
use gnnmix_core::{Composition, GnnModel};
use serde_json::Value;

fn gnnmix(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gnnmix"))
        .args(args)
        .env_remove("SENSEI_THREADS")
        .output()
        .expect("binary runs")
}

fn json_ok(args: &[&str]) -> Value {
    let out = gnnmix(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn dynamic_always(path: &Path, groups: usize) {
    let mut recs = Vec::new();
    for i in 0..groups {
        let g = generate::erdos_renyi(100 + 10 * i, 2.0 + i as f64, i as u64);
        let features = extract_features(&g).unwrap();
        for (c, t) in [(Composition::Dynamic, 1.0), (Composition::Precompute, 2.0)] {
            recs.push(ProfileRecord {
                graph_id: format!("g{i}"),
                features,
                model: GnnModel::Gcn,
                k1: 32,
                k2: 32,
                composition: c,
                opt_config: None,
                hw_tag: "t".into(),
                hw_descriptor: vec![],
                median_time_s: t,
                iterations: 3,
                cv: 0.0,
                unreliable: false,
                one_time_cost_s: 0.0,
                amortized: true,
            });
        }
    }
    write_ndjson(path, &recs).unwrap();
}

#[test]
fn featurize_star5() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("star5.mtx");
    write_matrix_market(&p, &generate::star(5)).unwrap();
    let f = json_ok(&["featurize", "--graph", p.to_str().unwrap()]);
    assert_eq!(f["n_rows"], 5);
    assert_eq!(f["n_nnzs"], 8);
    assert_eq!(f["nnz_mean"], 1.6);
    assert_eq!(f["d_min"], 1);
    assert_eq!(f["d_max"], 4);
    assert!((f["d_dentr"].as_f64().unwrap() - 0.7219280948873623).abs() < 1e-12);
    assert!((f["e_dentr"].as_f64().unwrap() - 0.8613531161467861).abs() < 1e-12);
}

#[test]
fn fixed_compositions_agree() {
    let run = |c: &str| {
        json_ok(&["run", "--graph", "powerlaw:2000:8:3", "--k1", "16", "--k2", "48", "--composition", c, "--reps", "3", "--seed", "5"])
    };
    let a = run("precompute");
    let b = run("dynamic");
    let (sa, sb) = (a["checksum"]["abs_sum"].as_f64().unwrap(), b["checksum"]["abs_sum"].as_f64().unwrap());
    assert!(((sa - sb) / sa).abs() < 1e-9, "{sa} vs {sb}");
    assert_eq!(a["composition"], "precompute");
    assert_eq!(b["composition"], "dynamic");
}

#[test]
fn auto_with_dynamic_always_model() {
    let dir = tempfile::tempdir().unwrap();
    let prof = dir.path().join("p.ndjson");
    let model = dir.path().join("gcn.model");
    dynamic_always(&prof, 25);
    let t = json_ok(&["train", "--profiles", prof.to_str().unwrap(), "--model", "gcn", "--out", model.to_str().unwrap()]);
    assert_eq!(t["groups"], 25);

    let r = json_ok(&["run", "--graph", "grid:40x40", "--k1", "32", "--k2", "32", "--model-file", model.to_str().unwrap(), "--reps", "3"]);
    assert_eq!(r["composition"], "dynamic");
    assert_eq!(r["auto"], true);
    assert!(r["selection_overhead_s"].as_f64().unwrap() > 0.0);
    assert!(r["overhead_iterations"].is_number());

    let s = json_ok(&["select", "--model-file", model.to_str().unwrap(), "--graph", "star:64", "--k1", "512", "--k2", "8"]);
    assert_eq!(s["composition"], "dynamic");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let prof = dir.path().join("p.ndjson");
    dynamic_always(&prof, 5);
    let out = dir.path().join("m.json");
    let train = gnnmix(&["train", "--profiles", prof.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(train.status.code(), Some(5), "{}", String::from_utf8_lossy(&train.stderr));
    assert!(train.stdout.is_empty());
    assert!(!train.stderr.is_empty());

    assert_eq!(gnnmix(&["featurize", "--graph", "/no/such/file.mtx"]).status.code(), Some(3));
    assert_eq!(gnnmix(&["run", "--graph", "path:10", "--k1", "4", "--k2", "4"]).status.code(), Some(7));
    assert_eq!(
        gnnmix(&["run", "--graph", "path:10", "--k1", "4", "--k2", "4", "--composition", "reuse"]).status.code(),
        Some(7)
    );
    assert_eq!(gnnmix(&["run", "--graph", "path:10"]).status.code(), Some(2));

    let bad = dir.path().join("bad.mtx");
    std::fs::write(&bad, "%%MatrixMarket matrix coordinate real general\n2 2 1\n3 1 1.0\n").unwrap();
    assert_eq!(gnnmix(&["featurize", "--graph", bad.to_str().unwrap()]).status.code(), Some(3));

    dynamic_always(&prof, 20);
    json_ok(&["train", "--profiles", prof.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    let mut m: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    m["format_version"] = 7.into();
    std::fs::write(&out, m.to_string()).unwrap();
    let sel = gnnmix(&["select", "--model-file", out.to_str().unwrap(), "--graph", "path:10", "--k1", "4", "--k2", "4"]);
    assert_eq!(sel.status.code(), Some(6));
}

#[test]
fn profile_writes_records_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let graphs = dir.path().join("g");
    json_ok(&["generate", "--bundled", "--out-dir", graphs.to_str().unwrap()]);
    let strip = |p: &Path| -> Vec<Value> {
        std::fs::read_to_string(p)
            .unwrap()
            .lines()
            .map(|l| {
                let mut v: Value = serde_json::from_str(l).unwrap();
                for k in ["median_time_s", "cv", "unreliable", "one_time_cost_s"] {
                    v.as_object_mut().unwrap().remove(k);
                }
                v
            })
            .collect()
    };
    let mut outs = Vec::new();
    for i in 0..2 {
        let out = dir.path().join(format!("p{i}.ndjson"));
        let s = json_ok(&[
            "profile", "--graphs", graphs.to_str().unwrap(), "--model", "gat", "--sizes", "8:16,16:8",
            "--reps", "3", "--warmup", "1", "--out", out.to_str().unwrap(), "--seed", "3", "--threads", "1",
        ]);
        assert_eq!(s["records"], 4 * 2 * 2);
        outs.push(strip(&out));
    }
    assert_eq!(outs[0], outs[1]);
    assert_eq!(outs[0][0]["graph_id"], "grid_64x64");
}

#[test]
fn memory_budget_skips() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("p.ndjson");
    let s = json_ok(&[
        "profile", "--graphs", "path:5000", "--sizes", "1024:2048", "--reps", "3", "--memory-budget-mb", "1",
        "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(s["records"], 0);
    assert_eq!(s["skipped"][0]["reason"], "out of memory");
}

#[test]
fn bench_on_bundled_graphs_within_budget() {
    let started = Instant::now();
    let b = json_ok(&["bench", "--graphs", "path:4096,star:4096,grid:64x64", "--reps", "3", "--opt", "--budget", "4"]);
    let secs = started.elapsed().as_secs_f64();
    let results = b["results"].as_array().unwrap();
    assert_eq!(results.len(), 3 * 3);
    assert!(results.iter().all(|r| r["opt"]["tuning"]["best"].is_object()));
    assert!(secs < 60.0, "bench took {secs} s");
}

#[test]
fn threads_flag_and_env() {
    let a = json_ok(&["run", "--graph", "er:500:6:1", "--k1", "8", "--k2", "8", "--composition", "dynamic", "--threads", "1"]);
    let out = Command::new(env!("CARGO_BIN_EXE_gnnmix"))
        .args(["run", "--graph", "er:500:6:1", "--k1", "8", "--k2", "8", "--composition", "dynamic"])
        .env("SENSEI_THREADS", "1")
        .output()
        .unwrap();
    let b: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(a["checksum"], b["checksum"]);
}
