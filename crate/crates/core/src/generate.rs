//! Synthetic undirected graphs (unit values, no self loops) and the bundled set.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

fn from_edges(n: usize, edges: &[(usize, usize)]) -> CsrMatrix {
    let triplets: Vec<_> = edges
        .iter()
        .flat_map(|&(u, v)| [(u, v, 1.0), (v, u, 1.0)])
        .collect();
    CsrMatrix::from_triplets(n, n, &triplets)
        .expect("generated edges are in range")
        .ones_valued()
}

pub fn path(n: usize) -> CsrMatrix {
    let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
    from_edges(n, &edges)
}

/// Node 0 joined to every other node.
pub fn star(n: usize) -> CsrMatrix {
    let edges: Vec<_> = (1..n).map(|i| (0, i)).collect();
    from_edges(n, &edges)
}

/// 4-neighbour lattice, row-major node ids.
pub fn grid(rows: usize, cols: usize) -> CsrMatrix {
    let mut edges = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let v = r * cols + c;
            if c + 1 < cols {
                edges.push((v, v + 1));
            }
            if r + 1 < rows {
                edges.push((v, v + cols));
            }
        }
    }
    from_edges(rows * cols, &edges)
}

/// Circulant `k`-regular graph: each node joined to its `k/2` nearest neighbours on each side.
pub fn ring(n: usize, k: usize) -> Result<CsrMatrix> {
    if k % 2 != 0 || k >= n {
        return Err(Error::Config(format!("ring needs even k < n, got n={n}, k={k}")));
    }
    let edges: Vec<_> = (0..n)
        .flat_map(|i| (1..=k / 2).map(move |s| (i, (i + s) % n)))
        .collect();
    Ok(from_edges(n, &edges))
}

/// Each node joined to every node within `half_width` positions.
pub fn banded(n: usize, half_width: usize) -> CsrMatrix {
    let edges: Vec<_> = (0..n)
        .flat_map(|i| (i + 1..(i + half_width + 1).min(n)).map(move |j| (i, j)))
        .collect();
    from_edges(n, &edges)
}

/// Uniform random graph with about `avg_degree · n / 2` distinct edges.
pub fn erdos_renyi(n: usize, avg_degree: f64, seed: u64) -> CsrMatrix {
    let max_edges = n * n.saturating_sub(1) / 2;
    let target = ((avg_degree * n as f64 / 2.0).round() as usize).min(max_edges);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::with_capacity(target);
    let mut edges = Vec::with_capacity(target);
    while edges.len() < target {
        let u = rng.gen_range(0..n);
        let v = rng.gen_range(0..n);
        if u == v {
            continue;
        }
        let e = (u.min(v), u.max(v));
        if seen.insert(e) {
            edges.push(e);
        }
    }
    from_edges(n, &edges)
}

/// Chung-Lu graph with expected degrees following a power law of the given exponent.
pub fn power_law(n: usize, avg_degree: f64, exponent: f64, seed: u64) -> CsrMatrix {
    let gamma = exponent.max(2.01);
    let weights: Vec<f64> = (0..n)
        .map(|i| ((i + 1) as f64).powf(-1.0 / (gamma - 1.0)))
        .collect();
    let mut cumulative = Vec::with_capacity(n);
    let mut total = 0.0;
    for w in &weights {
        total += w;
        cumulative.push(total);
    }
    let max_edges = n * n.saturating_sub(1) / 2;
    let target = ((avg_degree * n as f64 / 2.0).round() as usize).min(max_edges);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pick = |rng: &mut ChaCha8Rng| {
        let x = rng.gen::<f64>() * total;
        cumulative.partition_point(|&c| c < x).min(n - 1)
    };
    let mut seen = HashSet::with_capacity(target);
    let mut edges = Vec::with_capacity(target);
    let mut attempts = 0usize;
    while edges.len() < target && attempts < 50 * target.max(1) {
        attempts += 1;
        let u = pick(&mut rng);
        let v = pick(&mut rng);
        if u == v {
            continue;
        }
        let e = (u.min(v), u.max(v));
        if seen.insert(e) {
            edges.push(e);
        }
    }
    from_edges(n, &edges)
}

/// Parses generator specs such as `path:100`, `grid:8x8`, `ring:64:4`,
/// `banded:500:20`, `er:1000:8:1` or `powerlaw:1000:8:1`.
pub fn from_spec(spec: &str) -> Result<CsrMatrix> {
    let bad = || Error::Config(format!("bad generator spec {spec:?}"));
    let parts: Vec<&str> = spec.split(':').collect();
    let num = |i: usize| -> Result<usize> {
        parts.get(i).ok_or_else(bad)?.parse().map_err(|_| bad())
    };
    let real = |i: usize| -> Result<f64> {
        parts.get(i).ok_or_else(bad)?.parse().map_err(|_| bad())
    };
    let seed = |i: usize| -> Result<u64> {
        parts.get(i).map_or(Ok(0), |s| s.parse().map_err(|_| bad()))
    };
    let g = match parts[0] {
        "path" => path(num(1)?),
        "star" => star(num(1)?),
        "grid" => {
            let (r, c) = parts.get(1).and_then(|s| s.split_once('x')).ok_or_else(bad)?;
            grid(r.parse().map_err(|_| bad())?, c.parse().map_err(|_| bad())?)
        }
        "ring" => ring(num(1)?, num(2)?)?,
        "banded" => banded(num(1)?, num(2)?),
        "er" => erdos_renyi(num(1)?, real(2)?, seed(3)?),
        "powerlaw" => power_law(num(1)?, real(2)?, 2.5, seed(3)?),
        _ => return Err(bad()),
    };
    if g.n_rows() == 0 {
        return Err(Error::DegenerateInput(format!("{spec:?} produced an empty graph")));
    }
    Ok(g)
}

/// Small graphs shipped with the tools so every pipeline runs offline.
pub fn bundled() -> Vec<(String, CsrMatrix)> {
    vec![
        ("path_4096".to_string(), path(4096)),
        ("star_4096".to_string(), star(4096)),
        ("grid_64x64".to_string(), grid(64, 64)),
        ("powerlaw_4096".to_string(), power_law(4096, 8.0, 2.5, 1)),
    ]
}
