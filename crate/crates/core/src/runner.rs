//! A single GNN layer instance: graph, seeded embeddings and weights, and the
//! optional optimization config, ready to run under any of its compositions.

use std::time::Instant;

use crate::composition::{Activation, Composition, GnnModel};
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::gat::{gat_layer_on, GatLayerSpec};
use crate::gcn::{gcn_layer_on, precompute_normalized_on, GcnLayerSpec, NormalizedGraph};
use crate::opt::{reorder_degree, Permutation, TilingConfig};
use crate::sparse::{CsrMatrix, DenseMatrix};

#[derive(Debug, Clone)]
enum LayerSpec {
    Gcn(GcnLayerSpec),
    Gat(GatLayerSpec),
}

#[derive(Debug, Clone)]
pub struct LayerProblem {
    model: GnnModel,
    graph: NormalizedGraph,
    h: DenseMatrix,
    spec: LayerSpec,
    permutation: Option<Permutation>,
    tiling: Option<TilingConfig>,
    reorder_s: f64,
}

impl LayerProblem {
    /// Builds a layer over the raw adjacency `adj`. H, W and the attention
    /// vectors are drawn from uniform(-0.5, 0.5) streams derived from `seed`.
    /// When `tiling.reorder` is set the graph is relabeled by degree; inputs
    /// are generated in the original labeling, so outputs are comparable.
    pub fn build(
        adj: &CsrMatrix,
        model: GnnModel,
        k1: usize,
        k2: usize,
        seed: u64,
        tiling: Option<TilingConfig>,
        activation: Activation,
    ) -> Result<Self> {
        if k1 == 0 || k2 == 0 {
            return Err(Error::Config(format!("embedding sizes must be >= 1, got {k1}:{k2}")));
        }
        if let Some(cfg) = &tiling {
            cfg.validate()?;
        }
        let n = adj.n_rows();
        let h_orig = DenseMatrix::random_uniform(n, k1, seed);
        let weights = DenseMatrix::random_uniform(k1, k2, seed.wrapping_add(1));

        let started = Instant::now();
        let (graph, h, permutation) = match tiling.filter(|c| c.reorder) {
            Some(_) => {
                let (reordered, perm) = reorder_degree(adj)?;
                let h = perm.permute_rows(&h_orig)?;
                (NormalizedGraph::from_adjacency(&reordered)?, h, Some(perm))
            }
            None => (NormalizedGraph::from_adjacency(adj)?, h_orig, None),
        };
        let reorder_s = if permutation.is_some() {
            started.elapsed().as_secs_f64()
        } else {
            0.0
        };

        let default = model.default_composition();
        let spec = match model {
            GnnModel::Gcn => LayerSpec::Gcn(GcnLayerSpec::new(weights, default)?.with_activation(activation)),
            GnnModel::Gat => LayerSpec::Gat(
                GatLayerSpec::new(
                    weights,
                    DenseMatrix::random_uniform(k2, 1, seed.wrapping_add(2)),
                    DenseMatrix::random_uniform(k2, 1, seed.wrapping_add(3)),
                    default,
                )?
                .with_activation(activation),
            ),
        };
        Ok(Self {
            model,
            graph,
            h,
            spec,
            permutation,
            tiling,
            reorder_s,
        })
    }

    pub fn model(&self) -> GnnModel {
        self.model
    }

    pub fn graph(&self) -> &NormalizedGraph {
        &self.graph
    }

    pub fn embeddings(&self) -> &DenseMatrix {
        &self.h
    }

    pub fn tiling(&self) -> Option<&TilingConfig> {
        self.tiling.as_ref()
    }

    /// Wall time spent reordering during [`LayerProblem::build`].
    pub fn reorder_seconds(&self) -> f64 {
        self.reorder_s
    }

    /// Executor carrying this problem's tiling config.
    pub fn executor(&self) -> Executor {
        match self.tiling {
            Some(cfg) => Executor::new().with_tiling(cfg),
            None => Executor::new(),
        }
    }

    /// One-time setup for `c`; returns its cost in seconds (Ñ for precompute, else 0).
    pub fn prepare(&mut self, c: Composition) -> Result<f64> {
        self.check(c)?;
        if c == Composition::Precompute && self.graph.n_tilde().is_none() {
            let started = Instant::now();
            self.graph.precompute()?;
            return Ok(started.elapsed().as_secs_f64());
        }
        Ok(0.0)
    }

    /// Runs the layer under `c` in the problem's internal node order.
    pub fn run(&self, exec: &Executor, c: Composition) -> Result<DenseMatrix> {
        self.check(c)?;
        match &self.spec {
            LayerSpec::Gcn(spec) => gcn_layer_on(exec, &self.graph, &self.h, &spec.clone().with_composition(c)?),
            LayerSpec::Gat(spec) => {
                gat_layer_on(exec, self.graph.a_tilde(), &self.h, &spec.clone().with_composition(c)?)
            }
        }
    }

    /// Like [`LayerProblem::run`] but rebuilds Ñ first for the precompute composition.
    pub fn run_with_setup(&self, exec: &Executor, c: Composition) -> Result<DenseMatrix> {
        if c != Composition::Precompute {
            return self.run(exec, c);
        }
        let n_tilde = precompute_normalized_on(exec, &self.graph)?;
        let mut g = NormalizedGraph::from_parts(
            self.graph.a_tilde().clone(),
            self.graph.d_inv_sqrt().clone(),
            self.graph.is_unweighted(),
        )?;
        g.precompute_from(n_tilde);
        match &self.spec {
            LayerSpec::Gcn(spec) => gcn_layer_on(exec, &g, &self.h, &spec.clone().with_composition(c)?),
            LayerSpec::Gat(_) => unreachable!("checked above"),
        }
    }

    /// Maps an output back to the original node labeling.
    pub fn to_original_order(&self, out: DenseMatrix) -> Result<DenseMatrix> {
        match &self.permutation {
            Some(p) => p.unpermute_rows(&out),
            None => Ok(out),
        }
    }

    fn check(&self, c: Composition) -> Result<()> {
        if c.model() != self.model {
            return Err(Error::Config(format!("{c} does not apply to {}", self.model)));
        }
        Ok(())
    }
}

/// Rough peak working set of one layer run, in bytes.
pub fn estimate_layer_bytes(n: usize, nnz: usize, k1: usize, k2: usize) -> u64 {
    let (n, nnz, k1, k2) = (n as u64, nnz as u64, k1 as u64, k2 as u64);
    let kmax = k1.max(k2);
    // H, H·W, two intermediates, output, W; CSR Ã, Ñ and α with self loops
    8 * (n * (k1 + k2 + 2 * kmax + k2) + k1 * k2) + 3 * 16 * (nnz + n)
}
