//! GCN layer `σ(D̃^-½ Ã D̃^-½ H W)` under the precompute and dynamic compositions.

use serde::{Deserialize, Serialize};

use crate::composition::{Activation, Composition, GnnModel};
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::sparse::{add_self_loops, inv_sqrt_degrees, CsrMatrix, DegreeVector, DenseMatrix};

/// Which side of the layer the SpMM runs on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ordering {
    /// SpMM at width k1, then GEMM.
    AggregateFirst,
    /// GEMM first, SpMM at width k2.
    UpdateFirst,
}

/// Aggregate at the smaller embedding size; ties aggregate at k1.
pub fn ordering_heuristic(k1: usize, k2: usize) -> Ordering {
    if k2 < k1 {
        Ordering::UpdateFirst
    } else {
        Ordering::AggregateFirst
    }
}

#[derive(Debug, Clone)]
pub struct GcnLayerSpec {
    weights: DenseMatrix,
    composition: Composition,
    activation: Activation,
}

impl GcnLayerSpec {
    pub fn new(weights: DenseMatrix, composition: Composition) -> Result<Self> {
        if weights.n_rows() == 0 || weights.n_cols() == 0 {
            return Err(Error::Config(format!(
                "GCN weights must be at least 1x1, got {}x{}",
                weights.n_rows(),
                weights.n_cols()
            )));
        }
        if composition.model() != GnnModel::Gcn {
            return Err(Error::Config(format!("{composition} is not a GCN composition")));
        }
        Ok(Self {
            weights,
            composition,
            activation: Activation::Relu,
        })
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn with_composition(mut self, composition: Composition) -> Result<Self> {
        if composition.model() != GnnModel::Gcn {
            return Err(Error::Config(format!("{composition} is not a GCN composition")));
        }
        self.composition = composition;
        Ok(self)
    }

    pub fn k1(&self) -> usize {
        self.weights.n_rows()
    }

    pub fn k2(&self) -> usize {
        self.weights.n_cols()
    }

    pub fn weights(&self) -> &DenseMatrix {
        &self.weights
    }

    pub fn composition(&self) -> Composition {
        self.composition
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }
}

/// Self-loop augmented adjacency plus its normalization data.
#[derive(Debug, Clone)]
pub struct NormalizedGraph {
    a_tilde: CsrMatrix,
    d_inv_sqrt: DegreeVector,
    n_tilde: Option<CsrMatrix>,
    unweighted: bool,
}

impl NormalizedGraph {
    /// Adds self loops to a raw square adjacency and computes D̃^-½.
    /// The graph is flagged unweighted when every augmented value is 1.
    pub fn from_adjacency(a: &CsrMatrix) -> Result<Self> {
        let a_tilde = add_self_loops(a)?;
        let d_inv_sqrt = inv_sqrt_degrees(&a_tilde)?;
        let unweighted = a_tilde.is_unit_valued();
        Ok(Self {
            a_tilde,
            d_inv_sqrt,
            n_tilde: None,
            unweighted,
        })
    }

    /// Assembles a graph from an already augmented matrix.
    ///
    /// `unweighted = true` asserts that every logical edge value is 1; the
    /// dynamic composition then never reads `a_tilde`'s values.
    pub fn from_parts(a_tilde: CsrMatrix, d_inv_sqrt: DegreeVector, unweighted: bool) -> Result<Self> {
        if !a_tilde.is_square() || d_inv_sqrt.len() != a_tilde.n_rows() {
            return Err(Error::shape(
                "NormalizedGraph::from_parts",
                format!(
                    "{}x{} matrix with {} degree entries",
                    a_tilde.n_rows(),
                    a_tilde.n_cols(),
                    d_inv_sqrt.len()
                ),
            ));
        }
        Ok(Self {
            a_tilde,
            d_inv_sqrt,
            n_tilde: None,
            unweighted,
        })
    }

    /// Computes and stores Ñ.
    pub fn precompute(&mut self) -> Result<()> {
        self.n_tilde = Some(precompute_normalized(self)?);
        Ok(())
    }

    pub(crate) fn precompute_from(&mut self, n_tilde: CsrMatrix) {
        self.n_tilde = Some(n_tilde);
    }

    pub fn with_precomputed(mut self) -> Result<Self> {
        self.precompute()?;
        Ok(self)
    }

    pub fn n_nodes(&self) -> usize {
        self.a_tilde.n_rows()
    }

    pub fn a_tilde(&self) -> &CsrMatrix {
        &self.a_tilde
    }

    pub fn d_inv_sqrt(&self) -> &DegreeVector {
        &self.d_inv_sqrt
    }

    pub fn n_tilde(&self) -> Option<&CsrMatrix> {
        self.n_tilde.as_ref()
    }

    pub fn is_unweighted(&self) -> bool {
        self.unweighted
    }
}

/// Ñ with `ñ[i,j] = ã[i,j] · d̃_i^-½ · d̃_j^-½`, as an SDDMM with k = 1.
pub fn precompute_normalized(g: &NormalizedGraph) -> Result<CsrMatrix> {
    precompute_normalized_on(&Executor::default(), g)
}

pub fn precompute_normalized_on(exec: &Executor, g: &NormalizedGraph) -> Result<CsrMatrix> {
    let d = g.d_inv_sqrt.as_column();
    exec.sddmm(&g.a_tilde, &d, &d)
}

pub fn gcn_layer(g: &NormalizedGraph, h: &DenseMatrix, spec: &GcnLayerSpec) -> Result<DenseMatrix> {
    gcn_layer_on(&Executor::default(), g, h, spec)
}

/// Runs whichever composition `spec` names.
pub fn gcn_layer_on(
    exec: &Executor,
    g: &NormalizedGraph,
    h: &DenseMatrix,
    spec: &GcnLayerSpec,
) -> Result<DenseMatrix> {
    match spec.composition {
        Composition::Precompute => gcn_layer_precompute_on(exec, g, h, spec),
        Composition::Dynamic => gcn_layer_dynamic_on(exec, g, h, spec),
        other => Err(Error::Config(format!("{other} is not a GCN composition"))),
    }
}

pub fn gcn_layer_precompute(
    g: &NormalizedGraph,
    h: &DenseMatrix,
    spec: &GcnLayerSpec,
) -> Result<DenseMatrix> {
    gcn_layer_precompute_on(&Executor::default(), g, h, spec)
}

/// `σ(Ñ · H · W)`; needs Ñ from [`NormalizedGraph::precompute`].
pub fn gcn_layer_precompute_on(
    exec: &Executor,
    g: &NormalizedGraph,
    h: &DenseMatrix,
    spec: &GcnLayerSpec,
) -> Result<DenseMatrix> {
    let n_tilde = g.n_tilde.as_ref().ok_or_else(|| {
        Error::Precondition("precompute composition needs the normalized adjacency Ñ".into())
    })?;
    check_input(g, h, spec)?;
    let mut out = match ordering_heuristic(spec.k1(), spec.k2()) {
        Ordering::AggregateFirst => exec.gemm(&exec.spmm(n_tilde, h)?, &spec.weights)?,
        Ordering::UpdateFirst => exec.spmm(n_tilde, &exec.gemm(h, &spec.weights)?)?,
    };
    spec.activation.apply(&mut out);
    Ok(out)
}

pub fn gcn_layer_dynamic(
    g: &NormalizedGraph,
    h: &DenseMatrix,
    spec: &GcnLayerSpec,
) -> Result<DenseMatrix> {
    gcn_layer_dynamic_on(&Executor::default(), g, h, spec)
}

/// `σ(D̃^-½ · (Ã · (D̃^-½ · H)) · W)` with both diagonal products as row scalings.
pub fn gcn_layer_dynamic_on(
    exec: &Executor,
    g: &NormalizedGraph,
    h: &DenseMatrix,
    spec: &GcnLayerSpec,
) -> Result<DenseMatrix> {
    check_input(g, h, spec)?;
    let aggregate = |x: &DenseMatrix| {
        if g.unweighted {
            exec.spmm_unweighted(g.a_tilde.pattern(), x)
        } else {
            exec.spmm(&g.a_tilde, x)
        }
    };
    let scaled = exec.scale_rows(&g.d_inv_sqrt, h)?;
    let mut out = match ordering_heuristic(spec.k1(), spec.k2()) {
        Ordering::AggregateFirst => exec.gemm(&aggregate(&scaled)?, &spec.weights)?,
        Ordering::UpdateFirst => aggregate(&exec.gemm(&scaled, &spec.weights)?)?,
    };
    exec.scale_rows_in_place(&g.d_inv_sqrt, &mut out)?;
    spec.activation.apply(&mut out);
    Ok(out)
}

fn check_input(g: &NormalizedGraph, h: &DenseMatrix, spec: &GcnLayerSpec) -> Result<()> {
    if h.n_rows() != g.n_nodes() || h.n_cols() != spec.k1() {
        return Err(Error::shape(
            "gcn_layer",
            format!(
                "embeddings {}x{} for {} nodes and k1 = {}",
                h.n_rows(),
                h.n_cols(),
                g.n_nodes(),
                spec.k1()
            ),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::KernelKind;

    fn path3() -> CsrMatrix {
        CsrMatrix::from_triplets(3, 3, &[(0, 1, 1.0), (1, 0, 1.0), (1, 2, 1.0), (2, 1, 1.0)]).unwrap()
    }

    fn dense_mm(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(a.n_rows(), b.n_cols());
        for i in 0..a.n_rows() {
            for k in 0..b.n_cols() {
                out.set(i, k, (0..a.n_cols()).map(|j| a.get(i, j) * b.get(j, k)).sum());
            }
        }
        out
    }

    /// ReLU(D^-½ (A + I) D^-½ H W) evaluated with dense matrices.
    fn dense_oracle(a: &CsrMatrix, h: &DenseMatrix, w: &DenseMatrix) -> DenseMatrix {
        let n = a.n_rows();
        let mut at = a.to_dense();
        for i in 0..n {
            if a.row(i).0.binary_search(&i).is_err() {
                at.set(i, i, 1.0);
            }
        }
        let deg: Vec<f64> = (0..n)
            .map(|i| (0..n).filter(|&j| at.get(i, j) != 0.0).count() as f64)
            .collect();
        let mut norm = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                norm.set(i, j, at.get(i, j) / (deg[i].sqrt() * deg[j].sqrt()));
            }
        }
        let mut out = dense_mm(&dense_mm(&norm, h), w);
        out.relu_in_place();
        out
    }

    #[test]
    fn heuristic_orders() {
        assert_eq!(ordering_heuristic(1024, 32), Ordering::UpdateFirst);
        assert_eq!(ordering_heuristic(32, 256), Ordering::AggregateFirst);
        assert_eq!(ordering_heuristic(64, 64), Ordering::AggregateFirst);
    }

    #[test]
    fn normalized_values() {
        let single = CsrMatrix::zeros(1, 1);
        let g = NormalizedGraph::from_adjacency(&single).unwrap();
        assert_eq!(precompute_normalized(&g).unwrap().values(), &[1.0]);

        let g = NormalizedGraph::from_adjacency(&path3()).unwrap();
        let n = precompute_normalized(&g).unwrap();
        assert_eq!(n.row_ptr(), g.a_tilde().row_ptr());
        assert_eq!(n.col_idx(), g.a_tilde().col_idx());
        assert!((n.get(0, 1) - 0.408_248_29).abs() < 1e-8);
        assert!((n.get(0, 1) - 1.0 / (2f64.sqrt() * 3f64.sqrt())).abs() < 1e-15);
    }

    #[test]
    fn identity_graph_is_relu_hw() {
        let g = NormalizedGraph::from_adjacency(&CsrMatrix::zeros(4, 4))
            .unwrap()
            .with_precomputed()
            .unwrap();
        let h = DenseMatrix::random_uniform(4, 3, 1);
        let mut want = h.clone();
        want.relu_in_place();
        let spec = GcnLayerSpec::new(DenseMatrix::identity(3), Composition::Precompute).unwrap();
        assert_eq!(gcn_layer_precompute(&g, &h, &spec).unwrap(), want);
        assert_eq!(gcn_layer_dynamic(&g, &h, &spec).unwrap(), want);
    }

    #[test]
    fn path_graph_matches_dense_oracle() {
        let a = path3();
        let g = NormalizedGraph::from_adjacency(&a).unwrap().with_precomputed().unwrap();
        for (k1, k2, seed) in [(2, 2, 1), (4, 2, 2), (2, 5, 3)] {
            let h = DenseMatrix::random_uniform(3, k1, seed);
            let w = DenseMatrix::random_uniform(k1, k2, seed + 10);
            let want = dense_oracle(&a, &h, &w);
            let spec = GcnLayerSpec::new(w, Composition::Precompute).unwrap();
            let pre = gcn_layer_precompute(&g, &h, &spec).unwrap();
            let dyn_ = gcn_layer_dynamic(&g, &h, &spec).unwrap();
            assert!(pre.rel_max_diff(&want) <= 1e-12);
            assert!(dyn_.rel_max_diff(&pre) <= 1e-8);
        }
    }

    #[test]
    fn relu_clamps_only_nonpositive() {
        let a = path3();
        let g = NormalizedGraph::from_adjacency(&a).unwrap().with_precomputed().unwrap();
        let h = DenseMatrix::from_vec(3, 2, vec![-1.0, -0.5, -0.2, -2.0, -0.3, -0.1]).unwrap();
        let w = DenseMatrix::from_vec(2, 2, vec![0.5, 1.0, 2.0, 0.1]).unwrap();
        let spec = GcnLayerSpec::new(w.clone(), Composition::Precompute).unwrap();
        let got = gcn_layer_precompute(&g, &h, &spec).unwrap();
        let want = dense_oracle(&a, &h, &w);
        assert!(got.rel_max_diff(&want) <= 1e-12 || want.max_abs() == 0.0);
        assert_eq!(got.max_abs(), 0.0);
    }

    #[test]
    fn precompute_requires_n_tilde() {
        let g = NormalizedGraph::from_adjacency(&path3()).unwrap();
        let spec = GcnLayerSpec::new(DenseMatrix::identity(2), Composition::Precompute).unwrap();
        let h = DenseMatrix::random_uniform(3, 2, 1);
        assert!(matches!(
            gcn_layer_precompute(&g, &h, &spec),
            Err(Error::Precondition(_))
        ));
        assert!(matches!(
            gcn_layer_dynamic(&g, &DenseMatrix::zeros(2, 2), &spec),
            Err(Error::Shape { .. })
        ));
        assert!(GcnLayerSpec::new(DenseMatrix::identity(2), Composition::Reuse).is_err());
        assert!(GcnLayerSpec::new(DenseMatrix::zeros(0, 2), Composition::Dynamic).is_err());
    }

    #[test]
    fn dynamic_never_reads_values_when_unweighted() {
        let base = NormalizedGraph::from_adjacency(&path3()).unwrap();
        assert!(base.is_unweighted());
        let poisoned = base.a_tilde().with_values(vec![f64::NAN; base.a_tilde().nnz()]).unwrap();
        let g = NormalizedGraph::from_parts(poisoned, base.d_inv_sqrt().clone(), true).unwrap();
        let h = DenseMatrix::random_uniform(3, 4, 9);
        let spec = GcnLayerSpec::new(DenseMatrix::random_uniform(4, 4, 8), Composition::Dynamic).unwrap();
        let exec = Executor::new().traced();
        let got = gcn_layer_dynamic_on(&exec, &g, &h, &spec).unwrap();
        assert_eq!(got, gcn_layer_dynamic(&base, &h, &spec).unwrap());
        assert!(exec.calls().iter().all(|c| c.kind != KernelKind::Spmm));
    }

    #[test]
    fn weighted_graph_uses_values() {
        let a = CsrMatrix::from_triplets(2, 2, &[(0, 1, 3.0), (1, 0, 3.0)]).unwrap();
        let g = NormalizedGraph::from_adjacency(&a).unwrap().with_precomputed().unwrap();
        assert!(!g.is_unweighted());
        let h = DenseMatrix::random_uniform(2, 2, 4);
        let spec = GcnLayerSpec::new(DenseMatrix::identity(2), Composition::Dynamic)
            .unwrap()
            .with_activation(Activation::None);
        let dyn_ = gcn_layer_dynamic(&g, &h, &spec).unwrap();
        let pre = gcn_layer_precompute(&g, &h, &spec).unwrap();
        assert!(dyn_.rel_max_diff(&pre) <= 1e-12);
    }

    #[test]
    fn ordering_picks_spmm_width() {
        let g = NormalizedGraph::from_adjacency(&path3()).unwrap().with_precomputed().unwrap();
        for (k1, k2, width) in [(8, 2, 2), (2, 8, 2), (4, 4, 4)] {
            let h = DenseMatrix::random_uniform(3, k1, 1);
            let spec = GcnLayerSpec::new(DenseMatrix::random_uniform(k1, k2, 2), Composition::Precompute).unwrap();
            let exec = Executor::new().traced();
            gcn_layer_precompute_on(&exec, &g, &h, &spec).unwrap();
            let spmm = exec.calls().into_iter().find(|c| c.kind == KernelKind::Spmm).unwrap();
            assert_eq!(spmm.width, width);
        }
    }
}
