//! Single-head GAT layer under the reuse and recompute compositions.

use rayon::prelude::*;

use crate::composition::{Activation, Composition, GnnModel};
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::sparse::{split_by_rows, CsrMatrix, DenseMatrix};

#[derive(Debug, Clone)]
pub struct GatLayerSpec {
    weights: DenseMatrix,
    attn_src: DenseMatrix,
    attn_dst: DenseMatrix,
    leaky_slope: f64,
    composition: Composition,
    activation: Activation,
}

impl GatLayerSpec {
    pub const DEFAULT_LEAKY_SLOPE: f64 = 0.2;

    /// `weights` is k1 x k2; the attention vector is split into a k2 x 1
    /// source half and a k2 x 1 destination half.
    pub fn new(
        weights: DenseMatrix,
        attn_src: DenseMatrix,
        attn_dst: DenseMatrix,
        composition: Composition,
    ) -> Result<Self> {
        let (k1, k2) = weights.shape();
        if k1 == 0 || k2 == 0 {
            return Err(Error::Config(format!("GAT weights must be at least 1x1, got {k1}x{k2}")));
        }
        for (name, v) in [("attn_src", &attn_src), ("attn_dst", &attn_dst)] {
            if v.shape() != (k2, 1) {
                return Err(Error::shape(
                    "GatLayerSpec::new",
                    format!("{name} is {}x{}, expected {k2}x1", v.n_rows(), v.n_cols()),
                ));
            }
        }
        if composition.model() != GnnModel::Gat {
            return Err(Error::Config(format!("{composition} is not a GAT composition")));
        }
        Ok(Self {
            weights,
            attn_src,
            attn_dst,
            leaky_slope: Self::DEFAULT_LEAKY_SLOPE,
            composition,
            activation: Activation::Relu,
        })
    }

    pub fn with_leaky_slope(mut self, slope: f64) -> Result<Self> {
        if !(slope > 0.0 && slope < 1.0) {
            return Err(Error::Config(format!("leaky slope must be in (0, 1), got {slope}")));
        }
        self.leaky_slope = slope;
        Ok(self)
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn with_composition(mut self, composition: Composition) -> Result<Self> {
        if composition.model() != GnnModel::Gat {
            return Err(Error::Config(format!("{composition} is not a GAT composition")));
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

    pub fn attn_src(&self) -> &DenseMatrix {
        &self.attn_src
    }

    pub fn attn_dst(&self) -> &DenseMatrix {
        &self.attn_dst
    }

    pub fn leaky_slope(&self) -> f64 {
        self.leaky_slope
    }

    pub fn composition(&self) -> Composition {
        self.composition
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }
}

/// Post-softmax attention scores on the pattern of Ã.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMatrix {
    alpha: CsrMatrix,
}

impl AttentionMatrix {
    pub fn alpha(&self) -> &CsrMatrix {
        &self.alpha
    }

    pub fn into_inner(self) -> CsrMatrix {
        self.alpha
    }
}

pub fn atten_calc(a_tilde: &CsrMatrix, hw: &DenseMatrix, spec: &GatLayerSpec) -> Result<AttentionMatrix> {
    atten_calc_on(&Executor::default(), a_tilde, hw, spec)
}

/// Edge scores `e[i,j] = LeakyReLU(s_i + t_j)` with `s = HW·a_src`, `t = HW·a_dst`,
/// computed only on the non-zeros of Ã, then softmax-normalized per row.
///
/// The masked sum is an SDDMM of `[s 1]` against `[1 t]`. Rows without
/// entries stay empty.
pub fn atten_calc_on(
    exec: &Executor,
    a_tilde: &CsrMatrix,
    hw: &DenseMatrix,
    spec: &GatLayerSpec,
) -> Result<AttentionMatrix> {
    if !a_tilde.is_square() || hw.n_rows() != a_tilde.n_rows() || hw.n_cols() != spec.k2() {
        return Err(Error::shape(
            "atten_calc",
            format!(
                "adjacency {}x{}, updated embeddings {}x{}, k2 = {}",
                a_tilde.n_rows(),
                a_tilde.n_cols(),
                hw.n_rows(),
                hw.n_cols(),
                spec.k2()
            ),
        ));
    }
    let n = a_tilde.n_rows();
    let s = exec.gemm(hw, &spec.attn_src)?;
    let t = exec.gemm(hw, &spec.attn_dst)?;
    let mut left = Vec::with_capacity(2 * n);
    let mut right = Vec::with_capacity(2 * n);
    for i in 0..n {
        left.extend_from_slice(&[s.data()[i], 1.0]);
        right.extend_from_slice(&[1.0, t.data()[i]]);
    }
    let left = DenseMatrix::from_vec_unchecked(n, 2, left);
    let right = DenseMatrix::from_vec_unchecked(n, 2, right);
    let scores = exec.sddmm(&a_tilde.ones_valued(), &left, &right)?;

    let (n_rows, n_cols, row_ptr, col_idx, mut values) = scores.into_parts();
    let slope = spec.leaky_slope;
    split_by_rows(&mut values, &row_ptr)
        .into_par_iter()
        .with_min_len(64)
        .for_each(|(_, row)| softmax_leaky(row, slope));
    Ok(AttentionMatrix {
        alpha: CsrMatrix::from_parts_unchecked(n_rows, n_cols, row_ptr, col_idx, values),
    })
}

/// In-place LeakyReLU followed by a max-shifted softmax.
fn softmax_leaky(row: &mut [f64], slope: f64) {
    if row.is_empty() {
        return;
    }
    for v in row.iter_mut() {
        if *v < 0.0 {
            *v *= slope;
        }
    }
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

pub fn gat_layer(a_tilde: &CsrMatrix, h: &DenseMatrix, spec: &GatLayerSpec) -> Result<DenseMatrix> {
    gat_layer_on(&Executor::default(), a_tilde, h, spec)
}

pub fn gat_layer_on(
    exec: &Executor,
    a_tilde: &CsrMatrix,
    h: &DenseMatrix,
    spec: &GatLayerSpec,
) -> Result<DenseMatrix> {
    match spec.composition {
        Composition::Reuse => gat_layer_reuse_on(exec, a_tilde, h, spec),
        Composition::Recompute => gat_layer_recompute_on(exec, a_tilde, h, spec),
        other => Err(Error::Config(format!("{other} is not a GAT composition"))),
    }
}

pub fn gat_layer_reuse(a_tilde: &CsrMatrix, h: &DenseMatrix, spec: &GatLayerSpec) -> Result<DenseMatrix> {
    gat_layer_reuse_on(&Executor::default(), a_tilde, h, spec)
}

/// `σ(α · (H·W))`: H·W is computed once and aggregated at width k2.
pub fn gat_layer_reuse_on(
    exec: &Executor,
    a_tilde: &CsrMatrix,
    h: &DenseMatrix,
    spec: &GatLayerSpec,
) -> Result<DenseMatrix> {
    check_input(a_tilde, h, spec)?;
    let hw = exec.gemm(h, &spec.weights)?;
    let alpha = atten_calc_on(exec, a_tilde, &hw, spec)?;
    let mut out = exec.spmm(&alpha.alpha, &hw)?;
    spec.activation.apply(&mut out);
    Ok(out)
}

pub fn gat_layer_recompute(
    a_tilde: &CsrMatrix,
    h: &DenseMatrix,
    spec: &GatLayerSpec,
) -> Result<DenseMatrix> {
    gat_layer_recompute_on(&Executor::default(), a_tilde, h, spec)
}

/// `σ((α · H) · W)`: H·W feeds attention only; aggregation runs at width k1.
pub fn gat_layer_recompute_on(
    exec: &Executor,
    a_tilde: &CsrMatrix,
    h: &DenseMatrix,
    spec: &GatLayerSpec,
) -> Result<DenseMatrix> {
    check_input(a_tilde, h, spec)?;
    let alpha = {
        let hw = exec.gemm(h, &spec.weights)?;
        atten_calc_on(exec, a_tilde, &hw, spec)?
    };
    let aggregated = exec.spmm(&alpha.alpha, h)?;
    let mut out = exec.gemm(&aggregated, &spec.weights)?;
    spec.activation.apply(&mut out);
    Ok(out)
}

fn check_input(a_tilde: &CsrMatrix, h: &DenseMatrix, spec: &GatLayerSpec) -> Result<()> {
    if !a_tilde.is_square() || h.n_rows() != a_tilde.n_rows() || h.n_cols() != spec.k1() {
        return Err(Error::shape(
            "gat_layer",
            format!(
                "adjacency {}x{}, embeddings {}x{}, k1 = {}",
                a_tilde.n_rows(),
                a_tilde.n_cols(),
                h.n_rows(),
                h.n_cols(),
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
    use crate::sparse::add_self_loops;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spec(k1: usize, k2: usize, seed: u64, c: Composition) -> GatLayerSpec {
        GatLayerSpec::new(
            DenseMatrix::random_uniform(k1, k2, seed),
            DenseMatrix::random_uniform(k2, 1, seed + 1),
            DenseMatrix::random_uniform(k2, 1, seed + 2),
            c,
        )
        .unwrap()
    }

    fn path3() -> CsrMatrix {
        let a = CsrMatrix::from_triplets(3, 3, &[(0, 1, 1.0), (1, 0, 1.0), (1, 2, 1.0), (2, 1, 1.0)])
            .unwrap();
        add_self_loops(&a).unwrap()
    }

    /// Dense softmax over masked LeakyReLU(s 1ᵀ + 1 tᵀ).
    fn dense_alpha(mask: &CsrMatrix, hw: &DenseMatrix, sp: &GatLayerSpec) -> DenseMatrix {
        let n = mask.n_rows();
        let k2 = hw.n_cols();
        let s: Vec<f64> = (0..n).map(|i| (0..k2).map(|k| hw.get(i, k) * sp.attn_src().get(k, 0)).sum()).collect();
        let t: Vec<f64> = (0..n).map(|i| (0..k2).map(|k| hw.get(i, k) * sp.attn_dst().get(k, 0)).sum()).collect();
        let mut out = DenseMatrix::zeros(n, n);
        for i in 0..n {
            let mut e = Vec::new();
            for j in 0..n {
                if mask.get(i, j) != 0.0 {
                    let x = s[i] + t[j];
                    e.push((j, if x < 0.0 { sp.leaky_slope() * x } else { x }));
                }
            }
            let z: f64 = e.iter().map(|&(_, x)| x.exp()).sum();
            for (j, x) in e {
                out.set(i, j, x.exp() / z);
            }
        }
        out
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

    #[test]
    fn singleton_and_symmetric_rows() {
        let sp = spec(2, 2, 1, Composition::Reuse);
        let one = CsrMatrix::identity(1);
        let hw = DenseMatrix::random_uniform(1, 2, 5);
        assert_eq!(atten_calc(&one, &hw, &sp).unwrap().alpha().values(), &[1.0]);

        // node 0 sees nodes 1 and 2 whose destination scores are equal
        let a = CsrMatrix::from_triplets(3, 3, &[(0, 1, 1.0), (0, 2, 1.0), (1, 1, 1.0), (2, 2, 1.0)]).unwrap();
        let hw = DenseMatrix::from_vec(3, 2, vec![0.3, -0.1, 0.7, 0.2, 0.7, 0.2]).unwrap();
        let alpha = atten_calc(&a, &hw, &sp).unwrap();
        assert_eq!(alpha.alpha().row(0).1, &[0.5, 0.5]);
    }

    #[test]
    fn matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut t = Vec::new();
        for i in 0..4 {
            for j in 0..4 {
                if rng.gen::<f64>() < 0.5 {
                    t.push((i, j, 1.0));
                }
            }
        }
        let a = add_self_loops(&CsrMatrix::from_triplets(4, 4, &t).unwrap()).unwrap();
        let sp = spec(3, 3, 7, Composition::Reuse);
        let hw = DenseMatrix::random_uniform(4, 3, 8);
        let alpha = atten_calc(&a, &hw, &sp).unwrap();
        let want = dense_alpha(&a, &hw, &sp);
        assert_eq!(alpha.alpha().col_idx(), a.col_idx());
        assert!(alpha.alpha().to_dense().rel_max_diff(&want) <= 1e-12);
        for i in 0..4 {
            let sum: f64 = alpha.alpha().row(i).1.iter().sum();
            assert!((sum - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn empty_rows_have_no_scores() {
        let a = CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0)]).unwrap();
        let sp = spec(2, 2, 1, Composition::Reuse);
        let alpha = atten_calc(&a, &DenseMatrix::random_uniform(2, 2, 3), &sp).unwrap();
        assert_eq!(alpha.alpha().row_nnz(1), 0);
        assert!(atten_calc(&a, &DenseMatrix::zeros(3, 2), &sp).is_err());
    }

    #[test]
    fn softmax_shift_invariance() {
        let mut a = vec![0.3, 1.7, -0.4, 2.2];
        let mut b: Vec<f64> = a.iter().map(|x| x + 5.0).collect();
        // shift only in the positive regime so LeakyReLU is affine
        softmax_leaky(&mut a, 0.2);
        for v in &mut b {
            *v -= 5.0;
        }
        softmax_leaky(&mut b, 0.2);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn reuse_and_recompute_match_dense() {
        let a = path3();
        let h = DenseMatrix::random_uniform(3, 2, 11);
        for (k2, c) in [(3, Composition::Reuse), (5, Composition::Recompute)] {
            let sp = spec(2, k2, 20, c);
            let hw = dense_mm(&h, sp.weights());
            let mut want = dense_mm(&dense_alpha(&a, &hw, &sp), &hw);
            want.relu_in_place();
            let got = gat_layer(&a, &h, &sp).unwrap();
            assert!(got.rel_max_diff(&want) <= 1e-10);
            let reuse = gat_layer_reuse(&a, &h, &sp).unwrap();
            let recompute = gat_layer_recompute(&a, &h, &sp).unwrap();
            assert!(recompute.rel_max_diff(&reuse) <= 1e-8);
        }
    }

    #[test]
    fn identity_weights_make_compositions_identical() {
        let a = path3();
        let h = DenseMatrix::random_uniform(3, 4, 2);
        let sp = GatLayerSpec::new(
            DenseMatrix::identity(4),
            DenseMatrix::random_uniform(4, 1, 3),
            DenseMatrix::random_uniform(4, 1, 4),
            Composition::Reuse,
        )
        .unwrap();
        assert_eq!(gat_layer_reuse(&a, &h, &sp).unwrap(), gat_layer_recompute(&a, &h, &sp).unwrap());

        let eye = CsrMatrix::identity(3);
        let mut want = h.clone();
        want.relu_in_place();
        assert_eq!(gat_layer_reuse(&eye, &h, &sp).unwrap(), want);
    }

    #[test]
    fn kernel_shape_audit() {
        let a = path3();
        let h = DenseMatrix::random_uniform(3, 2, 1);
        let sp = spec(2, 6, 3, Composition::Reuse);

        let exec = Executor::new().traced();
        gat_layer_reuse_on(&exec, &a, &h, &sp).unwrap();
        let calls = exec.calls();
        let hw_gemms = calls.iter().filter(|c| c.kind == KernelKind::Gemm && c.width == 6).count();
        assert_eq!(hw_gemms, 1);
        let spmm: Vec<_> = calls.iter().filter(|c| c.kind == KernelKind::Spmm).collect();
        assert_eq!(spmm.len(), 1);
        assert_eq!(spmm[0].width, 6);

        let exec = Executor::new().traced();
        gat_layer_recompute_on(&exec, &a, &h, &sp).unwrap();
        let spmm: Vec<_> = exec.calls().into_iter().filter(|c| c.kind == KernelKind::Spmm).collect();
        assert_eq!(spmm.len(), 1);
        assert_eq!(spmm[0].width, 2);
    }

    #[test]
    fn spec_validation() {
        let w = DenseMatrix::identity(2);
        let v = DenseMatrix::zeros(2, 1);
        assert!(GatLayerSpec::new(w.clone(), DenseMatrix::zeros(3, 1), v.clone(), Composition::Reuse).is_err());
        assert!(GatLayerSpec::new(w.clone(), v.clone(), v.clone(), Composition::Dynamic).is_err());
        let sp = GatLayerSpec::new(w, v.clone(), v, Composition::Reuse).unwrap();
        assert!(sp.clone().with_leaky_slope(1.5).is_err());
        assert_eq!(sp.leaky_slope(), 0.2);
    }
}
