//! Handcrafted graph descriptors used by the composition selector.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

/// The eight graph features, keyed by their conventional names.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphFeatures {
    pub n_rows: usize,
    pub n_nnzs: usize,
    pub nnz_den: f64,
    pub nnz_mean: f64,
    pub d_min: usize,
    pub d_max: usize,
    /// Shannon entropy of the degree histogram, normalized by ln(#distinct degrees).
    pub d_dentr: f64,
    /// Shannon entropy of per-node edge shares d_i / nnz, normalized by ln(n_rows).
    pub e_dentr: f64,
}

impl GraphFeatures {
    pub const NAMES: [&'static str; 8] = [
        "n_rows", "n_nnzs", "nnz_den", "nnz_mean", "d_min", "d_max", "d_dentr", "e_dentr",
    ];

    pub fn to_vec(&self) -> [f64; 8] {
        [
            self.n_rows as f64,
            self.n_nnzs as f64,
            self.nnz_den,
            self.nnz_mean,
            self.d_min as f64,
            self.d_max as f64,
            self.d_dentr,
            self.e_dentr,
        ]
    }
}

/// Extracts [`GraphFeatures`] from a raw (not self-loop augmented) adjacency
/// in one pass over the row pointers plus a degree histogram.
pub fn extract_features(a: &CsrMatrix) -> Result<GraphFeatures> {
    if !a.is_square() {
        return Err(Error::shape(
            "extract_features",
            format!("{}x{} is not square", a.n_rows(), a.n_cols()),
        ));
    }
    let n = a.n_rows();
    if n == 0 {
        return Err(Error::DegenerateInput("graph has no nodes".into()));
    }
    let nnz = a.nnz();
    let degrees = a.row_ptr().windows(2).map(|w| w[1] - w[0]);

    let mut d_min = usize::MAX;
    let mut d_max = 0;
    let mut edge_entropy = 0.0;
    for d in degrees.clone() {
        d_min = d_min.min(d);
        d_max = d_max.max(d);
        if d > 0 {
            let p = d as f64 / nnz as f64;
            edge_entropy -= p * p.ln();
        }
    }

    let mut histogram = vec![0usize; d_max + 1];
    for d in degrees {
        histogram[d] += 1;
    }
    let mut distinct = 0usize;
    let mut degree_entropy = 0.0;
    for &count in histogram.iter().filter(|&&c| c > 0) {
        distinct += 1;
        let p = count as f64 / n as f64;
        degree_entropy -= p * p.ln();
    }

    let d_dentr = if distinct > 1 {
        degree_entropy / (distinct as f64).ln()
    } else {
        0.0
    };
    let e_dentr = if n > 1 && nnz > 0 {
        edge_entropy / (n as f64).ln()
    } else {
        0.0
    };

    Ok(GraphFeatures {
        n_rows: n,
        n_nnzs: nnz,
        nnz_den: nnz as f64 / (n as f64 * n as f64),
        nnz_mean: nnz as f64 / n as f64,
        d_min,
        d_max,
        d_dentr,
        e_dentr,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generate;
    use crate::opt::Permutation;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn regular_graph_entropies() {
        let ring = generate::ring(12, 4).unwrap();
        let f = extract_features(&ring).unwrap();
        assert_eq!((f.d_min, f.d_max), (4, 4));
        assert_eq!(f.d_dentr, 0.0);
        assert!((f.e_dentr - 1.0).abs() < 1e-12);
    }

    #[test]
    fn star_five() {
        let f = extract_features(&generate::star(5)).unwrap();
        assert_eq!((f.n_rows, f.n_nnzs, f.d_min, f.d_max), (5, 8, 1, 4));
        assert_eq!(f.nnz_mean, 1.6);
        assert_eq!(f.nnz_den, 0.32);
        // independent evaluation of the entropy formulas for degrees (4,1,1,1,1)
        assert!((f.d_dentr - 0.721_928_094_887_362_3).abs() < 1e-12);
        assert!((f.e_dentr - 0.861_353_116_146_786_1).abs() < 1e-12);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(
            extract_features(&CsrMatrix::zeros(0, 0)),
            Err(Error::DegenerateInput(_))
        ));
        assert!(extract_features(&CsrMatrix::zeros(2, 3)).is_err());
        let f = extract_features(&CsrMatrix::zeros(3, 3)).unwrap();
        assert_eq!((f.d_dentr, f.e_dentr, f.d_max), (0.0, 0.0, 0));
        let f = extract_features(&CsrMatrix::identity(1)).unwrap();
        assert_eq!(f.e_dentr, 0.0);
    }

    #[test]
    fn permutation_invariant() {
        let g = generate::power_law(300, 6.0, 2.5, 4);
        let f = extract_features(&g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..5 {
            let mut order: Vec<usize> = (0..300).collect();
            order.shuffle(&mut rng);
            let p = Permutation::from_new_to_old(order).unwrap();
            let g2 = p.permute_symmetric(&g).unwrap();
            let f2 = extract_features(&g2).unwrap();
            assert_eq!(f.to_vec()[..6], f2.to_vec()[..6]);
            assert!((f.d_dentr - f2.d_dentr).abs() < 1e-12);
            assert!((f.e_dentr - f2.e_dentr).abs() < 1e-12);
        }
    }

    #[test]
    fn mean_between_min_and_max() {
        for seed in 0..5 {
            let f = extract_features(&generate::erdos_renyi(200, 5.0, seed)).unwrap();
            assert!(f.d_min as f64 <= f.nnz_mean && f.nnz_mean <= f.d_max as f64);
        }
    }
}
