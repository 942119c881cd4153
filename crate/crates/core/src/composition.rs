use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GnnModel {
    Gcn,
    Gat,
}

/// A primitive composition realizing one GNN layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Composition {
    /// GCN: fold normalization into Ñ once, then SpMM + GEMM.
    Precompute,
    /// GCN: row scalings around an unweighted SpMM every layer.
    Dynamic,
    /// GAT: aggregate the already updated embeddings H·W.
    Reuse,
    /// GAT: aggregate H, then apply W again.
    Recompute,
}

impl GnnModel {
    /// Candidates in encoding order; index 0 is the framework default.
    pub fn compositions(self) -> [Composition; 2] {
        match self {
            GnnModel::Gcn => [Composition::Dynamic, Composition::Precompute],
            GnnModel::Gat => [Composition::Reuse, Composition::Recompute],
        }
    }

    pub fn default_composition(self) -> Composition {
        self.compositions()[0]
    }

    pub fn as_str(self) -> &'static str {
        match self {
            GnnModel::Gcn => "gcn",
            GnnModel::Gat => "gat",
        }
    }
}

impl Composition {
    pub fn model(self) -> GnnModel {
        match self {
            Composition::Precompute | Composition::Dynamic => GnnModel::Gcn,
            Composition::Reuse | Composition::Recompute => GnnModel::Gat,
        }
    }

    /// Position within [`GnnModel::compositions`].
    pub fn index(self) -> usize {
        match self {
            Composition::Dynamic | Composition::Reuse => 0,
            Composition::Precompute | Composition::Recompute => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Composition::Precompute => "precompute",
            Composition::Dynamic => "dynamic",
            Composition::Reuse => "reuse",
            Composition::Recompute => "recompute",
        }
    }
}

impl fmt::Display for GnnModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for Composition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GnnModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.to_ascii_lowercase().as_str() {
            "gcn" => Ok(GnnModel::Gcn),
            "gat" => Ok(GnnModel::Gat),
            other => Err(Error::Config(format!("unknown model {other:?}"))),
        }
    }
}

impl FromStr for Composition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.to_ascii_lowercase().as_str() {
            "precompute" => Ok(Composition::Precompute),
            "dynamic" => Ok(Composition::Dynamic),
            "reuse" => Ok(Composition::Reuse),
            "recompute" => Ok(Composition::Recompute),
            other => Err(Error::Config(format!("unknown composition {other:?}"))),
        }
    }
}

/// Output non-linearity σ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    None,
}

impl Activation {
    pub(crate) fn apply(self, m: &mut crate::sparse::DenseMatrix) {
        match self {
            Activation::Relu => m.relu_in_place(),
            Activation::None => {}
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Ok(Activation::Relu),
            "none" => Ok(Activation::None),
            other => Err(Error::Config(format!("unknown activation {other:?}"))),
        }
    }
}
