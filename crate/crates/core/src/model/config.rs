use std::fmt;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::sparse::SelfLoopMode;

/// Values a direction parameter (α, β, γ) may take.
pub const DIRECTION_VALUES: [f64; 6] = [-1.0, 0.0, 0.5, 1.0, 2.0, 3.0];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Scalenet,
    OneIg,
    OneIgi2,
    OneIgu2,
    OneIgu3,
    OneYm,
    Gcn,
    Mlp,
    DirgnnLite,
}

impl Family {
    pub const ALL: [Family; 9] = [
        Family::Scalenet,
        Family::OneIg,
        Family::OneIgi2,
        Family::OneIgu2,
        Family::OneIgu3,
        Family::OneYm,
        Family::Gcn,
        Family::Mlp,
        Family::DirgnnLite,
    ];
}

/// Intra-layer fusion of block outputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comb1 {
    JkMax,
    JkCat,
    Add,
}

/// Cross-layer fusion of layer outputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comb2 {
    JkMax,
    JkCat,
    Last,
}

fn parse_via_serde<T: DeserializeOwned>(s: &str, what: &str) -> Result<T, ModelError> {
    serde_json::from_value(serde_json::Value::String(s.trim().to_ascii_lowercase()))
        .map_err(|_| ModelError::InvalidConfig(format!("unknown {what} '{s}'")))
}

fn display_via_serde<T: Serialize>(v: &T, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => f.write_str(&s),
        _ => Err(fmt::Error),
    }
}

macro_rules! text_enum {
    ($ty:ty, $what:literal) => {
        impl FromStr for $ty {
            type Err = ModelError;
            fn from_str(s: &str) -> Result<Self, Self::Err> {
                parse_via_serde(s, $what)
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                display_via_serde(self, f)
            }
        }
    };
}

text_enum!(Family, "model family");
text_enum!(Comb1, "comb1");
text_enum!(Comb2, "comb2");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub family: Family,
    /// Direction parameter of the `(A, Aᵀ)` block.
    pub alpha: f64,
    /// Direction parameter of the `(AAᵀ, AᵀA)` block.
    pub beta: f64,
    /// Direction parameter of the `(AA, AᵀAᵀ)` block.
    pub gamma: f64,
    pub layers: usize,
    pub hidden: usize,
    pub comb1: Comb1,
    pub comb2: Comb2,
    /// Applied to first-scale matrices.
    pub selfloop: SelfLoopMode,
    /// Applied to second-scale and proximity matrices.
    pub selfloop_higher: SelfLoopMode,
    pub use_bn: bool,
    pub use_relu: bool,
    pub dropout: f64,
    pub lr: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            family: Family::Scalenet,
            alpha: 0.5,
            beta: 0.5,
            gamma: 0.5,
            layers: 2,
            hidden: 64,
            comb1: Comb1::Add,
            comb2: Comb2::Last,
            selfloop: SelfLoopMode::Add,
            selfloop_higher: SelfLoopMode::Remove,
            use_bn: false,
            use_relu: true,
            dropout: 0.5,
            lr: 0.01,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidConfig(msg));
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !DIRECTION_VALUES.contains(&v) {
                return bad(format!("{name} = {v} is not one of -1, 0, 0.5, 1, 2, 3"));
            }
        }
        if self.family == Family::Scalenet && [self.alpha, self.beta, self.gamma].iter().all(|&v| v == -1.0) {
            return Err(ModelError::AllBlocksExcluded);
        }
        if !(1..=5).contains(&self.layers) {
            return bad(format!("layers = {} is outside 1..=5", self.layers));
        }
        if self.hidden == 0 {
            return bad("hidden width must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout = {} is outside [0, 1)", self.dropout));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr = {} must be positive", self.lr));
        }
        Ok(())
    }
}
