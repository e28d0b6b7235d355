//! Concrete model families and their oracles.

pub mod additive_noise;
pub mod enumerate;
pub mod finite_hmm;
pub mod lgss;
pub mod sv;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use additive_noise::{additive_noise_bounds, AdditiveNoiseBounds, AdditiveNoiseModel, AdditiveNoiseParams, Drift};
pub use enumerate::{
    decode_path, encode_path, hmm_enumerate_pg, hmm_exact_jsd, hmm_expected_likelihood, JsdTable, TransitionMatrix,
    DEFAULT_ENUMERATION_CAP,
};
pub use finite_hmm::{FiniteHmm, FiniteHmmParams, ForwardPass};
pub use lgss::{KalmanPass, Lgss, LgssParams};
pub use sv::{sv_d1, sv_weight_bounds, StochVolModel, SvParams, SvWeightBounds, SV_D2};

/// A model file: a family tag plus that family's parameters.
///
/// ```json
/// { "family": "sv", "phi": 0.95, "sigma": 0.25, "beta": 0.7 }
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum ModelConfig {
    FiniteHmm(FiniteHmmParams),
    Lgss(LgssParams),
    AdditiveNoise(AdditiveNoiseParams),
    Sv(SvParams),
}

/// A validated model built from a [`ModelConfig`].
#[derive(Debug, Clone)]
pub enum AnyModel {
    FiniteHmm(FiniteHmm),
    Lgss(Lgss),
    AdditiveNoise(AdditiveNoiseModel),
    Sv(StochVolModel),
}

impl ModelConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("model file: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn build(&self) -> Result<AnyModel> {
        Ok(match self {
            ModelConfig::FiniteHmm(p) => AnyModel::FiniteHmm(FiniteHmm::from_params(p)?),
            ModelConfig::Lgss(p) => AnyModel::Lgss(Lgss::new(*p)?),
            ModelConfig::AdditiveNoise(p) => AnyModel::AdditiveNoise(AdditiveNoiseModel::new(*p)?),
            ModelConfig::Sv(p) => AnyModel::Sv(StochVolModel::new(*p)?),
        })
    }

    pub fn family(&self) -> &'static str {
        match self {
            ModelConfig::FiniteHmm(_) => "finite-hmm",
            ModelConfig::Lgss(_) => "lgss",
            ModelConfig::AdditiveNoise(_) => "additive-noise",
            ModelConfig::Sv(_) => "sv",
        }
    }
}

/// Constants of a drift inequality `E[V_δ(X₁) | x] ≤ λ V_δ(x) + b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DriftConstants {
    pub delta: f64,
    pub lambda: f64,
    pub b: f64,
}

/// Fit `(λ, b)` for `V_δ(x) = exp(δ|x|)` on a symmetric grid `[-radius, radius]`.
///
/// `λ` is the largest ratio `E[V(X₁)|x]/V(x)` over the outer half of the grid,
/// `b` the largest excess `E[V(X₁)|x] − λV(x)` over the whole grid, inflated by
/// 1% to cover points between grid nodes. The fit fails when the outer ratio
/// does not drop below one.
pub fn fit_drift<F: Fn(f64) -> f64>(expectation: F, delta: f64, radius: f64, points: usize) -> Result<DriftConstants> {
    let grid: Vec<f64> = (0..points)
        .map(|i| -radius + 2.0 * radius * i as f64 / (points - 1) as f64)
        .collect();
    let v = |x: f64| (delta * x.abs()).exp();
    let lambda = grid
        .iter()
        .filter(|x| x.abs() >= 0.5 * radius)
        .map(|&x| expectation(x) / v(x))
        .fold(0.0, f64::max);
    if !(lambda < 1.0) {
        return Err(Error::InvalidParams(format!("no contraction: outer drift ratio {lambda}")));
    }
    let b = grid
        .iter()
        .map(|&x| expectation(x) - lambda * v(x))
        .fold(0.0, f64::max)
        * 1.01;
    Ok(DriftConstants { delta, lambda, b })
}

impl DriftConstants {
    /// Largest violation of the drift inequality on a grid (≤ 0 when it holds).
    pub fn max_violation<F: Fn(f64) -> f64>(&self, expectation: F, radius: f64, points: usize) -> f64 {
        (0..points)
            .map(|i| -radius + 2.0 * radius * i as f64 / (points - 1) as f64)
            .map(|x| expectation(x) - self.lambda * (self.delta * x.abs()).exp() - self.b)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// `μ(V) + b/(1 − λ)`: uniform-in-time bound on `E_μ[V(X_t)]`.
    pub fn moment_bound(&self, initial_v: f64) -> f64 {
        initial_v + self.b / (1.0 - self.lambda)
    }
}
