//! Canonical stochastic volatility model.
//!
//! ```text
//! X_{t+1} = φ X_t + σ W,   Y_t = β exp(X_t / 2) U
//! ```

use std::sync::OnceLock;

use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ssm::{SpaceKind, StateSpaceModel};
use crate::stats::{expected_exp_abs, integrate, normal_log_pdf, LN_2PI};

/// `1/√(2πe)`: the constant in `sup_x g(x, y) = D₂/|y|`.
pub const SV_D2: f64 = 0.241_970_724_519_143_37;

static SV_D1: OnceLock<f64> = OnceLock::new();

/// `(1/√(2π)) ∫₀^∞ e^{-u/2} u^{-1/2} du`, evaluated by quadrature after `u = v²`.
pub fn sv_d1() -> f64 {
    *SV_D1.get_or_init(|| {
        let f = |v: f64| 2.0 * (-0.5 * v * v).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let d1 = integrate(f, 0.0, 40.0, 1e-14);
        debug_assert!((d1 - 1.0).abs() < 1e-8);
        d1
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvParams {
    pub phi: f64,
    pub sigma: f64,
    pub beta: f64,
    /// Initial law `N(m0, p0)`; `None` selects the stationary law.
    #[serde(default)]
    pub m0: Option<f64>,
    #[serde(default)]
    pub p0: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StochVolModel {
    p: SvParams,
    m0: f64,
    p0: f64,
}

/// Analytic bound callbacks for the bootstrap weight of the SV model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvWeightBounds {
    pub d1: f64,
    pub d2: f64,
}

impl SvWeightBounds {
    /// `log ‖ω⟨y⟩‖_∞ = log(D₂/|y|)`.
    pub fn log_w_sup(&self, y: f64) -> f64 {
        self.d2.ln() - y.abs().ln()
    }

    /// `log ∫ g(x, y) dx = log(D₁/|y|)`.
    pub fn log_g_integral(&self, y: f64) -> f64 {
        self.d1.ln() - y.abs().ln()
    }
}

pub fn sv_weight_bounds(beta: f64) -> Result<SvWeightBounds> {
    if !(beta > 0.0) {
        return Err(Error::InvalidParams(format!("β must be positive, got {beta}")));
    }
    Ok(SvWeightBounds {
        d1: sv_d1(),
        d2: SV_D2,
    })
}

impl StochVolModel {
    pub fn new(p: SvParams) -> Result<Self> {
        if !(p.phi.abs() < 1.0 && p.sigma > 0.0 && p.beta > 0.0) {
            return Err(Error::InvalidParams(format!("invalid SV parameters {p:?}")));
        }
        let stat = p.sigma * p.sigma / (1.0 - p.phi * p.phi);
        let m0 = p.m0.unwrap_or(0.0);
        let p0 = p.p0.unwrap_or(stat);
        if !(p0 > 0.0) {
            return Err(Error::InvalidParams("initial variance must be positive".into()));
        }
        Ok(StochVolModel { p, m0, p0 })
    }

    pub fn params(&self) -> SvParams {
        self.p
    }

    /// `σ² / (1 - φ²)`.
    pub fn stationary_var(&self) -> f64 {
        self.p.sigma * self.p.sigma / (1.0 - self.p.phi * self.p.phi)
    }

    pub fn bounds(&self) -> SvWeightBounds {
        sv_weight_bounds(self.p.beta).expect("validated")
    }

    /// `E[V_δ(X₁) | X₀ = x]` with `V_δ(x) = exp(δ|x|)`.
    pub fn drift_expectation(&self, x: f64, delta: f64) -> f64 {
        expected_exp_abs(self.p.phi * x, self.p.sigma * self.p.sigma, delta)
    }

    pub fn initial_v(&self, delta: f64) -> f64 {
        expected_exp_abs(self.m0, self.p0, delta)
    }
}

fn gauss(rng: &mut dyn RngCore) -> f64 {
    StandardNormal.sample(rng)
}

impl StateSpaceModel for StochVolModel {
    type State = f64;
    type Obs = f64;

    fn state_space(&self) -> SpaceKind {
        SpaceKind::Continuous(1)
    }

    fn observation_space(&self) -> SpaceKind {
        SpaceKind::Continuous(1)
    }

    fn log_m(&self, x: &f64, x_next: &f64) -> f64 {
        normal_log_pdf(*x_next, self.p.phi * x, self.p.sigma * self.p.sigma)
    }

    fn log_g(&self, x: &f64, y: &f64) -> f64 {
        let b2 = self.p.beta * self.p.beta;
        -0.5 * (LN_2PI + b2.ln()) - 0.5 * x - y * y * (-x).exp() / (2.0 * b2)
    }

    fn log_mu(&self, x: &f64) -> f64 {
        normal_log_pdf(*x, self.m0, self.p0)
    }

    fn sample_m(&self, x: &f64, rng: &mut dyn RngCore) -> f64 {
        self.p.phi * x + self.p.sigma * gauss(rng)
    }

    fn sample_g(&self, x: &f64, rng: &mut dyn RngCore) -> f64 {
        self.p.beta * (0.5 * x).exp() * gauss(rng)
    }

    fn sample_mu(&self, rng: &mut dyn RngCore) -> f64 {
        self.m0 + self.p0.sqrt() * gauss(rng)
    }

    fn log_g_sup(&self, y: &f64) -> Option<f64> {
        (*y != 0.0).then(|| self.bounds().log_w_sup(*y))
    }

    fn log_g_integral(&self, y: &f64) -> Option<f64> {
        (*y != 0.0).then(|| self.bounds().log_g_integral(*y))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamKey;
    use crate::stats::{integrate_real_line, maximize_unimodal, mean_and_se};

    fn model() -> StochVolModel {
        StochVolModel::new(SvParams { phi: 0.9, sigma: 0.5, beta: 0.7, m0: None, p0: None }).unwrap()
    }

    #[test]
    fn d2_closed_form() {
        assert!((SV_D2 - 1.0 / (2.0 * std::f64::consts::PI * std::f64::consts::E).sqrt()).abs() < 1e-15);
        assert!((SV_D2 - 0.2419707).abs() < 1e-7);
    }

    #[test]
    fn d1_is_one() {
        assert!((sv_d1() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn sup_of_g_at_unit_observation() {
        let m = model();
        let (_, v) = maximize_unimodal(|x| m.log_g(&x, &1.0).exp(), -20.0, 20.0, 1e-12);
        assert!((v - SV_D2).abs() < 1e-9);
    }

    #[test]
    fn g_integrates_to_d1_over_abs_y() {
        let m = model();
        for y in [0.1, 0.5, 1.0, 3.0, -2.0] {
            let v = integrate_real_line(|x| m.log_g(&x, &y).exp(), 1e-13);
            assert!((v - 1.0 / f64::abs(y)).abs() < 1e-6, "y = {y}: {v}");
        }
    }

    #[test]
    fn stationary_variance_matches_simulation() {
        let m = model();
        let key = StreamKey::new(8);
        let draws: Vec<f64> = (0..20_000)
            .map(|i| {
                let mut rng = key.rng(0, i);
                let mut x = m.sample_mu(&mut rng);
                for _ in 0..30 {
                    x = m.sample_m(&x, &mut rng);
                }
                x * x
            })
            .collect();
        let (mean, se) = mean_and_se(&draws);
        assert!((mean - m.stationary_var()).abs() < 3.0 * se);
    }
}
