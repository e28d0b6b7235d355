//! Nonlinear latent process observed in additive Gaussian noise.
//!
//! ```text
//! X_{t+1} = h(X_t) + σ_W W,   Y_t = φ X_t + σ_U U
//! ```

use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ssm::{Adaptation, SpaceKind, StateSpaceModel};
use crate::stats::{expected_exp_abs, normal_log_pdf, LN_2PI};

/// Built-in drift functions, all with `limsup |h(x)|/|x| < 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Drift {
    /// `h(x) = a·x`
    Linear { a: f64 },
    /// `h(x) = a·x + c·x / (1 + x²)`
    Saturating { a: f64, c: f64 },
}

impl Drift {
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            Drift::Linear { a } => a * x,
            Drift::Saturating { a, c } => a * x + c * x / (1.0 + x * x),
        }
    }

    /// Asymptotic slope `limsup |h(x)|/|x|`.
    pub fn asymptotic_slope(&self) -> f64 {
        match *self {
            Drift::Linear { a } | Drift::Saturating { a, .. } => a.abs(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdditiveNoiseParams {
    pub drift: Drift,
    pub phi: f64,
    pub sigma_u: f64,
    pub sigma_w: f64,
    #[serde(default)]
    pub m0: f64,
    #[serde(default = "one")]
    pub p0: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdditiveNoiseModel {
    p: AdditiveNoiseParams,
}

/// Analytic bounds used by the moment estimators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdditiveNoiseBounds {
    /// `‖ω⟨y⟩‖_∞ ≤ (2π(φ²σ_W² + σ_U²))^{-1/2}` for the fully-adapted weight.
    pub weight_sup: f64,
    /// `∫ g(x, y) dx = 1/φ`.
    pub g_integral: f64,
}

impl AdditiveNoiseBounds {
    pub fn log_w_sup(&self) -> f64 {
        self.weight_sup.ln()
    }

    pub fn log_g_integral(&self) -> f64 {
        self.g_integral.ln()
    }
}

/// Constant-in-`y` bounds for the additive-noise family.
pub fn additive_noise_bounds(phi: f64, sigma_u: f64, sigma_w: f64) -> Result<AdditiveNoiseBounds> {
    if !(phi > 0.0 && sigma_u > 0.0 && sigma_w > 0.0) {
        return Err(Error::InvalidParams(format!(
            "additive-noise bounds need φ, σ_U, σ_W > 0 (got {phi}, {sigma_u}, {sigma_w})"
        )));
    }
    let s = phi * phi * sigma_w * sigma_w + sigma_u * sigma_u;
    Ok(AdditiveNoiseBounds {
        weight_sup: 1.0 / (2.0 * std::f64::consts::PI * s).sqrt(),
        g_integral: 1.0 / phi,
    })
}

impl AdditiveNoiseModel {
    pub fn new(p: AdditiveNoiseParams) -> Result<Self> {
        additive_noise_bounds(p.phi, p.sigma_u, p.sigma_w)?;
        if p.drift.asymptotic_slope() >= 1.0 {
            return Err(Error::InvalidParams("drift must have asymptotic slope < 1".into()));
        }
        if !(p.p0 > 0.0) {
            return Err(Error::InvalidParams("initial variance must be positive".into()));
        }
        Ok(AdditiveNoiseModel { p })
    }

    pub fn params(&self) -> AdditiveNoiseParams {
        self.p
    }

    pub fn bounds(&self) -> AdditiveNoiseBounds {
        additive_noise_bounds(self.p.phi, self.p.sigma_u, self.p.sigma_w).expect("validated")
    }

    fn predictive_var(&self) -> f64 {
        self.p.phi.powi(2) * self.p.sigma_w.powi(2) + self.p.sigma_u.powi(2)
    }

    /// `E[V_δ(X₁) | X₀ = x]` with `V_δ(x) = exp(δ|x|)`.
    pub fn drift_expectation(&self, x: f64, delta: f64) -> f64 {
        expected_exp_abs(self.p.drift.eval(x), self.p.sigma_w.powi(2), delta)
    }

    /// `μ(V_δ)` for the Gaussian initial law.
    pub fn initial_v(&self, delta: f64) -> f64 {
        expected_exp_abs(self.p.m0, self.p.p0, delta)
    }
}

fn gauss(rng: &mut dyn RngCore) -> f64 {
    StandardNormal.sample(rng)
}

impl StateSpaceModel for AdditiveNoiseModel {
    type State = f64;
    type Obs = f64;

    fn state_space(&self) -> SpaceKind {
        SpaceKind::Continuous(1)
    }

    fn observation_space(&self) -> SpaceKind {
        SpaceKind::Continuous(1)
    }

    fn log_m(&self, x: &f64, x_next: &f64) -> f64 {
        normal_log_pdf(*x_next, self.p.drift.eval(*x), self.p.sigma_w.powi(2))
    }

    fn log_g(&self, x: &f64, y: &f64) -> f64 {
        normal_log_pdf(*y, self.p.phi * x, self.p.sigma_u.powi(2))
    }

    fn log_mu(&self, x: &f64) -> f64 {
        normal_log_pdf(*x, self.p.m0, self.p.p0)
    }

    fn sample_m(&self, x: &f64, rng: &mut dyn RngCore) -> f64 {
        self.p.drift.eval(*x) + self.p.sigma_w * gauss(rng)
    }

    fn sample_g(&self, x: &f64, rng: &mut dyn RngCore) -> f64 {
        self.p.phi * x + self.p.sigma_u * gauss(rng)
    }

    fn sample_mu(&self, rng: &mut dyn RngCore) -> f64 {
        self.p.m0 + self.p.p0.sqrt() * gauss(rng)
    }

    fn log_g_sup(&self, _y: &f64) -> Option<f64> {
        Some(-0.5 * (LN_2PI + self.p.sigma_u.powi(2).ln()))
    }

    fn log_g_integral(&self, _y: &f64) -> Option<f64> {
        Some(self.bounds().log_g_integral())
    }

    fn adaptation(&self) -> Option<&dyn Adaptation<f64, f64>> {
        Some(self)
    }
}

impl Adaptation<f64, f64> for AdditiveNoiseModel {
    fn log_predictive(&self, x: &f64, y: &f64) -> f64 {
        normal_log_pdf(*y, self.p.phi * self.p.drift.eval(*x), self.predictive_var())
    }

    fn sample_predictive(&self, x: &f64, y: &f64, rng: &mut dyn RngCore) -> f64 {
        let (phi, su2, sw2) = (self.p.phi, self.p.sigma_u.powi(2), self.p.sigma_w.powi(2));
        let m = self.p.drift.eval(*x);
        let gain = sw2 * phi / (phi * phi * sw2 + su2);
        let mean = m + gain * (y - phi * m);
        let var = (1.0 - gain * phi) * sw2;
        mean + var.sqrt() * gauss(rng)
    }

    fn log_predictive_sup(&self, _y: &f64) -> f64 {
        self.bounds().log_w_sup()
    }

    fn has_initial_adaptation(&self) -> bool {
        true
    }

    fn log_initial_predictive(&self, y: &f64) -> Option<f64> {
        let (phi, su2) = (self.p.phi, self.p.sigma_u.powi(2));
        Some(normal_log_pdf(*y, phi * self.p.m0, phi * phi * self.p.p0 + su2))
    }

    fn sample_initial_posterior(&self, y: &f64, rng: &mut dyn RngCore) -> Option<f64> {
        let (phi, su2, p0) = (self.p.phi, self.p.sigma_u.powi(2), self.p.p0);
        let gain = p0 * phi / (phi * phi * p0 + su2);
        let mean = self.p.m0 + gain * (y - phi * self.p.m0);
        let var = (1.0 - gain * phi) * p0;
        Some(mean + var.sqrt() * gauss(rng))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::integrate_real_line;

    fn model() -> AdditiveNoiseModel {
        AdditiveNoiseModel::new(AdditiveNoiseParams {
            drift: Drift::Saturating { a: 0.5, c: 2.0 },
            phi: 1.3,
            sigma_u: 0.8,
            sigma_w: 0.6,
            m0: 0.0,
            p0: 1.0,
        })
        .unwrap()
    }

    #[test]
    fn unit_parameters_give_inverse_sqrt_four_pi() {
        let b = additive_noise_bounds(1.0, 1.0, 1.0).unwrap();
        assert!((b.weight_sup - 0.282_094_791_773_878_1).abs() < 1e-12);
        assert!(matches!(additive_noise_bounds(0.0, 1.0, 1.0), Err(Error::InvalidParams(_))));
    }

    #[test]
    fn g_integrates_to_inverse_phi() {
        let m = model();
        for y in [-2.0, 0.0, 0.7, 4.0] {
            let v = integrate_real_line(|x| m.log_g(&x, &y).exp(), 1e-12);
            assert!((v - 1.0 / 1.3).abs() < 1e-8, "y = {y}: {v}");
        }
    }

    #[test]
    fn fully_adapted_weight_is_gaussian_predictive() {
        let m = model();
        for (x, y) in [(0.3, 1.0), (-2.0, 0.5), (5.0, -1.0)] {
            let s = 1.3f64.powi(2) * 0.36 + 0.64;
            let expected = (-(y - 1.3 * m.p.drift.eval(x)).powi(2) / (2.0 * s)).exp() / (2.0 * std::f64::consts::PI * s).sqrt();
            assert!((m.log_predictive(&x, &y).exp() - expected).abs() < 1e-12);
            // numerical check of ∫ m(x, u) g(u, y) du
            let q = integrate_real_line(|u| (m.log_m(&x, &u) + m.log_g(&u, &y)).exp(), 1e-13);
            assert!((q - expected).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_explosive_drift() {
        let mut p = model().params();
        p.drift = Drift::Linear { a: 1.0 };
        assert!(AdditiveNoiseModel::new(p).is_err());
    }
}
