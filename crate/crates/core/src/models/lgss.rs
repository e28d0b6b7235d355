//! Scalar linear-Gaussian state-space model and its exact oracles
//! (Kalman filter, RTS smoother, forward-filtering backward-sampling).
//!
//! ```text
//! X₀ ~ N(m₀, p₀),  X_{t+1} = a X_t + √q W,  Y_t = c X_t + √r U
//! ```

use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ssm::{Adaptation, SpaceKind, StateSpaceModel};
use crate::stats::normal_log_pdf;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LgssParams {
    pub a: f64,
    pub c: f64,
    pub q: f64,
    pub r: f64,
    pub m0: f64,
    pub p0: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lgss {
    p: LgssParams,
}

/// Output of the Kalman filter.
#[derive(Debug, Clone)]
pub struct KalmanPass {
    pub filtered_mean: Vec<f64>,
    pub filtered_var: Vec<f64>,
    pub predicted_mean: Vec<f64>,
    pub predicted_var: Vec<f64>,
    pub log_likelihood: f64,
}

fn gauss(rng: &mut dyn RngCore) -> f64 {
    StandardNormal.sample(rng)
}

impl Lgss {
    pub fn new(p: LgssParams) -> Result<Self> {
        if !(p.q >= 0.0 && p.r > 0.0 && p.p0 >= 0.0) || [p.a, p.c, p.m0].iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams(format!("invalid LGSS parameters {p:?}")));
        }
        Ok(Lgss { p })
    }

    pub fn params(&self) -> LgssParams {
        self.p
    }

    /// Stationary variance `q / (1 - a²)` for `|a| < 1`.
    pub fn stationary_var(&self) -> Option<f64> {
        (self.p.a.abs() < 1.0).then(|| self.p.q / (1.0 - self.p.a * self.p.a))
    }

    pub fn kalman(&self, ys: &[f64]) -> Result<KalmanPass> {
        let LgssParams { a, c, q, r, m0, p0 } = self.p;
        let n = ys.len();
        let mut out = KalmanPass {
            filtered_mean: Vec::with_capacity(n),
            filtered_var: Vec::with_capacity(n),
            predicted_mean: Vec::with_capacity(n),
            predicted_var: Vec::with_capacity(n),
            log_likelihood: 0.0,
        };
        let (mut pm, mut pv) = (m0, p0);
        for &y in ys {
            let s = c * c * pv + r;
            if !(s > 0.0) {
                return Err(Error::NumericalDegeneracy("innovation variance not positive".into()));
            }
            out.log_likelihood += normal_log_pdf(y, c * pm, s);
            let gain = pv * c / s;
            let fm = pm + gain * (y - c * pm);
            let fv = (1.0 - gain * c) * pv;
            out.predicted_mean.push(pm);
            out.predicted_var.push(pv);
            out.filtered_mean.push(fm);
            out.filtered_var.push(fv.max(0.0));
            pm = a * fm;
            pv = a * a * fv + q;
        }
        Ok(out)
    }

    /// RTS smoother: smoothing means and variances.
    pub fn rts_smoother(&self, ys: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let k = self.kalman(ys)?;
        let n = ys.len();
        let mut sm = k.filtered_mean.clone();
        let mut sv = k.filtered_var.clone();
        for t in (0..n.saturating_sub(1)).rev() {
            let pv_next = self.p.a * self.p.a * k.filtered_var[t] + self.p.q;
            if pv_next <= 0.0 {
                // deterministic dynamics from a point mass: smoothing equals filtering
                continue;
            }
            let j = k.filtered_var[t] * self.p.a / pv_next;
            sm[t] = k.filtered_mean[t] + j * (sm[t + 1] - self.p.a * k.filtered_mean[t]);
            sv[t] = k.filtered_var[t] + j * j * (sv[t + 1] - pv_next);
        }
        Ok((sm, sv))
    }

    /// Exact draw from the joint smoothing distribution by forward filtering and backward sampling.
    pub fn ffbs_sample(&self, ys: &[f64], rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        let k = self.kalman(ys)?;
        let n = ys.len();
        if n == 0 {
            return Ok(Vec::new());
        }
        let LgssParams { a, q, .. } = self.p;
        let mut path = vec![0.0; n];
        path[n - 1] = k.filtered_mean[n - 1] + k.filtered_var[n - 1].sqrt() * gauss(rng);
        for t in (0..n - 1).rev() {
            let (fm, fv) = (k.filtered_mean[t], k.filtered_var[t]);
            let denom = a * a * fv + q;
            let (mean, var) = if denom > 0.0 {
                let gain = fv * a / denom;
                (fm + gain * (path[t + 1] - a * fm), fv * q / denom)
            } else {
                (fm, fv)
            };
            if var < -1e-12 {
                return Err(Error::NumericalDegeneracy(format!("negative backward variance at t = {t}")));
            }
            path[t] = mean + var.max(0.0).sqrt() * gauss(rng);
        }
        Ok(path)
    }
}

impl StateSpaceModel for Lgss {
    type State = f64;
    type Obs = f64;

    fn state_space(&self) -> SpaceKind {
        SpaceKind::Continuous(1)
    }

    fn observation_space(&self) -> SpaceKind {
        SpaceKind::Continuous(1)
    }

    fn log_m(&self, x: &f64, x_next: &f64) -> f64 {
        normal_log_pdf(*x_next, self.p.a * x, self.p.q)
    }

    fn log_g(&self, x: &f64, y: &f64) -> f64 {
        normal_log_pdf(*y, self.p.c * x, self.p.r)
    }

    fn log_mu(&self, x: &f64) -> f64 {
        normal_log_pdf(*x, self.p.m0, self.p.p0)
    }

    fn sample_m(&self, x: &f64, rng: &mut dyn RngCore) -> f64 {
        self.p.a * x + self.p.q.sqrt() * gauss(rng)
    }

    fn sample_g(&self, x: &f64, rng: &mut dyn RngCore) -> f64 {
        self.p.c * x + self.p.r.sqrt() * gauss(rng)
    }

    fn sample_mu(&self, rng: &mut dyn RngCore) -> f64 {
        self.p.m0 + self.p.p0.sqrt() * gauss(rng)
    }

    fn log_g_sup(&self, _y: &f64) -> Option<f64> {
        (self.p.c != 0.0).then(|| -0.5 * (crate::stats::LN_2PI + self.p.r.ln()))
    }

    fn log_g_integral(&self, _y: &f64) -> Option<f64> {
        (self.p.c != 0.0).then(|| -self.p.c.abs().ln())
    }

    fn adaptation(&self) -> Option<&dyn Adaptation<f64, f64>> {
        Some(self)
    }
}

/// Posterior of `X` given `X ~ N(m, v)` and `Y = cX + N(0, r)`.
fn gaussian_update(m: f64, v: f64, c: f64, r: f64, y: f64) -> (f64, f64) {
    let s = c * c * v + r;
    let gain = v * c / s;
    (m + gain * (y - c * m), (1.0 - gain * c) * v)
}

impl Adaptation<f64, f64> for Lgss {
    fn log_predictive(&self, x: &f64, y: &f64) -> f64 {
        let LgssParams { a, c, q, r, .. } = self.p;
        normal_log_pdf(*y, c * a * x, c * c * q + r)
    }

    fn sample_predictive(&self, x: &f64, y: &f64, rng: &mut dyn RngCore) -> f64 {
        let LgssParams { a, c, q, r, .. } = self.p;
        let (m, v) = gaussian_update(a * x, q, c, r, *y);
        m + v.max(0.0).sqrt() * gauss(rng)
    }

    fn log_predictive_sup(&self, _y: &f64) -> f64 {
        let LgssParams { c, q, r, .. } = self.p;
        -0.5 * (crate::stats::LN_2PI + (c * c * q + r).ln())
    }

    fn has_initial_adaptation(&self) -> bool {
        true
    }

    fn log_initial_predictive(&self, y: &f64) -> Option<f64> {
        let LgssParams { c, r, m0, p0, .. } = self.p;
        Some(normal_log_pdf(*y, c * m0, c * c * p0 + r))
    }

    fn sample_initial_posterior(&self, y: &f64, rng: &mut dyn RngCore) -> Option<f64> {
        let LgssParams { c, r, m0, p0, .. } = self.p;
        let (m, v) = gaussian_update(m0, p0, c, r, *y);
        Some(m + v.max(0.0).sqrt() * gauss(rng))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamKey;
    use crate::stats::mean_and_se;

    fn model() -> Lgss {
        Lgss::new(LgssParams {
            a: 0.8,
            c: 1.0,
            q: 0.5,
            r: 0.7,
            m0: 0.0,
            p0: 1.0,
        })
        .unwrap()
    }

    #[test]
    fn kalman_matches_single_step_closed_form() {
        let m = model();
        let k = m.kalman(&[0.4]).unwrap();
        assert!((k.log_likelihood - normal_log_pdf(0.4, 0.0, 1.7)).abs() < 1e-14);
    }

    #[test]
    fn ffbs_at_t0_draws_from_filter_posterior() {
        let m = model();
        let key = StreamKey::new(5);
        let draws: Vec<f64> = (0..20_000).map(|i| m.ffbs_sample(&[1.2], &mut key.rng(0, i)).unwrap()[0]).collect();
        let k = m.kalman(&[1.2]).unwrap();
        let (mean, se) = mean_and_se(&draws);
        assert!((mean - k.filtered_mean[0]).abs() < 4.0 * se);
    }

    #[test]
    fn ffbs_marginals_match_rts() {
        let m = model();
        let key = StreamKey::new(17);
        let (_, ys) = m.simulate(6, &mut key.rng(0, 0));
        let (sm, sv) = m.rts_smoother(&ys).unwrap();
        let n = 10_000;
        let draws: Vec<Vec<f64>> = (0..n).map(|i| m.ffbs_sample(&ys, &mut key.rng(1, i)).unwrap()).collect();
        for t in 0..ys.len() {
            let col: Vec<f64> = draws.iter().map(|p| p[t]).collect();
            let (mean, se) = mean_and_se(&col);
            assert!((mean - sm[t]).abs() < 3.5 * se, "mean at t={t}");
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
            // SE of a Gaussian sample variance
            let var_se = sv[t] * (2.0 / (n as f64 - 1.0)).sqrt();
            assert!((var - sv[t]).abs() < 3.5 * var_se, "var at t={t}");
        }
    }

    #[test]
    fn ffbs_without_process_noise_follows_the_dynamics() {
        let m = Lgss::new(LgssParams { a: 0.9, c: 1.0, q: 0.0, r: 0.5, m0: 0.0, p0: 1.0 }).unwrap();
        let ys = [0.3, -0.2, 0.5, 0.1];
        let path = m.ffbs_sample(&ys, &mut StreamKey::new(1).rng(0, 0)).unwrap();
        for t in 1..ys.len() {
            assert!((path[t] - 0.9 * path[t - 1]).abs() < 1e-9);
        }
    }
}
