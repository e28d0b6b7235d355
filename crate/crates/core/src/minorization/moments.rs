//! Monte Carlo estimates of `E[(B̄_{t,t+ℓ})^α]` and `E[(C̄_{t,t+ℓ})^α]`.
//!
//! The marginal density `p̄_{μ,t}(y_{t:t+ℓ})` in the denominator is itself
//! estimated by an inner bootstrap particle filter started from `μM^t`, so the
//! reported moments carry the (positive, Jensen-type) bias of that estimator.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::StreamKey;
use crate::smc::{cumulative_weights, pick};
use crate::ssm::{make_proposal, ProposalKind, StateSpaceModel};
use crate::stats::{log_sum_exp, mean_and_se};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentOptions {
    pub t: usize,
    pub ell: usize,
    pub alpha: f64,
    pub samples: usize,
    /// Particles of the inner density estimator.
    pub n_inner: usize,
}

impl Default for MomentOptions {
    fn default() -> Self {
        MomentOptions {
            t: 0,
            ell: 0,
            alpha: 0.5,
            samples: 100_000,
            n_inner: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentEstimate {
    pub t: usize,
    pub ell: usize,
    pub alpha: f64,
    /// `E[(B̄)^α]`; absent when `sup_x ∫ m g` has no closed form.
    pub b_moment: Option<f64>,
    pub b_se: Option<f64>,
    /// `E[(C̄)^α]`; defined for `ℓ ≥ 1`.
    pub c_moment: Option<f64>,
    pub c_se: Option<f64>,
    pub samples: usize,
    pub n_inner: usize,
    /// Running mean of the primary quantity (B̄ if present, else C̄) at doubling sample sizes.
    pub running_means: Vec<(usize, f64)>,
    /// `|m(n) - m(n/2)| / m(n/2)` for the primary quantity.
    pub relative_change_last_doubling: f64,
    /// Ratio of the running mean at `n` to the running mean at `n/10`.
    pub growth_ratio_tenfold: f64,
}

impl MomentEstimate {
    /// Relative change over the last doubling below `tol`.
    pub fn stabilized(&self, tol: f64) -> bool {
        self.relative_change_last_doubling < tol
    }

    /// Running mean at `n` exceeds `factor` times the mean at `n/10`.
    pub fn diverging(&self, factor: f64) -> bool {
        self.growth_ratio_tenfold > factor
    }
}

/// `log p̂(y_{0:ℓ})` for a bootstrap filter whose particles start at `μM^t`.
fn inner_log_density<M: StateSpaceModel>(model: &M, window: &[M::Obs], t: usize, n: usize, key: StreamKey) -> f64 {
    let mut rng = key.rng(0, 0);
    let mut xs: Vec<M::State> = (0..n)
        .map(|_| {
            let mut x = model.sample_mu(&mut rng);
            for _ in 0..t {
                x = model.sample_m(&x, &mut rng);
            }
            x
        })
        .collect();
    let ln_n = (n as f64).ln();
    let mut total = 0.0;
    for (s, y) in window.iter().enumerate() {
        if s > 0 {
            let lw: Vec<f64> = xs.iter().map(|x| model.log_g(x, &window[s - 1])).collect();
            let cum = match cumulative_weights(&lw) {
                Some(c) => c,
                None => return f64::NEG_INFINITY,
            };
            xs = (0..n)
                .map(|_| {
                    let a = pick(&cum, rng.random::<f64>());
                    model.sample_m(&xs[a], &mut rng)
                })
                .collect();
        }
        let lw: Vec<f64> = xs.iter().map(|x| model.log_g(x, y)).collect();
        total += log_sum_exp(&lw) - ln_n;
    }
    total
}

/// Running means at `n, n/2, n/4, …` down to at least 100 samples, in increasing order.
fn running_means(values: &[f64]) -> Vec<(usize, f64)> {
    let mut prefix = Vec::with_capacity(values.len() + 1);
    let mut acc = 0.0;
    prefix.push(0.0);
    for v in values {
        acc += v;
        prefix.push(acc);
    }
    let mut out = Vec::new();
    let mut n = values.len();
    while n >= 100 {
        out.push((n, prefix[n] / n as f64));
        n /= 2;
    }
    out.reverse();
    out
}

fn mean_at(values: &[f64], n: usize) -> f64 {
    values[..n].iter().sum::<f64>() / n as f64
}

/// Estimate the `α`-moments of `B̄_{t,t+ℓ}` and `C̄_{t,t+ℓ}` for `ℓ ∈ {0, 1}`.
///
/// Outer sample `i` simulates `Y_{0:t+ℓ}` and runs its inner filter under
/// `key.child(i)`, so the estimate is independent of the thread count.
pub fn estimate_moments<M: StateSpaceModel>(
    model: &M,
    kind: ProposalKind,
    opts: &MomentOptions,
    key: StreamKey,
) -> Result<MomentEstimate> {
    if opts.ell > 1 {
        return Err(Error::InvalidParams(format!(
            "moment estimators support ℓ ∈ {{0, 1}}, got {}",
            opts.ell
        )));
    }
    if !(opts.alpha > 0.0) || opts.samples < 10 || opts.n_inner == 0 {
        return Err(Error::InvalidParams("need α > 0, at least 10 samples and N_inner ≥ 1".into()));
    }
    let prop = make_proposal(model, kind)?;
    let (t, ell, alpha) = (opts.t, opts.ell, opts.alpha);
    let draws: Vec<Result<(Option<f64>, Option<f64>)>> = (0..opts.samples as u64)
        .into_par_iter()
        .map(|i| {
            let k = key.child(i);
            let (_, ys) = model.simulate(t + ell + 1, &mut k.rng(0, 0));
            let y = &ys[t];
            let log_w_sup = if t == 0 { prop.log_w0_sup(y) } else { prop.log_w_sup(y) }.ok_or(Error::UnboundedWeight)?;
            let log_p = inner_log_density(model, &ys[t..], t, opts.n_inner, k.child(1));
            if ell == 0 {
                return Ok((Some((alpha * (log_w_sup - log_p)).exp()), None));
            }
            let y1 = &ys[t + 1];
            let b = model
                .adaptation()
                .map(|a| (alpha * (log_w_sup + a.log_predictive_sup(y1) - log_p)).exp());
            let c = model
                .log_g_integral(y1)
                .map(|li| (alpha * (log_w_sup + li - log_p)).exp());
            Ok((b, c))
        })
        .collect();
    let draws: Vec<(Option<f64>, Option<f64>)> = draws.into_iter().collect::<Result<_>>()?;
    let bs: Option<Vec<f64>> = draws.iter().map(|d| d.0).collect();
    let cs: Option<Vec<f64>> = draws.iter().map(|d| d.1).collect();
    let primary = bs.as_ref().or(cs.as_ref()).ok_or_else(|| {
        Error::UnsupportedModel("closed-form sup or integral of the observation density for ℓ = 1")
    })?;
    let n = primary.len();
    let full = mean_at(primary, n);
    let half = mean_at(primary, n / 2);
    let tenth = mean_at(primary, (n / 10).max(1));
    let (b_moment, b_se) = match &bs {
        Some(v) => {
            let (m, se) = mean_and_se(v);
            (Some(m), Some(se))
        }
        None => (None, None),
    };
    let (c_moment, c_se) = match &cs {
        Some(v) => {
            let (m, se) = mean_and_se(v);
            (Some(m), Some(se))
        }
        None => (None, None),
    };
    Ok(MomentEstimate {
        t,
        ell,
        alpha,
        b_moment,
        b_se,
        c_moment,
        c_se,
        samples: n,
        n_inner: opts.n_inner,
        running_means: running_means(primary),
        relative_change_last_doubling: (full - half).abs() / half,
        growth_ratio_tenfold: full / tenth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{AdditiveNoiseModel, AdditiveNoiseParams, Drift, FiniteHmm, StochVolModel, SvParams};
    use crate::stats::integrate_real_line;

    #[test]
    fn rejects_long_windows_and_missing_bounds() {
        let sv = StochVolModel::new(SvParams { phi: 0.9, sigma: 0.3, beta: 1.0, m0: None, p0: None }).unwrap();
        let opts = MomentOptions { ell: 2, samples: 100, n_inner: 10, ..Default::default() };
        assert!(estimate_moments(&sv, ProposalKind::Bootstrap, &opts, StreamKey::new(0)).is_err());
        // SV has no adaptation
        let opts = MomentOptions { samples: 100, n_inner: 10, ..Default::default() };
        assert!(matches!(
            estimate_moments(&sv, ProposalKind::FullyAdapted, &opts, StreamKey::new(0)),
            Err(Error::UnsupportedModel(_))
        ));
    }

    #[test]
    fn finite_hmm_moment_matches_exact_expectation() {
        let m = FiniteHmm::new(
            vec![vec![0.7, 0.3], vec![0.4, 0.6]],
            vec![vec![0.8, 0.2], vec![0.3, 0.7]],
            vec![0.6, 0.4],
        )
        .unwrap();
        // E[(sup g / p(Y0))^α] by summing over the two symbols
        let alpha = 0.5;
        let exact: f64 = (0..2)
            .map(|y| {
                let p = 0.6 * m.g(0, y) + 0.4 * m.g(1, y);
                p * (m.g(0, y).max(m.g(1, y)) / p).powf(alpha)
            })
            .sum();
        let opts = MomentOptions { alpha, samples: 20_000, n_inner: 2000, ..Default::default() };
        let est = estimate_moments(&m, ProposalKind::Bootstrap, &opts, StreamKey::new(1)).unwrap();
        let (b, se) = (est.b_moment.unwrap(), est.b_se.unwrap());
        assert!((b - exact).abs() < 4.0 * se + 2e-3, "{b} ± {se} vs {exact}");
    }

    #[test]
    fn sv_half_moment_is_close_to_quadrature() {
        let sv = StochVolModel::new(SvParams { phi: 0.9, sigma: 0.4, beta: 1.0, m0: None, p0: None }).unwrap();
        let var = sv.stationary_var();
        // marginal density of Y0 under the stationary law
        let py = |y: f64| {
            integrate_real_line(
                |x| (crate::stats::normal_log_pdf(x, 0.0, var) + sv.log_g(&x, &y)).exp(),
                1e-10,
            )
        };
        let exact = 2.0
            * crate::stats::integrate(
                |y| {
                    let p = py(y);
                    if p > 0.0 { p * (crate::models::SV_D2 / y / p).sqrt() } else { 0.0 }
                },
                1e-9,
                30.0,
                1e-7,
            );
        let opts = MomentOptions { alpha: 0.5, samples: 20_000, n_inner: 500, ..Default::default() };
        let est = estimate_moments(&sv, ProposalKind::Bootstrap, &opts, StreamKey::new(2)).unwrap();
        let (b, se) = (est.b_moment.unwrap(), est.b_se.unwrap());
        assert!((b - exact).abs() < 4.0 * se + 0.01 * exact, "{b} ± {se} vs {exact}");
    }

    #[test]
    fn additive_noise_reports_both_quantities_for_one_step() {
        let m = AdditiveNoiseModel::new(AdditiveNoiseParams {
            drift: Drift::Saturating { a: 0.5, c: 1.0 },
            phi: 1.0,
            sigma_u: 1.0,
            sigma_w: 1.0,
            m0: 0.0,
            p0: 1.0,
        })
        .unwrap();
        let opts = MomentOptions { t: 2, ell: 1, alpha: 0.5, samples: 2000, n_inner: 200 };
        let est = estimate_moments(&m, ProposalKind::FullyAdapted, &opts, StreamKey::new(3)).unwrap();
        assert!(est.b_moment.unwrap() > 0.0 && est.c_moment.unwrap() > 0.0);
        let again = estimate_moments(&m, ProposalKind::FullyAdapted, &opts, StreamKey::new(3)).unwrap();
        assert_eq!(est, again);
    }

    #[test]
    fn running_means_cover_doublings() {
        let v: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        let r = running_means(&v);
        assert_eq!(r.iter().map(|p| p.0).collect::<Vec<_>>(), vec![125, 250, 500, 1000]);
        assert!((r[3].1 - 499.5).abs() < 1e-12);
    }
}
