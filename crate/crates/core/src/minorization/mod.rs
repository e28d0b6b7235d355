//! Minorization constants of the particle Gibbs kernel.
//!
//! Exact per-time bounds `B_{t,T}` on finite HMMs, the constant
//! `ε_{T,N} = ∏ (N-1)/(2B_t + N - 2)`, the closed-form strong-mixing floors,
//! and Monte Carlo estimators for models where only moments are available.

mod kl;
mod moments;
mod scaling;

pub use kl::{lgss_kl, kl_rate_check, KlRateReport, KlRow, StationarySampler};
pub use moments::{estimate_moments, MomentEstimate, MomentOptions};
pub use scaling::{scaling_experiment, NRule, ScalingConfig, ScalingReport, ScalingRow};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::models::FiniteHmm;
use crate::rng::StreamKey;
use crate::ssm::{make_proposal, ProposalKind, StateSpaceModel};

/// How the `B_{t,T}` values of a report were obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    ExactFinite,
    AnalyticBound,
    MonteCarlo,
}

/// Inputs and value of a closed-form strong-mixing floor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StrongMixingInputs {
    pub kind: ProposalKind,
    pub sigma_minus: f64,
    pub sigma_plus: f64,
    pub delta: f64,
    pub m: u32,
    pub lambda: f64,
    /// Cap on every `B_{t,T}` implied by the assumptions.
    pub b_cap: f64,
    pub floor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MinorizationReport {
    pub b: Vec<f64>,
    pub epsilon: f64,
    pub n: usize,
    /// Final time index `T`.
    pub t: usize,
    pub method: Method,
    pub proposal: ProposalKind,
    pub strong_mixing: Option<StrongMixingInputs>,
}

/// `B_{t,T}` for every `t`, computed exactly on a finite HMM.
///
/// The kernel products `K⟨y_{t+1}⟩⋯K⟨y_{t+ℓ}⟩` are carried as a rescaled
/// matrix with a separate log scale; conditional densities come from the
/// scaled forward algorithm.
#[allow(non_snake_case)]
pub fn exact_b_tT(hmm: &FiniteHmm, kind: ProposalKind, ys: &[usize]) -> Result<Vec<f64>> {
    Ok(exact_log_b(hmm, kind, ys)?.into_iter().map(f64::exp).collect())
}

/// `log B_{t,T}` for every `t`.
pub fn exact_log_b(hmm: &FiniteHmm, kind: ProposalKind, ys: &[usize]) -> Result<Vec<f64>> {
    if ys.is_empty() {
        return Err(Error::LengthMismatch { expected: 1, got: 0 });
    }
    let prop = make_proposal(hmm, kind)?;
    let fwd = hmm.forward(ys)?;
    let k = hmm.num_states();
    let len = ys.len();
    // K⟨y⟩(x, x') = m(x, x') g(x', y)
    let kernels: Vec<Vec<f64>> = ys
        .iter()
        .map(|&y| (0..k * k).map(|c| hmm.m(c / k, c % k) * hmm.g(c % k, y)).collect())
        .collect();
    let mut out = Vec::with_capacity(len);
    for t in 0..len {
        let log_w_sup = if t == 0 { prop.log_w0_sup(&ys[0]) } else { prop.log_w_sup(&ys[t]) }
            .ok_or(Error::UnboundedWeight)?;
        if !log_w_sup.is_finite() {
            return Err(Error::NonFiniteModel(format!("weight sup at t = {t}: {log_w_sup}")));
        }
        // ℓ = 0
        let mut log_cond = fwd.log_increments[t];
        let mut best = log_w_sup - log_cond;
        let mut prod: Vec<f64> = (0..k * k).map(|c| if c / k == c % k { 1.0 } else { 0.0 }).collect();
        let mut log_scale = 0.0;
        for s in t + 1..len {
            prod = mat_mul(&prod, &kernels[s], k);
            let max = prod.iter().copied().fold(0.0, f64::max);
            if !(max > 0.0 && max.is_finite()) {
                return Err(Error::NonFiniteModel(format!("kernel product vanished at s = {s}")));
            }
            prod.iter_mut().for_each(|v| *v /= max);
            log_scale += max.ln();
            let row_max = (0..k).map(|x| prod[x * k..(x + 1) * k].iter().sum::<f64>()).fold(0.0, f64::max);
            log_cond += fwd.log_increments[s];
            best = best.max(log_w_sup + log_scale + row_max.ln() - log_cond);
        }
        out.push(best);
    }
    Ok(out)
}

fn mat_mul(a: &[f64], b: &[f64], k: usize) -> Vec<f64> {
    let mut c = vec![0.0; k * k];
    for i in 0..k {
        for l in 0..k {
            let v = a[i * k + l];
            if v != 0.0 {
                for j in 0..k {
                    c[i * k + j] += v * b[l * k + j];
                }
            }
        }
    }
    c
}

/// `log ε_{T,N}`.
pub fn log_epsilon(b: &[f64], n: usize) -> Result<f64> {
    if n < 2 {
        return Err(Error::InvalidN {
            n,
            reason: "the minorization constant needs N ≥ 2",
        });
    }
    let nm1 = (n - 1) as f64;
    let mut acc = 0.0;
    for (t, &bt) in b.iter().enumerate() {
        if !(bt >= 0.0) || !bt.is_finite() {
            return Err(Error::InvalidParams(format!("B_t must be finite and ≥ 0, got {bt} at t = {t}")));
        }
        let denom = 2.0 * bt + (n - 2) as f64;
        if denom <= 0.0 {
            return Err(Error::InvalidParams("B_t = 0 with N = 2 gives an unbounded factor".into()));
        }
        // ln((N-1)/(2B+N-2)) = -ln1p((2B-1)/(N-1))
        acc -= ((2.0 * bt - 1.0) / nm1).ln_1p();
    }
    Ok(acc)
}

/// `ε_{T,N} = ∏_t (N-1)/(2B_t + N - 2)`, evaluated in log domain.
pub fn epsilon(b: &[f64], n: usize) -> Result<f64> {
    Ok(log_epsilon(b, n)?.exp())
}

/// `exp((1/(N-1)) Σ_t (1 - 2B_t))`, the exponential lower bound on `ε_{T,N}`.
pub fn epsilon_lower_bound(b: &[f64], n: usize) -> f64 {
    (b.iter().map(|bt| 1.0 - 2.0 * bt).sum::<f64>() / (n as f64 - 1.0)).exp()
}

/// The cap on `B_{t,T}` implied by strong mixing: `(σ₊/σ₋)²` fully adapted, `δ^m σ₊/σ₋` bootstrap.
pub fn strong_mixing_cap(kind: ProposalKind, sigma_minus: f64, sigma_plus: f64, delta: f64, m: u32) -> f64 {
    let r = sigma_plus / sigma_minus;
    match kind {
        ProposalKind::FullyAdapted => r * r,
        ProposalKind::Bootstrap => delta.powi(m as i32) * r,
    }
}

/// Asymptotic floor on `liminf ε_{T, N_T}` with `N_T ~ λT` under strong mixing.
pub fn strong_mixing_bound(
    kind: ProposalKind,
    sigma_minus: f64,
    sigma_plus: f64,
    delta: f64,
    m: u32,
    lambda: f64,
) -> Result<f64> {
    if !(sigma_minus > 0.0 && sigma_plus >= sigma_minus) {
        return Err(Error::InvalidParams(format!(
            "need σ₊ ≥ σ₋ > 0, got σ₋ = {sigma_minus}, σ₊ = {sigma_plus}"
        )));
    }
    if !(delta >= 1.0) {
        return Err(Error::InvalidParams(format!("need δ ≥ 1, got {delta}")));
    }
    if m < 1 {
        return Err(Error::InvalidParams("need m ≥ 1".into()));
    }
    if !(lambda > 0.0) {
        return Err(Error::InvalidParams(format!("need λ > 0, got {lambda}")));
    }
    if kind == ProposalKind::FullyAdapted && m != 1 {
        return Err(Error::InvalidParams("the fully-adapted floor requires m = 1".into()));
    }
    let cap = strong_mixing_cap(kind, sigma_minus, sigma_plus, delta, m);
    Ok(((1.0 - 2.0 * cap) / lambda).exp())
}

/// Exact report for a finite HMM, with its strong-mixing inputs attached.
pub fn exact_report(hmm: &FiniteHmm, kind: ProposalKind, ys: &[usize], n: usize, lambda: Option<f64>) -> Result<MinorizationReport> {
    let b = exact_b_tT(hmm, kind, ys)?;
    let eps = epsilon(&b, n)?;
    let (sm, sp) = hmm.strong_mixing_constants();
    let delta = hmm.likelihood_ratio_bound();
    let strong_mixing = if sm > 0.0 {
        let lambda = lambda.unwrap_or(n as f64 / ys.len().max(1) as f64);
        Some(StrongMixingInputs {
            kind,
            sigma_minus: sm,
            sigma_plus: sp,
            delta,
            m: 1,
            lambda,
            b_cap: strong_mixing_cap(kind, sm, sp, delta, 1),
            floor: strong_mixing_bound(kind, sm, sp, delta, 1, lambda)?,
        })
    } else {
        None
    };
    Ok(MinorizationReport {
        b,
        epsilon: eps,
        n,
        t: ys.len() - 1,
        method: Method::ExactFinite,
        proposal: kind,
        strong_mixing,
    })
}

/// One row of the exact-versus-floor comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FloorRow {
    pub proposal: ProposalKind,
    pub lambda: f64,
    pub t: usize,
    pub n: usize,
    pub epsilon: f64,
    pub floor: f64,
    pub max_b: f64,
    pub b_cap: f64,
    pub passed: bool,
}

/// For each `(λ, T)`, simulate `y_{0:T}` from `hmm`, set `N = ⌈λT⌉` and compare
/// the exact `ε_{T,N}` with the closed-form floor.
pub fn floor_table(
    hmm: &FiniteHmm,
    kind: ProposalKind,
    lambdas: &[f64],
    ts: &[usize],
    key: StreamKey,
    tol: f64,
) -> Result<Vec<FloorRow>> {
    let (sm, sp) = hmm.strong_mixing_constants();
    let delta = hmm.likelihood_ratio_bound();
    let mut rows = Vec::new();
    for &t in ts {
        let (_, ys) = hmm.simulate(t + 1, &mut key.rng(t as u64, 0));
        let b = exact_b_tT(hmm, kind, &ys)?;
        let max_b = b.iter().copied().fold(0.0, f64::max);
        for &lambda in lambdas {
            let n = ((lambda * t as f64).ceil() as usize).max(2);
            let eps = epsilon(&b, n)?;
            let floor = strong_mixing_bound(kind, sm, sp, delta, 1, lambda)?;
            rows.push(FloorRow {
                proposal: kind,
                lambda,
                t,
                n,
                epsilon: eps,
                floor,
                max_b,
                b_cap: strong_mixing_cap(kind, sm, sp, delta, 1),
                passed: eps >= floor - tol,
            });
        }
    }
    Ok(rows)
}
