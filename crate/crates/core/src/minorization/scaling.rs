//! Particle-count scaling sweeps: run PG chains at `N_T` for a grid of horizons
//! and check that the mixing proxy does not deteriorate as `T` grows.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::csmc::{run_pg_chain_keyed, PgChainConfig, ReferenceTrajectory};
use crate::error::{Error, Result};
use crate::rng::StreamKey;
use crate::ssm::{make_proposal, ProposalKind, StateSpaceModel};
use crate::stats::{kendall_tau, quantile};

/// How the particle count grows with the horizon `T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum NRule {
    Fixed { n: usize },
    /// `N_T = ⌈λT⌉`
    Linear { lambda: f64 },
    /// `N_T = ⌈T^{1/γ}⌉`
    Power { gamma: f64 },
}

impl NRule {
    /// Uncapped particle count for horizon `t`, at least 2.
    pub fn raw(&self, t: usize) -> f64 {
        let n = match *self {
            NRule::Fixed { n } => n as f64,
            NRule::Linear { lambda } => (lambda * t as f64).ceil(),
            NRule::Power { gamma } => (t as f64).powf(1.0 / gamma).ceil(),
        };
        n.max(2.0)
    }

    pub fn validate(&self, alpha: Option<f64>) -> Result<()> {
        match *self {
            NRule::Fixed { n } if n < 2 => Err(Error::Config("fixed N must be ≥ 2".into())),
            NRule::Linear { lambda } if !(lambda > 0.0) => Err(Error::Config("λ must be positive".into())),
            NRule::Power { gamma } if !(gamma > 0.0) => Err(Error::Config("γ must be positive".into())),
            NRule::Power { gamma } => match alpha {
                Some(a) if gamma >= a => Err(Error::Config(format!("γ = {gamma} must be strictly below α = {a}"))),
                _ => Ok(()),
            },
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingConfig {
    pub rule: NRule,
    /// Moment exponent from a prior moment run; required to validate a power rule.
    pub alpha: Option<f64>,
    pub ts: Vec<usize>,
    pub chains: usize,
    /// PG iterations per chain; the chain's update fraction is their mean.
    #[serde(default = "one")]
    pub iterations: usize,
    pub n_cap: usize,
    /// Maximum number of particle moves `Σ chains · iterations · N_T · (T+1)`.
    pub work_budget: Option<f64>,
    pub proposal: ProposalKind,
    pub seed: u64,
}

fn one() -> usize {
    1
}

impl ScalingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ts.is_empty() {
            return Err(Error::Config("empty T grid".into()));
        }
        if self.chains == 0 || self.iterations == 0 {
            return Err(Error::Config("need at least one chain and one iteration".into()));
        }
        if self.n_cap < 2 {
            return Err(Error::Config("N cap must be ≥ 2".into()));
        }
        self.rule.validate(self.alpha)
    }

    pub fn n_for(&self, t: usize) -> (usize, bool) {
        let raw = self.rule.raw(t);
        if raw > self.n_cap as f64 {
            (self.n_cap, true)
        } else {
            (raw as usize, false)
        }
    }

    pub fn work(&self) -> f64 {
        self.ts
            .iter()
            .map(|&t| (self.chains * self.iterations) as f64 * self.n_for(t).0 as f64 * (t + 1) as f64)
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingRow {
    pub t: usize,
    pub n: usize,
    pub capped: bool,
    pub update_fraction_median: f64,
    pub update_fraction_q10: f64,
    pub update_fraction_q90: f64,
    /// Exact `ε_{T,N_T}` median and upper `ε^{-1}` quantile, when an exact evaluator is supplied.
    pub epsilon_median: Option<f64>,
    pub inv_epsilon_q90: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingReport {
    pub rows: Vec<ScalingRow>,
    /// Per-chain `(T, chain, update fraction)`.
    pub per_chain: Vec<(usize, usize, f64)>,
    /// Kendall τ between `T` and per-chain update fraction.
    pub kendall_tau: f64,
    pub median_non_decreasing: bool,
}

impl ScalingReport {
    /// The tightness proxy: τ ≥ 0, i.e. `1/update-fraction` does not trend upward in `T`.
    pub fn tight(&self) -> bool {
        self.kendall_tau >= 0.0
    }
}

/// Exact `ε_{T,N}` for the observations of one chain.
pub type ExactEpsilon<'a, O> = &'a (dyn Fn(&[O], usize) -> Result<f64> + Sync);

/// Run the sweep. Chain `c` at horizon `T` simulates its own `(x_{0:T}, y_{0:T})`
/// and starts from the simulated `x_{0:T}`, an exact draw from the smoothing law.
pub fn scaling_experiment<M: StateSpaceModel>(
    model: &M,
    config: &ScalingConfig,
    exact: Option<ExactEpsilon<'_, M::Obs>>,
) -> Result<ScalingReport> {
    config.validate()?;
    if let Some(budget) = config.work_budget {
        let work = config.work();
        if work > budget {
            return Err(Error::BudgetExceeded(format!("sweep needs {work:.3e} particle moves, budget {budget:.3e}")));
        }
    }
    let prop = make_proposal(model, config.proposal)?;
    let root = StreamKey::new(config.seed);
    let mut rows = Vec::with_capacity(config.ts.len());
    let mut per_chain = Vec::new();
    for &t in &config.ts {
        let (n, capped) = config.n_for(t);
        let tk = root.child(t as u64);
        let pg = PgChainConfig {
            n,
            iterations: config.iterations,
            burn_in: 0,
            seed: config.seed,
            proposal: config.proposal,
            thin: 1,
        };
        let results: Vec<(f64, Option<f64>)> = (0..config.chains)
            .into_par_iter()
            .map(|c| {
                let ck = tk.child(c as u64);
                let (xs, ys) = model.simulate(t + 1, &mut ck.rng(0, 0));
                let chain = run_pg_chain_keyed(&prop, &ys, &pg, &ReferenceTrajectory::new(xs), ck.child(1), c as u64)?;
                let eps = match exact {
                    Some(f) => Some(f(&ys, n)?),
                    None => None,
                };
                Ok((chain.diagnostics.mean_update_fraction(), eps))
            })
            .collect::<Result<_>>()?;
        let uf: Vec<f64> = results.iter().map(|r| r.0).collect();
        let eps: Option<Vec<f64>> = results.iter().map(|r| r.1).collect();
        for (c, u) in uf.iter().enumerate() {
            per_chain.push((t, c, *u));
        }
        rows.push(ScalingRow {
            t,
            n,
            capped,
            update_fraction_median: quantile(&uf, 0.5),
            update_fraction_q10: quantile(&uf, 0.1),
            update_fraction_q90: quantile(&uf, 0.9),
            epsilon_median: eps.as_ref().map(|e| quantile(e, 0.5)),
            inv_epsilon_q90: eps.as_ref().map(|e| quantile(&e.iter().map(|v| 1.0 / v).collect::<Vec<_>>(), 0.9)),
        });
    }
    let tx: Vec<f64> = per_chain.iter().map(|p| p.0 as f64).collect();
    let ux: Vec<f64> = per_chain.iter().map(|p| p.2).collect();
    let median_non_decreasing = rows
        .windows(2)
        .all(|w| w[1].update_fraction_median >= w[0].update_fraction_median);
    Ok(ScalingReport {
        rows,
        per_chain,
        kendall_tau: kendall_tau(&tx, &ux),
        median_non_decreasing,
    })
}
