//! Conditional SMC and the particle Gibbs kernel on path space.
//!
//! The reference trajectory occupies the last particle slot and is its own
//! ancestor at every step. One kernel application runs a conditional sweep and
//! returns the ancestral line of a final particle drawn by weight.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{StreamKey, AUX_SLOT};
use crate::smc::{cumulative_weights, extract_path, forward_pass, pick, ParticleSystem, PathSample};
use crate::ssm::{Proposal, ProposalKind, Scalar, StateSpaceModel};
use crate::stats::autocorrelation;

/// The pinned path `x'_{0:T}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceTrajectory<S> {
    pub states: Vec<S>,
}

impl<S> ReferenceTrajectory<S> {
    pub fn new(states: Vec<S>) -> Self {
        ReferenceTrajectory { states }
    }
}

impl<S> From<PathSample<S>> for ReferenceTrajectory<S> {
    fn from(p: PathSample<S>) -> Self {
        ReferenceTrajectory { states: p.states }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PgChainConfig {
    pub n: usize,
    pub iterations: usize,
    #[serde(default)]
    pub burn_in: usize,
    pub seed: u64,
    pub proposal: ProposalKind,
    /// Keep every `thin`-th post-burn-in sample.
    #[serde(default = "one")]
    pub thin: usize,
}

fn one() -> usize {
    1
}

impl PgChainConfig {
    pub fn validate(&self) -> Result<()> {
        check_n(self.n)?;
        if self.iterations == 0 {
            return Err(Error::Config("a chain needs at least one iteration".into()));
        }
        if self.thin == 0 {
            return Err(Error::Config("thinning interval must be ≥ 1".into()));
        }
        Ok(())
    }
}

fn check_n(n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::InvalidN {
            n,
            reason: "the conditional sweep needs at least one free particle",
        });
    }
    Ok(())
}

/// One conditional SMC sweep; returns the particle system and the selected path.
pub fn csmc_sweep<M: StateSpaceModel>(
    proposal: &Proposal<'_, M>,
    ys: &[M::Obs],
    reference: &ReferenceTrajectory<M::State>,
    n: usize,
    key: StreamKey,
) -> Result<(ParticleSystem<M::State>, PathSample<M::State>)> {
    check_n(n)?;
    let sys = forward_pass(proposal, ys, n, key, Some(&reference.states))?;
    let last = sys.last_time();
    let cum = cumulative_weights(&sys.log_weights[last]).ok_or(Error::ZeroWeight { t: last })?;
    let mut rng = key.rng(AUX_SLOT, 0);
    let k = pick(&cum, rng.random::<f64>());
    let selected = extract_path(&sys, k)?;
    Ok((sys, selected))
}

/// One draw from the particle Gibbs kernel started at `current`.
pub fn pg_kernel_step<M: StateSpaceModel>(
    proposal: &Proposal<'_, M>,
    ys: &[M::Obs],
    current: &PathSample<M::State>,
    n: usize,
    key: StreamKey,
) -> Result<PathSample<M::State>> {
    let reference = ReferenceTrajectory::new(current.states.clone());
    let (_, out) = csmc_sweep(proposal, ys, &reference, n, key)?;
    Ok(out.with_provenance(current.chain, current.iteration + 1))
}

/// Fraction of time indices where `new` differs from `old`.
pub fn update_fraction<S: PartialEq>(old: &[S], new: &[S]) -> f64 {
    let changed = old.iter().zip(new).filter(|(a, b)| a != b).count();
    changed as f64 / old.len().max(1) as f64
}

/// Output of a particle Gibbs chain.
#[derive(Debug, Clone)]
pub struct PgChain<S> {
    /// Post-burn-in, thinned samples.
    pub samples: Vec<PathSample<S>>,
    pub diagnostics: PgDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PgDiagnostics {
    /// Update fraction of every iteration, burn-in included.
    pub update_fraction: Vec<f64>,
    /// Share of iterations that returned the reference unchanged.
    pub atom_mass: f64,
    /// Autocorrelation (lags 1..=10) of the path-mean functional over kept samples.
    pub path_mean_acf: Vec<f64>,
}

impl PgDiagnostics {
    pub fn mean_update_fraction(&self) -> f64 {
        self.update_fraction.iter().sum::<f64>() / self.update_fraction.len().max(1) as f64
    }
}

fn path_mean<S: Scalar>(p: &[S]) -> f64 {
    p.iter().map(Scalar::to_f64).sum::<f64>() / p.len().max(1) as f64
}

/// Run one chain; iteration `k` draws from `key.child(k)`.
pub fn run_pg_chain_keyed<M: StateSpaceModel>(
    proposal: &Proposal<'_, M>,
    ys: &[M::Obs],
    config: &PgChainConfig,
    init: &ReferenceTrajectory<M::State>,
    key: StreamKey,
    chain: u64,
) -> Result<PgChain<M::State>> {
    config.validate()?;
    if init.states.len() != ys.len() {
        return Err(Error::LengthMismatch {
            expected: ys.len(),
            got: init.states.len(),
        });
    }
    let mut current = PathSample::new(init.states.clone()).with_provenance(chain, 0);
    let mut samples = Vec::new();
    let mut fractions = Vec::with_capacity(config.iterations);
    let mut atoms = 0usize;
    for it in 0..config.iterations {
        let next = pg_kernel_step(proposal, ys, &current, config.n, key.child(it as u64))?;
        let f = update_fraction(&current.states, &next.states);
        if next.states == current.states {
            atoms += 1;
        }
        fractions.push(f);
        current = next;
        if it >= config.burn_in && (it - config.burn_in).is_multiple_of(config.thin) {
            samples.push(current.clone());
        }
    }
    let means: Vec<f64> = samples.iter().map(|s| path_mean(&s.states)).collect();
    Ok(PgChain {
        samples,
        diagnostics: PgDiagnostics {
            update_fraction: fractions,
            atom_mass: atoms as f64 / config.iterations as f64,
            path_mean_acf: autocorrelation(&means, 10),
        },
    })
}

/// Run a chain keyed by `config.seed`.
pub fn run_pg_chain<M: StateSpaceModel>(
    proposal: &Proposal<'_, M>,
    ys: &[M::Obs],
    config: &PgChainConfig,
    init: &ReferenceTrajectory<M::State>,
) -> Result<PgChain<M::State>> {
    run_pg_chain_keyed(proposal, ys, config, init, StreamKey::new(config.seed), 0)
}

/// Independent chains in parallel, chain `c` keyed by `StreamKey::new(seed).child(c)`.
pub fn run_pg_chains<M: StateSpaceModel>(
    proposal: &Proposal<'_, M>,
    ys: &[M::Obs],
    config: &PgChainConfig,
    inits: &[ReferenceTrajectory<M::State>],
) -> Result<Vec<PgChain<M::State>>> {
    let root = StreamKey::new(config.seed);
    inits
        .par_iter()
        .enumerate()
        .map(|(c, init)| run_pg_chain_keyed(proposal, ys, config, init, root.child(c as u64), c as u64))
        .collect()
}
