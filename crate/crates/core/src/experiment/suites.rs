//! Experiment suites. Each suite evaluates named assertions and emits CSV series
//! whose bodies depend only on the seed, never on the thread count.

use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::report::{Assertion, Comparison, SuiteOutput};
use crate::error::{Error, Result};
use crate::minorization::{
    epsilon, epsilon_lower_bound, estimate_moments, exact_b_tT, floor_table, scaling_experiment, MomentOptions, NRule,
    ScalingConfig,
};
use crate::models::{
    hmm_enumerate_pg, hmm_exact_jsd, hmm_expected_likelihood, sv_d1, sv_weight_bounds, AdditiveNoiseModel,
    AdditiveNoiseParams, Drift, FiniteHmm, FiniteHmmParams, Lgss, LgssParams, StochVolModel, SvParams,
    DEFAULT_ENUMERATION_CAP,
};
use crate::rng::StreamKey;
use crate::smc::{run_smc, PathSample};
use crate::csmc::pg_kernel_step;
use crate::ssm::{make_proposal, ProposalKind, StateSpaceModel};
use crate::stats::{holm_reject, kendall_tau, ks_two_sample, mean_and_se};

pub mod anchors {
    pub const PG_INVARIANCE: &str = "pg-invariance";
    pub const MINORIZATION: &str = "minorization-bound";
    pub const EPSILON_LIMIT: &str = "epsilon-large-n-limit";
    pub const STRONG_MIXING: &str = "strong-mixing-floor";
    pub const SMC_UNBIASED: &str = "smc-unbiasedness";
    pub const MOMENTS_ADDITIVE: &str = "moments-additive-noise";
    pub const MOMENTS_SV: &str = "moments-stochastic-volatility";
    pub const SV_CONSTANTS: &str = "sv-weight-constants";
    pub const SCALING: &str = "particle-scaling-tightness";
}

/// Wall-clock limit checked between units of work.
#[derive(Debug, Clone, Copy)]
pub struct Deadline(Option<Instant>);

impl Deadline {
    pub fn unlimited() -> Self {
        Deadline(None)
    }

    pub fn after(secs: Option<f64>) -> Self {
        Deadline(secs.map(|s| Instant::now() + Duration::from_secs_f64(s.max(0.0))))
    }

    pub fn expired(&self) -> bool {
        self.0.is_some_and(|d| Instant::now() >= d)
    }
}

fn both_proposals() -> Vec<ProposalKind> {
    vec![ProposalKind::Bootstrap, ProposalKind::FullyAdapted]
}

fn hmm_pair() -> FiniteHmmParams {
    FiniteHmmParams {
        transition: vec![vec![0.7, 0.3], vec![0.4, 0.6]],
        emission: vec![vec![0.8, 0.2], vec![0.3, 0.7]],
        initial: vec![0.6, 0.4],
    }
}

// ---------------------------------------------------------------- invariance

/// Grid of randomized finite HMMs on which the PG kernel is enumerated exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnumerationGrid {
    pub states: Vec<usize>,
    pub symbols: usize,
    pub particles: Vec<usize>,
    pub horizons: Vec<usize>,
    pub proposals: Vec<ProposalKind>,
    /// Random parameter draws per state count.
    pub instances: usize,
}

impl EnumerationGrid {
    /// `K ∈ {2,3}`, `N ∈ {2,3}`, `T ∈ {0,1,2}`, both proposals, 10 draws.
    pub fn tiny() -> Self {
        EnumerationGrid {
            states: vec![2, 3],
            symbols: 2,
            particles: vec![2, 3],
            horizons: vec![0, 1, 2],
            proposals: both_proposals(),
            instances: 10,
        }
    }

    /// A few seconds' worth; for quick CLI checks.
    pub fn smoke() -> Self {
        EnumerationGrid {
            states: vec![2],
            symbols: 2,
            particles: vec![2, 3],
            horizons: vec![0, 1],
            proposals: both_proposals(),
            instances: 2,
        }
    }

    pub fn named(name: &str) -> Result<Self> {
        match name {
            "tiny" => Ok(Self::tiny()),
            "smoke" => Ok(Self::smoke()),
            other => Err(Error::Config(format!("unknown grid '{other}' (expected tiny or smoke)"))),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.states.is_empty() || self.particles.is_empty() || self.horizons.is_empty() || self.proposals.is_empty() {
            return Err(Error::Config("enumeration grid has an empty axis".into()));
        }
        if self.instances == 0 || self.symbols == 0 {
            return Err(Error::Config("enumeration grid needs at least one instance and one symbol".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct EnumerationRow {
    states: usize,
    instance: usize,
    horizon: usize,
    particles: usize,
    proposal: ProposalKind,
    invariance_error: f64,
    minorization_slack: f64,
    epsilon: f64,
}

/// One-step statistical invariance check on a linear-Gaussian model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LgssInvarianceCheck {
    pub params: LgssParams,
    pub horizon: usize,
    pub particles: usize,
    pub chains: usize,
    pub level: f64,
    pub proposal: ProposalKind,
}

impl Default for LgssInvarianceCheck {
    fn default() -> Self {
        LgssInvarianceCheck {
            params: LgssParams { a: 0.8, c: 1.0, q: 0.5, r: 0.8, m0: 0.0, p0: 1.0 },
            horizon: 20,
            particles: 10,
            chains: 500,
            level: 0.01,
            proposal: ProposalKind::Bootstrap,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct KsRow {
    t: usize,
    statistic: f64,
    p_value: f64,
    rejected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvarianceSuite {
    /// Omit to run only the statistical check.
    pub grid: Option<EnumerationGrid>,
    /// Omit to run only the exact enumeration checks.
    pub lgss: Option<LgssInvarianceCheck>,
    pub tolerance: f64,
}

impl Default for InvarianceSuite {
    fn default() -> Self {
        InvarianceSuite {
            grid: Some(EnumerationGrid::tiny()),
            lgss: Some(LgssInvarianceCheck::default()),
            tolerance: 1e-10,
        }
    }
}

impl InvarianceSuite {
    pub fn run(&self, seed: u64, deadline: Deadline) -> Result<SuiteOutput> {
        let mut out = SuiteOutput::default();
        self.run_into(&mut out, seed, deadline)?;
        Ok(out)
    }

    /// Like [`run`](Self::run) but leaves partial results in `out` on error.
    pub fn run_into(&self, out: &mut SuiteOutput, seed: u64, deadline: Deadline) -> Result<()> {
        if let Some(grid) = &self.grid {
            self.enumeration(grid, out, seed, deadline)?;
        }
        if let Some(check) = &self.lgss {
            if deadline.expired() {
                out.truncated = true;
                return Ok(());
            }
            let (a, ks) = lgss_invariance(check, seed)?;
            out.push(a);
            out.add_series("lgss_ks", &ks)?;
        }
        Ok(())
    }

    fn enumeration(&self, grid: &EnumerationGrid, out: &mut SuiteOutput, seed: u64, deadline: Deadline) -> Result<()> {
        grid.validate()?;
        let root = StreamKey::new(seed);
        let mut rows = Vec::new();
        for &k in &grid.states {
            if deadline.expired() {
                out.truncated = true;
                break;
            }
            rows.extend(enumeration_rows(grid, k, root)?);
        }
        // an empty (fully truncated) grid must not pass vacuously
        let (max_err, min_slack) = if rows.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            (
                rows.iter().map(|r| r.invariance_error).fold(0.0, f64::max),
                rows.iter().map(|r| r.minorization_slack).fold(f64::INFINITY, f64::min),
            )
        };
        out.push(
            Assertion::new("pg-kernel-preserves-jsd", anchors::PG_INVARIANCE, max_err, Comparison::Below, self.tolerance, seed)
                .with_note(format!("{} enumerated kernels", rows.len())),
        );
        out.push(Assertion::new(
            "exact-minorization-holds",
            anchors::MINORIZATION,
            min_slack,
            Comparison::AtLeast,
            -self.tolerance,
            seed,
        ));
        out.add_series("enumeration", &rows)
    }
}

fn enumeration_rows(grid: &EnumerationGrid, k: usize, root: StreamKey) -> Result<Vec<EnumerationRow>> {
    let mut jobs = Vec::new();
    for inst in 0..grid.instances {
        for &t in &grid.horizons {
            for &n in &grid.particles {
                for &p in &grid.proposals {
                    jobs.push((inst, t, n, p));
                }
            }
        }
    }
    jobs.into_par_iter()
        .map(|(inst, t, n, kind)| {
            let key = root.child(k as u64).child(inst as u64);
            let hmm = FiniteHmm::random_positive(k, grid.symbols, &mut key.rng(0, 0));
            let (_, ys) = hmm.simulate(t + 1, &mut key.rng(1, t as u64));
            let pi = hmm_exact_jsd(&hmm, &ys, DEFAULT_ENUMERATION_CAP)?.probs;
            let p = hmm_enumerate_pg(&hmm, kind, &ys, n, DEFAULT_ENUMERATION_CAP)?;
            let moved = p.left_multiply(&pi);
            let invariance_error = moved.iter().zip(&pi).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let eps = epsilon(&exact_b_tT(&hmm, kind, &ys)?, n)?;
            let mut slack = f64::INFINITY;
            for from in 0..p.size {
                for (to, &q) in p.row(from).iter().enumerate() {
                    slack = slack.min(q - eps * pi[to]);
                }
            }
            Ok(EnumerationRow {
                states: k,
                instance: inst,
                horizon: t,
                particles: n,
                proposal: kind,
                invariance_error,
                minorization_slack: slack,
                epsilon: eps,
            })
        })
        .collect()
}

/// Chains start at exact FFBS draws and take one PG step; each time marginal of
/// the output is compared with an independent set of FFBS draws.
fn lgss_invariance(check: &LgssInvarianceCheck, seed: u64) -> Result<(Assertion, Vec<KsRow>)> {
    if check.chains < 2 {
        return Err(Error::Config("statistical invariance needs at least two chains".into()));
    }
    let model = Lgss::new(check.params)?;
    let prop = make_proposal(&model, check.proposal)?;
    let root = StreamKey::new(seed).child(u64::MAX);
    let (_, ys) = model.simulate(check.horizon + 1, &mut root.rng(0, 0));
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..check.chains as u64)
        .into_par_iter()
        .map(|c| {
            let start = model.ffbs_sample(&ys, &mut root.child(1).child(c).rng(0, 0))?;
            let moved = pg_kernel_step(&prop, &ys, &PathSample::new(start), check.particles, root.child(1).child(c).child(1))?;
            let fresh = model.ffbs_sample(&ys, &mut root.child(2).child(c).rng(0, 0))?;
            Ok((moved.states, fresh))
        })
        .collect::<Result<_>>()?;
    let tests: Vec<_> = (0..ys.len())
        .map(|t| {
            let a: Vec<f64> = pairs.iter().map(|p| p.0[t]).collect();
            let b: Vec<f64> = pairs.iter().map(|p| p.1[t]).collect();
            ks_two_sample(&a, &b)
        })
        .collect::<Result<_>>()?;
    let p: Vec<f64> = tests.iter().map(|r| r.p_value).collect();
    let rejected = holm_reject(&p, check.level);
    let rows: Vec<KsRow> = tests
        .iter()
        .enumerate()
        .map(|(t, r)| KsRow {
            t,
            statistic: r.statistic,
            p_value: r.p_value,
            rejected: rejected[t],
        })
        .collect();
    // Holm rejects nothing iff the smallest p-value times the number of tests exceeds the level
    let min_p = p.iter().copied().fold(1.0, f64::min);
    let adjusted = (min_p * p.len() as f64).min(1.0);
    let a = Assertion::new(
        "pg-step-keeps-lgss-marginals",
        anchors::PG_INVARIANCE,
        adjusted,
        Comparison::Above,
        check.level,
        seed,
    )
    .with_note(format!("Holm-adjusted smallest KS p-value over {} marginals", p.len()));
    Ok((a, rows))
}

// ---------------------------------------------------------------- minorize

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinorizeSuite {
    /// Strongly mixing model for the floor comparison.
    pub hmm: FiniteHmmParams,
    pub proposals: Vec<ProposalKind>,
    pub lambdas: Vec<f64>,
    pub horizons: Vec<usize>,
    pub tolerance: f64,
    /// Fixed instance and observations for the large-`N` behaviour of `ε`.
    pub limit_hmm: FiniteHmmParams,
    pub limit_obs: Vec<usize>,
    pub limit_particles: Vec<usize>,
}

impl Default for MinorizeSuite {
    fn default() -> Self {
        MinorizeSuite {
            hmm: FiniteHmmParams {
                transition: vec![vec![0.4, 0.3, 0.3], vec![0.3, 0.4, 0.3], vec![0.3, 0.3, 0.4]],
                emission: vec![vec![0.5, 0.3, 0.2], vec![0.3, 0.4, 0.3], vec![0.2, 0.3, 0.5]],
                initial: vec![0.2, 0.5, 0.3],
            },
            proposals: both_proposals(),
            lambdas: vec![0.5, 1.0, 2.0],
            horizons: vec![10, 25, 50, 100, 200],
            tolerance: 1e-9,
            limit_hmm: hmm_pair(),
            limit_obs: vec![0, 1, 1],
            limit_particles: vec![2, 5, 10, 100, 10_000, 1_000_000],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct LimitRow {
    n: usize,
    epsilon: f64,
    one_minus_epsilon: f64,
    rate_bound: f64,
}

impl MinorizeSuite {
    pub fn run(&self, seed: u64, deadline: Deadline) -> Result<SuiteOutput> {
        let mut out = SuiteOutput::default();
        self.run_into(&mut out, seed, deadline)?;
        Ok(out)
    }

    pub fn run_into(&self, out: &mut SuiteOutput, seed: u64, deadline: Deadline) -> Result<()> {
        if self.horizons.is_empty() || self.lambdas.is_empty() || self.limit_particles.is_empty() {
            return Err(Error::Config("minorize suite needs non-empty T, λ and N grids".into()));
        }
        if self.lambdas.iter().any(|&l| !(l > 0.0)) {
            return Err(Error::Config("every λ must be positive".into()));
        }
        self.limit(out, seed)?;
        let hmm = FiniteHmm::from_params(&self.hmm)?;
        let (sigma_minus, _) = hmm.strong_mixing_constants();
        if !(sigma_minus > 0.0) {
            return Err(Error::InvalidParams("floor comparison needs a transition matrix with positive entries".into()));
        }
        let key = StreamKey::new(seed);
        let mut all = Vec::new();
        for &kind in &self.proposals {
            if deadline.expired() {
                out.truncated = true;
                break;
            }
            let rows = floor_table(&hmm, kind, &self.lambdas, &self.horizons, key, self.tolerance)?;
            let worst = rows.iter().map(|r| r.epsilon - r.floor).fold(f64::INFINITY, f64::min);
            let mut a = Assertion::new(
                &format!("exact-epsilon-above-floor-{kind}"),
                anchors::STRONG_MIXING,
                worst,
                Comparison::AtLeast,
                -self.tolerance,
                seed,
            );
            let dips: Vec<String> = rows
                .iter()
                .filter(|r| !r.passed)
                .map(|r| format!("T={} λ={}", r.t, r.lambda))
                .collect();
            if !dips.is_empty() {
                a = a.with_note(format!("finite-T dips below the floor at {}", dips.join(", ")));
            }
            out.push(a);
            all.extend(rows);
        }
        out.add_series("floors", &all)?;
        Ok(())
    }

    fn limit(&self, out: &mut SuiteOutput, seed: u64) -> Result<()> {
        let hmm = FiniteHmm::from_params(&self.limit_hmm)?;
        let b = exact_b_tT(&hmm, ProposalKind::Bootstrap, &self.limit_obs)?;
        let excess: f64 = b.iter().map(|v| 2.0 * v - 1.0).sum();
        let rows: Vec<LimitRow> = self
            .limit_particles
            .iter()
            .map(|&n| {
                let e = epsilon(&b, n)?;
                Ok(LimitRow {
                    n,
                    epsilon: e,
                    one_minus_epsilon: -(e.ln()).exp_m1(),
                    rate_bound: excess / (n - 1) as f64,
                })
            })
            .collect::<Result<_>>()?;
        let worst_drop = rows.windows(2).map(|w| w[0].epsilon - w[1].epsilon).fold(0.0, f64::max);
        out.push(Assertion::new(
            "epsilon-non-decreasing-in-n",
            anchors::EPSILON_LIMIT,
            worst_drop,
            Comparison::AtMost,
            0.0,
            seed,
        ));
        let last = rows.last().expect("non-empty N grid");
        out.push(
            Assertion::new(
                "epsilon-deficit-within-rate",
                anchors::EPSILON_LIMIT,
                last.one_minus_epsilon - last.rate_bound,
                Comparison::AtMost,
                self.tolerance,
                seed,
            )
            .with_note(format!(
                "N = {}, 1 - ε = {:e}, lower bound on ε = {:e}",
                last.n,
                last.one_minus_epsilon,
                epsilon_lower_bound(&b, last.n)
            )),
        );
        out.add_series("epsilon_limit", &rows)
    }
}

// ---------------------------------------------------------------- smc-check

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmcCheckSuite {
    pub hmm: FiniteHmmParams,
    pub obs: Vec<usize>,
    pub particles: usize,
    pub proposals: Vec<ProposalKind>,
    pub tolerance: f64,
    /// Replicated unbiasedness check against the Kalman likelihood; skipped when `lgss_reps` is 0.
    pub lgss: LgssParams,
    pub lgss_horizon: usize,
    pub lgss_particles: usize,
    pub lgss_reps: usize,
    /// Largest accepted `|mean(Ẑ/Z) - 1| / se`.
    pub z_limit: f64,
}

impl Default for SmcCheckSuite {
    fn default() -> Self {
        SmcCheckSuite {
            hmm: hmm_pair(),
            obs: vec![0, 1],
            particles: 2,
            proposals: both_proposals(),
            tolerance: 1e-10,
            lgss: LgssParams { a: 0.9, c: 1.0, q: 0.5, r: 1.0, m0: 0.0, p0: 1.0 },
            lgss_horizon: 20,
            lgss_particles: 100,
            lgss_reps: 200,
            z_limit: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct ExactRow {
    proposal: ProposalKind,
    particles: usize,
    expected_estimate: f64,
    likelihood: f64,
    abs_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct ReplicateRow {
    rep: usize,
    log_likelihood_estimate: f64,
    ratio: f64,
}

impl SmcCheckSuite {
    pub fn run(&self, seed: u64, deadline: Deadline) -> Result<SuiteOutput> {
        let mut out = SuiteOutput::default();
        self.run_into(&mut out, seed, deadline)?;
        Ok(out)
    }

    pub fn run_into(&self, out: &mut SuiteOutput, seed: u64, deadline: Deadline) -> Result<()> {
        let hmm = FiniteHmm::from_params(&self.hmm)?;
        let z = hmm.log_likelihood(&self.obs)?.exp();
        let mut rows = Vec::new();
        for &kind in &self.proposals {
            let e = hmm_expected_likelihood(&hmm, kind, &self.obs, self.particles, DEFAULT_ENUMERATION_CAP)?;
            out.push(Assertion::new(
                &format!("expected-estimate-equals-likelihood-{kind}"),
                anchors::SMC_UNBIASED,
                (e - z).abs(),
                Comparison::Below,
                self.tolerance,
                seed,
            ));
            rows.push(ExactRow {
                proposal: kind,
                particles: self.particles,
                expected_estimate: e,
                likelihood: z,
                abs_error: (e - z).abs(),
            });
        }
        out.add_series("smc_exact", &rows)?;
        if self.lgss_reps == 0 {
            return Ok(());
        }
        if deadline.expired() {
            out.truncated = true;
            return Ok(());
        }
        if self.lgss_reps < 2 {
            return Err(Error::Config("replicated check needs at least two replicates".into()));
        }
        let model = Lgss::new(self.lgss)?;
        let key = StreamKey::new(seed);
        let (_, ys) = model.simulate(self.lgss_horizon + 1, &mut key.rng(0, 0));
        let log_z = model.kalman(&ys)?.log_likelihood;
        let prop = make_proposal(&model, ProposalKind::Bootstrap)?;
        let reps: Vec<ReplicateRow> = (0..self.lgss_reps)
            .map(|r| {
                let est = run_smc(&prop, &ys, self.lgss_particles, key.child(r as u64 + 1))?.log_likelihood_estimate;
                Ok(ReplicateRow {
                    rep: r,
                    log_likelihood_estimate: est,
                    ratio: (est - log_z).exp(),
                })
            })
            .collect::<Result<_>>()?;
        let ratios: Vec<f64> = reps.iter().map(|r| r.ratio).collect();
        let (m, se) = mean_and_se(&ratios);
        out.push(
            Assertion::new(
                "bootstrap-estimate-unbiased-lgss",
                anchors::SMC_UNBIASED,
                (m - 1.0).abs() / se,
                Comparison::Below,
                self.z_limit,
                seed,
            )
            .with_note(format!("mean Ẑ/Z = {m:.4} ± {se:.4}")),
        );
        out.add_series("smc_lgss", &reps)
    }
}

// ---------------------------------------------------------------- moments

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentsSuite {
    pub sv: SvParams,
    pub additive: AdditiveNoiseParams,
    pub run_sv: bool,
    pub run_additive: bool,
    /// Time index of the window start.
    pub t: usize,
    pub samples: usize,
    pub n_inner: usize,
    pub stable_alpha: f64,
    pub divergent_alpha: f64,
    /// Largest accepted relative change over the last doubling.
    pub stabilization_tol: f64,
    /// Smallest growth of the running mean between `n/10` and `n` that counts as divergence.
    pub divergence_factor: f64,
}

impl Default for MomentsSuite {
    fn default() -> Self {
        MomentsSuite {
            sv: SvParams { phi: 0.95, sigma: 0.3, beta: 0.7, m0: None, p0: None },
            additive: AdditiveNoiseParams {
                drift: Drift::Saturating { a: 0.5, c: 1.0 },
                phi: 1.0,
                sigma_u: 1.0,
                sigma_w: 1.0,
                m0: 0.0,
                p0: 1.0,
            },
            run_sv: true,
            run_additive: true,
            t: 1,
            samples: 100_000,
            n_inner: 1000,
            stable_alpha: 0.5,
            divergent_alpha: 1.0,
            stabilization_tol: 0.05,
            divergence_factor: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct RunningMeanRow {
    model: &'static str,
    ell: usize,
    alpha: f64,
    samples: usize,
    running_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct MomentRow {
    model: &'static str,
    ell: usize,
    alpha: f64,
    b_moment: Option<f64>,
    b_se: Option<f64>,
    c_moment: Option<f64>,
    c_se: Option<f64>,
    relative_change_last_doubling: f64,
    growth_ratio_tenfold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct ConstantRow {
    name: &'static str,
    value: f64,
    reference: f64,
}

/// Reference values of the SV weight constants.
pub const SV_D2_REFERENCE: f64 = 0.2419707;
pub const SV_D1_REFERENCE: f64 = 1.0;

impl MomentsSuite {
    pub fn run(&self, seed: u64, deadline: Deadline) -> Result<SuiteOutput> {
        let mut out = SuiteOutput::default();
        self.run_into(&mut out, seed, deadline)?;
        Ok(out)
    }

    pub fn run_into(&self, out: &mut SuiteOutput, seed: u64, deadline: Deadline) -> Result<()> {
        let bounds = sv_weight_bounds(self.sv.beta)?;
        let constants = [
            ConstantRow { name: "d2", value: bounds.d2, reference: SV_D2_REFERENCE },
            ConstantRow { name: "d1", value: sv_d1(), reference: SV_D1_REFERENCE },
        ];
        for c in &constants {
            out.push(Assertion::new(
                &format!("sv-constant-{}", c.name),
                anchors::SV_CONSTANTS,
                (c.value - c.reference).abs(),
                Comparison::AtMost,
                1e-6,
                seed,
            ));
        }
        out.add_series("sv_constants", &constants)?;

        let sv = StochVolModel::new(self.sv)?;
        let additive = AdditiveNoiseModel::new(self.additive)?;
        let key = StreamKey::new(seed);
        let mut running = Vec::new();
        let mut summary = Vec::new();
        let runs: [(&'static str, usize, f64, bool); 4] = [
            ("sv", 0, self.stable_alpha, true),
            ("sv", 0, self.divergent_alpha, false),
            ("additive-noise", 0, self.stable_alpha, true),
            ("additive-noise", 1, self.stable_alpha, true),
        ];
        for (model, ell, alpha, expect_stable) in runs {
            if !(if model == "sv" { self.run_sv } else { self.run_additive }) {
                continue;
            }
            if deadline.expired() {
                out.truncated = true;
                break;
            }
            let opts = MomentOptions {
                t: self.t,
                ell,
                alpha,
                samples: self.samples,
                n_inner: self.n_inner,
            };
            // same outer draws for both exponents of a model
            let k = key.child(if model == "sv" { 0 } else { 1 });
            let est = if model == "sv" {
                estimate_moments(&sv, ProposalKind::Bootstrap, &opts, k)?
            } else {
                estimate_moments(&additive, ProposalKind::Bootstrap, &opts, k)?
            };
            let anchor = if model == "sv" { anchors::MOMENTS_SV } else { anchors::MOMENTS_ADDITIVE };
            let a = if expect_stable {
                Assertion::new(
                    &format!("{model}-moment-stabilizes-alpha-{alpha}-ell-{ell}"),
                    anchor,
                    est.relative_change_last_doubling,
                    Comparison::Below,
                    self.stabilization_tol,
                    seed,
                )
            } else {
                Assertion::new(
                    &format!("{model}-moment-diverges-alpha-{alpha}-ell-{ell}"),
                    anchor,
                    est.growth_ratio_tenfold,
                    Comparison::Above,
                    self.divergence_factor,
                    seed,
                )
                .with_note(format!("running mean at {} over running mean at {}", est.samples, est.samples / 10))
            };
            out.push(a);
            running.extend(est.running_means.iter().map(|&(n, m)| RunningMeanRow {
                model,
                ell,
                alpha,
                samples: n,
                running_mean: m,
            }));
            summary.push(MomentRow {
                model,
                ell,
                alpha,
                b_moment: est.b_moment,
                b_se: est.b_se,
                c_moment: est.c_moment,
                c_se: est.c_se,
                relative_change_last_doubling: est.relative_change_last_doubling,
                growth_ratio_tenfold: est.growth_ratio_tenfold,
            });
        }
        out.add_series("moments", &summary)?;
        out.add_series("moment_running_means", &running)
    }
}

// ---------------------------------------------------------------- scaling

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingSuite {
    pub sv: SvParams,
    pub config: ScalingConfig,
}

impl ScalingSuite {
    pub fn with_seed(seed: u64) -> Self {
        ScalingSuite {
            sv: SvParams { phi: 0.95, sigma: 0.3, beta: 0.7, m0: None, p0: None },
            config: ScalingConfig {
                rule: NRule::Power { gamma: 0.4 },
                alpha: Some(0.5),
                ts: vec![25, 50, 100],
                chains: 100,
                iterations: 1,
                n_cap: 10_000,
                work_budget: None,
                proposal: ProposalKind::Bootstrap,
                seed,
            },
        }
    }
}

impl Default for ScalingSuite {
    fn default() -> Self {
        Self::with_seed(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct ChainRow {
    t: usize,
    chain: usize,
    update_fraction: f64,
}

/// Runs horizons one at a time so that a wall-clock budget can cut the sweep
/// short; each horizon's streams depend only on `(seed, T)`.
pub fn run_scaling<M: StateSpaceModel>(
    model: &M,
    config: &ScalingConfig,
    out: &mut SuiteOutput,
    deadline: Deadline,
) -> Result<()> {
    config.validate()?;
    if let Some(budget) = config.work_budget {
        let work = config.work();
        if work > budget {
            return Err(Error::BudgetExceeded(format!("sweep needs {work:.3e} particle moves, budget {budget:.3e}")));
        }
    }
    let mut rows = Vec::new();
    let mut chains = Vec::new();
    for &t in &config.ts {
        if deadline.expired() {
            out.truncated = true;
            break;
        }
        let one = ScalingConfig { ts: vec![t], work_budget: None, ..config.clone() };
        let r = scaling_experiment(model, &one, None)?;
        rows.extend(r.rows);
        chains.extend(r.per_chain.into_iter().map(|(t, chain, update_fraction)| ChainRow { t, chain, update_fraction }));
    }
    let tx: Vec<f64> = chains.iter().map(|c| c.t as f64).collect();
    let ux: Vec<f64> = chains.iter().map(|c| c.update_fraction).collect();
    let tau = if rows.len() >= 2 { kendall_tau(&tx, &ux) } else { f64::NAN };
    let min_step = rows
        .windows(2)
        .map(|w| w[1].update_fraction_median - w[0].update_fraction_median)
        .fold(f64::INFINITY, f64::min);
    let medians: Vec<String> = rows
        .iter()
        .map(|r| format!("T={} N={}{}: {:.4}", r.t, r.n, if r.capped { " (capped)" } else { "" }, r.update_fraction_median))
        .collect();
    out.push(
        Assertion::new(
            "median-update-fraction-non-decreasing",
            anchors::SCALING,
            if rows.len() >= 2 { min_step } else { f64::NAN },
            Comparison::AtLeast,
            0.0,
            config.seed,
        )
        .with_note(medians.join("; ")),
    );
    out.push(Assertion::new(
        "update-fraction-kendall-tau-non-negative",
        anchors::SCALING,
        tau,
        Comparison::AtLeast,
        0.0,
        config.seed,
    ));
    out.add_series("scaling", &rows)?;
    out.add_series("scaling_chains", &chains)
}

impl ScalingSuite {
    pub fn run(&self, deadline: Deadline) -> Result<SuiteOutput> {
        let mut out = SuiteOutput::default();
        self.run_into(&mut out, deadline)?;
        Ok(out)
    }

    pub fn run_into(&self, out: &mut SuiteOutput, deadline: Deadline) -> Result<()> {
        let model = StochVolModel::new(self.sv)?;
        run_scaling(&model, &self.config, out, deadline)
    }
}
