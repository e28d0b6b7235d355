//! Sequential Monte Carlo with multinomial resampling at every step.
//!
//! Particle indices are 0-based in memory; reports add one. The forward pass
//! is shared with the conditional sweep, which pins the last slot to a
//! reference trajectory.

use rand::{Rng, RngCore};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::StreamKey;
use crate::ssm::{Proposal, StateSpaceModel};
use crate::stats::{effective_sample_size, log_sum_exp};

/// Below this many particles a time step is evaluated on the calling thread.
const PAR_THRESHOLD: usize = 256;

/// Particle states, log weights and ancestor indices for every time step.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSystem<S> {
    pub n: usize,
    pub states: Vec<Vec<S>>,
    pub log_weights: Vec<Vec<f64>>,
    /// `ancestors[t][i]` for `t ≥ 1`; `ancestors[0]` is empty.
    pub ancestors: Vec<Vec<usize>>,
}

impl<S> ParticleSystem<S> {
    /// Final time index `T`.
    pub fn last_time(&self) -> usize {
        self.states.len() - 1
    }
}

#[derive(Debug, Clone)]
pub struct SmcResult<S> {
    pub system: ParticleSystem<S>,
    pub log_likelihood_estimate: f64,
    pub ess: Vec<f64>,
}

/// A trajectory with the chain and iteration that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSample<S> {
    pub states: Vec<S>,
    pub chain: u64,
    pub iteration: u64,
}

impl<S> PathSample<S> {
    pub fn new(states: Vec<S>) -> Self {
        PathSample {
            states,
            chain: 0,
            iteration: 0,
        }
    }

    pub fn with_provenance(mut self, chain: u64, iteration: u64) -> Self {
        self.chain = chain;
        self.iteration = iteration;
        self
    }
}

/// Cumulative normalized weights; `None` when every weight is zero.
pub(crate) fn cumulative_weights(log_weights: &[f64]) -> Option<Vec<f64>> {
    let lse = log_sum_exp(log_weights);
    if !lse.is_finite() {
        return None;
    }
    let mut acc = 0.0;
    Some(
        log_weights
            .iter()
            .map(|w| {
                acc += (w - lse).exp();
                acc
            })
            .collect(),
    )
}

/// Index `j` with `cum[j-1] ≤ u·total < cum[j]`, never landing on a zero-weight slot.
pub(crate) fn pick(cum: &[f64], u: f64) -> usize {
    let target = u * cum[cum.len() - 1];
    let j = cum.partition_point(|&c| c <= target);
    if j < cum.len() {
        j
    } else {
        // rounding pushed the target past the last increment
        let last = cum[cum.len() - 1];
        cum.iter().position(|&c| c == last).unwrap_or(cum.len() - 1)
    }
}

/// Draw `count` i.i.d. indices with probabilities proportional to `exp(log_weights)`.
pub fn resample_multinomial(log_weights: &[f64], count: usize, rng: &mut dyn RngCore) -> Result<Vec<usize>> {
    let cum = cumulative_weights(log_weights).ok_or(Error::ZeroWeight { t: 0 })?;
    Ok((0..count).map(|_| pick(&cum, rng.random::<f64>())).collect())
}

/// The forward pass shared by SMC and conditional SMC.
///
/// Particle `i` at time `t` draws its ancestor and its new state from the
/// stream `key.rng(t, i)`, so the output does not depend on scheduling. With a
/// reference, slot `n - 1` holds `reference[t]` and is its own ancestor.
pub(crate) fn forward_pass<M: StateSpaceModel>(
    proposal: &Proposal<'_, M>,
    ys: &[M::Obs],
    n: usize,
    key: StreamKey,
    reference: Option<&[M::State]>,
) -> Result<ParticleSystem<M::State>> {
    if ys.is_empty() {
        return Err(Error::LengthMismatch { expected: 1, got: 0 });
    }
    if let Some(r) = reference {
        if r.len() != ys.len() {
            return Err(Error::LengthMismatch {
                expected: ys.len(),
                got: r.len(),
            });
        }
    }
    let free = if reference.is_some() { n - 1 } else { n };
    let len = ys.len();
    let mut sys = ParticleSystem {
        n,
        states: Vec::with_capacity(len),
        log_weights: Vec::with_capacity(len),
        ancestors: Vec::with_capacity(len),
    };

    let init = |i: usize| {
        let mut rng = key.rng(0, i as u64);
        let x = proposal.sample_r0(&ys[0], &mut rng);
        let w = proposal.log_w0(&ys[0], &x);
        (x, w)
    };
    let mut first: Vec<(M::State, f64)> = if free >= PAR_THRESHOLD {
        (0..free).into_par_iter().map(init).collect()
    } else {
        (0..free).map(init).collect()
    };
    if let Some(r) = reference {
        first.push((r[0].clone(), proposal.log_w0(&ys[0], &r[0])));
    }
    let (xs, ws): (Vec<_>, Vec<_>) = first.into_iter().unzip();
    sys.states.push(xs);
    sys.log_weights.push(ws);
    sys.ancestors.push(Vec::new());

    for t in 1..len {
        let prev_states = &sys.states[t - 1];
        let cum = cumulative_weights(&sys.log_weights[t - 1]).ok_or(Error::ZeroWeight { t: t - 1 })?;
        let y = &ys[t];
        let step = |i: usize| {
            let mut rng = key.rng(t as u64, i as u64);
            let a = pick(&cum, rng.random::<f64>());
            let xp = &prev_states[a];
            let x = proposal.sample_r(y, xp, &mut rng);
            let w = proposal.log_w(y, xp, &x);
            (a, x, w)
        };
        let mut next: Vec<(usize, M::State, f64)> = if free >= PAR_THRESHOLD {
            (0..free).into_par_iter().map(step).collect()
        } else {
            (0..free).map(step).collect()
        };
        if let Some(r) = reference {
            next.push((n - 1, r[t].clone(), proposal.log_w(y, &r[t - 1], &r[t])));
        }
        let mut anc = Vec::with_capacity(n);
        let mut xs = Vec::with_capacity(n);
        let mut ws = Vec::with_capacity(n);
        for (a, x, w) in next {
            anc.push(a);
            xs.push(x);
            ws.push(w);
        }
        sys.states.push(xs);
        sys.log_weights.push(ws);
        sys.ancestors.push(anc);
    }
    if log_sum_exp(&sys.log_weights[len - 1]) == f64::NEG_INFINITY {
        return Err(Error::ZeroWeight { t: len - 1 });
    }
    Ok(sys)
}

/// Run the SMC sampler on `ys` with `n` particles.
pub fn run_smc<M: StateSpaceModel>(
    proposal: &Proposal<'_, M>,
    ys: &[M::Obs],
    n: usize,
    key: StreamKey,
) -> Result<SmcResult<M::State>> {
    if n < 1 {
        return Err(Error::InvalidN { n, reason: "SMC needs N ≥ 1" });
    }
    let system = forward_pass(proposal, ys, n, key, None)?;
    let ln_n = (n as f64).ln();
    let log_likelihood_estimate = system.log_weights.iter().map(|w| log_sum_exp(w) - ln_n).sum();
    let ess = system.log_weights.iter().map(|w| effective_sample_size(w)).collect();
    Ok(SmcResult {
        system,
        log_likelihood_estimate,
        ess,
    })
}

/// Trace the ancestral line of particle `i` at the final time back to `t = 0`.
pub fn extract_path<S: Clone>(system: &ParticleSystem<S>, i: usize) -> Result<PathSample<S>> {
    if i >= system.n {
        return Err(Error::IndexOutOfRange { index: i, n: system.n });
    }
    let len = system.states.len();
    let mut out = Vec::with_capacity(len);
    let mut idx = i;
    for t in (0..len).rev() {
        out.push(system.states[t][idx].clone());
        if t > 0 {
            idx = system.ancestors[t][idx];
        }
    }
    out.reverse();
    Ok(PathSample::new(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{hmm_expected_likelihood, FiniteHmm, Lgss, LgssParams, DEFAULT_ENUMERATION_CAP};
    use crate::ssm::{make_bootstrap, ProposalKind};
    use crate::stats::mean_and_se;

    fn hmm2() -> FiniteHmm {
        FiniteHmm::new(
            vec![vec![0.7, 0.3], vec![0.4, 0.6]],
            vec![vec![0.8, 0.2], vec![0.3, 0.7]],
            vec![0.6, 0.4],
        )
        .unwrap()
    }

    #[test]
    fn uniform_weights_resample_uniformly() {
        let mut rng = StreamKey::new(1).rng(0, 0);
        let idx = resample_multinomial(&[0.3, 0.3, 0.3], 100_000, &mut rng).unwrap();
        let mut counts = [0f64; 3];
        for i in idx {
            counts[i] += 1.0;
        }
        let e = 100_000.0 / 3.0;
        let chi2: f64 = counts.iter().map(|c| (c - e).powi(2) / e).sum();
        // 0.999 quantile of χ²₂
        assert!(chi2 < 13.815_510_557_964_274, "χ² = {chi2}");
    }

    #[test]
    fn degenerate_weights_pick_the_live_slot() {
        let mut rng = StreamKey::new(2).rng(0, 0);
        let idx = resample_multinomial(&[0.0, f64::NEG_INFINITY], 1000, &mut rng).unwrap();
        assert!(idx.iter().all(|&i| i == 0));
        let idx = resample_multinomial(&[f64::NEG_INFINITY, 2.0, f64::NEG_INFINITY], 1000, &mut rng).unwrap();
        assert!(idx.iter().all(|&i| i == 1));
    }

    #[test]
    fn all_zero_weights_error() {
        let mut rng = StreamKey::new(3).rng(0, 0);
        let r = resample_multinomial(&[f64::NEG_INFINITY; 4], 3, &mut rng);
        assert!(matches!(r, Err(Error::ZeroWeight { .. })));
    }

    #[test]
    fn shifting_log_weights_changes_nothing() {
        let w = [0.0, -1.0, 0.5, -3.0];
        let shifted: Vec<f64> = w.iter().map(|v| v + 100.0).collect();
        let a = resample_multinomial(&w, 5000, &mut StreamKey::new(4).rng(0, 0)).unwrap();
        let b = resample_multinomial(&shifted, 5000, &mut StreamKey::new(4).rng(0, 0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_particle_estimate_is_the_trajectory_weight() {
        let m = hmm2();
        let prop = make_bootstrap(&m);
        let ys = [0, 1, 1, 0];
        let res = run_smc(&prop, &ys, 1, StreamKey::new(5)).unwrap();
        let path = extract_path(&res.system, 0).unwrap().states;
        let expected: f64 = path.iter().zip(&ys).map(|(x, y)| m.g(*x, *y).ln()).sum();
        assert!((res.log_likelihood_estimate - expected).abs() < 1e-12);
        assert!(res.system.ancestors[1..].iter().all(|a| a == &vec![0]));
    }

    #[test]
    fn ess_is_within_bounds() {
        let m = hmm2();
        let res = run_smc(&make_bootstrap(&m), &[0, 1, 0, 0, 1], 50, StreamKey::new(6)).unwrap();
        assert!(res.ess.iter().all(|&e| (1.0..=50.0 + 1e-9).contains(&e)));
    }

    #[test]
    fn exact_expectation_of_estimate_is_the_likelihood() {
        let m = hmm2();
        let ys = [1, 0];
        for kind in [ProposalKind::Bootstrap, ProposalKind::FullyAdapted] {
            let e = hmm_expected_likelihood(&m, kind, &ys, 2, DEFAULT_ENUMERATION_CAP).unwrap();
            let z = m.log_likelihood(&ys).unwrap().exp();
            assert!((e - z).abs() < 1e-10, "{kind}: {e} vs {z}");
        }
    }

    #[test]
    fn lgss_estimate_is_unbiased_against_kalman() {
        let m = Lgss::new(LgssParams { a: 0.9, c: 1.0, q: 1.0, r: 1.0, m0: 0.0, p0: 1.0 }).unwrap();
        let (_, ys) = m.simulate(51, &mut StreamKey::new(7).rng(0, 0));
        let exact = m.kalman(&ys).unwrap().log_likelihood;
        let prop = make_bootstrap(&m);
        let root = StreamKey::new(8);
        let logz: Vec<f64> = (0..200u64)
            .into_par_iter()
            .map(|r| run_smc(&prop, &ys, 500, root.child(r)).unwrap().log_likelihood_estimate)
            .collect();
        let (mean, se) = mean_and_se(&logz);
        assert!((mean - exact).abs() < 3.0 * se, "log Ẑ mean {mean} ± {se}, exact {exact}");
        let ratios: Vec<f64> = logz.iter().map(|l| (l - exact).exp()).collect();
        let (rm, rse) = mean_and_se(&ratios);
        assert!((rm - 1.0).abs() < 3.0 * rse, "Ẑ/Z mean {rm} ± {rse}");
    }

    #[test]
    fn backward_tracing_matches_forward_bookkeeping() {
        let m = hmm2();
        for seed in 0..20 {
            let sys = run_smc(&make_bootstrap(&m), &[0, 1, 1], 3, StreamKey::new(seed)).unwrap().system;
            // eager paths of every particle, grown forward in time
            let mut eager: Vec<Vec<usize>> = sys.states[0].iter().map(|x| vec![*x]).collect();
            for t in 1..sys.states.len() {
                eager = (0..3)
                    .map(|i| {
                        let mut p = eager[sys.ancestors[t][i]].clone();
                        p.push(sys.states[t][i]);
                        p
                    })
                    .collect();
            }
            for (i, path) in eager.iter().enumerate() {
                assert_eq!(&extract_path(&sys, i).unwrap().states, path);
            }
        }
    }

    #[test]
    fn extract_path_edge_cases() {
        let m = hmm2();
        let sys = run_smc(&make_bootstrap(&m), &[1], 4, StreamKey::new(9)).unwrap().system;
        assert_eq!(extract_path(&sys, 2).unwrap().states, vec![sys.states[0][2]]);
        assert!(matches!(extract_path(&sys, 4), Err(Error::IndexOutOfRange { index: 4, n: 4 })));
        let ident = ParticleSystem {
            n: 2,
            states: vec![vec![0usize, 1], vec![1, 0], vec![1, 1]],
            log_weights: vec![vec![0.0; 2]; 3],
            ancestors: vec![vec![], vec![0, 1], vec![0, 1]],
        };
        assert_eq!(extract_path(&ident, 0).unwrap().states, vec![0, 1, 1]);
        assert_eq!(extract_path(&ident, 1).unwrap().states, vec![1, 0, 1]);
    }

    #[test]
    fn weighted_paths_estimate_smoothing_marginals() {
        let m = hmm2();
        let ys = [0, 1, 1, 0, 1];
        let exact = m.smoothing_marginals(&ys).unwrap();
        let root = StreamKey::new(10);
        let reps: Vec<Vec<f64>> = (0..30u64)
            .into_par_iter()
            .map(|r| {
                let sys = run_smc(&make_bootstrap(&m), &ys, 10_000, root.child(r)).unwrap().system;
                let w = crate::stats::normalize_log_weights(&sys.log_weights[ys.len() - 1]).unwrap();
                let mut est = vec![0.0; ys.len()];
                for (i, wi) in w.iter().enumerate() {
                    let p = extract_path(&sys, i).unwrap().states;
                    for t in 0..ys.len() {
                        if p[t] == 0 {
                            est[t] += wi;
                        }
                    }
                }
                est
            })
            .collect();
        for t in 0..ys.len() {
            let col: Vec<f64> = reps.iter().map(|r| r[t]).collect();
            let (mean, se) = mean_and_se(&col);
            assert!((mean - exact[t][0]).abs() < 3.0 * se.max(1e-4), "t={t}: {mean} ± {se} vs {}", exact[t][0]);
        }
    }

    #[test]
    fn output_does_not_depend_on_thread_count() {
        let m = Lgss::new(LgssParams { a: 0.9, c: 1.0, q: 1.0, r: 1.0, m0: 0.0, p0: 1.0 }).unwrap();
        let (_, ys) = m.simulate(10, &mut StreamKey::new(11).rng(0, 0));
        let prop = make_bootstrap(&m);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| run_smc(&prop, &ys, 1000, StreamKey::new(12)).unwrap())
        };
        let (a, b) = (run(1), run(4));
        assert_eq!(a.system, b.system);
        assert_eq!(a.log_likelihood_estimate.to_bits(), b.log_likelihood_estimate.to_bits());
    }
}
