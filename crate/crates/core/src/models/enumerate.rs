//! Exact enumeration oracles for tiny finite HMMs.
//!
//! Paths `x_{0:T}` are encoded as integers `Σ_t x_t K^t`. Every random outcome of
//! a (conditional) SMC sweep is visited once, so the resulting kernels and
//! expectations are exact up to floating-point rounding.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::models::finite_hmm::FiniteHmm;
use crate::ssm::{make_proposal, ProposalKind};

/// Default cap on the number of atoms or outcomes an oracle may enumerate.
pub const DEFAULT_ENUMERATION_CAP: u128 = 1_000_000;

fn checked_pow(base: u128, exp: u32) -> Option<u128> {
    base.checked_pow(exp)
}

pub fn encode_path(path: &[usize], k: usize) -> usize {
    path.iter().rev().fold(0, |acc, &x| acc * k + x)
}

pub fn decode_path(mut code: usize, k: usize, len: usize) -> Vec<usize> {
    (0..len)
        .map(|_| {
            let x = code % k;
            code /= k;
            x
        })
        .collect()
}

/// Exact joint smoothing distribution over all `K^{T+1}` paths.
#[derive(Debug, Clone)]
pub struct JsdTable {
    pub k: usize,
    pub len: usize,
    pub probs: Vec<f64>,
    /// `Σ` of the unnormalized atoms, i.e. the likelihood `p(y_{0:T})`.
    pub evidence: f64,
}

impl JsdTable {
    pub fn prob(&self, path: &[usize]) -> f64 {
        self.probs[encode_path(path, self.k)]
    }

    /// Marginal law of coordinate `t`.
    pub fn marginal(&self, t: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.k];
        for (code, p) in self.probs.iter().enumerate() {
            out[(code / self.k.pow(t as u32)) % self.k] += p;
        }
        out
    }
}

pub fn hmm_exact_jsd(hmm: &FiniteHmm, ys: &[usize], cap: u128) -> Result<JsdTable> {
    let k = hmm.num_states();
    let len = ys.len();
    if len == 0 {
        return Err(Error::LengthMismatch { expected: 1, got: 0 });
    }
    let size = checked_pow(k as u128, len as u32).unwrap_or(u128::MAX);
    if size > cap {
        return Err(Error::CapExceeded { size, cap });
    }
    let atoms: Vec<f64> = (0..size as usize)
        .map(|code| {
            let x = decode_path(code, k, len);
            let mut p = hmm.mu(x[0]) * hmm.g(x[0], ys[0]);
            for t in 1..len {
                p *= hmm.m(x[t - 1], x[t]) * hmm.g(x[t], ys[t]);
            }
            p
        })
        .collect();
    let evidence: f64 = atoms.iter().sum();
    if !(evidence > 0.0) {
        return Err(Error::ZeroLikelihood { t: len - 1 });
    }
    Ok(JsdTable {
        k,
        len,
        probs: atoms.iter().map(|a| a / evidence).collect(),
        evidence,
    })
}

/// Dense row-major transition matrix over path atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    pub size: usize,
    pub data: Vec<f64>,
}

impl TransitionMatrix {
    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.data[from * self.size + to]
    }

    pub fn row(&self, from: usize) -> &[f64] {
        &self.data[from * self.size..(from + 1) * self.size]
    }

    /// `πᵀP`.
    pub fn left_multiply(&self, pi: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.size];
        for (i, &p) in pi.iter().enumerate() {
            for (j, v) in self.row(i).iter().enumerate() {
                out[j] += p * v;
            }
        }
        out
    }
}

/// Proposal and weight tables: `r0[x]`, `w0[x]`, and per `t ≥ 1`
/// `r[t][x·K + x']`, `w[t][x·K + x']` (natural scale).
struct Tables {
    k: usize,
    r0: Vec<f64>,
    w0: Vec<f64>,
    r: Vec<Vec<f64>>,
    w: Vec<Vec<f64>>,
}

impl Tables {
    fn new(hmm: &FiniteHmm, kind: ProposalKind, ys: &[usize]) -> Result<Self> {
        let prop = make_proposal(hmm, kind)?;
        let k = hmm.num_states();
        let r0 = (0..k).map(|x| prop.log_r0(&ys[0], &x).exp()).collect();
        let w0 = (0..k).map(|x| prop.log_w0(&ys[0], &x).exp()).collect();
        let mut r = vec![Vec::new()];
        let mut w = vec![Vec::new()];
        for y in &ys[1..] {
            r.push((0..k * k).map(|c| prop.log_r(y, &(c / k), &(c % k)).exp()).collect());
            w.push((0..k * k).map(|c| prop.log_w(y, &(c / k), &(c % k)).exp()).collect());
        }
        Ok(Tables { k, r0, w0, r, w })
    }
}

/// State of one enumeration branch at a given time.
#[derive(Clone)]
struct Level {
    states: Vec<usize>,
    weights: Vec<f64>,
    codes: Vec<usize>,
}

/// Enumerates every sweep outcome; `reference` pins slot `N-1` when present.
struct Enumerator<'a> {
    tab: &'a Tables,
    n: usize,
    len: usize,
    reference: Option<&'a [usize]>,
    k_pow: Vec<usize>,
}

impl<'a> Enumerator<'a> {
    fn free(&self) -> usize {
        if self.reference.is_some() {
            self.n - 1
        } else {
            self.n
        }
    }

    /// Visit all leaves; `leaf(prob, level_history)` receives the branch probability
    /// and the per-time levels.
    fn run<F: FnMut(f64, &[Level])>(&self, leaf: &mut F) {
        let free = self.free();
        let k = self.tab.k;
        let mut history: Vec<Level> = Vec::with_capacity(self.len);
        let mut digits = vec![0usize; free];
        loop {
            let mut prob = 1.0;
            let mut level = Level {
                states: Vec::with_capacity(self.n),
                weights: Vec::with_capacity(self.n),
                codes: Vec::with_capacity(self.n),
            };
            for &x in &digits {
                prob *= self.tab.r0[x];
                level.states.push(x);
                level.weights.push(self.tab.w0[x]);
                level.codes.push(x);
            }
            if let Some(r) = self.reference {
                level.states.push(r[0]);
                level.weights.push(self.tab.w0[r[0]]);
                level.codes.push(r[0]);
            }
            if prob > 0.0 {
                history.push(level);
                self.descend(1, prob, &mut history, leaf);
                history.pop();
            }
            if !advance(&mut digits, k) {
                break;
            }
        }
    }

    fn descend<F: FnMut(f64, &[Level])>(&self, t: usize, prob: f64, history: &mut Vec<Level>, leaf: &mut F) {
        if t == self.len {
            leaf(prob, history);
            return;
        }
        let prev = history.last().expect("t ≥ 1 has a previous level").clone();
        let total: f64 = prev.weights.iter().sum();
        if !(total > 0.0) {
            // zero-weight branch: the sweep aborts; it carries no kernel mass
            return;
        }
        let k = self.tab.k;
        let (r, w) = (&self.tab.r[t], &self.tab.w[t]);
        let free = self.free();
        // each free particle picks (ancestor, state): radix n·k
        let mut digits = vec![0usize; free];
        loop {
            let mut p = prob;
            let mut level = Level {
                states: Vec::with_capacity(self.n),
                weights: Vec::with_capacity(self.n),
                codes: Vec::with_capacity(self.n),
            };
            for &d in &digits {
                let (a, x) = (d / k, d % k);
                let xa = prev.states[a];
                p *= prev.weights[a] / total * r[xa * k + x];
                level.states.push(x);
                level.weights.push(w[xa * k + x]);
                level.codes.push(prev.codes[a] + x * self.k_pow[t]);
            }
            if let Some(refp) = self.reference {
                let last = self.n - 1;
                let xa = prev.states[last];
                level.states.push(refp[t]);
                level.weights.push(w[xa * k + refp[t]]);
                level.codes.push(prev.codes[last] + refp[t] * self.k_pow[t]);
            }
            if p > 0.0 {
                history.push(level);
                self.descend(t + 1, p, history, leaf);
                history.pop();
            }
            if !advance(&mut digits, self.n * k) {
                break;
            }
        }
    }
}

fn advance(digits: &mut [usize], radix: usize) -> bool {
    for d in digits.iter_mut() {
        *d += 1;
        if *d < radix {
            return true;
        }
        *d = 0;
    }
    false
}

fn pg_outcome_count(k: usize, n: usize, len: usize) -> u128 {
    let t = (len - 1) as u32;
    let free = (n - 1) as u32;
    checked_pow(k as u128, free * (t + 1))
        .and_then(|a| checked_pow(n as u128, free * t).and_then(|b| a.checked_mul(b)))
        .and_then(|v| v.checked_mul(n as u128))
        .unwrap_or(u128::MAX)
}

/// Exact particle Gibbs transition matrix `P_N(x', ·)` over all path atoms.
pub fn hmm_enumerate_pg(
    hmm: &FiniteHmm,
    kind: ProposalKind,
    ys: &[usize],
    n: usize,
    cap: u128,
) -> Result<TransitionMatrix> {
    if n < 2 {
        return Err(Error::InvalidN { n, reason: "conditional SMC needs N ≥ 2" });
    }
    if ys.is_empty() {
        return Err(Error::LengthMismatch { expected: 1, got: 0 });
    }
    let k = hmm.num_states();
    let len = ys.len();
    let outcomes = pg_outcome_count(k, n, len);
    if outcomes > cap {
        return Err(Error::CapExceeded { size: outcomes, cap });
    }
    let atoms = checked_pow(k as u128, len as u32).unwrap_or(u128::MAX);
    if atoms > cap {
        return Err(Error::CapExceeded { size: atoms, cap });
    }
    let atoms = atoms as usize;
    let tab = Tables::new(hmm, kind, ys)?;
    let k_pow: Vec<usize> = (0..len).map(|t| k.pow(t as u32)).collect();
    let rows: Vec<Vec<f64>> = (0..atoms)
        .into_par_iter()
        .map(|from| {
            let reference = decode_path(from, k, len);
            let en = Enumerator {
                tab: &tab,
                n,
                len,
                reference: Some(&reference),
                k_pow: k_pow.clone(),
            };
            let mut row = vec![0.0; atoms];
            en.run(&mut |prob, history| {
                let last = history.last().unwrap();
                let total: f64 = last.weights.iter().sum();
                if total > 0.0 {
                    for (w, &code) in last.weights.iter().zip(&last.codes) {
                        row[code] += prob * w / total;
                    }
                }
            });
            row
        })
        .collect();
    Ok(TransitionMatrix {
        size: atoms,
        data: rows.into_iter().flatten().collect(),
    })
}

/// Exact `E[Ẑ]` of the unconditional SMC likelihood estimator.
pub fn hmm_expected_likelihood(
    hmm: &FiniteHmm,
    kind: ProposalKind,
    ys: &[usize],
    n: usize,
    cap: u128,
) -> Result<f64> {
    if n < 1 {
        return Err(Error::InvalidN { n, reason: "SMC needs N ≥ 1" });
    }
    if ys.is_empty() {
        return Err(Error::LengthMismatch { expected: 1, got: 0 });
    }
    let k = hmm.num_states();
    let len = ys.len();
    let t = (len - 1) as u32;
    let outcomes = checked_pow(k as u128, n as u32 * (t + 1))
        .and_then(|a| checked_pow(n as u128, n as u32 * t).and_then(|b| a.checked_mul(b)))
        .unwrap_or(u128::MAX);
    if outcomes > cap {
        return Err(Error::CapExceeded { size: outcomes, cap });
    }
    let tab = Tables::new(hmm, kind, ys)?;
    let en = Enumerator {
        tab: &tab,
        n,
        len,
        reference: None,
        k_pow: (0..len).map(|t| k.pow(t as u32)).collect(),
    };
    let mut expectation = 0.0;
    en.run(&mut |prob, history| {
        let z: f64 = history
            .iter()
            .map(|lvl| lvl.weights.iter().sum::<f64>() / n as f64)
            .product();
        expectation += prob * z;
    });
    Ok(expectation)
}

/// `log p(y_{0:T})` from the JSD table; cross-checks the forward algorithm.
pub fn jsd_log_evidence(table: &JsdTable) -> f64 {
    table.evidence.ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamKey;

    fn two_state() -> FiniteHmm {
        FiniteHmm::new(
            vec![vec![0.7, 0.3], vec![0.4, 0.6]],
            vec![vec![0.8, 0.2], vec![0.3, 0.7]],
            vec![0.6, 0.4],
        )
        .unwrap()
    }

    #[test]
    fn path_codes_round_trip() {
        let p = vec![2, 0, 1, 1];
        assert_eq!(decode_path(encode_path(&p, 3), 3, 4), p);
    }

    #[test]
    fn jsd_at_t0_is_posterior() {
        let h = two_state();
        let tab = hmm_exact_jsd(&h, &[1], DEFAULT_ENUMERATION_CAP).unwrap();
        let z = 0.6 * 0.2 + 0.4 * 0.7;
        assert!((tab.probs[0] - 0.6 * 0.2 / z).abs() < 1e-15);
        assert!((tab.probs.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn jsd_marginals_match_forward_backward() {
        let h = FiniteHmm::random_positive(3, 3, &mut StreamKey::new(2).rng(0, 0));
        let ys = [0, 2, 2, 1, 0];
        let tab = hmm_exact_jsd(&h, &ys, DEFAULT_ENUMERATION_CAP).unwrap();
        let fb = h.smoothing_marginals(&ys).unwrap();
        for t in 0..ys.len() {
            let m = tab.marginal(t);
            for x in 0..3 {
                assert!((m[x] - fb[t][x]).abs() < 1e-12);
            }
        }
        assert!((jsd_log_evidence(&tab) - h.log_likelihood(&ys).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn uniform_emissions_give_markov_path_law() {
        let h = FiniteHmm::new(
            vec![vec![0.7, 0.3], vec![0.4, 0.6]],
            vec![vec![0.5, 0.5], vec![0.5, 0.5]],
            vec![0.5, 0.5],
        )
        .unwrap();
        let tab = hmm_exact_jsd(&h, &[0, 1, 1], DEFAULT_ENUMERATION_CAP).unwrap();
        for code in 0..8 {
            let x = decode_path(code, 2, 3);
            let p = 0.5 * h.m(x[0], x[1]) * h.m(x[1], x[2]);
            assert!((tab.probs[code] - p).abs() < 1e-15);
        }
    }

    #[test]
    fn jsd_cap_is_enforced() {
        let h = two_state();
        let ys = vec![0; 21];
        assert!(matches!(hmm_exact_jsd(&h, &ys, DEFAULT_ENUMERATION_CAP), Err(Error::CapExceeded { .. })));
    }

    #[test]
    fn pg_rows_sum_to_one() {
        let h = two_state();
        let p = hmm_enumerate_pg(&h, ProposalKind::Bootstrap, &[0, 1], 2, DEFAULT_ENUMERATION_CAP).unwrap();
        assert_eq!(p.size, 4);
        for i in 0..4 {
            assert!((p.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn pg_cap_and_n_validation() {
        let h = two_state();
        assert!(matches!(
            hmm_enumerate_pg(&h, ProposalKind::Bootstrap, &[0, 1], 1, DEFAULT_ENUMERATION_CAP),
            Err(Error::InvalidN { .. })
        ));
        assert!(matches!(
            hmm_enumerate_pg(&h, ProposalKind::Bootstrap, &[0, 1, 0, 1], 4, DEFAULT_ENUMERATION_CAP),
            Err(Error::CapExceeded { .. })
        ));
    }
}
