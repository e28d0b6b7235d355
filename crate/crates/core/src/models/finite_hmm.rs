//! Finite hidden Markov models with exact forward/backward quantities.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ssm::{Adaptation, SpaceKind, StateSpaceModel};

const STOCHASTIC_TOL: f64 = 1e-12;

/// Parameters of a finite HMM as they appear in model files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteHmmParams {
    pub transition: Vec<Vec<f64>>,
    pub emission: Vec<Vec<f64>>,
    pub initial: Vec<f64>,
}

/// A finite HMM: `K` hidden states, `L` observation symbols.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteHmm {
    k: usize,
    l: usize,
    transition: Vec<f64>,
    emission: Vec<f64>,
    initial: Vec<f64>,
    log_transition: Vec<f64>,
    log_emission: Vec<f64>,
    log_initial: Vec<f64>,
}

/// Scaled forward pass: filtering distributions and log normalizers.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// `filter[t][x] = P(X_t = x | y_{0:t})`.
    pub filter: Vec<Vec<f64>>,
    /// `log_increments[t] = log p(y_t | y_{0:t-1})`.
    pub log_increments: Vec<f64>,
}

impl ForwardPass {
    /// `log p(y_{0:t})` for every prefix.
    pub fn log_prefix_likelihoods(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.log_increments
            .iter()
            .map(|v| {
                acc += v;
                acc
            })
            .collect()
    }

    pub fn log_likelihood(&self) -> f64 {
        self.log_increments.iter().sum()
    }

    /// `log p(y_{s:t} | y_{0:s-1})`, with the empty conditioning for `s = 0`.
    pub fn log_conditional(&self, s: usize, t: usize) -> f64 {
        self.log_increments[s..=t].iter().sum()
    }
}

fn check_distribution(row: &[f64], what: &str) -> Result<()> {
    if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::InvalidParams(format!("{what} has a negative or non-finite entry")));
    }
    let s: f64 = row.iter().sum();
    if (s - 1.0).abs() > STOCHASTIC_TOL {
        return Err(Error::InvalidParams(format!("{what} sums to {s}, not 1")));
    }
    Ok(())
}

fn ln(p: f64) -> f64 {
    if p > 0.0 {
        p.ln()
    } else {
        f64::NEG_INFINITY
    }
}

fn sample_categorical(probs: &[f64], rng: &mut dyn RngCore) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(probs.len() - 1)
}

impl FiniteHmm {
    pub fn new(transition: Vec<Vec<f64>>, emission: Vec<Vec<f64>>, initial: Vec<f64>) -> Result<Self> {
        let k = initial.len();
        if k == 0 {
            return Err(Error::InvalidParams("empty state space".into()));
        }
        if transition.len() != k || emission.len() != k {
            return Err(Error::InvalidParams("transition/emission row count must equal K".into()));
        }
        let l = emission[0].len();
        if l == 0 {
            return Err(Error::InvalidParams("empty observation alphabet".into()));
        }
        check_distribution(&initial, "initial distribution")?;
        for (x, row) in transition.iter().enumerate() {
            if row.len() != k {
                return Err(Error::InvalidParams(format!("transition row {x} has wrong length")));
            }
            check_distribution(row, &format!("transition row {x}"))?;
        }
        for (x, row) in emission.iter().enumerate() {
            if row.len() != l {
                return Err(Error::InvalidParams(format!("emission row {x} has wrong length")));
            }
            check_distribution(row, &format!("emission row {x}"))?;
        }
        let transition: Vec<f64> = transition.into_iter().flatten().collect();
        let emission: Vec<f64> = emission.into_iter().flatten().collect();
        Ok(FiniteHmm {
            k,
            l,
            log_transition: transition.iter().map(|&p| ln(p)).collect(),
            log_emission: emission.iter().map(|&p| ln(p)).collect(),
            log_initial: initial.iter().map(|&p| ln(p)).collect(),
            transition,
            emission,
            initial,
        })
    }

    pub fn from_params(p: &FiniteHmmParams) -> Result<Self> {
        Self::new(p.transition.clone(), p.emission.clone(), p.initial.clone())
    }

    pub fn params(&self) -> FiniteHmmParams {
        FiniteHmmParams {
            transition: self.transition.chunks(self.k).map(|r| r.to_vec()).collect(),
            emission: self.emission.chunks(self.l).map(|r| r.to_vec()).collect(),
            initial: self.initial.clone(),
        }
    }

    /// Random HMM with every entry bounded away from zero.
    pub fn random_positive(k: usize, l: usize, rng: &mut dyn RngCore) -> Self {
        let mut row = |n: usize| {
            let raw: Vec<f64> = (0..n).map(|_| 0.2 + rng.random::<f64>()).collect();
            let s: f64 = raw.iter().sum();
            let mut r: Vec<f64> = raw.iter().map(|v| v / s).collect();
            // absorb rounding so that the row sums to one exactly
            let tail: f64 = r[..n - 1].iter().sum();
            r[n - 1] = 1.0 - tail;
            r
        };
        let transition = (0..k).map(|_| row(k)).collect();
        let emission = (0..k).map(|_| row(l)).collect();
        let initial = row(k);
        Self::new(transition, emission, initial).expect("random rows are stochastic")
    }

    pub fn num_states(&self) -> usize {
        self.k
    }

    pub fn num_symbols(&self) -> usize {
        self.l
    }

    #[inline]
    pub fn m(&self, x: usize, x_next: usize) -> f64 {
        self.transition[x * self.k + x_next]
    }

    #[inline]
    pub fn g(&self, x: usize, y: usize) -> f64 {
        self.emission[x * self.l + y]
    }

    #[inline]
    pub fn mu(&self, x: usize) -> f64 {
        self.initial[x]
    }

    fn check_obs(&self, ys: &[usize]) -> Result<()> {
        if let Some(&bad) = ys.iter().find(|&&y| y >= self.l) {
            return Err(Error::InvalidParams(format!("observation symbol {bad} outside alphabet of size {}", self.l)));
        }
        Ok(())
    }

    /// Scaled forward algorithm.
    pub fn forward(&self, ys: &[usize]) -> Result<ForwardPass> {
        self.check_obs(ys)?;
        let k = self.k;
        let mut filter = Vec::with_capacity(ys.len());
        let mut log_increments = Vec::with_capacity(ys.len());
        let mut pred = self.initial.clone();
        for (t, &y) in ys.iter().enumerate() {
            let mut alpha: Vec<f64> = (0..k).map(|x| pred[x] * self.g(x, y)).collect();
            let c: f64 = alpha.iter().sum();
            if c <= 0.0 || !c.is_finite() {
                return Err(Error::ZeroLikelihood { t });
            }
            alpha.iter_mut().for_each(|a| *a /= c);
            log_increments.push(c.ln());
            pred = (0..k)
                .map(|x2| (0..k).map(|x| alpha[x] * self.m(x, x2)).sum())
                .collect();
            filter.push(alpha);
        }
        Ok(ForwardPass { filter, log_increments })
    }

    pub fn log_likelihood(&self, ys: &[usize]) -> Result<f64> {
        Ok(self.forward(ys)?.log_likelihood())
    }

    /// Smoothing marginals `P(X_t = x | y_{0:T})` by forward-backward.
    pub fn smoothing_marginals(&self, ys: &[usize]) -> Result<Vec<Vec<f64>>> {
        let fwd = self.forward(ys)?;
        let k = self.k;
        let n = ys.len();
        let mut beta = vec![1.0; k];
        let mut out = vec![vec![0.0; k]; n];
        for t in (0..n).rev() {
            let mut m: Vec<f64> = (0..k).map(|x| fwd.filter[t][x] * beta[x]).collect();
            let s: f64 = m.iter().sum();
            m.iter_mut().for_each(|v| *v /= s);
            out[t] = m;
            if t > 0 {
                let y = ys[t];
                let mut nb: Vec<f64> = (0..k)
                    .map(|x| (0..k).map(|x2| self.m(x, x2) * self.g(x2, y) * beta[x2]).sum())
                    .collect();
                let s: f64 = nb.iter().sum();
                nb.iter_mut().for_each(|v| *v /= s);
                beta = nb;
            }
        }
        Ok(out)
    }

    /// `Σ_{x'} m(x, x') g(x', y)`.
    pub fn predictive(&self, x: usize, y: usize) -> f64 {
        (0..self.k).map(|x2| self.m(x, x2) * self.g(x2, y)).sum()
    }

    /// Strong-mixing constants with the uniform reference measure `γ(x) = 1/K`:
    /// `σ₋ = K·min m`, `σ₊ = K·max m` (one-step, `m = 1`).
    pub fn strong_mixing_constants(&self) -> (f64, f64) {
        let min = self.transition.iter().copied().fold(f64::INFINITY, f64::min);
        let max = self.transition.iter().copied().fold(0.0, f64::max);
        (self.k as f64 * min, self.k as f64 * max)
    }

    /// `δ = max_y (max_x g(x, y) / min_x g(x, y))`.
    pub fn likelihood_ratio_bound(&self) -> f64 {
        (0..self.l)
            .map(|y| {
                let col = (0..self.k).map(|x| self.g(x, y));
                let (lo, hi) = col.fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(v), hi.max(v)));
                hi / lo
            })
            .fold(1.0, f64::max)
    }
}

impl StateSpaceModel for FiniteHmm {
    type State = usize;
    type Obs = usize;

    fn state_space(&self) -> SpaceKind {
        SpaceKind::Finite(self.k)
    }

    fn observation_space(&self) -> SpaceKind {
        SpaceKind::Finite(self.l)
    }

    fn log_m(&self, x: &usize, x_next: &usize) -> f64 {
        self.log_transition[x * self.k + x_next]
    }

    fn log_g(&self, x: &usize, y: &usize) -> f64 {
        self.log_emission[x * self.l + y]
    }

    fn log_mu(&self, x: &usize) -> f64 {
        self.log_initial[*x]
    }

    fn sample_m(&self, x: &usize, rng: &mut dyn RngCore) -> usize {
        sample_categorical(&self.transition[x * self.k..(x + 1) * self.k], rng)
    }

    fn sample_g(&self, x: &usize, rng: &mut dyn RngCore) -> usize {
        sample_categorical(&self.emission[x * self.l..(x + 1) * self.l], rng)
    }

    fn sample_mu(&self, rng: &mut dyn RngCore) -> usize {
        sample_categorical(&self.initial, rng)
    }

    fn log_g_sup(&self, y: &usize) -> Option<f64> {
        Some((0..self.k).map(|x| self.log_g(&x, y)).fold(f64::NEG_INFINITY, f64::max))
    }

    fn log_g_integral(&self, y: &usize) -> Option<f64> {
        Some(ln((0..self.k).map(|x| self.g(x, *y)).sum()))
    }

    fn adaptation(&self) -> Option<&dyn Adaptation<usize, usize>> {
        Some(self)
    }
}

impl Adaptation<usize, usize> for FiniteHmm {
    fn log_predictive(&self, x: &usize, y: &usize) -> f64 {
        ln(self.predictive(*x, *y))
    }

    fn sample_predictive(&self, x: &usize, y: &usize, rng: &mut dyn RngCore) -> usize {
        let w: Vec<f64> = (0..self.k).map(|x2| self.m(*x, x2) * self.g(x2, *y)).collect();
        let s: f64 = w.iter().sum();
        let p: Vec<f64> = w.iter().map(|v| v / s).collect();
        sample_categorical(&p, rng)
    }

    fn log_predictive_sup(&self, y: &usize) -> f64 {
        (0..self.k).map(|x| self.log_predictive(&x, y)).fold(f64::NEG_INFINITY, f64::max)
    }

    fn has_initial_adaptation(&self) -> bool {
        true
    }

    fn log_initial_predictive(&self, y: &usize) -> Option<f64> {
        Some(ln((0..self.k).map(|x| self.mu(x) * self.g(x, *y)).sum()))
    }

    fn sample_initial_posterior(&self, y: &usize, rng: &mut dyn RngCore) -> Option<usize> {
        let w: Vec<f64> = (0..self.k).map(|x| self.mu(x) * self.g(x, *y)).collect();
        let s: f64 = w.iter().sum();
        let p: Vec<f64> = w.iter().map(|v| v / s).collect();
        Some(sample_categorical(&p, rng))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamKey;

    fn two_state() -> FiniteHmm {
        FiniteHmm::new(
            vec![vec![0.9, 0.1], vec![0.2, 0.8]],
            vec![vec![0.7, 0.3], vec![0.1, 0.9]],
            vec![0.5, 0.5],
        )
        .unwrap()
    }

    #[test]
    fn rejects_non_stochastic_rows() {
        let r = FiniteHmm::new(vec![vec![0.5, 0.6], vec![0.5, 0.5]], vec![vec![1.0], vec![1.0]], vec![0.5, 0.5]);
        assert!(matches!(r, Err(Error::InvalidParams(_))));
    }

    #[test]
    fn forward_matches_brute_force_sum() {
        let hmm = two_state();
        let ys = [0usize, 1, 1];
        let mut total = 0.0;
        for a in 0..2 {
            for b in 0..2 {
                for c in 0..2 {
                    total += hmm.mu(a) * hmm.g(a, 0) * hmm.m(a, b) * hmm.g(b, 1) * hmm.m(b, c) * hmm.g(c, 1);
                }
            }
        }
        assert!((hmm.log_likelihood(&ys).unwrap() - total.ln()).abs() < 1e-13);
    }

    #[test]
    fn likelihood_factorizes_over_prefixes() {
        let hmm = FiniteHmm::random_positive(3, 4, &mut StreamKey::new(3).rng(0, 0));
        let ys = [0usize, 3, 2, 1, 1, 0];
        let fwd = hmm.forward(&ys).unwrap();
        let full = fwd.log_likelihood();
        for s in 0..ys.len() - 1 {
            let prefix = hmm.log_likelihood(&ys[..=s]).unwrap();
            let cond = fwd.log_conditional(s + 1, ys.len() - 1);
            assert!((prefix + cond - full).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_likelihood_is_reported() {
        let hmm = FiniteHmm::new(
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![vec![1.0, 0.0], vec![1.0, 0.0]],
            vec![0.5, 0.5],
        )
        .unwrap();
        assert_eq!(hmm.forward(&[0, 1]).unwrap_err(), Error::ZeroLikelihood { t: 1 });
    }

    #[test]
    fn random_rows_are_stochastic() {
        let hmm = FiniteHmm::random_positive(3, 2, &mut StreamKey::new(9).rng(0, 0));
        for x in 0..3 {
            let s: f64 = (0..3).map(|x2| hmm.m(x, x2)).sum();
            assert!((s - 1.0).abs() < 1e-12);
            let s: f64 = (0..2).map(|y| hmm.g(x, y)).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
}
