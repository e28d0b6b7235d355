//! State-space model abstraction and the two classical proposal schemes.
//!
//! Densities are log densities throughout. Finite spaces use counting measure,
//! continuous spaces Lebesgue measure; the reference measures are never
//! materialized as objects.

use std::fmt::Debug;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Kind of a state or observation space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpaceKind {
    Finite(usize),
    Continuous(usize),
}

/// Values that can be written to reports and summarized as a real number.
pub trait Scalar: Clone + PartialEq + Debug + Send + Sync + 'static {
    fn to_f64(&self) -> f64;
    /// Inverse of `to_f64`; `None` if `v` is not a value of this type.
    fn from_f64(v: f64) -> Option<Self>;
}

impl Scalar for usize {
    fn to_f64(&self) -> f64 {
        *self as f64
    }

    fn from_f64(v: f64) -> Option<Self> {
        (v >= 0.0 && v.fract() == 0.0 && v < usize::MAX as f64).then_some(v as usize)
    }
}

impl Scalar for f64 {
    fn to_f64(&self) -> f64 {
        *self
    }

    fn from_f64(v: f64) -> Option<Self> {
        v.is_finite().then_some(v)
    }
}

/// A hidden Markov model `(M, G, μ)` in log-density form.
pub trait StateSpaceModel: Send + Sync {
    type State: Scalar;
    type Obs: Scalar;

    fn state_space(&self) -> SpaceKind;
    fn observation_space(&self) -> SpaceKind;

    /// `log m(x, x')`, the transition density.
    fn log_m(&self, x: &Self::State, x_next: &Self::State) -> f64;
    /// `log g(x, y)`, the observation density.
    fn log_g(&self, x: &Self::State, y: &Self::Obs) -> f64;
    /// `log μ(x)`, the initial density.
    fn log_mu(&self, x: &Self::State) -> f64;

    fn sample_m(&self, x: &Self::State, rng: &mut dyn RngCore) -> Self::State;
    fn sample_g(&self, x: &Self::State, rng: &mut dyn RngCore) -> Self::Obs;
    fn sample_mu(&self, rng: &mut dyn RngCore) -> Self::State;

    /// Analytic `log sup_x g(x, y)`, when known.
    fn log_g_sup(&self, _y: &Self::Obs) -> Option<f64> {
        None
    }

    /// Analytic `log ∫ g(x, y) dx` against the state reference measure, when known.
    fn log_g_integral(&self, _y: &Self::Obs) -> Option<f64> {
        None
    }

    /// Closed-form one-step adaptation, if the model has one.
    fn adaptation(&self) -> Option<&dyn Adaptation<Self::State, Self::Obs>> {
        None
    }

    /// Draw `(x_{0:T}, y_{0:T})` from the model.
    fn simulate(&self, len: usize, rng: &mut dyn RngCore) -> (Vec<Self::State>, Vec<Self::Obs>) {
        let mut xs = Vec::with_capacity(len);
        let mut ys = Vec::with_capacity(len);
        for t in 0..len {
            let x = if t == 0 {
                self.sample_mu(rng)
            } else {
                self.sample_m(&xs[t - 1], rng)
            };
            ys.push(self.sample_g(&x, rng));
            xs.push(x);
        }
        (xs, ys)
    }
}

/// Analytic pieces needed by the fully-adapted proposal.
pub trait Adaptation<S, O>: Send + Sync {
    /// `log ∫ M(x, du) g(u, y)`.
    fn log_predictive(&self, x: &S, y: &O) -> f64;
    /// Draw from the normalized `M(x, dx') g(x', y)`.
    fn sample_predictive(&self, x: &S, y: &O, rng: &mut dyn RngCore) -> S;
    /// `log sup_x ∫ M(x, du) g(u, y)`, or an upper bound on it.
    fn log_predictive_sup(&self, y: &O) -> f64;
    /// Whether the two initial hooks below are implemented.
    fn has_initial_adaptation(&self) -> bool {
        false
    }
    /// `log ∫ μ(dx) g(x, y)`, when available in closed form.
    fn log_initial_predictive(&self, _y: &O) -> Option<f64> {
        None
    }
    /// Draw from the normalized `μ(dx) g(x, y)`.
    fn sample_initial_posterior(&self, _y: &O, _rng: &mut dyn RngCore) -> Option<S> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProposalKind {
    Bootstrap,
    FullyAdapted,
}

impl std::str::FromStr for ProposalKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bootstrap" => Ok(ProposalKind::Bootstrap),
            "fully-adapted" => Ok(ProposalKind::FullyAdapted),
            other => Err(Error::Config(format!("unknown proposal '{other}'"))),
        }
    }
}

impl std::fmt::Display for ProposalKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ProposalKind::Bootstrap => "bootstrap",
            ProposalKind::FullyAdapted => "fully-adapted",
        })
    }
}

/// Proposal kernels `r₀⟨y⟩`, `r⟨y⟩` together with their importance weights.
///
/// For the fully-adapted scheme the initial proposal is the normalized
/// `μ(dx) g(x, y₀)` with constant weight `∫ μ g` when the model provides it in
/// closed form; otherwise it falls back to `r₀ = μ` with weight `g(·, y₀)`.
pub struct Proposal<'a, M: StateSpaceModel> {
    model: &'a M,
    kind: ProposalKind,
    initial_adapted: bool,
}

impl<'a, M: StateSpaceModel> Clone for Proposal<'a, M> {
    fn clone(&self) -> Self {
        Proposal {
            model: self.model,
            kind: self.kind,
            initial_adapted: self.initial_adapted,
        }
    }
}

/// Bootstrap proposal: propose from `M`, weight by `g`.
pub fn make_bootstrap<M: StateSpaceModel>(model: &M) -> Proposal<'_, M> {
    Proposal {
        model,
        kind: ProposalKind::Bootstrap,
        initial_adapted: false,
    }
}

/// Fully-adapted proposal: propose from `M g / ∫ M g`, weight by the predictive density.
pub fn make_fully_adapted<M: StateSpaceModel>(model: &M) -> Result<Proposal<'_, M>> {
    let adaptation = model
        .adaptation()
        .ok_or(Error::UnsupportedModel("a fully-adapted proposal"))?;
    let initial_adapted = adaptation.has_initial_adaptation();
    Ok(Proposal {
        model,
        kind: ProposalKind::FullyAdapted,
        initial_adapted,
    })
}

/// Build a proposal of the requested kind.
pub fn make_proposal<M: StateSpaceModel>(model: &M, kind: ProposalKind) -> Result<Proposal<'_, M>> {
    match kind {
        ProposalKind::Bootstrap => Ok(make_bootstrap(model)),
        ProposalKind::FullyAdapted => make_fully_adapted(model),
    }
}

impl<'a, M: StateSpaceModel> Proposal<'a, M> {
    pub fn model(&self) -> &'a M {
        self.model
    }

    pub fn kind(&self) -> ProposalKind {
        self.kind
    }

    fn adaptation(&self) -> &'a dyn Adaptation<M::State, M::Obs> {
        self.model
            .adaptation()
            .expect("fully-adapted proposal built for a model with an adaptation")
    }

    pub fn log_r0(&self, y0: &M::Obs, x0: &M::State) -> f64 {
        match self.kind {
            ProposalKind::FullyAdapted if self.initial_adapted => {
                let a = self.adaptation();
                self.model.log_mu(x0) + self.model.log_g(x0, y0) - a.log_initial_predictive(y0).unwrap()
            }
            _ => self.model.log_mu(x0),
        }
    }

    pub fn sample_r0(&self, y0: &M::Obs, rng: &mut dyn RngCore) -> M::State {
        match self.kind {
            ProposalKind::FullyAdapted if self.initial_adapted => self
                .adaptation()
                .sample_initial_posterior(y0, rng)
                .expect("initial posterior sampler paired with initial predictive"),
            _ => self.model.sample_mu(rng),
        }
    }

    pub fn log_r(&self, y: &M::Obs, x: &M::State, x_next: &M::State) -> f64 {
        match self.kind {
            ProposalKind::Bootstrap => self.model.log_m(x, x_next),
            ProposalKind::FullyAdapted => {
                self.model.log_m(x, x_next) + self.model.log_g(x_next, y)
                    - self.adaptation().log_predictive(x, y)
            }
        }
    }

    pub fn sample_r(&self, y: &M::Obs, x: &M::State, rng: &mut dyn RngCore) -> M::State {
        match self.kind {
            ProposalKind::Bootstrap => self.model.sample_m(x, rng),
            ProposalKind::FullyAdapted => self.adaptation().sample_predictive(x, y, rng),
        }
    }

    /// Initial log weight `log ω₀⟨y₀⟩(x₀)`.
    pub fn log_w0(&self, y0: &M::Obs, x0: &M::State) -> f64 {
        match self.kind {
            ProposalKind::FullyAdapted if self.initial_adapted => {
                self.adaptation().log_initial_predictive(y0).unwrap()
            }
            _ => self.model.log_g(x0, y0),
        }
    }

    /// Log weight `log ω⟨y⟩(x, x')`.
    pub fn log_w(&self, y: &M::Obs, x: &M::State, x_next: &M::State) -> f64 {
        match self.kind {
            ProposalKind::Bootstrap => self.model.log_g(x_next, y),
            ProposalKind::FullyAdapted => self.adaptation().log_predictive(x, y),
        }
    }

    /// `log ‖ω₀⟨y₀⟩‖_∞`.
    pub fn log_w0_sup(&self, y0: &M::Obs) -> Option<f64> {
        match self.kind {
            ProposalKind::FullyAdapted if self.initial_adapted => {
                self.adaptation().log_initial_predictive(y0)
            }
            _ => self.model.log_g_sup(y0),
        }
    }

    /// `log ‖ω⟨y⟩‖_∞`.
    pub fn log_w_sup(&self, y: &M::Obs) -> Option<f64> {
        match self.kind {
            ProposalKind::Bootstrap => self.model.log_g_sup(y),
            ProposalKind::FullyAdapted => Some(self.adaptation().log_predictive_sup(y)),
        }
    }
}

/// Unnormalized log joint smoothing density
/// `log μ(x₀) + log g(x₀, y₀) + Σ_s [log m(x_{s-1}, x_s) + log g(x_s, y_s)]`.
pub fn log_density_path<M: StateSpaceModel>(model: &M, xs: &[M::State], ys: &[M::Obs]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::LengthMismatch {
            expected: ys.len(),
            got: xs.len(),
        });
    }
    if xs.is_empty() {
        return Err(Error::LengthMismatch { expected: 1, got: 0 });
    }
    let mut total = model.log_mu(&xs[0]) + model.log_g(&xs[0], &ys[0]);
    for s in 1..xs.len() {
        if total == f64::NEG_INFINITY {
            break;
        }
        total += model.log_m(&xs[s - 1], &xs[s]) + model.log_g(&xs[s], &ys[s]);
    }
    Ok(total)
}
