//! Experiment harness: JSON configs, seeded suites, and report bundles of
//! named assertions plus CSV series.

pub mod io;
pub mod report;
pub mod suites;

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::minorization::{NRule, ScalingConfig};
use crate::models::{AnyModel, ModelConfig};
use crate::ssm::ProposalKind;

pub use io::{observations_csv, parse_observations, read_observations};
pub use report::{Assertion, Comparison, Metadata, ReportBundle, Series, SuiteOutput, SCHEMA_VERSION};
pub use suites::{
    run_scaling, Deadline, EnumerationGrid, InvarianceSuite, LgssInvarianceCheck, MinorizeSuite, MomentsSuite,
    ScalingSuite, SmcCheckSuite,
};

/// Run `$body` with `$m` bound to the concrete model inside an [`AnyModel`].
#[macro_export]
macro_rules! with_model {
    ($any:expr, $m:ident => $body:expr) => {
        match $any {
            $crate::models::AnyModel::FiniteHmm($m) => $body,
            $crate::models::AnyModel::Lgss($m) => $body,
            $crate::models::AnyModel::AdditiveNoise($m) => $body,
            $crate::models::AnyModel::Sv($m) => $body,
        }
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Invariance,
    Minorize,
    Moments,
    Scaling,
    SmcCheck,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Invariance => "invariance",
            ExperimentKind::Minorize => "minorize",
            ExperimentKind::Moments => "moments",
            ExperimentKind::Scaling => "scaling",
            ExperimentKind::SmcCheck => "smc-check",
        }
    }

    /// Wall-clock budget used when the config does not set one.
    pub fn default_budget_secs(self) -> f64 {
        match self {
            ExperimentKind::Invariance | ExperimentKind::SmcCheck => 120.0,
            ExperimentKind::Minorize | ExperimentKind::Moments => 300.0,
            ExperimentKind::Scaling => 1200.0,
        }
    }
}

/// A model given inline or as a path to a model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelRef {
    Inline(ModelConfig),
    File(PathBuf),
}

impl ModelRef {
    /// Relative paths are resolved against `base`.
    pub fn resolve(&self, base: Option<&Path>) -> Result<ModelConfig> {
        match self {
            ModelRef::Inline(c) => Ok(c.clone()),
            ModelRef::File(p) => {
                let path = match base {
                    Some(b) if p.is_relative() => b.join(p),
                    _ => p.clone(),
                };
                if !path.exists() {
                    return Err(Error::Config(format!("model file {} does not exist", path.display())));
                }
                ModelConfig::load(&path)
            }
        }
    }
}

/// One experiment. Unset fields fall back to the suite's defaults.
///
/// ```json
/// { "kind": "scaling", "model": "sv.json", "seed": 3,
///   "ts": [25, 50, 100], "rule": { "rule": "power", "gamma": 0.4 }, "alpha": 0.5 }
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub model: Option<ModelRef>,
    #[serde(default)]
    pub proposal: Option<ProposalKind>,
    #[serde(default)]
    pub seed: u64,
    /// Horizon grid `T`.
    #[serde(default)]
    pub ts: Option<Vec<usize>>,
    #[serde(default)]
    pub particles: Option<Vec<usize>>,
    #[serde(default)]
    pub rule: Option<NRule>,
    #[serde(default)]
    pub lambdas: Option<Vec<f64>>,
    #[serde(default)]
    pub alpha: Option<f64>,
    /// Named enumeration grid for `invariance`.
    #[serde(default)]
    pub grid: Option<String>,
    #[serde(default)]
    pub chains: Option<usize>,
    #[serde(default)]
    pub iterations: Option<usize>,
    #[serde(default)]
    pub samples: Option<usize>,
    #[serde(default)]
    pub n_inner: Option<usize>,
    #[serde(default)]
    pub n_cap: Option<usize>,
    /// Particle-move budget of a scaling sweep.
    #[serde(default)]
    pub work_budget: Option<f64>,
    #[serde(default)]
    pub budget_secs: Option<f64>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// Directory that relative model paths are resolved against.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

/// A validated config bound to its suite.
#[derive(Debug, Clone)]
pub enum Plan {
    Invariance(InvarianceSuite),
    Minorize(MinorizeSuite),
    Moments(MomentsSuite),
    Scaling(AnyModel, ScalingConfig),
    SmcCheck(SmcCheckSuite),
}

fn non_empty<T>(name: &str, v: &Option<Vec<T>>) -> Result<()> {
    match v {
        Some(v) if v.is_empty() => Err(Error::Config(format!("empty {name} grid"))),
        _ => Ok(()),
    }
}

fn wrong_family(kind: ExperimentKind, family: &str) -> Error {
    Error::Config(format!("experiment '{}' cannot use a {family} model", kind.name()))
}

impl ExperimentConfig {
    pub fn new(kind: ExperimentKind) -> Self {
        ExperimentConfig {
            kind,
            model: None,
            proposal: None,
            seed: 0,
            ts: None,
            particles: None,
            rule: None,
            lambdas: None,
            alpha: None,
            grid: None,
            chains: None,
            iterations: None,
            samples: None,
            n_inner: None,
            n_cap: None,
            work_budget: None,
            budget_secs: None,
            out: None,
            base_dir: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("experiment config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut c = Self::from_json(&text)?;
        c.base_dir = path.parent().map(Path::to_path_buf);
        Ok(c)
    }

    fn model(&self) -> Result<Option<ModelConfig>> {
        self.model.as_ref().map(|m| m.resolve(self.base_dir.as_deref())).transpose()
    }

    /// Validate and bind the config to its suite.
    pub fn plan(&self) -> Result<Plan> {
        non_empty("T", &self.ts)?;
        non_empty("N", &self.particles)?;
        non_empty("λ", &self.lambdas)?;
        if let Some(b) = self.budget_secs {
            if !(b >= 0.0) {
                return Err(Error::Config("budget_secs must be non-negative".into()));
            }
        }
        let model = self.model()?;
        let kind = self.kind;
        Ok(match kind {
            ExperimentKind::Invariance => {
                let mut s = InvarianceSuite::default();
                let grid = s.grid.as_mut().expect("default suite has a grid");
                if let Some(g) = &self.grid {
                    *grid = EnumerationGrid::named(g)?;
                }
                if let Some(ts) = &self.ts {
                    grid.horizons = ts.clone();
                }
                if let Some(ns) = &self.particles {
                    if ns.iter().any(|&n| n < 2) {
                        return Err(Error::Config("conditional SMC needs N ≥ 2".into()));
                    }
                    grid.particles = ns.clone();
                }
                if let Some(p) = self.proposal {
                    grid.proposals = vec![p];
                }
                let lgss = s.lgss.as_mut().expect("default suite has the LGSS check");
                if let Some(p) = self.proposal {
                    lgss.proposal = p;
                }
                if let Some(c) = self.chains {
                    lgss.chains = c;
                }
                match model {
                    None => {}
                    Some(ModelConfig::Lgss(p)) => lgss.params = p,
                    Some(other) => return Err(wrong_family(kind, other.family())),
                }
                Plan::Invariance(s)
            }
            ExperimentKind::Minorize => {
                let mut s = MinorizeSuite::default();
                match model {
                    None => {}
                    Some(ModelConfig::FiniteHmm(p)) => s.hmm = p,
                    Some(other) => return Err(wrong_family(kind, other.family())),
                }
                if let Some(ts) = &self.ts {
                    s.horizons = ts.clone();
                }
                if let Some(l) = &self.lambdas {
                    s.lambdas = l.clone();
                }
                match self.rule {
                    None => {}
                    Some(NRule::Linear { lambda }) => s.lambdas = vec![lambda],
                    Some(_) => return Err(Error::Config("the floor comparison uses N = ⌈λT⌉; give a linear rule".into())),
                }
                if let Some(p) = self.proposal {
                    s.proposals = vec![p];
                }
                if let Some(ns) = &self.particles {
                    s.limit_particles = ns.clone();
                }
                Plan::Minorize(s)
            }
            ExperimentKind::Moments => {
                let mut s = MomentsSuite::default();
                match model {
                    None => {}
                    Some(ModelConfig::Sv(p)) => s.sv = p,
                    Some(ModelConfig::AdditiveNoise(p)) => s.additive = p,
                    Some(other) => return Err(wrong_family(kind, other.family())),
                }
                if let Some(ts) = &self.ts {
                    if ts.len() != 1 {
                        return Err(Error::Config("moments take a single time index in `ts`".into()));
                    }
                    s.t = ts[0];
                }
                if let Some(a) = self.alpha {
                    if !(a > 0.0) {
                        return Err(Error::Config("α must be positive".into()));
                    }
                    s.stable_alpha = a;
                }
                if let Some(n) = self.samples {
                    s.samples = n;
                }
                if let Some(n) = self.n_inner {
                    s.n_inner = n;
                }
                Plan::Moments(s)
            }
            ExperimentKind::Scaling => {
                let mut s = ScalingSuite::with_seed(self.seed);
                let built = match model {
                    None => ModelConfig::Sv(s.sv).build()?,
                    Some(m) => m.build()?,
                };
                let c = &mut s.config;
                if let Some(r) = self.rule {
                    c.rule = r;
                    c.alpha = None;
                }
                if self.alpha.is_some() {
                    c.alpha = self.alpha;
                }
                if let NRule::Power { .. } = c.rule {
                    if c.alpha.is_none() {
                        return Err(Error::Config("a power rule needs the moment exponent α (γ < α)".into()));
                    }
                }
                if let Some(ts) = &self.ts {
                    c.ts = ts.clone();
                }
                if let Some(v) = self.chains {
                    c.chains = v;
                }
                if let Some(v) = self.iterations {
                    c.iterations = v;
                }
                if let Some(v) = self.n_cap {
                    c.n_cap = v;
                }
                if let Some(p) = self.proposal {
                    c.proposal = p;
                }
                c.work_budget = self.work_budget;
                c.validate()?;
                Plan::Scaling(built, s.config)
            }
            ExperimentKind::SmcCheck => {
                let mut s = SmcCheckSuite::default();
                match model {
                    None => {}
                    Some(ModelConfig::FiniteHmm(p)) => s.hmm = p,
                    Some(ModelConfig::Lgss(p)) => s.lgss = p,
                    Some(other) => return Err(wrong_family(kind, other.family())),
                }
                if let Some(ns) = &self.particles {
                    s.particles = ns[0];
                }
                if let Some(p) = self.proposal {
                    s.proposals = vec![p];
                }
                if let Some(ts) = &self.ts {
                    s.lgss_horizon = ts[0];
                }
                Plan::SmcCheck(s)
            }
        })
    }
}

impl Plan {
    /// Run into `out`; on error, `out` keeps whatever was finished.
    pub fn run_into(&self, out: &mut SuiteOutput, seed: u64, deadline: Deadline) -> Result<()> {
        match self {
            Plan::Invariance(s) => s.run_into(out, seed, deadline),
            Plan::Minorize(s) => s.run_into(out, seed, deadline),
            Plan::Moments(s) => s.run_into(out, seed, deadline),
            Plan::SmcCheck(s) => s.run_into(out, seed, deadline),
            Plan::Scaling(model, config) => with_model!(model, m => run_scaling(m, config, out, deadline)),
        }
    }
}

/// Validate, run and (when `out` is set) write the report bundle.
///
/// Config errors are returned; errors raised while running are recorded in the
/// bundle next to the partial results.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ReportBundle> {
    let plan = config.plan()?;
    let started = Instant::now();
    let started_unix_secs = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let budget = config.budget_secs.unwrap_or(config.kind.default_budget_secs());
    let mut out = SuiteOutput::default();
    let error = plan.run_into(&mut out, config.seed, Deadline::after(Some(budget))).err();
    let metadata = Metadata {
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        threads: rayon::current_num_threads(),
        started_unix_secs,
        elapsed_secs: started.elapsed().as_secs_f64(),
    };
    let bundle = ReportBundle::from_output(config.kind.name(), config.seed, out, error.map(|e| e.to_string()), metadata);
    if let Some(dir) = &config.out {
        bundle.write(dir)?;
    }
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_a_full_config() {
        let c = ExperimentConfig::from_json(
            r#"{ "kind": "scaling", "seed": 4, "ts": [5, 10],
                 "model": { "family": "sv", "phi": 0.9, "sigma": 0.3, "beta": 1.0 },
                 "rule": { "rule": "power", "gamma": 0.4 }, "alpha": 0.5,
                 "chains": 3, "n_cap": 20 }"#,
        )
        .unwrap();
        match c.plan().unwrap() {
            Plan::Scaling(AnyModel::Sv(_), cfg) => {
                assert_eq!(cfg.ts, vec![5, 10]);
                assert_eq!(cfg.seed, 4);
                assert_eq!(cfg.n_cap, 20);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_t_grid_is_a_config_error() {
        for kind in [
            ExperimentKind::Invariance,
            ExperimentKind::Minorize,
            ExperimentKind::Moments,
            ExperimentKind::Scaling,
            ExperimentKind::SmcCheck,
        ] {
            let c = ExperimentConfig { ts: Some(vec![]), ..ExperimentConfig::new(kind) };
            assert!(matches!(run_experiment(&c), Err(Error::Config(_))), "{kind:?}");
        }
    }

    #[test]
    fn gamma_must_stay_below_alpha() {
        let c = ExperimentConfig {
            rule: Some(NRule::Power { gamma: 0.6 }),
            alpha: Some(0.5),
            ..ExperimentConfig::new(ExperimentKind::Scaling)
        };
        assert!(matches!(c.plan(), Err(Error::Config(_))));
        let c = ExperimentConfig { rule: Some(NRule::Power { gamma: 0.4 }), ..ExperimentConfig::new(ExperimentKind::Scaling) };
        assert!(matches!(c.plan(), Err(Error::Config(_))));
    }

    #[test]
    fn unknown_fields_and_missing_model_files_are_rejected() {
        assert!(ExperimentConfig::from_json(r#"{ "kind": "moments", "sample": 3 }"#).is_err());
        let c = ExperimentConfig {
            model: Some(ModelRef::File("/nonexistent/model.json".into())),
            ..ExperimentConfig::new(ExperimentKind::Minorize)
        };
        assert!(matches!(c.plan(), Err(Error::Config(_))));
    }

    #[test]
    fn model_family_must_fit_the_kind() {
        let c = ExperimentConfig::from_json(
            r#"{ "kind": "minorize", "model": { "family": "sv", "phi": 0.9, "sigma": 0.3, "beta": 1.0 } }"#,
        )
        .unwrap();
        assert!(matches!(c.plan(), Err(Error::Config(_))));
    }

    #[test]
    fn relative_model_paths_follow_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("hmm.json"),
            r#"{ "family": "finite-hmm", "transition": [[0.6, 0.4], [0.3, 0.7]],
                 "emission": [[0.7, 0.3], [0.2, 0.8]], "initial": [0.5, 0.5] }"#,
        )
        .unwrap();
        let cfg = dir.path().join("exp.json");
        std::fs::write(&cfg, r#"{ "kind": "minorize", "model": "hmm.json", "ts": [5], "particles": [2, 10] }"#).unwrap();
        let c = ExperimentConfig::load(&cfg).unwrap();
        match c.plan().unwrap() {
            Plan::Minorize(s) => assert_eq!(s.hmm.initial, vec![0.5, 0.5]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn run_records_runtime_errors_and_writes_partial_results() {
        let dir = tempfile::tempdir().unwrap();
        let c = ExperimentConfig {
            ts: Some(vec![5]),
            chains: Some(2),
            work_budget: Some(1.0),
            out: Some(dir.path().to_path_buf()),
            ..ExperimentConfig::new(ExperimentKind::Scaling)
        };
        let c = ExperimentConfig { rule: Some(NRule::Fixed { n: 4 }), ..c };
        let b = run_experiment(&c).unwrap();
        assert!(!b.all_passed());
        assert!(b.error.as_deref().unwrap().contains("budget"));
        assert!(dir.path().join("summary.json").exists());
    }
}
