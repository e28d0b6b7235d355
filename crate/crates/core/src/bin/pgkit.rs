//! Command-line front end: samplers, exact oracles, minorization tools and
//! the experiment suites.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use pgkit::csmc::{run_pg_chain_keyed, PgChainConfig, ReferenceTrajectory};
use pgkit::experiment::{
    observations_csv, read_observations, run_experiment, Deadline, EnumerationGrid, ExperimentConfig, InvarianceSuite,
    Metadata, MinorizeSuite, ReportBundle, Series, SuiteOutput,
};
use pgkit::minorization::{estimate_moments, exact_report, MomentOptions, NRule, ScalingConfig};
use pgkit::models::{decode_path, hmm_enumerate_pg, AnyModel, FiniteHmm, ModelConfig, DEFAULT_ENUMERATION_CAP};
use pgkit::smc::{extract_path, resample_multinomial, run_smc};
use pgkit::ssm::{make_proposal, ProposalKind, Scalar, StateSpaceModel};
use pgkit::{with_model, StreamKey};

#[derive(Parser, Debug)]
#[command(name = "pgkit", version, about = "Particle Gibbs samplers and minorization diagnostics")]
struct Cli {
    /// Root seed of every random stream.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (default: all cores). Results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory for CSV series and summary.json; CSV goes to stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Experiment config (JSON); runs it when no subcommand is given.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw a hidden path and observations from a model.
    Simulate {
        #[arg(long)]
        model: PathBuf,
        /// Number of time steps `T + 1`.
        #[arg(long)]
        len: usize,
    },
    /// Sequential Monte Carlo.
    Smc {
        #[command(subcommand)]
        command: SmcCommand,
    },
    /// Particle Gibbs.
    Pg {
        #[command(subcommand)]
        command: PgCommand,
    },
    /// Minorization constants.
    Minorize {
        #[command(subcommand)]
        command: MinorizeCommand,
    },
    /// Particle-count scaling experiments.
    Scaling {
        #[command(subcommand)]
        command: ScalingCommand,
    },
    /// Exact finite-HMM oracles.
    Oracle {
        #[command(subcommand)]
        command: OracleCommand,
    },
    /// Run an experiment config.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct Data {
    /// Model file (JSON with a `family` tag).
    #[arg(long)]
    model: PathBuf,
    /// Observation CSV with header `t,y`.
    #[arg(long)]
    obs: PathBuf,
    #[arg(long, default_value = "bootstrap")]
    proposal: ProposalKind,
}

#[derive(Subcommand, Debug)]
enum SmcCommand {
    /// One particle filter run: log-likelihood estimate and ESS per step.
    Run {
        #[command(flatten)]
        data: Data,
        #[arg(long, short = 'n')]
        particles: usize,
        /// Also emit every weighted particle, with 1-based particle and ancestor indices.
        #[arg(long)]
        dump_particles: bool,
    },
}

#[derive(Subcommand, Debug)]
enum PgCommand {
    /// Particle Gibbs chains started from a filter draw.
    Run {
        #[command(flatten)]
        data: Data,
        #[arg(long, short = 'n')]
        particles: usize,
        #[arg(long, default_value_t = 1000)]
        iterations: usize,
        #[arg(long, default_value_t = 0)]
        burn_in: usize,
        #[arg(long, default_value_t = 1)]
        thin: usize,
        #[arg(long, default_value_t = 1)]
        chains: usize,
    },
    /// Exact invariance and minorization checks on enumerated kernels.
    InvarianceCheck {
        /// `tiny` (the full acceptance grid) or `smoke`.
        #[arg(long, default_value = "tiny")]
        grid: String,
        /// Skip the statistical check on the linear-Gaussian model.
        #[arg(long)]
        no_lgss: bool,
    },
}

#[derive(Subcommand, Debug)]
enum MinorizeCommand {
    /// Exact `B_{t,T}` and `ε_{T,N}` on a finite HMM.
    Exact {
        #[command(flatten)]
        data: Data,
        #[arg(long, short = 'n')]
        particles: usize,
    },
    /// Exact `ε_{T,⌈λT⌉}` against the strong-mixing floors.
    Bounds {
        /// Finite HMM; a built-in strongly mixing model when omitted.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        lambdas: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        ts: Option<Vec<usize>>,
        #[arg(long)]
        proposal: Option<ProposalKind>,
    },
    /// Monte Carlo moments `E[B̄^α]` and `E[C̄^α]`.
    Moments {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        alpha: f64,
        #[arg(long, default_value_t = 0)]
        ell: usize,
        #[arg(long, default_value_t = 0)]
        t: usize,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        #[arg(long, default_value_t = 1000)]
        n_inner: usize,
        #[arg(long, default_value = "bootstrap")]
        proposal: ProposalKind,
    },
}

#[derive(Subcommand, Debug)]
enum ScalingCommand {
    /// PG update fractions across horizons with `N` growing in `T`.
    Sweep {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = vec![25, 50, 100])]
        ts: Vec<usize>,
        /// `N = ⌈T^{1/γ}⌉`
        #[arg(long, conflicts_with_all = ["lambda", "fixed"])]
        gamma: Option<f64>,
        /// `N = ⌈λT⌉`
        #[arg(long, conflicts_with = "fixed")]
        lambda: Option<f64>,
        #[arg(long)]
        fixed: Option<usize>,
        /// Moment exponent; required with `--gamma` and must exceed it.
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long, default_value_t = 100)]
        chains: usize,
        #[arg(long, default_value_t = 1)]
        iterations: usize,
        #[arg(long, default_value_t = 10_000)]
        n_cap: usize,
        #[arg(long)]
        work_budget: Option<f64>,
        #[arg(long, default_value = "bootstrap")]
        proposal: ProposalKind,
    },
}

#[derive(Subcommand, Debug)]
enum OracleCommand {
    /// Dump the exact PG transition matrix over all paths.
    Enumerate {
        #[command(flatten)]
        data: Data,
        #[arg(long, short = 'n')]
        particles: usize,
    },
}

/// What a command produced.
struct Output {
    kind: &'static str,
    summary: serde_json::Value,
    series: Vec<Series>,
    /// Present for suite runs; decides the exit code.
    bundle: Option<ReportBundle>,
}

impl Output {
    fn plain(kind: &'static str, summary: serde_json::Value, series: Vec<Series>) -> Self {
        Output { kind, summary, series, bundle: None }
    }
}

fn load_model(path: &Path) -> anyhow::Result<AnyModel> {
    Ok(ModelConfig::load(path)?.build()?)
}

fn finite(model: AnyModel, what: &str) -> anyhow::Result<FiniteHmm> {
    match model {
        AnyModel::FiniteHmm(h) => Ok(h),
        _ => bail!("{what} needs a finite-hmm model"),
    }
}

fn series<R: Serialize>(name: &str, rows: &[R]) -> anyhow::Result<Series> {
    Ok(Series::from_rows(name, rows)?)
}

fn simulate<M: StateSpaceModel>(m: &M, len: usize, key: StreamKey) -> anyhow::Result<Output> {
    if len == 0 {
        bail!("--len must be at least 1");
    }
    let (xs, ys) = m.simulate(len, &mut key.rng(0, 0));
    #[derive(Serialize)]
    struct Row {
        t: usize,
        x: f64,
    }
    let states: Vec<Row> = xs.iter().enumerate().map(|(t, x)| Row { t, x: x.to_f64() }).collect();
    let obs = Series { name: "observations".into(), body: observations_csv(&ys) };
    Ok(Output::plain("simulate", json!({ "len": len }), vec![obs, series("states", &states)?]))
}

fn smc_run<M: StateSpaceModel>(m: &M, data: &Data, n: usize, dump: bool, key: StreamKey) -> anyhow::Result<Output> {
    let ys: Vec<M::Obs> = read_observations(&data.obs)?;
    let prop = make_proposal(m, data.proposal)?;
    let r = run_smc(&prop, &ys, n, key)?;
    #[derive(Serialize)]
    struct Row {
        t: usize,
        ess: f64,
    }
    let rows: Vec<Row> = r.ess.iter().enumerate().map(|(t, &ess)| Row { t, ess }).collect();
    let mut out = vec![series("ess", &rows)?];
    if dump {
        #[derive(Serialize)]
        struct ParticleRow {
            t: usize,
            particle: usize,
            ancestor: Option<usize>,
            x: f64,
            log_weight: f64,
        }
        let sys = &r.system;
        let mut prow = Vec::with_capacity(sys.states.len() * n);
        for t in 0..sys.states.len() {
            for i in 0..n {
                prow.push(ParticleRow {
                    t,
                    particle: i + 1,
                    ancestor: (t > 0).then(|| sys.ancestors[t][i] + 1),
                    x: sys.states[t][i].to_f64(),
                    log_weight: sys.log_weights[t][i],
                });
            }
        }
        out.push(series("particles", &prow)?);
    }
    Ok(Output::plain(
        "smc-run",
        json!({ "particles": n, "proposal": data.proposal, "log_likelihood_estimate": r.log_likelihood_estimate }),
        out,
    ))
}

#[allow(clippy::too_many_arguments)]
fn pg_run<M: StateSpaceModel>(
    m: &M,
    data: &Data,
    n: usize,
    iterations: usize,
    burn_in: usize,
    thin: usize,
    chains: usize,
    seed: u64,
) -> anyhow::Result<Output> {
    let ys: Vec<M::Obs> = read_observations(&data.obs)?;
    let prop = make_proposal(m, data.proposal)?;
    let cfg = PgChainConfig { n, iterations, burn_in, seed, proposal: data.proposal, thin };
    cfg.validate()?;
    if chains == 0 {
        bail!("--chains must be at least 1");
    }
    let root = StreamKey::new(seed);
    #[derive(Serialize)]
    struct SampleRow {
        chain: u64,
        iteration: u64,
        t: usize,
        x: f64,
    }
    #[derive(Serialize)]
    struct DiagRow {
        chain: usize,
        iteration: usize,
        update_fraction: f64,
    }
    let mut samples = Vec::new();
    let mut diags = Vec::new();
    let mut chain_summaries = Vec::new();
    for c in 0..chains {
        let ck = root.child(c as u64);
        // initial reference: one weighted draw from a filter run
        let init = run_smc(&prop, &ys, n, ck.child(0))?;
        let last = init.system.last_time();
        let k = resample_multinomial(&init.system.log_weights[last], 1, &mut ck.rng(0, 0))?[0];
        let start = ReferenceTrajectory::from(extract_path(&init.system, k)?);
        let chain = run_pg_chain_keyed(&prop, &ys, &cfg, &start, ck.child(1), c as u64)?;
        for s in &chain.samples {
            samples.extend(s.states.iter().enumerate().map(|(t, x)| SampleRow {
                chain: s.chain,
                iteration: s.iteration,
                t,
                x: x.to_f64(),
            }));
        }
        diags.extend(chain.diagnostics.update_fraction.iter().enumerate().map(|(i, &f)| DiagRow {
            chain: c,
            iteration: i + 1,
            update_fraction: f,
        }));
        chain_summaries.push(json!({
            "chain": c,
            "mean_update_fraction": chain.diagnostics.mean_update_fraction(),
            "atom_mass": chain.diagnostics.atom_mass,
            "path_mean_acf": chain.diagnostics.path_mean_acf,
        }));
    }
    Ok(Output::plain(
        "pg-run",
        json!({ "particles": n, "iterations": iterations, "proposal": data.proposal, "chains": chain_summaries }),
        vec![series("samples", &samples)?, series("update_fractions", &diags)?],
    ))
}

fn suite_output(kind: &'static str, seed: u64, out: pgkit::Result<SuiteOutput>) -> anyhow::Result<Output> {
    let out = out?;
    let meta = Metadata {
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        threads: rayon::current_num_threads(),
        started_unix_secs: 0,
        elapsed_secs: 0.0,
    };
    let bundle = ReportBundle::from_output(kind, seed, out, None, meta);
    Ok(Output {
        kind,
        summary: serde_json::to_value(&bundle)?,
        series: bundle.bodies.clone(),
        bundle: Some(bundle),
    })
}

fn minorize_exact(model: AnyModel, data: &Data, n: usize) -> anyhow::Result<Output> {
    let hmm = finite(model, "exact minorization")?;
    let ys: Vec<usize> = read_observations(&data.obs)?;
    let report = exact_report(&hmm, data.proposal, &ys, n, None)?;
    #[derive(Serialize)]
    struct Row {
        t: usize,
        b: f64,
    }
    let rows: Vec<Row> = report.b.iter().enumerate().map(|(t, &b)| Row { t, b }).collect();
    Ok(Output::plain("minorize-exact", serde_json::to_value(&report)?, vec![series("b", &rows)?]))
}

fn minorize_moments<M: StateSpaceModel>(m: &M, opts: MomentOptions, kind: ProposalKind, key: StreamKey) -> anyhow::Result<Output> {
    let est = estimate_moments(m, kind, &opts, key)?;
    #[derive(Serialize)]
    struct Row {
        samples: usize,
        running_mean: f64,
    }
    let rows: Vec<Row> = est.running_means.iter().map(|&(samples, running_mean)| Row { samples, running_mean }).collect();
    Ok(Output::plain("minorize-moments", serde_json::to_value(&est)?, vec![series("running_means", &rows)?]))
}

fn oracle_enumerate(model: AnyModel, data: &Data, n: usize) -> anyhow::Result<Output> {
    let hmm = finite(model, "enumeration")?;
    let ys: Vec<usize> = read_observations(&data.obs)?;
    let p = hmm_enumerate_pg(&hmm, data.proposal, &ys, n, DEFAULT_ENUMERATION_CAP)?;
    let k = hmm.num_states();
    let label = |code: usize| decode_path(code, k, ys.len()).iter().map(|x| x.to_string()).collect::<Vec<_>>().join("-");
    #[derive(Serialize)]
    struct Row {
        from: String,
        to: String,
        probability: f64,
    }
    let mut rows = Vec::with_capacity(p.size * p.size);
    for from in 0..p.size {
        for to in 0..p.size {
            rows.push(Row { from: label(from), to: label(to), probability: p.get(from, to) });
        }
    }
    Ok(Output::plain(
        "oracle-enumerate",
        json!({ "paths": p.size, "particles": n, "proposal": data.proposal }),
        vec![series("transition_matrix", &rows)?],
    ))
}

fn run_config(path: &Path, cli: &Cli) -> anyhow::Result<Output> {
    let mut cfg = ExperimentConfig::load(path)?;
    if cli.out.is_some() {
        cfg.out = cli.out.clone();
    }
    let bundle = run_experiment(&cfg)?;
    let written = cfg.out.is_some();
    let out = Output {
        kind: "run",
        summary: serde_json::to_value(&bundle)?,
        // already written by the experiment runner
        series: if written { vec![] } else { bundle.bodies.clone() },
        bundle: Some(bundle),
    };
    Ok(out)
}

fn dispatch(cli: &Cli) -> anyhow::Result<Output> {
    let key = StreamKey::new(cli.seed);
    let Some(command) = &cli.command else {
        let Some(path) = &cli.config else {
            bail!("give a subcommand or --config <file>; see --help");
        };
        return run_config(path, cli);
    };
    match command {
        Command::Simulate { model, len } => with_model!(&load_model(model)?, m => simulate(m, *len, key)),
        Command::Smc { command: SmcCommand::Run { data, particles, dump_particles } } => {
            with_model!(&load_model(&data.model)?, m => smc_run(m, data, *particles, *dump_particles, key))
        }
        Command::Pg { command } => match command {
            PgCommand::Run { data, particles, iterations, burn_in, thin, chains } => {
                with_model!(&load_model(&data.model)?, m => pg_run(m, data, *particles, *iterations, *burn_in, *thin, *chains, cli.seed))
            }
            PgCommand::InvarianceCheck { grid, no_lgss } => {
                let mut s = InvarianceSuite { grid: Some(EnumerationGrid::named(grid)?), ..Default::default() };
                if *no_lgss {
                    s.lgss = None;
                }
                suite_output("invariance", cli.seed, s.run(cli.seed, Deadline::unlimited()))
            }
        },
        Command::Minorize { command } => match command {
            MinorizeCommand::Exact { data, particles } => minorize_exact(load_model(&data.model)?, data, *particles),
            MinorizeCommand::Bounds { model, lambdas, ts, proposal } => {
                let mut s = MinorizeSuite::default();
                if let Some(p) = model {
                    s.hmm = finite(load_model(p)?, "the floor comparison")?.params();
                }
                if let Some(l) = lambdas {
                    s.lambdas = l.clone();
                }
                if let Some(t) = ts {
                    s.horizons = t.clone();
                }
                if let Some(p) = proposal {
                    s.proposals = vec![*p];
                }
                suite_output("minorize", cli.seed, s.run(cli.seed, Deadline::unlimited()))
            }
            MinorizeCommand::Moments { model, alpha, ell, t, samples, n_inner, proposal } => {
                let opts = MomentOptions { t: *t, ell: *ell, alpha: *alpha, samples: *samples, n_inner: *n_inner };
                with_model!(&load_model(model)?, m => minorize_moments(m, opts, *proposal, key))
            }
        },
        Command::Scaling {
            command:
                ScalingCommand::Sweep { model, ts, gamma, lambda, fixed, alpha, chains, iterations, n_cap, work_budget, proposal },
        } => {
            let rule = match (gamma, lambda, fixed) {
                (Some(g), _, _) => NRule::Power { gamma: *g },
                (_, Some(l), _) => NRule::Linear { lambda: *l },
                (_, _, Some(n)) => NRule::Fixed { n: *n },
                _ => bail!("give one of --gamma, --lambda or --fixed"),
            };
            if matches!(rule, NRule::Power { .. }) && alpha.is_none() {
                bail!("--gamma needs --alpha (the moment exponent) so that γ < α can be checked");
            }
            let config = ScalingConfig {
                rule,
                alpha: *alpha,
                ts: ts.clone(),
                chains: *chains,
                iterations: *iterations,
                n_cap: *n_cap,
                work_budget: *work_budget,
                proposal: *proposal,
                seed: cli.seed,
            };
            let mut out = SuiteOutput::default();
            let r = with_model!(&load_model(model)?, m => pgkit::experiment::run_scaling(m, &config, &mut out, Deadline::unlimited()));
            suite_output("scaling", cli.seed, r.map(|_| out))
        }
        Command::Oracle { command: OracleCommand::Enumerate { data, particles } } => {
            oracle_enumerate(load_model(&data.model)?, data, *particles)
        }
        Command::Run { config } => {
            let Some(path) = config.as_ref().or(cli.config.as_ref()) else {
                bail!("run needs --config <file>");
            };
            run_config(path, cli)
        }
    }
}

fn emit(cli: &Cli, out: &Output) -> anyhow::Result<()> {
    let summary = serde_json::to_string_pretty(&json!({ "command": out.kind, "seed": cli.seed, "result": out.summary }))?;
    match &cli.out {
        Some(dir) => {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            for s in &out.series {
                std::fs::write(dir.join(format!("{}.csv", s.name)), &s.body)?;
            }
            if out.kind != "run" {
                std::fs::write(dir.join("summary.json"), &summary)?;
            }
            println!("{summary}");
        }
        None => {
            for s in &out.series {
                if out.series.len() > 1 {
                    println!("# {}", s.name);
                }
                print!("{}", s.body);
            }
            eprintln!("{summary}");
        }
    }
    if let Some(b) = &out.bundle {
        for a in &b.assertions {
            eprintln!("{}", a.line());
        }
        if b.truncated {
            eprintln!("note: run truncated by its wall-clock budget");
        }
        if let Some(e) = &b.error {
            eprintln!("error: {e}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match dispatch(&cli).and_then(|out| emit(&cli, &out).map(|_| out)) {
        Ok(out) => match &out.bundle {
            Some(b) if !b.all_passed() => ExitCode::from(1),
            _ => ExitCode::SUCCESS,
        },
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
