//! Command-line front end for `stoqpimc`.
//!
//! Every subcommand reads a TOML model file, runs one estimator or
//! diagnostic and writes a JSON (or CSV) report to `--out` or stdout.
//! Exit codes: 0 success, 1 runtime failure, 2 invalid input, 3 budget
//! exhausted, 4 tolerance missed.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use stoqpimc::chain::{run, sample_csv_header, sample_csv_row, ChainState, JumpBudget};
use stoqpimc::diagnostics::{
    collect_traces, empirical_mixing, heuristic_mixing, jump_concentration_report,
    HeuristicMixingReport, JumpConcentrationReport, MixingReport, MIXING_MAX_STATES,
};
use stoqpimc::estimators::{
    default_burn_in, estimate_observable, estimate_observable_finite_difference,
    estimate_partition_function, EstimateReport, ObservableOptions, Resources, Targets,
};
use stoqpimc::mapping::{choose_trotter_slices, TrotterizedSystem};
use stoqpimc::models::{read_model_file, Model};
use stoqpimc::observables::{EnergyObservable, PauliSum};
use stoqpimc::oracle::{exact_log_partition, trotter_log_partition_of_terms};
use stoqpimc::report::{sig17, SCHEMA_VERSION};
use stoqpimc::Error;

/// Largest chain `oracle-compare` will diagonalize.
pub const ORACLE_COMPARE_MAX_N: usize = 10;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_BUDGET: i32 = 3;
pub const EXIT_TOLERANCE: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "stoqpimc",
    version,
    about = "Path-integral Monte Carlo for 1D stoquastic spin chains"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate the partition function Z_beta.
    EstimateZ(RunConfig),
    /// Estimate a thermal expectation value.
    EstimateObservable {
        #[command(flatten)]
        run: RunConfig,
        #[command(flatten)]
        obs: ObservableArgs,
    },
    /// Compare a PIMC estimate of Z with exact diagonalization.
    OracleCompare(RunConfig),
    /// Mixing and jump-concentration diagnostics.
    Diagnose {
        #[command(flatten)]
        run: RunConfig,
        #[command(flatten)]
        diag: DiagnoseArgs,
    },
    /// Dump raw chain samples as CSV.
    Sample {
        #[command(flatten)]
        run: RunConfig,
        #[command(flatten)]
        sample: SampleArgs,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Args)]
pub struct RunConfig {
    /// TOML model file.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub beta: f64,
    #[arg(long, default_value_t = 0.1)]
    pub delta_mult: f64,
    #[arg(long, default_value_t = 0.0)]
    pub delta_add: f64,
    #[arg(long, default_value_t = 0.05)]
    pub delta_fail: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of Trotter slices L (even); chosen automatically when absent.
    #[arg(long)]
    pub slices: Option<usize>,
    #[arg(long)]
    pub max_slices: Option<usize>,
    /// Parallel chains.
    #[arg(long)]
    pub chains: Option<usize>,
    /// Metropolis steps per chain before sampling (per schedule step for Z).
    #[arg(long)]
    pub burn_in: Option<u64>,
    /// Steps between retained samples; defaults to nL.
    #[arg(long)]
    pub thin: Option<u64>,
    /// Cap on samples per schedule step.
    #[arg(long)]
    pub max_samples: Option<u64>,
    /// Restrict worldlines to at most c beta ln n jumps.
    #[arg(long)]
    pub jump_budget_c: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

#[derive(Debug, Clone, Args)]
pub struct ObservableArgs {
    /// Built-in observable: `identity`, `energy`, `sigma-z J`, `sigma-x J` or
    /// `zz J K` (1-based sites).
    #[arg(long, conflicts_with = "observable_file")]
    pub observable: Option<String>,
    /// Pauli-sum file, one `coeff OP..` term per line.
    #[arg(long)]
    pub observable_file: Option<PathBuf>,
    /// Add `shift * I` to the observable.
    #[arg(long, default_value_t = 0.0)]
    pub shift: f64,
    /// Samples per chain.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Use two partition-function estimates instead of sampling `O`.
    #[arg(long)]
    pub finite_difference: bool,
    /// Accuracy parameter of the finite-difference path, in (0, 1/21].
    #[arg(long, default_value_t = 0.01)]
    pub fd_delta: f64,
}

#[derive(Debug, Clone, Args)]
pub struct DiagnoseArgs {
    /// Mixing accuracy for tau(epsilon).
    #[arg(long, default_value_t = 0.25)]
    pub epsilon: f64,
    /// Jump threshold `c beta ln n` used by the concentration report.
    #[arg(long, default_value_t = 4.0)]
    pub concentration_c: f64,
    /// Samples per chain for the heuristic and concentration reports.
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
}

#[derive(Debug, Clone, Args)]
pub struct SampleArgs {
    /// Samples per chain.
    #[arg(long, default_value_t = 100)]
    pub samples: usize,
    /// Append the hex-encoded lattice to every row.
    #[arg(long)]
    pub with_config: bool,
}

/// A failed command: exit code and message.
#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::BudgetExceeded(_) => EXIT_BUDGET,
            Error::NonErgodic | Error::ZeroDenominator { .. } => EXIT_FAILURE,
            _ => EXIT_INVALID,
        };
        Self::new(code, e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

/// Parses `args` (including the program name) and runs the command.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run_cli(cli),
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                EXIT_INVALID
            } else {
                EXIT_OK
            }
        }
    }
}

pub fn run_cli(cli: Cli) -> i32 {
    let result = match &cli.command {
        Command::EstimateZ(cfg) => cmd_estimate_z(cfg),
        Command::EstimateObservable { run, obs } => cmd_estimate_observable(run, obs),
        Command::OracleCompare(cfg) => cmd_oracle_compare(cfg),
        Command::Diagnose { run, diag } => cmd_diagnose(run, diag),
        Command::Sample { run, sample } => cmd_sample(run, sample),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("stoqpimc: {}", f.message);
            f.code
        }
    }
}

/// Worker count from `STOQPIMC_THREADS`, if set.
pub fn threads_from_env() -> Result<Option<usize>, Failure> {
    match std::env::var("STOQPIMC_THREADS") {
        Err(_) => Ok(None),
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Failure::new(
                EXIT_INVALID,
                format!("STOQPIMC_THREADS = {s:?} must be a positive integer"),
            )),
        },
    }
}

impl RunConfig {
    fn check(&self) -> CmdResult {
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Failure::new(
                EXIT_INVALID,
                format!("beta = {} must be finite and >= 0", self.beta),
            ));
        }
        for (name, v) in [
            ("delta-mult", self.delta_mult),
            ("delta-fail", self.delta_fail),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Failure::new(
                    EXIT_INVALID,
                    format!("{name} = {v} must lie in (0, 1)"),
                ));
            }
        }
        if !(self.delta_add >= 0.0 && self.delta_add < 1.0) {
            return Err(Failure::new(
                EXIT_INVALID,
                format!("delta-add = {} must lie in [0, 1)", self.delta_add),
            ));
        }
        if self.chains == Some(0) {
            return Err(Failure::new(EXIT_INVALID, "chains must be positive"));
        }
        Ok(())
    }

    fn load(&self) -> Result<Model, Failure> {
        self.check()?;
        let model = read_model_file(&self.model)?;
        model.validate()?;
        Ok(model)
    }

    pub fn targets(&self) -> Targets {
        Targets {
            delta_mult: self.delta_mult,
            delta_add: self.delta_add,
            delta_fail: self.delta_fail,
        }
    }

    pub fn resources(&self) -> Resources {
        let d = Resources::default();
        Resources {
            seed: self.seed,
            chains: self.chains.unwrap_or(d.chains),
            max_samples_per_step: self.max_samples.unwrap_or(d.max_samples_per_step),
            burn_in: self.burn_in,
            thin: self.thin,
            slices: self.slices,
            max_slices: self.max_slices.unwrap_or(d.max_slices),
            jump_budget_c: self.jump_budget_c,
            resample: d.resample,
        }
    }

    /// `--slices`, or the automatic Trotter choice used by `estimate-z`.
    fn slices_for(&self, model: &Model) -> Result<usize, Failure> {
        match self.slices {
            Some(l) => Ok(l),
            None => {
                let delta = (self.delta_mult / 4.0).min(1.0 / 21.0);
                let max = self.max_slices.unwrap_or(Resources::default().max_slices);
                Ok(choose_trotter_slices(model, self.beta, delta, max)?.slices)
            }
        }
    }

    fn emit(&self, text: &str) -> CmdResult {
        match &self.out {
            Some(path) => std::fs::write(path, text).map_err(|e| {
                Failure::new(
                    EXIT_FAILURE,
                    format!("cannot write {}: {e}", path.display()),
                )
            }),
            None => {
                let mut out = std::io::stdout().lock();
                out.write_all(text.as_bytes())
                    .and_then(|_| out.flush())
                    .map_err(|e| Failure::new(EXIT_FAILURE, format!("cannot write to stdout: {e}")))
            }
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<String, Failure> {
    let mut s = serde_json::to_string_pretty(value)
        .map_err(|e| Failure::new(EXIT_FAILURE, e.to_string()))?;
    s.push('\n');
    Ok(s)
}

fn g17(x: f64) -> String {
    stoqpimc::report::format_sig17(x)
}

pub fn cmd_estimate_z(cfg: &RunConfig) -> CmdResult {
    let model = cfg.load()?;
    let report = estimate_partition_function(&model, cfg.beta, cfg.targets(), &cfg.resources())?;
    let text = match cfg.format {
        Format::Json => to_json(&report)?,
        Format::Csv => {
            let mut s = String::from(
                "betaLo,betaHi,logRatio,logRatioBound,stdError,samples,maxM,violations\n",
            );
            for st in &report.steps {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},{},{}",
                    g17(st.beta_lo),
                    g17(st.beta_hi),
                    g17(st.log_ratio),
                    g17(st.log_ratio_bound),
                    g17(st.std_error),
                    st.samples,
                    g17(st.max_m),
                    st.violations
                );
            }
            s
        }
    };
    cfg.emit(&text)
}

enum Observable {
    Pauli(PauliSum),
    Energy(EnergyObservable),
}

fn parse_site(tok: Option<&str>, n: usize) -> Result<usize, Failure> {
    let s = tok.ok_or_else(|| Failure::new(EXIT_INVALID, "observable is missing a site index"))?;
    match s.parse::<usize>() {
        Ok(j) if (1..=n).contains(&j) => Ok(j - 1),
        _ => Err(Failure::new(
            EXIT_INVALID,
            format!("site {s:?} is outside 1..={n}"),
        )),
    }
}

fn parse_observable(args: &ObservableArgs, model: &Model) -> Result<Observable, Failure> {
    let n = model.n();
    let obs = if let Some(path) = &args.observable_file {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Failure::new(
                EXIT_INVALID,
                format!("cannot read observable file {}: {e}", path.display()),
            )
        })?;
        Observable::Pauli(PauliSum::parse(n, &text)?)
    } else {
        let desc = args
            .observable
            .as_deref()
            .ok_or_else(|| Failure::new(EXIT_INVALID, "give --observable or --observable-file"))?;
        let mut toks = desc.split_whitespace();
        let name = toks.next().unwrap_or("");
        let obs = match name {
            "identity" => Observable::Pauli(PauliSum::identity(n)),
            "energy" => Observable::Energy(EnergyObservable::new(model.local_terms())),
            "sigma-z" => Observable::Pauli(PauliSum::sigma_z(n, parse_site(toks.next(), n)?)?),
            "sigma-x" => Observable::Pauli(PauliSum::sigma_x(n, parse_site(toks.next(), n)?)?),
            "zz" | "zz-correlator" => {
                let j = parse_site(toks.next(), n)?;
                let k = parse_site(toks.next(), n)?;
                Observable::Pauli(PauliSum::zz(n, j, k)?)
            }
            _ => {
                return Err(Failure::new(
                    EXIT_INVALID,
                    format!("unknown observable {desc:?}"),
                ))
            }
        };
        if toks.next().is_some() {
            return Err(Failure::new(
                EXIT_INVALID,
                format!("trailing tokens in observable {desc:?}"),
            ));
        }
        obs
    };
    match obs {
        Observable::Pauli(p) => Ok(Observable::Pauli(p.shifted(args.shift))),
        Observable::Energy(_) if args.shift != 0.0 => Err(Failure::new(
            EXIT_INVALID,
            "--shift is not supported for the energy observable",
        )),
        e => Ok(e),
    }
}

#[derive(Serialize)]
struct ObservableSummary {
    observable: String,
    #[serde(flatten)]
    report: serde_json::Value,
}

pub fn cmd_estimate_observable(cfg: &RunConfig, args: &ObservableArgs) -> CmdResult {
    let model = cfg.load()?;
    let obs = parse_observable(args, &model)?;
    let label = match (&args.observable, &args.observable_file) {
        (_, Some(p)) => p.display().to_string(),
        (Some(s), None) => s.clone(),
        _ => String::new(),
    };
    let (value, std_error, body) = if args.finite_difference {
        let Observable::Pauli(p) = &obs else {
            return Err(Failure::new(
                EXIT_INVALID,
                "the finite-difference path needs a Pauli-sum observable",
            ));
        };
        let r = estimate_observable_finite_difference(
            &model,
            cfg.beta,
            p,
            args.fd_delta,
            cfg.targets(),
            &cfg.resources(),
        )?;
        (r.value, r.error_bound, serde_json::to_value(&r))
    } else {
        let d = ObservableOptions::default();
        let opts = ObservableOptions {
            seed: cfg.seed,
            chains: cfg.chains.unwrap_or(d.chains),
            samples_per_chain: args.samples.unwrap_or(d.samples_per_chain),
            burn_in: cfg.burn_in,
            thin: cfg.thin,
            slices: cfg.slices.unwrap_or(d.slices),
            delta_mult: cfg.delta_mult,
        };
        let r = match &obs {
            Observable::Pauli(p) => estimate_observable(&model, cfg.beta, p, &opts)?,
            Observable::Energy(e) => estimate_observable(&model, cfg.beta, e, &opts)?,
        };
        (r.value, r.std_error, serde_json::to_value(&r))
    };
    let body = body.map_err(|e| Failure::new(EXIT_FAILURE, e.to_string()))?;
    let text = match cfg.format {
        Format::Json => to_json(&ObservableSummary {
            observable: label,
            report: body,
        })?,
        Format::Csv => format!(
            "observable,value,stdError\n{label},{},{}\n",
            g17(value),
            g17(std_error)
        ),
    };
    cfg.emit(&text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TrotterRow {
    pub slices: usize,
    #[serde(with = "sig17")]
    pub log_z: f64,
    #[serde(with = "sig17")]
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct OracleCompareReport {
    pub schema_version: u32,
    pub family: String,
    pub n: usize,
    #[serde(with = "sig17")]
    pub beta: f64,
    #[serde(with = "sig17")]
    pub exact_log_z: f64,
    #[serde(with = "sig17")]
    pub exact_z: f64,
    pub slices: usize,
    #[serde(with = "sig17")]
    pub trotter_log_z: f64,
    #[serde(with = "sig17")]
    pub trotter_z: f64,
    #[serde(with = "sig17")]
    pub trotter_rel_error: f64,
    #[serde(with = "sig17")]
    pub estimate_log_z: f64,
    #[serde(with = "sig17")]
    pub estimate_z: f64,
    /// `|Z_hat / Z - 1|`.
    #[serde(with = "sig17")]
    pub estimate_rel_error: f64,
    /// The multiplicative target `deltaMult`.
    #[serde(with = "sig17")]
    pub tolerance: f64,
    pub within_tolerance: bool,
    /// Trotter `ln Z` at a few slice counts, for the model as sampled.
    pub trotter_scan: Vec<TrotterRow>,
    pub estimate: EstimateReport,
}

fn rel_error(log_a: f64, log_b: f64) -> f64 {
    (log_a - log_b).exp_m1().abs()
}

/// Runs the estimator next to the exact and Trotter oracles.
pub fn oracle_compare(cfg: &RunConfig) -> Result<OracleCompareReport, Failure> {
    cfg.check()?;
    let model = read_model_file(&cfg.model)?;
    if model.n() > ORACLE_COMPARE_MAX_N {
        return Err(Failure::new(
            EXIT_INVALID,
            format!(
                "n = {} exceeds the oracle cap {ORACLE_COMPARE_MAX_N}; use `stoqpimc estimate-z` instead",
                model.n()
            ),
        ));
    }
    model.validate()?;
    let exact = exact_log_partition(&model, cfg.beta)?;
    let estimate = estimate_partition_function(&model, cfg.beta, cfg.targets(), &cfg.resources())?;
    let (sampled, _) = model.with_ergodic_field(cfg.delta_mult);
    let terms = sampled.local_terms();
    let trotter = trotter_log_partition_of_terms(&terms, cfg.beta, estimate.slices)?;
    let mut scan_slices = vec![4, 8, 16, 32];
    if !scan_slices.contains(&estimate.slices) {
        scan_slices.push(estimate.slices);
        scan_slices.sort_unstable();
    }
    let trotter_scan = scan_slices
        .into_iter()
        .map(|l| {
            let log_z = trotter_log_partition_of_terms(&terms, cfg.beta, l)?;
            Ok(TrotterRow {
                slices: l,
                log_z,
                rel_error: rel_error(log_z, exact),
            })
        })
        .collect::<Result<Vec<_>, Error>>()?;
    let estimate_rel_error = rel_error(estimate.log_value, exact);
    Ok(OracleCompareReport {
        schema_version: SCHEMA_VERSION,
        family: model.family().into(),
        n: model.n(),
        beta: cfg.beta,
        exact_log_z: exact,
        exact_z: exact.exp(),
        slices: estimate.slices,
        trotter_log_z: trotter,
        trotter_z: trotter.exp(),
        trotter_rel_error: rel_error(trotter, exact),
        estimate_log_z: estimate.log_value,
        estimate_z: estimate.value,
        estimate_rel_error,
        tolerance: cfg.delta_mult,
        within_tolerance: estimate_rel_error <= cfg.delta_mult,
        trotter_scan,
        estimate,
    })
}

pub fn cmd_oracle_compare(cfg: &RunConfig) -> CmdResult {
    let r = oracle_compare(cfg)?;
    let text = match cfg.format {
        Format::Json => to_json(&r)?,
        Format::Csv => {
            let mut s = String::from("quantity,slices,logZ,Z,relError\n");
            let _ = writeln!(s, "exact,,{},{},0", g17(r.exact_log_z), g17(r.exact_z));
            for row in &r.trotter_scan {
                let _ = writeln!(
                    s,
                    "trotter,{},{},{},{}",
                    row.slices,
                    g17(row.log_z),
                    g17(row.log_z.exp()),
                    g17(row.rel_error)
                );
            }
            let _ = writeln!(
                s,
                "pimc,{},{},{},{}",
                r.slices,
                g17(r.estimate_log_z),
                g17(r.estimate_z),
                g17(r.estimate_rel_error)
            );
            s
        }
    };
    cfg.emit(&text)?;
    if r.within_tolerance {
        Ok(())
    } else {
        Err(Failure::new(
            EXIT_TOLERANCE,
            format!(
                "relative error {} exceeds deltaMult = {}",
                r.estimate_rel_error, r.tolerance
            ),
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DiagnoseReport {
    pub schema_version: u32,
    /// `"exact"` when the transition matrix was built, else `"heuristic"`.
    pub label: String,
    pub family: String,
    pub n: usize,
    #[serde(with = "sig17")]
    pub beta: f64,
    pub slices: usize,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mixing: Option<MixingReport>,
    pub heuristic: HeuristicMixingReport,
    pub jump_concentration: JumpConcentrationReport,
}

pub fn diagnose(cfg: &RunConfig, args: &DiagnoseArgs) -> Result<DiagnoseReport, Failure> {
    let model = cfg.load()?;
    if !(args.epsilon > 0.0 && args.epsilon < 1.0) {
        return Err(Failure::new(
            EXIT_INVALID,
            format!("epsilon = {} must lie in (0, 1)", args.epsilon),
        ));
    }
    let (sampled, _) = model.with_ergodic_field(cfg.delta_mult);
    let l = cfg.slices_for(&sampled)?;
    let system = TrotterizedSystem::new(&sampled, cfg.beta, l)?;
    let n = system.n();
    let budget = cfg
        .jump_budget_c
        .map(|c| JumpBudget::from_beta(cfg.beta, n, c));
    let tiny = (n * l) < usize::BITS as usize && (1usize << (n * l)) <= MIXING_MAX_STATES;
    let mixing = if tiny {
        Some(empirical_mixing(&system, args.epsilon, budget.as_ref())?)
    } else {
        None
    };
    let burn_in = cfg.burn_in.unwrap_or_else(|| default_burn_in(n, l));
    let thin = cfg.thin.unwrap_or((n * l) as u64);
    let chains = cfg.chains.unwrap_or(8);
    let traces = collect_traces(
        &system,
        cfg.seed,
        chains,
        burn_in,
        args.samples,
        thin,
        budget.as_ref(),
    )?;
    let samples: Vec<Vec<usize>> = traces.jumps.iter().flatten().cloned().collect();
    Ok(DiagnoseReport {
        schema_version: SCHEMA_VERSION,
        label: if mixing.is_some() {
            "exact"
        } else {
            "heuristic"
        }
        .into(),
        family: model.family().into(),
        n,
        beta: cfg.beta,
        slices: l,
        seed: cfg.seed,
        mixing,
        heuristic: heuristic_mixing(&traces, burn_in, thin),
        jump_concentration: jump_concentration_report(&samples, cfg.beta, n, args.concentration_c),
    })
}

pub fn cmd_diagnose(cfg: &RunConfig, args: &DiagnoseArgs) -> CmdResult {
    let r = diagnose(cfg, args)?;
    let text = match cfg.format {
        Format::Json => to_json(&r)?,
        Format::Csv => {
            let mut s = String::from("worldline,count,frequency,stdError,violation\n");
            for w in &r.jump_concentration.worldlines {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{}",
                    w.worldline,
                    w.count,
                    g17(w.frequency),
                    g17(w.std_error),
                    w.violation
                );
            }
            s
        }
    };
    cfg.emit(&text)
}

pub fn cmd_sample(cfg: &RunConfig, args: &SampleArgs) -> CmdResult {
    if cfg.format != Format::Csv {
        return Err(Failure::new(
            EXIT_INVALID,
            "sample writes CSV only; pass --format csv",
        ));
    }
    let model = cfg.load()?;
    let (sampled, _) = model.with_ergodic_field(cfg.delta_mult);
    let l = cfg.slices_for(&sampled)?;
    let system = TrotterizedSystem::new(&sampled, cfg.beta, l)?;
    let n = system.n();
    let budget = cfg
        .jump_budget_c
        .map(|c| JumpBudget::from_beta(cfg.beta, n, c));
    let burn_in = cfg.burn_in.unwrap_or_else(|| default_burn_in(n, l));
    let thin = cfg.thin.unwrap_or((n * l) as u64);
    let chains = cfg.chains.unwrap_or(1);
    let blocks = (0..chains as u64)
        .into_par_iter()
        .map(|c| {
            let mut st = ChainState::from_seed(&system, cfg.seed, c)?;
            run(&mut st, &system, burn_in, budget.as_ref())?;
            let mut rows = String::new();
            for _ in 0..args.samples {
                run(&mut st, &system, thin, budget.as_ref())?;
                let _ = writeln!(rows, "{c},{}", sample_csv_row(&st, args.with_config));
            }
            Ok(rows)
        })
        .collect::<Result<Vec<String>, Error>>()?;
    let mut text = format!("chain,{}\n", sample_csv_header(n, args.with_config));
    for b in blocks {
        text.push_str(&b);
    }
    cfg.emit(&text)
}
