//! Partition-function and observable estimators.
//!
//! `Z(beta)` is written as `2^n` times a telescoping product of ratios
//! `Z(beta_i) / Z(beta_{i-1})` over a uniform grid. Each ratio is the mean
//! of `w_{beta_i}(z) / w_{beta_{i-1}}(z)` over samples of the lower
//! temperature. The first step starts from `beta_0 = 0`, where only frozen
//! configurations carry weight, so it is sampled uniformly from that set.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain::{chain_rng, run, sample_frozen_uniform, ChainState, JumpBudget};
use crate::diagnostics::integrated_autocorrelation_time;
use crate::error::{Error, Result};
use crate::linalg::{log_sum_exp, sorted_eigenvalues};
use crate::mapping::{choose_trotter_slices_for_terms, SpinConfiguration, TrotterizedSystem};
use crate::models::{LocalTerms, Model};
use crate::observables::{Flips, Pauli, PauliSum, RowComputable};
use crate::report::{sig17, sig17_vec, SCHEMA_VERSION};

/// Ratios with `M(z)` above `1 + M_TOLERANCE` count as bound violations.
pub const M_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct TemperatureSchedule {
    pub betas: Vec<f64>,
    /// `c_i` with `ln w_{beta_i}(z) - ln w_{beta_{i-1}}(z) <= c_i` for every
    /// `z` in the support of the lower temperature. Empty until attached.
    pub per_step_log_ratio_bound: Vec<f64>,
}

impl TemperatureSchedule {
    pub fn k(&self) -> usize {
        self.betas.len() - 1
    }
}

/// `k = max(1, ceil(b ln(2 + b)))` with `b = beta * norm_bound`.
pub fn schedule_length(beta: f64, norm_bound: f64) -> usize {
    let b = beta * norm_bound;
    if !(b > 0.0) {
        return 1;
    }
    ((b * (2.0 + b).ln()).ceil() as usize).max(1)
}

pub fn build_schedule(beta: f64, norm_bound: f64) -> TemperatureSchedule {
    let k = schedule_length(beta, norm_bound);
    let betas = (0..=k)
        .map(|i| {
            if i == k {
                beta
            } else {
                beta * i as f64 / k as f64
            }
        })
        .collect();
    TemperatureSchedule {
        betas,
        per_step_log_ratio_bound: Vec::new(),
    }
}

/// Supremum of `ln w_hi(z) - ln w_lo(z)` over the support of `lo`, bounded
/// factor by factor.
pub fn step_log_ratio_bound(lo: &TrotterizedSystem, hi: &TrotterizedSystem) -> f64 {
    let dbeta = hi.beta() - lo.beta();
    let mut c = dbeta * lo.terms().max_negative_diagonal();
    let half = (lo.slices() / 2) as f64;
    for p in 0..2 {
        for (f_lo, f_hi) in lo.layer(p).iter().zip(hi.layer(p)) {
            let d = f_lo.dim();
            let mut worst = f64::NEG_INFINITY;
            for r in 0..d {
                for col in 0..d {
                    let a = f_lo.log[r][col];
                    if a > f64::NEG_INFINITY {
                        worst = worst.max(f_hi.log[r][col] - a);
                    }
                }
            }
            c += half * worst;
        }
    }
    c.max(0.0)
}

/// `t = ceil(2 ln(2 / delta_fail) / delta^2)`.
pub fn hoeffding_samples(delta: f64, delta_fail: f64) -> u64 {
    let t = (2.0 * (2.0 / delta_fail).ln() / (delta * delta)).ceil();
    if t >= u64::MAX as f64 {
        u64::MAX
    } else {
        t as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RatioEstimate {
    #[serde(with = "sig17")]
    pub beta_lo: f64,
    #[serde(with = "sig17")]
    pub beta_hi: f64,
    #[serde(with = "sig17")]
    pub log_ratio: f64,
    /// `c` such that `M(z) = e^{-c} w_hi / w_lo <= 1`.
    #[serde(with = "sig17")]
    pub log_ratio_bound: f64,
    /// Standard error of `log_ratio` (delta method).
    #[serde(with = "sig17")]
    pub std_error: f64,
    pub samples: u64,
    #[serde(with = "sig17")]
    pub max_m: f64,
    pub violations: u64,
    pub zero_support: u64,
    /// Largest integrated autocorrelation time of `ln w_lo` across chains.
    #[serde(with = "sig17")]
    pub max_iat: f64,
}

impl RatioEstimate {
    pub fn ratio(&self) -> f64 {
        self.log_ratio.exp()
    }
}

/// Estimates `Z(hi) / Z(lo)` from `samples_per_chain` draws per chain.
///
/// Chains are assumed equilibrated at `lo` and advance `thin` steps between
/// draws. At `beta_lo = 0` the draws are frozen-uniform configurations taken
/// from each chain's generator and the chains do not move.
pub fn estimate_ratio(
    lo: &TrotterizedSystem,
    hi: &TrotterizedSystem,
    chains: &mut [ChainState],
    samples_per_chain: usize,
    thin: u64,
    budget: Option<&JumpBudget>,
) -> Result<RatioEstimate> {
    if lo.n() != hi.n() || lo.slices() != hi.slices() {
        return Err(Error::DimensionMismatch {
            expected: format!("{}x{} lattice", lo.slices(), lo.n()),
            got: format!("{}x{}", hi.slices(), hi.n()),
        });
    }
    if hi.beta() < lo.beta() {
        return Err(Error::InvalidArgument(
            "ratio steps must go up in beta".into(),
        ));
    }
    let c = step_log_ratio_bound(lo, hi);
    let frozen = lo.beta() == 0.0;
    let per_chain: Vec<Result<(Vec<f64>, Vec<f64>)>> = chains
        .par_iter_mut()
        .map(|st| {
            let mut diffs = Vec::with_capacity(samples_per_chain);
            let mut trace = Vec::with_capacity(samples_per_chain);
            for _ in 0..samples_per_chain {
                let (lw_lo, lw_hi) = if frozen {
                    let z = sample_frozen_uniform(lo.n(), lo.slices(), st.rng_mut());
                    (lo.log_weight(&z)?, hi.log_weight(&z)?)
                } else {
                    run(st, lo, thin, budget)?;
                    (lo.log_weight(st.config())?, hi.log_weight(st.config())?)
                };
                diffs.push(lw_hi - lw_lo);
                trace.push(lw_lo);
            }
            Ok((diffs, trace))
        })
        .collect();
    let mut diffs = Vec::new();
    let mut max_iat: f64 = 1.0;
    for r in per_chain {
        let (d, trace) = r?;
        if !frozen {
            max_iat = max_iat.max(integrated_autocorrelation_time(&trace));
        }
        diffs.extend(d);
    }
    if diffs.is_empty() {
        return Err(Error::InvalidArgument(
            "at least one sample is required".into(),
        ));
    }
    let count = diffs.len() as f64;
    let lse = log_sum_exp(&diffs);
    let log_ratio = lse - count.ln();
    let zero_support = diffs.iter().filter(|&&d| d == f64::NEG_INFINITY).count() as u64;
    let max_d = diffs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let violations = diffs
        .iter()
        .filter(|&&d| d - c > M_TOLERANCE.ln_1p())
        .count() as u64;
    // Relative spread of the ratios, computed on a shifted scale.
    let scaled: Vec<f64> = diffs.iter().map(|&d| (d - max_d).exp()).collect();
    let mean = scaled.iter().sum::<f64>() / count;
    let var = scaled.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (count - 1.0).max(1.0);
    let std_error = if mean > 0.0 {
        (var / count).sqrt() / mean
    } else {
        f64::INFINITY
    };
    Ok(RatioEstimate {
        beta_lo: lo.beta(),
        beta_hi: hi.beta(),
        log_ratio,
        log_ratio_bound: c,
        std_error,
        samples: diffs.len() as u64,
        max_m: (max_d - c).exp(),
        violations,
        zero_support,
        max_iat,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Targets {
    pub delta_mult: f64,
    pub delta_add: f64,
    pub delta_fail: f64,
}

impl Targets {
    fn check(&self) -> Result<()> {
        if !(self.delta_mult > 0.0 && self.delta_mult < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "deltaMult = {} must lie in (0, 1)",
                self.delta_mult
            )));
        }
        if !(self.delta_fail > 0.0 && self.delta_fail < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "deltaFail = {} must lie in (0, 1)",
                self.delta_fail
            )));
        }
        if !(self.delta_add >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "deltaAdd = {} must be >= 0",
                self.delta_add
            )));
        }
        Ok(())
    }
}

impl Default for Targets {
    fn default() -> Self {
        Self {
            delta_mult: 0.1,
            delta_add: 0.0,
            delta_fail: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Resources {
    pub seed: u64,
    pub chains: usize,
    /// Practical cap on samples per schedule step; the Hoeffding count is
    /// used when it is smaller.
    pub max_samples_per_step: u64,
    pub burn_in: Option<u64>,
    pub thin: Option<u64>,
    pub slices: Option<usize>,
    pub max_slices: usize,
    /// Run the restricted chain with `2B = c beta ln n` when set.
    pub jump_budget_c: Option<f64>,
    /// Resample chain configurations by their incremental weight between
    /// schedule steps.
    pub resample: bool,
}

impl Default for Resources {
    fn default() -> Self {
        Self {
            seed: 0,
            chains: 4096,
            max_samples_per_step: 1 << 16,
            burn_in: None,
            thin: None,
            slices: None,
            max_slices: 1 << 14,
            jump_budget_c: None,
            resample: true,
        }
    }
}

/// Stream of the master seed reserved for population resampling.
pub const RESAMPLE_STREAM: u64 = u64::MAX;

/// Systematic resampling of the chain configurations with weights
/// `w_hi / w_lo`, so that chains entering the next step start close to
/// `pi_hi` even where worldline flips are rare. Generators stay with their
/// chains. Returns the effective sample size of the weights as a fraction
/// of the population.
fn resample_chains(
    lo: &TrotterizedSystem,
    hi: &TrotterizedSystem,
    chains: &mut [ChainState],
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<f64> {
    let mut logs = Vec::with_capacity(chains.len());
    for st in chains.iter() {
        logs.push(hi.log_weight(st.config())? - lo.log_weight(st.config())?);
    }
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        return Ok(0.0);
    }
    let weights: Vec<f64> = logs.iter().map(|&d| (d - top).exp()).collect();
    let total: f64 = weights.iter().sum();
    let m = chains.len();
    let ess = total * total / (m as f64 * weights.iter().map(|w| w * w).sum::<f64>());
    let u: f64 = rng.gen::<f64>() / m as f64;
    let mut picks = Vec::with_capacity(m);
    let (mut acc, mut idx) = (weights[0] / total, 0);
    for i in 0..m {
        let target = u + i as f64 / m as f64;
        while acc < target && idx + 1 < m {
            idx += 1;
            acc += weights[idx] / total;
        }
        picks.push(idx);
    }
    let old: Vec<ChainState> = chains.to_vec();
    for (st, &p) in chains.iter_mut().zip(&picks) {
        st.adopt(&old[p]);
    }
    Ok(ess)
}

/// Burns `chains` in at `system` for `steps` steps each.
pub fn equilibrate(
    system: &TrotterizedSystem,
    chains: &mut [ChainState],
    steps: u64,
    budget: Option<&JumpBudget>,
) -> Result<()> {
    chains.par_iter_mut().try_for_each(|st| {
        st.rebind(system)?;
        run(st, system, steps, budget)
    })
}

/// Carries frozen-uniform chains up the uniform schedule to the temperature
/// of `system`, resampling and burning in at every grid point. Returns the
/// smallest effective-sample fraction seen while resampling.
pub fn anneal_chains(
    system: &TrotterizedSystem,
    norm_bound: f64,
    chains: &mut [ChainState],
    burn_in: u64,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<f64> {
    let schedule = build_schedule(system.beta(), norm_bound);
    let mut prev = system.with_beta(0.0)?;
    let mut min_ess = 1.0f64;
    for &b in &schedule.betas[1..] {
        let cur = system.with_beta(b)?;
        min_ess = min_ess.min(resample_chains(&prev, &cur, chains, rng)?);
        equilibrate(&cur, chains, burn_in, None)?;
        prev = cur;
    }
    Ok(min_ess)
}

/// `max(10 nL ln(nL), 1)`.
pub fn default_burn_in(n: usize, l: usize) -> u64 {
    let nl = (n * l) as f64;
    ((10.0 * nl * nl.ln()).ceil() as u64).max(1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ErrorBudget {
    /// `ln(1 + deltaMult)`.
    #[serde(with = "sig17")]
    pub total_log: f64,
    #[serde(with = "sig17")]
    pub trotter: f64,
    #[serde(with = "sig17")]
    pub bias: f64,
    #[serde(with = "sig17")]
    pub sampling: f64,
    /// Hoeffding tolerance on the mean of `M` for each ratio,
    /// `deltaMult / (4k)`.
    #[serde(with = "sig17")]
    pub per_ratio: f64,
    #[serde(with = "sig17")]
    pub per_ratio_fail: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EstimateDiagnostics {
    pub m_violations: u64,
    #[serde(with = "sig17")]
    pub max_m: f64,
    pub zero_support: u64,
    #[serde(with = "sig17")]
    pub acceptance_rate: f64,
    #[serde(with = "sig17")]
    pub max_log_weight_iat: f64,
    /// Smallest effective sample size of the resampling weights, as a
    /// fraction of the chains. Small values mean a few ancestors carry the
    /// population. A value near 1 does not rule out configurations the
    /// chains never reached.
    #[serde(with = "sig17")]
    pub min_resample_ess: f64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EstimateReport {
    pub schema_version: u32,
    pub family: String,
    pub n: usize,
    #[serde(with = "sig17")]
    pub beta: f64,
    #[serde(with = "sig17")]
    pub value: f64,
    #[serde(with = "sig17")]
    pub log_value: f64,
    #[serde(with = "sig17")]
    pub delta_mult: f64,
    #[serde(with = "sig17")]
    pub delta_add: f64,
    #[serde(with = "sig17")]
    pub delta_fail: f64,
    pub slices: usize,
    pub slice_method: String,
    #[serde(with = "sig17")]
    pub trotter_change: f64,
    #[serde(with = "sig17")]
    pub fictitious_field: f64,
    /// `beta * n * fictitious field`, the shift it can cause in `ln Z`.
    #[serde(with = "sig17")]
    pub fictitious_log_z_bound: f64,
    pub schedule_length: usize,
    #[serde(with = "sig17_vec")]
    pub betas: Vec<f64>,
    pub samples_per_step: u64,
    /// Samples per step the Hoeffding bound asks for.
    pub hoeffding_samples_per_step: u64,
    /// Whether every step drew at least the Hoeffding count.
    pub certified: bool,
    /// Steps per chain run at each grid point before sampling.
    pub burn_in: u64,
    pub steps_between_samples: u64,
    pub chains: usize,
    pub seed: u64,
    /// ChaCha8 stream ids used under `seed`, one per chain.
    pub chain_streams: Vec<u64>,
    pub jump_cap: Option<usize>,
    pub error_budget: ErrorBudget,
    pub steps: Vec<RatioEstimate>,
    pub diagnostics: EstimateDiagnostics,
}

/// Estimates `Z_beta` of `model` to multiplicative accuracy `deltaMult`.
pub fn estimate_partition_function(
    model: &Model,
    beta: f64,
    targets: Targets,
    resources: &Resources,
) -> Result<EstimateReport> {
    model.validate()?;
    let (with_field, field) = model.with_ergodic_field(targets.delta_mult);
    estimate_partition_of_terms(
        with_field.local_terms(),
        with_field.norm_upper_bound(),
        model.family(),
        field,
        beta,
        targets,
        resources,
    )
}

/// [`estimate_partition_function`] for an already lowered Hamiltonian.
pub fn estimate_partition_of_terms(
    terms: LocalTerms,
    norm_bound: f64,
    family: &str,
    fictitious_field: f64,
    beta: f64,
    targets: Targets,
    resources: &Resources,
) -> Result<EstimateReport> {
    targets.check()?;
    terms.check_stoquastic()?;
    if !(beta >= 0.0) || !beta.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "beta = {beta} must be finite and >= 0"
        )));
    }
    if resources.chains == 0 {
        return Err(Error::InvalidArgument(
            "at least one chain is required".into(),
        ));
    }
    let n = terms.n;
    let total_log = targets.delta_mult.ln_1p();
    let trotter_delta = (targets.delta_mult / 4.0).min(1.0 / 21.0);

    let (slices, slice_method, trotter_change) = match resources.slices {
        Some(l) => (l, "fixed".to_string(), f64::NAN),
        None if beta == 0.0 => (2, "exact".to_string(), 0.0),
        None => {
            let c = choose_trotter_slices_for_terms(
                &terms,
                norm_bound,
                beta,
                trotter_delta,
                resources.max_slices,
            )?;
            (c.slices, c.method.to_string(), c.observed_change)
        }
    };
    let schedule = if beta == 0.0 {
        TemperatureSchedule {
            betas: vec![0.0],
            per_step_log_ratio_bound: Vec::new(),
        }
    } else {
        build_schedule(beta, norm_bound)
    };
    let k = schedule.betas.len().saturating_sub(1).max(1);
    let per_ratio = targets.delta_mult / (4.0 * k as f64);
    let per_ratio_fail = targets.delta_fail / k as f64;
    let error_budget = ErrorBudget {
        total_log,
        trotter: trotter_delta,
        bias: total_log / 4.0,
        sampling: total_log / 2.0,
        per_ratio,
        per_ratio_fail,
    };
    let thin = resources.thin.unwrap_or((n * slices) as u64);
    let burn_in = resources
        .burn_in
        .unwrap_or_else(|| default_burn_in(n, slices));
    let chain_streams: Vec<u64> = (0..resources.chains as u64).collect();
    let budget = resources
        .jump_budget_c
        .map(|c| JumpBudget::from_beta(beta, n, c));

    let mut report = EstimateReport {
        schema_version: SCHEMA_VERSION,
        family: family.to_string(),
        n,
        beta,
        value: 0.0,
        log_value: n as f64 * std::f64::consts::LN_2,
        delta_mult: targets.delta_mult,
        delta_add: targets.delta_add,
        delta_fail: targets.delta_fail,
        slices,
        slice_method,
        trotter_change,
        fictitious_field,
        fictitious_log_z_bound: beta * n as f64 * fictitious_field,
        schedule_length: k,
        betas: schedule.betas.clone(),
        samples_per_step: 0,
        hoeffding_samples_per_step: 0,
        certified: true,
        burn_in,
        steps_between_samples: thin,
        chains: resources.chains,
        seed: resources.seed,
        chain_streams: chain_streams.clone(),
        jump_cap: budget.map(|b| b.cap()),
        error_budget,
        steps: Vec::new(),
        diagnostics: EstimateDiagnostics {
            m_violations: 0,
            max_m: 0.0,
            zero_support: 0,
            acceptance_rate: 0.0,
            max_log_weight_iat: 1.0,
            min_resample_ess: 1.0,
            warnings: Vec::new(),
        },
    };
    if beta == 0.0 {
        report.value = report.log_value.exp();
        return Ok(report);
    }

    let systems = schedule
        .betas
        .iter()
        .map(|&b| TrotterizedSystem::from_terms(terms.clone(), b, slices))
        .collect::<Result<Vec<_>>>()?;
    let needed = hoeffding_samples(per_ratio, per_ratio_fail);
    let samples_per_step = needed
        .min(resources.max_samples_per_step)
        .max(resources.chains as u64);
    let per_chain = samples_per_step.div_ceil(resources.chains as u64) as usize;
    report.hoeffding_samples_per_step = needed;
    report.samples_per_step = per_chain as u64 * resources.chains as u64;
    report.certified = report.samples_per_step >= needed;

    let mut chains = chain_streams
        .iter()
        .map(|&s| ChainState::from_seed(&systems[1], resources.seed, s))
        .collect::<Result<Vec<_>>>()?;
    let mut resample_rng = chain_rng(resources.seed, RESAMPLE_STREAM);
    let mut log_value = report.log_value;
    for step in 1..systems.len() {
        let (lo, hi) = (&systems[step - 1], &systems[step]);
        if resources.resample && step > 1 {
            let ess = resample_chains(&systems[step - 2], lo, &mut chains, &mut resample_rng)?;
            let d = &mut report.diagnostics;
            d.min_resample_ess = d.min_resample_ess.min(ess);
        }
        if lo.beta() > 0.0 {
            equilibrate(lo, &mut chains, burn_in, budget.as_ref())?;
        }
        let est = estimate_ratio(lo, hi, &mut chains, per_chain, thin, budget.as_ref())?;
        log_value += est.log_ratio;
        let d = &mut report.diagnostics;
        d.m_violations += est.violations;
        d.max_m = d.max_m.max(est.max_m);
        d.zero_support += est.zero_support;
        d.max_log_weight_iat = d.max_log_weight_iat.max(est.max_iat);
        report.steps.push(est);
    }
    let (acc, steps) = chains
        .iter()
        .fold((0, 0), |(a, s), c| (a + c.accepted(), s + c.steps()));
    let d = &mut report.diagnostics;
    d.acceptance_rate = if steps > 0 {
        acc as f64 / steps as f64
    } else {
        0.0
    };
    if d.m_violations > 0 {
        d.warnings.push(format!(
            "{} sampled ratios exceeded the step bound",
            d.m_violations
        ));
    }
    if d.max_log_weight_iat > 3.0 {
        d.warnings.push(format!(
            "log-weight autocorrelation time {:.1} samples: draws are strongly correlated, consider a larger --burn-in or thinning",
            d.max_log_weight_iat
        ));
    }
    if !report.certified {
        d.warnings.push(format!(
            "{} samples per step drawn; the Hoeffding bound asks for {}",
            report.samples_per_step, needed
        ));
    }
    report.log_value = log_value;
    report.value = log_value.exp();
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ObservableEstimate {
    #[serde(with = "sig17")]
    pub value: f64,
    #[serde(with = "sig17")]
    pub std_error: f64,
    pub samples: u64,
}

/// Mean and batch-means standard error over per-chain series.
fn summarize(series: &[Vec<f64>]) -> ObservableEstimate {
    let all: Vec<f64> = series.iter().flatten().copied().collect();
    let count = all.len();
    let value = all.iter().sum::<f64>() / count.max(1) as f64;
    let mut batches = Vec::new();
    for s in series {
        let per = (s.len() / 10).max(1);
        for chunk in s.chunks(per) {
            if chunk.len() == per {
                batches.push(chunk.iter().sum::<f64>() / per as f64);
            }
        }
    }
    let std_error = if batches.len() >= 2 {
        let m = batches.iter().sum::<f64>() / batches.len() as f64;
        let v = batches.iter().map(|b| (b - m).powi(2)).sum::<f64>() / (batches.len() - 1) as f64;
        (v / batches.len() as f64).sqrt()
    } else {
        f64::INFINITY
    };
    ObservableEstimate {
        value,
        std_error,
        samples: count as u64,
    }
}

fn sample_series<F>(
    system: &TrotterizedSystem,
    chains: &mut [ChainState],
    samples_per_chain: usize,
    thin: u64,
    f: F,
) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&ChainState) -> Result<f64> + Sync,
{
    chains
        .par_iter_mut()
        .map(|st| {
            let mut out = Vec::with_capacity(samples_per_chain);
            for _ in 0..samples_per_chain {
                run(st, system, thin, None)?;
                out.push(f(st)?);
            }
            Ok(out)
        })
        .collect()
}

/// Mean of `O(z_i)` averaged over all slices; exact for the Trotterized
/// thermal state by cyclic symmetry of the weights.
pub fn estimate_diagonal_observable(
    system: &TrotterizedSystem,
    obs: &dyn RowComputable,
    chains: &mut [ChainState],
    samples_per_chain: usize,
    thin: u64,
) -> Result<ObservableEstimate> {
    if !obs.is_diagonal() {
        return Err(Error::InvalidObservable(
            "the diagonal estimator needs a diagonal observable".into(),
        ));
    }
    if obs.n() != system.n() {
        return Err(Error::LengthMismatch(obs.n(), system.n()));
    }
    let series = sample_series(system, chains, samples_per_chain, thin, |st| {
        let z = st.config();
        Ok(diagonal_estimate(obs, z))
    })?;
    Ok(summarize(&series))
}

/// `O` at every slice of `z`, averaged.
pub fn diagonal_estimate(obs: &dyn RowComputable, z: &SpinConfiguration) -> f64 {
    let l = z.slices();
    (0..l).map(|i| obs.diagonal(z.slice(i))).sum::<f64>() / l as f64
}

/// `<z_i| O E_p |z_{i+1}> / <z_i| E_p |z_{i+1}>` averaged over all
/// boundaries `i` of `z`.
pub fn offdiagonal_estimate(
    system: &TrotterizedSystem,
    obs: &dyn RowComputable,
    z: &SpinConfiguration,
) -> Result<f64> {
    let l = system.slices();
    let mut total = 0.0;
    for i in 0..l {
        total += boundary_estimate(system, obs, z, i)?;
    }
    Ok(total / l as f64)
}

fn boundary_estimate(
    system: &TrotterizedSystem,
    obs: &dyn RowComputable,
    z: &SpinConfiguration,
    i: usize,
) -> Result<f64> {
    let l = system.slices();
    let (row, col) = (z.slice(i), z.slice((i + 1) % l));
    let mut rows: Vec<(Flips, f64)> = Vec::new();
    obs.rows(row, &mut rows);
    let mut acc = 0.0;
    for (flips, v) in &rows {
        if flips.is_empty() {
            acc += v;
        } else {
            let r = system.layer_flip_log_ratio(i % 2, row, flips, col);
            if r.is_nan() || r == f64::INFINITY {
                return Err(Error::ZeroDenominator { boundary: i });
            }
            acc += v * r.exp();
        }
    }
    Ok(acc)
}

/// Off-diagonal estimator averaged over all slice boundaries.
pub fn estimate_offdiagonal_observable(
    system: &TrotterizedSystem,
    obs: &dyn RowComputable,
    chains: &mut [ChainState],
    samples_per_chain: usize,
    thin: u64,
) -> Result<ObservableEstimate> {
    if obs.n() != system.n() {
        return Err(Error::LengthMismatch(obs.n(), system.n()));
    }
    let series = sample_series(system, chains, samples_per_chain, thin, |st| {
        offdiagonal_estimate(system, obs, st.config())
    })?;
    Ok(summarize(&series))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservableOptions {
    pub seed: u64,
    pub chains: usize,
    pub samples_per_chain: usize,
    pub burn_in: Option<u64>,
    pub thin: Option<u64>,
    pub slices: usize,
    /// Sizes the fictitious field of general models, as for `Z`.
    pub delta_mult: f64,
}

impl Default for ObservableOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            chains: 256,
            samples_per_chain: 64,
            burn_in: None,
            thin: None,
            slices: 16,
            delta_mult: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ObservableReport {
    pub schema_version: u32,
    pub method: String,
    #[serde(with = "sig17")]
    pub beta: f64,
    pub slices: usize,
    pub chains: usize,
    pub seed: u64,
    pub burn_in: u64,
    pub steps_between_samples: u64,
    /// Smallest effective-sample fraction while annealing; see
    /// [`EstimateDiagnostics::min_resample_ess`].
    #[serde(with = "sig17")]
    pub min_resample_ess: f64,
    #[serde(with = "sig17")]
    pub value: f64,
    #[serde(with = "sig17")]
    pub std_error: f64,
    pub samples: u64,
}

/// Runs fresh chains at `beta` and applies the diagonal or off-diagonal
/// estimator depending on the observable.
pub fn estimate_observable(
    model: &Model,
    beta: f64,
    obs: &dyn RowComputable,
    opts: &ObservableOptions,
) -> Result<ObservableReport> {
    model.validate()?;
    let (model, _) = model.with_ergodic_field(opts.delta_mult);
    let system = TrotterizedSystem::new(&model, beta, opts.slices)?;
    let (n, l) = (system.n(), system.slices());
    let thin = opts.thin.unwrap_or((n * l) as u64);
    let burn_in = opts.burn_in.unwrap_or_else(|| default_burn_in(n, l));
    let mut min_resample_ess = 1.0;
    let mut chains = (0..opts.chains as u64)
        .map(|c| ChainState::from_seed(&system, opts.seed, c))
        .collect::<Result<Vec<_>>>()?;
    let (method, est) = if beta == 0.0 {
        // Only frozen configurations carry weight; tr(O)/2^n is their mean.
        let series: Vec<Vec<f64>> = chains
            .iter_mut()
            .map(|st| {
                (0..opts.samples_per_chain)
                    .map(|_| obs.diagonal(sample_frozen_uniform(n, l, st.rng_mut()).slice(0)))
                    .collect()
            })
            .collect();
        ("frozen", summarize(&series))
    } else {
        let mut rng = chain_rng(opts.seed, RESAMPLE_STREAM);
        min_resample_ess = anneal_chains(
            &system,
            model.norm_upper_bound(),
            &mut chains,
            burn_in,
            &mut rng,
        )?;
        if obs.is_diagonal() {
            (
                "diagonal",
                estimate_diagonal_observable(
                    &system,
                    obs,
                    &mut chains,
                    opts.samples_per_chain,
                    thin,
                )?,
            )
        } else {
            (
                "offdiagonal",
                estimate_offdiagonal_observable(
                    &system,
                    obs,
                    &mut chains,
                    opts.samples_per_chain,
                    thin,
                )?,
            )
        }
    };
    Ok(ObservableReport {
        schema_version: SCHEMA_VERSION,
        method: method.into(),
        beta,
        slices: l,
        chains: opts.chains,
        seed: opts.seed,
        burn_in,
        steps_between_samples: thin,
        min_resample_ess,
        value: est.value,
        std_error: est.std_error,
        samples: est.samples,
    })
}

/// `zeta = sqrt(3 delta) / ||O||`.
pub fn finite_difference_zeta(delta: f64, norm_o: f64) -> Result<f64> {
    if !(delta > 0.0 && delta <= 1.0 / 21.0) {
        return Err(Error::InvalidDelta(delta));
    }
    if !(norm_o > 0.0) {
        return Err(Error::InvalidObservable(
            "observable norm must be positive".into(),
        ));
    }
    Ok((3.0 * delta).sqrt() / norm_o)
}

/// `(Z(zeta) - Z(0)) / (zeta Z(0))`, where `Z(zeta)` is the partition
/// function of `H - zeta O / beta`. Within `2 sqrt(delta) ||O||` of `<O>`
/// when both inputs are within `e^{+-delta}` and `O >= 0`.
pub fn finite_difference_observable(
    z_hat_0: f64,
    z_hat_zeta: f64,
    zeta: f64,
    norm_o: f64,
) -> Result<f64> {
    let delta = (zeta * norm_o).powi(2) / 3.0;
    if !(delta > 0.0 && delta <= 1.0 / 21.0 * (1.0 + 1e-12)) {
        return Err(Error::InvalidDelta(delta));
    }
    Ok((z_hat_zeta - z_hat_0) / (zeta * z_hat_0))
}

/// [`finite_difference_observable`] from log-partition values.
pub fn finite_difference_from_logs(
    log_z0: f64,
    log_zeta: f64,
    zeta: f64,
    norm_o: f64,
) -> Result<f64> {
    finite_difference_observable(1.0, (log_zeta - log_z0).exp(), zeta, norm_o)
}

/// `H - s O` for an observable built from identity, `Z_j`, `Z_j Z_k` and
/// `X_j` strings.
pub fn perturbed_terms(terms: &LocalTerms, obs: &PauliSum, s: f64) -> Result<LocalTerms> {
    let mut t = terms.clone();
    for term in obs.terms() {
        let c = s * term.coeff;
        match term.ops.as_slice() {
            [] => t.constant -= c,
            [(j, Pauli::Z)] => t.field[*j] -= c,
            [(j, Pauli::X)] => t.transverse[*j] += c,
            [(j, Pauli::Z), (k, Pauli::Z)] => t.zz.push(((*j).min(*k), (*j).max(*k), -c)),
            _ => {
                return Err(Error::InvalidObservable(
                    "the finite-difference path supports identity, Z, ZZ and X terms".into(),
                ))
            }
        }
    }
    t.merge_zz();
    t.check_stoquastic()
        .map_err(|_| Error::InvalidObservable("H - zeta O / beta is not stoquastic".into()))?;
    Ok(t)
}

/// Whether `O >= 0`: by coefficient dominance of the identity term, or by a
/// dense eigensolve for small `n`.
pub fn is_positive_semidefinite(obs: &PauliSum) -> Result<bool> {
    let shift: f64 = obs
        .terms()
        .iter()
        .filter(|t| t.ops.is_empty())
        .map(|t| t.coeff)
        .sum();
    let rest: f64 = obs
        .terms()
        .iter()
        .filter(|t| !t.ops.is_empty())
        .map(|t| t.coeff.abs())
        .sum();
    if shift >= rest {
        return Ok(true);
    }
    let dense = obs.to_dense()?;
    Ok(sorted_eigenvalues(&dense.matrix)[0] >= -1e-12)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FiniteDifferenceReport {
    pub schema_version: u32,
    pub method: String,
    #[serde(with = "sig17")]
    pub value: f64,
    #[serde(with = "sig17")]
    pub delta: f64,
    #[serde(with = "sig17")]
    pub zeta: f64,
    #[serde(with = "sig17")]
    pub norm_bound: f64,
    /// `2 sqrt(delta) ||O||`.
    #[serde(with = "sig17")]
    pub error_bound: f64,
    pub base: EstimateReport,
    pub perturbed: EstimateReport,
}

/// `<O>` from two partition-function estimates, for `H` and
/// `H - zeta O / beta`, run on the same seed.
pub fn estimate_observable_finite_difference(
    model: &Model,
    beta: f64,
    obs: &PauliSum,
    delta: f64,
    targets: Targets,
    resources: &Resources,
) -> Result<FiniteDifferenceReport> {
    if !(beta > 0.0) {
        return Err(Error::InvalidArgument(
            "the finite-difference estimator needs beta > 0".into(),
        ));
    }
    if !is_positive_semidefinite(obs)? {
        return Err(Error::InvalidObservable(
            "the finite-difference path needs a positive semidefinite observable (add a shift)"
                .into(),
        ));
    }
    let norm_o = obs.norm_bound();
    let zeta = finite_difference_zeta(delta, norm_o)?;
    model.validate()?;
    let (with_field, field) = model.with_ergodic_field(targets.delta_mult);
    let terms = with_field.local_terms();
    let shifted = perturbed_terms(&terms, obs, zeta / beta)?;
    let norm = with_field.norm_upper_bound();
    // A shared slice count keeps the two Trotter errors correlated.
    let mut res = resources.clone();
    if res.slices.is_none() {
        let trotter_delta = (targets.delta_mult / 4.0).min(1.0 / 21.0);
        let a = choose_trotter_slices_for_terms(&terms, norm, beta, trotter_delta, res.max_slices)?;
        let b = choose_trotter_slices_for_terms(
            &shifted,
            norm + zeta / beta * norm_o,
            beta,
            trotter_delta,
            res.max_slices,
        )?;
        res.slices = Some(a.slices.max(b.slices));
    }
    let base =
        estimate_partition_of_terms(terms, norm, model.family(), field, beta, targets, &res)?;
    let perturbed = estimate_partition_of_terms(
        shifted,
        norm + zeta / beta * norm_o,
        model.family(),
        field,
        beta,
        targets,
        &res,
    )?;
    let value = finite_difference_from_logs(base.log_value, perturbed.log_value, zeta, norm_o)?;
    Ok(FiniteDifferenceReport {
        schema_version: SCHEMA_VERSION,
        method: "finite-difference".into(),
        value,
        delta,
        zeta,
        norm_bound: norm_o,
        error_bound: 2.0 * delta.sqrt() * norm_o,
        base,
        perturbed,
    })
}
