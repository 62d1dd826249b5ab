//! Empirical checks of how the chain behaves: exact total-variation mixing
//! and spectral gaps on tiny lattices, jump-count concentration, and
//! autocorrelation / Gelman-Rubin heuristics where exact analysis does not
//! fit in memory.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain::{run, ChainState, JumpBudget};
use crate::error::{Error, Result};
use crate::mapping::TrotterizedSystem;
use crate::oracle::{all_log_weights, transition_matrix};
use crate::report::{sig17, sig17_vec};

/// Largest state space handled by [`empirical_mixing`].
pub const MIXING_MAX_STATES: usize = 1 << 10;

pub fn tv_distance(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::LengthMismatch(p.len(), q.len()));
    }
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TvPoint {
    pub step: u64,
    #[serde(with = "sig17")]
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MixingReport {
    pub label: String,
    pub states: usize,
    /// Worst-case `d(t)` at the steps that were evaluated, ascending in `t`.
    pub tv_curve: Vec<TvPoint>,
    #[serde(with = "sig17")]
    pub epsilon: f64,
    /// `tau(epsilon)`.
    pub tau_empirical: u64,
    /// `tau(1/4)`.
    pub tau_mix: u64,
    #[serde(with = "sig17")]
    pub spectral_gap: f64,
    #[serde(with = "sig17")]
    pub pi_min: f64,
    /// `ln(4 / pi_min) / gap`, an upper bound on `tau_mix`.
    #[serde(with = "sig17")]
    pub relaxation_bound: f64,
    pub relaxation_consistent: bool,
    /// `tau(epsilon) <= ceil(log2(1/epsilon)) * tau_mix`.
    pub tau_epsilon_consistent: bool,
}

/// Worst-case distance `max_z TV(P^t(z, .), pi)` from the rows of `pt`.
fn worst_tv(pt: &DMatrix<f64>, pi: &[f64]) -> f64 {
    (0..pt.nrows())
        .map(|r| {
            0.5 * (0..pt.ncols())
                .map(|c| (pt[(r, c)] - pi[c]).abs())
                .sum::<f64>()
        })
        .fold(0.0, f64::max)
}

/// Smallest `t` with `d(t) <= target`, by doubling then binary lifting.
/// `d(t)` is nonincreasing for the worst-case distance.
fn hitting_time(p: &DMatrix<f64>, pi: &[f64], target: f64, curve: &mut Vec<TvPoint>) -> u64 {
    let dim = p.nrows();
    let mut powers = vec![p.clone()];
    let mut d = worst_tv(p, pi);
    curve.push(TvPoint {
        step: 1,
        distance: d,
    });
    if d <= target {
        return if worst_tv(&DMatrix::identity(dim, dim), pi) <= target {
            0
        } else {
            1
        };
    }
    while d > target {
        let last = powers.last().unwrap();
        let next = last * last;
        d = worst_tv(&next, pi);
        curve.push(TvPoint {
            step: 1 << powers.len(),
            distance: d,
        });
        powers.push(next);
        if powers.len() > 62 {
            return u64::MAX;
        }
    }
    // d(2^{k-1}) > target >= d(2^k); lift from 2^{k-1}.
    let k = powers.len() - 1;
    let mut t = 1u64 << (k - 1);
    let mut acc = powers[k - 1].clone();
    for j in (0..k - 1).rev() {
        let cand = &acc * &powers[j];
        let dc = worst_tv(&cand, pi);
        curve.push(TvPoint {
            step: t + (1 << j),
            distance: dc,
        });
        if dc > target {
            acc = cand;
            t += 1 << j;
        }
    }
    t + 1
}

/// Mixing analysis of a dense stochastic matrix `p` reversible with
/// respect to `pi`.
pub fn mixing_of_kernel(p: &DMatrix<f64>, pi: &[f64], epsilon: f64) -> Result<MixingReport> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "epsilon = {epsilon} must lie in (0, 1)"
        )));
    }
    let dim = p.nrows();
    let mut curve = vec![TvPoint {
        step: 0,
        distance: worst_tv(&DMatrix::identity(dim, dim), pi),
    }];
    // Short prefix of the curve step by step, cheap for small state spaces.
    if dim <= 256 {
        let mut pt = p.clone();
        for t in 1..=16u64 {
            curve.push(TvPoint {
                step: t,
                distance: worst_tv(&pt, pi),
            });
            pt = &pt * p;
        }
    }
    let tau_mix = hitting_time(p, pi, 0.25, &mut curve);
    let tau_empirical = if epsilon == 0.25 {
        tau_mix
    } else {
        hitting_time(p, pi, epsilon, &mut curve)
    };
    curve.sort_by_key(|pt| pt.step);
    curve.dedup_by_key(|pt| pt.step);

    let sqrt_pi: Vec<f64> = pi.iter().map(|x| x.sqrt()).collect();
    let s = DMatrix::from_fn(dim, dim, |r, c| sqrt_pi[r] * p[(r, c)] / sqrt_pi[c]);
    let sym = (&s + s.transpose()) * 0.5;
    let mut eig: Vec<f64> = SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .copied()
        .collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    let slem = eig.iter().skip(1).map(|v| v.abs()).fold(0.0, f64::max);
    let gap = 1.0 - slem;
    let pi_min = pi.iter().copied().fold(f64::INFINITY, f64::min);
    let relaxation_bound = (4.0 / pi_min).ln() / gap;
    let lifts = (1.0 / epsilon).log2().ceil().max(1.0) as u64;
    Ok(MixingReport {
        label: "exact".into(),
        states: dim,
        tv_curve: curve,
        epsilon,
        tau_empirical,
        tau_mix,
        spectral_gap: gap,
        pi_min,
        relaxation_bound,
        relaxation_consistent: (tau_mix as f64) <= relaxation_bound,
        tau_epsilon_consistent: tau_empirical <= lifts.saturating_mul(tau_mix),
    })
}

/// Exact mixing analysis of the chain on `system`, optionally restricted to
/// a jump budget.
pub fn empirical_mixing(
    system: &TrotterizedSystem,
    epsilon: f64,
    budget: Option<&JumpBudget>,
) -> Result<MixingReport> {
    let logs = all_log_weights(system)?;
    let support = logs.iter().filter(|&&l| l > f64::NEG_INFINITY).count();
    if support > MIXING_MAX_STATES {
        return Err(Error::TooLarge {
            what: "mixing state space",
            size: support as u64,
            cap: MIXING_MAX_STATES as u64,
        });
    }
    let tm = transition_matrix(system, budget)?;
    let p = tm.to_dense();
    let sub: Vec<f64> = tm.states.iter().map(|&x| logs[x as usize]).collect();
    let norm = crate::linalg::log_sum_exp(&sub);
    let pi: Vec<f64> = sub.iter().map(|&l| (l - norm).exp()).collect();
    mixing_of_kernel(&p, &pi, epsilon)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct WorldlineExceedance {
    /// 1-based worldline index.
    pub worldline: usize,
    pub count: u64,
    #[serde(with = "sig17")]
    pub frequency: f64,
    #[serde(with = "sig17")]
    pub std_error: f64,
    #[serde(with = "sig17")]
    pub ci_low: f64,
    #[serde(with = "sig17")]
    pub ci_high: f64,
    /// Frequency exceeds the envelope by more than three standard errors.
    pub violation: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct JumpConcentrationReport {
    #[serde(with = "sig17")]
    pub beta: f64,
    pub n: usize,
    #[serde(with = "sig17")]
    pub c: f64,
    /// `c beta ln n`; the event is `d_j >= threshold`.
    #[serde(with = "sig17")]
    pub threshold: f64,
    /// `n^{-c}`.
    #[serde(with = "sig17")]
    pub envelope: f64,
    pub samples: u64,
    pub worldlines: Vec<WorldlineExceedance>,
    pub any_violation: bool,
}

/// Wilson score interval at `z` standard deviations.
fn wilson(count: u64, total: u64, z: f64) -> (f64, f64) {
    if total == 0 {
        return (0.0, 1.0);
    }
    let n = total as f64;
    let p = count as f64 / n;
    let denom = 1.0 + z * z / n;
    let centre = (p + z * z / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// Exceedance frequencies of `d_j >= c beta ln n` over `samples`, each a
/// vector of per-worldline jump counts.
pub fn jump_concentration_report(
    samples: &[Vec<usize>],
    beta: f64,
    n: usize,
    c: f64,
) -> JumpConcentrationReport {
    let threshold = c * beta * (n as f64).ln();
    let envelope = (n as f64).powf(-c);
    let total = samples.len() as u64;
    let worldlines: Vec<WorldlineExceedance> = (0..n)
        .map(|j| {
            let count = samples.iter().filter(|d| d[j] as f64 >= threshold).count() as u64;
            let frequency = if total > 0 {
                count as f64 / total as f64
            } else {
                0.0
            };
            let std_error = if total > 0 {
                (frequency * (1.0 - frequency) / total as f64).sqrt()
            } else {
                0.0
            };
            let (ci_low, ci_high) = wilson(count, total, 1.96);
            WorldlineExceedance {
                worldline: j + 1,
                count,
                frequency,
                std_error,
                ci_low,
                ci_high,
                violation: frequency - 3.0 * std_error > envelope,
            }
        })
        .collect();
    let any_violation = worldlines.iter().any(|w| w.violation);
    JumpConcentrationReport {
        beta,
        n,
        c,
        threshold,
        envelope,
        samples: total,
        worldlines,
        any_violation,
    }
}

/// Integrated autocorrelation time with Sokal's self-consistent window
/// (`M >= 5 tau`). Returns 1 for constant or very short series.
pub fn integrated_autocorrelation_time(series: &[f64]) -> f64 {
    let n = series.len();
    if n < 4 {
        return 1.0;
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let var = series.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
    if var <= 0.0 || !var.is_finite() {
        return 1.0;
    }
    let mut tau = 1.0;
    for lag in 1..n / 2 {
        let cov = (0..n - lag)
            .map(|i| (series[i] - mean) * (series[i + lag] - mean))
            .sum::<f64>()
            / n as f64;
        tau += 2.0 * cov / var;
        if lag as f64 >= 5.0 * tau {
            break;
        }
    }
    tau.max(1.0)
}

/// Potential scale reduction factor across chains of equal length.
pub fn gelman_rubin(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len();
    let len = chains.iter().map(Vec::len).min().unwrap_or(0);
    if m < 2 || len < 2 {
        return f64::NAN;
    }
    let means: Vec<f64> = chains
        .iter()
        .map(|c| c[..len].iter().sum::<f64>() / len as f64)
        .collect();
    let grand = means.iter().sum::<f64>() / m as f64;
    let b = len as f64 / (m - 1) as f64 * means.iter().map(|x| (x - grand).powi(2)).sum::<f64>();
    let w = chains
        .iter()
        .zip(&means)
        .map(|(c, mu)| c[..len].iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (len - 1) as f64)
        .sum::<f64>()
        / m as f64;
    if w == 0.0 {
        return 1.0;
    }
    let var_hat = (len - 1) as f64 / len as f64 * w + b / len as f64;
    (var_hat / w).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct HeuristicMixingReport {
    pub label: String,
    pub chains: usize,
    pub samples_per_chain: usize,
    pub steps_between_samples: u64,
    pub burn_in: u64,
    /// Integrated autocorrelation time of `ln w` per chain, in samples.
    #[serde(with = "sig17_vec")]
    pub log_weight_iat: Vec<f64>,
    #[serde(with = "sig17")]
    pub gelman_rubin: f64,
    #[serde(with = "sig17")]
    pub acceptance_rate: f64,
}

/// Per-chain `ln w` traces and jump counts from independent seeded chains.
pub struct Traces {
    pub log_weights: Vec<Vec<f64>>,
    pub jumps: Vec<Vec<Vec<usize>>>,
    pub acceptance_rate: f64,
}

pub fn collect_traces(
    system: &TrotterizedSystem,
    seed: u64,
    chains: usize,
    burn_in: u64,
    samples: usize,
    thin: u64,
    budget: Option<&JumpBudget>,
) -> Result<Traces> {
    let per_chain: Vec<Result<(Vec<f64>, Vec<Vec<usize>>, u64, u64)>> = (0..chains as u64)
        .into_par_iter()
        .map(|c| {
            let mut st = ChainState::from_seed(system, seed, c)?;
            run(&mut st, system, burn_in, budget)?;
            let mut lw = Vec::with_capacity(samples);
            let mut jumps = Vec::with_capacity(samples);
            for _ in 0..samples {
                run(&mut st, system, thin, budget)?;
                lw.push(st.log_weight());
                jumps.push(st.jumps().to_vec());
            }
            Ok((lw, jumps, st.accepted(), st.steps()))
        })
        .collect();
    let mut log_weights = Vec::new();
    let mut all_jumps = Vec::new();
    let (mut acc, mut steps) = (0u64, 0u64);
    for r in per_chain {
        let (lw, j, a, s) = r?;
        log_weights.push(lw);
        all_jumps.push(j);
        acc += a;
        steps += s;
    }
    Ok(Traces {
        log_weights,
        jumps: all_jumps,
        acceptance_rate: if steps > 0 {
            acc as f64 / steps as f64
        } else {
            0.0
        },
    })
}

pub fn heuristic_mixing(traces: &Traces, burn_in: u64, thin: u64) -> HeuristicMixingReport {
    HeuristicMixingReport {
        label: "heuristic".into(),
        chains: traces.log_weights.len(),
        samples_per_chain: traces.log_weights.first().map_or(0, Vec::len),
        steps_between_samples: thin,
        burn_in,
        log_weight_iat: traces
            .log_weights
            .iter()
            .map(|s| integrated_autocorrelation_time(s))
            .collect(),
        gelman_rubin: gelman_rubin(&traces.log_weights),
        acceptance_rate: traces.acceptance_rate,
    }
}
