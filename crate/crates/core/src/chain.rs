//! Lazy single-site Metropolis chain on the Trotter lattice.
//!
//! Each step draws, in this order:
//!
//! 1. a fair coin (`gen::<bool>()`); `true` means the chain stays put;
//! 2. a lattice site `gen_range(0..n*L)`, slice-major;
//! 3. for finite negative log ratios only, `u = gen::<f64>()`, accepting when
//!    `ln u < ratio`.
//!
//! Budget checks of the restricted chain happen between 2 and 3 and draw
//! nothing. Every chain owns one ChaCha8 stream, so a run is a pure function
//! of `(master seed, stream id)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mapping::{SpinConfiguration, TrotterizedSystem};

/// Per-chain generator: stream `stream` of the ChaCha8 generator keyed by
/// `seed`.
pub fn chain_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// `d_j`: number of slice boundaries where worldline `j` changes value.
pub fn jump_count(config: &SpinConfiguration, j: usize) -> usize {
    let l = config.slices();
    (0..l)
        .filter(|&i| config.get(i, j) != config.get((i + 1) % l, j))
        .count()
}

/// Slice boundaries where worldlines `j` and `j + 1` (mod `n`) jump
/// together.
pub fn double_jump_count(config: &SpinConfiguration, j: usize) -> usize {
    let (l, k) = (config.slices(), (j + 1) % config.n());
    (0..l)
        .filter(|&i| {
            let next = (i + 1) % l;
            config.get(i, j) != config.get(next, j) && config.get(i, k) != config.get(next, k)
        })
        .count()
}

/// A uniformly random configuration with every worldline constant.
pub fn sample_frozen_uniform<R: Rng + ?Sized>(
    n: usize,
    l: usize,
    rng: &mut R,
) -> SpinConfiguration {
    let slice: Vec<i8> = (0..n)
        .map(|_| if rng.gen::<bool>() { -1 } else { 1 })
        .collect();
    SpinConfiguration::frozen(&slice, l)
}

/// Per-worldline jump cap `2B` of the restricted chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct JumpBudget {
    b: usize,
}

impl JumpBudget {
    pub fn new(b: usize) -> Result<Self> {
        if b == 0 {
            return Err(Error::InvalidArgument(
                "jump budget B must be at least 1".into(),
            ));
        }
        Ok(Self { b })
    }

    /// `2B = c beta ln n`, rounded up and at least 2.
    pub fn from_beta(beta: f64, n: usize, c: f64) -> Self {
        let half = (c * beta * (n as f64).ln() / 2.0).ceil();
        Self {
            b: if half.is_finite() && half >= 1.0 {
                half as usize
            } else {
                1
            },
        }
    }

    pub fn b(&self) -> usize {
        self.b
    }

    /// Largest jump count allowed on any worldline.
    pub fn cap(&self) -> usize {
        2 * self.b
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    /// `(slice, site)` proposed, or `None` for a lazy self-loop.
    pub site: Option<(usize, usize)>,
    /// Log ratio of the proposal; `-inf` for budget rejections.
    pub log_ratio: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone)]
pub struct ChainState {
    config: SpinConfiguration,
    log_weight: f64,
    rng: ChaCha8Rng,
    steps: u64,
    accepted: u64,
    jumps: Vec<usize>,
}

impl ChainState {
    /// Starts at `config`, or at a frozen configuration drawn from `rng` if
    /// `config` has zero weight.
    pub fn new(
        system: &TrotterizedSystem,
        config: SpinConfiguration,
        mut rng: ChaCha8Rng,
    ) -> Result<Self> {
        let mut config = config;
        let mut log_weight = system.log_weight(&config)?;
        let mut tries = 0;
        while log_weight == f64::NEG_INFINITY {
            tries += 1;
            if tries > 64 {
                return Err(Error::NonErgodic);
            }
            config = sample_frozen_uniform(system.n(), system.slices(), &mut rng);
            log_weight = system.log_weight(&config)?;
        }
        let jumps = (0..config.n()).map(|j| jump_count(&config, j)).collect();
        Ok(Self {
            config,
            log_weight,
            rng,
            steps: 0,
            accepted: 0,
            jumps,
        })
    }

    /// Frozen-uniform start on stream `stream` of `seed`.
    pub fn from_seed(system: &TrotterizedSystem, seed: u64, stream: u64) -> Result<Self> {
        let mut rng = chain_rng(seed, stream);
        let config = sample_frozen_uniform(system.n(), system.slices(), &mut rng);
        Self::new(system, config, rng)
    }

    pub fn config(&self) -> &SpinConfiguration {
        &self.config
    }

    pub fn log_weight(&self) -> f64 {
        self.log_weight
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn accepted(&self) -> u64 {
        self.accepted
    }

    pub fn jumps(&self) -> &[usize] {
        &self.jumps
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// Moves the chain to a new configuration of `system` (used when the
    /// same chain is carried to the next temperature).
    pub fn rebind(&mut self, system: &TrotterizedSystem) -> Result<()> {
        let lw = system.log_weight(&self.config)?;
        if lw == f64::NEG_INFINITY {
            let fresh = sample_frozen_uniform(system.n(), system.slices(), &mut self.rng);
            self.config = fresh;
            self.jumps = (0..self.config.n())
                .map(|j| jump_count(&self.config, j))
                .collect();
            self.log_weight = system.log_weight(&self.config)?;
        } else {
            self.log_weight = lw;
        }
        Ok(())
    }

    /// Takes over the configuration of `other`, keeping this chain's
    /// generator and counters.
    pub fn adopt(&mut self, other: &ChainState) {
        self.config.clone_from(&other.config);
        self.log_weight = other.log_weight;
        self.jumps.clone_from(&other.jumps);
    }

    /// Checks that the current configuration lies inside the budget.
    pub fn check_restriction(&self, budget: &JumpBudget) -> Result<()> {
        for (worldline, &jumps) in self.jumps.iter().enumerate() {
            if jumps > budget.cap() {
                return Err(Error::InitialStateOutsideRestriction {
                    worldline,
                    jumps,
                    cap: budget.cap(),
                });
            }
        }
        Ok(())
    }

    fn step(&mut self, system: &TrotterizedSystem, budget: Option<&JumpBudget>) -> StepOutcome {
        self.steps += 1;
        if self.rng.gen::<bool>() {
            return StepOutcome {
                site: None,
                log_ratio: 0.0,
                accepted: false,
            };
        }
        let (n, l) = (system.n(), system.slices());
        let idx = self.rng.gen_range(0..n * l);
        let (i, j) = (idx / n, idx % n);
        let s = self.config.get(i, j);
        let before = (self.config.get((i + l - 1) % l, j) != s) as usize
            + (self.config.get((i + 1) % l, j) != s) as usize;
        let after = self.jumps[j] + 2 - 2 * before;
        if let Some(b) = budget {
            if after > b.cap() {
                return StepOutcome {
                    site: Some((i, j)),
                    log_ratio: f64::NEG_INFINITY,
                    accepted: false,
                };
            }
        }
        let ratio = system.flip_ratio(&self.config, i, j);
        let accept = if ratio >= 0.0 {
            true
        } else if ratio == f64::NEG_INFINITY {
            false
        } else {
            self.rng.gen::<f64>().ln() < ratio
        };
        if accept {
            self.config.flip(i, j);
            self.log_weight += ratio;
            self.jumps[j] = after;
            self.accepted += 1;
        }
        StepOutcome {
            site: Some((i, j)),
            log_ratio: ratio,
            accepted: accept,
        }
    }
}

pub fn metropolis_step(state: &mut ChainState, system: &TrotterizedSystem) -> StepOutcome {
    state.step(system, None)
}

pub fn metropolis_step_restricted(
    state: &mut ChainState,
    system: &TrotterizedSystem,
    budget: &JumpBudget,
) -> Result<StepOutcome> {
    state.check_restriction(budget)?;
    Ok(state.step(system, Some(budget)))
}

/// Applies `steps` kernel steps.
pub fn run(
    state: &mut ChainState,
    system: &TrotterizedSystem,
    steps: u64,
    budget: Option<&JumpBudget>,
) -> Result<()> {
    if let Some(b) = budget {
        state.check_restriction(b)?;
    }
    for _ in 0..steps {
        state.step(system, budget);
    }
    Ok(())
}

/// Header of the sample dump.
pub fn sample_csv_header(n: usize, with_config: bool) -> String {
    let mut h = String::from("step,logWeight");
    for j in 1..=n {
        h.push_str(&format!(",d_{j}"));
    }
    if with_config {
        h.push_str(",config");
    }
    h
}

pub fn sample_csv_row(state: &ChainState, with_config: bool) -> String {
    let mut row = format!("{},{:.17e}", state.steps, state.log_weight);
    for d in &state.jumps {
        row.push_str(&format!(",{d}"));
    }
    if with_config {
        row.push(',');
        row.push_str(&state.config.to_hex());
    }
    row
}
