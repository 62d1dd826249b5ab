//! Suzuki-Trotter mapping of a quantum chain onto an `L x n` lattice of
//! classical spins.
//!
//! The weight of a configuration `z = (z_0, ..., z_{L-1})` is
//!
//! ```text
//! w(z) = prod_i exp(-(beta/L) diag(H)(z_i)) <z_i| E_{i mod 2} |z_{i+1}>
//! ```
//!
//! with `E_p = exp(-(2 beta / L) H_p)` for the two commuting off-diagonal
//! layers `H_0`, `H_1` of the lowered Hamiltonian. Each site's transverse
//! field is split evenly between the layers. `E_p` factorizes into 2x2 site
//! factors and 4x4 bond factors, which are stored as log matrix elements so
//! that weights never underflow.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::linalg::{expm_nonneg4, Block4};
use crate::models::{LocalTerms, Model};
use crate::oracle;

/// `J = (1/2) ln coth(beta * gamma / L)`, the imaginary-time coupling
/// induced by a transverse field.
pub fn effective_coupling(beta: f64, gamma: f64, l: usize) -> Result<f64> {
    let x = beta * gamma / l as f64;
    if !(x > 0.0) {
        return Err(Error::DegenerateTemperature);
    }
    Ok(half_log_coth(x))
}

/// `(1/2) ln coth x = atanh(e^{-2x})`, accurate at both ends.
pub fn half_log_coth(x: f64) -> f64 {
    let y = (-2.0 * x).exp();
    if x > 0.5 {
        0.5 * (y.ln_1p() - (-y).ln_1p())
    } else {
        0.5 * (y.ln_1p() - (-(-2.0 * x).exp_m1()).ln())
    }
}

/// `(ln cosh x, ln sinh x)` for `x >= 0`.
fn log_cosh_sinh(x: f64) -> (f64, f64) {
    if x > 1.0 {
        let y = (-2.0 * x).exp();
        let base = x - std::f64::consts::LN_2;
        (base + y.ln_1p(), base + (-y).ln_1p())
    } else {
        (x.cosh().ln(), x.sinh().ln())
    }
}

#[inline]
fn bit(s: i8) -> usize {
    (s < 0) as usize
}

/// The `L x n` lattice, stored slice-major: `spins[i * n + j] = z_{i,j}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SpinConfiguration {
    n: usize,
    l: usize,
    spins: Vec<i8>,
}

impl SpinConfiguration {
    pub fn new(n: usize, l: usize, spins: Vec<i8>) -> Result<Self> {
        if n == 0 || l < 2 {
            return Err(Error::InvalidArgument(format!(
                "need n >= 1 and L >= 2, got n={n}, L={l}"
            )));
        }
        if spins.len() != n * l {
            return Err(Error::DimensionMismatch {
                expected: format!("{} spins", n * l),
                got: spins.len().to_string(),
            });
        }
        if spins.iter().any(|&s| s != 1 && s != -1) {
            return Err(Error::InvalidArgument("spins must be +1 or -1".into()));
        }
        Ok(Self { n, l, spins })
    }

    /// Every slice equal to `slice`.
    pub fn frozen(slice: &[i8], l: usize) -> Self {
        let n = slice.len();
        let mut spins = Vec::with_capacity(n * l);
        for _ in 0..l {
            spins.extend_from_slice(slice);
        }
        Self { n, l, spins }
    }

    /// Configuration number `index` in the enumeration used by the oracle:
    /// bit `i * n + j` set means `z_{i,j} = -1`.
    pub fn from_index(n: usize, l: usize, index: u64) -> Self {
        let spins = (0..n * l)
            .map(|p| if (index >> p) & 1 == 1 { -1 } else { 1 })
            .collect();
        Self { n, l, spins }
    }

    pub fn to_index(&self) -> u64 {
        self.spins
            .iter()
            .enumerate()
            .fold(0u64, |acc, (p, &s)| acc | ((bit(s) as u64) << p))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn slices(&self) -> usize {
        self.l
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> i8 {
        self.spins[i * self.n + j]
    }

    #[inline]
    pub fn flip(&mut self, i: usize, j: usize) {
        let s = &mut self.spins[i * self.n + j];
        *s = -*s;
    }

    #[inline]
    pub fn slice(&self, i: usize) -> &[i8] {
        &self.spins[i * self.n..(i + 1) * self.n]
    }

    pub fn spins(&self) -> &[i8] {
        &self.spins
    }

    pub fn worldline(&self, j: usize) -> Vec<i8> {
        (0..self.l).map(|i| self.get(i, j)).collect()
    }

    /// Bits packed slice-major (`1` for spin `-1`), least significant bit
    /// first within each byte, as lowercase hex.
    pub fn to_hex(&self) -> String {
        let mut out = String::with_capacity(self.spins.len().div_ceil(4));
        for chunk in self.spins.chunks(8) {
            let byte = chunk
                .iter()
                .enumerate()
                .fold(0u8, |acc, (k, &s)| acc | ((bit(s) as u8) << k));
            let _ = write!(out, "{byte:02x}");
        }
        out
    }
}

/// Factor of one off-diagonal layer acting on one or two sites.
#[derive(Debug, Clone)]
pub struct Factor {
    pub sites: FactorSites,
    /// Log matrix elements; only the top-left 2x2 is used by site factors.
    pub log: Block4,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FactorSites {
    One(usize),
    Two(usize, usize),
}

impl Factor {
    #[inline]
    fn index(&self, spins: &[i8]) -> usize {
        match self.sites {
            FactorSites::One(j) => bit(spins[j]),
            FactorSites::Two(a, b) => 2 * bit(spins[a]) + bit(spins[b]),
        }
    }

    /// Index of `spins` with site `j` flipped.
    #[inline]
    fn index_flipped(&self, spins: &[i8], j: usize) -> usize {
        match self.sites {
            FactorSites::One(a) => bit(spins[a]) ^ (a == j) as usize,
            FactorSites::Two(a, b) => {
                (2 * bit(spins[a]) + bit(spins[b])) ^ (2 * (a == j) as usize + (b == j) as usize)
            }
        }
    }

    #[inline]
    pub fn log_element(&self, row: &[i8], col: &[i8]) -> f64 {
        self.log[self.index(row)][self.index(col)]
    }

    pub fn dim(&self) -> usize {
        match self.sites {
            FactorSites::One(_) => 2,
            FactorSites::Two(..) => 4,
        }
    }
}

/// Immutable `(model, beta, L)` bundle with everything the sampler needs.
#[derive(Debug, Clone)]
pub struct TrotterizedSystem {
    model: Option<Model>,
    terms: LocalTerms,
    beta: f64,
    l: usize,
    layers: [Vec<Factor>; 2],
    /// `site_factor[p][j]` is the index into `layers[p]` of the factor
    /// containing site `j`.
    site_factor: [Vec<usize>; 2],
    zz_adj: Vec<Vec<(usize, f64)>>,
}

impl TrotterizedSystem {
    pub fn new(model: &Model, beta: f64, l: usize) -> Result<Self> {
        model.validate()?;
        let mut sys = Self::from_terms(model.local_terms(), beta, l)?;
        sys.model = Some(model.clone());
        Ok(sys)
    }

    /// Builds the system from an already lowered Hamiltonian. Only
    /// stoquasticity of the lowered form is checked.
    pub fn from_terms(terms: LocalTerms, beta: f64, l: usize) -> Result<Self> {
        terms.check_stoquastic()?;
        if !(beta >= 0.0) || !beta.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "beta = {beta} must be finite and >= 0"
            )));
        }
        if l < 2 || l % 2 == 1 {
            return Err(Error::InvalidArgument(format!(
                "slice count L = {l} must be even and >= 2"
            )));
        }
        let n = terms.n;
        let step = beta / l as f64;
        let mut layers: [Vec<Factor>; 2] = [Vec::new(), Vec::new()];
        let mut site_factor = [vec![usize::MAX; n], vec![usize::MAX; n]];
        for p in 0..2 {
            for bond in terms.bonds.iter().filter(|b| b.layer == p) {
                let mut a = [[0.0; 4]; 4];
                for r in 0..4 {
                    for c in 0..4 {
                        a[r][c] = -2.0 * step * bond.residual[r][c];
                    }
                }
                let (gl, gr) = (
                    step * terms.transverse[bond.left],
                    step * terms.transverse[bond.right],
                );
                for r in 0..2 {
                    a[r][r + 2] += gl;
                    a[r + 2][r] += gl;
                    a[2 * r][2 * r + 1] += gr;
                    a[2 * r + 1][2 * r] += gr;
                }
                let e = expm_nonneg4(&a);
                let mut log = [[f64::NEG_INFINITY; 4]; 4];
                for r in 0..4 {
                    for c in 0..4 {
                        if e[r][c] > 0.0 {
                            log[r][c] = e[r][c].ln();
                        }
                    }
                }
                site_factor[p][bond.left] = layers[p].len();
                site_factor[p][bond.right] = layers[p].len();
                layers[p].push(Factor {
                    sites: FactorSites::Two(bond.left, bond.right),
                    log,
                });
            }
            for j in 0..n {
                if site_factor[p][j] != usize::MAX {
                    continue;
                }
                let x = step * terms.transverse[j];
                let (lc, ls) = if x > 0.0 {
                    log_cosh_sinh(x)
                } else {
                    (0.0, f64::NEG_INFINITY)
                };
                let mut log = [[f64::NEG_INFINITY; 4]; 4];
                log[0][0] = lc;
                log[1][1] = lc;
                log[0][1] = ls;
                log[1][0] = ls;
                site_factor[p][j] = layers[p].len();
                layers[p].push(Factor {
                    sites: FactorSites::One(j),
                    log,
                });
            }
        }
        let zz_adj = terms.zz_adjacency();
        Ok(Self {
            model: None,
            terms,
            beta,
            l,
            layers,
            site_factor,
            zz_adj,
        })
    }

    /// Same model and `L` at another inverse temperature.
    pub fn with_beta(&self, beta: f64) -> Result<Self> {
        let mut sys = Self::from_terms(self.terms.clone(), beta, self.l)?;
        sys.model.clone_from(&self.model);
        Ok(sys)
    }

    /// The model the system was built from, if any.
    pub fn model(&self) -> Option<&Model> {
        self.model.as_ref()
    }

    pub fn terms(&self) -> &LocalTerms {
        &self.terms
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn slices(&self) -> usize {
        self.l
    }

    pub fn n(&self) -> usize {
        self.terms.n
    }

    pub fn layer(&self, p: usize) -> &[Factor] {
        &self.layers[p]
    }

    /// Index into [`Self::layer`] of the factor holding site `j` in layer `p`.
    pub fn factor_of(&self, p: usize, j: usize) -> usize {
        self.site_factor[p][j]
    }

    /// Per-site couplings `J_j` (transverse-field-only sites).
    pub fn couplings(&self) -> Result<Vec<f64>> {
        self.terms
            .transverse
            .iter()
            .map(|&g| effective_coupling(self.beta, g, self.l))
            .collect()
    }

    fn check_dims(&self, config: &SpinConfiguration) -> Result<()> {
        if config.n != self.n() || config.l != self.l {
            return Err(Error::DimensionMismatch {
                expected: format!("{}x{} lattice", self.l, self.n()),
                got: format!("{}x{}", config.l, config.n),
            });
        }
        Ok(())
    }

    /// `ln <z_i| E_{i mod 2} |z_{i+1}>`.
    pub fn log_boundary_element(&self, config: &SpinConfiguration, i: usize) -> f64 {
        let row = config.slice(i);
        let col = config.slice((i + 1) % self.l);
        self.layers[i % 2]
            .iter()
            .map(|f| f.log_element(row, col))
            .sum()
    }

    /// `-(beta/L) diag(H)(z_i)`.
    pub fn log_diagonal(&self, slice: &[i8]) -> f64 {
        -self.beta / self.l as f64 * self.terms.diagonal_energy(slice)
    }

    pub fn log_weight(&self, config: &SpinConfiguration) -> Result<f64> {
        self.check_dims(config)?;
        Ok(self.log_weight_unchecked(config))
    }

    pub(crate) fn log_weight_unchecked(&self, config: &SpinConfiguration) -> f64 {
        let mut total = 0.0;
        for i in 0..self.l {
            let b = self.log_boundary_element(config, i);
            if b == f64::NEG_INFINITY {
                return f64::NEG_INFINITY;
            }
            total += self.log_diagonal(config.slice(i)) + b;
        }
        total
    }

    /// `ln(pi(z') / pi(z))` for `z'` equal to `z` with spin `(i, j)` flipped.
    pub fn log_weight_ratio_single_flip(
        &self,
        config: &SpinConfiguration,
        i: usize,
        j: usize,
    ) -> Result<f64> {
        self.check_dims(config)?;
        if i >= self.l || j >= self.n() {
            return Err(Error::InvalidArgument(format!(
                "site ({i},{j}) outside the {}x{} lattice",
                self.l,
                self.n()
            )));
        }
        Ok(self.flip_ratio(config, i, j))
    }

    pub(crate) fn flip_ratio(&self, config: &SpinConfiguration, i: usize, j: usize) -> f64 {
        let l = self.l;
        let s = config.get(i, j);
        let row = config.slice(i);

        let mut local = self.terms.field[j];
        for &(k, v) in &self.zz_adj[j] {
            local += v * row[k] as f64;
        }
        let diag = 2.0 * self.beta / l as f64 * s as f64 * local;

        let prev = (i + l - 1) % l;
        let next = (i + 1) % l;
        let prev_row = config.slice(prev);
        let next_row = config.slice(next);

        // Boundary prev -> i uses layer prev % 2, boundary i -> next uses layer i % 2.
        let f_in = &self.layers[prev % 2][self.site_factor[prev % 2][j]];
        let f_out = &self.layers[i % 2][self.site_factor[i % 2][j]];
        let old_in = f_in.log_element(prev_row, row);
        let old_out = f_out.log_element(row, next_row);
        let new_in = f_in.log[f_in.index(prev_row)][f_in.index_flipped(row, j)];
        let new_out = f_out.log[f_out.index_flipped(row, j)][f_out.index(next_row)];

        if new_in == f64::NEG_INFINITY || new_out == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else if old_in == f64::NEG_INFINITY || old_out == f64::NEG_INFINITY {
            f64::INFINITY
        } else {
            diag + (new_in - old_in) + (new_out - old_out)
        }
    }

    /// Classical Ising energy `E` of a transverse-field Ising configuration,
    /// with `ln w(z) = -beta E(z) + const`.
    pub fn classical_energy_tim(&self, config: &SpinConfiguration) -> Result<f64> {
        self.check_dims(config)?;
        let Some(Model::TransverseIsing(m)) = &self.model else {
            return Err(Error::InvalidModel(
                "classical energy is defined for the transverse-field Ising family".into(),
            ));
        };
        let j_couplings = self.couplings()?;
        let l = self.l as f64;
        let n = self.n();
        let mut e = 0.0;
        for i in 0..self.l {
            let row = config.slice(i);
            let next = config.slice((i + 1) % self.l);
            for (&(a, b), &v) in &m.kzz {
                e += v / l * (row[a] * row[b]) as f64;
            }
            for j in 0..n {
                e += m.kz[j] / l * row[j] as f64;
                e -= j_couplings[j] / self.beta * (row[j] * next[j]) as f64;
            }
        }
        Ok(e)
    }

    /// `ln w(z) + beta E(z)` for the transverse-field Ising family.
    pub fn tim_weight_offset(&self) -> f64 {
        let step = self.beta / self.l as f64;
        self.l as f64
            * self
                .terms
                .transverse
                .iter()
                .map(|&g| 0.5 * (0.5 * (2.0 * step * g).sinh()).ln())
                .sum::<f64>()
            - self.beta * self.terms.constant
    }

    /// `ln(<y| E_p |z'> / <z| E_p |z'>)` where `y` is `row` with `flips`
    /// applied. Returns `-inf` when the numerator vanishes.
    pub fn layer_flip_log_ratio(&self, p: usize, row: &[i8], flips: &[usize], col: &[i8]) -> f64 {
        let mut y = row.to_vec();
        for &j in flips {
            y[j] = -y[j];
        }
        let mut touched: smallvec::SmallVec<[usize; 4]> = smallvec::SmallVec::new();
        for &j in flips {
            let f = self.site_factor[p][j];
            if !touched.contains(&f) {
                touched.push(f);
            }
        }
        let mut total = 0.0;
        for f in touched {
            let factor = &self.layers[p][f];
            let num = factor.log_element(&y, col);
            if num == f64::NEG_INFINITY {
                return f64::NEG_INFINITY;
            }
            total += num - factor.log_element(row, col);
        }
        total
    }
}

/// Outcome of [`choose_trotter_slices`].
#[derive(Debug, Clone, PartialEq)]
pub struct SliceChoice {
    pub slices: usize,
    /// `|ln Z_{2L'} - ln Z_{L'}|` at the accepted doubling step, or `0.0` when
    /// the decomposition is exact.
    pub observed_change: f64,
    /// `"exact"`, `"oracle"` or `"extrapolated"`.
    pub method: &'static str,
}

/// Largest chain handled by direct oracle doubling in [`choose_trotter_slices`].
pub const SLICE_ORACLE_MAX_N: usize = 8;

/// Picks an even `L` with `|ln Z_{beta,L} - ln Z_beta| <= delta`.
///
/// Starting from `L0 = ceil(beta * ||H||_bound)` (made even), `L` is doubled
/// until `|ln Z_{2L} - ln Z_L| <= delta / 2` and the larger value returned.
/// Chains longer than [`SLICE_ORACLE_MAX_N`] run the same doubling on an
/// open window of that many sites and scale the change by `n / m`, since the
/// Trotter error of a local Hamiltonian is extensive.
pub fn choose_trotter_slices(
    model: &Model,
    beta: f64,
    delta: f64,
    max_slices: usize,
) -> Result<SliceChoice> {
    model.validate()?;
    choose_trotter_slices_for_terms(
        &model.local_terms(),
        model.norm_upper_bound(),
        beta,
        delta,
        max_slices,
    )
}

pub fn choose_trotter_slices_for_terms(
    terms: &LocalTerms,
    norm_bound: f64,
    beta: f64,
    delta: f64,
    max_slices: usize,
) -> Result<SliceChoice> {
    if !(delta > 0.0 && delta <= 1.0 / 21.0) {
        return Err(Error::InvalidDelta(delta));
    }
    let mut l = ((beta * norm_bound).ceil() as usize).max(2);
    l += l % 2;
    if l > max_slices {
        return Err(Error::BudgetExceeded(format!(
            "initial slice count {l} exceeds the cap {max_slices}"
        )));
    }
    let single_layer =
        terms.field.iter().all(|&h| h == 0.0) && terms.zz.is_empty() && !terms.has_residual_bonds();
    if beta == 0.0 || single_layer {
        return Ok(SliceChoice {
            slices: l,
            observed_change: 0.0,
            method: "exact",
        });
    }
    let (probe, scale, method) = if terms.n <= SLICE_ORACLE_MAX_N {
        (terms.clone(), 1.0, "oracle")
    } else {
        (
            terms.open_window(SLICE_ORACLE_MAX_N),
            terms.n as f64 / SLICE_ORACLE_MAX_N as f64,
            "extrapolated",
        )
    };
    let mut current = oracle::trotter_log_partition_of_terms(&probe, beta, l)?;
    loop {
        if 2 * l > max_slices {
            return Err(Error::BudgetExceeded(format!(
                "Trotter error target {delta} needs more than {max_slices} slices"
            )));
        }
        let doubled = oracle::trotter_log_partition_of_terms(&probe, beta, 2 * l)?;
        let change = scale * (doubled - current).abs();
        if change <= delta / 2.0 {
            return Ok(SliceChoice {
                slices: 2 * l,
                observed_change: change,
                method,
            });
        }
        l *= 2;
        current = doubled;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Boundary, TransverseIsingModel};

    #[test]
    fn frozen_reference_couplings() {
        // 40-digit references.
        let cases = [
            (0.5, 0.385_968_416_452_652_4),
            (1e-8, 9.210_340_371_976_183),
            (20.0, 4.248_354_255_291_589e-18),
        ];
        for (x, want) in cases {
            let got = half_log_coth(x);
            assert!(
                ((got - want) / want).abs() < 1e-14,
                "x={x}: {got} vs {want}"
            );
        }
        assert_eq!(effective_coupling(1.0, 1.0, 2).unwrap(), half_log_coth(0.5));
        assert_eq!(
            effective_coupling(0.0, 1.0, 2),
            Err(Error::DegenerateTemperature)
        );
    }

    #[test]
    fn coupling_is_an_involution() {
        for &x in &[1e-6, 1e-3, 0.1, 0.5, 1.0, 3.0, 10.0] {
            let back = half_log_coth(half_log_coth(x));
            assert!((back - x).abs() <= 1e-12 * x.max(1.0), "x={x}: {back}");
        }
    }

    #[test]
    fn two_slice_single_spin_energy() {
        let model = Model::TransverseIsing(TransverseIsingModel::pure_field(vec![1.0]));
        let sys = TrotterizedSystem::new(&model, 1.0, 2).unwrap();
        let z = SpinConfiguration::frozen(&[1], 2);
        let j = effective_coupling(1.0, 1.0, 2).unwrap();
        assert!((sys.classical_energy_tim(&z).unwrap() + 2.0 * j).abs() < 1e-15);
    }

    #[test]
    fn frozen_flip_ratio_is_two_log_tanh() {
        let model = Model::TransverseIsing(TransverseIsingModel::pure_field(vec![1.0]));
        let sys = TrotterizedSystem::new(&model, 1.0, 2).unwrap();
        let z = SpinConfiguration::frozen(&[1], 2);
        let r = sys.log_weight_ratio_single_flip(&z, 0, 0).unwrap();
        // 2 ln tanh(0.5), 40-digit reference.
        assert!((r - -1.543_873_665_810_609_5).abs() < 1e-14);
    }

    #[test]
    fn hex_packing() {
        let z = SpinConfiguration::new(3, 4, vec![-1, 1, 1, 1, 1, 1, 1, 1, 1, -1, -1, -1]).unwrap();
        assert_eq!(z.to_hex(), "010e");
        assert_eq!(SpinConfiguration::from_index(3, 4, z.to_index()), z);
    }

    #[test]
    fn slice_choice_is_exact_for_pure_field() {
        let model = Model::TransverseIsing(TransverseIsingModel::pure_field(vec![1.0, 2.0]));
        let c = choose_trotter_slices(&model, 2.0, 0.01, 1 << 16).unwrap();
        assert_eq!(c.slices, 6);
        assert_eq!(c.method, "exact");
    }

    #[test]
    fn slice_choice_meets_target_and_is_monotone() {
        let model = Model::TransverseIsing(
            TransverseIsingModel::new(
                vec![1.0, 0.8],
                vec![0.3, -0.2],
                [(0, 1, 0.7)],
                1.0,
                Boundary::Open,
            )
            .unwrap(),
        );
        let exact = oracle::exact_log_partition(&model, 1.0).unwrap();
        let mut prev = 0;
        for delta in [0.04, 0.02, 0.01, 0.005] {
            let c = choose_trotter_slices(&model, 1.0, delta, 1 << 16).unwrap();
            let lz = oracle::exact_trotter_log_partition(&model, 1.0, c.slices).unwrap();
            assert!((lz - exact).abs() <= delta, "delta={delta}, L={}", c.slices);
            assert!(c.slices >= prev);
            prev = c.slices;
        }
    }
}
