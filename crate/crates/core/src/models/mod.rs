//! Hamiltonian families accepted by the engine.
//!
//! Three families are supported, all 1D and stoquastic in the `sigma^z`
//! basis:
//!
//! * [`TransverseIsingModel`]: site fields, a transverse field on every site,
//!   and long-range `zz` couplings with algebraic decay.
//! * [`XYChainModel`]: nearest-neighbour `xx`, `yy`, `zz` bonds plus site
//!   fields.
//! * [`GeneralChainModel`]: arbitrary stoquastic 4x4 bond terms of norm at
//!   most one, with an optional uniform fictitious transverse field.
//!
//! Sites are indexed from 0 in the library. Model files use 1-based indices.
//! Every family lowers to the same [`LocalTerms`] representation, which is
//! what the mapping and the oracle consume.

mod file;
mod terms;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{is_symmetric4, norm4, Block4};

pub use file::{model_to_toml, parse_model, read_model_file};
pub use terms::{BondTerm, LocalTerms};

/// Tolerance used when comparing against the unit-norm and decay bounds, so
/// that couplings typed in at exactly the bound are accepted.
const BOUND_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    Open,
    Periodic,
}

impl Boundary {
    /// Number of nearest-neighbour bonds on a chain of `n` sites.
    pub fn bond_count(self, n: usize) -> usize {
        match self {
            Boundary::Open => n.saturating_sub(1),
            Boundary::Periodic => n,
        }
    }

    /// Sites joined by bond `b`; bond `n - 1` wraps around under periodic
    /// boundaries.
    pub fn bond_sites(self, n: usize, b: usize) -> (usize, usize) {
        (b, (b + 1) % n)
    }

    /// Spatial distance between sites, chordal under periodic boundaries.
    pub fn distance(self, n: usize, j: usize, k: usize) -> usize {
        let d = j.abs_diff(k);
        match self {
            Boundary::Open => d,
            Boundary::Periodic => d.min(n - d),
        }
    }
}

/// Long-range transverse-field Ising chain
/// `H = -sum_j Gamma_j X_j + sum_j Kz_j Z_j + sum_{j<k} Kzz_jk Z_j Z_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransverseIsingModel {
    pub gamma: Vec<f64>,
    pub kz: Vec<f64>,
    /// Couplings keyed by `(min(j,k), max(j,k))`; each unordered pair once.
    pub kzz: BTreeMap<(usize, usize), f64>,
    pub xi: f64,
    pub boundary: Boundary,
}

impl TransverseIsingModel {
    pub fn new(
        gamma: Vec<f64>,
        kz: Vec<f64>,
        couplings: impl IntoIterator<Item = (usize, usize, f64)>,
        xi: f64,
        boundary: Boundary,
    ) -> Result<Self> {
        let n = gamma.len();
        if n == 0 {
            return Err(Error::InvalidModel("at least one site is required".into()));
        }
        if kz.len() != n {
            return Err(Error::DimensionMismatch {
                expected: format!("{n} longitudinal fields"),
                got: kz.len().to_string(),
            });
        }
        let mut kzz = BTreeMap::new();
        for (j, k, value) in couplings {
            if j >= n || k >= n {
                return Err(Error::InvalidModel(format!(
                    "coupling ({j},{k}) references a site outside 0..{n}"
                )));
            }
            let key = (j.min(k), j.max(k));
            match kzz.insert(key, value) {
                Some(prev) if prev != value => {
                    return Err(Error::InvalidModel(format!(
                        "coupling ({},{}) given twice with different values {prev} and {value}",
                        key.0, key.1
                    )))
                }
                _ => {}
            }
        }
        Ok(Self {
            gamma,
            kz,
            kzz,
            xi,
            boundary,
        })
    }

    /// `H = -sum_j Gamma_j X_j`.
    pub fn pure_field(gamma: Vec<f64>) -> Self {
        let n = gamma.len();
        Self {
            gamma,
            kz: vec![0.0; n],
            kzz: BTreeMap::new(),
            xi: 1.0,
            boundary: Boundary::Open,
        }
    }

    pub fn n(&self) -> usize {
        self.gamma.len()
    }

    pub fn coupling(&self, j: usize, k: usize) -> f64 {
        self.kzz.get(&(j.min(k), j.max(k))).copied().unwrap_or(0.0)
    }

    /// Smallest transverse field.
    pub fn min_gamma(&self) -> f64 {
        self.gamma.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        check_gammas(&self.gamma)?;
        check_unit_interval("kz", &self.kz)?;
        if !(self.xi > 0.0) {
            return Err(Error::InvalidModel(format!(
                "decay exponent xi = {} must be > 0",
                self.xi
            )));
        }
        for (&(j, k), &value) in &self.kzz {
            if j == k {
                return Err(Error::InvalidModel(format!("self-coupling on site {j}")));
            }
            if !value.is_finite() {
                return Err(Error::InvalidModel(format!(
                    "coupling ({j},{k}) is not finite"
                )));
            }
            let distance = self.boundary.distance(n, j, k);
            let bound = (distance as f64).powf(-(2.0 + self.xi));
            if value.abs() > bound + BOUND_TOL {
                return Err(Error::DecayViolation {
                    j,
                    k,
                    value,
                    bound,
                    distance,
                });
            }
        }
        Ok(())
    }

    pub fn norm_upper_bound(&self) -> f64 {
        self.gamma.iter().sum::<f64>()
            + self.kz.iter().map(|v| v.abs()).sum::<f64>()
            + self.kzz.values().map(|v| v.abs()).sum::<f64>()
    }
}

/// Nearest-neighbour XY chain
/// `H = -sum Gamma_j X_j - sum Kxx_b X X - sum Kyy_b Y Y + sum (Kzz_b Z Z + Kz_j Z_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct XYChainModel {
    pub gamma: Vec<f64>,
    pub kz: Vec<f64>,
    pub kxx: Vec<f64>,
    pub kyy: Vec<f64>,
    pub kzz: Vec<f64>,
    pub boundary: Boundary,
}

impl XYChainModel {
    pub fn n(&self) -> usize {
        self.gamma.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        check_chain_shape(n, self.boundary)?;
        let bonds = self.boundary.bond_count(n);
        for (what, v) in [("kxx", &self.kxx), ("kyy", &self.kyy), ("kzz", &self.kzz)] {
            if v.len() != bonds {
                return Err(Error::DimensionMismatch {
                    expected: format!("{bonds} {what} bond values"),
                    got: v.len().to_string(),
                });
            }
        }
        if self.kz.len() != n {
            return Err(Error::DimensionMismatch {
                expected: format!("{n} longitudinal fields"),
                got: self.kz.len().to_string(),
            });
        }
        check_gammas(&self.gamma)?;
        check_unit_interval("kz", &self.kz)?;
        check_unit_interval("kzz", &self.kzz)?;
        for (b, (&xx, &yy)) in self.kxx.iter().zip(&self.kyy).enumerate() {
            if !(xx >= 0.0) || !xx.is_finite() {
                return Err(Error::OutOfRange {
                    what: "kxx",
                    index: b,
                    value: xx,
                    range: "[0, inf)",
                });
            }
            if !(yy.abs() <= xx) {
                return Err(Error::OutOfRange {
                    what: "kyy",
                    index: b,
                    value: yy,
                    range: "[-kxx, kxx]",
                });
            }
        }
        Ok(())
    }

    pub fn norm_upper_bound(&self) -> f64 {
        let abs_sum = |v: &[f64]| v.iter().map(|x| x.abs()).sum::<f64>();
        abs_sum(&self.gamma)
            + abs_sum(&self.kz)
            + abs_sum(&self.kxx)
            + abs_sum(&self.kyy)
            + abs_sum(&self.kzz)
    }

    /// Bond terms (without the site fields) in the 4x4 two-site basis.
    pub fn bond_blocks(&self) -> Vec<Block4> {
        (0..self.kxx.len())
            .map(|b| {
                let (xx, yy, zz) = (self.kxx[b], self.kyy[b], self.kzz[b]);
                let mut m = [[0.0; 4]; 4];
                // Z Z diagonal: ++ and -- get +1, mixed get -1.
                m[0][0] = zz;
                m[1][1] = -zz;
                m[2][2] = -zz;
                m[3][3] = zz;
                // X X connects 0<->3 and 1<->2; Y Y has -1 on 0<->3, +1 on 1<->2.
                m[0][3] = -xx + yy;
                m[3][0] = -xx + yy;
                m[1][2] = -xx - yy;
                m[2][1] = -xx - yy;
                m
            })
            .collect()
    }
}

/// General 1D stoquastic chain `H = sum_b H_b - Gamma_f sum_j X_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralChainModel {
    pub n: usize,
    pub terms: Vec<Block4>,
    pub boundary: Boundary,
    /// Uniform fictitious transverse field added to restore ergodicity.
    pub fictitious_field: f64,
}

impl GeneralChainModel {
    pub fn validate(&self) -> Result<()> {
        check_chain_shape(self.n, self.boundary)?;
        let bonds = self.boundary.bond_count(self.n);
        if self.terms.len() != bonds {
            return Err(Error::DimensionMismatch {
                expected: format!("{bonds} bond terms"),
                got: self.terms.len().to_string(),
            });
        }
        if !(self.fictitious_field >= 0.0) || !self.fictitious_field.is_finite() {
            return Err(Error::OutOfRange {
                what: "fictitious_field",
                index: 0,
                value: self.fictitious_field,
                range: "[0, inf)",
            });
        }
        for (b, term) in self.terms.iter().enumerate() {
            if term.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::InvalidModel(format!(
                    "bond {b} has a non-finite entry"
                )));
            }
            if !is_symmetric4(term, 1e-12) {
                return Err(Error::InvalidModel(format!("bond {b} is not symmetric")));
            }
            for (r, row) in term.iter().enumerate() {
                for (c, &value) in row.iter().enumerate() {
                    if r != c && value > 0.0 {
                        return Err(Error::NonStoquastic {
                            bond: b,
                            row: r,
                            col: c,
                            value,
                        });
                    }
                }
            }
            let norm = norm4(term);
            if norm > 1.0 + BOUND_TOL {
                return Err(Error::NormViolation { bond: b, norm });
            }
        }
        Ok(())
    }

    pub fn norm_upper_bound(&self) -> f64 {
        self.terms.iter().map(norm4).sum::<f64>() + self.n as f64 * self.fictitious_field
    }

    /// Transverse field each site carries in the lowered representation:
    /// the uniform part of its one-site flip elements plus the fictitious
    /// field.
    pub fn site_transverse_fields(&self) -> Vec<f64> {
        LocalTerms::from_general(self).transverse
    }

    /// Bound on `|ln Z(with field) - ln Z(without)|`, i.e. `beta * n * Gamma_f`.
    pub fn fictitious_log_z_bound(&self, beta: f64) -> f64 {
        beta * self.n as f64 * self.fictitious_field
    }
}

/// Returns a copy of `model` carrying a uniform fictitious field
/// `delta_mult / n` when some site has no transverse field, so that
/// single-site updates are ergodic. Models whose every site already carries
/// a positive field are returned unchanged.
pub fn add_fictitious_field(model: &GeneralChainModel, delta_mult: f64) -> GeneralChainModel {
    let mut out = model.clone();
    if model.site_transverse_fields().iter().all(|&g| g > 0.0) {
        return out;
    }
    out.fictitious_field = delta_mult / model.n as f64;
    out
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    TransverseIsing(TransverseIsingModel),
    XYChain(XYChainModel),
    General(GeneralChainModel),
}

impl Model {
    pub fn n(&self) -> usize {
        match self {
            Model::TransverseIsing(m) => m.n(),
            Model::XYChain(m) => m.n(),
            Model::General(m) => m.n,
        }
    }

    pub fn family(&self) -> &'static str {
        match self {
            Model::TransverseIsing(_) => "tim",
            Model::XYChain(_) => "xy",
            Model::General(_) => "general",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Model::TransverseIsing(m) => m.validate(),
            Model::XYChain(m) => m.validate(),
            Model::General(m) => m.validate(),
        }
    }

    pub fn norm_upper_bound(&self) -> f64 {
        match self {
            Model::TransverseIsing(m) => m.norm_upper_bound(),
            Model::XYChain(m) => m.norm_upper_bound(),
            Model::General(m) => m.norm_upper_bound(),
        }
    }

    pub fn local_terms(&self) -> LocalTerms {
        match self {
            Model::TransverseIsing(m) => LocalTerms::from_tim(m),
            Model::XYChain(m) => LocalTerms::from_xy(m),
            Model::General(m) => LocalTerms::from_general(m),
        }
    }

    /// The model with a fictitious field added where needed (general family
    /// only) and the resulting field strength.
    pub fn with_ergodic_field(&self, delta_mult: f64) -> (Model, f64) {
        match self {
            Model::General(m) => {
                let g = add_fictitious_field(m, delta_mult);
                let field = g.fictitious_field;
                (Model::General(g), field)
            }
            other => (other.clone(), 0.0),
        }
    }
}

fn check_gammas(gamma: &[f64]) -> Result<()> {
    for (site, &value) in gamma.iter().enumerate() {
        if !(value > 0.0) || !value.is_finite() {
            return Err(Error::NonPositiveGamma { site, value });
        }
    }
    Ok(())
}

fn check_unit_interval(what: &'static str, values: &[f64]) -> Result<()> {
    for (index, &value) in values.iter().enumerate() {
        if !(value.abs() <= 1.0) {
            return Err(Error::OutOfRange {
                what,
                index,
                value,
                range: "[-1, 1]",
            });
        }
    }
    Ok(())
}

/// Bond-structured families need two commuting off-diagonal layers, which a
/// periodic ring only has for an even number of sites.
fn check_chain_shape(n: usize, boundary: Boundary) -> Result<()> {
    if n < 2 {
        return Err(Error::InvalidModel(
            "bond models need at least two sites".into(),
        ));
    }
    if boundary == Boundary::Periodic && n % 2 == 1 {
        return Err(Error::InvalidModel(format!(
            "periodic bond models need an even number of sites (got {n})"
        )));
    }
    Ok(())
}
