//! Sparse, row-computable observables.
//!
//! An observable is described by its rows: for a basis state `z` it lists
//! the states `y` with `<z|O|y> != 0` as sets of flipped sites together
//! with the matrix element. This is all the sampler needs, and it avoids
//! ever forming a `2^n` matrix.

use nalgebra::DMatrix;
use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::models::LocalTerms;
use crate::oracle::{check_dense, DenseOperator};

pub type Flips = SmallVec<[usize; 4]>;

pub trait RowComputable: Sync {
    fn n(&self) -> usize;

    /// Appends the nonzero entries of row `z` to `out`.
    fn rows(&self, z: &[i8], out: &mut Vec<(Flips, f64)>);

    /// Upper bound on the operator norm.
    fn norm_bound(&self) -> f64;

    /// Whether every row is a single diagonal entry.
    fn is_diagonal(&self) -> bool;

    /// `<z|O|z>`.
    fn diagonal(&self, z: &[i8]) -> f64 {
        let mut rows = Vec::new();
        self.rows(z, &mut rows);
        rows.iter()
            .filter(|(f, _)| f.is_empty())
            .map(|(_, v)| v)
            .sum()
    }

    fn to_dense(&self) -> Result<DenseOperator> {
        let n = self.n();
        check_dense(n)?;
        let dim = 1usize << n;
        let mut m = DMatrix::zeros(dim, dim);
        let mut rows = Vec::new();
        for x in 0..dim {
            let z: Vec<i8> = (0..n)
                .map(|j| if (x >> (n - 1 - j)) & 1 == 1 { -1 } else { 1 })
                .collect();
            rows.clear();
            self.rows(&z, &mut rows);
            for (flips, v) in &rows {
                let y = flips.iter().fold(x, |acc, &j| acc ^ (1 << (n - 1 - j)));
                m[(x, y)] += v;
            }
        }
        Ok(DenseOperator { n, matrix: m })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pauli {
    X,
    Y,
    Z,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PauliTerm {
    pub coeff: f64,
    /// `(site, operator)` with distinct sites.
    pub ops: Vec<(usize, Pauli)>,
}

/// Real linear combination of Pauli strings.
#[derive(Debug, Clone, PartialEq)]
pub struct PauliSum {
    n: usize,
    terms: Vec<PauliTerm>,
}

impl PauliSum {
    pub fn new(n: usize, terms: Vec<PauliTerm>) -> Result<Self> {
        for t in &terms {
            let mut seen = Vec::new();
            for &(j, _) in &t.ops {
                if j >= n {
                    return Err(Error::InvalidObservable(format!(
                        "site {} outside 1..={n}",
                        j + 1
                    )));
                }
                if seen.contains(&j) {
                    return Err(Error::InvalidObservable(format!(
                        "site {} appears twice in one term",
                        j + 1
                    )));
                }
                seen.push(j);
            }
            if t.ops.iter().filter(|(_, p)| *p == Pauli::Y).count() % 2 == 1 {
                return Err(Error::InvalidObservable(
                    "a term with an odd number of Y factors is not a real matrix".into(),
                ));
            }
            if !t.coeff.is_finite() {
                return Err(Error::InvalidObservable("non-finite coefficient".into()));
            }
        }
        Ok(Self { n, terms })
    }

    pub fn identity(n: usize) -> Self {
        Self::single(n, 1.0, vec![])
    }

    pub fn sigma_z(n: usize, j: usize) -> Result<Self> {
        Self::new(
            n,
            vec![PauliTerm {
                coeff: 1.0,
                ops: vec![(j, Pauli::Z)],
            }],
        )
    }

    pub fn sigma_x(n: usize, j: usize) -> Result<Self> {
        Self::new(
            n,
            vec![PauliTerm {
                coeff: 1.0,
                ops: vec![(j, Pauli::X)],
            }],
        )
    }

    pub fn zz(n: usize, j: usize, k: usize) -> Result<Self> {
        Self::new(
            n,
            vec![PauliTerm {
                coeff: 1.0,
                ops: vec![(j, Pauli::Z), (k, Pauli::Z)],
            }],
        )
    }

    fn single(n: usize, coeff: f64, ops: Vec<(usize, Pauli)>) -> Self {
        Self {
            n,
            terms: vec![PauliTerm { coeff, ops }],
        }
    }

    pub fn terms(&self) -> &[PauliTerm] {
        &self.terms
    }

    /// `self + shift * I`.
    pub fn shifted(&self, shift: f64) -> Self {
        let mut out = self.clone();
        if shift != 0.0 {
            out.terms.push(PauliTerm {
                coeff: shift,
                ops: vec![],
            });
        }
        out
    }

    /// Parses one term per line: a coefficient followed by operators such as
    /// `X1 Z3` (1-based sites). Blank lines and `#` comments are skipped.
    pub fn parse(n: usize, text: &str) -> Result<Self> {
        let mut terms = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let coeff: f64 = parts.next().and_then(|c| c.parse().ok()).ok_or_else(|| {
                Error::InvalidObservable(format!("line {}: expected a coefficient", lineno + 1))
            })?;
            let mut ops = Vec::new();
            for tok in parts {
                if tok == "I" {
                    continue;
                }
                let (head, site) = tok.split_at(1);
                let p = match head {
                    "X" | "x" => Pauli::X,
                    "Y" | "y" => Pauli::Y,
                    "Z" | "z" => Pauli::Z,
                    _ => {
                        return Err(Error::InvalidObservable(format!(
                            "line {}: bad operator {tok:?}",
                            lineno + 1
                        )))
                    }
                };
                let site: usize = site.parse().ok().filter(|&s| s >= 1).ok_or_else(|| {
                    Error::InvalidObservable(format!("line {}: bad site in {tok:?}", lineno + 1))
                })?;
                ops.push((site - 1, p));
            }
            terms.push(PauliTerm { coeff, ops });
        }
        Self::new(n, terms)
    }
}

impl RowComputable for PauliSum {
    fn n(&self) -> usize {
        self.n
    }

    fn rows(&self, z: &[i8], out: &mut Vec<(Flips, f64)>) {
        for t in &self.terms {
            let mut flips = Flips::new();
            let mut value = t.coeff;
            let mut ys = 0;
            for &(j, p) in &t.ops {
                match p {
                    Pauli::X => flips.push(j),
                    Pauli::Z => value *= z[j] as f64,
                    Pauli::Y => {
                        // <z|Y|flip z> = -i s_z for spin s_z = +-1; the
                        // factors of -i pair up into a real sign.
                        flips.push(j);
                        value *= z[j] as f64;
                        ys += 1;
                    }
                }
            }
            if (ys / 2) % 2 == 1 {
                value = -value;
            }
            flips.sort_unstable();
            match out.iter_mut().find(|(f, _)| *f == flips) {
                Some(entry) => entry.1 += value,
                None => out.push((flips, value)),
            }
        }
    }

    fn norm_bound(&self) -> f64 {
        self.terms.iter().map(|t| t.coeff.abs()).sum()
    }

    fn is_diagonal(&self) -> bool {
        self.terms
            .iter()
            .all(|t| t.ops.iter().all(|&(_, p)| p == Pauli::Z))
    }
}

/// The Hamiltonian itself, `O = H`.
#[derive(Debug, Clone)]
pub struct EnergyObservable {
    terms: LocalTerms,
}

impl EnergyObservable {
    pub fn new(terms: LocalTerms) -> Self {
        Self { terms }
    }
}

impl RowComputable for EnergyObservable {
    fn n(&self) -> usize {
        self.terms.n
    }

    fn rows(&self, z: &[i8], out: &mut Vec<(Flips, f64)>) {
        out.push((Flips::new(), self.terms.diagonal_energy(z)));
        for (j, &g) in self.terms.transverse.iter().enumerate() {
            if g != 0.0 {
                out.push((SmallVec::from_slice(&[j]), -g));
            }
        }
        for b in &self.terms.bonds {
            let bit = |s: i8| (s < 0) as usize;
            let a = 2 * bit(z[b.left]) + bit(z[b.right]);
            for (c, &v) in b.residual[a].iter().enumerate() {
                if v == 0.0 {
                    continue;
                }
                let mut flips = Flips::new();
                if (a ^ c) & 2 != 0 {
                    flips.push(b.left);
                }
                if (a ^ c) & 1 != 0 {
                    flips.push(b.right);
                }
                flips.sort_unstable();
                match out.iter_mut().find(|(f, _)| *f == flips) {
                    Some(entry) => entry.1 += v,
                    None => out.push((flips, v)),
                }
            }
        }
    }

    fn norm_bound(&self) -> f64 {
        let t = &self.terms;
        t.constant.abs()
            + t.field.iter().map(|v| v.abs()).sum::<f64>()
            + t.zz.iter().map(|v| v.2.abs()).sum::<f64>()
            + t.transverse.iter().sum::<f64>()
            + t.bonds
                .iter()
                .map(|b| crate::linalg::norm4(&b.residual))
                .sum::<f64>()
    }

    fn is_diagonal(&self) -> bool {
        false
    }
}
