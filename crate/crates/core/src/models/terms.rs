//! Canonical lowering shared by every model family.
//!
//! Any supported Hamiltonian is rewritten as
//!
//! ```text
//! H = c + sum_j h_j Z_j + sum_{j<k} K_jk Z_j Z_k - sum_j g_j X_j + sum_b R_b
//! ```
//!
//! where each `R_b` is a two-site block with zero diagonal and nonpositive
//! off-diagonal entries. Single-site flip amplitudes that are uniform across
//! the neighbour's state are pulled out of the bond blocks into `g_j`, so
//! the residual `R_b` only carries what genuinely needs the pair.

use crate::error::{Error, Result};
use crate::linalg::{norm4, Block4};

use super::{Boundary, GeneralChainModel, TransverseIsingModel, XYChainModel};

#[derive(Debug, Clone, PartialEq)]
pub struct BondTerm {
    pub left: usize,
    pub right: usize,
    /// Off-diagonal layer (0 or 1) the bond belongs to.
    pub layer: usize,
    /// Residual off-diagonal block, zero diagonal, entries `<= 0`.
    pub residual: Block4,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalTerms {
    pub n: usize,
    pub boundary: Boundary,
    pub constant: f64,
    pub field: Vec<f64>,
    /// `(j, k, K_jk)` with `j < k`, one entry per unordered pair.
    pub zz: Vec<(usize, usize, f64)>,
    /// Uniform transverse field `g_j` on each site.
    pub transverse: Vec<f64>,
    pub bonds: Vec<BondTerm>,
}

impl LocalTerms {
    fn empty(n: usize, boundary: Boundary) -> Self {
        Self {
            n,
            boundary,
            constant: 0.0,
            field: vec![0.0; n],
            zz: Vec::new(),
            transverse: vec![0.0; n],
            bonds: Vec::new(),
        }
    }

    pub fn from_tim(m: &TransverseIsingModel) -> Self {
        let mut t = Self::empty(m.n(), m.boundary);
        t.field.clone_from(&m.kz);
        t.transverse.clone_from(&m.gamma);
        t.zz = m
            .kzz
            .iter()
            .filter(|(_, &v)| v != 0.0)
            .map(|(&(j, k), &v)| (j, k, v))
            .collect();
        t
    }

    pub fn from_xy(m: &XYChainModel) -> Self {
        let mut t = Self::empty(m.n(), m.boundary);
        t.field.clone_from(&m.kz);
        t.transverse.clone_from(&m.gamma);
        for (b, block) in m.bond_blocks().iter().enumerate() {
            t.add_block(b, block);
        }
        t.merge_zz();
        t
    }

    pub fn from_general(m: &GeneralChainModel) -> Self {
        let mut t = Self::empty(m.n, m.boundary);
        for (b, block) in m.terms.iter().enumerate() {
            t.add_block(b, block);
        }
        for g in t.transverse.iter_mut() {
            *g += m.fictitious_field;
        }
        t.merge_zz();
        t
    }

    fn add_block(&mut self, b: usize, block: &Block4) {
        let (left, right) = self.boundary.bond_sites(self.n, b);
        let d = [block[0][0], block[1][1], block[2][2], block[3][3]];
        // d(s_l, s_r) = c0 + c1 s_l + c2 s_r + c3 s_l s_r with index 2*bit_l + bit_r, s = 1 - 2 bit.
        self.constant += (d[0] + d[1] + d[2] + d[3]) / 4.0;
        self.field[left] += (d[0] + d[1] - d[2] - d[3]) / 4.0;
        self.field[right] += (d[0] - d[1] + d[2] - d[3]) / 4.0;
        let c3 = (d[0] - d[1] - d[2] + d[3]) / 4.0;
        if c3 != 0.0 {
            self.zz.push((left.min(right), left.max(right), c3));
        }

        let g_left = (0..2)
            .map(|r| -block[r][r + 2])
            .fold(f64::INFINITY, f64::min)
            .max(0.0);
        let g_right = (0..2)
            .map(|l| -block[2 * l][2 * l + 1])
            .fold(f64::INFINITY, f64::min)
            .max(0.0);
        self.transverse[left] += g_left;
        self.transverse[right] += g_right;

        let mut residual = *block;
        for (r, row) in residual.iter_mut().enumerate() {
            row[r] = 0.0;
        }
        for r in 0..2 {
            residual[r][r + 2] += g_left;
            residual[r + 2][r] += g_left;
            residual[2 * r][2 * r + 1] += g_right;
            residual[2 * r + 1][2 * r] += g_right;
        }
        for row in residual.iter_mut() {
            for v in row.iter_mut() {
                // Flush cancellation noise so structural zeros stay zeros.
                if v.abs() < 1e-15 {
                    *v = 0.0;
                }
            }
        }
        self.bonds.push(BondTerm {
            left,
            right,
            layer: b % 2,
            residual,
        });
    }

    pub(crate) fn merge_zz(&mut self) {
        self.zz.sort_by_key(|&(j, k, _)| (j, k));
        let mut merged: Vec<(usize, usize, f64)> = Vec::with_capacity(self.zz.len());
        for &(j, k, v) in &self.zz {
            match merged.last_mut() {
                Some(last) if last.0 == j && last.1 == k => last.2 += v,
                _ => merged.push((j, k, v)),
            }
        }
        self.zz = merged;
    }

    /// Diagonal energy `<z|diag(H)|z>` of one slice given as +-1 spins.
    pub fn diagonal_energy(&self, spins: &[i8]) -> f64 {
        let mut e = self.constant;
        for (h, &s) in self.field.iter().zip(spins) {
            e += h * s as f64;
        }
        for &(j, k, v) in &self.zz {
            e += v * (spins[j] * spins[k]) as f64;
        }
        e
    }

    /// Upper bound on `max_z -diag(H)(z)`.
    pub fn max_negative_diagonal(&self) -> f64 {
        -self.constant
            + self.field.iter().map(|v| v.abs()).sum::<f64>()
            + self.zz.iter().map(|t| t.2.abs()).sum::<f64>()
    }

    /// `zz` couplings indexed by site.
    pub fn zz_adjacency(&self) -> Vec<Vec<(usize, f64)>> {
        let mut adj = vec![Vec::new(); self.n];
        for &(j, k, v) in &self.zz {
            adj[j].push((k, v));
            adj[k].push((j, v));
        }
        adj
    }

    /// Upper bound on `||H||` by the triangle inequality.
    pub fn norm_bound(&self) -> f64 {
        self.constant.abs()
            + self.field.iter().map(|v| v.abs()).sum::<f64>()
            + self.zz.iter().map(|t| t.2.abs()).sum::<f64>()
            + self.transverse.iter().sum::<f64>()
            + self.bonds.iter().map(|b| norm4(&b.residual)).sum::<f64>()
    }

    /// Sign structure required by the sampler: nonnegative transverse fields
    /// and nonpositive residual bond entries.
    pub fn check_stoquastic(&self) -> Result<()> {
        for (site, &g) in self.transverse.iter().enumerate() {
            if !(g >= 0.0) || !g.is_finite() {
                return Err(Error::InvalidModel(format!(
                    "site {site} has transverse field {g} < 0"
                )));
            }
        }
        for (b, bond) in self.bonds.iter().enumerate() {
            for (row, r) in bond.residual.iter().enumerate() {
                for (col, &value) in r.iter().enumerate() {
                    if value > 0.0 {
                        return Err(Error::NonStoquastic {
                            bond: b,
                            row,
                            col,
                            value,
                        });
                    }
                }
            }
        }
        Ok(())
    }

    /// The first `m` sites as an open chain; terms reaching outside the
    /// window are dropped.
    pub fn open_window(&self, m: usize) -> Self {
        let m = m.min(self.n);
        let mut bonds: Vec<BondTerm> = self
            .bonds
            .iter()
            .filter(|b| b.left < m && b.right < m && b.left < b.right)
            .cloned()
            .collect();
        for (k, b) in bonds.iter_mut().enumerate() {
            b.layer = k % 2;
        }
        Self {
            n: m,
            boundary: Boundary::Open,
            constant: self.constant * m as f64 / self.n as f64,
            field: self.field[..m].to_vec(),
            zz: self.zz.iter().copied().filter(|&(_, k, _)| k < m).collect(),
            transverse: self.transverse[..m].to_vec(),
            bonds,
        }
    }

    /// Whether any bond carries a genuinely two-site flip amplitude.
    pub fn has_residual_bonds(&self) -> bool {
        self.bonds
            .iter()
            .any(|b| b.residual.iter().flatten().any(|&v| v != 0.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn general_block_roundtrip() {
        // -X(x)I - 0.3 ZZ + 0.2 Z(x)I - 0.5 XX, then check that the lowering
        // reproduces every matrix entry.
        let mut h = [[0.0; 4]; 4];
        let zz = [1.0, -1.0, -1.0, 1.0];
        let zl = [1.0, 1.0, -1.0, -1.0];
        for i in 0..4 {
            h[i][i] = -0.3 * zz[i] + 0.2 * zl[i];
        }
        for r in 0..2 {
            h[r][r + 2] -= 1.0;
            h[r + 2][r] -= 1.0;
        }
        for r in 0..4 {
            h[r][3 - r] -= 0.5;
        }
        let m = GeneralChainModel {
            n: 2,
            terms: vec![h],
            boundary: Boundary::Open,
            fictitious_field: 0.0,
        };
        let t = LocalTerms::from_general(&m);
        assert!((t.transverse[0] - 1.0).abs() < 1e-15);
        assert_eq!(t.transverse[1], 0.0);
        assert_eq!(t.zz, vec![(0, 1, -0.3)]);
        assert!((t.field[0] - 0.2).abs() < 1e-15);
        let r = &t.bonds[0].residual;
        for i in 0..4 {
            assert_eq!(r[i][3 - i], -0.5);
        }
        assert_eq!(r[0][2], 0.0);
    }
}
