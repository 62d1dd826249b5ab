//! Exact reference quantities for small systems.
//!
//! Dense Hamiltonians use the computational basis with site 0 as the most
//! significant bit and bit value 0 for spin `+1`. Everything here is built
//! independently of the sampler's factor tables so the two can be checked
//! against each other.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::chain::{jump_count, JumpBudget};
use crate::error::{Error, Result};
use crate::linalg::{expm_symmetric, log_sum_exp, sorted_eigenvalues, Block4};
use crate::mapping::{SpinConfiguration, TrotterizedSystem};
use crate::models::{LocalTerms, Model};

/// Default cap on `n` for dense `2^n x 2^n` matrices.
pub const DENSE_MAX_N: usize = 12;
/// Default cap on `2^{nL}` for brute-force enumeration of the lattice.
pub const LATTICE_MAX_STATES: u64 = 1 << 20;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseOperator {
    pub n: usize,
    pub matrix: DMatrix<f64>,
}

impl DenseOperator {
    pub fn identity(n: usize) -> Self {
        Self {
            n,
            matrix: DMatrix::identity(1 << n, 1 << n),
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        let m = &self.matrix;
        (0..m.nrows()).all(|r| (0..r).all(|c| (m[(r, c)] - m[(c, r)]).abs() <= tol))
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        sorted_eigenvalues(&self.matrix)
    }
}

pub(crate) fn check_dense(n: usize) -> Result<()> {
    if n > DENSE_MAX_N {
        return Err(Error::TooLarge {
            what: "dense operator qubit count",
            size: n as u64,
            cap: DENSE_MAX_N as u64,
        });
    }
    Ok(())
}

#[inline]
fn site_bit(x: usize, n: usize, j: usize) -> usize {
    (x >> (n - 1 - j)) & 1
}

#[inline]
fn spin(x: usize, n: usize, j: usize) -> f64 {
    1.0 - 2.0 * site_bit(x, n, j) as f64
}

fn add_field_x(h: &mut DMatrix<f64>, n: usize, j: usize, coeff: f64) {
    for x in 0..1usize << n {
        h[(x, x ^ (1 << (n - 1 - j)))] += coeff;
    }
}

fn embed_block(h: &mut DMatrix<f64>, n: usize, left: usize, right: usize, block: &Block4) {
    let (ml, mr) = (1usize << (n - 1 - left), 1usize << (n - 1 - right));
    for x in 0..1usize << n {
        let a = 2 * site_bit(x, n, left) + site_bit(x, n, right);
        let base = x & !ml & !mr;
        for (c, &v) in block[a].iter().enumerate() {
            if v != 0.0 {
                let y = base | if c & 2 != 0 { ml } else { 0 } | if c & 1 != 0 { mr } else { 0 };
                h[(x, y)] += v;
            }
        }
    }
}

/// Dense `H` assembled from the model's own terms.
pub fn assemble_hamiltonian(model: &Model) -> Result<DenseOperator> {
    let n = model.n();
    check_dense(n)?;
    let dim = 1usize << n;
    let mut h = DMatrix::zeros(dim, dim);
    match model {
        Model::TransverseIsing(m) => {
            for x in 0..dim {
                let mut d = 0.0;
                for j in 0..n {
                    d += m.kz[j] * spin(x, n, j);
                }
                for (&(j, k), &v) in &m.kzz {
                    d += v * spin(x, n, j) * spin(x, n, k);
                }
                h[(x, x)] = d;
            }
            for j in 0..n {
                add_field_x(&mut h, n, j, -m.gamma[j]);
            }
        }
        Model::XYChain(m) => {
            for x in 0..dim {
                h[(x, x)] = (0..n).map(|j| m.kz[j] * spin(x, n, j)).sum();
            }
            for j in 0..n {
                add_field_x(&mut h, n, j, -m.gamma[j]);
            }
            for (b, block) in m.bond_blocks().iter().enumerate() {
                let (l, r) = m.boundary.bond_sites(n, b);
                embed_block(&mut h, n, l, r, block);
            }
        }
        Model::General(m) => {
            for (b, block) in m.terms.iter().enumerate() {
                let (l, r) = m.boundary.bond_sites(n, b);
                embed_block(&mut h, n, l, r, block);
            }
            if m.fictitious_field != 0.0 {
                for j in 0..n {
                    add_field_x(&mut h, n, j, -m.fictitious_field);
                }
            }
        }
    }
    Ok(DenseOperator { n, matrix: h })
}

/// Dense `H` from the lowered representation.
pub fn assemble_terms(t: &LocalTerms) -> Result<DenseOperator> {
    let n = t.n;
    check_dense(n)?;
    let mut h = dense_layer(t, 0) + dense_layer(t, 1);
    for x in 0..1usize << n {
        let s: Vec<i8> = (0..n).map(|j| spin(x, n, j) as i8).collect();
        h[(x, x)] += t.diagonal_energy(&s);
    }
    Ok(DenseOperator { n, matrix: h })
}

/// `ln tr exp(-beta H)`.
pub fn exact_log_partition(model: &Model, beta: f64) -> Result<f64> {
    let h = assemble_hamiltonian(model)?;
    Ok(log_partition_of(&h, beta))
}

pub fn log_partition_of(h: &DenseOperator, beta: f64) -> f64 {
    let terms: Vec<f64> = h.eigenvalues().iter().map(|&l| -beta * l).collect();
    log_sum_exp(&terms)
}

pub fn exact_partition(model: &Model, beta: f64) -> Result<f64> {
    Ok(exact_log_partition(model, beta)?.exp())
}

/// `tr[O exp(-beta H)] / Z`.
pub fn exact_observable(model: &Model, beta: f64, op: &DenseOperator) -> Result<f64> {
    let h = assemble_hamiltonian(model)?;
    if op.dim() != h.dim() {
        return Err(Error::DimensionMismatch {
            expected: format!("{}x{} operator", h.dim(), h.dim()),
            got: format!("{}x{}", op.dim(), op.dim()),
        });
    }
    let eig = SymmetricEigen::new(h.matrix);
    let lmin = eig
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let weights: Vec<f64> = eig
        .eigenvalues
        .iter()
        .map(|&l| (-beta * (l - lmin)).exp())
        .collect();
    let z: f64 = weights.iter().sum();
    let v = &eig.eigenvectors;
    let ov = &op.matrix * v;
    let mut acc = 0.0;
    for (k, w) in weights.iter().enumerate() {
        if *w == 0.0 {
            continue;
        }
        acc += w * v.column(k).dot(&ov.column(k));
    }
    Ok(acc / z)
}

/// Dense `H_p`, the off-diagonal layer `p` of the lowered Hamiltonian, with
/// half of every site's transverse field.
fn dense_layer(t: &LocalTerms, p: usize) -> DMatrix<f64> {
    let n = t.n;
    let dim = 1usize << n;
    let mut h = DMatrix::zeros(dim, dim);
    for j in 0..n {
        add_field_x(&mut h, n, j, -0.5 * t.transverse[j]);
    }
    for b in t.bonds.iter().filter(|b| b.layer == p) {
        embed_block(&mut h, n, b.left, b.right, &b.residual);
    }
    h
}

/// `ln tr[(e^{A/L} E_0 e^{A/L} E_1)^{L/2}]` with `E_p = exp(-(2 beta/L) H_p)`,
/// by dense products.
pub fn exact_trotter_log_partition(model: &Model, beta: f64, l: usize) -> Result<f64> {
    model.validate()?;
    trotter_log_partition_of_terms(&model.local_terms(), beta, l)
}

/// [`exact_trotter_log_partition`] for an already lowered Hamiltonian.
pub fn trotter_log_partition_of_terms(t: &LocalTerms, beta: f64, l: usize) -> Result<f64> {
    let n = t.n;
    check_dense(n)?;
    if l < 2 || l % 2 == 1 {
        return Err(Error::InvalidArgument(format!(
            "slice count L = {l} must be even and >= 2"
        )));
    }
    let dim = 1usize << n;
    let step = beta / l as f64;
    let a: Vec<f64> = (0..dim)
        .map(|x| {
            let s: Vec<i8> = (0..n).map(|j| spin(x, n, j) as i8).collect();
            -step * t.diagonal_energy(&s)
        })
        .collect();
    let amax = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let d: Vec<f64> = a.iter().map(|&v| (v - amax).exp()).collect();
    let e0 = expm_symmetric(&(dense_layer(t, 0) * (-2.0 * step)));
    let e1 = expm_symmetric(&(dense_layer(t, 1) * (-2.0 * step)));
    let mut left = e0;
    let mut right = e1;
    for r in 0..dim {
        for c in 0..dim {
            left[(r, c)] *= d[r];
            right[(r, c)] *= d[r];
        }
    }
    let transfer = left * right;
    let (m, log_scale) = scaled_power(transfer, l / 2);
    Ok(m.trace().ln() + log_scale + l as f64 * amax)
}

/// Trotterized thermal expectation: the mean over the two layer orderings of
/// `tr[O E_p D E_q D ...] / tr[...]`, which is what the slice and boundary
/// averaged estimators converge to. Diagonal `O` gives `tr[O T^{L/2}] / Z`.
pub fn exact_trotter_observable(
    t: &LocalTerms,
    beta: f64,
    l: usize,
    op: &DenseOperator,
) -> Result<f64> {
    let n = t.n;
    check_dense(n)?;
    if l < 2 || l % 2 == 1 {
        return Err(Error::InvalidArgument(format!(
            "slice count L = {l} must be even and >= 2"
        )));
    }
    if op.n != n {
        return Err(Error::LengthMismatch(op.n, n));
    }
    let dim = 1usize << n;
    let step = beta / l as f64;
    let a: Vec<f64> = (0..dim)
        .map(|x| {
            let s: Vec<i8> = (0..n).map(|j| spin(x, n, j) as i8).collect();
            -step * t.diagonal_energy(&s)
        })
        .collect();
    let amax = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let d = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        dim,
        a.iter().map(|&v| (v - amax).exp()),
    ));
    let e = [
        expm_symmetric(&(dense_layer(t, 0) * (-2.0 * step))),
        expm_symmetric(&(dense_layer(t, 1) * (-2.0 * step))),
    ];
    let mut total = 0.0;
    for p in 0..2 {
        // Cycle starting right after a D: E_p D E_q D ... D.
        let transfer = &e[p] * &d * &e[1 - p] * &d;
        let (m, _) = scaled_power(transfer, l / 2);
        total += (&op.matrix * &m).trace() / m.trace();
    }
    Ok(total / 2.0)
}

pub fn exact_trotter_partition(model: &Model, beta: f64, l: usize) -> Result<f64> {
    Ok(exact_trotter_log_partition(model, beta, l)?.exp())
}

/// `m^k` as `(scaled matrix, ln scale)` with entries kept near unit size.
fn scaled_power(m: DMatrix<f64>, mut k: usize) -> (DMatrix<f64>, f64) {
    fn normalize(m: &mut DMatrix<f64>) -> f64 {
        let s = m.amax();
        if s > 0.0 && s.is_finite() {
            *m /= s;
            s.ln()
        } else {
            0.0
        }
    }
    let mut base = m;
    let mut base_log = normalize(&mut base);
    let dim = base.nrows();
    let mut acc = DMatrix::identity(dim, dim);
    let mut acc_log = 0.0;
    while k > 0 {
        if k & 1 == 1 {
            acc = &acc * &base;
            acc_log += base_log + normalize(&mut acc);
        }
        k >>= 1;
        if k > 0 {
            base = &base * &base;
            base_log = 2.0 * base_log + normalize(&mut base);
        }
    }
    (acc, acc_log)
}

fn check_lattice(system: &TrotterizedSystem) -> Result<u64> {
    let bits = system.n() * system.slices();
    if bits >= 64 || (1u64 << bits) > LATTICE_MAX_STATES {
        return Err(Error::TooLarge {
            what: "lattice state space",
            size: if bits >= 64 { u64::MAX } else { 1 << bits },
            cap: LATTICE_MAX_STATES,
        });
    }
    Ok(1 << bits)
}

/// `(ln w(z))_z` over every configuration, indexed as in
/// [`SpinConfiguration::from_index`].
pub fn all_log_weights(system: &TrotterizedSystem) -> Result<Vec<f64>> {
    let count = check_lattice(system)?;
    Ok((0..count)
        .map(|x| {
            system.log_weight_unchecked(&SpinConfiguration::from_index(
                system.n(),
                system.slices(),
                x,
            ))
        })
        .collect())
}

/// Normalized `pi` over every configuration and `ln sum_z w(z)`.
pub fn exact_gibbs_vector(system: &TrotterizedSystem) -> Result<(Vec<f64>, f64)> {
    let logs = all_log_weights(system)?;
    let log_z = log_sum_exp(&logs);
    Ok((logs.iter().map(|&lw| (lw - log_z).exp()).collect(), log_z))
}

/// Exact kernel of the lazy Metropolis chain restricted to positive-weight
/// configurations (and to the jump-budget space when `budget` is given).
#[derive(Debug, Clone)]
pub struct TransitionMatrix {
    /// Configuration index of each state.
    pub states: Vec<u64>,
    /// Sparse rows `(state position, probability)`, diagonal included.
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl TransitionMatrix {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut m = DMatrix::zeros(n, n);
        for (r, row) in self.rows.iter().enumerate() {
            for &(c, p) in row {
                m[(r, c)] += p;
            }
        }
        m
    }

    /// `mu P` for a row vector `mu`.
    pub fn apply_left(&self, mu: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        for (r, row) in self.rows.iter().enumerate() {
            for &(c, p) in row {
                out[c] += mu[r] * p;
            }
        }
        out
    }
}

pub fn transition_matrix(
    system: &TrotterizedSystem,
    budget: Option<&JumpBudget>,
) -> Result<TransitionMatrix> {
    let logs = all_log_weights(system)?;
    let (n, l) = (system.n(), system.slices());
    let allowed = |z: &SpinConfiguration| match budget {
        Some(b) => (0..n).all(|j| jump_count(z, j) <= b.cap()),
        None => true,
    };
    let mut position = vec![usize::MAX; logs.len()];
    let mut states = Vec::new();
    for (x, &lw) in logs.iter().enumerate() {
        if lw > f64::NEG_INFINITY && allowed(&SpinConfiguration::from_index(n, l, x as u64)) {
            position[x] = states.len();
            states.push(x as u64);
        }
    }
    let proposal = 1.0 / (2 * n * l) as f64;
    let rows = states
        .iter()
        .enumerate()
        .map(|(r, &x)| {
            let mut row = Vec::with_capacity(n * l + 1);
            let mut stay = 1.0;
            for i in 0..l {
                for j in 0..n {
                    let y = x ^ (1u64 << (i * n + j));
                    let c = position[y as usize];
                    if c == usize::MAX {
                        continue;
                    }
                    let ratio = logs[y as usize] - logs[x as usize];
                    let p = proposal * ratio.min(0.0).exp();
                    stay -= p;
                    row.push((c, p));
                }
            }
            row.push((r, stay));
            row
        })
        .collect();
    Ok(TransitionMatrix { states, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Boundary, TransverseIsingModel};

    #[test]
    fn single_site_field() {
        let m = Model::TransverseIsing(TransverseIsingModel::pure_field(vec![1.0]));
        let h = assemble_hamiltonian(&m).unwrap();
        assert_eq!(
            h.matrix,
            DMatrix::from_row_slice(2, 2, &[0.0, -1.0, -1.0, 0.0])
        );
        let z = exact_partition(&m, 0.7).unwrap();
        assert!((z - 2.0 * 0.7f64.cosh()).abs() < 1e-13);
        assert!((exact_partition(&m, 0.0).unwrap() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn pure_field_trotter_is_exact() {
        let m = Model::TransverseIsing(TransverseIsingModel::pure_field(vec![1.0, 0.5, 2.0]));
        let exact = exact_log_partition(&m, 1.3).unwrap();
        for l in [2, 4, 8, 16] {
            let t = exact_trotter_log_partition(&m, 1.3, l).unwrap();
            assert!((t - exact).abs() < 1e-12);
        }
    }

    #[test]
    fn diagonal_model_trotter_is_exact() {
        let m = Model::TransverseIsing(
            TransverseIsingModel::new(
                vec![1e-300; 2],
                vec![0.3, -0.4],
                [(0, 1, 0.9)],
                1.0,
                Boundary::Open,
            )
            .unwrap(),
        );
        let exact = exact_log_partition(&m, 2.0).unwrap();
        for l in [2, 6, 10] {
            assert!((exact_trotter_log_partition(&m, 2.0, l).unwrap() - exact).abs() < 1e-12);
        }
    }

    #[test]
    fn scaled_power_matches_plain_power() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        let (p, s) = scaled_power(m.clone(), 5);
        let direct = m.pow(5);
        assert!(((p * s.exp()) - direct).amax() < 1e-9);
    }

    #[test]
    fn energy_is_log_derivative() {
        let m = Model::TransverseIsing(
            TransverseIsingModel::new(
                vec![1.0, 0.6, 0.8],
                vec![0.2, 0.0, -0.5],
                [(0, 1, 0.5), (1, 2, -0.7), (0, 2, 0.1)],
                1.0,
                Boundary::Open,
            )
            .unwrap(),
        );
        let h = assemble_hamiltonian(&m).unwrap();
        let e = exact_observable(&m, 1.0, &h).unwrap();
        let eps = 1e-5;
        let fd = -(exact_log_partition(&m, 1.0 + eps).unwrap()
            - exact_log_partition(&m, 1.0 - eps).unwrap())
            / (2.0 * eps);
        assert!((e - fd).abs() < 1e-6);
        assert!(
            (exact_observable(&m, 1.0, &DenseOperator::identity(3)).unwrap() - 1.0).abs() < 1e-13
        );
    }
}
