#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stoqpimc::linalg::{norm4, Block4};
use stoqpimc::models::{Boundary, GeneralChainModel, Model, TransverseIsingModel, XYChainModel};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Long-range TIM obeying the decay bound with `xi = 1`.
pub fn random_tim(n: usize, boundary: Boundary, rng: &mut ChaCha8Rng) -> TransverseIsingModel {
    let gamma = (0..n).map(|_| rng.gen_range(0.25..1.0)).collect();
    let kz = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut couplings = Vec::new();
    for j in 0..n {
        for k in j + 1..n {
            let d = boundary.distance(n, j, k) as f64;
            couplings.push((j, k, rng.gen_range(-1.0..1.0) * d.powf(-3.0)));
        }
    }
    TransverseIsingModel::new(gamma, kz, couplings, 1.0, boundary).unwrap()
}

pub fn random_xy(n: usize, boundary: Boundary, rng: &mut ChaCha8Rng) -> XYChainModel {
    let bonds = boundary.bond_count(n);
    let kxx: Vec<f64> = (0..bonds).map(|_| rng.gen_range(0.0..1.0)).collect();
    XYChainModel {
        gamma: (0..n).map(|_| rng.gen_range(0.25..1.0)).collect(),
        kz: (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        kyy: kxx.iter().map(|&x| rng.gen_range(-x..=x)).collect(),
        kxx,
        kzz: (0..bonds).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        boundary,
    }
}

/// Symmetric block with nonpositive off-diagonal entries and norm <= 1.
pub fn random_block(rng: &mut ChaCha8Rng, density: f64) -> Block4 {
    let mut b = [[0.0; 4]; 4];
    for r in 0..4 {
        b[r][r] = rng.gen_range(-1.0..1.0);
        for c in r + 1..4 {
            if rng.gen_bool(density) {
                let v = -rng.gen_range(0.0..1.0);
                b[r][c] = v;
                b[c][r] = v;
            }
        }
    }
    let norm = norm4(&b);
    if norm > 1.0 {
        for v in b.iter_mut().flatten() {
            *v /= norm;
        }
    }
    b
}

pub fn random_general(n: usize, boundary: Boundary, rng: &mut ChaCha8Rng) -> GeneralChainModel {
    let density = rng.gen_range(0.2..1.0);
    GeneralChainModel {
        n,
        terms: (0..boundary.bond_count(n))
            .map(|_| random_block(rng, density))
            .collect(),
        boundary,
        fictitious_field: 0.0,
    }
}

/// A model of each family on `n` sites.
pub fn random_models(n: usize, seed: u64) -> Vec<Model> {
    let mut r = rng(seed);
    vec![
        Model::TransverseIsing(random_tim(n, Boundary::Open, &mut r)),
        Model::XYChain(random_xy(n, Boundary::Open, &mut r)),
        Model::General(random_general(n, Boundary::Open, &mut r))
            .with_ergodic_field(0.1)
            .0,
    ]
}

pub fn sx_sx() -> Block4 {
    let mut b = [[0.0; 4]; 4];
    for r in 0..4 {
        b[r][3 - r] = -1.0;
    }
    b
}
