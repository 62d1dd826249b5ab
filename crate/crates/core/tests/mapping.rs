mod common;

use common::*;
use proptest::prelude::*;
use rand::Rng;
use stoqpimc::chain::sample_frozen_uniform;
use stoqpimc::linalg::log_sum_exp;
use stoqpimc::mapping::*;
use stoqpimc::models::*;
use stoqpimc::oracle::{all_log_weights, exact_log_partition, exact_trotter_log_partition};

fn tim_system(seed: u64, n: usize, beta: f64, l: usize) -> TrotterizedSystem {
    let m = Model::TransverseIsing(random_tim(n, Boundary::Open, &mut rng(seed)));
    TrotterizedSystem::new(&m, beta, l).unwrap()
}

fn random_config(n: usize, l: usize, r: &mut impl Rng) -> SpinConfiguration {
    SpinConfiguration::new(
        n,
        l,
        (0..n * l).map(|_| if r.gen() { 1 } else { -1 }).collect(),
    )
    .unwrap()
}

#[test]
fn coupling_reference_value() {
    // 1/2 ln coth(1/2), evaluated in extended precision.
    let j = effective_coupling(1.0, 1.0, 2).unwrap();
    assert!((j - 0.38596841645265236).abs() < 1e-15, "{j}");
    assert!(effective_coupling(0.0, 1.0, 2).is_err());
    assert!(effective_coupling(1e6, 1.0, 2).unwrap() < 1e-12);
}

#[test]
fn coupling_involution() {
    for x in [1e-8, 1e-3, 0.1, 0.5, 1.0, 3.0, 12.0] {
        let back = half_log_coth(half_log_coth(x));
        assert!((back - x).abs() <= 1e-12 * x.max(1.0), "x={x} back={back}");
    }
}

#[test]
fn pure_field_weight_closed_form() {
    let (beta, gamma, l) = (1.3, 0.7, 6);
    let m = Model::TransverseIsing(TransverseIsingModel::pure_field(vec![gamma; 3]));
    let sys = TrotterizedSystem::new(&m, beta, l).unwrap();
    let x = beta * gamma / l as f64;
    let mut r = rng(3);
    for _ in 0..50 {
        let z = random_config(3, l, &mut r);
        let jumps: usize = (0..3).map(|j| stoqpimc::chain::jump_count(&z, j)).sum();
        let expect = (3 * l - jumps) as f64 * x.cosh().ln() + jumps as f64 * x.sinh().ln();
        assert!((sys.log_weight(&z).unwrap() - expect).abs() < 1e-12);
    }
}

#[test]
fn tim_weight_is_boltzmann_of_classical_energy() {
    let sys = tim_system(5, 3, 0.9, 4);
    let mut r = rng(9);
    let offset = sys.tim_weight_offset();
    for _ in 0..100 {
        let z = random_config(3, 4, &mut r);
        let e = sys.classical_energy_tim(&z).unwrap();
        assert!((sys.log_weight(&z).unwrap() - (-0.9 * e + offset)).abs() < 1e-10);
    }
}

#[test]
fn single_site_energy_example() {
    let m = Model::TransverseIsing(TransverseIsingModel::pure_field(vec![1.0]));
    let sys = TrotterizedSystem::new(&m, 1.0, 2).unwrap();
    let z = SpinConfiguration::new(1, 2, vec![1, 1]).unwrap();
    let j = effective_coupling(1.0, 1.0, 2).unwrap();
    assert!((sys.classical_energy_tim(&z).unwrap() + 2.0 * j).abs() < 1e-15);
    let r = sys.log_weight_ratio_single_flip(&z, 0, 0).unwrap();
    assert!((r - 2.0 * 0.5f64.tanh().ln()).abs() < 1e-14);
}

#[test]
fn zero_weight_jump_on_layer_without_flip_terms() {
    // -XX on the only bond, no fictitious field: a lone 1-local jump is impossible.
    let g = GeneralChainModel {
        n: 2,
        terms: vec![sx_sx()],
        boundary: Boundary::Open,
        fictitious_field: 0.0,
    };
    let sys = TrotterizedSystem::new(&Model::General(g), 1.0, 4).unwrap();
    let mut z = SpinConfiguration::frozen(&[1, 1], 4);
    z.flip(1, 0);
    assert_eq!(sys.log_weight(&z).unwrap(), f64::NEG_INFINITY);
}

#[test]
fn weight_bridge_all_families() {
    for seed in 0..4 {
        for model in random_models(2, seed)
            .into_iter()
            .chain(random_models(3, seed + 50))
        {
            for l in [2, 4] {
                let sys = TrotterizedSystem::new(&model, 0.8, l).unwrap();
                let lz = log_sum_exp(&all_log_weights(&sys).unwrap());
                let exact = exact_trotter_log_partition(&model, 0.8, l).unwrap();
                assert!(
                    (lz - exact).abs() < 1e-9,
                    "{} L={l}: {lz} vs {exact}",
                    model.family()
                );
            }
        }
    }
}

#[test]
fn cyclic_shift_invariance() {
    let mut r = rng(11);
    for (k, model) in random_models(4, 2).into_iter().enumerate() {
        let sys = TrotterizedSystem::new(&model, 1.1, 6).unwrap();
        let shift = if k == 0 { 1 } else { 2 };
        let mut checked = 0;
        for _ in 0..200 {
            let z = random_config(4, 6, &mut r);
            let w = sys.log_weight(&z).unwrap();
            let mut spins = Vec::new();
            for i in 0..6 {
                spins.extend_from_slice(z.slice((i + shift) % 6));
            }
            let shifted = SpinConfiguration::new(4, 6, spins).unwrap();
            let ws = sys.log_weight(&shifted).unwrap();
            if w.is_finite() {
                checked += 1;
                assert!((w - ws).abs() < 1e-12 * w.abs().max(1.0));
            } else {
                assert_eq!(ws, w);
            }
        }
        assert!(checked > 0);
    }
}

#[test]
fn slice_choice_meets_delta() {
    let m = Model::TransverseIsing(random_tim(2, Boundary::Open, &mut rng(21)));
    let c = choose_trotter_slices(&m, 1.0, 0.01, 1 << 12).unwrap();
    assert_eq!(c.slices % 2, 0);
    let err = (exact_trotter_log_partition(&m, 1.0, c.slices).unwrap()
        - exact_log_partition(&m, 1.0).unwrap())
    .abs();
    assert!(err <= 0.01, "L={} err={err}", c.slices);
    let finer = choose_trotter_slices(&m, 1.0, 0.005, 1 << 12).unwrap();
    assert!(finer.slices >= c.slices);

    let pure = Model::TransverseIsing(TransverseIsingModel::pure_field(vec![0.5; 3]));
    assert_eq!(
        choose_trotter_slices(&pure, 2.0, 1e-6, 1 << 12)
            .unwrap()
            .method,
        "exact"
    );
    assert!(choose_trotter_slices(&m, 1.0, 0.1, 1 << 12).is_err());
    assert!(matches!(
        choose_trotter_slices(&m, 10.0, 1e-6, 4),
        Err(stoqpimc::Error::BudgetExceeded(_))
    ));
}

#[test]
fn frozen_configs_have_positive_weight() {
    let mut r = rng(1);
    for model in random_models(4, 8) {
        let sys = TrotterizedSystem::new(&model, 2.0, 8).unwrap();
        for _ in 0..20 {
            assert!(sys
                .log_weight(&sample_frozen_uniform(4, 8, &mut r))
                .unwrap()
                .is_finite());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn flip_ratio_matches_weight_difference(seed in 0u64..10_000, site in 0usize..12, fam in 0usize..3) {
        let model = random_models(3, seed).swap_remove(fam);
        let sys = TrotterizedSystem::new(&model, 0.7, 4).unwrap();
        let mut r = rng(seed ^ 0xabc);
        let z = random_config(3, 4, &mut r);
        let (i, j) = (site / 3, site % 3);
        let ratio = sys.log_weight_ratio_single_flip(&z, i, j).unwrap();
        let mut z2 = z.clone();
        z2.flip(i, j);
        let (a, b) = (sys.log_weight(&z).unwrap(), sys.log_weight(&z2).unwrap());
        if a.is_finite() && b.is_finite() {
            prop_assert!((ratio - (b - a)).abs() < 1e-10);
            let back = sys.log_weight_ratio_single_flip(&z2, i, j).unwrap();
            prop_assert_eq!(ratio + back, 0.0);
        } else if a.is_finite() {
            prop_assert_eq!(ratio, f64::NEG_INFINITY);
        } else if b.is_finite() {
            prop_assert_eq!(ratio, f64::INFINITY);
        }
    }

    #[test]
    fn index_roundtrip(n in 1usize..5, l in 1usize..4, bits in any::<u64>()) {
        let l = 2 * l;
        let index = bits & ((1u64 << (n * l)) - 1);
        prop_assert_eq!(SpinConfiguration::from_index(n, l, index).to_index(), index);
    }
}
