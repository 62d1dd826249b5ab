//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Runs as a plain binary so the lines are always shown.

use std::path::Path;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use stoqpimc::chain::{chain_rng, jump_count, metropolis_step, ChainState, JumpBudget};
use stoqpimc::diagnostics::{collect_traces, jump_concentration_report};
use stoqpimc::estimators::{
    estimate_observable, estimate_partition_function, finite_difference_from_logs,
    finite_difference_zeta, perturbed_terms, ObservableOptions, Resources, Targets,
};
use stoqpimc::linalg::{norm4, Block4};
use stoqpimc::mapping::{SpinConfiguration, TrotterizedSystem};
use stoqpimc::models::{
    model_to_toml, Boundary, GeneralChainModel, Model, TransverseIsingModel, XYChainModel,
};
use stoqpimc::observables::{PauliSum, RowComputable};
use stoqpimc::oracle::{
    all_log_weights, assemble_terms, exact_gibbs_vector, exact_log_partition, exact_observable,
    exact_trotter_log_partition, log_partition_of, transition_matrix,
};
use stoqpimc_cli::{oracle_compare, Format, RunConfig};

fn rng(seed: u64) -> ChaCha8Rng {
    chain_rng(seed, 0)
}

fn random_tim(n: usize, r: &mut ChaCha8Rng) -> TransverseIsingModel {
    let gamma = (0..n).map(|_| r.gen_range(0.25..1.0)).collect();
    let kz = (0..n).map(|_| r.gen_range(-1.0..1.0)).collect();
    let mut couplings = Vec::new();
    for j in 0..n {
        for k in j + 1..n {
            couplings.push((j, k, r.gen_range(-1.0..1.0) * ((k - j) as f64).powi(-3)));
        }
    }
    TransverseIsingModel::new(gamma, kz, couplings, 1.0, Boundary::Open).unwrap()
}

fn random_xy(n: usize, r: &mut ChaCha8Rng) -> XYChainModel {
    let bonds = n - 1;
    let kxx: Vec<f64> = (0..bonds).map(|_| r.gen_range(0.0..1.0)).collect();
    XYChainModel {
        gamma: (0..n).map(|_| r.gen_range(0.25..1.0)).collect(),
        kz: (0..n).map(|_| r.gen_range(-1.0..1.0)).collect(),
        kyy: kxx.iter().map(|&x| r.gen_range(-x..=x)).collect(),
        kxx,
        kzz: (0..bonds).map(|_| r.gen_range(-1.0..1.0)).collect(),
        boundary: Boundary::Open,
    }
}

/// Random stoquastic two-site block with norm <= 1. Without single-site
/// flips the sites need the fictitious field to be ergodic.
fn random_block(r: &mut ChaCha8Rng, single_flips: bool) -> Block4 {
    let mut b = [[0.0; 4]; 4];
    for i in 0..4 {
        b[i][i] = r.gen_range(-1.0..1.0);
        for j in i + 1..4 {
            let single = (i ^ j).count_ones() == 1;
            if single && !single_flips {
                continue;
            }
            let v = -r.gen_range(0.0..1.0);
            b[i][j] = v;
            b[j][i] = v;
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

fn random_general(n: usize, r: &mut ChaCha8Rng, single_flips: bool) -> GeneralChainModel {
    GeneralChainModel {
        n,
        terms: (0..n - 1).map(|_| random_block(r, single_flips)).collect(),
        boundary: Boundary::Open,
        fictitious_field: 0.0,
    }
}

fn with_field(m: GeneralChainModel, delta_mult: f64) -> Model {
    Model::General(m).with_ergodic_field(delta_mult).0
}

fn config(model: &Path, beta: f64, seed: u64) -> RunConfig {
    RunConfig {
        model: model.to_path_buf(),
        beta,
        delta_mult: 0.1,
        delta_add: 0.0,
        delta_fail: 0.05,
        seed,
        slices: None,
        max_slices: None,
        chains: None,
        burn_in: None,
        thin: None,
        max_samples: None,
        jump_budget_c: None,
        out: None,
        format: Format::Json,
    }
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn criterion_1(dir: &Path) -> Outcome {
    let start = Instant::now();
    let mut within = 0;
    let mut worst: f64 = 0.0;
    for i in 0..20u64 {
        let model = Model::TransverseIsing(random_tim(4, &mut rng(1000 + i)));
        let path = dir.join(format!("tim{i}.toml"));
        std::fs::write(&path, model_to_toml(&model)).unwrap();
        let r = oracle_compare(&config(&path, 1.0, i)).unwrap();
        worst = worst.max(r.estimate_rel_error);
        if (r.estimate_z - r.exact_z).abs() <= 0.1 * r.exact_z {
            within += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        within >= 18 && secs <= 600.0,
        format!("{within}/20 within 10% (largest error {worst:.4}), {secs:.0} s"),
    )
}

fn criterion_2() -> Outcome {
    let mut r = rng(2);
    let models = [
        Model::TransverseIsing(random_tim(2, &mut r)),
        Model::XYChain(random_xy(2, &mut r)),
        with_field(random_general(2, &mut r, false), 0.1),
    ];
    let mut worst_balance: f64 = 0.0;
    let mut worst_stationary: f64 = 0.0;
    for model in &models {
        let sys = TrotterizedSystem::new(model, 1.0, 4).unwrap();
        let p = transition_matrix(&sys, None).unwrap();
        let (pi, _) = exact_gibbs_vector(&sys).unwrap();
        let mu: Vec<f64> = p.states.iter().map(|&s| pi[s as usize]).collect();
        let moved = p.apply_left(&mu);
        for (a, b) in moved.iter().zip(&mu) {
            worst_stationary = worst_stationary.max((a - b).abs());
        }
        let dense = p.to_dense();
        for a in 0..p.len() {
            for b in 0..p.len() {
                let d = (mu[a] * dense[(a, b)] - mu[b] * dense[(b, a)]).abs();
                worst_balance = worst_balance.max(d);
            }
        }
    }
    outcome(
        worst_balance <= 1e-11 && worst_stationary <= 1e-11,
        format!("max |piP - pi| = {worst_stationary:.1e}, max detailed-balance gap = {worst_balance:.1e}"),
    )
}

fn criterion_3() -> Outcome {
    let model = Model::TransverseIsing(random_tim(2, &mut rng(3)));
    let exact = exact_log_partition(&model, 1.0).unwrap();
    let ls = [4usize, 8, 16, 32];
    let errs: Vec<f64> = ls
        .iter()
        .map(|&l| (exact_trotter_log_partition(&model, 1.0, l).unwrap() - exact).abs())
        .collect();
    // Least-squares slope of ln err against ln L.
    let xs: Vec<f64> = ls.iter().map(|&l| (l as f64).ln()).collect();
    let ys: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / 4.0, ys.iter().sum::<f64>() / 4.0);
    let slope = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (x - mx) * (y - my))
        .sum::<f64>()
        / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    let order = -slope;

    let pure = Model::TransverseIsing(TransverseIsingModel::pure_field(vec![1.0, 0.6, 0.3]));
    let pure_exact = exact_log_partition(&pure, 1.0).unwrap();
    let pure_err = ls
        .iter()
        .map(|&l| (exact_trotter_log_partition(&pure, 1.0, l).unwrap() - pure_exact).abs())
        .fold(0.0, f64::max);
    outcome(
        order >= 1.5 && pure_err <= 1e-12,
        format!(
            "fitted order {order:.3} (L=4 error {:.2e}), pure-field error {pure_err:.1e}",
            errs[0]
        ),
    )
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let top = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    top + xs.iter().map(|x| (x - top).exp()).sum::<f64>().ln()
}

fn criterion_4() -> Outcome {
    let shapes = [
        (2, 4),
        (2, 6),
        (2, 8),
        (3, 4),
        (4, 4),
        (2, 4),
        (2, 8),
        (3, 4),
        (4, 4),
        (2, 6),
    ];
    let mut worst: f64 = 0.0;
    for (k, &(n, l)) in shapes.iter().enumerate() {
        let mut r = rng(40 + k as u64);
        let model = match k % 3 {
            0 => Model::TransverseIsing(random_tim(n, &mut r)),
            1 => Model::XYChain(random_xy(n, &mut r)),
            _ => with_field(random_general(n, &mut r, true), 0.1),
        };
        let beta = r.gen_range(0.5..2.0);
        let sys = TrotterizedSystem::new(&model, beta, l).unwrap();
        let summed = log_sum_exp(&all_log_weights(&sys).unwrap());
        let oracle = exact_trotter_log_partition(&model, beta, l).unwrap();
        worst = worst.max((summed - oracle).exp_m1().abs());
    }
    outcome(
        worst <= 1e-9,
        format!("largest relative gap {worst:.1e} over 10 instances"),
    )
}

fn criterion_5() -> Outcome {
    let mut details = Vec::new();
    let mut pass = true;
    let beta = 1.0;
    for seed in [50u64, 51] {
        let model = Model::TransverseIsing(random_tim(3, &mut rng(seed)));
        for (name, obs) in [
            ("sz2", PauliSum::sigma_z(3, 1).unwrap()),
            ("sx1", PauliSum::sigma_x(3, 0).unwrap()),
        ] {
            let exact = exact_observable(&model, beta, &obs.to_dense().unwrap()).unwrap();
            let opts = ObservableOptions {
                seed,
                chains: 4096,
                samples_per_chain: 16,
                burn_in: Some(20_000),
                thin: None,
                slices: 16,
                delta_mult: 0.1,
            };
            let r = estimate_observable(&model, beta, &obs, &opts).unwrap();
            let err = (r.value - exact).abs();
            pass &= err <= 0.05;
            details.push(format!("{name} err {err:.4}"));
        }
    }

    // Finite differences from exact partition functions.
    let model = Model::TransverseIsing(random_tim(3, &mut rng(52)));
    let terms = model.local_terms();
    let log_z0 = log_partition_of(&assemble_terms(&terms).unwrap(), beta);
    let mut worst_ratio: f64 = 0.0;
    for obs in [
        PauliSum::sigma_z(3, 1).unwrap().shifted(1.0),
        PauliSum::sigma_x(3, 0).unwrap().shifted(1.0),
    ] {
        let exact = exact_observable(&model, beta, &obs.to_dense().unwrap()).unwrap();
        let norm = obs.norm_bound();
        for delta in [1e-2, 1e-3, 1e-4] {
            let zeta = finite_difference_zeta(delta, norm).unwrap();
            let shifted = perturbed_terms(&terms, &obs, zeta / beta).unwrap();
            let log_zeta = log_partition_of(&assemble_terms(&shifted).unwrap(), beta);
            let fd = finite_difference_from_logs(log_z0, log_zeta, zeta, norm).unwrap();
            let bound = 2.0 * delta.sqrt() * norm;
            worst_ratio = worst_ratio.max((fd - exact).abs() / bound);
        }
    }
    pass &= worst_ratio <= 1.0;
    details.push(format!(
        "finite difference error / bound <= {worst_ratio:.3}"
    ));
    outcome(pass, details.join(", "))
}

fn criterion_6() -> Outcome {
    let mut r = rng(6);
    let models = [
        Model::TransverseIsing(random_tim(4, &mut r)),
        Model::XYChain(random_xy(4, &mut r)),
        Model::General(random_general(4, &mut r, false)),
    ];
    let resources = Resources {
        seed: 6,
        chains: 512,
        max_samples_per_step: 8192,
        ..Resources::default()
    };
    let mut violations = 0;
    let mut max_m: f64 = 0.0;
    let mut draws = 0;
    for model in &models {
        let rep = estimate_partition_function(model, 1.0, Targets::default(), &resources).unwrap();
        violations += rep.diagnostics.m_violations;
        max_m = max_m.max(rep.diagnostics.max_m);
        draws += rep.steps.iter().map(|s| s.samples).sum::<u64>();
    }
    outcome(
        violations == 0 && max_m <= 1.0,
        format!("{violations} violations in {draws} draws, max M = {max_m:.6}"),
    )
}

fn criterion_7() -> Outcome {
    let (beta, l, delta_mult) = (1.0, 8, 0.1);
    let mut proposals = 0u64;
    let mut worst: f64 = f64::INFINITY;
    let mut bound = 0.0;
    for seed in 0..4u64 {
        let mut r = rng(70 + seed);
        let model = with_field(random_general(4, &mut r, false), delta_mult);
        let Model::General(g) = &model else {
            unreachable!()
        };
        let gamma = g.fictitious_field;
        assert!(gamma > 0.0);
        bound = (-4.0 * beta / l as f64).exp() * (beta * gamma / l as f64).powi(2);
        let sys = TrotterizedSystem::new(&model, beta, l).unwrap();
        let mut st = ChainState::from_seed(&sys, seed, 0).unwrap();
        let mut seen = 0u64;
        while seen < 250_000 {
            let out = metropolis_step(&mut st, &sys);
            if out.site.is_none() || out.log_ratio == f64::NEG_INFINITY {
                continue;
            }
            seen += 1;
            let ratio = out.log_ratio.min(0.0).exp();
            worst = worst.min(ratio / bound);
        }
        proposals += seen;
    }
    outcome(
        worst >= 1.0,
        format!(
            "{proposals} finite proposals, smallest ratio / bound = {worst:.3} (bound {bound:.2e})"
        ),
    )
}

fn criterion_8() -> Outcome {
    let beta = 1.0;
    let n = 8;
    let pure = Model::TransverseIsing(TransverseIsingModel::pure_field(vec![1.0; n]));
    let sys = TrotterizedSystem::new(&pure, beta, 64).unwrap();
    let traces = collect_traces(&sys, 8, 64, 40_000, 400, 512, None).unwrap();
    let samples: Vec<Vec<usize>> = traces.jumps.into_iter().flatten().collect();
    let rep = jump_concentration_report(&samples, beta, n, 4.0);
    let margin = rep
        .worldlines
        .iter()
        .map(|w| w.frequency + 3.0 * w.std_error)
        .fold(0.0, f64::max);
    let large_ok = margin < 1.0 / n as f64;

    // Brute force on n = 2, L = 8 against sampled frequencies.
    let model = Model::TransverseIsing(
        TransverseIsingModel::new(
            vec![1.5, 1.2],
            vec![0.2, -0.1],
            vec![(0, 1, -0.3)],
            1.0,
            Boundary::Open,
        )
        .unwrap(),
    );
    let (n2, l2) = (2, 8);
    let sys = TrotterizedSystem::new(&model, beta, l2).unwrap();
    let threshold = 4.0 * beta * (n2 as f64).ln();
    let (pi, _) = exact_gibbs_vector(&sys).unwrap();
    let mut exact = [0.0; 2];
    for (x, &p) in pi.iter().enumerate() {
        let z = SpinConfiguration::from_index(n2, l2, x as u64);
        for (j, e) in exact.iter_mut().enumerate() {
            if jump_count(&z, j) as f64 >= threshold {
                *e += p;
            }
        }
    }
    let traces = collect_traces(&sys, 10, 4000, 5_000, 5, 1_600, None).unwrap();
    let samples: Vec<Vec<usize>> = traces.jumps.into_iter().flatten().collect();
    let rep = jump_concentration_report(&samples, beta, n2, 4.0);
    let total = samples.len() as f64;
    let mut worst_z: f64 = 0.0;
    for (w, &p) in rep.worldlines.iter().zip(&exact) {
        let sigma = (p * (1.0 - p) / total).sqrt();
        worst_z = worst_z.max((w.frequency - p).abs() / sigma);
    }
    let small_ok = worst_z <= 3.0;
    outcome(
        large_ok && small_ok,
        format!(
            "n=8 max freq+3sd = {margin:.4} < {:.3}; n=2 exact {:.4}/{:.4}, largest deviation {worst_z:.2} sd",
            1.0 / n as f64,
            exact[0],
            exact[1]
        ),
    )
}

fn criterion_9() -> Outcome {
    let model = Model::TransverseIsing(random_tim(2, &mut rng(9)));
    let sys = TrotterizedSystem::new(&model, 1.0, 4).unwrap();
    let budget = JumpBudget::new(1).unwrap();
    let p = transition_matrix(&sys, Some(&budget)).unwrap();
    let (pi, _) = exact_gibbs_vector(&sys).unwrap();
    let mass: f64 = p.states.iter().map(|&s| pi[s as usize]).sum();
    let cond: Vec<f64> = p.states.iter().map(|&s| pi[s as usize] / mass).collect();
    let moved = p.apply_left(&cond);
    let gap = moved
        .iter()
        .zip(&cond)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let inside = p.states.iter().all(|&s| {
        (0..2).all(|j| jump_count(&SpinConfiguration::from_index(2, 4, s), j) <= budget.cap())
    });
    outcome(
        gap <= 1e-10 && inside && budget.cap() == 2,
        format!("{} restricted states, max |piP - pi| = {gap:.1e}", p.len()),
    )
}

fn criterion_10(dir: &Path) -> Outcome {
    let model = Model::TransverseIsing(random_tim(4, &mut rng(10)));
    let path = dir.join("repro.toml");
    std::fs::write(&path, model_to_toml(&model)).unwrap();
    let mut cfg = config(&path, 1.0, 99);
    cfg.chains = Some(256);
    cfg.max_samples = Some(4096);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        let r = pool.install(|| oracle_compare(&cfg)).unwrap();
        serde_json::to_string(&r).unwrap()
    };
    let a = run(1);
    let b = run(1);
    let c = run(4);
    let obs = PauliSum::sigma_x(4, 2).unwrap();
    let opts = ObservableOptions {
        seed: 5,
        chains: 64,
        ..ObservableOptions::default()
    };
    let obs_run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        pool.install(|| estimate_observable(&model, 1.0, &obs, &opts))
            .unwrap()
    };
    let (o1, o3) = (obs_run(1), obs_run(3));
    outcome(
        a == b && a == c && o1 == o3,
        format!(
            "same seed identical: {}, 1 vs 4 workers identical: {}, observable 1 vs 3 workers identical: {}",
            a == b,
            a == c,
            o1 == o3
        ),
    )
}

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    // Optional criterion numbers on the command line select a subset.
    let only: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let criteria: [(&str, &dyn Fn() -> Outcome); 10] = [
        ("partition-function accuracy", &|| criterion_1(d)),
        ("exact stationarity", &criterion_2),
        ("Trotter convergence", &criterion_3),
        ("weight-bridge coherence", &criterion_4),
        ("observable estimators", &criterion_5),
        ("ratio-estimator bound", &criterion_6),
        ("transition lower bound", &criterion_7),
        ("jump concentration", &criterion_8),
        ("restricted-chain correctness", &criterion_9),
        ("reproducibility", &|| criterion_10(d)),
    ];
    let mut failed = Vec::new();
    for (k, (name, check)) in criteria.iter().enumerate() {
        let id = k + 1;
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let o = check();
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!(
            "criterion {id:>2} {name}: {verdict} ({}; {:.1} s)",
            o.detail,
            start.elapsed().as_secs_f64()
        );
        if !o.pass {
            failed.push(id);
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
