//! Descent, step-bound and replay properties of the solver loops, plus the
//! gradient-bound planner.

use bdc_core::problems::cp::{cp_random_tensor, CpProblem};
use bdc_core::problems::mlp::{sine_dataset, MlpProblem, MlpTask};
use bdc_core::problems::quadratic::PiecewiseQuadratic;
use bdc_core::problems::sdl::{lq_norm, lq_subgrad, sdl_init, sdl_synthetic, SdlProblem, SdlVariant};
use bdc_core::relu::{LossKind, MlpParams};
use bdc_core::rng::substream;
use bdc_core::solvers::inner::InnerOptions;
use bdc_core::solvers::plan::compute_e;
use bdc_core::solvers::{run, run_observed, run_stochastic, BlockRule, IterTrace, SolverConfig};
use bdc_core::{BdcProblem, BlockVector};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

const INNER_TOL: f64 = 1e-10;

fn cfg(iters: usize, rho: f64, seed: u64, rule: BlockRule) -> SolverConfig {
    SolverConfig {
        iters,
        rho,
        inner: InnerOptions { budget: 50, tol_factor: INNER_TOL },
        seed,
        block_rule: rule,
        ..Default::default()
    }
}

fn assert_descent(tr: &IterTrace) {
    let fs: Vec<f64> = tr.records.iter().map(|r| r.f).chain([tr.final_f]).collect();
    for (k, w) in fs.windows(2).enumerate() {
        assert!(w[1] <= w[0] + 2.0 * INNER_TOL * (1.0 + w[0].abs()), "f rose at k={k}: {} -> {}", w[0], w[1]);
    }
}

fn sdl(seed: u64, variant: SdlVariant) -> (SdlProblem, BlockVector) {
    let data = sdl_synthetic(6, 10, 20, 2, seed).unwrap();
    let p = SdlProblem::new(data.y, 10, 0.1, 3, variant).unwrap();
    let (d0, x0) = sdl_init(6, 10, 20, seed);
    let theta = p.pack(&d0, &x0).unwrap();
    (p, theta)
}

fn regression(seed: u64) -> MlpProblem {
    let net = MlpParams::random(&[1, 8, 1], 0.1, &mut substream(seed, "init")).unwrap();
    MlpProblem::new(MlpTask::new(sine_dataset(16, 1.5, 0.05, seed), net, LossKind::Mse).unwrap()).unwrap()
}

#[test]
fn zero_and_one_iterations() {
    let p = PiecewiseQuadratic::random(&[2, 2], 3, 1).unwrap();
    let theta = BlockVector::zeros(p.partition().clone());
    let empty = run(&p, theta.clone(), &cfg(0, 0.0, 1, BlockRule::Uniform)).unwrap();
    assert!(empty.records.is_empty());
    assert_eq!(empty.final_theta, theta);
    assert_eq!(run(&p, theta, &cfg(1, 0.0, 1, BlockRule::Uniform)).unwrap().records.len(), 1);
}

#[test]
fn sdl_keeps_dictionary_feasible_and_descends() {
    for variant in [SdlVariant::L1, SdlVariant::L1MinusLq] {
        let (p, theta) = sdl(3, variant);
        let mut worst: f64 = 0.0;
        let tr = run_observed(&p, theta, &cfg(60, 1e-3, 3, BlockRule::Cyclic), &mut |_, _, step| {
            let d = p.dictionary(&step.theta);
            worst = d.column_iter().map(|c| c.norm()).fold(worst, f64::max);
        })
        .unwrap();
        assert!(worst <= 1.0 + 1e-10, "column norm {worst}");
        assert_descent(&tr);
        assert!(tr.step_bound_violations(1e-9).is_empty());
    }
}

#[test]
fn stochastic_replay_is_exact() {
    let p = regression(2);
    let c = SolverConfig { batch_size: 4, ..cfg(25, 5.0, 9, BlockRule::Uniform) };
    let a = run_stochastic(&p, p.initial(), &c, &mut |_, _, _| {}).unwrap();
    let b = run_stochastic(&p, p.initial(), &c, &mut |_, _, _| {}).unwrap();
    assert_eq!(a.to_csv(), b.to_csv());
    assert_eq!(a.audit_csv(), b.audit_csv());
    assert!(a.step_bound_violations(1e-9).is_empty());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn quadratic_descent_and_step_bound(seed in 0u64..10_000, rho in prop_oneof![Just(0.0), 0.01f64..10.0]) {
        let p = PiecewiseQuadratic::random(&[2, 3, 2], 6, seed).unwrap();
        let mut rng = substream(seed, "start");
        let data = (0..7).map(|_| 3.0 * rng.sample::<f64, _>(StandardNormal)).collect();
        let theta = BlockVector::new(p.partition().clone(), data).unwrap();
        let tr = run(&p, theta, &cfg(40, rho, seed, BlockRule::Uniform)).unwrap();
        assert_descent(&tr);
        prop_assert!(tr.step_bound_violations(1e-9).is_empty());
    }

    #[test]
    fn cp_descent(seed in 0u64..10_000) {
        let (t, _) = cp_random_tensor(&[3, 4, 3], 2, seed).unwrap();
        let p = CpProblem::new(t, 2).unwrap();
        let tr = run(&p, p.init(seed), &cfg(30, 0.0, seed, BlockRule::Cyclic)).unwrap();
        assert_descent(&tr);
    }

    #[test]
    fn proximal_mlp_descent(seed in 0u64..10_000) {
        let p = regression(seed);
        let tr = run(&p, p.initial(), &cfg(12, 2.0, seed, BlockRule::Uniform)).unwrap();
        assert_descent(&tr);
        prop_assert!(tr.step_bound_violations(1e-9).is_empty());
    }

    #[test]
    fn same_seed_same_trace(seed in 0u64..10_000) {
        let p = PiecewiseQuadratic::random(&[1, 2, 3], 4, seed).unwrap();
        let theta = BlockVector::zeros(p.partition().clone());
        let c = cfg(20, 0.5, seed, BlockRule::Uniform);
        prop_assert_eq!(run(&p, theta.clone(), &c).unwrap().to_csv(), run(&p, theta, &c).unwrap().to_csv());
    }

    #[test]
    fn gradient_bound_is_a_fixed_point(l0 in 0.01f64..100.0, l1 in 0.0f64..10.0, power in 0.0f64..1.0, g in 0.01f64..100.0) {
        let ell = |u: f64| l0 + l1 * u.powf(power);
        let e = compute_e(ell, g).unwrap();
        prop_assert!((e * e - 2.0 * ell(2.0 * e) * g).abs() <= 1e-8 * (1.0 + e * e));
    }

    #[test]
    fn lq_subgradient_inequality(
        q in 1usize..6,
        x in prop::collection::vec(-3.0f64..3.0, 8),
        y in prop::collection::vec(-3.0f64..3.0, 8),
        zeros in prop::collection::vec(any::<bool>(), 8),
    ) {
        // exact zeros and ties exercise the subgradient selection
        let x: Vec<f64> = x.iter().zip(&zeros).map(|(v, z)| if *z { 0.0 } else { *v }).collect();
        let u = lq_subgrad(&x, q).unwrap();
        let lin: f64 = u.iter().zip(y.iter().zip(&x)).map(|(u, (b, a))| u * (b - a)).sum();
        prop_assert!(lq_norm(&y, q).unwrap() >= lq_norm(&x, q).unwrap() + lin - 1e-10);
    }
}
