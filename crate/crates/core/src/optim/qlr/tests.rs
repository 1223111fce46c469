use super::*;
use crate::autodiff::{Objective, Tensor, Targets};
use crate::models::{LossKind, MlpSpec, Model, QuadraticSpec, RosenbrockSpec};
use proptest::prelude::*;

fn quadratic() -> Objective {
    Objective::new(Model::Quadratic(QuadraticSpec::diagonal(&[2.0, 8.0]))).unwrap()
}

fn rosenbrock() -> Objective {
    Objective::new(Model::Rosenbrock(RosenbrockSpec::default())).unwrap()
}

fn sgd_hessian(lambda0: f64, alpha_max: f64) -> QlrConfig {
    QlrConfig {
        curvature: CurvatureKind::Hessian,
        lambda0,
        alpha_max,
        direction: DirectionKind::Sgd,
        ..QlrConfig::untuned()
    }
}

/// Golden-section minimiser of a unimodal `phi` on `[lo, hi]`.
fn golden_section(phi: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    while hi - lo > 1e-12 {
        let a = hi - r * (hi - lo);
        let b = lo + r * (hi - lo);
        if phi(a) < phi(b) {
            hi = b;
        } else {
            lo = a;
        }
    }
    0.5 * (lo + hi)
}

/// Damped model of `½θᵀdiag(2,8)θ` around `θ` along `−α·d`.
fn damped_model(theta: [f64; 2], d: [f64; 2], lambda: f64) -> impl Fn(f64) -> f64 {
    move |alpha| {
        let g = [2.0 * theta[0], 8.0 * theta[1]];
        let s = [-alpha * d[0], -alpha * d[1]];
        let quad = 2.0 * s[0] * s[0] + 8.0 * s[1] * s[1] + lambda * (s[0] * s[0] + s[1] * s[1]);
        g[0] * s[0] + g[1] * s[1] + 0.5 * quad
    }
}

#[test]
fn learning_rate_examples() {
    assert_eq!(select_learning_rate(1.0, 1.0, 1.0, 0.0), Ok(1.0));
    let a = select_learning_rate(68.0, 520.0, 68.0, 0.0).unwrap();
    assert!((a - 68.0 / 520.0).abs() < 1e-15);
    let oracle = golden_section(damped_model([1.0, 1.0], [2.0, 8.0], 0.0), 0.0, 1.0);
    assert!((a - oracle).abs() < 1e-6);

    let a = select_learning_rate(68.0, 520.0, 68.0, 1.0).unwrap();
    assert!((a - 68.0 / 588.0).abs() < 1e-15);
    let oracle = golden_section(damped_model([1.0, 1.0], [2.0, 8.0], 1.0), 0.0, 1.0);
    assert!((a - oracle).abs() < 1e-6);
}

#[test]
fn learning_rate_guards() {
    assert_eq!(select_learning_rate(-1.0, 1.0, 1.0, 0.0), Err(GuardEvent::NonDescentDirection));
    assert_eq!(select_learning_rate(0.0, 1.0, 1.0, 0.0), Err(GuardEvent::NonDescentDirection));
    assert_eq!(select_learning_rate(1.0, -2.0, 1.0, 1.0), Err(GuardEvent::NonConvexDirection));
}

#[test]
fn lr_policy_clips_then_rescales() {
    let cfg = QlrConfig::untuned();
    assert_eq!(apply_lr_policy(0.05, &cfg), 0.05);
    assert_eq!(apply_lr_policy(0.5, &cfg), 0.1);
    let doubled = QlrConfig { rescale_k: 2.0, ..QlrConfig::untuned() };
    assert_eq!(apply_lr_policy(0.5, &doubled), 0.2);
    assert_eq!(apply_lr_policy(0.04, &doubled), 0.08);
}

#[test]
fn model_change_examples() {
    assert_eq!(quadratic_model_change(0.0, 68.0, 520.0), 0.0);
    assert_eq!(quadratic_model_change(1.0, 68.0, 520.0), 192.0);
    let a = 68.0 / 520.0;
    assert!((quadratic_model_change(a, 68.0, 520.0) + 0.5 * 68.0 * 68.0 / 520.0).abs() < 1e-12);
}

#[test]
fn rho_examples() {
    assert_eq!(compute_rho(-1.0, -1.0, 3.0), Ok(1.0));
    assert_eq!(compute_rho(-0.5, -1.0, 3.0), Ok(0.5));
    assert_eq!(compute_rho(0.0, 1e-13, 0.5), Err(GuardEvent::DegenerateModelChange));
    assert_eq!(compute_rho(0.0, 1e-9, 1e4), Err(GuardEvent::DegenerateModelChange));
    assert!(compute_rho(0.0, 1e-7, 1e4).is_ok());
}

#[test]
fn damping_examples() {
    let cfg = QlrConfig::untuned();
    assert_eq!(update_damping(0.9, 0.01, &cfg), 0.005);
    assert_eq!(update_damping(0.5, 0.01, &cfg), 0.01);
    assert_eq!(update_damping(0.1, 0.01, &cfg), 0.02);
    assert_eq!(update_damping(0.9, 1.5e-8, &cfg), 1e-8);
    assert_eq!(update_damping(0.0, 8e9, &cfg), LAMBDA_MAX);
    assert_eq!(update_damping(0.25, 0.01, &cfg), 0.01);
    assert_eq!(update_damping(0.75, 0.01, &cfg), 0.01);
}

#[test]
fn rho_is_one_on_quadratic_with_exact_hessian() {
    let f = quadratic();
    for (theta, d) in [([1.0, 1.0], [2.0, 8.0]), ([-0.3, 2.0], [1.0, 0.5]), ([4.0, -1.0], [0.7, -0.2])] {
        let p = f.params(theta.to_vec()).unwrap();
        let (f0, g) = f.eval_grad(&p, &Batch::unit()).unwrap();
        let cd = f.hvp(&p, &Batch::unit(), &d).unwrap();
        let (gd, dcd) = (dot(g.values(), &d), dot(&d, cd.values()));
        for alpha in [0.01, 0.1, gd.abs() / dcd, 0.7] {
            let moved = f.params(vec![theta[0] - alpha * d[0], theta[1] - alpha * d[1]]).unwrap();
            let f1 = f.eval_loss(&moved, &Batch::unit()).unwrap();
            let rho = compute_rho(f1 - f0, quadratic_model_change(alpha, gd, dcd), f0).unwrap();
            assert!((rho - 1.0).abs() <= 1e-9, "rho = {rho}");
        }
    }
}

#[test]
fn sgd_qlr_step_on_quadratic_reaches_line_minimum() {
    let f = quadratic();
    let cfg = sgd_hessian(1e-8, f64::INFINITY);
    let state = QlrState::new(2, &cfg);
    let p = f.params(vec![1.0, 1.0]).unwrap();
    let (next, st, diag) = qlr_step(&f, &p, &Batch::unit(), &state, &cfg, &AdamHyper::default()).unwrap();
    assert!((diag.alpha - 68.0 / 520.0).abs() < 1e-9);
    assert!((diag.rho.unwrap() - 1.0).abs() < 1e-8);
    assert_eq!(st.lambda, LAMBDA_MIN);
    let line_min = golden_section(
        |a| f.eval_loss(&f.params(vec![1.0 - 2.0 * a, 1.0 - 8.0 * a]).unwrap(), &Batch::unit()).unwrap(),
        0.0,
        1.0,
    );
    let expected = f.eval_loss(&f.params(vec![1.0 - 2.0 * line_min, 1.0 - 8.0 * line_min]).unwrap(), &Batch::unit()).unwrap();
    assert!((diag.f_after - expected).abs() < 1e-9);
    assert_eq!(diag.f_before, 5.0);
    assert!(next.values()[0] < 1.0 && next.values()[1] < 1.0);
}

#[test]
fn damping_reaches_floor_in_predicted_step_count() {
    // steepest descent zig-zags slowly here, so the model change stays well resolved
    let f = Objective::new(Model::Quadratic(QuadraticSpec::diagonal(&[1.0, 100.0]))).unwrap();
    let cfg = sgd_hessian(1e-3, f64::INFINITY);
    let mut state = QlrState::new(2, &cfg);
    let mut p = f.params(vec![100.0, 1.0]).unwrap();
    let expected = (1e-3f64 / LAMBDA_MIN).log2().ceil() as u64;
    assert_eq!(expected, 17);
    let mut reached = None;
    for step in 1..=expected {
        let (np, ns, diag) = qlr_step(&f, &p, &Batch::unit(), &state, &cfg, &AdamHyper::default()).unwrap();
        assert!(diag.rho.unwrap() > 0.75);
        if reached.is_none() && ns.lambda == LAMBDA_MIN {
            reached = Some(step);
        }
        p = np;
        state = ns;
    }
    assert_eq!(reached, Some(expected));
}

#[test]
fn non_descent_direction_is_a_no_op() {
    let f = quadratic();
    let cfg = sgd_hessian(1e-3, 1.0);
    let state = QlrState::new(2, &cfg);
    let p = f.params(vec![1.0, 1.0]).unwrap();
    let (f0, g) = f.eval_grad(&p, &Batch::unit()).unwrap();
    let d: Vec<f64> = g.values().iter().map(|x| -x).collect();
    let (next, st, diag) = qlr_step_with_direction(&f, &p, &Batch::unit(), &state, &cfg, f0, g.values(), &d).unwrap();
    assert_eq!(next, p);
    assert_eq!(diag.alpha, 0.0);
    assert_eq!(diag.events, vec![GuardEvent::NonDescentDirection]);
    assert_eq!(st.lambda, state.lambda);
    assert_eq!(st.event_count(GuardEvent::NonDescentDirection), 1);
}

#[test]
fn non_convex_direction_takes_boundary_step() {
    let f = rosenbrock();
    let cfg = sgd_hessian(1e-3, 0.01);
    let state = QlrState::new(2, &cfg);
    // at (0, 1) the x-curvature is 2 − 400 < 0
    let p = f.params(vec![0.0, 1.0]).unwrap();
    let (f0, g) = f.eval_grad(&p, &Batch::unit()).unwrap();
    let d = [-1.0, 0.0];
    let (next, st, diag) = qlr_step_with_direction(&f, &p, &Batch::unit(), &state, &cfg, f0, g.values(), &d).unwrap();
    assert_eq!(diag.alpha, 0.01);
    assert_eq!(next.values(), &[0.01, 1.0]);
    assert_eq!(diag.events, vec![GuardEvent::NonConvexDirection]);
    assert_eq!(st.lambda, state.lambda);
}

#[test]
fn non_finite_candidate_is_rejected_and_damping_grows() {
    let f = rosenbrock();
    let cfg = sgd_hessian(1e-3, 1e80);
    let state = QlrState::new(2, &cfg);
    let p = f.params(vec![0.0, 1.0]).unwrap();
    let (f0, g) = f.eval_grad(&p, &Batch::unit()).unwrap();
    let (next, st, diag) =
        qlr_step_with_direction(&f, &p, &Batch::unit(), &state, &cfg, f0, g.values(), &[-1.0, 0.0]).unwrap();
    assert_eq!(next, p);
    assert_eq!(st.lambda, 2e-3);
    assert!(diag.events.contains(&GuardEvent::RejectedNonFinite));
    assert_eq!(st.event_count(GuardEvent::RejectedNonFinite), 1);
}

#[test]
fn rejected_step_restores_adam_buffers() {
    struct Exploding;
    impl Differentiable for Exploding {
        fn loss(&self, _: &ParamVector, _: &Batch) -> crate::autodiff::Result<f64> {
            Err(AutodiffError::NonFinite { context: "test".into() })
        }
        fn loss_and_grad(&self, p: &ParamVector, _: &Batch) -> crate::autodiff::Result<(f64, ParamVector)> {
            Ok((1.0, p.with_values(vec![1.0; p.len()])?))
        }
        fn curvature_product(&self, p: &ParamVector, _: &Batch, v: &[f64], _: CurvatureKind) -> crate::autodiff::Result<ParamVector> {
            p.with_values(v.to_vec())
        }
    }
    let cfg = QlrConfig::untuned();
    let state = QlrState::new(3, &cfg);
    let p = ParamVector::flat(vec![0.0; 3]).unwrap();
    let (next, st, _) = qlr_step(&Exploding, &p, &Batch::unit(), &state, &cfg, &AdamHyper::default()).unwrap();
    assert_eq!(next, p);
    assert_eq!(st.adam, state.adam);
    assert_eq!(st.steps, 1);
}

#[test]
fn undamped_runs_keep_initial_lambda() {
    let f = rosenbrock();
    let cfg = QlrConfig { damped: false, curvature: CurvatureKind::Hessian, ..QlrConfig::untuned() };
    let mut state = QlrState::new(2, &cfg);
    let mut p = f.params(vec![1.0, -1.0]).unwrap();
    for _ in 0..50 {
        let (np, ns, diag) = qlr_step(&f, &p, &Batch::unit(), &state, &cfg, &AdamHyper::default()).unwrap();
        assert_eq!(diag.lambda, 1e-3);
        p = np;
        state = ns;
    }
    assert_eq!(state.lambda, 1e-3);
}

#[test]
fn one_curvature_product_and_one_extra_loss_per_step() {
    let spec = MlpSpec::new(vec![3, 5, 2], LossKind::SoftmaxCrossEntropy);
    let obj = Objective::new(Model::Mlp(spec.clone())).unwrap();
    let batch = Batch::new(
        Tensor::new(4, 3, vec![0.1, 0.5, -1.0, 1.2, -0.3, 0.4, 0.0, 0.9, -0.8, -1.1, 0.2, 0.6]),
        Targets::Labels(vec![0, 1, 1, 0]),
    )
    .unwrap();
    let counted = crate::autodiff::Instrumented::new(&obj);
    let cfg = QlrConfig::untuned();
    let mut state = QlrState::new(obj.n_params(), &cfg);
    let mut p = crate::models::mlp_init(&spec, 1).unwrap();
    for _ in 0..5 {
        counted.reset();
        let (np, ns, diag) = qlr_step(&counted, &p, &batch, &state, &cfg, &AdamHyper::default()).unwrap();
        assert!(diag.events.is_empty(), "{:?}", diag.events);
        let c = counted.counts();
        assert_eq!((c.gradients, c.curvature_products, c.losses), (1, 1, 1));
        p = np;
        state = ns;
    }
    assert_eq!(state.persistent_vectors(), 2);
    assert_eq!(state.adam.as_ref().unwrap().t, 5);
}

#[test]
fn config_validation() {
    assert!(QlrConfig::untuned().validate().is_ok());
    assert!(QlrConfig { omega_dec: 1.5, ..QlrConfig::untuned() }.validate().is_err());
    assert!(QlrConfig { omega_inc: 0.5, ..QlrConfig::untuned() }.validate().is_err());
    assert!(QlrConfig { lambda0: 0.0, ..QlrConfig::untuned() }.validate().is_err());
    assert!(QlrConfig { alpha_max: 0.0, ..QlrConfig::untuned() }.validate().is_err());
    assert!(QlrConfig { rescale_k: -1.0, ..QlrConfig::untuned() }.validate().is_err());
}

#[test]
fn untuned_config_deserializes_from_empty_object() {
    let cfg: QlrConfig = serde_json::from_str("{}").unwrap();
    assert_eq!(cfg, QlrConfig::untuned());
    assert!(serde_json::from_str::<QlrConfig>(r#"{"lambda_0": 1}"#).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn update_is_invariant_to_direction_scale(c in 1e-3f64..1e3, seed in 0u64..1000) {
        use rand::{Rng, SeedableRng};
        let spec = MlpSpec::new(vec![2, 4, 1], LossKind::MeanSquaredError);
        let obj = Objective::new(Model::Mlp(spec.clone())).unwrap();
        let p = crate::models::mlp_init(&spec, seed).unwrap();
        let batch = Batch::new(Tensor::new(3, 2, vec![0.3, -1.0, 0.8, 0.1, -0.5, 0.9]), Targets::Real(Tensor::new(3, 1, vec![1.0, -0.5, 0.2]))).unwrap();
        let (_, g) = obj.eval_grad(&p, &batch).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let d: Vec<f64> = g.values().iter().map(|x| x * rng.random_range(0.5..1.5)).collect();
        let scaled: Vec<f64> = d.iter().map(|x| c * x).collect();
        let alpha_of = |d: &[f64]| {
            let cd = obj.curvature_vp(&p, &batch, d, CurvatureKind::GgnFisher).unwrap();
            select_learning_rate(dot(g.values(), d), dot(d, cd.values()), dot(d, d), 0.0).unwrap()
        };
        let (a1, a2) = (alpha_of(&d), alpha_of(&scaled));
        let u1: Vec<f64> = d.iter().map(|x| a1 * x).collect();
        let u2: Vec<f64> = scaled.iter().map(|x| a2 * x).collect();
        prop_assert!(crate::autodiff::max_rel_error(&u2, &u1, 1e-300) <= 1e-12);
    }

    #[test]
    fn selected_rate_minimises_the_model(theta in proptest::array::uniform2(-5.0f64..5.0), d in proptest::array::uniform2(-3.0f64..3.0), probes in proptest::collection::vec(-2.0f64..4.0, 100)) {
        let g = [2.0 * theta[0], 8.0 * theta[1]];
        let gd = g[0] * d[0] + g[1] * d[1];
        let dad = 2.0 * d[0] * d[0] + 8.0 * d[1] * d[1];
        prop_assume!(gd > 1e-6 && dad > 1e-6);
        let alpha = select_learning_rate(gd, dad, d[0] * d[0] + d[1] * d[1], 0.0).unwrap();
        let model = damped_model(theta, d, 0.0);
        let best = model(alpha);
        for &a in &probes {
            prop_assert!(best <= model(a) + 1e-12 * best.abs().max(1.0));
        }
        let upper = 2.0 * alpha + 1.0;
        prop_assert!((golden_section(&model, 0.0, upper) - alpha).abs() <= 1e-6);
    }

    #[test]
    fn damping_and_rate_stay_in_bounds(
        lambda0 in 1e-8f64..1.0, omega_inc in 1.0f64..4.0, alpha_max in 1e-4f64..10.0,
        k in 0.5f64..2.0, start in proptest::array::uniform2(-2.0f64..2.0), hessian in any::<bool>(),
    ) {
        let f = rosenbrock();
        let cfg = QlrConfig {
            curvature: if hessian { CurvatureKind::Hessian } else { CurvatureKind::GgnFisher },
            lambda0, omega_inc, omega_dec: 1.0 / omega_inc, alpha_max, rescale_k: k, ..QlrConfig::untuned()
        };
        let mut state = QlrState::new(2, &cfg);
        let mut p = f.params(start.to_vec()).unwrap();
        for _ in 0..40 {
            let (np, ns, diag) = qlr_step(&f, &p, &Batch::unit(), &state, &cfg, &AdamHyper::default()).unwrap();
            prop_assert!((LAMBDA_MIN..=LAMBDA_MAX).contains(&ns.lambda));
            prop_assert!(diag.alpha >= 0.0 && diag.alpha <= k * alpha_max * (1.0 + 1e-15));
            p = np;
            state = ns;
        }
    }
}
