mod common;

use common::*;
use proptest::prelude::*;
use qvi::bellman::{assemble, BellmanProblem, Policy, Row};
use qvi::grid::{GridFunction, TimeGrid};
use qvi::hjbqvi::*;
use qvi::problems::{build_fex, build_gmwb, FexParams, GmwbParams};
use qvi::sparsela::{classify_rows, RowClass};
use rand::{Rng, SeedableRng};

fn copy_toy() -> Toy {
    Toy::line(vec![-1.0, -0.4, 0.0, 0.5, 1.0])
}

fn all_schemes() -> [SchemeKind; 3] {
    [SchemeKind::DirectControl, SchemeKind::Penalty, SchemeKind::ExplicitImpulse]
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

#[test]
fn zero_coefficients_copy_the_previous_layer() {
    let toy = copy_toy();
    let v_prev = [0.3, -0.2, 0.9, 0.0, -0.7];
    let dt = 0.25;
    for kind in all_schemes() {
        let cfg = SchemeConfig::new(kind);
        let v = match kind {
            SchemeKind::ExplicitImpulse => {
                explicit_impulse_step(&toy, &v_prev, 0.5, dt, &cfg, &mut ExplicitCache::default()).unwrap().0 .0
            }
            SchemeKind::Penalty => {
                let step = assemble_penalty(&toy, &v_prev, 0.5, dt, cfg.penalty.value(dt)).unwrap();
                qvi::bellman::policy_iteration(&step, &v_prev, &cfg.iteration).unwrap().0
            }
            SchemeKind::DirectControl => {
                let step = assemble_direct_control(&toy, &v_prev, 0.5, dt).unwrap();
                qvi::bellman::policy_iteration(&step, &v_prev, &cfg.iteration).unwrap().0
            }
        };
        assert!(max_abs_diff(&v, &v_prev) <= 1e-12, "{kind:?}");
    }
}

#[test]
fn constant_reward_adds_c_dt() {
    let mut toy = copy_toy();
    toy.f = [0.8, 0.0, 0.0];
    let v_prev = [0.3, -0.2, 0.9, 0.0, -0.7];
    let dt = 0.1;
    let expect: Vec<f64> = v_prev.iter().map(|v| v + 0.8 * dt).collect();
    let step = assemble_direct_control(&toy, &v_prev, 0.0, dt).unwrap();
    let (u, _) = qvi::bellman::policy_iteration(&step, &v_prev, &Default::default()).unwrap();
    assert!(max_abs_diff(&u, &expect) <= 1e-12);
    let step = assemble_penalty(&toy, &v_prev, 0.0, dt, 1e-2 * dt).unwrap();
    let (u, _) = qvi::bellman::policy_iteration(&step, &v_prev, &Default::default()).unwrap();
    assert!(max_abs_diff(&u, &expect) <= 1e-12);
    let cfg = SchemeConfig::new(SchemeKind::ExplicitImpulse);
    let (v, _) = explicit_impulse_step(&toy, &v_prev, 0.0, dt, &cfg, &mut ExplicitCache::default()).unwrap();
    assert!(max_abs_diff(&v, &expect) <= 1e-12);
}

#[test]
fn single_step_trivial_problem_has_identical_layers() {
    let mut toy = copy_toy();
    toy.terminal = vec![1.0, 2.0, 3.0, 2.0, 1.0];
    for kind in all_schemes() {
        let sol = solve_finite_horizon(&toy, &TimeGrid::new(1.0, 1).unwrap(), &SchemeConfig::new(kind)).unwrap();
        assert_eq!(sol.layers.len(), 2);
        assert!(max_abs_diff(&sol.layers[0], &sol.layers[1]) <= 1e-12);
        assert_eq!(sol.times, vec![1.0, 0.0]);
    }
}

fn random_policy_matrix_rows<R: Rng>(rng: &mut R, step: &SchemeStep, impulse_only: bool) -> Policy {
    Policy(
        (0..step.dim())
            .map(|i| {
                let n = step.control_count(i);
                if impulse_only {
                    let nz = step.impulses(i).len();
                    n - nz + rng.gen_range(0..nz)
                } else {
                    rng.gen_range(0..n)
                }
            })
            .collect(),
    )
}

#[test]
fn direct_control_row_classes() {
    let mut rng = rand::rngs::StdRng::seed_from_u64(3);
    for _ in 0..50 {
        let dim = rng.gen_range(1..=2);
        let toy = Toy::random(&mut rng, dim, false);
        let dt = 0.1;
        let step = assemble_direct_control(&toy, &toy.terminal, 0.0, dt).unwrap();
        let pol = random_policy_matrix_rows(&mut rng, &step, false);
        let (a, _) = assemble(&step, &pol);
        for (i, class) in classify_rows(&a).into_iter().enumerate() {
            if step.decode(i, pol.0[i]).impulse {
                assert_eq!(class, RowClass::WddNotSdd);
                assert!(a.diag(i) <= 1.0);
            } else {
                assert_eq!(class, RowClass::Sdd);
            }
        }
        // all-impulse rows: still every row is WDD-not-SDD
        let pol = random_policy_matrix_rows(&mut rng, &step, true);
        let (a, _) = assemble(&step, &pol);
        assert!(classify_rows(&a).iter().all(|c| *c == RowClass::WddNotSdd));
    }
}

#[test]
fn penalty_rows_are_sdd_with_row_sum_one_over_dt() {
    let mut rng = rand::rngs::StdRng::seed_from_u64(4);
    for _ in 0..50 {
        let dim = rng.gen_range(1..=2);
        let toy = Toy::random(&mut rng, dim, false);
        let dt = rng.gen_range(0.01..0.5);
        let step = assemble_penalty(&toy, &toy.terminal, 0.0, dt, 1e-2 * dt).unwrap();
        let pol = random_policy_matrix_rows(&mut rng, &step, false);
        let (a, _) = assemble(&step, &pol);
        assert!(classify_rows(&a).iter().all(|c| *c == RowClass::Sdd));
        for i in 0..a.dim() {
            let s: f64 = a.row(i).1.iter().sum();
            assert!((s - 1.0 / dt).abs() <= 1e-9 * (1.0 / dt) * (1.0 + a.norm_inf() * dt));
        }
    }
}

#[test]
fn penalty_continuation_rows_match_direct_rows() {
    let mut rng = rand::rngs::StdRng::seed_from_u64(8);
    let toy = Toy::random(&mut rng, 2, false);
    let pen = assemble_penalty(&toy, &toy.terminal, 0.0, 0.2, 1e-3).unwrap();
    let dir = assemble_direct_control(&toy, &toy.terminal, 0.0, 0.2).unwrap();
    let (mut rp, mut rd) = (Row::new(), Row::new());
    for i in 0..pen.dim() {
        let per = pen.impulses(i).len() + 1;
        for j in 0..toy.w.len() {
            rp.clear();
            rd.clear();
            let yp = pen.row(i, j * per, &mut rp);
            let yd = dir.row(i, j, &mut rd);
            assert_eq!(yp, yd);
            assert_eq!(rp, rd);
        }
    }
}

#[test]
fn explicit_matrix_is_sdd_and_needs_control_free_diffusion() {
    let mut rng = rand::rngs::StdRng::seed_from_u64(5);
    for _ in 0..50 {
        let dim = rng.gen_range(1..=2);
        let toy = Toy::random(&mut rng, dim, true);
        let a = explicit_matrix(&toy, 0.0, rng.gen_range(0.01..1.0)).unwrap();
        assert!(classify_rows(&a).iter().all(|c| *c == RowClass::Sdd));
    }
    let mut toy = copy_toy();
    toy.w = qvi::grid::DiscreteControlSet::new(vec![0.0, 1.0]).unwrap();
    toy.b = [0.2, 0.0, 0.3];
    assert!(matches!(explicit_matrix(&toy, 0.0, 0.1), Err(HjbError::SchemeInapplicable(_))));
    let sol = solve_finite_horizon(&toy, &TimeGrid::new(1.0, 2).unwrap(), &SchemeConfig::new(SchemeKind::ExplicitImpulse));
    assert!(matches!(sol, Err(HjbError::SchemeInapplicable(_))));
}

#[test]
fn explicit_foot_is_clamped_to_the_domain() {
    // drift pushes every interior foot past the right edge; boundary nodes drop the drift
    let mut toy = copy_toy();
    toy.a = [100.0, 0.0, 0.0];
    let v_prev = [0.0, 1.0, 2.0, 3.0, 4.0];
    let (y, ctl) = explicit_rhs(&toy, &v_prev, 0.0, 0.5, 0.0).unwrap();
    assert_eq!(y[0], 0.0);
    assert!(y[1..].iter().all(|v| *v == 4.0));
    assert!(ctl.iter().all(|c| !c.impulse));
}

#[test]
fn explicit_cache_factors_once_for_time_independent_diffusion() {
    let bench = build_fex(&FexParams::default(), 0).unwrap();
    let cfg = SchemeConfig::new(SchemeKind::ExplicitImpulse);
    let time = bench.time.unwrap();
    let mut cache = ExplicitCache::default();
    let mut v = vec![0.0; bench.problem.mesh().len()];
    for n in 1..=time.steps() {
        v = explicit_impulse_step(&bench.problem, &v, time.tau(n), time.dt(), &cfg, &mut cache).unwrap().0 .0;
    }
    assert_eq!(cache.refactorizations, 1);
}

#[test]
fn infinite_horizon_constant_reward() {
    let mut toy = copy_toy();
    toy.horizon = f64::INFINITY;
    toy.beta = 0.5;
    toy.f = [0.8, 0.0, 0.0];
    for kind in [SchemeKind::Penalty, SchemeKind::DirectControl] {
        let sol = solve_infinite_horizon(&toy, &SchemeConfig::new(kind)).unwrap();
        assert!(sol.last().iter().all(|v| (v - 1.6).abs() <= 1e-12), "{kind:?}");
        assert!(sol.warnings.is_empty());
    }
    toy.f = [0.0; 3];
    let sol = solve_infinite_horizon(&toy, &SchemeConfig::default()).unwrap();
    assert!(sol.last().iter().all(|v| v.abs() <= 1e-14));
    toy.beta = 0.0;
    assert!(matches!(solve_infinite_horizon(&toy, &SchemeConfig::default()), Err(HjbError::InvalidProblem(_))));
    toy.beta = 0.5;
    assert!(matches!(
        solve_infinite_horizon(&toy, &SchemeConfig::new(SchemeKind::ExplicitImpulse)),
        Err(HjbError::SchemeInapplicable(_))
    ));
}

#[test]
fn fex_intervention_operator_formula() {
    let bench = build_fex(&FexParams::default(), 0).unwrap();
    let fex = &bench.problem;
    let p = &fex.params;
    let x = fex.grid().points().to_vec();
    let mut rng = rand::rngs::StdRng::seed_from_u64(9);
    for t in [0.0, 2.5, 10.0] {
        let disc = (-p.beta * t).exp();
        let u: Vec<f64> = x.iter().map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mu: Vec<f64> = (0..x.len())
            .map(|i| {
                let (v, z) = apply_intervention(fex, &u, t, i).unwrap();
                let expect = (0..x.len()).map(|j| u[j] - disc * (p.kappa * (x[j] - x[i]).abs() + p.c)).fold(f64::NEG_INFINITY, f64::max);
                assert!((v - expect).abs() <= 1e-12);
                let dest = x[i] + z;
                let j = x.iter().position(|xj| (xj - dest).abs() < 1e-12).unwrap();
                assert!((u[j] - disc * (p.kappa * z.abs() + p.c) - v).abs() <= 1e-12);
                v
            })
            .collect();
        for i in 0..x.len() {
            let (m2, _) = apply_intervention(fex, &mu, t, i).unwrap();
            assert!(m2 <= mu[i] - disc * p.c + 1e-12);
        }
    }
}

#[test]
fn prohibitive_cost_never_intervenes() {
    let mut rng = rand::rngs::StdRng::seed_from_u64(10);
    let mut toy = Toy::random(&mut rng, 1, true);
    toy.k = [-1e6, 0.0];
    let u: Vec<f64> = (0..toy.mesh.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    for i in 0..u.len() {
        assert!(apply_intervention(&toy, &u, 0.0, i).unwrap().0 < u[i]);
    }
    let time = TimeGrid::new(toy.horizon, 4).unwrap();
    for kind in all_schemes() {
        let cfg = SchemeConfig::new(kind);
        let sol = solve_finite_horizon(&toy, &time, &cfg).unwrap();
        for n in 0..sol.layers.len() {
            assert!(recover_controls(&toy, &sol, n, &cfg).unwrap().iter().all(|c| !c.impulse), "{kind:?} layer {n}");
        }
        assert!(sol.controls.iter().all(|c| !c.impulse));
    }
    toy.impulses = false;
    assert!(apply_intervention(&toy, &u, 0.0, 0).is_err());
}

#[test]
fn terminal_condition_checks() {
    let fex = build_fex(&FexParams::default(), 0).unwrap().problem;
    let (g, bad) = terminal_layer(&fex).unwrap();
    assert!(g.iter().all(|v| *v == 0.0));
    assert!(bad.is_empty());
    let gmwb = build_gmwb(&GmwbParams::default(), 0).unwrap().problem;
    let (g, bad) = terminal_layer(&gmwb).unwrap();
    assert_eq!(g.len(), gmwb.mesh().len());
    assert!(bad.is_empty());

    let mut toy = copy_toy();
    toy.k = [1.0, 0.0];
    let (_, bad) = terminal_layer(&toy).unwrap();
    assert_eq!(bad.len(), toy.mesh.len());
    let time = TimeGrid::new(1.0, 2).unwrap();
    let sol = solve_finite_horizon(&toy, &time, &SchemeConfig::new(SchemeKind::ExplicitImpulse)).unwrap();
    assert!(!sol.warnings.is_empty());
    let strict = SchemeConfig { strict: true, ..SchemeConfig::new(SchemeKind::ExplicitImpulse) };
    assert!(matches!(solve_finite_horizon(&toy, &time, &strict), Err(HjbError::InvalidProblem(_))));
}

#[test]
fn impulses_outside_the_domain_are_rejected() {
    let toy = copy_toy();
    struct Outside(Toy);
    impl ImpulseProblem for Outside {
        fn mesh(&self) -> &qvi::grid::Mesh {
            self.0.mesh()
        }
        fn horizon(&self) -> f64 {
            1.0
        }
        fn discount(&self) -> f64 {
            0.0
        }
        fn controls(&self) -> &qvi::grid::DiscreteControlSet {
            self.0.controls()
        }
        fn drift(&self, t: f64, x: [f64; 2], w: f64) -> [f64; 2] {
            self.0.drift(t, x, w)
        }
        fn volatility(&self, t: f64, x: [f64; 2], w: f64) -> [f64; 2] {
            self.0.volatility(t, x, w)
        }
        fn reward(&self, t: f64, x: [f64; 2], w: f64) -> f64 {
            self.0.reward(t, x, w)
        }
        fn terminal(&self, _x: [f64; 2]) -> f64 {
            0.0
        }
        fn impulse_controls(&self, _t: f64, _node: usize) -> Vec<f64> {
            vec![5.0]
        }
        fn destination(&self, _t: f64, x: [f64; 2], z: f64) -> [f64; 2] {
            [x[0] + z, 0.0]
        }
        fn cost(&self, _t: f64, _x: [f64; 2], _z: f64) -> f64 {
            -1.0
        }
    }
    assert!(matches!(impulse_options(&Outside(toy), 0.0, 0, 0.0), Err(HjbError::InvalidProblem(_))));
}

#[test]
fn penalty_approaches_direct_control_on_fex() {
    let bench = build_fex(&FexParams::default(), 0).unwrap();
    let time = bench.time.unwrap();
    let direct = solve_finite_horizon(&bench.problem, &time, &SchemeConfig::new(SchemeKind::DirectControl)).unwrap();
    let diffs: Vec<f64> = [1e-2, 1e-4, 1e-6]
        .iter()
        .map(|&c| {
            let cfg = SchemeConfig { penalty: PenaltyParameter::Relative(c), ..SchemeConfig::new(SchemeKind::Penalty) };
            let pen = solve_finite_horizon(&bench.problem, &time, &cfg).unwrap();
            max_abs_diff(pen.last(), direct.last())
        })
        .collect();
    assert!(diffs[0] > diffs[1] && diffs[1] > diffs[2], "{diffs:?}");
    assert!(diffs[2] <= 1e-4, "{diffs:?}");
}

#[test]
fn direct_control_scaling_does_not_change_the_solution() {
    let bench = build_fex(&FexParams::default(), 0).unwrap();
    let time = bench.time.unwrap();
    let solve = |delta: f64| {
        let mut cfg = SchemeConfig { delta, ..SchemeConfig::new(SchemeKind::DirectControl) };
        cfg.iteration.tolerance = 1e-12;
        cfg.iteration.linear.rtol = 1e-14;
        solve_finite_horizon(&bench.problem, &time, &cfg).unwrap()
    };
    let base = solve(1e-2);
    for delta in [1e-4, 1.0, 1e2] {
        let d = max_abs_diff(solve(delta).last(), base.last());
        assert!(d <= 1e-8, "delta {delta}: {d}");
    }
}

#[test]
fn stability_bound_holds_for_every_scheme() {
    let mut rng = rand::rngs::StdRng::seed_from_u64(12);
    for _ in 0..20 {
        let dim = rng.gen_range(1..=2);
        let toy = Toy::random(&mut rng, dim, true);
        let time = TimeGrid::new(toy.horizon, rng.gen_range(1..8)).unwrap();
        let f_sup = (0..toy.mesh.len())
            .flat_map(|i| toy.w.elements().iter().map(move |&w| (i, w)))
            .map(|(i, w)| toy.reward(0.0, toy.mesh.coords(i), w).abs())
            .fold(0.0, f64::max);
        let bound = f_sup * toy.horizon + sup(&toy.terminal) + 1e-8;
        for kind in all_schemes() {
            let sol = solve_finite_horizon(&toy, &time, &SchemeConfig::new(kind)).unwrap();
            assert!(!sol.warnings.iter().any(|w| w.contains("stability")), "{kind:?}: {:?}", sol.warnings);
            assert!(sol.layers.iter().all(|v| sup(v) <= bound), "{kind:?}");
        }
        let mut stat = toy.clone();
        stat.horizon = f64::INFINITY;
        for kind in [SchemeKind::Penalty, SchemeKind::DirectControl] {
            let sol = solve_infinite_horizon(&stat, &SchemeConfig::new(kind)).unwrap();
            assert!(sup(sol.last()) <= f_sup / stat.beta + 1e-8, "{kind:?}");
        }
    }
}

#[test]
fn stability_violation_is_an_error_when_strict() {
    let mut toy = copy_toy();
    toy.f = [1.0, 0.0, 0.0];
    // same problem, but a bound that is too small to hold
    struct Tiny(Toy);
    impl ImpulseProblem for Tiny {
        fn mesh(&self) -> &qvi::grid::Mesh {
            self.0.mesh()
        }
        fn horizon(&self) -> f64 {
            self.0.horizon()
        }
        fn discount(&self) -> f64 {
            0.0
        }
        fn controls(&self) -> &qvi::grid::DiscreteControlSet {
            self.0.controls()
        }
        fn drift(&self, t: f64, x: [f64; 2], w: f64) -> [f64; 2] {
            self.0.drift(t, x, w)
        }
        fn volatility(&self, t: f64, x: [f64; 2], w: f64) -> [f64; 2] {
            self.0.volatility(t, x, w)
        }
        fn reward(&self, t: f64, x: [f64; 2], w: f64) -> f64 {
            self.0.reward(t, x, w)
        }
        fn terminal(&self, x: [f64; 2]) -> f64 {
            self.0.terminal(x)
        }
        fn impulse_controls(&self, t: f64, node: usize) -> Vec<f64> {
            self.0.impulse_controls(t, node)
        }
        fn destination(&self, t: f64, x: [f64; 2], z: f64) -> [f64; 2] {
            self.0.destination(t, x, z)
        }
        fn cost(&self, t: f64, x: [f64; 2], z: f64) -> f64 {
            self.0.cost(t, x, z)
        }
        fn stability_bound(&self, _f: f64, _g: f64) -> Option<f64> {
            Some(0.5)
        }
    }
    let time = TimeGrid::new(1.0, 4).unwrap();
    let sol = solve_finite_horizon(&Tiny(toy.clone()), &time, &SchemeConfig::default()).unwrap();
    assert!(!sol.warnings.is_empty());
    let strict = SchemeConfig { strict: true, ..SchemeConfig::default() };
    assert!(matches!(solve_finite_horizon(&Tiny(toy), &time, &strict), Err(HjbError::Stability { .. })));
}

#[test]
fn export_layers() {
    let bench = build_fex(&FexParams::default(), 0).unwrap();
    let cfg = SchemeConfig::default();
    let sol = solve_finite_horizon(&bench.problem, &bench.time.unwrap(), &cfg).unwrap();
    let mesh = bench.problem.mesh();
    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("layer.csv");
    export_layer(mesh, sol.last(), &sol.controls, &csv_path).unwrap();
    let text = std::fs::read_to_string(&csv_path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("x0,value,w,d,z"));
    assert_eq!(lines.count(), 33);

    let json_path = dir.path().join("layer.json");
    export_layer(mesh, sol.last(), &sol.controls, &json_path).unwrap();
    let recs: Vec<NodeRecord> = serde_json::from_str(&std::fs::read_to_string(&json_path).unwrap()).unwrap();
    assert_eq!(recs, layer_records(mesh, sol.last(), &sol.controls));

    assert!(export_layer(mesh, &[], &[], &dir.path().join("empty.csv")).is_err());
    assert!(export_layer(mesh, sol.last(), &sol.controls[1..], &dir.path().join("short.csv")).is_err());
}

#[test]
fn solutions_are_deterministic() {
    let bench = build_fex(&FexParams::default(), 0).unwrap();
    let time = bench.time.unwrap();
    for kind in all_schemes() {
        let a = solve_finite_horizon(&bench.problem, &time, &SchemeConfig::new(kind)).unwrap();
        let b = solve_finite_horizon(&bench.problem, &time, &SchemeConfig::new(kind)).unwrap();
        assert_eq!(a.layers, b.layers);
        assert_eq!(a.controls, b.controls);
    }
}

/// Scheme residual at node `i`: `-max_P (y - A U)_i` for the Bellman
/// schemes and `(A U - y)_i` for the explicit-impulse scheme.
fn scheme_residual(kind: SchemeKind, toy: &Toy, u: &[f64], v_prev: &[f64], dt: f64, i: usize) -> f64 {
    let mut scratch = Row::new();
    match kind {
        SchemeKind::DirectControl => -assemble_direct_control(toy, v_prev, 0.3, dt).unwrap().best_control(i, u, &mut scratch).1,
        SchemeKind::Penalty => -assemble_penalty(toy, v_prev, 0.3, dt, 1e-2 * dt).unwrap().best_control(i, u, &mut scratch).1,
        SchemeKind::ExplicitImpulse => {
            let a = explicit_matrix(toy, 0.3, dt).unwrap();
            let (y, _) = explicit_rhs(toy, v_prev, 0.3, dt, 0.0).unwrap();
            a.mul_vec(u)[i] - y[i]
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn schemes_are_monotone(seed in any::<u64>(), dim in 1usize..=2, which in 0usize..3) {
        let kind = all_schemes()[which];
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
        let toy = Toy::random(&mut rng, dim, kind == SchemeKind::ExplicitImpulse);
        let n = toy.mesh.len();
        let dt = rng.gen_range(0.01..0.5);
        let u: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let v_prev: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let i = rng.gen_range(0..n);
        let mut u_hat = u.clone();
        for (j, v) in u_hat.iter_mut().enumerate() {
            if j != i {
                *v -= rng.gen_range(0.0..1.0);
            }
        }
        let v_hat: Vec<f64> = v_prev.iter().map(|v| v - rng.gen_range(0.0..1.0)).collect();
        let s = scheme_residual(kind, &toy, &u, &v_prev, dt, i);
        let s_hat = scheme_residual(kind, &toy, &u_hat, &v_hat, dt, i);
        prop_assert!(s <= s_hat + 1e-10 * (1.0 + s.abs()), "{:?}: {} > {}", kind, s, s_hat);
    }

    #[test]
    fn solved_layers_satisfy_their_scheme(seed in any::<u64>(), dim in 1usize..=2) {
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
        let toy = Toy::random(&mut rng, dim, false);
        let time = TimeGrid::new(toy.horizon, 3).unwrap();
        let sol = solve_finite_horizon(&toy, &time, &SchemeConfig::default()).unwrap();
        let dt = time.dt();
        for n in 1..sol.layers.len() {
            let step = assemble_penalty(&toy, &sol.layers[n - 1], sol.times[n], dt, 1e-2 * dt).unwrap();
            let r = qvi::bellman::residual(&step, &sol.layers[n]).unwrap();
            prop_assert!(sup(&r) <= 1e-6 * (1.0 / dt) * (1.0 + sup(&sol.layers[n])));
        }
        prop_assert_eq!(&sol.layers[0], &GridFunction(toy.terminal.clone()));
    }
}
