use levy_switching::coefficient::Coefficient;
use levy_switching::expr::{Bindings, Expr};
use levy_switching::levy::{JumpMeasure, LevyTriplet};
use levy_switching::oracle::{build_chain, dp_solve, ChainModel, Transition};
use levy_switching::path::{path_rng, simulate_path, uniform_times, Dynamics};
use levy_switching::solver::obstacle_project;
use levy_switching::switching::SwitchingSpec;
use levy_switching::teugels::build_basis;
use proptest::prelude::*;

fn atoms() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((prop_oneof![-3.0..-0.05, 0.05..3.0], 0.05..2.0), 1..5)
}

/// Expression source paired with its value at `t = 0.3`, `x = 0.7`; `None`
/// when some step divides by zero or leaves the finite range, which the
/// evaluator reports as an error.
fn expr_tree() -> impl Strategy<Value = (String, Option<f64>)> {
    fn fin(v: f64) -> Option<f64> {
        v.is_finite().then_some(v)
    }
    fn bin(a: Option<f64>, b: Option<f64>, op: fn(f64, f64) -> f64) -> Option<f64> {
        fin(op(a?, b?))
    }
    let leaf = prop_oneof![
        (0.0..10.0f64).prop_map(|v| {
            let v = (v * 100.0).round() / 100.0;
            (format!("{v}"), Some(v))
        }),
        Just(("x".to_string(), Some(0.7))),
        Just(("t".to_string(), Some(0.3))),
    ];
    leaf.prop_recursive(5, 48, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| (format!("({} + {})", a.0, b.0), bin(a.1, b.1, |p, q| p + q))),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| (format!("({} - {})", a.0, b.0), bin(a.1, b.1, |p, q| p - q))),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| (format!("({} * {})", a.0, b.0), bin(a.1, b.1, |p, q| p * q))),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| {
                let v = match b.1 {
                    Some(0.0) => None,
                    d => bin(a.1, d, |p, q| p / q),
                };
                (format!("({} / {})", a.0, b.0), v)
            }),
            inner.clone().prop_map(|a| (format!("-{}", a.0), a.1.map(|v| -v))),
            inner.clone().prop_map(|a| (format!("abs({})", a.0), a.1.map(f64::abs))),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| (format!("min({}, {})", a.0, b.0), bin(a.1, b.1, f64::min))),
            (inner.clone(), inner).prop_map(|(a, b)| (format!("max({}, {})", a.0, b.0), bin(a.1, b.1, f64::max))),
        ]
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn expressions_evaluate_like_rust_and_survive_printing((src, expected) in expr_tree()) {
        let e = Expr::parse(&src).unwrap();
        let b = Bindings::new(0.3, 0.7, &[]);
        prop_assert_eq!(e.eval::<f64>(&b).ok().map(f64::to_bits), expected.map(f64::to_bits), "{}", src);
        let again = Expr::parse(&e.to_string()).unwrap();
        prop_assert_eq!(again.eval::<f64>(&b).ok().map(f64::to_bits), e.eval::<f64>(&b).ok().map(f64::to_bits));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pi_moments_are_additive(a in atoms(), b in atoms(), k in 1u32..6) {
        let ma = JumpMeasure::<f64>::from_atoms(a.clone());
        let mb = JumpMeasure::<f64>::from_atoms(b.clone());
        let sum = ma.plus(&mb).unwrap();
        let lhs = sum.pi_moment(k).unwrap();
        let rhs = ma.pi_moment(k).unwrap() + mb.pi_moment(k).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
    }

    #[test]
    fn char_exponent_is_conjugate_symmetric(a in atoms(), drift in -1.0..1.0f64, varpi in 0.0..2.0f64, theta in -5.0..5.0f64) {
        let t = LevyTriplet::new(drift, varpi, JumpMeasure::from_atoms(a)).unwrap();
        let p = t.char_exponent(theta).unwrap();
        let q = t.char_exponent(-theta).unwrap();
        prop_assert!((p.re - q.re).abs() <= 1e-12 * (1.0 + p.re.abs()));
        prop_assert!((p.im + q.im).abs() <= 1e-12 * (1.0 + p.im.abs()));
        prop_assert!(p.re <= 1e-12);
    }

    #[test]
    fn basis_scales_with_the_measure(a in atoms(), varpi in 0.0..1.5f64, c in 0.1..10.0f64) {
        let t1 = LevyTriplet::new(0.0, varpi, JumpMeasure::from_atoms(a.clone())).unwrap();
        let tc = LevyTriplet::new(0.0, varpi * c.sqrt(), JumpMeasure::from_atoms(a.iter().map(|&(l, m)| (l, m * c)))).unwrap();
        let b1 = build_basis(&t1, 3).unwrap();
        let bc = build_basis(&tc, 3).unwrap();
        prop_assert_eq!(b1.degenerate_rank, bc.degenerate_rank);
        for i in 1..=b1.degenerate_rank {
            for k in 1..=i {
                let want = b1.coeff(i, k).unwrap() / c.sqrt();
                let got = bc.coeff(i, k).unwrap();
                prop_assert!((got - want).abs() <= 1e-8 * (1.0 + want.abs()), "c_{},{}: {} vs {}", i, k, got, want);
            }
        }
        prop_assert!(bc.orthonormality_error() <= 1e-8);
    }

    #[test]
    fn paths_are_reproducible(seed in any::<u64>(), index in 0u64..1000, a in atoms()) {
        let t = LevyTriplet::new(0.1, 0.5, JumpMeasure::from_atoms(a)).unwrap();
        let dynamics = Dynamics::constant(0.2, 0.8);
        let times = uniform_times(0.0, 1.0, 50);
        let p1 = simulate_path(&dynamics, &t, 0.0, 1.0, &times, &mut path_rng(seed, index)).unwrap();
        let p2 = simulate_path(&dynamics, &t, 0.0, 1.0, &times, &mut path_rng(seed, index)).unwrap();
        let p3 = simulate_path(&dynamics, &t, 0.0, 1.0, &times, &mut path_rng(seed, index + 1)).unwrap();
        prop_assert_eq!(&p1, &p2);
        prop_assert_ne!(p1.states, p3.states);
    }

    #[test]
    fn projection_is_feasible_minimal_and_idempotent(
        v in prop::collection::vec(-5.0..5.0f64, 3),
        g in prop::collection::vec(0.01..3.0f64, 9),
    ) {
        let mut g = g;
        for i in 0..3 {
            g[i * 3 + i] = 0.0;
        }
        let p = obstacle_project(&v, &g).unwrap();
        for i in 0..3 {
            prop_assert!(p[i] >= v[i]);
            for j in 0..3 {
                prop_assert!(p[i] >= p[j] - g[i * 3 + j] - 1e-12);
            }
            // raised entries touch their obstacle
            if p[i] > v[i] {
                prop_assert!((0..3).any(|j| j != i && (p[i] - (p[j] - g[i * 3 + j])).abs() <= 1e-12));
            }
        }
        prop_assert_eq!(obstacle_project(&p, &g).unwrap(), p);
    }

    #[test]
    fn chain_rows_keep_the_euler_mean(b in -1.0..1.0f64, sigma in 0.1..1.0f64, a in prop::collection::vec((prop_oneof![-0.5..-0.05, 0.05..0.5], 0.1..1.0), 0..3)) {
        let levy = LevyTriplet::new(0.0, 0.7, JumpMeasure::from_atoms(a)).unwrap();
        let states: Vec<f64> = (0..=200).map(|i| -4.0 + 0.04 * i as f64).collect();
        let dt = 0.01;
        let chain = build_chain(&Dynamics::constant(b, sigma), &levy, states.clone(), vec![0.0, dt], 1e-6).unwrap();
        let drift = b + sigma * levy.mean_l1().unwrap();
        for s in [60usize, 100, 140] {
            let row = &chain.transitions[0].rows[s];
            let total: f64 = row.iter().map(|r| r.1).sum();
            let mean: f64 = row.iter().map(|&(j, p)| p * states[j]).sum();
            prop_assert!((total - 1.0).abs() <= 1e-12);
            prop_assert!((mean - (states[s] + drift * dt)).abs() <= 1e-12);
        }
    }
}

fn random_chain(ns: usize, nk: usize, weights: &[f64]) -> ChainModel<f64> {
    let states: Vec<f64> = (0..ns).map(|s| s as f64 - 1.0).collect();
    let times: Vec<f64> = (0..=nk).map(|k| k as f64 / nk as f64).collect();
    let transitions = (0..nk)
        .map(|k| {
            let rows: Vec<Vec<f64>> = (0..ns)
                .map(|s| {
                    let w: Vec<f64> = (0..ns).map(|j| weights[(k * ns + s) * ns + j] + 0.05).collect();
                    let total: f64 = w.iter().sum();
                    w.iter().map(|v| v / total).collect()
                })
                .collect();
            Transition::from_dense(&rows)
        })
        .collect();
    ChainModel::new(states, times, transitions).unwrap()
}

fn dp_spec(f: &[(f64, f64)], g: f64, h: f64) -> SwitchingSpec<f64> {
    let m = f.len();
    SwitchingSpec::new(
        1.0,
        f.iter().map(|&(a, b)| Coefficient::Affine { intercept: a, slope: b }).collect(),
        (0..m).map(|i| (0..m).map(|j| Coefficient::constant(if i == j { 0.0 } else { g })).collect()).collect(),
        (0..m).map(|_| Coefficient::constant(h)).collect(),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dp_is_monotone_in_the_data(
        weights in prop::collection::vec(0.0..1.0f64, 27),
        f in prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), 3),
        g in 0.05..1.0f64,
        lift in 0.0..0.5f64,
        cut in 0.0..0.04f64,
    ) {
        let chain = random_chain(3, 3, &weights);
        let base = dp_solve(&chain, &dp_spec(&f, g, 0.0)).unwrap();
        let raised_f: Vec<(f64, f64)> = f.iter().map(|&(a, b)| (a + lift, b)).collect();
        let up = dp_solve(&chain, &dp_spec(&raised_f, g - cut, lift)).unwrap();
        for i in 0..3 {
            for (a, b) in base.values[i].iter().zip(&up.values[i]) {
                prop_assert!(b >= a);
            }
        }
    }

    #[test]
    fn dp_shifts_with_the_terminal(
        weights in prop::collection::vec(0.0..1.0f64, 27),
        f in prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), 2),
        g in 0.05..1.0f64,
        c in -5.0..5.0f64,
    ) {
        let chain = random_chain(3, 3, &weights);
        let base = dp_solve(&chain, &dp_spec(&f, g, 0.0)).unwrap();
        let shifted = dp_solve(&chain, &dp_spec(&f, g, c)).unwrap();
        for i in 0..2 {
            for (a, b) in base.values[i].iter().zip(&shifted.values[i]) {
                prop_assert!((b - a - c).abs() <= 1e-12 * (1.0 + c.abs() + a.abs()));
            }
        }
    }
}
