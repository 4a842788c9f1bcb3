use levy_switching_cli::config::*;
use proptest::prelude::*;
use toml::Spanned;

fn sp<T>(v: T) -> Spanned<T> {
    Spanned::new(0..0, v)
}

fn num() -> impl Strategy<Value = f64> {
    prop_oneof![-10.0..10.0f64, Just(0.0), Just(1.0), 1e-9..1e-3f64]
}

fn coefficient() -> impl Strategy<Value = CoefSource> {
    prop_oneof![
        num().prop_map(CoefSource::Number),
        prop::sample::select(vec!["x", "1 + x", "min(x, 2) + t", "exp(-x^2)", "abs(x) * 0.5", "1 - t", "max(t, x) / 3"])
            .prop_map(CoefSource::from),
        (num(), num()).prop_map(|(intercept, slope)| CoefSource::Affine { intercept, slope }),
        prop::collection::btree_map(-50i32..50, num(), 1..5).prop_map(|knots| CoefSource::Table {
            table: knots.into_iter().map(|(x, v)| [x as f64 / 10.0, v]).collect(),
        }),
    ]
}

fn cost() -> impl Strategy<Value = CoefSource> {
    prop_oneof![
        (0.01..2.0f64).prop_map(CoefSource::Number),
        prop::sample::select(vec!["0.1 + abs(x)", "0.5", "exp(-x^2) + 0.2"]).prop_map(CoefSource::from),
    ]
}

fn measure() -> impl Strategy<Value = MeasureSection> {
    prop_oneof![
        prop::collection::vec((prop_oneof![-3.0..-0.1f64, 0.1..3.0f64], 0.01..2.0f64), 0..4).prop_map(|a| MeasureSection {
            atoms: a.into_iter().map(|(l, m)| [l, m]).collect(),
            ..MeasureSection::default()
        }),
        (0.1..2.0f64, -1.0..1.0f64, 0.1..1.0f64, prop::option::of(4usize..32)).prop_map(|(rate, mean, std, panels)| {
            MeasureSection {
                density: Some(DensitySection::Gaussian { rate, mean, std }),
                panels,
                ..MeasureSection::default()
            }
        }),
    ]
}

fn problem() -> impl Strategy<Value = ProblemSection> {
    (1usize..4).prop_flat_map(|m| {
        (
            prop::collection::vec(coefficient(), m),
            prop::collection::vec(prop::collection::vec(cost(), m), m),
            prop::collection::vec(coefficient(), m),
            prop::sample::select(vec![Monotonicity::None, Monotonicity::Nondecreasing, Monotonicity::Nonincreasing]),
            prop::option::of(prop::collection::vec(0.0..2.0f64, m)),
        )
            .prop_map(move |(f, g, h, coupling_monotonicity, lipschitz_y)| {
                let g = g
                    .into_iter()
                    .enumerate()
                    .map(|(i, row)| {
                        row.into_iter()
                            .enumerate()
                            .map(|(j, c)| sp(if i == j { CoefSource::Number(0.0) } else { c }))
                            .collect()
                    })
                    .collect();
                ProblemSection {
                    m,
                    f: sp(f.into_iter().map(sp).collect()),
                    g: Some(sp(g)),
                    h: sp(h.into_iter().map(sp).collect()),
                    coupling_monotonicity,
                    lipschitz_y,
                }
            })
    })
}

fn grid() -> impl Strategy<Value = GridSection> {
    (0.1..5.0f64, 1usize..200, -5.0..0.0f64, 1.0..10.0f64, 2usize..400, prop::option::of(0.01..2.0f64)).prop_map(
        |(t_end, nt, x_min, width, nx, delta)| GridSection {
            t_end,
            nt,
            x_min,
            x_max: x_min + width,
            nx,
            delta,
        },
    )
}

fn solver() -> impl Strategy<Value = SolverSection> {
    (
        prop::sample::select(vec![SchemeName::Monotone, SchemeName::Picard, SchemeName::Direct]),
        1e-12..1e-4f64,
        1usize..1000,
        prop::option::of(0.1..10.0f64),
    )
        .prop_map(|(scheme, tolerance, max_outer, lambda)| SolverSection {
            scheme,
            tolerance,
            max_outer,
            lambda,
            ..SolverSection::default()
        })
}

fn config() -> impl Strategy<Value = Config> {
    (
        (-1.0..1.0f64, 0.0..2.0f64, measure(), 0.1..2.0f64),
        (coefficient(), coefficient(), prop::option::of(0.1..20.0f64)),
        problem(),
        grid(),
        solver(),
        (2usize..500, prop::option::of(1usize..100), 1usize..100_000, any::<u64>(), any::<u64>()),
    )
        .prop_map(|(levy, dynamics, problem, grid, solver, (states, steps, paths, s1, s2))| Config {
            levy: LevySection {
                a: levy.0,
                varpi: levy.1,
                measure: levy.2,
                eps: levy.3,
                lambda: 1.0,
            },
            dynamics: DynamicsSection {
                b: sp(dynamics.0),
                sigma: sp(dynamics.1),
                sigma_bound: dynamics.2,
            },
            problem,
            grid,
            solver,
            oracle: OracleSection {
                states,
                steps,
                ..OracleSection::default()
            },
            simulate: SimulateSection::default(),
            evaluate: EvaluateSection {
                paths,
                ..EvaluateSection::default()
            },
            compare: CompareSection::default(),
            seeds: Seeds {
                simulate: s1,
                evaluate: s2,
            },
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn rendered_configs_parse_back_unchanged(c in config()) {
        let text = render_config(&c);
        let parsed = parse_config(&text);
        prop_assert!(parsed.is_ok(), "{}\n{}", parsed.unwrap_err(), text);
        let parsed = parsed.unwrap();
        prop_assert_eq!(&parsed, &c);
        prop_assert_eq!(render_config(&parsed), text);
    }
}
