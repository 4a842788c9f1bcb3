use levy_switching::levy::JumpMeasure;
use levy_switching::path::{path_rng, simulate_path, uniform_times, Dynamics};
use levy_switching::solver::{solve_direct, Discretization, Grid, SolverOptions};
use levy_switching::switching::SwitchingSpec;
use levy_switching::teugels::build_basis;
use levy_switching::{LevyTriplet32, SwitchingSpec32};

#[test]
fn basis_and_paths_in_f32() {
    let t = LevyTriplet32::new(0.0, 0.0, JumpMeasure::from_atoms([(-1.0, 1.0), (1.0, 1.0)])).unwrap();
    let b = build_basis(&t, 3).unwrap();
    assert_eq!(b.degenerate_rank, 2);
    assert!(b.orthonormality_error() < 1e-6);
    let times = uniform_times(0.0f32, 1.0, 20);
    let p = simulate_path(&Dynamics::constant(0.1, 0.5), &t, 0.0, 0.0, &times, &mut path_rng(1, 0)).unwrap();
    assert!(p.states.iter().all(|x| x.is_finite()));
}

#[test]
fn solver_in_f32_matches_f64() {
    let opts = SolverOptions::default();
    let s32: SwitchingSpec32 = SwitchingSpec::constant(1.0, &[1.0, 0.5], &[vec![0.0, 0.2], vec![0.2, 0.0]], &[0.0, 0.1]).unwrap();
    let s64: SwitchingSpec<f64> = SwitchingSpec::constant(1.0, &[1.0, 0.5], &[vec![0.0, 0.2], vec![0.2, 0.0]], &[0.0, 0.1]).unwrap();
    let levy32 = LevyTriplet32::new(0.0, 1.0, JumpMeasure::from_atoms([(0.5, 1.0)])).unwrap();
    let levy64 = levy_switching::LevyTriplet64::new(0.0, 1.0, JumpMeasure::from_atoms([(0.5, 1.0)])).unwrap();
    let d32 = Discretization::new(&Dynamics::constant(0.0, 0.3), &levy32, Grid::new(1.0f32, 20, -3.0, 3.0, 60).unwrap(), &opts).unwrap();
    let d64 = Discretization::new(&Dynamics::constant(0.0, 0.3), &levy64, Grid::new(1.0f64, 20, -3.0, 3.0, 60).unwrap(), &opts).unwrap();
    let mut loose = opts.clone();
    loose.inner_tol = 1e-6;
    loose.outer_tol = 1e-5;
    loose.proj_tol = 1e-6;
    let u32f = solve_direct(&s32, &d32, &loose).unwrap();
    let u64f = solve_direct(&s64, &d64, &opts).unwrap();
    for i in 0..2 {
        for (a, b) in u32f.u[i].iter().zip(&u64f.u[i]) {
            assert!((*a as f64 - b).abs() < 1e-4);
        }
    }
}
