use levy_switching::coefficient::Coefficient;
use levy_switching::levy::{JumpMeasure, LevyTriplet};
use levy_switching::path::Dynamics;
use levy_switching::solver::{solve, Grid, Scheme, SolverOptions};
use levy_switching::switching::SwitchingSpec;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let levy = LevyTriplet::new(0.0, 1.0, JumpMeasure::from_atoms([(0.5, 1.0)]))?;
    let dynamics = Dynamics::constant(0.0, 0.3);
    let spec = SwitchingSpec::new(
        1.0,
        vec![Coefficient::parse("1 + x")?, Coefficient::parse("1 - x")?],
        vec![
            vec![Coefficient::constant(0.0), Coefficient::constant(0.1)],
            vec![Coefficient::constant(0.1), Coefficient::constant(0.0)],
        ],
        vec![Coefficient::constant(0.0), Coefficient::constant(0.0)],
    )?;
    let grid = Grid::new(1.0, 200, -3.0, 3.0, 300)?;
    let u = solve(Scheme::Direct, &spec, &dynamics, &levy, grid, &SolverOptions::default())?;
    println!("u_0(0, 0.2) = {}", u.interpolate(0, 0.0, 0.2));
    Ok(())
}
