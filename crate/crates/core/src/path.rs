//! Euler simulation of `dX = b(t, X)dt + σ(t, X)dL` with per-step jump
//! bookkeeping. All within-step jumps are applied with the pre-step `σ`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::coefficient::Coefficient;
use crate::error::{Error, Result};
use crate::levy::{Increment, IncrementSampler, LevyTriplet};
use crate::scalar::Scalar;

/// Reproducible generator for path `index` of a run seeded with `seed`.
pub fn path_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// `n + 1` equally spaced times from `t0` to `t_end`.
pub fn uniform_times<S: Scalar>(t0: S, t_end: S, n: usize) -> Vec<S> {
    let dt = (t_end - t0) / S::of_usize(n);
    (0..=n)
        .map(|k| if k == n { t_end } else { t0 + dt * S::of_usize(k) })
        .collect()
}

/// State coefficients `b`, `σ` and the declared bound `|σ| ≤ C_σ`.
#[derive(Clone)]
pub struct Dynamics<S> {
    pub b: Coefficient<S>,
    pub sigma: Coefficient<S>,
    pub sigma_bound: S,
}

impl<S: Scalar> std::fmt::Debug for Dynamics<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Dynamics")
            .field("b", &self.b)
            .field("sigma", &self.sigma)
            .field("sigma_bound", &self.sigma_bound)
            .finish()
    }
}

impl<S: Scalar> Dynamics<S> {
    pub fn new(b: Coefficient<S>, sigma: Coefficient<S>, sigma_bound: S) -> Self {
        Self { b, sigma, sigma_bound }
    }

    pub fn constant(b: f64, sigma: f64) -> Self {
        Self::new(Coefficient::constant(b), Coefficient::constant(sigma), S::lit(sigma.abs()))
    }

    pub fn b(&self, t: S, x: S) -> Result<S> {
        let v = self.b.eval(t, x, &[])?;
        if !v.is_finite() {
            return Err(non_finite("b", t, x));
        }
        Ok(v)
    }

    /// `σ(t, x)`, checked against the declared bound.
    pub fn sigma(&self, t: S, x: S) -> Result<S> {
        let v = self.sigma.eval(t, x, &[])?;
        if !v.is_finite() {
            return Err(non_finite("sigma", t, x));
        }
        if v.abs() > self.sigma_bound * (S::one() + S::lit(1e-12)) {
            return Err(Error::SigmaBound {
                t: t.as_f64(),
                x: x.as_f64(),
                value: v.abs().as_f64(),
                bound: self.sigma_bound.as_f64(),
            });
        }
        Ok(v)
    }

    /// Largest `(|σ(t,x) − σ(t,x′)| + |b(t,x) − b(t,x′)|) / |x − x′|` over
    /// neighbouring probe points at each probe time.
    pub fn lipschitz_estimate(&self, times: &[S], xs: &[S]) -> Result<S> {
        let mut worst = S::zero();
        for &t in times {
            for w in xs.windows(2) {
                let (x, y) = (w[0], w[1]);
                if x == y {
                    continue;
                }
                let d = (self.sigma(t, x)? - self.sigma(t, y)?).abs() + (self.b(t, x)? - self.b(t, y)?).abs();
                worst = worst.max(d / (x - y).abs());
            }
        }
        Ok(worst)
    }
}

fn non_finite<S: Scalar>(what: &str, t: S, x: S) -> Error {
    Error::NonFinite {
        what: what.to_string(),
        t: t.as_f64(),
        x: x.as_f64(),
    }
}

/// One simulated trajectory; `steps[k]` is the Lévy increment over
/// `[times[k], times[k+1]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimPath<S> {
    pub t0: S,
    pub x0: S,
    pub times: Vec<S>,
    pub states: Vec<S>,
    pub steps: Vec<Increment<S>>,
}

impl<S: Scalar> SimPath<S> {
    pub fn horizon(&self) -> S {
        *self.times.last().expect("path has at least one time")
    }

    /// Index of the last grid time `≤ t` (clamped to the grid).
    pub fn index_at(&self, t: S) -> usize {
        self.times.partition_point(|&s| s <= t).saturating_sub(1)
    }

    /// Path state at `t` by step lookup; `x0` before `t0`.
    pub fn state_at(&self, t: S) -> S {
        if t < self.t0 {
            return self.x0;
        }
        self.states[self.index_at(t)]
    }

    pub fn n_jumps(&self, step: usize) -> usize {
        self.steps[step].jumps.len()
    }
}

fn check_times<S: Scalar>(t0: S, times: &[S]) -> Result<()> {
    if times.len() < 2 {
        return Err(Error::InvalidInput("time grid needs at least two points".into()));
    }
    if times[0] != t0 {
        return Err(Error::InvalidInput(format!("time grid starts at {} but t0 = {}", times[0], t0)));
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidInput("time grid must be strictly increasing".into()));
    }
    Ok(())
}

pub fn simulate_path<S: Scalar, R: Rng + ?Sized>(
    dynamics: &Dynamics<S>,
    levy: &LevyTriplet<S>,
    t0: S,
    x0: S,
    times: &[S],
    rng: &mut R,
) -> Result<SimPath<S>> {
    simulate_path_with(dynamics, &levy.sampler()?, t0, x0, times, rng)
}

/// As [`simulate_path`] with a prebuilt sampler.
pub fn simulate_path_with<S: Scalar, R: Rng + ?Sized>(
    dynamics: &Dynamics<S>,
    sampler: &IncrementSampler<S>,
    t0: S,
    x0: S,
    times: &[S],
    rng: &mut R,
) -> Result<SimPath<S>> {
    check_times(t0, times)?;
    let n = times.len() - 1;
    let mut states = Vec::with_capacity(n + 1);
    let mut steps = Vec::with_capacity(n);
    let mut x = x0;
    states.push(x);
    for k in 0..n {
        let (t, dt) = (times[k], times[k + 1] - times[k]);
        let inc = sampler.sample(dt, rng);
        x = x + dynamics.b(t, x)? * dt + dynamics.sigma(t, x)? * inc.total;
        if !x.is_finite() {
            return Err(non_finite("state", times[k + 1], x));
        }
        states.push(x);
        steps.push(inc);
    }
    Ok(SimPath {
        t0,
        x0,
        times: times.to_vec(),
        states,
        steps,
    })
}

/// Terminal state only; avoids storing the path.
pub fn simulate_terminal<S: Scalar, R: Rng + ?Sized>(
    dynamics: &Dynamics<S>,
    sampler: &IncrementSampler<S>,
    x0: S,
    times: &[S],
    rng: &mut R,
    jumps: &mut Vec<S>,
) -> Result<S> {
    let mut x = x0;
    for k in 0..times.len() - 1 {
        let (t, dt) = (times[k], times[k + 1] - times[k]);
        let (_, _, dl) = sampler.sample_into(dt, rng, jumps);
        x = x + dynamics.b(t, x)? * dt + dynamics.sigma(t, x)? * dl;
    }
    if !x.is_finite() {
        return Err(non_finite("state", times[times.len() - 1], x));
    }
    Ok(x)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentCheck {
    pub p: u32,
    pub n_paths: usize,
    pub n_steps: usize,
    /// Constant `C` in `E[sup|X|^p] ≤ C(1 + |x0|^p)`.
    pub constant: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentReport {
    /// Monte Carlo estimate of `E[sup_{s≤T} |X_s|^p]`.
    pub estimate: f64,
    pub std_error: f64,
    /// `estimate / (1 + |x0|^p)`
    pub ratio: f64,
    pub within_bound: bool,
}

pub fn moment_bound_check<S: Scalar>(
    dynamics: &Dynamics<S>,
    levy: &LevyTriplet<S>,
    t0: S,
    x0: S,
    t_end: S,
    check: MomentCheck,
) -> Result<MomentReport> {
    if check.p == 0 || check.n_paths == 0 || check.n_steps == 0 {
        return Err(Error::InvalidInput("p, n_paths and n_steps must be positive".into()));
    }
    let sampler = levy.sampler()?;
    let times = uniform_times(t0, t_end, check.n_steps);
    let (mut sum, mut sum_sq) = (0.0f64, 0.0f64);
    for i in 0..check.n_paths {
        let mut rng = path_rng(check.seed, i as u64);
        let path = simulate_path_with(dynamics, &sampler, t0, x0, &times, &mut rng)?;
        let sup = path
            .states
            .iter()
            .map(|x| x.abs().as_f64().powi(check.p as i32))
            .fold(0.0, f64::max);
        sum += sup;
        sum_sq += sup * sup;
    }
    let n = check.n_paths as f64;
    let mean = sum / n;
    let var = if check.n_paths > 1 {
        ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0)
    } else {
        0.0
    };
    let ratio = mean / (1.0 + x0.abs().as_f64().powi(check.p as i32));
    Ok(MomentReport {
        estimate: mean,
        std_error: (var / n).sqrt(),
        ratio,
        within_bound: ratio <= check.constant,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_examples() {
        let mut rng = path_rng(1, 0);
        let times = uniform_times(0.0, 1.0, 10);
        let p = simulate_path(&Dynamics::constant(1.0, 0.0), &LevyTriplet::brownian(0.0, 1.0), 0.0, 0.0, &times, &mut rng).unwrap();
        assert!((p.horizon() - 1.0f64).abs() < 1e-15);
        assert!((p.states[10] - 1.0f64).abs() < 1e-15);
        let p = simulate_path(&Dynamics::constant(0.0, 1.0), &LevyTriplet::brownian(1.0, 0.0), 0.0, 2.0, &times, &mut rng).unwrap();
        assert!((p.states[10] - 3.0f64).abs() < 1e-14);
    }

    #[test]
    fn sigma_bound_violation_is_reported() {
        let dynamics = Dynamics::new(Coefficient::constant(0.0), Coefficient::parse("1 + x").unwrap(), 1.5);
        let times = uniform_times(0.0, 1.0, 4);
        let err = simulate_path(&dynamics, &LevyTriplet::brownian(0.0, 0.0), 0.0, 1.0, &times, &mut path_rng(0, 0)).unwrap_err();
        assert!(matches!(err, Error::SigmaBound { .. }));
    }

    #[test]
    fn lipschitz_of_affine_coefficients() {
        let dynamics = Dynamics::<f64>::new(Coefficient::parse("2*x").unwrap(), Coefficient::parse("0.5*x").unwrap(), 10.0);
        let c = dynamics.lipschitz_estimate(&[0.0, 1.0], &[-1.0, 0.0, 2.0]).unwrap();
        assert!((c - 2.5).abs() < 1e-14);
    }

    #[test]
    fn state_lookup() {
        let times = uniform_times(0.0, 1.0, 4);
        let p = simulate_path(&Dynamics::constant(1.0, 0.0), &LevyTriplet::brownian(0.0, 0.0), 0.0, 0.0, &times, &mut path_rng(0, 0)).unwrap();
        assert_eq!(p.state_at(-1.0), 0.0);
        assert_eq!(p.state_at(0.3), 0.25);
        assert_eq!(p.state_at(0.5), 0.5);
        assert_eq!(p.state_at(2.0), 1.0);
    }

    #[test]
    fn frozen_path_moment_ratio() {
        let r = moment_bound_check(
            &Dynamics::constant(0.0, 0.0),
            &LevyTriplet::brownian(0.0, 1.0),
            0.0,
            3.0,
            1.0,
            MomentCheck {
                p: 2,
                n_paths: 10,
                n_steps: 5,
                constant: 1.0,
                seed: 0,
            },
        )
        .unwrap();
        assert_eq!(r.estimate, 9.0);
        assert!(r.within_bound && r.ratio <= 1.0);
    }
}
