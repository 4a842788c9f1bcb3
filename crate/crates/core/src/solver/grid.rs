use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Uniform space-time grid on `[0, T] × [x_min, x_max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid<S> {
    pub t_end: S,
    pub nt: usize,
    pub x_min: S,
    pub x_max: S,
    pub nx: usize,
    /// Jump-split radius; chosen from the dynamics and the measure when `None`.
    pub delta: Option<S>,
}

impl<S: Scalar> Grid<S> {
    pub fn new(t_end: S, nt: usize, x_min: S, x_max: S, nx: usize) -> Result<Self> {
        if !(t_end > S::zero() && t_end.is_finite()) {
            return Err(Error::InvalidInput("grid horizon must be positive".into()));
        }
        if nt == 0 || nx < 2 {
            return Err(Error::InvalidInput("grid needs nt >= 1 and nx >= 2".into()));
        }
        if !(x_max > x_min && x_min.is_finite() && x_max.is_finite()) {
            return Err(Error::InvalidInput("grid needs finite x_min < x_max".into()));
        }
        Ok(Self {
            t_end,
            nt,
            x_min,
            x_max,
            nx,
            delta: None,
        })
    }

    pub fn with_delta(mut self, delta: S) -> Self {
        self.delta = Some(delta);
        self
    }

    pub fn dt(&self) -> S {
        self.t_end / S::of_usize(self.nt)
    }

    pub fn dx(&self) -> S {
        (self.x_max - self.x_min) / S::of_usize(self.nx)
    }

    pub fn t(&self, k: usize) -> S {
        if k == self.nt {
            self.t_end
        } else {
            self.dt() * S::of_usize(k)
        }
    }

    pub fn x(&self, n: usize) -> S {
        if n == self.nx {
            self.x_max
        } else {
            self.x_min + self.dx() * S::of_usize(n)
        }
    }

    pub fn times(&self) -> Vec<S> {
        (0..=self.nt).map(|k| self.t(k)).collect()
    }

    pub fn xs(&self) -> Vec<S> {
        (0..=self.nx).map(|n| self.x(n)).collect()
    }

    /// Same domain with `factor` times as many cells in both directions.
    pub fn refined(&self, factor: usize) -> Self {
        Self {
            nt: self.nt * factor,
            nx: self.nx * factor,
            delta: None,
            ..*self
        }
    }

    /// Cell index and fractional offset for `v` on `n` cells of `[lo, hi]`,
    /// clamped to the interval.
    pub(crate) fn locate(v: S, lo: S, hi: S, n: usize) -> (usize, S) {
        let p = ((v - lo) / (hi - lo) * S::of_usize(n)).max(S::zero()).min(S::of_usize(n));
        let i = p.floor().to_usize().unwrap_or(0).min(n - 1);
        (i, p - S::of_usize(i))
    }
}

/// Solver diagnostics attached to [`ValueFields`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Diagnostics {
    pub scheme: String,
    pub outer_iterations: usize,
    /// Sup-norm change of each outer iterate.
    pub outer_changes: Vec<f64>,
    /// `ρ_n = ‖ΔΓ^{n+1}‖ / ‖ΔΓ^n‖` for the Picard scheme.
    pub contraction_factors: Vec<f64>,
    /// Most mode sweeps needed by one interconnected time step.
    pub max_mode_sweeps: usize,
    /// Most active-set iterations needed by one obstacle solve.
    pub max_active_set_iterations: usize,
    /// `min (u_i − max_{j≠i}(u_j − g_ij))` over all nodes.
    pub min_obstacle_margin: f64,
    /// Share of nodes per mode where the obstacle is active.
    pub active_fraction: Vec<f64>,
    /// Obstacle-active masks, `[mode][k·(nx+1) + n]`.
    pub active: Vec<Vec<bool>>,
    /// Largest jump mass sent outside the domain from central probe nodes.
    pub leak_mass: f64,
    pub delta: f64,
    /// `Σ w_q` of the large-jump nodes.
    pub jump_intensity: f64,
    /// Exponential weight used for nonincreasing coupling.
    pub transform_lambda: Option<f64>,
    /// Smallest `u^{n+1} − u^n` over monotone iterations (negative means a decrease).
    pub monotone_min_increase: Option<f64>,
    /// Largest excess of an iterate over the upper envelope.
    pub monotone_upper_excess: Option<f64>,
}

/// Value surfaces `u_i(t_k, x_n)` stored as `u[i][k·(nx+1) + n]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueFields<S> {
    pub grid: Grid<S>,
    pub m: usize,
    pub u: Vec<Vec<S>>,
    pub diagnostics: Diagnostics,
}

impl<S: Scalar> ValueFields<S> {
    pub fn zeros(grid: Grid<S>, m: usize) -> Self {
        Self {
            grid,
            m,
            u: vec![vec![S::zero(); (grid.nt + 1) * (grid.nx + 1)]; m],
            diagnostics: Diagnostics::default(),
        }
    }

    fn offset(&self, k: usize) -> usize {
        k * (self.grid.nx + 1)
    }

    pub fn slice(&self, i: usize, k: usize) -> &[S] {
        let o = self.offset(k);
        &self.u[i][o..o + self.grid.nx + 1]
    }

    pub fn slice_mut(&mut self, i: usize, k: usize) -> &mut [S] {
        let o = self.offset(k);
        let w = self.grid.nx + 1;
        &mut self.u[i][o..o + w]
    }

    pub fn value(&self, i: usize, k: usize, n: usize) -> S {
        self.u[i][self.offset(k) + n]
    }

    /// Bilinear interpolation of `u_i` at `(t, x)`, clamped to the grid.
    pub fn interpolate(&self, i: usize, t: S, x: S) -> S {
        let g = &self.grid;
        let (k, wt) = Grid::locate(t, S::zero(), g.t_end, g.nt);
        let (n, wx) = Grid::locate(x, g.x_min, g.x_max, g.nx);
        let one = S::one();
        let at = |k: usize| {
            let s = self.slice(i, k);
            s[n] * (one - wx) + s[n + 1] * wx
        };
        at(k) * (one - wt) + at(k + 1) * wt
    }

    /// `‖u‖_∞` over every mode and node.
    pub fn sup_norm(&self) -> S {
        self.u.iter().flatten().fold(S::zero(), |acc, v| acc.max(v.abs()))
    }

    /// `max_i ‖u_i − v_i‖_∞`.
    pub fn distance(&self, other: &Self) -> S {
        self.u
            .iter()
            .zip(&other.u)
            .map(|(a, b)| crate::scalar::max_abs_diff(a, b))
            .fold(S::zero(), S::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_spacing_and_nodes() {
        let g: Grid<f64> = Grid::new(1.0, 4, -1.0, 1.0, 8).unwrap();
        assert_eq!(g.dt(), 0.25);
        assert_eq!(g.dx(), 0.25);
        assert_eq!(g.x(8), 1.0);
        assert_eq!(g.t(4), 1.0);
        assert!(Grid::new(1.0, 0, 0.0, 1.0, 4).is_err());
        assert!(Grid::new(1.0, 2, 1.0, 0.0, 4).is_err());
    }

    #[test]
    fn interpolation_is_exact_for_bilinear_data() {
        let g: Grid<f64> = Grid::new(1.0, 4, -1.0, 1.0, 8).unwrap();
        let mut f = ValueFields::zeros(g, 1);
        for k in 0..=4 {
            for n in 0..=8 {
                let (t, x) = (g.t(k), g.x(n));
                f.slice_mut(0, k)[n] = 1.0 + 2.0 * t - x + 0.5 * t * x;
            }
        }
        let (t, x): (f64, f64) = (0.3, 0.17);
        assert!((f.interpolate(0, t, x) - (1.0 + 2.0 * t - x + 0.5 * t * x)).abs() < 1e-14);
        // clamped outside
        assert_eq!(f.interpolate(0, 0.0, -5.0), f.value(0, 0, 0));
    }
}
