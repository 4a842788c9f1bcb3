//! Gauss–Legendre rules and a node-doubling composite integrator.

use crate::error::{Error, Result};

/// Points per panel of the composite rule.
pub const PANEL_ORDER: usize = 16;

/// Relative stability demanded between successive node doublings.
pub const DOUBLING_TOL: f64 = 1e-8;

const MAX_DOUBLINGS: usize = 12;

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let half = n.div_ceil(2);
    for i in 0..half {
        // Tricomi initial guess, then Newton on P_n.
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, z);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

/// A fixed Gauss–Legendre rule mapped panel by panel.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl Default for GaussLegendre {
    fn default() -> Self {
        Self::new(PANEL_ORDER)
    }
}

impl GaussLegendre {
    pub fn new(order: usize) -> Self {
        let (nodes, weights) = gauss_legendre(order);
        Self { nodes, weights }
    }

    /// Mapped nodes and weights on `[a, b]`.
    pub fn panel(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let mid = 0.5 * (a + b);
        let half = 0.5 * (b - a);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(&z, &w)| (mid + half * z, half * w))
    }

    /// Sum of `f` and `|f|` over a list of panels.
    fn sum_panels(&self, panels: &[(f64, f64)], f: &mut impl FnMut(f64) -> f64) -> (f64, f64) {
        let mut total = 0.0;
        let mut total_abs = 0.0;
        for &(a, b) in panels {
            for (x, w) in self.panel(a, b) {
                let v = f(x) * w;
                total += v;
                total_abs += v.abs();
            }
        }
        (total, total_abs)
    }
}

/// Panel layout of one integration interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Spacing {
    Uniform,
    /// Panels shrink geometrically towards the lower end; used for integrands
    /// with an integrable singularity at an endpoint `lo = 0`.
    GradedTowardsLower,
}

/// Initial panel partition of `[lo, hi]`.
pub fn initial_panels(lo: f64, hi: f64, count: usize, spacing: Spacing) -> Vec<(f64, f64)> {
    if hi <= lo {
        return Vec::new();
    }
    match spacing {
        Spacing::Uniform => {
            let h = (hi - lo) / count as f64;
            (0..count)
                .map(|k| (lo + k as f64 * h, if k + 1 == count { hi } else { lo + (k + 1) as f64 * h }))
                .collect()
        }
        Spacing::GradedTowardsLower => {
            // Geometric ladder down to ~1e-30 of the width, below which the
            // remainder of any integrable singularity we model is negligible.
            let width = hi - lo;
            let mut panels = Vec::new();
            let mut upper = width;
            while upper > width * 1e-30 {
                let lower = 0.5 * upper;
                panels.push((lo + lower, lo + upper));
                upper = lower;
            }
            panels.reverse();
            panels
        }
    }
}

fn bisect(panels: &[(f64, f64)]) -> Vec<(f64, f64)> {
    panels
        .iter()
        .flat_map(|&(a, b)| {
            let m = 0.5 * (a + b);
            [(a, m), (m, b)]
        })
        .collect()
}

/// Composite Gauss–Legendre integration with panel doubling until the value
/// is stable to [`DOUBLING_TOL`] relative.
pub fn integrate_doubling(
    what: &str,
    rule: &GaussLegendre,
    mut panels: Vec<(f64, f64)>,
    mut f: impl FnMut(f64) -> f64,
) -> Result<f64> {
    if panels.is_empty() {
        return Ok(0.0);
    }
    let (mut prev, _) = rule.sum_panels(&panels, &mut f);
    for _ in 0..MAX_DOUBLINGS {
        panels = bisect(&panels);
        let (value, abs_value) = rule.sum_panels(&panels, &mut f);
        if !value.is_finite() {
            return Err(Error::Quadrature {
                what: what.to_string(),
                value,
                previous: prev,
            });
        }
        let scale = value.abs().max(1e-6 * abs_value);
        if (value - prev).abs() <= DOUBLING_TOL * scale || abs_value == 0.0 {
            return Ok(value);
        }
        prev = value;
    }
    let (value, _) = rule.sum_panels(&panels, &mut f);
    Err(Error::Quadrature {
        what: what.to_string(),
        value,
        previous: prev,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rule_integrates_polynomials_exactly() {
        let (x, w) = gauss_legendre(5);
        // degree 9 is the exactness limit for 5 points
        let integral: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(8)).sum();
        assert!((integral - 2.0 / 9.0).abs() < 1e-14);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn doubling_converges_on_smooth_and_singular_integrands() {
        let rule = GaussLegendre::default();
        let v = integrate_doubling("exp", &rule, initial_panels(0.0, 1.0, 4, Spacing::Uniform), f64::exp).unwrap();
        assert!((v - (1f64.exp() - 1.0)).abs() < 1e-12);
        // ∫_0^1 x^{-1/2} dx = 2
        let v = integrate_doubling(
            "sqrt",
            &rule,
            initial_panels(0.0, 1.0, 4, Spacing::GradedTowardsLower),
            |x| x.powf(-0.5),
        )
        .unwrap();
        assert!((v - 2.0).abs() < 1e-10, "{v}");
    }

    #[test]
    fn empty_interval_is_zero() {
        let rule = GaussLegendre::default();
        assert_eq!(integrate_doubling("e", &rule, initial_panels(1.0, 1.0, 4, Spacing::Uniform), |x| x).unwrap(), 0.0);
    }
}
