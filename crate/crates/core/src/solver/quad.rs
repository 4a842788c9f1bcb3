use crate::error::{Error, Result};
use crate::levy::{AbsRange, Density, JumpMeasure, LevyTriplet};
use crate::quadrature::GaussLegendre;
use crate::scalar::Scalar;

use super::grid::Grid;

/// Relative agreement required between the node sums and the adaptive
/// reference integrals of the large-jump density.
const NODE_TOL: f64 = 1e-9;
const MAX_NODE_DOUBLINGS: usize = 10;

/// Small/large jump split of `Π` at radius `δ`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadTables<S> {
    pub delta: S,
    /// `s²(δ) = ∫_{|y|≤δ} y² Π(dy)`
    pub s2: S,
    /// Large-jump nodes `(y_q, w_q)`, `|y_q| > δ`.
    pub nodes: Vec<(S, S)>,
    /// `Σ w_q`
    pub total_weight: S,
    /// `Σ w_q y_q`
    pub first_moment: S,
}

impl<S: Scalar> QuadTables<S> {
    pub fn empty(delta: S) -> Self {
        Self {
            delta,
            s2: S::zero(),
            nodes: Vec::new(),
            total_weight: S::zero(),
            first_moment: S::zero(),
        }
    }

    /// `s²(δ) + Σ w_q y_q²`
    pub fn second_moment(&self) -> S {
        self.s2 + self.nodes.iter().map(|&(y, w)| w * y * y).sum::<S>()
    }
}

/// Default split radius `4Δx/σ_max`, moved away from atoms that sit within 10%
/// of it. Infinite when `σ_max = 0`.
pub fn default_delta<S: Scalar>(grid: &Grid<S>, levy: &LevyTriplet<S>, sigma_max: S) -> S {
    if sigma_max <= S::zero() {
        return S::infinity();
    }
    let dx = grid.dx();
    let min_delta = S::lit(2.0) * dx / sigma_max;
    let mut delta = S::lit(4.0) * dx / sigma_max;
    let near = |d: S| {
        levy.measure
            .atoms
            .iter()
            .filter(|a| a.mass != S::zero())
            .map(|a| a.location.abs())
            .find(|&y| (y - d).abs() < S::lit(0.1) * d)
    };
    for _ in 0..16 {
        let Some(y) = near(delta) else { break };
        let below = y / S::lit(1.15);
        delta = if below >= min_delta { below } else { y * S::lit(1.15) };
    }
    delta
}

/// Gauss–Legendre node set for the density tail `|y| > lo`, refined until the
/// node mass and second moment match adaptive reference integrals.
fn density_nodes<S: Scalar>(density: &Density<S>, lo: f64, out: &mut Vec<(S, S)>) -> Result<()> {
    let lo = lo.max(density.cutoff.as_f64());
    let hi = density.x_max();
    if hi <= lo {
        return Ok(());
    }
    let only = JumpMeasure::from_density(*density);
    let range = AbsRange::above(lo);
    let mass_ref = only.mass(range)?.as_f64();
    let m2_ref = only.integrate("large-jump second moment", range, |y| y * y)?.as_f64();

    let mut panels: Vec<(f64, f64)> = if density.family.singular_at_zero() && lo > 0.0 {
        let mut p = Vec::new();
        let mut a = lo;
        while a < hi {
            let b = (2.0 * a).min(hi);
            p.push((a, b));
            a = b;
        }
        p
    } else {
        let count = density.rule.panels.max(1);
        let h = (hi - lo) / count as f64;
        (0..count).map(|k| (lo + k as f64 * h, lo + (k + 1) as f64 * h)).collect()
    };

    let rule = GaussLegendre::default();
    let mut last = (f64::NAN, f64::NAN);
    for _ in 0..=MAX_NODE_DOUBLINGS {
        let mut nodes = Vec::new();
        let (mut mass, mut m2) = (0.0, 0.0);
        for &(a, b) in &panels {
            for (y, w) in rule.panel(a, b) {
                for s in [1.0, -1.0] {
                    let wq = w * density.family.pdf(s * y);
                    if wq > 0.0 {
                        nodes.push((s * y, wq));
                        mass += wq;
                        m2 += wq * y * y;
                    }
                }
            }
        }
        let ok = |v: f64, r: f64| (v - r).abs() <= NODE_TOL * r.abs().max(f64::MIN_POSITIVE);
        if ok(mass, mass_ref) && ok(m2, m2_ref) {
            out.extend(nodes.into_iter().map(|(y, w)| (S::lit(y), S::lit(w))));
            return Ok(());
        }
        last = (mass, mass_ref);
        panels = panels
            .iter()
            .flat_map(|&(a, b)| {
                let m = 0.5 * (a + b);
                [(a, m), (m, b)]
            })
            .collect();
    }
    Err(Error::Quadrature {
        what: "large-jump node set".into(),
        value: last.0,
        previous: last.1,
    })
}

/// Splits `Π` at `delta`: atoms and density mass with `|y| ≤ δ` feed `s²(δ)`,
/// the rest becomes weighted nodes.
pub fn build_quadrature<S: Scalar>(levy: &LevyTriplet<S>, delta: S) -> Result<QuadTables<S>> {
    if !(delta > S::zero()) {
        return Err(Error::InvalidInput("jump-split radius must be positive".into()));
    }
    let measure = &levy.measure;
    let mut tables = QuadTables::empty(delta);
    if delta.is_infinite() {
        tables.s2 = if measure.is_zero() { S::zero() } else { measure.pi_moment(2)? };
        return Ok(tables);
    }
    for a in measure.atoms.iter().filter(|a| a.mass != S::zero()) {
        if a.location.abs() <= delta {
            tables.s2 += a.mass * a.location * a.location;
        } else {
            tables.nodes.push((a.location, a.mass));
        }
    }
    if let Some(d) = &measure.density {
        let only = JumpMeasure::from_density(*d);
        tables.s2 += only.integrate("small-jump second moment", AbsRange::at_most(delta.as_f64()), |y| y * y)?;
        density_nodes(d, delta.as_f64(), &mut tables.nodes)?;
    }
    tables.total_weight = tables.nodes.iter().map(|n| n.1).sum();
    tables.first_moment = tables.nodes.iter().map(|n| n.0 * n.1).sum();
    Ok(tables)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levy::{DensityFamily, JumpMeasure};

    fn atoms(a: &[(f64, f64)]) -> LevyTriplet<f64> {
        LevyTriplet::new(0.0, 0.0, JumpMeasure::from_atoms(a.iter().copied())).unwrap()
    }

    #[test]
    fn split_examples() {
        let q = build_quadrature(&atoms(&[]), 0.5).unwrap();
        assert!(q.nodes.is_empty() && q.s2 == 0.0);
        let q = build_quadrature(&atoms(&[(1.0, 1.0)]), 0.5).unwrap();
        assert_eq!(q.nodes, vec![(1.0, 1.0)]);
        assert_eq!(q.s2, 0.0);
        let q = build_quadrature(&atoms(&[(0.1, 1.0), (2.0, 1.0)]), 0.5).unwrap();
        assert!((q.s2 - 0.01).abs() < 1e-17);
        assert_eq!(q.nodes, vec![(2.0, 1.0)]);
    }

    #[test]
    fn density_split_preserves_moments() {
        for family in [
            DensityFamily::Gaussian {
                rate: 1.0,
                mean: 0.2,
                std: 0.5,
            },
            DensityFamily::DoubleExponential {
                rate: 2.0,
                p_up: 0.4,
                eta_up: 3.0,
                eta_down: 5.0,
            },
            DensityFamily::TemperedStable {
                c: 0.5,
                alpha: 0.7,
                eta: 2.0,
            },
        ] {
            let m = JumpMeasure::from_density(Density::new(family));
            let t = LevyTriplet::new(0.0, 0.0, m.clone()).unwrap();
            let q = build_quadrature(&t, 0.05).unwrap();
            let total: f64 = m.pi_moment(2).unwrap();
            assert!(((q.second_moment() - total) / total).abs() < 1e-6, "{family:?}");
            let tail: f64 = m.mass(AbsRange::above(0.05)).unwrap();
            assert!(((q.total_weight - tail) / tail).abs() < 1e-8);
        }
    }

    #[test]
    fn delta_avoids_atoms() {
        let g = Grid::new(1.0, 10, -2.0, 2.0, 40).unwrap();
        // 4Δx/σ = 0.4 sits on the atom
        let d = default_delta(&g, &atoms(&[(0.41, 1.0)]), 1.0);
        assert!((d - 0.41 / 1.15).abs() < 1e-15);
        let d = default_delta(&g, &atoms(&[]), 1.0);
        assert!((d - 0.4).abs() < 1e-15);
        assert!(default_delta(&g, &atoms(&[]), 0.0).is_infinite());
    }
}
