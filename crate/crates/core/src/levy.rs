//! The driving Lévy process: triplet `(a, ϖ, Π)`, moments of the jump
//! measure, the characteristic exponent, and exact simulation of
//! finite-activity increments.
//!
//! Compensation follows the truncation at `|x| = 1`:
//!
//! ```text
//! Ψ(θ) = iaθ − ½ϖ²θ² + ∫ (e^{iθx} − 1 − iθx·1{|x|<1}) Π(dx)
//! E[L₁] = a + ∫_{|x|≥1} x Π(dx)
//! ```

use num_complex::Complex;
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use crate::error::{Error, Result};
use crate::quadrature::{initial_panels, integrate_doubling, GaussLegendre, Spacing};
use crate::scalar::Scalar;

/// Values above this are treated as numerically infinite by [`validate_measure`].
pub const OVERFLOW_GUARD: f64 = 1e300;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Atom<S> {
    pub location: S,
    pub mass: S,
}

impl<S: Scalar> Atom<S> {
    pub fn new(location: f64, mass: f64) -> Self {
        Self {
            location: S::lit(location),
            mass: S::lit(mass),
        }
    }
}

/// Parametric Lévy densities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DensityFamily<S> {
    /// `rate · N(mean, std²)` jump sizes (Merton).
    Gaussian { rate: S, mean: S, std: S },
    /// `rate · [p η₊ e^{−η₊x} 1{x>0} + (1−p) η₋ e^{η₋x} 1{x<0}]` (Kou).
    DoubleExponential {
        rate: S,
        p_up: S,
        eta_up: S,
        eta_down: S,
    },
    /// Symmetric `c e^{−η|x|} / |x|^{1+α}`, `0 ≤ α < 2`; infinite activity.
    TemperedStable { c: S, alpha: S, eta: S },
}

impl<S: Scalar> DensityFamily<S> {
    pub fn name(&self) -> &'static str {
        match self {
            DensityFamily::Gaussian { .. } => "gaussian",
            DensityFamily::DoubleExponential { .. } => "double_exponential",
            DensityFamily::TemperedStable { .. } => "tempered_stable",
        }
    }

    /// Lévy density at `x ≠ 0`.
    pub fn pdf(&self, x: f64) -> f64 {
        match *self {
            DensityFamily::Gaussian { rate, mean, std } => {
                let (rate, mean, std) = (rate.as_f64(), mean.as_f64(), std.as_f64());
                let z = (x - mean) / std;
                rate * (-0.5 * z * z).exp() / (std * (2.0 * std::f64::consts::PI).sqrt())
            }
            DensityFamily::DoubleExponential {
                rate,
                p_up,
                eta_up,
                eta_down,
            } => {
                let (rate, p, eu, ed) = (rate.as_f64(), p_up.as_f64(), eta_up.as_f64(), eta_down.as_f64());
                if x > 0.0 {
                    rate * p * eu * (-eu * x).exp()
                } else {
                    rate * (1.0 - p) * ed * (ed * x).exp()
                }
            }
            DensityFamily::TemperedStable { c, alpha, eta } => {
                let ax = x.abs();
                c.as_f64() * (-eta.as_f64() * ax).exp() / ax.powf(1.0 + alpha.as_f64())
            }
        }
    }

    pub fn singular_at_zero(&self) -> bool {
        matches!(self, DensityFamily::TemperedStable { .. })
    }

    /// Total mass is finite without truncation.
    pub fn finite_activity(&self) -> bool {
        !self.singular_at_zero()
    }

    /// `|x|` beyond which the density and all its polynomial moments are
    /// negligible.
    fn tail_bound(&self) -> f64 {
        match *self {
            DensityFamily::Gaussian { mean, std, .. } => mean.as_f64().abs() + 20.0 * std.as_f64(),
            DensityFamily::DoubleExponential { eta_up, eta_down, .. } => {
                100.0 / eta_up.as_f64().min(eta_down.as_f64())
            }
            DensityFamily::TemperedStable { eta, .. } => 100.0 / eta.as_f64(),
        }
    }

    fn check(&self) -> Result<()> {
        let bad = |field: &str, reason: &str| {
            Err(Error::InvalidMeasure {
                field: format!("density.{field}"),
                reason: reason.to_string(),
            })
        };
        let pos = |v: S| v.is_finite() && v > S::zero();
        match *self {
            DensityFamily::Gaussian { rate, mean, std } => {
                if !pos(rate) {
                    return bad("rate", "must be positive");
                }
                if !mean.is_finite() {
                    return bad("mean", "must be finite");
                }
                if !pos(std) {
                    return bad("std", "must be positive");
                }
            }
            DensityFamily::DoubleExponential {
                rate,
                p_up,
                eta_up,
                eta_down,
            } => {
                if !pos(rate) {
                    return bad("rate", "must be positive");
                }
                if !(p_up >= S::zero() && p_up <= S::one()) {
                    return bad("p_up", "must lie in [0, 1]");
                }
                if !pos(eta_up) || !pos(eta_down) {
                    return bad("eta", "decay rates must be positive");
                }
            }
            DensityFamily::TemperedStable { c, alpha, eta } => {
                if !pos(c) {
                    return bad("c", "must be positive");
                }
                if !(alpha >= S::zero() && alpha < S::lit(2.0)) {
                    return bad("alpha", "must lie in [0, 2)");
                }
                if !pos(eta) {
                    return bad("eta", "must be positive");
                }
            }
        }
        Ok(())
    }
}

/// Quadrature descriptor for density integrals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadRule {
    /// Initial uniform panel count per side; doubled until stable.
    pub panels: usize,
    /// Truncation `X_max`; the family's exponential-tail bound when `None`.
    pub x_max: Option<f64>,
}

impl Default for QuadRule {
    fn default() -> Self {
        Self { panels: 8, x_max: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Density<S> {
    pub family: DensityFamily<S>,
    /// Jumps with `|x| < cutoff` are removed from the measure.
    pub cutoff: S,
    pub rule: QuadRule,
}

impl<S: Scalar> Density<S> {
    pub fn new(family: DensityFamily<S>) -> Self {
        Self {
            family,
            cutoff: S::zero(),
            rule: QuadRule::default(),
        }
    }

    pub fn finite_activity(&self) -> bool {
        self.family.finite_activity() || self.cutoff > S::zero()
    }

    pub fn x_max(&self) -> f64 {
        self.rule.x_max.unwrap_or_else(|| self.family.tail_bound())
    }
}

/// A range of jump magnitudes `|x|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AbsRange {
    pub lo: f64,
    pub lo_closed: bool,
    pub hi: f64,
    pub hi_closed: bool,
}

impl AbsRange {
    pub const ALL: AbsRange = AbsRange {
        lo: 0.0,
        lo_closed: false,
        hi: f64::INFINITY,
        hi_closed: false,
    };

    /// `|x| ≥ r`
    pub fn at_least(r: f64) -> Self {
        Self { lo: r, lo_closed: true, ..Self::ALL }
    }

    /// `|x| > r`
    pub fn above(r: f64) -> Self {
        Self { lo: r, lo_closed: false, ..Self::ALL }
    }

    /// `0 < |x| < r`
    pub fn below(r: f64) -> Self {
        Self { hi: r, hi_closed: false, ..Self::ALL }
    }

    /// `0 < |x| ≤ r`
    pub fn at_most(r: f64) -> Self {
        Self { hi: r, hi_closed: true, ..Self::ALL }
    }

    pub fn contains(&self, ax: f64) -> bool {
        let lo_ok = if self.lo_closed { ax >= self.lo } else { ax > self.lo };
        let hi_ok = if self.hi_closed { ax <= self.hi } else { ax < self.hi };
        lo_ok && hi_ok
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeasureKind {
    None,
    FiniteAtoms,
    FiniteActivityDensity,
    InfiniteActivityDensity,
    /// Atoms plus a density.
    Mixed,
}

/// Lévy measure `Π`: finitely many atoms and at most one parametric density.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct JumpMeasure<S> {
    pub atoms: Vec<Atom<S>>,
    pub density: Option<Density<S>>,
}

impl<S: Scalar> JumpMeasure<S> {
    pub fn zero() -> Self {
        Self {
            atoms: Vec::new(),
            density: None,
        }
    }

    pub fn from_atoms(atoms: impl IntoIterator<Item = (f64, f64)>) -> Self {
        Self {
            atoms: atoms.into_iter().map(|(l, m)| Atom::new(l, m)).collect(),
            density: None,
        }
    }

    pub fn from_density(density: Density<S>) -> Self {
        Self {
            atoms: Vec::new(),
            density: Some(density),
        }
    }

    pub fn kind(&self) -> MeasureKind {
        let has_atoms = self.atoms.iter().any(|a| a.mass != S::zero());
        match (&self.density, has_atoms) {
            (None, false) => MeasureKind::None,
            (None, true) => MeasureKind::FiniteAtoms,
            (Some(_), true) => MeasureKind::Mixed,
            (Some(d), false) if d.finite_activity() => MeasureKind::FiniteActivityDensity,
            (Some(_), false) => MeasureKind::InfiniteActivityDensity,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.kind() == MeasureKind::None
    }

    pub fn finite_activity(&self) -> bool {
        self.density.as_ref().is_none_or(|d| d.finite_activity())
    }

    /// Sum of two measures. At most one of them may carry a density.
    pub fn plus(&self, other: &Self) -> Result<Self> {
        if self.density.is_some() && other.density.is_some() {
            return Err(Error::InvalidInput("cannot add two density measures".into()));
        }
        let mut atoms = self.atoms.clone();
        atoms.extend(other.atoms.iter().copied());
        Ok(Self {
            atoms,
            density: self.density.or(other.density),
        })
    }

    /// Structural well-formedness: nonzero finite atom locations, positive masses.
    pub fn check_structure(&self) -> Result<()> {
        self.check_structure_with(false)
    }

    fn check_structure_with(&self, allow_zero_mass: bool) -> Result<()> {
        for (k, a) in self.atoms.iter().enumerate() {
            if allow_zero_mass && a.mass == S::zero() {
                continue;
            }
            if !a.location.is_finite() || a.location == S::zero() {
                return Err(Error::InvalidMeasure {
                    field: format!("atoms[{k}].location"),
                    reason: format!("atom at {} is not allowed (Π({{0}}) = 0)", a.location),
                });
            }
            if !a.mass.is_finite() || a.mass <= S::zero() {
                return Err(Error::InvalidMeasure {
                    field: format!("atoms[{k}].mass"),
                    reason: format!("mass {} must be positive", a.mass),
                });
            }
        }
        if let Some(d) = &self.density {
            d.family.check()?;
            if !(d.cutoff >= S::zero()) {
                return Err(Error::InvalidMeasure {
                    field: "density.cutoff".into(),
                    reason: "must be non-negative".into(),
                });
            }
        }
        Ok(())
    }

    /// `∫_{|x| ∈ range} g(x) Π(dx)`: exact sums over atoms, adaptive
    /// Gauss–Legendre for the density.
    pub fn integrate(&self, what: &str, range: AbsRange, g: impl Fn(S) -> S) -> Result<S> {
        let mut total = S::zero();
        for a in &self.atoms {
            if a.mass != S::zero() && range.contains(a.location.abs().as_f64()) {
                total += a.mass * g(a.location);
            }
        }
        if let Some(d) = &self.density {
            total += S::lit(integrate_density(d, what, range, d.x_max(), |x| g(S::lit(x)).as_f64())?);
        }
        Ok(total)
    }

    /// `∫ x^i Π(dx)`.
    pub fn pi_moment(&self, i: u32) -> Result<S> {
        self.pi_moment_in(i, AbsRange::ALL)
    }

    /// `∫_{|x| ∈ range} x^i Π(dx)`; `range = AbsRange::at_least(1.0)` gives the
    /// large-jump first moment used by `E[L₁]`.
    pub fn pi_moment_in(&self, i: u32, range: AbsRange) -> Result<S> {
        if i == 0 {
            return Err(Error::InvalidInput("moment order must be at least 1".into()));
        }
        self.integrate(&format!("moment {i}"), range, |x| x.powi(i as i32))
    }

    /// `Π(|x| ∈ range)`.
    pub fn mass(&self, range: AbsRange) -> Result<S> {
        self.integrate("mass", range, |_| S::one())
    }
}

fn integrate_density<S: Scalar>(
    d: &Density<S>,
    what: &str,
    range: AbsRange,
    x_max: f64,
    g: impl Fn(f64) -> f64,
) -> Result<f64> {
    let lo = range.lo.max(d.cutoff.as_f64());
    let hi = range.hi.min(x_max);
    if hi <= lo {
        return Ok(0.0);
    }
    let spacing = if lo == 0.0 && d.family.singular_at_zero() {
        Spacing::GradedTowardsLower
    } else {
        Spacing::Uniform
    };
    let rule = GaussLegendre::default();
    let mut total = 0.0;
    for sign in [1.0, -1.0] {
        total += integrate_doubling(what, &rule, initial_panels(lo, hi, d.rule.panels.max(1), spacing), |ax| {
            let x = sign * ax;
            g(x) * d.family.pdf(x)
        })?;
    }
    Ok(total)
}

/// Outcome of [`validate_measure`].
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureReport {
    /// `∫ (1 ∧ x²) Π(dx)`
    pub small_jump_integral: f64,
    /// `∫_{(−ε,ε)^c} e^{λ|x|} Π(dx)`
    pub exp_moment: f64,
    pub small_jump_finite: bool,
    pub exp_moment_finite: bool,
}

impl MeasureReport {
    pub fn is_valid(&self) -> bool {
        self.small_jump_finite && self.exp_moment_finite
    }
}

/// Checks the integrability conditions `∫(1∧x²)Π < ∞` and
/// `∫_{|x|≥ε} e^{λ|x|}Π < ∞` numerically.
///
/// For densities an integral counts as finite when it is below
/// [`OVERFLOW_GUARD`] and stable (1e-6 relative) when the truncation bound is
/// doubled.
pub fn validate_measure<S: Scalar>(measure: &JumpMeasure<S>, eps: f64, lam: f64) -> Result<MeasureReport> {
    if !(eps > 0.0 && lam > 0.0) {
        return Err(Error::InvalidInput("eps and lambda must be positive".into()));
    }
    measure.check_structure()?;
    let small = |x: f64| (x * x).min(1.0);
    let expo = |x: f64| (lam * x.abs()).exp();

    let mut small_val = 0.0;
    let mut exp_val = 0.0;
    for a in &measure.atoms {
        let x = a.location.as_f64();
        small_val += a.mass.as_f64() * small(x);
        if x.abs() >= eps {
            exp_val += a.mass.as_f64() * expo(x);
        }
    }
    let mut small_finite = small_val.is_finite() && small_val < OVERFLOW_GUARD;
    let mut exp_finite = exp_val.is_finite() && exp_val < OVERFLOW_GUARD;

    if let Some(d) = &measure.density {
        let x_max = d.x_max();
        let finite = |what: &str, range: AbsRange, g: &dyn Fn(f64) -> f64| -> (f64, bool) {
            let base = integrate_density(d, what, range, x_max, g);
            let wide = integrate_density(d, what, range, 2.0 * x_max, g);
            match (base, wide) {
                (Ok(v), Ok(w)) => {
                    let stable = (w - v).abs() <= 1e-6 * w.abs().max(f64::MIN_POSITIVE);
                    (w, stable && w.is_finite() && w < OVERFLOW_GUARD)
                }
                (Ok(v), Err(_)) => (v, false),
                (Err(_), _) => (f64::INFINITY, false),
            }
        };
        let (v, ok) = finite("(1 ∧ x²)", AbsRange::ALL, &small);
        small_val += v;
        small_finite &= ok;
        let (v, ok) = finite("exponential moment", AbsRange::at_least(eps), &expo);
        exp_val += v;
        exp_finite &= ok;
    }
    Ok(MeasureReport {
        small_jump_integral: small_val,
        exp_moment: exp_val,
        small_jump_finite: small_finite,
        exp_moment_finite: exp_finite,
    })
}

/// Lévy–Khintchine triplet `(a, ϖ, Π)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LevyTriplet<S> {
    pub a: S,
    pub varpi: S,
    pub measure: JumpMeasure<S>,
}

impl<S: Scalar> LevyTriplet<S> {
    pub fn new(a: S, varpi: S, measure: JumpMeasure<S>) -> Result<Self> {
        if !a.is_finite() {
            return Err(Error::InvalidInput("drift a must be finite".into()));
        }
        if !(varpi.is_finite() && varpi >= S::zero()) {
            return Err(Error::InvalidInput("varpi must be finite and non-negative".into()));
        }
        measure.check_structure_with(true)?;
        Ok(Self { a, varpi, measure })
    }

    pub fn brownian(a: f64, varpi: f64) -> Self {
        Self {
            a: S::lit(a),
            varpi: S::lit(varpi),
            measure: JumpMeasure::zero(),
        }
    }

    /// `E[L₁] = a + ∫_{|x|≥1} x Π(dx)`.
    pub fn mean_l1(&self) -> Result<S> {
        Ok(self.a + self.measure.pi_moment_in(1, AbsRange::at_least(1.0))?)
    }

    /// `Var[L₁] = ϖ² + ∫ x² Π(dx)`.
    pub fn variance_l1(&self) -> Result<S> {
        Ok(self.varpi * self.varpi + self.measure.pi_moment(2)?)
    }

    /// Characteristic exponent `Ψ(θ)`, `E[e^{iθL_t}] = e^{tΨ(θ)}`.
    pub fn char_exponent(&self, theta: S) -> Result<Complex<S>> {
        let half = S::lit(0.5);
        // e^{iθx} − 1 = (−2 sin²(θx/2)) + i sin(θx), written to avoid cancellation
        let re = self
            .measure
            .integrate("Re Ψ", AbsRange::ALL, |x| -S::lit(2.0) * (half * theta * x).sin().powi(2))?;
        let im_small = self
            .measure
            .integrate("Im Ψ small jumps", AbsRange::below(1.0), |x| (theta * x).sin() - theta * x)?;
        let im_large = self
            .measure
            .integrate("Im Ψ large jumps", AbsRange::at_least(1.0), |x| (theta * x).sin())?;
        Ok(Complex::new(
            -half * self.varpi * self.varpi * theta * theta + re,
            self.a * theta + im_small + im_large,
        ))
    }

    /// Absorbs density jumps with `|x| < kappa` into the Gaussian coefficient:
    /// `ϖ² ← ϖ² + ∫_{|x|<κ} x² Π(dx)`. Atoms are left untouched.
    pub fn with_small_jump_correction(&self, kappa: S) -> Result<Self> {
        if !(kappa > S::zero() && kappa <= S::one()) {
            return Err(Error::InvalidInput("small-jump cutoff must lie in (0, 1]".into()));
        }
        let Some(d) = self.measure.density else {
            return Ok(self.clone());
        };
        let density_only = JumpMeasure::from_density(d);
        let absorbed = density_only.integrate("small-jump variance", AbsRange::below(kappa.as_f64()), |x| x * x)?;
        let mut out = self.clone();
        out.varpi = (self.varpi * self.varpi + absorbed).sqrt();
        if let Some(dd) = out.measure.density.as_mut() {
            dd.cutoff = dd.cutoff.max(kappa);
        }
        Ok(out)
    }

    pub fn sampler(&self) -> Result<IncrementSampler<S>> {
        IncrementSampler::new(self)
    }

    /// One increment over `dt`. Builds an [`IncrementSampler`] per call;
    /// reuse a sampler in loops.
    pub fn sample_increment<R: Rng + ?Sized>(&self, dt: S, rng: &mut R) -> Result<Increment<S>> {
        Ok(self.sampler()?.sample(dt, rng))
    }
}

/// One simulated increment `ΔL = drift + gaussian + Σ jumps`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Increment<S> {
    /// `(a − ∫_{0<|x|<1} x Π(dx))·dt`
    pub drift: S,
    /// `ϖ √dt Z`
    pub gaussian: S,
    pub jumps: Vec<S>,
    pub total: S,
}

#[derive(Debug, Clone)]
enum DensitySampler {
    Gaussian { mean: f64, std: f64, cutoff: f64 },
    DoubleExponential { up_share: f64, eta_up: f64, eta_down: f64, cutoff: f64 },
    TemperedStable { alpha: f64, eta: f64, cutoff: f64 },
}

impl DensitySampler {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            DensitySampler::Gaussian { mean, std, cutoff } => loop {
                let z: f64 = StandardNormal.sample(rng);
                let x = mean + std * z;
                if x.abs() >= cutoff && x != 0.0 {
                    return x;
                }
            },
            DensitySampler::DoubleExponential {
                up_share,
                eta_up,
                eta_down,
                cutoff,
            } => {
                let e: f64 = Exp1.sample(rng);
                if rng.random::<f64>() < up_share {
                    cutoff + e / eta_up
                } else {
                    -(cutoff + e / eta_down)
                }
            }
            DensitySampler::TemperedStable { alpha, eta, cutoff } => {
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                loop {
                    let u: f64 = 1.0 - rng.random::<f64>();
                    let (y, accept) = if alpha > 0.0 {
                        // Pareto proposal ∝ y^{-1-α} on [cutoff, ∞)
                        let y = cutoff * u.powf(-1.0 / alpha);
                        (y, (-eta * (y - cutoff)).exp())
                    } else {
                        // exponential proposal, accept with cutoff / y
                        let y = cutoff - u.ln() / eta;
                        (y, cutoff / y)
                    };
                    if rng.random::<f64>() < accept {
                        return sign * y;
                    }
                }
            }
        }
    }
}

/// Precomputed constants for exact compound-Poisson-plus-Gaussian sampling.
#[derive(Debug, Clone)]
pub struct IncrementSampler<S> {
    drift_rate: S,
    varpi: S,
    total_mass: f64,
    atom_mass: f64,
    /// (location, cumulative mass)
    atom_cdf: Vec<(S, f64)>,
    density: Option<DensitySampler>,
}

impl<S: Scalar> IncrementSampler<S> {
    pub fn new(triplet: &LevyTriplet<S>) -> Result<Self> {
        let m = &triplet.measure;
        m.check_structure_with(true)?;
        if !m.finite_activity() {
            return Err(Error::InfiniteActivity);
        }
        let small_mean = m.pi_moment_in(1, AbsRange::below(1.0))?;
        let mut cum = 0.0;
        let mut atom_cdf = Vec::new();
        for a in m.atoms.iter().filter(|a| a.mass > S::zero()) {
            cum += a.mass.as_f64();
            atom_cdf.push((a.location, cum));
        }
        let atom_mass = cum;
        let mut total_mass = atom_mass;
        let density = match &m.density {
            None => None,
            Some(d) => {
                let dm = JumpMeasure::from_density(*d).mass(AbsRange::ALL)?.as_f64();
                total_mass += dm;
                let cutoff = d.cutoff.as_f64();
                Some(match d.family {
                    DensityFamily::Gaussian { mean, std, .. } => DensitySampler::Gaussian {
                        mean: mean.as_f64(),
                        std: std.as_f64(),
                        cutoff,
                    },
                    DensityFamily::DoubleExponential {
                        p_up,
                        eta_up,
                        eta_down,
                        ..
                    } => {
                        let (p, eu, ed) = (p_up.as_f64(), eta_up.as_f64(), eta_down.as_f64());
                        let up = p * (-eu * cutoff).exp();
                        let down = (1.0 - p) * (-ed * cutoff).exp();
                        DensitySampler::DoubleExponential {
                            up_share: up / (up + down),
                            eta_up: eu,
                            eta_down: ed,
                            cutoff,
                        }
                    }
                    DensityFamily::TemperedStable { alpha, eta, .. } => DensitySampler::TemperedStable {
                        alpha: alpha.as_f64(),
                        eta: eta.as_f64(),
                        cutoff,
                    },
                })
            }
        };
        Ok(Self {
            drift_rate: triplet.a - small_mean,
            varpi: triplet.varpi,
            total_mass,
            atom_mass,
            atom_cdf,
            density,
        })
    }

    /// Jump intensity `λ_Π = Π(ℝ)`.
    pub fn intensity(&self) -> f64 {
        self.total_mass
    }

    pub fn sample<R: Rng + ?Sized>(&self, dt: S, rng: &mut R) -> Increment<S> {
        let mut jumps = Vec::new();
        let (drift, gaussian, total) = self.sample_into(dt, rng, &mut jumps);
        Increment {
            drift,
            gaussian,
            jumps,
            total,
        }
    }

    /// Allocation-free variant: jumps are appended to `jumps` (cleared first).
    /// Returns `(drift, gaussian, total)`.
    pub fn sample_into<R: Rng + ?Sized>(&self, dt: S, rng: &mut R, jumps: &mut Vec<S>) -> (S, S, S) {
        jumps.clear();
        let drift = self.drift_rate * dt;
        let gaussian = if self.varpi > S::zero() {
            let z: f64 = StandardNormal.sample(rng);
            self.varpi * dt.sqrt() * S::lit(z)
        } else {
            S::zero()
        };
        let mut total = drift + gaussian;
        if self.total_mass > 0.0 {
            let n = poisson(self.total_mass * dt.as_f64(), rng);
            for _ in 0..n {
                let j = self.draw_jump(rng);
                jumps.push(j);
                total += j;
            }
        }
        (drift, gaussian, total)
    }

    fn draw_jump<R: Rng + ?Sized>(&self, rng: &mut R) -> S {
        let u = rng.random::<f64>() * self.total_mass;
        match &self.density {
            Some(d) if u >= self.atom_mass => S::lit(d.sample(rng)),
            _ => {
                let k = self.atom_cdf.partition_point(|&(_, c)| c <= u).min(self.atom_cdf.len() - 1);
                self.atom_cdf[k].0
            }
        }
    }
}

/// Poisson variate; inversion for small means.
fn poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    if mean < 30.0 {
        let mut p = (-mean).exp();
        let mut cdf = p;
        let u: f64 = rng.random();
        let mut k = 0u64;
        while u > cdf && p > 0.0 {
            k += 1;
            p *= mean / k as f64;
            cdf += p;
        }
        k
    } else {
        rand_distr::Poisson::new(mean).expect("positive mean").sample(rng) as u64
    }
}

/// Validates the measure, with the triplet fields as context.
pub fn validate_triplet<S: Scalar>(triplet: &LevyTriplet<S>, eps: f64, lam: f64) -> Result<MeasureReport> {
    validate_measure(&triplet.measure, eps, lam)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn validate_examples() {
        let r = validate_measure(&JumpMeasure::<f64>::zero(), 0.5, 1.0).unwrap();
        assert_eq!((r.small_jump_integral, r.exp_moment), (0.0, 0.0));
        assert!(r.is_valid());

        let r = validate_measure(&JumpMeasure::<f64>::from_atoms([(1.0, 1.0)]), 0.5, 1.0).unwrap();
        assert!(close(r.exp_moment, std::f64::consts::E, 1e-15));
        assert!(r.is_valid());

        let err = validate_measure(&JumpMeasure::<f64>::from_atoms([(0.0, 1.0)]), 0.5, 1.0).unwrap_err();
        assert!(matches!(err, Error::InvalidMeasure { ref field, .. } if field == "atoms[0].location"));
        let err = validate_measure(&JumpMeasure::<f64>::from_atoms([(1.0, -2.0)]), 0.5, 1.0).unwrap_err();
        assert!(matches!(err, Error::InvalidMeasure { ref field, .. } if field == "atoms[0].mass"));
    }

    #[test]
    fn exp_moment_divergence_is_detected() {
        let d = Density::new(DensityFamily::DoubleExponential {
            rate: 1.0,
            p_up: 0.5,
            eta_up: 2.0,
            eta_down: 2.0,
        });
        let m = JumpMeasure::from_density(d);
        assert!(validate_measure(&m, 0.5, 1.0).unwrap().is_valid());
        assert!(!validate_measure(&m, 0.5, 3.0).unwrap().exp_moment_finite);
        // closed form: ∫_{|x|≥ε} e^{λ|x|} Π = rate η e^{-(η-λ)ε}/(η-λ)
        let r = validate_measure(&m, 0.5, 1.0).unwrap();
        assert!(close(r.exp_moment, 2.0 * (-0.5f64).exp(), 1e-9), "{}", r.exp_moment);
    }

    #[test]
    fn pi_moment_examples() {
        let m = JumpMeasure::<f64>::from_atoms([(2.0, 3.0)]);
        assert_eq!(m.pi_moment(2).unwrap(), 12.0);
        let m = JumpMeasure::<f64>::from_atoms([(-1.0, 1.0), (1.0, 1.0)]);
        assert_eq!(m.pi_moment(3).unwrap(), 0.0);
        assert_eq!(m.pi_moment(2).unwrap(), 2.0);
        assert!(m.pi_moment(0).is_err());
    }

    #[test]
    fn density_moments_match_closed_forms() {
        // Merton: ∫x²Π = λ(μ² + s²); ∫x Π = λμ
        let m = JumpMeasure::from_density(Density::new(DensityFamily::Gaussian {
            rate: 2.0,
            mean: 0.3,
            std: 0.4,
        }));
        assert!(close(m.pi_moment(1).unwrap(), 0.6, 1e-12));
        assert!(close(m.pi_moment(2).unwrap(), 2.0 * (0.09 + 0.16), 1e-12));
        assert!(close(m.mass(AbsRange::ALL).unwrap(), 2.0, 1e-12));
        // Kou: ∫x²Π = λ(2p/η₊² + 2(1-p)/η₋²)
        let m = JumpMeasure::from_density(Density::new(DensityFamily::DoubleExponential {
            rate: 1.5,
            p_up: 0.3,
            eta_up: 4.0,
            eta_down: 2.0,
        }));
        let want = 1.5 * (2.0 * 0.3 / 16.0 + 2.0 * 0.7 / 4.0);
        assert!(close(m.pi_moment(2).unwrap(), want, 1e-11));
        // tempered stable with α = 1/2: ∫ x² Π = 2c Γ(3/2) η^{-3/2}
        let m = JumpMeasure::from_density(Density::new(DensityFamily::TemperedStable {
            c: 1.0,
            alpha: 0.5,
            eta: 2.0,
        }));
        let want = 2.0 * (std::f64::consts::PI.sqrt() / 2.0) * 2f64.powf(-1.5);
        assert!(close(m.pi_moment(2).unwrap(), want, 1e-9), "{}", m.pi_moment(2).unwrap());
        assert_eq!(m.kind(), MeasureKind::InfiniteActivityDensity);
    }

    #[test]
    fn mean_l1_examples() {
        let t = LevyTriplet::<f64>::brownian(1.0, 1.0);
        assert_eq!(t.mean_l1().unwrap(), 1.0);
        let t = LevyTriplet::new(0.0, 0.0, JumpMeasure::from_atoms([(1.5, 2.0)])).unwrap();
        assert_eq!(t.mean_l1().unwrap(), 3.0);
        let t = LevyTriplet::new(0.0, 0.0, JumpMeasure::from_atoms([(0.5, 1.0)])).unwrap();
        assert_eq!(t.mean_l1().unwrap(), 0.0);
    }

    #[test]
    fn char_exponent_examples() {
        let t = LevyTriplet::new(0.3, 0.7, JumpMeasure::from_atoms([(0.4, 1.0), (-2.0, 0.5)])).unwrap();
        assert_eq!(t.char_exponent(0.0).unwrap(), Complex::new(0.0, 0.0));
        let b = LevyTriplet::<f64>::brownian(0.0, 1.0);
        assert_eq!(b.char_exponent(2.0).unwrap(), Complex::new(-2.0, 0.0));
        let j = LevyTriplet::new(0.0, 0.0, JumpMeasure::from_atoms([(2.0, 1.0)])).unwrap();
        let psi = j.char_exponent(std::f64::consts::FRAC_PI_2).unwrap();
        assert!(close(psi.re, -2.0, 1e-15) && close(psi.im, 0.0, 1e-15), "{psi}");
    }

    #[test]
    fn char_exponent_of_density_matches_closed_form() {
        // Merton, all jumps compensated below 1 handled by quadrature split at |x|=1
        let (lam, mu, s): (f64, f64, f64) = (1.2, -0.2, 0.5);
        let t = LevyTriplet::new(
            0.1,
            0.3,
            JumpMeasure::from_density(Density::new(DensityFamily::Gaussian {
                rate: lam,
                mean: mu,
                std: s,
            })),
        )
        .unwrap();
        let theta = 1.3;
        let psi = t.char_exponent(theta).unwrap();
        let cf_jump = Complex::new(-0.5 * s * s * theta * theta, mu * theta).exp();
        let small_mean = t.measure.pi_moment_in(1, AbsRange::below(1.0)).unwrap();
        let want = Complex::new(-0.5 * 0.09 * theta * theta, 0.1 * theta - theta * small_mean) + lam * (cf_jump - 1.0);
        assert!((psi - want).norm() < 1e-10, "{psi} vs {want}");
    }

    #[test]
    fn sample_increment_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = LevyTriplet::<f64>::brownian(1.0, 0.0);
        let inc = t.sample_increment(0.5, &mut rng).unwrap();
        assert_eq!(inc.total, 0.5);
        assert!(inc.jumps.is_empty());

        let t = LevyTriplet::new(0.0, 0.0, JumpMeasure::from_atoms([(1.0, 0.0)])).unwrap();
        let inc = t.sample_increment(1.0, &mut rng).unwrap();
        assert_eq!(inc.total, 0.0);
    }

    #[test]
    fn infinite_activity_is_rejected_until_truncated() {
        let d = Density::new(DensityFamily::TemperedStable {
            c: 1.0,
            alpha: 0.5,
            eta: 3.0,
        });
        let t = LevyTriplet::new(0.0, 0.2, JumpMeasure::from_density(d)).unwrap();
        assert_eq!(t.sampler().unwrap_err(), Error::InfiniteActivity);
        let kappa = 0.05;
        let c = t.with_small_jump_correction(kappa).unwrap();
        let absorbed = JumpMeasure::from_density(d).integrate("", AbsRange::below(kappa), |x| x * x).unwrap();
        assert!(close(c.varpi * c.varpi, 0.04 + absorbed, 1e-14));
        let s = c.sampler().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let inc = s.sample(1.0, &mut rng);
            assert!(inc.jumps.iter().all(|j| j.abs() >= kappa));
        }
    }

    #[test]
    fn increment_parts_reconcile() {
        let t = LevyTriplet::new(0.4, 0.8, JumpMeasure::from_atoms([(0.3, 2.0), (-1.4, 0.7)])).unwrap();
        let s = t.sampler().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..1000 {
            let inc = s.sample(0.7, &mut rng);
            let sum: f64 = inc.drift + inc.gaussian + inc.jumps.iter().sum::<f64>();
            assert!((sum - inc.total).abs() <= 1e-14);
        }
    }

    #[test]
    fn works_in_single_precision() {
        let t = LevyTriplet::<f32>::new(0.0, 1.0, JumpMeasure::from_atoms([(1.5, 2.0)])).unwrap();
        assert_eq!(t.mean_l1().unwrap(), 3.0f32);
        let psi = t.char_exponent(0.0).unwrap();
        assert_eq!(psi, Complex::new(0.0f32, 0.0));
    }
}
