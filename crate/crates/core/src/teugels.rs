//! Orthonormal polynomials in `L²(ν)`, `ν(dx) = x²Π(dx) + ϖ²δ₀`, and the
//! Teugels martingales `H^{(i)}` they generate.
//!
//! `q_{i−1}(x) = Σ_{k=1}^{i} c_{i,k} x^{k−1}`, `p_i(x) = x q_{i−1}(x)` and
//! `p̃_i(x) = x (q_{i−1}(x) − q_{i−1}(0))`. Over a time step,
//!
//! ```text
//! ΔH^{(i)} = q_{i−1}(0)(ΔL − E[L₁]dt) + Σ_jumps p̃_i(ΔL_s) − dt ∫ p̃_i dΠ
//! ```

use crate::error::{Error, Result};
use crate::levy::LevyTriplet;
use crate::path::SimPath;
use crate::scalar::Scalar;

/// Default number of martingales.
pub const DEFAULT_N_MAX: usize = 5;

/// Cholesky pivots at or below this fraction of the leading moment end the basis.
pub const RANK_TOL: f64 = 1e-12;

/// Gram-matrix error above which the basis is rejected as ill-conditioned.
pub const GRAM_TOL: f64 = 1e-8;

/// `∫ x^k ν(dx)` for `k = 0..=2n`.
pub fn nu_moment_table<S: Scalar>(triplet: &LevyTriplet<S>, n: usize) -> Result<Vec<S>> {
    if n == 0 {
        return Err(Error::InvalidInput("moment table size must be at least 1".into()));
    }
    (0..=2 * n)
        .map(|k| {
            let jump = triplet.measure.pi_moment(k as u32 + 2)?;
            Ok(if k == 0 { jump + triplet.varpi * triplet.varpi } else { jump })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrthonormalBasis<S> {
    pub n_max: usize,
    /// Row `i − 1` holds `c_{i,1..=i}`; rows past the rank are zero.
    pub coeffs: Vec<Vec<S>>,
    pub nu_moments: Vec<S>,
    pub degenerate_rank: usize,
}

/// Gram–Schmidt of `1, x, x², …` in `L²(ν)` through a Cholesky factorization
/// of the Hankel matrix `H_{jk} = ∫x^{j+k}dν`.
pub fn build_basis<S: Scalar>(triplet: &LevyTriplet<S>, n_max: usize) -> Result<OrthonormalBasis<S>> {
    if n_max == 0 {
        return Err(Error::InvalidInput("n_max must be at least 1".into()));
    }
    let nu_moments = nu_moment_table(triplet, n_max)?;
    let m: Vec<f64> = nu_moments.iter().map(|v| v.as_f64()).collect();
    if m[0] <= 0.0 {
        return Err(Error::DegenerateLevy);
    }
    let n = n_max;
    let h = |j: usize, k: usize| m[j + k];

    let mut l = vec![vec![0.0f64; n]; n];
    let mut rank = n;
    let mut pivots = Vec::with_capacity(n);
    for j in 0..n {
        let d = h(j, j) - (0..j).map(|k| l[j][k] * l[j][k]).sum::<f64>();
        if d <= RANK_TOL * m[0].max(h(j, j)) {
            rank = j;
            break;
        }
        let ljj = d.sqrt();
        pivots.push(d);
        l[j][j] = ljj;
        for i in j + 1..n {
            let s = h(i, j) - (0..j).map(|k| l[i][k] * l[j][k]).sum::<f64>();
            l[i][j] = s / ljj;
        }
    }

    // rows of L⁻¹ are the coefficient vectors of q_0, …, q_{rank−1}
    let mut inv = vec![vec![0.0f64; n]; n];
    for i in 0..rank {
        inv[i][i] = 1.0 / l[i][i];
    }
    for k in 0..rank {
        for i in k + 1..rank {
            let s: f64 = (k..i).map(|r| l[i][r] * inv[r][k]).sum();
            inv[i][k] = -s / l[i][i];
        }
    }

    let mut worst = 0.0f64;
    for a in 0..rank {
        for b in 0..rank {
            let mut g = 0.0;
            for j in 0..=a {
                for k in 0..=b {
                    g += inv[a][j] * inv[b][k] * h(j, k);
                }
            }
            let target = if a == b { 1.0 } else { 0.0 };
            worst = worst.max((g - target).abs());
        }
        if worst > GRAM_TOL {
            let (mx, mn) = pivots[..=a]
                .iter()
                .fold((0.0f64, f64::INFINITY), |(mx, mn), &p| (mx.max(p), mn.min(p)));
            return Err(Error::IllConditioned {
                column: a,
                condition: mx / mn,
            });
        }
    }

    let coeffs = (0..n)
        .map(|i| (0..=i).map(|k| S::lit(if i < rank { inv[i][k] } else { 0.0 })).collect())
        .collect();
    Ok(OrthonormalBasis {
        n_max,
        coeffs,
        nu_moments,
        degenerate_rank: rank,
    })
}

impl<S: Scalar> OrthonormalBasis<S> {
    fn row(&self, i: usize) -> &[S] {
        &self.coeffs[i - 1]
    }

    /// `c_{i,k}`, `1 ≤ k ≤ i ≤ n_max`.
    pub fn coeff(&self, i: usize, k: usize) -> Result<S> {
        if i == 0 || i > self.n_max {
            return Err(Error::IndexOutOfRange { index: i, max: self.n_max });
        }
        if k == 0 || k > i {
            return Err(Error::IndexOutOfRange { index: k, max: i });
        }
        Ok(self.coeffs[i - 1][k - 1])
    }

    /// `q_i(x)`, `0 ≤ i < n_max`.
    pub fn eval_q(&self, i: usize, x: S) -> Result<S> {
        if i >= self.n_max {
            return Err(Error::IndexOutOfRange {
                index: i,
                max: self.n_max - 1,
            });
        }
        Ok(horner(self.row(i + 1), x))
    }

    /// `p_i(x) = x q_{i−1}(x)`, `1 ≤ i ≤ n_max`.
    pub fn eval_p(&self, i: usize, x: S) -> Result<S> {
        self.check_martingale_index(i)?;
        Ok(x * horner(self.row(i), x))
    }

    /// `p̃_i(x) = x (q_{i−1}(x) − q_{i−1}(0))`, `1 ≤ i ≤ n_max`.
    pub fn eval_p_tilde(&self, i: usize, x: S) -> Result<S> {
        self.check_martingale_index(i)?;
        let row = self.row(i);
        Ok(x * (horner(row, x) - row[0]))
    }

    fn check_martingale_index(&self, i: usize) -> Result<()> {
        if i == 0 || i > self.n_max {
            return Err(Error::IndexOutOfRange { index: i, max: self.n_max });
        }
        Ok(())
    }

    /// `∫ q_a q_b dν` from the stored moments.
    pub fn gram(&self, a: usize, b: usize) -> S {
        let (ra, rb) = (self.row(a + 1), self.row(b + 1));
        let mut g = S::zero();
        for (j, &ca) in ra.iter().enumerate() {
            for (k, &cb) in rb.iter().enumerate() {
                g += ca * cb * self.nu_moments[j + k];
            }
        }
        g
    }

    /// `max_{a,b < rank} |∫ q_a q_b dν − δ_ab|`.
    pub fn orthonormality_error(&self) -> S {
        let mut worst = S::zero();
        for a in 0..self.degenerate_rank {
            for b in 0..self.degenerate_rank {
                let target = if a == b { S::one() } else { S::zero() };
                worst = worst.max((self.gram(a, b) - target).abs());
            }
        }
        worst
    }
}

fn horner<S: Scalar>(coeffs: &[S], x: S) -> S {
    coeffs.iter().rev().fold(S::zero(), |acc, &c| acc * x + c)
}

/// Deterministic compensator rates for [`teugels_path_increments`].
#[derive(Debug, Clone, PartialEq)]
pub struct CompensatorTable<S> {
    /// `E[L₁]`
    pub mean_l1: S,
    /// `∫ p̃_i dΠ` for `i = 1..=n_max`.
    pub p_tilde_rates: Vec<S>,
}

pub fn compensator_table<S: Scalar>(basis: &OrthonormalBasis<S>, triplet: &LevyTriplet<S>) -> Result<CompensatorTable<S>> {
    let moments: Vec<S> = (2..=basis.n_max as u32)
        .map(|k| triplet.measure.pi_moment(k))
        .collect::<Result<_>>()?;
    let p_tilde_rates = (1..=basis.n_max)
        .map(|i| {
            // p̃_i(x) = Σ_{k=2}^{i} c_{i,k} x^k
            (2..=i).map(|k| basis.row(i)[k - 1] * moments[k - 2]).sum()
        })
        .collect();
    Ok(CompensatorTable {
        mean_l1: triplet.mean_l1()?,
        p_tilde_rates,
    })
}

/// `ΔH^{(i)}` per time step of a path; `dh[k][i − 1]` covers `[t_k, t_{k+1}]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TeugelsIncrements<S> {
    pub dh: Vec<Vec<S>>,
}

impl<S: Scalar> TeugelsIncrements<S> {
    /// `H^{(i)}` at the final time.
    pub fn terminal(&self, i: usize) -> S {
        self.dh.iter().map(|row| row[i - 1]).sum()
    }
}

pub fn teugels_path_increments<S: Scalar>(
    basis: &OrthonormalBasis<S>,
    path: &SimPath<S>,
    table: &CompensatorTable<S>,
) -> Result<TeugelsIncrements<S>> {
    if table.p_tilde_rates.len() != basis.n_max {
        return Err(Error::Mismatch(format!(
            "compensator table has {} rates but the basis has n_max = {}",
            table.p_tilde_rates.len(),
            basis.n_max
        )));
    }
    let mut dh = Vec::with_capacity(path.steps.len());
    for (k, step) in path.steps.iter().enumerate() {
        let dt = path.times[k + 1] - path.times[k];
        let row = (1..=basis.n_max)
            .map(|i| {
                let c = basis.row(i);
                let mut v = c[0] * (step.total - table.mean_l1 * dt) - dt * table.p_tilde_rates[i - 1];
                for &j in &step.jumps {
                    v += j * (horner(c, j) - c[0]);
                }
                v
            })
            .collect();
        dh.push(row);
    }
    Ok(TeugelsIncrements { dh })
}
