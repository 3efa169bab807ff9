//! Distributionally robust evaluation over a chi-squared budget.
//!
//! An adversary reweights per-example losses to maximize `sum_i w_i l_i`
//! over the probability simplex, subject to the quadratic budget
//! `0.5 * ||w - 1/N||^2 <= rho / N`. The KKT conditions give
//! `w_i = max(0, 1/N + (l_i - mu) / lambda)` with `lambda` the multiplier of
//! the quadratic constraint and `mu` enforcing the unit sum — for a fixed
//! `lambda` this is the exact Euclidean projection of `1/N + l/lambda` onto
//! the simplex (water-filling over the sorted vector), and the outer
//! `lambda` is found by bisection on the budget residual.

use crate::error::{Error, Result};
use crate::parallel::map_indexed;
use serde::Serialize;

/// Budget residual tolerance for an exactly-tight constraint.
const RESIDUAL_TOL: f64 = 1e-10;

/// Default budget grid for [`dro_curve`].
pub const DEFAULT_RHO_GRID: [f64; 8] = [0.01, 0.02, 0.04, 0.08, 0.16, 0.32, 0.64, 1.0];

/// Loss-maximizing weights for one budget.
#[derive(Debug, Clone, Serialize)]
pub struct DroSolution {
    /// Weights on the probability simplex.
    pub weights: Vec<f64>,
    /// `sum_i weights[i] * losses[i]`.
    pub objective: f64,
    pub rho: f64,
    /// Whether the chi-squared constraint is tight at the solution.
    pub active_budget: bool,
}

/// `0.5 * ||w - 1/N||^2`.
fn chi2_radius(weights: &[f64]) -> f64 {
    let u = 1.0 / weights.len() as f64;
    0.5 * weights.iter().map(|w| (w - u) * (w - u)).sum::<f64>()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Exact Euclidean projection of `v` onto the probability simplex:
/// `w_i = max(0, v_i - tau)` with `tau` from water-filling over the sorted
/// entries.
fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).expect("finite values"));
    // the support is the largest k with u_k > (sum of top k+1 entries - 1)/(k+1)
    let mut prefix = 0.0;
    let mut tau = 0.0;
    for (k, &u) in sorted.iter().enumerate() {
        prefix += u;
        let candidate = (prefix - 1.0) / (k + 1) as f64;
        if u - candidate > 0.0 {
            tau = candidate;
        }
    }
    v.iter().map(|x| (x - tau).max(0.0)).collect()
}

/// Uniform distribution over the indices attaining the maximum loss.
/// This is the `lambda -> 0` limit of the KKT family: the best reachable
/// point when the budget stops binding.
fn argmax_face(losses: &[f64]) -> Vec<f64> {
    let max = losses.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let ties: Vec<usize> = (0..losses.len()).filter(|&i| losses[i] == max).collect();
    let mut w = vec![0.0; losses.len()];
    let share = 1.0 / ties.len() as f64;
    for i in ties {
        w[i] = share;
    }
    w
}

fn weights_for_lambda(losses: &[f64], lambda: f64) -> Vec<f64> {
    let n = losses.len() as f64;
    let v: Vec<f64> = losses.iter().map(|l| 1.0 / n + l / lambda).collect();
    project_simplex(&v)
}

/// Maximizes `sum_i w_i losses[i]` over the simplex intersected with the
/// chi-squared ball of budget `rho`. Ties in the losses receive equal
/// weights.
pub fn solve_dro_weights(losses: &[f64], rho: f64) -> Result<DroSolution> {
    if losses.is_empty() {
        return Err(Error::Domain("need at least one loss".into()));
    }
    if !losses.iter().all(|l| l.is_finite()) {
        return Err(Error::Domain("losses must be finite".into()));
    }
    if rho < 0.0 || rho.is_nan() {
        return Err(Error::Domain(format!("rho must be nonnegative, got {rho}")));
    }
    let n = losses.len();
    let budget = rho / n as f64;
    let uniform = vec![1.0 / n as f64; n];

    if n == 1 {
        return Ok(DroSolution {
            weights: vec![1.0],
            objective: losses[0],
            rho,
            active_budget: rho == 0.0,
        });
    }
    if rho == 0.0 {
        let objective = dot(&uniform, losses);
        return Ok(DroSolution {
            weights: uniform,
            objective,
            rho,
            active_budget: true,
        });
    }

    // lambda -> 0 limit: if the face over the maximal losses fits the budget,
    // the constraint is slack and that face is optimal.
    let face = argmax_face(losses);
    if chi2_radius(&face) <= budget + RESIDUAL_TOL {
        let objective = dot(&face, losses);
        let active = (chi2_radius(&face) - budget).abs() <= RESIDUAL_TOL;
        return Ok(DroSolution {
            weights: face,
            objective,
            rho,
            active_budget: active,
        });
    }

    // residual(lambda) = chi2(w(lambda)) - budget is decreasing in lambda:
    // residual > 0 at lambda -> 0 (checked above), < 0 as lambda -> inf.
    let residual = |lambda: f64| chi2_radius(&weights_for_lambda(losses, lambda)) - budget;
    let mut hi = 1.0;
    let mut doubling = 0;
    while residual(hi) > 0.0 {
        hi *= 2.0;
        doubling += 1;
        if doubling > 200 {
            return Err(Error::Domain(
                "bisection bracket for the budget multiplier did not close".into(),
            ));
        }
    }
    let mut lo = hi / 2.0;
    let mut halving = 0;
    while residual(lo) <= 0.0 {
        lo /= 2.0;
        halving += 1;
        if halving > 400 {
            // numerically indistinguishable from the saturated face
            break;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if residual(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo) <= f64::EPSILON * hi {
            break;
        }
    }
    // take the feasible side of the bracket
    let weights = weights_for_lambda(losses, hi);
    let objective = dot(&weights, losses);
    let active = (chi2_radius(&weights) - budget).abs() <= RESIDUAL_TOL.max(budget * 1e-9);
    Ok(DroSolution {
        weights,
        objective,
        rho,
        active_budget: active,
    })
}

/// One row of the budget sweep.
#[derive(Debug, Clone, Serialize)]
pub struct DroCurveRow {
    pub rho: f64,
    pub weighted_loss: f64,
    /// `sum_i w_i * indicator_i` under the loss-maximizing weights.
    pub weighted_accuracy: f64,
}

/// Sweeps ascending budgets, reusing the loss-maximizing weights to evaluate
/// the weighted accuracy at each budget.
pub fn dro_curve(losses: &[f64], indicators: &[bool], rhos: &[f64]) -> Result<Vec<DroCurveRow>> {
    if losses.len() != indicators.len() {
        return Err(Error::Domain(format!(
            "{} losses but {} indicators",
            losses.len(),
            indicators.len()
        )));
    }
    if rhos.windows(2).any(|p| p[0] > p[1]) {
        return Err(Error::Domain("rho grid must be sorted ascending".into()));
    }
    let rows = map_indexed(rhos.len(), |i| {
        solve_dro_weights(losses, rhos[i]).map(|sol| {
            let weighted_accuracy: f64 = sol
                .weights
                .iter()
                .zip(indicators.iter())
                .map(|(w, &c)| if c { *w } else { 0.0 })
                .sum();
            DroCurveRow {
                rho: rhos[i],
                weighted_loss: sol.objective,
                weighted_accuracy: weighted_accuracy.min(1.0),
            }
        })
    });
    rows.into_iter().collect()
}

/// Writes a curve as `rho,weighted_loss,weighted_accuracy` CSV.
pub fn write_curve_csv<W: std::io::Write>(
    rows: &[DroCurveRow],
    out: &mut W,
) -> std::io::Result<()> {
    writeln!(out, "rho,weighted_loss,weighted_accuracy")?;
    for r in rows {
        writeln!(out, "{},{},{}", r.rho, r.weighted_loss, r.weighted_accuracy)?;
    }
    Ok(())
}
