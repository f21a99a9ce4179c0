//! Proportional fairness: `maximize sum_r n_r log x_r` over the capacity polytope.
//!
//! Solved on the dual. For link prices `p >= 0` the primal maximiser is
//! `x_r(p) = n_r / sum_l A_lr p_l`, and the dual objective
//! `D(p) = sum_l C_l p_l - sum_r n_r log(sum_l A_lr p_l)` is minimised by
//! projected gradient with Barzilai-Borwein steps and Armijo backtracking.
//! Routes with `n_r = 0` never enter the problem and are pinned to zero.

use crate::capacity::{AllocationVector, CapacityRegion};
use crate::error::{Error, Result};
use crate::policy::AllocationPolicy;

pub const DEFAULT_TOL: f64 = 1e-9;
pub const MAX_ITERATIONS: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct PfSolution {
    pub allocation: AllocationVector,
    pub link_prices: Vec<f64>,
    pub kkt_residual: f64,
    pub iterations: usize,
}

/// `sum_{r: n_r > 0} n_r log x_r`, with the `0 log 0 = 0` convention.
pub fn pf_objective(n: &[f64], x: &[f64]) -> Result<f64> {
    if n.len() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: n.len(),
            got: x.len(),
        });
    }
    let mut total = 0.0;
    for (r, (&nr, &xr)) in n.iter().zip(x).enumerate() {
        if nr > 0.0 {
            if !(xr > 0.0) {
                return Err(Error::LogOfZero(r));
            }
            total += nr * xr.ln();
        }
    }
    Ok(total)
}

struct Dual<'a> {
    region: &'a CapacityRegion,
    n: &'a [f64],
    support: Vec<usize>,
}

impl Dual<'_> {
    /// Aggregate price `sum_l A_lr p_l` per supported route.
    fn route_prices(&self, p: &[f64]) -> Vec<f64> {
        self.support
            .iter()
            .map(|&r| {
                (0..self.region.num_links())
                    .map(|l| self.region.coefficient(l, r) * p[l])
                    .sum()
            })
            .collect()
    }

    fn value(&self, p: &[f64]) -> f64 {
        let q = self.route_prices(p);
        if q.iter().any(|v| !(*v > 0.0)) {
            return f64::INFINITY;
        }
        let linear: f64 = p.iter().zip(self.region.capacities()).map(|(a, c)| a * c).sum();
        let log_term: f64 = self
            .support
            .iter()
            .zip(&q)
            .map(|(&r, qr)| self.n[r] * qr.ln())
            .sum();
        linear - log_term
    }

    fn primal(&self, p: &[f64]) -> Vec<f64> {
        let q = self.route_prices(p);
        let mut x = vec![0.0; self.n.len()];
        for (&r, qr) in self.support.iter().zip(&q) {
            x[r] = self.n[r] / qr;
        }
        x
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let loads = self.region.link_loads(x).expect("dimension checked");
        self.region
            .capacities()
            .iter()
            .zip(&loads)
            .map(|(c, load)| c - load)
            .collect()
    }

    /// Feasible allocation (primal scaled into the region) and its KKT residual.
    fn certify(&self, p: &[f64]) -> (Vec<f64>, f64) {
        let mut x = self.primal(p);
        let scale = self
            .region
            .max_utilisation(&x)
            .expect("dimension checked")
            .max(1.0);
        if scale > 1.0 {
            for v in &mut x {
                *v /= scale;
            }
        }
        // After scaling, n_r / x_r = scale * q_r for every supported route.
        let stationarity = 1.0 - 1.0 / scale;
        let loads = self.region.link_loads(&x).expect("dimension checked");
        let slackness = p
            .iter()
            .zip(&loads)
            .zip(self.region.capacities())
            .map(|((pl, load), c)| pl * (c - load).max(0.0) / (c * pl.max(1.0)))
            .fold(0.0, f64::max);
        if !x.iter().all(|v| v.is_finite()) {
            return (x, f64::INFINITY);
        }
        (x, stationarity.max(slackness))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Proportionally fair allocation for demand vector `n`.
pub fn solve_pf(region: &CapacityRegion, n: &[f64], tol: f64) -> Result<PfSolution> {
    if n.len() != region.num_routes() {
        return Err(Error::DimensionMismatch {
            expected: region.num_routes(),
            got: n.len(),
        });
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tol must be positive, got {tol}")));
    }
    if let Some(r) = n.iter().position(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidParameter(format!("n[{r}] = {} is not a nonnegative number", n[r])));
    }
    region.ensure_valid()?;
    let support: Vec<usize> = (0..n.len()).filter(|&r| n[r] > 0.0).collect();
    if support.is_empty() {
        return Err(Error::ZeroState);
    }
    let total: f64 = n.iter().sum();
    let dual = Dual {
        region,
        n,
        support,
    };

    let mut p: Vec<f64> = region.capacities().iter().map(|c| total / c).collect();
    let mut value = dual.value(&p);
    let mut grad = dual.gradient(&dual.primal(&p));
    let grad_scale = grad.iter().fold(0.0_f64, |m, g| m.max(g.abs()));
    let p_scale = p.iter().fold(0.0_f64, |m, v| m.max(*v));
    let mut step = if grad_scale > 0.0 {
        1e-2 * p_scale / grad_scale
    } else {
        1.0
    };
    let mut residual = f64::INFINITY;

    for iteration in 0..MAX_ITERATIONS {
        let (feasible, res) = dual.certify(&p);
        residual = res;
        if residual <= tol {
            return Ok(PfSolution {
                allocation: AllocationVector(feasible),
                link_prices: p,
                kkt_residual: residual,
                iterations: iteration,
            });
        }

        let mut trial_step = step;
        let mut accepted = None;
        for _ in 0..80 {
            let candidate: Vec<f64> = p
                .iter()
                .zip(&grad)
                .map(|(pl, gl)| (pl - trial_step * gl).max(0.0))
                .collect();
            let cand_value = dual.value(&candidate);
            let direction: Vec<f64> = candidate.iter().zip(&p).map(|(a, b)| a - b).collect();
            let decrease = dot(&grad, &direction);
            let slack = 1e-14 * (1.0 + value.abs());
            if cand_value.is_finite() && cand_value <= value + 1e-4 * decrease + slack {
                accepted = Some((candidate, cand_value, direction));
                break;
            }
            trial_step *= 0.5;
        }
        let Some((candidate, cand_value, s)) = accepted else {
            break;
        };

        let new_x = dual.primal(&candidate);
        let new_grad = dual.gradient(&new_x);
        let y: Vec<f64> = new_grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        let ss = dot(&s, &s);
        if ss == 0.0 {
            break;
        }
        step = if sy > 0.0 { ss / sy } else { trial_step * 2.0 };
        p = candidate;
        value = cand_value;
        grad = new_grad;
    }
    Err(Error::NoConvergence {
        iterations: MAX_ITERATIONS,
        residual,
    })
}

/// `max_{x in region} sum_r n_r log(x_r / rho_r)`.
///
/// Negated, this is the large-deviations exponent of the stationary law of an
/// insensitive, maximum-stable policy along direction `n`.
pub fn rate_function(region: &CapacityRegion, n: &[f64], rho: &[f64], tol: f64) -> Result<f64> {
    if rho.len() != region.num_routes() {
        return Err(Error::DimensionMismatch {
            expected: region.num_routes(),
            got: rho.len(),
        });
    }
    // The maximum is finite on the closed region, so boundary intensities
    // (for example rho equal to the PF allocation itself) are accepted.
    if !region.contains(rho, 0.0)? {
        return Err(Error::RhoNotInterior);
    }
    if n.iter().zip(rho).any(|(nr, pr)| *nr > 0.0 && !(*pr > 0.0)) {
        return Err(Error::RhoNotInterior);
    }
    let solution = solve_pf(region, n, tol)?;
    let objective = pf_objective(n, solution.allocation.rates())?;
    let offset: f64 = n
        .iter()
        .zip(rho)
        .filter(|(nr, _)| **nr > 0.0)
        .map(|(nr, pr)| nr * pr.ln())
        .sum();
    Ok(objective - offset)
}

/// The proportionally fair policy as an allocation map on integer states.
#[derive(Debug, Clone)]
pub struct PfPolicy {
    region: CapacityRegion,
    tol: f64,
}

impl PfPolicy {
    pub fn new(region: CapacityRegion, tol: f64) -> Result<Self> {
        region.ensure_valid()?;
        Ok(Self { region, tol })
    }
}

impl AllocationPolicy for PfPolicy {
    fn num_routes(&self) -> usize {
        self.region.num_routes()
    }

    fn allocate(&self, n: &[u32]) -> Result<Vec<f64>> {
        let demand: Vec<f64> = n.iter().map(|&v| v as f64).collect();
        Ok(solve_pf(&self.region, &demand, self.tol)?.allocation.0)
    }
}
