//! Product-form stationary law `pi(n) = Phi(n) prod_r rho_r^n_r / B(rho)`.
//!
//! Sums run over simplex shells `|n| = m` for `m <= max_shell`. The omitted
//! tail is bounded from the last five shell ratios: if every ratio is at most
//! `q < 1`, the tail mass is at most `S_M q / (1 - q)`.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::policy::AllocationPolicy;
use crate::potential::{state_total, LogPotential};
use crate::simulator::TrafficSpec;

pub const DEFAULT_TAIL_TOL: f64 = 1e-10;
/// Shell ratios inspected by the tail estimate.
pub const TAIL_WINDOW: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizingConstant {
    /// `log` of the truncated sum over shells `0..=max_shell`.
    pub log_b: f64,
    /// Upper estimate of the probability mass beyond `max_shell`.
    pub tail_bound: f64,
    pub max_shell: usize,
    /// Largest ratio `S_{m+1} / S_m` over the tail window.
    pub shell_ratio: f64,
    /// `log S_m` for every shell.
    pub log_shell_sums: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationaryTable {
    /// States in storage order of the potential, each with `log Phi` and `pi`.
    pub entries: Vec<(Vec<u32>, f64, f64)>,
    pub log_b: f64,
    pub tail_bound: f64,
    pub max_shell: usize,
}

impl StationaryTable {
    pub fn probability(&self, n: &[u32]) -> Option<f64> {
        self.entries
            .iter()
            .find(|(state, _, _)| state.as_slice() == n)
            .map(|(_, _, p)| *p)
    }

    pub fn total_mass(&self) -> f64 {
        self.entries.iter().map(|(_, _, p)| p).sum()
    }

    /// Probabilities keyed by state, for distance computations.
    pub fn to_distribution(&self) -> BTreeMap<Vec<u32>, f64> {
        self.entries
            .iter()
            .map(|(state, _, p)| (state.clone(), *p))
            .collect()
    }
}

fn log_weight(log_phi: f64, n: &[u32], log_rho: &[f64]) -> f64 {
    n.iter()
        .zip(log_rho)
        .filter(|(v, _)| **v > 0)
        .fold(log_phi, |acc, (&v, lr)| acc + v as f64 * lr)
}

fn log_rho(phi: &LogPotential, rho: &[f64]) -> Result<Vec<f64>> {
    if rho.len() != phi.num_routes() {
        return Err(Error::DimensionMismatch {
            expected: phi.num_routes(),
            got: rho.len(),
        });
    }
    if let Some(r) = rho.iter().position(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidParameter(format!("rho[{r}] = {}", rho[r])));
    }
    Ok(rho.iter().map(|v| v.ln()).collect())
}

fn check_shell(phi: &LogPotential, max_shell: usize) -> Result<()> {
    if max_shell as u64 > phi.max_full_shell() {
        return Err(Error::OutsideDomainBox {
            state: vec![max_shell as u32; phi.num_routes()],
            cap: phi.cap().to_vec(),
        });
    }
    if max_shell < TAIL_WINDOW + 1 {
        return Err(Error::InvalidParameter(format!(
            "max_shell must be at least {}",
            TAIL_WINDOW + 1
        )));
    }
    Ok(())
}

/// Streaming log-sum-exp accumulator; deterministic for a fixed visit order.
#[derive(Debug, Clone, Copy)]
struct LogAccumulator {
    max: f64,
    scaled: f64,
}

impl LogAccumulator {
    fn new() -> Self {
        Self {
            max: f64::NEG_INFINITY,
            scaled: 0.0,
        }
    }

    fn push(&mut self, t: f64) {
        if t == f64::NEG_INFINITY {
            return;
        }
        if t > self.max {
            self.scaled = self.scaled * (self.max - t).exp() + 1.0;
            self.max = t;
        } else {
            self.scaled += (t - self.max).exp();
        }
    }

    fn value(&self) -> f64 {
        if self.max == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.max + self.scaled.ln()
        }
    }
}

pub(crate) fn log_add(a: f64, b: f64) -> f64 {
    let mut acc = LogAccumulator::new();
    acc.push(a);
    acc.push(b);
    acc.value()
}

/// `log S_m = log sum_{|n| = m} Phi(n) rho^n` for `m = 0..=max_shell`.
pub fn shell_log_sums(phi: &LogPotential, rho: &[f64], max_shell: usize) -> Result<Vec<f64>> {
    let log_rho = log_rho(phi, rho)?;
    if max_shell as u64 > phi.max_full_shell() {
        return Err(Error::OutsideDomainBox {
            state: vec![max_shell as u32; phi.num_routes()],
            cap: phi.cap().to_vec(),
        });
    }
    let mut shells = vec![LogAccumulator::new(); max_shell + 1];
    phi.for_each_state(|n, log_phi| {
        let m = state_total(n) as usize;
        if m <= max_shell {
            shells[m].push(log_weight(log_phi, n, &log_rho));
        }
    });
    Ok(shells.iter().map(LogAccumulator::value).collect())
}

/// `log B(rho)` over shells `0..=max_shell` with a geometric tail estimate.
pub fn log_normalizing_constant(
    phi: &LogPotential,
    rho: &[f64],
    max_shell: usize,
    tail_tol: f64,
) -> Result<NormalizingConstant> {
    check_shell(phi, max_shell)?;
    let sums = shell_log_sums(phi, rho, max_shell)?;

    let mut ratio: f64 = 0.0;
    let mut worst_shell = max_shell;
    for m in max_shell - TAIL_WINDOW..max_shell {
        let r = if sums[m] == f64::NEG_INFINITY {
            0.0
        } else {
            (sums[m + 1] - sums[m]).exp()
        };
        if !(r <= ratio) {
            ratio = r;
            worst_shell = m + 1;
        }
    }
    if !(ratio < 1.0) {
        return Err(Error::DivergenceSuspected {
            shell: worst_shell,
            ratio,
        });
    }
    if let Some(region) = phi.region() {
        if !region.in_interior(rho)? {
            return Err(Error::RhoNotInterior);
        }
    }

    let mut total = LogAccumulator::new();
    for s in &sums {
        total.push(*s);
    }
    let log_b = total.value();
    let log_tail = if ratio == 0.0 {
        f64::NEG_INFINITY
    } else {
        sums[max_shell] + ratio.ln() - (-ratio).ln_1p()
    };
    let tail_bound = (log_tail - log_add(log_b, log_tail)).exp();
    if tail_bound > tail_tol {
        return Err(Error::TruncationInsufficient {
            max_shell,
            tail_bound,
            tail_tol,
        });
    }
    Ok(NormalizingConstant {
        log_b,
        tail_bound,
        max_shell,
        shell_ratio: ratio,
        log_shell_sums: sums,
    })
}

/// `log pi(n)` given a normalising constant.
pub fn log_pi(phi: &LogPotential, rho: &[f64], log_b: f64, n: &[u32]) -> Result<f64> {
    let log_rho = log_rho(phi, rho)?;
    Ok(log_weight(phi.log_phi(n)?, n, &log_rho) - log_b)
}

pub fn stationary_pi(
    phi: &LogPotential,
    rho: &[f64],
    max_shell: usize,
    tail_tol: f64,
) -> Result<StationaryTable> {
    let constant = log_normalizing_constant(phi, rho, max_shell, tail_tol)?;
    let log_rho = log_rho(phi, rho)?;
    let mut entries = Vec::new();
    phi.for_each_state(|n, log_phi| {
        if state_total(n) as usize <= max_shell {
            let p = (log_weight(log_phi, n, &log_rho) - constant.log_b).exp();
            entries.push((n.to_vec(), log_phi, p));
        }
    });
    entries.sort_by(|a, b| {
        state_total(&a.0)
            .cmp(&state_total(&b.0))
            .then_with(|| a.0.cmp(&b.0))
    });
    Ok(StationaryTable {
        entries,
        log_b: constant.log_b,
        tail_bound: constant.tail_bound,
        max_shell,
    })
}

/// Relative detailed-balance defect at `n` for the policy derived from `phi`.
pub fn detailed_balance_residual(phi: &LogPotential, traffic: &TrafficSpec, n: &[u32]) -> Result<f64> {
    detailed_balance_residual_with(phi, phi, traffic, n)
}

/// `max_r |pi(n) mu_r x_r(n) - pi(n - e_r) nu_r| / (pi(n - e_r) nu_r)` with
/// `pi` from `phi` and `x` from an arbitrary policy.
pub fn detailed_balance_residual_with(
    phi: &LogPotential,
    policy: &dyn AllocationPolicy,
    traffic: &TrafficSpec,
    n: &[u32],
) -> Result<f64> {
    if n.iter().all(|v| *v == 0) {
        return Err(Error::ZeroState);
    }
    let rho = traffic.rho();
    let log_rho = log_rho(phi, &rho)?;
    let allocation = policy.allocate(n)?;
    let here = log_weight(phi.log_phi(n)?, n, &log_rho);
    let mut worst: f64 = 0.0;
    let mut below = n.to_vec();
    for r in 0..n.len() {
        if n[r] == 0 {
            continue;
        }
        below[r] -= 1;
        let there = log_weight(phi.log_phi(&below)?, &below, &log_rho);
        below[r] += 1;
        let lhs = here + traffic.service_rate(r).ln() + allocation[r].ln();
        let rhs = there + traffic.arrival_rate(r).ln();
        worst = worst.max(((lhs - rhs).exp() - 1.0).abs());
    }
    Ok(worst)
}
