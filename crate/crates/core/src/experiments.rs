//! Numerical checks of the heavy-traffic behaviour of insensitive policies:
//! insensitivity of the stationary law, convergence of `x(cn)` to the
//! proportionally fair allocation, the large-deviations rate identity, and
//! the oscillating counterexample built from power-of-two buckets.

use crate::capacity::{AllocationVector, CapacityRegion};
use crate::error::{Error, Result};
use crate::pf::{rate_function, solve_pf};
use crate::policy::AllocationPolicy;
use crate::potential::{CounterexampleParams, LogPotential};
use crate::simulator::{
    pooled_distribution, simulate_replicas, tv_distance, SimParams, TrafficSpec,
};
use crate::stationary::{
    log_add, log_normalizing_constant, log_pi, shell_log_sums, stationary_pi,
};

/// Relative tolerance when comparing traffic intensities of variants.
const RHO_MATCH_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseTv {
    pub a: usize,
    pub b: usize,
    /// TV between replica `i` of `a` and replica `i` of `b`.
    pub replica_tv: Vec<f64>,
    /// TV between the replica-averaged laws.
    pub pooled_tv: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InsensitivityReport {
    pub rho: Vec<f64>,
    /// `[variant][replica]` post-warmup event counts.
    pub post_warmup_events: Vec<Vec<u64>>,
    /// `[variant][replica]` TV distance to the product-form law.
    pub oracle_tv: Vec<Vec<f64>>,
    pub pairwise: Vec<PairwiseTv>,
}

impl InsensitivityReport {
    pub fn max_oracle_tv(&self) -> f64 {
        self.oracle_tv.iter().flatten().fold(0.0, |m, v| m.max(*v))
    }

    pub fn max_pairwise_tv(&self) -> f64 {
        self.pairwise
            .iter()
            .flat_map(|p| p.replica_tv.iter())
            .fold(0.0, |m, v| m.max(*v))
    }

    pub fn min_post_warmup_events(&self) -> u64 {
        self.post_warmup_events.iter().flatten().copied().min().unwrap_or(0)
    }
}

#[derive(Debug, Clone)]
pub struct InsensitivityConfig {
    pub params: SimParams,
    pub replicas: usize,
    pub workers: usize,
    pub max_shell: usize,
    pub tail_tol: f64,
}

/// Simulates each traffic variant (all with intensity `rho`) under the policy
/// of `phi` and compares the occupancy laws with each other and with the
/// product-form law.
pub fn insensitivity_experiment(
    region: &CapacityRegion,
    phi: &LogPotential,
    rho: &[f64],
    variants: &[TrafficSpec],
    config: &InsensitivityConfig,
) -> Result<InsensitivityReport> {
    for variant in variants {
        let variant_rho = variant.rho();
        let matches = variant_rho.len() == rho.len()
            && variant_rho
                .iter()
                .zip(rho)
                .all(|(a, b)| (a - b).abs() <= RHO_MATCH_TOL * b.abs().max(1.0));
        if !matches {
            return Err(Error::VariantsDifferInRho(variant_rho, rho.to_vec()));
        }
    }
    if !region.in_interior(rho)? {
        return Err(Error::RhoNotInterior);
    }
    let oracle = stationary_pi(phi, rho, config.max_shell, config.tail_tol)?.to_distribution();

    let mut outcomes = Vec::with_capacity(variants.len());
    for variant in variants {
        outcomes.push(simulate_replicas(
            phi,
            variant,
            &config.params,
            config.replicas,
            config.workers,
        )?);
    }

    let oracle_tv = outcomes
        .iter()
        .map(|runs| {
            runs.iter()
                .map(|o| tv_distance(&o.distribution, &oracle))
                .collect()
        })
        .collect();
    let post_warmup_events = outcomes
        .iter()
        .map(|runs| runs.iter().map(|o| o.post_warmup_events).collect())
        .collect();
    let mut pairwise = Vec::new();
    for a in 0..outcomes.len() {
        for b in a + 1..outcomes.len() {
            let replica_tv = outcomes[a]
                .iter()
                .zip(&outcomes[b])
                .map(|(x, y)| tv_distance(&x.distribution, &y.distribution))
                .collect();
            let pooled_tv = tv_distance(
                &pooled_distribution(&outcomes[a]),
                &pooled_distribution(&outcomes[b]),
            );
            pairwise.push(PairwiseTv {
                a,
                b,
                replica_tv,
                pooled_tv,
            });
        }
    }
    Ok(InsensitivityReport {
        rho: rho.to_vec(),
        post_warmup_events,
        oracle_tv,
        pairwise,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub c: f64,
    /// Offset added to the floored state.
    pub offset: Vec<i64>,
    pub state: Vec<u32>,
    pub allocation: AllocationVector,
    pub l1_gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub pf: AllocationVector,
    pub rows: Vec<ConvergenceRow>,
}

/// Componentwise `floor(c n)`.
pub fn floor_state(n: &[f64], c: f64) -> Vec<u32> {
    n.iter().map(|v| (c * v).floor() as u32).collect()
}

fn check_direction(n: &[f64]) -> Result<()> {
    if n.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidParameter(format!("direction {n:?} must be nonnegative")));
    }
    if n.iter().all(|v| *v == 0.0) {
        return Err(Error::ZeroState);
    }
    Ok(())
}

fn check_increasing(c_list: &[f64]) -> Result<()> {
    if c_list.is_empty() || c_list.iter().any(|c| !(*c > 0.0)) || c_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter(format!(
            "scale list {c_list:?} must be positive and strictly increasing"
        )));
    }
    Ok(())
}

/// Evaluates the policy at `floor(c n) + offset` for each `c` and each offset
/// (the zero offset is always included) and measures the L1 gap to the
/// proportionally fair allocation at `n`.
pub fn limit_convergence_experiment(
    region: &CapacityRegion,
    policy: &dyn AllocationPolicy,
    n: &[f64],
    c_list: &[f64],
    offsets: &[Vec<i64>],
    tol: f64,
) -> Result<ConvergenceReport> {
    check_direction(n)?;
    check_increasing(c_list)?;
    let pf = solve_pf(region, n, tol)?.allocation;
    let zero = vec![0i64; n.len()];
    let mut all_offsets = vec![zero];
    for offset in offsets {
        if offset.len() != n.len() {
            return Err(Error::DimensionMismatch {
                expected: n.len(),
                got: offset.len(),
            });
        }
        if offset.iter().any(|v| *v != 0) {
            all_offsets.push(offset.clone());
        }
    }
    let mut rows = Vec::new();
    for &c in c_list {
        let base = floor_state(n, c);
        for offset in &all_offsets {
            let shifted: Vec<i64> = base.iter().zip(offset).map(|(b, o)| *b as i64 + o).collect();
            if shifted.iter().any(|v| *v < 0) || shifted.iter().all(|v| *v == 0) {
                continue;
            }
            let state: Vec<u32> = shifted.iter().map(|v| *v as u32).collect();
            let allocation = AllocationVector(policy.allocate(&state)?);
            let l1_gap = allocation.l1_distance(pf.rates());
            rows.push(ConvergenceRow {
                c,
                offset: offset.clone(),
                state,
                allocation,
                l1_gap,
            });
        }
    }
    Ok(ConvergenceReport { pf, rows })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LdpRow {
    pub c: f64,
    pub state: Vec<u32>,
    /// `(1/c) log pi(floor(c n))`.
    pub scaled_log_pi: f64,
    /// Minus the rate function.
    pub limit: f64,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LdpReport {
    pub rate: f64,
    pub log_b: f64,
    pub tail_bound: f64,
    pub max_shell: usize,
    pub rows: Vec<LdpRow>,
}

/// Compares `(1/c) log pi(floor(c n))` with the rate function.
pub fn ldp_experiment(
    region: &CapacityRegion,
    phi: &LogPotential,
    rho: &[f64],
    n: &[f64],
    c_list: &[f64],
    tail_tol: f64,
    tol: f64,
) -> Result<LdpReport> {
    check_direction(n)?;
    check_increasing(c_list)?;
    let rate = rate_function(region, n, rho, tol)?;

    let limit = phi.max_full_shell() as usize;
    let mut shell = 64.min(limit);
    let constant = loop {
        match log_normalizing_constant(phi, rho, shell, tail_tol) {
            Ok(constant) => break constant,
            Err(Error::TruncationInsufficient { .. }) if shell < limit => {
                shell = (shell * 2).min(limit);
            }
            Err(e) => return Err(e),
        }
    };

    let mut rows = Vec::with_capacity(c_list.len());
    for &c in c_list {
        let state = floor_state(n, c);
        let scaled_log_pi = log_pi(phi, rho, constant.log_b, &state)? / c;
        rows.push(LdpRow {
            c,
            state,
            scaled_log_pi,
            limit: -rate,
            error: (scaled_log_pi + rate).abs(),
        });
    }
    Ok(LdpReport {
        rate,
        log_b: constant.log_b,
        tail_bound: constant.tail_bound,
        max_shell: constant.max_shell,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OscillationRow {
    pub k: u32,
    pub c: f64,
    pub state: Vec<u32>,
    pub allocation: AllocationVector,
    pub gap_to_scaled_pf: f64,
    pub gap_to_pf: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OscillationReport {
    pub alpha: f64,
    pub pf: AllocationVector,
    /// States with `|state| = 2^k |n|`.
    pub power_rows: Vec<OscillationRow>,
    /// States with `|state| = 2^k - 1`.
    pub offset_rows: Vec<OscillationRow>,
    /// Last offset-row allocation over last power-row allocation, on the
    /// support of `n` (expected close to `alpha`).
    pub limit_ratio: Vec<f64>,
    pub separated: bool,
}

/// Integer state near `c n` with total exactly `total`, by largest remainders.
pub fn state_with_total(n: &[f64], total: u64) -> Vec<u32> {
    let size: f64 = n.iter().sum();
    let c = total as f64 / size;
    let mut state = floor_state(n, c);
    let mut deficit = total.saturating_sub(state.iter().map(|v| *v as u64).sum());
    let mut order: Vec<usize> = (0..n.len()).filter(|&r| n[r] > 0.0).collect();
    order.sort_by(|&a, &b| {
        let fa = c * n[a] - (c * n[a]).floor();
        let fb = c * n[b] - (c * n[b]).floor();
        fb.partial_cmp(&fa).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    let mut i = 0;
    while deficit > 0 && !order.is_empty() {
        state[order[i % order.len()]] += 1;
        deficit -= 1;
        i += 1;
    }
    state
}

/// Relative deviation allowed between the measured subsequence ratio and alpha.
const SEPARATION_TOL: f64 = 0.05;

/// Evaluates the counterexample policy along `c_k = 2^k` (power-of-two
/// totals) and along states with total `2^k - 1`.
pub fn counterexample_oscillation(
    region: &CapacityRegion,
    base: &LogPotential,
    alpha: f64,
    n: &[u32],
    k_list: &[u32],
    kprime_list: &[u32],
    tol: f64,
) -> Result<OscillationReport> {
    let params = CounterexampleParams::new(base.clone(), alpha)?;
    let total: u64 = n.iter().map(|v| *v as u64).sum();
    if total == 0 {
        return Err(Error::ZeroState);
    }
    if !total.is_power_of_two() {
        return Err(Error::NotPowerOfTwo(total));
    }
    let hat = LogPotential::counterexample(&params);
    let direction: Vec<f64> = n.iter().map(|v| *v as f64).collect();
    let pf = solve_pf(region, &direction, tol)?.allocation;
    let scaled_pf: Vec<f64> = pf.rates().iter().map(|v| v / alpha).collect();

    let row = |k: u32, c: f64, state: Vec<u32>| -> Result<OscillationRow> {
        let allocation = hat.allocation(&state)?;
        Ok(OscillationRow {
            k,
            c,
            gap_to_scaled_pf: allocation.l1_distance(&scaled_pf),
            gap_to_pf: allocation.l1_distance(pf.rates()),
            state,
            allocation,
        })
    };

    let mut power_rows = Vec::new();
    for &k in k_list {
        let c = 2f64.powi(k as i32);
        let state: Vec<u32> = n.iter().map(|v| v << k).collect();
        power_rows.push(row(k, c, state)?);
    }
    let mut offset_rows = Vec::new();
    for &k in kprime_list {
        let target = (1u64 << k) - 1;
        if target == 0 {
            continue;
        }
        let c = target as f64 / total as f64;
        offset_rows.push(row(k, c, state_with_total(&direction, target))?);
    }

    let mut limit_ratio = Vec::new();
    let mut separated = false;
    if let (Some(p), Some(o)) = (power_rows.last(), offset_rows.last()) {
        limit_ratio = (0..n.len())
            .filter(|&r| n[r] > 0)
            .map(|r| o.allocation.0[r] / p.allocation.0[r])
            .collect();
        separated = limit_ratio
            .iter()
            .all(|ratio| (ratio - alpha).abs() <= SEPARATION_TOL * alpha);
    }
    Ok(OscillationReport {
        alpha,
        pf,
        power_rows,
        offset_rows,
        limit_ratio,
        separated,
    })
}

/// Least `N` with `alpha^(log2 m) < e^(eps m)` for every `m >= N`.
pub fn crossover_shell(alpha: f64, eps: f64) -> Result<u64> {
    if !(alpha > 1.0) {
        return Err(Error::InvalidAlpha(alpha));
    }
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!("eps must be positive, got {eps}")));
    }
    let slope = alpha.log2();
    // eps m - slope ln m is increasing past m = slope / eps.
    let turn = slope / eps;
    let holds = |m: u64| slope * (m as f64).ln() < eps * m as f64;
    let mut last_failure = 0u64;
    let mut m = 1u64;
    loop {
        if holds(m) {
            if m as f64 > turn {
                break;
            }
        } else {
            last_failure = m;
        }
        m += 1;
    }
    Ok(last_failure + 1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BhatReport {
    pub alpha: f64,
    pub eps: f64,
    pub crossover: u64,
    /// `log` of shell sums of the counterexample normaliser at `rho`.
    pub log_hat_shells: Vec<f64>,
    /// `log` of shell sums of the base normaliser at `rho e^eps`.
    pub log_scaled_shells: Vec<f64>,
    /// `log sum_{|n| <= N} alpha^(log2 |n|) Phi(n) rho^n`.
    pub log_head: f64,
    /// Every hat shell beyond `N` is dominated by the scaled base shell.
    pub dominated: bool,
    /// Worst windowed decay factor `(S_{m+w} / S_m)^(1/w)` for `m >= N`.
    pub decay_ratio: f64,
    pub geometric_decay: bool,
    /// Truncated `log B_hat(rho)` plus geometric tail.
    pub log_bhat: f64,
}

/// Shells per window when measuring the decay of `B_hat` shells; wide enough
/// to absorb the factor `alpha` at each power-of-two shell.
pub const DECAY_WINDOW: usize = 8;

/// Evidence that the counterexample normaliser is finite at `rho`:
/// beyond the crossover `N`, its shells are dominated by those of the base
/// potential at `rho e^eps`, and they decay geometrically.
pub fn bhat_finiteness_check(
    region: &CapacityRegion,
    base: &LogPotential,
    rho: &[f64],
    alpha: f64,
    eps: f64,
    max_shell: usize,
) -> Result<BhatReport> {
    let params = CounterexampleParams::new(base.clone(), alpha)?;
    if !region.in_interior(rho)? {
        return Err(Error::NoInteriorSlack);
    }
    let loads = region.link_loads(rho)?;
    let slack = loads
        .iter()
        .zip(region.capacities())
        .filter(|(load, _)| **load > 0.0)
        .map(|(load, c)| (c / load).ln())
        .fold(f64::INFINITY, f64::min);
    if !(slack > 0.0) {
        return Err(Error::NoInteriorSlack);
    }
    let mut eps = eps;
    let scaled = |e: f64| rho.iter().map(|v| v * e.exp()).collect::<Vec<_>>();
    let mut tries = 0;
    while !region.in_interior(&scaled(eps))? {
        eps *= 0.5;
        tries += 1;
        if tries > 60 {
            return Err(Error::NoInteriorSlack);
        }
    }
    let crossover = crossover_shell(alpha, eps)?;
    if (max_shell as u64) < crossover + DECAY_WINDOW as u64 {
        return Err(Error::InvalidParameter(format!(
            "max_shell {max_shell} must exceed the crossover {crossover} by {DECAY_WINDOW}"
        )));
    }

    let hat = LogPotential::counterexample(&params);
    let log_hat_shells = shell_log_sums(&hat, rho, max_shell)?;
    let log_scaled_shells = shell_log_sums(base, &scaled(eps), max_shell)?;
    let log_base_shells = shell_log_sums(base, rho, max_shell)?;

    let log_alpha = alpha.ln();
    let mut log_head = f64::NEG_INFINITY;
    for (m, s) in log_base_shells.iter().enumerate().take(crossover as usize + 1) {
        let weight = if m == 0 { 0.0 } else { (m as f64).log2() * log_alpha };
        log_head = log_add(log_head, s + weight);
    }

    let n0 = crossover as usize;
    let dominated = (n0 + 1..=max_shell)
        .all(|m| log_hat_shells[m] <= log_scaled_shells[m] + 1e-12 * log_scaled_shells[m].abs().max(1.0));
    let decay_ratio = (n0..=max_shell - DECAY_WINDOW)
        .map(|m| ((log_hat_shells[m + DECAY_WINDOW] - log_hat_shells[m]) / DECAY_WINDOW as f64).exp())
        .fold(0.0, f64::max);
    let geometric_decay = decay_ratio < 1.0;

    let mut log_bhat = log_hat_shells
        .iter()
        .fold(f64::NEG_INFINITY, |acc, s| log_add(acc, *s));
    if geometric_decay && decay_ratio > 0.0 {
        // Window-wise geometric bound on the omitted shells.
        let window_tail = log_hat_shells[max_shell - DECAY_WINDOW + 1..=max_shell]
            .iter()
            .fold(f64::NEG_INFINITY, |acc, s| log_add(acc, *s));
        let q = decay_ratio.powi(DECAY_WINDOW as i32);
        log_bhat = log_add(log_bhat, window_tail + q.ln() - (-q).ln_1p());
    }

    Ok(BhatReport {
        alpha,
        eps,
        crossover,
        log_hat_shells,
        log_scaled_shells,
        log_head,
        dominated,
        decay_ratio,
        geometric_decay,
        log_bhat,
    })
}
