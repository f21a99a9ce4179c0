//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use bandshare::experiments::{
    bhat_finiteness_check, counterexample_oscillation, insensitivity_experiment, ldp_experiment,
    limit_convergence_experiment, InsensitivityConfig,
};
use bandshare::potential::state_total;
use bandshare::simulator::RouteTraffic;
use bandshare::stationary::DEFAULT_TAIL_TOL;
use bandshare::{
    detailed_balance_residual, log_normalizing_constant, pf_objective, simulate, solve_pf,
    CapacityRegion, CounterexampleParams, Error, LogPotential, SimParams, StageDistribution,
    TrafficSpec,
};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn within(elapsed: Duration, limit_secs: f64) -> Outcome {
    ensure!(
        elapsed.as_secs_f64() < limit_secs,
        "runtime {:.2}s over {limit_secs}s",
        elapsed.as_secs_f64()
    );
    Ok(String::new())
}

fn pf_solver_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let routes = rng.random_range(1..=5);
        let region = CapacityRegion::single_link(1.0, routes).unwrap();
        let mut n: Vec<f64> = (0..routes).map(|_| rng.random_range(0..=20) as f64).collect();
        if n.iter().all(|v| *v == 0.0) {
            n[0] = 1.0;
        }
        let total: f64 = n.iter().sum();
        let sol = solve_pf(&region, &n, 1e-12).map_err(|e| e.to_string())?;
        for (x, m) in sol.allocation.rates().iter().zip(&n) {
            worst = worst.max((x - m / total).abs());
        }
    }
    ensure!(worst <= 1e-7, "single link max error {worst:e}");

    let region = CapacityRegion::line_network();
    let directions = [[1.0, 1.0, 1.0], [2.0, 1.0, 3.0], [1.0, 0.0, 2.0], [5.0, 2.0, 1.0]];
    let steps = 100;
    let mut grid_points = 0u64;
    for n in directions {
        let sol = solve_pf(&region, &n, 1e-12).map_err(|e| e.to_string())?;
        ensure!(
            region.contains(sol.allocation.rates(), 1e-12).unwrap(),
            "solver answer infeasible for {n:?}"
        );
        let best = pf_objective(&n, sol.allocation.rates()).unwrap();
        for i in 0..=steps {
            for j in 0..=steps {
                for k in 0..=steps {
                    let x = [i as f64 / steps as f64, j as f64 / steps as f64, k as f64 / steps as f64];
                    if !region.contains(&x, 1e-12).unwrap() {
                        continue;
                    }
                    grid_points += 1;
                    if let Ok(v) = pf_objective(&n, &x) {
                        ensure!(v <= best, "grid point {x:?} beats solver for {n:?}: {v} > {best}");
                    }
                }
            }
        }
    }
    Ok(format!("single link max error {worst:.1e}; {grid_points} grid points dominated"))
}

fn bf_is_processor_sharing() -> Outcome {
    let mut worst: f64 = 0.0;
    for capacity in [1.0, 2.0, 10.0] {
        for routes in [1, 2, 3] {
            let region = CapacityRegion::single_link(capacity, routes).unwrap();
            let phi = LogPotential::balanced_fairness(&region, vec![40; routes]).unwrap();
            let mut failure = None;
            phi.for_each_state(|n, _| {
                let total = state_total(n);
                if total == 0 || total > 40 {
                    return;
                }
                let x = bandshare::allocation_from_potential(&phi, n).unwrap();
                for (r, rate) in x.rates().iter().enumerate() {
                    let err = (rate - n[r] as f64 * capacity / total as f64).abs();
                    worst = worst.max(err);
                    if err > 1e-10 && failure.is_none() {
                        failure = Some(format!("C={capacity} n={n:?} error {err:e}"));
                    }
                }
            });
            if let Some(f) = failure {
                return Err(f);
            }
        }
    }
    Ok(format!("max error {worst:.1e}"))
}

fn product_form() -> Outcome {
    let cases = [
        (CapacityRegion::single_link(1.0, 2).unwrap(), vec![0.3, 0.25]),
        (CapacityRegion::line_network(), vec![0.2, 0.3, 0.25]),
    ];
    let mut worst: f64 = 0.0;
    let mut states = 0u64;
    for (region, rates) in cases {
        let routes = region.num_routes();
        let traffic = TrafficSpec::exponential(&rates, 1.0).unwrap();
        let base = LogPotential::balanced_fairness(&region, vec![30; routes]).unwrap();
        let hat = LogPotential::counterexample(&CounterexampleParams::new(base.clone(), 2.0).unwrap());
        for phi in [&base, &hat] {
            let mut failure = None;
            phi.for_each_state(|n, _| {
                let total = state_total(n);
                if total == 0 || total > 30 {
                    return;
                }
                states += 1;
                match detailed_balance_residual(phi, &traffic, n) {
                    Ok(res) => {
                        worst = worst.max(res);
                        if res > 1e-10 && failure.is_none() {
                            failure = Some(format!("{n:?} residual {res:e}"));
                        }
                    }
                    Err(e) => failure = failure.take().or(Some(e.to_string())),
                }
            });
            if let Some(f) = failure {
                return Err(f);
            }
        }
    }
    Ok(format!("{states} states, max residual {worst:.1e}"))
}

fn single_route(delta: f64, stages: StageDistribution) -> TrafficSpec {
    TrafficSpec::new(
        delta,
        vec![RouteTraffic { id: "r0".into(), arrival_rate: 0.5, stages }],
    )
    .unwrap()
}

fn insensitivity() -> Outcome {
    let region = CapacityRegion::single_link(1.0, 1).unwrap();
    let phi = LogPotential::balanced_fairness(&region, vec![1000]).unwrap();
    let variants = [
        single_route(1.0, StageDistribution::Deterministic { k: 1 }),
        single_route(0.5, StageDistribution::Geometric { p: 0.5 }),
        single_route(0.25, StageDistribution::TwoPoint { a: 1, b: 9, w: 0.625 }),
    ];
    let mut params = SimParams::new(1.3e6, 7);
    params.warmup = 2.6e5;
    let config = InsensitivityConfig {
        params,
        replicas: 3,
        workers: 0,
        max_shell: 200,
        tail_tol: DEFAULT_TAIL_TOL,
    };
    let report = insensitivity_experiment(&region, &phi, &[0.5], &variants, &config)
        .map_err(|e| e.to_string())?;
    let events = report.min_post_warmup_events();
    let oracle = report.max_oracle_tv();
    let pairwise = report.max_pairwise_tv();
    ensure!(events >= 1_000_000, "only {events} post-warmup events");
    ensure!(oracle <= 0.02, "TV to analytic law {oracle}");
    ensure!(pairwise <= 0.03, "pairwise TV {pairwise}");
    Ok(format!("max pairwise TV {pairwise:.4}, max oracle TV {oracle:.4}, min events {events}"))
}

/// Gaps below this are rounding noise and count as zero.
const GAP_FLOOR: f64 = 1e-12;

/// Non-increasing apart from at most one rise of at most `slack`.
fn mostly_non_increasing(values: &[f64], slack: f64) -> bool {
    let values: Vec<f64> = values.iter().map(|v| if *v < GAP_FLOOR { 0.0 } else { *v }).collect();
    let rises: Vec<f64> = values.windows(2).map(|w| w[1] - w[0]).filter(|d| *d > 0.0).collect();
    rises.len() <= 1 && rises.iter().all(|d| *d <= slack)
}

fn limit_convergence() -> Outcome {
    let region = CapacityRegion::line_network();
    let phi = LogPotential::balanced_fairness(&region, vec![201; 3]).unwrap();
    let c_list = [5.0, 10.0, 20.0, 50.0, 100.0, 200.0];
    let mut offsets = Vec::new();
    for r in 0..3 {
        for s in [1i64, -1] {
            let mut o = vec![0i64; 3];
            o[r] = s;
            offsets.push(o);
        }
    }
    let report = limit_convergence_experiment(&region, &phi, &[1.0, 1.0, 1.0], &c_list, &offsets, 1e-12)
        .map_err(|e| e.to_string())?;
    let target = [1.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0];
    ensure!(
        report.pf.l1_distance(&target) <= 1e-8,
        "PF allocation {:?}",
        report.pf.rates()
    );
    let mut all_offsets = vec![vec![0i64; 3]];
    all_offsets.extend(offsets);
    let mut worst_final: f64 = 0.0;
    for offset in &all_offsets {
        let gaps: Vec<f64> = report
            .rows
            .iter()
            .filter(|row| &row.offset == offset)
            .map(|row| row.l1_gap)
            .collect();
        ensure!(gaps.len() == c_list.len(), "missing rows for offset {offset:?}");
        ensure!(mostly_non_increasing(&gaps, 1e-3), "offset {offset:?} gaps {gaps:?}");
        let last = *gaps.last().unwrap();
        ensure!(last < 0.05, "offset {offset:?} gap at c=200 is {last}");
        worst_final = worst_final.max(last);
    }
    Ok(format!("{} offsets, worst gap at c=200 {worst_final:.4}", all_offsets.len()))
}

fn ldp() -> Outcome {
    let one = CapacityRegion::single_link(1.0, 1).unwrap();
    let phi = LogPotential::balanced_fairness(&one, vec![512]).unwrap();
    let report = ldp_experiment(&one, &phi, &[0.5], &[1.0], &[100.0], DEFAULT_TAIL_TOL, 1e-12)
        .map_err(|e| e.to_string())?;
    let single = report.rows[0].error;
    ensure!(single <= 0.0070, "single route error {single}");

    let two = CapacityRegion::single_link(1.0, 2).unwrap();
    let phi = LogPotential::balanced_fairness(&two, vec![512; 2]).unwrap();
    let report = ldp_experiment(&two, &phi, &[0.3, 0.3], &[1.0, 1.0], &[150.0], DEFAULT_TAIL_TOL, 1e-12)
        .map_err(|e| e.to_string())?;
    let double = report.rows[0].error;
    let bound = 10.0 * 150f64.ln() / 150.0;
    ensure!(double <= bound, "two-route error {double} over {bound}");
    Ok(format!("single route {single:.5}; two routes {double:.4} (bound {bound:.3})"))
}

fn oscillation() -> Outcome {
    let region = CapacityRegion::single_link(1.0, 2).unwrap();
    let base = LogPotential::balanced_fairness(&region, vec![256; 2]).unwrap();
    let report = counterexample_oscillation(&region, &base, 2.0, &[1, 1], &[3, 4, 5, 6, 7, 8], &[5, 6, 7, 8, 9], 1e-12)
        .map_err(|e| e.to_string())?;
    let mut worst_scaled: f64 = 0.0;
    let mut least_pf = f64::INFINITY;
    for row in &report.power_rows {
        ensure!(row.gap_to_scaled_pf <= 0.05, "k={} gap to PF/2 {}", row.k, row.gap_to_scaled_pf);
        ensure!(row.gap_to_pf >= 0.45, "k={} gap to PF {}", row.k, row.gap_to_pf);
        worst_scaled = worst_scaled.max(row.gap_to_scaled_pf);
        least_pf = least_pf.min(row.gap_to_pf);
    }
    let mut worst_offset: f64 = 0.0;
    for row in &report.offset_rows {
        ensure!(state_total(&row.state) == (1u64 << row.k) - 1, "offset total for k={}", row.k);
        ensure!(row.gap_to_pf <= 0.05, "k'={} gap to PF {}", row.k, row.gap_to_pf);
        worst_offset = worst_offset.max(row.gap_to_pf);
    }
    Ok(format!(
        "power gap to PF/2 <= {worst_scaled:.4}, to PF >= {least_pf:.4}; offset gap <= {worst_offset:.4}"
    ))
}

fn bhat_finiteness() -> Outcome {
    let (alpha, eps) = (2.0f64, 0.1f64);
    // Independent scan: last m where alpha^(log2 m) >= e^(eps m), plus one.
    let mut last_failure = 0u64;
    for m in 1..=100_000u64 {
        if alpha.powf((m as f64).log2()) >= (eps * m as f64).exp() {
            last_failure = m;
        }
    }
    let scanned = last_failure + 1;
    let region = CapacityRegion::single_link(1.0, 1).unwrap();
    let base = LogPotential::balanced_fairness(&region, vec![400]).unwrap();
    let report = bhat_finiteness_check(&region, &base, &[0.5], alpha, eps, 400)
        .map_err(|e| e.to_string())?;
    ensure!(report.crossover == scanned, "crossover {} vs scan {scanned}", report.crossover);
    ensure!((35..=40).contains(&report.crossover), "crossover {}", report.crossover);
    ensure!(report.dominated, "hat shells not dominated past N");
    ensure!(report.geometric_decay, "decay ratio {}", report.decay_ratio);
    ensure!(report.log_bhat.is_finite(), "log B_hat {}", report.log_bhat);
    Ok(format!(
        "N={} (scan {scanned}), decay ratio {:.4}, log B_hat {:.4}",
        report.crossover, report.decay_ratio, report.log_bhat
    ))
}

fn stability_boundary() -> Outcome {
    let region = CapacityRegion::single_link(1.0, 1).unwrap();
    let phi = LogPotential::balanced_fairness(&region, vec![400]).unwrap();

    let overload = TrafficSpec::exponential(&[1.2], 1.0).unwrap();
    let mut params = SimParams::new(1e7, 3);
    params.max_population = 300;
    match simulate(&phi, &overload, &params) {
        Err(Error::StateExplosion { .. }) => {}
        other => return Err(format!("rho=1.2 simulation: {other:?}")),
    }
    match log_normalizing_constant(&phi, &[1.2], 400, DEFAULT_TAIL_TOL) {
        Err(e) if e.to_string().starts_with("divergence suspected") => {}
        other => return Err(format!("rho=1.2 normaliser: {other:?}")),
    }

    let stable = TrafficSpec::exponential(&[0.9], 1.0).unwrap();
    let outcome = simulate(&phi, &stable, &SimParams::new(2e5, 3)).map_err(|e| e.to_string())?;
    let constant = log_normalizing_constant(&phi, &[0.9], 400, DEFAULT_TAIL_TOL)
        .map_err(|e| e.to_string())?;
    let exact = -(0.1f64).ln();
    ensure!(
        (constant.log_b - exact).abs() <= 1e-9,
        "log B at 0.9 is {} not {exact}",
        constant.log_b
    );
    Ok(format!(
        "rho=1.2 explodes and diverges; rho=0.9 ran {} events, log B {:.6}",
        outcome.events, constant.log_b
    ))
}

fn main() {
    let criteria: [(&str, f64, fn() -> Outcome); 9] = [
        ("1 pf solver correctness", 5.0, pf_solver_correctness),
        ("2 balanced fairness = processor sharing", 1.0, bf_is_processor_sharing),
        ("3 product form / detailed balance", 10.0, product_form),
        ("4 insensitivity", 120.0, insensitivity),
        ("5 limit allocation is PF", 60.0, limit_convergence),
        ("6 large deviations", 60.0, ldp),
        ("7 counterexample oscillation", 30.0, oscillation),
        ("8 counterexample finiteness", 10.0, bhat_finiteness),
        ("9 stability boundary", 60.0, stability_boundary),
    ];
    let mut failures = 0;
    for (name, limit, check) in criteria {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|_| Err("panicked".into()))
            .and_then(|detail| within(start.elapsed(), limit).map(|_| detail));
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS criterion {name} ({secs:.2}s): {detail}"),
            Err(reason) => {
                failures += 1;
                println!("FAIL criterion {name} ({secs:.2}s): {reason}");
            }
        }
    }
    println!("acceptance: {} passed, {failures} failed", 9 - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
