//! Event-driven simulation of the flow-level Markov chain with
//! stage-structured document sizes.
//!
//! A route-`r` document arrives with `L_r` exponential stages of mean
//! `delta`. With `n` documents in transfer, route `r` drains work at rate
//! `x_r(n)`, shared equally among its documents, so a document with `s`
//! stages left moves to `s - 1` (or departs when `s = 1`) at rate
//! `x_r(n) / (n_r delta)`.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::AllocationPolicy;

/// Law of the number of stages of a document, supported on `{1, 2, ...}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StageDistribution {
    Deterministic { k: u32 },
    /// `P(L = s) = (1 - p)^(s - 1) p`.
    Geometric { p: f64 },
    /// `P(L = a) = w`, `P(L = b) = 1 - w`.
    TwoPoint { a: u32, b: u32, w: f64 },
}

/// Stages beyond this point are dropped when listing a geometric law.
const PMF_TAIL_CUTOFF: f64 = 1e-16;

impl StageDistribution {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::Deterministic { k } => k >= 1,
            Self::Geometric { p } => p > 0.0 && p <= 1.0,
            Self::TwoPoint { a, b, w } => a >= 1 && b >= 1 && (0.0..=1.0).contains(&w),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidTraffic(format!("bad stage distribution {self:?}")))
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Self::Deterministic { k } => k as f64,
            Self::Geometric { p } => 1.0 / p,
            Self::TwoPoint { a, b, w } => w * a as f64 + (1.0 - w) * b as f64,
        }
    }

    pub fn pmf(&self, s: u32) -> f64 {
        match *self {
            Self::Deterministic { k } => (s == k) as u8 as f64,
            Self::Geometric { p } => {
                if s == 0 {
                    0.0
                } else {
                    (1.0 - p).powi(s as i32 - 1) * p
                }
            }
            Self::TwoPoint { a, b, w } => {
                let mut mass = 0.0;
                if s == a {
                    mass += w;
                }
                if s == b {
                    mass += 1.0 - w;
                }
                mass
            }
        }
    }

    /// Stages with positive probability (geometric tails cut at `1e-16`).
    pub fn support(&self) -> Vec<(u32, f64)> {
        match *self {
            Self::Deterministic { k } => vec![(k, 1.0)],
            Self::TwoPoint { a, b, .. } => {
                let mut out: Vec<(u32, f64)> = Vec::new();
                for s in [a.min(b), a.max(b)] {
                    let m = self.pmf(s);
                    if m > 0.0 && out.last().map_or(true, |(t, _)| *t != s) {
                        out.push((s, m));
                    }
                }
                out
            }
            Self::Geometric { p } => {
                let mut out = Vec::new();
                let mut s = 1;
                let mut remaining = 1.0;
                while remaining > PMF_TAIL_CUTOFF {
                    let m = self.pmf(s);
                    if m <= 0.0 {
                        break;
                    }
                    out.push((s, m));
                    remaining = (1.0 - p).powi(s as i32);
                    s += 1;
                }
                out
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        match *self {
            Self::Deterministic { k } => k,
            Self::Geometric { p } => {
                if p >= 1.0 {
                    return 1;
                }
                let u: f64 = rng.random();
                // Inverse CDF: smallest s with 1 - (1-p)^s >= u.
                let s = ((1.0 - u).ln() / (1.0 - p).ln()).ceil();
                s.clamp(1.0, u32::MAX as f64) as u32
            }
            Self::TwoPoint { a, b, w } => {
                if rng.random::<f64>() < w {
                    a
                } else {
                    b
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouteTraffic {
    pub id: String,
    pub arrival_rate: f64,
    pub stages: StageDistribution,
}

/// Traffic description: Poisson arrival rates, stage laws and stage mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficSpec {
    pub delta: f64,
    pub routes: Vec<RouteTraffic>,
}

impl TrafficSpec {
    pub fn new(delta: f64, routes: Vec<RouteTraffic>) -> Result<Self> {
        let spec = Self { delta, routes };
        spec.validate()?;
        Ok(spec)
    }

    /// Single-stage (exponential size) traffic with the given arrival rates.
    pub fn exponential(arrival_rates: &[f64], delta: f64) -> Result<Self> {
        Self::new(
            delta,
            arrival_rates
                .iter()
                .enumerate()
                .map(|(r, &nu)| RouteTraffic {
                    id: format!("r{r}"),
                    arrival_rate: nu,
                    stages: StageDistribution::Deterministic { k: 1 },
                })
                .collect(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0) || !self.delta.is_finite() {
            return Err(Error::InvalidTraffic(format!("delta must be positive, got {}", self.delta)));
        }
        for route in &self.routes {
            if !(route.arrival_rate > 0.0) || !route.arrival_rate.is_finite() {
                return Err(Error::InvalidTraffic(format!(
                    "route {} has arrival rate {}",
                    route.id, route.arrival_rate
                )));
            }
            route.stages.validate()?;
        }
        Ok(())
    }

    pub fn num_routes(&self) -> usize {
        self.routes.len()
    }

    pub fn arrival_rate(&self, r: usize) -> f64 {
        self.routes[r].arrival_rate
    }

    /// `mu_r = 1 / (delta E[L_r])`.
    pub fn service_rate(&self, r: usize) -> f64 {
        1.0 / (self.delta * self.routes[r].stages.mean())
    }

    /// `rho_r = nu_r delta E[L_r]`.
    pub fn rho(&self) -> Vec<f64> {
        self.routes
            .iter()
            .map(|route| route.arrival_rate * self.delta * route.stages.mean())
            .collect()
    }
}

/// How the stage mean enters the service rates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateConvention {
    /// Stage completions at `x_r(n) n_rs / (n_r delta)`: work drains at `x_r(n)`.
    #[default]
    StageMean,
    /// Stage completions at `delta x_r(n) n_rs / n_r`, the literal displayed rate.
    Literal,
}

impl RateConvention {
    fn factor(self, delta: f64) -> f64 {
        match self {
            Self::StageMean => 1.0 / delta,
            Self::Literal => delta,
        }
    }
}

/// Occupancy `n_rs` by route and remaining stages; `counts[r][s - 1]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DetailedState {
    counts: Vec<Vec<u32>>,
}

impl DetailedState {
    pub fn empty(routes: usize) -> Self {
        Self {
            counts: vec![Vec::new(); routes],
        }
    }

    /// `stage_counts[r][s - 1] = n_rs`.
    pub fn from_counts(stage_counts: Vec<Vec<u32>>) -> Self {
        let mut state = Self {
            counts: stage_counts,
        };
        state.trim();
        state
    }

    fn trim(&mut self) {
        for row in &mut self.counts {
            while row.last() == Some(&0) {
                row.pop();
            }
        }
    }

    pub fn count(&self, r: usize, s: u32) -> u32 {
        if s == 0 {
            return 0;
        }
        self.counts[r].get(s as usize - 1).copied().unwrap_or(0)
    }

    pub fn route_total(&self, r: usize) -> u32 {
        self.counts[r].iter().sum()
    }

    pub fn route_totals(&self) -> Vec<u32> {
        (0..self.counts.len()).map(|r| self.route_total(r)).collect()
    }

    fn add(&mut self, r: usize, s: u32) {
        let i = s as usize - 1;
        if self.counts[r].len() <= i {
            self.counts[r].resize(i + 1, 0);
        }
        self.counts[r][i] += 1;
    }

    fn remove(&mut self, r: usize, s: u32) {
        self.counts[r][s as usize - 1] -= 1;
        self.trim();
    }

    fn stage_counts(&self, r: usize) -> &[u32] {
        &self.counts[r]
    }
}

fn evaluate_policy(policy: &dyn AllocationPolicy, n: &[u32]) -> Result<Vec<f64>> {
    let x = policy.allocate(n).map_err(|e| Error::PolicyUndefined {
        state: n.to_vec(),
        reason: e.to_string(),
    })?;
    if x.len() != n.len() || x.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::PolicyUndefined {
            state: n.to_vec(),
            reason: format!("invalid allocation {x:?}"),
        });
    }
    Ok(x)
}

/// Nonzero transition rates out of `x`.
pub fn transition_rates(
    x: &DetailedState,
    policy: &dyn AllocationPolicy,
    traffic: &TrafficSpec,
    convention: RateConvention,
) -> Result<Vec<(DetailedState, f64)>> {
    let n = x.route_totals();
    let mut out = Vec::new();
    for r in 0..traffic.num_routes() {
        for (s, mass) in traffic.routes[r].stages.support() {
            let mut y = x.clone();
            y.add(r, s);
            out.push((y, traffic.arrival_rate(r) * mass));
        }
    }
    if n.iter().all(|v| *v == 0) {
        return Ok(out);
    }
    let allocation = evaluate_policy(policy, &n)?;
    let factor = convention.factor(traffic.delta);
    for r in 0..traffic.num_routes() {
        if n[r] == 0 || allocation[r] == 0.0 {
            continue;
        }
        for (i, &count) in x.stage_counts(r).iter().enumerate() {
            if count == 0 {
                continue;
            }
            let s = i as u32 + 1;
            let rate = factor * allocation[r] * count as f64 / n[r] as f64;
            let mut y = x.clone();
            y.remove(r, s);
            if s >= 2 {
                y.add(r, s - 1);
            }
            out.push((y, rate));
        }
    }
    Ok(out)
}

/// Time-weighted occupancy law of the per-route counts.
pub type EmpiricalDistribution = BTreeMap<Vec<u32>, f64>;

/// Half the L1 distance between two laws over the union of their supports.
pub fn tv_distance(p: &BTreeMap<Vec<u32>, f64>, q: &BTreeMap<Vec<u32>, f64>) -> f64 {
    let mut total = 0.0;
    for (state, a) in p {
        total += (a - q.get(state).copied().unwrap_or(0.0)).abs();
    }
    for (state, b) in q {
        if !p.contains_key(state) {
            total += b.abs();
        }
    }
    (0.5 * total).min(1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimParams {
    pub end_time: f64,
    pub warmup: f64,
    pub seed: u64,
    /// Abort once the number of documents in transfer exceeds this.
    pub max_population: u64,
    pub convention: RateConvention,
}

impl SimParams {
    /// Warmup defaults to 20% of the horizon.
    pub fn new(end_time: f64, seed: u64) -> Self {
        Self {
            end_time,
            warmup: 0.2 * end_time,
            seed,
            max_population: 10_000,
            convention: RateConvention::StageMean,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.warmup >= 0.0) || !(self.end_time > self.warmup) || !self.end_time.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "need end_time > warmup >= 0, got end_time {} warmup {}",
                self.end_time, self.warmup
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutcome {
    pub distribution: EmpiricalDistribution,
    pub events: u64,
    pub post_warmup_events: u64,
    /// Arrivals per route over `[0, end_time]`.
    pub arrivals: Vec<u64>,
    pub departures: Vec<u64>,
    pub observed_time: f64,
    pub seed: u64,
}

impl SimOutcome {
    /// Time-average number of documents on each route after warmup.
    pub fn mean_occupancy(&self) -> Vec<f64> {
        let routes = self.arrivals.len();
        let mut mean = vec![0.0; routes];
        for (n, p) in &self.distribution {
            for r in 0..routes {
                mean[r] += p * n[r] as f64;
            }
        }
        mean
    }
}

/// Runs one replica until `end_time`.
pub fn simulate(
    policy: &dyn AllocationPolicy,
    traffic: &TrafficSpec,
    params: &SimParams,
) -> Result<SimOutcome> {
    traffic.validate()?;
    params.validate()?;
    let routes = traffic.num_routes();
    if policy.num_routes() != routes {
        return Err(Error::DimensionMismatch {
            expected: routes,
            got: policy.num_routes(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let factor = params.convention.factor(traffic.delta);
    let arrival_total: f64 = (0..routes).map(|r| traffic.arrival_rate(r)).sum();

    let mut cache: HashMap<Vec<u32>, Vec<f64>> = HashMap::new();
    let mut state = DetailedState::empty(routes);
    let mut n = vec![0u32; routes];
    let mut population: u64 = 0;
    let mut occupancy: HashMap<Vec<u32>, f64> = HashMap::new();
    let mut arrivals = vec![0u64; routes];
    let mut departures = vec![0u64; routes];
    let mut events = 0u64;
    let mut post_warmup_events = 0u64;
    let mut time = 0.0;

    loop {
        let allocation = match cache.get(&n) {
            Some(x) => x.clone(),
            None => {
                let x = if population == 0 {
                    vec![0.0; routes]
                } else {
                    evaluate_policy(policy, &n)?
                };
                cache.insert(n.clone(), x.clone());
                x
            }
        };
        let service: Vec<f64> = (0..routes)
            .map(|r| if n[r] > 0 { factor * allocation[r] } else { 0.0 })
            .collect();
        let total_rate = arrival_total + service.iter().sum::<f64>();
        let hold: f64 = rng.sample::<f64, _>(Exp1) / total_rate;
        let next = time + hold;

        let lo = time.max(params.warmup);
        let hi = next.min(params.end_time);
        if hi > lo {
            *occupancy.entry(n.clone()).or_insert(0.0) += hi - lo;
        }
        if next >= params.end_time {
            break;
        }
        time = next;
        events += 1;
        if time >= params.warmup {
            post_warmup_events += 1;
        }

        let mut u = rng.random::<f64>() * total_rate;
        let mut chosen = None;
        for r in 0..routes {
            let nu = traffic.arrival_rate(r);
            if u < nu {
                chosen = Some((r, true));
                break;
            }
            u -= nu;
        }
        if chosen.is_none() {
            for r in 0..routes {
                if u < service[r] {
                    chosen = Some((r, false));
                    break;
                }
                u -= service[r];
            }
        }
        // Rounding can leave `u` marginally past the last bucket.
        let (r, is_arrival) = chosen.unwrap_or_else(|| {
            let last = (0..routes).rev().find(|&r| service[r] > 0.0);
            last.map_or((routes - 1, true), |r| (r, false))
        });

        if is_arrival {
            let s = traffic.routes[r].stages.sample(&mut rng);
            state.add(r, s);
            n[r] += 1;
            population += 1;
            arrivals[r] += 1;
            if population > params.max_population {
                return Err(Error::StateExplosion { population, time });
            }
        } else {
            let pick = rng.random_range(0..n[r]);
            let mut acc = 0u32;
            let mut stage = 1u32;
            for (i, &count) in state.stage_counts(r).iter().enumerate() {
                acc += count;
                if pick < acc {
                    stage = i as u32 + 1;
                    break;
                }
            }
            state.remove(r, stage);
            if stage >= 2 {
                state.add(r, stage - 1);
            } else {
                n[r] -= 1;
                population -= 1;
                departures[r] += 1;
            }
        }
    }

    let observed_time = params.end_time - params.warmup;
    let mut distribution = BTreeMap::new();
    for (state, t) in occupancy {
        distribution.insert(state, t / observed_time);
    }
    Ok(SimOutcome {
        distribution,
        events,
        post_warmup_events,
        arrivals,
        departures,
        observed_time,
        seed: params.seed,
    })
}

/// Runs replicas with seeds `seed, seed + 1, ...` on up to `workers` threads.
/// Results come back in replica order.
pub fn simulate_replicas(
    policy: &dyn AllocationPolicy,
    traffic: &TrafficSpec,
    params: &SimParams,
    replicas: usize,
    workers: usize,
) -> Result<Vec<SimOutcome>> {
    let run = || {
        (0..replicas)
            .into_par_iter()
            .map(|i| {
                let mut p = params.clone();
                p.seed = params.seed.wrapping_add(i as u64);
                simulate(policy, traffic, &p)
            })
            .collect::<Vec<_>>()
    };
    let results = if workers == 0 {
        run()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::InvalidParameter(e.to_string()))?
            .install(run)
    };
    results.into_iter().collect()
}

/// Averages replica laws with equal weight, in replica order.
pub fn pooled_distribution(outcomes: &[SimOutcome]) -> EmpiricalDistribution {
    let mut pooled = BTreeMap::new();
    let weight = 1.0 / outcomes.len().max(1) as f64;
    for outcome in outcomes {
        for (state, p) in &outcome.distribution {
            *pooled.entry(state.clone()).or_insert(0.0) += weight * p;
        }
    }
    pooled
}
