//! Potential functions and the insensitive allocations they induce.
//!
//! A potential `Phi` on the nonnegative lattice with `Phi(0) = 1` defines the
//! allocation `x_r(n) = Phi(n - e_r) / Phi(n)`. Values are kept as `log Phi`
//! on a memoised box `0 <= n_r <= cap_r`, filled in an order where every
//! `n - e_r` precedes `n`. `Phi` is zero off the lattice, so `log Phi = -inf`
//! for any state with a negative coordinate.

use crate::capacity::{AllocationVector, CapacityRegion};
use crate::error::{Error, Result};
use crate::policy::AllocationPolicy;

/// Upper bound on memoised box entries (about 2 GiB of `f64`).
const MAX_BOX_ENTRIES: usize = 1 << 28;

#[derive(Debug, Clone, PartialEq)]
pub enum PotentialKind {
    BalancedFairness,
    Table,
    Counterexample { alpha: f64, base: Box<PotentialKind> },
}

#[derive(Debug, Clone)]
pub struct LogPotential {
    kind: PotentialKind,
    cap: Vec<u32>,
    strides: Vec<usize>,
    values: Vec<f64>,
    region: Option<CapacityRegion>,
}

#[derive(Debug, Clone)]
pub struct CounterexampleParams {
    alpha: f64,
    base: LogPotential,
}

impl CounterexampleParams {
    pub fn new(base: LogPotential, alpha: f64) -> Result<Self> {
        if !(alpha > 1.0) || !alpha.is_finite() {
            return Err(Error::InvalidAlpha(alpha));
        }
        Ok(Self { alpha, base })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn base(&self) -> &LogPotential {
        &self.base
    }
}

/// `floor(log2 |n|)` for `|n| >= 1`, by integer arithmetic.
pub fn bucket_index(total: u64) -> Result<u32> {
    if total == 0 {
        return Err(Error::UndefinedAtZero);
    }
    Ok(63 - total.leading_zeros())
}

pub fn state_total(n: &[u32]) -> u64 {
    n.iter().map(|&v| v as u64).sum()
}

fn strides_for(cap: &[u32]) -> Result<(Vec<usize>, usize)> {
    let mut strides = vec![0; cap.len()];
    let mut size: usize = 1;
    for r in (0..cap.len()).rev() {
        strides[r] = size;
        size = size
            .checked_mul(cap[r] as usize + 1)
            .filter(|s| *s <= MAX_BOX_ENTRIES)
            .ok_or_else(|| Error::InvalidParameter(format!("domain box {cap:?} is too large")))?;
    }
    Ok((strides, size))
}

/// Row-major odometer over a box, last coordinate fastest.
fn advance(n: &mut [u32], cap: &[u32]) {
    for r in (0..n.len()).rev() {
        if n[r] < cap[r] {
            n[r] += 1;
            return;
        }
        n[r] = 0;
    }
}

fn log_sum_exp(terms: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = terms.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.map(|t| (t - max).exp()).sum::<f64>().ln()
}

impl LogPotential {
    /// Balanced fairness: `Phi(n) = max_l sum_r A_lr Phi(n - e_r) / C_l`.
    pub fn balanced_fairness(region: &CapacityRegion, cap: Vec<u32>) -> Result<Self> {
        region.ensure_valid()?;
        if cap.len() != region.num_routes() {
            return Err(Error::DimensionMismatch {
                expected: region.num_routes(),
                got: cap.len(),
            });
        }
        let (strides, size) = strides_for(&cap)?;
        let links: Vec<(f64, Vec<(usize, f64)>)> = (0..region.num_links())
            .map(|l| {
                let routes = region
                    .routes_on(l)
                    .map(|r| (r, region.coefficient(l, r).ln()))
                    .collect();
                (region.capacities()[l].ln(), routes)
            })
            .collect();

        let mut values = vec![0.0; size];
        let mut n = vec![0u32; cap.len()];
        let mut terms = Vec::with_capacity(cap.len());
        for idx in 1..size {
            advance(&mut n, &cap);
            let mut best = f64::NEG_INFINITY;
            for (log_c, routes) in &links {
                terms.clear();
                terms.extend(
                    routes
                        .iter()
                        .filter(|(r, _)| n[*r] > 0)
                        .map(|(r, log_a)| values[idx - strides[*r]] + log_a),
                );
                let candidate = log_sum_exp(terms.iter().copied()) - log_c;
                if candidate > best {
                    best = candidate;
                }
            }
            values[idx] = best;
        }
        Ok(Self {
            kind: PotentialKind::BalancedFairness,
            cap,
            strides,
            values,
            region: Some(region.clone()),
        })
    }

    /// A user-supplied table of `log Phi` over the box, row-major with the
    /// last coordinate fastest.
    pub fn from_table(
        cap: Vec<u32>,
        log_phi: Vec<f64>,
        region: Option<CapacityRegion>,
    ) -> Result<Self> {
        let (strides, size) = strides_for(&cap)?;
        if log_phi.len() != size {
            return Err(Error::DimensionMismatch {
                expected: size,
                got: log_phi.len(),
            });
        }
        if let Some(region) = &region {
            if region.num_routes() != cap.len() {
                return Err(Error::DimensionMismatch {
                    expected: region.num_routes(),
                    got: cap.len(),
                });
            }
        }
        if log_phi[0] != 0.0 {
            return Err(Error::InvalidTable(format!(
                "log Phi(0) must be 0, got {}",
                log_phi[0]
            )));
        }
        if let Some(i) = log_phi.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidTable(format!("entry {i} is not finite")));
        }
        Ok(Self {
            kind: PotentialKind::Table,
            cap,
            strides,
            values: log_phi,
            region,
        })
    }

    /// `Phi_hat(n) = alpha^k Phi(n)` on the bucket `2^k <= |n| < 2^(k+1)`,
    /// with `Phi_hat(0) = 1`.
    pub fn counterexample(params: &CounterexampleParams) -> Self {
        let base = &params.base;
        let log_alpha = params.alpha.ln();
        let mut values = base.values.clone();
        let mut n = vec![0u32; base.cap.len()];
        for value in values.iter_mut().skip(1) {
            advance(&mut n, &base.cap);
            let k = bucket_index(state_total(&n)).expect("nonzero state");
            *value += k as f64 * log_alpha;
        }
        Self {
            kind: PotentialKind::Counterexample {
                alpha: params.alpha,
                base: Box::new(base.kind.clone()),
            },
            cap: base.cap.clone(),
            strides: base.strides.clone(),
            values,
            region: base.region.clone(),
        }
    }

    pub fn kind(&self) -> &PotentialKind {
        &self.kind
    }

    pub fn cap(&self) -> &[u32] {
        &self.cap
    }

    pub fn num_routes(&self) -> usize {
        self.cap.len()
    }

    pub fn region(&self) -> Option<&CapacityRegion> {
        self.region.as_ref()
    }

    /// Largest `m` such that every state with `|n| <= m` lies in the box.
    pub fn max_full_shell(&self) -> u64 {
        self.cap.iter().map(|&c| c as u64).min().unwrap_or(0)
    }

    fn index(&self, n: &[u32]) -> Result<usize> {
        if n.len() != self.cap.len() {
            return Err(Error::DimensionMismatch {
                expected: self.cap.len(),
                got: n.len(),
            });
        }
        if n.iter().zip(&self.cap).any(|(v, c)| v > c) {
            return Err(Error::OutsideDomainBox {
                state: n.to_vec(),
                cap: self.cap.clone(),
            });
        }
        Ok(n.iter().zip(&self.strides).map(|(&v, s)| v as usize * s).sum())
    }

    /// `log Phi(n)` for a lattice state inside the box.
    pub fn log_phi(&self, n: &[u32]) -> Result<f64> {
        Ok(self.values[self.index(n)?])
    }

    /// `log Phi(n)` for any integer vector; `-inf` off the nonnegative lattice.
    pub fn log_phi_signed(&self, n: &[i64]) -> Result<f64> {
        if n.iter().any(|v| *v < 0) {
            return Ok(f64::NEG_INFINITY);
        }
        let n: Vec<u32> = n
            .iter()
            .map(|&v| u32::try_from(v).unwrap_or(u32::MAX))
            .collect();
        self.log_phi(&n)
    }

    /// `x_r(n) = exp(log Phi(n - e_r) - log Phi(n))`, zero where `n_r = 0`.
    pub fn allocation(&self, n: &[u32]) -> Result<AllocationVector> {
        let idx = self.index(n)?;
        if n.iter().all(|v| *v == 0) {
            return Err(Error::ZeroState);
        }
        let here = self.values[idx];
        Ok(AllocationVector(
            n.iter()
                .zip(&self.strides)
                .map(|(&v, s)| {
                    if v == 0 {
                        0.0
                    } else {
                        (self.values[idx - s] - here).exp()
                    }
                })
                .collect(),
        ))
    }

    /// Visits every state in the box with its `log Phi`, in storage order.
    pub fn for_each_state(&self, mut f: impl FnMut(&[u32], f64)) {
        let mut n = vec![0u32; self.cap.len()];
        for (i, value) in self.values.iter().enumerate() {
            if i > 0 {
                advance(&mut n, &self.cap);
            }
            f(&n, *value);
        }
    }
}

impl AllocationPolicy for LogPotential {
    fn num_routes(&self) -> usize {
        self.cap.len()
    }

    fn allocate(&self, n: &[u32]) -> Result<Vec<f64>> {
        if n.iter().all(|v| *v == 0) {
            return Ok(vec![0.0; n.len()]);
        }
        Ok(self.allocation(n)?.0)
    }
}

pub fn balanced_fairness_log_phi(phi: &LogPotential, n: &[u32]) -> Result<f64> {
    phi.log_phi(n)
}

pub fn allocation_from_potential(phi: &LogPotential, n: &[u32]) -> Result<AllocationVector> {
    phi.allocation(n)
}

/// `k log(alpha) + log Phi(n)` with `k = floor(log2 |n|)`; zero at `n = 0`.
pub fn counterexample_log_phi(params: &CounterexampleParams, n: &[u32]) -> Result<f64> {
    let base = params.base.log_phi(n)?;
    let total = state_total(n);
    if total == 0 {
        return Ok(0.0);
    }
    Ok(base + bucket_index(total)? as f64 * params.alpha.ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// `log(|n|! / prod n_r!) - |n| log C`.
    fn single_link_log_phi(n: &[u32], capacity: f64) -> f64 {
        let lf = |k: u32| (1..=k).map(|i| (i as f64).ln()).sum::<f64>();
        let total: u32 = n.iter().sum();
        lf(total) - n.iter().map(|&k| lf(k)).sum::<f64>() - total as f64 * capacity.ln()
    }

    #[test]
    fn bf_base_case_and_single_route() {
        let region = CapacityRegion::single_link(1.0, 1).unwrap();
        let phi = LogPotential::balanced_fairness(&region, vec![5]).unwrap();
        assert_eq!(phi.log_phi(&[0]).unwrap(), 0.0);
        assert_abs_diff_eq!(phi.log_phi(&[3]).unwrap(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn bf_two_routes_capacity_two() {
        let region = CapacityRegion::single_link(2.0, 2).unwrap();
        let phi = LogPotential::balanced_fairness(&region, vec![3, 3]).unwrap();
        assert_abs_diff_eq!(
            phi.log_phi(&[1, 1]).unwrap(),
            -std::f64::consts::LN_2,
            epsilon = 1e-15
        );
        phi.for_each_state(|n, v| {
            assert_abs_diff_eq!(v, single_link_log_phi(n, 2.0), epsilon = 1e-12);
        });
    }

    #[test]
    fn outside_box_and_off_lattice() {
        let region = CapacityRegion::single_link(1.0, 2).unwrap();
        let phi = LogPotential::balanced_fairness(&region, vec![2, 2]).unwrap();
        assert!(matches!(phi.log_phi(&[3, 0]), Err(Error::OutsideDomainBox { .. })));
        assert_eq!(phi.log_phi_signed(&[-1, 1]).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn allocation_examples() {
        let region = CapacityRegion::single_link(1.0, 2).unwrap();
        let phi = LogPotential::balanced_fairness(&region, vec![4, 4]).unwrap();
        let x = phi.allocation(&[2, 1]).unwrap();
        assert_abs_diff_eq!(x.0[0], 2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(x.0[1], 1.0 / 3.0, epsilon = 1e-12);
        assert_eq!(phi.allocation(&[0, 3]).unwrap().0[0], 0.0);
        assert_eq!(phi.allocation(&[0, 0]), Err(Error::ZeroState));
    }

    #[test]
    fn bucket_examples() {
        assert_eq!(bucket_index(1).unwrap(), 0);
        assert_eq!(bucket_index(4).unwrap(), 2);
        assert_eq!(bucket_index(7).unwrap(), 2);
        assert_eq!(bucket_index(8).unwrap(), 3);
        assert_eq!(bucket_index(0), Err(Error::UndefinedAtZero));
    }

    #[test]
    fn counterexample_examples() {
        let region = CapacityRegion::single_link(1.0, 2).unwrap();
        let base = LogPotential::balanced_fairness(&region, vec![8, 8]).unwrap();
        let params = CounterexampleParams::new(base.clone(), 2.0).unwrap();
        assert_eq!(counterexample_log_phi(&params, &[0, 0]).unwrap(), 0.0);
        let x = base.log_phi(&[3, 2]).unwrap();
        assert_abs_diff_eq!(
            counterexample_log_phi(&params, &[3, 2]).unwrap(),
            x + 2.0 * 2f64.ln(),
            epsilon = 1e-14
        );
        let hat = LogPotential::counterexample(&params);
        assert_eq!(hat.log_phi(&[3, 2]).unwrap(), counterexample_log_phi(&params, &[3, 2]).unwrap());
        let at4 = hat.allocation(&[2, 2]).unwrap();
        let base4 = base.allocation(&[2, 2]).unwrap();
        for (a, b) in at4.0.iter().zip(&base4.0) {
            assert_abs_diff_eq!(*a, b / 2.0, epsilon = 1e-14);
        }
        assert!(matches!(
            CounterexampleParams::new(base, 1.0),
            Err(Error::InvalidAlpha(_))
        ));
    }

    #[test]
    fn table_requires_unit_origin() {
        assert!(LogPotential::from_table(vec![1], vec![0.5, 0.0], None).is_err());
        let t = LogPotential::from_table(vec![1], vec![0.0, -1.0], None).unwrap();
        assert_abs_diff_eq!(t.allocation(&[1]).unwrap().0[0], 1f64.exp(), epsilon = 1e-14);
    }
}
