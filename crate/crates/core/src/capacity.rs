//! Schedulable region as a link-capacity polytope `{x >= 0 : A x <= C}`.
//!
//! Rows of the incidence matrix are links, columns are routes. The region is
//! immutable once built and can be shared freely between threads.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rate vector indexed by route.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationVector(pub Vec<f64>);

impl AllocationVector {
    pub fn new(rates: Vec<f64>) -> Result<Self> {
        if let Some(bad) = rates.iter().position(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::InvalidParameter(format!(
                "allocation entry {bad} is {}",
                rates[bad]
            )));
        }
        Ok(Self(rates))
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn rates(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// L1 distance to another vector of the same length.
    pub fn l1_distance(&self, other: &[f64]) -> f64 {
        self.0.iter().zip(other).map(|(a, b)| (a - b).abs()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub id: String,
    pub capacity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouteSpec {
    pub id: String,
    pub links: Vec<String>,
}

/// On-disk network description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkFile {
    pub links: Vec<LinkSpec>,
    pub routes: Vec<RouteSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CapacityRegion {
    route_ids: Vec<String>,
    link_ids: Vec<String>,
    /// `incidence[l][r]`, nonnegative.
    incidence: Vec<Vec<f64>>,
    capacities: Vec<f64>,
}

/// Result of [`CapacityRegion::validate`]; empty `violations` means valid.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl CapacityRegion {
    /// Builds a region, checking only that dimensions agree. Use
    /// [`CapacityRegion::validate`] for the structural invariants.
    pub fn new(
        route_ids: Vec<String>,
        link_ids: Vec<String>,
        incidence: Vec<Vec<f64>>,
        capacities: Vec<f64>,
    ) -> Result<Self> {
        if incidence.len() != link_ids.len() {
            return Err(Error::DimensionMismatch {
                expected: link_ids.len(),
                got: incidence.len(),
            });
        }
        if capacities.len() != link_ids.len() {
            return Err(Error::DimensionMismatch {
                expected: link_ids.len(),
                got: capacities.len(),
            });
        }
        for row in &incidence {
            if row.len() != route_ids.len() {
                return Err(Error::DimensionMismatch {
                    expected: route_ids.len(),
                    got: row.len(),
                });
            }
        }
        Ok(Self {
            route_ids,
            link_ids,
            incidence,
            capacities,
        })
    }

    /// Builds and validates in one step.
    pub fn checked(
        route_ids: Vec<String>,
        link_ids: Vec<String>,
        incidence: Vec<Vec<f64>>,
        capacities: Vec<f64>,
    ) -> Result<Self> {
        let region = Self::new(route_ids, link_ids, incidence, capacities)?;
        region.ensure_valid()?;
        Ok(region)
    }

    /// One link of capacity `capacity` shared by `routes` routes.
    pub fn single_link(capacity: f64, routes: usize) -> Result<Self> {
        Self::checked(
            (0..routes).map(|r| format!("r{r}")).collect(),
            vec!["l0".into()],
            vec![vec![1.0; routes]],
            vec![capacity],
        )
    }

    /// Two unit links; route 0 crosses both, routes 1 and 2 use one each.
    pub fn line_network() -> Self {
        Self::checked(
            vec!["r0".into(), "r1".into(), "r2".into()],
            vec!["l0".into(), "l1".into()],
            vec![vec![1.0, 1.0, 0.0], vec![1.0, 0.0, 1.0]],
            vec![1.0, 1.0],
        )
        .expect("line network is well formed")
    }

    pub fn from_network(file: &NetworkFile) -> Result<Self> {
        let mut link_index = HashMap::new();
        for (l, link) in file.links.iter().enumerate() {
            if link_index.insert(link.id.as_str(), l).is_some() {
                return Err(Error::InvalidRegion(vec![format!(
                    "duplicate link id {}",
                    link.id
                )]));
            }
        }
        let mut seen_routes = HashMap::new();
        let mut incidence = vec![vec![0.0; file.routes.len()]; file.links.len()];
        for (r, route) in file.routes.iter().enumerate() {
            if seen_routes.insert(route.id.as_str(), r).is_some() {
                return Err(Error::InvalidRegion(vec![format!(
                    "duplicate route id {}",
                    route.id
                )]));
            }
            for link in &route.links {
                let l = *link_index.get(link.as_str()).ok_or_else(|| {
                    Error::InvalidRegion(vec![format!(
                        "route {} references unknown link {link}",
                        route.id
                    )])
                })?;
                incidence[l][r] = 1.0;
            }
        }
        Self::checked(
            file.routes.iter().map(|r| r.id.clone()).collect(),
            file.links.iter().map(|l| l.id.clone()).collect(),
            incidence,
            file.links.iter().map(|l| l.capacity).collect(),
        )
    }

    pub fn to_network(&self) -> NetworkFile {
        NetworkFile {
            links: self
                .link_ids
                .iter()
                .zip(&self.capacities)
                .map(|(id, &capacity)| LinkSpec {
                    id: id.clone(),
                    capacity,
                })
                .collect(),
            routes: (0..self.num_routes())
                .map(|r| RouteSpec {
                    id: self.route_ids[r].clone(),
                    links: (0..self.num_links())
                        .filter(|&l| self.incidence[l][r] > 0.0)
                        .map(|l| self.link_ids[l].clone())
                        .collect(),
                })
                .collect(),
        }
    }

    pub fn num_routes(&self) -> usize {
        self.route_ids.len()
    }

    pub fn num_links(&self) -> usize {
        self.link_ids.len()
    }

    pub fn route_ids(&self) -> &[String] {
        &self.route_ids
    }

    pub fn link_ids(&self) -> &[String] {
        &self.link_ids
    }

    pub fn capacities(&self) -> &[f64] {
        &self.capacities
    }

    pub fn coefficient(&self, link: usize, route: usize) -> f64 {
        self.incidence[link][route]
    }

    /// Routes with a positive coefficient on `link`.
    pub fn routes_on(&self, link: usize) -> impl Iterator<Item = usize> + '_ {
        self.incidence[link]
            .iter()
            .enumerate()
            .filter(|(_, a)| **a > 0.0)
            .map(|(r, _)| r)
    }

    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        for (l, c) in self.capacities.iter().enumerate() {
            if !(*c > 0.0) || !c.is_finite() {
                violations.push(format!("degenerate link {}", self.link_ids[l]));
            }
        }
        for l in 0..self.num_links() {
            if self.incidence[l].iter().any(|a| !(*a >= 0.0) || !a.is_finite()) {
                violations.push(format!(
                    "negative coefficient on link {}",
                    self.link_ids[l]
                ));
            }
        }
        for r in 0..self.num_routes() {
            if !(0..self.num_links()).any(|l| self.incidence[l][r] > 0.0) {
                violations.push(format!("unbounded route {}", self.route_ids[r]));
            }
        }
        ValidationReport { violations }
    }

    pub fn ensure_valid(&self) -> Result<()> {
        let report = self.validate();
        if report.is_valid() {
            Ok(())
        } else {
            Err(Error::InvalidRegion(report.violations))
        }
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.num_routes() {
            return Err(Error::DimensionMismatch {
                expected: self.num_routes(),
                got: len,
            });
        }
        Ok(())
    }

    /// Per-link load `(A x)_l`.
    pub fn link_loads(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x.len())?;
        Ok(self
            .incidence
            .iter()
            .map(|row| row.iter().zip(x).map(|(a, v)| a * v).sum())
            .collect())
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> Result<bool> {
        let loads = self.link_loads(x)?;
        Ok(x.iter().all(|v| *v >= -tol)
            && loads
                .iter()
                .zip(&self.capacities)
                .all(|(load, c)| *load <= c + tol))
    }

    /// Strict slack on every link row; zero coordinates are allowed.
    pub fn in_interior(&self, rho: &[f64]) -> Result<bool> {
        let loads = self.link_loads(rho)?;
        Ok(rho.iter().all(|v| *v >= 0.0)
            && loads.iter().zip(&self.capacities).all(|(load, c)| load < c))
    }

    /// Largest `max_l (A x)_l / C_l`.
    pub fn max_utilisation(&self, x: &[f64]) -> Result<f64> {
        let loads = self.link_loads(x)?;
        Ok(loads
            .iter()
            .zip(&self.capacities)
            .map(|(load, c)| load / c)
            .fold(f64::NEG_INFINITY, f64::max))
    }
}
