//! Server aggregation strategies.
//!
//! `RflSelf` flags every client whose update norm exceeds the median norm,
//! replaces each flagged update with the point on the segment towards the
//! coordinate-wise median whose norm equals the median norm, and averages.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::training::ModelParams;
use crate::vector::{self, marginal_median, median_norm, UpdateVector};

pub type ClientId = usize;

/// Slack allowed when a root of the norm equation lands just outside `[0, 1]`.
const ROOT_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationStrategy {
    FedAvg,
    MarginalMedian,
    Downscale,
    RflSelf,
}

impl AggregationStrategy {
    pub const ALL: [AggregationStrategy; 4] = [
        AggregationStrategy::FedAvg,
        AggregationStrategy::MarginalMedian,
        AggregationStrategy::Downscale,
        AggregationStrategy::RflSelf,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AggregationStrategy::FedAvg => "fed_avg",
            AggregationStrategy::MarginalMedian => "marginal_median",
            AggregationStrategy::Downscale => "downscale",
            AggregationStrategy::RflSelf => "rfl_self",
        }
    }
}

impl fmt::Display for AggregationStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AggregationStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AggregationStrategy::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown strategy {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregationOutcome {
    pub global_update: UpdateVector,
    pub suspects: BTreeSet<ClientId>,
    pub betas: BTreeMap<ClientId, f64>,
    pub recovered: BTreeMap<ClientId, UpdateVector>,
    /// Median update norm, for strategies that compute it.
    pub median_norm: Option<f64>,
}

/// Sorts by client id and checks ids are unique and dimensions agree.
fn sorted_updates(updates: &[(ClientId, UpdateVector)]) -> Result<Vec<(ClientId, &UpdateVector)>> {
    if updates.is_empty() {
        return Err(Error::Empty("aggregate"));
    }
    let mut sorted: Vec<(ClientId, &UpdateVector)> = updates.iter().map(|(c, u)| (*c, u)).collect();
    sorted.sort_by_key(|(c, _)| *c);
    let dim = sorted[0].1.dim();
    for pair in sorted.windows(2) {
        if pair[0].0 == pair[1].0 {
            return Err(Error::invalid(format!("duplicate client id {}", pair[0].0)));
        }
    }
    for (_, u) in &sorted {
        if u.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: u.dim(),
            });
        }
    }
    Ok(sorted)
}

/// Clients whose update norm strictly exceeds the median norm.
pub fn flag_suspects(updates: &[(ClientId, UpdateVector)]) -> Result<BTreeSet<ClientId>> {
    let sorted = sorted_updates(updates)?;
    let vs: Vec<UpdateVector> = sorted.iter().map(|(_, u)| (*u).clone()).collect();
    let n_med = median_norm(&vs)?;
    Ok(suspects_above(&sorted, n_med))
}

fn suspects_above(sorted: &[(ClientId, &UpdateVector)], n_med: f64) -> BTreeSet<ClientId> {
    sorted
        .iter()
        .filter(|(_, u)| u.norm() > n_med)
        .map(|(c, _)| *c)
        .collect()
}

/// Mixing weight `beta` with `||beta * delta_hat + (1 - beta) * delta_med|| = n_med`.
///
/// Solves `a beta^2 + b beta + c = 0` with `a = ||delta_hat - delta_med||^2`,
/// `b = 2 <delta_med, delta_hat - delta_med>`, `c = ||delta_med||^2 - n_med^2`
/// and returns the largest root in `[0, 1]`, or 0 when there is none.
pub fn solve_beta(delta_hat: &UpdateVector, delta_med: &UpdateVector, n_med: f64) -> Result<f64> {
    if !(n_med >= 0.0) || !n_med.is_finite() {
        return Err(Error::invalid(format!(
            "median norm must be finite and >= 0, got {n_med}"
        )));
    }
    if !(delta_hat.norm() > n_med) {
        return Err(Error::invalid(format!(
            "beta is only defined for updates above the median norm ({} <= {n_med})",
            delta_hat.norm()
        )));
    }
    let u = delta_hat.try_sub(delta_med)?;
    let a = u.dot(&u)?;
    if a == 0.0 {
        // the mix is constant at ||delta_med|| != n_med: no root
        return Ok(0.0);
    }
    let b = 2.0 * delta_med.dot(&u)?;
    let c = delta_med.dot(delta_med)? - n_med * n_med;

    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return Ok(0.0);
    }
    let q = -0.5 * (b + b.signum() * disc.sqrt());
    let r1 = q / a;
    let r2 = if q != 0.0 { c / q } else { r1 };
    Ok([r1, r2]
        .into_iter()
        .filter(|r| (-ROOT_SLACK..=1.0 + ROOT_SLACK).contains(r))
        // + 0.0 folds a -0.0 root into +0.0
        .map(|r| r.clamp(0.0, 1.0) + 0.0)
        .fold(0.0, f64::max))
}

/// `beta * delta_hat + (1 - beta) * delta_med`.
pub fn recover_update(delta_hat: &UpdateVector, delta_med: &UpdateVector, beta: f64) -> Result<UpdateVector> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::invalid(format!("beta must lie in [0, 1], got {beta}")));
    }
    let mut out = delta_hat.scale(beta);
    out.axpy(1.0 - beta, delta_med)?;
    Ok(out)
}

/// Rescales `delta_hat` to norm `n_med`, keeping its direction.
pub fn downscale_update(delta_hat: &UpdateVector, n_med: f64) -> Result<UpdateVector> {
    let norm = delta_hat.norm();
    if norm == 0.0 {
        return Err(Error::ZeroNorm("downscale_update"));
    }
    Ok(delta_hat.scale(n_med / norm))
}

pub fn aggregate(updates: &[(ClientId, UpdateVector)], strategy: AggregationStrategy) -> Result<AggregationOutcome> {
    let sorted = sorted_updates(updates)?;
    let vs: Vec<UpdateVector> = sorted.iter().map(|(_, u)| (*u).clone()).collect();
    let k = sorted.len() as f64;

    let mut outcome = AggregationOutcome {
        global_update: UpdateVector::zeros(vs[0].dim()),
        suspects: BTreeSet::new(),
        betas: BTreeMap::new(),
        recovered: BTreeMap::new(),
        median_norm: None,
    };

    match strategy {
        AggregationStrategy::FedAvg => {
            outcome.global_update = vector::mean(&vs)?;
        }
        AggregationStrategy::MarginalMedian => {
            outcome.global_update = marginal_median(&vs)?;
        }
        AggregationStrategy::Downscale => {
            let n_med = median_norm(&vs)?;
            outcome.suspects = suspects_above(&sorted, n_med);
            let mut replaced = Vec::with_capacity(vs.len());
            for (c, u) in &sorted {
                if outcome.suspects.contains(c) {
                    let r = downscale_update(u, n_med)?;
                    outcome.recovered.insert(*c, r.clone());
                    replaced.push(r);
                } else {
                    replaced.push((*u).clone());
                }
            }
            outcome.global_update = vector::mean(&replaced)?;
            outcome.median_norm = Some(n_med);
        }
        AggregationStrategy::RflSelf => {
            let n_med = median_norm(&vs)?;
            let delta_med = marginal_median(&vs)?;
            outcome.suspects = suspects_above(&sorted, n_med);

            let dim = vs[0].dim();
            let mut kept = UpdateVector::zeros(dim);
            let mut recovered_sum = UpdateVector::zeros(dim);
            for (c, u) in &sorted {
                if outcome.suspects.contains(c) {
                    let beta = solve_beta(u, &delta_med, n_med)?;
                    let r = recover_update(u, &delta_med, beta)?;
                    recovered_sum.axpy(1.0, &r)?;
                    outcome.betas.insert(*c, beta);
                    outcome.recovered.insert(*c, r);
                } else {
                    kept.axpy(1.0, u)?;
                }
            }
            let total = kept.try_add(&recovered_sum)?;
            outcome.global_update = UpdateVector::from_raw(total.into_inner().into_iter().map(|x| x / k).collect());
            outcome.median_norm = Some(n_med);
        }
    }
    Ok(outcome)
}

/// `w + delta` as a new model.
pub fn apply_update(w: &ModelParams, delta: &UpdateVector) -> Result<ModelParams> {
    w.with_weights(w.weights().try_add(delta)?)
}
