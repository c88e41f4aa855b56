//! Round-level measurements and experiment summaries.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::aggregation::{AggregationStrategy, ClientId};
use crate::error::{Error, Result};
use crate::selfish::KMode;
use crate::vector::{angle_degrees, UpdateVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Normal,
    Selfish,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Normal => "normal",
            Role::Selfish => "selfish",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientSpec {
    pub id: ClientId,
    pub role: Role,
    /// Present for selfish clients.
    pub alpha: Option<f64>,
    pub k_mode: Option<KMode>,
}

impl ClientSpec {
    pub fn normal(id: ClientId) -> Self {
        ClientSpec {
            id,
            role: Role::Normal,
            alpha: None,
            k_mode: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Deviation {
    pub norm_ratio: f64,
    pub angle_deg: f64,
}

/// How far the global update of a run with selfish clients strays from the
/// all-normal counterfactual: norm ratio and angle.
pub fn deviation(with_selfish: &UpdateVector, all_normal: &UpdateVector) -> Result<Deviation> {
    let base = all_normal.norm();
    if base == 0.0 || with_selfish.norm() == 0.0 {
        return Err(Error::ZeroNorm("deviation"));
    }
    Ok(Deviation {
        norm_ratio: with_selfish.norm() / base,
        angle_deg: angle_degrees(with_selfish, all_normal)?,
    })
}

pub fn recovery_error(recovered: &UpdateVector, true_update: &UpdateVector) -> Result<f64> {
    recovered.distance(true_update)
}

/// Trace of the per-coordinate population variance of the updates.
pub fn trace_variance(updates: &[UpdateVector]) -> Result<f64> {
    let mean = crate::vector::mean(updates)?;
    let n = updates.len() as f64;
    let mut total = 0.0;
    for u in updates {
        total += u
            .as_slice()
            .iter()
            .zip(mean.as_slice())
            .map(|(x, m)| (x - m) * (x - m))
            .sum::<f64>();
    }
    Ok(total / n)
}

/// `(4 + k) / (4 k)` times the variance trace of the true updates.
pub fn aggregate_error_bound(true_updates: &[UpdateVector], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::invalid("k must be positive"));
    }
    let kf = k as f64;
    Ok((4.0 + kf) / (4.0 * kf) * trace_variance(true_updates)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub strategy: AggregationStrategy,
    pub per_client_accuracy: BTreeMap<ClientId, f64>,
    pub per_client_sent_norm: BTreeMap<ClientId, f64>,
    pub suspects: BTreeSet<ClientId>,
    pub betas: BTreeMap<ClientId, f64>,
    pub global_update_norm: f64,
    pub deviation_norm_ratio: Option<f64>,
    pub deviation_angle_deg: Option<f64>,
    pub recovery_errors: Option<BTreeMap<ClientId, f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub count: usize,
}

impl GroupStats {
    pub fn from_values(values: &[f64]) -> Option<GroupStats> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Some(GroupStats {
            mean,
            std: var.sqrt(),
            count: values.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub round: usize,
    pub global_update_norm: f64,
    pub deviation_norm_ratio: Option<f64>,
    pub deviation_angle_deg: Option<f64>,
    pub num_suspects: usize,
    pub normal_accuracy: Option<f64>,
    pub selfish_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub fingerprint: String,
    pub strategy: AggregationStrategy,
    pub rounds_completed: usize,
    pub diverged: bool,
    pub divergence: Option<String>,
    /// Final-round accuracy over normal clients.
    pub normal: Option<GroupStats>,
    /// Final-round accuracy over selfish clients; absent without any.
    pub selfish: Option<GroupStats>,
    /// Final-round accuracy of the same normal clients in the all-normal twin run.
    pub counterfactual_normal: Option<GroupStats>,
    pub series: Vec<SeriesPoint>,
}

fn group_accuracy(record: &RoundRecord, ids: &[ClientId]) -> Vec<f64> {
    ids.iter()
        .filter_map(|c| record.per_client_accuracy.get(c).copied())
        .collect()
}

/// Final-round mean and population std of accuracy per client group, plus
/// the per-round scalar series. Fingerprint and divergence fields are left
/// for the caller.
pub fn group_stats(records: &[RoundRecord], roster: &[ClientSpec]) -> Result<ExperimentSummary> {
    let last = records.last().ok_or(Error::Empty("group_stats"))?;
    let ids_of = |role: Role| -> Vec<ClientId> { roster.iter().filter(|c| c.role == role).map(|c| c.id).collect() };
    let normal_ids = ids_of(Role::Normal);
    let selfish_ids = ids_of(Role::Selfish);

    let series = records
        .iter()
        .map(|r| SeriesPoint {
            round: r.round,
            global_update_norm: r.global_update_norm,
            deviation_norm_ratio: r.deviation_norm_ratio,
            deviation_angle_deg: r.deviation_angle_deg,
            num_suspects: r.suspects.len(),
            normal_accuracy: GroupStats::from_values(&group_accuracy(r, &normal_ids)).map(|g| g.mean),
            selfish_accuracy: GroupStats::from_values(&group_accuracy(r, &selfish_ids)).map(|g| g.mean),
        })
        .collect();

    Ok(ExperimentSummary {
        fingerprint: String::new(),
        strategy: last.strategy,
        rounds_completed: records.len(),
        diverged: false,
        divergence: None,
        normal: GroupStats::from_values(&group_accuracy(last, &normal_ids)),
        selfish: GroupStats::from_values(&group_accuracy(last, &selfish_ids)),
        counterfactual_normal: None,
        series,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> UpdateVector {
        UpdateVector::new(xs.to_vec()).unwrap()
    }

    fn record(acc: &[(ClientId, f64)]) -> RoundRecord {
        RoundRecord {
            round: 1,
            strategy: AggregationStrategy::FedAvg,
            per_client_accuracy: acc.iter().cloned().collect(),
            per_client_sent_norm: BTreeMap::new(),
            suspects: BTreeSet::new(),
            betas: BTreeMap::new(),
            global_update_norm: 1.0,
            deviation_norm_ratio: None,
            deviation_angle_deg: None,
            recovery_errors: None,
        }
    }

    #[test]
    fn deviation_examples() {
        let x = v(&[0.3, -0.4]);
        let d = deviation(&x, &x).unwrap();
        assert_eq!(d.norm_ratio, 1.0);
        assert!(d.angle_deg.abs() < 1e-6);
        let d = deviation(&x.scale(2.0), &x).unwrap();
        assert_eq!(d.norm_ratio, 2.0);
        let d = deviation(&v(&[0.0, 1.0]), &v(&[1.0, 0.0])).unwrap();
        assert_eq!((d.norm_ratio, d.angle_deg), (1.0, 90.0));
        assert!(deviation(&x, &UpdateVector::zeros(2)).is_err());
    }

    #[test]
    fn recovery_error_examples() {
        let t = v(&[1.0, 2.0, 3.0]);
        assert_eq!(recovery_error(&t, &t).unwrap(), 0.0);
        let r = v(&[1.25, 2.0, 3.0]);
        assert_eq!(recovery_error(&r, &t).unwrap(), 0.25);
    }

    #[test]
    fn aggregate_error_bound_examples() {
        let same = vec![v(&[1.0, 2.0]); 4];
        assert_eq!(aggregate_error_bound(&same, 4).unwrap(), 0.0);
        // two points at +-1 on one axis: variance trace 1
        let pts = [v(&[1.0, 0.0]), v(&[-1.0, 0.0])];
        assert!((aggregate_error_bound(&pts, 50).unwrap() - 0.27).abs() < 1e-15);
        let coeff = |k: f64| (4.0 + k) / (4.0 * k);
        assert!((coeff(1e12) - 0.25).abs() < 1e-11);
    }

    #[test]
    fn group_stats_examples() {
        let roster = vec![ClientSpec::normal(0), ClientSpec::normal(1)];
        let s = group_stats(&[record(&[(0, 0.4), (1, 0.6)])], &roster).unwrap();
        let n = s.normal.unwrap();
        assert!((n.mean - 0.5).abs() < 1e-15);
        assert!((n.std - 0.1).abs() < 1e-15);
        assert!(s.selfish.is_none());

        let single = group_stats(&[record(&[(0, 0.7)])], &roster[..1]).unwrap();
        assert_eq!(single.normal.unwrap().std, 0.0);

        let mixed = vec![
            ClientSpec::normal(0),
            ClientSpec {
                id: 1,
                role: Role::Selfish,
                alpha: Some(0.5),
                k_mode: Some(KMode::Known(2)),
            },
        ];
        let s = group_stats(&[record(&[(0, 0.4), (1, 0.9)])], &mixed).unwrap();
        assert_eq!(s.selfish.unwrap().mean, 0.9);
        assert_eq!(s.series[0].normal_accuracy, Some(0.4));
        assert!(group_stats(&[], &mixed).is_err());
    }
}
