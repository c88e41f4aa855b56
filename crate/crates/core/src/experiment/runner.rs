use std::collections::BTreeMap;

use rayon::prelude::*;

use super::config::{ExperimentConfig, TEST_FRACTION};
use super::seed::{derive_seed, stream_seed, HOLDOUT_STREAM, INIT_STREAM};
use crate::aggregation::{aggregate, apply_update, AggregationStrategy, ClientId};
use crate::error::{Error, Result};
use crate::metrics::{deviation, group_stats, recovery_error, ClientSpec, ExperimentSummary, RoundRecord};
use crate::selfish::SelfishState;
use crate::training::{evaluate, local_train, partition_two_class, split_holdout, Architecture, Dataset, ModelParams};
use crate::vector::UpdateVector;

#[derive(Debug, Clone)]
pub struct ClientData {
    pub train: Dataset,
    pub test: Dataset,
}

/// Per-client data and the shared model shape.
#[derive(Debug, Clone)]
pub struct Federation {
    pub architecture: Architecture,
    pub clients: Vec<ClientData>,
}

/// Loads the dataset, assigns two classes per client and holds out a test
/// split from every client's share.
pub fn prepare(cfg: &ExperimentConfig) -> Result<Federation> {
    let data = cfg.dataset.load()?;
    let plan = partition_two_class(&data, cfg.k, cfg.partition_seed)?;
    let clients = plan
        .assignments
        .iter()
        .enumerate()
        .map(|(c, idx)| {
            let seed = stream_seed(cfg.partition_seed, HOLDOUT_STREAM, c as u64);
            let (train, test) = split_holdout(idx, TEST_FRACTION, seed)?;
            Ok(ClientData {
                train: data.subset(&train)?,
                test: data.subset(&test)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Federation {
        architecture: cfg.model.architecture(data.n_features(), data.n_classes()),
        clients,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultBundle {
    pub config: ExperimentConfig,
    pub roster: Vec<ClientSpec>,
    /// Rounds completed before any divergence.
    pub records: Vec<RoundRecord>,
    pub summary: ExperimentSummary,
}

impl ResultBundle {
    pub fn diverged(&self) -> bool {
        self.summary.diverged
    }
}

struct Trajectory {
    records: Vec<RoundRecord>,
    global_updates: Vec<UpdateVector>,
    divergence: Option<Error>,
}

fn diverged(round: usize, client: Option<ClientId>, reason: impl Into<String>) -> Error {
    Error::Diverged {
        round,
        client,
        reason: reason.into(),
    }
}

fn simulate(
    cfg: &ExperimentConfig,
    fed: &Federation,
    roster: &[ClientSpec],
    strategy: AggregationStrategy,
) -> Result<Trajectory> {
    let mut model = ModelParams::init(fed.architecture, stream_seed(cfg.global_seed, INIT_STREAM, 0))?;
    let mut selfish: BTreeMap<ClientId, SelfishState> = BTreeMap::new();
    for spec in roster {
        if let (Some(alpha), Some(k_mode)) = (spec.alpha, spec.k_mode) {
            selfish.insert(spec.id, SelfishState::new(alpha, k_mode)?);
        }
    }
    let mut out = Trajectory {
        records: Vec::with_capacity(cfg.rounds),
        global_updates: Vec::with_capacity(cfg.rounds),
        divergence: None,
    };

    for round in 1..=cfg.rounds {
        let trained: Vec<Result<UpdateVector>> = fed
            .clients
            .par_iter()
            .enumerate()
            .map(|(c, data)| {
                let local = cfg.local.with_shuffle_seed(derive_seed(cfg.global_seed, c, round));
                local_train(&model, &data.train, &local)
            })
            .collect();

        let mut true_updates = Vec::with_capacity(trained.len());
        for (c, res) in trained.into_iter().enumerate() {
            match res {
                Ok(u) => true_updates.push(u),
                Err(Error::NonFinite(what)) => {
                    out.divergence = Some(diverged(round, Some(c), format!("non-finite {what}")));
                    return Ok(out);
                }
                Err(e) => return Err(e),
            }
        }

        let w_t = model.weights().clone();
        let mut sent = Vec::with_capacity(true_updates.len());
        for (c, u) in true_updates.iter().enumerate() {
            let s = match selfish.get_mut(&c) {
                Some(state) => state.round(&w_t, u)?,
                None => u.clone(),
            };
            if !s.is_finite() {
                out.divergence = Some(diverged(round, Some(c), "non-finite crafted update"));
                return Ok(out);
            }
            sent.push((c, s));
        }

        let outcome = aggregate(&sent, strategy)?;
        if !outcome.global_update.is_finite() {
            out.divergence = Some(diverged(round, None, "non-finite global update"));
            return Ok(out);
        }
        let next = model.weights().try_add(&outcome.global_update)?;
        if !next.is_finite() {
            out.divergence = Some(diverged(round, None, "non-finite global weights"));
            return Ok(out);
        }
        model = apply_update(&model, &outcome.global_update)?;

        let recovery_errors = if cfg.instrumented {
            let mut errs = BTreeMap::new();
            for (c, r) in &outcome.recovered {
                errs.insert(*c, recovery_error(r, &true_updates[*c])?);
            }
            Some(errs)
        } else {
            None
        };

        let accuracy: Vec<f64> = fed
            .clients
            .par_iter()
            .map(|data| evaluate(&model, &data.test))
            .collect::<Result<_>>()?;

        out.records.push(RoundRecord {
            round,
            strategy,
            per_client_accuracy: accuracy.into_iter().enumerate().collect(),
            per_client_sent_norm: sent.iter().map(|(c, s)| (*c, s.norm())).collect(),
            suspects: outcome.suspects,
            betas: outcome.betas,
            global_update_norm: outcome.global_update.norm(),
            deviation_norm_ratio: None,
            deviation_angle_deg: None,
            recovery_errors,
        });
        out.global_updates.push(outcome.global_update);
    }
    Ok(out)
}

fn summarize(
    records: &[RoundRecord],
    roster: &[ClientSpec],
    strategy: AggregationStrategy,
) -> Result<ExperimentSummary> {
    if records.is_empty() {
        return Ok(ExperimentSummary {
            fingerprint: String::new(),
            strategy,
            rounds_completed: 0,
            diverged: false,
            divergence: None,
            normal: None,
            selfish: None,
            counterfactual_normal: None,
            series: Vec::new(),
        });
    }
    group_stats(records, roster)
}

/// Runs the configured rounds and, when requested, an all-normal FedAvg twin
/// with identical seeds for the deviation metrics.
///
/// Client training runs on the current rayon pool; results do not depend on
/// its size. A divergence ends the run early and is reported through
/// `summary.diverged` with the completed rounds kept.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ResultBundle> {
    cfg.validate()?;
    let fed = prepare(cfg)?;
    let roster = cfg.roster();

    let (main, twin) = if cfg.paired_counterfactual {
        let normal: Vec<ClientSpec> = (0..cfg.k).map(ClientSpec::normal).collect();
        let (main, twin) = rayon::join(
            || simulate(cfg, &fed, &roster, cfg.strategy),
            || simulate(cfg, &fed, &normal, AggregationStrategy::FedAvg),
        );
        (main?, Some(twin?))
    } else {
        (simulate(cfg, &fed, &roster, cfg.strategy)?, None)
    };

    let mut records = main.records;
    if let Some(twin) = &twin {
        for (i, rec) in records.iter_mut().enumerate() {
            if let Some(reference) = twin.global_updates.get(i) {
                let d = deviation(&main.global_updates[i], reference)?;
                rec.deviation_norm_ratio = Some(d.norm_ratio);
                rec.deviation_angle_deg = Some(d.angle_deg);
            }
        }
    }

    let mut summary = summarize(&records, &roster, cfg.strategy)?;
    summary.fingerprint = cfg.fingerprint();
    summary.diverged = main.divergence.is_some();
    summary.divergence = main.divergence.map(|e| e.to_string());
    if let Some(twin) = &twin {
        if !twin.records.is_empty() {
            summary.counterfactual_normal = group_stats(&twin.records, &roster)?.normal;
        }
    }

    Ok(ResultBundle {
        config: cfg.clone(),
        roster,
        records,
        summary,
    })
}
