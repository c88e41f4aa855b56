//! Result files.
//!
//! `rounds.csv`: one row per round.
//!
//! | column | meaning |
//! |---|---|
//! | `round` | 1-based round index |
//! | `strategy` | aggregation rule |
//! | `global_update_norm` | L2 norm of the applied global update |
//! | `deviation_norm_ratio` | norm of this update over the all-normal twin's, empty without a twin |
//! | `deviation_angle_deg` | angle to the twin's update in degrees, empty without a twin |
//! | `num_suspects` | clients flagged by the server |
//!
//! `accuracy.csv`: one row per round and client.
//!
//! | column | meaning |
//! |---|---|
//! | `round` | 1-based round index |
//! | `client_id` | client index |
//! | `role` | `normal` or `selfish` |
//! | `accuracy` | test accuracy after the round's update |
//! | `sent_norm` | norm of the update the client sent |
//! | `beta` | recovery coefficient, empty unless recovered |
//! | `recovery_error` | distance of the recovered update to the true one, empty unless instrumented and recovered |
//!
//! `summary.json` holds the [`ExperimentSummary`]. Missing values are empty
//! cells, never zeros.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::runner::ResultBundle;
use super::svg::{line_chart, Series};
use super::sweep::SweepCell;
use crate::error::{Error, Result};
use crate::metrics::ExperimentSummary;

pub const ROUNDS_HEADER: [&str; 6] = [
    "round",
    "strategy",
    "global_update_norm",
    "deviation_norm_ratio",
    "deviation_angle_deg",
    "num_suspects",
];

pub const ACCURACY_HEADER: [&str; 7] = [
    "round",
    "client_id",
    "role",
    "accuracy",
    "sent_norm",
    "beta",
    "recovery_error",
];

pub const SWEEP_HEADER: [&str; 14] = [
    "alpha",
    "selfish_count",
    "seed",
    "strategy",
    "status",
    "rounds_completed",
    "normal_mean",
    "normal_std",
    "selfish_mean",
    "selfish_std",
    "counterfactual_normal_mean",
    "mean_deviation_norm_ratio",
    "mean_deviation_angle_deg",
    "error",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_string(header: &[&str], rows: Vec<Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

pub fn rounds_csv(bundle: &ResultBundle) -> String {
    let rows = bundle
        .records
        .iter()
        .map(|r| {
            vec![
                r.round.to_string(),
                r.strategy.to_string(),
                r.global_update_norm.to_string(),
                opt(r.deviation_norm_ratio),
                opt(r.deviation_angle_deg),
                r.suspects.len().to_string(),
            ]
        })
        .collect();
    csv_string(&ROUNDS_HEADER, rows)
}

pub fn accuracy_csv(bundle: &ResultBundle) -> String {
    let mut rows = Vec::new();
    for r in &bundle.records {
        for spec in &bundle.roster {
            let c = spec.id;
            rows.push(vec![
                r.round.to_string(),
                c.to_string(),
                spec.role.as_str().to_string(),
                opt(r.per_client_accuracy.get(&c).copied()),
                opt(r.per_client_sent_norm.get(&c).copied()),
                opt(r.betas.get(&c).copied()),
                opt(r.recovery_errors.as_ref().and_then(|m| m.get(&c).copied())),
            ]);
        }
    }
    csv_string(&ACCURACY_HEADER, rows)
}

pub fn summary_json(summary: &ExperimentSummary) -> String {
    let mut s = serde_json::to_string_pretty(summary).expect("summary serializes");
    s.push('\n');
    s
}

pub fn parse_summary(text: &str) -> Result<ExperimentSummary> {
    serde_json::from_str(text).map_err(|e| Error::Config(format!("summary: {e}")))
}

pub fn accuracy_chart(bundle: &ResultBundle) -> String {
    let pick = |f: fn(&crate::metrics::SeriesPoint) -> Option<f64>| -> Vec<(f64, f64)> {
        bundle
            .summary
            .series
            .iter()
            .filter_map(|p| f(p).map(|a| (p.round as f64, a)))
            .collect()
    };
    let mut series = vec![Series {
        name: "normal".into(),
        points: pick(|p| p.normal_accuracy),
    }];
    let selfish = pick(|p| p.selfish_accuracy);
    if !selfish.is_empty() {
        series.push(Series {
            name: "selfish".into(),
            points: selfish,
        });
    }
    line_chart(
        &format!("Mean client accuracy ({})", bundle.config.strategy),
        "round",
        "accuracy",
        &series,
    )
}

fn write_file(path: PathBuf, contents: &str) -> Result<PathBuf> {
    std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes the CSV tables, the summary and the accuracy chart into `dir`.
pub fn write_bundle(bundle: &ResultBundle, dir: &Path) -> Result<Vec<PathBuf>> {
    create_dir(dir)?;
    Ok(vec![
        write_file(dir.join("rounds.csv"), &rounds_csv(bundle))?,
        write_file(dir.join("accuracy.csv"), &accuracy_csv(bundle))?,
        write_file(dir.join("summary.json"), &summary_json(&bundle.summary))?,
        write_file(dir.join("accuracy.svg"), &accuracy_chart(bundle))?,
    ])
}

pub fn cell_dir_name(cell: &SweepCell) -> String {
    format!("alpha-{}_selfish-{}_seed-{}", cell.alpha, cell.selfish_count, cell.seed)
}

fn mean_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn mean_deviation(bundle: &ResultBundle) -> (Option<f64>, Option<f64>) {
    (
        mean_of(bundle.records.iter().filter_map(|r| r.deviation_norm_ratio)),
        mean_of(bundle.records.iter().filter_map(|r| r.deviation_angle_deg)),
    )
}

pub fn sweep_csv(cells: &[SweepCell]) -> String {
    let rows = cells
        .iter()
        .map(|cell| {
            let mut row = vec![
                cell.alpha.to_string(),
                cell.selfish_count.to_string(),
                cell.seed.to_string(),
            ];
            match &cell.result {
                Ok(b) => {
                    let s = &b.summary;
                    let (ratio, angle) = mean_deviation(b);
                    row.extend([
                        s.strategy.to_string(),
                        if s.diverged { "diverged" } else { "ok" }.to_string(),
                        s.rounds_completed.to_string(),
                        opt(s.normal.map(|g| g.mean)),
                        opt(s.normal.map(|g| g.std)),
                        opt(s.selfish.map(|g| g.mean)),
                        opt(s.selfish.map(|g| g.std)),
                        opt(s.counterfactual_normal.map(|g| g.mean)),
                        opt(ratio),
                        opt(angle),
                        String::new(),
                    ]);
                }
                Err(msg) => {
                    row.extend([String::new(), "error".into()]);
                    row.extend(std::iter::repeat_n(String::new(), 8));
                    row.push(msg.clone());
                }
            }
            row
        })
        .collect();
    csv_string(&SWEEP_HEADER, rows)
}

/// Mean deviation over rounds and seeds, one series per selfish count.
fn deviation_charts(cells: &[SweepCell]) -> (String, String) {
    let mut ratio: BTreeMap<usize, BTreeMap<u64, Vec<f64>>> = BTreeMap::new();
    let mut angle: BTreeMap<usize, BTreeMap<u64, Vec<f64>>> = BTreeMap::new();
    let mut alphas: BTreeMap<u64, f64> = BTreeMap::new();
    for cell in cells {
        if let Ok(b) = &cell.result {
            // f64 bits order like the values for non-negative alphas
            let key = cell.alpha.to_bits();
            alphas.insert(key, cell.alpha);
            let (r, a) = mean_deviation(b);
            if let Some(r) = r {
                ratio
                    .entry(cell.selfish_count)
                    .or_default()
                    .entry(key)
                    .or_default()
                    .push(r);
            }
            if let Some(a) = a {
                angle
                    .entry(cell.selfish_count)
                    .or_default()
                    .entry(key)
                    .or_default()
                    .push(a);
            }
        }
    }
    let to_series = |m: &BTreeMap<usize, BTreeMap<u64, Vec<f64>>>| -> Vec<Series> {
        m.iter()
            .map(|(n, by_alpha)| Series {
                name: format!("{n} selfish"),
                points: by_alpha
                    .iter()
                    .map(|(key, vs)| (alphas[key], vs.iter().sum::<f64>() / vs.len() as f64))
                    .collect(),
            })
            .collect()
    };
    (
        line_chart(
            "Deviation of the global update: norm ratio",
            "alpha",
            "mean norm ratio",
            &to_series(&ratio),
        ),
        line_chart(
            "Deviation of the global update: angle",
            "alpha",
            "mean angle (deg)",
            &to_series(&angle),
        ),
    )
}

/// Writes every successful cell into its own subdirectory plus the combined
/// table and deviation charts.
pub fn write_sweep(cells: &[SweepCell], dir: &Path) -> Result<Vec<PathBuf>> {
    create_dir(dir)?;
    let mut written = Vec::new();
    for cell in cells {
        if let Ok(b) = &cell.result {
            written.extend(write_bundle(b, &dir.join(cell_dir_name(cell)))?);
        }
    }
    let (ratio_svg, angle_svg) = deviation_charts(cells);
    written.push(write_file(dir.join("sweep_summary.csv"), &sweep_csv(cells))?);
    written.push(write_file(dir.join("deviation_vs_alpha.svg"), &ratio_svg)?);
    written.push(write_file(dir.join("deviation_angle_vs_alpha.svg"), &angle_svg)?);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_optionals_are_empty_cells() {
        assert_eq!(opt(None), "");
        assert_eq!(opt(Some(0.0)), "0");
        let csv = csv_string(&["a", "b"], vec![vec!["1".into(), opt(None)]]);
        assert_eq!(csv, "a,b\n1,\n");
    }

    #[test]
    fn fields_are_quoted_when_needed() {
        let csv = csv_string(&["a"], vec![vec!["x,\"y\"".into()]]);
        assert_eq!(csv, "a\n\"x,\"\"y\"\"\"\n");
    }

    #[test]
    fn mean_of_handles_empty() {
        assert_eq!(mean_of(std::iter::empty()), None);
        assert_eq!(mean_of([1.0, 2.0].into_iter()), Some(1.5));
    }
}
