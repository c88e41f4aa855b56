//! Selfish update crafting.
//!
//! A selfish client reconstructs the other clients' average update from the
//! last global step and its own previous submission, then extrapolates its
//! true update away from that average by `alpha * k`. When `k` is unknown it
//! is estimated jointly with the average from the last two global steps.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar_min::minimize_bracketed;
use crate::vector::{geometric_median, UpdateVector, GEOMEDIAN_MAX_ITER, GEOMEDIAN_TOL};

pub const HISTORY_ROUNDS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KMode {
    Known(usize),
    Estimated,
}

/// One past round as seen by the selfish client: the global step
/// `w^{t-i} - w^{t-i-1}` and what the client itself sent in that round.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryEntry {
    pub global_update: UpdateVector,
    pub sent: UpdateVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KEstimate {
    pub k_hat: f64,
    pub k_rounded: usize,
    pub delta_bar_hat: UpdateVector,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KEstimateOptions {
    /// Stop once successive `k` iterates differ by less than this.
    pub tol: f64,
    pub max_outer: usize,
    /// Upper end of the search bracket `[2, k_max]`.
    pub k_max: f64,
}

impl Default for KEstimateOptions {
    fn default() -> Self {
        KEstimateOptions {
            tol: 1e-3,
            max_outer: 50,
            k_max: 1000.0,
        }
    }
}

fn check_k(k: usize) -> Result<()> {
    if k < 2 {
        return Err(Error::invalid(format!("participant count must be >= 2, got {k}")));
    }
    Ok(())
}

/// `(k (w_t - w_prev) - prev_sent) / (k - 1)`: the other clients' mean update
/// in the previous round.
pub fn estimate_avg_normal_update(
    w_t: &UpdateVector,
    w_prev: &UpdateVector,
    prev_sent: &UpdateVector,
    k: usize,
) -> Result<UpdateVector> {
    check_k(k)?;
    let kf = k as f64;
    let step = w_t.try_sub(w_prev)?;
    let mut out = step.scale(kf);
    out.axpy(-1.0, prev_sent)?;
    Ok(out.scale(1.0 / (kf - 1.0)))
}

/// `alpha k (delta_true - delta_bar) + delta_bar`.
///
/// `alpha = 1/k` returns `delta_true` and `alpha = 0` returns `delta_bar`,
/// both exactly.
pub fn craft_selfish_update(
    delta_true: &UpdateVector,
    delta_bar: &UpdateVector,
    alpha: f64,
    k: usize,
) -> Result<UpdateVector> {
    check_alpha(alpha)?;
    check_k(k)?;
    let diff = delta_true.try_sub(delta_bar)?;
    let mut gain = alpha * k as f64;
    // alpha is usually written as a decimal approximation of 1/k
    if (gain - 1.0).abs() <= 4.0 * f64::EPSILON {
        gain = 1.0;
    }
    if gain == 1.0 {
        return Ok(delta_true.clone());
    }
    if alpha == 0.0 {
        return Ok(delta_bar.clone());
    }
    let mut out = diff.scale(gain);
    out.axpy(1.0, delta_bar)?;
    Ok(out)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!(
            "selfishness alpha must lie in [0, 1], got {alpha}"
        )));
    }
    Ok(())
}

/// `sum_i || g_i k - s_i - delta (k - 1) ||` over the two history rounds.
fn history_objective(history: &[&HistoryEntry; 2], k: f64, delta: &UpdateVector) -> f64 {
    history
        .iter()
        .map(|h| {
            h.global_update
                .as_slice()
                .iter()
                .zip(h.sent.as_slice())
                .zip(delta.as_slice())
                .map(|((g, s), d)| {
                    let r = g * k - s - d * (k - 1.0);
                    r * r
                })
                .sum::<f64>()
                .sqrt()
        })
        .sum()
}

/// Alternating minimization of the two-round history objective over the
/// continuous participant count `k >= 2` and the normal-client mean `delta`.
///
/// `history[0]` is the most recent round. `delta` starts at the geometric
/// median of the two global steps. Each pass minimizes over `k` with a
/// bracketed scalar search, then re-solves `delta` as the geometric median of
/// `g_i k - s_i` divided by `k - 1`. A minimizer stuck on the bracket ends, or
/// an objective that does not depend on `k`, is reported as not converged.
pub fn estimate_k(history: [&HistoryEntry; 2], opts: &KEstimateOptions) -> Result<KEstimate> {
    if !(opts.tol > 0.0) {
        return Err(Error::invalid(format!(
            "k tolerance must be positive, got {}",
            opts.tol
        )));
    }
    if !(opts.k_max > 2.0) {
        return Err(Error::invalid(format!("k_max must exceed 2, got {}", opts.k_max)));
    }
    let dim = history[0].global_update.dim();
    for h in history {
        for v in [&h.global_update, &h.sent] {
            if v.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: v.dim(),
                });
            }
        }
    }

    let mut delta = geometric_median(
        &[history[0].global_update.clone(), history[1].global_update.clone()],
        GEOMEDIAN_TOL,
        GEOMEDIAN_MAX_ITER,
    )?;
    let mut k_hat = f64::NAN;
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..opts.max_outer {
        iterations += 1;
        let m = minimize_bracketed(
            |k| history_objective(&history, k, &delta),
            2.0,
            opts.k_max,
            opts.tol * 0.1,
            500,
        )?;
        let k_new = m.x;

        let reconstructed: Vec<UpdateVector> = history
            .iter()
            .map(|h| {
                let mut r = h.global_update.scale(k_new);
                r.axpy(-1.0, &h.sent)?;
                Ok(r)
            })
            .collect::<Result<_>>()?;
        delta = geometric_median(&reconstructed, GEOMEDIAN_TOL, GEOMEDIAN_MAX_ITER)?.scale(1.0 / (k_new - 1.0));

        let settled = (k_new - k_hat).abs() < opts.tol;
        k_hat = k_new;
        if settled {
            converged = true;
            break;
        }
    }

    let at_boundary = k_hat - 2.0 < opts.tol || opts.k_max - k_hat < opts.tol;
    let lo = history_objective(&history, 2.0, &delta);
    let hi = history_objective(&history, opts.k_max, &delta);
    let flat = (lo - hi).abs() <= 1e-12 * (1.0 + lo.abs());
    if at_boundary || flat {
        converged = false;
    }

    Ok(KEstimate {
        k_hat,
        k_rounded: (k_hat.round() as usize).max(2),
        delta_bar_hat: delta,
        iterations,
        converged,
    })
}

/// Per-client selfish bookkeeping across rounds.
#[derive(Debug, Clone)]
pub struct SelfishState {
    alpha: f64,
    k_mode: KMode,
    k_options: KEstimateOptions,
    prev_sent: Option<UpdateVector>,
    prev_global_weights: Option<UpdateVector>,
    history: VecDeque<HistoryEntry>,
    last_estimate: Option<KEstimate>,
}

impl SelfishState {
    pub fn new(alpha: f64, k_mode: KMode) -> Result<Self> {
        check_alpha(alpha)?;
        if let KMode::Known(k) = k_mode {
            check_k(k)?;
        }
        Ok(SelfishState {
            alpha,
            k_mode,
            k_options: KEstimateOptions::default(),
            prev_sent: None,
            prev_global_weights: None,
            history: VecDeque::with_capacity(HISTORY_ROUNDS + 1),
            last_estimate: None,
        })
    }

    pub fn with_k_options(mut self, opts: KEstimateOptions) -> Self {
        self.k_options = opts;
        self
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn k_mode(&self) -> KMode {
        self.k_mode
    }

    pub fn prev_sent(&self) -> Option<&UpdateVector> {
        self.prev_sent.as_ref()
    }

    /// Most recent round first.
    pub fn history(&self) -> impl Iterator<Item = &HistoryEntry> {
        self.history.iter()
    }

    pub fn last_estimate(&self) -> Option<&KEstimate> {
        self.last_estimate.as_ref()
    }

    /// Turns this round's honest update into the update the client sends.
    ///
    /// The first round sends `delta_true` unchanged; so does the second when
    /// `k` is estimated, since the estimator needs two past rounds.
    pub fn round(&mut self, w_t: &UpdateVector, delta_true: &UpdateVector) -> Result<UpdateVector> {
        let sent = match (&self.prev_global_weights, &self.prev_sent) {
            (Some(w_prev), Some(prev_sent)) => {
                let step = w_t.try_sub(w_prev)?;
                self.history.push_front(HistoryEntry {
                    global_update: step,
                    sent: prev_sent.clone(),
                });
                self.history.truncate(HISTORY_ROUNDS);

                match self.k_mode {
                    KMode::Known(k) => {
                        let delta_bar = estimate_avg_normal_update(w_t, w_prev, prev_sent, k)?;
                        craft_selfish_update(delta_true, &delta_bar, self.alpha, k)?
                    }
                    KMode::Estimated if self.history.len() < HISTORY_ROUNDS => delta_true.clone(),
                    KMode::Estimated => {
                        let est = estimate_k([&self.history[0], &self.history[1]], &self.k_options)?;
                        let out = craft_selfish_update(delta_true, &est.delta_bar_hat, self.alpha, est.k_rounded)?;
                        self.last_estimate = Some(est);
                        out
                    }
                }
            }
            _ => delta_true.clone(),
        };
        self.prev_sent = Some(sent.clone());
        self.prev_global_weights = Some(w_t.clone());
        Ok(sent)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> UpdateVector {
        UpdateVector::new(xs.to_vec()).unwrap()
    }

    #[test]
    fn avg_update_direct_evaluation() {
        let w_prev = v(&[0.0, 0.0]);
        let w_t = v(&[1.0, 1.0]);
        let out = estimate_avg_normal_update(&w_t, &w_prev, &v(&[1.0, 0.0]), 3).unwrap();
        assert_eq!(out, v(&[1.0, 1.5]));
    }

    #[test]
    fn avg_update_inverts_aggregation() {
        // prev_sent = k*step - (k-1)*x  =>  estimate == x
        let x = v(&[0.5, -2.0, 4.0]);
        let step = v(&[1.0, 0.25, -0.5]);
        let k = 4;
        let prev_sent = step.scale(4.0).try_sub(&x.scale(3.0)).unwrap();
        let w_prev = v(&[0.0, 0.0, 0.0]);
        let out = estimate_avg_normal_update(&step, &w_prev, &prev_sent, k).unwrap();
        assert!(out.distance(&x).unwrap() < 1e-14);
    }

    #[test]
    fn avg_update_zero_case_and_k_check() {
        let prev_sent = v(&[2.0, -4.0]);
        let w_t = prev_sent.scale(0.5);
        let out = estimate_avg_normal_update(&w_t, &v(&[0.0, 0.0]), &prev_sent, 2).unwrap();
        assert_eq!(out, v(&[0.0, 0.0]));
        assert!(estimate_avg_normal_update(&w_t, &w_t, &w_t, 1).is_err());
    }

    #[test]
    fn crafting_fixed_points_and_example() {
        let ds = v(&[0.3, -1.7, 2.2]);
        let db = v(&[1.1, 0.4, -0.9]);
        for k in [2, 3, 5, 7, 10, 49, 50] {
            assert_eq!(craft_selfish_update(&ds, &db, 1.0 / k as f64, k).unwrap(), ds);
            assert_eq!(craft_selfish_update(&ds, &db, 0.0, k).unwrap(), db);
        }
        let out = craft_selfish_update(&v(&[1.0, 0.0]), &v(&[0.0, 1.0]), 0.4, 5).unwrap();
        assert_eq!(out, v(&[2.0, -1.0]));
    }

    #[test]
    fn crafting_rejects_bad_inputs() {
        let a = v(&[1.0]);
        assert!(craft_selfish_update(&a, &a, 1.5, 5).is_err());
        assert!(craft_selfish_update(&a, &a, -0.1, 5).is_err());
        assert!(craft_selfish_update(&a, &a, f64::NAN, 5).is_err());
        assert!(craft_selfish_update(&a, &a, 0.5, 1).is_err());
        assert!(craft_selfish_update(&a, &v(&[1.0, 2.0]), 0.5, 3).is_err());
    }

    #[test]
    fn first_round_sends_true_update() {
        let mut s = SelfishState::new(0.7, KMode::Known(5)).unwrap();
        let d = v(&[3.0, -1.0]);
        assert_eq!(s.round(&v(&[0.0, 0.0]), &d).unwrap(), d);
        assert_eq!(s.prev_sent(), Some(&d));
    }

    #[test]
    fn alpha_zero_sends_estimated_average() {
        let mut s = SelfishState::new(0.0, KMode::Known(4)).unwrap();
        let w0 = v(&[0.0, 0.0]);
        let d0 = v(&[1.0, 1.0]);
        s.round(&w0, &d0).unwrap();
        let w1 = v(&[0.5, 0.25]);
        let sent = s.round(&w1, &v(&[9.0, 9.0])).unwrap();
        let expected = estimate_avg_normal_update(&w1, &w0, &d0, 4).unwrap();
        assert_eq!(sent, expected);
    }

    #[test]
    fn known_k_composes_both_formulas() {
        let k = 6;
        let alpha = 0.35;
        let mut s = SelfishState::new(alpha, KMode::Known(k)).unwrap();
        let step = v(&[0.2, -0.1, 0.05]);
        let weights = [v(&[0.0, 0.0, 0.0]), step.clone(), step.scale(2.0), step.scale(3.0)];
        let truths = [
            v(&[1.0, 0.0, 0.0]),
            v(&[0.0, 1.0, 0.0]),
            v(&[0.0, 0.0, 1.0]),
            v(&[1.0, 1.0, 1.0]),
        ];
        let mut prev_sent = truths[0].clone();
        assert_eq!(s.round(&weights[0], &truths[0]).unwrap(), truths[0]);
        for t in 1..4 {
            // hand-rolled composition
            let kf = k as f64;
            let delta_bar: Vec<f64> = (0..3)
                .map(|j| {
                    (kf * (weights[t].as_slice()[j] - weights[t - 1].as_slice()[j]) - prev_sent.as_slice()[j])
                        / (kf - 1.0)
                })
                .collect();
            let expected: Vec<f64> = (0..3)
                .map(|j| alpha * kf * (truths[t].as_slice()[j] - delta_bar[j]) + delta_bar[j])
                .collect();
            let sent = s.round(&weights[t], &truths[t]).unwrap();
            for (a, b) in sent.as_slice().iter().zip(&expected) {
                assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()), "{a} vs {b}");
            }
            prev_sent = sent;
        }
        assert_eq!(s.history().count(), 2);
    }

    #[test]
    fn estimated_mode_waits_for_two_rounds() {
        // alpha * k_hat must avoid 1, where crafting is the identity
        let mut s = SelfishState::new(0.3, KMode::Estimated).unwrap();
        let d = v(&[1.0, 2.0]);
        assert_eq!(s.round(&v(&[0.0, 0.0]), &d).unwrap(), d);
        assert_eq!(s.round(&v(&[0.1, 0.1]), &d).unwrap(), d);
        let third = s.round(&v(&[0.3, 0.1]), &d).unwrap();
        assert!(s.last_estimate().is_some());
        assert_ne!(third, d);
    }

    fn forward_history(k: usize, delta_bars: [&UpdateVector; 2], sent: [&UpdateVector; 2]) -> [HistoryEntry; 2] {
        let kf = k as f64;
        let make = |db: &UpdateVector, s: &UpdateVector| {
            let mut g = s.clone();
            g.axpy(kf - 1.0, db).unwrap();
            HistoryEntry {
                global_update: g.scale(1.0 / kf),
                sent: s.clone(),
            }
        };
        [make(delta_bars[0], sent[0]), make(delta_bars[1], sent[1])]
    }

    #[test]
    fn estimate_k_recovers_noiseless_forward_model() {
        let db = v(&[0.3, -0.2, 0.5, 0.1]);
        let s1 = v(&[2.0, 1.0, -1.5, 0.7]);
        let s2 = v(&[-1.0, 0.4, 0.9, 2.5]);
        let h = forward_history(10, [&db, &db], [&s1, &s2]);
        let est = estimate_k([&h[0], &h[1]], &KEstimateOptions::default()).unwrap();
        assert_eq!(est.k_rounded, 10, "{est:?}");
        assert!(est.converged);
        assert!(est.delta_bar_hat.distance(&db).unwrap() < 1e-2 * db.norm());
    }

    #[test]
    fn estimate_k_degenerate_history_hits_boundary() {
        let g1 = v(&[1.0, 0.5]);
        let g2 = v(&[0.2, -0.3]);
        let h = [
            HistoryEntry {
                global_update: g1.clone(),
                sent: g1,
            },
            HistoryEntry {
                global_update: g2.clone(),
                sent: g2,
            },
        ];
        let est = estimate_k([&h[0], &h[1]], &KEstimateOptions::default()).unwrap();
        assert!(!est.converged);
        assert_eq!(est.k_rounded, 2);
        assert!(est.k_hat < 2.01);
    }

    #[test]
    fn estimate_k_flat_objective() {
        let g = v(&[1.0, 1.0]);
        let h = HistoryEntry {
            global_update: g.clone(),
            sent: g,
        };
        let est = estimate_k([&h, &h.clone()], &KEstimateOptions::default()).unwrap();
        assert!(!est.converged);
    }

    #[test]
    fn state_validation() {
        assert!(SelfishState::new(1.2, KMode::Estimated).is_err());
        assert!(SelfishState::new(0.5, KMode::Known(1)).is_err());
    }
}
