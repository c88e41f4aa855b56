//! Randomized self-checks behind `fedself verify`.
//!
//! Each check compares a library routine against a slower independent
//! computation or a closed-form property on seeded random instances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::aggregation::{recover_update, solve_beta};
use crate::error::Result;
use crate::selfish::craft_selfish_update;
use crate::training::{Architecture, Dataset, ModelParams};
use crate::vector::UpdateVector;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn gaussian(rng: &mut ChaCha8Rng, d: usize) -> UpdateVector {
    UpdateVector::new((0..d).map(|_| StandardNormal.sample(rng)).collect()).expect("finite draws")
}

fn unit(rng: &mut ChaCha8Rng, d: usize) -> UpdateVector {
    let g = gaussian(rng, d);
    let n = g.norm();
    g.scale(1.0 / n)
}

/// Crafted updates of unit-norm inputs exceed norm 1 for `alpha >= 2/k`
/// and equal the true update at `alpha = 1/k`.
pub fn check_selfish_norm_growth(trials: usize, seed: u64) -> Result<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0;
    for t in 0..trials {
        let d = if t % 2 == 0 { 10 } else { 1000 };
        let k = if t % 4 < 2 { 5 } else { 50 };
        let (ds, db) = (unit(&mut rng, d), unit(&mut rng, d));
        if craft_selfish_update(&ds, &db, 1.0 / k as f64, k)? != ds {
            failures += 1;
        }
        for j in 2..=k {
            if craft_selfish_update(&ds, &db, j as f64 / k as f64, k)?.norm() <= 1.0 {
                failures += 1;
            }
        }
    }
    Ok(CheckReport {
        name: "selfish norm growth",
        passed: failures == 0,
        detail: format!("{trials} trials, {failures} violations"),
    })
}

fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if (f(lo) <= 0.0) == (f(mid) <= 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// The closed-form recovery coefficient agrees with bisection and the
/// recovered update lands on the median norm.
pub fn check_beta_against_bisection(trials: usize, seed: u64) -> Result<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst_beta = 0.0f64;
    let mut worst_norm = 0.0f64;
    for _ in 0..trials {
        let d = rng.gen_range(2..40);
        let med = unit(&mut rng, d).scale(rng.gen_range(0.1..1.0));
        let n_med = med.norm() * rng.gen_range(1.05..3.0);
        let hat = unit(&mut rng, d).scale(n_med * rng.gen_range(1.05..10.0));
        let beta = solve_beta(&hat, &med, n_med)?;
        let g = |b: f64| {
            let mut x = med.scale(1.0 - b);
            x.axpy(b, &hat).expect("same dims");
            x.norm() - n_med
        };
        worst_beta = worst_beta.max((beta - bisect(g, 0.0, 1.0)).abs());
        let r = recover_update(&hat, &med, beta)?;
        worst_norm = worst_norm.max((r.norm() - n_med).abs() / n_med);
    }
    Ok(CheckReport {
        name: "beta vs bisection",
        passed: worst_beta <= 1e-9 && worst_norm <= 1e-9,
        detail: format!(
            "{trials} triples, max |beta error| {worst_beta:.3e}, max relative norm error {worst_norm:.3e}"
        ),
    })
}

/// Analytic gradients against central differences on random small problems.
pub fn check_gradients(trials: usize, seed: u64) -> Result<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for t in 0..trials {
        let features = rng.gen_range(2..5);
        let classes = rng.gen_range(2..5);
        let arch = if t % 2 == 0 {
            Architecture::LogisticRegression { features, classes }
        } else {
            Architecture::Mlp {
                features,
                hidden: rng.gen_range(2..5),
                classes,
            }
        };
        let n = rng.gen_range(1..6);
        let xs: Vec<f64> = (0..n * features).map(|_| StandardNormal.sample(&mut rng)).collect();
        let ys: Vec<usize> = (0..n).map(|_| rng.gen_range(0..classes)).collect();
        let batch = Dataset::new(xs, features, ys, classes)?;
        let w = ModelParams::new(arch, gaussian(&mut rng, arch.param_count()).scale(0.5))?;
        let grad = w.gradient(&batch)?;
        let h = 1e-5;
        for j in 0..arch.param_count() {
            let mut plus = w.weights().clone().into_inner();
            let mut minus = plus.clone();
            plus[j] += h;
            minus[j] -= h;
            let lp = w.with_weights(UpdateVector::new(plus)?)?.loss(&batch)?;
            let lm = w.with_weights(UpdateVector::new(minus)?)?.loss(&batch)?;
            let fd = (lp - lm) / (2.0 * h);
            let a = grad.as_slice()[j];
            worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(1e-6));
        }
    }
    Ok(CheckReport {
        name: "gradient vs finite differences",
        passed: worst <= 1e-4,
        detail: format!("{trials} instances, max relative error {worst:.3e}"),
    })
}

pub fn run_all(seed: u64) -> Result<Vec<CheckReport>> {
    Ok(vec![
        check_selfish_norm_growth(200, seed)?,
        check_beta_against_bisection(500, seed)?,
        check_gradients(50, seed)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_checks_pass() {
        for report in run_all(11).unwrap() {
            assert!(report.passed, "{}: {}", report.name, report.detail);
        }
    }

    #[test]
    fn bisection_finds_root() {
        let r = bisect(|x| x * x - 0.25, 0.0, 1.0);
        assert!((r - 0.5).abs() < 1e-15);
    }
}
