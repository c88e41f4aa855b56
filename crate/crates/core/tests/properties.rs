use proptest::prelude::*;

use fedself::aggregation::{downscale_update, recover_update, solve_beta};
use fedself::metrics::{aggregate_error_bound, deviation, group_stats, trace_variance, ClientSpec, RoundRecord};
use fedself::vector::{marginal_median, median_norm};
use fedself::{aggregate, craft_selfish_update, AggregationStrategy, UpdateVector};

fn v(xs: Vec<f64>) -> UpdateVector {
    UpdateVector::new(xs).unwrap()
}

fn updates(max_k: usize, max_d: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1..=max_k, 1..=max_d).prop_flat_map(|(k, d)| prop::collection::vec(prop::collection::vec(-10.0f64..10.0, d), k))
}

fn ided(us: &[Vec<f64>]) -> Vec<(usize, UpdateVector)> {
    us.iter().cloned().map(v).enumerate().collect()
}

fn nonzero(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, d).prop_filter("nonzero", |x| x.iter().any(|c| c.abs() > 1e-3))
}

proptest! {
    #[test]
    fn rfl_self_keeps_non_suspects_verbatim(us in updates(9, 12)) {
        let received = ided(&us);
        let out = aggregate(&received, AggregationStrategy::RflSelf).unwrap();
        let d = us[0].len();
        let mut kept = vec![0.0; d];
        for (i, u) in us.iter().enumerate() {
            if !out.suspects.contains(&i) {
                for j in 0..d {
                    kept[j] += u[j];
                }
            }
        }
        let mut rec = vec![0.0; d];
        for r in out.recovered.values() {
            for j in 0..d {
                rec[j] += r.as_slice()[j];
            }
        }
        let expected: Vec<f64> = (0..d).map(|j| (kept[j] + rec[j]) / us.len() as f64).collect();
        prop_assert_eq!(out.global_update.as_slice(), &expected[..]);
        prop_assert_eq!(out.recovered.keys().copied().collect::<Vec<_>>(), out.suspects.iter().copied().collect::<Vec<_>>());
    }

    #[test]
    fn recovered_norms_hit_the_median_when_reachable(us in updates(9, 12)) {
        let vs: Vec<UpdateVector> = us.iter().cloned().map(v).collect();
        let n_med = median_norm(&vs).unwrap();
        let med = marginal_median(&vs).unwrap();
        let out = aggregate(&ided(&us), AggregationStrategy::RflSelf).unwrap();
        // with ||delta_med|| <= n_med < ||delta_hat|| a root in [0, 1] exists
        if med.norm() <= n_med {
            for r in out.recovered.values() {
                prop_assert!((r.norm() - n_med).abs() <= 1e-9 * n_med.max(1e-12));
            }
        }
    }

    #[test]
    fn suspects_are_strictly_above_median(us in updates(9, 6)) {
        let vs: Vec<UpdateVector> = us.iter().cloned().map(v).collect();
        let n_med = median_norm(&vs).unwrap();
        let out = aggregate(&ided(&us), AggregationStrategy::RflSelf).unwrap();
        for (i, u) in vs.iter().enumerate() {
            prop_assert_eq!(out.suspects.contains(&i), u.norm() > n_med);
        }
        prop_assert!(out.suspects.len() <= vs.len() / 2);
    }

    #[test]
    fn aggregation_ignores_submission_order(us in updates(7, 5), rot in 0usize..7) {
        let received = ided(&us);
        let mut shuffled = received.clone();
        let r = rot % shuffled.len();
        shuffled.rotate_left(r);
        for s in [AggregationStrategy::FedAvg, AggregationStrategy::MarginalMedian, AggregationStrategy::Downscale, AggregationStrategy::RflSelf] {
            prop_assert_eq!(aggregate(&received, s).unwrap(), aggregate(&shuffled, s).unwrap());
        }
    }

    #[test]
    fn identical_updates_pass_through(u in prop::collection::vec(-5.0f64..5.0, 1..8), k in 1usize..8) {
        let us = vec![u.clone(); k];
        for s in [AggregationStrategy::FedAvg, AggregationStrategy::MarginalMedian, AggregationStrategy::Downscale, AggregationStrategy::RflSelf] {
            let out = aggregate(&ided(&us), s).unwrap();
            prop_assert!(out.suspects.is_empty());
            for (a, b) in out.global_update.as_slice().iter().zip(&u) {
                prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
        }
    }

    #[test]
    fn beta_is_admissible((hat, med, n) in (1usize..10).prop_flat_map(|d| (nonzero(d), prop::collection::vec(-10.0f64..10.0, d), 0.0f64..1.0))) {
        let (hat, med) = (v(hat), v(med));
        let n_med = n * hat.norm();
        if hat != med {
            let beta = solve_beta(&hat, &med, n_med).unwrap();
            prop_assert!((0.0..=1.0).contains(&beta));
            prop_assert!(beta.is_sign_positive());
            let r = recover_update(&hat, &med, beta).unwrap();
            if beta > 0.0 {
                prop_assert!((r.norm() - n_med).abs() <= 1e-9 * hat.norm());
            }
        }
    }

    #[test]
    fn downscale_keeps_direction(hat in nonzero(6), n in 0.01f64..10.0) {
        let hat = v(hat);
        let d = downscale_update(&hat, n).unwrap();
        prop_assert!((d.norm() - n).abs() <= 1e-12 * n);
        prop_assert!(hat.dot(&d).unwrap() > 0.0);
    }

    #[test]
    fn crafting_is_affine_in_alpha(s in nonzero(5), b in nonzero(5), a1 in 0.0f64..1.0, a2 in 0.0f64..1.0, k in 2usize..60) {
        let (s, b) = (v(s), v(b));
        let c1 = craft_selfish_update(&s, &b, a1, k).unwrap();
        let c2 = craft_selfish_update(&s, &b, a2, k).unwrap();
        let mid = craft_selfish_update(&s, &b, 0.5 * (a1 + a2), k).unwrap();
        let avg = c1.try_add(&c2).unwrap().scale(0.5);
        prop_assert!(mid.distance(&avg).unwrap() <= 1e-9 * (1.0 + c1.norm() + c2.norm()));
    }

    #[test]
    fn deviation_is_scale_covariant(a in nonzero(6), b in nonzero(6), c in 0.01f64..100.0) {
        let (a, b) = (v(a), v(b));
        let base = deviation(&a, &b).unwrap();
        let scaled = deviation(&a.scale(c), &b).unwrap();
        prop_assert!((scaled.norm_ratio - c * base.norm_ratio).abs() <= 1e-9 * c * base.norm_ratio);
        prop_assert!((scaled.angle_deg - base.angle_deg).abs() <= 1e-7);
        prop_assert!((0.0..=180.0).contains(&base.angle_deg));
    }

    #[test]
    fn error_bound_ignores_order_and_shift(us in updates(8, 5), shift in -50.0f64..50.0, rot in 0usize..8) {
        let vs: Vec<UpdateVector> = us.iter().cloned().map(v).collect();
        let k = vs.len();
        let b = aggregate_error_bound(&vs, k).unwrap();
        let mut permuted = vs.clone();
        permuted.rotate_left(rot % k);
        let moved: Vec<UpdateVector> = vs.iter().map(|u| v(u.as_slice().iter().map(|x| x + shift).collect())).collect();
        prop_assert!((aggregate_error_bound(&permuted, k).unwrap() - b).abs() <= 1e-9 * b.max(1.0));
        prop_assert!((aggregate_error_bound(&moved, k).unwrap() - b).abs() <= 1e-7 * b.max(1.0));
        prop_assert!(trace_variance(&vs).unwrap() >= 0.0);
    }

    #[test]
    fn group_means_lie_within_observed_range(accs in prop::collection::vec(0.0f64..=1.0, 1..12)) {
        let roster: Vec<ClientSpec> = (0..accs.len()).map(ClientSpec::normal).collect();
        let record = RoundRecord {
            round: 1,
            strategy: AggregationStrategy::FedAvg,
            per_client_accuracy: accs.iter().copied().enumerate().collect(),
            per_client_sent_norm: (0..accs.len()).map(|c| (c, 1.0)).collect(),
            suspects: Default::default(),
            betas: Default::default(),
            global_update_norm: 1.0,
            deviation_norm_ratio: None,
            deviation_angle_deg: None,
            recovery_errors: None,
        };
        let stats = group_stats(&[record], &roster).unwrap().normal.unwrap();
        let lo = accs.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = accs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(stats.mean >= lo - 1e-12 && stats.mean <= hi + 1e-12);
        prop_assert!(stats.std >= 0.0);
        prop_assert_eq!(stats.count, accs.len());
    }
}

fn gaussian(rng: &mut rand_chacha::ChaCha8Rng, d: usize) -> Vec<f64> {
    use rand_distr::{Distribution, StandardNormal};
    (0..d).map(|_| StandardNormal.sample(rng)).collect()
}

#[test]
fn rescaling_loses_to_recovery_under_ideal_conditions() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(426);
    let mut recovery_closer = 0;
    for t in 0..500 {
        let k = [5, 10, 50][t % 3];
        let alpha = rng.gen_range((1.0 / k as f64 + 0.01)..=1.0);
        let ds = v(gaussian(&mut rng, 30));
        let db = v(gaussian(&mut rng, 30));
        let n_med = ds.norm();
        let hat = craft_selfish_update(&ds, &db, alpha, k).unwrap();
        let down = downscale_update(&hat, n_med).unwrap();
        let rec = recover_update(&hat, &db, solve_beta(&hat, &db, n_med).unwrap()).unwrap();
        if down.distance(&ds).unwrap() > rec.distance(&ds).unwrap() {
            recovery_closer += 1;
        }
    }
    assert!(recovery_closer >= 450, "{recovery_closer}/500");
}

#[test]
fn no_selfish_outputs_stay_close_to_the_mean() {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
    for t in 0..200 {
        let k = 3 + t % 30;
        let centre = gaussian(&mut rng, 20);
        let vs: Vec<UpdateVector> = (0..k)
            .map(|_| v(gaussian(&mut rng, 20).iter().zip(&centre).map(|(e, c)| e + c).collect()))
            .collect();
        let received: Vec<(usize, UpdateVector)> = vs.iter().cloned().enumerate().collect();
        let fed = aggregate(&received, AggregationStrategy::FedAvg).unwrap().global_update;
        let rfl = aggregate(&received, AggregationStrategy::RflSelf)
            .unwrap()
            .global_update;
        let gap = fed.distance(&rfl).unwrap();
        let limit = trace_variance(&vs).unwrap().sqrt();
        assert!(gap <= limit, "k={k}: {gap} > {limit}");
    }
}
