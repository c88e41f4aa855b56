//! Label-skew partitioning: every client holds samples of exactly two classes.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dataset::Dataset;
use crate::error::{Error, Result};

pub const CLASSES_PER_CLIENT: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionPlan {
    /// Sample indices per client id, ascending.
    pub assignments: Vec<Vec<usize>>,
    /// The two classes of each client, smaller label first.
    pub client_classes: Vec<[usize; 2]>,
    pub classes_per_client: usize,
    pub seed: u64,
}

/// Assigns each of `k` clients two distinct classes and splits every class's
/// samples among its owners.
///
/// Class pairs first cover every class once (over a seeded class permutation);
/// remaining clients get uniformly drawn pairs, and the pair list is then
/// shuffled across client ids. Each class's samples are shuffled and cut into
/// contiguous chunks whose sizes differ by at most one.
pub fn partition_two_class(data: &Dataset, k: usize, seed: u64) -> Result<PartitionPlan> {
    let classes = data.n_classes();
    if k == 0 {
        return Err(Error::invalid("partition needs at least one client"));
    }
    if classes < 2 {
        return Err(Error::invalid("two-class partition needs at least two classes"));
    }
    if CLASSES_PER_CLIENT * k < classes {
        return Err(Error::invalid(format!(
            "{k} clients with two classes each cannot cover {classes} classes"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm: Vec<usize> = (0..classes).collect();
    perm.shuffle(&mut rng);

    let mut pairs: Vec<[usize; 2]> = Vec::with_capacity(k);
    for chunk in perm.chunks(2) {
        let pair = if let [a, b] = *chunk {
            [a, b]
        } else {
            let a = chunk[0];
            [a, draw_other(&mut rng, classes, a)]
        };
        pairs.push(pair);
    }
    while pairs.len() < k {
        let a = rng.gen_range(0..classes);
        pairs.push([a, draw_other(&mut rng, classes, a)]);
    }
    pairs.shuffle(&mut rng);
    for p in pairs.iter_mut() {
        p.sort_unstable();
    }

    let mut assignments = vec![Vec::new(); k];
    for (class, mut samples) in data.indices_by_class().into_iter().enumerate() {
        let owners: Vec<usize> = (0..k).filter(|&c| pairs[c].contains(&class)).collect();
        if samples.len() < owners.len() {
            return Err(Error::invalid(format!(
                "class {class} has {} samples for {} owners",
                samples.len(),
                owners.len()
            )));
        }
        samples.shuffle(&mut rng);
        let base = samples.len() / owners.len();
        let extra = samples.len() % owners.len();
        let mut start = 0;
        for (j, &owner) in owners.iter().enumerate() {
            let len = base + usize::from(j < extra);
            assignments[owner].extend_from_slice(&samples[start..start + len]);
            start += len;
        }
    }
    for a in assignments.iter_mut() {
        a.sort_unstable();
    }

    Ok(PartitionPlan {
        assignments,
        client_classes: pairs,
        classes_per_client: CLASSES_PER_CLIENT,
        seed,
    })
}

fn draw_other(rng: &mut ChaCha8Rng, classes: usize, exclude: usize) -> usize {
    let r = rng.gen_range(0..classes - 1);
    if r >= exclude {
        r + 1
    } else {
        r
    }
}

/// Seeded holdout split of one client's samples: returns `(train, test)`.
/// The test part takes `floor(test_fraction * n)` samples, at least one.
pub fn split_holdout(indices: &[usize], test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if indices.len() < 2 {
        return Err(Error::invalid(format!(
            "a client needs at least 2 samples for a train/test split, has {}",
            indices.len()
        )));
    }
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::invalid(format!("test fraction {test_fraction} outside [0, 1)")));
    }
    let mut shuffled = indices.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = ((test_fraction * indices.len() as f64).floor() as usize).max(1);
    let mut test = shuffled.split_off(indices.len() - n_test);
    let mut train = shuffled;
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}
