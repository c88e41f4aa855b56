//! Softmax classifiers with hand-written cross-entropy gradients.
//!
//! Parameters are flattened layer by layer, weights before biases, each
//! weight matrix stored row-major with shape `(outputs, inputs)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use crate::error::{Error, Result};
use crate::vector::UpdateVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Architecture {
    LogisticRegression {
        features: usize,
        classes: usize,
    },
    /// One tanh hidden layer.
    Mlp {
        features: usize,
        hidden: usize,
        classes: usize,
    },
}

impl Architecture {
    pub fn param_count(&self) -> usize {
        match *self {
            Architecture::LogisticRegression { features, classes } => classes * features + classes,
            Architecture::Mlp {
                features,
                hidden,
                classes,
            } => hidden * features + hidden + classes * hidden + classes,
        }
    }

    pub fn features(&self) -> usize {
        match *self {
            Architecture::LogisticRegression { features, .. } | Architecture::Mlp { features, .. } => features,
        }
    }

    pub fn classes(&self) -> usize {
        match *self {
            Architecture::LogisticRegression { classes, .. } | Architecture::Mlp { classes, .. } => classes,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Architecture::LogisticRegression { features, classes } => features > 0 && classes >= 2,
            Architecture::Mlp {
                features,
                hidden,
                classes,
            } => features > 0 && hidden > 0 && classes >= 2,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("degenerate architecture {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    architecture: Architecture,
    weights: UpdateVector,
}

impl ModelParams {
    pub fn new(architecture: Architecture, weights: UpdateVector) -> Result<Self> {
        architecture.validate()?;
        if weights.dim() != architecture.param_count() {
            return Err(Error::DimensionMismatch {
                expected: architecture.param_count(),
                actual: weights.dim(),
            });
        }
        Ok(ModelParams { architecture, weights })
    }

    /// Seeded initialization: `N(0, 0.01^2)` for logistic regression,
    /// Glorot-uniform weights and zero biases for the MLP.
    pub fn init(architecture: Architecture, seed: u64) -> Result<Self> {
        architecture.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = match architecture {
            Architecture::LogisticRegression { .. } => {
                let normal = Normal::new(0.0, 0.01).expect("valid normal");
                (0..architecture.param_count())
                    .map(|_| normal.sample(&mut rng))
                    .collect()
            }
            Architecture::Mlp {
                features,
                hidden,
                classes,
            } => {
                let mut w = Vec::with_capacity(architecture.param_count());
                let l1 = (6.0 / (features + hidden) as f64).sqrt();
                let u1 = Uniform::new_inclusive(-l1, l1);
                w.extend((0..hidden * features).map(|_| u1.sample(&mut rng)));
                w.extend(std::iter::repeat_n(0.0, hidden));
                let l2 = (6.0 / (hidden + classes) as f64).sqrt();
                let u2 = Uniform::new_inclusive(-l2, l2);
                w.extend((0..classes * hidden).map(|_| u2.sample(&mut rng)));
                w.extend(std::iter::repeat_n(0.0, classes));
                w
            }
        };
        Ok(ModelParams {
            architecture,
            weights: UpdateVector::from_raw(weights),
        })
    }

    pub fn architecture(&self) -> Architecture {
        self.architecture
    }

    pub fn weights(&self) -> &UpdateVector {
        &self.weights
    }

    pub fn with_weights(&self, weights: UpdateVector) -> Result<Self> {
        ModelParams::new(self.architecture, weights)
    }

    pub(crate) fn weights_mut(&mut self) -> &mut UpdateVector {
        &mut self.weights
    }

    fn check_data(&self, data: &Dataset) -> Result<()> {
        if data.n_features() != self.architecture.features() {
            return Err(Error::DimensionMismatch {
                expected: self.architecture.features(),
                actual: data.n_features(),
            });
        }
        if data.n_classes() > self.architecture.classes() {
            return Err(Error::invalid(format!(
                "dataset has {} classes but the model outputs {}",
                data.n_classes(),
                self.architecture.classes()
            )));
        }
        Ok(())
    }

    /// Output logits for one input row; `hidden` receives tanh activations
    /// for the MLP and is left untouched for logistic regression.
    fn logits(&self, x: &[f64], hidden: &mut [f64], out: &mut [f64]) {
        let w = self.weights.as_slice();
        match self.architecture {
            Architecture::LogisticRegression { features, classes } => {
                let (mat, bias) = w.split_at(classes * features);
                for c in 0..classes {
                    let row = &mat[c * features..(c + 1) * features];
                    out[c] = bias[c] + dot(row, x);
                }
            }
            Architecture::Mlp {
                features,
                hidden: h,
                classes,
            } => {
                let (w1, rest) = w.split_at(h * features);
                let (b1, rest) = rest.split_at(h);
                let (w2, b2) = rest.split_at(classes * h);
                for j in 0..h {
                    hidden[j] = (b1[j] + dot(&w1[j * features..(j + 1) * features], x)).tanh();
                }
                for c in 0..classes {
                    out[c] = b2[c] + dot(&w2[c * h..(c + 1) * h], hidden);
                }
            }
        }
    }

    fn hidden_width(&self) -> usize {
        match self.architecture {
            Architecture::LogisticRegression { .. } => 0,
            Architecture::Mlp { hidden, .. } => hidden,
        }
    }

    /// Mean cross-entropy over the batch.
    pub fn loss(&self, batch: &Dataset) -> Result<f64> {
        self.check_data(batch)?;
        let mut hidden = vec![0.0; self.hidden_width()];
        let mut z = vec![0.0; self.architecture.classes()];
        let mut total = 0.0;
        for i in 0..batch.len() {
            self.logits(batch.row(i), &mut hidden, &mut z);
            total += log_sum_exp(&z) - z[batch.label(i)];
        }
        let loss = total / batch.len() as f64;
        if !loss.is_finite() {
            return Err(Error::NonFinite("loss"));
        }
        Ok(loss)
    }

    /// Mean cross-entropy gradient over the batch, in weight layout.
    pub fn gradient(&self, batch: &Dataset) -> Result<UpdateVector> {
        self.check_data(batch)?;
        if batch.is_empty() {
            return Err(Error::Empty("gradient batch"));
        }
        let classes = self.architecture.classes();
        let h = self.hidden_width();
        let mut grad = vec![0.0; self.architecture.param_count()];
        let mut hidden = vec![0.0; h];
        let mut z = vec![0.0; classes];
        let mut dh = vec![0.0; h];

        for i in 0..batch.len() {
            let x = batch.row(i);
            self.logits(x, &mut hidden, &mut z);
            softmax_in_place(&mut z);
            z[batch.label(i)] -= 1.0;
            let dz = &z;

            match self.architecture {
                Architecture::LogisticRegression { features, .. } => {
                    let (gw, gb) = grad.split_at_mut(classes * features);
                    for c in 0..classes {
                        axpy(&mut gw[c * features..(c + 1) * features], dz[c], x);
                        gb[c] += dz[c];
                    }
                }
                Architecture::Mlp { features, .. } => {
                    let w = self.weights.as_slice();
                    let w2 = &w[h * features + h..h * features + h + classes * h];
                    let (gw1, rest) = grad.split_at_mut(h * features);
                    let (gb1, rest) = rest.split_at_mut(h);
                    let (gw2, gb2) = rest.split_at_mut(classes * h);
                    dh.iter_mut().for_each(|v| *v = 0.0);
                    for c in 0..classes {
                        axpy(&mut gw2[c * h..(c + 1) * h], dz[c], &hidden);
                        gb2[c] += dz[c];
                        axpy(&mut dh, dz[c], &w2[c * h..(c + 1) * h]);
                    }
                    for j in 0..h {
                        let da = dh[j] * (1.0 - hidden[j] * hidden[j]);
                        axpy(&mut gw1[j * features..(j + 1) * features], da, x);
                        gb1[j] += da;
                    }
                }
            }
        }

        let n = batch.len() as f64;
        for g in grad.iter_mut() {
            *g /= n;
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("gradient"));
        }
        Ok(UpdateVector::from_raw(grad))
    }

    /// Arg-max class for one row; ties resolve to the lowest index.
    pub fn predict(&self, x: &[f64]) -> usize {
        let mut hidden = vec![0.0; self.hidden_width()];
        let mut z = vec![0.0; self.architecture.classes()];
        self.logits(x, &mut hidden, &mut z);
        argmax(&z)
    }
}

/// Top-1 accuracy on `test`.
pub fn evaluate(w: &ModelParams, test: &Dataset) -> Result<f64> {
    w.check_data(test)?;
    if test.is_empty() {
        return Err(Error::Empty("evaluate"));
    }
    let mut hidden = vec![0.0; w.hidden_width()];
    let mut z = vec![0.0; w.architecture.classes()];
    let mut correct = 0usize;
    for i in 0..test.len() {
        w.logits(test.row(i), &mut hidden, &mut z);
        if argmax(&z) == test.label(i) {
            correct += 1;
        }
    }
    Ok(correct as f64 / test.len() as f64)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in z.iter().enumerate().skip(1) {
        if v > z[best] {
            best = i;
        }
    }
    best
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn softmax_in_place(z: &mut [f64]) {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in z.iter_mut() {
        *v /= s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn logreg(features: usize, classes: usize, w: Vec<f64>) -> ModelParams {
        ModelParams::new(
            Architecture::LogisticRegression { features, classes },
            UpdateVector::new(w).unwrap(),
        )
        .unwrap()
    }

    fn central_difference(m: &ModelParams, data: &Dataset, h: f64) -> Vec<f64> {
        let base = m.weights().as_slice().to_vec();
        (0..base.len())
            .map(|j| {
                let mut plus = base.clone();
                plus[j] += h;
                let mut minus = base.clone();
                minus[j] -= h;
                let fp = m
                    .with_weights(UpdateVector::new(plus).unwrap())
                    .unwrap()
                    .loss(data)
                    .unwrap();
                let fm = m
                    .with_weights(UpdateVector::new(minus).unwrap())
                    .unwrap()
                    .loss(data)
                    .unwrap();
                (fp - fm) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn param_counts() {
        assert_eq!(
            Architecture::LogisticRegression {
                features: 3,
                classes: 4
            }
            .param_count(),
            16
        );
        assert_eq!(
            Architecture::Mlp {
                features: 3,
                hidden: 5,
                classes: 4
            }
            .param_count(),
            15 + 5 + 20 + 4
        );
    }

    #[test]
    fn rejects_wrong_weight_length() {
        assert!(ModelParams::new(
            Architecture::LogisticRegression {
                features: 2,
                classes: 2
            },
            UpdateVector::zeros(5)
        )
        .is_err());
    }

    #[test]
    fn single_sample_gradient_matches_hand_computation() {
        // 2 features, 2 classes, W = [[0.1, -0.2], [0.3, 0.4]], b = [0.05, -0.05]
        let m = logreg(2, 2, vec![0.1, -0.2, 0.3, 0.4, 0.05, -0.05]);
        let x = [1.0, 2.0];
        let data = Dataset::new(x.to_vec(), 2, vec![1], 2).unwrap();
        let z0: f64 = 0.1 - 0.4 + 0.05;
        let z1: f64 = 0.3 + 0.8 - 0.05;
        let p0 = z0.exp() / (z0.exp() + z1.exp());
        let p1 = 1.0 - p0;
        let expected = [p0 * 1.0, p0 * 2.0, (p1 - 1.0) * 1.0, (p1 - 1.0) * 2.0, p0, p1 - 1.0];
        let g = m.gradient(&data).unwrap();
        for (a, b) in g.as_slice().iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn saturated_softmax_has_tiny_gradient() {
        let m = logreg(2, 2, vec![10.0, 0.0, -10.0, 0.0, 0.0, 0.0]);
        let data = Dataset::new(vec![1.0, 0.0], 2, vec![0], 2).unwrap();
        assert!(m.gradient(&data).unwrap().norm() <= 1e-3);
    }

    #[test]
    fn duplicated_batch_has_same_gradient() {
        let m = ModelParams::init(
            Architecture::Mlp {
                features: 3,
                hidden: 4,
                classes: 3,
            },
            5,
        )
        .unwrap();
        let rows = vec![0.1, 0.5, -0.3, 0.9, -0.2, 0.4];
        let data = Dataset::new(rows.clone(), 3, vec![2, 0], 3).unwrap();
        let doubled = data.subset(&[0, 0, 1, 1]).unwrap();
        let g1 = m.gradient(&data).unwrap();
        let g2 = m.gradient(&doubled).unwrap();
        assert!(g1.distance(&g2).unwrap() < 1e-14);
    }

    #[test]
    fn finite_difference_three_class_instance() {
        let m = logreg(3, 3, (0..12).map(|i| 0.07 * i as f64 - 0.3).collect());
        let data = Dataset::new(vec![0.2, -0.4, 1.1, 0.9, 0.3, -0.5], 3, vec![2, 1], 3).unwrap();
        let g = m.gradient(&data).unwrap();
        let fd = central_difference(&m, &data, 1e-5);
        for (a, n) in g.as_slice().iter().zip(&fd) {
            assert!((a - n).abs() <= 1e-4 * a.abs().max(n.abs()) + 1e-9, "{a} vs {n}");
        }
    }

    #[test]
    fn evaluate_constant_predictor() {
        // bias makes class 2 win everywhere
        let m = logreg(1, 3, vec![0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        let labels = vec![2, 2, 2, 0, 0, 1, 1, 1, 0, 0];
        let data = Dataset::new(vec![0.5; 10], 1, labels, 3).unwrap();
        assert!((evaluate(&m, &data).unwrap() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn evaluate_perfect_model() {
        let m = logreg(2, 2, vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let data = Dataset::new(vec![1.0, 0.0, 0.0, 1.0, 2.0, 0.5], 2, vec![0, 1, 0], 2).unwrap();
        assert_eq!(evaluate(&m, &data).unwrap(), 1.0);
    }
}
