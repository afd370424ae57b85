use serde::{Deserialize, Serialize};

use crate::rng::rng_for;
use crate::scalar::Real;
use rand::seq::SliceRandom;

use super::{Architecture, BlobSpec, Classifier, Dataset, DomainBox};

/// Dataset plus architecture and optimizer settings for a toy model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSpec {
    pub data: BlobSpec,
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub domain: DomainBox,
}

impl Default for TrainSpec {
    fn default() -> Self {
        TrainSpec {
            data: BlobSpec::default(),
            hidden: 64,
            epochs: 30,
            learning_rate: 0.01,
            batch_size: 32,
            domain: DomainBox::default(),
        }
    }
}

/// A trained model together with the data it was fit on.
#[derive(Debug, Clone)]
pub struct ToyProblem<T> {
    pub model: Classifier<T>,
    pub data: Dataset<T>,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub final_loss: f64,
    /// False when the mean training loss did not at least halve.
    pub converged: bool,
}

pub fn accuracy<T: Real>(model: &Classifier<T>, xs: &[Vec<T>], ys: &[usize]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let hits = xs
        .iter()
        .zip(ys)
        .filter(|(x, &y)| model.predict_label(x).map(|c| c.0 == y).unwrap_or(false))
        .count();
    hits as f64 / xs.len() as f64
}

/// Trains an MLP on seeded Gaussian blobs with minibatch Adam.
pub fn train_toy_model<T: Real>(spec: &TrainSpec, seed: u64) -> ToyProblem<T> {
    let data: Dataset<T> = spec.data.generate(spec.domain, seed);
    let arch = Architecture { input_dim: spec.data.input_dim, hidden: spec.hidden, n_classes: spec.data.n_classes };
    let mut model = Classifier::random_init(arch, spec.domain, seed);
    let n_params = arch.n_params();
    let (b1, b2, eps) = (T::lit(0.9), T::lit(0.999), T::lit(1e-8));
    let lr = T::lit(spec.learning_rate);
    let mut m1 = vec![T::zero(); n_params];
    let mut m2 = vec![T::zero(); n_params];
    let mut grad = vec![T::zero(); n_params];
    let mut step = vec![T::zero(); n_params];
    let mut order: Vec<usize> = (0..data.train_x.len()).collect();
    let mut rng = rng_for(seed, 0x7A1);
    let mut t = 0i32;
    let mut first_loss = None;
    let mut last_loss = f64::NAN;
    let bs = spec.batch_size.max(1);
    for _ in 0..spec.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = T::zero();
        for chunk in order.chunks(bs) {
            grad.iter_mut().for_each(|g| *g = T::zero());
            for &i in chunk {
                epoch_loss += model.param_gradient(&data.train_x[i], data.train_y[i], &mut grad);
            }
            let inv = T::one() / T::from_usize_lossy(chunk.len());
            t += 1;
            let c1 = T::one() - b1.powi(t);
            let c2 = T::one() - b2.powi(t);
            for k in 0..n_params {
                let g = grad[k] * inv;
                m1[k] = b1 * m1[k] + (T::one() - b1) * g;
                m2[k] = b2 * m2[k] + (T::one() - b2) * g * g;
                step[k] = -lr * (m1[k] / c1) / ((m2[k] / c2).sqrt() + eps);
            }
            model.apply_update(&step);
        }
        let mean = epoch_loss.as_f64() / data.train_x.len().max(1) as f64;
        first_loss.get_or_insert(mean);
        last_loss = mean;
    }
    let converged = first_loss.is_some_and(|f| last_loss <= 0.5 * f);
    ToyProblem {
        train_accuracy: accuracy(&model, &data.train_x, &data.train_y),
        test_accuracy: accuracy(&model, &data.test_x, &data.test_y),
        final_loss: last_loss,
        converged,
        model,
        data,
    }
}
