//! Proactive answers: a first-order model around the estimated QOI whose
//! class gradients are pulled toward an orthogonal dispersion pattern, so the
//! attacker's descent direction reveals its target more clearly.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{dot, norm2, sub, Matrix};
use crate::model::{ClassId, Classifier, ProbVector};
use crate::rng::{normal_vec, rng_for};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RowScaling {
    /// Each 0/1 row is rescaled to the norm of the matching gradient row.
    #[default]
    GradientNorm,
    Raw,
}

/// Block-cyclic 0/1 pattern: coordinate `j` belongs to class `π_b(j mod C)`
/// with `b = j / C`.
#[derive(Debug, Clone, PartialEq)]
pub struct DispersionMatrix<T> {
    pub matrix: Matrix<T>,
    pub seed: Option<u64>,
}

impl<T: Real> DispersionMatrix<T> {
    /// Owning class of each coordinate.
    pub fn owners(&self) -> Vec<usize> {
        (0..self.matrix.cols())
            .map(|j| (0..self.matrix.rows()).find(|&c| self.matrix[(c, j)] != T::zero()).expect("one owner per column"))
            .collect()
    }
}

/// `seed = None` uses identity permutations in every block.
pub fn build_dispersion_matrix<T: Real>(n_classes: usize, d: usize, seed: Option<u64>) -> Result<DispersionMatrix<T>> {
    if n_classes == 0 || d < n_classes {
        return Err(invalid("dispersion", format!("need d >= n_classes, got d={d}, n_classes={n_classes}")));
    }
    let mut rng = seed.map(|s| rng_for(s, 0xD15E));
    let mut m = Matrix::zeros(n_classes, d);
    let mut perm: Vec<usize> = (0..n_classes).collect();
    for j in 0..d {
        if j % n_classes == 0 {
            perm = (0..n_classes).collect();
            if let Some(r) = rng.as_mut() {
                perm.shuffle(r);
            }
        }
        m[(perm[j % n_classes], j)] = T::one();
    }
    Ok(DispersionMatrix { matrix: m, seed })
}

/// `G = (1 − μ) g + μ M̃`, where `M̃` is `M` with rows rescaled per `scaling`.
pub fn mixed_gradient_matrix<T: Real>(
    grads: &Matrix<T>,
    m: &DispersionMatrix<T>,
    mu: f64,
    scaling: RowScaling,
) -> Result<Matrix<T>> {
    if grads.shape() != m.matrix.shape() {
        return Err(Error::DimensionMismatch { expected: m.matrix.rows() * m.matrix.cols(), got: grads.rows() * grads.cols() });
    }
    if !(0.0..=1.0).contains(&mu) {
        return Err(invalid("mu", format!("{mu} outside [0, 1]")));
    }
    let mu_t = T::lit(mu);
    let keep = T::one() - mu_t;
    let mut out = Matrix::zeros(grads.rows(), grads.cols());
    for c in 0..grads.rows() {
        let g = grads.row(c);
        let mrow = m.matrix.row(c);
        let s = match scaling {
            RowScaling::Raw => T::one(),
            RowScaling::GradientNorm => {
                let mn = norm2(mrow);
                if mn > T::zero() {
                    norm2(g) / mn
                } else {
                    T::zero()
                }
            }
        };
        for (o, (&gi, &mi)) in out.row_mut(c).iter_mut().zip(g.iter().zip(mrow)) {
            *o = keep * gi + mu_t * s * mi;
        }
    }
    Ok(out)
}

/// Probability-space Jacobian implied by loss-gradient rows at `p`:
/// `∇p_c = −p_c ∇ℓ_c`.
pub fn probability_jacobian<T: Real>(loss_grads: &Matrix<T>, p: &ProbVector<T>) -> Matrix<T> {
    let mut j = loss_grads.clone();
    for c in 0..j.rows() {
        let pc = p.get(ClassId(c));
        j.row_mut(c).iter_mut().for_each(|v| *v = -pc * *v);
    }
    j
}

/// The affine answer model released around one QOI estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct AnswerModel<T> {
    pub center: Vec<T>,
    pub center_probs: ProbVector<T>,
    pub jacobian: Matrix<T>,
}

impl<T: Real> AnswerModel<T> {
    /// Built from the model at `x̃` with loss-gradient rows `g_loss`.
    pub fn new(model: &Classifier<T>, center: &[T], g_loss: &Matrix<T>) -> Result<Self> {
        let center_probs = model.predict_probs(center)?;
        let jacobian = probability_jacobian(g_loss, &center_probs);
        Ok(AnswerModel { center: center.to_vec(), center_probs, jacobian })
    }

    /// `f(x̃) + G (x − x̃)` before any projection.
    pub fn raw_answer(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.center.len() {
            return Err(Error::DimensionMismatch { expected: self.center.len(), got: x.len() });
        }
        let lin = self.jacobian.mul_vec(&sub(x, &self.center));
        Ok(self.center_probs.as_slice().iter().zip(lin).map(|(&p, l)| p + l).collect())
    }

    /// Raw answer clamped to `[0, 1]` and renormalized. At `x = x̃` this is
    /// exactly `f(x̃)`.
    pub fn answer(&self, x: &[T]) -> Result<ProbVector<T>> {
        if x == self.center.as_slice() {
            return Ok(self.center_probs.clone());
        }
        Ok(sanitize(self.raw_answer(x)?))
    }
}

/// Projects an affine output back to a probability vector.
pub fn sanitize<T: Real>(raw: Vec<T>) -> ProbVector<T> {
    let n = raw.len();
    let clamped: Vec<T> = raw.into_iter().map(|v| if v.is_nan() { T::zero() } else { v.max(T::zero()).min(T::one()) }).collect();
    let z: T = clamped.iter().copied().sum();
    if z > T::zero() {
        ProbVector::new_unchecked(clamped.into_iter().map(|v| v / z).collect())
    } else {
        ProbVector::uniform(n)
    }
}

/// Synthesized answer at `x_query`; returns `(sanitized, raw)`.
pub fn synthesize_answer<T: Real>(x_query: &[T], answers: &AnswerModel<T>) -> Result<(ProbVector<T>, Vec<T>)> {
    Ok((answers.answer(x_query)?, answers.raw_answer(x_query)?))
}

/// `‖mean((v·u)u) − v‖ / ‖v‖` over `n` standard normal draws.
pub fn verify_prop1(v: &[f64], n_samples: usize, seed: u64) -> Result<f64> {
    let nv = norm2(v);
    if nv == 0.0 {
        return Err(invalid("v", "must be nonzero"));
    }
    if n_samples == 0 {
        return Err(Error::Empty("samples"));
    }
    let mut rng = rng_for(seed, 0x9201);
    let mut acc = vec![0.0; v.len()];
    for _ in 0..n_samples {
        let u: Vec<f64> = normal_vec(&mut rng, v.len());
        let s = dot(v, &u);
        acc.iter_mut().zip(&u).for_each(|(a, &ui)| *a += s * ui);
    }
    let mean: Vec<f64> = acc.iter().map(|a| a / n_samples as f64).collect();
    Ok(norm2(&sub(&mean, v)) / nv)
}

/// Outcome of a Monte Carlo check of the answer-error bound.
#[derive(Debug, Clone, PartialEq)]
pub struct Prop2Report {
    pub violation_rate: f64,
    pub lipschitz: f64,
    pub g_norm: f64,
    /// Largest observed `‖f̂ − f‖ / bound`.
    pub worst_ratio: f64,
}

/// Samples `x_i = x + σu` around the true QOI `x` and checks
/// `‖f̂(x_i) − f(x_i)‖ ≤ slack · (K + ‖G‖)(σ‖u‖ + bias)` on the raw answers.
/// `bias` is the distance `‖x − x̃‖` the caller allows for.
#[allow(clippy::too_many_arguments)]
pub fn verify_prop2<T: Real>(
    model: &Classifier<T>,
    x_true: &[T],
    answers: &AnswerModel<T>,
    lipschitz: f64,
    sigma: f64,
    bias: f64,
    n_samples: usize,
    slack: f64,
    seed: u64,
) -> Result<Prop2Report> {
    let g_norm = answers.jacobian.spectral_norm().as_f64();
    let mut rng = rng_for(seed, 0x9202);
    let mut violations = 0usize;
    let mut worst = 0.0f64;
    for _ in 0..n_samples {
        let u: Vec<T> = normal_vec(&mut rng, x_true.len());
        let xi: Vec<T> = x_true.iter().zip(&u).map(|(&a, &b)| a + T::lit(sigma) * b).collect();
        let raw = answers.raw_answer(&xi)?;
        let truth = model.predict_probs(&xi)?;
        let err = norm2(&sub(&raw, truth.as_slice())).as_f64();
        let bound = slack * (lipschitz + g_norm) * (sigma * norm2(&u).as_f64() + bias);
        if err > bound {
            violations += 1;
        }
        if bound > 0.0 {
            worst = worst.max(err / bound);
        }
    }
    let violation_rate = if n_samples == 0 { 0.0 } else { violations as f64 / n_samples as f64 };
    Ok(Prop2Report { violation_rate, lipschitz, g_norm, worst_ratio: worst })
}
