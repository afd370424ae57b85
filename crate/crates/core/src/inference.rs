//! Passive intent inference: rank classes by how well each class's loss
//! gradient explains the observed step between consecutive QOI estimates, and
//! accumulate the evidence multiplicatively.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cosine, sub, Matrix};
use crate::model::{ClassId, Classifier};
use crate::scalar::Real;

/// Whether scores compare the gradient with `−d` (descent) or with `d` as written.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreSign {
    #[default]
    Descent,
    Verbatim,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Direction<T> {
    pub vector: Vec<T>,
    pub degenerate: bool,
}

/// `x̃⁽ⁱ⁺¹⁾ − x̃⁽ⁱ⁾`; an all-zero difference is flagged.
pub fn descent_direction<T: Real>(x_prev: &[T], x_next: &[T]) -> Direction<T> {
    let vector = sub(x_next, x_prev);
    let degenerate = vector.iter().all(|v| v.is_zero());
    Direction { vector, degenerate }
}

/// Cosine of each gradient row with the (sign-adjusted) direction. Zero rows
/// score 0.
pub fn class_scores<T: Real>(direction: &[T], grads: &Matrix<T>, sign: ScoreSign) -> Result<Vec<T>> {
    if direction.len() != grads.cols() {
        return Err(Error::DimensionMismatch { expected: grads.cols(), got: direction.len() });
    }
    if direction.iter().all(|v| v.is_zero()) {
        return Err(Error::ZeroDirection);
    }
    let d: Vec<T> = match sign {
        ScoreSign::Descent => direction.iter().map(|&v| -v).collect(),
        ScoreSign::Verbatim => direction.to_vec(),
    };
    Ok(grads.iter_rows().map(|g| cosine(&d, g).unwrap_or_else(T::zero)).collect())
}

fn softmax<T: Real>(s: &[T]) -> Vec<T> {
    let m = s.iter().copied().fold(T::neg_infinity(), T::max);
    let e: Vec<T> = s.iter().map(|&v| (v - m).exp()).collect();
    let z: T = e.iter().copied().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Running belief over the attacker's target class.
#[derive(Debug, Clone, PartialEq)]
pub struct IntentPosterior<T> {
    pub probabilities: Vec<T>,
    pub iterations_observed: usize,
    pub confident: bool,
    pub inferred_class: Option<ClassId>,
}

impl<T: Real> IntentPosterior<T> {
    pub fn uniform(n_classes: usize) -> Self {
        let p = T::one() / T::from_usize_lossy(n_classes);
        IntentPosterior { probabilities: vec![p; n_classes], iterations_observed: 0, confident: false, inferred_class: None }
    }

    /// Most probable class, lowest index on ties.
    pub fn argmax(&self) -> ClassId {
        let mut best = 0;
        for (i, &p) in self.probabilities.iter().enumerate() {
            if p > self.probabilities[best] {
                best = i;
            }
        }
        ClassId(best)
    }

    pub fn max(&self) -> T {
        self.probabilities.iter().copied().fold(T::zero(), T::max)
    }
}

/// `p ← normalize(p ⊙ softmax(s))`; confident once `max p ≥ κ`.
pub fn update_posterior<T: Real>(posterior: &IntentPosterior<T>, scores: &[T], kappa: f64) -> Result<IntentPosterior<T>> {
    if scores.len() != posterior.probabilities.len() {
        return Err(Error::DimensionMismatch { expected: posterior.probabilities.len(), got: scores.len() });
    }
    let sm = softmax(scores);
    let mut p: Vec<T> = posterior.probabilities.iter().zip(&sm).map(|(&a, &b)| a * b).collect();
    let z: T = p.iter().copied().sum();
    p.iter_mut().for_each(|v| *v /= z);
    let mut next = IntentPosterior {
        probabilities: p,
        iterations_observed: posterior.iterations_observed + 1,
        confident: false,
        inferred_class: None,
    };
    next.confident = next.max().as_f64() >= kappa;
    next.inferred_class = Some(next.argmax());
    Ok(next)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Inference<T> {
    Inferred { class: ClassId, posterior: IntentPosterior<T> },
    /// Every observed step was zero.
    Undetermined,
}

/// Scores consecutive QOI pairs with the model's gradients at the earlier
/// point; stops early at confidence `κ`.
pub fn passive_infer<T: Real>(qois: &[Vec<T>], model: &Classifier<T>, kappa: f64, sign: ScoreSign) -> Result<Inference<T>> {
    if qois.len() < 2 {
        return Err(Error::Empty("QOI sequence needs at least two estimates"));
    }
    let mut post = IntentPosterior::uniform(model.n_classes());
    let mut any = false;
    for w in qois.windows(2) {
        let dir = descent_direction(&w[0], &w[1]);
        if dir.degenerate {
            continue;
        }
        any = true;
        let g = model.gradient_matrix(&w[0])?;
        post = update_posterior(&post, &class_scores(&dir.vector, &g, sign)?, kappa)?;
        if post.confident {
            break;
        }
    }
    if !any {
        return Ok(Inference::Undetermined);
    }
    Ok(Inference::Inferred { class: post.argmax(), posterior: post })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_class_update() {
        let p = update_posterior(&IntentPosterior::<f64>::uniform(2), &[1.0, -1.0], 0.6).unwrap();
        let e2 = 2f64.exp();
        assert!((p.probabilities[0] - e2 / (1.0 + e2)).abs() < 1e-12);
        assert!(p.confident);
        assert_eq!(p.inferred_class, Some(ClassId(0)));
    }

    #[test]
    fn equal_scores_keep_uniform() {
        let p = update_posterior(&IntentPosterior::<f64>::uniform(4), &[0.3; 4], 0.6).unwrap();
        assert!(p.probabilities.iter().all(|&v| (v - 0.25).abs() < 1e-15));
        assert_eq!(p.argmax(), ClassId(0));
    }

    #[test]
    fn scores_follow_sign_convention() {
        let g: Matrix<f64> = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0]]).unwrap();
        let s = class_scores(&[-3.0, 0.0], &g, ScoreSign::Descent).unwrap();
        assert!((s[0] - 1.0).abs() < 1e-15 && s[1].abs() < 1e-15);
        let v = class_scores(&[-3.0, 0.0], &g, ScoreSign::Verbatim).unwrap();
        assert!((v[0] + 1.0).abs() < 1e-15);
        assert!(matches!(class_scores(&[0.0, 0.0], &g, ScoreSign::Descent), Err(Error::ZeroDirection)));
    }

    #[test]
    fn zero_rows_are_neutral() {
        let g = Matrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0]]).unwrap();
        let s = class_scores(&[1.0, -1.0], &g, ScoreSign::Descent).unwrap();
        assert_eq!(s[0], 0.0);
    }
}
