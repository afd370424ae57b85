//! Zeroth-order gradient estimators over a scalar objective sampled around a
//! point. The attacker's objective is the target-class cross-entropy read off
//! the answered probability vectors.

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{axpy, cholesky, lower_triangular_inverse, Matrix};
use crate::rng::normal_vec;
use crate::scalar::Real;

/// Objective values observed around a point `x`: `values[j] = h(x + σ dirs[j])`.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples<T> {
    pub sigma: T,
    /// `h(x)`, when the attacker queried the point itself.
    pub center_value: Option<T>,
    pub dirs: Vec<Vec<T>>,
    pub values: Vec<T>,
}

impl<T: Real> Samples<T> {
    fn dim(&self) -> Result<usize> {
        self.dirs.first().map(Vec::len).ok_or(Error::Empty("samples"))
    }

    fn check(&self) -> Result<usize> {
        let d = self.dim()?;
        if self.values.len() != self.dirs.len() {
            return Err(Error::MissingAnswer(self.values.len()));
        }
        Ok(d)
    }

    /// Consecutive `(u, −u)` pairs.
    fn pairs(&self) -> Result<usize> {
        let d = self.check()?;
        if !self.dirs.len().is_multiple_of(2) {
            return Err(Error::UnpairedBatch);
        }
        for pair in self.dirs.chunks(2) {
            if pair[0].iter().zip(&pair[1]).any(|(&a, &b)| a != -b) {
                return Err(Error::UnpairedBatch);
            }
        }
        Ok(d)
    }
}

/// `(1/(σn)) Σ h(x+σuⱼ) uⱼ`
pub fn nes_estimate<T: Real>(s: &Samples<T>) -> Result<Vec<T>> {
    let d = s.check()?;
    let scale = T::one() / (s.sigma * T::from_usize_lossy(s.dirs.len()));
    let mut g = vec![T::zero(); d];
    for (u, &v) in s.dirs.iter().zip(&s.values) {
        axpy(v * scale, u, &mut g);
    }
    Ok(g)
}

/// `(1/(σn)) Σ_{pairs} (h(x+σuⱼ) − h(x−σuⱼ)) uⱼ` with `n` the number of samples.
pub fn nes_antithetic_estimate<T: Real>(s: &Samples<T>) -> Result<Vec<T>> {
    let d = s.pairs()?;
    let scale = T::one() / (s.sigma * T::from_usize_lossy(s.dirs.len()));
    let mut g = vec![T::zero(); d];
    for (pair, vals) in s.dirs.chunks(2).zip(s.values.chunks(2)) {
        axpy((vals[0] - vals[1]) * scale, &pair[0], &mut g);
    }
    Ok(g)
}

/// One-sided estimator `(1/(σn)) Σ (h(x+σuⱼ) − h(x)) uⱼ`.
pub fn signsgd_estimate<T: Real>(s: &Samples<T>) -> Result<Vec<T>> {
    let d = s.check()?;
    let h0 = s.center_value.ok_or(Error::MissingQoiAnswer)?;
    let scale = T::one() / (s.sigma * T::from_usize_lossy(s.dirs.len()));
    let mut g = vec![T::zero(); d];
    for (u, &v) in s.dirs.iter().zip(&s.values) {
        axpy((v - h0) * scale, u, &mut g);
    }
    Ok(g)
}

/// Hessian-aware estimator on preconditioned samples: `dirs[j] = P uⱼ` with
/// `P = L⁻ᵀ`, `H̃ = L Lᵀ`. Algebraically the one-sided estimator in the
/// preconditioned directions.
pub fn hessaware_estimate<T: Real>(s: &Samples<T>) -> Result<Vec<T>> {
    signsgd_estimate(s)
}

/// `Σ |h(x+σu)+h(x−σu)−2h(x)| u uᵀ / (2σ² n_pairs) + τI`.
///
/// If the result is not positive definite, `τ` grows ×10 up to three times.
pub fn hessian_estimate<T: Real>(s: &Samples<T>, tau: T) -> Result<Matrix<T>> {
    let d = s.pairs()?;
    let h0 = s.center_value.ok_or(Error::MissingQoiAnswer)?;
    let n_pairs = s.dirs.len() / 2;
    let mut h = Matrix::zeros(d, d);
    let denom = T::lit(2.0) * s.sigma * s.sigma * T::from_usize_lossy(n_pairs);
    for (pair, vals) in s.dirs.chunks(2).zip(s.values.chunks(2)) {
        let w = (vals[0] + vals[1] - T::lit(2.0) * h0).abs() / denom;
        h.add_outer(w, &pair[0]);
    }
    // symmetrize against rounding in add_outer
    for i in 0..d {
        for j in 0..i {
            let m = (h[(i, j)] + h[(j, i)]) / T::lit(2.0);
            h[(i, j)] = m;
            h[(j, i)] = m;
        }
    }
    let mut reg = tau;
    for attempt in 0..=3 {
        let mut candidate = h.clone();
        candidate.add_diag(reg);
        if cholesky(&candidate).is_some() {
            return Ok(candidate);
        }
        if attempt < 3 {
            reg *= T::lit(10.0);
        }
    }
    Err(Error::NotPositiveDefinite { attempts: 3 })
}

/// `P = L⁻ᵀ` for `H̃ = L Lᵀ`, so `P Pᵀ = H̃⁻¹`.
pub fn preconditioner<T: Real>(h: &Matrix<T>) -> Result<Matrix<T>> {
    let l = cholesky(h).ok_or(Error::NotPositiveDefinite { attempts: 0 })?;
    Ok(lower_triangular_inverse(&l).transpose())
}

/// Which estimator an attack uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    Nes,
    NesAntithetic,
    SignSgd,
    HessAware,
    /// Ablation: the exact model gradient replaces the estimate.
    WhiteBox,
}

impl EstimatorKind {
    pub fn needs_center(self) -> bool {
        matches!(self, EstimatorKind::SignSgd | EstimatorKind::HessAware)
    }
}

/// Draws `n` samples of `h` around `x` in the layout an estimator expects and
/// returns them; a convenience for objective-level experiments.
pub fn sample_objective<T: Real, R: Rng + ?Sized, F: Fn(&[T]) -> T>(
    h: &F,
    x: &[T],
    sigma: T,
    n: usize,
    antithetic: bool,
    precond: Option<&Matrix<T>>,
    rng: &mut R,
) -> Samples<T> {
    let d = x.len();
    let mut dirs = Vec::with_capacity(n);
    while dirs.len() < n {
        let u: Vec<T> = normal_vec(rng, d);
        let v = match precond {
            Some(p) => p.mul_vec(&u),
            None => u,
        };
        if antithetic {
            if dirs.len() + 2 > n {
                break;
            }
            let neg: Vec<T> = v.iter().map(|&a| -a).collect();
            dirs.push(v);
            dirs.push(neg);
        } else {
            dirs.push(v);
        }
    }
    let values = dirs
        .iter()
        .map(|v| {
            let p: Vec<T> = x.iter().zip(v).map(|(&a, &b)| a + sigma * b).collect();
            h(&p)
        })
        .collect();
    Samples { sigma, center_value: Some(h(x)), dirs, values }
}

/// Runs one estimator end to end on objective `h` at `x` with `n` evaluations.
/// Hessian-aware spends half of `n` on the curvature estimate.
pub fn estimate_objective<T: Real, R: Rng + ?Sized, F: Fn(&[T]) -> T>(
    kind: EstimatorKind,
    h: &F,
    x: &[T],
    sigma: T,
    n: usize,
    tau: T,
    rng: &mut R,
) -> Result<Vec<T>> {
    match kind {
        EstimatorKind::Nes => nes_estimate(&sample_objective(h, x, sigma, n, false, None, rng)),
        EstimatorKind::NesAntithetic => nes_antithetic_estimate(&sample_objective(h, x, sigma, n, true, None, rng)),
        EstimatorKind::SignSgd => signsgd_estimate(&sample_objective(h, x, sigma, n, false, None, rng)),
        EstimatorKind::HessAware => {
            let half = n / 2;
            let curv = sample_objective(h, x, sigma, half, true, None, rng);
            let p = preconditioner(&hessian_estimate(&curv, tau)?)?;
            hessaware_estimate(&sample_objective(h, x, sigma, n - half, false, Some(&p), rng))
        }
        EstimatorKind::WhiteBox => Err(crate::error::invalid("estimator", "white-box needs model access")),
    }
}
