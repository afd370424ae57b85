//! Defender-side estimation of the query of interest (QOI): naive mean and
//! median, and the coordinatewise M-estimator with its worst-case bias
//! recursion under Huber contamination.

use crate::error::{invalid, Error, Result};
use crate::quadrature::{composite_simpson, expect_normal, normal_pdf, normal_quantile};
use crate::scalar::Real;

/// Floor applied to the median absolute deviation.
pub const MAD_FLOOR: f64 = 1e-12;

const QUAD_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateMethod {
    Mean,
    Median,
    Robust,
}

/// Defender's estimate `x̃` of the current query of interest.
#[derive(Debug, Clone, PartialEq)]
pub struct QoiEstimate<T> {
    pub point: Vec<T>,
    pub method: EstimateMethod,
    /// Refinement rounds applied (0 for mean and median).
    pub iterations: usize,
    /// Worst-case bias in units of the clean sampling scale; infinite for the mean.
    pub bias_bound: f64,
}

fn check_points<T: Real>(points: &[Vec<T>]) -> Result<usize> {
    let d = points.first().map(Vec::len).ok_or(Error::Empty("query batch"))?;
    if let Some(bad) = points.iter().find(|p| p.len() != d) {
        return Err(Error::DimensionMismatch { expected: d, got: bad.len() });
    }
    Ok(d)
}

fn column<T: Real>(points: &[Vec<T>], j: usize) -> Vec<T> {
    points.iter().map(|p| p[j]).collect()
}

/// Coordinatewise arithmetic mean.
pub fn naive_mean<T: Real>(points: &[Vec<T>]) -> Result<Vec<T>> {
    let d = check_points(points)?;
    let n = T::from_usize_lossy(points.len());
    let mut acc = vec![T::zero(); d];
    for p in points {
        acc.iter_mut().zip(p).for_each(|(a, &v)| *a += v);
    }
    Ok(acc.into_iter().map(|v| v / n).collect())
}

/// Median of a list; even length averages the two middle values.
pub fn median<T: Real>(values: &[T]) -> Result<T> {
    if values.is_empty() {
        return Err(Error::Empty("values"));
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let n = v.len();
    Ok(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / T::lit(2.0) })
}

pub fn coordinate_median<T: Real>(points: &[Vec<T>]) -> Result<Vec<T>> {
    let d = check_points(points)?;
    (0..d).map(|j| median(&column(points, j))).collect()
}

/// Median absolute deviation `median |xᵢ − median(x)|`, floored at 1e-12.
pub fn mad<T: Real>(values: &[T]) -> Result<T> {
    let m = median(values)?;
    let dev: Vec<T> = values.iter().map(|&x| (x - m).abs()).collect();
    Ok(median(&dev)?.max(T::lit(MAD_FLOOR)))
}

/// `ψ(x) = (eˣ − 1)/(eˣ + 1)`.
pub fn psi<T: Real>(x: T) -> T {
    if x > T::lit(30.0) {
        T::one()
    } else if x < T::lit(-30.0) {
        -T::one()
    } else {
        (x / T::lit(2.0)).tanh()
    }
}

/// `ψ'(x) = (1 − ψ(x)²)/2`.
pub fn psi_prime<T: Real>(x: T) -> T {
    let p = psi(x);
    (T::one() - p * p) / T::lit(2.0)
}

/// `E_Φ[ψ']` for the standard normal, ≈ 0.4132.
pub fn expected_psi_prime() -> f64 {
    expect_normal(psi_prime::<f64>, QUAD_TOL)
}

/// Same integral by a fixed composite rule with `panels` panels.
pub fn expected_psi_prime_fixed(panels: usize) -> f64 {
    composite_simpson(|s| psi_prime(s) * normal_pdf(s), -10.0, 10.0, panels)
}

/// Coordinatewise M-estimate after `k` refinement rounds started from the
/// coordinate median. `k = 0` is exactly the coordinate median.
pub fn robust_point<T: Real>(points: &[Vec<T>], k: usize) -> Result<Vec<T>> {
    let d = check_points(points)?;
    let n = T::from_usize_lossy(points.len());
    let e_psi = T::lit(expected_psi_prime());
    let mut out = Vec::with_capacity(d);
    for j in 0..d {
        let col = column(points, j);
        let scale = mad(&col)?;
        let mut est = median(&col)?;
        for _ in 0..k {
            let s: T = col.iter().map(|&x| psi((x - est) / scale)).sum();
            est += scale / e_psi * s / n;
        }
        out.push(est);
    }
    Ok(out)
}

/// Robust QOI estimate with the worst-case bias bound for `assumed_p_fake`.
pub fn robust_estimate<T: Real>(points: &[Vec<T>], k: usize, assumed_p_fake: f64) -> Result<QoiEstimate<T>> {
    let point = robust_point(points, k)?;
    Ok(QoiEstimate { point, method: EstimateMethod::Robust, iterations: k, bias_bound: bias_bound(assumed_p_fake, k)? })
}

pub fn estimate_qoi<T: Real>(points: &[Vec<T>], method: EstimateMethod, k: usize, assumed_p_fake: f64) -> Result<QoiEstimate<T>> {
    match method {
        EstimateMethod::Mean => Ok(QoiEstimate {
            point: naive_mean(points)?,
            method,
            iterations: 0,
            bias_bound: if assumed_p_fake > 0.0 { f64::INFINITY } else { 0.0 },
        }),
        EstimateMethod::Median => Ok(QoiEstimate {
            point: coordinate_median(points)?,
            method,
            iterations: 0,
            bias_bound: bias_bound(assumed_p_fake, 0)?,
        }),
        EstimateMethod::Robust => robust_estimate(points, k, assumed_p_fake),
    }
}

/// Worst-case bias sequence `B⁽⁰⁾ … B⁽ᵏ⁾` with all contamination at `+∞`.
///
/// `B⁽⁰⁾ = Φ⁻¹(1 / (2(1 − p)))` and each round adds
/// `((1 − p) E_Φ[ψ(X − B)] + p ψ(∞)) / E_Φ[ψ']`, evaluated as written.
pub fn bias_bound_sequence(p_fake: f64, k: usize) -> Result<Vec<f64>> {
    if !(0.0..0.5).contains(&p_fake) {
        return Err(invalid("p_fake", format!("{p_fake} outside the contamination range [0, 0.5)")));
    }
    let e_psi = expected_psi_prime();
    let mut b = normal_quantile(1.0 / (2.0 * (1.0 - p_fake)));
    let mut seq = vec![b];
    for _ in 0..k {
        let clean = expect_normal(|s| psi(s - b), QUAD_TOL);
        b += ((1.0 - p_fake) * clean + p_fake) / e_psi;
        seq.push(b);
    }
    Ok(seq)
}

pub fn bias_bound(p_fake: f64, k: usize) -> Result<f64> {
    Ok(*bias_bound_sequence(p_fake, k)?.last().expect("non-empty"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal_vec, rng_for};

    #[test]
    fn mean_and_median_basics() {
        let pts = vec![vec![0.0, 0.0], vec![2.0, 2.0]];
        assert_eq!(naive_mean(&pts).unwrap(), vec![1.0, 1.0]);
        assert_eq!(naive_mean(&[vec![3.0, -1.0]]).unwrap(), vec![3.0, -1.0]);
        let col: Vec<Vec<f64>> = [1.0, 2.0, 3.0, 4.0, 100.0].iter().map(|&v| vec![v]).collect();
        assert_eq!(coordinate_median(&col).unwrap(), vec![3.0]);
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]).unwrap(), 2.5);
        assert!(matches!(naive_mean::<f64>(&[]), Err(Error::Empty(_))));
        assert!(matches!(coordinate_median::<f64>(&[]), Err(Error::Empty(_))));
    }

    #[test]
    fn mean_shift_from_far_fakes() {
        let mut pts: Vec<Vec<f64>> = vec![vec![0.5; 3]; 90];
        pts.extend(vec![vec![10.5; 3]; 10]);
        let m = naive_mean(&pts).unwrap();
        assert!(m.iter().all(|&v| (v - 1.5).abs() < 1e-12));
    }

    #[test]
    fn mad_cases() {
        assert_eq!(mad(&[1.0, 2.0, 3.0, 4.0, 100.0]).unwrap(), 1.0);
        assert_eq!(mad(&[7.0; 5]).unwrap(), MAD_FLOOR);
        assert!(mad::<f64>(&[]).is_err());
        let mut rng = rng_for(5, 0);
        let z: Vec<f64> = normal_vec(&mut rng, 10_000);
        let m = mad(&z).unwrap();
        assert!((m / 0.6745 - 1.0).abs() < 0.05, "{m}");
    }

    #[test]
    fn psi_values() {
        assert_eq!(psi(0.0f64), 0.0);
        assert!((psi(1.0f64) - 0.46212).abs() < 1e-5);
        assert!((psi(1.0f64) - (1f64.exp() - 1.0) / (1f64.exp() + 1.0)).abs() < 1e-15);
        assert_eq!(psi(50.0f64), 1.0);
        assert_eq!(psi(-800.0f64), -1.0);
        for x in [-3.0f64, -0.2, 0.7, 12.0] {
            assert!((psi(x) + psi(-x)).abs() < 1e-15);
        }
    }

    #[test]
    fn expected_psi_prime_value() {
        let e = expected_psi_prime();
        assert!((e - 0.4132).abs() < 5e-4);
        assert!(e < 1.0);
        let a = expected_psi_prime_fixed(4000);
        let b = expected_psi_prime_fixed(8000);
        assert!((a - b).abs() < 1e-8);
        assert!((a - e).abs() < 1e-6);
    }

    #[test]
    fn robust_k0_is_median_and_symmetric_is_exact() {
        let pts: Vec<Vec<f64>> = vec![vec![0.1, 5.0], vec![0.4, 1.0], vec![0.2, 2.0], vec![9.0, 3.0]];
        assert_eq!(robust_point(&pts, 0).unwrap(), coordinate_median(&pts).unwrap());
        let sym: Vec<Vec<f64>> = [-3.0, -1.0, -0.5, 0.0, 0.5, 1.0, 3.0].iter().map(|&o| vec![2.0 + o]).collect();
        let est = robust_point(&sym, 3).unwrap();
        assert!((est[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn bias_bound_values() {
        for k in 0..4 {
            assert!(bias_bound(0.0, k).unwrap().abs() < 1e-9);
        }
        assert!((bias_bound(0.2, 0).unwrap() - 0.3186).abs() < 1e-4);
        // quadrature value cross-checked with an independent integrator
        assert!((bias_bound(0.4, 1).unwrap() - 1.3810).abs() < 1e-3);
        assert!(bias_bound(0.5, 1).is_err());
        assert!(bias_bound(-0.1, 1).is_err());
        let mut prev = -1.0;
        for p in [0.0, 0.1, 0.2, 0.3, 0.4] {
            let b = bias_bound(p, 1).unwrap();
            assert!(b >= prev);
            prev = b;
        }
    }
}
