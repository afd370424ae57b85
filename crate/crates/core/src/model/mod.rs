//! Small differentiable softmax classifiers: the target model of an attack and
//! the white-box oracle the defender owns.

mod data;
mod io;
mod train;

pub use data::{BlobSpec, Dataset};
pub use io::{load_model, save_model, ModelFile};
pub use train::{train_toy_model, ToyProblem, TrainSpec};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{norm2, Matrix};
use crate::rng::{rng_for, uniform_in};
use crate::scalar::Real;

/// Probability floor inside the cross-entropy loss.
pub const PROB_FLOOR: f64 = 1e-12;

/// Index of a class, in `[0, n_classes)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ClassId(pub usize);

impl std::fmt::Display for ClassId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Softmax output of a classifier (or a synthesized answer).
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector<T>(Vec<T>);

impl<T: Real> ProbVector<T> {
    /// Wraps probabilities that are already on the simplex (within 1e-6).
    pub fn new(p: Vec<T>) -> Result<Self> {
        let s: T = p.iter().copied().sum();
        if p.is_empty()
            || p.iter().any(|&x| !(x >= T::zero() && x <= T::one()))
            || (s - T::one()).abs() > T::lit(1e-6)
        {
            return Err(invalid("probabilities", "not a probability vector"));
        }
        Ok(ProbVector(p))
    }

    pub(crate) fn new_unchecked(p: Vec<T>) -> Self {
        ProbVector(p)
    }

    pub fn uniform(n: usize) -> Self {
        ProbVector(vec![T::one() / T::from_usize_lossy(n); n])
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<T> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, c: ClassId) -> T {
        self.0[c.0]
    }

    /// Argmax with ties broken towards the lowest index.
    pub fn label(&self) -> ClassId {
        ClassId(argmax(&self.0))
    }

    /// Cross-entropy of class `c` with the probability floor applied.
    pub fn loss(&self, c: ClassId) -> T {
        -self.0[c.0].max(T::lit(PROB_FLOOR)).ln()
    }
}

pub(crate) fn argmax<T: Real>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn softmax<T: Real>(z: &[T]) -> Vec<T> {
    let m = z.iter().copied().fold(T::neg_infinity(), T::max);
    let e: Vec<T> = z.iter().map(|&x| (x - m).exp()).collect();
    let s: T = e.iter().copied().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// Axis-aligned domain box shared by all coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainBox {
    pub lo: f64,
    pub hi: f64,
}

impl Default for DomainBox {
    fn default() -> Self {
        DomainBox { lo: 0.0, hi: 1.0 }
    }
}

impl DomainBox {
    pub fn clamp<T: Real>(&self, x: T) -> T {
        x.max(T::lit(self.lo)).min(T::lit(self.hi))
    }

    pub fn contains<T: Real>(&self, x: &[T]) -> bool {
        x.iter().all(|&v| v >= T::lit(self.lo) && v <= T::lit(self.hi))
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Layer widths. `hidden == 0` is a linear-softmax (multinomial logistic) model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden: usize,
    pub n_classes: usize,
}

impl Architecture {
    pub fn n_params(&self) -> usize {
        if self.hidden == 0 {
            self.n_classes * self.input_dim + self.n_classes
        } else {
            self.hidden * self.input_dim + self.hidden + self.n_classes * self.hidden + self.n_classes
        }
    }
}

/// Softmax classifier `x ↦ softmax(W₂ tanh(W₁x + b₁) + b₂)`.
///
/// Immutable after construction; all methods take `&self` and can be shared
/// freely across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier<T> {
    arch: Architecture,
    domain: DomainBox,
    // hidden layer; empty when arch.hidden == 0
    w1: Matrix<T>,
    b1: Vec<T>,
    w2: Matrix<T>,
    b2: Vec<T>,
}

struct Forward<T> {
    hidden: Vec<T>,
    probs: Vec<T>,
}

impl<T: Real> Classifier<T> {
    /// All-zero parameters: outputs the uniform distribution everywhere.
    pub fn zeros(arch: Architecture, domain: DomainBox) -> Self {
        let feat = if arch.hidden == 0 { arch.input_dim } else { arch.hidden };
        Classifier {
            arch,
            domain,
            w1: Matrix::zeros(arch.hidden, arch.input_dim),
            b1: vec![T::zero(); arch.hidden],
            w2: Matrix::zeros(arch.n_classes, feat),
            b2: vec![T::zero(); arch.n_classes],
        }
    }

    /// Linear-softmax model `softmax(W x + b)`.
    pub fn linear(w: Matrix<T>, b: Vec<T>, domain: DomainBox) -> Result<Self> {
        if b.len() != w.rows() {
            return Err(Error::DimensionMismatch { expected: w.rows(), got: b.len() });
        }
        let arch = Architecture { input_dim: w.cols(), hidden: 0, n_classes: w.rows() };
        Ok(Classifier { arch, domain, w1: Matrix::zeros(0, w.cols()), b1: vec![], w2: w, b2: b })
    }

    /// Glorot-uniform initialization.
    pub fn random_init(arch: Architecture, domain: DomainBox, seed: u64) -> Self {
        let mut rng = rng_for(seed, 0xA11CE);
        let mut m = Self::zeros(arch, domain);
        let fill = |mat: &mut Matrix<T>, rng: &mut crate::rng::SimRng| {
            let lim = (6.0 / (mat.rows() + mat.cols()) as f64).sqrt();
            for r in 0..mat.rows() {
                for v in mat.row_mut(r) {
                    *v = uniform_in(rng, T::lit(-lim), T::lit(lim));
                }
            }
        };
        fill(&mut m.w1, &mut rng);
        fill(&mut m.w2, &mut rng);
        m
    }

    pub fn from_flat(arch: Architecture, domain: DomainBox, params: &[T]) -> Result<Self> {
        if params.len() != arch.n_params() {
            return Err(Error::DimensionMismatch { expected: arch.n_params(), got: params.len() });
        }
        let mut m = Self::zeros(arch, domain);
        let mut it = params.iter().copied();
        for slot in m.param_slots_mut() {
            *slot = it.next().expect("length checked");
        }
        Ok(m)
    }

    pub fn to_flat(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.arch.n_params());
        out.extend_from_slice(self.w1.as_slice());
        out.extend_from_slice(&self.b1);
        out.extend_from_slice(self.w2.as_slice());
        out.extend_from_slice(&self.b2);
        out
    }

    fn param_slots_mut(&mut self) -> impl Iterator<Item = &mut T> {
        let Classifier { w1, b1, w2, b2, .. } = self;
        w1.as_mut_slice().iter_mut().chain(b1.iter_mut()).chain(w2.as_mut_slice().iter_mut()).chain(b2.iter_mut())
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    pub fn domain(&self) -> DomainBox {
        self.domain
    }

    pub fn input_dim(&self) -> usize {
        self.arch.input_dim
    }

    pub fn n_classes(&self) -> usize {
        self.arch.n_classes
    }

    fn check_input(&self, x: &[T]) -> Result<()> {
        if x.len() != self.arch.input_dim {
            return Err(Error::DimensionMismatch { expected: self.arch.input_dim, got: x.len() });
        }
        Ok(())
    }

    fn check_class(&self, c: ClassId) -> Result<()> {
        if c.0 >= self.arch.n_classes {
            return Err(Error::ClassOutOfRange { class: c.0, n_classes: self.arch.n_classes });
        }
        Ok(())
    }

    fn forward(&self, x: &[T]) -> Forward<T> {
        if self.arch.hidden == 0 {
            let mut z = self.w2.mul_vec(x);
            z.iter_mut().zip(&self.b2).for_each(|(a, &b)| *a += b);
            return Forward { hidden: Vec::new(), probs: softmax(&z) };
        }
        let mut h = self.w1.mul_vec(x);
        for (a, &b) in h.iter_mut().zip(&self.b1) {
            *a = (*a + b).tanh();
        }
        let mut z = self.w2.mul_vec(&h);
        z.iter_mut().zip(&self.b2).for_each(|(a, &b)| *a += b);
        Forward { hidden: h, probs: softmax(&z) }
    }

    /// Back-propagates a logit-space vector to input space.
    fn backprop(&self, fwd: &Forward<T>, dlogits: &[T]) -> Vec<T> {
        let dfeat = self.w2.tr_mul_vec(dlogits);
        if self.arch.hidden == 0 {
            return dfeat;
        }
        let dpre: Vec<T> = dfeat.iter().zip(&fwd.hidden).map(|(&g, &h)| g * (T::one() - h * h)).collect();
        self.w1.tr_mul_vec(&dpre)
    }

    pub fn predict_probs(&self, x: &[T]) -> Result<ProbVector<T>> {
        self.check_input(x)?;
        Ok(ProbVector(self.forward(x).probs))
    }

    pub fn predict_label(&self, x: &[T]) -> Result<ClassId> {
        Ok(self.predict_probs(x)?.label())
    }

    /// Cross-entropy `−log p_c` with the probability floor.
    pub fn loss(&self, x: &[T], c: ClassId) -> Result<T> {
        self.check_class(c)?;
        Ok(self.predict_probs(x)?.loss(c))
    }

    /// Exact `∇ₓ ℓ(f(x), c)`.
    pub fn input_gradient(&self, x: &[T], c: ClassId) -> Result<Vec<T>> {
        self.check_input(x)?;
        self.check_class(c)?;
        let fwd = self.forward(x);
        let mut dl = fwd.probs.clone();
        dl[c.0] -= T::one();
        Ok(self.backprop(&fwd, &dl))
    }

    /// `|C| × d` matrix whose row `c` is `∇ₓ ℓ(f(x), c)`.
    pub fn gradient_matrix(&self, x: &[T]) -> Result<Matrix<T>> {
        self.check_input(x)?;
        let fwd = self.forward(x);
        let mut g = Matrix::zeros(self.arch.n_classes, self.arch.input_dim);
        // row c = J(p − e_c) = Jp − J e_c; share Jp across rows
        let common = self.backprop(&fwd, &fwd.probs);
        for c in 0..self.arch.n_classes {
            let mut e = vec![T::zero(); self.arch.n_classes];
            e[c] = T::one();
            let own = self.backprop(&fwd, &e);
            for ((dst, &a), &b) in g.row_mut(c).iter_mut().zip(&common).zip(&own) {
                *dst = a - b;
            }
        }
        Ok(g)
    }

    /// Loss and gradient with respect to all parameters, flattened in the
    /// `to_flat` order. Used by training.
    pub(crate) fn param_gradient(&self, x: &[T], c: usize, out: &mut [T]) -> T {
        let fwd = self.forward(x);
        let mut dl = fwd.probs.clone();
        let loss = -fwd.probs[c].max(T::lit(PROB_FLOOR)).ln();
        dl[c] -= T::one();
        let (d, h, k) = (self.arch.input_dim, self.arch.hidden, self.arch.n_classes);
        if h == 0 {
            let (gw, gb) = out.split_at_mut(k * d);
            for r in 0..k {
                for j in 0..d {
                    gw[r * d + j] += dl[r] * x[j];
                }
                gb[r] += dl[r];
            }
            return loss;
        }
        let (gw1, rest) = out.split_at_mut(h * d);
        let (gb1, rest) = rest.split_at_mut(h);
        let (gw2, gb2) = rest.split_at_mut(k * h);
        for r in 0..k {
            for j in 0..h {
                gw2[r * h + j] += dl[r] * fwd.hidden[j];
            }
            gb2[r] += dl[r];
        }
        let dfeat = self.w2.tr_mul_vec(&dl);
        for j in 0..h {
            let dp = dfeat[j] * (T::one() - fwd.hidden[j] * fwd.hidden[j]);
            for i in 0..d {
                gw1[j * d + i] += dp * x[i];
            }
            gb1[j] += dp;
        }
        loss
    }

    pub(crate) fn apply_update(&mut self, delta: &[T]) {
        for (slot, &dv) in self.param_slots_mut().zip(delta) {
            *slot += dv;
        }
    }
}

/// Axis-aligned sampling region for Lipschitz estimation.
#[derive(Debug, Clone, PartialEq)]
pub struct Region<T> {
    pub lo: Vec<T>,
    pub hi: Vec<T>,
}

impl<T: Real> Region<T> {
    /// `ℓ∞` ball of radius `r` around `center`, intersected with `domain`.
    pub fn around(center: &[T], r: T, domain: DomainBox) -> Self {
        Region {
            lo: center.iter().map(|&c| domain.clamp(c - r)).collect(),
            hi: center.iter().map(|&c| domain.clamp(c + r)).collect(),
        }
    }

    pub fn whole(d: usize, domain: DomainBox) -> Self {
        Region { lo: vec![T::lit(domain.lo); d], hi: vec![T::lit(domain.hi); d] }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<T> {
        self.lo.iter().zip(&self.hi).map(|(&l, &h)| uniform_in(rng, l, h)).collect()
    }

    fn clamp(&self, x: &mut [T]) {
        for ((v, &l), &h) in x.iter_mut().zip(&self.lo).zip(&self.hi) {
            *v = v.max(l).min(h);
        }
    }
}

/// Empirical Lipschitz constant `max ‖f(x)−f(y)‖ / ‖x−y‖` over sampled pairs.
///
/// Pairs alternate between independent draws over the region and close pairs
/// (offset ≤ 1% of the region width) so the local slope is probed too. The
/// draw sequence is prefix-stable: more samples only extend it.
pub fn estimate_lipschitz<T: Real>(model: &Classifier<T>, region: &Region<T>, n_samples: usize, seed: u64) -> Result<T> {
    model.check_input(&region.lo)?;
    let mut rng = rng_for(seed, 0x11B5);
    let width: Vec<T> = region.lo.iter().zip(&region.hi).map(|(&l, &h)| h - l).collect();
    let mut best = T::zero();
    for i in 0..n_samples {
        let x = region.sample(&mut rng);
        let mut y = if i % 2 == 0 {
            region.sample(&mut rng)
        } else {
            x.iter()
                .zip(&width)
                .map(|(&xi, &w)| xi + uniform_in(&mut rng, -w, w) * T::lit(0.01))
                .collect()
        };
        region.clamp(&mut y);
        let dx = norm2(&crate::linalg::sub(&x, &y));
        if dx == T::zero() {
            continue;
        }
        let fx = model.forward(&x).probs;
        let fy = model.forward(&y).probs;
        let df = norm2(&crate::linalg::sub(&fx, &fy));
        best = best.max(df / dx);
    }
    Ok(best)
}
