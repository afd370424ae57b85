//! The black-box attacker: batch sampling with optional fake queries, the
//! projected sign-descent loop, and attack traces.

mod estimators;
mod fakes;

pub use estimators::{
    estimate_objective, hessaware_estimate, hessian_estimate, nes_antithetic_estimate, nes_estimate, preconditioner,
    sample_objective, signsgd_estimate, EstimatorKind, Samples,
};
pub use fakes::{generate_fake_queries, FakeStrategy};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{norm2, Matrix};
use crate::model::{ClassId, Classifier, DomainBox, ProbVector};
use crate::rng::{normal_vec, rng_for, SimRng};
use crate::scalar::{sign0, Real};

/// Attack hyper-parameters. Defaults follow the common experimental setting
/// (α = 0.01, ε = 0.03, 10 iterations, 100 queries, half of them fake).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackConfig {
    pub alpha: f64,
    pub epsilon: f64,
    pub n_iter: usize,
    pub n_query: usize,
    pub sigma: f64,
    pub p_fake: f64,
    pub tau: f64,
    pub estimator: EstimatorKind,
    pub fake_strategy: FakeStrategy,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            alpha: 0.01,
            epsilon: 0.03,
            n_iter: 10,
            n_query: 100,
            sigma: 0.001,
            p_fake: 0.5,
            tau: 1.0,
            estimator: EstimatorKind::SignSgd,
            fake_strategy: FakeStrategy::Uniform,
            seed: 0,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) {
            return Err(invalid("attack.alpha", "step size must be >= 0"));
        }
        if !(self.epsilon > 0.0) {
            return Err(invalid("attack.epsilon", "radius must be > 0"));
        }
        if !(self.sigma > 0.0) {
            return Err(invalid("attack.sigma", "sampling deviation must be > 0"));
        }
        if !(0.0..1.0).contains(&self.p_fake) {
            return Err(invalid("attack.p_fake", format!("{} outside [0, 1)", self.p_fake)));
        }
        if self.n_query < 2 {
            return Err(invalid("attack.n_query", "need at least 2 queries per iteration"));
        }
        if self.n_true() < 2 {
            return Err(invalid("attack.p_fake", "leaves fewer than 2 true queries per iteration"));
        }
        if !(self.tau > 0.0) {
            return Err(invalid("attack.tau", "regularizer must be > 0"));
        }
        Ok(())
    }

    /// True sample count `⌊(1 − p_fake) n_query⌋`, rounded down to even for
    /// the paired layouts.
    pub fn n_true(&self) -> usize {
        let raw = ((1.0 - self.p_fake) * self.n_query as f64 + 1e-9).floor() as usize;
        match self.estimator {
            EstimatorKind::NesAntithetic | EstimatorKind::HessAware => raw - raw % 2,
            _ => raw,
        }
    }

    pub fn n_fake(&self) -> usize {
        self.n_query - self.n_true().min(self.n_query)
    }
}

/// Role of a query, known to the attacker and the harness only.
#[derive(Debug, Clone, PartialEq)]
pub enum QueryRole<T> {
    /// The current iterate itself (also the previous step's success check).
    Qoi,
    /// `x + σ dir` for gradient estimation.
    Sample { dir: Vec<T> },
    /// Antithetic pair member for the curvature estimate.
    Curvature { dir: Vec<T> },
    Fake,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Query<T> {
    pub point: Vec<T>,
    pub role: QueryRole<T>,
    pub answer: Option<ProbVector<T>>,
}

impl<T> Query<T> {
    pub fn is_fake(&self) -> bool {
        matches!(self.role, QueryRole::Fake)
    }
}

/// One iteration's queries in submission order.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryBatch<T> {
    pub iteration: usize,
    pub queries: Vec<Query<T>>,
    /// Ground-truth QOI `x⁽ⁱ⁾` (harness only).
    pub qoi_truth: Vec<T>,
}

impl<T: Real> QueryBatch<T> {
    /// The points as the defender sees them.
    pub fn points(&self) -> Vec<Vec<T>> {
        self.queries.iter().map(|q| q.point.clone()).collect()
    }

    pub fn fill_answers(&mut self, answers: Vec<ProbVector<T>>) -> Result<()> {
        if answers.len() != self.queries.len() {
            return Err(Error::MissingAnswer(answers.len()));
        }
        for (q, a) in self.queries.iter_mut().zip(answers) {
            q.answer = Some(a);
        }
        Ok(())
    }

    fn answer(&self, i: usize) -> Result<&ProbVector<T>> {
        self.queries[i].answer.as_ref().ok_or(Error::MissingAnswer(i))
    }

    /// Objective samples (target-class loss) for the requested role.
    fn samples(&self, target: ClassId, sigma: T, curvature: bool) -> Result<Samples<T>> {
        let mut dirs = Vec::new();
        let mut values = Vec::new();
        let mut center = None;
        for (i, q) in self.queries.iter().enumerate() {
            match (&q.role, curvature) {
                (QueryRole::Qoi, _) => center = Some(self.answer(i)?.loss(target)),
                (QueryRole::Sample { dir }, false) | (QueryRole::Curvature { dir }, true) => {
                    dirs.push(dir.clone());
                    values.push(self.answer(i)?.loss(target));
                }
                _ => {}
            }
        }
        Ok(Samples { sigma, center_value: center, dirs, values })
    }

    pub fn qoi_answer(&self) -> Option<&ProbVector<T>> {
        self.queries.iter().find(|q| matches!(q.role, QueryRole::Qoi)).and_then(|q| q.answer.as_ref())
    }
}

/// Estimated gradient at the QOI.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate<T> {
    pub vector: Vec<T>,
    pub estimator: EstimatorKind,
    pub n_true_queries: usize,
}

/// `Π_{B_ε(x∘) ∩ box}(x − α sign(ĝ))` with `sign(0) = 0`.
pub fn pgd_step<T: Real>(x: &[T], estimate: &[T], x_origin: &[T], alpha: T, epsilon: T, domain: DomainBox) -> Vec<T> {
    x.iter()
        .zip(estimate)
        .zip(x_origin)
        .map(|((&xi, &gi), &oi)| {
            let v = xi - alpha * sign0(gi);
            domain.clamp(v.max(oi - epsilon).min(oi + epsilon))
        })
        .collect()
}

/// Queries `x + σu` plus fakes, shuffled. Layout of the true share depends on
/// the estimator; a Hessian-aware batch splits it between curvature pairs and
/// samples preconditioned by `precond`.
#[allow(clippy::too_many_arguments)]
pub fn sample_batch<T: Real>(
    x: &[T],
    iteration: usize,
    config: &AttackConfig,
    domain: DomainBox,
    history: &[Vec<T>],
    precond: Option<&Matrix<T>>,
    include_qoi: bool,
    rng: &mut SimRng,
) -> Result<QueryBatch<T>> {
    config.validate()?;
    let sigma = T::lit(config.sigma);
    let d = x.len();
    let n_true = config.n_true();
    let point_at = |dir: &[T]| -> Vec<T> { x.iter().zip(dir).map(|(&a, &b)| domain.clamp(a + sigma * b)).collect() };
    let mut queries = Vec::with_capacity(config.n_query + 1);
    if include_qoi {
        queries.push(Query { point: x.to_vec(), role: QueryRole::Qoi, answer: None });
    }
    let push_pairs = |count: usize, curvature: bool, rng: &mut SimRng, queries: &mut Vec<Query<T>>| {
        for _ in 0..count / 2 {
            let u: Vec<T> = normal_vec(rng, d);
            let neg: Vec<T> = u.iter().map(|&v| -v).collect();
            for dir in [u, neg] {
                let point = point_at(&dir);
                let role = if curvature { QueryRole::Curvature { dir } } else { QueryRole::Sample { dir } };
                queries.push(Query { point, role, answer: None });
            }
        }
    };
    match config.estimator {
        EstimatorKind::NesAntithetic => push_pairs(n_true, false, rng, &mut queries),
        EstimatorKind::HessAware => {
            let n_curv = (n_true / 2) & !1;
            push_pairs(n_curv, true, rng, &mut queries);
            for _ in 0..n_true - n_curv {
                let u: Vec<T> = normal_vec(rng, d);
                let dir = match precond {
                    Some(p) => p.mul_vec(&u),
                    None => u,
                };
                queries.push(Query { point: point_at(&dir), role: QueryRole::Sample { dir }, answer: None });
            }
        }
        _ => {
            for _ in 0..n_true {
                let dir: Vec<T> = normal_vec(rng, d);
                queries.push(Query { point: point_at(&dir), role: QueryRole::Sample { dir }, answer: None });
            }
        }
    }
    let strategy = if config.p_fake > 0.0 { config.fake_strategy } else { FakeStrategy::None };
    for point in generate_fake_queries(x, config.n_fake(), strategy, sigma, history, domain, rng) {
        queries.push(Query { point, role: QueryRole::Fake, answer: None });
    }
    queries.shuffle(rng);
    Ok(QueryBatch { iteration, queries, qoi_truth: x.to_vec() })
}

/// One iteration of an attack trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub qoi: Vec<f64>,
    pub estimate_norm: f64,
    pub success: bool,
    pub cumulative_queries: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AttackTrace {
    pub records: Vec<IterationRecord>,
    /// Iteration whose step produced the first successful input.
    pub success_at: Option<usize>,
    pub adversarial: Option<Vec<f64>>,
    pub total_queries: usize,
}

impl AttackTrace {
    /// One JSON object per iteration.
    pub fn to_jsonl(&self) -> String {
        self.records.iter().map(|r| serde_json::to_string(r).expect("plain record") + "\n").collect()
    }
}

/// What the attacker learned from one answered batch.
#[derive(Debug, Clone, PartialEq)]
pub enum AttackEvent {
    /// The step of `iteration` reached the target label.
    Success { iteration: usize },
    /// Took a step; the new iterate will be checked with the next batch.
    Stepped { iteration: usize, estimate_norm: f64 },
    /// Iteration budget exhausted without success.
    Exhausted,
}

/// Attack state machine: `next_batch` → answers → `observe`, repeated.
///
/// Batch `i` carries the iterate `x⁽ⁱ⁾` itself among its queries; its answer
/// is the success check for iteration `i − 1` and the center value for the
/// one-sided estimators. After the last step a lone check query is issued.
#[derive(Debug, Clone)]
pub struct Attacker<T> {
    config: AttackConfig,
    domain: DomainBox,
    target: ClassId,
    x_origin: Vec<T>,
    x: Vec<T>,
    next_iteration: usize,
    history: Vec<Vec<T>>,
    precond: Option<Matrix<T>>,
    rng: SimRng,
    queries_spent: usize,
    done: bool,
    records: Vec<IterationRecord>,
    success_at: Option<usize>,
    keep_going: bool,
}

impl<T: Real> Attacker<T> {
    pub fn new(config: AttackConfig, domain: DomainBox, x_origin: Vec<T>, target: ClassId) -> Result<Self> {
        config.validate()?;
        let rng = rng_for(config.seed, 0xA77AC);
        Ok(Attacker {
            done: config.n_iter == 0,
            x: x_origin.clone(),
            x_origin,
            config,
            domain,
            target,
            next_iteration: 1,
            history: Vec::new(),
            precond: None,
            rng,
            queries_spent: 0,
            records: Vec::new(),
            success_at: None,
            keep_going: false,
        })
    }

    /// Keep stepping after the first success (success is still recorded).
    pub fn continue_after_success(mut self, yes: bool) -> Self {
        self.keep_going = yes;
        self
    }

    pub fn success_at(&self) -> Option<usize> {
        self.success_at
    }

    pub fn current(&self) -> &[T] {
        &self.x
    }

    pub fn target(&self) -> ClassId {
        self.target
    }

    pub fn queries_spent(&self) -> usize {
        self.queries_spent
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Next batch to submit, or `None` once the attack has ended.
    pub fn next_batch(&mut self) -> Result<Option<QueryBatch<T>>> {
        if self.done {
            return Ok(None);
        }
        let i = self.next_iteration;
        let batch = if i > self.config.n_iter {
            QueryBatch {
                iteration: i,
                queries: vec![Query { point: self.x.clone(), role: QueryRole::Qoi, answer: None }],
                qoi_truth: self.x.clone(),
            }
        } else {
            sample_batch(&self.x, i, &self.config, self.domain, &self.history, self.precond.as_ref(), true, &mut self.rng)?
        };
        self.queries_spent += batch.queries.len();
        Ok(Some(batch))
    }

    /// Consumes an answered batch. `true_gradient` is required only by the
    /// white-box ablation.
    pub fn observe(&mut self, batch: &QueryBatch<T>, true_gradient: Option<&[T]>) -> Result<AttackEvent> {
        let i = batch.iteration;
        let qoi_answer = batch.qoi_answer().ok_or(Error::MissingQoiAnswer)?;
        let mut event = None;
        if i >= 2 && qoi_answer.label() == self.target {
            if let Some(r) = self.records.last_mut() {
                r.success = true;
            }
            if self.success_at.is_none() {
                self.success_at = Some(i - 1);
                event = Some(AttackEvent::Success { iteration: i - 1 });
            }
            if !self.keep_going {
                self.done = true;
                return Ok(AttackEvent::Success { iteration: i - 1 });
            }
        }
        if i > self.config.n_iter {
            self.done = true;
            return Ok(event.unwrap_or(AttackEvent::Exhausted));
        }
        let sigma = T::lit(self.config.sigma);
        let estimate = match self.config.estimator {
            EstimatorKind::WhiteBox => true_gradient.ok_or_else(|| invalid("estimator", "white-box step without a gradient"))?.to_vec(),
            EstimatorKind::Nes => nes_estimate(&batch.samples(self.target, sigma, false)?)?,
            EstimatorKind::NesAntithetic => nes_antithetic_estimate(&batch.samples(self.target, sigma, false)?)?,
            EstimatorKind::SignSgd => signsgd_estimate(&batch.samples(self.target, sigma, false)?)?,
            EstimatorKind::HessAware => {
                let curv = batch.samples(self.target, sigma, true)?;
                let g = hessaware_estimate(&batch.samples(self.target, sigma, false)?)?;
                // curvature from this batch preconditions the next one
                let h = hessian_estimate(&curv, T::lit(self.config.tau))?;
                self.precond = Some(preconditioner(&h)?);
                g
            }
        };
        for q in &batch.queries {
            if matches!(q.role, QueryRole::Sample { .. } | QueryRole::Curvature { .. }) {
                self.history.push(q.point.clone());
            }
        }
        let norm = norm2(&estimate).as_f64();
        self.x = pgd_step(
            &self.x,
            &estimate,
            &self.x_origin,
            T::lit(self.config.alpha),
            T::lit(self.config.epsilon),
            self.domain,
        );
        self.records.push(IterationRecord {
            iteration: i,
            qoi: batch.qoi_truth.iter().map(|v| v.as_f64()).collect(),
            estimate_norm: norm,
            success: false,
            cumulative_queries: self.queries_spent,
        });
        self.next_iteration += 1;
        Ok(event.unwrap_or(AttackEvent::Stepped { iteration: i, estimate_norm: norm }))
    }

    pub fn into_trace(self) -> AttackTrace {
        let adversarial = self.success_at.filter(|_| !self.keep_going).map(|_| self.x.iter().map(|v| v.as_f64()).collect());
        AttackTrace { records: self.records, success_at: self.success_at, adversarial, total_queries: self.queries_spent }
    }
}

/// Runs Alg.-style projected sign descent against `oracle`, which answers a
/// list of points with probability vectors. With the white-box estimator the
/// model supplies exact gradients.
pub fn run_attack<T: Real, O>(
    mut oracle: O,
    white_box: Option<&Classifier<T>>,
    x_origin: &[T],
    target: ClassId,
    config: &AttackConfig,
    domain: DomainBox,
) -> Result<AttackTrace>
where
    O: FnMut(&[Vec<T>]) -> Result<Vec<ProbVector<T>>>,
{
    let mut attacker = Attacker::new(config.clone(), domain, x_origin.to_vec(), target)?;
    while let Some(mut batch) = attacker.next_batch()? {
        let answers = oracle(&batch.points())?;
        batch.fill_answers(answers)?;
        let grad = match (config.estimator, white_box) {
            (EstimatorKind::WhiteBox, Some(m)) => Some(m.input_gradient(attacker.current(), target)?),
            _ => None,
        };
        attacker.observe(&batch, grad.as_deref())?;
    }
    Ok(attacker.into_trace())
}

/// Oracle answering with the exact model output.
pub fn model_oracle<T: Real>(model: &Classifier<T>) -> impl FnMut(&[Vec<T>]) -> Result<Vec<ProbVector<T>>> + '_ {
    move |pts| pts.iter().map(|p| model.predict_probs(p)).collect()
}
