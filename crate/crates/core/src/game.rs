//! The capture-the-flag harness: an attacker and a defender share one query
//! channel; the attacker wants an adversarial input for its target class, the
//! defender wants to name that class with confidence first.

use rand::{Rng, RngCore};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::{AttackConfig, AttackEvent, Attacker};
use crate::error::{invalid, Result};
use crate::estimation::{naive_mean, robust_point};
use crate::inference::{class_scores, descent_direction, update_posterior, IntentPosterior, ScoreSign};
use crate::linalg::{norm_inf, sub, Matrix};
use crate::model::{ClassId, Classifier, ProbVector};
use crate::proactive::{build_dispersion_matrix, mixed_gradient_matrix, AnswerModel, DispersionMatrix, RowScaling};
use crate::rng::rng_for;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DefenderVariant {
    /// Mean QOI estimate, truthful answers.
    Basic,
    /// Robust QOI estimate, truthful answers.
    Robust,
    /// Robust QOI estimate, synthesized answers.
    RobustProactive,
}

impl DefenderVariant {
    pub fn label(self) -> &'static str {
        match self {
            DefenderVariant::Basic => "basic",
            DefenderVariant::Robust => "robust",
            DefenderVariant::RobustProactive => "robust-proactive",
        }
    }
}

/// What happens after a confident claim that names the wrong class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WrongClaimPolicy {
    /// The defender stops inferring; the attacker plays on.
    #[default]
    Retire,
    /// The claim is dropped and inference continues.
    Ignore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DefenderConfig {
    pub variant: DefenderVariant,
    pub kappa: f64,
    pub k: usize,
    pub mu: f64,
    /// Contamination level used only for reporting the bias bound.
    pub assumed_p_fake: f64,
    pub row_scaling: RowScaling,
    pub score_sign: ScoreSign,
    pub wrong_claim: WrongClaimPolicy,
    pub sigma_hint: f64,
    pub threshold_multiplier: f64,
}

impl Default for DefenderConfig {
    fn default() -> Self {
        DefenderConfig {
            variant: DefenderVariant::RobustProactive,
            kappa: 0.6,
            k: 1,
            mu: 0.3,
            assumed_p_fake: 0.4,
            row_scaling: RowScaling::GradientNorm,
            score_sign: ScoreSign::Descent,
            wrong_claim: WrongClaimPolicy::Retire,
            sigma_hint: 0.001,
            threshold_multiplier: crate::batching::DEFAULT_THRESHOLD_MULTIPLIER,
        }
    }
}

impl DefenderConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(invalid("defender.kappa", "must be a positive number"));
        }
        if !(0.0..=1.0).contains(&self.mu) {
            return Err(invalid("defender.mu", format!("{} outside [0, 1]", self.mu)));
        }
        if !(0.0..0.5).contains(&self.assumed_p_fake) {
            return Err(invalid("defender.assumed_p_fake", format!("{} outside [0, 0.5)", self.assumed_p_fake)));
        }
        if !(self.sigma_hint > 0.0) {
            return Err(invalid("defender.sigma_hint", "must be > 0"));
        }
        if !(self.threshold_multiplier > 0.0) {
            return Err(invalid("defender.threshold_multiplier", "must be > 0"));
        }
        Ok(())
    }

    pub fn with_variant(&self, variant: DefenderVariant) -> Self {
        DefenderConfig { variant, ..self.clone() }
    }
}

/// A confident claim made after observing `step` attack steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Claim {
    pub class: ClassId,
    pub step: usize,
}

/// Posterior after one scored step.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorStep {
    pub step: usize,
    pub scores: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub confident: bool,
}

/// Defender state across one game. Each call to [`Defender::respond`] handles
/// one batch: estimate the QOI, update the posterior, then answer.
#[derive(Debug, Clone)]
pub struct Defender<'m, T> {
    model: &'m Classifier<T>,
    config: DefenderConfig,
    dispersion: Option<DispersionMatrix<T>>,
    prev_qoi: Option<Vec<T>>,
    prev_released: Option<Matrix<T>>,
    posterior: IntentPosterior<T>,
    active: bool,
    batches: usize,
    argmax_trace: Vec<Option<ClassId>>,
    trajectory: Vec<PosteriorStep>,
}

impl<'m, T: Real> Defender<'m, T> {
    pub fn new(model: &'m Classifier<T>, config: DefenderConfig, dispersion_seed: u64) -> Result<Self> {
        config.validate()?;
        let dispersion = match config.variant {
            DefenderVariant::RobustProactive => {
                Some(build_dispersion_matrix(model.n_classes(), model.input_dim(), Some(dispersion_seed))?)
            }
            _ => None,
        };
        Ok(Defender {
            model,
            posterior: IntentPosterior::uniform(model.n_classes()),
            config,
            dispersion,
            prev_qoi: None,
            prev_released: None,
            active: true,
            batches: 0,
            argmax_trace: Vec::new(),
            trajectory: Vec::new(),
        })
    }

    pub fn posterior(&self) -> &IntentPosterior<T> {
        &self.posterior
    }

    /// Posterior argmax after each observed step (`None` before any evidence).
    pub fn argmax_trace(&self) -> &[Option<ClassId>] {
        &self.argmax_trace
    }

    pub fn trajectory(&self) -> &[PosteriorStep] {
        &self.trajectory
    }

    /// Stop inferring (after a wrong claim under [`WrongClaimPolicy::Retire`]).
    pub fn retire(&mut self) {
        self.active = false;
    }

    /// Drop a wrong claim and keep inferring from a fresh prior.
    pub fn reset_posterior(&mut self) {
        self.posterior = IntentPosterior::uniform(self.model.n_classes());
    }

    fn estimate(&self, points: &[Vec<T>]) -> Result<Vec<T>> {
        match self.config.variant {
            DefenderVariant::Basic => naive_mean(points),
            _ => robust_point(points, self.config.k),
        }
    }

    /// Handles one batch; returns the answers and a claim if the posterior
    /// became confident on this batch.
    pub fn respond(&mut self, points: &[Vec<T>]) -> Result<(Vec<ProbVector<T>>, Option<Claim>)> {
        self.batches += 1;
        let step = self.batches - 1;
        let qoi = self.estimate(points)?;
        let mut claim = None;
        if let (Some(prev), true) = (self.prev_qoi.as_ref(), self.active) {
            let dir = descent_direction(prev, &qoi);
            if !dir.degenerate {
                let scores = match self.prev_released.as_ref() {
                    Some(g) => class_scores(&dir.vector, g, self.config.score_sign)?,
                    None => class_scores(&dir.vector, &self.model.gradient_matrix(prev)?, self.config.score_sign)?,
                };
                self.posterior = update_posterior(&self.posterior, &scores, self.config.kappa)?;
                self.trajectory.push(PosteriorStep {
                    step,
                    scores: scores.iter().map(|v| v.as_f64()).collect(),
                    probabilities: self.posterior.probabilities.iter().map(|v| v.as_f64()).collect(),
                    confident: self.posterior.confident,
                });
                if self.posterior.confident {
                    claim = Some(Claim { class: self.posterior.argmax(), step });
                }
            }
        }
        if step >= 1 {
            let seen = self.posterior.iterations_observed > 0;
            self.argmax_trace.push(seen.then(|| self.posterior.argmax()));
        }
        let answers = match self.dispersion.as_ref() {
            Some(m) => {
                let g = mixed_gradient_matrix(&self.model.gradient_matrix(&qoi)?, m, self.config.mu, self.config.row_scaling)?;
                let am = AnswerModel::new(self.model, &qoi, &g)?;
                self.prev_released = Some(g);
                points.iter().map(|p| am.answer(p)).collect::<Result<Vec<_>>>()?
            }
            None => points.iter().map(|p| self.model.predict_probs(p)).collect::<Result<Vec<_>>>()?,
        };
        self.prev_qoi = Some(qoi);
        Ok((answers, claim))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GameResult {
    AttackerWin(usize),
    DefenderWin(usize),
    Draw,
}

/// `Ctf` stops at the first win; `Independent` plays all iterations and
/// records when each side would have succeeded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GameMode {
    #[default]
    Ctf,
    Independent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GameOutcome {
    pub result: GameResult,
    pub total_queries: usize,
    pub target: ClassId,
    pub inferred_class: Option<ClassId>,
    pub origin_index: usize,
    /// First step whose new input got the target label from the answers.
    pub attack_success_at: Option<usize>,
    /// Same, judged by the true model.
    pub true_success_at: Option<usize>,
    /// First confident claim, right or wrong.
    pub first_claim: Option<Claim>,
    pub correct_claim_at: Option<usize>,
    /// Posterior argmax after each step.
    pub argmax_trace: Vec<Option<ClassId>>,
    pub trajectory: Vec<PosteriorStep>,
}

impl GameOutcome {
    /// Argmax names the target after `step` observed steps.
    pub fn argmax_correct_by(&self, step: usize) -> bool {
        step >= 1 && self.argmax_trace.get(step - 1).copied().flatten() == Some(self.target)
    }
}

/// Draws `x∘` from `pool` and a target different from its predicted label.
pub fn draw_instance<T: Real, R: Rng + ?Sized>(model: &Classifier<T>, pool: &[Vec<T>], rng: &mut R) -> Result<(usize, ClassId)> {
    if pool.is_empty() {
        return Err(invalid("pool", "no inputs to attack"));
    }
    if model.n_classes() < 2 {
        return Err(invalid("model", "need at least two classes"));
    }
    let idx = rng.random_range(0..pool.len());
    let label = model.predict_label(&pool[idx])?;
    let mut t = rng.random_range(0..model.n_classes() - 1);
    if t >= label.0 {
        t += 1;
    }
    Ok((idx, ClassId(t)))
}

/// One game on a fixed instance.
pub fn play_instance<T: Real>(
    model: &Classifier<T>,
    x_origin: &[T],
    target: ClassId,
    attack: &AttackConfig,
    defender: &DefenderConfig,
    mode: GameMode,
    dispersion_seed: u64,
) -> Result<GameOutcome> {
    let domain = model.domain();
    let eps = T::lit(attack.epsilon);
    let mut att = Attacker::new(attack.clone(), domain, x_origin.to_vec(), target)?
        .continue_after_success(mode == GameMode::Independent);
    let mut def = Defender::new(model, defender.clone(), dispersion_seed)?;
    let mut result = GameResult::Draw;
    let mut first_claim = None;
    let mut correct_claim_at = None;
    let mut true_success_at = None;
    let mut defender_live = true;

    while let Some(mut batch) = att.next_batch()? {
        let (answers, claim) = def.respond(&batch.points())?;
        if let (Some(c), true) = (claim, defender_live) {
            first_claim.get_or_insert(c);
            if c.class == target {
                correct_claim_at = Some(c.step);
                defender_live = false;
                def.retire();
                if mode == GameMode::Ctf {
                    result = GameResult::DefenderWin(c.step);
                    break;
                }
            } else {
                match defender.wrong_claim {
                    WrongClaimPolicy::Retire => {
                        defender_live = false;
                        def.retire();
                    }
                    WrongClaimPolicy::Ignore => def.reset_posterior(),
                }
            }
        }
        if batch.iteration >= 2 && true_success_at.is_none() && model.predict_label(&batch.qoi_truth)? == target {
            true_success_at = Some(batch.iteration - 1);
        }
        batch.fill_answers(answers)?;
        let grad = match attack.estimator {
            crate::attack::EstimatorKind::WhiteBox => Some(model.input_gradient(att.current(), target)?),
            _ => None,
        };
        let ev = att.observe(&batch, grad.as_deref())?;
        if let AttackEvent::Success { iteration } = ev {
            let within = norm_inf(&sub(&batch.qoi_truth, x_origin)) <= eps + T::lit(1e-12);
            if mode == GameMode::Ctf && within {
                result = GameResult::AttackerWin(iteration);
                break;
            }
        }
    }
    Ok(GameOutcome {
        result,
        total_queries: att.queries_spent(),
        target,
        inferred_class: first_claim.map(|c| c.class),
        origin_index: 0,
        attack_success_at: att.success_at(),
        true_success_at,
        first_claim,
        correct_claim_at,
        argmax_trace: def.argmax_trace().to_vec(),
        trajectory: def.trajectory().to_vec(),
    })
}

/// One seeded game: draws the instance from `pool`, then plays it.
pub fn play_ctf<T: Real>(
    model: &Classifier<T>,
    pool: &[Vec<T>],
    attack: &AttackConfig,
    defender: &DefenderConfig,
    mode: GameMode,
    seed: u64,
) -> Result<GameOutcome> {
    let mut rng = rng_for(seed, 0x6A3E);
    let (idx, target) = draw_instance(model, pool, &mut rng)?;
    let attack = AttackConfig { seed: rng.next_u64(), ..attack.clone() };
    let mut out = play_instance(model, &pool[idx], target, &attack, defender, mode, rng.next_u64())?;
    out.origin_index = idx;
    Ok(out)
}

/// Seed of game `g` in a tournament seeded with `seed`.
pub fn game_seed(seed: u64, g: usize) -> u64 {
    rng_for(seed, 0x7000_0000 + g as u64).next_u64()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tournament {
    pub n_games: usize,
    pub n_iter: usize,
    pub outcomes: Vec<GameOutcome>,
}

impl Tournament {
    /// Cumulative share of games won by the attacker at iterations `1..=n_iter`.
    pub fn attacker_curve(&self) -> Vec<f64> {
        self.curve(|o| match o.result {
            GameResult::AttackerWin(i) => Some(i),
            _ => None,
        })
    }

    pub fn defender_curve(&self) -> Vec<f64> {
        self.curve(|o| match o.result {
            GameResult::DefenderWin(i) => Some(i),
            _ => None,
        })
    }

    /// Share of games in which a correct confident claim came by `step`.
    pub fn inference_rate(&self, step: usize) -> f64 {
        self.share(|o| o.correct_claim_at.is_some_and(|s| s <= step))
    }

    /// Share of games whose first step with the target label came by `step`.
    pub fn attack_rate(&self, step: usize) -> f64 {
        self.share(|o| o.attack_success_at.is_some_and(|s| s <= step))
    }

    pub fn argmax_rate(&self, step: usize) -> f64 {
        self.share(|o| o.argmax_correct_by(step))
    }

    pub fn draw_share(&self) -> f64 {
        self.share(|o| o.result == GameResult::Draw)
    }

    pub fn mean_queries(&self) -> f64 {
        self.outcomes.iter().map(|o| o.total_queries as f64).sum::<f64>() / self.n_games.max(1) as f64
    }

    fn share(&self, f: impl Fn(&GameOutcome) -> bool) -> f64 {
        self.outcomes.iter().filter(|o| f(o)).count() as f64 / self.n_games.max(1) as f64
    }

    fn curve(&self, at: impl Fn(&GameOutcome) -> Option<usize>) -> Vec<f64> {
        (1..=self.n_iter).map(|i| self.share(|o| at(o).is_some_and(|w| w <= i))).collect()
    }
}

/// `n_games` independent games in parallel; results are in game order and do
/// not depend on the worker count.
#[allow(clippy::too_many_arguments)]
pub fn run_tournament<T: Real>(
    model: &Classifier<T>,
    pool: &[Vec<T>],
    attack: &AttackConfig,
    defender: &DefenderConfig,
    mode: GameMode,
    n_games: usize,
    seed: u64,
) -> Result<Tournament> {
    if n_games == 0 {
        return Err(invalid("n_games", "must be >= 1"));
    }
    attack.validate()?;
    defender.validate()?;
    let outcomes = (0..n_games)
        .into_par_iter()
        .map(|g| play_ctf(model, pool, attack, defender, mode, game_seed(seed, g)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Tournament { n_games, n_iter: attack.n_iter, outcomes })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    NQuery,
    PFake,
    Mu,
}

impl SweepParameter {
    pub fn name(self) -> &'static str {
        match self {
            SweepParameter::NQuery => "n_query",
            SweepParameter::PFake => "p_fake",
            SweepParameter::Mu => "mu",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub attack_success: f64,
    pub inference_success: f64,
    pub mean_queries: f64,
}

/// Independent success rates by the last iteration for each grid value; the
/// side not being varied keeps its base configuration.
#[allow(clippy::too_many_arguments)]
pub fn sweep<T: Real>(
    model: &Classifier<T>,
    pool: &[Vec<T>],
    parameter: SweepParameter,
    values: &[f64],
    attack: &AttackConfig,
    defender: &DefenderConfig,
    n_games: usize,
    seed: u64,
) -> Result<Vec<SweepRow>> {
    values
        .iter()
        .map(|&v| {
            let mut a = attack.clone();
            let mut d = defender.clone();
            match parameter {
                SweepParameter::NQuery => {
                    if v < 2.0 || v.fract() != 0.0 {
                        return Err(invalid("sweep.values", format!("n_query {v} is not an integer >= 2")));
                    }
                    a.n_query = v as usize;
                }
                SweepParameter::PFake => a.p_fake = v,
                SweepParameter::Mu => d.mu = v,
            }
            let t = run_tournament(model, pool, &a, &d, GameMode::Independent, n_games, seed)?;
            Ok(SweepRow {
                value: v,
                attack_success: t.attack_rate(a.n_iter),
                inference_success: t.inference_rate(a.n_iter),
                mean_queries: t.mean_queries(),
            })
        })
        .collect()
}

/// Budget-matched comparison of an attacker padding each batch with fakes
/// against one that does not, both answered by the true model.
#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    pub baseline_rate: f64,
    pub baseline_queries: f64,
    /// `(n_query, success rate, mean total queries)` for the padded attacker.
    pub scan: Vec<(usize, f64, f64)>,
    /// First grid budget whose success rate reaches the baseline.
    pub matched_n_query: Option<usize>,
    pub inflation: Option<f64>,
}

#[allow(clippy::too_many_arguments)]
pub fn cost_inflation<T: Real>(
    model: &Classifier<T>,
    pool: &[Vec<T>],
    attack: &AttackConfig,
    p_fake: f64,
    grid: &[usize],
    n_games: usize,
    seed: u64,
) -> Result<CostReport> {
    let truthful = DefenderConfig { variant: DefenderVariant::Robust, kappa: f64::MAX, ..DefenderConfig::default() };
    let run = |a: &AttackConfig| -> Result<(f64, f64)> {
        let t = run_tournament(model, pool, a, &truthful, GameMode::Independent, n_games, seed)?;
        Ok((t.attack_rate(a.n_iter), t.mean_queries()))
    };
    let base = AttackConfig { p_fake: 0.0, ..attack.clone() };
    let (baseline_rate, baseline_queries) = run(&base)?;
    let mut scan = Vec::new();
    let mut matched = None;
    for &n in grid {
        let (r, q) = run(&AttackConfig { p_fake, n_query: n, ..attack.clone() })?;
        scan.push((n, r, q));
        if r >= baseline_rate {
            matched = Some(n);
            break;
        }
    }
    Ok(CostReport {
        baseline_rate,
        baseline_queries,
        inflation: matched.map(|n| n as f64 / base.n_query as f64),
        matched_n_query: matched,
        scan,
    })
}
