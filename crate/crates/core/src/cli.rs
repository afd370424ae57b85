//! Command-line front end. Every subcommand reads one experiment config,
//! writes CSV (or JSON-lines) artifacts under the output directory, and prints
//! a one-line summary.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use crate::attack::{generate_fake_queries, model_oracle, run_attack, AttackConfig, FakeStrategy};
use crate::batching::{assignment_accuracy, read_stream, segment_stream, synthetic_stream, StreamSpec};
use crate::config::{parse_config, ExperimentConfig};
use crate::estimation::{bias_bound, estimate_qoi, expected_psi_prime, EstimateMethod};
use crate::game::{play_ctf, run_tournament, sweep, DefenderConfig, GameMode, GameResult};
use crate::linalg::{norm_inf, sub};
use crate::model::{estimate_lipschitz, load_model, save_model, train_toy_model, Classifier, Region};
use crate::proactive::{build_dispersion_matrix, mixed_gradient_matrix, verify_prop1, verify_prop2, AnswerModel};
use crate::rng::{normal_vec, rng_for};

/// Environment variable holding the worker-thread count.
pub const WORKERS_ENV: &str = "INTENTLAB_WORKERS";

#[derive(Debug, Parser)]
#[command(name = "intentlab", version, about = "Black-box attack and intent-inference laboratory")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Experiment config (TOML); omitted fields take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (overrides `output` in the config).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the toy classifier and save it as JSON.
    TrainModel(Common),
    /// Run one attack against the plain model and log its trace.
    Attack(Common),
    /// Play one game and log the defender's posterior per step.
    Defend(Common),
    /// Error quantiles of the QOI estimators under contamination.
    EstimateBench(Common),
    /// Split a query stream into batches.
    Segment {
        #[command(flatten)]
        common: Common,
        /// JSON-lines stream; a synthetic stream is used when absent.
        #[arg(long)]
        stream: Option<PathBuf>,
    },
    /// Tournament of attacker against the configured defender.
    Ctf(Common),
    /// Independent success rates over a parameter grid.
    Sweep(Common),
    /// Monte Carlo checks of the estimator identities and the answer bound.
    Verify(Common),
}

struct Ctx {
    cfg: ExperimentConfig,
    out: PathBuf,
}

impl Ctx {
    fn new(c: &Common) -> anyhow::Result<Self> {
        let mut cfg = match &c.config {
            Some(p) => parse_config(p).with_context(|| format!("reading config {}", p.display()))?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = c.seed {
            cfg.seed = s;
        }
        let out = c.out.clone().unwrap_or_else(|| cfg.output.clone());
        fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
        Ok(Ctx { cfg, out })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn model(&self) -> anyhow::Result<(Classifier<f64>, Vec<Vec<f64>>)> {
        let problem = train_toy_model::<f64>(&self.cfg.model, self.cfg.seed);
        let model = match &self.cfg.model_path {
            Some(p) => load_model(p).with_context(|| format!("loading model {}", p.display()))?,
            None => problem.model,
        };
        Ok((model, problem.data.test_x))
    }

    /// Writes a CSV whose first line records the config hash and seed.
    fn csv(&self, name: &str, header: &str, rows: &[String]) -> anyhow::Result<PathBuf> {
        let path = self.path(name);
        let mut f = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        writeln!(f, "# config_sha256={} seed={}", self.cfg.hash(), self.cfg.seed)?;
        writeln!(f, "{header}")?;
        for r in rows {
            writeln!(f, "{r}")?;
        }
        Ok(path)
    }
}

/// Sizes the global worker pool from [`WORKERS_ENV`] when set.
pub fn init_workers() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        let n: usize = v.parse().with_context(|| format!("{WORKERS_ENV}={v} is not a count"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().ok();
    }
    Ok(())
}

pub fn run(cli: Cli) -> anyhow::Result<String> {
    match cli.command {
        Command::TrainModel(c) => train_model(&Ctx::new(&c)?),
        Command::Attack(c) => attack(&Ctx::new(&c)?),
        Command::Defend(c) => defend(&Ctx::new(&c)?),
        Command::EstimateBench(c) => estimate_bench(&Ctx::new(&c)?),
        Command::Segment { common, stream } => segment(&Ctx::new(&common)?, stream.as_deref()),
        Command::Ctf(c) => ctf(&Ctx::new(&c)?),
        Command::Sweep(c) => run_sweep(&Ctx::new(&c)?),
        Command::Verify(c) => verify(&Ctx::new(&c)?),
    }
}

fn train_model(ctx: &Ctx) -> anyhow::Result<String> {
    let p = train_toy_model::<f64>(&ctx.cfg.model, ctx.cfg.seed);
    let path = ctx.path("model.json");
    save_model(&p.model, &path)?;
    let mut s = format!(
        "accuracy train={:.4} test={:.4} loss={:.4} model={}",
        p.train_accuracy,
        p.test_accuracy,
        p.final_loss,
        path.display()
    );
    if !p.converged {
        s.push_str(" (warning: training loss did not halve)");
    }
    Ok(s)
}

fn attack(ctx: &Ctx) -> anyhow::Result<String> {
    let (model, pool) = ctx.model()?;
    let mut rng = rng_for(ctx.cfg.seed, 0xC11);
    let (idx, target) = crate::game::draw_instance(&model, &pool, &mut rng)?;
    let cfg = AttackConfig { seed: ctx.cfg.seed, ..ctx.cfg.attack.clone() };
    let white = matches!(cfg.estimator, crate::attack::EstimatorKind::WhiteBox).then_some(&model);
    let trace = run_attack(model_oracle(&model), white, &pool[idx], target, &cfg, model.domain())?;
    let path = ctx.path("attack_trace.jsonl");
    fs::write(&path, trace.to_jsonl())?;
    Ok(format!(
        "attack input={idx} target={} success={} queries={} trace={}",
        target.0,
        trace.success_at.map_or("none".to_string(), |i| format!("iteration {i}")),
        trace.total_queries,
        path.display()
    ))
}

fn defend(ctx: &Ctx) -> anyhow::Result<String> {
    let (model, pool) = ctx.model()?;
    let o = play_ctf(&model, &pool, &ctx.cfg.attack, &ctx.cfg.defender, GameMode::Ctf, ctx.cfg.seed)?;
    let n = model.n_classes();
    let header = std::iter::once("step".to_string())
        .chain((0..n).map(|c| format!("p{c}")))
        .chain(std::iter::once("confident".to_string()))
        .collect::<Vec<_>>()
        .join(",");
    let rows: Vec<String> = o
        .trajectory
        .iter()
        .map(|s| {
            let ps: Vec<String> = s.probabilities.iter().map(|p| format!("{p:.6}")).collect();
            format!("{},{},{}", s.step, ps.join(","), s.confident as u8)
        })
        .collect();
    let path = ctx.csv("posterior.csv", &header, &rows)?;
    Ok(format!("defend target={} result={} posterior={}", o.target.0, result_label(o.result), path.display()))
}

fn result_label(r: GameResult) -> String {
    match r {
        GameResult::AttackerWin(i) => format!("attacker@{i}"),
        GameResult::DefenderWin(i) => format!("defender@{i}"),
        GameResult::Draw => "draw".into(),
    }
}

fn estimate_bench(ctx: &Ctx) -> anyhow::Result<String> {
    let b = &ctx.cfg.bench;
    let a = &ctx.cfg.attack;
    let sigma = a.sigma;
    let mut rows = Vec::new();
    let domain = ctx.cfg.model.domain;
    for &strategy in &b.strategies {
        for &p in &b.p_fakes {
            for method in [EstimateMethod::Mean, EstimateMethod::Median, EstimateMethod::Robust] {
                let mut errs = Vec::with_capacity(b.n_batches);
                for t in 0..b.n_batches {
                    let mut rng = rng_for(ctx.cfg.seed, t as u64);
                    let x: Vec<f64> = (0..b.dim).map(|_| crate::rng::uniform_in(&mut rng, 0.3, 0.7)).collect();
                    let n_fake = (p * a.n_query as f64).floor() as usize;
                    let history: Vec<Vec<f64>> = (0..a.n_query)
                        .map(|_| x.iter().zip(normal_vec::<f64, _>(&mut rng, b.dim)).map(|(c, u)| c + 0.02 + sigma * u).collect())
                        .collect();
                    let mut pts: Vec<Vec<f64>> = (0..a.n_query - n_fake)
                        .map(|_| x.iter().zip(normal_vec::<f64, _>(&mut rng, b.dim)).map(|(c, u)| c + sigma * u).collect())
                        .collect();
                    pts.extend(generate_fake_queries(&x, n_fake, strategy, sigma, &history, domain, &mut rng));
                    let est = estimate_qoi(&pts, method, ctx.cfg.defender.k, 0.0)?;
                    errs.push(norm_inf(&sub(&est.point, &x)) / sigma);
                }
                errs.sort_by(f64::total_cmp);
                let q = |f: f64| errs[((errs.len() - 1) as f64 * f).round() as usize];
                rows.push(format!(
                    "{},{p},{},{:.4},{:.4},{:.4}",
                    method_label(method),
                    strategy_label(strategy),
                    q(0.5),
                    q(0.9),
                    q(0.99)
                ));
            }
        }
    }
    let path = ctx.csv("estimate_bench.csv", "method,p_fake,strategy,err_q50_sigma,err_q90_sigma,err_q99_sigma", &rows)?;
    Ok(format!("estimate-bench rows={} csv={}", rows.len(), path.display()))
}

fn method_label(m: EstimateMethod) -> &'static str {
    match m {
        EstimateMethod::Mean => "mean",
        EstimateMethod::Median => "median",
        EstimateMethod::Robust => "robust",
    }
}

fn strategy_label(s: FakeStrategy) -> &'static str {
    match s {
        FakeStrategy::None => "none",
        FakeStrategy::Uniform => "uniform",
        FakeStrategy::Blind => "blind",
        FakeStrategy::Duplicate => "duplicate",
    }
}

fn segment(ctx: &Ctx, stream: Option<&Path>) -> anyhow::Result<String> {
    let s = match stream {
        Some(p) => read_stream(std::io::BufReader::new(
            fs::File::open(p).with_context(|| format!("opening stream {}", p.display()))?,
        ))?,
        None => synthetic_stream(
            &StreamSpec {
                d: ctx.cfg.model.data.input_dim,
                n_iter: ctx.cfg.attack.n_iter,
                per_iter: ctx.cfg.attack.n_query,
                sigma: ctx.cfg.attack.sigma,
                alpha: ctx.cfg.attack.alpha,
                p_fake: ctx.cfg.attack.p_fake,
            },
            ctx.cfg.seed,
        ),
    };
    let d = &ctx.cfg.defender;
    let segs = segment_stream(&s.points, d.sigma_hint, d.threshold_multiplier)?;
    let labels = crate::batching::labels_from_segments(&segs, s.points.len());
    let rows: Vec<String> = labels.iter().enumerate().map(|(i, b)| format!("{i},{b}")).collect();
    let path = ctx.csv("segments.csv", "line,batch", &rows)?;
    let acc = s.iterations.as_ref().map(|t| format!(" accuracy={:.4}", assignment_accuracy(&segs, t))).unwrap_or_default();
    Ok(format!("segment queries={} batches={}{acc} csv={}", s.points.len(), segs.len(), path.display()))
}

fn ctf(ctx: &Ctx) -> anyhow::Result<String> {
    let (model, pool) = ctx.model()?;
    let t = run_tournament(&model, &pool, &ctx.cfg.attack, &ctx.cfg.defender, GameMode::Ctf, ctx.cfg.game.n_games, ctx.cfg.seed)?;
    let (a, d) = (t.attacker_curve(), t.defender_curve());
    let rows: Vec<String> = (0..t.n_iter)
        .map(|i| format!("{},{:.4},{:.4},{:.4}", i + 1, a[i], d[i], 1.0 - a[i] - d[i]))
        .collect();
    let path = ctx.csv("ctf.csv", "iteration,attacker_win,defender_win,undecided", &rows)?;
    Ok(format!(
        "ctf variant={} games={} attacker={:.3} defender={:.3} draw={:.3} csv={}",
        ctx.cfg.defender.variant.label(),
        t.n_games,
        a.last().copied().unwrap_or(0.0),
        d.last().copied().unwrap_or(0.0),
        t.draw_share(),
        path.display()
    ))
}

fn run_sweep(ctx: &Ctx) -> anyhow::Result<String> {
    let (model, pool) = ctx.model()?;
    let s = &ctx.cfg.sweep;
    let rows = sweep(&model, &pool, s.parameter, &s.values, &ctx.cfg.attack, &ctx.cfg.defender, ctx.cfg.game.n_games, ctx.cfg.seed)?;
    let lines: Vec<String> = rows
        .iter()
        .map(|r| format!("{},{},{:.4},{:.4},{:.1}", s.parameter.name(), r.value, r.attack_success, r.inference_success, r.mean_queries))
        .collect();
    let path = ctx.csv("sweep.csv", "parameter,value,attack_success,inference_success,mean_queries", &lines)?;
    Ok(format!("sweep parameter={} points={} csv={}", s.parameter.name(), rows.len(), path.display()))
}

fn verify(ctx: &Ctx) -> anyhow::Result<String> {
    let seed = ctx.cfg.seed;
    let mut rows = Vec::new();
    let mut failed = 0;
    let mut diagnostics_failed = 0;
    // Diagnostic rows are reported but do not change the exit status.
    let mut record = |name: String, value: f64, ok: bool, gating: bool| {
        match (ok, gating) {
            (false, true) => failed += 1,
            (false, false) => diagnostics_failed += 1,
            _ => {}
        }
        rows.push(format!("{name},{value:.6},{}", if ok { "pass" } else { "fail" }));
    };
    for d in [2usize, 8, 32] {
        let mut rng = rng_for(seed, d as u64);
        let v: Vec<f64> = normal_vec(&mut rng, d);
        let e = verify_prop1(&v, 100_000, seed)?;
        record(format!("prop1_rel_err_d{d}"), e, e <= 0.05, true);
    }
    for d in [1usize, 4, 16, 64] {
        let s = crate::batching::estimate_s_constant(d, 100_000, seed)?;
        record(format!("s_constant_d{d}"), s, (s / (d as f64 + 3.0) - 1.0).abs() <= 0.05, false);
    }
    let e = expected_psi_prime();
    record("expected_psi_prime".into(), e, (e - 0.4132).abs() <= 5e-4, true);

    let (model, pool) = ctx.model()?;
    let d: &DefenderConfig = &ctx.cfg.defender;
    let sigma = ctx.cfg.attack.sigma;
    let x = &pool[0];
    let disp = build_dispersion_matrix(model.n_classes(), model.input_dim(), Some(seed))?;
    let g = mixed_gradient_matrix(&model.gradient_matrix(x)?, &disp, d.mu, d.row_scaling)?;
    let answers = AnswerModel::new(&model, x, &g)?;
    let region = Region::around(x, 6.0 * sigma, model.domain());
    let k = estimate_lipschitz(&model, &region, 20_000, seed)?;
    let bias = sigma * bias_bound(d.assumed_p_fake, d.k)?;
    let r = verify_prop2(&model, x, &answers, k, sigma, bias, 10_000, 1.0, seed)?;
    record("prop2_violation_rate".into(), r.violation_rate, r.violation_rate <= 0.01, true);

    let path = ctx.csv("verify.csv", "check,value,status", &rows)?;
    if failed > 0 {
        bail!("verify: {failed} check(s) failed, see {}", path.display());
    }
    Ok(format!(
        "verify checks={} failed=0 diagnostics_failed={diagnostics_failed} csv={}",
        rows.len(),
        path.display()
    ))
}
