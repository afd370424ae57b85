use intentlab::attack::{
    estimate_objective, generate_fake_queries, hessaware_estimate, hessian_estimate, model_oracle, nes_antithetic_estimate,
    nes_estimate, pgd_step, run_attack, sample_batch, sample_objective, signsgd_estimate, AttackConfig, EstimatorKind,
    FakeStrategy, QueryRole,
};
use intentlab::linalg::{cosine, norm2, norm_inf, sub};
use intentlab::model::{train_toy_model, BlobSpec, DomainBox, TrainSpec};
use intentlab::rng::{normal_vec, rng_for};
use intentlab::{ClassId, Classifier};

fn quadratic(z: &[f64]) -> f64 {
    z.iter().enumerate().map(|(i, v)| 0.5 * (1.0 + i as f64) * v * v).sum()
}

fn quadratic_grad(z: &[f64]) -> Vec<f64> {
    z.iter().enumerate().map(|(i, v)| (1.0 + i as f64) * v).collect()
}

fn sq_err(a: &[f64], b: &[f64]) -> f64 {
    let e = sub(a, b);
    e.iter().map(|v| v * v).sum()
}

#[test]
fn clean_batch_centers_on_x() {
    let cfg = AttackConfig { p_fake: 0.0, n_query: 100, ..Default::default() };
    let d = 8;
    let mut inside = 0;
    let reps = 100;
    for r in 0..reps {
        let mut rng = rng_for(r, 2);
        let x: Vec<f64> = (0..d).map(|i| 0.2 + 0.07 * i as f64).collect();
        let b = sample_batch(&x, 1, &cfg, DomainBox::default(), &[], None, false, &mut rng).unwrap();
        assert_eq!(b.queries.len(), 100);
        assert!(b.queries.iter().all(|q| !q.is_fake()));
        let pts = b.points();
        for j in 0..d {
            let m = pts.iter().map(|p| p[j]).sum::<f64>() / pts.len() as f64;
            inside += usize::from((m - x[j]).abs() <= 3.0 * cfg.sigma / 10.0);
        }
    }
    assert!(inside as f64 >= 0.97 * (reps as usize * d) as f64, "{inside}");
}

#[test]
fn fake_share_and_antithetic_layout() {
    let cfg = AttackConfig { estimator: EstimatorKind::NesAntithetic, p_fake: 0.3, ..Default::default() };
    let x = vec![0.5; 6];
    let b = sample_batch(&x, 1, &cfg, DomainBox::default(), &[], None, false, &mut rng_for(1, 1)).unwrap();
    assert_eq!(b.queries.iter().filter(|q| q.is_fake()).count(), 30);
    let dirs: Vec<&Vec<f64>> = b
        .queries
        .iter()
        .filter_map(|q| match &q.role {
            QueryRole::Sample { dir } => Some(dir),
            _ => None,
        })
        .collect();
    assert_eq!(dirs.len(), 70);
    for d in &dirs {
        let neg: Vec<f64> = d.iter().map(|v| -v).collect();
        assert_eq!(dirs.iter().filter(|e| ***e == neg).count(), 1);
    }
    let c = AttackConfig { p_fake: 0.5, ..Default::default() };
    assert!(c.validate().is_ok());
    assert!(AttackConfig { p_fake: 1.0, ..c.clone() }.validate().is_err());
    assert!(AttackConfig { n_query: 1, ..c.clone() }.validate().is_err());
    assert!(AttackConfig { epsilon: 0.0, ..c }.validate().is_err());
}

#[test]
fn pgd_projection_example() {
    let o: Vec<f64> = vec![0.5; 5];
    let x = pgd_step(&o, &[1.0; 5], &o, 0.05, 0.03, DomainBox::default());
    assert!(x.iter().all(|&v| (v - 0.47).abs() < 1e-12));
    assert_eq!(pgd_step(&x, &[0.0; 5], &o, 0.05, 0.03, DomainBox::default()), x);
}

#[test]
fn nes_on_constant_objective_shrinks() {
    let h = |_: &[f64]| 1.0;
    let x = vec![0.3; 8];
    let mean_norm = |n: usize| -> f64 {
        (0..20)
            .map(|r| norm2(&nes_estimate(&sample_objective(&h, &x, 1e-2, n, false, None, &mut rng_for(r, n as u64))).unwrap()))
            .sum::<f64>()
            / 20.0
    };
    let ratio = mean_norm(4000) / mean_norm(1000);
    assert!((0.4..0.6).contains(&ratio), "{ratio}");
}

#[test]
fn centered_estimators_beat_plain_nes() {
    let d = 8;
    let (mut anti, mut one) = (0, 0);
    for t in 0..100 {
        let mut rng = rng_for(t, 7);
        let x: Vec<f64> = normal_vec(&mut rng, d);
        let g = quadratic_grad(&x);
        let s = sample_objective(&quadratic, &x, 1e-2, 200, false, None, &mut rng);
        let paired = sample_objective(&quadratic, &x, 1e-2, 200, true, None, &mut rng);
        let plain = sq_err(&nes_estimate(&s).unwrap(), &g);
        anti += usize::from(sq_err(&nes_antithetic_estimate(&paired).unwrap(), &g) <= plain);
        one += usize::from(sq_err(&signsgd_estimate(&s).unwrap(), &g) <= plain);
    }
    assert!(anti >= 90, "{anti}");
    assert!(one >= 90, "{one}");
}

#[test]
fn hessian_estimate_constant_and_symmetric() {
    let x = vec![0.2; 5];
    let s = sample_objective(&|_: &[f64]| 4.0, &x, 1e-3, 50, true, None, &mut rng_for(2, 2));
    let h = hessian_estimate(&s, 0.5).unwrap();
    for i in 0..5 {
        for j in 0..5 {
            assert_eq!(h[(i, j)], if i == j { 0.5 } else { 0.0 });
        }
    }
    let s = sample_objective(&quadratic, &x, 1e-2, 400, true, None, &mut rng_for(3, 2));
    let h = hessian_estimate(&s, 1.0).unwrap();
    assert!(h.is_symmetric(0.0));
}

#[test]
fn identity_preconditioner_reduces_to_one_sided() {
    let x = vec![0.1, -0.4, 0.7];
    let s = sample_objective(&quadratic, &x, 1e-3, 60, false, None, &mut rng_for(4, 4));
    assert_eq!(hessaware_estimate(&s).unwrap(), signsgd_estimate(&s).unwrap());
    let v = [0.5, -1.0, 2.0];
    let lin = |z: &[f64]| z.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>();
    let g = estimate_objective(EstimatorKind::HessAware, &lin, &[0.0; 3], 1e-3, 100_000, 1.0, &mut rng_for(5, 5)).unwrap();
    assert!(norm2(&sub(&g, &v)) / norm2(&v) < 0.05);
}

/// The preconditioned estimate is measured against signSGD on a quadratic
/// with condition number 100.
#[test]
fn hessaware_versus_signsgd_on_ill_conditioned_quadratic() {
    let d = 8;
    let eig: Vec<f64> = (0..d).map(|i| 100f64.powf(i as f64 / (d - 1) as f64)).collect();
    let mut wins = 0;
    for t in 0..50u64 {
        let mut rng = rng_for(t, 0);
        let x: Vec<f64> = normal_vec(&mut rng, d);
        let e = eig.clone();
        let h = move |z: &[f64]| 0.5 * z.iter().zip(&e).map(|(a, l)| l * a * a).sum::<f64>();
        let g: Vec<f64> = x.iter().zip(&eig).map(|(a, l)| l * a).collect();
        let ha = estimate_objective(EstimatorKind::HessAware, &h, &x, 1e-3, 500, 1.0, &mut rng).unwrap();
        let sg = estimate_objective(EstimatorKind::SignSgd, &h, &x, 1e-3, 500, 1.0, &mut rng).unwrap();
        wins += usize::from(cosine(&ha, &g).unwrap() > cosine(&sg, &g).unwrap());
    }
    println!("hessaware wins {wins}/50");
    assert!(wins >= 35, "hessaware beat signSGD in {wins}/50 trials");
}

fn toy16() -> (Classifier<f64>, Vec<Vec<f64>>) {
    let spec = TrainSpec { data: BlobSpec { input_dim: 16, ..BlobSpec::default() }, ..TrainSpec::default() };
    let p = train_toy_model::<f64>(&spec, 2);
    (p.model, p.data.test_x)
}

#[test]
fn estimates_align_with_model_gradient() {
    let (m, xs) = toy16();
    for kind in [EstimatorKind::SignSgd, EstimatorKind::NesAntithetic] {
        for i in 0..5 {
            let x = &xs[i * 11];
            let t = ClassId((m.predict_label(x).unwrap().0 + 1) % m.n_classes());
            let h = |z: &[f64]| m.loss(z, t).unwrap();
            let e = estimate_objective(kind, &h, x, 1e-3, 2000, 1.0, &mut rng_for(i as u64, 3)).unwrap();
            let c = cosine(&e, &m.input_gradient(x, t).unwrap()).unwrap();
            assert!(c >= 0.8, "{kind:?} instance {i}: {c}");
        }
    }
}

#[test]
fn white_box_ablation_matches_plain_pgd() {
    let (m, xs) = toy16();
    let cfg = AttackConfig { estimator: EstimatorKind::WhiteBox, p_fake: 0.0, ..Default::default() };
    for i in 0..20 {
        let x0 = &xs[i * 7];
        let t = ClassId((m.predict_label(x0).unwrap().0 + 3) % m.n_classes());
        let mut x = x0.clone();
        let mut plain = None;
        for it in 1..=cfg.n_iter {
            x = pgd_step(&x, &m.input_gradient(&x, t).unwrap(), x0, cfg.alpha, cfg.epsilon, m.domain());
            if m.predict_label(&x).unwrap() == t {
                plain = Some(it);
                break;
            }
        }
        let trace = run_attack(model_oracle(&m), Some(&m), x0, t, &cfg, m.domain()).unwrap();
        assert_eq!(trace.success_at, plain, "instance {i}");
        if let Some(adv) = &trace.adversarial {
            assert!(norm_inf(&sub(adv, x0)) <= cfg.epsilon + 1e-12);
        }
    }
}

#[test]
fn zero_iterations_is_an_empty_failure() {
    let (m, xs) = toy16();
    let cfg = AttackConfig { n_iter: 0, ..Default::default() };
    let trace = run_attack(model_oracle(&m), None, &xs[0], ClassId(1), &cfg, m.domain()).unwrap();
    assert!(trace.records.is_empty());
    assert_eq!(trace.success_at, None);
    assert_eq!(trace.total_queries, 0);
}

#[test]
fn success_grows_with_query_budget() {
    let (m, xs) = toy16();
    let rate = |n_query: usize| {
        let hits = (0..60)
            .filter(|&i| {
                let x0 = &xs[i * 5 % xs.len()];
                let t = ClassId((m.predict_label(x0).unwrap().0 + 1 + i % 9) % m.n_classes());
                let cfg = AttackConfig { n_query, seed: i as u64, ..Default::default() };
                run_attack(model_oracle(&m), None, x0, t, &cfg, m.domain()).unwrap().success_at.is_some()
            })
            .count();
        hits as f64 / 60.0
    };
    let (lo, hi) = (rate(20), rate(200));
    assert!(rate(100) > 0.0);
    assert!(hi >= lo, "{lo} {hi}");
}

#[test]
fn fake_generators() {
    let x = vec![0.5; 16];
    let dom = DomainBox::default();
    let mut rng = rng_for(8, 8);
    assert!(generate_fake_queries(&x, 0, FakeStrategy::Uniform, 1e-3, &[], dom, &mut rng).is_empty());
    let n = 10_000;
    let u = generate_fake_queries(&x, n, FakeStrategy::Uniform, 1e-3, &[], dom, &mut rng);
    let se = (1.0f64 / 12.0).sqrt() / (n as f64).sqrt();
    for j in 0..16 {
        let m = u.iter().map(|p| p[j]).sum::<f64>() / n as f64;
        assert!((m - 0.5).abs() <= 3.0 * se, "coord {j}: {m}");
    }
    let sigma = 1e-3;
    let b = generate_fake_queries(&x, 1000, FakeStrategy::Blind, sigma, &[], dom, &mut rng);
    let far = b.iter().filter(|p| norm2(&sub(p, &x)) > 3.0 * sigma * 4.0).count();
    assert!(far >= 990, "{far}");
    let hist = vec![vec![0.1; 16], vec![0.9; 16]];
    let dup = generate_fake_queries(&x, 50, FakeStrategy::Duplicate, sigma, &hist, dom, &mut rng);
    assert!(dup.iter().all(|p| hist.contains(p)));
}
