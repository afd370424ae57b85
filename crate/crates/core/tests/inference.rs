use intentlab::attack::pgd_step;
use intentlab::estimation::robust_point;
use intentlab::inference::{class_scores, descent_direction, passive_infer, update_posterior, Inference, IntentPosterior, ScoreSign};
use intentlab::linalg::{norm2, Matrix};
use intentlab::model::{train_toy_model, TrainSpec};
use intentlab::rng::{normal_vec, rng_for};
use intentlab::ClassId;

#[test]
fn direction_construction() {
    let x = vec![0.4, 0.5, 0.6];
    let d = descent_direction(&x, &x);
    assert!(d.degenerate);
    let g = [0.3, -2.0, 0.0];
    let alpha = 0.01;
    let y: Vec<f64> = x.iter().zip(&g).map(|(a, b): (&f64, &f64)| a - alpha * b.signum() * f64::from(*b != 0.0)).collect();
    let d = descent_direction(&x, &y);
    assert!(!d.degenerate);
    let expect = [-alpha, alpha, 0.0];
    for (a, b) in d.vector.iter().zip(&expect) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn estimated_step_norm_is_bounded() {
    let d = 16;
    let (alpha, sigma, n) = (0.01, 1e-3, 60);
    let mut rng = rng_for(1, 1);
    let mut x = vec![0.5; d];
    let batch = |c: &[f64], rng: &mut intentlab::rng::SimRng| -> Vec<Vec<f64>> {
        (0..n).map(|_| c.iter().zip(normal_vec::<f64, _>(rng, d)).map(|(a, u)| a + sigma * u).collect()).collect()
    };
    let mut prev = robust_point(&batch(&x, &mut rng), 1).unwrap();
    let mut prev_err = norm2(&intentlab::linalg::sub(&prev, &x));
    for _ in 0..10 {
        let g: Vec<f64> = normal_vec(&mut rng, d);
        x = pgd_step(&x, &g, &[0.5; 16], alpha, 1.0, Default::default());
        let est = robust_point(&batch(&x, &mut rng), 1).unwrap();
        let err = norm2(&intentlab::linalg::sub(&est, &x));
        let step = norm2(&descent_direction(&prev, &est).vector);
        assert!(step <= alpha * (d as f64).sqrt() + prev_err + err + 1e-15);
        prev = est;
        prev_err = err;
    }
}

#[test]
fn score_conventions() {
    let g: Matrix<f64> = Matrix::from_rows(&[vec![1.0, 2.0, 0.0], vec![0.0, 0.0, 3.0]]).unwrap();
    let dir = [-1.0, -2.0, 0.0];
    let s = class_scores(&dir, &g, ScoreSign::Descent).unwrap();
    assert!((s[0] - 1.0).abs() < 1e-15);
    assert_eq!(s[1], 0.0);
    let scaled = class_scores(&[-5.0, -10.0, 0.0], &g, ScoreSign::Descent).unwrap();
    assert!(s.iter().zip(&scaled).all(|(a, b)| (a - b).abs() < 1e-15));
    let mut g2 = g.clone();
    g2.scale(7.0);
    let rescaled = class_scores(&dir, &g2, ScoreSign::Descent).unwrap();
    assert!(s.iter().zip(&rescaled).all(|(a, b)| (a - b).abs() < 1e-15));
    assert!((class_scores(&dir, &g, ScoreSign::Verbatim).unwrap()[0] + 1.0).abs() < 1e-15);
    assert!(class_scores(&[1.0, 2.0], &g, ScoreSign::Descent).is_err());
}

#[test]
fn posterior_updates() {
    let p = update_posterior(&IntentPosterior::<f64>::uniform(5), &[0.2; 5], 0.6).unwrap();
    assert!(p.probabilities.iter().all(|&v| (v - 0.2).abs() < 1e-15));
    assert!(!p.confident);
    let p = update_posterior(&IntentPosterior::<f64>::uniform(2), &[1.0, -1.0], 0.6).unwrap();
    let s2 = 2f64.exp() / (1.0 + 2f64.exp());
    assert!((p.probabilities[0] - s2).abs() < 1e-12 && (p.probabilities[0] - 0.8808).abs() < 1e-4);
    assert!(update_posterior(&p, &[1.0], 0.6).is_err());
}

#[test]
fn product_argmax_equals_log_softmax_sum() {
    let mut rng = rng_for(3, 3);
    for _ in 0..50 {
        let mut post = IntentPosterior::<f64>::uniform(6);
        let mut logsum = [0.0f64; 6];
        for _ in 0..4 {
            let s: Vec<f64> = normal_vec::<f64, _>(&mut rng, 6).into_iter().map(|v| v.tanh()).collect();
            let lse = s.iter().map(|v| v.exp()).sum::<f64>().ln();
            logsum.iter_mut().zip(&s).for_each(|(a, v)| *a += v - lse);
            post = update_posterior(&post, &s, 2.0).unwrap();
        }
        let best = (0..6).max_by(|&a, &b| logsum[a].total_cmp(&logsum[b])).unwrap();
        assert_eq!(post.argmax(), ClassId(best));
        assert!((post.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn white_box_traces_reveal_target() {
    let p = train_toy_model::<f64>(&TrainSpec::default(), 0);
    let m = &p.model;
    let xs = &p.data.test_x;
    let mut hits = 0;
    for g in 0..100 {
        let x0 = &xs[(g * 37) % xs.len()];
        let label = m.predict_label(x0).unwrap().0;
        let t = ClassId((label + 1 + g % (m.n_classes() - 1)) % m.n_classes());
        let mut qois = vec![x0.clone()];
        for _ in 0..3 {
            let x = qois.last().unwrap();
            qois.push(pgd_step(x, &m.input_gradient(x, t).unwrap(), x0, 0.01, 0.03, m.domain()));
        }
        if let Inference::Inferred { class, .. } = passive_infer(&qois, m, 1.0 + 1e-9, ScoreSign::Descent).unwrap() {
            hits += usize::from(class == t);
        }
    }
    assert!(hits >= 90, "{hits}/100");
}

#[test]
fn degenerate_and_unreachable_confidence() {
    let p = train_toy_model::<f64>(&TrainSpec { epochs: 2, ..TrainSpec::default() }, 1);
    let x = p.data.test_x[0].clone();
    assert_eq!(passive_infer(&[x.clone(), x.clone(), x.clone()], &p.model, 0.6, ScoreSign::Descent).unwrap(), Inference::Undetermined);
    assert!(passive_infer(std::slice::from_ref(&x), &p.model, 0.6, ScoreSign::Descent).is_err());
    let t = ClassId(3);
    let mut qois = vec![x.clone()];
    for _ in 0..6 {
        let cur = qois.last().unwrap();
        qois.push(pgd_step(cur, &p.model.input_gradient(cur, t).unwrap(), &x, 0.01, 0.05, p.model.domain()));
    }
    match passive_infer(&qois, &p.model, 1.0 + 1e-9, ScoreSign::Descent).unwrap() {
        Inference::Inferred { posterior, class } => {
            assert_eq!(posterior.iterations_observed, 6);
            assert!(!posterior.confident);
            assert_eq!(class, posterior.argmax());
        }
        Inference::Undetermined => panic!("steps were taken"),
    }
}
