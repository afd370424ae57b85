use intentlab::attack::{pgd_step, AttackConfig};
use intentlab::batching::{labels_from_segments, segment_stream, DEFAULT_THRESHOLD_MULTIPLIER};
use intentlab::config::{parse_config_str, ExperimentConfig};
use intentlab::estimation::robust_point;
use intentlab::inference::{class_scores, update_posterior, IntentPosterior, ScoreSign};
use intentlab::linalg::{dot, Matrix};
use intentlab::model::DomainBox;
use intentlab::proactive::{build_dispersion_matrix, sanitize};
use proptest::prelude::*;

fn vecs(d: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
    (
        prop::collection::vec(0.0..1.0f64, d),
        prop::collection::vec(-5.0..5.0f64, d),
        prop::collection::vec(0.0..1.0f64, d),
    )
}

proptest! {
    #[test]
    fn pgd_stays_in_ball_and_domain((x, g, o) in (1usize..12).prop_flat_map(vecs), alpha in 0.0..0.2f64, eps in 0.001..0.3f64) {
        let y = pgd_step(&x, &g, &o, alpha, eps, DomainBox::default());
        for (yi, oi) in y.iter().zip(&o) {
            prop_assert!((yi - oi).abs() <= eps + 1e-12);
            prop_assert!((0.0..=1.0).contains(yi));
        }
    }

    #[test]
    fn sanitized_answers_are_distributions(raw in prop::collection::vec(-2.0..2.0f64, 1..12)) {
        let p = sanitize(raw);
        prop_assert!((p.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn posterior_stays_normalized(steps in prop::collection::vec(prop::collection::vec(-1.0..1.0f64, 5), 1..12), kappa in 0.2..1.0f64) {
        let mut p = IntentPosterior::<f64>::uniform(5);
        for s in &steps {
            p = update_posterior(&p, s, kappa).unwrap();
            prop_assert!((p.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(p.probabilities.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn scores_are_cosines(rows in prop::collection::vec(prop::collection::vec(-3.0..3.0f64, 6), 1..6), dir in prop::collection::vec(-1.0..1.0f64, 6)) {
        let g = Matrix::from_rows(&rows).unwrap();
        for s in class_scores(&dir, &g, ScoreSign::Descent).unwrap() {
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&s));
        }
    }

    #[test]
    fn dispersion_rows_are_orthogonal(c in 1usize..8, extra in 0usize..20, seed in any::<Option<u64>>()) {
        let m = build_dispersion_matrix::<f64>(c, c + extra, seed).unwrap();
        for a in 0..c {
            for b in a + 1..c {
                prop_assert_eq!(dot(m.matrix.row(a), m.matrix.row(b)), 0.0);
            }
        }
    }

    #[test]
    fn robust_estimate_within_data_range(pts in prop::collection::vec(prop::collection::vec(-10.0..10.0f64, 3), 1..40), k in 0usize..4) {
        let est = robust_point(&pts, k).unwrap();
        for (j, e) in est.iter().enumerate() {
            let lo = pts.iter().map(|p| p[j]).fold(f64::MAX, f64::min);
            let hi = pts.iter().map(|p| p[j]).fold(f64::MIN, f64::max);
            prop_assert!(*e >= lo - 1e-9 && *e <= hi + 1e-9);
        }
    }

    #[test]
    fn segments_cover_every_point(pts in prop::collection::vec(prop::collection::vec(0.0..1.0f64, 4), 1..60), sigma in 1e-4..0.1f64) {
        let segs = segment_stream(&pts, sigma, DEFAULT_THRESHOLD_MULTIPLIER).unwrap();
        let labels = labels_from_segments(&segs, pts.len());
        prop_assert!(labels.iter().all(|&l| l < segs.len()));
        prop_assert_eq!(segs.iter().map(|s| s.indices.len()).sum::<usize>(), pts.len());
    }

    #[test]
    fn config_round_trips(alpha in 0.0..0.1f64, p_fake in 0.0..=0.5f64, n_iter in 1usize..30, seed in any::<u64>()) {
        let cfg = ExperimentConfig { attack: AttackConfig { alpha, p_fake, n_iter, ..AttackConfig::default() }, seed, ..ExperimentConfig::default() };
        let back = parse_config_str(&cfg.to_toml()).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.hash(), cfg.hash());
    }
}
