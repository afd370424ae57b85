use std::sync::OnceLock;

use intentlab::attack::AttackConfig;
use intentlab::game::{play_ctf, run_tournament, DefenderConfig, DefenderVariant, GameMode, GameResult, Tournament};
use intentlab::model::{train_toy_model, ToyProblem, TrainSpec};

fn toy() -> &'static ToyProblem<f64> {
    static M: OnceLock<ToyProblem<f64>> = OnceLock::new();
    M.get_or_init(|| train_toy_model(&TrainSpec::default(), 7))
}

fn tournament(attack: &AttackConfig, defender: &DefenderConfig, mode: GameMode, n: usize, seed: u64) -> Tournament {
    let t = toy();
    run_tournament(&t.model, &t.data.test_x, attack, defender, mode, n, seed).unwrap()
}

#[test]
fn frozen_attacker_never_wins() {
    let attack = AttackConfig { alpha: 0.0, ..AttackConfig::default() };
    let t = tournament(&attack, &DefenderConfig::default(), GameMode::Ctf, 50, 1);
    assert!(t.outcomes.iter().all(|o| !matches!(o.result, GameResult::AttackerWin(_))));
}

#[test]
fn unreachable_confidence_and_weak_attacker_draw() {
    let attack = AttackConfig { alpha: 0.0, ..AttackConfig::default() };
    let defender = DefenderConfig { kappa: 1.0 + 1e-9, ..DefenderConfig::default() };
    let t = tournament(&attack, &defender, GameMode::Ctf, 30, 2);
    assert_eq!(t.draw_share(), 1.0);
    let q = t.outcomes[0].total_queries;
    assert!(q >= attack.n_iter * attack.n_query);
    assert!(t.outcomes.iter().all(|o| o.total_queries == q));
}

#[test]
fn proactive_defender_outpaces_attacker() {
    let t = tournament(&AttackConfig::default(), &DefenderConfig::default(), GameMode::Ctf, 200, 3);
    let (def, att) = (t.defender_curve()[2], t.attacker_curve()[2]);
    assert!(def > att, "defender {def} attacker {att} by step 3");
}

#[test]
fn single_game_curves() {
    let t = tournament(&AttackConfig::default(), &DefenderConfig::default(), GameMode::Ctf, 1, 4);
    let (a, d) = (t.attacker_curve(), t.defender_curve());
    assert_eq!(a.len(), 10);
    assert!(a.iter().chain(&d).all(|&v| v == 0.0 || v == 1.0));
    assert!(a.last().unwrap() + d.last().unwrap() <= 1.0);
}

#[test]
fn curves_are_cumulative() {
    for variant in [DefenderVariant::Basic, DefenderVariant::Robust, DefenderVariant::RobustProactive] {
        let d = DefenderConfig::default().with_variant(variant);
        let t = tournament(&AttackConfig::default(), &d, GameMode::Independent, 60, 5);
        for c in [t.attacker_curve(), t.defender_curve()] {
            assert!(c.windows(2).all(|w| w[1] >= w[0]), "{variant:?} {c:?}");
        }
        let inf: Vec<f64> = (1..=10).map(|s| t.inference_rate(s)).collect();
        assert!(inf.windows(2).all(|w| w[1] >= w[0]));
    }
}

#[test]
fn results_do_not_depend_on_worker_count() {
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| tournament(&AttackConfig::default(), &DefenderConfig::default(), GameMode::Ctf, 40, 6))
    };
    let a = run(1);
    assert_eq!(a, run(4));
    let m = toy();
    let g = play_ctf(&m.model, &m.data.test_x, &AttackConfig::default(), &DefenderConfig::default(), GameMode::Ctf, 99).unwrap();
    assert_eq!(g, play_ctf(&m.model, &m.data.test_x, &AttackConfig::default(), &DefenderConfig::default(), GameMode::Ctf, 99).unwrap());
}

#[test]
fn invalid_tournaments_are_rejected() {
    let m = toy();
    let bad = DefenderConfig { kappa: 0.0, ..DefenderConfig::default() };
    assert!(run_tournament(&m.model, &m.data.test_x, &AttackConfig::default(), &bad, GameMode::Ctf, 5, 1).is_err());
    assert!(run_tournament(&m.model, &m.data.test_x, &AttackConfig::default(), &DefenderConfig::default(), GameMode::Ctf, 0, 1).is_err());
    assert!(run_tournament(&m.model, &[], &AttackConfig::default(), &DefenderConfig::default(), GameMode::Ctf, 1, 1).is_err());
}
