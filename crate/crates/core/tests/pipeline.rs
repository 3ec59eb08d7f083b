use magail::discriminator::{DiscBatch, DiscriminatorParams, PriorKind, PriorVariant};
use magail::envs::{build, coop_comm_expert, preset, GameKind, TAGS};
use magail::equilibria::{solve_team_vi, solve_zero_sum_shapley};
use magail::io::{decode_policy, encode_policy};
use magail::magail::{behavior_cloning, evaluate_policy, train_magail, MagailConfig};
use magail::solvers::{expected_returns, nash_check};
use magail::trajectory::collect_demonstrations;
use magail::{DemonstrationSet, RngConfig};

#[test]
fn every_preset_builds_and_validates() {
    for tag in TAGS {
        let env = build(tag, &preset(tag).unwrap()).unwrap();
        assert!(env.game.validate().is_ok(), "{tag}");
        assert_eq!(env.observations.num_states(), env.game.num_states());
    }
}

#[test]
fn solved_experts_survive_the_policy_codec() {
    for tag in ["coop_comm", "keep_away"] {
        let env = build(tag, &preset(tag).unwrap()).unwrap();
        let (pi, report) = match env.kind {
            GameKind::Team => solve_team_vi(&env.game, 1e-8).unwrap(),
            _ => solve_zero_sum_shapley(&env.game, 1e-8).unwrap(),
        };
        let tol = report.certified_tolerance(env.game.discount());
        let back = decode_policy(encode_policy(&pi).as_bytes()).unwrap();
        assert!(nash_check(&env.game, &back, tol + 1e-9).unwrap().is_nash, "{tag}");
        let (a, b) = (expected_returns(&env.game, &pi).unwrap(), expected_returns(&env.game, &back).unwrap());
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-8);
        }
    }
}

#[test]
fn demonstrations_round_trip_and_match_dynamics() {
    let env = build("coop_comm", &preset("coop_comm").unwrap()).unwrap();
    let expert = coop_comm_expert(&env).unwrap();
    let demos = collect_demonstrations("coop_comm", env.game.dynamics(), &expert, 7, 12, &RngConfig::new(3, "demos")).unwrap();
    let back = DemonstrationSet::decode(&demos.encode()).unwrap();
    assert_eq!(back, demos);
    back.check_against(env.game.dynamics()).unwrap();
    assert_eq!(back.num_pairs(), 7 * 12);
}

#[test]
fn cloning_plentiful_demos_recovers_the_expert_value() {
    let env = build("coop_comm", &preset("coop_comm").unwrap()).unwrap();
    let g = &env.game;
    let expert = coop_comm_expert(&env).unwrap();
    let demos = collect_demonstrations("coop_comm", g.dynamics(), &expert, 400, 50, &RngConfig::new(1, "demos")).unwrap();
    let bc = behavior_cloning(&demos, &env.observations, g.actions().counts(), 0.0).unwrap();
    let (want, got) = (expected_returns(g, &expert).unwrap()[0], expected_returns(g, &bc).unwrap()[0]);
    assert!((want - got).abs() < 0.05 * want.abs(), "{got} vs {want}");
}

#[test]
fn monte_carlo_evaluation_agrees_with_exact_returns() {
    let env = build("keep_away", &preset("keep_away").unwrap()).unwrap();
    let pi = env.uniform_policy();
    let eval = evaluate_policy(&env.game, &pi, 4000, 300, &RngConfig::new(5, "eval")).unwrap();
    for i in 0..2 {
        assert!((eval.mean[i] - eval.exact[i]).abs() <= 3.0 * eval.standard_error(i) + 1e-9, "{eval:?}");
    }
}

#[test]
fn short_magail_run_improves_on_uniform_and_is_reproducible() {
    let env = build("coop_comm", &preset("coop_comm").unwrap()).unwrap();
    let g = &env.game;
    let expert = coop_comm_expert(&env).unwrap();
    let demos = collect_demonstrations("coop_comm", g.dynamics(), &expert, 20, 50, &RngConfig::new(0, "demos")).unwrap();
    let cfg = MagailConfig {
        iterations: 30,
        ..MagailConfig::default()
    };
    let run = |prior| {
        let cfg = MagailConfig { prior, ..cfg.clone() };
        train_magail(g.dynamics(), &env.observations, &demos, &cfg, None, &RngConfig::new(0, "train"), None).unwrap()
    };
    let uniform = expected_returns(g, &env.uniform_policy()).unwrap()[0];
    for prior in [PriorKind::Centralized, PriorKind::Decentralized] {
        let a = run(prior);
        let b = run(prior);
        assert_eq!(a.csv(), b.csv());
        assert!(expected_returns(g, &a.policy).unwrap()[0] > uniform);
    }
}

#[test]
fn discriminator_checkpoint_round_trips() {
    let env = build("keep_away", &preset("keep_away").unwrap()).unwrap();
    let space = env.game.actions();
    let n = env.game.num_states();
    let mut d = DiscriminatorParams::zeros(PriorVariant::Centralized, space, n).unwrap();
    let batch = DiscBatch {
        policy: (0..50).map(|k| (k * 7 % n, k % space.size())).collect(),
        expert: (0..50).map(|k| (k * 11 % n, (k + 3) % space.size())).collect(),
    };
    d.update(&batch, 1.0, 50).unwrap();
    let mut back = DiscriminatorParams::zeros(PriorVariant::Centralized, space, n).unwrap();
    back.decode_into(d.encode().as_bytes()).unwrap();
    for (x, y) in d.weights.iter().flatten().zip(back.weights.iter().flatten()) {
        assert!((x - y).abs() <= 1e-10 * x.abs().max(1.0));
    }
}
