use proptest::prelude::*;

use magail::fixtures;
use magail::io::{decode_policy, encode_policy};
use magail::solvers::{bellman_values, nash_residual, occupancy_measure};
use magail::trajectory::collect_demonstrations;
use magail::{DemonstrationSet, JointActionSpace, RngConfig};

fn game_shape() -> impl Strategy<Value = (u64, usize, usize, Vec<usize>)> {
    (any::<u64>(), 1usize..=3, 1usize..=5).prop_flat_map(|(seed, n, s)| (Just(seed), Just(n), Just(s), prop::collection::vec(1usize..=3, n)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn joint_actions_round_trip(counts in prop::collection::vec(1usize..=4, 1..=4)) {
        let space = JointActionSpace::new(counts.clone());
        prop_assert_eq!(space.size(), counts.iter().product::<usize>());
        for j in 0..space.size() {
            let acts = space.decode(j);
            prop_assert_eq!(space.encode(&acts), j);
            for (i, &a) in acts.iter().enumerate() {
                prop_assert_eq!(space.component(j, i), a);
            }
        }
    }

    #[test]
    fn joint_rows_are_distributions((seed, n, s, counts) in game_shape()) {
        let mut rng = RngConfig::new(seed, "prop").rng();
        let g = fixtures::random_game(&mut rng, n, s, &counts, 0.9);
        let pi = fixtures::random_policy(&mut rng, &g);
        let mut row = vec![0.0; g.actions().size()];
        for state in 0..s {
            pi.joint_distribution(g.actions(), state, &mut row);
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-10);
        }
    }

    #[test]
    fn policy_codec_round_trips((seed, n, s, counts) in game_shape()) {
        let mut rng = RngConfig::new(seed, "prop").rng();
        let g = fixtures::random_game(&mut rng, n, s, &counts, 0.9);
        let pi = fixtures::random_policy(&mut rng, &g);
        let back = decode_policy(encode_policy(&pi).as_bytes()).unwrap();
        for i in 0..n {
            for (a, b) in back.agent(i).table().iter().zip(pi.agent(i).table()) {
                prop_assert!((a - b).abs() < 1e-11);
            }
        }
    }

    #[test]
    fn demonstration_codec_round_trips((seed, n, s, counts) in game_shape(), episodes in 1usize..5, horizon in 1usize..8) {
        let mut rng = RngConfig::new(seed, "prop").rng();
        let g = fixtures::random_game(&mut rng, n, s, &counts, 0.9);
        let pi = fixtures::random_policy(&mut rng, &g);
        let demos = collect_demonstrations("random", g.dynamics(), &pi, episodes, horizon, &RngConfig::new(seed, "demos")).unwrap();
        prop_assert_eq!(DemonstrationSet::decode(&demos.encode()).unwrap(), demos);
    }

    #[test]
    fn exact_solvers_agree((seed, n, s, counts) in game_shape()) {
        let mut rng = RngConfig::new(seed, "prop").rng();
        let g = fixtures::random_game(&mut rng, n, s, &counts, 0.9);
        let pi = fixtures::random_policy(&mut rng, &g);
        prop_assert!(nash_residual(&g, &pi).unwrap().abs() <= 1e-8);
        let rho = occupancy_measure(&g, &pi).unwrap();
        prop_assert!((rho.total() * 0.1 - 1.0).abs() <= 1e-9);
        let v = bellman_values(&g, &pi).unwrap();
        for i in 0..n {
            let bound = g.reward_bound() / (1.0 - g.discount()) + 1e-9;
            prop_assert!(v.agent(i).iter().all(|x| x.abs() <= bound));
        }
    }
}
