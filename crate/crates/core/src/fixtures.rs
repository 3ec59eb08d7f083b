//! Small reference games and seeded random instances for the theory sweeps.

use rand::Rng;

use crate::game::{Dynamics, JointActionSpace, MarkovGame, TransitionTable};
use crate::policy::{AgentPolicy, JointPolicy, ObservationMap};

/// One-state repeated matching pennies. Agent 0 wins `+1` on a match.
pub fn matching_pennies(discount: f64) -> MarkovGame {
    let space = JointActionSpace::new(vec![2, 2]);
    let r1: Vec<f64> = (0..4)
        .map(|j| if space.component(j, 0) == space.component(j, 1) { 1.0 } else { -1.0 })
        .collect();
    let r2 = r1.iter().map(|r| -r).collect();
    one_state("matching_pennies", space, vec![r1, r2], discount)
}

/// One-state team game: both agents get `1` iff both play action 0.
pub fn coordination(discount: f64) -> MarkovGame {
    let space = JointActionSpace::new(vec![2, 2]);
    let r: Vec<f64> = (0..4).map(|j| if j == 0 { 1.0 } else { 0.0 }).collect();
    one_state("coordination", space, vec![r.clone(), r], discount)
}

/// One agent, one state, one action, constant reward.
pub fn constant_reward(reward: f64, discount: f64) -> MarkovGame {
    one_state("constant", JointActionSpace::new(vec![1]), vec![vec![reward]], discount)
}

/// Repeated matrix game with the given per-agent payoff tables.
pub fn one_state(id: &str, space: JointActionSpace, rewards: Vec<Vec<f64>>, discount: f64) -> MarkovGame {
    let j = space.size();
    let transition = TransitionTable::from_fn(1, j, |_, _| vec![(0, 1.0)]);
    let dynamics = Dynamics::new(1, space, transition, vec![1.0], discount).expect("shape");
    MarkovGame::with_tight_bound(id, dynamics, rewards).expect("shape")
}

/// Single-agent deterministic cycle `0 -> 1 -> .. -> n-1 -> 0`, reward 0.
pub fn deterministic_cycle(n: usize) -> MarkovGame {
    let space = JointActionSpace::new(vec![1]);
    let transition = TransitionTable::from_fn(n, 1, |s, _| vec![((s + 1) % n, 1.0)]);
    let mut initial = vec![0.0; n];
    initial[0] = 1.0;
    let dynamics = Dynamics::new(n, space, transition, initial, 0.9).expect("shape");
    MarkovGame::new("cycle", dynamics, vec![vec![0.0; n]], 1.0).expect("shape")
}

fn random_simplex<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    // Exponential spacings give a uniform draw on the simplex.
    let mut v: Vec<f64> = (0..n).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
    let total: f64 = v.iter().sum();
    for x in &mut v {
        *x /= total;
    }
    v
}

fn random_dynamics<R: Rng>(
    rng: &mut R,
    num_states: usize,
    counts: &[usize],
    discount: f64,
    deterministic: bool,
) -> Dynamics {
    let space = JointActionSpace::new(counts.to_vec());
    let j = space.size();
    let transition = TransitionTable::from_fn(num_states, j, |_, _| {
        if deterministic {
            vec![(rng.gen_range(0..num_states), 1.0)]
        } else {
            random_simplex(rng, num_states).into_iter().enumerate().collect()
        }
    });
    let initial = random_simplex(rng, num_states);
    Dynamics::new(num_states, space, transition, initial, discount).expect("shape")
}

/// General-sum game with dense random transitions and rewards in `[-1, 1]`
/// (`R_max = 1`).
pub fn random_game<R: Rng>(
    rng: &mut R,
    num_agents: usize,
    num_states: usize,
    counts: &[usize],
    discount: f64,
) -> MarkovGame {
    assert_eq!(counts.len(), num_agents);
    let dynamics = random_dynamics(rng, num_states, counts, discount, false);
    let cells = num_states * dynamics.num_joint();
    let rewards = (0..num_agents)
        .map(|_| (0..cells).map(|_| rng.gen_range(-1.0..=1.0)).collect())
        .collect();
    MarkovGame::new("random", dynamics, rewards, 1.0).expect("shape")
}

/// Team game (identical rewards) whose transitions are deterministic.
pub fn random_team_game<R: Rng>(
    rng: &mut R,
    num_agents: usize,
    num_states: usize,
    counts: &[usize],
    discount: f64,
    deterministic: bool,
) -> MarkovGame {
    let dynamics = random_dynamics(rng, num_states, counts, discount, deterministic);
    let cells = num_states * dynamics.num_joint();
    let r: Vec<f64> = (0..cells).map(|_| rng.gen_range(-1.0..=1.0)).collect();
    MarkovGame::new("random_team", dynamics, vec![r; num_agents], 1.0).expect("shape")
}

/// Two-player zero-sum game with dense random transitions.
pub fn random_zero_sum_game<R: Rng>(
    rng: &mut R,
    num_states: usize,
    counts: [usize; 2],
    discount: f64,
) -> MarkovGame {
    let dynamics = random_dynamics(rng, num_states, &counts, discount, false);
    let cells = num_states * dynamics.num_joint();
    let r: Vec<f64> = (0..cells).map(|_| rng.gen_range(-1.0..=1.0)).collect();
    let neg = r.iter().map(|x| -x).collect();
    MarkovGame::new("random_zero_sum", dynamics, vec![r, neg], 1.0).expect("shape")
}

/// Full-state policy with rows drawn uniformly from the simplex.
pub fn random_policy<R: Rng>(rng: &mut R, game: &MarkovGame) -> JointPolicy {
    let obs = ObservationMap::identity(game.num_agents(), game.num_states());
    let agents = (0..game.num_agents())
        .map(|i| {
            let n = game.actions().count(i);
            let probs = (0..game.num_states()).flat_map(|_| random_simplex(rng, n)).collect();
            AgentPolicy::new(game.num_states(), n, probs).expect("simplex rows")
        })
        .collect();
    JointPolicy::new(agents, obs).expect("shape")
}

/// Perturbation of agent `agent`'s rows toward a random distribution:
/// `(1 - w) p + w q` with `w` in `(0, 1]`.
pub fn perturb_agent<R: Rng>(rng: &mut R, policy: &AgentPolicy, weight: f64) -> AgentPolicy {
    let n = policy.num_actions();
    let probs = (0..policy.num_obs())
        .flat_map(|o| {
            let q = random_simplex(rng, n);
            policy
                .row(o)
                .iter()
                .zip(q)
                .map(|(p, q)| (1.0 - weight) * p + weight * q)
                .collect::<Vec<_>>()
        })
        .collect();
    AgentPolicy::new(policy.num_obs(), n, probs).expect("convex combination")
}
