//! Small grid analogs of the particle tasks. Each builder returns a complete
//! Markov game with true rewards and per-agent observation maps.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{Dynamics, JointActionSpace, MarkovGame, TransitionTable};
use crate::policy::{AgentPolicy, JointPolicy, ObservationMap};
use crate::trajectory::RngConfig;

/// Largest joint state space a builder will emit.
pub const STATE_BUDGET: usize = 50_000;

pub const TAGS: [&str; 4] = ["coop_comm", "coop_nav", "keep_away", "predator_prey"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub width: usize,
    pub height: usize,
    /// Moving agents in coop_nav.
    pub num_agents: usize,
    /// Landmarks in coop_nav, colors in coop_comm.
    pub num_landmarks: usize,
    /// Chasers in predator_prey.
    pub predators: usize,
    pub collision_penalty: f64,
    pub step_penalty: f64,
    pub goal_reward: f64,
    pub discount: f64,
    /// Landmark positions become part of the state, drawn from `η`.
    pub randomize_layout: bool,
    pub layout_seed: u64,
    /// Chance that a predator's move succeeds in one step.
    pub move_prob: f64,
    /// Blocked `[x, y]` cells.
    pub obstacles: Vec<[usize; 2]>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            width: 3,
            height: 3,
            num_agents: 2,
            num_landmarks: 2,
            predators: 2,
            collision_penalty: 1.0,
            step_penalty: 0.1,
            goal_reward: 1.0,
            discount: 0.9,
            randomize_layout: false,
            layout_seed: 0,
            move_prob: 0.5,
            obstacles: Vec::new(),
        }
    }
}

/// Default spec for each registered tag.
pub fn preset(tag: &str) -> Result<GridSpec> {
    let base = GridSpec::default();
    Ok(match tag {
        "coop_comm" => GridSpec {
            width: 3,
            height: 3,
            num_landmarks: 3,
            ..base
        },
        "coop_nav" => GridSpec {
            randomize_layout: true,
            ..base
        },
        "keep_away" => GridSpec {
            width: 5,
            height: 1,
            ..base
        },
        "predator_prey" => GridSpec {
            obstacles: vec![[1, 1]],
            ..base
        },
        _ => return Err(unknown_tag(tag)),
    })
}

fn unknown_tag(tag: &str) -> Error {
    Error::InvalidArgument(format!("unknown environment tag {tag:?} (expected one of {})", TAGS.join(", ")))
}

/// Reward structure, used to pick an expert solver and a compatible prior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GameKind {
    Team,
    ZeroSum,
    General,
}

#[derive(Debug, Clone)]
pub struct Environment {
    pub tag: String,
    pub spec: GridSpec,
    pub kind: GameKind,
    pub game: MarkovGame,
    pub observations: ObservationMap,
}

impl Environment {
    /// Uniform policy over this environment's observations.
    pub fn uniform_policy(&self) -> JointPolicy {
        JointPolicy::uniform(self.observations.clone(), self.game.actions().counts())
    }
}

pub fn build(tag: &str, spec: &GridSpec) -> Result<Environment> {
    match tag {
        "coop_comm" => build_coop_comm(spec),
        "coop_nav" => build_coop_nav(spec),
        "keep_away" => build_keep_away(spec),
        "predator_prey" => build_predator_prey(spec),
        _ => Err(unknown_tag(tag)),
    }
}

struct Grid {
    width: usize,
    /// `(x, y)` of each free cell, in row-major order.
    cells: Vec<(usize, usize)>,
    /// Free-cell index by `y * width + x`.
    lookup: Vec<Option<usize>>,
    moves: Vec<(isize, isize)>,
}

impl Grid {
    fn new(spec: &GridSpec) -> Result<Self> {
        if spec.width == 0 || spec.height == 0 {
            return Err(Error::InvalidArgument("grid must be at least 1x1".into()));
        }
        if !(0.0..1.0).contains(&spec.discount) {
            return Err(Error::InvalidArgument(format!("discount {} outside [0, 1)", spec.discount)));
        }
        let mut blocked = vec![false; spec.width * spec.height];
        for &[x, y] in &spec.obstacles {
            if x >= spec.width || y >= spec.height {
                return Err(Error::InvalidArgument(format!("obstacle [{x}, {y}] outside the grid")));
            }
            blocked[y * spec.width + x] = true;
        }
        let mut cells = Vec::new();
        let mut lookup = vec![None; blocked.len()];
        for y in 0..spec.height {
            for x in 0..spec.width {
                if !blocked[y * spec.width + x] {
                    lookup[y * spec.width + x] = Some(cells.len());
                    cells.push((x, y));
                }
            }
        }
        let moves = if spec.height == 1 {
            vec![(0, 0), (-1, 0), (1, 0)]
        } else {
            vec![(0, 0), (0, -1), (0, 1), (-1, 0), (1, 0)]
        };
        Ok(Self {
            width: spec.width,
            cells,
            lookup,
            moves,
        })
    }

    fn len(&self) -> usize {
        self.cells.len()
    }

    fn num_moves(&self) -> usize {
        self.moves.len()
    }

    /// Destination of a move; walls and obstacles leave the agent in place.
    fn step(&self, cell: usize, action: usize) -> usize {
        let (x, y) = self.cells[cell];
        let (dx, dy) = self.moves[action];
        let (nx, ny) = (x as isize + dx, y as isize + dy);
        if nx < 0 || ny < 0 || nx as usize >= self.width {
            return cell;
        }
        self.lookup
            .get(ny as usize * self.width + nx as usize)
            .copied()
            .flatten()
            .unwrap_or(cell)
    }

    fn dist(&self, a: usize, b: usize) -> usize {
        let (ax, ay) = self.cells[a];
        let (bx, by) = self.cells[b];
        ax.abs_diff(bx) + ay.abs_diff(by)
    }

    /// Move that reduces the distance to `target`, horizontal first.
    fn toward(&self, from: usize, target: usize) -> usize {
        let here = self.dist(from, target);
        let n = self.num_moves();
        // horizontal moves are the last two entries
        [n - 2, n - 1]
            .into_iter()
            .chain(1..n - 2)
            .find(|&a| self.dist(self.step(from, a), target) < here)
            .unwrap_or(0)
    }

    fn pick(&self, spec: &GridSpec, k: usize) -> Result<Vec<usize>> {
        if k > self.len() {
            return Err(Error::InvalidArgument(format!("{k} landmarks do not fit in {} free cells", self.len())));
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        let mut rng = RngConfig::new(spec.layout_seed, "layout").rng();
        idx.shuffle(&mut rng);
        idx.truncate(k);
        Ok(idx)
    }
}

fn check_budget(states: usize) -> Result<()> {
    if states > STATE_BUDGET {
        Err(Error::StateBudget {
            states,
            budget: STATE_BUDGET,
        })
    } else {
        Ok(())
    }
}

fn checked_pow(base: usize, exp: usize) -> Result<usize> {
    base.checked_pow(exp as u32).ok_or(Error::StateBudget {
        states: usize::MAX,
        budget: STATE_BUDGET,
    })
}

/// Encodes `digits` (most significant first) in a uniform radix.
fn encode(digits: &[usize], radix: usize) -> usize {
    digits.iter().fold(0, |acc, d| acc * radix + d)
}

fn decode(mut index: usize, radix: usize, out: &mut [usize]) {
    for d in out.iter_mut().rev() {
        *d = index % radix;
        index /= radix;
    }
}

fn uniform_over(n: usize, keep: impl FnMut(usize) -> bool) -> Vec<f64> {
    let mask: Vec<bool> = (0..n).map(keep).collect();
    let count = mask.iter().filter(|&&m| m).count() as f64;
    mask.iter().map(|&m| if m { 1.0 / count } else { 0.0 }).collect()
}

/// Speaker (agent 0) knows the goal color and only emits symbols; the
/// listener (agent 1) sees its cell and the last symbol, not the goal, and
/// cannot move before the first symbol arrives.
///
/// States are `(cell, goal, message)` with `message = colors` meaning "none",
/// so there are `cells * colors * (colors + 1)` of them.
pub fn build_coop_comm(spec: &GridSpec) -> Result<Environment> {
    let grid = Grid::new(spec)?;
    let colors = spec.num_landmarks;
    if colors == 0 {
        return Err(Error::InvalidArgument("coop_comm needs at least one color".into()));
    }
    let msgs = colors + 1;
    let n_states = grid.len() * colors * msgs;
    check_budget(n_states)?;
    let landmarks = grid.pick(spec, colors)?;
    let state = |cell: usize, goal: usize, msg: usize| (cell * colors + goal) * msgs + msg;
    let split = |s: usize| (s / (colors * msgs), (s / msgs) % colors, s % msgs);

    let space = JointActionSpace::new(vec![colors, grid.num_moves()]);
    let transition = TransitionTable::from_fn(n_states, space.size(), |s, joint| {
        let (cell, goal, msg) = split(s);
        let said = space.component(joint, 0);
        let next = if msg == colors { cell } else { grid.step(cell, space.component(joint, 1)) };
        vec![(state(next, goal, said), 1.0)]
    });
    let initial = uniform_over(n_states, |s| split(s).2 == colors);
    let dynamics = Dynamics::new(n_states, space.clone(), transition, initial, spec.discount)?;
    let reward: Vec<f64> = (0..n_states)
        .flat_map(|s| {
            let (cell, goal, _) = split(s);
            let r = if cell == landmarks[goal] { spec.goal_reward } else { 0.0 } - spec.step_penalty;
            std::iter::repeat_n(r, space.size())
        })
        .collect();
    let game = MarkovGame::with_tight_bound("coop_comm", dynamics, vec![reward.clone(), reward])?;
    let observations = ObservationMap::new(
        vec![
            (0..n_states).map(|s| split(s).1).collect(),
            (0..n_states).map(|s| split(s).0 * msgs + split(s).2).collect(),
        ],
        vec![colors, grid.len() * msgs],
    )?;
    Ok(Environment {
        tag: "coop_comm".into(),
        spec: spec.clone(),
        kind: GameKind::Team,
        game,
        observations,
    })
}

/// Hand-written coop_comm expert over the environment's own observations:
/// the speaker names the goal color, the listener waits for a symbol and
/// then walks to that landmark.
pub fn coop_comm_expert(env: &Environment) -> Result<JointPolicy> {
    if env.tag != "coop_comm" {
        return Err(Error::InvalidArgument(format!("no analytic expert for {}", env.tag)));
    }
    let grid = Grid::new(&env.spec)?;
    let colors = env.spec.num_landmarks;
    let landmarks = grid.pick(&env.spec, colors)?;
    let speaker = AgentPolicy::deterministic(&(0..colors).collect::<Vec<_>>(), colors);
    let listener_actions: Vec<usize> = (0..grid.len() * (colors + 1))
        .map(|o| {
            let (cell, msg) = (o / (colors + 1), o % (colors + 1));
            if msg == colors {
                0
            } else {
                grid.toward(cell, landmarks[msg])
            }
        })
        .collect();
    let listener = AgentPolicy::deterministic(&listener_actions, grid.num_moves());
    JointPolicy::new(vec![speaker, listener], env.observations.clone())
}

/// Agents spread over landmarks. Shared reward is minus the sum over
/// landmarks of the distance to the nearest agent, minus the collision
/// penalty once per pair of agents sharing a cell.
///
/// With `randomize_layout` the landmark set is a state component drawn
/// uniformly by `η`; otherwise it is fixed by `layout_seed`.
pub fn build_coop_nav(spec: &GridSpec) -> Result<Environment> {
    let grid = Grid::new(spec)?;
    let n = spec.num_agents;
    let l = spec.num_landmarks;
    if n == 0 || l == 0 || l > grid.len() {
        return Err(Error::InvalidArgument(format!(
            "coop_nav needs agents > 0 and 0 < landmarks <= {} cells",
            grid.len()
        )));
    }
    let layouts: Vec<Vec<usize>> = if spec.randomize_layout {
        combinations(grid.len(), l)
    } else {
        let mut fixed = grid.pick(spec, l)?;
        fixed.sort_unstable();
        vec![fixed]
    };
    let positions = checked_pow(grid.len(), n)?;
    let n_states = positions.checked_mul(layouts.len()).ok_or(Error::StateBudget {
        states: usize::MAX,
        budget: STATE_BUDGET,
    })?;
    check_budget(n_states)?;

    let space = JointActionSpace::new(vec![grid.num_moves(); n]);
    let mut pos = vec![0; n];
    let mut acts = vec![0; n];
    let transition = TransitionTable::from_fn(n_states, space.size(), |s, joint| {
        decode(s % positions, grid.len(), &mut pos);
        space.decode_into(joint, &mut acts);
        let moved: Vec<usize> = pos.iter().zip(&acts).map(|(&c, &a)| grid.step(c, a)).collect();
        vec![((s / positions) * positions + encode(&moved, grid.len()), 1.0)]
    });
    let initial = uniform_over(n_states, |_| true);
    let dynamics = Dynamics::new(n_states, space.clone(), transition, initial, spec.discount)?;
    let mut reward = Vec::with_capacity(n_states * space.size());
    for s in 0..n_states {
        decode(s % positions, grid.len(), &mut pos);
        let layout = &layouts[s / positions];
        let coverage: usize = layout
            .iter()
            .map(|&lm| pos.iter().map(|&p| grid.dist(p, lm)).min().expect("agents"))
            .sum();
        let collisions = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .filter(|&(i, j)| pos[i] == pos[j])
            .count();
        let r = -(coverage as f64) - spec.collision_penalty * collisions as f64;
        reward.extend(std::iter::repeat_n(r, space.size()));
    }
    let game = MarkovGame::with_tight_bound("coop_nav", dynamics, vec![reward; n])?;
    Ok(Environment {
        tag: "coop_nav".into(),
        spec: spec.clone(),
        kind: GameKind::Team,
        game,
        observations: ObservationMap::identity(n, n_states),
    })
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn go(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for x in start..n {
            cur.push(x);
            go(x + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(0, n, k, &mut Vec::new(), &mut out);
    out
}

/// Agent 0 heads for one of two target cells; agent 1 (the adversary) does
/// not observe which. `r_0 = goal_reward - dist(agent 0, target)` and
/// `r_1 = -r_0`. When both land on one cell, agent 0 is knocked back to
/// where it came from, or pushed along the adversary's move if it stood
/// still.
///
/// States are `(p0, p1, target)`.
pub fn build_keep_away(spec: &GridSpec) -> Result<Environment> {
    let grid = Grid::new(spec)?;
    let c = grid.len();
    if c < 2 {
        return Err(Error::InvalidArgument("keep_away needs two free cells".into()));
    }
    let n_states = c * c * 2;
    check_budget(n_states)?;
    let targets = grid.pick(spec, 2)?;
    let state = |p0: usize, p1: usize, t: usize| (p0 * c + p1) * 2 + t;
    let split = |s: usize| (s / (2 * c), (s / 2) % c, s % 2);

    let space = JointActionSpace::new(vec![grid.num_moves(); 2]);
    let transition = TransitionTable::from_fn(n_states, space.size(), |s, joint| {
        let (p0, p1, t) = split(s);
        let (a0, a1) = (space.component(joint, 0), space.component(joint, 1));
        let (mut n0, mut n1) = (grid.step(p0, a0), grid.step(p1, a1));
        if n0 == n1 && p0 != p1 {
            if n0 != p0 {
                n0 = p0;
            } else {
                let pushed = grid.step(p0, a1);
                if pushed != p0 {
                    n0 = pushed;
                } else {
                    n1 = p1;
                }
            }
        }
        vec![(state(n0, n1, t), 1.0)]
    });
    let initial = uniform_over(n_states, |s| split(s).0 != split(s).1);
    let dynamics = Dynamics::new(n_states, space.clone(), transition, initial, spec.discount)?;
    let r0: Vec<f64> = (0..n_states)
        .flat_map(|s| {
            let (p0, _, t) = split(s);
            let r = spec.goal_reward - grid.dist(p0, targets[t]) as f64;
            std::iter::repeat_n(r, space.size())
        })
        .collect();
    let r1 = r0.iter().map(|r| -r).collect();
    let game = MarkovGame::with_tight_bound("keep_away", dynamics, vec![r0, r1])?;
    let observations = ObservationMap::new(
        vec![(0..n_states).collect(), (0..n_states).map(|s| s / 2).collect()],
        vec![n_states, c * c],
    )?;
    Ok(Environment {
        tag: "keep_away".into(),
        spec: spec.clone(),
        kind: GameKind::ZeroSum,
        game,
        observations,
    })
}

/// Predators `0..P` chase the prey (agent `P`). The prey always moves;
/// each predator's move succeeds with probability `move_prob`. While any
/// predator shares the prey's cell every predator earns `goal_reward` and
/// the prey loses the same amount.
///
/// States are the cells of all agents, predators first.
pub fn build_predator_prey(spec: &GridSpec) -> Result<Environment> {
    let grid = Grid::new(spec)?;
    let p = spec.predators;
    if p == 0 {
        return Err(Error::InvalidArgument("predator_prey needs at least one predator".into()));
    }
    if !(0.0..=1.0).contains(&spec.move_prob) || spec.move_prob == 0.0 {
        return Err(Error::InvalidArgument(format!("move_prob {} outside (0, 1]", spec.move_prob)));
    }
    let n = p + 1;
    let n_states = checked_pow(grid.len(), n)?;
    check_budget(n_states)?;
    let space = JointActionSpace::new(vec![grid.num_moves(); n]);
    let touch = |pos: &[usize]| pos[..p].iter().any(|&c| c == pos[p]);

    let mut pos = vec![0; n];
    let mut acts = vec![0; n];
    let transition = TransitionTable::from_fn(n_states, space.size(), |s, joint| {
        decode(s, grid.len(), &mut pos);
        space.decode_into(joint, &mut acts);
        let mut next = pos.clone();
        next[p] = grid.step(pos[p], acts[p]);
        let mut out = Vec::with_capacity(1 << p);
        for outcome in 0..(1usize << p) {
            let mut prob = 1.0;
            for k in 0..p {
                if outcome >> k & 1 == 1 {
                    next[k] = grid.step(pos[k], acts[k]);
                    prob *= spec.move_prob;
                } else {
                    next[k] = pos[k];
                    prob *= 1.0 - spec.move_prob;
                }
            }
            out.push((encode(&next, grid.len()), prob));
        }
        out
    });
    let mut scratch = vec![0; n];
    let initial = uniform_over(n_states, |s| {
        decode(s, grid.len(), &mut scratch);
        !touch(&scratch)
    });
    let dynamics = Dynamics::new(n_states, space.clone(), transition, initial, spec.discount)?;
    let mut predator = Vec::with_capacity(n_states * space.size());
    for s in 0..n_states {
        decode(s, grid.len(), &mut pos);
        let r = if touch(&pos) { spec.goal_reward } else { 0.0 };
        predator.extend(std::iter::repeat_n(r, space.size()));
    }
    let prey: Vec<f64> = predator.iter().map(|r| -r).collect();
    let mut rewards = vec![predator; p];
    rewards.push(prey);
    let game = MarkovGame::with_tight_bound("predator_prey", dynamics, rewards)?;
    Ok(Environment {
        tag: "predator_prey".into(),
        spec: spec.clone(),
        kind: GameKind::General,
        game,
        observations: ObservationMap::identity(n, n_states),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corridor(width: usize) -> GridSpec {
        GridSpec {
            width,
            height: 1,
            ..GridSpec::default()
        }
    }

    #[test]
    fn presets_build_and_validate() {
        for tag in TAGS {
            let env = build(tag, &preset(tag).unwrap()).unwrap();
            assert!(env.game.validate().is_ok(), "{tag}");
            assert!(env.game.num_states() <= STATE_BUDGET);
        }
        assert!(build("nope", &GridSpec::default()).is_err());
    }

    #[test]
    fn coop_comm_state_count_by_enumeration() {
        let spec = GridSpec {
            num_landmarks: 3,
            ..corridor(3)
        };
        let env = build_coop_comm(&spec).unwrap();
        let mut count = 0;
        for _cell in 0..3 {
            for _goal in 0..3 {
                for _msg in 0..=3 {
                    count += 1;
                }
            }
        }
        assert_eq!(env.game.num_states(), count);
        assert_eq!(env.game.first_reward_mismatch(), None);
    }

    #[test]
    fn coop_comm_goal_reward() {
        let spec = GridSpec {
            num_landmarks: 3,
            ..corridor(3)
        };
        let env = build_coop_comm(&spec).unwrap();
        let grid = Grid::new(&spec).unwrap();
        let landmarks = grid.pick(&spec, 3).unwrap();
        for goal in 0..3 {
            let s = (landmarks[goal] * 3 + goal) * 4 + 3;
            assert!((env.game.reward(0, s, 0) - (spec.goal_reward - spec.step_penalty)).abs() < 1e-15);
            let other = (landmarks[(goal + 1) % 3] * 3 + goal) * 4 + 3;
            assert!((env.game.reward(1, other, 0) + spec.step_penalty).abs() < 1e-15);
        }
    }

    #[test]
    fn coop_comm_listener_waits_for_a_message() {
        let env = build_coop_comm(&preset("coop_comm").unwrap()).unwrap();
        let t = env.game.dynamics().transition();
        let space = env.game.actions();
        // cell 0, goal 1, no message yet: moving right does nothing
        let s = 4 + 3;
        let joint = space.encode(&[2, 4]);
        let (next, _) = t.row(s, joint).next().unwrap();
        assert_eq!(next, 4 + 2);
        // with a message the move happens
        let s = 4;
        let (next, _) = t.row(s, joint).next().unwrap();
        assert_eq!(next / 12, 1);
    }

    #[test]
    fn coop_comm_expert_reaches_goal() {
        let env = build_coop_comm(&preset("coop_comm").unwrap()).unwrap();
        let pi = coop_comm_expert(&env).unwrap();
        let mut rng = RngConfig::new(3, "roll").rng();
        for _ in 0..20 {
            let traj = crate::trajectory::sample_trajectory(env.game.dynamics(), &pi, 10, &mut rng);
            let last = traj.state(9);
            let r = env.game.reward(0, last, 0);
            assert!((r - (env.spec.goal_reward - env.spec.step_penalty)).abs() < 1e-12);
        }
    }

    #[test]
    fn coop_nav_rewards() {
        let spec = GridSpec {
            randomize_layout: false,
            layout_seed: 7,
            ..GridSpec::default()
        };
        let env = build_coop_nav(&spec).unwrap();
        let grid = Grid::new(&spec).unwrap();
        let mut lm = grid.pick(&spec, 2).unwrap();
        lm.sort_unstable();
        let covered = encode(&lm, 9);
        assert_eq!(env.game.reward(0, covered, 0), 0.0);
        assert_eq!(env.game.first_reward_mismatch(), None);
        // both agents on the first landmark: one collision plus the distance
        // to the second landmark
        let stacked = encode(&[lm[0], lm[0]], 9);
        let expected = -(grid.dist(lm[0], lm[1]) as f64) - spec.collision_penalty;
        assert_eq!(env.game.reward(1, stacked, 3), expected);
    }

    #[test]
    fn coop_nav_layout_is_reproducible() {
        let spec = GridSpec {
            layout_seed: 11,
            ..GridSpec::default()
        };
        let a = build_coop_nav(&spec).unwrap();
        let b = build_coop_nav(&spec).unwrap();
        assert_eq!(a.game, b.game);
        let r = build_coop_nav(&preset("coop_nav").unwrap()).unwrap();
        assert_eq!(r.game.num_states(), 81 * 36);
    }

    #[test]
    fn keep_away_is_zero_sum_and_hides_target() {
        let env = build_keep_away(&preset("keep_away").unwrap()).unwrap();
        let g = &env.game;
        for k in 0..g.reward_table(0).len() {
            assert_eq!(g.reward_table(0)[k] + g.reward_table(1)[k], 0.0);
        }
        for s in (0..g.num_states()).step_by(2) {
            assert_eq!(env.observations.observe(1, s), env.observations.observe(1, s + 1));
        }
        let grid = Grid::new(&env.spec).unwrap();
        let targets = grid.pick(&env.spec, 2).unwrap();
        let other = (targets[0] + 1) % grid.len();
        let s = (targets[0] * grid.len() + other) * 2;
        assert_eq!(g.reward(0, s, 0), env.spec.goal_reward);
    }

    #[test]
    fn keep_away_contact_pushes_back() {
        let env = build_keep_away(&preset("keep_away").unwrap()).unwrap();
        let space = env.game.actions();
        let t = env.game.dynamics().transition();
        // agent 0 at cell 1 steps right into the adversary standing at 2
        let s = (5 + 2) * 2;
        let (next, _) = t.row(s, space.encode(&[2, 0])).next().unwrap();
        assert_eq!(next, s);
        // adversary at 2 steps left onto agent 0 standing at 1: pushed to 0
        let (next, _) = t.row(s, space.encode(&[0, 1])).next().unwrap();
        assert_eq!(next, 2);
    }

    #[test]
    fn predator_prey_rewards() {
        let env = build_predator_prey(&GridSpec::default()).unwrap();
        let g = &env.game;
        let touch = encode(&[4, 0, 4], 9);
        assert_eq!(g.reward(0, touch, 0), 1.0);
        assert_eq!(g.reward(1, touch, 0), 1.0);
        assert_eq!(g.reward(2, touch, 0), -1.0);
        let apart = encode(&[0, 1, 8], 9);
        assert!((0..3).all(|i| g.reward(i, apart, 7) == 0.0));
        for k in 0..g.reward_table(0).len() {
            assert_eq!(g.reward_table(0)[k], g.reward_table(1)[k]);
            assert_eq!(g.reward_table(2)[k], -g.reward_table(0)[k]);
        }
    }

    #[test]
    fn predator_slowness_in_transitions() {
        let env = build_predator_prey(&GridSpec::default()).unwrap();
        let space = env.game.actions();
        let s = encode(&[0, 4, 8], 9);
        // both predators move right, prey stays
        let joint = space.encode(&[4, 4, 0]);
        let row: Vec<_> = env.game.dynamics().transition().row(s, joint).collect();
        assert_eq!(row.len(), 4);
        let p_first_only = env.game.dynamics().transition().prob(s, joint, encode(&[1, 4, 8], 9));
        assert!((p_first_only - 0.25).abs() < 1e-15);
    }

    #[test]
    fn budget_is_enforced() {
        let spec = GridSpec {
            width: 6,
            height: 6,
            predators: 3,
            ..GridSpec::default()
        };
        assert!(matches!(build_predator_prey(&spec), Err(Error::StateBudget { .. })));
    }

    #[test]
    fn spec_json_roundtrip() {
        let spec = preset("predator_prey").unwrap();
        let text = serde_json::to_string(&spec).unwrap();
        let back: GridSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(spec, back);
        let partial: GridSpec = serde_json::from_str(r#"{"width": 4}"#).unwrap();
        assert_eq!(partial.width, 4);
        assert!(serde_json::from_str::<GridSpec>(r#"{"wdth": 4}"#).is_err());
    }
}
