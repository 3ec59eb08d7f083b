//! Seeded sampling of trajectories and demonstration sets.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::game::Dynamics;
use crate::policy::JointPolicy;

/// Seed plus a named stream. Identical `(seed, stream)` pairs yield
/// identical draw sequences; different stream names are independent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngConfig {
    pub seed: u64,
    pub stream: String,
}

impl RngConfig {
    pub fn new(seed: u64, stream: impl Into<String>) -> Self {
        Self {
            seed,
            stream: stream.into(),
        }
    }

    /// Sub-stream `"<stream>/<name>"`.
    pub fn child(&self, name: impl std::fmt::Display) -> Self {
        Self {
            seed: self.seed,
            stream: format!("{}/{}", self.stream, name),
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(fnv1a(self.stream.as_bytes()));
        rng
    }
}

// 64-bit FNV-1a; stable across platforms and releases, unlike DefaultHasher.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Fixed-length rollout: `(s_t, a_t)` for `t < len`, actions stored per agent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trajectory {
    num_agents: usize,
    states: Vec<usize>,
    actions: Vec<usize>,
}

impl Trajectory {
    pub fn new(num_agents: usize) -> Self {
        Self {
            num_agents,
            states: Vec::new(),
            actions: Vec::new(),
        }
    }

    pub fn push(&mut self, state: usize, actions: &[usize]) {
        debug_assert_eq!(actions.len(), self.num_agents);
        self.states.push(state);
        self.actions.extend_from_slice(actions);
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn num_agents(&self) -> usize {
        self.num_agents
    }

    pub fn state(&self, t: usize) -> usize {
        self.states[t]
    }

    pub fn states(&self) -> &[usize] {
        &self.states
    }

    pub fn actions(&self, t: usize) -> &[usize] {
        &self.actions[t * self.num_agents..(t + 1) * self.num_agents]
    }

    pub fn steps(&self) -> impl Iterator<Item = (usize, &[usize])> + '_ {
        self.states
            .iter()
            .copied()
            .zip(self.actions.chunks(self.num_agents.max(1)))
    }

    pub fn check_against(&self, dynamics: &Dynamics) -> Result<()> {
        if self.num_agents != dynamics.num_agents() {
            return Err(Error::DimensionMismatch(format!(
                "trajectory has {} agents, game has {}",
                self.num_agents,
                dynamics.num_agents()
            )));
        }
        for (s, a) in self.steps() {
            crate::error::check_index("state", s, dynamics.num_states())?;
            dynamics.actions().try_encode(a)?;
        }
        Ok(())
    }
}

/// Rolls out `policy` for exactly `horizon` steps: `s_0 ~ η`, each agent
/// draws independently from its own row, then `s' ~ T(· | s, a)`.
pub fn sample_trajectory<R: Rng>(
    dynamics: &Dynamics,
    policy: &JointPolicy,
    horizon: usize,
    rng: &mut R,
) -> Trajectory {
    let n = dynamics.num_agents();
    let space = dynamics.actions();
    let mut traj = Trajectory::new(n);
    traj.states.reserve(horizon);
    traj.actions.reserve(horizon * n);
    let mut state = crate::policy::sample_index(dynamics.initial(), rng.gen());
    let mut actions = vec![0; n];
    for _ in 0..horizon {
        for (i, a) in actions.iter_mut().enumerate() {
            let obs = policy.observations().observe(i, state);
            *a = policy.agent(i).sample(obs, rng.gen());
        }
        traj.push(state, &actions);
        let joint = space.encode(&actions);
        state = dynamics.sample_next(state, joint, rng.gen());
    }
    traj
}

/// Checked entry point: validates the game and the policy shape first.
pub fn sample_trajectory_checked(
    dynamics: &Dynamics,
    policy: &JointPolicy,
    horizon: usize,
    rng: &RngConfig,
) -> Result<Trajectory> {
    dynamics.validate().into_result()?;
    policy.check_against(dynamics)?;
    Ok(sample_trajectory(dynamics, policy, horizon, &mut rng.rng()))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DemoMeta {
    pub game_id: String,
    pub num_agents: usize,
    pub num_states: usize,
    pub horizon: usize,
    pub episodes: usize,
    pub seed: u64,
}

/// Expert trajectories plus the header describing how they were collected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DemonstrationSet {
    pub meta: DemoMeta,
    pub trajectories: Vec<Trajectory>,
}

/// Samples `episodes` expert rollouts of length `horizon`.
pub fn collect_demonstrations(
    game_id: &str,
    dynamics: &Dynamics,
    expert: &JointPolicy,
    episodes: usize,
    horizon: usize,
    rng: &RngConfig,
) -> Result<DemonstrationSet> {
    if episodes == 0 {
        return Err(Error::InvalidArgument("episode count must be at least 1".into()));
    }
    if game_id.is_empty() || game_id.contains(char::is_whitespace) {
        return Err(Error::InvalidArgument(format!(
            "game id {game_id:?} must be a non-empty token"
        )));
    }
    dynamics.validate().into_result()?;
    expert.check_against(dynamics)?;
    let mut r = rng.rng();
    let trajectories = (0..episodes)
        .map(|_| sample_trajectory(dynamics, expert, horizon, &mut r))
        .collect();
    Ok(DemonstrationSet {
        meta: DemoMeta {
            game_id: game_id.to_string(),
            num_agents: dynamics.num_agents(),
            num_states: dynamics.num_states(),
            horizon,
            episodes,
            seed: rng.seed,
        },
        trajectories,
    })
}

impl DemonstrationSet {
    /// Total number of `(state, joint action)` pairs.
    pub fn num_pairs(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }

    /// Line-oriented text encoding: a header `game_id N |S| horizon M seed`
    /// followed by one line per trajectory, `s_0 a_0^1 .. a_0^N s_1 ..`.
    pub fn encode(&self) -> String {
        let m = &self.meta;
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{} {} {} {} {} {}",
            m.game_id, m.num_agents, m.num_states, m.horizon, m.episodes, m.seed
        );
        for traj in &self.trajectories {
            let mut first = true;
            for (s, a) in traj.steps() {
                for v in std::iter::once(&s).chain(a) {
                    if !first {
                        out.push(' ');
                    }
                    first = false;
                    let _ = write!(out, "{v}");
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(self.encode().as_bytes())?;
        Ok(())
    }

    pub fn decode(text: &str) -> Result<Self> {
        Self::read_from(text.as_bytes())
    }

    pub fn read_from<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines();
        let header = match lines.next() {
            Some(line) => line?,
            None => return Err(decode_err(1, "missing header")),
        };
        let fields: Vec<&str> = header.split(' ').collect();
        if fields.len() != 6 {
            return Err(decode_err(
                1,
                format!("header needs 6 fields (game_id N |S| horizon M seed), found {}", fields.len()),
            ));
        }
        let int = |k: usize, name: &str| -> Result<u64> {
            fields[k]
                .parse::<u64>()
                .map_err(|_| decode_err(1, format!("header field {name} is not an integer: {:?}", fields[k])))
        };
        let meta = DemoMeta {
            game_id: fields[0].to_string(),
            num_agents: int(1, "N")? as usize,
            num_states: int(2, "|S|")? as usize,
            horizon: int(3, "horizon")? as usize,
            episodes: int(4, "M")? as usize,
            seed: int(5, "seed")?,
        };
        if meta.num_agents == 0 {
            return Err(decode_err(1, "N must be positive"));
        }
        let per_step = meta.num_agents + 1;
        let mut trajectories = Vec::with_capacity(meta.episodes);
        for k in 0..meta.episodes {
            let line_no = k + 2;
            let line = match lines.next() {
                Some(line) => line?,
                None => {
                    return Err(decode_err(
                        line_no,
                        format!("truncated: expected {} records, found {}", meta.episodes, k),
                    ))
                }
            };
            let mut traj = Trajectory::new(meta.num_agents);
            let mut tokens = 0usize;
            let mut step = Vec::with_capacity(per_step);
            for tok in line.split(' ').filter(|t| !t.is_empty()) {
                let v: usize = tok
                    .parse()
                    .map_err(|_| decode_err(line_no, format!("token {tok:?} is not a non-negative integer")))?;
                step.push(v);
                tokens += 1;
                if step.len() == per_step {
                    if step[0] >= meta.num_states {
                        return Err(decode_err(
                            line_no,
                            format!("state {} out of range (|S| = {})", step[0], meta.num_states),
                        ));
                    }
                    traj.push(step[0], &step[1..]);
                    step.clear();
                }
            }
            if tokens != meta.horizon * per_step {
                return Err(decode_err(
                    line_no,
                    format!("expected {} integers, found {}", meta.horizon * per_step, tokens),
                ));
            }
            trajectories.push(traj);
        }
        if let Some(extra) = lines.next() {
            let extra = extra?;
            if !extra.trim().is_empty() {
                return Err(decode_err(meta.episodes + 2, "unexpected record after the declared count"));
            }
        }
        Ok(Self { meta, trajectories })
    }

    /// Checks that every record indexes valid states and actions of `dynamics`.
    pub fn check_against(&self, dynamics: &Dynamics) -> Result<()> {
        if self.meta.num_states != dynamics.num_states() || self.meta.num_agents != dynamics.num_agents() {
            return Err(Error::DimensionMismatch(format!(
                "demonstrations are for {} agents / {} states, game has {} / {}",
                self.meta.num_agents,
                self.meta.num_states,
                dynamics.num_agents(),
                dynamics.num_states()
            )));
        }
        self.trajectories.iter().try_for_each(|t| t.check_against(dynamics))
    }
}

fn decode_err(line: usize, message: impl Into<String>) -> Error {
    Error::Decode {
        line,
        message: message.into(),
    }
}
