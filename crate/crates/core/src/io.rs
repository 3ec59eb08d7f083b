//! Text encoding of joint policies.
//!
//! ```text
//! policy <N> <|S|>
//! agent <i> <|O_i|> <|A_i|>
//! map <o_i(0)> .. <o_i(|S|-1)>
//! <π_i(0 | o)> .. <π_i(|A_i|-1 | o)>      one line per observation
//! ```
//!
//! Probabilities are written with 12 significant digits and renormalized on
//! read.

use std::fmt::Write as _;
use std::io::BufRead;

use crate::error::{Error, Result};
use crate::policy::{AgentPolicy, JointPolicy, ObservationMap};

/// Largest row-sum error accepted before renormalizing.
pub const READ_ROW_TOL: f64 = 1e-9;

pub fn encode_policy(policy: &JointPolicy) -> String {
    let obs = policy.observations();
    let mut out = String::new();
    let _ = writeln!(out, "policy {} {}", policy.num_agents(), obs.num_states());
    for (i, agent) in policy.agents().iter().enumerate() {
        let _ = writeln!(out, "agent {} {} {}", i, agent.num_obs(), agent.num_actions());
        let map: Vec<String> = obs.agent_map(i).iter().map(usize::to_string).collect();
        let _ = writeln!(out, "map {}", map.join(" "));
        for o in 0..agent.num_obs() {
            let row: Vec<String> = agent.row(o).iter().map(|p| format!("{p:.11e}")).collect();
            let _ = writeln!(out, "{}", row.join(" "));
        }
    }
    out
}

struct Lines<R> {
    inner: std::io::Lines<R>,
    number: usize,
}

impl<R: BufRead> Lines<R> {
    fn next_fields(&mut self, expect: &str) -> Result<Vec<String>> {
        loop {
            self.number += 1;
            let line = match self.inner.next() {
                Some(line) => line?,
                None => return Err(self.error(format!("unexpected end of file, expected {expect}"))),
            };
            if !line.trim().is_empty() {
                return Ok(line.split_whitespace().map(str::to_string).collect());
            }
        }
    }

    fn error(&self, message: String) -> Error {
        Error::Decode {
            line: self.number,
            message,
        }
    }

    fn header(&mut self, tag: &str, arity: usize) -> Result<Vec<usize>> {
        let f = self.next_fields(tag)?;
        if f.first().map(String::as_str) != Some(tag) || f.len() != arity + 1 {
            return Err(self.error(format!("expected `{tag}` with {arity} integers")));
        }
        f[1..]
            .iter()
            .map(|x| x.parse().map_err(|e| self.error(format!("{x:?}: {e}"))))
            .collect()
    }
}

pub fn decode_policy<R: BufRead>(reader: R) -> Result<JointPolicy> {
    let mut lines = Lines {
        inner: reader.lines(),
        number: 0,
    };
    let head = lines.header("policy", 2)?;
    let (n, num_states) = (head[0], head[1]);
    let mut maps = Vec::with_capacity(n);
    let mut counts = Vec::with_capacity(n);
    let mut agents = Vec::with_capacity(n);
    for i in 0..n {
        let h = lines.header("agent", 3)?;
        if h[0] != i {
            return Err(lines.error(format!("expected agent {i}, found {}", h[0])));
        }
        let (num_obs, num_actions) = (h[1], h[2]);
        if num_actions == 0 {
            return Err(lines.error("agent has no actions".into()));
        }
        let map = lines.header("map", num_states)?;
        if let Some(o) = map.iter().find(|&&o| o >= num_obs) {
            return Err(lines.error(format!("observation {o} out of range")));
        }
        let mut probs = Vec::with_capacity(num_obs * num_actions);
        for _ in 0..num_obs {
            let f = lines.next_fields("a probability row")?;
            if f.len() != num_actions {
                return Err(lines.error(format!("expected {num_actions} probabilities, found {}", f.len())));
            }
            let row = f
                .iter()
                .map(|x| {
                    x.parse::<f64>()
                        .ok()
                        .filter(|p| p.is_finite() && *p >= 0.0)
                        .ok_or_else(|| lines.error(format!("{x:?} is not a probability")))
                })
                .collect::<Result<Vec<f64>>>()?;
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > READ_ROW_TOL {
                return Err(lines.error(format!("row sums to {total}")));
            }
            probs.extend(row.iter().map(|p| p / total));
        }
        maps.push(map);
        counts.push(num_obs);
        agents.push(AgentPolicy::new(num_obs, num_actions, probs)?);
    }
    if let Some(Ok(extra)) = lines.inner.find(|l| l.as_ref().map_or(true, |l| !l.trim().is_empty())) {
        return Err(Error::Decode {
            line: lines.number + 1,
            message: format!("trailing content {extra:?}"),
        });
    }
    JointPolicy::new(agents, ObservationMap::new(maps, counts)?)
}
