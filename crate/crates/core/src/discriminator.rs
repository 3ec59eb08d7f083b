//! Tabular logistic discriminators for the centralized, decentralized and
//! zero-sum reward priors.

use std::fmt::Write as _;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::error::{check_index, Error, Result};
use crate::game::JointActionSpace;
use crate::policy::ObservationMap;

/// Scores are clamped to `[DISC_EPS, 1 - DISC_EPS]`.
pub const DISC_EPS: f64 = 1e-6;

/// Largest classifier logit magnitude, `logit(1 - DISC_EPS)`.
pub fn max_logit() -> f64 {
    ((1.0 - DISC_EPS) / DISC_EPS).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorKind {
    Centralized,
    Decentralized,
    ZeroSum,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PriorVariant {
    /// One shared scorer on `(s, a)`.
    Centralized,
    /// Independent scorers on `(o_i(s), a_i)`.
    Decentralized(ObservationMap),
    /// Value head `v(s, a)`; `agent_one` receives `v`, the other `-v`.
    ZeroSum { agent_one: usize },
}

impl PriorVariant {
    pub fn kind(&self) -> PriorKind {
        match self {
            Self::Centralized => PriorKind::Centralized,
            Self::Decentralized(_) => PriorKind::Decentralized,
            Self::ZeroSum { .. } => PriorKind::ZeroSum,
        }
    }
}

/// Policy-side pairs `χ` and expert-side pairs `χ_E`, as `(state, joint)`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DiscBatch {
    pub policy: Vec<(usize, usize)>,
    pub expert: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorParams {
    variant: PriorVariant,
    space: JointActionSpace,
    num_states: usize,
    /// One table per scorer: a single `[s * |J| + j]` table for the
    /// centralized and zero-sum heads, `[o_i * |A_i| + a_i]` per agent
    /// otherwise.
    pub weights: Vec<Vec<f64>>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn clamp_score(d: f64) -> f64 {
    d.clamp(DISC_EPS, 1.0 - DISC_EPS)
}

impl DiscriminatorParams {
    pub fn zeros(variant: PriorVariant, space: &JointActionSpace, num_states: usize) -> Result<Self> {
        let n = space.num_agents();
        let weights = match &variant {
            PriorVariant::Centralized => vec![vec![0.0; num_states * space.size()]],
            PriorVariant::Decentralized(obs) => {
                if obs.num_agents() != n || obs.num_states() != num_states {
                    return Err(Error::DimensionMismatch(format!(
                        "observation map covers {} agents and {} states, game has {n} and {num_states}",
                        obs.num_agents(),
                        obs.num_states()
                    )));
                }
                (0..n).map(|i| vec![0.0; obs.count(i) * space.count(i)]).collect()
            }
            PriorVariant::ZeroSum { agent_one } => {
                if n != 2 {
                    return Err(Error::InvalidArgument(format!(
                        "zero-sum prior needs 2 agents, got {n}"
                    )));
                }
                check_index("agent", *agent_one, 2)?;
                vec![vec![0.0; num_states * space.size()]]
            }
        };
        Ok(Self {
            variant,
            space: space.clone(),
            num_states,
            weights,
        })
    }

    pub fn variant(&self) -> &PriorVariant {
        &self.variant
    }

    pub fn num_agents(&self) -> usize {
        self.space.num_agents()
    }

    /// `(table, cell)` of agent `agent`'s scorer at `(state, joint)`.
    fn cell(&self, agent: usize, state: usize, joint: usize) -> (usize, usize) {
        match &self.variant {
            PriorVariant::Decentralized(obs) => {
                let a = self.space.component(joint, agent);
                (agent, obs.observe(agent, state) * self.space.count(agent) + a)
            }
            _ => (0, state * self.space.size() + joint),
        }
    }

    fn check(&self, state: usize, joint: usize) -> Result<()> {
        check_index("state", state, self.num_states)?;
        check_index("joint action", joint, self.space.size())
    }

    /// Per-agent scores `D_i(s, a)`; under the zero-sum prior `agent_one`
    /// gets `sigmoid(v)` and the other agent its complement.
    pub fn forward(&self, state: usize, joint: usize) -> Result<Vec<f64>> {
        self.check(state, joint)?;
        let n = self.num_agents();
        Ok(match &self.variant {
            PriorVariant::Centralized => vec![clamp_score(sigmoid(self.weights[0][state * self.space.size() + joint])); n],
            PriorVariant::Decentralized(_) => (0..n)
                .map(|i| {
                    let (t, c) = self.cell(i, state, joint);
                    clamp_score(sigmoid(self.weights[t][c]))
                })
                .collect(),
            PriorVariant::ZeroSum { agent_one } => {
                let d = clamp_score(sigmoid(self.weights[0][state * self.space.size() + joint]));
                let mut out = vec![1.0 - d; 2];
                out[*agent_one] = d;
                out
            }
        })
    }

    /// Generator rewards: `-ln D_i` for the classifier priors, `(v, -v)`
    /// for the zero-sum head.
    pub fn policy_reward(&self, state: usize, joint: usize, out: &mut [f64]) -> Result<()> {
        self.check(state, joint)?;
        if out.len() != self.num_agents() {
            return Err(Error::DimensionMismatch(format!(
                "reward buffer has {} slots for {} agents",
                out.len(),
                self.num_agents()
            )));
        }
        match &self.variant {
            PriorVariant::ZeroSum { agent_one } => {
                let v = self.weights[0][state * self.space.size() + joint];
                out[*agent_one] = v;
                out[1 - agent_one] = -v;
            }
            _ => {
                for (i, r) in out.iter_mut().enumerate() {
                    let (t, c) = self.cell(i, state, joint);
                    *r = -clamp_score(sigmoid(self.weights[t][c])).ln();
                }
            }
        }
        Ok(())
    }

    /// Per-cell frequencies of both batch sides for scorer table `table`.
    fn frequencies(&self, table: usize, batch: &DiscBatch) -> (Vec<f64>, Vec<f64>) {
        let cells = self.weights[table].len();
        let count = |pairs: &[(usize, usize)]| {
            let mut f = vec![0.0; cells];
            let w = 1.0 / pairs.len() as f64;
            for &(s, j) in pairs {
                f[self.cell(table, s, j).1] += w;
            }
            f
        };
        (count(&batch.policy), count(&batch.expert))
    }

    fn check_classifier_batch(&self, batch: &DiscBatch) -> Result<()> {
        if matches!(self.variant, PriorVariant::ZeroSum { .. }) {
            return Err(Error::InvalidArgument(
                "zero-sum heads are trained with zero_sum_update".into(),
            ));
        }
        if batch.policy.is_empty() || batch.expert.is_empty() {
            return Err(Error::InvalidArgument("discriminator batch has an empty side".into()));
        }
        for &(s, j) in batch.policy.iter().chain(&batch.expert) {
            self.check(s, j)?;
        }
        Ok(())
    }

    /// `E_χ[ln D_i] + E_{χ_E}[ln(1 - D_i)]` per scorer table.
    pub fn objective(&self, batch: &DiscBatch) -> Result<Vec<f64>> {
        self.check_classifier_batch(batch)?;
        Ok((0..self.weights.len())
            .map(|t| {
                let (fp, fe) = self.frequencies(t, batch);
                self.weights[t]
                    .iter()
                    .zip(fp.iter().zip(&fe))
                    .map(|(&w, (&p, &e))| {
                        let d = clamp_score(sigmoid(w));
                        p * d.ln() + e * (1.0 - d).ln()
                    })
                    .sum()
            })
            .collect())
    }

    /// Gradient of [`Self::objective`] per scorer table (unclamped logistic).
    pub fn gradient(&self, batch: &DiscBatch) -> Result<Vec<Vec<f64>>> {
        self.check_classifier_batch(batch)?;
        Ok((0..self.weights.len())
            .map(|t| {
                let (fp, fe) = self.frequencies(t, batch);
                self.weights[t]
                    .iter()
                    .zip(fp.iter().zip(&fe))
                    .map(|(&w, (&p, &e))| {
                        let d = sigmoid(w);
                        p * (1.0 - d) - e * d
                    })
                    .collect()
            })
            .collect())
    }

    /// `steps` gradient-ascent steps on the logistic objective; weights are
    /// kept within `±max_logit()`. Returns the per-agent objective after the
    /// last step (the shared value is replicated under the centralized prior).
    pub fn update(&mut self, batch: &DiscBatch, lr: f64, steps: usize) -> Result<Vec<f64>> {
        self.check_classifier_batch(batch)?;
        let bound = max_logit();
        for t in 0..self.weights.len() {
            let (fp, fe) = self.frequencies(t, batch);
            for (w, (&p, &e)) in self.weights[t].iter_mut().zip(fp.iter().zip(&fe)) {
                if p == 0.0 && e == 0.0 {
                    continue;
                }
                for _ in 0..steps {
                    let d = sigmoid(*w);
                    *w = (*w + lr * (p * (1.0 - d) - e * d)).clamp(-bound, bound);
                }
            }
        }
        let obj = self.objective(batch)?;
        Ok(match self.variant {
            PriorVariant::Centralized => vec![obj[0]; self.num_agents()],
            _ => obj,
        })
    }

    /// Zero-sum head: `steps` ascent steps on
    /// `mean_A v - mean_B v - (l2 / 2) |v|^2`, where side A comes from
    /// `(expert_1, learner_2)` and side B from `(learner_1, expert_2)`.
    /// Returns `mean_A v - mean_B v` after the last step.
    pub fn zero_sum_update(
        &mut self,
        side_a: &[(usize, usize)],
        side_b: &[(usize, usize)],
        lr: f64,
        steps: usize,
        l2: f64,
    ) -> Result<f64> {
        if !matches!(self.variant, PriorVariant::ZeroSum { .. }) {
            return Err(Error::InvalidArgument("zero_sum_update needs the zero-sum prior".into()));
        }
        if side_a.is_empty() || side_b.is_empty() {
            return Err(Error::InvalidArgument("zero-sum batch has an empty side".into()));
        }
        for &(s, j) in side_a.iter().chain(side_b) {
            self.check(s, j)?;
        }
        let batch = DiscBatch {
            policy: side_a.to_vec(),
            expert: side_b.to_vec(),
        };
        let (fa, fb) = self.frequencies(0, &batch);
        let v = &mut self.weights[0];
        for _ in 0..steps {
            for (w, (&a, &b)) in v.iter_mut().zip(fa.iter().zip(&fb)) {
                *w += lr * (a - b - l2 * *w);
            }
        }
        Ok(v.iter().zip(fa.iter().zip(&fb)).map(|(w, (a, b))| w * (a - b)).sum())
    }

    /// Checkpoint text: one line `agent obs action weight` per cell, where
    /// `obs`/`action` are the state and joint index for the shared tables.
    pub fn encode(&self) -> String {
        let mut out = String::new();
        for (t, table) in self.weights.iter().enumerate() {
            let cols = match self.variant {
                PriorVariant::Decentralized(_) => self.space.count(t),
                _ => self.space.size(),
            };
            for (c, w) in table.iter().enumerate() {
                let _ = writeln!(out, "{} {} {} {:.11e}", t, c / cols, c % cols, w);
            }
        }
        out
    }

    /// Reads a checkpoint into parameters of the same shape.
    pub fn decode_into<R: BufRead>(&mut self, reader: R) -> Result<()> {
        let mut seen = vec![vec![false; 0]; self.weights.len()];
        for (t, s) in seen.iter_mut().enumerate() {
            *s = vec![false; self.weights[t].len()];
        }
        for (k, line) in reader.lines().enumerate() {
            let line = line?;
            let bad = |message: String| Error::Decode { line: k + 1, message };
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 4 {
                return Err(bad(format!("expected 4 fields, found {}", f.len())));
            }
            let idx = |x: &str| x.parse::<usize>().map_err(|e| bad(format!("{x:?}: {e}")));
            let (t, o, a) = (idx(f[0])?, idx(f[1])?, idx(f[2])?);
            let w: f64 = f[3].parse().map_err(|e| bad(format!("{:?}: {e}", f[3])))?;
            if !w.is_finite() {
                return Err(bad("non-finite weight".into()));
            }
            if t >= self.weights.len() {
                return Err(bad(format!("agent {t} has no scorer")));
            }
            let cols = match self.variant {
                PriorVariant::Decentralized(_) => self.space.count(t),
                _ => self.space.size(),
            };
            let c = o * cols + a;
            if a >= cols || c >= self.weights[t].len() {
                return Err(bad(format!("cell ({o}, {a}) out of range")));
            }
            self.weights[t][c] = w;
            seen[t][c] = true;
        }
        if seen.iter().flatten().any(|s| !s) {
            return Err(Error::Decode {
                line: 0,
                message: "checkpoint does not cover every cell".into(),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::RngConfig;
    use rand::Rng;

    fn random_batch(rng: &mut impl Rng, states: usize, joint: usize, n: usize) -> DiscBatch {
        let mut side = |len| (0..len).map(|_| (rng.gen_range(0..states), rng.gen_range(0..joint))).collect();
        DiscBatch {
            policy: side(n),
            expert: side(n),
        }
    }

    #[test]
    fn zero_weights_score_half() {
        let space = JointActionSpace::new(vec![2, 3]);
        for variant in [
            PriorVariant::Centralized,
            PriorVariant::Decentralized(ObservationMap::identity(2, 4)),
            PriorVariant::ZeroSum { agent_one: 0 },
        ] {
            let d = DiscriminatorParams::zeros(variant, &space, 4).unwrap();
            for s in 0..4 {
                for j in 0..6 {
                    assert_eq!(d.forward(s, j).unwrap(), vec![0.5, 0.5]);
                }
            }
            assert!(d.forward(4, 0).is_err());
            assert!(d.forward(0, 6).is_err());
        }
    }

    #[test]
    fn saturated_cell_is_clamped() {
        let space = JointActionSpace::new(vec![2]);
        let mut d = DiscriminatorParams::zeros(PriorVariant::Centralized, &space, 1).unwrap();
        d.weights[0][1] = 40.0;
        assert_eq!(d.forward(0, 1).unwrap(), vec![1.0 - DISC_EPS]);
        let mut r = [0.0];
        d.policy_reward(0, 1, &mut r).unwrap();
        assert!((r[0] - DISC_EPS).abs() < 1e-12);
        d.policy_reward(0, 0, &mut r).unwrap();
        assert!((r[0] - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn decentralized_ignores_other_actions() {
        let mut rng = RngConfig::new(61, "d").rng();
        let space = JointActionSpace::new(vec![2, 3, 2]);
        let obs = ObservationMap::new(vec![vec![0, 1, 1], vec![0, 0, 0], vec![2, 1, 0]], vec![2, 1, 3]).unwrap();
        let mut d = DiscriminatorParams::zeros(PriorVariant::Decentralized(obs.clone()), &space, 3).unwrap();
        for t in &mut d.weights {
            t.iter_mut().for_each(|w| *w = rng.gen_range(-2.0..2.0));
        }
        for s in 0..3 {
            for j in 0..space.size() {
                let base = d.forward(s, j).unwrap();
                for i in 0..3 {
                    let own = space.component(j, i);
                    for k in 0..space.size() {
                        if space.component(k, i) == own {
                            assert_eq!(d.forward(s, k).unwrap()[i], base[i]);
                        }
                    }
                    for s2 in 0..3 {
                        if obs.observe(i, s2) == obs.observe(i, s) {
                            assert_eq!(d.forward(s2, j).unwrap()[i], base[i]);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn centralized_rewards_are_shared_and_zero_sum_rewards_cancel() {
        let mut rng = RngConfig::new(62, "d").rng();
        let space = JointActionSpace::new(vec![3, 2]);
        let mut c = DiscriminatorParams::zeros(PriorVariant::Centralized, &space, 5).unwrap();
        let mut z = DiscriminatorParams::zeros(PriorVariant::ZeroSum { agent_one: 1 }, &space, 5).unwrap();
        for w in c.weights[0].iter_mut().chain(z.weights[0].iter_mut()) {
            *w = rng.gen_range(-5.0..5.0);
        }
        let mut r = [0.0; 2];
        for s in 0..5 {
            for j in 0..6 {
                c.policy_reward(s, j, &mut r).unwrap();
                assert_eq!(r[0], r[1]);
                assert!(r[0] > 0.0);
                z.policy_reward(s, j, &mut r).unwrap();
                assert_eq!(r[0] + r[1], 0.0);
                assert_eq!(r[1], z.weights[0][s * 6 + j]);
            }
        }
    }

    #[test]
    fn identical_sides_converge_to_half() {
        let mut rng = RngConfig::new(63, "d").rng();
        let space = JointActionSpace::new(vec![2, 2]);
        let b = random_batch(&mut rng, 3, 4, 50);
        let batch = DiscBatch {
            policy: b.policy.clone(),
            expert: b.policy,
        };
        let mut d = DiscriminatorParams::zeros(PriorVariant::Centralized, &space, 3).unwrap();
        d.weights[0].iter_mut().for_each(|w| *w = rng.gen_range(-1.0..1.0));
        let obj = d.update(&batch, 2.0, 5000).unwrap();
        assert!((obj[0] - 2.0 * 0.5f64.ln()).abs() < 1e-9);
        for &(s, j) in &batch.policy {
            assert!((d.forward(s, j).unwrap()[0] - 0.5).abs() < 1e-6);
        }
    }

    #[test]
    fn disjoint_sides_separate() {
        let space = JointActionSpace::new(vec![2]);
        let batch = DiscBatch {
            policy: vec![(0, 0); 5],
            expert: vec![(0, 1); 5],
        };
        let mut d = DiscriminatorParams::zeros(PriorVariant::Centralized, &space, 1).unwrap();
        let mut last = f64::NEG_INFINITY;
        for _ in 0..200 {
            let obj = d.update(&batch, 1.0, 50).unwrap()[0];
            assert!(obj >= last - 1e-12);
            last = obj;
        }
        assert!(last < 0.0 && last > -1e-3);
    }

    #[test]
    fn converges_to_count_ratios() {
        let mut rng = RngConfig::new(64, "d").rng();
        let space = JointActionSpace::new(vec![2, 3]);
        let obs = ObservationMap::new(vec![vec![0, 1, 0, 1], vec![0, 1, 2, 3]], vec![2, 4]).unwrap();
        for _ in 0..5 {
            let batch = random_batch(&mut rng, 4, 6, 80);
            let mut d = DiscriminatorParams::zeros(PriorVariant::Decentralized(obs.clone()), &space, 4).unwrap();
            d.update(&batch, 4.0, 20_000).unwrap();
            for i in 0..2 {
                let key = |&(s, j): &(usize, usize)| (obs.observe(i, s), space.component(j, i));
                for probe in batch.policy.iter().chain(&batch.expert) {
                    let p = batch.policy.iter().filter(|x| key(x) == key(probe)).count() as f64;
                    let e = batch.expert.iter().filter(|x| key(x) == key(probe)).count() as f64;
                    let want = (p / (p + e)).clamp(DISC_EPS, 1.0 - DISC_EPS);
                    let got = d.forward(probe.0, probe.1).unwrap()[i];
                    assert!((got - want).abs() < 1e-3, "{got} vs {want}");
                }
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = RngConfig::new(65, "d").rng();
        let space = JointActionSpace::new(vec![2, 2]);
        for variant in [PriorVariant::Centralized, PriorVariant::Decentralized(ObservationMap::identity(2, 3))] {
            let mut d = DiscriminatorParams::zeros(variant, &space, 3).unwrap();
            for t in &mut d.weights {
                t.iter_mut().for_each(|w| *w = rng.gen_range(-2.0..2.0));
            }
            let batch = random_batch(&mut rng, 3, 4, 30);
            let grad = d.gradient(&batch).unwrap();
            let h = 1e-6;
            for t in 0..d.weights.len() {
                for c in 0..d.weights[t].len() {
                    let mut up = d.clone();
                    up.weights[t][c] += h;
                    let mut down = d.clone();
                    down.weights[t][c] -= h;
                    let fd = (up.objective(&batch).unwrap()[t] - down.objective(&batch).unwrap()[t]) / (2.0 * h);
                    let scale = grad[t][c].abs().max(fd.abs());
                    if scale > 1e-9 {
                        assert!((grad[t][c] - fd).abs() / scale < 1e-5);
                    }
                }
            }
        }
    }

    #[test]
    fn update_refusals() {
        let space = JointActionSpace::new(vec![2, 2]);
        let mut c = DiscriminatorParams::zeros(PriorVariant::Centralized, &space, 2).unwrap();
        let empty = DiscBatch {
            policy: vec![(0, 0)],
            expert: vec![],
        };
        assert!(c.update(&empty, 1.0, 1).is_err());
        assert!(c.zero_sum_update(&[(0, 0)], &[(0, 1)], 1.0, 1, 0.0).is_err());
        assert!(DiscriminatorParams::zeros(PriorVariant::ZeroSum { agent_one: 0 }, &JointActionSpace::new(vec![2, 2, 2]), 2).is_err());
        let mut z = DiscriminatorParams::zeros(PriorVariant::ZeroSum { agent_one: 0 }, &space, 2).unwrap();
        assert!(z.update(&DiscBatch { policy: vec![(0, 0)], expert: vec![(0, 0)] }, 1.0, 1).is_err());
        assert!(z.zero_sum_update(&[], &[(0, 0)], 1.0, 1, 0.0).is_err());
    }

    #[test]
    fn zero_sum_head_moves_toward_side_a() {
        let space = JointActionSpace::new(vec![2, 2]);
        let mut z = DiscriminatorParams::zeros(PriorVariant::ZeroSum { agent_one: 0 }, &space, 2).unwrap();
        let same = [(0, 1), (1, 2), (1, 2)];
        z.zero_sum_update(&same, &same, 0.5, 10, 0.0).unwrap();
        assert!(z.weights[0].iter().all(|&w| w == 0.0));
        z.zero_sum_update(&[(0, 0)], &[(1, 3)], 0.5, 10, 0.0).unwrap();
        assert!(z.weights[0][0] > 0.0);
        assert!(z.weights[0][7] < 0.0);
        // with decay the head settles at the frequency gap over l2
        let gap = z.zero_sum_update(&[(0, 0)], &[(1, 3)], 0.5, 500, 2.0).unwrap();
        assert!((z.weights[0][0] - 0.5).abs() < 1e-9);
        assert!((gap - 1.0).abs() < 1e-9);
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = RngConfig::new(66, "d").rng();
        let space = JointActionSpace::new(vec![2, 3]);
        let obs = ObservationMap::new(vec![vec![0, 1, 0], vec![0, 0, 0]], vec![2, 1]).unwrap();
        for variant in [PriorVariant::Centralized, PriorVariant::Decentralized(obs), PriorVariant::ZeroSum { agent_one: 1 }] {
            let mut d = DiscriminatorParams::zeros(variant, &space, 3).unwrap();
            for t in &mut d.weights {
                t.iter_mut().for_each(|w| *w = rng.gen_range(-9.0..9.0));
            }
            let text = d.encode();
            let mut back = DiscriminatorParams::zeros(d.variant().clone(), &space, 3).unwrap();
            back.decode_into(text.as_bytes()).unwrap();
            for (a, b) in d.weights.iter().flatten().zip(back.weights.iter().flatten()) {
                assert!((a - b).abs() <= 1e-11 * a.abs());
            }
            let short: String = text.lines().skip(1).map(|l| format!("{l}\n")).collect();
            assert!(back.decode_into(short.as_bytes()).is_err());
            assert!(back.decode_into("0 0 0 nan\n".as_bytes()).is_err());
        }
    }
}
