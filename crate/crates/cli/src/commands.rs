use std::fmt::Write as _;
use std::io::{BufReader, Write as _};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use serde::Serialize;

use magail::discriminator::PriorKind;
use magail::envs::{build, coop_comm_expert, Environment, GameKind};
use magail::equilibria::{solve_team_vi, solve_zero_sum_shapley, SolverReport};
use magail::io::{decode_policy, encode_policy};
use magail::mack::{train_mack, MACK_LOG_HEADER};
use magail::magail::{behavior_cloning, evaluate_policy, train_gail_baseline, train_magail, MagailConfig, RUN_LOG_HEADER};
use magail::solvers::nash_check;
use magail::theory::{rows_csv, run_suite};
use magail::trajectory::collect_demonstrations;
use magail::{DemonstrationSet, JointPolicy, RngConfig};

use crate::config::{ExpertMethod, ExperimentConfig, ImitationMethod};

/// Failure classes, mapped to the process exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
    Theory(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Runtime(_) => 2,
            Failure::Theory(_) => 3,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(e) => write!(f, "configuration error: {e:#}"),
            Failure::Runtime(e) => write!(f, "error: {e:#}"),
            Failure::Theory(msg) => write!(f, "theory check failed: {msg}"),
        }
    }
}

pub type Outcome = std::result::Result<(), Failure>;

trait Classify<T> {
    fn usage(self) -> Result<T, Failure>;
    fn runtime(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn usage(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Usage(e.into()))
    }

    fn runtime(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Runtime(e.into()))
    }
}

/// Writes `contents` to `dir/name` through a temporary file and a rename.
pub fn write_atomic(dir: &Path, name: &str, contents: &[u8]) -> anyhow::Result<PathBuf> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(&path).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

fn environment(cfg: &ExperimentConfig) -> Result<Environment, Failure> {
    build(&cfg.game, &cfg.grid()).context("grid").usage()
}

fn read_policy(path: &Path) -> Result<JointPolicy, Failure> {
    let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display())).runtime()?;
    decode_policy(BufReader::new(file)).with_context(|| format!("parsing {}", path.display())).runtime()
}

fn read_demos(path: &Path) -> Result<DemonstrationSet, Failure> {
    let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display())).runtime()?;
    DemonstrationSet::read_from(BufReader::new(file))
        .with_context(|| format!("parsing {}", path.display()))
        .runtime()
}

#[derive(Serialize)]
struct ExpertReport {
    game: String,
    method: ExpertMethod,
    iterations: Option<usize>,
    residual: Option<f64>,
    tolerance: Option<f64>,
    certified_tolerance: Option<f64>,
    is_nash: bool,
    max_violation: f64,
    nash_tolerance: f64,
    /// Some agent acts on a coarser observation than the state, so the
    /// state-based best response in the Nash check can exploit off-path
    /// information the policy never sees.
    observation_restricted: bool,
}

fn solver_report(
    cfg: &ExperimentConfig,
    env: &Environment,
    policy: &JointPolicy,
    report: Option<&SolverReport>,
) -> Result<ExpertReport, Failure> {
    let gamma = env.game.discount();
    let tol = report.map_or(cfg.expert.tol, |r| r.certified_tolerance(gamma));
    let check = nash_check(&env.game, policy, tol).runtime()?;
    Ok(ExpertReport {
        game: cfg.game.clone(),
        method: cfg.expert.method,
        iterations: report.map(|r| r.iterations),
        residual: report.map(|r| r.residual),
        tolerance: report.map(|r| r.tolerance),
        certified_tolerance: report.map(|r| r.certified_tolerance(gamma)),
        is_nash: check.is_nash,
        max_violation: check.max_violation,
        nash_tolerance: tol,
        observation_restricted: (0..policy.num_agents()).any(|i| !policy.observations().is_identity(i)),
    })
}

pub fn make_expert(cfg: &ExperimentConfig, out: &Path) -> Outcome {
    let env = environment(cfg)?;
    let method = cfg.expert.method;
    let require = |kind: GameKind, what: &str| {
        if env.kind == kind {
            Ok(())
        } else {
            Err(Failure::Usage(anyhow!("expert.method: {method:?} needs a {what} game, {} is {:?}", cfg.game, env.kind)))
        }
    };
    let (policy, report) = match method {
        ExpertMethod::TeamVi => {
            require(GameKind::Team, "cooperative")?;
            let (p, r) = solve_team_vi(&env.game, cfg.expert.tol).runtime()?;
            (p, Some(r))
        }
        ExpertMethod::ZerosumShapley => {
            require(GameKind::ZeroSum, "two-player zero-sum")?;
            let (p, r) = solve_zero_sum_shapley(&env.game, cfg.expert.tol).runtime()?;
            (p, Some(r))
        }
        ExpertMethod::Analytic => (coop_comm_expert(&env).context("expert.method").usage()?, None),
        ExpertMethod::Mack => {
            let (p, log) =
                train_mack(&env.game, &env.observations, &cfg.expert.mack, &RngConfig::new(cfg.seed, "expert")).runtime()?;
            let mut csv = format!("{MACK_LOG_HEADER}\n");
            for row in &log {
                let _ = writeln!(csv, "{}", row.csv());
            }
            write_atomic(out, "expert_log.csv", csv.as_bytes()).runtime()?;
            (p, None)
        }
    };
    let summary = solver_report(cfg, &env, &policy, report.as_ref())?;
    write_atomic(out, "expert.policy", encode_policy(&policy).as_bytes()).runtime()?;
    let json = serde_json::to_string_pretty(&summary).runtime()?;
    write_atomic(out, "expert_report.json", json.as_bytes()).runtime()?;
    println!(
        "expert {:?} on {}: nash={} (max violation {:.3e}, tol {:.3e}){}",
        method,
        cfg.game,
        summary.is_nash,
        summary.max_violation,
        summary.nash_tolerance,
        if summary.observation_restricted { ", observation-restricted" } else { "" }
    );
    if report.is_some() && !summary.is_nash {
        return Err(Failure::Runtime(anyhow!("solver output failed its Nash certificate")));
    }
    Ok(())
}

pub fn collect_demos(cfg: &ExperimentConfig, expert: &Path, out: &Path) -> Outcome {
    if cfg.demos.episodes == 0 || cfg.demos.horizon == 0 {
        return Err(Failure::Usage(anyhow!("demos: episodes and horizon must be positive")));
    }
    let env = environment(cfg)?;
    let policy = read_policy(expert)?;
    let demos = collect_demonstrations(
        &cfg.game,
        env.game.dynamics(),
        &policy,
        cfg.demos.episodes,
        cfg.demos.horizon,
        &RngConfig::new(cfg.seed, "demos"),
    )
    .runtime()?;
    let path = write_atomic(out, "demos.txt", demos.encode().as_bytes()).runtime()?;
    println!("{} episodes x {} steps -> {}", cfg.demos.episodes, cfg.demos.horizon, path.display());
    Ok(())
}

pub fn train(cfg: &ExperimentConfig, demos: &Path, expert: Option<&Path>, out: &Path) -> Outcome {
    let env = environment(cfg)?;
    let demos = read_demos(demos)?;
    if demos.meta.game_id != cfg.game {
        return Err(Failure::Usage(anyhow!("demos were collected on {}, config is {}", demos.meta.game_id, cfg.game)));
    }
    demos.check_against(env.game.dynamics()).runtime()?;
    let experts = expert.map(read_policy).transpose()?;
    // training sees the transition model only
    let dynamics = env.game.dynamics();
    let rng = RngConfig::new(cfg.seed, "train");
    let with_prior = |prior| MagailConfig {
        prior,
        ..cfg.imitation.magail.clone()
    };
    let method = cfg.imitation.method;
    let (policy, log, notes) = match method {
        ImitationMethod::Bc => {
            let p = behavior_cloning(&demos, &env.observations, dynamics.actions().counts(), cfg.imitation.magail.bc_smoothing)
                .runtime()?;
            (p, format!("{RUN_LOG_HEADER}\n"), Vec::new())
        }
        ImitationMethod::Gail => {
            let rec = train_gail_baseline(dynamics, &env.observations, &demos, &cfg.imitation.magail, &rng, None).runtime()?;
            (rec.policy.clone(), rec.csv(), rec.notes)
        }
        ImitationMethod::MagailC | ImitationMethod::MagailD | ImitationMethod::MagailZs => {
            let prior = match method {
                ImitationMethod::MagailC => PriorKind::Centralized,
                ImitationMethod::MagailD => PriorKind::Decentralized,
                _ => PriorKind::ZeroSum,
            };
            if prior == PriorKind::ZeroSum && env.kind != GameKind::ZeroSum {
                return Err(Failure::Usage(anyhow!(
                    "imitation.method: magail_zs needs a two-player zero-sum game, {} is {:?}",
                    cfg.game,
                    env.kind
                )));
            }
            let rec = train_magail(dynamics, &env.observations, &demos, &with_prior(prior), experts.as_ref(), &rng, None)
                .runtime()?;
            (rec.policy.clone(), rec.csv(), rec.notes)
        }
    };
    for note in &notes {
        eprintln!("note: {note}");
    }
    write_atomic(out, "train_log.csv", log.as_bytes()).runtime()?;
    write_atomic(out, "policy.txt", encode_policy(&policy).as_bytes()).runtime()?;
    let snapshot = serde_json::to_string_pretty(cfg).runtime()?;
    write_atomic(out, "config.json", snapshot.as_bytes()).runtime()?;
    println!("trained {:?} on {} -> {}", method, cfg.game, out.join("policy.txt").display());
    Ok(())
}

pub fn evaluate(cfg: &ExperimentConfig, policy: &Path, out: &Path) -> Outcome {
    if cfg.evaluation.episodes == 0 {
        return Err(Failure::Usage(anyhow!("evaluation.episodes must be positive")));
    }
    let env = environment(cfg)?;
    let policy = read_policy(policy)?;
    let eval = evaluate_policy(
        &env.game,
        &policy,
        cfg.evaluation.episodes,
        cfg.evaluation.horizon,
        &RngConfig::new(cfg.seed, "evaluate"),
    )
    .runtime()?;
    let mut csv = String::from("agent,mean,std,exact\n");
    println!("{:>5}  {:>12}  {:>12}  {:>12}", "agent", "mean", "std", "exact");
    for i in 0..eval.mean.len() {
        let _ = writeln!(csv, "{},{:.12e},{:.12e},{:.12e}", i, eval.mean[i], eval.std[i], eval.exact[i]);
        println!("{:>5}  {:>12.6}  {:>12.6}  {:>12.6}", i, eval.mean[i], eval.std[i], eval.exact[i]);
    }
    write_atomic(out, "evaluation.csv", csv.as_bytes()).runtime()?;
    Ok(())
}

pub fn verify_theory(seed: u64, budget: usize, corrupt: bool, out: &Path) -> Outcome {
    let run = run_suite(seed, budget, corrupt).usage()?;
    let path = write_atomic(out, "theory.csv", rows_csv(&run.rows).as_bytes()).runtime()?;
    let failed: Vec<_> = run.rows.iter().filter(|r| !r.pass).collect();
    println!(
        "{} checks, {} failed{} -> {}",
        run.rows.len(),
        failed.len(),
        if run.partial { " (partial run: budget below the full suite)" } else { "" },
        path.display()
    );
    for r in &failed {
        println!("FAIL {}", r.csv());
    }
    if failed.is_empty() {
        Ok(())
    } else {
        let names: Vec<String> = failed.iter().map(|r| format!("{}[{}]", r.check, r.instance)).collect();
        Err(Failure::Theory(names.join(", ")))
    }
}
