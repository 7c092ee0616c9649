//! Subcommand implementations. Each writes its artifacts under the output
//! directory and returns a short summary for the terminal.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use eestab_core::chain::{builtin_nominal_q, builtin_toy_arm, parse_chain};
use eestab_core::control::{Gains, IdealController, IdealTerms, PdHold, TaskCommand};
use eestab_core::disturbance::{parse_profiles, sample_profile, serialize_profiles, DisturbanceProfile};
use eestab_core::eval::{benchmark, BenchReport, Method};
use eestab_core::sim::{rollout, RolloutLog, SimConfig};
use eestab_core::{ChainModel, JointState};
use eestab_rl::checkpoint;
use eestab_rl::policy::PolicyNet;
use eestab_rl::train::{curve_to_csv, mix, train, CurveRow, PolicyController, TrainSetup};
use nalgebra::DVector;
use thiserror::Error;

use crate::checks::{oracle_suite, CheckResult};
use crate::config::{ChainSource, ExperimentConfig};
use crate::plot::render_svg;

/// Failure classes, mapped to exit codes by the binary.
#[derive(Debug, Error)]
pub enum CommandError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Rollout(String),
    #[error("{0}")]
    Training(String),
}

impl CommandError {
    pub fn kind(&self) -> &'static str {
        match self {
            CommandError::Config(_) => "config",
            CommandError::Io(_) => "io",
            CommandError::Rollout(_) => "rollout",
            CommandError::Training(_) => "training",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CommandError::Config(_) => 2,
            _ => 1,
        }
    }
}

fn config_err(e: impl ToString) -> CommandError {
    CommandError::Config(e.to_string())
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CommandError + '_ {
    move |e| CommandError::Io(format!("{}: {e}", path.display()))
}

/// Model, holding command and initial state of an experiment.
pub struct Arm {
    pub model: ChainModel,
    pub cmd: TaskCommand,
    pub initial: JointState,
}

pub fn load_arm(cfg: &ExperimentConfig) -> Result<Arm, CommandError> {
    let (model, default_q) = match &cfg.chain {
        ChainSource::Builtin(n) => (builtin_toy_arm(*n).map_err(config_err)?, builtin_nominal_q(*n)),
        ChainSource::File(p) => {
            let text = fs::read_to_string(p).map_err(io_err(p))?;
            let m = parse_chain(&text).map_err(|e| config_err(format!("{}: {e}", p.display())))?;
            let n = m.dof();
            (m, Some(vec![0.0; n]))
        }
    };
    let q0 = cfg.q0.clone().or(default_q).unwrap_or_default();
    if q0.len() != model.dof() {
        return Err(config_err(format!(
            "experiment.q0: expected {} values, found {}",
            model.dof(),
            q0.len()
        )));
    }
    let q0 = DVector::from_vec(q0);
    let cmd = TaskCommand::hold_at(&model, &q0).map_err(config_err)?;
    Ok(Arm {
        model,
        cmd,
        initial: JointState::at_rest(q0),
    })
}

/// Profiles from the configured file, or sampled from the seed.
pub fn load_profiles(cfg: &ExperimentConfig) -> Result<Vec<DisturbanceProfile>, CommandError> {
    match &cfg.profiles {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(io_err(p))?;
            let v = parse_profiles(&text).map_err(|e| config_err(format!("{}: {e}", p.display())))?;
            if v.is_empty() {
                return Err(config_err(format!("{}: no profiles", p.display())));
            }
            Ok(v)
        }
        None => (0..cfg.profile_count)
            .map(|k| sample_profile(mix(&[cfg.seed, 7, k as u64]), &cfg.ranges).map_err(config_err))
            .collect(),
    }
}

fn load_policy(cfg: &ExperimentConfig, dof: usize) -> Result<Option<Arc<PolicyNet>>, CommandError> {
    let Some(p) = &cfg.policy else { return Ok(None) };
    let policy = checkpoint::load(p).map_err(|e| config_err(format!("{}: {e}", p.display())))?;
    if policy.dof() != dof {
        return Err(config_err(format!(
            "{}: policy drives {} joints, arm has {dof}",
            p.display(),
            policy.dof()
        )));
    }
    Ok(Some(Arc::new(policy)))
}

pub const METHOD_NAMES: [&str; 5] = ["pd-hold", "task-only", "comp-only", "ideal", "policy"];

pub fn make_method(name: &str, gains: Gains, policy: Option<&Arc<PolicyNet>>) -> Result<Method, CommandError> {
    let ideal = |terms| Method::new(name, move || Box::new(IdealController::new(gains, terms)));
    Ok(match name {
        "pd-hold" => Method::new(name, move || Box::new(PdHold::new(gains))),
        "task-only" => ideal(IdealTerms::TASK_ONLY),
        "comp-only" => ideal(IdealTerms::COMPENSATION_ONLY),
        "ideal" => ideal(IdealTerms::FULL),
        "policy" => {
            let p = policy
                .cloned()
                .ok_or_else(|| config_err("method `policy` needs experiment.policy"))?;
            Method::new(name, move || Box::new(PolicyController::deterministic(p.clone(), gains)))
        }
        other => {
            return Err(config_err(format!(
                "unknown controller `{other}`; expected one of {}",
                METHOD_NAMES.join(", ")
            )))
        }
    })
}

fn sim_config(cfg: &ExperimentConfig) -> SimConfig {
    SimConfig {
        seed: cfg.seed,
        ..cfg.sim.clone()
    }
}

fn prepare_out(cfg: &ExperimentConfig) -> Result<&Path, CommandError> {
    fs::create_dir_all(&cfg.out).map_err(io_err(&cfg.out))?;
    Ok(&cfg.out)
}

fn write(path: PathBuf, text: &str) -> Result<PathBuf, CommandError> {
    fs::write(&path, text).map_err(io_err(&path))?;
    Ok(path)
}

pub fn verify(cfg: &ExperimentConfig) -> Vec<CheckResult> {
    oracle_suite(cfg.seed)
}

pub fn profile_gen(cfg: &ExperimentConfig) -> Result<PathBuf, CommandError> {
    let profiles = load_profiles(cfg)?;
    let out = prepare_out(cfg)?;
    write(out.join("profiles.txt"), &serialize_profiles(&profiles))
}

pub fn simulate(cfg: &ExperimentConfig) -> Result<(PathBuf, RolloutLog), CommandError> {
    let arm = load_arm(cfg)?;
    let profiles = load_profiles(cfg)?;
    let profile = profiles.get(cfg.simulate_profile).ok_or_else(|| {
        config_err(format!(
            "simulate.profile = {} but only {} profiles are available",
            cfg.simulate_profile,
            profiles.len()
        ))
    })?;
    let policy = load_policy(cfg, arm.model.dof())?;
    let method = make_method(&cfg.simulate_controller, cfg.gains, policy.as_ref())?;
    let mut controller = (method.make)();
    let log = rollout(&arm.model, controller.as_mut(), profile, &arm.cmd, &arm.initial, &sim_config(cfg))
        .map_err(|e| CommandError::Rollout(e.to_string()))?;
    let out = prepare_out(cfg)?;
    let path = out.join("rollout.csv");
    log.save_csv(&path).map_err(|e| CommandError::Io(e.to_string()))?;
    Ok((path, log))
}

pub fn bench(cfg: &ExperimentConfig) -> Result<(Vec<PathBuf>, BenchReport), CommandError> {
    let arm = load_arm(cfg)?;
    let profiles = load_profiles(cfg)?;
    let policy = load_policy(cfg, arm.model.dof())?;
    let methods = cfg
        .bench_methods
        .iter()
        .map(|m| make_method(m, cfg.gains, policy.as_ref()))
        .collect::<Result<Vec<_>, _>>()?;
    let report = benchmark(
        &arm.model,
        &methods,
        &profiles,
        cfg.bench_rollouts,
        &arm.cmd,
        &arm.initial,
        &sim_config(cfg),
    );
    let out = prepare_out(cfg)?;
    let md = write(out.join("bench.md"), &report.to_markdown())?;
    let csv = write(out.join("bench.csv"), &report.to_csv())?;
    Ok((vec![md, csv], report))
}

pub fn train_setup(cfg: &ExperimentConfig) -> Result<TrainSetup, CommandError> {
    let arm = load_arm(cfg)?;
    let mut setup = TrainSetup::new(arm.model, arm.cmd, arm.initial);
    setup.sim = SimConfig {
        obs_noise: cfg.train_noise,
        ..sim_config(cfg)
    };
    setup.ranges = cfg.ranges.clone();
    setup.gains = cfg.gains;
    setup.weights = cfg.reward.clone();
    setup.hidden = cfg.hidden.clone();
    setup.action_scale = cfg.action_scale;
    setup.log_std_init = cfg.log_std_init;
    Ok(setup)
}

pub fn train_policy(
    cfg: &ExperimentConfig,
    progress: Option<&mut dyn FnMut(&CurveRow)>,
) -> Result<(Vec<PathBuf>, Vec<CurveRow>), CommandError> {
    let setup = train_setup(cfg)?;
    let out = train(&setup, &cfg.ppo_config(), progress).map_err(|e| CommandError::Training(e.to_string()))?;
    let dir = prepare_out(cfg)?;
    let policy = write(dir.join("policy.txt"), &checkpoint::to_string(&out.policy))?;
    let curve = write(dir.join("curve.csv"), &curve_to_csv(&out.curve))?;
    Ok((vec![policy, curve], out.curve))
}

/// Renders `input` (a rollout CSV) to `<out>/<stem>.svg`.
pub fn plot(cfg: &ExperimentConfig, input: &Path) -> Result<PathBuf, CommandError> {
    let log = RolloutLog::load_csv(input).map_err(|e| CommandError::Io(format!("{}: {e}", input.display())))?;
    let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("rollout");
    let out = prepare_out(cfg)?;
    let path = out.join(format!("{stem}.svg"));
    render_svg(&log, stem, &path).map_err(CommandError::Io)?;
    Ok(path)
}
