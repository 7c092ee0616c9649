//! Experiment configuration files. The grammar follows the chain description
//! format: `#` comments, `[section]` headers, `key = value` lines and
//! comma-separated vectors. See `docs/experiment-config.md`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use eestab_core::control::Gains;
use eestab_core::disturbance::{DisturbanceRanges, TwistMode, WrenchModel};
use eestab_core::sim::{ObsNoise, SimConfig};
use eestab_rl::ppo::PpoConfig;
use eestab_rl::reward::{NormWeight, RewardWeights, TrackingWeight};
use eestab_rl::train::TRAINING_NOISE;
use nalgebra::{Vector3, Vector6};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("{key}: {message}")]
    Value { key: String, message: String },
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub enum ChainSource {
    Builtin(usize),
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub chain: ChainSource,
    /// Holding configuration; the builtin arms have their own default.
    pub q0: Option<Vec<f64>>,
    pub profiles: Option<PathBuf>,
    pub profile_count: usize,
    pub policy: Option<PathBuf>,
    pub seed: u64,
    pub out: PathBuf,
    pub sim: SimConfig,
    pub ranges: DisturbanceRanges,
    pub gains: Gains,
    pub ppo: PpoConfig,
    pub train_noise: ObsNoise,
    pub reward: RewardWeights,
    pub hidden: Vec<usize>,
    pub action_scale: f64,
    pub log_std_init: f64,
    pub bench_methods: Vec<String>,
    pub bench_rollouts: usize,
    pub simulate_controller: String,
    pub simulate_profile: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            chain: ChainSource::Builtin(2),
            q0: None,
            profiles: None,
            profile_count: 20,
            policy: None,
            seed: 0,
            out: PathBuf::from("out"),
            sim: SimConfig::default(),
            ranges: DisturbanceRanges::default(),
            gains: Gains::default(),
            ppo: PpoConfig::default(),
            train_noise: TRAINING_NOISE,
            reward: RewardWeights::default(),
            hidden: vec![64, 64],
            action_scale: 0.5,
            log_std_init: -1.0,
            bench_methods: ["pd-hold", "task-only", "ideal"].map(String::from).to_vec(),
            bench_rollouts: 3,
            simulate_controller: "ideal".into(),
            simulate_profile: 0,
        }
    }
}

struct Value {
    text: String,
    line: usize,
    used: bool,
}

/// Parsed `section.key -> value` pairs, consumed by typed getters.
struct Table {
    entries: BTreeMap<String, Value>,
}

const SECTIONS: [&str; 9] = [
    "experiment",
    "sim",
    "disturbance",
    "gains",
    "ppo",
    "policy",
    "reward",
    "bench",
    "simulate",
];

fn tokenize(text: &str) -> Result<Table, ConfigError> {
    let mut entries = BTreeMap::new();
    let mut section: Option<String> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let syntax = |message: String| ConfigError::Syntax { line, message };
        if let Some(rest) = content.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| syntax("unterminated section header".into()))?
                .trim();
            if !SECTIONS.contains(&name) {
                return Err(syntax(format!("unknown section [{name}]")));
            }
            section = Some(name.to_string());
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| syntax(format!("expected `key = value`, found `{content}`")))?;
        let section = section
            .as_ref()
            .ok_or_else(|| syntax("key outside of any section".into()))?;
        let full = format!("{section}.{}", key.trim());
        let value = Value {
            text: value.trim().to_string(),
            line,
            used: false,
        };
        if entries.insert(full.clone(), value).is_some() {
            return Err(syntax(format!("duplicate key `{full}`")));
        }
    }
    Ok(Table { entries })
}

impl Table {
    fn take(&mut self, key: &str) -> Option<(String, usize)> {
        self.entries.get_mut(key).map(|v| {
            v.used = true;
            (v.text.clone(), v.line)
        })
    }

    fn parse<T>(&mut self, key: &str, f: impl Fn(&str) -> Result<T, String>) -> Result<Option<T>, ConfigError> {
        match self.take(key) {
            None => Ok(None),
            Some((text, line)) => f(&text).map(Some).map_err(|m| ConfigError::Value {
                key: format!("{key} (line {line})"),
                message: m,
            }),
        }
    }

    fn set<T>(&mut self, key: &str, slot: &mut T, f: impl Fn(&str) -> Result<T, String>) -> Result<(), ConfigError> {
        if let Some(v) = self.parse(key, f)? {
            *slot = v;
        }
        Ok(())
    }

    fn unused(&self) -> Option<(&str, usize)> {
        self.entries.iter().find(|(_, v)| !v.used).map(|(k, v)| (k.as_str(), v.line))
    }
}

fn float(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("bad number `{s}`: {e}"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("non-finite number `{s}`"))
    }
}

fn floats(s: &str) -> Result<Vec<f64>, String> {
    s.split(',').map(|p| float(p.trim())).collect()
}

fn floats_n(s: &str, n: usize) -> Result<Vec<f64>, String> {
    let v = floats(s)?;
    if v.len() == n {
        Ok(v)
    } else {
        Err(format!("expected {n} values, found {}", v.len()))
    }
}

fn pair(s: &str) -> Result<(f64, f64), String> {
    let v = floats_n(s, 2)?;
    Ok((v[0], v[1]))
}

fn vec3(s: &str) -> Result<Vector3<f64>, String> {
    Ok(Vector3::from_column_slice(&floats_n(s, 3)?))
}

/// One value broadcast to all six axes, or six values.
fn vec6(s: &str) -> Result<Vector6<f64>, String> {
    let v = floats(s)?;
    match v.len() {
        1 => Ok(Vector6::repeat(v[0])),
        6 => Ok(Vector6::from_column_slice(&v)),
        n => Err(format!("expected 1 or 6 values, found {n}")),
    }
}

fn uint(s: &str) -> Result<usize, String> {
    s.parse().map_err(|e| format!("bad integer `{s}`: {e}"))
}

fn u64_(s: &str) -> Result<u64, String> {
    s.parse().map_err(|e| format!("bad integer `{s}`: {e}"))
}

fn boolean(s: &str) -> Result<bool, String> {
    match s {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("expected `true` or `false`, found `{s}`")),
    }
}

fn words(s: &str) -> Result<Vec<String>, String> {
    let v: Vec<String> = s.split(',').map(|w| w.trim().to_string()).collect();
    if v.iter().any(String::is_empty) {
        Err("empty list entry".into())
    } else {
        Ok(v)
    }
}

fn tracking(s: &str) -> Result<TrackingWeight, String> {
    let v = floats_n(s, 3)?;
    Ok(TrackingWeight {
        weight: v[0],
        std: v[1],
        tolerance: v[2],
    })
}

fn norm_weight(s: &str) -> Result<NormWeight, String> {
    let v = floats_n(s, 3)?;
    Ok(NormWeight {
        linear: v[0],
        exp: v[1],
        std: v[2],
    })
}

fn noise(s: &str) -> Result<ObsNoise, String> {
    let v = floats_n(s, 4)?;
    if v.iter().any(|x| *x < 0.0) {
        return Err("noise levels must be non-negative".into());
    }
    Ok(ObsNoise {
        q: v[0],
        qdot: v[1],
        base_twist: v[2],
        base_accel: v[3],
    })
}

fn twist_mode(s: &str) -> Result<TwistMode, String> {
    match s {
        "mean_removed" => Ok(TwistMode::MeanRemoved),
        "integrated" => Ok(TwistMode::Integrated),
        _ => Err(format!("expected `mean_removed` or `integrated`, found `{s}`")),
    }
}

fn wrench_model(s: &str) -> Result<WrenchModel, String> {
    match s {
        "standard" => Ok(WrenchModel::Standard),
        "rotation_coupled" => Ok(WrenchModel::RotationCoupled),
        _ => Err(format!("expected `standard` or `rotation_coupled`, found `{s}`")),
    }
}

fn chain_source(s: &str) -> Result<ChainSource, String> {
    match s.strip_prefix("builtin:") {
        Some(n) => Ok(ChainSource::Builtin(uint(n)?)),
        None => Ok(ChainSource::File(PathBuf::from(s))),
    }
}

fn resolve(base: &Path, p: PathBuf) -> PathBuf {
    if p.is_absolute() {
        p
    } else {
        base.join(p)
    }
}

fn must_exist(p: &Path) -> Result<(), ConfigError> {
    if p.exists() {
        Ok(())
    } else {
        Err(ConfigError::Io {
            path: p.to_path_buf(),
            message: "referenced file does not exist".into(),
        })
    }
}

impl ExperimentConfig {
    /// Parses a config. Relative paths are resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut t = tokenize(text)?;
        let mut c = Self::default();

        t.set("experiment.chain", &mut c.chain, chain_source)?;
        if let Some(q) = t.parse("experiment.q0", floats)? {
            c.q0 = Some(q);
        }
        c.profiles = t.parse("experiment.profiles", |s| Ok(PathBuf::from(s)))?;
        t.set("experiment.profile_count", &mut c.profile_count, uint)?;
        c.policy = t.parse("experiment.policy", |s| Ok(PathBuf::from(s)))?;
        t.set("experiment.seed", &mut c.seed, u64_)?;
        t.set("experiment.out", &mut c.out, |s| Ok(PathBuf::from(s)))?;

        let s = &mut c.sim;
        t.set("sim.dt", &mut s.dt_physics, float)?;
        t.set("sim.control_rate", &mut s.control_rate, float)?;
        t.set("sim.pd_rate", &mut s.pd_rate, float)?;
        t.set("sim.duration", &mut s.duration, float)?;
        t.set("sim.gravity", &mut s.gravity, vec3)?;
        t.set("sim.torque_limits", &mut s.torque_limits_on, boolean)?;
        t.set("sim.noise", &mut s.obs_noise, noise)?;
        t.set("sim.twist_mode", &mut s.twist_mode, twist_mode)?;
        t.set("sim.wrench_model", &mut s.wrench_model, wrench_model)?;

        let r = &mut c.ranges;
        t.set("disturbance.period", &mut r.period, pair)?;
        t.set("disturbance.impulse", &mut r.impulse, pair)?;
        t.set("disturbance.sway", &mut r.sway, pair)?;
        t.set("disturbance.phase", &mut r.phase, pair)?;
        t.set("disturbance.components", &mut r.components, uint)?;
        t.set("disturbance.impulse_std", &mut r.impulse_std, float)?;

        let g = &mut c.gains;
        t.set("gains.kbar_p", &mut g.kbar_p, vec6)?;
        t.set("gains.kbar_d", &mut g.kbar_d, vec6)?;
        t.set("gains.kp", &mut g.kp, float)?;
        t.set("gains.kd", &mut g.kd, float)?;

        let p = &mut c.ppo;
        t.set("ppo.gamma", &mut p.gamma, float)?;
        t.set("ppo.lambda", &mut p.lambda, float)?;
        t.set("ppo.clip", &mut p.clip, float)?;
        t.set("ppo.learning_rate", &mut p.learning_rate, float)?;
        t.set("ppo.epochs", &mut p.epochs, uint)?;
        t.set("ppo.minibatch", &mut p.minibatch, uint)?;
        t.set("ppo.entropy_coef", &mut p.entropy_coef, float)?;
        t.set("ppo.value_coef", &mut p.value_coef, float)?;
        t.set("ppo.max_grad_norm", &mut p.max_grad_norm, float)?;
        t.set("ppo.normalize_advantages", &mut p.normalize_advantages, boolean)?;
        t.set("ppo.horizon", &mut p.horizon, uint)?;
        t.set("ppo.episodes", &mut p.episodes_per_iteration, uint)?;
        t.set("ppo.iterations", &mut p.iterations, uint)?;
        t.set("ppo.noise", &mut c.train_noise, noise)?;

        t.set("policy.hidden", &mut c.hidden, |s| s.split(',').map(|w| uint(w.trim())).collect())?;
        t.set("policy.action_scale", &mut c.action_scale, float)?;
        t.set("policy.log_std_init", &mut c.log_std_init, float)?;

        let w = &mut c.reward;
        t.set("reward.alive", &mut w.alive, float)?;
        t.set("reward.position", &mut w.position, tracking)?;
        t.set("reward.orientation", &mut w.orientation, tracking)?;
        t.set("reward.torque_guide", &mut w.torque_guide, norm_weight)?;
        t.set("reward.ee_lin_acc", &mut w.ee_lin_acc, norm_weight)?;
        t.set("reward.ee_ang_acc", &mut w.ee_ang_acc, norm_weight)?;
        t.set("reward.action_rate", &mut w.action_rate, float)?;

        t.set("bench.methods", &mut c.bench_methods, words)?;
        t.set("bench.rollouts", &mut c.bench_rollouts, uint)?;
        t.set("simulate.controller", &mut c.simulate_controller, |s| Ok(s.to_string()))?;
        t.set("simulate.profile", &mut c.simulate_profile, uint)?;

        if let Some((key, line)) = t.unused() {
            return Err(ConfigError::Syntax {
                line,
                message: format!("unknown key `{key}`"),
            });
        }

        if let ChainSource::File(p) = &c.chain {
            c.chain = ChainSource::File(resolve(base, p.clone()));
        }
        c.profiles = c.profiles.map(|p| resolve(base, p));
        c.policy = c.policy.map(|p| resolve(base, p));
        c.out = resolve(base, c.out);
        c.check()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Referenced files exist and numeric settings are usable.
    pub fn check(&self) -> Result<(), ConfigError> {
        if let ChainSource::File(p) = &self.chain {
            must_exist(p)?;
        }
        for p in self.profiles.iter().chain(&self.policy) {
            must_exist(p)?;
        }
        let value = |key: &str, message: String| ConfigError::Value {
            key: key.into(),
            message,
        };
        self.sim.schedule().map_err(|e| value("sim", e.to_string()))?;
        self.ranges.check().map_err(|e| value("disturbance", e.to_string()))?;
        if !self.gains.is_valid() {
            return Err(value("gains", "gains must be finite and non-negative".into()));
        }
        self.ppo.validate().map_err(|e| value("ppo", e.to_string()))?;
        if self.hidden.contains(&0) {
            return Err(value("policy.hidden", "layer widths must be positive".into()));
        }
        if !(self.action_scale > 0.0) {
            return Err(value("policy.action_scale", "must be positive".into()));
        }
        if self.bench_rollouts == 0 {
            return Err(value("bench.rollouts", "must be at least 1".into()));
        }
        if self.profile_count == 0 && self.profiles.is_none() {
            return Err(value("experiment.profile_count", "must be at least 1".into()));
        }
        Ok(())
    }

    /// PPO settings with the experiment seed.
    pub fn ppo_config(&self) -> PpoConfig {
        PpoConfig {
            seed: self.seed,
            ..self.ppo.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ExperimentConfig, ConfigError> {
        ExperimentConfig::parse(text, Path::new("."))
    }

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(parse("# nothing\n").unwrap(), ExperimentConfig {
            out: PathBuf::from("./out"),
            ..Default::default()
        });
    }

    #[test]
    fn overrides_are_typed() {
        let c = parse(
            "[experiment]\nchain = builtin:4\nseed = 9\n[sim]\nduration = 2.5\ngravity = 0, 0, 0\n\
             wrench_model = rotation_coupled\n[gains]\nkbar_p = 50\n[ppo]\niterations = 3\n\
             [reward]\nposition = 5, 0.2, 0.01\n[bench]\nmethods = pd-hold, ideal\n",
        )
        .unwrap();
        assert_eq!(c.chain, ChainSource::Builtin(4));
        assert_eq!(c.ppo_config().seed, 9);
        assert_eq!(c.sim.duration, 2.5);
        assert_eq!(c.sim.gravity, Vector3::zeros());
        assert_eq!(c.sim.wrench_model, WrenchModel::RotationCoupled);
        assert_eq!(c.gains.kbar_p, Vector6::repeat(50.0));
        assert_eq!(c.ppo.iterations, 3);
        assert_eq!(c.reward.position.tolerance, 0.01);
        assert_eq!(c.bench_methods, vec!["pd-hold", "ideal"]);
    }

    #[test]
    fn rejects_unknown_and_malformed_entries() {
        let line_of = |text: &str| match parse(text) {
            Err(ConfigError::Syntax { line, .. }) => Some(line),
            _ => None,
        };
        assert_eq!(line_of("[sim]\ndt = 1e-3\nfoo = 1\n"), Some(3));
        assert_eq!(line_of("[nope]\n"), Some(1));
        assert_eq!(line_of("seed = 1\n"), Some(1));
        assert_eq!(line_of("[sim]\ndt = 1e-3\ndt = 2e-3\n"), Some(3));
        assert!(matches!(parse("[sim]\ndt = fast\n"), Err(ConfigError::Value { .. })));
        assert!(matches!(parse("[gains]\nkbar_p = 1, 2\n"), Err(ConfigError::Value { .. })));
        assert!(matches!(parse("[sim]\npd_rate = 333\n"), Err(ConfigError::Value { .. })));
        assert!(matches!(
            parse("[experiment]\nchain = /does/not/exist.chain\n"),
            Err(ConfigError::Io { .. })
        ));
    }
}
