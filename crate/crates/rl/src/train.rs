//! Training environment, the learned-policy controller and the PPO loop.

use std::sync::Arc;

use eestab_core::chain::{builtin_nominal_q, builtin_toy_arm};
use eestab_core::control::{pd_torque, solve_ik, ArmSnapshot, ControlInput, Controller, Gains, PdHold, TaskCommand};
use eestab_core::disturbance::{chain_wrenches, sample_profile, DisturbanceProfile, DisturbanceRanges};
use eestab_core::eval::{benchmark, BenchReport, Method, WARM_UP};
use eestab_core::sim::{profile_motion, Episode, ObsNoise, SimConfig, SimError};
use eestab_core::{ChainModel, DimensionError, JointState};
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::RlError;
use crate::net::Mlp;
use crate::policy::{frame_len, observation_frame, ObservationHistory, PolicyNet};
use crate::ppo::{
    gae, normalize_advantages, ppo_update, PpoConfig, PpoOptimizers, PpoStats, ReturnNormalizer, Transition,
};
use crate::reward::{compute_reward, RewardBreakdown, RewardWeights};

/// Everything a training or evaluation episode is built from.
#[derive(Debug, Clone)]
pub struct TrainSetup {
    pub model: ChainModel,
    pub cmd: TaskCommand,
    pub initial: JointState,
    /// `duration` is replaced by the PPO horizon during training.
    pub sim: SimConfig,
    pub ranges: DisturbanceRanges,
    pub gains: Gains,
    pub weights: RewardWeights,
    pub hidden: Vec<usize>,
    pub action_scale: f64,
    pub log_std_init: f64,
}

/// Observation noise used for training unless overridden.
pub const TRAINING_NOISE: ObsNoise = ObsNoise {
    q: 1e-3,
    qdot: 1e-2,
    base_twist: 1e-2,
    base_accel: 5e-2,
};

impl TrainSetup {
    /// A builtin arm holding the EE pose of its nominal configuration.
    pub fn builtin(dof: usize) -> Result<Self, RlError> {
        let model = builtin_toy_arm(dof).map_err(|e| RlError::Config(e.to_string()))?;
        let q = builtin_nominal_q(dof).ok_or_else(|| RlError::Config(format!("no builtin {dof}-DoF arm")))?;
        let q = DVector::from_vec(q);
        let cmd = TaskCommand::hold_at(&model, &q)?;
        Ok(Self::new(model, cmd, JointState::new(q.clone(), DVector::zeros(dof))))
    }

    pub fn new(model: ChainModel, cmd: TaskCommand, initial: JointState) -> Self {
        Self {
            model,
            cmd,
            initial,
            sim: SimConfig {
                obs_noise: TRAINING_NOISE,
                ..SimConfig::default()
            },
            ranges: DisturbanceRanges::default(),
            gains: Gains::default(),
            weights: RewardWeights::default(),
            hidden: vec![64, 64],
            action_scale: 0.5,
            log_std_init: -1.0,
        }
    }

    pub fn initial_policy(&self, seed: u64) -> PolicyNet {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(&[seed, 0x5EED]));
        PolicyNet::new(self.model.dof(), &self.hidden, self.action_scale, self.log_std_init, &mut rng)
    }

    pub fn initial_critic(&self, seed: u64) -> Mlp {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(&[seed, 0xC417]));
        let mut sizes = vec![crate::policy::DEFAULT_HISTORY * frame_len(self.model.dof())];
        sizes.extend_from_slice(&self.hidden);
        sizes.push(1);
        Mlp::random(&sizes, 1.0, &mut rng)
    }
}

/// SplitMix64 fold of several words into one seed.
pub fn mix(words: &[u64]) -> u64 {
    let mut h = 0x243F_6A88_85A3_08D3u64;
    for w in words {
        h ^= w.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(h << 6).wrapping_add(h >> 2);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}

/// One decision taken by the policy at a control tick.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub obs: DVector<f64>,
    pub pre_tanh: DVector<f64>,
    pub log_prob: f64,
}

/// Joint PD around the policy's joint targets plus the task torque.
///
/// At each control tick the policy maps the observation history to offsets
/// from the nominal joint configuration (the IK solution of the command found
/// at reset). Sampling is stochastic when an RNG is supplied.
pub struct PolicyController {
    policy: Arc<PolicyNet>,
    gains: Gains,
    rng: Option<ChaCha8Rng>,
    record: bool,
    history: ObservationHistory,
    q_nominal: Option<DVector<f64>>,
    q_des: DVector<f64>,
    action: DVector<f64>,
    prev_action: DVector<f64>,
    decisions: Vec<Decision>,
}

impl PolicyController {
    pub fn deterministic(policy: Arc<PolicyNet>, gains: Gains) -> Self {
        Self::build(policy, gains, None, false)
    }

    /// Samples actions and keeps every decision for training.
    pub fn exploring(policy: Arc<PolicyNet>, gains: Gains, seed: u64) -> Self {
        Self::build(policy, gains, Some(ChaCha8Rng::seed_from_u64(seed)), true)
    }

    fn build(policy: Arc<PolicyNet>, gains: Gains, rng: Option<ChaCha8Rng>, record: bool) -> Self {
        let n = policy.dof();
        let history = ObservationHistory::new(policy.history, frame_len(n));
        Self {
            policy,
            gains,
            rng,
            record,
            history,
            q_nominal: None,
            q_des: DVector::zeros(n),
            action: DVector::zeros(n),
            prev_action: DVector::zeros(n),
            decisions: Vec::new(),
        }
    }

    pub fn action(&self) -> &DVector<f64> {
        &self.action
    }

    pub fn prev_action(&self) -> &DVector<f64> {
        &self.prev_action
    }

    pub fn q_des(&self) -> &DVector<f64> {
        &self.q_des
    }

    pub fn decisions(&self) -> &[Decision] {
        &self.decisions
    }

    pub fn take_decisions(&mut self) -> Vec<Decision> {
        std::mem::take(&mut self.decisions)
    }
}

impl Controller for PolicyController {
    fn name(&self) -> &str {
        "policy"
    }

    fn reset(&mut self, input: &ControlInput<'_>) -> Result<(), DimensionError> {
        let n = input.model.dof();
        if n != self.policy.dof() {
            return Err(DimensionError::Length {
                what: "policy action",
                expected: n,
                got: self.policy.dof(),
            });
        }
        let q = solve_ik(input.model, &input.cmd.x_des, &input.state.q, 1e-3, 200)?;
        self.q_des = q.clone();
        self.q_nominal = Some(q);
        self.history.clear();
        self.action = DVector::zeros(n);
        self.prev_action = DVector::zeros(n);
        self.decisions.clear();
        Ok(())
    }

    fn decide(&mut self, input: &ControlInput<'_>) -> Result<(), DimensionError> {
        self.history
            .push(observation_frame(input.cmd, input.motion, input.state, &self.action));
        let obs = self.history.observation();
        let rng = self.rng.as_mut().map(|r| r as &mut dyn rand::RngCore);
        let out = self.policy.forward(&obs, rng).map_err(|_| DimensionError::Length {
            what: "observation",
            expected: self.policy.obs_len(),
            got: obs.len(),
        })?;
        let nominal = self.q_nominal.get_or_insert_with(|| input.state.q.clone());
        self.q_des = &*nominal + &out.offset;
        self.prev_action = std::mem::replace(&mut self.action, out.action);
        if self.record {
            self.decisions.push(Decision {
                obs,
                pre_tanh: out.pre_tanh,
                log_prob: out.log_prob,
            });
        }
        Ok(())
    }

    fn torque(&mut self, input: &ControlInput<'_>) -> Result<DVector<f64>, DimensionError> {
        let snap = input.snapshot()?;
        Ok(pd_torque(&self.gains, &self.q_des, input.state) + snap.task_torque(input.cmd, &self.gains))
    }
}

/// Result of one exploring episode.
#[derive(Debug, Clone)]
pub struct EpisodeOutcome {
    pub decisions: Vec<Decision>,
    /// Mean PD-tick reward over each decision's hold interval.
    pub rewards: Vec<f64>,
    /// Observation after the last rewarded decision; `None` if the episode diverged.
    pub bootstrap_obs: Option<DVector<f64>>,
    pub breakdown: RewardBreakdown,
    pub mean_lin_acc: f64,
}

/// Rolls out the exploring policy and scores every PD tick.
///
/// The reference torque `τ_comp + τ_task` is evaluated on the true state and
/// base motion. Each decision is credited with the mean reward of the PD ticks
/// it held.
pub fn run_episode(
    setup: &TrainSetup,
    policy: Arc<PolicyNet>,
    profile: &DisturbanceProfile,
    config: &SimConfig,
    action_seed: u64,
) -> Result<EpisodeOutcome, RlError> {
    let motions = profile_motion(profile, config)?;
    let mut ep = Episode::new(&setup.model, config, setup.cmd.clone(), motions, setup.initial.clone())?;
    let sched = ep.schedule();
    let mut ctrl = PolicyController::exploring(policy, setup.gains, action_seed);
    ep.reset_controller(&mut ctrl)?;

    let ticks_per_decision = sched.control_every / sched.pd_every;
    let mut rewards = Vec::new();
    let mut interval = (0.0, 0usize);
    let mut breakdown = RewardBreakdown::default();
    let mut ticks = 0usize;
    let (mut lin_sum, mut lin_n) = (0.0, 0usize);
    let mut diverged = false;
    while !ep.is_done() {
        let k = ep.step_index();
        if k > 0 && k % sched.control_every == 0 {
            rewards.push(interval.0 / interval.1.max(1) as f64);
            interval = (0.0, 0);
        }
        let rec = match ep.advance(&mut ctrl) {
            Ok(r) => r,
            Err(SimError::Diverged { .. }) => {
                diverged = true;
                break;
            }
            Err(e) => return Err(e.into()),
        };
        if rec.t >= WARM_UP {
            lin_sum += rec.a_glob.fixed_rows::<3>(0).norm();
            lin_n += 1;
        }
        if k % sched.pd_every != 0 || ep.is_done() {
            continue;
        }
        let state = rec.state();
        let motion = rec.motion();
        let snap = ArmSnapshot::new(&setup.model, &state, &config.gravity)?;
        let ws = chain_wrenches(&setup.model, &snap.frames, &state.qdot, &motion);
        let tau_comp = snap.compensation_torque(&motion, &ws)?;
        let tau_task = snap.task_torque(&setup.cmd, &setup.gains);
        let (r, b) = compute_reward(
            &rec,
            &tau_comp,
            &tau_task,
            &setup.cmd,
            ctrl.prev_action(),
            ctrl.action(),
            &setup.weights,
        );
        interval.0 += r;
        interval.1 += 1;
        breakdown.add_scaled(&b, 1.0);
        ticks += 1;
    }
    let mut decisions = ctrl.take_decisions();
    let bootstrap_obs = if diverged {
        if interval.1 > 0 {
            rewards.push(interval.0 / interval.1 as f64);
        }
        decisions.truncate(rewards.len());
        None
    } else {
        // the decision at the final time holds no interval
        let last = decisions.pop().map(|d| d.obs);
        debug_assert_eq!(decisions.len(), rewards.len());
        last
    };
    debug_assert!(ticks <= rewards.len() * ticks_per_decision);
    if ticks > 0 {
        let mut mean = RewardBreakdown::default();
        mean.add_scaled(&breakdown, 1.0 / ticks as f64);
        breakdown = mean;
    }
    Ok(EpisodeOutcome {
        decisions,
        rewards,
        bootstrap_obs,
        breakdown,
        mean_lin_acc: if lin_n > 0 { lin_sum / lin_n as f64 } else { 0.0 },
    })
}

/// One row of the training curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveRow {
    pub iteration: usize,
    /// Mean per-decision reward.
    pub mean_reward: f64,
    /// Mean world-frame EE linear acceleration after the warm-up, m/s².
    pub mean_ee_lin_acc: f64,
    /// Mean weighted torque-guide reward (linear plus exponential term).
    pub torque_guide: f64,
    /// Mean of `−‖τ_applied − (τ_comp + τ_task)‖` over PD ticks.
    pub torque_mismatch: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub approx_kl: f64,
}

pub const CURVE_COLUMNS: [&str; 8] = [
    "iteration",
    "mean_reward",
    "mean_ee_lin_acc",
    "torque_guide",
    "torque_mismatch",
    "policy_loss",
    "value_loss",
    "approx_kl",
];

pub fn curve_to_csv(rows: &[CurveRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CURVE_COLUMNS).expect("in-memory write");
    for r in rows {
        w.write_record([
            r.iteration.to_string(),
            format!("{:?}", r.mean_reward),
            format!("{:?}", r.mean_ee_lin_acc),
            format!("{:?}", r.torque_guide),
            format!("{:?}", r.torque_mismatch),
            format!("{:?}", r.policy_loss),
            format!("{:?}", r.value_loss),
            format!("{:?}", r.approx_kl),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

pub fn curve_from_csv(text: &str) -> Result<Vec<CurveRow>, RlError> {
    let bad = |m: String| RlError::Config(format!("training curve: {m}"));
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let f = |i: usize| -> Result<f64, RlError> {
            rec.get(i)
                .ok_or_else(|| bad(format!("missing column {i}")))?
                .parse::<f64>()
                .map_err(|e| bad(e.to_string()))
        };
        rows.push(CurveRow {
            iteration: rec.get(0).unwrap_or("").parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
            mean_reward: f(1)?,
            mean_ee_lin_acc: f(2)?,
            torque_guide: f(3)?,
            torque_mismatch: f(4)?,
            policy_loss: f(5)?,
            value_loss: f(6)?,
            approx_kl: f(7)?,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub policy: PolicyNet,
    /// Predicts returns normalized by `returns`.
    pub critic: Mlp,
    pub returns: ReturnNormalizer,
    pub curve: Vec<CurveRow>,
}

/// Episode configuration for the PPO horizon.
pub fn episode_config(setup: &TrainSetup, ppo: &PpoConfig) -> SimConfig {
    SimConfig {
        duration: ppo.horizon as f64 / setup.sim.control_rate,
        ..setup.sim.clone()
    }
}

/// PPO on freshly sampled disturbance profiles.
///
/// Every random stream (network initialization, profiles, observation noise,
/// action sampling, minibatch order) is derived from `ppo.seed`, so a run is
/// reproducible bit for bit.
pub fn train(
    setup: &TrainSetup,
    ppo: &PpoConfig,
    mut progress: Option<&mut dyn FnMut(&CurveRow)>,
) -> Result<TrainOutput, RlError> {
    ppo.validate()?;
    setup.ranges.check().map_err(|e| RlError::Config(e.to_string()))?;
    let mut policy = setup.initial_policy(ppo.seed);
    let mut critic = setup.initial_critic(ppo.seed);
    let mut opt = PpoOptimizers::new(&policy, &critic, ppo.learning_rate);
    let base_cfg = episode_config(setup, ppo);
    let mut curve = Vec::with_capacity(ppo.iterations);
    let mut returns = ReturnNormalizer::default();

    for it in 0..ppo.iterations {
        let shared = Arc::new(policy.clone());
        let outcomes: Vec<EpisodeOutcome> = (0..ppo.episodes_per_iteration)
            .into_par_iter()
            .map(|e| {
                let e = e as u64;
                let profile = sample_profile(mix(&[ppo.seed, 1, it as u64, e]), &setup.ranges)
                    .map_err(|err| RlError::Config(err.to_string()))?;
                let cfg = SimConfig {
                    seed: mix(&[ppo.seed, 2, it as u64, e]),
                    ..base_cfg.clone()
                };
                run_episode(setup, shared.clone(), &profile, &cfg, mix(&[ppo.seed, 3, it as u64, e]))
            })
            .collect::<Result<_, _>>()?;

        let mut batch = Vec::new();
        let (mut reward_sum, mut reward_n) = (0.0, 0usize);
        let mut lin = 0.0;
        let (mut guide, mut mismatch) = (0.0, 0.0);
        for o in &outcomes {
            let value =
                |obs: &DVector<f64>| returns.denormalize(critic.forward(&obs.component_mul(&policy.obs_scale))[0]);
            let values: Vec<f64> = o.decisions.iter().map(|d| value(&d.obs)).collect();
            let bootstrap = o.bootstrap_obs.as_ref().map_or(0.0, value);
            let (adv, ret) = gae(&o.rewards, &values, bootstrap, ppo.gamma, ppo.lambda);
            for ((d, a), r) in o.decisions.iter().zip(adv).zip(ret) {
                batch.push(Transition {
                    obs: d.obs.clone(),
                    pre_tanh: d.pre_tanh.clone(),
                    log_prob: d.log_prob,
                    advantage: a,
                    ret: r,
                });
            }
            reward_sum += o.rewards.iter().sum::<f64>();
            reward_n += o.rewards.len();
            lin += o.mean_lin_acc;
            guide += o.breakdown.torque_guide + o.breakdown.torque_guide_exp;
            mismatch += o.breakdown.torque_mismatch;
        }
        if ppo.normalize_advantages {
            normalize_advantages(&mut batch);
        }
        returns.update(&batch.iter().map(|t| t.ret).collect::<Vec<_>>());
        batch.iter_mut().for_each(|t| t.ret = returns.normalize(t.ret));
        let mut rng = ChaCha8Rng::seed_from_u64(mix(&[ppo.seed, 5, it as u64]));
        let stats = if batch.is_empty() {
            PpoStats::default()
        } else {
            ppo_update(&mut policy, &mut critic, &mut opt, &batch, ppo, &mut rng)?
        };
        if !policy.is_finite() || !critic.is_finite() {
            return Err(RlError::NonFinite {
                what: "network parameters".into(),
                iteration: it,
            });
        }
        let k = outcomes.len().max(1) as f64;
        let row = CurveRow {
            iteration: it,
            mean_reward: reward_sum / reward_n.max(1) as f64,
            mean_ee_lin_acc: lin / k,
            torque_guide: guide / k,
            torque_mismatch: mismatch / k,
            policy_loss: stats.policy_loss,
            value_loss: stats.value_loss,
            approx_kl: stats.approx_kl,
        };
        if let Some(cb) = progress.as_mut() {
            cb(&row);
        }
        curve.push(row);
    }
    Ok(TrainOutput {
        policy,
        critic,
        returns,
        curve,
    })
}

/// Profiles drawn from a seed stream disjoint from the training streams.
pub fn held_out_profiles(
    seed: u64,
    count: usize,
    ranges: &DisturbanceRanges,
) -> Result<Vec<DisturbanceProfile>, RlError> {
    (0..count)
        .map(|k| sample_profile(mix(&[seed, 4, k as u64]), ranges).map_err(|e| RlError::Config(e.to_string())))
        .collect()
}

/// Paired comparison of PD-hold and the deterministic policy.
pub fn evaluate_against_pd_hold(
    setup: &TrainSetup,
    policy: &PolicyNet,
    profiles: &[DisturbanceProfile],
    rollouts: usize,
    config: &SimConfig,
) -> BenchReport {
    let gains = setup.gains;
    let shared = Arc::new(policy.clone());
    let methods = vec![
        Method::new("pd-hold", move || Box::new(PdHold::new(gains))),
        Method::new("policy", move || {
            Box::new(PolicyController::deterministic(shared.clone(), gains))
        }),
    ];
    benchmark(&setup.model, &methods, profiles, rollouts, &setup.cmd, &setup.initial, config)
}

/// Trailing moving average over `window` points.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    (0..values.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(w);
            let s = &values[lo..=i];
            s.iter().sum::<f64>() / s.len() as f64
        })
        .collect()
}

/// Trend of the trailing moving average over the final half of `values`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Trend {
    /// Least-squares slope per iteration.
    pub slope: f64,
    /// Smoothed value at the midpoint and at the end.
    pub start: f64,
    pub end: f64,
}

impl Trend {
    pub fn non_decreasing(&self) -> bool {
        self.slope >= 0.0 && self.end >= self.start
    }
}

pub fn final_half_trend(values: &[f64], window: usize) -> Option<Trend> {
    let smooth = moving_average(values, window);
    let mid = values.len() / 2;
    let half = &smooth[mid.saturating_sub(1)..];
    if half.len() < 2 {
        return None;
    }
    let n = half.len() as f64;
    let xm = (n - 1.0) / 2.0;
    let ym = half.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, y) in half.iter().enumerate() {
        let dx = i as f64 - xm;
        sxy += dx * (y - ym);
        sxx += dx * dx;
    }
    Some(Trend {
        slope: sxy / sxx,
        start: half[0],
        end: half[half.len() - 1],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_mix_all_words() {
        assert_ne!(mix(&[1, 2]), mix(&[2, 1]));
        assert_ne!(mix(&[0, 0]), mix(&[0]));
        assert_eq!(mix(&[7, 8]), mix(&[7, 8]));
    }

    #[test]
    fn zero_iterations_return_initial_policy() {
        let setup = TrainSetup::builtin(2).unwrap();
        let ppo = PpoConfig {
            iterations: 0,
            ..Default::default()
        };
        let out = train(&setup, &ppo, None).unwrap();
        assert_eq!(out.policy, setup.initial_policy(ppo.seed));
        assert!(out.curve.is_empty());
    }

    #[test]
    fn episode_credits_every_decision() {
        let setup = TrainSetup::builtin(2).unwrap();
        let ppo = PpoConfig {
            horizon: 10,
            ..Default::default()
        };
        let cfg = episode_config(&setup, &ppo);
        let profile = sample_profile(3, &setup.ranges).unwrap();
        let out = run_episode(&setup, Arc::new(setup.initial_policy(0)), &profile, &cfg, 9).unwrap();
        assert_eq!(out.rewards.len(), 10);
        assert_eq!(out.decisions.len(), 10);
        assert!(out.bootstrap_obs.is_some());
        let max = setup.weights.max_reward();
        assert!(out.rewards.iter().all(|r| r.is_finite() && *r <= max));
    }

    #[test]
    fn trend_of_final_half() {
        let rising: Vec<f64> = (0..10).map(|i| i as f64).collect();
        assert!(final_half_trend(&rising, 1).unwrap().non_decreasing());
        let mut dip = rising.clone();
        dip[9] = 0.0;
        let t = final_half_trend(&dip, 1).unwrap();
        assert!(!t.non_decreasing());
        assert_eq!(t.start, 4.0);
        assert!(final_half_trend(&[1.0], 1).is_none());
    }

    #[test]
    fn moving_average_window() {
        assert_eq!(moving_average(&[1.0, 3.0, 5.0, 7.0], 2), vec![1.0, 2.0, 4.0, 6.0]);
    }

    #[test]
    fn curve_csv_round_trip() {
        let rows = vec![CurveRow {
            iteration: 3,
            mean_reward: 31.25,
            mean_ee_lin_acc: 1.0 / 3.0,
            torque_guide: -2.5,
            torque_mismatch: -4.0,
            policy_loss: 0.0,
            value_loss: 1e-3,
            approx_kl: -1e-9,
        }];
        assert_eq!(curve_from_csv(&curve_to_csv(&rows)).unwrap(), rows);
    }
}
