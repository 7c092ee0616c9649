//! Fixed-base time stepping with fictitious wrenches, rate-layered rollouts,
//! and a floating-base reference simulation with a kinematically prescribed
//! base.
//!
//! Physics runs at `dt_physics`. Controllers are queried through
//! [`Controller::decide`] every control period and [`Controller::torque`]
//! every PD period; the commanded torque is held between PD ticks. Fictitious
//! wrenches are recomputed at every physics step.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector, Isometry3, Matrix3, Unit, UnitQuaternion, Vector3, Vector6};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::chain::ChainModel;
use crate::control::{base_induced_accel, clip_torque, ControlInput, Controller, TaskCommand};
use crate::disturbance::{base_motion, chain_wrenches_with, BaseMotionSample, DisturbanceProfile, TwistMode, WrenchModel};
use crate::dynamics::{forward_dynamics_from_frames, mass_matrix_from_frames, newton_euler, solve_spd, BaseFrameMotion, DEFAULT_GRAVITY};
use crate::error::DimensionError;
use crate::kinematics::{forward_kinematics, Body, ChainFrames, JointState, Pose};

/// Per-channel standard deviation of the Gaussian noise added to controller inputs.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ObsNoise {
    pub q: f64,
    pub qdot: f64,
    pub base_twist: f64,
    pub base_accel: f64,
}

impl ObsNoise {
    pub fn is_zero(&self) -> bool {
        self.q == 0.0 && self.qdot == 0.0 && self.base_twist == 0.0 && self.base_accel == 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub dt_physics: f64,
    pub control_rate: f64,
    pub pd_rate: f64,
    pub duration: f64,
    pub gravity: Vector3<f64>,
    pub obs_noise: ObsNoise,
    pub torque_limits_on: bool,
    pub seed: u64,
    pub twist_mode: TwistMode,
    /// Inertial torque model applied to the simulated arm. Controllers always
    /// estimate wrenches with the standard form.
    pub wrench_model: WrenchModel,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt_physics: 1e-3,
            control_rate: 50.0,
            pd_rate: 500.0,
            duration: 10.0,
            gravity: DEFAULT_GRAVITY,
            obs_noise: ObsNoise::default(),
            torque_limits_on: true,
            seed: 0,
            twist_mode: TwistMode::MeanRemoved,
            wrench_model: WrenchModel::Standard,
        }
    }
}

/// Integer step counts derived from a [`SimConfig`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Schedule {
    pub steps: usize,
    pub pd_every: usize,
    pub control_every: usize,
}

fn whole_ratio(what: &str, ratio: f64) -> Result<usize, SimError> {
    let r = ratio.round();
    if r < 1.0 || (ratio - r).abs() > 1e-6 * r {
        return Err(SimError::Config(format!("{what} must be a whole multiple of the physics step, got ratio {ratio}")));
    }
    Ok(r as usize)
}

impl SimConfig {
    pub fn schedule(&self) -> Result<Schedule, SimError> {
        if !(self.dt_physics > 0.0) || !self.dt_physics.is_finite() {
            return Err(SimError::Config("dt_physics must be positive".into()));
        }
        if !(self.duration >= 0.0) || !self.duration.is_finite() {
            return Err(SimError::Config("duration must be non-negative".into()));
        }
        if !(self.pd_rate > 0.0 && self.control_rate > 0.0) {
            return Err(SimError::Config("rates must be positive".into()));
        }
        let pd_every = whole_ratio("PD period", 1.0 / (self.pd_rate * self.dt_physics))?;
        let control_every = whole_ratio("control period", 1.0 / (self.control_rate * self.dt_physics))?;
        if control_every % pd_every != 0 {
            return Err(SimError::Config("control period must be a whole multiple of the PD period".into()));
        }
        let steps_f = self.duration / self.dt_physics;
        let steps = steps_f.round();
        if (steps_f - steps).abs() > 1e-6 * steps.max(1.0) {
            return Err(SimError::Config("duration must be a whole number of physics steps".into()));
        }
        let n = self.obs_noise;
        if [n.q, n.qdot, n.base_twist, n.base_accel].iter().any(|s| !(*s >= 0.0)) {
            return Err(SimError::Config("noise std must be non-negative".into()));
        }
        Ok(Schedule {
            steps: steps as usize,
            pd_every,
            control_every,
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("rollout diverged at t = {t:.4} s: {message}")]
    Diverged { t: f64, message: String },
    #[error(transparent)]
    Dimension(#[from] DimensionError),
    #[error("rollout log: {0}")]
    Log(String),
}

/// One physics step of a rollout. Accelerations are `[linear; angular]` in base coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    pub t: f64,
    pub q: DVector<f64>,
    pub qdot: DVector<f64>,
    /// Torque actually applied during the step (after clipping).
    pub tau: DVector<f64>,
    pub ee_pose: Pose,
    pub a_loc: Vector6<f64>,
    pub a_base: Vector6<f64>,
    pub a_glob: Vector6<f64>,
    pub base_twist: Vector6<f64>,
    pub base_accel: Vector6<f64>,
}

impl LogRecord {
    pub fn motion(&self) -> BaseMotionSample {
        BaseMotionSample {
            twist: self.base_twist,
            accel: self.base_accel,
        }
    }

    pub fn state(&self) -> JointState {
        JointState::new(self.q.clone(), self.qdot.clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutLog {
    pub dt: f64,
    pub dof: usize,
    pub records: Vec<LogRecord>,
    /// Physics steps during which at least one joint torque was clipped.
    pub clipped_steps: usize,
}

/// `a_ee^glob = a_ee^base + a_ee^loc` for one record.
pub fn global_ee_accel(record: &LogRecord) -> Vector6<f64> {
    record.a_base + record.a_loc
}

/// Recomputes `a_ee^glob` from the logged state, torque and base motion.
pub fn reconstruct_global_accel(
    model: &ChainModel,
    record: &LogRecord,
    config: &SimConfig,
) -> Result<Vector6<f64>, SimError> {
    let frames = forward_kinematics(model, &record.q)?;
    let motion = record.motion();
    let ws = chain_wrenches_with(model, &frames, &record.qdot, &motion, config.wrench_model);
    let qdd = forward_dynamics_from_frames(model, &frames, &record.qdot, &record.tau, Some(&ws), &config.gravity, None);
    let (a_loc, a_base) = ee_accelerations(&frames, &record.qdot, &qdd, &motion)?;
    Ok(a_loc + a_base)
}

fn ee_accelerations(
    frames: &ChainFrames,
    qdot: &DVector<f64>,
    qddot: &DVector<f64>,
    motion: &BaseMotionSample,
) -> Result<(Vector6<f64>, Vector6<f64>), DimensionError> {
    let jac = frames.jacobian(Body::EndEffector)?;
    let jdqd = frames.jacobian_dot_qdot(qdot, Body::EndEffector)?;
    let a_loc = Vector6::from_iterator((&jac * qddot).iter().copied()) + jdqd;
    let v_ee = (&jac * qdot).fixed_rows::<3>(0).into_owned();
    let a_base = base_induced_accel(&frames.r_ee(), &v_ee, motion);
    Ok((a_loc, a_base))
}

/// Semi-implicit Euler update from a known joint acceleration, with joint
/// limits enforced by clamping and zeroing the offending velocity.
pub fn integrate_state(model: &ChainModel, state: &JointState, qddot: &DVector<f64>, dt: f64) -> JointState {
    let qdot = &state.qdot + qddot * dt;
    let mut next = JointState::new(&state.q + &qdot * dt, qdot);
    for (i, joint) in model.joints.iter().enumerate() {
        let (lo, hi) = joint.position_limits;
        if next.q[i] < lo || next.q[i] > hi {
            next.q[i] = next.q[i].clamp(lo, hi);
            next.qdot[i] = 0.0;
        }
    }
    next
}

/// One physics step: `q̈ = FD(q, q̇, τ, wrenches)`, then the semi-implicit update.
pub fn step(
    model: &ChainModel,
    state: &JointState,
    torque: &DVector<f64>,
    wrenches: &[crate::disturbance::Wrench],
    dt: f64,
    gravity: &Vector3<f64>,
) -> Result<JointState, SimError> {
    if !(dt > 0.0) {
        return Err(SimError::Config("dt must be positive".into()));
    }
    let qdd = crate::dynamics::forward_dynamics(model, state, torque, wrenches, gravity)?;
    if !qdd.iter().all(|x| x.is_finite()) {
        return Err(SimError::Diverged {
            t: 0.0,
            message: "non-finite joint acceleration".into(),
        });
    }
    Ok(integrate_state(model, state, &qdd, dt))
}

/// Base motion at every physics step of a run.
pub fn profile_motion(profile: &DisturbanceProfile, config: &SimConfig) -> Result<Vec<BaseMotionSample>, SimError> {
    let sched = config.schedule()?;
    Ok(base_motion(profile, config.dt_physics, sched.steps, config.twist_mode))
}

/// Rate-layered fixed-base simulation, advanced one physics step at a time.
pub struct Episode<'a> {
    model: &'a ChainModel,
    config: &'a SimConfig,
    sched: Schedule,
    cmd: TaskCommand,
    motions: Vec<BaseMotionSample>,
    state: JointState,
    torque: DVector<f64>,
    k: usize,
    done: bool,
    rng: ChaCha8Rng,
    clipped_steps: usize,
    limits: Vec<f64>,
}

impl<'a> Episode<'a> {
    /// `motions` must hold one sample per physics step plus the final time.
    pub fn new(
        model: &'a ChainModel,
        config: &'a SimConfig,
        cmd: TaskCommand,
        motions: Vec<BaseMotionSample>,
        initial: JointState,
    ) -> Result<Self, SimError> {
        let sched = config.schedule()?;
        if motions.len() != sched.steps + 1 {
            return Err(SimError::Config(format!(
                "expected {} base motion samples, got {}",
                sched.steps + 1,
                motions.len()
            )));
        }
        let n = model.dof();
        crate::kinematics::check_len("q", n, initial.q.len())?;
        crate::kinematics::check_len("qdot", n, initial.qdot.len())?;
        Ok(Self {
            model,
            config,
            sched,
            cmd,
            motions,
            state: initial,
            torque: DVector::zeros(n),
            k: 0,
            done: false,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            clipped_steps: 0,
            limits: model.torque_limits(),
        })
    }

    pub fn schedule(&self) -> Schedule {
        self.sched
    }

    pub fn state(&self) -> &JointState {
        &self.state
    }

    pub fn time(&self) -> f64 {
        self.k as f64 * self.config.dt_physics
    }

    pub fn step_index(&self) -> usize {
        self.k
    }

    pub fn motion(&self) -> &BaseMotionSample {
        &self.motions[self.k]
    }

    pub fn cmd(&self) -> &TaskCommand {
        &self.cmd
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn clipped_steps(&self) -> usize {
        self.clipped_steps
    }

    pub fn is_control_tick(&self) -> bool {
        self.k % self.sched.control_every == 0
    }

    fn sensed(&mut self) -> (JointState, BaseMotionSample) {
        let noise = self.config.obs_noise;
        let mut state = self.state.clone();
        let mut motion = self.motions[self.k];
        if noise.is_zero() {
            return (state, motion);
        }
        let unit = Normal::new(0.0, 1.0).expect("unit normal");
        let rng = &mut self.rng;
        let mut jitter = |x: &mut f64, std: f64| {
            let z: f64 = unit.sample(rng);
            *x += std * z;
        };
        state.q.iter_mut().for_each(|x| jitter(x, noise.q));
        state.qdot.iter_mut().for_each(|x| jitter(x, noise.qdot));
        motion.twist.iter_mut().for_each(|x| jitter(x, noise.base_twist));
        motion.accel.iter_mut().for_each(|x| jitter(x, noise.base_accel));
        (state, motion)
    }

    fn with_input<T>(
        &mut self,
        f: impl FnOnce(&ControlInput<'_>) -> Result<T, DimensionError>,
    ) -> Result<T, SimError> {
        let (state, motion) = self.sensed();
        let input = ControlInput {
            t: self.time(),
            model: self.model,
            state: &state,
            motion: &motion,
            cmd: &self.cmd,
            gravity: &self.config.gravity,
        };
        Ok(f(&input)?)
    }

    /// Must be called once before the first [`Episode::advance`].
    pub fn reset_controller(&mut self, controller: &mut dyn Controller) -> Result<(), SimError> {
        let state = self.state.clone();
        let motion = self.motions[self.k];
        let input = ControlInput {
            t: self.time(),
            model: self.model,
            state: &state,
            motion: &motion,
            cmd: &self.cmd,
            gravity: &self.config.gravity,
        };
        Ok(controller.reset(&input)?)
    }

    /// Queries the controller as due, records the current step and integrates
    /// to the next one. After the final time only the record is produced.
    pub fn advance(&mut self, controller: &mut dyn Controller) -> Result<LogRecord, SimError> {
        if self.done {
            return Err(SimError::Config("episode already finished".into()));
        }
        if self.k % self.sched.control_every == 0 {
            self.with_input(|inp| controller.decide(inp))?;
        }
        if self.k % self.sched.pd_every == 0 {
            let raw = self.with_input(|inp| controller.torque(inp))?;
            crate::kinematics::check_len("torque", self.model.dof(), raw.len())?;
            self.torque = if self.config.torque_limits_on {
                let (t, _) = clip_torque(&raw, &self.limits);
                t
            } else {
                raw
            };
        }
        if self.config.torque_limits_on && self.torque.iter().zip(&self.limits).any(|(t, l)| t.abs() >= *l) {
            self.clipped_steps += 1;
        }

        let t = self.time();
        let motion = self.motions[self.k];
        let frames = forward_kinematics(self.model, &self.state.q)?;
        let ws = chain_wrenches_with(self.model, &frames, &self.state.qdot, &motion, self.config.wrench_model);
        let qdd = forward_dynamics_from_frames(
            self.model,
            &frames,
            &self.state.qdot,
            &self.torque,
            Some(&ws),
            &self.config.gravity,
            None,
        );
        if !qdd.iter().all(|x| x.is_finite()) || !self.torque.iter().all(|x| x.is_finite()) {
            return Err(SimError::Diverged {
                t,
                message: "non-finite joint acceleration or torque".into(),
            });
        }
        let (a_loc, a_base) = ee_accelerations(&frames, &self.state.qdot, &qdd, &motion)?;
        let record = LogRecord {
            t,
            q: self.state.q.clone(),
            qdot: self.state.qdot.clone(),
            tau: self.torque.clone(),
            ee_pose: frames.ee_pose(),
            a_loc,
            a_base,
            a_glob: a_base + a_loc,
            base_twist: motion.twist,
            base_accel: motion.accel,
        };
        if self.k == self.sched.steps {
            self.done = true;
        } else {
            self.state = integrate_state(self.model, &self.state, &qdd, self.config.dt_physics);
            self.k += 1;
        }
        Ok(record)
    }
}

/// Runs a full fixed-base rollout with precomputed base motion.
pub fn rollout_with_motion(
    model: &ChainModel,
    controller: &mut dyn Controller,
    motions: Vec<BaseMotionSample>,
    cmd: &TaskCommand,
    initial: &JointState,
    config: &SimConfig,
) -> Result<RolloutLog, SimError> {
    let mut ep = Episode::new(model, config, cmd.clone(), motions, initial.clone())?;
    ep.reset_controller(controller)?;
    let mut records = Vec::with_capacity(ep.schedule().steps + 1);
    while !ep.is_done() {
        records.push(ep.advance(controller)?);
    }
    Ok(RolloutLog {
        dt: config.dt_physics,
        dof: model.dof(),
        records,
        clipped_steps: ep.clipped_steps(),
    })
}

/// Fixed-base rollout under a disturbance profile.
pub fn rollout(
    model: &ChainModel,
    controller: &mut dyn Controller,
    profile: &DisturbanceProfile,
    cmd: &TaskCommand,
    initial: &JointState,
    config: &SimConfig,
) -> Result<RolloutLog, SimError> {
    let motions = profile_motion(profile, config)?;
    rollout_with_motion(model, controller, motions, cmd, initial, config)
}

/// Kinematic state of the base frame in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaseState {
    pub pose: Isometry3<f64>,
    pub lin_vel: Vector3<f64>,
    pub ang_vel: Vector3<f64>,
    pub lin_acc: Vector3<f64>,
    pub ang_acc: Vector3<f64>,
}

impl BaseState {
    /// The same motion as seen in base coordinates.
    pub fn to_sample(&self) -> BaseMotionSample {
        let rt = self.pose.rotation.inverse();
        let mut s = BaseMotionSample::default();
        s.twist.fixed_rows_mut::<3>(0).copy_from(&(rt * self.lin_vel));
        s.twist.fixed_rows_mut::<3>(3).copy_from(&(rt * self.ang_vel));
        s.accel.fixed_rows_mut::<3>(0).copy_from(&(rt * self.lin_acc));
        s.accel.fixed_rows_mut::<3>(3).copy_from(&(rt * self.ang_acc));
        s
    }
}

/// A twice-differentiable base trajectory with analytic derivatives.
pub trait BaseTrajectory: Sync {
    fn at(&self, t: f64) -> BaseState;
}

/// `a sin(ω t + φ)` with analytic first and second derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sine {
    pub amplitude: f64,
    pub omega: f64,
    pub phase: f64,
}

impl Sine {
    fn eval(&self, t: f64) -> (f64, f64, f64) {
        let a = self.omega * t + self.phase;
        let (s, c) = a.sin_cos();
        (
            self.amplitude * s,
            self.amplitude * self.omega * c,
            -self.amplitude * self.omega * self.omega * s,
        )
    }

    fn sum(terms: &[Sine], t: f64) -> (f64, f64, f64) {
        terms.iter().fold((0.0, 0.0, 0.0), |acc, s| {
            let (x, v, a) = s.eval(t);
            (acc.0 + x, acc.1 + v, acc.2 + a)
        })
    }
}

/// Base translation as sums of sines per axis; rotation `R = Π exp(θ_k(t) u_k)`
/// over three fixed unit axes with sum-of-sines angles.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothBaseTrajectory {
    pub translation: [Vec<Sine>; 3],
    pub rotation_axes: [Unit<Vector3<f64>>; 3],
    pub rotation_angles: [Vec<Sine>; 3],
}

impl SmoothBaseTrajectory {
    pub fn still() -> Self {
        Self {
            translation: Default::default(),
            rotation_axes: [Vector3::x_axis(), Vector3::y_axis(), Vector3::z_axis()],
            rotation_angles: Default::default(),
        }
    }

    /// Random gait-like trajectory: 1–3 Hz sines, centimetre translations and
    /// angles up to `max_angle` rad.
    pub fn random(rng: &mut impl rand::Rng, max_translation: f64, max_angle: f64) -> Self {
        let mut sines = |amp: f64| -> Vec<Sine> {
            (0..2)
                .map(|_| Sine {
                    amplitude: rng.random_range(-amp..=amp),
                    omega: 2.0 * std::f64::consts::PI * rng.random_range(1.0..=3.0),
                    phase: rng.random_range(-std::f64::consts::PI..=std::f64::consts::PI),
                })
                .collect()
        };
        let translation = [sines(max_translation), sines(max_translation), sines(max_translation)];
        let rotation_angles = [sines(max_angle), sines(max_angle), sines(max_angle)];
        Self {
            translation,
            rotation_axes: [Vector3::z_axis(), Vector3::y_axis(), Vector3::x_axis()],
            rotation_angles,
        }
    }
}

impl BaseTrajectory for SmoothBaseTrajectory {
    fn at(&self, t: f64) -> BaseState {
        let mut p = Vector3::zeros();
        let mut v = Vector3::zeros();
        let mut a = Vector3::zeros();
        for i in 0..3 {
            let (x, xd, xdd) = Sine::sum(&self.translation[i], t);
            p[i] = x;
            v[i] = xd;
            a[i] = xdd;
        }

        let mut rot = UnitQuaternion::identity();
        let mut omega = Vector3::zeros();
        let mut alpha = Vector3::zeros();
        for k in 0..3 {
            let (th, thd, thdd) = Sine::sum(&self.rotation_angles[k], t);
            let axis = rot * self.rotation_axes[k].into_inner();
            // d/dt of the rotated axis is ω_prev × axis.
            let axis_dot = omega.cross(&axis);
            alpha += axis * thdd + axis_dot * thd;
            omega += axis * thd;
            rot *= UnitQuaternion::from_axis_angle(&self.rotation_axes[k], th);
        }
        BaseState {
            pose: Isometry3::from_parts(p.into(), rot),
            lin_vel: v,
            ang_vel: omega,
            lin_acc: a,
            ang_acc: alpha,
        }
    }
}

/// Floating-base reference rollout with its world-frame EE trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleRollout {
    /// `a_glob` holds the composed world EE acceleration rotated into base coordinates;
    /// `a_base` is set so that `a_glob = a_base + a_loc`.
    pub log: RolloutLog,
    pub ee_world_position: Vec<Vector3<f64>>,
    /// `[linear; angular]` absolute EE acceleration in world coordinates.
    pub ee_world_accel: Vec<Vector6<f64>>,
}

/// Absolute EE acceleration (base coordinates) by propagating the inertial
/// base motion outwards through the chain.
fn composed_ee_accel(
    frames: &ChainFrames,
    qdot: &DVector<f64>,
    qddot: &DVector<f64>,
    base: &BaseFrameMotion,
) -> Vector6<f64> {
    let mut omega = base.omega;
    let mut alpha = base.alpha;
    let mut acc = base.origin_acc;
    let mut prev = Vector3::zeros();
    for i in 0..frames.dof() {
        let o = frames.joint_origins[i];
        let d = o - prev;
        acc += alpha.cross(&d) + omega.cross(&omega.cross(&d));
        prev = o;
        let z = frames.joint_axes[i];
        let wj = z * qdot[i];
        alpha += z * qddot[i] + omega.cross(&wj);
        omega += wj;
    }
    let d = frames.r_ee() - prev;
    acc += alpha.cross(&d) + omega.cross(&omega.cross(&d));
    let mut out = Vector6::zeros();
    out.fixed_rows_mut::<3>(0).copy_from(&acc);
    out.fixed_rows_mut::<3>(3).copy_from(&alpha);
    out
}

/// Simulates the arm on a base whose motion is prescribed in an inertial
/// world frame. Joint dynamics come from Newton–Euler with the base frame
/// accelerating; no fictitious wrenches are involved. `world_gravity` is
/// expressed in world coordinates and rotated into the base at every step.
///
/// The controller senses the exact base motion (in base coordinates).
pub fn floating_base_oracle(
    model: &ChainModel,
    trajectory: &dyn BaseTrajectory,
    controller: &mut dyn Controller,
    cmd: &TaskCommand,
    initial: &JointState,
    config: &SimConfig,
    world_gravity: &Vector3<f64>,
) -> Result<OracleRollout, SimError> {
    let sched = config.schedule()?;
    let dt = config.dt_physics;
    let n = model.dof();
    let limits = model.torque_limits();
    let mut state = initial.clone();
    let mut torque = DVector::zeros(n);
    let mut records = Vec::with_capacity(sched.steps + 1);
    let mut ee_world_position = Vec::with_capacity(sched.steps + 1);
    let mut ee_world_accel = Vec::with_capacity(sched.steps + 1);
    let mut clipped_steps = 0;

    for k in 0..=sched.steps {
        let t = k as f64 * dt;
        let base = trajectory.at(t);
        let sample = base.to_sample();
        let rt = base.pose.rotation.inverse();
        let gravity_base = rt * world_gravity;
        let input = ControlInput {
            t,
            model,
            state: &state,
            motion: &sample,
            cmd,
            gravity: &config.gravity,
        };
        if k == 0 {
            controller.reset(&input)?;
        }
        if k % sched.control_every == 0 {
            controller.decide(&input)?;
        }
        if k % sched.pd_every == 0 {
            let raw = controller.torque(&input)?;
            torque = if config.torque_limits_on { clip_torque(&raw, &limits).0 } else { raw };
        }
        if config.torque_limits_on && torque.iter().zip(&limits).any(|(t, l)| t.abs() >= *l) {
            clipped_steps += 1;
        }

        let frames = forward_kinematics(model, &state.q)?;
        let motion = BaseFrameMotion {
            origin_acc: sample.vdot_b(),
            omega: sample.omega_b(),
            alpha: sample.omegadot_b(),
        };
        let h = newton_euler(model, &frames, &state.qdot, &DVector::zeros(n), &gravity_base, None, Some(&motion));
        let mm: DMatrix<f64> = mass_matrix_from_frames(model, &frames);
        let qdd = solve_spd(mm, &(&torque - h));
        if !qdd.iter().all(|x| x.is_finite()) {
            return Err(SimError::Diverged {
                t,
                message: "non-finite joint acceleration in floating-base reference".into(),
            });
        }

        let a_abs = composed_ee_accel(&frames, &state.qdot, &qdd, &motion);
        let jac = frames.jacobian(Body::EndEffector)?;
        let a_loc = Vector6::from_iterator((&jac * &qdd).iter().copied())
            + frames.jacobian_dot_qdot(&state.qdot, Body::EndEffector)?;
        let r_mat: Matrix3<f64> = base.pose.rotation.to_rotation_matrix().into_inner();
        let mut world = Vector6::zeros();
        world.fixed_rows_mut::<3>(0).copy_from(&(r_mat * a_abs.fixed_rows::<3>(0)));
        world.fixed_rows_mut::<3>(3).copy_from(&(r_mat * a_abs.fixed_rows::<3>(3)));
        ee_world_accel.push(world);
        ee_world_position.push((base.pose * nalgebra::Point3::from(frames.r_ee())).coords);

        records.push(LogRecord {
            t,
            q: state.q.clone(),
            qdot: state.qdot.clone(),
            tau: torque.clone(),
            ee_pose: frames.ee_pose(),
            a_loc,
            a_base: a_abs - a_loc,
            a_glob: a_abs,
            base_twist: sample.twist,
            base_accel: sample.accel,
        });
        if k < sched.steps {
            state = integrate_state(model, &state, &qdd, dt);
        }
    }
    Ok(OracleRollout {
        log: RolloutLog {
            dt,
            dof: n,
            records,
            clipped_steps,
        },
        ee_world_position,
        ee_world_accel,
    })
}

/// Base motion samples of a trajectory at every physics step (base coordinates).
pub fn trajectory_motion(trajectory: &dyn BaseTrajectory, config: &SimConfig) -> Result<Vec<BaseMotionSample>, SimError> {
    let sched = config.schedule()?;
    Ok((0..=sched.steps)
        .map(|k| trajectory.at(k as f64 * config.dt_physics).to_sample())
        .collect())
}

const AXES: [&str; 6] = ["lx", "ly", "lz", "ax", "ay", "az"];

/// CSV column names for an `n`-joint log, in order.
pub fn csv_header(n: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    for prefix in ["q", "qd", "tau"] {
        h.extend((0..n).map(|i| format!("{prefix}{i}")));
    }
    h.extend(["ee_x", "ee_y", "ee_z", "ee_qw", "ee_qx", "ee_qy", "ee_qz"].map(String::from));
    for prefix in ["a_loc", "a_base", "a_glob", "vb", "ab"] {
        h.extend(AXES.iter().map(|a| format!("{prefix}_{a}")));
    }
    h
}

fn fmt(x: f64) -> String {
    format!("{x:?}")
}

impl RolloutLog {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), SimError> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| SimError::Log(e.to_string());
        w.write_record(csv_header(self.dof)).map_err(err)?;
        for r in &self.records {
            let q = r.ee_pose.orientation.quaternion();
            let mut row = vec![fmt(r.t)];
            row.extend(r.q.iter().chain(r.qdot.iter()).chain(r.tau.iter()).map(|x| fmt(*x)));
            row.extend(r.ee_pose.position.iter().map(|x| fmt(*x)));
            row.extend([q.w, q.i, q.j, q.k].map(fmt));
            for v in [&r.a_loc, &r.a_base, &r.a_glob, &r.base_twist, &r.base_accel] {
                row.extend(v.iter().map(|x| fmt(*x)));
            }
            w.write_record(&row).map_err(err)?;
        }
        w.flush().map_err(|e| SimError::Log(e.to_string()))?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("csv output is utf-8")
    }

    pub fn save_csv(&self, path: &Path) -> Result<(), SimError> {
        let f = std::fs::File::create(path).map_err(|e| SimError::Log(format!("{}: {e}", path.display())))?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    /// Reads a log written by [`RolloutLog::write_csv`]. `clipped_steps` is not stored and reads as 0.
    pub fn read_csv<R: Read>(input: R) -> Result<Self, SimError> {
        let mut rdr = csv::Reader::from_reader(input);
        let err = |e: csv::Error| SimError::Log(e.to_string());
        let header = rdr.headers().map_err(err)?.clone();
        let fixed = 1 + 7 + 30;
        if header.len() < fixed || (header.len() - fixed) % 3 != 0 {
            return Err(SimError::Log(format!("unexpected column count {}", header.len())));
        }
        let n = (header.len() - fixed) / 3;
        let expected = csv_header(n);
        if header.iter().zip(&expected).any(|(a, b)| a != b) {
            return Err(SimError::Log("column names do not match the rollout log layout".into()));
        }
        let mut records = Vec::new();
        for (row_idx, row) in rdr.records().enumerate() {
            let row = row.map_err(err)?;
            let vals = row
                .iter()
                .map(|s| s.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| SimError::Log(format!("row {}: {e}", row_idx + 2)))?;
            let mut it = vals.into_iter();
            let mut take = |k: usize| -> Vec<f64> { it.by_ref().take(k).collect() };
            let t = take(1)[0];
            let q = DVector::from_vec(take(n));
            let qdot = DVector::from_vec(take(n));
            let tau = DVector::from_vec(take(n));
            let p = take(3);
            let quat = take(4);
            let mut six = || Vector6::from_column_slice(&take(6));
            let (a_loc, a_base, a_glob, base_twist, base_accel) = (six(), six(), six(), six(), six());
            records.push(LogRecord {
                t,
                q,
                qdot,
                tau,
                ee_pose: Pose {
                    position: Vector3::new(p[0], p[1], p[2]),
                    orientation: UnitQuaternion::new_unchecked(nalgebra::Quaternion::new(
                        quat[0], quat[1], quat[2], quat[3],
                    )),
                },
                a_loc,
                a_base,
                a_glob,
                base_twist,
                base_accel,
            });
        }
        let dt = if records.len() >= 2 { records[1].t - records[0].t } else { 0.0 };
        Ok(Self {
            dt,
            dof: n,
            records,
            clipped_steps: 0,
        })
    }

    pub fn load_csv(path: &Path) -> Result<Self, SimError> {
        let f = std::fs::File::open(path).map_err(|e| SimError::Log(format!("{}: {e}", path.display())))?;
        Self::read_csv(std::io::BufReader::new(f))
    }
}
