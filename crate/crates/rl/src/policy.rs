//! Residual policy: observation layout, the squashed-Gaussian actor and its
//! log-density.

use std::collections::VecDeque;
use std::f64::consts::{LN_2, PI};

use eestab_core::control::TaskCommand;
use eestab_core::{BaseMotionSample, JointState};
use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::RlError;
use crate::net::Mlp;

pub const LOG_STD_MIN: f64 = -4.0;
pub const LOG_STD_MAX: f64 = 1.0;
pub const DEFAULT_HISTORY: usize = 5;

/// Length of one observation frame for an `n`-joint arm.
///
/// Frame layout: commanded EE position (3), commanded EE quaternion
/// `w, x, y, z` (4), base linear acceleration (3), base angular velocity (3),
/// joint positions (n), joint velocities (n), previous action (n).
pub const fn frame_len(n: usize) -> usize {
    13 + 3 * n
}

pub fn observation_frame(
    cmd: &TaskCommand,
    motion: &BaseMotionSample,
    state: &JointState,
    prev_action: &DVector<f64>,
) -> DVector<f64> {
    let n = state.q.len();
    let p = cmd.x_des.position;
    let o = cmd.x_des.orientation.quaternion();
    let mut v = Vec::with_capacity(frame_len(n));
    v.extend_from_slice(&[p.x, p.y, p.z, o.w, o.i, o.j, o.k]);
    v.extend(motion.vdot_b().iter());
    v.extend(motion.omega_b().iter());
    v.extend(state.q.iter());
    v.extend(state.qdot.iter());
    v.extend(prev_action.iter());
    DVector::from_vec(v)
}

/// Stacks `frames` (oldest first) into a `depth`-frame observation, padding
/// missing older frames with zeros and keeping the newest `depth` otherwise.
pub fn assemble_observation(frames: &[DVector<f64>], depth: usize, frame_len: usize) -> DVector<f64> {
    let mut obs = DVector::zeros(depth * frame_len);
    let kept = &frames[frames.len().saturating_sub(depth)..];
    let pad = depth - kept.len();
    for (i, f) in kept.iter().enumerate() {
        obs.rows_mut((pad + i) * frame_len, frame_len).copy_from(f);
    }
    obs
}

/// Rolling window of the most recent observation frames.
#[derive(Debug, Clone)]
pub struct ObservationHistory {
    depth: usize,
    frame_len: usize,
    frames: VecDeque<DVector<f64>>,
}

impl ObservationHistory {
    pub fn new(depth: usize, frame_len: usize) -> Self {
        Self {
            depth,
            frame_len,
            frames: VecDeque::with_capacity(depth),
        }
    }

    pub fn clear(&mut self) {
        self.frames.clear();
    }

    pub fn push(&mut self, frame: DVector<f64>) {
        debug_assert_eq!(frame.len(), self.frame_len);
        if self.frames.len() == self.depth {
            self.frames.pop_front();
        }
        self.frames.push_back(frame);
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn observation(&self) -> DVector<f64> {
        let frames: Vec<_> = self.frames.iter().cloned().collect();
        assemble_observation(&frames, self.depth, self.frame_len)
    }
}

/// Per-channel input scale for one frame.
pub fn default_frame_scale(n: usize) -> Vec<f64> {
    let mut s = vec![1.0; 7];
    s.extend([0.05; 3]);
    s.extend([0.5; 3]);
    s.extend(std::iter::repeat_n(1.0, n));
    s.extend(std::iter::repeat_n(0.2, n));
    s.extend(std::iter::repeat_n(1.0, n));
    s
}

/// Actor network with a state-independent log-std per joint.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet {
    pub actor: Mlp,
    pub log_std: DVector<f64>,
    /// Joint-target offset at full action, rad.
    pub action_scale: f64,
    /// Multiplies the observation before the first layer.
    pub obs_scale: DVector<f64>,
    pub history: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput {
    /// Pre-squash Gaussian sample (the mean when deterministic).
    pub pre_tanh: DVector<f64>,
    /// `tanh(pre_tanh)`, in (−1, 1).
    pub action: DVector<f64>,
    /// `action_scale · action`, rad.
    pub offset: DVector<f64>,
    /// Log-density of `offset`.
    pub log_prob: f64,
}

/// `log(1 − tanh²u)` without cancellation for large `|u|`.
pub fn log_one_minus_tanh_sq(u: f64) -> f64 {
    // 1 − tanh²u = 4 / (eᵘ + e⁻ᵘ)²
    let a = u.abs();
    2.0 * (LN_2 - a - (-2.0 * a).exp().ln_1p())
}

/// Log-density of `scale · tanh(u)` with `u ~ N(mean, exp(log_std)²)`.
pub fn squashed_log_prob(u: &DVector<f64>, mean: &DVector<f64>, log_std: &DVector<f64>, scale: f64) -> f64 {
    let mut lp = 0.0;
    for i in 0..u.len() {
        let z = (u[i] - mean[i]) * (-log_std[i]).exp();
        lp += -0.5 * z * z - log_std[i] - 0.5 * (2.0 * PI).ln() - log_one_minus_tanh_sq(u[i]) - scale.ln();
    }
    lp
}

/// Entropy of the pre-squash Gaussian.
pub fn gaussian_entropy(log_std: &DVector<f64>) -> f64 {
    log_std.iter().map(|s| s + 0.5 * (2.0 * PI * std::f64::consts::E).ln()).sum()
}

impl PolicyNet {
    pub fn new(dof: usize, hidden: &[usize], action_scale: f64, log_std_init: f64, rng: &mut impl Rng) -> Self {
        let history = DEFAULT_HISTORY;
        let input = history * frame_len(dof);
        let mut sizes = vec![input];
        sizes.extend_from_slice(hidden);
        sizes.push(dof);
        let frame = default_frame_scale(dof);
        let obs_scale = DVector::from_iterator(input, (0..history).flat_map(|_| frame.iter().copied()));
        Self {
            actor: Mlp::random(&sizes, 0.01, rng),
            log_std: DVector::from_element(dof, log_std_init.clamp(LOG_STD_MIN, LOG_STD_MAX)),
            action_scale,
            obs_scale,
            history,
        }
    }

    pub fn dof(&self) -> usize {
        self.actor.output_len()
    }

    pub fn obs_len(&self) -> usize {
        self.actor.input_len()
    }

    pub fn scaled_input(&self, obs: &DVector<f64>) -> Result<DVector<f64>, RlError> {
        if obs.len() != self.obs_len() {
            return Err(RlError::Dimension {
                what: "observation",
                expected: self.obs_len(),
                found: obs.len(),
            });
        }
        Ok(obs.component_mul(&self.obs_scale))
    }

    pub fn mean(&self, obs: &DVector<f64>) -> Result<DVector<f64>, RlError> {
        Ok(self.actor.forward(&self.scaled_input(obs)?))
    }

    /// Samples an action, or takes the Gaussian mean when `rng` is `None`.
    pub fn forward(&self, obs: &DVector<f64>, rng: Option<&mut dyn rand::RngCore>) -> Result<PolicyOutput, RlError> {
        let mean = self.mean(obs)?;
        let pre_tanh = match rng {
            None => mean.clone(),
            Some(rng) => DVector::from_iterator(
                mean.len(),
                mean.iter().zip(self.log_std.iter()).map(|(m, s)| {
                    let z: f64 = StandardNormal.sample(rng);
                    m + s.exp() * z
                }),
            ),
        };
        let action = pre_tanh.map(f64::tanh);
        let offset = &action * self.action_scale;
        let log_prob = squashed_log_prob(&pre_tanh, &mean, &self.log_std, self.action_scale);
        Ok(PolicyOutput {
            pre_tanh,
            action,
            offset,
            log_prob,
        })
    }

    pub fn log_prob(&self, obs: &DVector<f64>, pre_tanh: &DVector<f64>) -> Result<f64, RlError> {
        Ok(squashed_log_prob(pre_tanh, &self.mean(obs)?, &self.log_std, self.action_scale))
    }

    /// Actor parameters followed by the log-std.
    pub fn flatten(&self) -> Vec<f64> {
        let mut p = self.actor.flatten();
        p.extend(self.log_std.iter());
        p
    }

    pub fn set_flat(&mut self, params: &[f64]) {
        let k = self.actor.num_params();
        self.actor.set_flat(&params[..k]);
        self.log_std.copy_from_slice(&params[k..]);
        self.log_std.apply(|s| *s = s.clamp(LOG_STD_MIN, LOG_STD_MAX));
    }

    pub fn num_params(&self) -> usize {
        self.actor.num_params() + self.log_std.len()
    }

    pub fn is_finite(&self) -> bool {
        self.actor.is_finite() && self.log_std.iter().all(|v| v.is_finite())
    }
}
