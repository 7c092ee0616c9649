//! Locomotion-like base acceleration profiles and the fictitious wrenches
//! that emulate base motion on a fixed-base arm.
//!
//! Base quantities are expressed in base-frame coordinates. The linear part of
//! `A_b` is the inertial acceleration of the base origin (what an IMU at the
//! origin would report without gravity) and `ω_b` is the base angular velocity.

use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::{DVector, Matrix3, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::chain::ChainModel;
use crate::dynamics::world_inertia;
use crate::kinematics::{Body, ChainFrames};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Wrench {
    pub force: Vector3<f64>,
    pub torque: Vector3<f64>,
}

impl Wrench {
    pub fn zero() -> Self {
        Self::default()
    }

    /// `[F; T]`.
    pub fn to_vector(&self) -> Vector6<f64> {
        let mut v = Vector6::zeros();
        v.fixed_rows_mut::<3>(0).copy_from(&self.force);
        v.fixed_rows_mut::<3>(3).copy_from(&self.torque);
        v
    }

    pub fn is_finite(&self) -> bool {
        self.force.iter().chain(self.torque.iter()).all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BaseMotionSample {
    /// `V_b = [v_b; ω_b]`.
    pub twist: Vector6<f64>,
    /// `A_b = [v̇_b; ω̇_b]`.
    pub accel: Vector6<f64>,
}

impl BaseMotionSample {
    pub fn v_b(&self) -> Vector3<f64> {
        self.twist.fixed_rows::<3>(0).into_owned()
    }
    pub fn omega_b(&self) -> Vector3<f64> {
        self.twist.fixed_rows::<3>(3).into_owned()
    }
    pub fn vdot_b(&self) -> Vector3<f64> {
        self.accel.fixed_rows::<3>(0).into_owned()
    }
    pub fn omegadot_b(&self) -> Vector3<f64> {
        self.accel.fixed_rows::<3>(3).into_owned()
    }
    pub fn is_zero(&self) -> bool {
        self.twist == Vector6::zeros() && self.accel == Vector6::zeros()
    }
}

/// One gait harmonic: a Gaussian foot-strike train plus a sinusoidal sway.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileComponent {
    pub period: f64,
    pub impulse: Vector6<f64>,
    pub sway: Vector6<f64>,
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DisturbanceProfile {
    pub components: Vec<ProfileComponent>,
    /// Standard deviation of each Gaussian bump (s).
    pub impulse_std: f64,
    pub seed: u64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DisturbanceError {
    #[error("invalid range for {name}: lower bound {lo} must be below upper bound {hi}")]
    InvalidRange { name: &'static str, lo: f64, hi: f64 },
    #[error("{0}")]
    Invalid(String),
    #[error("profile line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Sampling ranges. Default sampling ranges of the gait perturbation generator.
#[derive(Debug, Clone, PartialEq)]
pub struct DisturbanceRanges {
    /// Sampled log-uniformly.
    pub period: (f64, f64),
    pub impulse: (f64, f64),
    pub sway: (f64, f64),
    pub phase: (f64, f64),
    pub components: usize,
    pub impulse_std: f64,
}

impl Default for DisturbanceRanges {
    fn default() -> Self {
        Self {
            period: (0.64, 1.28),
            impulse: (-100.0, 100.0),
            sway: (-10.0, 10.0),
            phase: (-PI, PI),
            components: 3,
            impulse_std: 0.01,
        }
    }
}

impl DisturbanceRanges {
    pub fn check(&self) -> Result<(), DisturbanceError> {
        for (name, (lo, hi)) in [
            ("period", self.period),
            ("impulse", self.impulse),
            ("sway", self.sway),
            ("phase", self.phase),
        ] {
            if !(lo < hi) {
                return Err(DisturbanceError::InvalidRange { name, lo, hi });
            }
        }
        if self.period.0 <= 0.0 {
            return Err(DisturbanceError::Invalid("period bounds must be positive".into()));
        }
        if self.components == 0 {
            return Err(DisturbanceError::Invalid("at least one component required".into()));
        }
        if !(self.impulse_std > 0.0) {
            return Err(DisturbanceError::Invalid("impulse_std must be positive".into()));
        }
        Ok(())
    }
}

/// Draws a profile; the generator is a ChaCha stream keyed by `seed` only.
pub fn sample_profile(seed: u64, ranges: &DisturbanceRanges) -> Result<DisturbanceProfile, DisturbanceError> {
    ranges.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (ln_lo, ln_hi) = (ranges.period.0.ln(), ranges.period.1.ln());
    let components = (0..ranges.components)
        .map(|_| {
            let period = rng
                .random_range(ln_lo..=ln_hi)
                .exp()
                .clamp(ranges.period.0, ranges.period.1);
            let impulse = Vector6::from_fn(|_, _| rng.random_range(ranges.impulse.0..=ranges.impulse.1));
            let sway = Vector6::from_fn(|_, _| rng.random_range(ranges.sway.0..=ranges.sway.1));
            let phase = rng.random_range(ranges.phase.0..=ranges.phase.1);
            ProfileComponent {
                period,
                impulse,
                sway,
                phase,
            }
        })
        .collect();
    Ok(DisturbanceProfile {
        components,
        impulse_std: ranges.impulse_std,
        seed,
    })
}

impl DisturbanceProfile {
    /// Profile with no components (identically zero acceleration).
    pub fn quiet() -> Self {
        Self {
            components: Vec::new(),
            impulse_std: 0.01,
            seed: 0,
        }
    }

    /// Multiplies every amplitude by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        for c in &mut out.components {
            c.impulse *= factor;
            c.sway *= factor;
        }
        out
    }
}

/// Periodic train of unit-peak Gaussian bumps centred at `j·period`, `j ≥ 0`.
pub fn impulse_train(t: f64, period: f64, std: f64) -> f64 {
    let reach = 12.0 * std;
    let first = ((t - reach) / period).ceil().max(0.0) as i64;
    let last = ((t + reach) / period).floor() as i64;
    let inv = 1.0 / (2.0 * std * std);
    (first..=last)
        .map(|j| {
            let d = t - j as f64 * period;
            (-d * d * inv).exp()
        })
        .sum()
}

/// `A_b(t) = Σ_k p_k g(t; T_k) + s_k sin(2πt/T_k + φ_k)`.
pub fn eval_accel(profile: &DisturbanceProfile, t: f64) -> Vector6<f64> {
    profile.components.iter().fold(Vector6::zeros(), |acc, c| {
        let g = impulse_train(t, c.period, profile.impulse_std);
        let s = (2.0 * PI * t / c.period + c.phase).sin();
        acc + c.impulse * g + c.sway * s
    })
}

/// Trapezoidal integration of samples on a uniform grid, starting from zero.
pub fn integrate_trapezoid(values: &[Vector6<f64>], dt: f64) -> Vec<Vector6<f64>> {
    let mut out = Vec::with_capacity(values.len());
    let mut acc = Vector6::zeros();
    for (k, v) in values.iter().enumerate() {
        if k > 0 {
            acc += (values[k - 1] + v) * (0.5 * dt);
        }
        out.push(acc);
    }
    out
}

/// Base motion on the grid `t_k = k·dt`, `k = 0..=steps`, with `V_b(0) = 0`.
pub fn integrate_twist(profile: &DisturbanceProfile, dt: f64, steps: usize) -> Vec<BaseMotionSample> {
    let accels: Vec<Vector6<f64>> = (0..=steps).map(|k| eval_accel(profile, k as f64 * dt)).collect();
    let twists = integrate_trapezoid(&accels, dt);
    twists
        .into_iter()
        .zip(accels)
        .map(|(twist, accel)| BaseMotionSample { twist, accel })
        .collect()
}

/// How the base twist is obtained from `A_b` on the simulation grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TwistMode {
    /// Trapezoidal integral of `A_b − Ā_b`, where `Ā_b` is the long-run mean of
    /// the impulse trains. Keeps `ω_b` bounded over long runs.
    #[default]
    MeanRemoved,
    /// Plain trapezoidal integral of `A_b`. Same-sign impulse trains have a
    /// non-zero mean, so `ω_b` grows linearly with time.
    Integrated,
}

/// Long-run mean of `A_b`: each impulse train contributes `p_k σ √(2π) / T_k`;
/// the sinusoids average to zero.
pub fn impulse_mean(profile: &DisturbanceProfile) -> Vector6<f64> {
    let area = profile.impulse_std * (2.0 * PI).sqrt();
    profile
        .components
        .iter()
        .fold(Vector6::zeros(), |acc, c| acc + c.impulse * (area / c.period))
}

/// Base motion on the grid `t_k = k·dt` with `A_b` from the profile and the twist per `mode`.
pub fn base_motion(profile: &DisturbanceProfile, dt: f64, steps: usize, mode: TwistMode) -> Vec<BaseMotionSample> {
    let mut samples = integrate_twist(profile, dt, steps);
    if mode == TwistMode::MeanRemoved {
        let mean = impulse_mean(profile);
        for (k, s) in samples.iter_mut().enumerate() {
            s.twist -= mean * (k as f64 * dt);
        }
    }
    samples
}

/// Which inertial torque the fixed-base model receives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WrenchModel {
    /// `T = −Iω̇_b − ω_b×(Iω_b)`, as in [`fictitious_wrench`].
    #[default]
    Standard,
    /// Adds the coupling between base and joint-induced link rotation, see
    /// [`coupled_fictitious_wrench`].
    RotationCoupled,
}

/// Mass properties and motion of a single link relative to the base.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkMotion {
    pub mass: f64,
    /// Inertia about the COM in base-frame axes.
    pub inertia: Matrix3<f64>,
    /// COM position relative to the base origin.
    pub r: Vector3<f64>,
    /// COM velocity relative to the base frame.
    pub v: Vector3<f64>,
}

/// Inertial force and torque a moving base induces on one link:
///
/// `F = m(−v̇_b − ω̇_b×r − ω_b×(ω_b×r) − 2ω_b×v)`, `T = −Iω̇_b − ω_b×(Iω_b)`.
pub fn fictitious_wrench(link: &LinkMotion, motion: &BaseMotionSample) -> Wrench {
    let w = motion.omega_b();
    let wd = motion.omegadot_b();
    let a = motion.vdot_b();
    let force = -(a + wd.cross(&link.r) + w.cross(&w.cross(&link.r)) + w.cross(&link.v) * 2.0) * link.mass;
    let torque = -(link.inertia * wd) - w.cross(&(link.inertia * w));
    Wrench { force, torque }
}

/// [`fictitious_wrench`] plus the torque terms that couple base rotation with
/// the link's own angular velocity `ω_rel` relative to the base:
///
/// `T = −Iω̇_b − ω_b×(Iω_b) − ω_rel×(Iω_b) − ω_b×(Iω_rel) − I(ω_b×ω_rel)`.
///
/// With these terms the fixed-base model reproduces a moving base exactly for
/// any chain; without them it does so only when every joint axis is a
/// principal axis of the links it carries and stays parallel to the others.
pub fn coupled_fictitious_wrench(link: &LinkMotion, omega_rel: &Vector3<f64>, motion: &BaseMotionSample) -> Wrench {
    let mut w = fictitious_wrench(link, motion);
    let wb = motion.omega_b();
    let i = link.inertia;
    w.torque -= omega_rel.cross(&(i * wb)) + wb.cross(&(i * omega_rel)) + i * wb.cross(omega_rel);
    w
}

/// Per-link motion records for the chain at the given FK frames and joint rates.
pub fn link_motions(model: &ChainModel, frames: &ChainFrames, qdot: &DVector<f64>) -> Vec<LinkMotion> {
    (0..model.dof())
        .map(|i| {
            let tw = frames
                .body_twist(qdot, Body::Link(i))
                .expect("link index in range");
            LinkMotion {
                mass: model.links[i].mass,
                inertia: world_inertia(frames, model, i),
                r: frames.com_positions[i],
                v: tw.fixed_rows::<3>(0).into_owned(),
            }
        })
        .collect()
}

/// Fictitious wrench on every link (standard form), applied at the link COMs.
pub fn chain_wrenches(
    model: &ChainModel,
    frames: &ChainFrames,
    qdot: &DVector<f64>,
    motion: &BaseMotionSample,
) -> Vec<Wrench> {
    chain_wrenches_with(model, frames, qdot, motion, WrenchModel::Standard)
}

pub fn chain_wrenches_with(
    model: &ChainModel,
    frames: &ChainFrames,
    qdot: &DVector<f64>,
    motion: &BaseMotionSample,
    wrench_model: WrenchModel,
) -> Vec<Wrench> {
    if motion.is_zero() {
        return vec![Wrench::zero(); model.dof()];
    }
    let links = link_motions(model, frames, qdot);
    match wrench_model {
        WrenchModel::Standard => links.iter().map(|l| fictitious_wrench(l, motion)).collect(),
        WrenchModel::RotationCoupled => links
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let w_rel = frames
                    .body_twist(qdot, Body::Link(i))
                    .expect("link index in range")
                    .fixed_rows::<3>(3)
                    .into_owned();
                coupled_fictitious_wrench(l, &w_rel, motion)
            })
            .collect(),
    }
}

/// Flat text form: header keys, then one `component = ...` line per component.
pub fn serialize_profile(profile: &DisturbanceProfile) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# component = period, phase, impulse[6], sway[6]");
    let _ = writeln!(s, "seed = {}", profile.seed);
    let _ = writeln!(s, "impulse_std = {:?}", profile.impulse_std);
    for c in &profile.components {
        let mut vals = vec![c.period, c.phase];
        vals.extend(c.impulse.iter());
        vals.extend(c.sway.iter());
        let body = vals.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(", ");
        let _ = writeln!(s, "component = {body}");
    }
    s
}

pub fn parse_profile(text: &str) -> Result<DisturbanceProfile, DisturbanceError> {
    let mut seed = None;
    let mut impulse_std = None;
    let mut components = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let err = |message: String| DisturbanceError::Parse { line, message };
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| err("expected `key = value`".into()))?;
        let value = value.trim();
        match key.trim() {
            "seed" => seed = Some(value.parse::<u64>().map_err(|e| err(e.to_string()))?),
            "impulse_std" => impulse_std = Some(value.parse::<f64>().map_err(|e| err(e.to_string()))?),
            "component" => {
                let vals = value
                    .split(',')
                    .map(|v| v.trim().parse::<f64>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| err(e.to_string()))?;
                if vals.len() != 14 {
                    return Err(err(format!("component expects 14 values, found {}", vals.len())));
                }
                components.push(ProfileComponent {
                    period: vals[0],
                    phase: vals[1],
                    impulse: Vector6::from_column_slice(&vals[2..8]),
                    sway: Vector6::from_column_slice(&vals[8..14]),
                });
            }
            other => return Err(err(format!("unknown key `{other}`"))),
        }
    }
    let profile = DisturbanceProfile {
        components,
        impulse_std: impulse_std.unwrap_or(0.01),
        seed: seed.unwrap_or(0),
    };
    if !(profile.impulse_std > 0.0) {
        return Err(DisturbanceError::Invalid("impulse_std must be positive".into()));
    }
    if profile.components.iter().any(|c| !(c.period > 0.0)) {
        return Err(DisturbanceError::Invalid("component periods must be positive".into()));
    }
    Ok(profile)
}

/// Several profiles in one file, separated by `---` lines.
pub fn serialize_profiles(profiles: &[DisturbanceProfile]) -> String {
    profiles.iter().map(serialize_profile).collect::<Vec<_>>().join("---\n")
}

pub fn parse_profiles(text: &str) -> Result<Vec<DisturbanceProfile>, DisturbanceError> {
    let mut out = Vec::new();
    let mut chunk = String::new();
    let mut offset = 0;
    let mut chunk_start = 0;
    for line in text.lines() {
        offset += 1;
        if line.trim() == "---" {
            out.push(parse_profile(&chunk).map_err(|e| shift(e, chunk_start))?);
            chunk.clear();
            chunk_start = offset;
        } else {
            chunk.push_str(line);
            chunk.push('\n');
        }
    }
    if !chunk.trim().is_empty() {
        out.push(parse_profile(&chunk).map_err(|e| shift(e, chunk_start))?);
    }
    Ok(out)
}

fn shift(e: DisturbanceError, by: usize) -> DisturbanceError {
    match e {
        DisturbanceError::Parse { line, message } => DisturbanceError::Parse {
            line: line + by,
            message,
        },
        other => other,
    }
}
