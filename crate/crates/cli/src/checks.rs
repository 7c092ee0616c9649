//! Numerical oracle suites shared by `eestab verify` and the acceptance tests.

use std::fmt;
use std::time::Instant;

use eestab_core::chain::builtin_toy_arm;
use eestab_core::control::{Gains, PdHold, TaskCommand};
use eestab_core::disturbance::{sample_profile, DisturbanceRanges, WrenchModel};
use eestab_core::dynamics::{
    bias_forces, inverse_dynamics, kinetic_energy, mass_matrix, potential_energy, DEFAULT_GRAVITY,
};
use eestab_core::eval::{double_diff_accel, OUTLIER_Z};
use eestab_core::kinematics::{forward_kinematics, orientation_error, Body};
use eestab_core::sim::{
    floating_base_oracle, rollout_with_motion, step, trajectory_motion, BaseTrajectory, SimConfig,
    SmoothBaseTrajectory,
};
use eestab_core::{ChainModel, JointState};
use eestab_rl::net::Mlp;
use eestab_rl::policy::PolicyNet;
use eestab_rl::ppo::{gae, ppo_update, PpoConfig, PpoOptimizers, Transition};
use nalgebra::{DVector, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const BUILTIN_DOFS: [usize; 3] = [1, 2, 4];
pub const TOY_DOFS: [usize; 2] = [2, 4];

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: {}", self.name, self.detail)
    }
}

fn builtin(n: usize) -> ChainModel {
    builtin_toy_arm(n).expect("builtin arms are valid")
}

fn random_q(model: &ChainModel, rng: &mut impl Rng) -> DVector<f64> {
    DVector::from_iterator(
        model.dof(),
        model.joints.iter().map(|j| {
            let (lo, hi) = j.position_limits;
            rng.random_range(lo..hi)
        }),
    )
}

fn random_vec(n: usize, scale: f64, rng: &mut impl Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-scale..scale))
}

/// Analytic Jacobians (all link COMs and the EE) against central differences
/// of forward kinematics. Angular columns difference the orientation log.
pub fn kinematics_fd(configs: usize, seed: u64) -> CheckResult {
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for n in BUILTIN_DOFS {
        let model = builtin(n);
        for _ in 0..configs {
            let q = random_q(&model, &mut rng);
            let frames = forward_kinematics(&model, &q).expect("dims");
            let bodies = (0..n).map(Body::Link).chain([Body::EndEffector]);
            let mut plus = Vec::with_capacity(n);
            let mut minus = Vec::with_capacity(n);
            for j in 0..n {
                let mut qp = q.clone();
                qp[j] += h;
                let mut qm = q.clone();
                qm[j] -= h;
                plus.push(forward_kinematics(&model, &qp).expect("dims"));
                minus.push(forward_kinematics(&model, &qm).expect("dims"));
            }
            for body in bodies {
                let jac = frames.jacobian(body).expect("valid body");
                let pose = |f: &eestab_core::ChainFrames| match body {
                    Body::Link(i) => (f.com_positions[i], f.link_frames[i].rotation),
                    Body::EndEffector => (f.r_ee(), f.ee.rotation),
                };
                let mut err2 = 0.0;
                for j in 0..n {
                    let (pp, rp) = pose(&plus[j]);
                    let (pm, rm) = pose(&minus[j]);
                    let lin = (pp - pm) / (2.0 * h);
                    let ang = orientation_error(&rp, &rm) / (2.0 * h);
                    err2 += (jac.fixed_view::<3, 1>(0, j) - lin).norm_squared();
                    err2 += (jac.fixed_view::<3, 1>(3, j) - ang).norm_squared();
                }
                worst = worst.max(err2.sqrt() / jac.norm().max(1e-12));
            }
        }
    }
    CheckResult::new(
        "kinematics",
        worst < 1e-6,
        format!("max relative Jacobian error {worst:.2e} over {configs} configurations per arm (bound 1e-6)"),
    )
}

/// Maximum relative deviation of pendulum energy over 1 s at dt = 1e-4.
///
/// `centered` evaluates kinetic energy with the mean of consecutive
/// velocities, which removes the bounded O(dt) oscillation of the staggered
/// semi-implicit velocity.
pub fn pendulum_energy_drift(release: f64, centered: bool) -> f64 {
    let mut model = builtin(1);
    model.joints[0].viscous_damping = 0.0;
    let g = DEFAULT_GRAVITY;
    let energy = |s: &JointState| kinetic_energy(&model, s).expect("dims") + potential_energy(&model, &s.q, &g).expect("dims");
    let mut s = JointState::at_rest(DVector::from_element(1, release));
    let e0 = energy(&s);
    let zero = DVector::zeros(1);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let next = step(&model, &s, &zero, &[], 1e-4, &g).expect("finite");
        let e = if centered {
            let mid = JointState::new(s.q.clone(), (&s.qdot + &next.qdot) * 0.5);
            energy(&mid)
        } else {
            energy(&next)
        };
        worst = worst.max(((e - e0) / e0).abs());
        s = next;
    }
    worst
}

/// CRBA against RNEA, the kinetic-energy identity and pendulum energy drift.
pub fn dynamics_consistency(samples: usize, seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = DEFAULT_GRAVITY;
    let (mut id_err, mut ke_err): (f64, f64) = (0.0, 0.0);
    for n in BUILTIN_DOFS {
        let model = builtin(n);
        for _ in 0..samples {
            let q = random_q(&model, &mut rng);
            let qd = random_vec(n, 2.0, &mut rng);
            let qdd = random_vec(n, 5.0, &mut rng);
            let state = JointState::new(q.clone(), qd.clone());
            let m = mass_matrix(&model, &q).expect("dims");
            let lhs = &m * &qdd + bias_forces(&model, &state, &g).expect("dims");
            let rhs = inverse_dynamics(&model, &q, &qd, &qdd, &[], &g).expect("dims");
            id_err = id_err.max((lhs - &rhs).amax() / rhs.amax().max(1.0));
            let ke = kinetic_energy(&model, &state).expect("dims");
            let quad = 0.5 * qd.dot(&(&m * &qd));
            ke_err = ke_err.max((ke - quad).abs() / ke.abs().max(1.0));
        }
    }
    let raw = pendulum_energy_drift(0.5, false);
    let centered = pendulum_energy_drift(1.0, true);
    let passed = id_err < 1e-9 && ke_err < 1e-9 && raw < 1e-4 && centered < 1e-4;
    CheckResult::new(
        "dynamics",
        passed,
        format!(
            "M q̈ + h vs inverse dynamics {id_err:.2e}; kinetic energy {ke_err:.2e} (bounds 1e-9); \
             pendulum energy drift {raw:.2e} from 0.5 rad, {centered:.2e} centered from 1.0 rad (bound 1e-4)"
        ),
    )
}

/// RMS world EE linear-acceleration error between the fixed-base rollout with
/// fictitious wrenches and the floating-base reference, over one trajectory.
pub fn equivalence_rms(model: &ChainModel, trajectory: &SmoothBaseTrajectory, wrench_model: WrenchModel) -> f64 {
    let n = model.dof();
    let q0 = eestab_core::chain::builtin_nominal_q(n)
        .map(DVector::from_vec)
        .unwrap_or_else(|| DVector::zeros(n));
    let initial = JointState::at_rest(q0.clone());
    let cmd = TaskCommand::hold_at(model, &q0).expect("dims");
    let config = SimConfig {
        duration: 2.0,
        gravity: Vector3::zeros(),
        wrench_model,
        ..SimConfig::default()
    };
    let mut fixed_ctrl = PdHold::new(Gains::default());
    let motions = trajectory_motion(trajectory, &config).expect("valid config");
    let fixed = rollout_with_motion(model, &mut fixed_ctrl, motions, &cmd, &initial, &config).expect("finite rollout");
    let mut oracle_ctrl = PdHold::new(Gains::default());
    let oracle = floating_base_oracle(model, trajectory, &mut oracle_ctrl, &cmd, &initial, &config, &Vector3::zeros())
        .expect("finite rollout");
    let mut sum = 0.0;
    for (rec, world) in fixed.records.iter().zip(&oracle.ee_world_accel) {
        let rot = trajectory.at(rec.t).pose.rotation;
        let a = rot * rec.a_glob.fixed_rows::<3>(0).into_owned();
        sum += (a - world.fixed_rows::<3>(0)).norm_squared();
    }
    (sum / fixed.records.len() as f64).sqrt()
}

/// Random gait-like base trajectories: 5 cm translations, 0.2 rad rotations.
pub fn equivalence_trajectories(count: usize, seed: u64) -> Vec<SmoothBaseTrajectory> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| SmoothBaseTrajectory::random(&mut rng, 0.05, 0.2)).collect()
}

pub fn wrench_equivalence(trajectories: usize, seed: u64, wrench_model: WrenchModel) -> CheckResult {
    let start = Instant::now();
    let trajs = equivalence_trajectories(trajectories, seed);
    let mut parts = Vec::new();
    let mut worst: f64 = 0.0;
    for n in TOY_DOFS {
        let model = builtin(n);
        let w = trajs
            .iter()
            .map(|t| equivalence_rms(&model, t, wrench_model))
            .fold(0.0, f64::max);
        worst = worst.max(w);
        parts.push(format!("{n}-DoF max RMS {w:.2e} m/s²"));
    }
    let secs = start.elapsed().as_secs_f64();
    let name = match wrench_model {
        WrenchModel::Standard => "wrench-equivalence",
        WrenchModel::RotationCoupled => "wrench-equivalence-coupled",
    };
    CheckResult::new(
        name,
        worst < 1e-3 && secs < 60.0,
        format!("{} over {trajectories} trajectories (bound 1e-3), {secs:.1} s", parts.join(", ")),
    )
}

/// Network and surrogate gradients against central differences, the
/// zero-advantage no-op and GAE(λ = 1) against Monte-Carlo returns.
pub fn ppo_internals(seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = Mlp::random(&[8, 4, 2], 1.0, &mut rng);
    let x = random_vec(8, 1.0, &mut rng);
    let w = random_vec(2, 1.0, &mut rng);
    let mut grad = vec![0.0; net.num_params()];
    net.backward(&net.forward_trace(&x), &w, &mut grad);
    let base = net.flatten();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for i in 0..base.len() {
        let mut probe = net.clone();
        let mut p = base.clone();
        p[i] += h;
        probe.set_flat(&p);
        let up = probe.forward(&x).dot(&w);
        p[i] -= 2.0 * h;
        probe.set_flat(&p);
        let down = probe.forward(&x).dot(&w);
        let fd = (up - down) / (2.0 * h);
        if fd.abs() > 1e-7 || grad[i].abs() > 1e-7 {
            worst = worst.max((fd - grad[i]).abs() / fd.abs().max(grad[i].abs()));
        }
    }

    let mut policy = PolicyNet::new(1, &[4], 0.5, -0.5, &mut rng);
    policy.actor = Mlp::random(&[8, 4, 2], 1.0, &mut rng);
    policy.obs_scale = DVector::from_element(8, 1.0);
    policy.log_std = DVector::from_vec(vec![-0.5, -0.2]);
    let before = policy.flatten();
    let batch: Vec<Transition> = (0..32)
        .map(|_| {
            let obs = random_vec(8, 1.0, &mut rng);
            let u = random_vec(2, 1.0, &mut rng);
            Transition {
                log_prob: policy.log_prob(&obs, &u).expect("dims") - 0.1,
                obs,
                pre_tanh: u,
                advantage: 0.0,
                ret: 1.0,
            }
        })
        .collect();
    let mut critic = Mlp::random(&[8, 4, 1], 1.0, &mut rng);
    let mut opt = PpoOptimizers::new(&policy, &critic, 1e-2);
    let cfg = PpoConfig {
        entropy_coef: 0.0,
        normalize_advantages: false,
        minibatch: 8,
        ..PpoConfig::default()
    };
    let drift = match ppo_update(&mut policy, &mut critic, &mut opt, &batch, &cfg, &mut rng) {
        Ok(_) => policy
            .flatten()
            .iter()
            .zip(&before)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max),
        Err(_) => f64::INFINITY,
    };

    let (r, v, boot, gamma) = ([1.0, -0.5, 2.0], [0.3, 0.1, -0.2], 0.7, 0.9);
    let (adv, _) = gae(&r, &v, boot, gamma, 1.0);
    let g2 = r[2] + gamma * boot;
    let g1 = r[1] + gamma * g2;
    let g0 = r[0] + gamma * g1;
    let gae_err = [g0, g1, g2]
        .iter()
        .zip(&v)
        .zip(&adv)
        .map(|((g, v), a)| (a - (g - v)).abs())
        .fold(0.0, f64::max);

    CheckResult::new(
        "ppo",
        worst < 1e-4 && drift <= 1e-12 && gae_err < 1e-12,
        format!(
            "8-4-2 gradient relative error {worst:.2e} (bound 1e-4); zero-advantage drift {drift:.1e}; \
             GAE(λ=1) vs Monte-Carlo {gae_err:.1e}"
        ),
    )
}

/// Kolmogorov–Smirnov statistic of `samples` against U(0, 1).
pub fn ks_uniform(samples: &mut [f64]) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    samples
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let lo = x - i as f64 / n;
            let hi = (i + 1) as f64 / n - x;
            lo.max(hi)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic one-sample KS critical value at the 1% level.
pub fn ks_critical_1pct(n: usize) -> f64 {
    1.6276 / (n as f64).sqrt()
}

/// Range constraints and log-uniformity of sampled periods.
pub fn disturbance_statistics(count: usize, seed: u64) -> CheckResult {
    let ranges = DisturbanceRanges::default();
    let (lo, hi) = ranges.period;
    let mut violations = 0usize;
    let mut u = Vec::with_capacity(count * ranges.components);
    for k in 0..count {
        let p = match sample_profile(seed.wrapping_add(k as u64), &ranges) {
            Ok(p) => p,
            Err(_) => {
                violations += 1;
                continue;
            }
        };
        if p.components.len() != ranges.components || p.impulse_std != ranges.impulse_std {
            violations += 1;
        }
        for c in &p.components {
            let inside = |v: f64, (a, b): (f64, f64)| (a..=b).contains(&v);
            if !inside(c.period, ranges.period)
                || !c.impulse.iter().all(|v| inside(*v, ranges.impulse))
                || !c.sway.iter().all(|v| inside(*v, ranges.sway))
                || !inside(c.phase, ranges.phase)
            {
                violations += 1;
            }
            u.push((c.period / lo).ln() / (hi / lo).ln());
        }
    }
    let d = ks_uniform(&mut u);
    let crit = ks_critical_1pct(u.len());
    CheckResult::new(
        "disturbance",
        violations == 0 && d < crit,
        format!(
            "{count} profiles, {violations} range violations; log-period KS D = {d:.4} (1% critical {crit:.4})"
        ),
    )
}

/// Peak acceleration of a 120 Hz, 1 Hz, 0.1 m sinusoid with and without one
/// corrupted sample, relative to ω²A.
pub fn estimator_errors() -> (f64, f64) {
    let rate = 120.0;
    let (amp, w) = (0.1, 2.0 * std::f64::consts::PI);
    let n = 600;
    let mut pos: Vec<Vector3<f64>> = (0..n)
        .map(|k| Vector3::new(amp * (w * k as f64 / rate).sin(), 0.0, 0.0))
        .collect();
    let ori = vec![UnitQuaternion::identity(); n];
    let truth = w * w * amp;
    let peak = |p: &[Vector3<f64>]| {
        double_diff_accel(p, &ori, rate, OUTLIER_Z)
            .map(|s| s.accel.iter().map(|a| a.fixed_rows::<3>(0).norm()).fold(0.0, f64::max))
            .unwrap_or(f64::INFINITY)
    };
    let clean = (peak(&pos) - truth).abs() / truth;
    pos[257].y += 0.03;
    let dirty = (peak(&pos) - truth).abs() / truth;
    (clean, dirty)
}

pub fn accel_estimator() -> CheckResult {
    let (clean, dirty) = estimator_errors();
    CheckResult::new(
        "estimator",
        clean < 0.02 && dirty < 0.02,
        format!("peak ω²A error {:.2}% clean, {:.2}% with outlier (bound 2%)", 100.0 * clean, 100.0 * dirty),
    )
}

/// Every oracle suite, in a fixed order.
pub fn oracle_suite(seed: u64) -> Vec<CheckResult> {
    vec![
        kinematics_fd(1000, seed),
        dynamics_consistency(200, seed),
        wrench_equivalence(10, seed, WrenchModel::Standard),
        wrench_equivalence(10, seed, WrenchModel::RotationCoupled),
        ppo_internals(seed),
        disturbance_statistics(10_000, seed),
        accel_estimator(),
    ]
}
