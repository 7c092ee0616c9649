//! Torque laws: base-induced and responsive EE accelerations, the
//! minimum-norm compensation torque, operational-space tracking, and the
//! joint PD loop. Also the controller interface the simulator drives.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, Vector3, Vector6};

use crate::chain::ChainModel;
use crate::disturbance::{chain_wrenches, BaseMotionSample, Wrench};
use crate::dynamics::{mass_matrix_from_frames, quantities_from_frames, DynamicsQuantities};
use crate::error::DimensionError;
use crate::kinematics::{check_len, forward_kinematics, orientation_error, Body, ChainFrames, JointState, Pose};

#[derive(Debug, Clone, PartialEq)]
pub struct TaskCommand {
    pub x_des: Pose,
    pub xdot_des: Vector6<f64>,
}

impl TaskCommand {
    /// Hold `pose` with zero desired twist.
    pub fn hold(pose: Pose) -> Self {
        Self {
            x_des: pose,
            xdot_des: Vector6::zeros(),
        }
    }

    /// Hold the EE pose the arm has at `q`.
    pub fn hold_at(model: &ChainModel, q: &DVector<f64>) -> Result<Self, DimensionError> {
        Ok(Self::hold(forward_kinematics(model, q)?.ee_pose()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gains {
    pub kbar_p: Vector6<f64>,
    pub kbar_d: Vector6<f64>,
    pub kp: f64,
    pub kd: f64,
}

impl Default for Gains {
    fn default() -> Self {
        Self {
            kbar_p: Vector6::repeat(100.0),
            kbar_d: Vector6::repeat(20.0),
            kp: 10.0,
            kd: 0.5,
        }
    }
}

impl Gains {
    pub fn is_valid(&self) -> bool {
        self.kp >= 0.0
            && self.kd >= 0.0
            && self.kbar_p.iter().chain(self.kbar_d.iter()).all(|g| *g >= 0.0)
    }
}

/// Everything the torque laws need at one state, computed once.
#[derive(Debug, Clone)]
pub struct ArmSnapshot {
    pub frames: ChainFrames,
    pub dynamics: DynamicsQuantities,
    pub ee_pose: Pose,
    /// EE twist relative to the base, in base coordinates.
    pub ee_twist: Vector6<f64>,
    pub qdot: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl ArmSnapshot {
    pub fn new(model: &ChainModel, state: &JointState, gravity: &Vector3<f64>) -> Result<Self, DimensionError> {
        check_len("qdot", model.dof(), state.qdot.len())?;
        let frames = forward_kinematics(model, &state.q)?;
        let dynamics = quantities_from_frames(model, &frames, &state.qdot, gravity);
        let chol = Cholesky::new(dynamics.mass_matrix.clone()).expect("mass matrix is positive definite");
        let ee_twist = Vector6::from_iterator((&dynamics.jacobian * &state.qdot).iter().copied());
        Ok(Self {
            ee_pose: frames.ee_pose(),
            frames,
            dynamics,
            ee_twist,
            qdot: state.qdot.clone(),
            chol,
        })
    }

    pub fn dof(&self) -> usize {
        self.qdot.len()
    }

    /// `J M⁻¹ τ` for the end effector.
    pub fn ee_accel_from_torque(&self, tau: &DVector<f64>) -> Vector6<f64> {
        let x = self.chol.solve(tau);
        Vector6::from_iterator((&self.dynamics.jacobian * x).iter().copied())
    }

    /// `Σ Jᵢᵀ wᵢ` with every `Jᵢ` taken at the link COM.
    pub fn generalized_wrench_torque(&self, wrenches: &[Wrench]) -> Result<DVector<f64>, DimensionError> {
        let n = self.dof();
        check_len("wrenches", n, wrenches.len())?;
        let mut gen = DVector::zeros(n);
        for (i, w) in wrenches.iter().enumerate() {
            let ji = self.frames.jacobian(Body::Link(i))?;
            gen += ji.transpose() * w.to_vector();
        }
        Ok(gen)
    }

    /// `a_resp = J M⁻¹ Σ Jᵢᵀ wᵢ`.
    pub fn responsive_accel(&self, wrenches: &[Wrench]) -> Result<Vector6<f64>, DimensionError> {
        Ok(self.ee_accel_from_torque(&self.generalized_wrench_torque(wrenches)?))
    }

    pub fn base_induced_accel(&self, motion: &BaseMotionSample) -> Vector6<f64> {
        base_induced_accel(
            &self.frames.r_ee(),
            &self.ee_twist.fixed_rows::<3>(0).into_owned(),
            motion,
        )
    }

    /// `τ_comp = −Jᵀ Λ (a_ee^base + a_resp)`.
    pub fn compensation_torque(
        &self,
        motion: &BaseMotionSample,
        wrenches: &[Wrench],
    ) -> Result<DVector<f64>, DimensionError> {
        let a = self.base_induced_accel(motion) + self.responsive_accel(wrenches)?;
        let d = &self.dynamics;
        Ok(-(d.jacobian.transpose() * (d.lambda * a)))
    }

    /// Pose and twist error `[e_pos; e_ori]`, `[ė_lin; ė_ang]`.
    pub fn task_error(&self, cmd: &TaskCommand) -> (Vector6<f64>, Vector6<f64>) {
        let mut e = Vector6::zeros();
        e.fixed_rows_mut::<3>(0)
            .copy_from(&(cmd.x_des.position - self.ee_pose.position));
        e.fixed_rows_mut::<3>(3)
            .copy_from(&orientation_error(&cmd.x_des.orientation, &self.ee_pose.orientation));
        (e, cmd.xdot_des - self.ee_twist)
    }

    /// `τ_task = Jᵀ[Λ(K̄p e + K̄d ė) + Q + G]`.
    pub fn task_torque(&self, cmd: &TaskCommand, gains: &Gains) -> DVector<f64> {
        let (e, edot) = self.task_error(cmd);
        let d = &self.dynamics;
        let f = d.lambda * (gains.kbar_p.component_mul(&e) + gains.kbar_d.component_mul(&edot)) + d.q_op + d.g_op;
        d.jacobian.transpose() * f
    }
}

/// `a_ee^base`: linear part `v̇_b + 2ω_b×v + ω_b×(ω_b×r) + ω̇_b×r`, angular part `ω̇_b`.
pub fn base_induced_accel(r_ee: &Vector3<f64>, v_ee: &Vector3<f64>, motion: &BaseMotionSample) -> Vector6<f64> {
    let w = motion.omega_b();
    let wd = motion.omegadot_b();
    let lin = motion.vdot_b() + w.cross(v_ee) * 2.0 + w.cross(&w.cross(r_ee)) + wd.cross(r_ee);
    let mut out = Vector6::zeros();
    out.fixed_rows_mut::<3>(0).copy_from(&lin);
    out.fixed_rows_mut::<3>(3).copy_from(&wd);
    out
}

pub fn responsive_accel(
    model: &ChainModel,
    q: &DVector<f64>,
    wrenches: &[Wrench],
) -> Result<Vector6<f64>, DimensionError> {
    let frames = forward_kinematics(model, q)?;
    let mm = mass_matrix_from_frames(model, &frames);
    let chol = Cholesky::new(mm).expect("mass matrix is positive definite");
    check_len("wrenches", model.dof(), wrenches.len())?;
    let mut gen = DVector::zeros(model.dof());
    for (i, w) in wrenches.iter().enumerate() {
        gen += frames.jacobian(Body::Link(i))?.transpose() * w.to_vector();
    }
    let jac = frames.jacobian(Body::EndEffector)?;
    Ok(Vector6::from_iterator((jac * chol.solve(&gen)).iter().copied()))
}

pub fn compensation_torque(
    model: &ChainModel,
    state: &JointState,
    motion: &BaseMotionSample,
    wrenches: &[Wrench],
) -> Result<DVector<f64>, DimensionError> {
    // Gravity does not enter τ_comp.
    ArmSnapshot::new(model, state, &Vector3::zeros())?.compensation_torque(motion, wrenches)
}

pub fn task_torque(
    model: &ChainModel,
    state: &JointState,
    cmd: &TaskCommand,
    gains: &Gains,
    gravity: &Vector3<f64>,
) -> Result<DVector<f64>, DimensionError> {
    Ok(ArmSnapshot::new(model, state, gravity)?.task_torque(cmd, gains))
}

/// `τ_PD = Kp(q_des − q) − Kd q̇` (target velocity is always zero).
pub fn pd_torque(gains: &Gains, q_des: &DVector<f64>, state: &JointState) -> DVector<f64> {
    (q_des - &state.q) * gains.kp - &state.qdot * gains.kd
}

/// Clamps each entry to `±limit`; the flag reports whether anything was cut.
pub fn clip_torque(tau: &DVector<f64>, limits: &[f64]) -> (DVector<f64>, bool) {
    let mut clipped = false;
    let out = DVector::from_iterator(
        tau.len(),
        tau.iter().zip(limits).map(|(t, l)| {
            let c = t.clamp(-l, *l);
            clipped |= c != *t;
            c
        }),
    );
    (out, clipped)
}

/// Which analytic terms the ideal controller sums.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IdealTerms {
    pub compensation: bool,
    pub task: bool,
}

impl IdealTerms {
    pub const FULL: Self = Self {
        compensation: true,
        task: true,
    };
    pub const TASK_ONLY: Self = Self {
        compensation: false,
        task: true,
    };
    pub const COMPENSATION_ONLY: Self = Self {
        compensation: true,
        task: false,
    };
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdealOutput {
    pub torque: DVector<f64>,
    pub compensation: DVector<f64>,
    pub task: DVector<f64>,
    pub clipped: bool,
}

/// `τ_comp + τ_task` (either term may be disabled), clipped to the torque limits.
pub fn ideal_torque(
    model: &ChainModel,
    snapshot: &ArmSnapshot,
    motion: &BaseMotionSample,
    wrenches: &[Wrench],
    cmd: &TaskCommand,
    gains: &Gains,
    terms: IdealTerms,
) -> Result<IdealOutput, DimensionError> {
    let n = model.dof();
    let compensation = if terms.compensation {
        snapshot.compensation_torque(motion, wrenches)?
    } else {
        DVector::zeros(n)
    };
    let task = if terms.task {
        snapshot.task_torque(cmd, gains)
    } else {
        DVector::zeros(n)
    };
    let (torque, clipped) = clip_torque(&(&compensation + &task), &model.torque_limits());
    Ok(IdealOutput {
        torque,
        compensation,
        task,
        clipped,
    })
}

pub fn ideal_controller(
    model: &ChainModel,
    state: &JointState,
    motion: &BaseMotionSample,
    wrenches: &[Wrench],
    cmd: &TaskCommand,
    gains: &Gains,
    gravity: &Vector3<f64>,
) -> Result<IdealOutput, DimensionError> {
    let snap = ArmSnapshot::new(model, state, gravity)?;
    ideal_torque(model, &snap, motion, wrenches, cmd, gains, IdealTerms::FULL)
}

/// Damped least-squares IK from `q0` towards `target`, clamped to joint limits.
///
/// Stops after `iters` steps or when the step is below 1e-12.
pub fn solve_ik(
    model: &ChainModel,
    target: &Pose,
    q0: &DVector<f64>,
    damping: f64,
    iters: usize,
) -> Result<DVector<f64>, DimensionError> {
    let n = model.dof();
    let mut q = q0.clone();
    for _ in 0..iters {
        let frames = forward_kinematics(model, &q)?;
        let pose = frames.ee_pose();
        let mut e = Vector6::zeros();
        e.fixed_rows_mut::<3>(0).copy_from(&(target.position - pose.position));
        e.fixed_rows_mut::<3>(3)
            .copy_from(&orientation_error(&target.orientation, &pose.orientation));
        let j = frames.jacobian(Body::EndEffector)?;
        let a: DMatrix<f64> = j.transpose() * &j + DMatrix::identity(n, n) * (damping * damping);
        let step = a
            .cholesky()
            .map(|c| c.solve(&(j.transpose() * e)))
            .unwrap_or_else(|| DVector::zeros(n));
        q += &step;
        for (i, joint) in model.joints.iter().enumerate() {
            q[i] = q[i].clamp(joint.position_limits.0, joint.position_limits.1);
        }
        if step.norm() < 1e-12 {
            break;
        }
    }
    Ok(q)
}

/// Inputs the simulator hands a controller at each query.
///
/// `state` and `motion` are what the controller senses (observation noise
/// already applied); `wrenches` are the fictitious wrenches recomputed from
/// those sensed values.
pub struct ControlInput<'a> {
    pub t: f64,
    pub model: &'a ChainModel,
    pub state: &'a JointState,
    pub motion: &'a BaseMotionSample,
    pub cmd: &'a TaskCommand,
    pub gravity: &'a Vector3<f64>,
}

impl ControlInput<'_> {
    pub fn snapshot(&self) -> Result<ArmSnapshot, DimensionError> {
        ArmSnapshot::new(self.model, self.state, self.gravity)
    }

    pub fn sensed_wrenches(&self, snap: &ArmSnapshot) -> Vec<Wrench> {
        chain_wrenches(self.model, &snap.frames, &self.state.qdot, self.motion)
    }
}

/// A controller queried at two rates: `decide` at the control rate (its
/// output is held in between) and `torque` at the PD rate.
pub trait Controller: Send {
    fn name(&self) -> &str;

    /// Called once with the initial state before the first query.
    fn reset(&mut self, _input: &ControlInput<'_>) -> Result<(), DimensionError> {
        Ok(())
    }

    fn decide(&mut self, _input: &ControlInput<'_>) -> Result<(), DimensionError> {
        Ok(())
    }

    /// Commanded joint torque, before torque-limit clipping.
    fn torque(&mut self, input: &ControlInput<'_>) -> Result<DVector<f64>, DimensionError>;
}

/// Joint PD holding the IK solution of the commanded pose found at reset.
#[derive(Debug, Clone)]
pub struct PdHold {
    pub gains: Gains,
    q_hold: Option<DVector<f64>>,
}

impl PdHold {
    pub fn new(gains: Gains) -> Self {
        Self { gains, q_hold: None }
    }

    pub fn target(&self) -> Option<&DVector<f64>> {
        self.q_hold.as_ref()
    }
}

impl Controller for PdHold {
    fn name(&self) -> &str {
        "pd-hold"
    }

    fn reset(&mut self, input: &ControlInput<'_>) -> Result<(), DimensionError> {
        self.q_hold = Some(solve_ik(input.model, &input.cmd.x_des, &input.state.q, 1e-3, 200)?);
        Ok(())
    }

    fn torque(&mut self, input: &ControlInput<'_>) -> Result<DVector<f64>, DimensionError> {
        let q_hold = match &self.q_hold {
            Some(q) => q.clone(),
            None => input.state.q.clone(),
        };
        Ok(pd_torque(&self.gains, &q_hold, input.state))
    }
}

/// Analytic `τ_comp + τ_task`, with terms switchable for ablations.
#[derive(Debug, Clone)]
pub struct IdealController {
    pub gains: Gains,
    pub terms: IdealTerms,
    label: String,
}

impl IdealController {
    pub fn new(gains: Gains, terms: IdealTerms) -> Self {
        let label = match (terms.compensation, terms.task) {
            (true, true) => "ideal",
            (false, true) => "task-only",
            (true, false) => "comp-only",
            (false, false) => "zero-torque",
        };
        Self {
            gains,
            terms,
            label: label.to_string(),
        }
    }
}

impl Controller for IdealController {
    fn name(&self) -> &str {
        &self.label
    }

    fn torque(&mut self, input: &ControlInput<'_>) -> Result<DVector<f64>, DimensionError> {
        let snap = input.snapshot()?;
        let wrenches = if self.terms.compensation {
            input.sensed_wrenches(&snap)
        } else {
            Vec::new()
        };
        let n = input.model.dof();
        let mut tau = DVector::zeros(n);
        if self.terms.compensation {
            tau += snap.compensation_torque(input.motion, &wrenches)?;
        }
        if self.terms.task {
            tau += snap.task_torque(input.cmd, &self.gains);
        }
        Ok(tau)
    }
}

/// Constant torque, mostly useful for tests.
#[derive(Debug, Clone)]
pub struct ConstantTorque(pub DVector<f64>);

impl Controller for ConstantTorque {
    fn name(&self) -> &str {
        "constant"
    }

    fn torque(&mut self, _input: &ControlInput<'_>) -> Result<DVector<f64>, DimensionError> {
        Ok(self.0.clone())
    }
}
