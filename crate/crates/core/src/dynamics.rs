//! Joint-space and operational-space dynamics of a fixed-base chain.
//!
//! `M(q)` comes from the composite-rigid-body algorithm; bias forces and
//! inverse dynamics from a recursive Newton–Euler pass written with plain
//! 3-vectors in base coordinates. The same pass also accepts a prescribed
//! motion of the base frame, which is how the floating-base reference
//! simulation is driven without any fictitious forces.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, Matrix3, Matrix6, Matrix6xX, Vector3, Vector6};

use crate::chain::ChainModel;
use crate::disturbance::Wrench;
use crate::error::DimensionError;
use crate::kinematics::{check_len, forward_kinematics, Body, ChainFrames, JointState};

/// Damping added to `J M⁻¹ Jᵀ` before inversion.
pub const LAMBDA_REG: f64 = 1e-6;

pub const DEFAULT_GRAVITY: Vector3<f64> = Vector3::new(0.0, 0.0, -9.81);

/// Inertial motion of the base frame, all vectors in base coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BaseFrameMotion {
    /// Acceleration of the base origin.
    pub origin_acc: Vector3<f64>,
    pub omega: Vector3<f64>,
    pub alpha: Vector3<f64>,
}

#[derive(Debug, Clone)]
pub struct DynamicsQuantities {
    pub mass_matrix: DMatrix<f64>,
    /// Coriolis/centrifugal + damping + gravity, `τ = M q̈ + bias`.
    pub bias: DVector<f64>,
    pub gravity_torque: DVector<f64>,
    pub jacobian: Matrix6xX<f64>,
    pub jdot_qdot: Vector6<f64>,
    pub lambda: Matrix6<f64>,
    /// Operational-space Coriolis/centrifugal term.
    pub q_op: Vector6<f64>,
    /// Operational-space gravity term.
    pub g_op: Vector6<f64>,
}

/// Link inertia about its COM rotated into base coordinates.
pub(crate) fn world_inertia(frames: &ChainFrames, model: &ChainModel, i: usize) -> Matrix3<f64> {
    let r = frames.link_frames[i].rotation.to_rotation_matrix();
    r.matrix() * model.links[i].inertia * r.matrix().transpose()
}

/// Recursive Newton–Euler pass.
///
/// Returns the joint torques (including viscous damping) that realise `qddot`
/// given gravity, optional per-link external wrenches applied at link COMs,
/// and an optional inertial motion of the base frame.
pub(crate) fn newton_euler(
    model: &ChainModel,
    frames: &ChainFrames,
    qdot: &DVector<f64>,
    qddot: &DVector<f64>,
    gravity: &Vector3<f64>,
    wrenches: Option<&[Wrench]>,
    base: Option<&BaseFrameMotion>,
) -> DVector<f64> {
    let n = model.dof();
    let base = base.copied().unwrap_or_default();

    let mut omega = base.omega;
    let mut alpha = base.alpha;
    let mut acc_origin = base.origin_acc;
    let mut prev_origin = Vector3::zeros();

    let mut forces = Vec::with_capacity(n);
    let mut moments = Vec::with_capacity(n);
    for i in 0..n {
        let o = frames.joint_origins[i];
        let d = o - prev_origin;
        acc_origin += alpha.cross(&d) + omega.cross(&omega.cross(&d));
        prev_origin = o;

        let z = frames.joint_axes[i];
        let w_joint = z * qdot[i];
        alpha += z * qddot[i] + omega.cross(&w_joint);
        omega += w_joint;

        let rc = frames.com_positions[i] - o;
        let acc_com = acc_origin + alpha.cross(&rc) + omega.cross(&omega.cross(&rc));
        let link = &model.links[i];
        let inertia = world_inertia(frames, model, i);
        let mut f = (acc_com - gravity) * link.mass;
        let mut m = inertia * alpha + omega.cross(&(inertia * omega));
        if let Some(ws) = wrenches {
            f -= ws[i].force;
            m -= ws[i].torque;
        }
        forces.push(f);
        moments.push(m);
    }

    let mut tau = DVector::zeros(n);
    let mut f_child = Vector3::zeros();
    let mut n_child = Vector3::zeros();
    let mut child_origin = Vector3::zeros();
    for i in (0..n).rev() {
        let o = frames.joint_origins[i];
        let rc = frames.com_positions[i] - o;
        let mut n_joint = moments[i] + rc.cross(&forces[i]);
        if i + 1 < n {
            n_joint += n_child + (child_origin - o).cross(&f_child);
        }
        let f_joint = forces[i] + if i + 1 < n { f_child } else { Vector3::zeros() };
        tau[i] = frames.joint_axes[i].dot(&n_joint) + model.joints[i].viscous_damping * qdot[i];
        f_child = f_joint;
        n_child = n_joint;
        child_origin = o;
    }
    tau
}

/// Joint-space inertia matrix by the composite-rigid-body algorithm.
pub fn mass_matrix(model: &ChainModel, q: &DVector<f64>) -> Result<DMatrix<f64>, DimensionError> {
    let frames = forward_kinematics(model, q)?;
    Ok(mass_matrix_from_frames(model, &frames))
}

pub(crate) fn mass_matrix_from_frames(model: &ChainModel, frames: &ChainFrames) -> DMatrix<f64> {
    let n = model.dof();
    let mut mm = DMatrix::zeros(n, n);

    let mut m_c = 0.0;
    let mut c_c = Vector3::zeros();
    let mut i_c = Matrix3::zeros();
    for i in (0..n).rev() {
        // Fold link i into the composite body of its descendants.
        let m_i = model.links[i].mass;
        let c_i = frames.com_positions[i];
        let m_new = m_c + m_i;
        let c_new = (c_c * m_c + c_i * m_i) / m_new;
        i_c = i_c
            + parallel_axis(m_c, &(c_c - c_new))
            + world_inertia(frames, model, i)
            + parallel_axis(m_i, &(c_i - c_new));
        m_c = m_new;
        c_c = c_new;

        let z_i = frames.joint_axes[i];
        let force = z_i.cross(&(c_c - frames.joint_origins[i])) * m_c;
        let moment_com = i_c * z_i;
        for j in 0..=i {
            let moment = moment_com + (c_c - frames.joint_origins[j]).cross(&force);
            let v = frames.joint_axes[j].dot(&moment);
            mm[(j, i)] = v;
            mm[(i, j)] = v;
        }
    }
    mm
}

fn parallel_axis(mass: f64, d: &Vector3<f64>) -> Matrix3<f64> {
    (Matrix3::identity() * d.norm_squared() - d * d.transpose()) * mass
}

/// `τ` realising `qddot` under gravity and per-link COM wrenches (RNEA).
pub fn inverse_dynamics(
    model: &ChainModel,
    q: &DVector<f64>,
    qdot: &DVector<f64>,
    qddot: &DVector<f64>,
    wrenches: &[Wrench],
    gravity: &Vector3<f64>,
) -> Result<DVector<f64>, DimensionError> {
    let n = model.dof();
    check_len("qdot", n, qdot.len())?;
    check_len("qddot", n, qddot.len())?;
    check_wrenches(n, wrenches)?;
    let frames = forward_kinematics(model, q)?;
    let ws = (!wrenches.is_empty()).then_some(wrenches);
    Ok(newton_euler(model, &frames, qdot, qddot, gravity, ws, None))
}

/// Inverse dynamics with the base frame moving inertially (no fictitious forces).
pub fn inverse_dynamics_moving_base(
    model: &ChainModel,
    state: &JointState,
    qddot: &DVector<f64>,
    base: &BaseFrameMotion,
    gravity: &Vector3<f64>,
) -> Result<DVector<f64>, DimensionError> {
    let n = model.dof();
    check_len("qdot", n, state.qdot.len())?;
    check_len("qddot", n, qddot.len())?;
    let frames = forward_kinematics(model, &state.q)?;
    Ok(newton_euler(model, &frames, &state.qdot, qddot, gravity, None, Some(base)))
}

fn check_wrenches(n: usize, wrenches: &[Wrench]) -> Result<(), DimensionError> {
    if !wrenches.is_empty() {
        check_len("wrenches", n, wrenches.len())?;
    }
    Ok(())
}

/// Coriolis/centrifugal + damping + gravity torques.
pub fn bias_forces(model: &ChainModel, state: &JointState, gravity: &Vector3<f64>) -> Result<DVector<f64>, DimensionError> {
    let n = model.dof();
    inverse_dynamics(model, &state.q, &state.qdot, &DVector::zeros(n), &[], gravity)
}

/// `q̈ = M⁻¹(τ − bias + Σ Jᵢᵀ wᵢ)`.
pub fn forward_dynamics(
    model: &ChainModel,
    state: &JointState,
    torque: &DVector<f64>,
    wrenches: &[Wrench],
    gravity: &Vector3<f64>,
) -> Result<DVector<f64>, DimensionError> {
    let n = model.dof();
    check_len("qdot", n, state.qdot.len())?;
    check_len("torque", n, torque.len())?;
    check_wrenches(n, wrenches)?;
    let frames = forward_kinematics(model, &state.q)?;
    let ws = (!wrenches.is_empty()).then_some(wrenches);
    Ok(forward_dynamics_from_frames(model, &frames, &state.qdot, torque, ws, gravity, None))
}

pub(crate) fn forward_dynamics_from_frames(
    model: &ChainModel,
    frames: &ChainFrames,
    qdot: &DVector<f64>,
    torque: &DVector<f64>,
    wrenches: Option<&[Wrench]>,
    gravity: &Vector3<f64>,
    base: Option<&BaseFrameMotion>,
) -> DVector<f64> {
    let n = model.dof();
    // RNEA with q̈ = 0 yields bias − Σ Jᵢᵀ wᵢ.
    let h = newton_euler(model, frames, qdot, &DVector::zeros(n), gravity, wrenches, base);
    let mm = mass_matrix_from_frames(model, frames);
    solve_spd(mm, &(torque - h))
}

pub(crate) fn solve_spd(mm: DMatrix<f64>, rhs: &DVector<f64>) -> DVector<f64> {
    match Cholesky::new(mm.clone()) {
        Some(ch) => ch.solve(rhs),
        None => mm.lu().solve(rhs).unwrap_or_else(|| DVector::from_element(rhs.len(), f64::NAN)),
    }
}

/// `Λ = (J M⁻¹ Jᵀ + λ_reg I)⁻¹` for the selected body.
pub fn operational_space_inertia(model: &ChainModel, q: &DVector<f64>, body: Body) -> Result<Matrix6<f64>, DimensionError> {
    let frames = forward_kinematics(model, q)?;
    let jac = frames.jacobian(body)?;
    let mm = mass_matrix_from_frames(model, &frames);
    let chol = Cholesky::new(mm).expect("mass matrix is positive definite");
    Ok(lambda_from(&jac, &chol))
}

pub(crate) fn lambda_from(jac: &Matrix6xX<f64>, chol: &Cholesky<f64, Dyn>) -> Matrix6<f64> {
    let minv_jt = chol.solve(&jac.transpose());
    let a: Matrix6<f64> = Matrix6::from_iterator((jac * minv_jt).iter().copied());
    let reg = a + Matrix6::identity() * LAMBDA_REG;
    let lam = reg
        .cholesky()
        .map(|c| c.inverse())
        .unwrap_or_else(|| reg.try_inverse().unwrap_or_else(Matrix6::zeros));
    (lam + lam.transpose()) * 0.5
}

/// All joint- and operational-space terms for the end effector at `state`.
pub fn dynamics_quantities(
    model: &ChainModel,
    state: &JointState,
    gravity: &Vector3<f64>,
) -> Result<DynamicsQuantities, DimensionError> {
    let n = model.dof();
    check_len("qdot", n, state.qdot.len())?;
    let frames = forward_kinematics(model, &state.q)?;
    Ok(quantities_from_frames(model, &frames, &state.qdot, gravity))
}

pub(crate) fn quantities_from_frames(
    model: &ChainModel,
    frames: &ChainFrames,
    qdot: &DVector<f64>,
    gravity: &Vector3<f64>,
) -> DynamicsQuantities {
    let n = model.dof();
    let zeros = DVector::zeros(n);
    let mass_matrix = mass_matrix_from_frames(model, frames);
    let bias = newton_euler(model, frames, qdot, &zeros, gravity, None, None);
    let gravity_torque = newton_euler(model, frames, &zeros, &zeros, gravity, None, None);
    let jacobian = frames.jacobian(Body::EndEffector).expect("end effector always exists");
    let jdot_qdot = frames
        .jacobian_dot_qdot(qdot, Body::EndEffector)
        .expect("qdot length checked by caller");
    let chol = Cholesky::new(mass_matrix.clone()).expect("mass matrix is positive definite");
    let lambda = lambda_from(&jacobian, &chol);

    let coriolis = &bias - &gravity_torque;
    let j_minv = |v: &DVector<f64>| -> Vector6<f64> {
        let x = chol.solve(v);
        Vector6::from_iterator((&jacobian * x).iter().copied())
    };
    let q_op = lambda * (j_minv(&coriolis) - jdot_qdot);
    let g_op = lambda * j_minv(&gravity_torque);

    DynamicsQuantities {
        mass_matrix,
        bias,
        gravity_torque,
        jacobian,
        jdot_qdot,
        lambda,
        q_op,
        g_op,
    }
}

/// Total kinetic energy summed link by link from FK velocities.
pub fn kinetic_energy(model: &ChainModel, state: &JointState) -> Result<f64, DimensionError> {
    let frames = forward_kinematics(model, &state.q)?;
    let mut ke = 0.0;
    for i in 0..model.dof() {
        let tw = frames.body_twist(&state.qdot, Body::Link(i))?;
        let v = tw.fixed_rows::<3>(0).into_owned();
        let w = tw.fixed_rows::<3>(3).into_owned();
        let inertia = world_inertia(&frames, model, i);
        ke += 0.5 * model.links[i].mass * v.norm_squared() + 0.5 * w.dot(&(inertia * w));
    }
    Ok(ke)
}

/// Gravitational potential energy `-Σ m g·c`.
pub fn potential_energy(model: &ChainModel, q: &DVector<f64>, gravity: &Vector3<f64>) -> Result<f64, DimensionError> {
    let frames = forward_kinematics(model, q)?;
    Ok(model
        .links
        .iter()
        .zip(&frames.com_positions)
        .map(|(l, c)| -l.mass * gravity.dot(c))
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::builtin_toy_arm;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize, s: f64) -> DVector<f64> {
        DVector::from_fn(n, |_, _| rng.random_range(-s..s))
    }

    /// Textbook planar two-link inertia matrix (uniform rods, COM at mid-length).
    fn planar_closed_form(q2: f64, m: &ChainModel) -> DMatrix<f64> {
        let (m1, m2) = (m.links[0].mass, m.links[1].mass);
        let (l1, lc1, lc2) = (1.0, 0.5, 0.5);
        let (i1, i2) = (m.links[0].inertia[(2, 2)], m.links[1].inertia[(2, 2)]);
        let c2 = q2.cos();
        let m11 = m1 * lc1 * lc1 + i1 + m2 * (l1 * l1 + lc2 * lc2 + 2.0 * l1 * lc2 * c2) + i2;
        let m12 = m2 * (lc2 * lc2 + l1 * lc2 * c2) + i2;
        let m22 = m2 * lc2 * lc2 + i2;
        DMatrix::from_row_slice(2, 2, &[m11, m12, m12, m22])
    }

    #[test]
    fn planar_mass_matrix_matches_closed_form() {
        let m = builtin_toy_arm(2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let q = rand_vec(&mut rng, 2, 3.0);
            let mm = mass_matrix(&m, &q).unwrap();
            assert!((&mm - mm.transpose()).abs().max() < 1e-10);
            assert!((&mm - planar_closed_form(q[1], &m)).abs().max() < 1e-9);
        }
    }

    #[test]
    fn four_dof_mass_matrix_spd_at_zero() {
        let m = builtin_toy_arm(4).unwrap();
        let mm = mass_matrix(&m, &DVector::zeros(4)).unwrap();
        assert!((&mm - mm.transpose()).abs().max() < 1e-12);
        let eig = mm.symmetric_eigen().eigenvalues;
        assert!(eig.iter().all(|&e| e > 0.0), "{eig}");
    }

    #[test]
    fn zero_everything_is_zero_torque() {
        let m = builtin_toy_arm(4).unwrap();
        let z = DVector::zeros(4);
        let tau = inverse_dynamics(&m, &dv(&[0.3, 0.2, -0.1, 0.5]), &z, &z, &[], &Vector3::zeros()).unwrap();
        assert!(tau.norm() < 1e-14);
    }

    #[test]
    fn pendulum_holding_torque() {
        let m = builtin_toy_arm(1).unwrap();
        let z = DVector::zeros(1);
        let tau = inverse_dynamics(&m, &dv(&[FRAC_PI_2]), &z, &z, &[], &DEFAULT_GRAVITY).unwrap();
        let expected = 1.0 * 9.81 * 0.5;
        assert!((tau[0].abs() - expected).abs() < 1e-12, "{}", tau[0]);
    }

    #[test]
    fn crba_matches_rnea() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in [1, 2, 4] {
            let mut m = builtin_toy_arm(n).unwrap();
            for j in &mut m.joints {
                j.viscous_damping = 0.05;
            }
            for _ in 0..200 {
                let q = rand_vec(&mut rng, n, 2.5);
                let qd = rand_vec(&mut rng, n, 3.0);
                let qdd = rand_vec(&mut rng, n, 5.0);
                let s = JointState::new(q.clone(), qd.clone());
                let lhs = mass_matrix(&m, &q).unwrap() * &qdd + bias_forces(&m, &s, &DEFAULT_GRAVITY).unwrap();
                let rhs = inverse_dynamics(&m, &q, &qd, &qdd, &[], &DEFAULT_GRAVITY).unwrap();
                assert!((lhs - rhs).amax() < 1e-9);
            }
        }
    }

    #[test]
    fn kinetic_energy_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for n in [1, 2, 4] {
            let m = builtin_toy_arm(n).unwrap();
            for _ in 0..100 {
                let s = JointState::new(rand_vec(&mut rng, n, 2.5), rand_vec(&mut rng, n, 3.0));
                let mm = mass_matrix(&m, &s.q).unwrap();
                let quad = 0.5 * s.qdot.dot(&(&mm * &s.qdot));
                assert!((quad - kinetic_energy(&m, &s).unwrap()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn forward_inverts_inverse_dynamics() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = builtin_toy_arm(4).unwrap();
        for _ in 0..100 {
            let s = JointState::new(rand_vec(&mut rng, 4, 2.5), rand_vec(&mut rng, 4, 3.0));
            let qdd = rand_vec(&mut rng, 4, 5.0);
            let ws: Vec<Wrench> = (0..4)
                .map(|_| Wrench {
                    force: Vector3::from_fn(|_, _| rng.random_range(-5.0..5.0)),
                    torque: Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)),
                })
                .collect();
            let tau = inverse_dynamics(&m, &s.q, &s.qdot, &qdd, &ws, &DEFAULT_GRAVITY).unwrap();
            let back = forward_dynamics(&m, &s, &tau, &ws, &DEFAULT_GRAVITY).unwrap();
            assert!((back - &qdd).amax() < 1e-8);
        }
    }

    #[test]
    fn forward_dynamics_matches_explicit_jacobian_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let m = builtin_toy_arm(4).unwrap();
        let s = JointState::new(rand_vec(&mut rng, 4, 2.0), rand_vec(&mut rng, 4, 2.0));
        let tau = rand_vec(&mut rng, 4, 3.0);
        let ws: Vec<Wrench> = (0..4)
            .map(|_| Wrench {
                force: Vector3::from_fn(|_, _| rng.random_range(-5.0..5.0)),
                torque: Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)),
            })
            .collect();
        let frames = forward_kinematics(&m, &s.q).unwrap();
        let mut gen = DVector::zeros(4);
        for (i, w) in ws.iter().enumerate() {
            let j = frames.jacobian(Body::Link(i)).unwrap();
            gen += j.transpose() * w.to_vector();
        }
        let mm = mass_matrix(&m, &s.q).unwrap();
        let b = bias_forces(&m, &s, &DEFAULT_GRAVITY).unwrap();
        let expected = mm.lu().solve(&(&tau - b + gen)).unwrap();
        let got = forward_dynamics(&m, &s, &tau, &ws, &DEFAULT_GRAVITY).unwrap();
        assert!((got - expected).amax() < 1e-9);
    }

    #[test]
    fn zero_input_zero_acceleration() {
        let m = builtin_toy_arm(2).unwrap();
        let s = JointState::at_rest(dv(&[0.4, -0.3]));
        let qdd = forward_dynamics(&m, &s, &DVector::zeros(2), &[], &Vector3::zeros()).unwrap();
        assert!(qdd.norm() < 1e-15);
    }

    #[test]
    fn unit_wrench_on_single_link() {
        let m = builtin_toy_arm(1).unwrap();
        let s = JointState::zeros(1);
        // Link hangs along -z; a unit force along +x at the COM.
        let w = Wrench {
            force: Vector3::x(),
            torque: Vector3::zeros(),
        };
        let qdd = forward_dynamics(&m, &s, &DVector::zeros(1), &[w], &Vector3::zeros()).unwrap();
        let j = jacobian_col(&m);
        let inertia = mass_matrix(&m, &s.q).unwrap()[(0, 0)];
        let expected = j.dot(&w.to_vector()) / inertia;
        assert!((qdd[0] - expected).abs() < 1e-12);
        // Hand values: lever 0.5 m about y, inertia m l_c² + I_yy.
        let iyy = m.links[0].inertia[(1, 1)];
        assert!((qdd[0] - (-0.5) / (0.25 + iyy)).abs() < 1e-12);
    }

    fn jacobian_col(m: &ChainModel) -> Vector6<f64> {
        let j = crate::kinematics::jacobian(m, &DVector::zeros(1), Body::Link(0)).unwrap();
        Vector6::from_iterator(j.iter().copied())
    }

    #[test]
    fn lambda_matches_dense_inverse_and_is_symmetric() {
        let m = builtin_toy_arm(2).unwrap();
        let q = dv(&[0.4, 1.1]);
        let lam = operational_space_inertia(&m, &q, Body::EndEffector).unwrap();
        assert!((lam - lam.transpose()).abs().max() < 1e-8);
        // Λ = (A + εI)⁻¹ shares A's eigenvectors, so A Λ u = σ/(σ+ε) u.
        let j = crate::kinematics::jacobian(&m, &q, Body::EndEffector).unwrap();
        let mm = mass_matrix(&m, &q).unwrap();
        let a = &j * mm.clone().try_inverse().unwrap() * j.transpose();
        let svd = a.clone().svd(true, true);
        let u = svd.u.unwrap();
        for k in 0..6 {
            let sigma = svd.singular_values[k];
            let v = Vector6::from_iterator(u.column(k).iter().copied());
            let back = &a * (lam * v);
            assert!((back - v * (sigma / (sigma + LAMBDA_REG))).norm() < 1e-6);
        }
    }

    #[test]
    fn lambda_finite_at_singular_stretch() {
        let m = builtin_toy_arm(2).unwrap();
        let lam = operational_space_inertia(&m, &DVector::zeros(2), Body::EndEffector).unwrap();
        assert!(lam.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn ee_responds_to_task_force_through_lambda_inverse() {
        let m = builtin_toy_arm(4).unwrap();
        let s = JointState::at_rest(dv(&[0.3, -0.6, 0.5, 1.1]));
        let frames = forward_kinematics(&m, &s.q).unwrap();
        let j = frames.jacobian(Body::EndEffector).unwrap();
        let f = Vector6::new(1.0, -0.5, 0.2, 0.0, 0.1, 0.0);
        let qdd = forward_dynamics(&m, &s, &(j.transpose() * f), &[], &Vector3::zeros()).unwrap();
        let acc = &j * qdd;
        let mm = mass_matrix(&m, &s.q).unwrap();
        let expected = &j * mm.try_inverse().unwrap() * j.transpose() * f;
        assert!((acc - expected).norm() < 1e-10);
    }

    #[test]
    fn operational_space_terms_compensate_bias_for_full_column_rank() {
        let m = builtin_toy_arm(4).unwrap();
        let s = JointState::new(dv(&[0.3, -0.6, 0.5, 1.1]), dv(&[0.4, -0.2, 0.9, 0.3]));
        let dq = dynamics_quantities(&m, &s, &DEFAULT_GRAVITY).unwrap();
        // Jᵀ G_op reproduces the joint gravity torque when J has full column rank.
        let g = dq.jacobian.transpose() * dq.g_op;
        assert!((g - &dq.gravity_torque).amax() < 1e-4);
    }
}
