//! Forward kinematics, geometric Jacobians and the `J̇(q)q̇` product.
//!
//! Everything is expressed in the fixed base frame. Twists and spatial
//! accelerations stack the linear part on top: `[v; ω]`.

use nalgebra::{DVector, Isometry3, Matrix6xX, Translation3, UnitQuaternion, Vector3, Vector6};

use crate::chain::ChainModel;
use crate::error::DimensionError;

#[derive(Debug, Clone, PartialEq)]
pub struct JointState {
    pub q: DVector<f64>,
    pub qdot: DVector<f64>,
}

impl JointState {
    pub fn new(q: DVector<f64>, qdot: DVector<f64>) -> Self {
        Self { q, qdot }
    }

    pub fn at_rest(q: DVector<f64>) -> Self {
        let n = q.len();
        Self {
            q,
            qdot: DVector::zeros(n),
        }
    }

    pub fn zeros(n: usize) -> Self {
        Self::at_rest(DVector::zeros(n))
    }

    pub fn dof(&self) -> usize {
        self.q.len()
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(self.qdot.iter()).all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub position: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            position: Vector3::zeros(),
            orientation: UnitQuaternion::identity(),
        }
    }

    pub fn from_isometry(iso: &Isometry3<f64>) -> Self {
        Self {
            position: iso.translation.vector,
            orientation: iso.rotation,
        }
    }

    pub fn to_isometry(&self) -> Isometry3<f64> {
        Isometry3::from_parts(Translation3::from(self.position), self.orientation)
    }
}

/// Which rigid body a Jacobian refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Body {
    /// Link COM (index from 0).
    Link(usize),
    EndEffector,
}

/// Result of a forward-kinematics pass at one configuration.
#[derive(Debug, Clone)]
pub struct ChainFrames {
    /// Link frames in the base frame (after the joint rotation).
    pub link_frames: Vec<Isometry3<f64>>,
    /// Joint axis origins `o_i` in the base frame.
    pub joint_origins: Vec<Vector3<f64>>,
    /// Joint axes `z_i` in the base frame.
    pub joint_axes: Vec<Vector3<f64>>,
    /// Link COM positions in the base frame.
    pub com_positions: Vec<Vector3<f64>>,
    pub ee: Isometry3<f64>,
}

impl ChainFrames {
    pub fn dof(&self) -> usize {
        self.joint_axes.len()
    }

    pub fn link_poses(&self) -> Vec<Pose> {
        self.link_frames.iter().map(Pose::from_isometry).collect()
    }

    pub fn ee_pose(&self) -> Pose {
        Pose::from_isometry(&self.ee)
    }

    /// EE displacement from the base origin (`r_ee^loc`).
    pub fn r_ee(&self) -> Vector3<f64> {
        self.ee.translation.vector
    }

    fn point_and_last_joint(&self, body: Body) -> Result<(Vector3<f64>, usize), DimensionError> {
        match body {
            Body::Link(i) if i < self.dof() => Ok((self.com_positions[i], i)),
            Body::Link(i) => Err(DimensionError::BodyIndex {
                index: i,
                links: self.dof(),
            }),
            Body::EndEffector => Ok((self.r_ee(), self.dof() - 1)),
        }
    }

    /// 6×n geometric Jacobian at the link COM or EE origin.
    pub fn jacobian(&self, body: Body) -> Result<Matrix6xX<f64>, DimensionError> {
        let (p, last) = self.point_and_last_joint(body)?;
        let n = self.dof();
        let mut jac = Matrix6xX::zeros(n);
        for j in 0..=last {
            let z = self.joint_axes[j];
            let lin = z.cross(&(p - self.joint_origins[j]));
            jac.fixed_view_mut::<3, 1>(0, j).copy_from(&lin);
            jac.fixed_view_mut::<3, 1>(3, j).copy_from(&z);
        }
        Ok(jac)
    }

    /// `J̇(q)q̇` for the selected body: its spatial acceleration when `q̈ = 0`.
    pub fn jacobian_dot_qdot(&self, qdot: &DVector<f64>, body: Body) -> Result<Vector6<f64>, DimensionError> {
        check_len("qdot", self.dof(), qdot.len())?;
        let (p, last) = self.point_and_last_joint(body)?;
        let mut omega = Vector3::zeros();
        let mut alpha = Vector3::zeros();
        // Acceleration of the current joint origin, carried link by link.
        let mut acc_origin = Vector3::zeros();
        for j in 0..=last {
            if j > 0 {
                let d = self.joint_origins[j] - self.joint_origins[j - 1];
                acc_origin += alpha.cross(&d) + omega.cross(&omega.cross(&d));
            }
            let w_joint = self.joint_axes[j] * qdot[j];
            alpha += omega.cross(&w_joint);
            omega += w_joint;
        }
        let d = p - self.joint_origins[last];
        let lin = acc_origin + alpha.cross(&d) + omega.cross(&omega.cross(&d));
        let mut out = Vector6::zeros();
        out.fixed_rows_mut::<3>(0).copy_from(&lin);
        out.fixed_rows_mut::<3>(3).copy_from(&alpha);
        Ok(out)
    }

    /// Twist `[v; ω]` of the body for joint rates `qdot`.
    pub fn body_twist(&self, qdot: &DVector<f64>, body: Body) -> Result<Vector6<f64>, DimensionError> {
        check_len("qdot", self.dof(), qdot.len())?;
        let jac = self.jacobian(body)?;
        Ok(Vector6::from_iterator((&jac * qdot).iter().copied()))
    }
}

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<(), DimensionError> {
    if expected != got {
        return Err(DimensionError::Length { what, expected, got });
    }
    Ok(())
}

/// Computes all link frames and the EE frame at configuration `q`.
pub fn forward_kinematics(model: &ChainModel, q: &DVector<f64>) -> Result<ChainFrames, DimensionError> {
    let n = model.dof();
    check_len("q", n, q.len())?;
    let mut link_frames = Vec::with_capacity(n);
    let mut joint_origins = Vec::with_capacity(n);
    let mut joint_axes = Vec::with_capacity(n);
    let mut com_positions = Vec::with_capacity(n);

    let mut parent = Isometry3::identity();
    for (i, (joint, link)) in model.joints.iter().zip(&model.links).enumerate() {
        let joint_frame = parent
            * Isometry3::from_parts(Translation3::from(joint.origin_translation), joint.origin_rotation);
        let axis_world = joint_frame.rotation * joint.axis;
        let rot = UnitQuaternion::from_scaled_axis(joint.axis * q[i]);
        let mut frame = joint_frame * rot;
        // Keep the quaternion on the unit sphere to machine precision.
        frame.rotation = UnitQuaternion::new_normalize(frame.rotation.into_inner());
        joint_origins.push(joint_frame.translation.vector);
        joint_axes.push(axis_world);
        com_positions.push(frame * nalgebra::Point3::from(link.com_offset));
        link_frames.push(frame);
        parent = frame;
    }
    let mut ee = parent * model.ee_offset;
    ee.rotation = UnitQuaternion::new_normalize(ee.rotation.into_inner());

    Ok(ChainFrames {
        link_frames,
        joint_origins,
        joint_axes,
        com_positions: com_positions.into_iter().map(|p| p.coords).collect(),
        ee,
    })
}

pub fn jacobian(model: &ChainModel, q: &DVector<f64>, body: Body) -> Result<Matrix6xX<f64>, DimensionError> {
    forward_kinematics(model, q)?.jacobian(body)
}

pub fn jacobian_dot_qdot(model: &ChainModel, state: &JointState, body: Body) -> Result<Vector6<f64>, DimensionError> {
    forward_kinematics(model, &state.q)?.jacobian_dot_qdot(&state.qdot, body)
}

/// Rotation-vector (axis·angle) of `target ⊗ current⁻¹`, taking the short way round.
pub fn orientation_error(target: &UnitQuaternion<f64>, current: &UnitQuaternion<f64>) -> Vector3<f64> {
    let mut d = target * current.inverse();
    if d.w < 0.0 {
        d = UnitQuaternion::new_unchecked(-d.into_inner());
    }
    d.scaled_axis()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::builtin_toy_arm;
    use std::f64::consts::FRAC_PI_2;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    #[test]
    fn planar_zero_configuration() {
        let m = builtin_toy_arm(2).unwrap();
        let fk = forward_kinematics(&m, &dv(&[0.0, 0.0])).unwrap();
        assert!((fk.r_ee() - Vector3::new(2.0, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn planar_closed_form() {
        let m = builtin_toy_arm(2).unwrap();
        for &(a, b) in &[(FRAC_PI_2, 0.0), (0.3, -1.2), (-2.0, 2.5)] {
            let fk = forward_kinematics(&m, &dv(&[a, b])).unwrap();
            let expected = Vector3::new(a.cos() + (a + b).cos(), a.sin() + (a + b).sin(), 0.0);
            assert!((fk.r_ee() - expected).norm() < 1e-12, "{a} {b}");
        }
        let fk = forward_kinematics(&m, &dv(&[FRAC_PI_2, 0.0])).unwrap();
        assert!((fk.r_ee() - Vector3::new(0.0, 2.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn quaternions_stay_unit() {
        let m = builtin_toy_arm(4).unwrap();
        let fk = forward_kinematics(&m, &dv(&[1.3, -0.7, 2.2, 0.4])).unwrap();
        for pose in fk.link_poses().iter().chain(std::iter::once(&fk.ee_pose())) {
            assert!((pose.orientation.quaternion().norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch() {
        let m = builtin_toy_arm(2).unwrap();
        assert!(forward_kinematics(&m, &dv(&[0.0])).is_err());
        assert!(jacobian(&m, &dv(&[0.0, 0.0]), Body::Link(2)).is_err());
    }

    #[test]
    fn planar_jacobian_at_zero() {
        let m = builtin_toy_arm(2).unwrap();
        let j = jacobian(&m, &dv(&[0.0, 0.0]), Body::EndEffector).unwrap();
        let expected = nalgebra::Matrix6x2::new(
            0.0, 0.0, //
            2.0, 1.0, //
            0.0, 0.0, //
            0.0, 0.0, //
            0.0, 0.0, //
            1.0, 1.0,
        );
        assert!((j - expected).norm() < 1e-12);
    }

    #[test]
    fn single_joint_com_column() {
        // z-axis joint, COM 0.5 m along x.
        let mut m = builtin_toy_arm(2).unwrap();
        m.joints.truncate(1);
        m.links.truncate(1);
        let j = jacobian(&m, &dv(&[0.0]), Body::Link(0)).unwrap();
        assert!((j.fixed_view::<3, 1>(0, 0) - Vector3::new(0.0, 0.5, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn jdot_qdot_zero_rate_and_centripetal() {
        let m = builtin_toy_arm(2).unwrap();
        let s = JointState::zeros(2);
        assert_eq!(jacobian_dot_qdot(&m, &s, Body::EndEffector).unwrap(), Vector6::zeros());
        let s = JointState::new(dv(&[0.0, 0.0]), dv(&[1.0, 0.0]));
        let a = jacobian_dot_qdot(&m, &s, Body::EndEffector).unwrap();
        assert!((a.fixed_rows::<3>(0) - Vector3::new(-2.0, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn orientation_error_short_way() {
        let a = UnitQuaternion::from_scaled_axis(Vector3::new(0.0, 0.0, 0.3));
        let b = UnitQuaternion::from_scaled_axis(Vector3::new(0.0, 0.0, -0.2));
        let e = orientation_error(&a, &b);
        assert!((e - Vector3::new(0.0, 0.0, 0.5)).norm() < 1e-12);
        let flipped = UnitQuaternion::new_unchecked(-a.into_inner());
        assert!((orientation_error(&flipped, &b) - e).norm() < 1e-12);
    }
}
