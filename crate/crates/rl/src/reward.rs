//! Per-step training reward and its breakdown.

use eestab_core::control::TaskCommand;
use eestab_core::kinematics::orientation_error;
use eestab_core::sim::LogRecord;
use nalgebra::DVector;

/// Gaussian tracking term `weight · exp(−max(0, ‖e‖ − tolerance)² / std²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackingWeight {
    pub weight: f64,
    pub std: f64,
    pub tolerance: f64,
}

impl TrackingWeight {
    pub fn eval(&self, err: f64) -> f64 {
        let e = (err - self.tolerance).max(0.0);
        self.weight * (-(e * e) / (self.std * self.std)).exp()
    }
}

/// Linear penalty plus Gaussian bonus on a norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormWeight {
    pub linear: f64,
    pub exp: f64,
    pub std: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardWeights {
    pub alive: f64,
    pub position: TrackingWeight,
    pub orientation: TrackingWeight,
    /// The torque-guide bonus is `exp(−‖Δτ‖)`, so `std` is unused there.
    pub torque_guide: NormWeight,
    pub ee_lin_acc: NormWeight,
    pub ee_ang_acc: NormWeight,
    pub action_rate: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            alive: 10.0,
            position: TrackingWeight {
                weight: 10.0,
                std: 0.1,
                tolerance: 0.05,
            },
            orientation: TrackingWeight {
                weight: 10.0,
                std: 0.1,
                tolerance: 0.1,
            },
            torque_guide: NormWeight {
                linear: -0.1,
                exp: 5.0,
                std: 1.0,
            },
            ee_lin_acc: NormWeight {
                linear: -0.1,
                exp: 1.0,
                std: 3.0,
            },
            ee_ang_acc: NormWeight {
                linear: -0.01,
                exp: 1.0,
                std: 10.0,
            },
            action_rate: -0.1,
        }
    }
}

impl RewardWeights {
    /// Reward with zero tracking error, torque mismatch and acceleration.
    pub fn max_reward(&self) -> f64 {
        self.alive
            + self.position.weight
            + self.orientation.weight
            + self.torque_guide.exp
            + self.ee_lin_acc.exp
            + self.ee_ang_acc.exp
    }
}

/// Weighted reward terms; [`RewardBreakdown::total`] is their sum.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RewardBreakdown {
    pub alive: f64,
    pub position: f64,
    pub orientation: f64,
    pub torque_guide: f64,
    pub torque_guide_exp: f64,
    pub lin_acc: f64,
    pub lin_acc_exp: f64,
    pub ang_acc: f64,
    pub ang_acc_exp: f64,
    pub action_rate: f64,
    /// Unweighted `−‖τ_applied − (τ_comp + τ_task)‖`; not part of the total.
    pub torque_mismatch: f64,
}

impl RewardBreakdown {
    pub fn total(&self) -> f64 {
        self.alive
            + self.position
            + self.orientation
            + self.torque_guide
            + self.torque_guide_exp
            + self.lin_acc
            + self.lin_acc_exp
            + self.ang_acc
            + self.ang_acc_exp
            + self.action_rate
    }

    pub fn add_scaled(&mut self, other: &Self, s: f64) {
        self.alive += s * other.alive;
        self.position += s * other.position;
        self.orientation += s * other.orientation;
        self.torque_guide += s * other.torque_guide;
        self.torque_guide_exp += s * other.torque_guide_exp;
        self.lin_acc += s * other.lin_acc;
        self.lin_acc_exp += s * other.lin_acc_exp;
        self.ang_acc += s * other.ang_acc;
        self.ang_acc_exp += s * other.ang_acc_exp;
        self.action_rate += s * other.action_rate;
        self.torque_mismatch += s * other.torque_mismatch;
    }
}

/// Reward for one logged step. `record.tau` is the applied (clipped) torque.
pub fn compute_reward(
    record: &LogRecord,
    tau_comp: &DVector<f64>,
    tau_task: &DVector<f64>,
    cmd: &TaskCommand,
    prev_action: &DVector<f64>,
    action: &DVector<f64>,
    weights: &RewardWeights,
) -> (f64, RewardBreakdown) {
    let pos_err = (cmd.x_des.position - record.ee_pose.position).norm();
    let ori_err = orientation_error(&cmd.x_des.orientation, &record.ee_pose.orientation).norm();
    let mismatch = (&record.tau - (tau_comp + tau_task)).norm();
    let lin = record.a_glob.fixed_rows::<3>(0).norm();
    let ang = record.a_glob.fixed_rows::<3>(3).norm();
    let gauss = |x: f64, std: f64| (-(x * x) / (std * std)).exp();
    let w = weights;
    let b = RewardBreakdown {
        alive: w.alive,
        position: w.position.eval(pos_err),
        orientation: w.orientation.eval(ori_err),
        torque_guide: w.torque_guide.linear * mismatch,
        torque_guide_exp: w.torque_guide.exp * (-mismatch).exp(),
        lin_acc: w.ee_lin_acc.linear * lin,
        lin_acc_exp: w.ee_lin_acc.exp * gauss(lin, w.ee_lin_acc.std),
        ang_acc: w.ee_ang_acc.linear * ang,
        ang_acc_exp: w.ee_ang_acc.exp * gauss(ang, w.ee_ang_acc.std),
        action_rate: w.action_rate * (action - prev_action).norm(),
        torque_mismatch: -mismatch,
    };
    (b.total(), b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use eestab_core::Pose;
    use nalgebra::{Vector3, Vector6};

    fn record(tau: &[f64], pos: Vector3<f64>, a_glob: Vector6<f64>) -> LogRecord {
        let n = tau.len();
        LogRecord {
            t: 0.0,
            q: DVector::zeros(n),
            qdot: DVector::zeros(n),
            tau: DVector::from_column_slice(tau),
            ee_pose: Pose {
                position: pos,
                ..Pose::identity()
            },
            a_loc: a_glob,
            a_base: Vector6::zeros(),
            a_glob,
            base_twist: Vector6::zeros(),
            base_accel: Vector6::zeros(),
        }
    }

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn perfect_step_earns_the_maximum() {
        let w = RewardWeights::default();
        let cmd = TaskCommand::hold(Pose::identity());
        let rec = record(&[1.5, -0.5], Vector3::zeros(), Vector6::zeros());
        let (r, b) = compute_reward(&rec, &v(&[1.0, 0.0]), &v(&[0.5, -0.5]), &cmd, &v(&[0.1, 0.2]), &v(&[0.1, 0.2]), &w);
        assert_eq!(b.torque_guide, 0.0);
        assert_eq!(b.torque_guide_exp, 5.0);
        assert_eq!(r, 37.0);
        assert_eq!(w.max_reward(), 37.0);
    }

    #[test]
    fn position_inside_tolerance_is_saturated() {
        let w = RewardWeights::default();
        let cmd = TaskCommand::hold(Pose::identity());
        let rec = record(&[0.0], Vector3::new(0.04, 0.0, 0.0), Vector6::zeros());
        let (_, b) = compute_reward(&rec, &v(&[0.0]), &v(&[0.0]), &cmd, &v(&[0.0]), &v(&[0.0]), &w);
        assert_eq!(b.position, 10.0);
        let rec = record(&[0.0], Vector3::new(0.15, 0.0, 0.0), Vector6::zeros());
        let (_, b) = compute_reward(&rec, &v(&[0.0]), &v(&[0.0]), &cmd, &v(&[0.0]), &v(&[0.0]), &w);
        assert!((b.position - 10.0 * (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn hand_evaluated_terms() {
        let w = RewardWeights::default();
        let cmd = TaskCommand::hold(Pose::identity());
        let rec = record(&[3.0, 4.0], Vector3::zeros(), Vector6::new(3.0, 0.0, 0.0, 0.0, 0.0, 10.0));
        let (r, b) = compute_reward(&rec, &v(&[0.0, 0.0]), &v(&[0.0, 0.0]), &cmd, &v(&[0.0, 0.0]), &v(&[0.3, 0.4]), &w);
        assert!((b.torque_guide + 0.5).abs() < 1e-12);
        assert!((b.torque_guide_exp - 5.0 * (-5.0f64).exp()).abs() < 1e-12);
        assert!((b.lin_acc + 0.3).abs() < 1e-12);
        assert!((b.lin_acc_exp - (-1.0f64).exp()).abs() < 1e-12);
        assert!((b.ang_acc + 0.1).abs() < 1e-12);
        assert!((b.ang_acc_exp - (-1.0f64).exp()).abs() < 1e-12);
        assert!((b.action_rate + 0.05).abs() < 1e-12);
        assert_eq!(b.torque_mismatch, -5.0);
        assert_eq!(r, b.total());
    }
}
