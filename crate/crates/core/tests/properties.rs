use eestab_core::chain::{builtin_nominal_q, builtin_toy_arm, parse_chain, serialize_chain};
use eestab_core::control::{ControlInput, Controller, Gains, IdealController, IdealTerms, PdHold, TaskCommand};
use eestab_core::disturbance::{parse_profiles, sample_profile, serialize_profiles, DisturbanceRanges};
use eestab_core::dynamics::{forward_dynamics, inverse_dynamics, mass_matrix, DEFAULT_GRAVITY};
use eestab_core::eval::{benchmark, compute_metrics, read_table_csv, Method};
use eestab_core::sim::{rollout, SimConfig};
use eestab_core::{DimensionError, JointState};
use nalgebra::DVector;
use proptest::prelude::*;

fn q_strategy(n: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-2.5f64..2.5, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mass_matrix_is_symmetric_positive_definite(q in q_strategy(4)) {
        let m = builtin_toy_arm(4).unwrap();
        let mm = mass_matrix(&m, &DVector::from_vec(q)).unwrap();
        prop_assert!((&mm - mm.transpose()).amax() <= 1e-12 * mm.amax());
        prop_assert!(mm.cholesky().is_some());
    }

    #[test]
    fn forward_dynamics_inverts_inverse_dynamics(
        q in q_strategy(4),
        qd in proptest::collection::vec(-3.0f64..3.0, 4),
        tau in proptest::collection::vec(-20.0f64..20.0, 4),
    ) {
        let m = builtin_toy_arm(4).unwrap();
        let state = JointState::new(DVector::from_vec(q), DVector::from_vec(qd));
        let tau = DVector::from_vec(tau);
        let qdd = forward_dynamics(&m, &state, &tau, &[], &DEFAULT_GRAVITY).unwrap();
        let back = inverse_dynamics(&m, &state.q, &state.qdot, &qdd, &[], &DEFAULT_GRAVITY).unwrap();
        prop_assert!((back - tau).amax() < 1e-9);
    }

    #[test]
    fn sampled_profiles_round_trip_through_text(seed in any::<u64>()) {
        let p = sample_profile(seed, &DisturbanceRanges::default()).unwrap();
        let back = parse_profiles(&serialize_profiles(std::slice::from_ref(&p))).unwrap();
        prop_assert_eq!(back, vec![p]);
    }
}

#[test]
fn builtin_arms_round_trip_through_chain_text() {
    for n in [1, 2, 4] {
        let m = builtin_toy_arm(n).unwrap();
        assert_eq!(parse_chain(&serialize_chain(&m)).unwrap(), m);
    }
}

#[test]
fn documented_example_chain_parses() {
    let text = include_str!("../../../docs/examples/two_link.chain");
    let m = parse_chain(text).unwrap();
    assert_eq!(m.dof(), 2);
}

fn arm(n: usize) -> (eestab_core::ChainModel, TaskCommand, JointState) {
    let m = builtin_toy_arm(n).unwrap();
    let q = DVector::from_vec(builtin_nominal_q(n).unwrap());
    let cmd = TaskCommand::hold_at(&m, &q).unwrap();
    (m, cmd, JointState::at_rest(q))
}

#[test]
fn noisy_rollouts_are_bitwise_deterministic() {
    let (m, cmd, init) = arm(2);
    let profile = sample_profile(3, &DisturbanceRanges::default()).unwrap();
    let mut cfg = SimConfig {
        duration: 1.0,
        seed: 11,
        ..Default::default()
    };
    cfg.obs_noise.q = 1e-3;
    cfg.obs_noise.base_accel = 5e-2;
    let run = || {
        let mut c = IdealController::new(Gains::default(), IdealTerms::FULL);
        rollout(&m, &mut c, &profile, &cmd, &init, &cfg).unwrap().to_csv_string()
    };
    assert_eq!(run(), run());
}

#[test]
fn quiet_base_leaves_a_held_arm_still() {
    let (m, cmd, init) = arm(4);
    let quiet = eestab_core::DisturbanceProfile::quiet();
    let cfg = SimConfig {
        duration: 2.0,
        ..Default::default()
    };
    let mut c = IdealController::new(Gains::default(), IdealTerms::FULL);
    let log = rollout(&m, &mut c, &quiet, &cmd, &init, &cfg).unwrap();
    let metrics = compute_metrics(&log).unwrap();
    assert!(metrics.max_lin < 1e-6, "{metrics:?}");
}

struct Broken;

impl Controller for Broken {
    fn name(&self) -> &str {
        "broken"
    }

    fn torque(&mut self, _input: &ControlInput<'_>) -> Result<DVector<f64>, DimensionError> {
        Err(DimensionError::Length {
            what: "torque",
            expected: 1,
            got: 0,
        })
    }
}

#[test]
fn benchmark_marks_failed_methods_and_round_trips_csv() {
    let (m, cmd, init) = arm(2);
    let profiles: Vec<_> = (0..2)
        .map(|k| sample_profile(k, &DisturbanceRanges::default()).unwrap())
        .collect();
    let gains = Gains::default();
    let methods = vec![
        Method::new("pd-hold", move || Box::new(PdHold::new(gains))),
        Method::new("broken", || Box::new(Broken)),
    ];
    let cfg = SimConfig {
        duration: 1.0,
        ..Default::default()
    };
    let report = benchmark(&m, &methods, &profiles, 2, &cmd, &init, &cfg);
    assert_eq!(report.rows.len(), 2);
    assert_eq!(report.cells.len(), 8);
    assert!(report.rows[0].summary.as_ref().is_some_and(|s| s.count == 4));
    assert!(report.rows[1].summary.is_none());
    assert!(report.to_markdown().contains("| broken | -- | -- | -- | -- |"));

    let back = read_table_csv(&report.to_csv()).unwrap();
    assert_eq!(back.len(), 2);
    let (a, b) = (report.rows[0].summary.as_ref().unwrap(), back[0].summary.as_ref().unwrap());
    assert_eq!((a.mean_lin, a.max_lin, a.mean_ang, a.max_ang), (b.mean_lin, b.max_lin, b.mean_ang, b.max_ang));
    assert!(back[1].summary.is_none());
}
