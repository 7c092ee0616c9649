//! End-effector stability metrics, a motion-capture style acceleration
//! estimator, and the paired multi-method benchmark.

use std::fmt::Write as _;

use nalgebra::{UnitQuaternion, Vector3, Vector6};
use rayon::prelude::*;
use thiserror::Error;

use crate::chain::ChainModel;
use crate::control::{Controller, TaskCommand};
use crate::disturbance::DisturbanceProfile;
use crate::kinematics::JointState;
use crate::sim::{rollout, RolloutLog, SimConfig};

/// Records before this much time after the first record are ignored.
pub const WARM_UP: f64 = 0.5;

/// Default MAD z-threshold for outlier removal.
pub const OUTLIER_Z: f64 = 5.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("empty rollout log")]
    EmptyLog,
    #[error("no records after the {0} s warm-up")]
    NoRecordsAfterWarmUp(f64),
    #[error("series too short: need at least 3 samples, got {0}")]
    SeriesTooShort(usize),
    #[error("sample rate must be positive")]
    BadRate,
    #[error("benchmark table: {0}")]
    Table(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityMetrics {
    pub mean_lin: f64,
    pub max_lin: f64,
    pub mean_ang: f64,
    pub max_ang: f64,
}

/// Mean and max of a norm series.
pub fn mean_max(values: impl IntoIterator<Item = f64>) -> Option<(f64, f64)> {
    let mut n = 0usize;
    let mut sum = 0.0;
    let mut max = f64::NEG_INFINITY;
    for v in values {
        n += 1;
        sum += v;
        max = max.max(v);
    }
    (n > 0).then(|| (sum / n as f64, max))
}

/// Metrics of `‖a_glob‖` (linear and angular) over the records after `warm_up`.
pub fn compute_metrics_with(log: &RolloutLog, warm_up: f64) -> Result<StabilityMetrics, EvalError> {
    let t0 = log.records.first().ok_or(EvalError::EmptyLog)?.t;
    let kept: Vec<_> = log.records.iter().filter(|r| r.t - t0 >= warm_up - 1e-12).collect();
    let lin = mean_max(kept.iter().map(|r| r.a_glob.fixed_rows::<3>(0).norm()));
    let ang = mean_max(kept.iter().map(|r| r.a_glob.fixed_rows::<3>(3).norm()));
    match (lin, ang) {
        (Some((mean_lin, max_lin)), Some((mean_ang, max_ang))) => Ok(StabilityMetrics {
            mean_lin,
            max_lin,
            mean_ang,
            max_ang,
        }),
        _ => Err(EvalError::NoRecordsAfterWarmUp(warm_up)),
    }
}

pub fn compute_metrics(log: &RolloutLog) -> Result<StabilityMetrics, EvalError> {
    compute_metrics_with(log, WARM_UP)
}

/// Mean ± sample standard deviation of each metric over rollouts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsSummary {
    pub mean_lin: (f64, f64),
    pub max_lin: (f64, f64),
    pub mean_ang: (f64, f64),
    pub max_ang: (f64, f64),
    pub count: usize,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn summarize(metrics: &[StabilityMetrics]) -> Option<MetricsSummary> {
    if metrics.is_empty() {
        return None;
    }
    let col = |f: fn(&StabilityMetrics) -> f64| mean_std(&metrics.iter().map(f).collect::<Vec<_>>());
    Some(MetricsSummary {
        mean_lin: col(|m| m.mean_lin),
        max_lin: col(|m| m.max_lin),
        mean_ang: col(|m| m.mean_ang),
        max_ang: col(|m| m.max_ang),
        count: metrics.len(),
    })
}

/// Accelerations estimated from a sampled pose trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct AccelSeries {
    /// Sample index each estimate belongs to (interior samples only).
    pub index: Vec<usize>,
    /// `[linear; angular]` per sample.
    pub accel: Vec<Vector6<f64>>,
    /// Number of values replaced by interpolation, per channel.
    pub removed: [usize; 6],
}

/// Double differentiation of poses sampled at `rate` Hz.
///
/// Linear acceleration is the central second difference of position. Angular
/// acceleration differences the rotation-vector rates `log(q_{k+1} q_k⁻¹)·f`.
/// In each channel, values more than `z` scaled median absolute deviations
/// from the median are dropped and refilled by linear interpolation.
pub fn double_diff_accel(
    positions: &[Vector3<f64>],
    orientations: &[UnitQuaternion<f64>],
    rate: f64,
    z: f64,
) -> Result<AccelSeries, EvalError> {
    if !(rate > 0.0) {
        return Err(EvalError::BadRate);
    }
    let n = positions.len().min(orientations.len());
    if n < 3 {
        return Err(EvalError::SeriesTooShort(n));
    }
    let f2 = rate * rate;
    let rates: Vec<Vector3<f64>> = (0..n - 1)
        .map(|k| crate::kinematics::orientation_error(&orientations[k + 1], &orientations[k]) * rate)
        .collect();
    let mut accel: Vec<Vector6<f64>> = (1..n - 1)
        .map(|k| {
            let lin = (positions[k + 1] - positions[k] * 2.0 + positions[k - 1]) * f2;
            let ang = (rates[k] - rates[k - 1]) * rate;
            let mut a = Vector6::zeros();
            a.fixed_rows_mut::<3>(0).copy_from(&lin);
            a.fixed_rows_mut::<3>(3).copy_from(&ang);
            a
        })
        .collect();
    let mut removed = [0usize; 6];
    for (c, count) in removed.iter_mut().enumerate() {
        let mut channel: Vec<f64> = accel.iter().map(|a| a[c]).collect();
        *count = reject_outliers(&mut channel, z);
        for (a, v) in accel.iter_mut().zip(channel) {
            a[c] = v;
        }
    }
    Ok(AccelSeries {
        index: (1..n - 1).collect(),
        accel,
        removed,
    })
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Replaces MAD outliers in place by linear interpolation; returns how many were replaced.
pub fn reject_outliers(values: &mut [f64], z: f64) -> usize {
    if values.is_empty() {
        return 0;
    }
    let med = median(&mut values.to_vec());
    let mad = median(&mut values.iter().map(|v| (v - med).abs()).collect::<Vec<_>>());
    let scale = 1.4826 * mad;
    let bad: Vec<bool> = values
        .iter()
        .map(|v| {
            let d = (v - med).abs();
            if scale > 0.0 {
                d / scale > z
            } else {
                d > 0.0
            }
        })
        .collect();
    let count = bad.iter().filter(|b| **b).count();
    if count == 0 || count == values.len() {
        return if count == values.len() { 0 } else { count };
    }
    let good: Vec<usize> = (0..values.len()).filter(|i| !bad[*i]).collect();
    for i in (0..values.len()).filter(|i| bad[*i]) {
        let next = good.partition_point(|g| *g < i);
        values[i] = match (next.checked_sub(1).map(|p| good[p]), good.get(next).copied()) {
            (Some(a), Some(b)) => {
                let w = (i - a) as f64 / (b - a) as f64;
                values[a] * (1.0 - w) + values[b] * w
            }
            (Some(a), None) => values[a],
            (None, Some(b)) => values[b],
            (None, None) => unreachable!("at least one good sample"),
        };
    }
    count
}

/// A controller constructor; every benchmark cell gets a fresh instance.
pub type ControllerFactory = Box<dyn Fn() -> Box<dyn Controller> + Sync + Send>;

pub struct Method {
    pub name: String,
    pub make: ControllerFactory,
}

impl Method {
    pub fn new(name: impl Into<String>, make: impl Fn() -> Box<dyn Controller> + Sync + Send + 'static) -> Self {
        Self {
            name: name.into(),
            make: Box::new(make),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub method: usize,
    pub profile: usize,
    pub rollout: usize,
    pub outcome: Result<StabilityMetrics, String>,
}

/// One table row; `summary` is `None` when any cell of the method failed.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub method: String,
    pub summary: Option<MetricsSummary>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub cells: Vec<CellResult>,
}

/// Seed for the observation-noise stream of one cell.
pub fn cell_seed(base: u64, profile: usize, rollout: usize) -> u64 {
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((profile as u64) << 20)
        .wrapping_add(rollout as u64)
}

/// Runs every method on the same profiles, `rollouts` times per profile.
pub fn benchmark(
    model: &ChainModel,
    methods: &[Method],
    profiles: &[DisturbanceProfile],
    rollouts: usize,
    cmd: &TaskCommand,
    initial: &JointState,
    config: &SimConfig,
) -> BenchReport {
    let jobs: Vec<(usize, usize, usize)> = (0..methods.len())
        .flat_map(|m| (0..profiles.len()).flat_map(move |p| (0..rollouts).map(move |r| (m, p, r))))
        .collect();
    let cells: Vec<CellResult> = jobs
        .par_iter()
        .map(|&(m, p, r)| {
            let cfg = SimConfig {
                seed: cell_seed(config.seed, p, r),
                ..config.clone()
            };
            let mut controller = (methods[m].make)();
            let outcome = rollout(model, controller.as_mut(), &profiles[p], cmd, initial, &cfg)
                .map_err(|e| e.to_string())
                .and_then(|log| compute_metrics(&log).map_err(|e| e.to_string()));
            CellResult {
                method: m,
                profile: p,
                rollout: r,
                outcome,
            }
        })
        .collect();
    let rows = methods
        .iter()
        .enumerate()
        .map(|(i, method)| {
            let mine: Vec<_> = cells.iter().filter(|c| c.method == i).collect();
            let ok: Option<Vec<StabilityMetrics>> = mine.iter().map(|c| c.outcome.clone().ok()).collect();
            BenchRow {
                method: method.name.clone(),
                summary: ok.and_then(|m| summarize(&m)),
            }
        })
        .collect();
    BenchReport { rows, cells }
}

pub const TABLE_COLUMNS: [&str; 9] = [
    "method", "mean_lin", "std", "max_lin", "std", "mean_ang", "std", "max_ang", "std",
];

fn row_values(s: &MetricsSummary) -> [f64; 8] {
    [
        s.mean_lin.0,
        s.mean_lin.1,
        s.max_lin.0,
        s.max_lin.1,
        s.mean_ang.0,
        s.mean_ang.1,
        s.max_ang.0,
        s.max_ang.1,
    ]
}

impl BenchReport {
    /// Markdown table: mean ± std per metric, `--` for failed methods.
    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "| Method | Mean LinAcc (m/s²) | Max LinAcc (m/s²) | Mean AngAcc (rad/s²) | Max AngAcc (rad/s²) |"
        );
        let _ = writeln!(s, "|---|---|---|---|---|");
        for row in &self.rows {
            match &row.summary {
                Some(m) => {
                    let v = row_values(m);
                    let _ = writeln!(
                        s,
                        "| {} | {:.2} ± {:.2} | {:.2} ± {:.2} | {:.2} ± {:.2} | {:.2} ± {:.2} |",
                        row.method, v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7]
                    );
                }
                None => {
                    let _ = writeln!(s, "| {} | -- | -- | -- | -- |", row.method);
                }
            }
        }
        s
    }

    /// CSV in [`TABLE_COLUMNS`] order, full precision, `--` for failed methods.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(TABLE_COLUMNS).expect("in-memory write");
        for row in &self.rows {
            let mut rec = vec![row.method.clone()];
            match &row.summary {
                Some(m) => rec.extend(row_values(m).iter().map(|v| format!("{v:?}"))),
                None => rec.extend(std::iter::repeat_n("--".to_string(), 8)),
            }
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
    }
}

/// Parses a table written by [`BenchReport::to_csv`]. Rollout counts are not stored.
pub fn read_table_csv(text: &str) -> Result<Vec<BenchRow>, EvalError> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| EvalError::Table(e.to_string()))?;
    if header.iter().ne(TABLE_COLUMNS.iter().copied()) {
        return Err(EvalError::Table("unexpected header".into()));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| EvalError::Table(e.to_string()))?;
        let method = rec.get(0).unwrap_or_default().to_string();
        let fields: Vec<&str> = rec.iter().skip(1).collect();
        let summary = if fields.iter().all(|f| *f == "--") {
            None
        } else {
            let v = fields
                .iter()
                .map(|f| f.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| EvalError::Table(e.to_string()))?;
            if v.len() != 8 {
                return Err(EvalError::Table(format!("expected 8 values, found {}", v.len())));
            }
            Some(MetricsSummary {
                mean_lin: (v[0], v[1]),
                max_lin: (v[2], v[3]),
                mean_ang: (v[4], v[5]),
                max_ang: (v[6], v[7]),
                count: 0,
            })
        };
        rows.push(BenchRow { method, summary });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::LogRecord;
    use crate::kinematics::Pose;
    use nalgebra::DVector;
    use std::f64::consts::PI;

    fn synthetic_log(accels: &[f64], dt: f64, t0: f64) -> RolloutLog {
        let records = accels
            .iter()
            .enumerate()
            .map(|(k, a)| LogRecord {
                t: t0 + k as f64 * dt,
                q: DVector::zeros(1),
                qdot: DVector::zeros(1),
                tau: DVector::zeros(1),
                ee_pose: Pose::identity(),
                a_loc: Vector6::zeros(),
                a_base: Vector6::zeros(),
                a_glob: Vector6::new(*a, 0.0, 0.0, 0.0, 0.0, *a * 2.0),
                base_twist: Vector6::zeros(),
                base_accel: Vector6::zeros(),
            })
            .collect();
        RolloutLog {
            dt,
            dof: 1,
            records,
            clipped_steps: 0,
        }
    }

    #[test]
    fn arithmetic_of_norm_series() {
        let log = synthetic_log(&[1.0, 2.0, 3.0], 0.1, 0.0);
        let m = compute_metrics_with(&log, 0.0).unwrap();
        assert_eq!((m.mean_lin, m.max_lin), (2.0, 3.0));
        assert_eq!((m.mean_ang, m.max_ang), (4.0, 6.0));
    }

    #[test]
    fn warm_up_is_relative_to_first_record() {
        let vals: Vec<f64> = (0..20).map(|k| k as f64).collect();
        let a = compute_metrics(&synthetic_log(&vals, 0.1, 0.0)).unwrap();
        let b = compute_metrics(&synthetic_log(&vals, 0.1, 123.4)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.max_lin, 19.0);
        assert!((a.mean_lin - 12.0).abs() < 1e-12);
        assert!(matches!(compute_metrics(&synthetic_log(&[], 0.1, 0.0)), Err(EvalError::EmptyLog)));
    }

    #[test]
    fn sinusoid_mean_and_max() {
        let (amp, w, dt) = (0.1, 2.0 * PI * 1.5, 1e-3);
        let vals: Vec<f64> = (0..10_501).map(|k| (w * w * amp * (w * k as f64 * dt).sin()).abs()).collect();
        let m = compute_metrics(&synthetic_log(&vals, dt, 0.0)).unwrap();
        let peak = w * w * amp;
        assert!((m.max_lin - peak).abs() < 0.02 * peak);
        assert!((m.mean_lin - 2.0 / PI * peak).abs() < 0.02 * peak);
    }

    fn sine_series(n: usize, rate: f64, amp: f64, freq: f64) -> Vec<Vector3<f64>> {
        (0..n)
            .map(|k| Vector3::new(amp * (2.0 * PI * freq * k as f64 / rate).sin(), 0.0, 0.0))
            .collect()
    }

    #[test]
    fn constant_pose_zero_accel() {
        let p = vec![Vector3::new(0.1, 0.2, 0.3); 50];
        let q = vec![UnitQuaternion::from_euler_angles(0.1, 0.2, 0.3); 50];
        let s = double_diff_accel(&p, &q, 120.0, OUTLIER_Z).unwrap();
        assert!(s.accel.iter().all(|a| a.norm() < 1e-9));
        assert!(matches!(
            double_diff_accel(&p[..2], &q[..2], 120.0, OUTLIER_Z),
            Err(EvalError::SeriesTooShort(2))
        ));
    }

    #[test]
    fn recovers_sinusoid_peak_with_and_without_spike() {
        let rate = 120.0;
        let p = sine_series(600, rate, 0.1, 1.0);
        let q = vec![UnitQuaternion::identity(); 600];
        let peak_true = (2.0 * PI).powi(2) * 0.1;
        let clean = double_diff_accel(&p, &q, rate, OUTLIER_Z).unwrap();
        let peak = clean.accel.iter().map(|a| a[0].abs()).fold(0.0, f64::max);
        assert!((peak - peak_true).abs() < 0.02 * peak_true, "{peak} vs {peak_true}");

        let mut dirty = p.clone();
        dirty[300].x += 0.02;
        let fixed = double_diff_accel(&dirty, &q, rate, OUTLIER_Z).unwrap();
        assert!(fixed.removed[0] >= 1);
        let peak2 = fixed.accel.iter().map(|a| a[0].abs()).fold(0.0, f64::max);
        assert!((peak2 - peak_true).abs() < 0.02 * peak_true);
        for (a, b) in clean.accel.iter().zip(&fixed.accel) {
            assert!((a[0] - b[0]).abs() <= 0.05 * peak_true);
        }
    }

    #[test]
    fn angular_rate_from_quaternions() {
        let rate = 120.0;
        let (amp, w) = (0.2, 2.0 * PI);
        let q: Vec<_> = (0..600)
            .map(|k| UnitQuaternion::from_axis_angle(&Vector3::z_axis(), amp * (w * k as f64 / rate).sin()))
            .collect();
        let p = vec![Vector3::zeros(); 600];
        let s = double_diff_accel(&p, &q, rate, OUTLIER_Z).unwrap();
        let peak = s.accel.iter().map(|a| a[5].abs()).fold(0.0, f64::max);
        assert!((peak - amp * w * w).abs() < 0.02 * amp * w * w);
    }

    #[test]
    fn table_csv_round_trip() {
        let report = BenchReport {
            rows: vec![
                BenchRow {
                    method: "ideal".into(),
                    summary: Some(MetricsSummary {
                        mean_lin: (1.0 / 3.0, 0.1),
                        max_lin: (2.5, 0.2),
                        mean_ang: (3.25, 0.0),
                        max_ang: (9.0, 1e-9),
                        count: 0,
                    }),
                },
                BenchRow {
                    method: "broken".into(),
                    summary: None,
                },
            ],
            cells: vec![],
        };
        assert_eq!(read_table_csv(&report.to_csv()).unwrap(), report.rows);
        assert!(report.to_markdown().contains("| broken | -- | -- | -- | -- |"));
    }
}
