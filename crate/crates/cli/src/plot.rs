//! End-effector acceleration against time, rendered to SVG.

use std::path::Path;

use eestab_core::sim::RolloutLog;
use plotters::prelude::*;

/// `(t, ‖a_lin‖, ‖a_ang‖)` of the logged world-frame EE acceleration.
pub fn accel_series(log: &RolloutLog) -> Vec<(f64, f64, f64)> {
    log.records
        .iter()
        .map(|r| {
            (
                r.t,
                r.a_glob.fixed_rows::<3>(0).norm(),
                r.a_glob.fixed_rows::<3>(3).norm(),
            )
        })
        .collect()
}

fn panel<DB: DrawingBackend>(
    area: &DrawingArea<DB, plotters::coord::Shift>,
    caption: &str,
    unit: &str,
    points: &[(f64, f64)],
    color: RGBColor,
) -> Result<(), String> {
    let t_end = points.last().map_or(1.0, |p| p.0).max(1e-9);
    let y_max = points.iter().map(|p| p.1).fold(0.0, f64::max).max(1e-9) * 1.05;
    let mut chart = ChartBuilder::on(area)
        .caption(caption, ("sans-serif", 18))
        .margin(10)
        .x_label_area_size(35)
        .y_label_area_size(55)
        .build_cartesian_2d(0.0..t_end, 0.0..y_max)
        .map_err(|e| e.to_string())?;
    chart
        .configure_mesh()
        .x_desc("t (s)")
        .y_desc(unit)
        .draw()
        .map_err(|e| e.to_string())?;
    chart
        .draw_series(LineSeries::new(points.iter().copied(), &color))
        .map_err(|e| e.to_string())?;
    Ok(())
}

/// Two stacked panels: linear and angular acceleration norms.
pub fn render_svg(log: &RolloutLog, title: &str, path: &Path) -> Result<(), String> {
    let series = accel_series(log);
    let lin: Vec<(f64, f64)> = series.iter().map(|s| (s.0, s.1)).collect();
    let ang: Vec<(f64, f64)> = series.iter().map(|s| (s.0, s.2)).collect();
    let root = SVGBackend::new(path, (900, 600)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| e.to_string())?;
    let root = root
        .titled(title, ("sans-serif", 20))
        .map_err(|e| e.to_string())?;
    let (top, bottom) = root.split_vertically(290);
    panel(&top, "EE linear acceleration", "m/s²", &lin, BLUE)?;
    panel(&bottom, "EE angular acceleration", "rad/s²", &ang, RED)?;
    root.present().map_err(|e| e.to_string())
}
