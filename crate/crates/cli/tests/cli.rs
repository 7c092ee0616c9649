use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

fn eestab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eestab"))
        .args(args)
        .output()
        .expect("run eestab")
}

fn scratch(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("eestab-cli-{name}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&d);
    fs::create_dir_all(&d).unwrap();
    d
}

#[test]
fn bench_reports_one_row_per_method_with_three_rollouts() {
    let dir = scratch("bench");
    let cfg = dir.join("bench.cfg");
    fs::write(
        &cfg,
        "[experiment]\nchain = builtin:2\nprofile_count = 20\n[sim]\nduration = 0.6\n\
         noise = 1e-3, 1e-2, 1e-2, 5e-2\n[bench]\nmethods = pd-hold, task-only, comp-only, ideal\nrollouts = 3\n",
    )
    .unwrap();
    let out = dir.join("out");
    let o = eestab(&["bench", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("bench.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 4);
    assert!(rows[0].starts_with("pd-hold,"));
    let md = fs::read_to_string(out.join("bench.md")).unwrap();
    assert_eq!(md.lines().filter(|l| l.starts_with("| ")).count(), 5);
    let _ = fs::remove_dir_all(&dir);
}

#[test]
fn simulate_then_plot_writes_svg() {
    let dir = scratch("plot");
    let cfg = dir.join("sim.cfg");
    fs::write(&cfg, "[sim]\nduration = 0.5\n[simulate]\ncontroller = pd-hold\n").unwrap();
    let out = dir.join("out");
    let o = eestab(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let log = out.join("rollout.csv");
    let o = eestab(&["plot", log.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let svg = fs::read_to_string(out.join("rollout.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("polyline"));
    let _ = fs::remove_dir_all(&dir);
}

#[test]
fn config_errors_exit_2_with_one_error_line() {
    let dir = scratch("bad");
    let cfg = dir.join("bad.cfg");
    fs::write(&cfg, "[sim]\nwarp = 9\n").unwrap();
    let o = eestab(&["simulate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert_eq!(err.lines().count(), 1);
    assert!(err.starts_with("error[config]: line 2: unknown key `sim.warp`"), "{err}");

    let o = eestab(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error[usage]:"));

    let o = eestab(&["bench", "--config", cfg.with_extension("missing").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let _ = fs::remove_dir_all(&dir);
}

#[test]
fn policy_method_requires_a_checkpoint() {
    let dir = scratch("nopolicy");
    let cfg = dir.join("p.cfg");
    fs::write(&cfg, "[bench]\nmethods = pd-hold, policy\n").unwrap();
    let o = eestab(&["bench", "--config", cfg.to_str().unwrap(), "--out", dir.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("experiment.policy"));
    let _ = fs::remove_dir_all(&dir);
}
