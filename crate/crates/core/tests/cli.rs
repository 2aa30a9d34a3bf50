use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_collabsim");

fn run(args: &[&str], env_out: Option<&std::path::Path>) -> Output {
    let mut c = Command::new(BIN);
    c.args(args).env_remove("COLLABSIM_OUT");
    if let Some(p) = env_out {
        c.env("COLLABSIM_OUT", p);
    }
    c.output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn dense_bandwidth_prints_table_value() {
    let o = run(&["bandwidth", "--dense", "--h", "256", "--w", "256", "--c", "64"], None);
    assert!(o.status.success());
    assert_eq!(String::from_utf8_lossy(&o.stdout).trim(), "24.00");
}

#[test]
fn config_bandwidth_needs_no_simulation() {
    let o = run(&["bandwidth", "--agents", "2"], None);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.contains("voxel_prior") && out.contains("total"), "{out}");
}

#[test]
fn usage_errors_exit_2() {
    let o = run(&["run", "--no-such-flag"], None);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["frobnicate"], None);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_errors_name_the_field_and_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[sim.collab]\nk_ic = 5000\n").unwrap();
    let o = run(&["run", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("k_ic"), "{}", stderr(&o));
    // nothing was written: validation happens before any work
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);

    let o = run(&["run", "--weights", "/nonexistent/w.cpw"], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("weights"), "{}", stderr(&o));
}

#[test]
fn noise_sweep_writes_four_rows_to_env_dir() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        &["sweep", "--noise", "0,0.2,0.4,0.6", "--seeds", "1", "--name", "n", "--config", concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/small.toml")],
        Some(dir.path()),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("n_noise.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5, "{csv}");
    assert!(dir.path().join("n_noise.ledger.txt").exists());
}

#[test]
fn config_sweep_uses_the_config_name() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("s.toml");
    std::fs::write(
        &cfg,
        "name = \"strat\"\n[sim]\nseeds = 1\n[sim.grid]\nh = 32\nw = 32\nl = 4\nc = 8\n\
         [sim.scene]\nextent_m = 20.0\nsensor_range_m = 18.0\nboxes = 4\noccluded_count = 1\nmin_box_spacing_m = 6.0\n\
         [sim.collab]\nk_ic = 10\nk_ir = [40, 20, 10]\n[sweep]\nstrategy = [\"m1\", \"m3\"]\n",
    )
    .unwrap();
    let o = run(&["sweep", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()], None);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("strat.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn run_rejects_a_sweep_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("s.toml");
    std::fs::write(&cfg, "[sweep]\nagents = [1, 2]\n").unwrap();
    let o = run(&["run", "--config", cfg.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(2));
}
