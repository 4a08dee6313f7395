//! End-to-end runs of the `xtfc` binary on small networks.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nalgebra::DVector;
use xtfc_cli::commands::{run_train, CHECKPOINT_FILE, GRID_FILE, LOSS_FILE, SWEEP_FILE, TRAJECTORY_FILE};
use xtfc_cli::config::CONFIG_ECHO;
use xtfc_cli::{Checkpoint, RunConfig};

const SMALL: &str = r#"
[network]
hidden = 20
[train]
num_points = 300
adam_epochs = 40
lbfgs_iters = 40
"#;

fn xtfc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xtfc"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, problem: &str) -> PathBuf {
    let path = dir.join("run.toml");
    fs::write(&path, format!("[problem]\n{problem}\n{SMALL}")).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn train_small(dir: &Path, problem: &str, extra: &[&str]) -> PathBuf {
    let cfg = write_config(dir, problem);
    let out = dir.join("train");
    let mut args = vec!["train", "--config", s(&cfg), "--out", s(&out)];
    args.extend_from_slice(extra);
    let o = xtfc(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    out
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");

    let cfg = dir.path().join("no_problem.toml");
    fs::write(&cfg, "[network]\nhidden = 4\n").unwrap();
    let o = xtfc(&["train", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("problem"), "{}", stderr(&o));

    let cfg = dir.path().join("typo.toml");
    fs::write(&cfg, "[problem]\nname = \"pendulum\"\n[train]\nepochz = 4\n").unwrap();
    let o = xtfc(&["train", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("epochz"), "{}", stderr(&o));

    let o = xtfc(&["train", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    let o = xtfc(&["train", "--config", "/nonexistent.toml", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    let o = xtfc(&["evaluate", "--checkpoint", "/nonexistent.ckpt", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    let o = xtfc(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    let o = xtfc(&["train", "--config", s(&cfg), "--out", s(&out), "--policy-mode", "sideways"]);
    assert_eq!(o.status.code(), Some(2));

    // On this domain xᵀQx overflows, so the very first loss is non-finite.
    let cfg = dir.path().join("overflow.toml");
    fs::write(
        &cfg,
        "[problem]\nname = \"double_integrator\"\ndomain_lower = [-1e200, -1e200]\ndomain_upper = [1e200, 1e200]\n\
         [network]\nhidden = 5\n[train]\nnum_points = 20\n",
    )
    .unwrap();
    let o = xtfc(&["train", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(out.join(CONFIG_ECHO).exists());
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::parse(&format!("[problem]\nname = \"nonlinear_benchmark\"\n{SMALL}"), "inline").unwrap();
    let outcome = run_train(&cfg, dir.path()).unwrap();
    let path = dir.path().join(CHECKPOINT_FILE);
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded, outcome.checkpoint);

    let bytes = fs::read(&path).unwrap();
    let again = dir.path().join("again.xtfc");
    loaded.save(&again).unwrap();
    assert_eq!(fs::read(&again).unwrap(), bytes);

    let problem = cfg.problem.build::<f64>().unwrap();
    let points = xtfc_hjb::sim::InitialConditionBox::from_domain(&problem)
        .sample::<f64>(1000, 17)
        .unwrap();
    for x in &points {
        let a = outcome.checkpoint.network.value(x).unwrap();
        let b = loaded.network.value(x).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        let ga = outcome.checkpoint.network.gradient(x).unwrap();
        let gb = loaded.network.gradient(x).unwrap();
        assert!(ga.iter().zip(gb.iter()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
}

#[test]
fn csv_outputs_parse_back_losslessly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::parse(&format!("[problem]\nname = \"double_integrator\"\n{SMALL}"), "inline").unwrap();
    let outcome = run_train(&cfg, dir.path()).unwrap();

    let (header, rows) = read_csv(&dir.path().join(LOSS_FILE));
    assert_eq!(header, ["epoch", "loss", "stage", "lr"]);
    assert_eq!(rows.len(), outcome.report.loss_history.len());
    for (row, rec) in rows.iter().zip(&outcome.report.loss_history) {
        assert_eq!(row[0].parse::<usize>().unwrap(), rec.epoch);
        assert_eq!(row[1].parse::<f64>().unwrap().to_bits(), rec.loss.to_bits());
        assert_eq!(row[2], rec.stage.name());
        let lr: f64 = row[3].parse().unwrap();
        assert!(lr.to_bits() == rec.lr.to_bits() || (lr.is_nan() && rec.lr.is_nan()));
    }

    let eval = dir.path().join("eval");
    let ckpt = dir.path().join(CHECKPOINT_FILE);
    let o = xtfc(&["evaluate", "--checkpoint", s(&ckpt), "--out", s(&eval), "--grid-points", "11"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("max_abs_error"), "{stdout}");
    let (header, rows) = read_csv(&eval.join(GRID_FILE));
    assert_eq!(header, ["x1", "x2", "v_xtfc", "v_exact", "abs_error"]);
    assert_eq!(rows.len(), 121);
    for row in &rows {
        let x = DVector::from_vec(vec![row[0].parse().unwrap(), row[1].parse().unwrap()]);
        let v: f64 = row[2].parse().unwrap();
        assert_eq!(v.to_bits(), outcome.checkpoint.network.value(&x).unwrap().to_bits());
        let exact: f64 = row[3].parse().unwrap();
        let err: f64 = row[4].parse().unwrap();
        assert_eq!(err, (v - exact).abs());
    }
}

#[test]
fn training_is_deterministic_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "name = \"detumbling\"");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for (out, threads) in [(&a, "1"), (&b, "4")] {
        let o = xtfc(&["train", "--config", s(&cfg), "--out", s(out), "--threads", threads, "--seed", "3"]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for file in [CHECKPOINT_FILE, LOSS_FILE, CONFIG_ECHO] {
        assert_eq!(fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap(), "{file}");
    }

    // The echoed config alone reproduces the run.
    let c = dir.path().join("c");
    let o = xtfc(&["train", "--config", s(&a.join(CONFIG_ECHO)), "--out", s(&c)]);
    assert!(o.status.success(), "{}", stderr(&o));
    for file in [CHECKPOINT_FILE, LOSS_FILE, CONFIG_ECHO] {
        assert_eq!(fs::read(a.join(file)).unwrap(), fs::read(c.join(file)).unwrap(), "{file}");
    }
}

#[test]
fn origin_is_an_equilibrium() {
    let dir = tempfile::tempdir().unwrap();
    let trained = train_small(dir.path(), "name = \"detumbling\"", &[]);
    let ckpt = trained.join(CHECKPOINT_FILE);
    let sim = dir.path().join("sim");
    let o = xtfc(&["simulate", "--checkpoint", s(&ckpt), "--out", s(&sim), "--x0", "0,0,0"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (_, rows) = read_csv(&sim.join(TRAJECTORY_FILE));
    assert_eq!(rows.len(), 1);
    // t, x1..x3 and the accumulated cost; the learned gradient at the
    // origin need not vanish exactly, so u is not checked.
    for k in [0, 1, 2, 3, 7] {
        assert_eq!(rows[0][k].parse::<f64>().unwrap(), 0.0, "{:?}", rows[0]);
    }

    let o = xtfc(&["simulate", "--checkpoint", s(&ckpt), "--out", s(&sim), "--x0", "0,0"]);
    assert_eq!(o.status.code(), Some(2));
    let o = xtfc(&["simulate", "--checkpoint", s(&ckpt), "--out", s(&sim), "--x0", "0,0,0", "--compare-exact"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn montecarlo_writes_every_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let trained = train_small(dir.path(), "name = \"double_integrator\"", &[]);
    let ckpt = trained.join(CHECKPOINT_FILE);
    let mc = dir.path().join("mc");
    let args = ["montecarlo", "--checkpoint", s(&ckpt), "--out", s(&mc), "--count", "7", "--seed", "2"];
    let o = xtfc(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("fraction_converged"));
    let files = fs::read_dir(mc.join("trajectories")).unwrap().count();
    assert_eq!(files, 7);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(mc.join("montecarlo.json")).unwrap()).unwrap();
    assert_eq!(report["converged"].as_array().unwrap().len(), 7);
    let f = report["fraction_converged"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&f));

    let first = fs::read(mc.join("montecarlo.json")).unwrap();
    let o = xtfc(&[&args[..], &["--threads", "1"]].concat());
    assert!(o.status.success());
    assert_eq!(fs::read(mc.join("montecarlo.json")).unwrap(), first);
}

#[test]
fn pendulum_controls_respect_the_torque_limit() {
    let dir = tempfile::tempdir().unwrap();
    let trained = train_small(dir.path(), "name = \"pendulum\"", &[]);
    let ckpt = trained.join(CHECKPOINT_FILE);
    for mode in ["constrained_paper", "constrained_clipped"] {
        let sim = dir.path().join(mode);
        let o = xtfc(&[
            "simulate", "--checkpoint", s(&ckpt), "--out", s(&sim), "--x0", "2.5,-3", "--t-max", "5", "--policy-mode",
            mode,
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        let (header, rows) = read_csv(&sim.join(TRAJECTORY_FILE));
        let u = header.iter().position(|h| h == "u1").unwrap();
        assert!(rows.len() > 1);
        for row in rows {
            let v: f64 = row[u].parse().unwrap();
            assert!(v.abs() <= 2.0 + 1e-12, "{mode}: |u| = {v}");
        }
    }
}

#[test]
fn evaluate_warns_outside_the_domain() {
    let dir = tempfile::tempdir().unwrap();
    let trained = train_small(dir.path(), "name = \"nonlinear_benchmark\"", &[]);
    let cfg = dir.path().join("wide.toml");
    fs::write(&cfg, "[output]\ngrid_points = 5\ngrid_lower = [-2.0, -2.0]\ngrid_upper = [2.0, 2.0]\n").unwrap();
    let eval = dir.path().join("eval");
    let o = xtfc(&[
        "evaluate", "--checkpoint", s(&trained.join(CHECKPOINT_FILE)), "--config", s(&cfg), "--out", s(&eval),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("beyond the training domain"), "{}", stderr(&o));
    assert_eq!(read_csv(&eval.join(GRID_FILE)).1.len(), 25);
}

#[test]
fn sweep_trains_each_width() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "name = \"double_integrator\"");
    let out = dir.path().join("sweep");
    let o = xtfc(&["sweep", "--config", s(&cfg), "--out", s(&out), "--widths", "6,9", "--parallel"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (header, rows) = read_csv(&out.join(SWEEP_FILE));
    assert_eq!(header, ["name", "neurons", "final_loss"]);
    assert_eq!(rows.iter().map(|r| r[1].as_str()).collect::<Vec<_>>(), ["6", "9"]);
    for row in &rows {
        assert!(out.join(&row[0]).join(CHECKPOINT_FILE).exists());
        assert!(row[2].parse::<f64>().unwrap().is_finite());
    }
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut count = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let cfg = RunConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            cfg.effective().unwrap();
            count += 1;
        }
    }
    assert_eq!(count, 4);
}
