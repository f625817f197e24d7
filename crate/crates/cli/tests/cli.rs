use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use particle_gp::systems::TrajectoryDataset;
use serde_json::Value;
use tempfile::TempDir;

fn pgp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pgp")).args(args).output().expect("failed to run pgp")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "status {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("config.toml");
    fs::write(&p, body).unwrap();
    p
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

const CS: &str = "[system]\nname = \"CS\"\n[data]\nm = 3\nl = 3\n";

/// One CS {10,3,3,0} run through simulate, train, predict and verify,
/// shared by the tests that only read its artifacts.
struct Pipeline {
    _tmp: TempDir,
    out: PathBuf,
    config: PathBuf,
    verify_code: Option<i32>,
}

fn pipeline() -> &'static Pipeline {
    static P: OnceLock<Pipeline> = OnceLock::new();
    P.get_or_init(|| {
        let tmp = TempDir::new().unwrap();
        let config = write_config(tmp.path(), CS);
        let out = tmp.path().join("out");
        let (c, o) = (config.to_str().unwrap(), out.to_str().unwrap());
        for cmd in ["simulate", "train", "predict"] {
            ok(&pgp(&["--config", c, "--out", o, cmd]));
        }
        let verify_code = pgp(&["--config", c, "--out", o, "verify"]).status.code();
        Pipeline { _tmp: tmp, out, config, verify_code }
    })
}

#[test]
fn simulate_dimensions_and_provenance() {
    let p = pipeline();
    let ds = TrajectoryDataset::load(p.out.join("dataset.json")).unwrap();
    assert_eq!((ds.d, ds.n, ds.m, ds.l), (2, 10, 3, 3));
    assert_eq!(ds.n_snapshots(), 9);
    let prov = json(&p.out.join("dataset.json.provenance.json"));
    assert_eq!(prov["command"], "simulate");
    assert_eq!(prov["config"]["system"]["name"], "CS");
    assert_eq!(prov["config"]["data"]["m"], 3);
}

#[test]
fn simulate_is_byte_reproducible() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), CS);
    let c = cfg.to_str().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    ok(&pgp(&["--config", c, "--seed", "4", "--out", a.to_str().unwrap(), "simulate"]));
    ok(&pgp(&["--config", c, "--seed", "4", "--out", b.to_str().unwrap(), "simulate"]));
    assert_eq!(fs::read(a.join("dataset.json")).unwrap(), fs::read(b.join("dataset.json")).unwrap());
    let other = tmp.path().join("c");
    ok(&pgp(&["--config", c, "--seed", "5", "--out", other.to_str().unwrap(), "simulate"]));
    assert_ne!(fs::read(a.join("dataset.json")).unwrap(), fs::read(other.join("dataset.json")).unwrap());
}

#[test]
fn simulate_records_noise() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "[system]\nname = \"FM\"\nn = 4\n[data]\nm = 1\nl = 2\nsigma = 0.05\n");
    let out = tmp.path().join("o");
    ok(&pgp(&["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "simulate"]));
    let v = json(&out.join("dataset.json"));
    assert_eq!(v["noise_sigma"], 0.05);
    for key in ["d", "N", "M", "L", "times", "noise_sigma", "Y", "Z"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
}

#[test]
fn train_outputs() {
    let p = pipeline();
    let model = json(&p.out.join("model.json"));
    // mass is not trained for a second-order system
    assert_eq!(model["hyper"]["mass"], 1.0);
    assert_eq!(model["hyper"]["train_mask"]["mass"], false);
    assert_eq!(model["config"]["system"]["name"], "CS");

    let trace = fs::read_to_string(p.out.join("trace.jsonl")).unwrap();
    let entries: Vec<Value> = trace.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert!(entries.len() >= 2);
    let nlml: Vec<f64> = entries.iter().map(|e| e["nlml"].as_f64().unwrap()).collect();
    assert!(nlml.windows(2).all(|w| w[1] <= w[0]), "trace not monotone");
    let last = entries.last().unwrap();
    let grad = last["grad_norm"].as_f64().unwrap();
    let stop = model["stop"].as_str().unwrap();
    assert!(grad < 1e-4 || stop == "budget", "grad {grad}, stop {stop}");
    assert_eq!(json(&p.out.join("trace.jsonl.provenance.json"))["command"], "train");
}

#[test]
fn predict_outputs_round_trip() {
    let p = pipeline();
    let k = json(&p.out.join("kernels.json"));
    assert_eq!(k["estimate"]["grid"].as_array().unwrap().len(), 200);
    assert_eq!(k["estimate"]["mean_a"].as_array().unwrap().len(), 200);
    assert_eq!(k["config"]["output"]["grid_size"], 200);

    let t = json(&p.out.join("trajectories.json"));
    let (t0, t1) = (t["training_interval"][0].as_f64().unwrap(), t["training_interval"][1].as_f64().unwrap());
    let trajs = t["trajectories"].as_array().unwrap();
    assert_eq!(trajs.len(), 3);
    for tr in trajs {
        // independent recomputation of the stored relative error
        let times: Vec<f64> = serde_json::from_value(tr["predicted"]["times"].clone()).unwrap();
        let pred: Vec<Vec<f64>> = serde_json::from_value(tr["predicted"]["states"].clone()).unwrap();
        let truth: Vec<Vec<f64>> = serde_json::from_value(tr["truth"]["states"].clone()).unwrap();
        let (mut num, mut den) = (0.0, 0.0);
        for ((t, a), b) in times.iter().zip(&truth).zip(&pred) {
            if *t >= t0 && *t <= t1 {
                num += a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
                den += a.iter().map(|x| x * x).sum::<f64>();
            }
        }
        let stored = tr["error_train"].as_f64().unwrap();
        assert!(((num / den).sqrt() - stored).abs() <= 1e-12 * stored.max(1e-300));
        assert!(stored < 1e-2, "trajectory error {stored}");
    }

    let uq = json(&p.out.join("uq.json"));
    let ens = &uq["ensembles"][0];
    assert_eq!(ens["n_samples"].as_u64().unwrap() + ens["failed"].as_u64().unwrap(), 20);
}

#[test]
fn verify_passes_and_schema_is_stable() {
    let p = pipeline();
    assert_eq!(p.verify_code, Some(0));
    let r = json(&p.out.join("verify.json"));
    assert_eq!(r["pass"], true);
    let names: Vec<&str> = r["checks"].as_array().unwrap().iter().map(|c| c["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["gradient", "gp_krr_equivalence", "coercivity", "kff_identity"]);
    for c in r["checks"].as_array().unwrap() {
        for key in ["value", "threshold", "pass"] {
            assert!(c.get(key).is_some());
        }
    }
}

#[test]
fn failing_check_exits_with_three() {
    let p = pipeline();
    let tmp = TempDir::new().unwrap();
    let mut body = fs::read_to_string(&p.config).unwrap();
    body.push_str("[verify]\nkrr_tol = 0.0\n");
    let cfg = write_config(tmp.path(), &body);
    let model = p.out.join("model.json");
    let out = pgp(&[
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        tmp.path().join("o").to_str().unwrap(),
        "verify",
        "--model",
        model.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn zero_residual_gives_zero_kernel_means() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "[system]\nname = \"AD\"\nn = 4\n[data]\nm = 1\nl = 3\n[trainer]\nmax_evals = 5\n[output]\ngrid_size = 17\n[predict]\nuq_samples = 0\n",
    );
    let c = cfg.to_str().unwrap();
    let out = tmp.path().join("o");
    let o = out.to_str().unwrap();
    ok(&pgp(&["--config", c, "--out", o, "simulate"]));
    // AD has no non-collective force, so zero accelerations are a zero residual
    let mut ds = TrajectoryDataset::load(out.join("dataset.json")).unwrap();
    ds.z.iter_mut().flatten().flatten().for_each(|z| *z = 0.0);
    ds.save(out.join("dataset.json")).unwrap();
    ok(&pgp(&["--config", c, "--out", o, "train"]));
    ok(&pgp(&["--config", c, "--out", o, "predict"]));
    let k = json(&out.join("kernels.json"));
    for key in ["mean_e", "mean_a"] {
        let m = k["estimate"][key].as_array().unwrap();
        assert_eq!(m.len(), 17);
        assert!(m.iter().all(|x| x.as_f64().unwrap() == 0.0));
    }
}

#[test]
fn order_selection_pipeline_learns_zero_mass() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "[system]\nname = \"OD\"\n[data]\nm = 6\nl = 3\n[predict]\nuq_samples = 0\n");
    let (c, o) = (cfg.to_str().unwrap(), tmp.path().join("o"));
    for cmd in ["simulate", "train", "predict"] {
        ok(&pgp(&["--config", c, "--out", o.to_str().unwrap(), cmd]));
    }
    let m = json(&o.join("model.json"));
    assert!(m["hyper"]["mass"].as_f64().unwrap().abs() <= 1e-2);
    let k = json(&o.join("kernels.json"));
    assert!(k["errors_e"]["linf"].as_f64().unwrap() <= 5e-2);
}

#[test]
fn bench_csv_rows_and_seeds() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "[bench]\nn = 5\nl = 3\nms = [1, 2, 3]\n");
    let out = tmp.path().join("o");
    ok(&pgp(&["--config", cfg.to_str().unwrap(), "--seed", "11", "--out", out.to_str().unwrap(), "bench"]));
    let mut rdr = csv::Reader::from_path(out.join("bench.csv")).unwrap();
    assert_eq!(
        rdr.headers().unwrap().iter().collect::<Vec<_>>(),
        ["n", "backend", "wall_ms", "value", "rel_err_vs_exact", "seed"]
    );
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 2 * 3);
    assert!(rows.iter().all(|r| &r[5] == "11"));
    let ns: Vec<usize> = rows.iter().map(|r| r[0].parse().unwrap()).collect();
    assert_eq!(ns, [30, 30, 60, 60, 90, 90]);
    assert!(out.join("bench.csv.provenance.json").exists());
}

fn write_frames(path: &Path, frames: &[Vec<f64>]) {
    let mut w = csv::Writer::from_path(path).unwrap();
    for f in frames {
        w.write_record(f.iter().map(|x| format!("{x}"))).unwrap();
    }
    w.flush().unwrap();
}

#[test]
fn ingest_linear_motion_and_bookkeeping() {
    let tmp = TempDir::new().unwrap();
    let csv_path = tmp.path().join("frames.csv");
    let dt = 0.1;
    // two agents in 2-D moving with constant velocities
    let frames: Vec<Vec<f64>> = (0..20)
        .map(|k| {
            let t = k as f64 * dt;
            vec![1.0 + 0.5 * t, -t, 2.0 - 0.3 * t, 0.25 * t]
        })
        .collect();
    write_frames(&csv_path, &frames);
    let out = tmp.path().join("o");
    ok(&pgp(&[
        "--out",
        out.to_str().unwrap(),
        "ingest",
        "--csv",
        csv_path.to_str().unwrap(),
        "--d",
        "2",
        "--window",
        "5",
        "--dt",
        "0.1",
    ]));
    let ds = TrajectoryDataset::load(out.join("dataset.json")).unwrap();
    // frames minus (window - 1) for averaging minus 2 for the difference stencil
    assert_eq!(ds.l, 20 - 4 - 2);
    assert_eq!((ds.d, ds.n, ds.m), (2, 2, 1));
    assert!(ds.z.iter().flatten().flatten().all(|a| a.abs() < 1e-9));
    let v = &ds.y[0][3][4..];
    for (got, want) in v.iter().zip([0.5, -1.0, -0.3, 0.25]) {
        assert!((got - want).abs() < 1e-9);
    }
    let prov = json(&out.join("dataset.json.provenance.json"));
    assert_eq!(prov["config"]["ingest"]["window"], 5);
}

#[test]
fn ingest_constant_frames_and_normalization() {
    let tmp = TempDir::new().unwrap();
    let csv_path = tmp.path().join("frames.csv");
    let frames = vec![vec![3.0, 7.0, -1.0]; 8];
    write_frames(&csv_path, &frames);
    let out = tmp.path().join("o");
    let cfg = write_config(
        tmp.path(),
        &format!("[ingest]\ncsv = {:?}\nd = 1\nwindow = 3\ndt = 0.5\nnormalize = true\n", csv_path.to_str().unwrap()),
    );
    ok(&pgp(&["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "ingest"]));
    let ds = TrajectoryDataset::load(out.join("dataset.json")).unwrap();
    assert_eq!(ds.l, 8 - 2 - 2);
    for s in ds.y.iter().flatten() {
        assert!(s[3..].iter().all(|v| *v == 0.0));
        assert!(s[..3].iter().all(|x| (0.0..=1.0).contains(x)));
    }
}

#[test]
fn exit_codes() {
    assert_eq!(pgp(&["--no-such-flag", "simulate"]).status.code(), Some(1));
    assert_eq!(pgp(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(pgp(&["--help"]).status.code(), Some(0));

    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), CS);
    let missing = pgp(&[
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        tmp.path().join("o").to_str().unwrap(),
        "train",
        "--dataset",
        tmp.path().join("nope.json").to_str().unwrap(),
    ]);
    assert_eq!(missing.status.code(), Some(1));
    assert_eq!(pgp(&["--config", tmp.path().join("absent.toml").to_str().unwrap(), "simulate"]).status.code(), Some(1));

    // a kernel that overflows the integrator
    let bad = write_config(
        tmp.path(),
        r#"
[system.custom]
name = "blowup"
d = 1
n = 3
mass = 1.0
force = { kind = "none" }
phi_e = { kind = "constant", value = -1e200 }
phi_a = { kind = "zero" }
ic_position = { low = -1.0, high = 1.0 }
ic_velocity = { low = 0.0, high = 0.0 }
horizon = { t0 = 0.0, t = 1.0, tf = 2.0 }
"#,
    );
    let out = pgp(&["--config", bad.to_str().unwrap(), "--out", tmp.path().join("b").to_str().unwrap(), "simulate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn accelerated_backend_flag_trains() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "[system]\nname = \"FM\"\nn = 5\n[data]\nm = 1\nl = 3\nsigma = 0.01\n[trainer]\nmax_evals = 20\n",
    );
    let (c, o) = (cfg.to_str().unwrap(), tmp.path().join("o"));
    ok(&pgp(&["--config", c, "--out", o.to_str().unwrap(), "simulate"]));
    ok(&pgp(&["--config", c, "--backend", "accel", "--out", o.to_str().unwrap(), "train"]));
    let m = json(&o.join("model.json"));
    assert_eq!(m["config"]["backend"]["kind"], "accelerated");
    assert!(m["nlml"].as_f64().unwrap().is_finite());
}
