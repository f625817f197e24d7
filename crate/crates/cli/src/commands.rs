//! Subcommand implementations. Every artifact carries the full config.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use particle_gp::accel::accelerated_nlml;
use particle_gp::analysis::{
    coercivity_check, default_coercivity_samples, group_polarisation, kernel_errors, learned_system, trajectory_error,
    uq_ensemble, EmpiricalMeasure, GridPosterior, KernelErrors, UqEnsemble, DEFAULT_BINS,
};
use particle_gp::covfunc::{MaternParams, Smoothness};
use particle_gp::gp::{
    nlml_and_grad, posterior_kernel, Hyperparameters, KernelEstimate, KernelType, ModelSpec, Problem,
};
use particle_gp::krr::{check_equivalence, covariance_identity_residual};
use particle_gp::systems::{
    builtin_system, equidistant, generate_dataset, preprocess_frames, read_frames_csv, simulate, OdeOptions,
    SystemSpec, Trajectory, TrajectoryDataset,
};
use particle_gp::trainer::{default_hyperparameters, gradient_check, minimize_nlml, Backend, StopReason, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, IngestConfig};
use crate::Failure;

pub const DATASET_FILE: &str = "dataset.json";
pub const MODEL_FILE: &str = "model.json";
pub const TRACE_FILE: &str = "trace.jsonl";
pub const KERNELS_FILE: &str = "kernels.json";
pub const TRAJECTORIES_FILE: &str = "trajectories.json";
pub const UQ_FILE: &str = "uq.json";
pub const REPORT_FILE: &str = "verify.json";
pub const BENCH_FILE: &str = "bench.csv";

/// Sidecar recording the config for artifacts whose format is fixed
/// (datasets, JSON-lines traces, CSV).
#[derive(Debug, Serialize, Deserialize)]
pub struct Provenance {
    pub command: String,
    pub artifact: String,
    pub config: ExperimentConfig,
}

pub fn provenance_path(artifact: &Path) -> PathBuf {
    let mut name = artifact.file_name().unwrap_or_default().to_os_string();
    name.push(".provenance.json");
    artifact.with_file_name(name)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<T> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(serde_json::from_reader(std::io::BufReader::new(f))?)
}

fn write_provenance(cfg: &ExperimentConfig, command: &str, artifact: &Path) -> anyhow::Result<()> {
    let p = Provenance {
        command: command.into(),
        artifact: artifact.file_name().unwrap_or_default().to_string_lossy().into_owned(),
        config: cfg.clone(),
    };
    write_json(&provenance_path(artifact), &p)
}

fn out_dir(cfg: &ExperimentConfig) -> anyhow::Result<PathBuf> {
    let dir = cfg.output.dir.clone();
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn load_dataset(path: &Path) -> Result<TrajectoryDataset, Failure> {
    if !path.exists() {
        return Err(Failure::Usage(anyhow::anyhow!("dataset {} does not exist", path.display())));
    }
    Ok(TrajectoryDataset::load(path)?)
}

fn grid(r: f64, size: usize) -> Vec<f64> {
    equidistant(0.0, if r > 0.0 { r } else { 1.0 }, size)
}

pub fn simulate_cmd(cfg: &ExperimentConfig) -> Result<(), Failure> {
    let spec = cfg.system()?;
    let ds = generate_dataset(&spec, cfg.data.m, cfg.data.l, cfg.data.sigma, cfg.data.seed, &OdeOptions::default())?;
    let path = out_dir(cfg)?.join(DATASET_FILE);
    ds.save(&path)?;
    write_provenance(cfg, "simulate", &path)?;
    println!(
        "{}: d={} N={} M={} L={} snapshots={} sigma={} -> {}",
        spec.name,
        ds.d,
        ds.n,
        ds.m,
        ds.l,
        ds.n_snapshots(),
        ds.noise_sigma,
        path.display()
    );
    Ok(())
}

/// Trained model with everything needed to rebuild the regression problem.
#[derive(Debug, Serialize, Deserialize)]
pub struct ModelFile {
    pub config: ExperimentConfig,
    pub system: SystemSpec,
    pub model: ModelSpec,
    pub hyper: Hyperparameters,
    pub nlml: f64,
    pub stop: StopReason,
    pub restart: usize,
    pub iterations: usize,
    pub dataset: PathBuf,
}

fn initial_hyper(cfg: &ExperimentConfig, spec: &SystemSpec) -> anyhow::Result<Hyperparameters> {
    let nu_e = Smoothness::from_nu(cfg.model.nu_e)?;
    let nu_a = Smoothness::from_nu(cfg.model.nu_a)?;
    let mut h = default_hyperparameters(spec, nu_e, cfg.train_sigma());
    h.theta_e.nu = nu_e;
    h.theta_a.nu = nu_a;
    if h.theta_a.is_off() {
        h.theta_a = MaternParams::off(nu_a);
    }
    Ok(h)
}

pub fn train_cmd(cfg: &ExperimentConfig, dataset: Option<PathBuf>) -> Result<(), Failure> {
    let spec = cfg.system()?;
    let dir = out_dir(cfg)?;
    let ds_path = dataset.unwrap_or_else(|| dir.join(DATASET_FILE));
    let ds = load_dataset(&ds_path)?;
    if ds.d != spec.d || ds.n != spec.n {
        return Err(Failure::Usage(anyhow::anyhow!(
            "dataset has d={}, N={} but the system has d={}, N={}",
            ds.d,
            ds.n,
            spec.d,
            spec.n
        )));
    }
    let model = cfg.model_spec(&spec);
    let p = Problem::new(&ds, &model)?;
    let mut tc = TrainConfig::new(initial_hyper(cfg, &spec)?);
    tc.max_evals = cfg.trainer.max_evals;
    tc.restarts = cfg.trainer.restarts;
    tc.random_init = cfg.trainer.random_init;
    tc.seed = cfg.data.seed;
    let res = minimize_nlml(&p, &tc, &cfg.backend)?;

    let trace_path = dir.join(TRACE_FILE);
    let mut w = BufWriter::new(File::create(&trace_path)?);
    for e in &res.trace {
        serde_json::to_writer(&mut w, e).map_err(anyhow::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    write_provenance(cfg, "train", &trace_path)?;

    let last = res.trace.last().copied();
    let file = ModelFile {
        config: cfg.clone(),
        system: spec,
        model,
        hyper: res.hyper,
        nlml: res.nlml,
        stop: res.stop,
        restart: res.restart,
        iterations: res.trace.len().saturating_sub(1),
        dataset: ds_path,
    };
    let model_path = dir.join(MODEL_FILE);
    write_json(&model_path, &file)?;
    println!(
        "nlml={:.6e} grad_norm={:.3e} stop={:?} iterations={} alpha={:?} mass={} -> {}",
        file.nlml,
        last.map_or(f64::NAN, |e| e.grad_norm),
        file.stop,
        file.iterations,
        file.hyper.alpha,
        file.hyper.mass,
        model_path.display()
    );
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct KernelsFile {
    pub config: ExperimentConfig,
    pub estimate: KernelEstimate,
    /// Errors against the configured system's kernels on the data's `ρ̃`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub errors_e: Option<KernelErrors>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub errors_a: Option<KernelErrors>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PredictedTrajectory {
    pub initial_state: Vec<f64>,
    pub predicted: Trajectory,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truth: Option<Trajectory>,
    /// Relative error on the training interval `[t0, T]`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error_train: Option<f64>,
    /// Relative error on `[T, T_f]`, when the horizon extends past `T`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error_future: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub polarisation: Option<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TrajectoriesFile {
    pub config: ExperimentConfig,
    pub training_interval: (f64, f64),
    pub trajectories: Vec<PredictedTrajectory>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct UqFile {
    pub config: ExperimentConfig,
    pub ensembles: Vec<UqEnsemble>,
}

fn resolve_model(cfg: &ExperimentConfig, model: Option<PathBuf>) -> Result<(ModelFile, PathBuf), Failure> {
    let path = model.unwrap_or_else(|| cfg.output.dir.join(MODEL_FILE));
    if !path.exists() {
        return Err(Failure::Usage(anyhow::anyhow!("model {} does not exist", path.display())));
    }
    Ok((read_json(&path)?, path))
}

/// Recomputes the trajectory errors stored in a predictions file.
pub fn trajectory_metrics(t: &PredictedTrajectory, interval: (f64, f64)) -> anyhow::Result<(Option<f64>, Option<f64>)> {
    let Some(truth) = &t.truth else { return Ok((None, None)) };
    let train = trajectory_error(truth, &t.predicted, interval)?;
    let tf = *t.predicted.times.last().unwrap_or(&interval.1);
    let future = if tf > interval.1 { Some(trajectory_error(truth, &t.predicted, (interval.1, tf))?) } else { None };
    Ok((Some(train), future))
}

pub fn predict_cmd(cfg: &ExperimentConfig, model: Option<PathBuf>, dataset: Option<PathBuf>) -> Result<(), Failure> {
    let dir = out_dir(cfg)?;
    let (mf, _) = resolve_model(cfg, model)?;
    let ds = load_dataset(&dataset.unwrap_or_else(|| mf.dataset.clone()))?;
    let p = Problem::new(&ds, &mf.model)?;
    let g = grid(p.max_radius(), cfg.output.grid_size);
    let estimate = posterior_kernel(&p, &mf.hyper, &g)?;

    let truth_system = if cfg.predict.compare_truth { Some(mf.system.clone()) } else { None };
    let (errors_e, errors_a) = match &truth_system {
        Some(sys) => {
            let states: Vec<Vec<f64>> = ds.y.iter().flatten().cloned().collect();
            let measure = EmpiricalMeasure::from_states(ds.d, ds.n, &states, DEFAULT_BINS)?;
            let fe = |r: f64| sys.phi_e.eval(r);
            let fa = |r: f64| sys.phi_a.eval(r);
            (
                Some(kernel_errors(&g, &estimate.mean_e, &fe, &measure, KernelType::E)?),
                Some(kernel_errors(&g, &estimate.mean_a, &fa, &measure, KernelType::A)?),
            )
        }
        None => (None, None),
    };
    write_json(
        &dir.join(KERNELS_FILE),
        &KernelsFile { config: cfg.clone(), estimate: estimate.clone(), errors_e, errors_a },
    )?;

    let learned = learned_system(&mf.system, &mf.model, &mf.hyper)?;
    let posterior = GridPosterior::new(&p, &mf.hyper, &g)?;
    let (pe, pa) = posterior.mean_kernels();
    let t0 = mf.system.horizon.t0;
    let t_train = *ds.times.last().unwrap_or(&mf.system.horizon.t);
    let tf = cfg.predict.horizon.unwrap_or(mf.system.horizon.tf).max(t_train);
    let times = equidistant(t0, tf, cfg.predict.n_times.max(2));
    let interval = (t0, t_train);
    let opts = OdeOptions::default();
    let mut trajectories = Vec::with_capacity(ds.m);
    let mut ensembles = Vec::new();
    for (k, traj) in ds.y.iter().enumerate() {
        let ic: Vec<f64> = traj[0][..learned.state_len()].to_vec();
        let predicted = simulate(&learned, &pe, &pa, &ic, &times, &opts)?;
        let truth = match &truth_system {
            Some(sys) => Some(simulate(sys, &sys.phi_e, &sys.phi_a, &ic, &times, &opts)?),
            None => None,
        };
        let polarisation = if learned.is_first_order() {
            None
        } else {
            group_polarisation(&predicted, ds.d, ds.n).ok().map(|p| p.magnitude)
        };
        let mut entry = PredictedTrajectory {
            initial_state: ic.clone(),
            predicted,
            truth,
            error_train: None,
            error_future: None,
            polarisation,
        };
        (entry.error_train, entry.error_future) = trajectory_metrics(&entry, interval)?;
        if k < cfg.predict.uq_trajectories && cfg.predict.uq_samples > 0 {
            ensembles.push(uq_ensemble(
                &learned,
                &posterior,
                &ic,
                &times,
                cfg.predict.uq_samples,
                cfg.data.seed.wrapping_add(k as u64),
            )?);
        }
        trajectories.push(entry);
    }
    for (k, t) in trajectories.iter().enumerate() {
        if let Some(e) = t.error_train {
            println!("trajectory {k}: relative error {e:.3e} on [{:.3}, {:.3}]", interval.0, interval.1);
        }
    }
    write_json(
        &dir.join(TRAJECTORIES_FILE),
        &TrajectoriesFile { config: cfg.clone(), training_interval: interval, trajectories },
    )?;
    write_json(&dir.join(UQ_FILE), &UqFile { config: cfg.clone(), ensembles })?;
    println!("grid points={} -> {}", g.len(), dir.display());
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct VerifyReport {
    pub config: ExperimentConfig,
    pub checks: Vec<Check>,
    pub pass: bool,
}

pub fn verify_cmd(cfg: &ExperimentConfig, model: Option<PathBuf>, dataset: Option<PathBuf>) -> Result<(), Failure> {
    let dir = out_dir(cfg)?;
    let (mf, _) = resolve_model(cfg, model)?;
    let ds = load_dataset(&dataset.unwrap_or_else(|| mf.dataset.clone()))?;
    let p = Problem::new(&ds, &mf.model)?;
    let v = &cfg.verify;
    let mut checks = Vec::new();

    // Noise-free optima are nearly singular and finite differences of the
    // NLML there are dominated by round-off, so both comparisons run with a
    // noise floor.
    let mut floored = mf.hyper.clone();
    let floor_note = (floored.sigma < v.krr_sigma).then(|| {
        floored.sigma = v.krr_sigma;
        format!("evaluated at sigma = {}", v.krr_sigma)
    });
    let gc = gradient_check(&p, &floored, 1e-2)?;
    let note = [floor_note.clone(), worst_component(&gc)].into_iter().flatten().collect::<Vec<_>>().join("; ");
    checks.push(Check {
        name: "gradient".into(),
        value: gc.max_rel_err,
        threshold: v.gradient_tol,
        pass: gc.max_rel_err <= v.gradient_tol,
        note: Some(note),
    });

    if mf.model.agents.is_some() {
        checks.push(Check {
            name: "gp_krr_equivalence".into(),
            value: f64::NAN,
            threshold: v.krr_tol,
            pass: true,
            note: Some("skipped: trained on an agent subset".into()),
        });
    } else {
        let g = grid(p.max_radius(), v.krr_grid_size.max(2));
        let eq = check_equivalence(&ds, &mf.model, &floored, &g)?;
        let note = floor_note;
        checks.push(Check {
            name: "gp_krr_equivalence".into(),
            value: eq.max_dev(),
            threshold: v.krr_tol,
            pass: eq.max_dev() <= v.krr_tol,
            note,
        });
    }

    let n_mc = v.coercivity_samples.unwrap_or_else(|| default_coercivity_samples(mf.system.n));
    let g = grid(p.max_radius(), cfg.output.grid_size);
    let est = posterior_kernel(&p, &mf.hyper, &g)?;
    let fe = |r: f64| particle_gp::systems::interpolate(&g, &est.mean_e, r);
    let fa = |r: f64| particle_gp::systems::interpolate(&g, &est.mean_a, r);
    let c = coercivity_check(&fe, &fa, &mf.system, n_mc, cfg.data.seed)?;
    let bound = 1.0 - 3.0 * c.ratio_se;
    checks.push(Check {
        name: "coercivity".into(),
        value: c.ratio,
        threshold: bound,
        pass: c.ratio.is_nan() && c.lhs == 0.0 || c.ratio >= bound,
        note: Some(format!("lhs {:.6e}, rhs {:.6e}, se {:.3e}, samples {}", c.lhs, c.rhs, c.ratio_se, c.samples)),
    });

    let res = covariance_identity_residual(&ds, &mf.hyper.theta_e, &mf.hyper.theta_a)?;
    checks.push(Check {
        name: "kff_identity".into(),
        value: res,
        threshold: v.identity_tol,
        pass: res <= v.identity_tol,
        note: None,
    });

    let pass = checks.iter().all(|c| c.pass);
    for c in &checks {
        println!(
            "{:<20} {} value={:.3e} threshold={:.3e}{}",
            c.name,
            if c.pass { "PASS" } else { "FAIL" },
            c.value,
            c.threshold,
            c.note.as_deref().map(|n| format!(" ({n})")).unwrap_or_default()
        );
    }
    write_json(&dir.join(REPORT_FILE), &VerifyReport { config: cfg.clone(), checks, pass })?;
    if pass {
        Ok(())
    } else {
        Err(Failure::Verification)
    }
}

fn worst_component(gc: &particle_gp::trainer::GradientCheck) -> Option<String> {
    let (k, _) = gc
        .analytic
        .iter()
        .zip(&gc.numeric)
        .map(|(a, n)| (a - n).abs() / n.abs().max(1e-2))
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(&b.1))?;
    Some(format!("worst component {k}: analytic {:.6e}, numeric {:.6e}", gc.analytic[k], gc.numeric[k]))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchRow {
    pub n: usize,
    pub backend: String,
    pub wall_ms: f64,
    pub value: f64,
    pub rel_err_vs_exact: f64,
    pub seed: u64,
}

/// Times one exact and one accelerated NLML-with-gradient evaluation per
/// sweep point (best of `repeats`).
pub fn bench_rows(cfg: &ExperimentConfig) -> Result<Vec<BenchRow>, Failure> {
    let b = &cfg.bench;
    let mut spec = builtin_system(&b.system)?;
    spec.n = b.n;
    let accel = match cfg.backend {
        Backend::Accelerated(a) => a,
        Backend::Exact => Default::default(),
    };
    let seed = cfg.data.seed;
    let mut rows = Vec::with_capacity(2 * b.ms.len());
    for &m in &b.ms {
        let ds = generate_dataset(&spec, m, b.l, b.sigma, seed, &OdeOptions::default())?;
        let p = Problem::new(&ds, &ModelSpec::for_system(&spec))?;
        let mut h = default_hyperparameters(&spec, Smoothness::ThreeHalves, true);
        h.alpha = spec.force.params();
        h.sigma = b.sigma.max(1e-2);
        let n = p.n_rows();
        let (mut t_exact, mut t_accel) = (f64::INFINITY, f64::INFINITY);
        let (mut v_exact, mut v_accel) = (f64::NAN, f64::NAN);
        for _ in 0..b.repeats.max(1) {
            let t = Instant::now();
            v_exact = nlml_and_grad(&p, &h)?.0;
            t_exact = t_exact.min(t.elapsed().as_secs_f64() * 1e3);
            let t = Instant::now();
            v_accel = accelerated_nlml(&p, &h, &accel)?.0;
            t_accel = t_accel.min(t.elapsed().as_secs_f64() * 1e3);
        }
        rows.push(BenchRow {
            n,
            backend: "exact".into(),
            wall_ms: t_exact,
            value: v_exact,
            rel_err_vs_exact: 0.0,
            seed,
        });
        rows.push(BenchRow {
            n,
            backend: "accel".into(),
            wall_ms: t_accel,
            value: v_accel,
            rel_err_vs_exact: (v_accel - v_exact).abs() / v_exact.abs().max(f64::MIN_POSITIVE),
            seed,
        });
    }
    Ok(rows)
}

pub fn bench_cmd(cfg: &ExperimentConfig) -> Result<(), Failure> {
    let rows = bench_rows(cfg)?;
    let path = out_dir(cfg)?.join(BENCH_FILE);
    let mut w = csv::Writer::from_path(&path).map_err(anyhow::Error::from)?;
    for r in &rows {
        w.serialize(r).map_err(anyhow::Error::from)?;
        println!(
            "n={:<6} {:<6} {:>10.1} ms value={:.6e} rel_err={:.2e}",
            r.n, r.backend, r.wall_ms, r.value, r.rel_err_vs_exact
        );
    }
    w.flush()?;
    write_provenance(cfg, "bench", &path)?;
    Ok(())
}

pub fn ingest_cmd(cfg: &ExperimentConfig, ing: &IngestConfig) -> Result<(), Failure> {
    if !ing.csv.exists() {
        return Err(Failure::Usage(anyhow::anyhow!("{} does not exist", ing.csv.display())));
    }
    let frames = read_frames_csv(File::open(&ing.csv)?, ing.d, ing.normalize)?;
    let ds = preprocess_frames(&frames, ing.d, ing.window, ing.dt)?;
    let path = out_dir(cfg)?.join(DATASET_FILE);
    ds.save(&path)?;
    let mut cfg = cfg.clone();
    cfg.ingest = Some(ing.clone());
    write_provenance(&cfg, "ingest", &path)?;
    println!("frames={} -> L={} (d={}, N={}) -> {}", frames.len(), ds.l, ds.d, ds.n, path.display());
    Ok(())
}
