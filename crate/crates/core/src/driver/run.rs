use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{StepReport, TimeLoop, Timings};
use crate::assembly::FlowParams;
use crate::error::{Error, Result};
use crate::io::{
    load_model, read_dataset, save_model, save_vtk, write_functionals, write_spectrum, Checkpoint, DatasetLayout,
    DatasetStats, DatasetWriter, ExportHistory, Manifest, Mode, ModelMeta, RunConfig, TrajectoryHeader,
    TrajectoryReader, TrajectoryWriter,
};
use crate::mesh::{build_template_mesh, MeshHierarchy};
use crate::net::{train, Arch, Mlp, TrainReport};
use crate::patch_ops::FEATURE_LAYOUT_VERSION;
use crate::post::{
    block_norms, coefficients, lift_spectrum, summarize_window, time_integrated_error, FunctionalSeries, Summary,
};
use crate::space::{InflowProfile, TransferChain};

pub fn build_hierarchy(cfg: &RunConfig, top: usize) -> Result<MeshHierarchy<f64>> {
    Ok(build_template_mesh::<f64>(&cfg.geometry)?.refine_to(top))
}

/// Flow parameters of a configuration.
pub fn flow_params(cfg: &RunConfig) -> FlowParams<f64> {
    FlowParams {
        nu: cfg.flow.nu,
        k: cfg.flow.k,
        alpha0: cfg.flow.alpha0,
        delta0: cfg.flow.delta0,
    }
}

/// Inflow boundary data of a configuration.
pub fn inflow_profile(cfg: &RunConfig) -> InflowProfile {
    InflowProfile {
        dim: cfg.dim(),
        vbar: cfg.flow.vbar,
        height: cfg.channel_height(),
        ramp: cfg.flow.ramp,
    }
}

/// Loads the model named in the configuration and checks it against the
/// patch layout.
fn load_checked_model(cfg: &RunConfig, path: &Path) -> Result<Mlp<f64>> {
    let (model, meta) = load_model::<f64>(path)?;
    let want = ModelMeta {
        dim: cfg.dim() as u32,
        j: cfg.levels.predict as u32,
        layout_version: FEATURE_LAYOUT_VERSION,
    };
    if meta != want {
        return Err(Error::ModelIncompatible(format!(
            "model trained for dim {} / J {} / layout {}, run uses dim {} / J {} / layout {}",
            meta.dim, meta.j, meta.layout_version, want.dim, want.j, want.layout_version
        )));
    }
    Ok(model)
}

/// Options of [`run_simulation`] beyond the configuration file.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Level of a pure multigrid run (default: the coarse level).
    pub level: Option<usize>,
    /// Model file overriding the configured one.
    pub model: Option<PathBuf>,
    /// Checkpoint to resume from.
    pub resume: Option<PathBuf>,
    /// Keep the model in memory instead of loading it.
    pub model_in_memory: Option<Mlp<f64>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub method: String,
    pub level: usize,
    pub steps: usize,
    pub reynolds: Option<f64>,
    pub drag: Option<Summary>,
    pub lift: Option<Summary>,
    /// Dominant lift frequency in the summary window.
    pub lift_frequency: Option<f64>,
    pub timings: Timings,
    pub network_evaluations: usize,
    pub mean_newton_iterations: f64,
    pub mean_linear_iterations: f64,
    #[serde(skip)]
    pub functionals: FunctionalSeries,
}

#[derive(Serialize)]
struct StepRow {
    step: usize,
    t: f64,
    newton_iterations: usize,
    linear_iterations: usize,
    jacobian_assemblies: usize,
    final_residual: f64,
    seconds: f64,
}

/// Runs a pure multigrid or hybrid simulation and writes its artifacts
/// into the configured output directory.
pub fn run_simulation(cfg: &RunConfig, opts: RunOptions) -> Result<RunSummary> {
    let out = cfg.output_dir.clone();
    std::fs::create_dir_all(&out)?;
    let mut manifest = Manifest::new(
        match cfg.mode {
            Mode::Dnnmg => "dnnmg",
            _ => "solve",
        },
        cfg.seed,
        cfg.to_toml(),
    );
    manifest.reynolds = cfg.reynolds();
    manifest.write(&out)?;

    let (method, mut tl) = match cfg.mode {
        Mode::Dnnmg => {
            let (l, j) = (cfg.levels.coarse, cfg.levels.predict);
            let model = match (opts.model_in_memory, opts.model.as_ref().or(cfg.network.model.as_ref())) {
                (Some(m), _) => m,
                (None, Some(p)) => {
                    manifest.add_input(p)?;
                    load_checked_model(cfg, p)?
                }
                (None, None) => return Err(Error::InvalidInput("hybrid run needs a model (network.model)".into())),
            };
            let h = build_hierarchy(cfg, l + j)?;
            let tl = TimeLoop::new_dnnmg(
                &h,
                l,
                j,
                flow_params(cfg),
                cfg.flow.quad_order,
                cfg.solver,
                inflow_profile(cfg),
                Some(model),
            )?;
            ("dnnmg", tl)
        }
        _ => {
            let level = opts.level.unwrap_or(cfg.levels.coarse);
            let h = build_hierarchy(cfg, level)?;
            let tl = TimeLoop::new_mg(&h, level, flow_params(cfg), cfg.flow.quad_order, cfg.solver, inflow_profile(cfg))?;
            ("mg", tl)
        }
    };
    tl.warm_start = cfg.warm_start;
    if let Some(p) = &opts.resume {
        manifest.add_input(p)?;
        tl.restore(&Checkpoint::read(p)?)?;
    }
    let level = tl.output_level();
    let dim = cfg.dim();
    let mut series = FunctionalSeries::new(method, level);
    let mut traj = if cfg.output.trajectory {
        let mut w = TrajectoryWriter::create(
            &out.join("trajectory.dmgt"),
            TrajectoryHeader {
                dim: dim as u32,
                level: level as u32,
                n_dofs: tl.output_state().len() as u64,
            },
        )?;
        w.push(tl.step as u64, tl.time(), tl.output_state())?;
        manifest.outputs.push("trajectory.dmgt".into());
        Some(w)
    } else {
        None
    };
    let write_vtk = |tl: &TimeLoop<f64>| -> Result<()> {
        let name = format!("state_{:05}.vtk", tl.step);
        save_vtk(&out.join(name), tl.output_space(), tl.output_state(), &format!("{method} t={}", tl.time()))
    };
    if cfg.output.vtk_every > 0 {
        write_vtk(&tl)?;
    }
    let mut steps_csv = csv::Writer::from_path(out.join("steps.csv")).map_err(|e| Error::Format(e.to_string()))?;
    let n_steps = cfg.n_steps();
    let obstacle = cfg.obstacle_height();
    let (mut newton_sum, mut linear_sum) = (0usize, 0usize);
    let first = tl.step;
    while tl.step < n_steps {
        let rep: StepReport = tl.advance()?;
        newton_sum += rep.solver.newton.iterations;
        linear_sum += rep.solver.newton.linear_iterations;
        steps_csv
            .serialize(StepRow {
                step: rep.step,
                t: rep.time,
                newton_iterations: rep.solver.newton.iterations,
                linear_iterations: rep.solver.newton.linear_iterations,
                jacobian_assemblies: rep.solver.newton.jacobian_assemblies,
                final_residual: rep.solver.newton.residuals.last().copied().unwrap_or(0.0),
                seconds: rep.solver.seconds,
            })
            .map_err(|e| Error::Format(e.to_string()))?;
        if let (Some(f), Some(d)) = (rep.force, obstacle) {
            let (cd, cl) = coefficients(f, dim, cfg.flow.vbar, d, cfg.channel_height());
            series.push(rep.time, cd, cl)?;
        }
        if let Some(w) = traj.as_mut() {
            w.push(tl.step as u64, tl.time(), tl.output_state())?;
        }
        if cfg.output.vtk_every > 0 && tl.step % cfg.output.vtk_every == 0 {
            write_vtk(&tl)?;
        }
        if cfg.output.checkpoint_every > 0 && tl.step % cfg.output.checkpoint_every == 0 {
            tl.checkpoint().write(&out.join(format!("checkpoint_{:05}.dmgc", tl.step)))?;
        }
    }
    steps_csv.flush()?;
    if let Some(w) = traj {
        w.finish()?;
    }
    tl.checkpoint().write(&out.join("checkpoint.dmgc"))?;
    write_functionals(&out.join("functionals.csv"), &series)?;
    manifest.outputs.extend(["steps.csv", "checkpoint.dmgc", "functionals.csv"].map(String::from));

    let [w0, w1] = cfg.output.window;
    let summaries = summarize_window(&series, w0, w1).ok();
    let lift_window: Vec<f64> = series.window(&series.lift, w0, w1).collect();
    let mut lift_frequency = None;
    if let Ok(spec) = lift_spectrum(&lift_window, cfg.flow.k) {
        write_spectrum(&out.join("spectrum.csv"), &spec)?;
        manifest.outputs.push("spectrum.csv".into());
        lift_frequency = spec
            .iter()
            .skip(1)
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .map(|b| b.0);
    }
    let taken = (tl.step - first).max(1) as f64;
    let summary = RunSummary {
        method: method.into(),
        level,
        steps: tl.step,
        reynolds: cfg.reynolds(),
        drag: summaries.map(|s| s.0),
        lift: summaries.map(|s| s.1),
        lift_frequency,
        timings: tl.timings,
        network_evaluations: tl.network_evaluations,
        mean_newton_iterations: newton_sum as f64 / taken,
        mean_linear_iterations: linear_sum as f64 / newton_sum.max(1) as f64,
        functionals: series,
    };
    std::fs::write(
        out.join("summary.json"),
        serde_json::to_string_pretty(&summary).expect("summary serializes"),
    )?;
    manifest.outputs.push("summary.json".into());
    manifest.partial = false;
    manifest.write(&out)?;
    Ok(summary)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExportReport {
    pub train_steps: usize,
    pub val_steps: usize,
    pub patches: usize,
    pub train_stats: DatasetStats,
    pub val_stats: DatasetStats,
    pub train_stem: PathBuf,
    pub val_stem: PathBuf,
}

fn in_interval(t: f64, iv: [f64; 2], k: f64) -> bool {
    let eps = 1e-6 * k;
    t > iv[0] + eps && t <= iv[1] + eps
}

/// Builds training and validation sets from a fine reference trajectory
/// on level `L+J`: every step in the configured intervals runs the coarse
/// machinery (coarse solve, prolongation, fine residual) and is paired
/// with the reference velocity defect.
pub fn export_training_data(cfg: &RunConfig, reference: &Path, out_dir: &Path) -> Result<ExportReport> {
    let (l, j) = (cfg.levels.coarse, cfg.levels.predict);
    let mut reader = TrajectoryReader::open(reference)?;
    if reader.header.level as usize != l + j || reader.header.dim as usize != cfg.dim() {
        return Err(Error::InvalidInput(format!(
            "reference run is on level {} in {}D, export needs level {} in {}D",
            reader.header.level,
            reader.header.dim,
            l + j,
            cfg.dim()
        )));
    }
    let h = build_hierarchy(cfg, l + j)?;
    let mut tl = TimeLoop::new_dnnmg(&h, l, j, flow_params(cfg), cfg.flow.quad_order, cfg.solver, inflow_profile(cfg), None)?;
    tl.warm_start = cfg.warm_start;
    let layout = DatasetLayout::new(cfg.dim(), j);
    std::fs::create_dir_all(out_dir)?;
    let train_stem = out_dir.join("train");
    let val_stem = out_dir.join("val");
    let mut train_w = DatasetWriter::create(&train_stem, layout)?;
    let mut val_w = DatasetWriter::create(&val_stem, layout)?;
    let (mut n_train, mut n_val) = (0, 0);
    let k = cfg.flow.k;
    let last = cfg.training.t_train[1].max(cfg.training.t_val[1]);
    let history = cfg.training.history;

    let mut prev = match reader.next_record()? {
        Some((0, _, x)) => x,
        _ => return Err(Error::InvalidInput("reference trajectory must start at step 0".into())),
    };
    while let Some((step, t, cur)) = reader.next_record()? {
        if (t - step as f64 * k).abs() > 1e-9 * (1.0 + t) {
            return Err(Error::InvalidInput(format!(
                "reference time {t} at step {step} does not match time step {k}"
            )));
        }
        if t > last + 1e-6 * k {
            break;
        }
        let is_train = in_interval(t, cfg.training.t_train, k);
        let is_val = in_interval(t, cfg.training.t_val, k);
        let run_step = is_train || is_val || history == ExportHistory::Coarse;
        if run_step {
            if history == ExportHistory::Reference {
                tl.step = step as usize - 1;
                tl.force_history(&prev, true)?;
            }
            tl.advance()?;
            if is_train || is_val {
                let f = tl.fine.as_ref().expect("hybrid loop");
                let inputs = f.patches.network_input(&f.x_tilde, &f.residual)?;
                let defect: Vec<f64> = cur.iter().zip(&f.x_tilde).map(|(a, b)| a - b).collect();
                let targets = f.patches.velocity_rows(&defect)?;
                if is_train {
                    train_w.push(inputs.view(), targets.view())?;
                    n_train += 1;
                } else {
                    val_w.push(inputs.view(), targets.view())?;
                    n_val += 1;
                }
            }
        }
        prev = cur;
    }
    let patches = tl.fine.as_ref().map(|f| f.patches.n_patches()).unwrap_or(0);
    Ok(ExportReport {
        train_steps: n_train,
        val_steps: n_val,
        patches,
        train_stats: train_w.finish()?,
        val_stats: val_w.finish()?,
        train_stem,
        val_stem,
    })
}

/// Trains a network on exported data; writes `model.dnmg` and the loss
/// curves into `out_dir`.
pub fn train_from_config(cfg: &RunConfig, data_dir: &Path, out_dir: &Path) -> Result<(Mlp<f64>, TrainReport)> {
    let (lt, train_set) = read_dataset(&data_dir.join("train"))?;
    let (lv, val_set) = read_dataset(&data_dir.join("val"))?;
    let want = DatasetLayout::new(cfg.dim(), cfg.levels.predict);
    for (name, l) in [("training", lt), ("validation", lv)] {
        if l != want {
            return Err(Error::ModelIncompatible(format!(
                "{name} data has input width {} and output width {}, the configured network (dim {}, J {}) needs {} and {}",
                l.n_in(),
                l.n_out(),
                want.dim,
                want.j,
                want.n_in(),
                want.n_out()
            )));
        }
    }
    let arch = Arch::new(want.n_in(), cfg.network.n_hidden, cfg.network.depth, want.n_out());
    let mut model = Mlp::new(arch, cfg.network.activation, cfg.seed);
    let mut tc = cfg.training.optimizer.clone();
    tc.seed = cfg.seed;
    let report = train(&mut model, &train_set, &val_set, &tc)?;
    std::fs::create_dir_all(out_dir)?;
    save_model(
        &out_dir.join("model.dnmg"),
        &model,
        ModelMeta {
            dim: want.dim as u32,
            j: want.j as u32,
            layout_version: FEATURE_LAYOUT_VERSION,
        },
    )?;
    let mut w = csv::Writer::from_path(out_dir.join("loss.csv")).map_err(|e| Error::Format(e.to_string()))?;
    w.write_record(["epoch", "train_loss", "val_loss"]).map_err(|e| Error::Format(e.to_string()))?;
    for (e, (a, b)) in report.train_loss.iter().zip(&report.val_loss).enumerate() {
        w.serialize((e, a, b)).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush()?;
    std::fs::write(
        out_dir.join("train_report.json"),
        serde_json::to_string_pretty(&report).expect("report serializes"),
    )?;
    Ok((model, report))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub level: usize,
    pub steps: usize,
    /// Time-integrated relative velocity error.
    pub e_v: f64,
    pub e_p: f64,
    /// Per step `(t, e_v, e_p)`.
    pub per_step: Vec<(f64, f64, f64)>,
}

/// Errors of the trajectory `test` against `reference` over `window`; a
/// coarser test trajectory is prolongated to the reference level.
pub fn compare_runs(cfg: &RunConfig, test: &Path, reference: &Path, window: [f64; 2]) -> Result<CompareReport> {
    let mut a = TrajectoryReader::open(test)?;
    let mut r = TrajectoryReader::open(reference)?;
    let (la, lr) = (a.header.level as usize, r.header.level as usize);
    if la > lr || a.header.dim != r.header.dim {
        return Err(Error::InvalidInput(format!(
            "test trajectory on level {la} cannot be compared with reference on level {lr}"
        )));
    }
    let chain = if la < lr {
        let h = build_hierarchy(cfg, lr)?;
        Some(TransferChain::new(&h, la, lr))
    } else {
        None
    };
    let b = a.header.dim as usize + 1;
    let mut report = CompareReport {
        level: lr,
        ..Default::default()
    };
    let (mut dv, mut rv, mut dp, mut rp) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let k = cfg.flow.k;
    loop {
        let (Some(x), Some(y)) = (a.next_record()?, r.next_record()?) else {
            break;
        };
        if x.0 != y.0 {
            return Err(Error::InvalidInput(format!("step mismatch: {} vs {}", x.0, y.0)));
        }
        if !in_interval(y.1, window, k) && (y.1 - window[0]).abs() > 1e-6 * k {
            continue;
        }
        let xt = match &chain {
            Some(c) => c.prolongate(&x.2, b),
            None => x.2,
        };
        let (a2, r2, p2, q2) = block_norms(&xt, &y.2, b - 1);
        if r2 > 0.0 {
            report.per_step.push((y.1, (a2 / r2).sqrt(), if q2 > 0.0 { (p2 / q2).sqrt() } else { 0.0 }));
        }
        dv.push(a2.sqrt());
        rv.push(r2.sqrt());
        dp.push(p2.sqrt());
        rp.push(q2.sqrt());
    }
    report.steps = dv.len();
    report.e_v = time_integrated_error(&dv, &rv, k)?;
    report.e_p = time_integrated_error(&dp, &rp, k).unwrap_or(0.0);
    Ok(report)
}

/// Recomputes the force functionals and the lift spectrum from a stored trajectory.
pub fn recompute_functionals(cfg: &RunConfig, trajectory: &Path, method: &str) -> Result<FunctionalSeries> {
    let mut reader = TrajectoryReader::open(trajectory)?;
    let level = reader.header.level as usize;
    let h = build_hierarchy(cfg, level)?;
    let space = crate::space::FeSpace::new(h.level(level), level, cfg.flow.quad_order);
    let d = cfg
        .obstacle_height()
        .ok_or_else(|| Error::InvalidInput("functionals need an obstacle".into()))?;
    let nu = cfg.flow.nu;
    let mut series = FunctionalSeries::new(method, level);
    let mut prev: Option<(f64, Vec<f64>)> = None;
    while let Some((_, t, x)) = reader.next_record()? {
        if let Some((t_prev, xp)) = &prev {
            let terms = crate::post::ForceTerms {
                forcing: None,
                previous: Some((xp.as_slice(), t - t_prev)),
            };
            let f = crate::post::obstacle_force(&space, &x, nu, &terms)?;
            let (cd, cl) = coefficients(f, cfg.dim(), cfg.flow.vbar, d, cfg.channel_height());
            series.push(t, cd, cl)?;
        }
        prev = Some((t, x));
    }
    Ok(series)
}
