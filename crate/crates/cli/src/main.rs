use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use dnnmg::driver::{
    build_hierarchy, compare_runs, export_training_data, recompute_functionals, run_simulation, train_from_config,
    RunOptions,
};
use dnnmg::io::{write_errors, write_functionals, write_spectrum, Manifest, Mode, RunConfig};
use dnnmg::mesh::{n_dof_patch, n_geo};
use dnnmg::net::{param_count, Arch};
use dnnmg::patch_ops::PatchSet;
use dnnmg::post::{lift_spectrum, summarize_window};

#[derive(Parser)]
#[command(name = "dnnmg", version, about = "Multigrid flow solver with neural coarse-to-fine corrections")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Mesh and network sizes of a configuration.
    MeshInfo {
        #[command(flatten)]
        common: Common,
    },
    /// Pure multigrid run.
    Solve {
        #[command(flatten)]
        common: Common,
        /// Level to solve on (default: the coarse level).
        #[arg(long)]
        level: Option<usize>,
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Hybrid run with a trained model.
    Dnnmg {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Builds training and validation sets from a fine reference run.
    ExportData {
        #[command(flatten)]
        common: Common,
        /// Run directory or trajectory file of the reference run on level L+J.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Fits a model to exported data.
    Train {
        #[command(flatten)]
        common: Common,
        /// Directory holding the `train` and `val` datasets.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Recomputes the force functionals of a run and the lift spectrum.
    Functionals {
        #[command(flatten)]
        common: Common,
        /// Run directory.
        run: PathBuf,
    },
    /// Velocity and pressure errors of a run against a reference run.
    Compare {
        #[command(flatten)]
        common: Common,
        test: PathBuf,
        reference: PathBuf,
        /// Time interval of the comparison (default: the whole run).
        #[arg(long, num_args = 2, value_names = ["T0", "T1"])]
        window: Option<Vec<f64>>,
    },
}

fn load(common: &Common, mode: Option<Mode>) -> Result<RunConfig> {
    let path = common.config.as_ref().context("--config is required")?;
    let mut cfg = RunConfig::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    apply_overrides(&mut cfg, common, mode)?;
    Ok(cfg)
}

fn apply_overrides(cfg: &mut RunConfig, common: &Common, mode: Option<Mode>) -> Result<()> {
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.output_dir = o.clone();
    }
    if let Some(m) = mode {
        cfg.mode = m;
    }
    cfg.validate()?;
    Ok(())
}

/// Configuration of a finished run, taken from its manifest.
fn run_config(dir: &Path) -> Result<RunConfig> {
    let m = Manifest::read(dir).with_context(|| format!("reading the manifest of {}", dir.display()))?;
    Ok(RunConfig::from_toml_str(&m.config)?)
}

fn trajectory_of(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join("trajectory.dmgt")
    } else {
        p.to_path_buf()
    }
}

fn mesh_info(cfg: &RunConfig) -> Result<()> {
    let (l, j) = (cfg.levels.coarse, cfg.levels.predict);
    let h = build_hierarchy(cfg, l + j)?;
    let d = cfg.dim();
    println!("dimension {d}");
    for lvl in 0..=l + j {
        let m = h.level(lvl);
        println!(
            "level {lvl}: {} cells, {} nodes, {} dofs",
            m.n_cells(),
            m.n_nodes(),
            m.n_nodes() * (d + 1)
        );
    }
    if let Some(re) = cfg.reynolds() {
        println!("Reynolds number {re}");
    }
    if j > 0 {
        let p = PatchSet::<f64>::new(&h, l, j)?;
        let arch = Arch::new(p.n_in(), cfg.network.n_hidden, cfg.network.depth, p.n_out());
        println!(
            "patches {} (dofs per patch {}, geometry features {})",
            p.n_patches(),
            n_dof_patch(d, j),
            n_geo(d)
        );
        println!(
            "network {} -> {} x {} -> {}: {} parameters",
            arch.n_in,
            arch.n_hidden,
            arch.depth,
            arch.n_out,
            param_count(&arch)
        );
    }
    Ok(())
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::MeshInfo { common } => mesh_info(&load(&common, None)?),
        Command::Solve { common, level, resume } => {
            let cfg = load(&common, Some(Mode::Mg))?;
            let s = run_simulation(
                &cfg,
                RunOptions {
                    level,
                    resume,
                    ..Default::default()
                },
            )?;
            println!("{}", serde_json::to_string_pretty(&s)?);
            Ok(())
        }
        Command::Dnnmg { common, model, resume } => {
            let cfg = load(&common, Some(Mode::Dnnmg))?;
            let s = run_simulation(
                &cfg,
                RunOptions {
                    model,
                    resume,
                    ..Default::default()
                },
            )?;
            println!("{}", serde_json::to_string_pretty(&s)?);
            Ok(())
        }
        Command::ExportData { common, reference } => {
            let cfg = load(&common, Some(Mode::Export))?;
            let reference = reference
                .or_else(|| cfg.training.reference.clone())
                .context("--reference or training.reference is required")?;
            let out = cfg.training.dataset.clone().unwrap_or_else(|| cfg.output_dir.join("data"));
            let r = export_training_data(&cfg, &trajectory_of(&reference), &out)?;
            println!(
                "{} training steps, {} validation steps, {} patches per step, written to {}",
                r.train_steps,
                r.val_steps,
                r.patches,
                out.display()
            );
            Ok(())
        }
        Command::Train { common, data } => {
            let cfg = load(&common, Some(Mode::Train))?;
            let data = data
                .or_else(|| cfg.training.dataset.clone())
                .unwrap_or_else(|| cfg.output_dir.join("data"));
            let (_, report) = train_from_config(&cfg, &data, &cfg.output_dir)?;
            println!(
                "best validation loss {:.6e} at epoch {}; model written to {}",
                report.best_val_loss,
                report.best_epoch,
                cfg.output_dir.join("model.dnmg").display()
            );
            Ok(())
        }
        Command::Functionals { common, run } => {
            let mut cfg = match &common.config {
                Some(_) => load(&common, None)?,
                None => run_config(&run)?,
            };
            apply_overrides(&mut cfg, &common, None)?;
            let method = Manifest::read(&run).map(|m| m.command).unwrap_or_else(|_| "run".into());
            let series = recompute_functionals(&cfg, &trajectory_of(&run), &method)?;
            let out = common.out.clone().unwrap_or_else(|| run.clone());
            std::fs::create_dir_all(&out)?;
            write_functionals(&out.join("functionals.csv"), &series)?;
            let [w0, w1] = cfg.output.window;
            let lift: Vec<f64> = series.window(&series.lift, w0, w1).collect();
            if let Ok(spec) = lift_spectrum(&lift, cfg.flow.k) {
                write_spectrum(&out.join("spectrum.csv"), &spec)?;
            }
            match summarize_window(&series, w0, w1) {
                Ok((cd, cl)) => println!(
                    "drag min {:.6} max {:.6} mean {:.6} amp {:.6}\nlift min {:.6} max {:.6} mean {:.6} amp {:.6}",
                    cd.min, cd.max, cd.mean, cd.amp, cl.min, cl.max, cl.mean, cl.amp
                ),
                Err(_) => println!("{} samples, none in the window [{w0}, {w1}]", series.len()),
            }
            Ok(())
        }
        Command::Compare {
            common,
            test,
            reference,
            window,
        } => {
            let mut cfg = match &common.config {
                Some(_) => load(&common, None)?,
                None => run_config(&reference)?,
            };
            apply_overrides(&mut cfg, &common, None)?;
            let window = match window.as_deref() {
                Some(&[t0, t1]) => [t0, t1],
                _ => [0.0, cfg.flow.t_end],
            };
            let r = compare_runs(&cfg, &trajectory_of(&test), &trajectory_of(&reference), window)?;
            if let Some(o) = &common.out {
                std::fs::create_dir_all(o)?;
                write_errors(&o.join("errors.csv"), &r.per_step)?;
            }
            println!("E_v = {:.6e}\nE_p = {:.6e}\nsteps compared: {}", r.e_v, r.e_p, r.steps);
            Ok(())
        }
    }
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn directories_resolve_to_their_trajectory() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(trajectory_of(dir.path()), dir.path().join("trajectory.dmgt"));
        assert_eq!(trajectory_of(Path::new("x.dmgt")), PathBuf::from("x.dmgt"));
    }
}
