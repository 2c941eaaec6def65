use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::Template;
use crate::msolve::SolverSettings;
use crate::net::{Activation, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Mg,
    Dnnmg,
    Export,
    Train,
}

/// Initial guess of the coarse Newton solve in the hybrid scheme.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WarmStart {
    /// The coarse state of the previous step.
    #[default]
    Previous,
    /// The corrected fine state of the previous step, injected.
    Corrected,
}

/// Fine history used to build the coarse right-hand side while exporting
/// training data.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ExportHistory {
    /// The reference fine state of the previous step.
    #[default]
    Reference,
    /// The uncorrected prolongated coarse state.
    Coarse,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowConfig {
    pub nu: f64,
    /// Mean inflow velocity.
    pub vbar: f64,
    /// Time step.
    pub k: f64,
    pub t_end: f64,
    pub alpha0: f64,
    pub delta0: f64,
    /// Smooth start-up of the inflow over `t ∈ [0, 0.2]`.
    pub ramp: bool,
    /// Gauss points per direction.
    pub quad_order: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            nu: 1e-3,
            vbar: 1.0,
            k: 0.01,
            t_end: 8.0,
            alpha0: 0.02,
            delta0: 0.1,
            ramp: true,
            quad_order: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LevelConfig {
    /// Level `L` of the coarse solve.
    pub coarse: usize,
    /// Number `J` of predicted levels.
    pub predict: usize,
}

impl Default for LevelConfig {
    fn default() -> Self {
        Self { coarse: 2, predict: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub n_hidden: usize,
    pub depth: usize,
    pub activation: Activation,
    pub model: Option<PathBuf>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            n_hidden: 128,
            depth: 8,
            activation: Activation::Relu,
            model: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub t_train: [f64; 2],
    pub t_val: [f64; 2],
    /// Dataset stem (shards are `<stem>.NNN.dmgd`).
    pub dataset: Option<PathBuf>,
    /// Trajectory file of the fine reference run.
    pub reference: Option<PathBuf>,
    pub history: ExportHistory,
    pub optimizer: TrainConfig,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            t_train: [4.0, 7.0],
            t_val: [2.0, 4.0],
            dataset: None,
            reference: None,
            history: ExportHistory::Reference,
            optimizer: TrainConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Write a VTK snapshot every this many steps (0: never).
    pub vtk_every: usize,
    /// Write a checkpoint every this many steps (0: only at the end).
    pub checkpoint_every: usize,
    /// Store every state in a trajectory file.
    pub trajectory: bool,
    /// Interval of the drag/lift summary and spectrum.
    pub window: [f64; 2],
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            vtk_every: 0,
            checkpoint_every: 0,
            trajectory: true,
            window: [2.0, 8.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub warm_start: WarmStart,
    pub geometry: Template,
    #[serde(default)]
    pub flow: FlowConfig,
    #[serde(default)]
    pub levels: LevelConfig,
    #[serde(default)]
    pub solver: SolverSettings,
    #[serde(default)]
    pub network: NetworkConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

fn invalid(key: &str, message: impl Into<String>) -> Error {
    Error::Config {
        key: key.into(),
        message: message.into(),
    }
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(s).map_err(|e| {
            let key = e
                .span()
                .map(|sp| key_at(s, sp.start))
                .unwrap_or_default();
            invalid(&key, e.message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path)?;
        Self::from_toml_str(&s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let f = &self.flow;
        if !(f.nu > 0.0) {
            return Err(invalid("flow.nu", "viscosity must be positive"));
        }
        if !(f.k > 0.0) {
            return Err(invalid("flow.k", "time step must be positive"));
        }
        if !(f.t_end >= 0.0) {
            return Err(invalid("flow.t_end", "final time must be non-negative"));
        }
        if !(f.vbar >= 0.0) {
            return Err(invalid("flow.vbar", "mean inflow velocity must be non-negative"));
        }
        if f.alpha0 < 0.0 || f.delta0 < 0.0 {
            return Err(invalid("flow.alpha0", "stabilization factors must be non-negative"));
        }
        if !(2..=6).contains(&f.quad_order) {
            return Err(invalid("flow.quad_order", "supported Gauss orders are 2 to 6"));
        }
        if self.levels.coarse < 1 {
            return Err(invalid("levels.coarse", "coarse level must be at least 1"));
        }
        if self.levels.predict > 2 {
            return Err(invalid("levels.predict", "at most 2 predicted levels"));
        }
        if self.levels.predict == 0 && self.mode != Mode::Mg {
            return Err(invalid("levels.predict", "0 predicted levels is only valid in mg mode"));
        }
        if self.network.depth == 0 || self.network.n_hidden == 0 {
            return Err(invalid("network", "depth and width must be positive"));
        }
        let t = &self.training;
        for (key, iv) in [("training.t_train", t.t_train), ("training.t_val", t.t_val)] {
            if !(iv[0] < iv[1]) {
                return Err(invalid(key, "interval must have start < end"));
            }
        }
        if !(self.output.window[0] < self.output.window[1]) {
            return Err(invalid("output.window", "interval must have start < end"));
        }
        t.optimizer.validate().map_err(|e| match e {
            Error::Config { key, message } => invalid(&format!("training.optimizer.{key}"), message),
            other => other,
        })?;
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match &self.geometry {
            Template::UnitSquare { .. } => 2,
            Template::UnitCube { .. } => 3,
            Template::Channel(c) => c.dim,
        }
    }

    /// Vertical extent of the first obstacle.
    pub fn obstacle_height(&self) -> Option<f64> {
        match &self.geometry {
            Template::Channel(c) => c.obstacles.first().map(|o| 2.0 * o.semi_axes[1]),
            _ => None,
        }
    }

    pub fn channel_height(&self) -> f64 {
        match &self.geometry {
            Template::Channel(c) => c.height,
            _ => 1.0,
        }
    }

    /// `Re = v̄ L / ν` with `L` the obstacle height.
    pub fn reynolds(&self) -> Option<f64> {
        self.obstacle_height().map(|l| self.flow.vbar * l / self.flow.nu)
    }

    pub fn n_steps(&self) -> usize {
        (self.flow.t_end / self.flow.k + 1e-9).floor() as usize
    }
}

/// Dotted key path of the table entry containing byte `pos`.
fn key_at(src: &str, pos: usize) -> String {
    let mut table = String::new();
    let mut key = String::new();
    let mut offset = 0;
    for line in src.split_inclusive('\n') {
        let t = line.trim();
        if t.starts_with('[') {
            table = t.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            key.clear();
        } else if let Some((k, _)) = t.split_once('=') {
            key = k.trim().to_string();
        }
        if offset + line.len() > pos {
            break;
        }
        offset += line.len();
    }
    match (table.is_empty(), key.is_empty()) {
        (true, _) => key,
        (false, true) => table,
        (false, false) => format!("{table}.{key}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[geometry]
kind = "channel"
dim = 2
length = 2.2
height = 0.41
obstacles = [{ kind = "ellipse", center = [0.5, 0.2], semi_axes = [0.05, 0.05] }]
"#;

    #[test]
    fn minimal_file_gets_defaults() {
        let c = RunConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(c.mode, Mode::Mg);
        assert_eq!(c.flow, FlowConfig::default());
        assert_eq!(c.levels.coarse, 2);
        let again = RunConfig::from_toml_str(&c.to_toml()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn reynolds_numbers() {
        let mut c = RunConfig::from_toml_str(MINIMAL).unwrap();
        c.flow.nu = 5e-4;
        c.flow.vbar = 1.0;
        assert!((c.reynolds().unwrap() - 200.0).abs() < 1e-9);
        if let Template::Channel(ch) = &mut c.geometry {
            ch.obstacles[0].semi_axes[1] = 0.06;
        }
        assert!((c.reynolds().unwrap() - 240.0).abs() < 1e-9);
    }

    #[test]
    fn negative_time_step_names_key() {
        let s = format!("{MINIMAL}\n[flow]\nk = -0.01\n");
        match RunConfig::from_toml_str(&s) {
            Err(Error::Config { key, .. }) => assert_eq!(key, "flow.k"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_key_rejected_with_path() {
        let s = format!("{MINIMAL}\n[flow]\nviscosity = 0.1\n");
        match RunConfig::from_toml_str(&s) {
            Err(Error::Config { key, message }) => {
                assert!(key.starts_with("flow"), "{key}");
                assert!(message.contains("viscosity"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
        let s = format!("{MINIMAL}\nsolver_typo = 1\n");
        assert!(RunConfig::from_toml_str(&s).is_err());
    }

    #[test]
    fn predict_zero_only_for_mg() {
        let s = format!("mode = \"dnnmg\"\n{MINIMAL}\n[levels]\npredict = 0\n");
        assert!(RunConfig::from_toml_str(&s).is_err());
        let s = format!("{MINIMAL}\n[levels]\npredict = 0\n");
        assert!(RunConfig::from_toml_str(&s).is_ok());
        let s = format!("{MINIMAL}\n[levels]\ncoarse = 0\n");
        assert!(RunConfig::from_toml_str(&s).is_err());
    }
}
