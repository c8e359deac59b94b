//! Configuration-driven experiment runner behind the `odetwin` binary.
//!
//! Every command reads one JSON config, writes its artifacts into an output
//! directory and records their SHA-256 in `manifest.json`. Inputs produced by
//! earlier commands are checked against the manifest before use. Artifacts
//! never contain timestamps; those live in the manifest only.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analogue::{
    map_weights_with_ranges, noise_sweep, sweep_csv, ActivationRanges, CrossbarProgram, HardwareSpec, HwField,
    HwInferenceSpec, NoiseSweepSpec, SweepCell,
};
use crate::baselines::{drive_inputs, resnet_rollout, train_cell_lorenz96, train_resnet_hp, CellKind};
use crate::dynamics::{generate_reference, Lorenz96Field, Lorenz96Params, ReferenceGrid, System, Waveform, WaveformKind};
use crate::error::Error;
use crate::eval::{error_growth, free_run, restart_forecast, score_series, ErrorGrowth, SeriesScores, SplitScores};
use crate::metrics::{l1_error, mle_flow, MleEstimate, MleFlowSpec};
use crate::nn::{FieldInput, MlpParams, NetShape, NeuralField};
use crate::odesolve::{SolverSpec, VectorField};
use crate::par::{self, Parallelism};
use crate::projection::{check_quoted, hidden_sweep, project, rows_csv, ProjectionConstants, ProjectionRow, QuotedCheck};
use crate::rng::derive_seed;
use crate::training::{train_hp_twin, train_lorenz96_twin, HpTwinSetup, Lorenz96TwinSetup, TrainConfig, TrainReport};
use crate::trajectory::{fmt_f64, Trajectory};

pub const MANIFEST: &str = "manifest.json";
pub const REFERENCE: &str = "reference.csv";
pub const TWIN_PARAMS: &str = "twin_params.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Hp,
    Lorenz96,
}

/// Lorenz96 train/test split, shooting windows and evaluation restarts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowConfig {
    pub train_points: usize,
    pub segment_len: usize,
    pub eval_horizon: usize,
    pub cyclic_shift: bool,
    #[serde(default)]
    pub weight_noise: f64,
}

/// [`HardwareSpec`] without its seed, which derives from the global seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardwareConfig {
    pub g_min: f64,
    pub g_max: f64,
    pub levels: Option<u32>,
    pub prog_noise_rel_std: f64,
    pub read_noise_rel_std: f64,
    pub yield_fraction: f64,
    pub clamp_limit: Option<f64>,
}

impl HardwareConfig {
    pub fn spec(&self, seed: u64) -> HardwareSpec {
        HardwareSpec {
            g_min: self.g_min,
            g_max: self.g_max,
            levels: self.levels,
            prog_noise_rel_std: self.prog_noise_rel_std,
            read_noise_rel_std: self.read_noise_rel_std,
            yield_fraction: self.yield_fraction,
            clamp_limit: self.clamp_limit,
            seed,
        }
    }
}

impl Default for HardwareConfig {
    fn default() -> Self {
        let s = HardwareSpec::default();
        Self {
            g_min: s.g_min,
            g_max: s.g_max,
            levels: s.levels,
            prog_noise_rel_std: s.prog_noise_rel_std,
            read_noise_rel_std: s.read_noise_rel_std,
            yield_fraction: s.yield_fraction,
            clamp_limit: s.clamp_limit,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineConfig {
    /// Hidden width of the recurrent cells.
    pub hidden: usize,
    /// Recurrent cells to train on Lorenz96; the HP task uses the ResNet.
    pub cells: Vec<CellKind>,
    /// Seeds per model, counting up from the global seed.
    pub repeats: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectionConfig {
    /// Constants file; the shipped calibration when absent.
    pub constants: Option<PathBuf>,
    pub hidden_sizes: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LyapunovConfig {
    pub dt: f64,
    pub n_steps: usize,
    pub transient_steps: usize,
    /// Length of the error-growth curve, in Lyapunov times.
    pub span_lyapunov_times: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    pub seed: u64,
    pub system: System,
    pub reference: ReferenceGrid,
    pub shape: NetShape,
    pub train: TrainConfig,
    /// Required for lorenz96.
    pub windows: Option<WindowConfig>,
    pub hardware: HardwareConfig,
    pub inference: HwInferenceSpec,
    pub noise_sweep: NoiseSweepSpec,
    pub baselines: BaselineConfig,
    pub projection: ProjectionConfig,
    /// Required for lorenz96.
    pub lyapunov: Option<LyapunovConfig>,
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn hp_default() -> Self {
        let drive = Waveform::sine(3.0, 2.0);
        Self {
            task: Task::Hp,
            seed: 0,
            system: System::Hp { params: Default::default(), drive, u0: 0.1 },
            reference: ReferenceGrid::hp_default(),
            shape: NetShape(vec![2, 14, 14, 1]),
            train: TrainConfig::default(),
            windows: None,
            hardware: HardwareConfig::default(),
            inference: HwInferenceSpec::default(),
            noise_sweep: NoiseSweepSpec::default(),
            baselines: BaselineConfig { hidden: 14, cells: vec![], repeats: 1 },
            projection: ProjectionConfig { constants: None, hidden_sizes: vec![64, 128, 256, 512] },
            lyapunov: None,
            output_dir: None,
        }
    }

    pub fn lorenz96_default() -> Self {
        Self {
            task: Task::Lorenz96,
            seed: 0,
            system: System::Lorenz96 {
                params: Lorenz96Params::default(),
                x0: crate::dynamics::LORENZ96_DEFAULT_X0.to_vec(),
            },
            reference: ReferenceGrid::lorenz96_default(),
            shape: NetShape(vec![6, 64, 64, 6]),
            train: TrainConfig {
                loss: crate::training::LossSpec::SoftDtw { gamma: 0.1 },
                epochs: 800,
                noise_reg_sigma: 0.03,
                early_stop: None,
                ..TrainConfig::default()
            },
            windows: Some(WindowConfig { train_points: 1800, segment_len: 10, eval_horizon: 50, cyclic_shift: true, weight_noise: 0.046 }),
            hardware: HardwareConfig { yield_fraction: 1.0, ..HardwareConfig::default() },
            inference: HwInferenceSpec::default(),
            noise_sweep: NoiseSweepSpec::default(),
            baselines: BaselineConfig { hidden: 64, cells: CellKind::ALL.to_vec(), repeats: 1 },
            projection: ProjectionConfig { constants: None, hidden_sizes: vec![64, 128, 256, 512] },
            lyapunov: Some(LyapunovConfig { dt: 0.01, n_steps: 200_000, transient_steps: 2000, span_lyapunov_times: 7.0 }),
            output_dir: None,
        }
    }

    pub fn from_json(s: &str) -> Result<Self, RunError> {
        let c: Self = serde_json::from_str(s).map_err(|e| RunError::config(format!("invalid config: {e}")))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, RunError> {
        let s = fs::read_to_string(path)
            .map_err(|e| RunError::new(ErrorKind::MissingInput, format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), RunError> {
        let cfg = |field: &str, e: Error| RunError::config(format!("{field}: {e}"));
        let bad = |field: &str, msg: &str| Err(RunError::config(format!("{field}: {msg}")));
        match (&self.task, &self.system) {
            (Task::Hp, System::Hp { .. }) | (Task::Lorenz96, System::Lorenz96 { .. }) => {}
            _ => return bad("system", "kind does not match task"),
        }
        self.shape.validate().map_err(|e| cfg("shape", e))?;
        self.train.validate().map_err(|e| cfg("train", e))?;
        self.hardware.spec(0).validate().map_err(|e| cfg("hardware", e))?;
        if self.inference.substeps == 0 || !(self.inference.activation_headroom > 0.0) {
            return bad("inference", "substeps and activation_headroom must be positive");
        }
        if self.noise_sweep.repeats == 0 || self.noise_sweep.read_noise.is_empty() || self.noise_sweep.prog_noise.is_empty() {
            return bad("noise_sweep", "needs at least one level per axis and one repeat");
        }
        let levels = self.noise_sweep.read_noise.iter().chain(&self.noise_sweep.prog_noise);
        if levels.into_iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return bad("noise_sweep", "noise levels must be finite and non-negative");
        }
        if self.baselines.hidden == 0 || self.baselines.repeats == 0 {
            return bad("baselines", "hidden and repeats must be positive");
        }
        if self.projection.hidden_sizes.contains(&0) {
            return bad("projection.hidden_sizes", "sizes must be positive");
        }
        if self.reference.points < 2 || !(self.reference.dt > 0.0) || self.reference.substeps < 4 {
            return bad("reference", "need at least 2 points, positive dt and substeps >= 4");
        }
        match self.task {
            Task::Hp => {
                if self.shape.input_dim() != 2 || self.shape.output_dim() != 1 {
                    return bad("shape", "hp needs a [2, .., 1] net");
                }
            }
            Task::Lorenz96 => {
                let Some(w) = self.windows else { return bad("windows", "required for lorenz96") };
                let Some(l) = self.lyapunov else { return bad("lyapunov", "required for lorenz96") };
                let n = match &self.system {
                    System::Lorenz96 { params, .. } => params.n,
                    System::Hp { .. } => unreachable!(),
                };
                if self.shape.input_dim() != n || self.shape.output_dim() != n {
                    return bad("shape", "input and output widths must equal the Lorenz96 dimension");
                }
                if w.segment_len == 0 || w.eval_horizon == 0 || w.train_points <= w.segment_len || w.train_points >= self.reference.points {
                    return bad("windows", "need 0 < segment_len < train_points < reference.points and eval_horizon > 0");
                }
                if !(l.dt > 0.0) || l.n_steps == 0 || !(l.span_lyapunov_times > 0.0) {
                    return bad("lyapunov", "dt, n_steps and span must be positive");
                }
            }
        }
        Ok(())
    }

    pub fn sha256(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }

    /// Identity of the reference data: task, system and grid.
    pub fn dataset_key(&self) -> String {
        let v = serde_json::json!({ "task": self.task, "system": self.system, "reference": self.reference });
        sha256_hex(v.to_string().as_bytes())
    }

    /// Identity of the trained twin: data plus everything training reads.
    pub fn twin_key(&self) -> String {
        let v = serde_json::json!({
            "dataset": self.dataset_key(),
            "shape": self.shape,
            "train": self.train,
            "windows": self.windows,
            "seed": self.seed,
        });
        sha256_hex(v.to_string().as_bytes())
    }

    fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: self.seed, ..self.train }
    }

    fn l96_setup(&self) -> Lorenz96TwinSetup {
        let w = self.windows.expect("validated");
        Lorenz96TwinSetup {
            shape: self.shape.clone(),
            train_points: w.train_points,
            segment_len: w.segment_len,
            eval_horizon: w.eval_horizon,
            cyclic_shift: w.cyclic_shift,
            weight_noise: w.weight_noise,
        }
    }

    fn drive(&self) -> Option<Waveform> {
        match &self.system {
            System::Hp { drive, .. } => Some(*drive),
            System::Lorenz96 { .. } => None,
        }
    }

    /// Drives other than the training drive, scored as generalization.
    fn test_drives(&self) -> Vec<Waveform> {
        let Some(d) = self.drive() else { return vec![] };
        WaveformKind::ALL.iter().filter(|k| **k != d.kind).map(|k| d.with_kind(*k)).collect()
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    MissingInput,
    Io,
    Stale,
    Module,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunError {
    pub kind: ErrorKind,
    pub message: String,
}

impl RunError {
    pub fn new(kind: ErrorKind, message: impl Into<String>) -> Self {
        Self { kind, message: message.into() }
    }

    fn config(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Config, message)
    }

    fn io(path: &Path, e: std::io::Error) -> Self {
        Self::new(ErrorKind::Io, format!("{}: {e}", path.display()))
    }

    fn stale(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Stale, format!("stale artifact: {}", message.into()))
    }

    pub fn exit_code(&self) -> u8 {
        match self.kind {
            ErrorKind::Config | ErrorKind::MissingInput => 2,
            ErrorKind::Io => 3,
            ErrorKind::Stale => 4,
            ErrorKind::Module => 5,
        }
    }
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for RunError {}

impl From<Error> for RunError {
    fn from(e: Error) -> Self {
        let kind = if matches!(e, Error::Io(_)) { ErrorKind::Io } else { ErrorKind::Module };
        Self::new(kind, e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Train,
    Eval,
    HwEval,
    NoiseSweep,
    Baseline,
    Project,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Train => "train",
            Command::Eval => "eval",
            Command::HwEval => "hw-eval",
            Command::NoiseSweep => "noise-sweep",
            Command::Baseline => "baseline",
            Command::Project => "project",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactRecord {
    pub sha256: String,
    /// Identity of the inputs the artifact was derived from.
    pub key: String,
    pub command: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub command: String,
    pub config_sha256: String,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub wall_clock_seconds: f64,
    pub artifacts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub tool_version: String,
    pub artifacts: BTreeMap<String, ArtifactRecord>,
    pub runs: Vec<RunRecord>,
}

impl RunManifest {
    fn empty() -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            artifacts: BTreeMap::new(),
            runs: vec![],
        }
    }

    pub fn load(dir: &Path) -> Result<Self, RunError> {
        let path = dir.join(MANIFEST);
        if !path.exists() {
            return Ok(Self::empty());
        }
        let s = fs::read_to_string(&path).map_err(|e| RunError::io(&path, e))?;
        serde_json::from_str(&s).map_err(|e| RunError::stale(format!("{}: unreadable manifest ({e})", path.display())))
    }

    fn save(&self, dir: &Path) -> Result<(), RunError> {
        let path = dir.join(MANIFEST);
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        fs::write(&path, s).map_err(|e| RunError::io(&path, e))
    }

    /// Check every listed artifact against its recorded hash.
    pub fn verify(&self, dir: &Path) -> Result<(), RunError> {
        for (name, rec) in &self.artifacts {
            let path = dir.join(name);
            let bytes = fs::read(&path).map_err(|e| RunError::io(&path, e))?;
            if sha256_hex(&bytes) != rec.sha256 {
                return Err(RunError::stale(format!("{name} does not match its manifest hash")));
            }
        }
        Ok(())
    }
}

/// Where and how a command runs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub out: PathBuf,
    pub mode: Parallelism,
    pub workers: Option<usize>,
}

/// Files a command wrote and a one-line human summary.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub written: Vec<String>,
    pub message: String,
}

struct Session<'a> {
    cfg: &'a ExperimentConfig,
    dir: &'a Path,
    manifest: RunManifest,
    outputs: Vec<(String, Vec<u8>, String)>,
}

impl<'a> Session<'a> {
    /// Read an earlier artifact after checking its hash and input key.
    fn input(&self, name: &str, key: &str, producer: Command) -> Result<Vec<u8>, RunError> {
        let path = self.dir.join(name);
        if !path.exists() {
            return Err(RunError::new(
                ErrorKind::MissingInput,
                format!("missing input {}; run `{}` first", path.display(), producer.name()),
            ));
        }
        let bytes = fs::read(&path).map_err(|e| RunError::io(&path, e))?;
        let rec = self
            .manifest
            .artifacts
            .get(name)
            .ok_or_else(|| RunError::stale(format!("{name} is not listed in the manifest")))?;
        if sha256_hex(&bytes) != rec.sha256 {
            return Err(RunError::stale(format!("{name} was modified after `{}` wrote it", rec.command)));
        }
        if rec.key != key {
            return Err(RunError::stale(format!("{name} was produced from a different config; rerun `{}`", producer.name())));
        }
        Ok(bytes)
    }

    fn trajectory(&self, name: &str) -> Result<Trajectory, RunError> {
        let bytes = self.input(name, &self.cfg.dataset_key(), Command::Simulate)?;
        Ok(Trajectory::read_csv(bytes.as_slice())?)
    }

    fn twin(&self) -> Result<MlpParams, RunError> {
        let bytes = self.input(TWIN_PARAMS, &self.cfg.twin_key(), Command::Train)?;
        let s = String::from_utf8(bytes).map_err(|e| RunError::stale(format!("{TWIN_PARAMS}: {e}")))?;
        let p = MlpParams::from_json(&s)?;
        if p.shape() != &self.cfg.shape {
            return Err(RunError::stale(format!("{TWIN_PARAMS} has shape {:?}", p.shape().0)));
        }
        Ok(p)
    }

    fn emit(&mut self, name: impl Into<String>, bytes: impl Into<Vec<u8>>, key: &str) {
        self.outputs.push((name.into(), bytes.into(), key.to_string()));
    }

    fn emit_json<T: Serialize>(&mut self, name: &str, value: &T, key: &str) {
        let mut s = serde_json::to_string_pretty(value).expect("report serializes");
        s.push('\n');
        self.emit(name, s, key);
    }

    fn commit(mut self, command: Command, started: f64, clock: Instant) -> Result<Vec<String>, RunError> {
        let mut written = Vec::new();
        for (name, bytes, key) in std::mem::take(&mut self.outputs) {
            let path = self.dir.join(&name);
            fs::write(&path, &bytes).map_err(|e| RunError::io(&path, e))?;
            self.manifest.artifacts.insert(
                name.clone(),
                ArtifactRecord { sha256: sha256_hex(&bytes), key, command: command.name().into() },
            );
            written.push(name);
        }
        self.manifest.runs.push(RunRecord {
            command: command.name().into(),
            config_sha256: self.cfg.sha256(),
            started_unix: started,
            finished_unix: unix_now(),
            wall_clock_seconds: clock.elapsed().as_secs_f64(),
            artifacts: written.clone(),
        });
        self.manifest.save(self.dir)?;
        Ok(written)
    }
}

fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

fn test_file(kind: WaveformKind) -> String {
    format!("test_{}.csv", kind.name())
}

/// Run one command against `cfg`, writing into `opts.out`.
pub fn run(command: Command, cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunSummary, RunError> {
    cfg.validate()?;
    fs::create_dir_all(&opts.out).map_err(|e| RunError::io(&opts.out, e))?;
    let started = unix_now();
    let clock = Instant::now();
    let mut s = Session { cfg, dir: &opts.out, manifest: RunManifest::load(&opts.out)?, outputs: vec![] };
    let message = par::with_workers(opts.workers, || match command {
        Command::Simulate => simulate(&mut s),
        Command::Train => train(&mut s),
        Command::Eval => evaluate(&mut s),
        Command::HwEval => hw_eval(&mut s),
        Command::NoiseSweep => sweep(&mut s, opts.mode),
        Command::Baseline => baseline(&mut s, opts.mode),
        Command::Project => projection(&mut s),
    })?;
    let written = s.commit(command, started, clock)?;
    Ok(RunSummary { written, message })
}

#[derive(Serialize)]
struct ReferenceMeta<'a> {
    config: &'a ExperimentConfig,
    file: String,
    rows: usize,
    dim: usize,
    drive: Option<Waveform>,
}

fn simulate(s: &mut Session) -> Result<String, RunError> {
    let cfg = s.cfg;
    let key = cfg.dataset_key();
    let reference = generate_reference(&cfg.system, &cfg.reference)?;
    let mut sets = vec![(REFERENCE.to_string(), reference, cfg.drive())];
    if let System::Hp { params, u0, .. } = &cfg.system {
        for d in cfg.test_drives() {
            let sys = System::Hp { params: *params, drive: d, u0: *u0 };
            sets.push((test_file(d.kind), generate_reference(&sys, &cfg.reference)?, Some(d)));
        }
    }
    let mut meta = Vec::new();
    for (name, traj, drive) in sets {
        meta.push(ReferenceMeta { config: cfg, file: name.clone(), rows: traj.len(), dim: traj.dim(), drive });
        s.emit(name, traj.to_csv_string(), &key);
    }
    s.emit_json("reference.json", &meta, &key);
    Ok(format!("simulated {} rows", cfg.reference.points))
}

#[derive(Serialize)]
#[serde(bound(serialize = ""))]
struct TrainOutput<'a, P> {
    config: &'a ExperimentConfig,
    report: &'a TrainReport<P>,
}

fn train(s: &mut Session) -> Result<String, RunError> {
    let cfg = s.cfg;
    let reference = s.trajectory(REFERENCE)?;
    let tc = cfg.train_config();
    let report = match cfg.task {
        Task::Hp => {
            let setup = HpTwinSetup { shape: cfg.shape.clone(), drive: cfg.drive().expect("hp drive") };
            train_hp_twin(&reference, &setup, &tc)?
        }
        Task::Lorenz96 => train_lorenz96_twin(&reference, &cfg.l96_setup(), &tc)?,
    };
    let key = cfg.twin_key();
    s.emit(TWIN_PARAMS, report.params.to_json() + "\n", &key);
    s.emit_json("train_report.json", &TrainOutput { config: cfg, report: &report }, &key);
    s.emit("loss_curve.csv", report.loss_curve_csv(), &key);
    let last = report.loss_curve.last().copied().unwrap_or(f64::NAN);
    match &report.diverged {
        Some(why) => Ok(format!("training diverged after {} epochs: {why}", report.epochs_completed)),
        None => Ok(format!("trained {} epochs, final loss {last:.4}", report.epochs_completed)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NamedScores {
    pub split: String,
    pub scores: SeriesScores,
}

fn scores_csv(rows: &[(String, String, &SeriesScores)]) -> String {
    let mut out = String::from("model,split,l1,mre,dtw_total,dtw_normalized\n");
    for (model, split, sc) in rows {
        let mre = sc.mre.as_ref().map_or("NaN".to_string(), |m| fmt_f64(m.value));
        out.push_str(&format!(
            "{model},{split},{},{mre},{},{}\n",
            fmt_f64(sc.l1),
            fmt_f64(sc.dtw_total),
            fmt_f64(sc.dtw_normalized)
        ));
    }
    out
}

/// Restart forecast of one split, scored on its predicted rows.
fn split_scores<F: VectorField + ?Sized>(
    field: &F,
    reference: &Trajectory,
    start: usize,
    end: usize,
    horizon: usize,
    solver: SolverSpec,
) -> Result<(Trajectory, SeriesScores), Error> {
    let pred = restart_forecast(field, reference, start, end, horizon, solver)?;
    let scores = score_series(&pred.slice(1..pred.len()), &reference.slice(start + 1..end + 1))?;
    Ok((pred, scores))
}

fn l96_splits(cfg: &ExperimentConfig, reference: &Trajectory) -> [(&'static str, usize, usize); 2] {
    let last = cfg.windows.expect("validated").train_points - 1;
    [("interpolation", 0, last), ("extrapolation", last, reference.len() - 1)]
}

#[derive(Serialize)]
struct EvalReport<'a> {
    config: &'a ExperimentConfig,
    splits: Vec<NamedScores>,
    lyapunov: Option<MleEstimate>,
    error_growth: Option<ErrorGrowth>,
}

fn reference_mle(cfg: &ExperimentConfig, reference: &Trajectory, row: usize) -> Result<MleEstimate, Error> {
    let (System::Lorenz96 { params, .. }, Some(l)) = (&cfg.system, cfg.lyapunov) else {
        return Err(Error::Metric("Lyapunov estimate needs the lorenz96 system".into()));
    };
    let spec = MleFlowSpec {
        dt: l.dt,
        n_steps: l.n_steps,
        transient_steps: l.transient_steps,
        seed: derive_seed(cfg.seed, "lyapunov"),
    };
    mle_flow(&Lorenz96Field { params: *params }, reference.row(row), &spec)
}

fn evaluate(s: &mut Session) -> Result<String, RunError> {
    let cfg = s.cfg;
    let key = cfg.twin_key();
    let reference = s.trajectory(REFERENCE)?;
    let params = s.twin()?;
    let solver = cfg.train.solver;
    let mut splits = Vec::new();
    let (mut lyapunov, mut growth) = (None, None);
    match cfg.task {
        Task::Hp => {
            let drive = cfg.drive().expect("hp drive");
            let mut sets = vec![("train-drive".to_string(), reference, drive)];
            for d in cfg.test_drives() {
                sets.push((d.kind.name().to_string(), s.trajectory(&test_file(d.kind))?, d));
            }
            for (i, (name, truth, d)) in sets.iter().enumerate() {
                let field = NeuralField::new(&params, FieldInput::Driven(*d))?;
                let pred = free_run(&field, truth, solver)?;
                if i == 0 {
                    s.emit("prediction.csv", pred.to_csv_string(), &key);
                }
                splits.push(NamedScores { split: name.clone(), scores: score_series(&pred, truth)? });
            }
        }
        Task::Lorenz96 => {
            let field = NeuralField::autonomous(&params)?;
            let horizon = cfg.windows.expect("validated").eval_horizon;
            for (name, a, b) in l96_splits(cfg, &reference) {
                let (pred, scores) = split_scores(&field, &reference, a, b, horizon, solver)?;
                s.emit(format!("prediction_{name}.csv"), pred.to_csv_string(), &key);
                splits.push(NamedScores { split: name.into(), scores });
            }
            let start = l96_splits(cfg, &reference)[1].1;
            let mle = reference_mle(cfg, &reference, start)?;
            let span = cfg.lyapunov.expect("validated").span_lyapunov_times;
            if let Some(t) = mle.lyapunov_time {
                let g = error_growth(&field, &reference, start, t, span, solver)?;
                s.emit("error_growth.csv", g.to_csv(), &key);
                growth = Some(g);
            }
            lyapunov = Some(mle);
        }
    }
    let rows: Vec<_> = splits.iter().map(|n| ("twin".to_string(), n.split.clone(), &n.scores)).collect();
    s.emit("eval_scores.csv", scores_csv(&rows), &key);
    let summary = splits
        .iter()
        .map(|n| {
            let mre = n.scores.mre.as_ref().map_or("undefined".into(), |m| format!("{:.4}", m.value));
            format!("{} L1 {:.4} MRE {mre}", n.split, n.scores.l1)
        })
        .collect::<Vec<_>>()
        .join("; ");
    s.emit_json("eval_report.json", &EvalReport { config: cfg, splits, lyapunov, error_growth: growth }, &key);
    Ok(summary)
}

/// Inputs seen by the first layer over the training data.
fn calibration_inputs(cfg: &ExperimentConfig, reference: &Trajectory) -> Vec<Vec<f64>> {
    match cfg.drive() {
        Some(d) => reference.rows().zip(reference.times()).map(|(r, t)| [&[d.eval(*t)], r].concat()).collect(),
        None => {
            let n = cfg.windows.expect("validated").train_points;
            reference.rows().take(n).map(|r| r.to_vec()).collect()
        }
    }
}

fn activation_ranges(cfg: &ExperimentConfig, params: &MlpParams, reference: &Trajectory) -> Result<ActivationRanges, Error> {
    let inputs = calibration_inputs(cfg, reference);
    let clamp = cfg.hardware.clamp_limit.unwrap_or(1.0);
    ActivationRanges::measure(params, inputs.iter().map(|v| v.as_slice()), clamp, cfg.inference.activation_headroom)
}

#[derive(Serialize)]
struct HwReport<'a> {
    config: &'a ExperimentConfig,
    hardware: HardwareSpec,
    activation_gains: Vec<f64>,
    levels: Option<u32>,
    faults: usize,
    devices: usize,
    clamp_saturation: f64,
    splits: Vec<NamedScores>,
    /// L1 between the hardware and software trajectories per split.
    software_deviation: Vec<(String, f64)>,
}

fn hw_eval(s: &mut Session) -> Result<String, RunError> {
    let cfg = s.cfg;
    let key = cfg.twin_key();
    let reference = s.trajectory(REFERENCE)?;
    let params = s.twin()?;
    let spec = cfg.hardware.spec(derive_seed(cfg.seed, "hardware"));
    let ranges = activation_ranges(cfg, &params, &reference)?;
    let prog = map_weights_with_ranges(&params, &spec, &ranges)?;
    let read_seed = derive_seed(cfg.seed, "hw-read");
    let solver = SolverSpec::rk4(cfg.inference.substeps);
    let mut splits = Vec::new();
    let mut deviation = Vec::new();
    let input = cfg.drive().map_or(FieldInput::Autonomous, FieldInput::Driven);
    let hw = HwField::new(&prog, input, read_seed)?;
    let sw = NeuralField::new(&params, input)?;
    match cfg.task {
        Task::Hp => {
            let pred = free_run(&hw, &reference, solver)?;
            let soft = free_run(&sw, &reference, solver)?;
            deviation.push(("train-drive".to_string(), l1_error(&pred, &soft)?));
            splits.push(NamedScores { split: "train-drive".into(), scores: score_series(&pred, &reference)? });
            s.emit("hw_prediction.csv", pred.to_csv_string(), &key);
        }
        Task::Lorenz96 => {
            let horizon = cfg.windows.expect("validated").eval_horizon;
            for (name, a, b) in l96_splits(cfg, &reference) {
                let (pred, scores) = split_scores(&hw, &reference, a, b, horizon, solver)?;
                let soft = restart_forecast(&sw, &reference, a, b, horizon, solver)?;
                deviation.push((name.to_string(), l1_error(&pred, &soft)?));
                s.emit(format!("hw_prediction_{name}.csv"), pred.to_csv_string(), &key);
                splits.push(NamedScores { split: name.into(), scores });
            }
        }
    }
    let saturation = hw.clamp_saturation();
    let rows: Vec<_> = splits.iter().map(|n| ("hardware".to_string(), n.split.clone(), &n.scores)).collect();
    s.emit("hw_scores.csv", scores_csv(&rows), &key);
    s.emit("crossbar_program.json", prog.to_json() + "\n", &key);
    let msg = format!(
        "{} devices, {} stuck, clamp saturation {:.4}, {}",
        prog.device_count(),
        prog.fault_count(),
        saturation,
        splits.iter().map(|n| format!("{} L1 {:.4}", n.split, n.scores.l1)).collect::<Vec<_>>().join("; ")
    );
    s.emit_json(
        "hw_report.json",
        &HwReport {
            config: cfg,
            hardware: spec,
            activation_gains: ranges.gains,
            levels: spec.levels,
            faults: prog.fault_count(),
            devices: prog.device_count(),
            clamp_saturation: saturation,
            splits,
            software_deviation: deviation,
        },
        &key,
    );
    Ok(msg)
}

/// Score of one programmed instance used by the noise sweep: free-run L1
/// for HP, extrapolation restart-forecast L1 for Lorenz96.
pub fn sweep_metric(
    cfg: &ExperimentConfig,
    reference: &Trajectory,
    prog: &CrossbarProgram,
    read_seed: u64,
) -> Result<f64, Error> {
    let input = cfg.drive().map_or(FieldInput::Autonomous, FieldInput::Driven);
    let hw = HwField::new(prog, input, read_seed)?;
    let solver = SolverSpec::rk4(cfg.inference.substeps);
    match cfg.task {
        Task::Hp => l1_error(&free_run(&hw, reference, solver)?, reference),
        Task::Lorenz96 => {
            let (_, a, b) = l96_splits(cfg, reference)[1];
            let horizon = cfg.windows.expect("validated").eval_horizon;
            crate::eval::restart_forecast_l1(&hw, reference, a, b, horizon, solver)
        }
    }
}

#[derive(Serialize)]
struct SweepReport<'a> {
    config: &'a ExperimentConfig,
    metric: &'static str,
    cells: &'a [SweepCell],
}

fn sweep(s: &mut Session, mode: Parallelism) -> Result<String, RunError> {
    let cfg = s.cfg;
    let key = cfg.twin_key();
    let reference = s.trajectory(REFERENCE)?;
    let params = s.twin()?;
    let ranges = activation_ranges(cfg, &params, &reference)?;
    let base = cfg.hardware.spec(derive_seed(cfg.seed, "noise-sweep"));
    let cells = noise_sweep(
        &base,
        &cfg.noise_sweep,
        mode,
        |spec| map_weights_with_ranges(&params, spec, &ranges),
        |prog, seed| sweep_metric(cfg, &reference, prog, derive_seed(seed, "read")),
    )?;
    let metric = match cfg.task {
        Task::Hp => "free-run L1 on the training drive",
        Task::Lorenz96 => "extrapolation L1 of restarted forecasts",
    };
    s.emit("noise_sweep.csv", sweep_csv(&cells), &key);
    s.emit_json("noise_sweep.json", &SweepReport { config: cfg, metric, cells: &cells }, &key);
    let failed: usize = cells.iter().map(|c| c.errors.len()).sum();
    Ok(format!("{} cells x {} repeats, {failed} failed repeats", cells.len(), cfg.noise_sweep.repeats))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BaselineRun {
    pub model: String,
    pub seed: u64,
    pub epochs_completed: usize,
    pub diverged: Option<String>,
    pub param_count: usize,
    pub splits: Vec<NamedScores>,
    /// Restart-forecast L1 per split for recurrent cells.
    pub split_l1: Option<SplitScores>,
}

#[derive(Serialize)]
struct BaselineReport<'a> {
    config: &'a ExperimentConfig,
    runs: &'a [BaselineRun],
}

fn baseline(s: &mut Session, mode: Parallelism) -> Result<String, RunError> {
    let cfg = s.cfg;
    let key = cfg.dataset_key();
    let reference = s.trajectory(REFERENCE)?;
    let repeats = cfg.baselines.repeats;
    let runs: Vec<Result<BaselineRun, Error>> = match cfg.task {
        Task::Hp => {
            let drive = cfg.drive().expect("hp drive");
            let mut sets = vec![("train-drive".to_string(), reference.clone(), drive)];
            for d in cfg.test_drives() {
                sets.push((d.kind.name().to_string(), s.trajectory(&test_file(d.kind))?, d));
            }
            let shape = NetShape(cfg.shape.0.clone());
            par::map_range(repeats, mode, |i| {
                let tc = TrainConfig { seed: cfg.seed + i as u64, ..cfg.train };
                let rep = train_resnet_hp(&reference, &drive, &shape, &tc)?;
                let mut splits = Vec::new();
                for (name, truth, d) in &sets {
                    let pred = resnet_rollout(&rep.params, truth.row(0), &drive_inputs(d, truth.times()), truth.times())?;
                    splits.push(NamedScores { split: name.clone(), scores: score_series(&pred, truth)? });
                }
                Ok(BaselineRun {
                    model: "resnet".into(),
                    seed: tc.seed,
                    epochs_completed: rep.epochs_completed,
                    diverged: rep.diverged,
                    param_count: rep.param_count,
                    splits,
                    split_l1: None,
                })
            })
        }
        Task::Lorenz96 => {
            let setup = cfg.l96_setup();
            let jobs: Vec<(CellKind, usize)> =
                cfg.baselines.cells.iter().flat_map(|k| (0..repeats).map(move |i| (*k, i))).collect();
            par::map_slice(&jobs, mode, |(kind, i)| {
                let tc = TrainConfig { seed: cfg.seed + *i as u64, ..cfg.train };
                let rep = train_cell_lorenz96(&reference, *kind, cfg.baselines.hidden, &setup, &tc)?;
                Ok(BaselineRun {
                    model: kind.name().into(),
                    seed: tc.seed,
                    epochs_completed: rep.epochs_completed,
                    diverged: rep.diverged,
                    param_count: rep.param_count,
                    splits: vec![],
                    split_l1: rep.scores,
                })
            })
        }
    };
    let runs: Vec<BaselineRun> = runs.into_iter().collect::<Result<_, _>>()?;
    let mut csv = String::from("model,seed,split,l1\n");
    for r in &runs {
        for n in &r.splits {
            csv.push_str(&format!("{},{},{},{}\n", r.model, r.seed, n.split, fmt_f64(n.scores.l1)));
        }
        if let Some(sc) = r.split_l1 {
            csv.push_str(&format!("{},{},interpolation,{}\n", r.model, r.seed, fmt_f64(sc.interpolation_l1)));
            csv.push_str(&format!("{},{},extrapolation,{}\n", r.model, r.seed, fmt_f64(sc.extrapolation_l1)));
        }
    }
    s.emit("baseline_scores.csv", csv, &key);
    s.emit_json("baseline_report.json", &BaselineReport { config: cfg, runs: &runs }, &key);
    Ok(format!("{} baseline runs", runs.len()))
}

#[derive(Serialize)]
struct ProjectionReport<'a> {
    banner: &'a str,
    config: &'a ExperimentConfig,
    constants: &'a ProjectionConstants,
    scenarios: Vec<Vec<ProjectionRow>>,
    checks: &'a [QuotedCheck],
}

fn projection(s: &mut Session) -> Result<String, RunError> {
    let cfg = s.cfg;
    let constants = match &cfg.projection.constants {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| {
                RunError::new(ErrorKind::MissingInput, format!("cannot read projection constants {}: {e}", path.display()))
            })?;
            ProjectionConstants::from_json(&text)?
        }
        None => ProjectionConstants::shipped(),
    };
    let key = sha256_hex(constants.to_json().as_bytes());
    let scenarios = constants.scenarios.iter().map(|sc| project(&constants, sc)).collect::<Result<Vec<_>, _>>()?;
    let checks = check_quoted(&constants)?;
    let sweep = hidden_sweep(&constants, &cfg.projection.hidden_sizes)?;
    let mut checks_csv = String::from("label,quoted,reproduced,ok\n");
    for c in &checks {
        checks_csv.push_str(&format!("{},{},{},{}\n", c.label, c.quoted, fmt_f64(c.reproduced), c.ok));
    }
    let passed = checks.iter().filter(|c| c.ok).count();
    s.emit("projection.csv", rows_csv(&sweep), &key);
    s.emit("projection_checks.csv", checks_csv, &key);
    s.emit_json(
        "projection.json",
        &ProjectionReport { banner: &constants.banner, config: cfg, constants: &constants, scenarios, checks: &checks },
        &key,
    );
    Ok(format!("{}; {passed}/{} quoted figures reproduced", constants.banner, checks.len()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        for c in [ExperimentConfig::hp_default(), ExperimentConfig::lorenz96_default()] {
            c.validate().unwrap();
            let back = ExperimentConfig::from_json(&c.to_json()).unwrap();
            assert_eq!(back, c);
            assert_eq!(back.sha256(), c.sha256());
        }
    }

    #[test]
    fn config_errors_exit_with_2() {
        let mut v: serde_json::Value = serde_json::from_str(&ExperimentConfig::hp_default().to_json()).unwrap();
        v["surprise"] = serde_json::json!(1);
        let e = ExperimentConfig::from_json(&v.to_string()).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        let mut c = ExperimentConfig::hp_default();
        c.task = Task::Lorenz96;
        assert_eq!(c.validate().unwrap_err().exit_code(), 2);
        let mut c = ExperimentConfig::lorenz96_default();
        c.windows = None;
        assert!(c.validate().unwrap_err().message.contains("windows"));
    }

    #[test]
    fn keys_track_what_they_cover() {
        let a = ExperimentConfig::hp_default();
        let mut b = a.clone();
        b.noise_sweep.repeats = 3;
        assert_eq!(a.twin_key(), b.twin_key());
        b.train.epochs = 5;
        assert_eq!(a.dataset_key(), b.dataset_key());
        assert_ne!(a.twin_key(), b.twin_key());
        b.reference.points = 11;
        assert_ne!(a.dataset_key(), b.dataset_key());
    }

    #[test]
    fn module_errors_map_to_exit_codes() {
        assert_eq!(RunError::from(Error::Training("x".into())).exit_code(), 5);
        assert_eq!(RunError::from(Error::Io("x".into())).exit_code(), 3);
    }
}
