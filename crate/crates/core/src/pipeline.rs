//! File-backed experiment pipeline.
//!
//! Every stage reads its inputs from, and writes its outputs to, one output
//! directory, so stages can be rerun independently:
//!
//! | stage      | reads                                  | writes                                      |
//! |------------|----------------------------------------|---------------------------------------------|
//! | `gen-data` | config                                 | `training.csv`, `gen_data.json`             |
//! | `fit`      | `training.csv`                         | `model.json`, `fit.json`                    |
//! | `solve`    | `model.json` (Koopman only)            | `controls_<c>.csv`, `solve_<c>.json`        |
//! | `simulate` | `controls_<c>.csv`                     | `trajectory_<c>.csv`                        |
//! | `report`   | trajectories, `solve_<c>.json`         | `report.json`, `state_*.svg`, `control_*.svg` |
//!
//! A lock file keeps a second process out of the same directory, and files
//! written by a failing invocation are removed.

use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{fmt17, ControlInput, ControlSequence, RelativeState, Trajectory};
use crate::koopman::{
    fit, generate_training_data, FitDiagnostics, KoopmanModel, Normalization, ObservableBank, TrainingData,
};
use crate::linearized::{discretize, solve_linear_controller, terminal_map};
use crate::plot::{emit_plots, Series};
use crate::scenario::{ConfigError, Scenario};
use crate::sparse_solver::{IrlsResult, StopReason};

pub const TRAINING_FILE: &str = "training.csv";
pub const GEN_DATA_FILE: &str = "gen_data.json";
pub const MODEL_FILE: &str = "model.json";
pub const FIT_FILE: &str = "fit.json";
pub const REPORT_FILE: &str = "report.json";
pub const LOCK_FILE: &str = ".rendezvous.lock";
pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const COMPARISON_HEADER: &str = "scenario,controller,terminal_error_l2,fuel_cost_l21,irls_iterations,irls_residual";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Controller {
    Koopman,
    Linear,
}

impl Controller {
    pub const ALL: [Controller; 2] = [Controller::Koopman, Controller::Linear];

    pub fn name(self) -> &'static str {
        match self {
            Controller::Koopman => "koopman",
            Controller::Linear => "linear",
        }
    }

    pub fn controls_file(self) -> String {
        format!("controls_{}.csv", self.name())
    }

    pub fn solve_file(self) -> String {
        format!("solve_{}.json", self.name())
    }

    pub fn trajectory_file(self) -> String {
        format!("trajectory_{}.csv", self.name())
    }

    fn color(self) -> &'static str {
        match self {
            Controller::Koopman => "#1f77b4",
            Controller::Linear => "#d62728",
        }
    }
}

impl fmt::Display for Controller {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("output directory {0} is in use by another run (remove the lock file if that run is gone)")]
    Busy(PathBuf),
    #[error("missing {file}; run `{producer}` first")]
    MissingArtifact { file: String, producer: &'static str },
    #[error("cannot use {file}: {reason}")]
    Artifact { file: String, reason: String },
    #[error("stage `{stage}` failed: {message}")]
    Stage { stage: &'static str, message: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl PipelineError {
    /// 2 for configuration and missing-input problems, 3 for numerical
    /// failures, 1 for I/O errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_)
            | PipelineError::Busy(_)
            | PipelineError::MissingArtifact { .. }
            | PipelineError::Artifact { .. } => 2,
            PipelineError::Stage { .. } => 3,
            PipelineError::Io { .. } => 1,
        }
    }

    fn stage(stage: &'static str, e: impl fmt::Display) -> Self {
        PipelineError::Stage {
            stage,
            message: e.to_string(),
        }
    }
}

/// Exclusive handle on an output directory.
///
/// Files written through [`OutputDir::write`] are deleted on drop unless
/// [`OutputDir::commit`] was called.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    written: Vec<PathBuf>,
    committed: bool,
}

impl OutputDir {
    pub fn open(root: &Path) -> Result<Self, PipelineError> {
        std::fs::create_dir_all(root).map_err(|source| PipelineError::Io {
            path: root.to_path_buf(),
            source,
        })?;
        let lock = root.join(LOCK_FILE);
        match std::fs::OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(mut f) => {
                use std::io::Write;
                let _ = writeln!(f, "{}", std::process::id());
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                return Err(PipelineError::Busy(root.to_path_buf()));
            }
            Err(source) => return Err(PipelineError::Io { path: lock, source }),
        }
        Ok(Self {
            root: root.to_path_buf(),
            written: Vec::new(),
            committed: false,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn exists(&self, name: &str) -> bool {
        self.path(name).is_file()
    }

    /// Writes through a temporary file and a rename.
    pub fn write(&mut self, name: &str, contents: &[u8]) -> Result<PathBuf, PipelineError> {
        let path = self.path(name);
        let tmp = self.path(&format!(".{name}.tmp"));
        let io = |source| PipelineError::Io {
            path: path.clone(),
            source,
        };
        std::fs::write(&tmp, contents).map_err(io)?;
        std::fs::rename(&tmp, &path).map_err(io)?;
        self.track(path.clone());
        Ok(path)
    }

    fn track(&mut self, path: PathBuf) {
        if !self.written.contains(&path) {
            self.written.push(path);
        }
    }

    pub fn read(&self, name: &str, producer: &'static str) -> Result<String, PipelineError> {
        let path = self.path(name);
        match std::fs::read_to_string(&path) {
            Ok(s) => Ok(s),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(PipelineError::MissingArtifact {
                file: name.to_string(),
                producer,
            }),
            Err(source) => Err(PipelineError::Io { path, source }),
        }
    }

    /// Keeps everything written so far.
    pub fn commit(mut self) {
        self.committed = true;
    }
}

impl Drop for OutputDir {
    fn drop(&mut self) {
        if !self.committed {
            for p in &self.written {
                let _ = std::fs::remove_file(p);
            }
        }
        let _ = std::fs::remove_file(self.root.join(LOCK_FILE));
    }
}

fn to_json<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s.into_bytes()
}

fn parse_json<T: for<'de> Deserialize<'de>>(name: &str, text: &str) -> Result<T, PipelineError> {
    serde_json::from_str(text).map_err(|e| PipelineError::Artifact {
        file: name.to_string(),
        reason: e.to_string(),
    })
}

/// IRLS outcome without the iterate itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrlsSummary {
    pub converged: bool,
    pub stop_reason: StopReason,
    pub iterations: usize,
    pub eps_final: f64,
    /// `Σ‖u(i)‖₂` of the solver's iterate (normalized units for Koopman).
    pub cost_l21: f64,
    pub constraint_residual: f64,
    pub lambda: f64,
    pub constraint_rows: usize,
}

impl IrlsSummary {
    fn new(r: &IrlsResult, rows: usize) -> Self {
        Self {
            converged: r.converged,
            stop_reason: r.stop_reason,
            iterations: r.iterations,
            eps_final: r.eps_final,
            cost_l21: r.cost_l21,
            constraint_residual: r.constraint_residual,
            lambda: r.lambda,
            constraint_rows: rows,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveRecord {
    pub controller: Controller,
    pub horizon: usize,
    /// `J₂,₁ = Σ‖u(i)‖₂` of the physical controls.
    pub fuel_cost_l21: f64,
    pub irls: IrlsSummary,
    pub elapsed_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub controls: ControlSequence,
    pub record: SolveRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenDataRecord {
    pub columns: usize,
    pub truncated_trajectories: usize,
    pub elapsed_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub n_lift: usize,
    pub columns: usize,
    pub rank: usize,
    pub residual: f64,
    pub relative_residual: f64,
    pub max_singular_value: f64,
    pub min_singular_value: f64,
    pub elapsed_s: f64,
}

impl FitRecord {
    fn new(d: &FitDiagnostics, n_lift: usize, elapsed_s: f64) -> Self {
        Self {
            n_lift,
            columns: d.columns,
            rank: d.rank,
            residual: d.residual,
            relative_residual: d.relative_residual,
            max_singular_value: d.max_singular_value,
            min_singular_value: d.min_singular_value,
            elapsed_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerReport {
    pub controller: Controller,
    pub terminal_state: [f64; 6],
    /// `‖x(N) − x_f‖₂` over all six components, metres and m/s mixed.
    pub terminal_error_l2: f64,
    /// Same error with positions divided by `L_ref` and velocities by `V_ref`.
    pub terminal_error_normalized: f64,
    pub fuel_cost_l21: f64,
    pub irls: IrlsSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub scenario: String,
    pub horizon: usize,
    pub step: f64,
    pub freeze_anomaly: bool,
    pub normalization: Normalization,
    pub x0: [f64; 6],
    pub x_f: [f64; 6],
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitRecord>,
    pub controllers: Vec<ControllerReport>,
    pub timings_s: BTreeMap<String, f64>,
    /// Files of this run, relative to the output directory.
    pub manifest: Vec<String>,
}

impl RunReport {
    pub fn all_converged(&self) -> bool {
        self.controllers.iter().all(|c| c.irls.converged)
    }

    pub fn controller(&self, c: Controller) -> Option<&ControllerReport> {
        self.controllers.iter().find(|r| r.controller == c)
    }

    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        parse_json(REPORT_FILE, text)
    }
}

/// `‖x − x_f‖₂` in SI units.
pub fn compute_terminal_error(trajectory: &Trajectory, x_f: &RelativeState) -> f64 {
    (trajectory.final_state().to_vector() - x_f.to_vector()).norm()
}

pub fn compute_normalized_error(trajectory: &Trajectory, x_f: &RelativeState, n: &Normalization) -> f64 {
    let a = n.normalize(&trajectory.final_state());
    let b = n.normalize(x_f);
    a.iter().zip(&b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
}

pub fn controls_to_csv(controls: &ControlSequence, step: f64) -> String {
    let mut out = String::from("k,t,ux,uy,uz\n");
    for (k, u) in controls.0.iter().enumerate() {
        let _ = writeln!(
            out,
            "{k},{},{},{},{}",
            fmt17(step * k as f64),
            fmt17(u.ux),
            fmt17(u.uy),
            fmt17(u.uz)
        );
    }
    out
}

pub fn controls_from_csv(text: &str) -> Result<ControlSequence, String> {
    let mut lines = text.lines();
    if lines.next() != Some("k,t,ux,uy,uz") {
        return Err("unexpected header".into());
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 || f[0].parse::<usize>().ok() != Some(i) {
            return Err(format!("malformed row {}", i + 1));
        }
        let v: Vec<f64> = f[2..]
            .iter()
            .map(|s| s.parse::<f64>().map_err(|e| format!("row {}: {e}", i + 1)))
            .collect::<Result<_, _>>()?;
        out.push(ControlInput::new(v[0], v[1], v[2]));
    }
    Ok(ControlSequence(out))
}

/// Rows of the comparison table, one per controller per report.
pub fn comparison_csv(reports: &[RunReport]) -> String {
    let mut out = String::from(COMPARISON_HEADER);
    out.push('\n');
    for r in reports {
        for c in &r.controllers {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.scenario,
                c.controller,
                fmt17(c.terminal_error_l2),
                fmt17(c.fuel_cost_l21),
                c.irls.iterations,
                fmt17(c.irls.constraint_residual)
            );
        }
    }
    out
}

// ---- pure stage bodies -------------------------------------------------

pub fn generate(s: &Scenario) -> Result<TrainingData, PipelineError> {
    generate_training_data(&s.plant, &s.normalization, &s.training_spec())
        .map_err(|e| PipelineError::stage("gen-data", e))
}

pub fn bank_for(s: &Scenario) -> Result<ObservableBank, PipelineError> {
    ObservableBank::for_mission(s.config.n_lift, s.normalization, &s.x0, s.config.training.rbf_seed)
        .map_err(|e| PipelineError::stage("fit", e))
}

pub fn fit_model(s: &Scenario, data: &TrainingData) -> Result<(KoopmanModel, FitDiagnostics), PipelineError> {
    fit(data, bank_for(s)?).map_err(|e| PipelineError::stage("fit", e))
}

pub fn plan(s: &Scenario, controller: Controller, model: Option<&KoopmanModel>) -> Result<Plan, PipelineError> {
    let start = Instant::now();
    let cfg = &s.config;
    let (controls, irls, rows) = match controller {
        Controller::Linear => {
            let lm = discretize(s.clock(), cfg.step, cfg.horizon, cfg.flags.substeps)
                .map_err(|e| PipelineError::stage("solve", e))?;
            let (c, beta) = terminal_map(&lm, &s.x0);
            let (u, r) =
                solve_linear_controller(&c, &beta, &s.x_f, &cfg.irls).map_err(|e| PipelineError::stage("solve", e))?;
            (u, r, c.nrows())
        }
        Controller::Koopman => {
            let model = model.expect("Koopman plan needs a model");
            let sol = model
                .solve(&s.x0, &s.x_f, cfg.horizon, cfg.koopman.terminal_constraint, &cfg.irls)
                .map_err(|e| PipelineError::stage("solve", e))?;
            let rows = match cfg.koopman.terminal_constraint {
                crate::koopman::TerminalConstraint::Lifted => model.n_lift(),
                crate::koopman::TerminalConstraint::State => 6,
            };
            (sol.controls, sol.irls, rows)
        }
    };
    if !irls.converged {
        log::warn!(
            "{controller}: IRLS stopped after {} iterations without converging (ε = {:e})",
            irls.iterations,
            irls.eps_final
        );
    }
    let record = SolveRecord {
        controller,
        horizon: cfg.horizon,
        fuel_cost_l21: controls.l21_cost(),
        irls: IrlsSummary::new(&irls, rows),
        elapsed_s: start.elapsed().as_secs_f64(),
    };
    Ok(Plan { controls, record })
}

/// Applies `controls` to the nonlinear plant from `x0`.
pub fn simulate_controls(s: &Scenario, controls: &ControlSequence) -> Result<Trajectory, PipelineError> {
    s.plant
        .rollout_n(&s.x0, controls, s.config.step, s.config.horizon)
        .map_err(|e| PipelineError::stage("simulate", e))
}

pub fn controller_report(s: &Scenario, trajectory: &Trajectory, record: &SolveRecord) -> ControllerReport {
    ControllerReport {
        controller: record.controller,
        terminal_state: trajectory.final_state().to_array(),
        terminal_error_l2: compute_terminal_error(trajectory, &s.x_f),
        terminal_error_normalized: compute_normalized_error(trajectory, &s.x_f, &s.normalization),
        fuel_cost_l21: record.fuel_cost_l21,
        irls: record.irls.clone(),
    }
}

// ---- file-backed stages ------------------------------------------------

pub fn stage_gen_data(s: &Scenario, out: &mut OutputDir) -> Result<TrainingData, PipelineError> {
    let start = Instant::now();
    let data = generate(s)?;
    out.write(TRAINING_FILE, data.to_csv_string().as_bytes())?;
    let record = GenDataRecord {
        columns: data.len(),
        truncated_trajectories: data.truncations.len(),
        elapsed_s: start.elapsed().as_secs_f64(),
    };
    out.write(GEN_DATA_FILE, &to_json(&record))?;
    Ok(data)
}

pub fn load_training(out: &OutputDir) -> Result<TrainingData, PipelineError> {
    let text = out.read(TRAINING_FILE, "gen-data")?;
    TrainingData::read_csv(text.as_bytes()).map_err(|e| PipelineError::Artifact {
        file: TRAINING_FILE.into(),
        reason: e.to_string(),
    })
}

pub fn stage_fit(s: &Scenario, out: &mut OutputDir, data: Option<TrainingData>) -> Result<KoopmanModel, PipelineError> {
    let data = match data {
        Some(d) => d,
        None => load_training(out)?,
    };
    let start = Instant::now();
    let (model, diag) = fit_model(s, &data)?;
    let record = FitRecord::new(&diag, model.n_lift(), start.elapsed().as_secs_f64());
    out.write(MODEL_FILE, model.to_json().as_bytes())?;
    out.write(FIT_FILE, &to_json(&record))?;
    Ok(model)
}

pub fn load_model(s: &Scenario, out: &OutputDir) -> Result<KoopmanModel, PipelineError> {
    let text = out.read(MODEL_FILE, "fit")?;
    let model = KoopmanModel::from_json(&text).map_err(|e| PipelineError::Artifact {
        file: MODEL_FILE.into(),
        reason: e.to_string(),
    })?;
    let expected = bank_for(s)?;
    if model.bank() != &expected {
        return Err(PipelineError::Artifact {
            file: MODEL_FILE.into(),
            reason: "fitted for a different configuration; rerun `gen-data` and `fit`".into(),
        });
    }
    Ok(model)
}

pub fn stage_solve(
    s: &Scenario,
    out: &mut OutputDir,
    controllers: &[Controller],
    model: Option<&KoopmanModel>,
) -> Result<Vec<Plan>, PipelineError> {
    let loaded;
    let model = match (model, controllers.contains(&Controller::Koopman)) {
        (Some(m), _) => Some(m),
        (None, true) => {
            loaded = load_model(s, out)?;
            Some(&loaded)
        }
        (None, false) => None,
    };
    let mut plans = Vec::new();
    for &c in controllers {
        let p = plan(s, c, model)?;
        out.write(&c.controls_file(), controls_to_csv(&p.controls, s.config.step).as_bytes())?;
        out.write(&c.solve_file(), &to_json(&p.record))?;
        plans.push(p);
    }
    Ok(plans)
}

pub fn stage_simulate(
    s: &Scenario,
    out: &mut OutputDir,
    controllers: &[Controller],
) -> Result<Vec<Trajectory>, PipelineError> {
    let mut trajectories = Vec::new();
    for &c in controllers {
        let name = c.controls_file();
        let controls = controls_from_csv(&out.read(&name, "solve")?).map_err(|reason| PipelineError::Artifact {
            file: name.clone(),
            reason,
        })?;
        if controls.len() != s.config.horizon {
            return Err(PipelineError::Artifact {
                file: name,
                reason: format!(
                    "{} control rows for horizon {}; rerun `solve`",
                    controls.len(),
                    s.config.horizon
                ),
            });
        }
        let tr = simulate_controls(s, &controls)?;
        out.write(&c.trajectory_file(), tr.to_csv_string().as_bytes())?;
        trajectories.push(tr);
    }
    Ok(trajectories)
}

pub fn stage_report(
    s: &Scenario,
    out: &mut OutputDir,
    controllers: &[Controller],
    mut timings: BTreeMap<String, f64>,
) -> Result<RunReport, PipelineError> {
    let start = Instant::now();
    let mut reports = Vec::new();
    let mut trajectories = Vec::new();
    let mut manifest = Vec::new();
    let push = |m: &mut Vec<String>, n: String| {
        if !m.contains(&n) {
            m.push(n);
        }
    };
    for &c in controllers {
        let tname = c.trajectory_file();
        let tr = Trajectory::from_csv_str(&out.read(&tname, "simulate")?).map_err(|reason| PipelineError::Artifact {
            file: tname.clone(),
            reason,
        })?;
        let sname = c.solve_file();
        let record: SolveRecord = parse_json(&sname, &out.read(&sname, "solve")?)?;
        timings.entry(format!("solve_{c}")).or_insert(record.elapsed_s);
        reports.push(controller_report(s, &tr, &record));
        trajectories.push((c, tr));
        push(&mut manifest, c.controls_file());
        push(&mut manifest, sname);
        push(&mut manifest, tname);
    }
    let fit = if out.exists(FIT_FILE) && controllers.contains(&Controller::Koopman) {
        let f: FitRecord = parse_json(FIT_FILE, &out.read(FIT_FILE, "fit")?)?;
        timings.entry("fit".into()).or_insert(f.elapsed_s);
        for n in [TRAINING_FILE, GEN_DATA_FILE, MODEL_FILE, FIT_FILE] {
            if out.exists(n) {
                push(&mut manifest, n.to_string());
            }
        }
        Some(f)
    } else {
        None
    };
    if out.exists(GEN_DATA_FILE) && fit.is_some() {
        let g: GenDataRecord = parse_json(GEN_DATA_FILE, &out.read(GEN_DATA_FILE, "gen-data")?)?;
        timings.entry("gen_data".into()).or_insert(g.elapsed_s);
    }
    let series: Vec<Series> = trajectories
        .iter()
        .map(|(c, tr)| Series {
            label: c.name(),
            color: c.color(),
            trajectory: tr,
        })
        .collect();
    let plots = emit_plots(&series, &s.x_f, out.root()).map_err(|source| PipelineError::Io {
        path: out.root().to_path_buf(),
        source,
    })?;
    for p in plots {
        let name = p.file_name().unwrap().to_string_lossy().into_owned();
        out.track(p);
        push(&mut manifest, name);
    }
    push(&mut manifest, REPORT_FILE.to_string());
    timings.insert("report".into(), start.elapsed().as_secs_f64());
    let report = RunReport {
        schema_version: REPORT_SCHEMA_VERSION,
        scenario: s.config.name.clone(),
        horizon: s.config.horizon,
        step: s.config.step,
        freeze_anomaly: s.config.flags.freeze_anomaly,
        normalization: s.normalization,
        x0: s.x0.to_array(),
        x_f: s.x_f.to_array(),
        fit,
        controllers: reports,
        timings_s: timings,
        manifest,
    };
    out.write(REPORT_FILE, &to_json(&report))?;
    Ok(report)
}

/// All stages in sequence, passing results in memory while still writing
/// every artifact.
pub fn run_pipeline(s: &Scenario, out: &mut OutputDir, controllers: &[Controller]) -> Result<RunReport, PipelineError> {
    let mut timings = BTreeMap::new();
    let model = if controllers.contains(&Controller::Koopman) {
        let t = Instant::now();
        let data = stage_gen_data(s, out)?;
        timings.insert("gen_data".to_string(), t.elapsed().as_secs_f64());
        let t = Instant::now();
        let model = stage_fit(s, out, Some(data))?;
        timings.insert("fit".to_string(), t.elapsed().as_secs_f64());
        Some(model)
    } else {
        None
    };
    let t = Instant::now();
    stage_solve(s, out, controllers, model.as_ref())?;
    timings.insert("solve".to_string(), t.elapsed().as_secs_f64());
    let t = Instant::now();
    stage_simulate(s, out, controllers)?;
    timings.insert("simulate".to_string(), t.elapsed().as_secs_f64());
    stage_report(s, out, controllers, timings)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::ScenarioConfig;

    fn tiny(name: &str) -> Scenario {
        let text = format!(
            r#"{{
            "name": "{name}",
            "orbit": {{"a": 7000e3, "e": 0.1}},
            "x0": [100, -50, 80, 0.1, 0.0, -0.1],
            "horizon": 8,
            "n_lift": 22,
            "training": {{"n_traj": 6, "n_steps": 10}}
        }}"#
        );
        ScenarioConfig::from_json(&text).unwrap().resolve().unwrap()
    }

    #[test]
    fn terminal_error_examples() {
        let mut tr = Trajectory {
            states: vec![RelativeState::ZERO, RelativeState::new(3.0, 4.0, 0.0, 0.0, 0.0, 0.0)],
            controls: ControlSequence::zeros(1),
            t_grid: vec![0.0, 1.0],
        };
        assert_eq!(compute_terminal_error(&tr, &RelativeState::ZERO), 5.0);
        tr.states[1] = RelativeState::new(1.0, 2.0, 3.0, 4.0, 5.0, 6.0);
        assert_eq!(compute_terminal_error(&tr, &tr.states[1].clone()), 0.0);
        let n = Normalization::new(2.0, 4.0).unwrap();
        let x_f = RelativeState::new(1.0, 2.0, 3.0, 0.0, 5.0, 6.0);
        assert_eq!(compute_normalized_error(&tr, &x_f, &n), 1.0);
    }

    #[test]
    fn controls_csv_round_trip() {
        let u = ControlSequence::from_stacked(&[0.1, -2.5e-7, 3.0, 1.0 / 3.0, 0.0, -1e300]);
        let text = controls_to_csv(&u, 0.5);
        assert_eq!(controls_from_csv(&text).unwrap(), u);
        assert!(controls_from_csv("k,t,ux\n").is_err());
        assert!(controls_from_csv("k,t,ux,uy,uz\n3,0,1,2,3\n").is_err());
    }

    #[test]
    fn comparison_rows_follow_reports() {
        let s = tiny("a");
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutputDir::open(dir.path()).unwrap();
        let report = run_pipeline(&s, &mut out, &Controller::ALL).unwrap();
        out.commit();
        let csv = comparison_csv(&[report.clone(), report.clone()]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], COMPARISON_HEADER);
        assert_eq!(lines.len(), 5);
        let lin = report.controller(Controller::Linear).unwrap();
        assert_eq!(
            lines[2],
            format!(
                "a,linear,{},{},{},{}",
                fmt17(lin.terminal_error_l2),
                fmt17(lin.fuel_cost_l21),
                lin.irls.iterations,
                fmt17(lin.irls.constraint_residual)
            )
        );
        for f in &report.manifest {
            assert!(dir.path().join(f).is_file(), "{f}");
        }
        assert!(!dir.path().join(LOCK_FILE).exists());
    }

    #[test]
    fn staged_and_direct_runs_agree() {
        let s = tiny("b");
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        {
            let mut out = OutputDir::open(a.path()).unwrap();
            run_pipeline(&s, &mut out, &Controller::ALL).unwrap();
            out.commit();
        }
        {
            let mut out = OutputDir::open(b.path()).unwrap();
            stage_gen_data(&s, &mut out).unwrap();
            stage_fit(&s, &mut out, None).unwrap();
            stage_solve(&s, &mut out, &Controller::ALL, None).unwrap();
            stage_simulate(&s, &mut out, &Controller::ALL).unwrap();
            stage_report(&s, &mut out, &Controller::ALL, BTreeMap::new()).unwrap();
            out.commit();
        }
        for f in [
            TRAINING_FILE,
            MODEL_FILE,
            "controls_koopman.csv",
            "controls_linear.csv",
            "trajectory_koopman.csv",
            "trajectory_linear.csv",
            "state_x.svg",
        ] {
            assert_eq!(
                std::fs::read(a.path().join(f)).unwrap(),
                std::fs::read(b.path().join(f)).unwrap(),
                "{f}"
            );
        }
    }

    #[test]
    fn missing_upstream_names_producer() {
        let s = tiny("c");
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutputDir::open(dir.path()).unwrap();
        let e = stage_fit(&s, &mut out, None).unwrap_err();
        assert!(e.to_string().contains("run `gen-data` first"), "{e}");
        assert_eq!(e.exit_code(), 2);
        let e = stage_simulate(&s, &mut out, &[Controller::Linear]).unwrap_err();
        assert!(e.to_string().contains("`solve`"), "{e}");
    }

    #[test]
    fn lock_is_exclusive_and_failed_runs_clean_up() {
        let dir = tempfile::tempdir().unwrap();
        let out = OutputDir::open(dir.path()).unwrap();
        assert!(matches!(OutputDir::open(dir.path()), Err(PipelineError::Busy(_))));
        drop(out);
        let mut out = OutputDir::open(dir.path()).unwrap();
        out.write("partial.csv", b"x").unwrap();
        drop(out);
        assert!(!dir.path().join("partial.csv").exists());
        let mut out = OutputDir::open(dir.path()).unwrap();
        out.write("kept.csv", b"x").unwrap();
        out.commit();
        assert!(dir.path().join("kept.csv").exists());
    }

    #[test]
    fn mismatched_model_is_rejected() {
        let s = tiny("d");
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutputDir::open(dir.path()).unwrap();
        stage_gen_data(&s, &mut out).unwrap();
        stage_fit(&s, &mut out, None).unwrap();
        let mut cfg = s.config.clone();
        cfg.training.rbf_seed += 1;
        let other = cfg.resolve().unwrap();
        let e = stage_solve(&other, &mut out, &[Controller::Koopman], None).unwrap_err();
        assert!(e.to_string().contains("different configuration"), "{e}");
    }

    #[test]
    fn zero_mission_needs_no_control() {
        let mut cfg = tiny("e").config;
        cfg.x0 = [0.0; 6];
        let s = cfg.resolve().unwrap();
        let p = plan(&s, Controller::Linear, None).unwrap();
        assert!(p.controls.to_stacked().iter().all(|v| *v == 0.0));
        let tr = simulate_controls(&s, &p.controls).unwrap();
        assert!(compute_terminal_error(&tr, &s.x_f) < 1e-9);
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutputDir::open(dir.path()).unwrap();
        let r = run_pipeline(&s, &mut out, &Controller::ALL).unwrap();
        assert!(r.controllers.iter().all(|c| c.terminal_error_l2.is_finite()));
    }
}
