//! Command-line front end: `relkal <generate|simulate|track|evaluate|gramian|study>`.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use nalgebra::{Matrix2, Vector6};
use serde::Serialize;
use serde_json::json;

use crate::error::Error;
use crate::observability::stochastic_gramian;
use crate::simlab::{
    generate_pair, metrics_from_records, run_filters, run_study, run_study_with_threads, synthesize_measurements,
    MetricsRow, StepRecord, StudyConfig, TrackResult, TrajectoryResult,
};
use crate::statespace::{EgoInput, Model, RelState};

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "RELKAL_THREADS";

const MANIFEST: &str = "manifest.json";

#[derive(Debug, Parser)]
#[command(name = "relkal", version, about = "Relative-frame target tracking experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write reference trajectories of ego and target.
    Generate(RunArgs),
    /// Write the noisy sensor readings extracted from the reference trajectories.
    Simulate(RunArgs),
    /// Run one model's filter on one trajectory and write the per-step estimates.
    Track(TrackArgs),
    /// Recompute the metrics table from an errors file.
    Evaluate(EvaluateArgs),
    /// Print the observability Gramian report at a state point.
    Gramian(GramianArgs),
    /// Run the full comparison and write metrics, errors and a summary.
    Study(RunArgs),
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// Study configuration (JSON). Defaults apply to missing fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured random seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated subset of A,B,C.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    models: Option<Vec<String>>,
}

#[derive(Debug, Args)]
struct OutArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Replace an existing output directory.
    #[arg(long)]
    overwrite: bool,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Debug, Args)]
struct TrackArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    out: OutArgs,
    #[arg(long)]
    model: Model,
    /// Index of the trajectory to track.
    #[arg(long, default_value_t = 0)]
    trajectory: usize,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// `errors.csv` written by `study` or `track`.
    #[arg(long)]
    errors: PathBuf,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Debug, Args)]
struct GramianArgs {
    #[arg(long)]
    model: Model,
    #[arg(long, default_value_t = 0.04)]
    dt: f64,
    /// Relative state, six comma-separated values in the model's layout.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    state: Option<Vec<f64>>,
    /// Ego input `v,a,psidot`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "15,0,0.1")]
    ego: Vec<f64>,
    /// Measurement covariance, row-major `wxx,wxy,wyx,wyy`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "1,0,0,1")]
    w: Vec<f64>,
    /// Also write `gramian.json` and a manifest to this directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    overwrite: bool,
}

/// Failure of a command, mapped to the process exit code.
#[derive(Debug)]
enum Failure {
    /// Bad arguments or configuration (exit 2).
    Usage(String),
    /// Anything that went wrong while running (exit 1).
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Usage(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(format!("I/O error: {e}"))
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Runtime(format!("CSV error: {e}"))
    }
}

type CmdResult<T = ()> = std::result::Result<T, Failure>;

/// Parses `argv` (including the program name), runs the command and returns the exit code.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let outcome = match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Track(a) => cmd_track(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Gramian(a) => cmd_gramian(a),
        Command::Study(a) => cmd_study(a),
    };
    match outcome {
        Ok(()) => 0,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            2
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            1
        }
    }
}

/// Formats a number with at most 12 significant digits, `.` as decimal separator.
pub fn fmt_num(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let rounded: f64 = format!("{x:.11e}").parse().expect("formatted float parses");
    let mag = rounded.abs();
    if (1e-4..1e12).contains(&mag) {
        format!("{rounded}")
    } else {
        format!("{rounded:e}")
    }
}

/// The value a number takes after a round trip through [`fmt_num`].
pub fn quantize(x: f64) -> f64 {
    parse_num(&fmt_num(x)).unwrap_or(f64::NAN)
}

fn parse_num(s: &str) -> Option<f64> {
    match s {
        "nan" => Some(f64::NAN),
        "inf" => Some(f64::INFINITY),
        "-inf" => Some(f64::NEG_INFINITY),
        _ => s.parse().ok(),
    }
}

fn load_config(common: &CommonArgs) -> CmdResult<StudyConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| Failure::Usage(format!("invalid config {}: {e}", path.display())))?
        }
        None => StudyConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.rng_seed = seed;
    }
    if let Some(models) = &common.models {
        cfg.models = models
            .iter()
            .filter(|m| !m.trim().is_empty())
            .map(|m| m.trim().parse::<Model>())
            .collect::<Result<_, _>>()
            .map_err(|e| Failure::Usage(e.to_string()))?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn thread_count() -> CmdResult<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(Failure::Usage(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(None),
    }
}

/// Output directory under construction; files land in a staging directory that is
/// moved into place once the manifest has been written.
struct OutputSet {
    target: PathBuf,
    staging: PathBuf,
    files: Vec<String>,
    started: Instant,
}

impl OutputSet {
    fn create(out: &OutArgs) -> CmdResult<Self> {
        let target = out.out.clone();
        if target.exists() {
            let empty = target.is_dir() && fs::read_dir(&target)?.next().is_none();
            if !empty && !out.overwrite {
                return Err(Failure::Usage(format!(
                    "output {} already exists (use --overwrite to replace it)",
                    target.display()
                )));
            }
        }
        let mut staging = target.clone().into_os_string();
        staging.push(".partial");
        let staging = PathBuf::from(staging);
        if staging.exists() {
            fs::remove_dir_all(&staging)?;
        }
        fs::create_dir_all(&staging)?;
        Ok(Self { target, staging, files: Vec::new(), started: Instant::now() })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.staging.join(name)
    }

    fn write_text(&mut self, name: &str, text: &str) -> CmdResult {
        let path = self.path(name);
        let mut f = fs::File::create(path)?;
        f.write_all(text.as_bytes())?;
        f.sync_all()?;
        Ok(())
    }

    fn write_csv(&mut self, name: &str, header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> CmdResult {
        let path = self.path(name);
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path)?;
        w.write_record(header)?;
        for row in rows {
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    fn finish(mut self, command: &str, cfg: Option<&StudyConfig>, extra: serde_json::Value) -> CmdResult {
        let manifest = json!({
            "tool": "relkal",
            "version": env!("CARGO_PKG_VERSION"),
            "command": command,
            "seed": cfg.map(|c| c.rng_seed),
            "config": cfg,
            "outputs": self.files,
            "details": extra,
            "wall_clock_seconds": self.started.elapsed().as_secs_f64(),
        });
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| Failure::Runtime(e.to_string()))? + "\n";
        self.write_text(MANIFEST, &text)?;
        if self.target.exists() {
            let mut old = self.target.clone().into_os_string();
            old.push(".old");
            let old = PathBuf::from(old);
            if old.exists() {
                fs::remove_dir_all(&old)?;
            }
            fs::rename(&self.target, &old)?;
            fs::rename(&self.staging, &self.target)?;
            fs::remove_dir_all(&old)?;
        } else {
            if let Some(parent) = self.target.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            fs::rename(&self.staging, &self.target)?;
        }
        Ok(())
    }
}

fn header(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

fn nums(values: impl IntoIterator<Item = f64>) -> Vec<String> {
    values.into_iter().map(fmt_num).collect()
}

fn traj_name(prefix: &str, j: usize) -> String {
    format!("{prefix}_{j:04}.csv")
}

fn cmd_generate(a: RunArgs) -> CmdResult {
    let cfg = load_config(&a.common)?;
    let mut out = OutputSet::create(&a.out)?;
    let cols = header(&[
        "t",
        "ego_x",
        "ego_y",
        "ego_psi",
        "ego_psidot",
        "ego_v",
        "ego_a",
        "target_x",
        "target_y",
        "target_psi",
        "target_psidot",
        "target_v",
        "target_a",
    ]);
    for j in 0..cfg.n_trajectories {
        let p = generate_pair(&cfg, j);
        let rows = (0..p.times.len()).map(|k| {
            let mut v = vec![p.times[k]];
            v.extend(p.ego[k].to_vector().iter());
            v.extend(p.target[k].to_vector().iter());
            nums(v)
        });
        out.write_csv(&traj_name("trajectory", j), &cols, rows)?;
    }
    out.finish("generate", Some(&cfg), json!({}))
}

fn cmd_simulate(a: RunArgs) -> CmdResult {
    let cfg = load_config(&a.common)?;
    let mut out = OutputSet::create(&a.out)?;
    let mut cols = header(&["t", "psidot", "v", "a", "x_rel", "y_rel"]);
    if cfg.extero_velocity {
        cols.extend(header(&["vx_rel", "vy_rel"]));
    }
    for j in 0..cfg.n_trajectories {
        let frames = synthesize_measurements(&generate_pair(&cfg, j), &cfg, j);
        let rows = frames.iter().map(|f| {
            let mut v = vec![f.t, f.proprio[0], f.proprio[1], f.proprio[2], f.extero[0], f.extero[1]];
            if cfg.extero_velocity {
                v.extend(f.extero_velocity);
            }
            nums(v)
        });
        out.write_csv(&traj_name("measurements", j), &cols, rows)?;
    }
    out.finish("simulate", Some(&cfg), json!({}))
}

fn state_columns(model: Model) -> [&'static str; 6] {
    match model {
        Model::A => ["x_rel", "y_rel", "vx_rel", "vy_rel", "ax_rel", "ay_rel"],
        Model::B => ["x_rel", "y_rel", "vx_g", "vy_g", "ax_g", "ay_g"],
        Model::C => ["x_rel", "y_rel", "psi_rel", "psidot_g", "v_g", "a_g"],
    }
}

const ERROR_COLUMNS: [&str; 6] = ["model", "trajectory", "step", "t", "delta_m", "gramian_det"];

fn error_rows<'a>(trajectories: &'a [TrajectoryResult], models: &'a [Model]) -> impl Iterator<Item = Vec<String>> + 'a {
    models.iter().flat_map(move |&model| {
        trajectories.iter().flat_map(move |t| {
            t.tracks.iter().filter(move |r| r.model == model).flat_map(move |r| {
                r.records.iter().map(move |s| {
                    vec![
                        model.to_string(),
                        t.index.to_string(),
                        s.step.to_string(),
                        fmt_num(s.t),
                        fmt_num(s.delta),
                        fmt_num(s.gramian_det),
                    ]
                })
            })
        })
    })
}

fn metrics_rows(rows: &[MetricsRow]) -> (Vec<String>, Vec<Vec<String>>) {
    let cols = header(&["model", "avg_max_error_m", "avg_mean_error_m", "gramian_det_min", "gramian_det_max"]);
    let data = rows
        .iter()
        .map(|r| {
            let mut v = vec![r.model.to_string()];
            v.extend(nums([r.avg_max_error, r.avg_mean_error, r.gramian_det_min, r.gramian_det_max]));
            v
        })
        .collect();
    (cols, data)
}

fn divergence_report(trajectories: &[TrajectoryResult]) -> Vec<serde_json::Value> {
    let mut out = Vec::new();
    for t in trajectories {
        for r in &t.tracks {
            if let Some(d) = &r.divergence {
                eprintln!(
                    "warning: model {} diverged on trajectory {} at step {}: {}",
                    r.model, t.index, d.step, d.reason
                );
                out.push(json!({"model": r.model, "trajectory": t.index, "step": d.step, "reason": d.reason}));
            }
        }
    }
    out
}

fn cmd_track(a: TrackArgs) -> CmdResult {
    let mut cfg = load_config(&a.common)?;
    if a.trajectory >= cfg.n_trajectories {
        return Err(Failure::Usage(format!("trajectory {} is out of range (0..{})", a.trajectory, cfg.n_trajectories)));
    }
    cfg.models = vec![a.model];
    let mut out = OutputSet::create(&a.out)?;
    let pair = generate_pair(&cfg, a.trajectory);
    let frames = synthesize_measurements(&pair, &cfg, a.trajectory);
    let result = run_filters(&cfg, &pair, &frames, a.trajectory, true)?;
    let track: &TrackResult = &result.tracks[0];

    let mut cols = header(&["t"]);
    cols.extend(header(&state_columns(a.model)));
    for r in 0..6 {
        for c in 0..6 {
            cols.push(format!("p{r}{c}"));
        }
    }
    cols.extend(header(&["delta_m", "gramian_det"]));
    let by_step: BTreeMap<usize, &StepRecord> = track.records.iter().map(|s| (s.step, s)).collect();
    let rows = track.trace.iter().enumerate().map(|(k, b)| {
        let mut v = vec![pair.times[k]];
        v.extend(b.mean.data.iter());
        for r in 0..6 {
            for c in 0..6 {
                v.push(b.cov[(r, c)]);
            }
        }
        v.push(crate::simlab::position_error(&b.mean, &pair.ego[k], &pair.target[k]));
        v.push(by_step.get(&k).map_or(f64::NAN, |s| s.gramian_det));
        nums(v)
    });
    out.write_csv("trace.csv", &cols, rows)?;
    let slice = std::slice::from_ref(&result);
    out.write_csv("errors.csv", &header(&ERROR_COLUMNS), error_rows(slice, &[a.model]))?;
    let divergences = divergence_report(slice);
    out.finish("track", Some(&cfg), json!({"model": a.model, "trajectory": a.trajectory, "divergences": divergences}))
}

/// Per-step errors read back from an errors file, grouped as the study produced them.
fn read_errors(path: &Path) -> CmdResult<(Vec<TrajectoryResult>, Vec<Model>)> {
    let mut reader =
        csv::Reader::from_path(path).map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
    let found = reader.headers()?.iter().map(str::to_string).collect::<Vec<_>>();
    if found != header(&ERROR_COLUMNS) {
        return Err(Failure::Usage(format!("{}: expected columns {}", path.display(), ERROR_COLUMNS.join(","))));
    }
    let mut models: Vec<Model> = Vec::new();
    let mut by_traj: BTreeMap<usize, Vec<TrackResult>> = BTreeMap::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| Failure::Usage(format!("{}: row {}: invalid {what}", path.display(), line + 2));
        let model: Model = rec[0].parse().map_err(|_| bad("model"))?;
        let traj: usize = rec[1].parse().map_err(|_| bad("trajectory"))?;
        let step: usize = rec[2].parse().map_err(|_| bad("step"))?;
        let t = parse_num(&rec[3]).ok_or_else(|| bad("t"))?;
        let delta = parse_num(&rec[4]).ok_or_else(|| bad("delta_m"))?;
        let gramian_det = parse_num(&rec[5]).ok_or_else(|| bad("gramian_det"))?;
        if !models.contains(&model) {
            models.push(model);
        }
        let tracks = by_traj.entry(traj).or_default();
        let idx = match tracks.iter().position(|r| r.model == model) {
            Some(i) => i,
            None => {
                tracks.push(TrackResult { model, records: Vec::new(), trace: Vec::new(), divergence: None });
                tracks.len() - 1
            }
        };
        tracks[idx].records.push(StepRecord { step, t, delta, gramian_det });
    }
    if models.is_empty() {
        return Err(Failure::Usage(format!("{}: no error rows", path.display())));
    }
    models.sort_by_key(|m| Model::ALL.iter().position(|x| x == m));
    let trajectories = by_traj.into_iter().map(|(index, tracks)| TrajectoryResult { index, tracks }).collect();
    Ok((trajectories, models))
}

fn cmd_evaluate(a: EvaluateArgs) -> CmdResult {
    let (trajectories, models) = read_errors(&a.errors)?;
    let metrics = metrics_from_records(&trajectories, &models, |x| x)?;
    let mut out = OutputSet::create(&a.out)?;
    let (cols, rows) = metrics_rows(&metrics);
    out.write_csv("metrics.csv", &cols, rows)?;
    out.finish("evaluate", None, json!({"errors": a.errors}))
}

#[derive(Serialize)]
struct GramianJson {
    model: Model,
    dt: f64,
    state: Vec<f64>,
    ego: [f64; 3],
    w: [f64; 4],
    det: f64,
    min_singular_value: f64,
    n_blocks: usize,
    observable: bool,
}

fn default_point(model: Model) -> Vector6<f64> {
    match model {
        Model::A | Model::B => Vector6::new(20.0, 1.0, -5.0, 0.5, 0.0, 0.0),
        Model::C => Vector6::new(20.0, 1.0, 0.1, 0.1, 10.0, 1.0),
    }
}

fn cmd_gramian(a: GramianArgs) -> CmdResult {
    if !(a.dt.is_finite() && a.dt > 0.0) {
        return Err(Failure::Usage("dt must be positive".into()));
    }
    let state = match &a.state {
        Some(s) if s.len() == 6 => Vector6::from_row_slice(s),
        Some(s) => return Err(Failure::Usage(format!("--state needs 6 values, got {}", s.len()))),
        None => default_point(a.model),
    };
    let [v, acc, w0]: [f64; 3] = a
        .ego
        .as_slice()
        .try_into()
        .map_err(|_| Failure::Usage(format!("--ego needs 3 values, got {}", a.ego.len())))?;
    let w: [f64; 4] =
        a.w.as_slice().try_into().map_err(|_| Failure::Usage(format!("--w needs 4 values, got {}", a.w.len())))?;
    if state.iter().chain(&a.ego).chain(&a.w).any(|x| !x.is_finite()) {
        return Err(Failure::Usage("non-finite input".into()));
    }
    let wm = Matrix2::new(w[0], w[1], w[2], w[3]);
    if (w[1] - w[2]).abs() > 1e-12 * wm.amax() || wm.cholesky().is_none() {
        return Err(Failure::Usage("--w must be symmetric positive definite".into()));
    }
    let report = stochastic_gramian(a.model, &RelState::new(a.model, state), &EgoInput::new(v, acc, w0), a.dt, &wm)?;
    let body = GramianJson {
        model: a.model,
        dt: a.dt,
        state: state.iter().copied().collect(),
        ego: [v, acc, w0],
        w,
        det: report.det,
        min_singular_value: report.min_singular_value,
        n_blocks: report.n_blocks,
        observable: report.observable,
    };
    let text = serde_json::to_string_pretty(&body).map_err(|e| Failure::Runtime(e.to_string()))? + "\n";
    print!("{text}");
    if let Some(dir) = a.out {
        let mut out = OutputSet::create(&OutArgs { out: dir, overwrite: a.overwrite })?;
        out.write_text("gramian.json", &text)?;
        out.finish("gramian", None, json!({}))?;
    }
    Ok(())
}

fn cmd_study(a: RunArgs) -> CmdResult {
    let cfg = load_config(&a.common)?;
    let threads = thread_count()?;
    let mut out = OutputSet::create(&a.out)?;
    let report = match threads {
        Some(n) => run_study_with_threads(&cfg, n)?,
        None => run_study(&cfg)?,
    };
    let models = cfg.model_set();
    // metrics come from the values exactly as written, so `evaluate` reproduces them
    let metrics = metrics_from_records(&report.trajectories, &models, quantize)?;
    let (cols, rows) = metrics_rows(&metrics);
    out.write_csv("metrics.csv", &cols, rows.clone())?;
    out.write_csv("errors.csv", &header(&ERROR_COLUMNS), error_rows(&report.trajectories, &models))?;
    let divergences = divergence_report(&report.trajectories);
    let summary = json!({
        "n_trajectories": cfg.n_trajectories,
        "samples_per_trajectory": cfg.n_samples(),
        "models": models,
        "metrics": metrics,
        "divergences": divergences,
    });
    let text = serde_json::to_string_pretty(&summary).map_err(|e| Failure::Runtime(e.to_string()))? + "\n";
    out.write_text("summary.json", &text)?;
    out.finish("study", Some(&cfg), json!({"divergences": divergences.len()}))
}
