//! Monte Carlo comparison of the three relative models on simulated CTRA traffic.

use nalgebra::{Matrix2, Matrix3, Matrix4, SMatrix, SVector, Vector2, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ekf::{initialize_track, predict, update, update_position_velocity, EgoFilter, MeasurementModel};
use crate::error::{Error, Result};
use crate::frames::{rotation, to_relative};
use crate::global_models::{ctra_propagate, CtraNoiseSample};
use crate::observability::stochastic_gramian;
use crate::statespace::{wrap_angle, CtraState, EgoBelief, EgoInput, Model, NoiseSpec, RelState, TargetBelief};

/// Sampling ranges for the initial conditions of each trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialRanges {
    pub ego_speed: [f64; 2],
    /// Longitudinal offset of the target ahead of the ego.
    pub target_ahead: [f64; 2],
    pub target_lateral: [f64; 2],
    pub target_speed: [f64; 2],
    pub target_heading: [f64; 2],
}

impl Default for InitialRanges {
    fn default() -> Self {
        Self {
            ego_speed: [10.0, 30.0],
            target_ahead: [20.0, 80.0],
            target_lateral: [-3.5, 3.5],
            target_speed: [5.0, 35.0],
            target_heading: [-0.2, 0.2],
        }
    }
}

/// Study configuration, read from JSON. Missing fields take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub n_trajectories: usize,
    pub duration: f64,
    pub dt: f64,
    /// Noise used to generate trajectories and measurements.
    pub gen_noise: NoiseSpec,
    /// Noise assumed by the filters; defaults to `gen_noise`.
    pub filter_noise: Option<NoiseSpec>,
    pub psi_perturb_sigma: f64,
    pub rng_seed: u64,
    pub models: Vec<Model>,
    /// Steps after initialization excluded from the error statistics.
    pub warmup_steps: usize,
    /// Also feed relative velocity readings to the target filters.
    pub extero_velocity: bool,
    pub initial: InitialRanges,
    /// Initial variances of the unmeasured entries for models A and B.
    pub init_var_jerk: [f64; 4],
    /// Initial variances of the unmeasured entries for model C.
    pub init_var_ctra: [f64; 4],
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            n_trajectories: 50,
            duration: 20.0,
            dt: 0.04,
            gen_noise: NoiseSpec::default(),
            filter_noise: None,
            psi_perturb_sigma: 0.01,
            rng_seed: 20_240_601,
            models: Model::ALL.to_vec(),
            warmup_steps: 0,
            extero_velocity: false,
            initial: InitialRanges::default(),
            init_var_jerk: [100.0, 100.0, 25.0, 25.0],
            init_var_ctra: [1.0, 1.0, 400.0, 25.0],
        }
    }
}

impl StudyConfig {
    /// Exact trajectories and readings. The filters know the readings are exact but
    /// keep their default process noise.
    pub fn noise_free() -> Self {
        let filter = NoiseSpec {
            meas_proprio: Matrix3::zeros(),
            meas_extero: Matrix2::zeros(),
            meas_extero_velocity: Matrix2::zeros(),
            ..NoiseSpec::default()
        };
        Self { gen_noise: NoiseSpec::zero(), filter_noise: Some(filter), psi_perturb_sigma: 0.0, ..Self::default() }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn filter_noise(&self) -> &NoiseSpec {
        self.filter_noise.as_ref().unwrap_or(&self.gen_noise)
    }

    /// Number of samples per trajectory, including `t = 0`.
    pub fn n_samples(&self) -> usize {
        (self.duration / self.dt + 1e-9).floor() as usize + 1
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return bad("dt must be positive");
        }
        if !(self.duration.is_finite() && self.duration >= self.dt) {
            return bad("duration must be at least dt");
        }
        if self.n_trajectories == 0 {
            return bad("n_trajectories must be at least 1");
        }
        if self.models.is_empty() {
            return bad("at least one model is required (valid models: A, B, C)");
        }
        if !(self.psi_perturb_sigma.is_finite() && self.psi_perturb_sigma >= 0.0) {
            return bad("psi_perturb_sigma must be non-negative");
        }
        if self.warmup_steps + 1 >= self.n_samples() {
            return bad("warmup_steps leaves no steps to evaluate");
        }
        self.gen_noise.validate()?;
        self.filter_noise().validate()?;
        let i = &self.initial;
        for (name, r) in [
            ("ego_speed", i.ego_speed),
            ("target_ahead", i.target_ahead),
            ("target_lateral", i.target_lateral),
            ("target_speed", i.target_speed),
            ("target_heading", i.target_heading),
        ] {
            if !(r[0].is_finite() && r[1].is_finite() && r[0] <= r[1]) {
                return Err(Error::Config(format!("initial.{name} must be an ordered finite range")));
            }
        }
        if i.ego_speed[0] < 0.0 || i.target_speed[0] < 0.0 {
            return bad("initial speeds must be non-negative");
        }
        if self.init_var_jerk.iter().chain(&self.init_var_ctra).any(|v| !(v.is_finite() && *v >= 0.0)) {
            return bad("initial variances must be non-negative");
        }
        Ok(())
    }

    /// Models in canonical order without repetitions.
    pub fn model_set(&self) -> Vec<Model> {
        Model::ALL.into_iter().filter(|m| self.models.contains(m)).collect()
    }

    fn unmeasured_cov(&self, model: Model) -> Matrix4<f64> {
        let d = if model.is_jerk_model() { self.init_var_jerk } else { self.init_var_ctra };
        Matrix4::from_diagonal(&d.into())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPair {
    pub times: Vec<f64>,
    pub ego: Vec<CtraState>,
    pub target: Vec<CtraState>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementFrame {
    pub t: f64,
    /// `(ψ̇, v, a)` of the ego.
    pub proprio: [f64; 3],
    pub proprio_cov: Matrix3<f64>,
    /// Target position in the ego frame.
    pub extero: [f64; 2],
    pub extero_cov: Matrix2<f64>,
    /// Rate of change of the relative position in the ego frame.
    pub extero_velocity: [f64; 2],
    pub extero_velocity_cov: Matrix2<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricsRow {
    pub model: Model,
    pub avg_max_error: f64,
    pub avg_mean_error: f64,
    pub gramian_det_min: f64,
    pub gramian_det_max: f64,
}

#[derive(Clone, Copy)]
#[repr(u64)]
enum Channel {
    Init = 1,
    EgoNoise = 2,
    TargetNoise = 3,
    PsiPerturb = 4,
    Proprio = 5,
    Extero = 6,
    ExteroVelocity = 7,
}

/// Independent random stream for one (seed, trajectory, step, channel) cell.
fn stream(seed: u64, traj: usize, step: usize, channel: Channel) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    for (chunk, word) in key.chunks_exact_mut(8).zip([seed, traj as u64, step as u64, channel as u64]) {
        chunk.copy_from_slice(&word.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Draws from `N(0, cov)` using a symmetric square root, so singular covariances are fine.
fn gaussian<const N: usize>(rng: &mut impl Rng, cov: &SMatrix<f64, N, N>) -> SVector<f64, N> {
    let z = SVector::<f64, N>::from_fn(|_, _| rng.sample(StandardNormal));
    if cov.iter().all(|c| *c == 0.0) {
        return SVector::zeros();
    }
    let eig = nalgebra::DMatrix::from_column_slice(N, N, cov.as_slice()).symmetric_eigen();
    let root = eig.eigenvectors * nalgebra::DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
    SMatrix::<f64, N, N>::from_column_slice(root.as_slice()) * z
}

fn uniform(rng: &mut impl Rng, range: [f64; 2]) -> f64 {
    if range[0] == range[1] {
        range[0]
    } else {
        rng.random_range(range[0]..range[1])
    }
}

/// Reference trajectories of ego and target for one run.
pub fn generate_pair(cfg: &StudyConfig, traj_index: usize) -> TrajectoryPair {
    let seed = cfg.rng_seed;
    let mut rng = stream(seed, traj_index, 0, Channel::Init);
    let i = &cfg.initial;
    let ego0 = CtraState::new(0.0, 0.0, 0.0, 0.0, uniform(&mut rng, i.ego_speed), 0.0);
    let target0 = CtraState::new(
        uniform(&mut rng, i.target_ahead),
        uniform(&mut rng, i.target_lateral),
        uniform(&mut rng, i.target_heading),
        0.0,
        uniform(&mut rng, i.target_speed),
        0.0,
    );
    let n = cfg.n_samples();
    let mut pair = TrajectoryPair {
        times: (0..n).map(|k| k as f64 * cfg.dt).collect(),
        ego: Vec::with_capacity(n),
        target: Vec::with_capacity(n),
    };
    pair.ego.push(ego0);
    pair.target.push(target0);
    for k in 1..n {
        let ne = gaussian(&mut stream(seed, traj_index, k, Channel::EgoNoise), &cfg.gen_noise.ego_ctra);
        let nt = gaussian(&mut stream(seed, traj_index, k, Channel::TargetNoise), &cfg.gen_noise.target_ctra);
        let ego = ctra_propagate(&pair.ego[k - 1], cfg.dt, CtraNoiseSample::new(ne[0], ne[1]));
        let mut target = ctra_propagate(&pair.target[k - 1], cfg.dt, CtraNoiseSample::new(nt[0], nt[1]));
        if cfg.psi_perturb_sigma > 0.0 {
            let d: f64 = stream(seed, traj_index, k, Channel::PsiPerturb).sample(StandardNormal);
            target.psi = wrap_angle(target.psi + cfg.psi_perturb_sigma * d);
        }
        pair.ego.push(ego);
        pair.target.push(target);
    }
    pair
}

/// Target position in the ego frame.
pub fn relative_position(ego: &CtraState, target: &CtraState) -> Vector2<f64> {
    rotation(ego.psi).apply(Vector2::new(target.x - ego.x, target.y - ego.y))
}

/// Noisy sensor readings for every sample of a trajectory pair.
pub fn synthesize_measurements(tp: &TrajectoryPair, cfg: &StudyConfig, traj_index: usize) -> Vec<MeasurementFrame> {
    let noise = &cfg.gen_noise;
    tp.times
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let ego = &tp.ego[k];
            let wp = gaussian(&mut stream(cfg.rng_seed, traj_index, k, Channel::Proprio), &noise.meas_proprio);
            let we = gaussian(&mut stream(cfg.rng_seed, traj_index, k, Channel::Extero), &noise.meas_extero);
            let wv = gaussian(
                &mut stream(cfg.rng_seed, traj_index, k, Channel::ExteroVelocity),
                &noise.meas_extero_velocity,
            );
            let body = to_relative(Model::A, &tp.target[k], ego).data;
            let rel = relative_position(ego, &tp.target[k]) + we;
            MeasurementFrame {
                t,
                proprio: [ego.psidot + wp[0], ego.v + wp[1], ego.a + wp[2]],
                proprio_cov: noise.meas_proprio,
                extero: [rel[0], rel[1]],
                extero_cov: noise.meas_extero,
                extero_velocity: [body[2] + wv[0], body[3] + wv[1]],
                extero_velocity_cov: noise.meas_extero_velocity,
            }
        })
        .collect()
}

/// Euclidean error of an estimated relative position against the truth.
pub fn position_error(est: &RelState, ego_truth: &CtraState, target_truth: &CtraState) -> f64 {
    let truth = relative_position(ego_truth, target_truth);
    (Vector2::new(est.data[0], est.data[1]) - truth).norm()
}

/// Average over trajectories of the per-trajectory maximum and mean error.
pub fn aggregate(errors: &[Vec<f64>]) -> Result<(f64, f64)> {
    if errors.is_empty() || errors.iter().any(|e| e.is_empty()) {
        return Err(Error::Config("aggregation needs at least one step of at least one trajectory".into()));
    }
    let n = errors.len() as f64;
    let avg_max = errors.iter().map(|e| e.iter().copied().fold(f64::NEG_INFINITY, f64::max)).sum::<f64>() / n;
    let avg_mean = errors.iter().map(|e| e.iter().sum::<f64>() / e.len() as f64).sum::<f64>() / n;
    Ok((avg_max, avg_mean))
}

/// One evaluated step of one track.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub t: f64,
    pub delta: f64,
    /// Gramian determinant at the linearization point of this step's prediction.
    pub gramian_det: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Divergence {
    pub step: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackResult {
    pub model: Model,
    pub records: Vec<StepRecord>,
    /// Posterior at every sample, present when traces were requested.
    pub trace: Vec<TargetBelief>,
    pub divergence: Option<Divergence>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryResult {
    pub index: usize,
    pub tracks: Vec<TrackResult>,
}

struct Track {
    belief: TargetBelief,
    result: TrackResult,
}

/// Runs the ego filter and one target filter per model over a measured trajectory.
pub fn run_filters(
    cfg: &StudyConfig,
    pair: &TrajectoryPair,
    frames: &[MeasurementFrame],
    traj_index: usize,
    keep_trace: bool,
) -> Result<TrajectoryResult> {
    let fnoise = cfg.filter_noise();
    let first = frames.first().ok_or_else(|| Error::Config("no measurement frames".into()))?;
    let proprio = MeasurementModel::proprio(&fnoise.meas_proprio)?;
    let extero = MeasurementModel::extero_position(&fnoise.meas_extero)?;
    let extero_pv = MeasurementModel::extero_position_velocity(&fnoise.meas_extero, &fnoise.meas_extero_velocity)?;

    let mut ego_cov = nalgebra::Matrix6::zeros();
    ego_cov.fixed_view_mut::<3, 3>(3, 3).copy_from(&Matrix3::from_fn(|r, c| proprio.w[(r, c)]));
    let [w0, v0, a0] = first.proprio;
    let mut ego =
        EgoFilter::new(EgoBelief::new(CtraState::new(0.0, 0.0, 0.0, w0, v0, a0), ego_cov), fnoise.ego_ctra, proprio)?;

    let z0 = Vector2::from(first.extero);
    let mut tracks = cfg
        .model_set()
        .into_iter()
        .map(|model| {
            let belief = initialize_track(model, &z0, &extero, &cfg.unmeasured_cov(model))?;
            let trace = if keep_trace { vec![belief] } else { Vec::new() };
            Ok(Track { belief, result: TrackResult { model, records: Vec::new(), trace, divergence: None } })
        })
        .collect::<Result<Vec<_>>>()?;

    for (k, frame) in frames.iter().enumerate().skip(1) {
        let ego_in: EgoInput = ego.ego_input();
        for track in tracks.iter_mut().filter(|t| t.result.divergence.is_none()) {
            let model = track.result.model;
            let gramian_det = stochastic_gramian(model, &track.belief.mean, &ego_in, cfg.dt, &Matrix2::identity())
                .map(|r| r.det)
                .unwrap_or(f64::NAN);
            let prior = predict(&track.belief, &ego_in, &fnoise.relative_process(model), cfg.dt);
            let posterior = if cfg.extero_velocity {
                let [x, y] = frame.extero;
                let [vx, vy] = frame.extero_velocity;
                // ego motion at the measurement time
                let at_k = EgoInput { v0: ego_in.v0 + ego_in.a0 * cfg.dt, ..ego_in };
                update_position_velocity(&prior, &[x, y, vx, vy], &extero_pv, &at_k)
            } else {
                update(&prior, &frame.extero, &extero)
            };
            match posterior {
                Ok(post) if post.mean.is_finite() && post.cov.iter().all(|c| c.is_finite()) => {
                    track.belief = post;
                    if keep_trace {
                        track.result.trace.push(post);
                    }
                    if k > cfg.warmup_steps {
                        track.result.records.push(StepRecord {
                            step: k,
                            t: frame.t,
                            delta: position_error(&post.mean, &pair.ego[k], &pair.target[k]),
                            gramian_det,
                        });
                    }
                }
                Ok(_) => track.result.divergence = Some(Divergence { step: k, reason: "non-finite estimate".into() }),
                Err(e) => track.result.divergence = Some(Divergence { step: k, reason: e.to_string() }),
            }
        }
        ego.predict(cfg.dt);
        ego.update(&frame.proprio)?;
    }

    Ok(TrajectoryResult { index: traj_index, tracks: tracks.into_iter().map(|t| t.result).collect() })
}

/// Generates, measures and filters one trajectory.
pub fn run_trajectory(cfg: &StudyConfig, traj_index: usize, keep_trace: bool) -> Result<TrajectoryResult> {
    let pair = generate_pair(cfg, traj_index);
    let frames = synthesize_measurements(&pair, cfg, traj_index);
    run_filters(cfg, &pair, &frames, traj_index, keep_trace)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyReport {
    pub metrics: Vec<MetricsRow>,
    /// Per-trajectory results in trajectory order.
    pub trajectories: Vec<TrajectoryResult>,
}

impl StudyReport {
    /// `(trajectory, model, divergence)` for every track that stopped early.
    pub fn divergences(&self) -> Vec<(usize, Model, &Divergence)> {
        self.trajectories
            .iter()
            .flat_map(|t| t.tracks.iter().filter_map(move |r| r.divergence.as_ref().map(|d| (t.index, r.model, d))))
            .collect()
    }
}

/// Metrics per model from per-step records; `map` is applied to every value first.
pub fn metrics_from_records(
    trajectories: &[TrajectoryResult],
    models: &[Model],
    map: impl Fn(f64) -> f64,
) -> Result<Vec<MetricsRow>> {
    models
        .iter()
        .map(|&model| {
            let tracks: Vec<&TrackResult> = trajectories
                .iter()
                .flat_map(|t| t.tracks.iter().filter(|r| r.model == model && !r.records.is_empty()))
                .collect();
            let errors: Vec<Vec<f64>> =
                tracks.iter().map(|r| r.records.iter().map(|s| map(s.delta)).collect()).collect();
            let (avg_max_error, avg_mean_error) = aggregate(&errors)
                .map_err(|_| Error::Numerical(format!("model {model}: no track produced any estimate")))?;
            let dets =
                tracks.iter().flat_map(|r| r.records.iter().map(|s| map(s.gramian_det))).filter(|d| d.is_finite());
            let (lo, hi) = dets.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), d| (lo.min(d), hi.max(d)));
            Ok(MetricsRow {
                model,
                avg_max_error,
                avg_mean_error,
                gramian_det_min: if lo.is_finite() { lo } else { f64::NAN },
                gramian_det_max: if hi.is_finite() { hi } else { f64::NAN },
            })
        })
        .collect()
}

/// Runs the full study. Trajectories are processed in parallel on the current rayon pool;
/// the result does not depend on scheduling.
pub fn run_study(cfg: &StudyConfig) -> Result<StudyReport> {
    cfg.validate()?;
    let trajectories =
        (0..cfg.n_trajectories).into_par_iter().map(|j| run_trajectory(cfg, j, false)).collect::<Result<Vec<_>>>()?;
    let metrics = metrics_from_records(&trajectories, &cfg.model_set(), |x| x)?;
    Ok(StudyReport { metrics, trajectories })
}

/// [`run_study`] on a dedicated pool with the given number of threads.
pub fn run_study_with_threads(cfg: &StudyConfig, threads: usize) -> Result<StudyReport> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| run_study(cfg))
}

/// Relative truth state of a model, for consistency checks.
pub fn relative_truth(model: Model, ego: &CtraState, target: &CtraState) -> Vector6<f64> {
    crate::frames::to_relative(model, target, ego).data
}
