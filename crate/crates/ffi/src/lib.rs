//! C ABI for the relkal tracking library.
//!
//! Conventions:
//! - every function returns a [`RelkalStatus`]; on failure a message is available
//!   from [`relkal_last_error_message`] on the same thread,
//! - states are `double[6]`, matrices are row-major,
//! - global CTRA states are `(x, y, psi, psidot, v, a)`,
//! - models are selected with the `RELKAL_MODEL_*` constants.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nalgebra::{Matrix2, Matrix3, Matrix4, SMatrix, Vector2, Vector4, Vector6};
use relkal::ekf::{self, MeasurementModel};
use relkal::frames;
use relkal::global_models::{ctra_propagate, CtraNoiseSample};
use relkal::observability::stochastic_gramian;
use relkal::relmodels::{self, RelNoiseSample};
use relkal::simlab::{run_study, run_study_with_threads, StudyConfig};
use relkal::{CtraState, EgoInput, Error, Model, NoiseSpec, RelState, TargetBelief};

pub const RELKAL_MODEL_A: c_int = 0;
pub const RELKAL_MODEL_B: c_int = 1;
pub const RELKAL_MODEL_C: c_int = 2;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RelkalStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Dimension = 4,
    DegenerateSpeed = 5,
    SingularInnovation = 6,
    Numerical = 7,
    NotInitialized = 8,
    Panic = 99,
}

/// Ego motion over one step: speed, acceleration, yaw rate and the row-major
/// covariance of `(v, a, psidot)`.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct RelkalEgoInput {
    pub v: f64,
    pub a: f64,
    pub psidot: f64,
    pub cov: [f64; 9],
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct RelkalGramianReport {
    pub det: f64,
    pub min_singular_value: f64,
    pub n_blocks: usize,
    pub observable: bool,
}

/// Opaque target tracker for one model.
pub struct RelkalTracker {
    model: Model,
    extero: MeasurementModel,
    process: Matrix4<f64>,
    unmeasured: Matrix4<f64>,
    belief: Option<TargetBelief>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Failure(RelkalStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::DegenerateSpeed { .. } => RelkalStatus::DegenerateSpeed,
            Error::SingularInnovation { .. } => RelkalStatus::SingularInnovation,
            Error::Dimension(_) => RelkalStatus::Dimension,
            Error::Config(_) => RelkalStatus::Config,
            Error::Numerical(_) => RelkalStatus::Numerical,
        };
        Failure(status, e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(RelkalStatus::InvalidArgument, msg.into())
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> RelkalStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            RelkalStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            RelkalStatus::Panic
        }
    }
}

fn model_from(raw: c_int) -> Result<Model, Failure> {
    match raw {
        RELKAL_MODEL_A => Ok(Model::A),
        RELKAL_MODEL_B => Ok(Model::B),
        RELKAL_MODEL_C => Ok(Model::C),
        other => Err(Failure(RelkalStatus::Config, format!("unknown model {other}, expected one of A=0, B=1, C=2"))),
    }
}

/// Reads `N` finite values.
///
/// # Safety
/// `p` must be null or point to `N` readable doubles.
unsafe fn read<const N: usize>(p: *const f64, what: &str) -> Result<[f64; N], Failure> {
    if p.is_null() {
        return Err(Failure(RelkalStatus::NullPointer, format!("{what} is null")));
    }
    let mut out = [0.0; N];
    out.copy_from_slice(std::slice::from_raw_parts(p, N));
    if out.iter().any(|x| !x.is_finite()) {
        return Err(invalid(format!("{what} contains a non-finite value")));
    }
    Ok(out)
}

/// # Safety
/// `p` must be null or point to `N` writable doubles.
unsafe fn write(p: *mut f64, values: &[f64], what: &str) -> Result<(), Failure> {
    if p.is_null() {
        return Err(Failure(RelkalStatus::NullPointer, format!("{what} is null")));
    }
    std::slice::from_raw_parts_mut(p, values.len()).copy_from_slice(values);
    Ok(())
}

fn row_major<const R: usize, const C: usize>(m: &SMatrix<f64, R, C>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

unsafe fn read_ego(p: *const RelkalEgoInput) -> Result<EgoInput, Failure> {
    let e = p.as_ref().ok_or_else(|| Failure(RelkalStatus::NullPointer, "ego input is null".into()))?;
    if [e.v, e.a, e.psidot].iter().chain(&e.cov).any(|x| !x.is_finite()) {
        return Err(invalid("ego input contains a non-finite value"));
    }
    Ok(EgoInput::new(e.v, e.a, e.psidot).with_cov(Matrix3::from_row_slice(&e.cov)))
}

fn check_dt(dt: f64) -> Result<(), Failure> {
    if dt.is_finite() && dt >= 0.0 {
        Ok(())
    } else {
        Err(invalid("dt must be finite and non-negative"))
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn relkal_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, empty after a success.
/// The pointer stays valid until the next library call on this thread.
#[no_mangle]
pub extern "C" fn relkal_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Propagates a global CTRA state over `dt` with constant yaw acceleration and jerk.
///
/// # Safety
/// `state` and `out` must point to 6 doubles.
#[no_mangle]
pub unsafe extern "C" fn relkal_ctra_propagate(
    state: *const f64,
    dt: f64,
    nu_psidd: f64,
    nu_adot: f64,
    out: *mut f64,
) -> RelkalStatus {
    guard(|| {
        let s = CtraState::from_vector(&Vector6::from(read::<6>(state, "state")?));
        check_dt(dt)?;
        if !(nu_psidd.is_finite() && nu_adot.is_finite()) {
            return Err(invalid("noise must be finite"));
        }
        let next = ctra_propagate(&s, dt, CtraNoiseSample::new(nu_psidd, nu_adot));
        write(out, next.to_vector().as_slice(), "out")
    })
}

/// Relative coordinates of `target` as seen from `ego` (both global CTRA states).
///
/// # Safety
/// `target`, `ego` and `out` must point to 6 doubles.
#[no_mangle]
pub unsafe extern "C" fn relkal_to_relative(
    model: c_int,
    target: *const f64,
    ego: *const f64,
    out: *mut f64,
) -> RelkalStatus {
    guard(|| {
        let model = model_from(model)?;
        let t = CtraState::from_vector(&Vector6::from(read::<6>(target, "target")?));
        let e = CtraState::from_vector(&Vector6::from(read::<6>(ego, "ego")?));
        write(out, frames::to_relative(model, &t, &e).data.as_slice(), "out")
    })
}

/// Global CTRA target state from relative coordinates and the global ego state.
///
/// # Safety
/// `rel`, `ego` and `out` must point to 6 doubles.
#[no_mangle]
pub unsafe extern "C" fn relkal_from_relative(
    model: c_int,
    rel: *const f64,
    ego: *const f64,
    out: *mut f64,
) -> RelkalStatus {
    guard(|| {
        let model = model_from(model)?;
        let r = RelState::new(model, Vector6::from(read::<6>(rel, "rel")?));
        let e = CtraState::from_vector(&Vector6::from(read::<6>(ego, "ego")?));
        let t = frames::from_relative(model, &r, &e)?;
        write(out, t.to_vector().as_slice(), "out")
    })
}

/// Propagates a relative state over `dt`. `noise` is the stacked
/// `(target, target, ego yaw acceleration, ego jerk)` sample and may be null for zero.
///
/// # Safety
/// `rel` and `out` must point to 6 doubles, `noise` to 4 doubles or be null.
#[no_mangle]
pub unsafe extern "C" fn relkal_propagate_relative(
    model: c_int,
    rel: *const f64,
    ego: *const RelkalEgoInput,
    dt: f64,
    noise: *const f64,
    out: *mut f64,
) -> RelkalStatus {
    guard(|| {
        let model = model_from(model)?;
        let r = RelState::new(model, Vector6::from(read::<6>(rel, "rel")?));
        let e = read_ego(ego)?;
        check_dt(dt)?;
        let n = if noise.is_null() {
            RelNoiseSample::zero(model)
        } else {
            RelNoiseSample::from_vector(model, &Vector4::from(read::<4>(noise, "noise")?))
        };
        write(out, relmodels::propagate_relative(model, &r, &e, dt, &n).data.as_slice(), "out")
    })
}

/// Jacobians of one step: `a_out` 6×6 (state), `b_out` 6×3 (ego `v, a, psidot`),
/// `g_out` 6×4 (stacked noise), all row-major. Any output may be null to skip it.
///
/// # Safety
/// `rel` must point to 6 doubles; non-null outputs to 36, 18 and 24 doubles.
#[no_mangle]
pub unsafe extern "C" fn relkal_discrete_jacobians(
    model: c_int,
    rel: *const f64,
    ego: *const RelkalEgoInput,
    dt: f64,
    a_out: *mut f64,
    b_out: *mut f64,
    g_out: *mut f64,
) -> RelkalStatus {
    guard(|| {
        let model = model_from(model)?;
        let r = RelState::new(model, Vector6::from(read::<6>(rel, "rel")?));
        let e = read_ego(ego)?;
        check_dt(dt)?;
        let j = relmodels::discrete_jacobians(model, &r, &e, dt);
        if !a_out.is_null() {
            write(a_out, &row_major(&j.a), "a_out")?;
        }
        if !b_out.is_null() {
            write(b_out, &row_major(&j.b), "b_out")?;
        }
        if !g_out.is_null() {
            write(g_out, &row_major(&j.g), "g_out")?;
        }
        Ok(())
    })
}

/// Observability Gramian report for position measurements with covariance `w` (2×2).
///
/// # Safety
/// `rel` must point to 6 doubles, `w` to 4, `out` to a report.
#[no_mangle]
pub unsafe extern "C" fn relkal_gramian(
    model: c_int,
    rel: *const f64,
    ego: *const RelkalEgoInput,
    dt: f64,
    w: *const f64,
    out: *mut RelkalGramianReport,
) -> RelkalStatus {
    guard(|| {
        let model = model_from(model)?;
        let r = RelState::new(model, Vector6::from(read::<6>(rel, "rel")?));
        let e = read_ego(ego)?;
        let w = Matrix2::from_row_slice(&read::<4>(w, "w")?);
        if !(dt.is_finite() && dt > 0.0) {
            return Err(invalid("dt must be positive"));
        }
        let out = out.as_mut().ok_or_else(|| Failure(RelkalStatus::NullPointer, "out is null".into()))?;
        let rep = stochastic_gramian(model, &r, &e, dt, &w)?;
        *out = RelkalGramianReport {
            det: rep.det,
            min_singular_value: rep.min_singular_value,
            n_blocks: rep.n_blocks,
            observable: rep.observable,
        };
        Ok(())
    })
}

/// Creates a tracker. `extero_cov` (2×2) and `process_cov` (4×4, stacked target and ego
/// process noise) may be null for the library defaults.
///
/// # Safety
/// Non-null inputs must point to 4 and 16 doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn relkal_tracker_new(
    model: c_int,
    extero_cov: *const f64,
    process_cov: *const f64,
    out: *mut *mut RelkalTracker,
) -> RelkalStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure(RelkalStatus::NullPointer, "out is null".into()));
        }
        let model = model_from(model)?;
        let defaults = NoiseSpec::default();
        let w = if extero_cov.is_null() {
            defaults.meas_extero
        } else {
            Matrix2::from_row_slice(&read::<4>(extero_cov, "extero_cov")?)
        };
        let process = if process_cov.is_null() {
            defaults.relative_process(model)
        } else {
            Matrix4::from_row_slice(&read::<16>(process_cov, "process_cov")?)
        };
        let tracker = RelkalTracker {
            model,
            extero: MeasurementModel::extero_position(&w)?,
            process,
            unmeasured: ekf::default_unmeasured_cov(model),
            belief: None,
        };
        *out = Box::into_raw(Box::new(tracker));
        Ok(())
    })
}

/// Releases a tracker; null is ignored.
///
/// # Safety
/// `tracker` must come from [`relkal_tracker_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn relkal_tracker_free(tracker: *mut RelkalTracker) {
    if !tracker.is_null() {
        drop(Box::from_raw(tracker));
    }
}

unsafe fn tracker_mut<'a>(t: *mut RelkalTracker) -> Result<&'a mut RelkalTracker, Failure> {
    t.as_mut().ok_or_else(|| Failure(RelkalStatus::NullPointer, "tracker is null".into()))
}

fn belief(t: &RelkalTracker) -> Result<&TargetBelief, Failure> {
    t.belief.as_ref().ok_or_else(|| Failure(RelkalStatus::NotInitialized, "tracker has no estimate yet".into()))
}

/// Starts (or restarts) the track from a first position measurement `z` (2 doubles).
///
/// # Safety
/// `tracker` must be valid, `z` must point to 2 doubles.
#[no_mangle]
pub unsafe extern "C" fn relkal_tracker_initialize(tracker: *mut RelkalTracker, z: *const f64) -> RelkalStatus {
    guard(|| {
        let t = tracker_mut(tracker)?;
        let z = Vector2::from(read::<2>(z, "z")?);
        t.belief = Some(ekf::initialize_track(t.model, &z, &t.extero, &t.unmeasured)?);
        Ok(())
    })
}

/// Prediction step over `dt` given the ego input.
///
/// # Safety
/// `tracker` and `ego` must be valid.
#[no_mangle]
pub unsafe extern "C" fn relkal_tracker_predict(
    tracker: *mut RelkalTracker,
    ego: *const RelkalEgoInput,
    dt: f64,
) -> RelkalStatus {
    guard(|| {
        let t = tracker_mut(tracker)?;
        let e = read_ego(ego)?;
        check_dt(dt)?;
        let prior = ekf::predict(belief(t)?, &e, &t.process, dt);
        t.belief = Some(prior);
        Ok(())
    })
}

/// Update with a relative position measurement `z` (2 doubles).
///
/// # Safety
/// `tracker` must be valid, `z` must point to 2 doubles.
#[no_mangle]
pub unsafe extern "C" fn relkal_tracker_update(tracker: *mut RelkalTracker, z: *const f64) -> RelkalStatus {
    guard(|| {
        let t = tracker_mut(tracker)?;
        let z = read::<2>(z, "z")?;
        let post = ekf::update(belief(t)?, &z, &t.extero)?;
        t.belief = Some(post);
        Ok(())
    })
}

/// Update with relative position and velocity `z = (x, y, vx, vy)` in the ego frame.
/// `ego` is the ego motion at the measurement time; `velocity_cov` (2×2) may be null
/// for the library default.
///
/// # Safety
/// `tracker` and `ego` must be valid, `z` must point to 4 doubles, `velocity_cov` to 4 or be null.
#[no_mangle]
pub unsafe extern "C" fn relkal_tracker_update_position_velocity(
    tracker: *mut RelkalTracker,
    z: *const f64,
    ego: *const RelkalEgoInput,
    velocity_cov: *const f64,
) -> RelkalStatus {
    guard(|| {
        let t = tracker_mut(tracker)?;
        let z = read::<4>(z, "z")?;
        let e = read_ego(ego)?;
        let w_vel = if velocity_cov.is_null() {
            NoiseSpec::default().meas_extero_velocity
        } else {
            Matrix2::from_row_slice(&read::<4>(velocity_cov, "velocity_cov")?)
        };
        let w_pos = Matrix2::from_fn(|r, c| t.extero.w[(r, c)]);
        let m = MeasurementModel::extero_position_velocity(&w_pos, &w_vel)?;
        let post = ekf::update_position_velocity(belief(t)?, &z, &m, &e)?;
        t.belief = Some(post);
        Ok(())
    })
}

/// Copies the current mean (6) and, if `cov_out` is non-null, the covariance (36, row-major).
///
/// # Safety
/// `tracker` must be valid, `mean_out` must point to 6 doubles, `cov_out` to 36 or be null.
#[no_mangle]
pub unsafe extern "C" fn relkal_tracker_state(
    tracker: *const RelkalTracker,
    mean_out: *mut f64,
    cov_out: *mut f64,
) -> RelkalStatus {
    guard(|| {
        let t = tracker.as_ref().ok_or_else(|| Failure(RelkalStatus::NullPointer, "tracker is null".into()))?;
        let b = belief(t)?;
        write(mean_out, b.mean.data.as_slice(), "mean_out")?;
        if !cov_out.is_null() {
            write(cov_out, &row_major(&b.cov), "cov_out")?;
        }
        Ok(())
    })
}

/// Runs a Monte-Carlo study from a JSON configuration (null or `"{}"` for defaults) and
/// returns the metrics and divergences as a JSON string to release with
/// [`relkal_string_free`]. `threads` of 0 uses the global pool.
///
/// # Safety
/// `config_json` must be null or NUL-terminated; `out_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn relkal_study_run_json(
    config_json: *const c_char,
    threads: usize,
    out_json: *mut *mut c_char,
) -> RelkalStatus {
    guard(|| {
        if out_json.is_null() {
            return Err(Failure(RelkalStatus::NullPointer, "out_json is null".into()));
        }
        *out_json = ptr::null_mut();
        let cfg = if config_json.is_null() {
            StudyConfig::default()
        } else {
            let text = CStr::from_ptr(config_json).to_str().map_err(|_| invalid("config is not UTF-8"))?;
            StudyConfig::from_json(text)?
        };
        let report = if threads == 0 { run_study(&cfg)? } else { run_study_with_threads(&cfg, threads)? };
        let divergences: Vec<_> = report
            .divergences()
            .into_iter()
            .map(|(traj, model, d)| serde_json::json!({"trajectory": traj, "model": model, "step": d.step, "reason": d.reason}))
            .collect();
        let body = serde_json::json!({"metrics": report.metrics, "divergences": divergences});
        let text = CString::new(body.to_string()).map_err(|_| invalid("result contains NUL"))?;
        *out_json = text.into_raw();
        Ok(())
    })
}

/// Releases a string returned by the library; null is ignored.
///
/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn relkal_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
