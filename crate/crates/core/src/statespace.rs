//! State, covariance and noise value types.
//!
//! All quantities are SI: metres, seconds, radians. Global states live in an
//! earth-fixed (inertial) frame; relative states live in the frame attached to
//! the ego vehicle's reference point with the x axis along the ego heading.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix2, Matrix3, Matrix6, SMatrix, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Speed below which heading is not recoverable from a Cartesian velocity.
pub const SPEED_EPSILON: f64 = 1e-6;

/// Wraps an angle into (-π, π].
pub fn wrap_angle(angle: f64) -> f64 {
    let mut a = angle.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    a
}

/// Global constant-turn-rate-and-acceleration state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CtraState {
    /// Position east, m.
    pub x: f64,
    /// Position north, m.
    pub y: f64,
    /// Heading, rad.
    pub psi: f64,
    /// Yaw rate, rad/s.
    pub psidot: f64,
    /// Speed over ground, m/s.
    pub v: f64,
    /// Longitudinal acceleration, m/s².
    pub a: f64,
}

impl CtraState {
    pub const fn new(x: f64, y: f64, psi: f64, psidot: f64, v: f64, a: f64) -> Self {
        Self { x, y, psi, psidot, v, a }
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self::new(v[0], v[1], v[2], v[3], v[4], v[5])
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(self.x, self.y, self.psi, self.psidot, self.v, self.a)
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|c| c.is_finite())
    }

    /// Same state with the heading wrapped into (-π, π].
    pub fn wrapped(mut self) -> Self {
        self.psi = wrap_angle(self.psi);
        self
    }
}

/// Global Cartesian state: position, velocity and acceleration per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CartesianState6 {
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    pub ax: f64,
    pub ay: f64,
}

impl CartesianState6 {
    pub const fn new(x: f64, y: f64, vx: f64, vy: f64, ax: f64, ay: f64) -> Self {
        Self { x, y, vx, vy, ax, ay }
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self::new(v[0], v[1], v[2], v[3], v[4], v[5])
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(self.x, self.y, self.vx, self.vy, self.ax, self.ay)
    }

    pub fn speed(&self) -> f64 {
        self.vx.hypot(self.vy)
    }
}

/// Choice of relative coordinates and target dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Model {
    /// Body-fixed Cartesian coordinates with non-inertial corrections, white-noise-jerk target.
    A,
    /// Mixed coordinates (relative position, over-ground velocity and acceleration rotated
    /// into the ego frame), white-noise-jerk target.
    B,
    /// Mixed coordinates (relative position and heading, over-ground yaw rate, speed and
    /// acceleration), CTRA target.
    C,
}

impl Model {
    pub const ALL: [Model; 3] = [Model::A, Model::B, Model::C];

    /// True for the two models whose target follows the white-noise-jerk model.
    pub fn is_jerk_model(self) -> bool {
        matches!(self, Model::A | Model::B)
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Model::A => "A",
            Model::B => "B",
            Model::C => "C",
        };
        f.write_str(s)
    }
}

impl FromStr for Model {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "A" | "a" => Ok(Model::A),
            "B" | "b" => Ok(Model::B),
            "C" | "c" => Ok(Model::C),
            other => Err(Error::Config(format!("unknown model '{other}', expected one of A, B, C"))),
        }
    }
}

/// Model-tagged six-dimensional relative state.
///
/// Layout per model:
/// - A: body-fixed `(x, y, ẋ, ẏ, ẍ, ÿ)`,
/// - B: relative `(x, y)`, over-ground `(ẋ, ẏ, ẍ, ÿ)` rotated into the ego frame,
/// - C: `(x_rel, y_rel, ψ_rel, ψ̇_g, v_g, a_g)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelState {
    pub model: Model,
    pub data: Vector6<f64>,
}

impl RelState {
    pub fn new(model: Model, data: Vector6<f64>) -> Self {
        Self { model, data }
    }

    pub fn zeros(model: Model) -> Self {
        Self::new(model, Vector6::zeros())
    }

    /// Relative position in the ego frame.
    pub fn position(&self) -> (f64, f64) {
        (self.data[0], self.data[1])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|c| c.is_finite())
    }
}

/// Mean and covariance of a six-dimensional state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianBelief<S> {
    pub mean: S,
    pub cov: Matrix6<f64>,
}

impl<S> GaussianBelief<S> {
    pub fn new(mean: S, cov: Matrix6<f64>) -> Self {
        Self { mean, cov }
    }
}

pub type TargetBelief = GaussianBelief<RelState>;
pub type EgoBelief = GaussianBelief<CtraState>;

/// Observable ego quantities fed to the relative target dynamics, with their covariance.
///
/// The covariance is ordered `(v0, a0, ψ̇0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EgoInput {
    pub v0: f64,
    pub a0: f64,
    pub psidot0: f64,
    pub cov: Matrix3<f64>,
}

impl EgoInput {
    pub fn new(v0: f64, a0: f64, psidot0: f64) -> Self {
        Self { v0, a0, psidot0, cov: Matrix3::zeros() }
    }

    pub fn with_cov(mut self, cov: Matrix3<f64>) -> Self {
        self.cov = cov;
        self
    }

    /// Ego CTRA state at the origin of its own frame.
    pub(crate) fn local_ctra(&self) -> CtraState {
        CtraState::new(0.0, 0.0, 0.0, self.psidot0, self.v0, self.a0)
    }
}

/// Noise covariances for generation and filtering.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    /// Target CTRA noise `(ν_ψ̈, ν_ȧ)`.
    #[serde(with = "rows")]
    pub target_ctra: Matrix2<f64>,
    /// Target Cartesian jerk noise `(ν_jx, ν_jy)`.
    #[serde(with = "rows")]
    pub target_jerk: Matrix2<f64>,
    /// Ego CTRA noise `(ν_ψ̈, ν_ȧ)`.
    #[serde(with = "rows")]
    pub ego_ctra: Matrix2<f64>,
    /// Proprioceptive readings `(ψ̇, v, a)`.
    #[serde(with = "rows")]
    pub meas_proprio: Matrix3<f64>,
    /// Exteroceptive readings `(x_rel, y_rel)`.
    #[serde(with = "rows")]
    pub meas_extero: Matrix2<f64>,
    /// Optional exteroceptive relative velocity readings.
    #[serde(with = "rows")]
    pub meas_extero_velocity: Matrix2<f64>,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            target_ctra: Matrix2::from_diagonal(&[1.0, 25.0].into()),
            target_jerk: Matrix2::from_diagonal(&[325.0, 325.0].into()),
            ego_ctra: Matrix2::from_diagonal(&[1.0, 25.0].into()),
            meas_proprio: Matrix3::from_diagonal(&[0.01f64.powi(2), 0.1f64.powi(2), 0.3f64.powi(2)].into()),
            meas_extero: Matrix2::from_diagonal(&[0.25, 0.25].into()),
            meas_extero_velocity: Matrix2::from_diagonal(&[0.04, 0.04].into()),
        }
    }
}

impl NoiseSpec {
    /// All-zero noise.
    pub fn zero() -> Self {
        Self {
            target_ctra: Matrix2::zeros(),
            target_jerk: Matrix2::zeros(),
            ego_ctra: Matrix2::zeros(),
            meas_proprio: Matrix3::zeros(),
            meas_extero: Matrix2::zeros(),
            meas_extero_velocity: Matrix2::zeros(),
        }
    }

    /// Stacked `(ν_target, ν_ego)` covariance for the given model.
    pub fn relative_process(&self, model: Model) -> nalgebra::Matrix4<f64> {
        let target = if model.is_jerk_model() { self.target_jerk } else { self.target_ctra };
        let mut v = nalgebra::Matrix4::zeros();
        v.fixed_view_mut::<2, 2>(0, 0).copy_from(&target);
        v.fixed_view_mut::<2, 2>(2, 2).copy_from(&self.ego_ctra);
        v
    }

    pub fn validate(&self) -> Result<()> {
        check_psd("target_ctra", &self.target_ctra)?;
        check_psd("target_jerk", &self.target_jerk)?;
        check_psd("ego_ctra", &self.ego_ctra)?;
        check_psd("meas_proprio", &self.meas_proprio)?;
        check_psd("meas_extero", &self.meas_extero)?;
        check_psd("meas_extero_velocity", &self.meas_extero_velocity)?;
        Ok(())
    }
}

/// Checks a covariance block for finiteness, symmetry and positive semi-definiteness.
pub fn check_psd<const N: usize>(name: &str, m: &SMatrix<f64, N, N>) -> Result<()> {
    if m.iter().any(|c| !c.is_finite()) {
        return Err(Error::Config(format!("{name}: non-finite entry")));
    }
    let scale = m.amax().max(1.0);
    if (m - m.transpose()).amax() > 1e-9 * scale {
        return Err(Error::Config(format!("{name}: not symmetric")));
    }
    let dm = nalgebra::DMatrix::from_iterator(N, N, m.iter().copied());
    let eig = dm.symmetric_eigenvalues();
    let trace = m.trace().abs().max(f64::MIN_POSITIVE);
    if eig.iter().any(|&l| l < -1e-9 * trace) {
        return Err(Error::Config(format!("{name}: not positive semi-definite")));
    }
    Ok(())
}

/// Converts a CTRA state into the Cartesian position/velocity/acceleration it implies.
pub fn ctra_to_cartesian(s: &CtraState) -> CartesianState6 {
    let (sin, cos) = s.psi.sin_cos();
    CartesianState6::new(
        s.x,
        s.y,
        s.v * cos,
        s.v * sin,
        s.a * cos - s.v * s.psidot * sin,
        s.a * sin + s.v * s.psidot * cos,
    )
}

/// Jacobian of [`ctra_to_cartesian`] with respect to the CTRA state vector.
pub(crate) fn ctra_to_cartesian_jacobian(s: &CtraState) -> Matrix6<f64> {
    let (sin, cos) = s.psi.sin_cos();
    let (v, w, a) = (s.v, s.psidot, s.a);
    #[rustfmt::skip]
    let j = Matrix6::new(
        1.0, 0.0, 0.0,                          0.0,        0.0,         0.0,
        0.0, 1.0, 0.0,                          0.0,        0.0,         0.0,
        0.0, 0.0, -v * sin,                     0.0,        cos,         0.0,
        0.0, 0.0, v * cos,                      0.0,        sin,         0.0,
        0.0, 0.0, -a * sin - v * w * cos,       -v * sin,   -w * sin,    cos,
        0.0, 0.0, a * cos - v * w * sin,        v * cos,    w * cos,     sin,
    );
    j
}

/// Inverse of [`ctra_to_cartesian`]; fails when the speed is too small to define a heading.
pub fn cartesian_to_ctra(s: &CartesianState6) -> Result<CtraState> {
    let speed = s.speed();
    if speed.is_nan() || speed <= SPEED_EPSILON {
        return Err(Error::DegenerateSpeed { speed, threshold: SPEED_EPSILON });
    }
    let psi = s.vy.atan2(s.vx);
    let a = (s.vx * s.ax + s.vy * s.ay) / speed;
    let psidot = (s.vx * s.ay - s.vy * s.ax) / (speed * speed);
    Ok(CtraState::new(s.x, s.y, psi, psidot, speed, a))
}

/// Serde adaptor writing a fixed-size matrix as an array of rows.
pub(crate) mod rows {
    use nalgebra::SMatrix;
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S, const R: usize, const C: usize>(m: &SMatrix<f64, R, C>, ser: S) -> Result<S::Ok, S::Error>
    where
        S: Serializer,
    {
        let rows: Vec<Vec<f64>> = (0..R).map(|i| (0..C).map(|j| m[(i, j)]).collect()).collect();
        rows.serialize(ser)
    }

    pub fn deserialize<'de, D, const R: usize, const C: usize>(de: D) -> Result<SMatrix<f64, R, C>, D::Error>
    where
        D: Deserializer<'de>,
    {
        let rows: Vec<Vec<f64>> = Vec::deserialize(de)?;
        if rows.len() != R || rows.iter().any(|r| r.len() != C) {
            return Err(D::Error::custom(format!("expected a {R}x{C} matrix given as rows")));
        }
        Ok(SMatrix::from_fn(|i, j| rows[i][j]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn ctra_to_cartesian_examples() {
        let c = ctra_to_cartesian(&CtraState::new(0.0, 0.0, 0.0, 1.0, 2.0, 3.0));
        assert_relative_eq!(c.to_vector(), Vector6::new(0.0, 0.0, 2.0, 0.0, 3.0, 2.0), epsilon = 1e-15);

        let c = ctra_to_cartesian(&CtraState::new(5.0, -2.0, PI / 2.0, 0.0, 4.0, 0.0));
        assert_relative_eq!(c.to_vector(), Vector6::new(5.0, -2.0, 0.0, 4.0, 0.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn cartesian_to_ctra_examples() {
        let s = cartesian_to_ctra(&CartesianState6::new(0.0, 0.0, 2.0, 0.0, 3.0, 2.0)).unwrap();
        assert_relative_eq!(s.to_vector(), Vector6::new(0.0, 0.0, 0.0, 1.0, 2.0, 3.0), epsilon = 1e-15);

        let err = cartesian_to_ctra(&CartesianState6::new(1.0, 1.0, 0.0, 0.0, 0.0, 0.0)).unwrap_err();
        assert!(matches!(err, Error::DegenerateSpeed { .. }));
    }

    #[test]
    fn cartesian_jacobian_matches_differences() {
        let s = CtraState::new(1.0, -2.0, 0.7, 0.3, 12.0, -1.5);
        let j = ctra_to_cartesian_jacobian(&s);
        let h = 1e-6;
        for col in 0..6 {
            let mut p = s.to_vector();
            let mut m = s.to_vector();
            p[col] += h;
            m[col] -= h;
            let d = (ctra_to_cartesian(&CtraState::from_vector(&p)).to_vector()
                - ctra_to_cartesian(&CtraState::from_vector(&m)).to_vector())
                / (2.0 * h);
            assert_relative_eq!(d, j.column(col).into_owned(), epsilon = 1e-7);
        }
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert_relative_eq!(wrap_angle(-PI), PI);
        assert_relative_eq!(wrap_angle(3.0 * PI / 2.0), -PI / 2.0, epsilon = 1e-15);
        assert_eq!(wrap_angle(0.0), 0.0);
    }

    #[test]
    fn model_parse() {
        assert_eq!("B".parse::<Model>().unwrap(), Model::B);
        let msg = "D".parse::<Model>().unwrap_err().to_string();
        assert!(msg.contains("A, B, C"), "{msg}");
    }

    #[test]
    fn noise_spec_json_rows() {
        let spec = NoiseSpec::default();
        let text = serde_json::to_string(&spec).unwrap();
        assert!(text.contains("\"target_jerk\":[[325.0,0.0],[0.0,325.0]]"), "{text}");
        let back: NoiseSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, spec);
        spec.validate().unwrap();
    }

    #[test]
    fn non_psd_noise_rejected() {
        let spec = NoiseSpec { meas_extero: Matrix2::new(1.0, 2.0, 2.0, 1.0), ..NoiseSpec::default() };
        assert!(spec.validate().is_err());
    }

    fn ctra_strategy() -> impl Strategy<Value = CtraState> {
        (-100.0..100.0f64, -100.0..100.0f64, -PI..PI, -1.0..1.0f64, 0.1..40.0f64, -5.0..5.0f64)
            .prop_map(|(x, y, psi, w, v, a)| CtraState::new(x, y, psi, w, v, a))
    }

    proptest! {
        #[test]
        fn ctra_cartesian_round_trip(s in ctra_strategy()) {
            let c = ctra_to_cartesian(&s);
            let back = cartesian_to_ctra(&c).unwrap();
            prop_assert!((back.to_vector() - s.to_vector()).amax() < 1e-9);
            let again = ctra_to_cartesian(&back);
            prop_assert!((again.to_vector() - c.to_vector()).amax() < 1e-9);
        }

        #[test]
        fn heading_wrap_invariance(s in ctra_strategy(), k in -5i32..5) {
            let mut shifted = s;
            shifted.psi += 2.0 * PI * f64::from(k);
            let d = ctra_to_cartesian(&s).to_vector() - ctra_to_cartesian(&shifted).to_vector();
            prop_assert!(d.amax() < 1e-9);
        }
    }
}
