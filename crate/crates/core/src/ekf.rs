//! Extended Kalman filter cycle for the ego vehicle and the relative target track.

use std::ops::AddAssign;

use nalgebra::{DMatrix, DVector, Matrix2, Matrix3, Matrix4, Matrix6, Vector2, Vector6};

use crate::error::{Error, Result};
use crate::global_models::{ctra_discrete_jacobians, ctra_propagate, CtraNoiseSample};
use crate::relmodels::{discrete_jacobians, noise_covariances, propagate_relative, relative_velocity, RelNoiseSample};
use crate::statespace::{wrap_angle, CtraState, EgoBelief, EgoInput, Model, RelState, TargetBelief};

/// Innovation covariances with a larger condition number are rejected.
pub const MAX_INNOVATION_CONDITION: f64 = 1e12;

/// Smallest measurement variance accepted; smaller diagonal entries are raised to it.
pub const MEASUREMENT_VARIANCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeasurementKind {
    /// Ego yaw rate, speed and acceleration.
    ProprioPsidotVA,
    /// Relative target position in the ego frame.
    ExteroPositionXY,
    /// Relative position and its rate of change in the ego frame.
    ExteroPositionVelocity,
}

/// Linear measurement `z = H x + w`, `w ~ N(0, W)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementModel {
    pub h: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub kind: MeasurementKind,
}

impl MeasurementModel {
    pub fn proprio(w: &Matrix3<f64>) -> Result<Self> {
        let mut h = DMatrix::zeros(3, 6);
        for (row, col) in [(0, 3), (1, 4), (2, 5)] {
            h[(row, col)] = 1.0;
        }
        Self::build(h, DMatrix::from_column_slice(3, 3, w.as_slice()), MeasurementKind::ProprioPsidotVA)
    }

    pub fn extero_position(w: &Matrix2<f64>) -> Result<Self> {
        let mut h = DMatrix::zeros(2, 6);
        h[(0, 0)] = 1.0;
        h[(1, 1)] = 1.0;
        Self::build(h, DMatrix::from_column_slice(2, 2, w.as_slice()), MeasurementKind::ExteroPositionXY)
    }

    /// Position and relative velocity readings. The velocity rows of `h` hold the model-A
    /// layout; [`update_position_velocity`] relinearizes them for every model.
    pub fn extero_position_velocity(w_pos: &Matrix2<f64>, w_vel: &Matrix2<f64>) -> Result<Self> {
        let mut h = DMatrix::zeros(4, 6);
        for i in 0..4 {
            h[(i, i)] = 1.0;
        }
        let mut w = DMatrix::zeros(4, 4);
        w.view_mut((0, 0), (2, 2)).copy_from(w_pos);
        w.view_mut((2, 2), (2, 2)).copy_from(w_vel);
        Self::build(h, w, MeasurementKind::ExteroPositionVelocity)
    }

    fn build(h: DMatrix<f64>, mut w: DMatrix<f64>, kind: MeasurementKind) -> Result<Self> {
        if w.iter().any(|c| !c.is_finite()) {
            return Err(Error::Config("measurement covariance has non-finite entries".into()));
        }
        for i in 0..w.nrows() {
            w[(i, i)] = w[(i, i)].max(MEASUREMENT_VARIANCE_FLOOR);
        }
        if (&w - w.transpose()).amax() > 1e-9 * w.amax() || w.clone().cholesky().is_none() {
            return Err(Error::Config("measurement covariance must be symmetric positive definite".into()));
        }
        Ok(Self { h, w, kind })
    }

    pub fn dim(&self) -> usize {
        self.h.nrows()
    }
}

/// Initial covariance of the unmeasured entries `(2..6)` of a fresh track.
pub fn default_unmeasured_cov(model: Model) -> Matrix4<f64> {
    match model {
        Model::A | Model::B => Matrix4::from_diagonal(&[100.0, 100.0, 25.0, 25.0].into()),
        Model::C => Matrix4::from_diagonal(&[1.0, 1.0, 400.0, 25.0].into()),
    }
}

/// Starts a track from a first position reading; unmeasured entries are zero.
pub fn initialize_track(
    model: Model,
    z: &Vector2<f64>,
    meas: &MeasurementModel,
    unmeasured: &Matrix4<f64>,
) -> Result<TargetBelief> {
    if meas.kind != MeasurementKind::ExteroPositionXY {
        return Err(Error::Config("tracks are initialized from position measurements".into()));
    }
    let mut cov = Matrix6::zeros();
    for r in 0..2 {
        for c in 0..2 {
            cov[(r, c)] = meas.w[(r, c)];
        }
    }
    cov.fixed_view_mut::<4, 4>(2, 2).copy_from(unmeasured);
    let mean = RelState::new(model, Vector6::new(z[0], z[1], 0.0, 0.0, 0.0, 0.0));
    Ok(TargetBelief::new(mean, cov))
}

fn symmetrize(m: Matrix6<f64>) -> Matrix6<f64> {
    (m + m.transpose()) * 0.5
}

/// Time update of a target track. The ego input covariance is injected as input noise.
pub fn predict(b: &TargetBelief, ego_in: &EgoInput, v_rel: &Matrix4<f64>, dt: f64) -> TargetBelief {
    let model = b.mean.model;
    let mean = propagate_relative(model, &b.mean, ego_in, dt, &RelNoiseSample::zero(model));
    let j = discrete_jacobians(model, &b.mean, ego_in, dt);
    let (q_input, q_process) = noise_covariances(&j, &ego_in.cov, v_rel);
    let cov = symmetrize(j.a * b.cov * j.a.transpose() + q_input + q_process);
    TargetBelief::new(mean, cov)
}

/// Kalman correction in Joseph form on dynamically sized quantities.
pub fn kalman_update(
    x: &DVector<f64>,
    p: &DMatrix<f64>,
    z: &DVector<f64>,
    h: &DMatrix<f64>,
    w: &DMatrix<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if h.ncols() != x.len() || h.nrows() != z.len() {
        return Err(Error::Dimension(format!("state {}, H {:?}, z {}", x.len(), h.shape(), z.len())));
    }
    kalman_correct(x, p, &(z - h * x), h, w)
}

/// Joseph-form correction with a precomputed innovation, for nonlinear measurements.
pub fn kalman_correct(
    x: &DVector<f64>,
    p: &DMatrix<f64>,
    innovation: &DVector<f64>,
    h: &DMatrix<f64>,
    w: &DMatrix<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = x.len();
    let m = innovation.len();
    if p.shape() != (n, n) || h.shape() != (m, n) || w.shape() != (m, m) {
        return Err(Error::Dimension(format!(
            "state {n}, covariance {:?}, H {:?}, innovation {m}, W {:?}",
            p.shape(),
            h.shape(),
            w.shape()
        )));
    }
    let s = h * p * h.transpose() + w;
    let s = (&s + s.transpose()) * 0.5;
    let eig = s.symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if condition.is_nan() || condition > MAX_INNOVATION_CONDITION {
        return Err(Error::SingularInnovation { condition });
    }
    let s_inv = s.cholesky().ok_or(Error::SingularInnovation { condition })?.inverse();
    let k = p * h.transpose() * s_inv;
    let x_post = x + &k * innovation;
    let i_kh = DMatrix::identity(n, n) - &k * h;
    let p_post = &i_kh * p * i_kh.transpose() + &k * w * k.transpose();
    let p_post = (&p_post + p_post.transpose()) * 0.5;
    Ok((x_post, p_post))
}

fn update6(
    mean: &Vector6<f64>,
    cov: &Matrix6<f64>,
    z: &[f64],
    m: &MeasurementModel,
) -> Result<(Vector6<f64>, Matrix6<f64>)> {
    let x = DVector::from_column_slice(mean.as_slice());
    let p = DMatrix::from_column_slice(6, 6, cov.as_slice());
    let (x, p) = kalman_update(&x, &p, &DVector::from_column_slice(z), &m.h, &m.w)?;
    Ok((Vector6::from_column_slice(x.as_slice()), Matrix6::from_column_slice(p.as_slice())))
}

fn posterior(model: Model, x: &DVector<f64>, p: &DMatrix<f64>) -> TargetBelief {
    let mut x = Vector6::from_column_slice(x.as_slice());
    if model == Model::C {
        x[2] = wrap_angle(x[2]);
    }
    TargetBelief::new(RelState::new(model, x), Matrix6::from_column_slice(p.as_slice()))
}

/// Measurement update of a target track with a linear measurement.
pub fn update(b: &TargetBelief, z: &[f64], m: &MeasurementModel) -> Result<TargetBelief> {
    if m.kind == MeasurementKind::ExteroPositionVelocity {
        return Err(Error::Config("velocity readings need the ego input, see update_position_velocity".into()));
    }
    let (x, p) = update6(&b.mean.data, &b.cov, z, m)?;
    let x = DVector::from_column_slice(x.as_slice());
    Ok(posterior(b.mean.model, &x, &DMatrix::from_column_slice(6, 6, p.as_slice())))
}

/// Update with `(x_rel, y_rel, ẋ_rel, ẏ_rel)`. The ego input at the measurement time
/// linearizes the velocity rows, and its covariance is added to their noise.
pub fn update_position_velocity(
    b: &TargetBelief,
    z: &[f64; 4],
    m: &MeasurementModel,
    ego: &EgoInput,
) -> Result<TargetBelief> {
    if m.kind != MeasurementKind::ExteroPositionVelocity {
        return Err(Error::Config("expected a position and velocity measurement model".into()));
    }
    let (vel, jx, je) = relative_velocity(&b.mean, ego);
    let mut h = m.h.clone();
    h.view_mut((2, 0), (2, 6)).copy_from(&jx);
    let mut w = m.w.clone();
    let ego_part = je * ego.cov * je.transpose();
    w.view_mut((2, 2), (2, 2)).add_assign(&ego_part);
    let x = DVector::from_column_slice(b.mean.data.as_slice());
    let p = DMatrix::from_column_slice(6, 6, b.cov.as_slice());
    let innovation = DVector::from_vec(vec![z[0] - x[0], z[1] - x[1], z[2] - vel[0], z[3] - vel[1]]);
    let (x, p) = kalman_correct(&x, &p, &innovation, &h, &w)?;
    Ok(posterior(b.mean.model, &x, &p))
}

/// Ego state estimator fed by proprioceptive readings.
///
/// Position and heading are dead-reckoned; only the observable part is exported.
#[derive(Debug, Clone)]
pub struct EgoFilter {
    pub belief: EgoBelief,
    /// Covariance of `(ν_ψ̈, ν_ȧ)`.
    pub process: Matrix2<f64>,
    pub meas: MeasurementModel,
}

impl EgoFilter {
    pub fn new(belief: EgoBelief, process: Matrix2<f64>, meas: MeasurementModel) -> Result<Self> {
        if meas.kind != MeasurementKind::ProprioPsidotVA {
            return Err(Error::Config("ego filter needs a proprioceptive measurement model".into()));
        }
        Ok(Self { belief, process, meas })
    }

    pub fn predict(&mut self, dt: f64) {
        let (f, g) = ctra_discrete_jacobians(&self.belief.mean, dt);
        let mean = ctra_propagate(&self.belief.mean, dt, CtraNoiseSample::ZERO);
        let cov = symmetrize(f * self.belief.cov * f.transpose() + g * self.process * g.transpose());
        self.belief = EgoBelief::new(mean, cov);
    }

    /// Update with a `(ψ̇, v, a)` reading.
    pub fn update(&mut self, z: &[f64; 3]) -> Result<()> {
        let (x, p) = update6(&self.belief.mean.to_vector(), &self.belief.cov, z, &self.meas)?;
        self.belief = EgoBelief::new(CtraState::from_vector(&x).wrapped(), p);
        Ok(())
    }

    /// Current `(v, a, ψ̇)` estimate with its covariance.
    pub fn ego_input(&self) -> EgoInput {
        let s = &self.belief.mean;
        let idx = [4, 5, 3];
        let cov = Matrix3::from_fn(|r, c| self.belief.cov[(idx[r], idx[c])]);
        EgoInput::new(s.v, s.a, s.psidot).with_cov(cov)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::global_models::{wnj_propagate, JerkNoiseSample};
    use crate::statespace::CartesianState6;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn extero() -> MeasurementModel {
        MeasurementModel::extero_position(&Matrix2::from_diagonal(&[0.25, 0.36].into())).unwrap()
    }

    fn loewner_le(a: &Matrix6<f64>, b: &Matrix6<f64>, tol: f64) -> bool {
        (b - a).symmetric_eigenvalues().min() >= -tol
    }

    #[test]
    fn velocity_update_matches_linear_update_for_model_a() {
        let pv =
            MeasurementModel::extero_position_velocity(&Matrix2::identity(), &(Matrix2::identity() * 0.04)).unwrap();
        let b =
            initialize_track(Model::A, &Vector2::new(10.0, 2.0), &extero(), &default_unmeasured_cov(Model::A)).unwrap();
        let z = [10.5, 1.5, -3.0, 0.4];
        // the ego covariance does not enter model A's velocity rows
        let ego = EgoInput::new(12.0, 0.5, 0.2).with_cov(Matrix3::identity());
        let nonlinear = update_position_velocity(&b, &z, &pv, &ego).unwrap();
        let x = DVector::from_column_slice(b.mean.data.as_slice());
        let p = DMatrix::from_column_slice(6, 6, b.cov.as_slice());
        let (xl, pl) = kalman_update(&x, &p, &DVector::from_column_slice(&z), &pv.h, &pv.w).unwrap();
        assert_relative_eq!(nonlinear.mean.data.as_slice(), xl.as_slice(), epsilon = 1e-12);
        assert_relative_eq!(nonlinear.cov.as_slice(), pl.as_slice(), epsilon = 1e-12);
        assert!(nonlinear.cov[(2, 2)] < 0.05);
        assert!(matches!(update(&b, &z, &pv), Err(Error::Config(_))));
        assert!(matches!(update_position_velocity(&b, &z, &extero(), &ego), Err(Error::Config(_))));
    }

    #[test]
    fn ego_uncertainty_inflates_velocity_noise() {
        let pv =
            MeasurementModel::extero_position_velocity(&Matrix2::identity(), &(Matrix2::identity() * 0.04)).unwrap();
        let b =
            initialize_track(Model::C, &Vector2::new(20.0, 3.0), &extero(), &default_unmeasured_cov(Model::C)).unwrap();
        let z = [20.0, 3.0, -5.0, -2.0];
        let sure = update_position_velocity(&b, &z, &pv, &EgoInput::new(15.0, 0.0, 0.1)).unwrap();
        let unsure = EgoInput::new(15.0, 0.0, 0.1).with_cov(Matrix3::from_diagonal(&[4.0, 0.0, 0.01].into()));
        let unsure = update_position_velocity(&b, &z, &pv, &unsure).unwrap();
        assert!(unsure.cov.trace() > sure.cov.trace());
    }

    #[test]
    fn initialization() {
        let m = extero();
        let d = default_unmeasured_cov(Model::A);
        let b = initialize_track(Model::A, &Vector2::new(10.0, 2.0), &m, &d).unwrap();
        assert_eq!(b.mean.data, Vector6::new(10.0, 2.0, 0.0, 0.0, 0.0, 0.0));
        assert_eq!(b.cov[(0, 0)], 0.25);
        assert_eq!(b.cov[(1, 1)], 0.36);
        assert_eq!(b.cov[(0, 1)], 0.0);
        assert_eq!(b.cov.fixed_view::<4, 4>(2, 2).into_owned(), d);
        let b = initialize_track(Model::C, &Vector2::zeros(), &m, &default_unmeasured_cov(Model::C)).unwrap();
        assert_eq!(b.mean.data, Vector6::zeros());
        let proprio = MeasurementModel::proprio(&Matrix3::identity()).unwrap();
        assert!(initialize_track(Model::B, &Vector2::zeros(), &proprio, &d).is_err());
    }

    #[test]
    fn measurement_covariance_is_floored_and_checked() {
        let m = MeasurementModel::extero_position(&Matrix2::zeros()).unwrap();
        assert_eq!(m.w[(0, 0)], MEASUREMENT_VARIANCE_FLOOR);
        let bad = Matrix2::new(1.0, 2.0, 2.0, 1.0);
        assert!(matches!(MeasurementModel::extero_position(&bad), Err(Error::Config(_))));
    }

    #[test]
    fn scalar_textbook_update() {
        let one = DMatrix::from_element(1, 1, 1.0);
        let (x, p) =
            kalman_update(&DVector::from_element(1, 0.0), &one, &DVector::from_element(1, 1.0), &one, &one).unwrap();
        assert_relative_eq!(x[0], 0.5);
        assert_relative_eq!(p[(0, 0)], 0.5);
    }

    #[test]
    fn uninformative_and_zero_innovation_updates() {
        let prior = TargetBelief::new(
            RelState::new(Model::B, Vector6::new(5.0, 1.0, 2.0, 0.0, 0.1, 0.0)),
            Matrix6::from_diagonal(&Vector6::new(1.0, 2.0, 3.0, 4.0, 5.0, 6.0)),
        );
        let vague = MeasurementModel::extero_position(&Matrix2::from_diagonal_element(1e12)).unwrap();
        let post = update(&prior, &[50.0, -40.0], &vague).unwrap();
        assert!((post.mean.data - prior.mean.data).amax() < 1e-6 * 50.0);
        assert!((post.cov - prior.cov).amax() < 1e-6 * 6.0);

        let post = update(&prior, &[5.0, 1.0], &extero()).unwrap();
        assert_eq!(post.mean.data, prior.mean.data);
        assert!(loewner_le(&post.cov, &prior.cov, 1e-12));
        assert!(post.cov[(0, 0)] < prior.cov[(0, 0)]);
    }

    #[test]
    fn singular_innovation_is_reported() {
        let x = DVector::zeros(2);
        let p = DMatrix::zeros(2, 2);
        let h = DMatrix::identity(2, 2);
        let w = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1e-14]));
        let err = kalman_update(&x, &p, &DVector::zeros(2), &h, &w).unwrap_err();
        assert!(matches!(err, Error::SingularInnovation { .. }));
        let err = kalman_update(&x, &p, &DVector::zeros(3), &h, &w).unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
    }

    #[test]
    fn prediction_limits() {
        let cov = Matrix6::from_fn(|r, c| if r == c { 2.0 + r as f64 } else { 0.1 });
        let b = TargetBelief::new(RelState::new(Model::B, Vector6::new(20.0, -1.0, 3.0, 0.5, 0.2, -0.1)), cov);
        let ego = EgoInput::new(12.0, 0.5, 0.1).with_cov(Matrix3::identity());
        let same = predict(&b, &ego, &Matrix4::identity(), 0.0);
        assert_relative_eq!(same.mean.data, b.mean.data, epsilon = 1e-14);
        assert_relative_eq!(same.cov, b.cov, epsilon = 1e-14);

        let still = EgoInput::new(0.0, 0.0, 0.0);
        let out = predict(&b, &still, &Matrix4::zeros(), 0.04);
        let j = discrete_jacobians(Model::B, &b.mean, &still, 0.04);
        assert_relative_eq!(out.cov, symmetrize(j.a * cov * j.a.transpose()), epsilon = 1e-12);
        let expected = wnj_propagate(&CartesianState6::from_vector(&b.mean.data), 0.04, JerkNoiseSample::ZERO);
        assert_relative_eq!(out.mean.data, expected.to_vector(), epsilon = 1e-12);
    }

    #[test]
    fn ego_filter_exports_observable_block() {
        let cov = Matrix6::from_fn(|r, c| (10 * r + c) as f64 + if r == c { 100.0 } else { 0.0 });
        let cov = symmetrize(cov);
        let belief = EgoBelief::new(CtraState::new(1.0, 2.0, 0.3, 0.1, 15.0, 0.5), cov);
        let f = EgoFilter::new(belief, Matrix2::identity(), MeasurementModel::proprio(&Matrix3::identity()).unwrap())
            .unwrap();
        let e = f.ego_input();
        assert_eq!((e.v0, e.a0, e.psidot0), (15.0, 0.5, 0.1));
        assert_eq!(e.cov[(0, 0)], cov[(4, 4)]);
        assert_eq!(e.cov[(0, 2)], cov[(4, 3)]);
        assert_eq!(e.cov[(2, 1)], cov[(3, 5)]);
    }

    #[test]
    fn ego_filter_converges_on_readings() {
        let truth = CtraState::new(0.0, 0.0, 0.0, 0.05, 20.0, 0.0);
        let belief = EgoBelief::new(CtraState::new(0.0, 0.0, 0.0, 0.0, 15.0, 1.0), Matrix6::identity() * 25.0);
        let meas = MeasurementModel::proprio(&Matrix3::from_diagonal(&[1e-4, 1e-2, 0.09].into())).unwrap();
        let mut f = EgoFilter::new(belief, Matrix2::from_diagonal(&[1e-4, 1e-2].into()), meas).unwrap();
        let mut s = truth;
        for _ in 0..100 {
            s = ctra_propagate(&s, 0.04, CtraNoiseSample::ZERO);
            f.predict(0.04);
            f.update(&[s.psidot, s.v, s.a]).unwrap();
        }
        assert!((f.belief.mean.v - 20.0).abs() < 1e-2);
        assert!((f.belief.mean.psidot - 0.05).abs() < 1e-3);
    }

    fn random_spd(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        &a * a.transpose() * scale + DMatrix::identity(n, n) * (0.01 * scale)
    }

    #[test]
    fn joseph_form_keeps_covariance_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let scale = rng.random_range(1e-3..1e3);
            let p = random_spd(&mut rng, 6, scale);
            let k = rng.random_range(1..=3);
            let h = DMatrix::from_fn(k, 6, |_, _| rng.random_range(-1.0..1.0));
            let scale = rng.random_range(1e-3..1e2);
            let w = random_spd(&mut rng, k, scale);
            let x = DVector::from_fn(6, |_, _| rng.random_range(-10.0..10.0));
            let z = DVector::from_fn(k, |_, _| rng.random_range(-10.0..10.0));
            match kalman_update(&x, &p, &z, &h, &w) {
                Ok((_, post)) => {
                    assert_eq!(post, post.transpose());
                    let min = post.symmetric_eigenvalues().min();
                    assert!(min >= -1e-9 * p.amax(), "min eigenvalue {min}");
                }
                Err(Error::SingularInnovation { .. }) => {}
                Err(e) => panic!("{e}"),
            }
        }
    }

    proptest! {
        #[test]
        fn independent_updates_commute(
            seed in any::<u64>(),
            z1 in prop::array::uniform2(-20.0..20.0f64),
            z2 in prop::array::uniform2(-20.0..20.0f64),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = Matrix6::from_column_slice(random_spd(&mut rng, 6, 4.0).as_slice());
            let b = TargetBelief::new(RelState::new(Model::A, Vector6::zeros()), p);
            let m1 = extero();
            let m2 = MeasurementModel::extero_position(&Matrix2::new(1.0, 0.2, 0.2, 0.5)).unwrap();
            let ab = update(&update(&b, &z1, &m1).unwrap(), &z2, &m2).unwrap();
            let ba = update(&update(&b, &z2, &m2).unwrap(), &z1, &m1).unwrap();
            prop_assert!((ab.mean.data - ba.mean.data).amax() < 1e-8);
            prop_assert!((ab.cov - ba.cov).amax() < 1e-8);
        }

        #[test]
        fn prediction_inflates_trace(
            x in prop::array::uniform6(-10.0..10.0f64),
            v0 in 0.0..30.0f64, w0 in -0.5..0.5f64,
        ) {
            for model in Model::ALL {
                let b = TargetBelief::new(RelState::new(model, Vector6::from_row_slice(&x)), Matrix6::identity() * 1e-6);
                let ego = EgoInput::new(v0, 0.0, w0).with_cov(Matrix3::identity() * 0.01);
                let out = predict(&b, &ego, &Matrix4::identity(), 0.04);
                prop_assert!(out.cov.trace() >= b.cov.trace());
            }
        }
    }
}
