//! Relative target dynamics for the three model/coordinate combinations.
//!
//! The ego vehicle's own motion over a step is solved first (CTRA, noise held
//! constant) and substituted into the target dynamics. Only the observable ego
//! quantities `(v0, a0, ψ̇0)` enter: everything is computed in the frame attached
//! to the ego at the start of the step, where its position and heading are zero.
//!
//! Models A and B are linear in the relative state. With `Φ`, `Γ` the jerk-chain
//! transition and input matrices and `T(ψ, ψ̇)` the model's transform,
//!
//! ```text
//! ξ(Δt) = T₁ [ Φ T₀⁻¹ ξ(0) + Γ r(ψ₀) ν_jerk − E ]
//! ```
//!
//! where `T₀`, `T₁` are evaluated at the ego's start and end headings and rates and
//! `E` collects the ego's own motion (its Cartesian state minus what the jerk
//! chain would predict for model A, its position for model B). Model C integrates
//! the CTRA scalars directly and rotates the difference of the two turn
//! displacements into the final ego frame.

use nalgebra::{
    Complex, Matrix2, Matrix2x3, Matrix2x6, Matrix3, Matrix4, Matrix6, Matrix6x2, Matrix6x3, Matrix6x4, Vector2,
    Vector4, Vector6,
};

use crate::frames::{quarter_turn, rotation, transform_inverse, transform_matrix, transform_partials};
use crate::global_models::{
    ctra_discrete_jacobians, ctra_propagate, displacement, wnj_input, wnj_transition, CtraNoiseSample, JerkNoiseSample,
};
use crate::statespace::{ctra_to_cartesian, ctra_to_cartesian_jacobian, wrap_angle, EgoInput, Model, RelState};

/// Target part of the stacked relative process noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TargetNoise {
    /// Cartesian jerk in global axes (models A and B).
    Jerk(JerkNoiseSample),
    /// CTRA yaw acceleration and jerk (model C).
    Ctra(CtraNoiseSample),
}

impl TargetNoise {
    fn components(&self) -> Vector2<f64> {
        match self {
            TargetNoise::Jerk(j) => Vector2::new(j.nu_jx, j.nu_jy),
            TargetNoise::Ctra(c) => Vector2::new(c.nu_psidd, c.nu_adot),
        }
    }
}

/// Stacked relative process noise `(ν_target, ν_ego)`, constant over a step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelNoiseSample {
    pub target: TargetNoise,
    pub ego: CtraNoiseSample,
}

impl RelNoiseSample {
    pub fn zero(model: Model) -> Self {
        Self::from_vector(model, &Vector4::zeros())
    }

    /// Builds the sample from the stacked four-vector used by the noise Jacobian `G_k`.
    pub fn from_vector(model: Model, v: &Vector4<f64>) -> Self {
        let target = if model.is_jerk_model() {
            TargetNoise::Jerk(JerkNoiseSample::new(v[0], v[1]))
        } else {
            TargetNoise::Ctra(CtraNoiseSample::new(v[0], v[1]))
        };
        Self { target, ego: CtraNoiseSample::new(v[2], v[3]) }
    }

    pub fn to_vector(&self) -> Vector4<f64> {
        let t = self.target.components();
        Vector4::new(t[0], t[1], self.ego.nu_psidd, self.ego.nu_adot)
    }
}

/// Linearization of one propagation step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscreteJacobians {
    /// With respect to the relative state.
    pub a: Matrix6<f64>,
    /// With respect to the ego input `(v0, a0, ψ̇0)`.
    pub b: Matrix6x3<f64>,
    /// With respect to the stacked noise `(ν_target, ν_ego)`.
    pub g: Matrix6x4<f64>,
}

fn cv(c: Complex<f64>) -> Vector2<f64> {
    Vector2::new(c.re, c.im)
}

/// Right-hand side of the relative dynamics at time `t` into the step.
///
/// `ego_psi0` is the ego's global heading at the start of the step; it only
/// orients the target's Cartesian jerk noise (models A and B).
pub fn relative_derivative(
    model: Model,
    rel: &RelState,
    ego_in: &EgoInput,
    ego_psi0: f64,
    t: f64,
    n: &RelNoiseSample,
) -> Vector6<f64> {
    let x = &rel.data;
    let ne = n.ego;
    let w = ego_in.psidot0 + ne.nu_psidd * t;
    let wd = ne.nu_psidd;
    let v = ego_in.v0 + ego_in.a0 * t + ne.nu_adot * t * t / 2.0;
    let a = ego_in.a0 + ne.nu_adot * t;
    let heading = ego_psi0 + ego_in.psidot0 * t + ne.nu_psidd * t * t / 2.0;
    let k = quarter_turn();
    let nt = n.target.components();

    let pos = Vector2::new(x[0], x[1]);
    let mid = Vector2::new(x[2], x[3]);
    let top = Vector2::new(x[4], x[5]);
    let mut out = Vector6::zeros();
    match model {
        Model::A => {
            let p_dot = mid;
            let u_dot = top + k * pos * wd;
            // body-frame ego jerk: (ȧ − v w², 2 a w + v ẇ)
            let ego_jerk = Vector2::new(ne.nu_adot - v * w * w, 2.0 * a * w + v * wd);
            let acc_dot = k * pos * (-w * w * w)
                + mid * (3.0 * w * w)
                + k * mid * (2.0 * wd)
                + k * top * (3.0 * w)
                + rotation(heading).apply(nt)
                - ego_jerk;
            out.fixed_rows_mut::<2>(0).copy_from(&p_dot);
            out.fixed_rows_mut::<2>(2).copy_from(&u_dot);
            out.fixed_rows_mut::<2>(4).copy_from(&acc_dot);
        }
        Model::B => {
            let p_dot = k * pos * w + mid - Vector2::new(v, 0.0);
            let v_dot = k * mid * w + top;
            let acc_dot = k * top * w + rotation(heading).apply(nt);
            out.fixed_rows_mut::<2>(0).copy_from(&p_dot);
            out.fixed_rows_mut::<2>(2).copy_from(&v_dot);
            out.fixed_rows_mut::<2>(4).copy_from(&acc_dot);
        }
        Model::C => {
            let (psi_rel, w_t, v_t, a_t) = (x[2], x[3], x[4], x[5]);
            let p_dot = k * pos * w + Vector2::new(psi_rel.cos(), psi_rel.sin()) * v_t - Vector2::new(v, 0.0);
            out.fixed_rows_mut::<2>(0).copy_from(&p_dot);
            out[2] = w_t - w;
            out[3] = nt[0];
            out[4] = a_t;
            out[5] = nt[1];
        }
    }
    out
}

/// Propagates a relative state over `dt` with the noise held constant.
///
/// The ego's global heading is set to zero; see [`propagate_relative_oriented`].
pub fn propagate_relative(model: Model, rel: &RelState, ego_in: &EgoInput, dt: f64, n: &RelNoiseSample) -> RelState {
    propagate_relative_oriented(model, rel, ego_in, 0.0, dt, n)
}

/// [`propagate_relative`] with an explicit global ego heading at the start of the step.
///
/// The heading only rotates the target's Cartesian jerk noise for models A and B;
/// with isotropic jerk covariance the resulting process covariance does not depend on it.
pub fn propagate_relative_oriented(
    model: Model,
    rel: &RelState,
    ego_in: &EgoInput,
    ego_psi0: f64,
    dt: f64,
    n: &RelNoiseSample,
) -> RelState {
    let data = match model {
        Model::A | Model::B => LinearStep::new(model, ego_in, dt, n.ego).propagate(&rel.data, ego_psi0, n),
        Model::C => propagate_ctra_mixed(&rel.data, ego_in, dt, n),
    };
    RelState::new(model, data)
}

/// One step of model A or B with the ego solution substituted.
struct LinearStep {
    model: Model,
    dt: f64,
    phi: Matrix6<f64>,
    t0_inv: Matrix6<f64>,
    t1: Matrix6<f64>,
    ego_term: Vector6<f64>,
}

impl LinearStep {
    fn new(model: Model, ego_in: &EgoInput, dt: f64, ego_noise: CtraNoiseSample) -> Self {
        let ego0 = ego_in.local_ctra();
        let ego1 = ctra_propagate(&ego0, dt, ego_noise);
        let phi = wnj_transition(dt);
        let ego_term = match model {
            Model::A => ctra_to_cartesian(&ego1).to_vector() - phi * ctra_to_cartesian(&ego0).to_vector(),
            _ => Vector6::new(ego1.x, ego1.y, 0.0, 0.0, 0.0, 0.0),
        };
        Self {
            model,
            dt,
            phi,
            t0_inv: transform_inverse(model, 0.0, ego0.psidot),
            t1: transform_matrix(model, ego1.psi, ego1.psidot),
            ego_term,
        }
    }

    /// Global-difference state at the end of the step, before the final transform.
    fn bracket(&self, x0: &Vector6<f64>, ego_psi0: f64, n: &RelNoiseSample) -> Vector6<f64> {
        let jerk = rotation(ego_psi0).apply(n.target.components());
        self.phi * self.t0_inv * x0 + wnj_input(self.dt) * jerk - self.ego_term
    }

    fn propagate(&self, x0: &Vector6<f64>, ego_psi0: f64, n: &RelNoiseSample) -> Vector6<f64> {
        self.t1 * self.bracket(x0, ego_psi0, n)
    }

    fn jacobians(&self, x0: &Vector6<f64>, ego_in: &EgoInput, ego_psi0: f64) -> DiscreteJacobians {
        let model = self.model;
        let dt = self.dt;
        let ego0 = ego_in.local_ctra();
        let ego1 = ctra_propagate(&ego0, dt, CtraNoiseSample::ZERO);
        let (f, g) = ctra_discrete_jacobians(&ego0, dt);
        let (t1_psi, t1_w) = transform_partials(model, ego1.psi, ego1.psidot);
        let beta = self.bracket(x0, ego_psi0, &RelNoiseSample::zero(model));

        // derivative of the ego term along a direction of the ego's end state
        let cart1 = ctra_to_cartesian_jacobian(&ego1);
        let ego_term_along = |d_end: Vector6<f64>| -> Vector6<f64> {
            match model {
                Model::A => cart1 * d_end,
                _ => Vector6::new(d_end[0], d_end[1], 0.0, 0.0, 0.0, 0.0),
            }
        };
        // derivative of T₁ along a direction of the ego's end state (heading index 2, rate 3)
        let t1_along = |d_end: &Vector6<f64>| t1_psi * d_end[2] + t1_w * d_end[3];

        let mut b = Matrix6x3::zeros();
        // (v0, a0, ψ̇0) ↔ CTRA indices (4, 5, 3)
        for (col, idx) in [(0usize, 4usize), (1, 5), (2, 3)] {
            let d_end: Vector6<f64> = f.column(idx).into_owned();
            let mut d_bracket = -ego_term_along(d_end);
            if model == Model::A {
                // Φ·∂ξ_e(0)/∂p enters through E = ξ_e(Δt) − Φ ξ_e(0)
                let d_start = ctra_to_cartesian_jacobian(&ego0).column(idx).into_owned();
                d_bracket += self.phi * d_start;
            }
            if idx == 3 {
                let (_, t0_w) = transform_partials(model, 0.0, ego0.psidot);
                let d_t0_inv = -self.t0_inv * t0_w * self.t0_inv;
                d_bracket += self.phi * d_t0_inv * x0;
            }
            let column = t1_along(&d_end) * beta + self.t1 * d_bracket;
            b.set_column(col, &column);
        }

        let mut gm = Matrix6x4::zeros();
        let jerk_cols: Matrix6x2<f64> = self.t1 * wnj_input(dt) * rotation(ego_psi0).0;
        gm.fixed_columns_mut::<2>(0).copy_from(&jerk_cols);
        for k in 0..2 {
            let d_end: Vector6<f64> = g.column(k).into_owned();
            let column = t1_along(&d_end) * beta - self.t1 * ego_term_along(d_end);
            gm.set_column(2 + k, &column);
        }

        DiscreteJacobians { a: self.t1 * self.phi * self.t0_inv, b, g: gm }
    }
}

fn propagate_ctra_mixed(x0: &Vector6<f64>, ego_in: &EgoInput, dt: f64, n: &RelNoiseSample) -> Vector6<f64> {
    let nt = n.target.components();
    let nt = CtraNoiseSample::new(nt[0], nt[1]);
    let ne = n.ego;
    let (psi_rel, w_t, v_t, a_t) = (x0[2], x0[3], x0[4], x0[5]);
    let target = displacement(psi_rel, w_t, v_t, a_t, nt, dt);
    let ego = displacement(0.0, ego_in.psidot0, ego_in.v0, ego_in.a0, ne, dt);
    let turn = ego_in.psidot0 * dt + ne.nu_psidd * dt * dt / 2.0;
    let pos = rotation(turn).apply(Vector2::new(x0[0], x0[1]) + cv(target.value) - cv(ego.value));
    Vector6::new(
        pos[0],
        pos[1],
        wrap_angle(psi_rel + w_t * dt + nt.nu_psidd * dt * dt / 2.0 - turn),
        w_t + nt.nu_psidd * dt,
        v_t + a_t * dt + nt.nu_adot * dt * dt / 2.0,
        a_t + nt.nu_adot * dt,
    )
}

fn jacobians_ctra_mixed(x0: &Vector6<f64>, ego_in: &EgoInput, dt: f64) -> DiscreteJacobians {
    let (psi_rel, w_t, v_t, a_t) = (x0[2], x0[3], x0[4], x0[5]);
    let zero = CtraNoiseSample::ZERO;
    let target = displacement(psi_rel, w_t, v_t, a_t, zero, dt);
    let ego = displacement(0.0, ego_in.psidot0, ego_in.v0, ego_in.a0, zero, dt);
    let turn = ego_in.psidot0 * dt;
    let r1 = rotation(turn).0;
    let dr1 = quarter_turn() * r1;
    let delta = Vector2::new(x0[0], x0[1]) + cv(target.value) - cv(ego.value);
    let half = dt * dt / 2.0;

    let mut a = Matrix6::identity();
    a.fixed_view_mut::<2, 2>(0, 0).copy_from(&r1);
    for (col, d) in [(2, target.d_psi), (3, target.d_psidot), (4, target.d_v), (5, target.d_a)] {
        a.fixed_view_mut::<2, 1>(0, col).copy_from(&(r1 * cv(d)));
    }
    a[(2, 3)] = dt;
    a[(4, 5)] = dt;

    let mut b = Matrix6x3::zeros();
    b.fixed_view_mut::<2, 1>(0, 0).copy_from(&(-r1 * cv(ego.d_v)));
    b.fixed_view_mut::<2, 1>(0, 1).copy_from(&(-r1 * cv(ego.d_a)));
    b.fixed_view_mut::<2, 1>(0, 2).copy_from(&(dr1 * delta * dt - r1 * cv(ego.d_psidot)));
    b[(2, 2)] = -dt;

    let mut g = Matrix6x4::zeros();
    g.fixed_view_mut::<2, 1>(0, 0).copy_from(&(r1 * cv(target.d_nu_psidd)));
    g[(2, 0)] = half;
    g[(3, 0)] = dt;
    g.fixed_view_mut::<2, 1>(0, 1).copy_from(&(r1 * cv(target.d_nu_adot)));
    g[(4, 1)] = half;
    g[(5, 1)] = dt;
    g.fixed_view_mut::<2, 1>(0, 2).copy_from(&(dr1 * delta * half - r1 * cv(ego.d_nu_psidd)));
    g[(2, 2)] = -half;
    g.fixed_view_mut::<2, 1>(0, 3).copy_from(&(-r1 * cv(ego.d_nu_adot)));

    DiscreteJacobians { a, b, g }
}

/// Analytic Jacobians of [`propagate_relative`] at zero noise.
pub fn discrete_jacobians(model: Model, rel: &RelState, ego_in: &EgoInput, dt: f64) -> DiscreteJacobians {
    discrete_jacobians_oriented(model, rel, ego_in, 0.0, dt)
}

/// [`discrete_jacobians`] for an explicit global ego heading at the start of the step.
pub fn discrete_jacobians_oriented(
    model: Model,
    rel: &RelState,
    ego_in: &EgoInput,
    ego_psi0: f64,
    dt: f64,
) -> DiscreteJacobians {
    match model {
        Model::A | Model::B => {
            LinearStep::new(model, ego_in, dt, CtraNoiseSample::ZERO).jacobians(&rel.data, ego_in, ego_psi0)
        }
        Model::C => jacobians_ctra_mixed(&rel.data, ego_in, dt),
    }
}

fn symmetrize(m: Matrix6<f64>) -> Matrix6<f64> {
    (m + m.transpose()) * 0.5
}

/// Rate of change of the relative position as seen from the ego frame, with its
/// Jacobians with respect to the relative state and the ego input `(v, a, ψ̇)`.
pub fn relative_velocity(rel: &RelState, ego: &EgoInput) -> (Vector2<f64>, Matrix2x6<f64>, Matrix2x3<f64>) {
    let x = &rel.data;
    let k = quarter_turn();
    let pos = Vector2::new(x[0], x[1]);
    let mut jx = Matrix2x6::zeros();
    let mut je = Matrix2x3::zeros();
    let value = match rel.model {
        Model::A => {
            jx[(0, 2)] = 1.0;
            jx[(1, 3)] = 1.0;
            Vector2::new(x[2], x[3])
        }
        Model::B | Model::C => {
            jx.fixed_view_mut::<2, 2>(0, 0).copy_from(&(k * ego.psidot0));
            je.set_column(0, &Vector2::new(-1.0, 0.0));
            je.set_column(2, &(k * pos));
            let over_ground = if rel.model == Model::B {
                jx.fixed_view_mut::<2, 2>(0, 2).copy_from(&Matrix2::identity());
                Vector2::new(x[2], x[3])
            } else {
                let (s, c) = x[2].sin_cos();
                jx.set_column(2, &Vector2::new(-s * x[4], c * x[4]));
                jx.set_column(4, &Vector2::new(c, s));
                Vector2::new(c, s) * x[4]
            };
            k * pos * ego.psidot0 + over_ground - Vector2::new(ego.v0, 0.0)
        }
    };
    (value, jx, je)
}

/// Input and process noise covariances `B P_ego Bᵀ` and `G V_rel Gᵀ`.
pub fn noise_covariances(
    j: &DiscreteJacobians,
    p_ego: &Matrix3<f64>,
    v_rel: &Matrix4<f64>,
) -> (Matrix6<f64>, Matrix6<f64>) {
    let q_input = symmetrize(j.b * p_ego * j.b.transpose());
    let q_process = symmetrize(j.g * v_rel * j.g.transpose());
    (q_input, q_process)
}

/// Stacked relative process covariance from target and ego blocks.
pub fn stack_process_noise(target: &Matrix2<f64>, ego: &Matrix2<f64>) -> Matrix4<f64> {
    let mut v = Matrix4::zeros();
    v.fixed_view_mut::<2, 2>(0, 0).copy_from(target);
    v.fixed_view_mut::<2, 2>(2, 2).copy_from(ego);
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frames::{from_relative, to_relative};
    use crate::global_models::tests::rk4;
    use crate::global_models::wnj_propagate;
    use crate::statespace::{CartesianState6, CtraState};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn rel(model: Model, v: [f64; 6]) -> RelState {
        RelState::new(model, Vector6::from_row_slice(&v))
    }

    #[test]
    fn derivative_examples() {
        let x = [12.0, -3.0, 0.4, 0.1, 15.0, 0.8];
        let ego = EgoInput::new(20.0, 1.5, 0.2);
        let d = relative_derivative(Model::C, &rel(Model::C, x), &ego, 0.0, 0.0, &RelNoiseSample::zero(Model::C));
        let expected = Vector6::new(
            x[1] * 0.2 + x[4] * x[2].cos() - 20.0,
            -x[0] * 0.2 + x[4] * x[2].sin(),
            x[3] - 0.2,
            0.0,
            x[5],
            0.0,
        );
        assert_relative_eq!(d, expected, epsilon = 1e-13);

        let x = [5.0, 1.0, 3.0, -2.0, 0.5, 0.25];
        let ego = EgoInput::new(10.0, 0.0, 0.0);
        let d = relative_derivative(Model::B, &rel(Model::B, x), &ego, 0.7, 0.0, &RelNoiseSample::zero(Model::B));
        assert_relative_eq!(d, Vector6::new(3.0 - 10.0, -2.0, 0.5, 0.25, 0.0, 0.0));

        let still = EgoInput::new(0.0, 0.0, 0.0);
        let d = relative_derivative(Model::A, &rel(Model::A, x), &still, 0.0, 0.3, &RelNoiseSample::zero(Model::A));
        assert_relative_eq!(d, Vector6::new(3.0, -2.0, 0.5, 0.25, 0.0, 0.0));
    }

    #[test]
    fn stationary_ego_reduces_to_jerk_chain() {
        let still = EgoInput::new(0.0, 0.0, 0.0);
        let x = [30.0, -2.0, -4.0, 1.0, 0.5, -0.3];
        let expected =
            wnj_propagate(&CartesianState6::from_vector(&Vector6::from_row_slice(&x)), 0.04, JerkNoiseSample::ZERO);
        for model in [Model::A, Model::B] {
            let out = propagate_relative(model, &rel(model, x), &still, 0.04, &RelNoiseSample::zero(model));
            assert_relative_eq!(out.data, expected.to_vector(), epsilon = 1e-12);
        }
    }

    #[test]
    fn follow_mode_is_stationary_in_body_frame() {
        let ego = CtraState::new(0.0, 0.0, 0.0, 1.0, 1.0, 0.0);
        let target = CtraState::new(1f64.sin(), 1.0 - 1f64.cos(), 1.0, 1.0, 1.0, 0.0);
        let r = to_relative(Model::C, &target, &ego);
        let out =
            propagate_relative(Model::C, &r, &EgoInput::new(1.0, 0.0, 1.0), 0.04, &RelNoiseSample::zero(Model::C));
        assert!((out.data - r.data).amax() < 1e-12, "{}", out.data - r.data);
    }

    #[test]
    fn follow_mode_drift_under_jerk_chain_is_the_missing_jerk() {
        // a jerk-chain target cannot stay on a circle without jerk; supplying the
        // circle's instantaneous jerk removes the drift up to fourth order in dt
        let ego = CtraState::new(0.0, 0.0, 0.0, 1.0, 1.0, 0.0);
        let target = CtraState::new(1f64.sin(), 1.0 - 1f64.cos(), 1.0, 1.0, 1.0, 0.0);
        let ego_in = EgoInput::new(1.0, 0.0, 1.0);
        let r = to_relative(Model::A, &target, &ego);
        let free = propagate_relative(Model::A, &r, &ego_in, 0.04, &RelNoiseSample::zero(Model::A));
        let jerk = Vector4::new(-1f64.cos(), -1f64.sin(), 0.0, 0.0);
        let driven = propagate_relative(Model::A, &r, &ego_in, 0.04, &RelNoiseSample::from_vector(Model::A, &jerk));
        assert!((free.data - r.data).amax() > 1e-2);
        let d = driven.data - r.data;
        for (level, bound) in [1e-6, 1e-4, 2e-3].into_iter().enumerate() {
            assert!(d[2 * level].hypot(d[2 * level + 1]) < bound, "{}", d);
        }
    }

    #[test]
    fn zero_step_jacobians() {
        let ego = EgoInput::new(12.0, 0.5, 0.3);
        for model in Model::ALL {
            let j = discrete_jacobians(model, &rel(model, [10.0, 2.0, 0.3, 0.1, 8.0, 0.5]), &ego, 0.0);
            assert_relative_eq!(j.a, Matrix6::identity(), epsilon = 1e-15);
            assert_eq!(j.b.amax(), 0.0);
            assert_eq!(j.g.amax(), 0.0);
            let (qi, qp) = noise_covariances(&j, &Matrix3::identity(), &Matrix4::identity());
            assert_eq!(qi, Matrix6::zeros());
            assert_eq!(qp, Matrix6::zeros());
        }
    }

    #[test]
    fn mixed_jerk_speed_input_column() {
        let j = discrete_jacobians(
            Model::B,
            &rel(Model::B, [20.0, 1.0, 10.0, 0.0, 0.0, 0.0]),
            &EgoInput::new(15.0, 0.0, 0.0),
            0.04,
        );
        assert_relative_eq!(j.b.column(0).into_owned(), Vector6::new(-0.04, 0.0, 0.0, 0.0, 0.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn triple_product_matches_summation() {
        let j = DiscreteJacobians {
            a: Matrix6::identity(),
            b: Matrix6x3::from_fn(|i, k| ((i * 3 + k) as f64 * 0.37).sin()),
            g: Matrix6x4::zeros(),
        };
        let p = Matrix3::from_diagonal(&nalgebra::Vector3::new(0.2, 1.5, 0.03));
        let (qi, _) = noise_covariances(&j, &p, &Matrix4::zeros());
        for r in 0..6 {
            for c in 0..6 {
                let mut acc = 0.0;
                for k in 0..3 {
                    for l in 0..3 {
                        acc += j.b[(r, k)] * p[(k, l)] * j.b[(c, l)];
                    }
                }
                assert!((acc - qi[(r, c)]).abs() < 1e-12);
            }
        }
    }

    fn global_state() -> impl Strategy<Value = CtraState> {
        (-80.0..80.0f64, -80.0..80.0f64, -PI..PI, -0.8..0.8f64, 2.0..35.0f64, -4.0..4.0f64)
            .prop_map(|(x, y, psi, w, v, a)| CtraState::new(x, y, psi, w, v, a))
    }

    /// Propagates the target globally and maps back: the commutativity oracle.
    fn oracle(model: Model, target: &CtraState, ego: &CtraState, dt: f64) -> Vector6<f64> {
        let ego1 = ctra_propagate(ego, dt, CtraNoiseSample::ZERO);
        let target1 = match model {
            Model::C => ctra_propagate(target, dt, CtraNoiseSample::ZERO),
            _ => {
                let c = wnj_propagate(&ctra_to_cartesian(target), dt, JerkNoiseSample::ZERO);
                crate::statespace::cartesian_to_ctra(&c).unwrap()
            }
        };
        to_relative(model, &target1, &ego1).data
    }

    fn angle_aware_diff(model: Model, a: &Vector6<f64>, b: &Vector6<f64>) -> Vector6<f64> {
        let mut d = a - b;
        if model == Model::C {
            d[2] = wrap_angle(d[2]);
        }
        d
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn commutes_with_global_propagation(target in global_state(), ego in global_state()) {
            for model in Model::ALL {
                let r = to_relative(model, &target, &ego);
                // the ego pose never enters: only its observable inputs
                let ego_in = EgoInput::new(ego.v, ego.a, ego.psidot);
                let out = propagate_relative(model, &r, &ego_in, 0.04, &RelNoiseSample::zero(model));
                let expected = oracle(model, &target, &ego, 0.04);
                let d = angle_aware_diff(model, &out.data, &expected);
                prop_assert!(d.amax() < 1e-9, "model {} diff {}", model, d);
                // and the inverse map is consistent with the forward one
                let back = from_relative(model, &r, &ego).unwrap();
                prop_assert!(angle_aware_diff(Model::C, &back.to_vector(), &target.to_vector()).amax() < 1e-9);
            }
        }

        #[test]
        fn matches_rk4_with_noise(
            x in prop::array::uniform6(-10.0..10.0f64),
            v0 in 0.0..30.0f64, a0 in -3.0..3.0f64, w0 in -0.8..0.8f64,
            n in prop::array::uniform4(-1.0..1.0f64),
            psi0 in -PI..PI,
        ) {
            for model in Model::ALL {
                let mut data = Vector6::from_row_slice(&x);
                data[0] += 30.0;
                if model == Model::C {
                    data[2] = data[2].rem_euclid(2.0 * PI) - PI;
                    data[3] *= 0.05;
                    data[4] = data[4].abs() * 3.0;
                }
                let r = RelState::new(model, data);
                let ego = EgoInput::new(v0, a0, w0);
                // target noise up to ±20 (jerk) or ±1 (yaw acc), ego jerk up to ±5
                let scale = if model.is_jerk_model() { 20.0 } else { 1.0 };
                let noise = RelNoiseSample::from_vector(model, &Vector4::new(n[0] * scale, n[1] * 5.0, n[2], n[3] * 5.0));
                let closed = propagate_relative_oriented(model, &r, &ego, psi0, 0.04, &noise).data;
                let numeric = rk4(data, 0.04, 1e-5, |t, s| {
                    relative_derivative(model, &RelState::new(model, *s), &ego, psi0, t, &noise)
                });
                let d = angle_aware_diff(model, &closed, &numeric);
                prop_assert!(d.amax() < 1e-6, "model {} diff {}", model, d);
            }
        }

        #[test]
        fn jacobians_match_finite_differences(
            x in prop::array::uniform6(-10.0..10.0f64),
            v0 in 0.0..30.0f64, a0 in -3.0..3.0f64, w0 in -0.8..0.8f64,
            psi0 in -PI..PI,
        ) {
            for model in Model::ALL {
                let mut data = Vector6::from_row_slice(&x);
                data[0] += 30.0;
                if model == Model::C {
                    data[4] = data[4].abs() * 3.0;
                }
                let r = RelState::new(model, data);
                let ego = EgoInput::new(v0, a0, w0);
                let j = discrete_jacobians_oriented(model, &r, &ego, psi0, 0.04);
                let f = |rr: &RelState, e: &EgoInput, n: &RelNoiseSample| {
                    propagate_relative_oriented(model, rr, e, psi0, 0.04, n).data
                };
                let zero = RelNoiseSample::zero(model);
                let h = 1e-6;
                let check = |fd: Vector6<f64>, an: Vector6<f64>, what: &str| -> Result<(), TestCaseError> {
                    let scale = 1.0 + an.amax();
                    prop_assert!((fd - an).amax() < 1e-5 * scale, "model {} {}: fd {} analytic {}", model, what, fd, an);
                    Ok(())
                };
                for c in 0..6 {
                    let mut p = r; p.data[c] += h;
                    let mut m = r; m.data[c] -= h;
                    let fd = angle_aware_diff(model, &f(&p, &ego, &zero), &f(&m, &ego, &zero)) / (2.0 * h);
                    check(fd, j.a.column(c).into_owned(), "A")?;
                }
                for c in 0..3 {
                    let bump = |e: f64| {
                        let mut g = ego;
                        match c { 0 => g.v0 += e, 1 => g.a0 += e, _ => g.psidot0 += e }
                        g
                    };
                    let fd = angle_aware_diff(model, &f(&r, &bump(h), &zero), &f(&r, &bump(-h), &zero)) / (2.0 * h);
                    check(fd, j.b.column(c).into_owned(), "B")?;
                }
                for c in 0..4 {
                    let mut e = Vector4::zeros();
                    e[c] = h;
                    let np = RelNoiseSample::from_vector(model, &e);
                    let nm = RelNoiseSample::from_vector(model, &(-e));
                    let fd = angle_aware_diff(model, &f(&r, &ego, &np), &f(&r, &ego, &nm)) / (2.0 * h);
                    check(fd, j.g.column(c).into_owned(), "G")?;
                }
            }
        }

        #[test]
        fn isotropic_process_noise_ignores_heading(
            x in prop::array::uniform6(-10.0..10.0f64),
            v0 in 0.0..30.0f64, a0 in -3.0..3.0f64, w0 in -0.8..0.8f64,
            psi_a in -PI..PI, psi_b in -PI..PI,
        ) {
            let v_rel = stack_process_noise(&Matrix2::from_diagonal_element(325.0), &Matrix2::from_diagonal(&Vector2::new(1.0, 25.0)));
            for model in [Model::A, Model::B] {
                let r = RelState::new(model, Vector6::from_row_slice(&x));
                let ego = EgoInput::new(v0, a0, w0);
                let (_, qa) = noise_covariances(&discrete_jacobians_oriented(model, &r, &ego, psi_a, 0.04), &Matrix3::zeros(), &v_rel);
                let (_, qb) = noise_covariances(&discrete_jacobians_oriented(model, &r, &ego, psi_b, 0.04), &Matrix3::zeros(), &v_rel);
                prop_assert!((qa - qb).amax() < 1e-10 * (1.0 + qa.amax()));
            }
        }

        #[test]
        fn covariances_are_psd(
            x in prop::array::uniform6(-10.0..10.0f64),
            v0 in 0.0..30.0f64, w0 in -0.8..0.8f64,
            d in prop::array::uniform3(0.0..2.0f64),
        ) {
            for model in Model::ALL {
                let r = RelState::new(model, Vector6::from_row_slice(&x));
                let j = discrete_jacobians(model, &r, &EgoInput::new(v0, 0.0, w0), 0.04);
                let p = Matrix3::from_diagonal(&nalgebra::Vector3::from_row_slice(&d));
                let (qi, qp) = noise_covariances(&j, &p, &Matrix4::from_diagonal(&Vector4::new(325.0, 325.0, 1.0, 25.0)));
                for q in [qi, qp] {
                    prop_assert_eq!(q, q.transpose());
                    let min = q.symmetric_eigenvalues().min();
                    prop_assert!(min >= -1e-9 * q.trace().max(1e-300));
                }
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn relative_velocity_is_the_position_rate(target in global_state(), ego in global_state()) {
            let ego_in = EgoInput::new(ego.v, ego.a, ego.psidot);
            let body = to_relative(Model::A, &target, &ego).data;
            for model in Model::ALL {
                let r = to_relative(model, &target, &ego);
                let (v, jx, je) = relative_velocity(&r, &ego_in);
                let rate = relative_derivative(model, &r, &ego_in, 0.0, 0.0, &RelNoiseSample::zero(model));
                prop_assert!((v - Vector2::new(rate[0], rate[1])).amax() < 1e-9);
                prop_assert!((v - Vector2::new(body[2], body[3])).amax() < 1e-9 * (1.0 + v.amax()));

                let h = 1e-6;
                for c in 0..6 {
                    let (mut p, mut m) = (r, r);
                    p.data[c] += h;
                    m.data[c] -= h;
                    let fd = (relative_velocity(&p, &ego_in).0 - relative_velocity(&m, &ego_in).0) / (2.0 * h);
                    prop_assert!((fd - jx.column(c)).amax() < 1e-6 * (1.0 + fd.amax()));
                }
                for c in 0..3 {
                    let bump = |e: f64| {
                        let mut g = ego_in;
                        match c { 0 => g.v0 += e, 1 => g.a0 += e, _ => g.psidot0 += e }
                        g
                    };
                    let fd = (relative_velocity(&r, &bump(h)).0 - relative_velocity(&r, &bump(-h)).0) / (2.0 * h);
                    prop_assert!((fd - je.column(c)).amax() < 1e-6 * (1.0 + fd.amax()));
                }
            }
        }
    }
}
