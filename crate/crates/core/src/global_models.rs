//! Inertial-frame vehicle dynamics: CTRA and white-noise jerk.
//!
//! Noise samples are held constant over a propagation step. The CTRA position
//! integrals contain Fresnel-type terms in the yaw-acceleration noise; they are
//! expanded to first order in `ν_ψ̈`, which keeps everything expressible through
//! the moments `J_k(θ) = ∫₀¹ sᵏ e^{iθs} ds` of a uniform turn.

use nalgebra::{Complex, Matrix6, Matrix6x2, Vector6};
use serde::{Deserialize, Serialize};

use crate::statespace::{wrap_angle, CartesianState6, CtraState};

type C64 = Complex<f64>;

/// Turn angle `|ψ̇·dt|` up to which the moments are summed as a power series in `ψ̇·dt`.
///
/// Above it the closed-form recursion is used; at and below it the closed form
/// loses digits to cancellation (the removable singularity at `ψ̇ → 0`).
pub const SERIES_SWITCH: f64 = 2.0;

const MOMENTS: usize = 7;

type ComplexPart = fn(C64) -> f64;

/// CTRA process noise sample: yaw acceleration and jerk, constant over a step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CtraNoiseSample {
    /// rad/s²
    pub nu_psidd: f64,
    /// m/s³
    pub nu_adot: f64,
}

impl CtraNoiseSample {
    pub const ZERO: Self = Self { nu_psidd: 0.0, nu_adot: 0.0 };

    pub const fn new(nu_psidd: f64, nu_adot: f64) -> Self {
        Self { nu_psidd, nu_adot }
    }
}

/// Cartesian jerk sample, constant over a step (m/s³).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct JerkNoiseSample {
    pub nu_jx: f64,
    pub nu_jy: f64,
}

impl JerkNoiseSample {
    pub const ZERO: Self = Self { nu_jx: 0.0, nu_jy: 0.0 };

    pub const fn new(nu_jx: f64, nu_jy: f64) -> Self {
        Self { nu_jx, nu_jy }
    }
}

/// `J_k(θ) = ∫₀¹ sᵏ e^{iθs} ds` for `k = 0..MOMENTS`.
fn unit_moments(theta: f64) -> [C64; MOMENTS] {
    let mut out = [C64::new(0.0, 0.0); MOMENTS];
    if theta.abs() <= SERIES_SWITCH {
        // Σₙ (iθ)ⁿ / (n! (n + k + 1))
        let step = C64::new(0.0, theta);
        let mut term = C64::new(1.0, 0.0);
        for n in 0..60 {
            for (k, j) in out.iter_mut().enumerate() {
                *j += term / (n + k + 1) as f64;
            }
            term = term * step / (n + 1) as f64;
            if term.norm() < 1e-18 {
                break;
            }
        }
    } else {
        let e = C64::new(theta.cos(), theta.sin());
        let inv = C64::new(0.0, -1.0 / theta);
        out[0] = (e - 1.0) * inv;
        for k in 1..MOMENTS {
            out[k] = (e - out[k - 1] * k as f64) * inv;
        }
    }
    out
}

/// Planar displacement of a CTRA vehicle over one step, as a complex number `dx + i·dy`,
/// together with its partial derivatives.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Displacement {
    pub value: C64,
    pub d_psi: C64,
    pub d_psidot: C64,
    pub d_v: C64,
    pub d_a: C64,
    pub d_nu_psidd: C64,
    pub d_nu_adot: C64,
}

/// Integrates `v(t)·e^{iψ(t)}` over `[0, dt]` to first order in the yaw-acceleration noise.
pub(crate) fn displacement(psi: f64, psidot: f64, v: f64, a: f64, n: CtraNoiseSample, dt: f64) -> Displacement {
    let j = unit_moments(psidot * dt);
    let i = C64::new(0.0, 1.0);
    let (np, na) = (n.nu_psidd, n.nu_adot);
    // integrand polynomial: (v + a t + na t²/2)(1 + i np t²/2)
    let p = [
        C64::new(v, 0.0),
        C64::new(a, 0.0),
        C64::new(na / 2.0, np * v / 2.0),
        C64::new(0.0, np * a / 2.0),
        C64::new(0.0, np * na / 4.0),
    ];
    let rot = C64::new(psi.cos(), psi.sin());
    let tp = |k: i32| dt.powi(k);

    let mut value = C64::new(0.0, 0.0);
    let mut d_psidot = C64::new(0.0, 0.0);
    for (k, pk) in p.iter().enumerate() {
        value += pk * tp(k as i32 + 1) * j[k];
        d_psidot += pk * tp(k as i32 + 2) * i * j[k + 1];
    }
    let value = rot * value;
    Displacement {
        value,
        d_psi: i * value,
        d_psidot: rot * d_psidot,
        d_v: rot * (j[0] * dt + i * (np / 2.0) * tp(3) * j[2]),
        d_a: rot * (j[1] * tp(2) + i * (np / 2.0) * tp(4) * j[3]),
        d_nu_psidd: rot * i * 0.5 * (j[2] * (v * tp(3)) + j[3] * (a * tp(4)) + j[4] * (na / 2.0 * tp(5))),
        d_nu_adot: rot * (j[2] * (tp(3) / 2.0) + i * (np / 4.0) * tp(5) * j[4]),
    }
}

/// Continuous CTRA vector field.
pub fn ctra_derivative(s: &CtraState, n: CtraNoiseSample) -> Vector6<f64> {
    let (sin, cos) = s.psi.sin_cos();
    Vector6::new(s.v * cos, s.v * sin, s.psidot, n.nu_psidd, s.a, n.nu_adot)
}

/// Propagates a CTRA state over `dt` with the noise sample held constant.
///
/// Heading is returned wrapped into (-π, π].
pub fn ctra_propagate(s: &CtraState, dt: f64, n: CtraNoiseSample) -> CtraState {
    let d = displacement(s.psi, s.psidot, s.v, s.a, n, dt);
    CtraState {
        x: s.x + d.value.re,
        y: s.y + d.value.im,
        psi: wrap_angle(s.psi + s.psidot * dt + n.nu_psidd * dt * dt / 2.0),
        psidot: s.psidot + n.nu_psidd * dt,
        v: s.v + s.a * dt + n.nu_adot * dt * dt / 2.0,
        a: s.a + n.nu_adot * dt,
    }
}

/// State and noise Jacobians of [`ctra_propagate`] at zero noise.
pub fn ctra_discrete_jacobians(s: &CtraState, dt: f64) -> (Matrix6<f64>, Matrix6x2<f64>) {
    let d = displacement(s.psi, s.psidot, s.v, s.a, CtraNoiseSample::ZERO, dt);
    let mut f = Matrix6::identity();
    let parts: [(usize, ComplexPart); 2] = [(0, |c| c.re), (1, |c| c.im)];
    for (row, part) in parts {
        f[(row, 2)] = part(d.d_psi);
        f[(row, 3)] = part(d.d_psidot);
        f[(row, 4)] = part(d.d_v);
        f[(row, 5)] = part(d.d_a);
    }
    f[(2, 3)] = dt;
    f[(4, 5)] = dt;

    let mut g = Matrix6x2::zeros();
    g[(0, 0)] = d.d_nu_psidd.re;
    g[(1, 0)] = d.d_nu_psidd.im;
    g[(0, 1)] = d.d_nu_adot.re;
    g[(1, 1)] = d.d_nu_adot.im;
    g[(2, 0)] = dt * dt / 2.0;
    g[(3, 0)] = dt;
    g[(4, 1)] = dt * dt / 2.0;
    g[(5, 1)] = dt;
    (f, g)
}

/// White-noise-jerk propagation, exact for a jerk held constant over the step.
pub fn wnj_propagate(s: &CartesianState6, dt: f64, n: JerkNoiseSample) -> CartesianState6 {
    let axis = |p: f64, v: f64, a: f64, j: f64| {
        (p + v * dt + a * dt * dt / 2.0 + j * dt.powi(3) / 6.0, v + a * dt + j * dt * dt / 2.0, a + j * dt)
    };
    let (x, vx, ax) = axis(s.x, s.vx, s.ax, n.nu_jx);
    let (y, vy, ay) = axis(s.y, s.vy, s.ay, n.nu_jy);
    CartesianState6::new(x, y, vx, vy, ax, ay)
}

/// Transition matrix of the jerk chain in the `(x, y, ẋ, ẏ, ẍ, ÿ)` layout.
pub(crate) fn wnj_transition(dt: f64) -> Matrix6<f64> {
    let mut f = Matrix6::identity();
    let h = dt * dt / 2.0;
    for axis in 0..2 {
        f[(axis, 2 + axis)] = dt;
        f[(axis, 4 + axis)] = h;
        f[(2 + axis, 4 + axis)] = dt;
    }
    f
}

/// Jerk input matrix in the `(x, y, ẋ, ẏ, ẍ, ÿ)` layout.
pub(crate) fn wnj_input(dt: f64) -> Matrix6x2<f64> {
    let mut g = Matrix6x2::zeros();
    for axis in 0..2 {
        g[(axis, axis)] = dt.powi(3) / 6.0;
        g[(2 + axis, axis)] = dt * dt / 2.0;
        g[(4 + axis, axis)] = dt;
    }
    g
}
