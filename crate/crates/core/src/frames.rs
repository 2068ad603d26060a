//! Coordinate machinery: planar rotations, the non-inertial transformation into
//! the ego body frame, the mixed-coordinate transforms, and the model-tagged
//! maps between global and relative states.

use nalgebra::{Matrix2, Matrix6, Vector2, Vector6};

use crate::error::Result;
use crate::statespace::{
    cartesian_to_ctra, ctra_to_cartesian, wrap_angle, CartesianState6, CtraState, Model, RelState,
};

/// Rotation taking global vectors into a frame with heading `ψ`:
/// rows `(cos ψ, sin ψ)` and `(−sin ψ, cos ψ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rot2(pub Matrix2<f64>);

impl Rot2 {
    pub fn matrix(&self) -> &Matrix2<f64> {
        &self.0
    }

    pub fn apply(&self, v: Vector2<f64>) -> Vector2<f64> {
        self.0 * v
    }

    pub fn inverse(&self) -> Rot2 {
        Rot2(self.0.transpose())
    }
}

pub fn rotation(psi: f64) -> Rot2 {
    let (s, c) = psi.sin_cos();
    Rot2(Matrix2::new(c, s, -s, c))
}

/// `∂r/∂ψ = K·r`, with `K` the quarter-turn generator below.
pub(crate) fn quarter_turn() -> Matrix2<f64> {
    Matrix2::new(0.0, 1.0, -1.0, 0.0)
}

/// Rotation together with its first and second time derivatives along a heading
/// trajectory with the given rate and angular acceleration.
pub fn rotation_rates(psi: f64, psidot: f64, psiddot: f64) -> (Matrix2<f64>, Matrix2<f64>, Matrix2<f64>) {
    let r = rotation(psi).0;
    let k = quarter_turn();
    let dr = k * r;
    let ddr = k * k * r;
    (r, dr * psidot, dr * psiddot + ddr * (psidot * psidot))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransformKind {
    /// Rotation into the body frame plus velocity-transport, Coriolis and centrifugal blocks.
    NonInertial,
    /// `blockdiag(r, r, r)`.
    Mixed,
    /// `blockdiag(r, I₂, I₂)`.
    MixedCtra,
}

/// Six-dimensional linear map from (projected) global differences to relative coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transform6 {
    pub matrix: Matrix6<f64>,
    pub kind: TransformKind,
}

fn assemble(blocks: [[Matrix2<f64>; 3]; 3]) -> Matrix6<f64> {
    let mut m = Matrix6::zeros();
    for (i, row) in blocks.iter().enumerate() {
        for (j, b) in row.iter().enumerate() {
            m.fixed_view_mut::<2, 2>(2 * i, 2 * j).copy_from(b);
        }
    }
    m
}

/// Which of the non-inertial blocks enter the body-frame transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NonInertialTerms {
    /// `ṙ` acting on the position difference.
    pub transport: bool,
    /// `r̈` acting on the position difference.
    pub centrifugal: bool,
    /// `2ṙ` acting on the velocity difference.
    pub coriolis: bool,
}

impl NonInertialTerms {
    pub const ALL: Self = Self { transport: true, centrifugal: true, coriolis: true };
}

/// Body-frame transform for ego heading `psi` and yaw rate `w`, with a choice of
/// correction blocks. Model A uses [`NonInertialTerms::ALL`].
pub fn noninertial_matrix(psi: f64, w: f64, terms: NonInertialTerms) -> Matrix6<f64> {
    let r = rotation(psi).0;
    let k = quarter_turn();
    let z = Matrix2::zeros();
    let pick = |on: bool, m: Matrix2<f64>| if on { m } else { z };
    assemble([
        [r, z, z],
        [pick(terms.transport, k * r * w), r, z],
        [pick(terms.centrifugal, r * (-w * w)), pick(terms.coriolis, k * r * (2.0 * w)), r],
    ])
}

/// Transform matrix of `model` for an ego heading `psi` and yaw rate `w` (yaw acceleration zero).
pub(crate) fn transform_matrix(model: Model, psi: f64, w: f64) -> Matrix6<f64> {
    let r = rotation(psi).0;
    let z = Matrix2::zeros();
    let id = Matrix2::identity();
    match model {
        Model::A => noninertial_matrix(psi, w, NonInertialTerms::ALL),
        Model::B => assemble([[r, z, z], [z, r, z], [z, z, r]]),
        Model::C => assemble([[r, z, z], [z, id, z], [z, z, id]]),
    }
}

/// Partial derivatives of [`transform_matrix`] with respect to `psi` and `w`.
pub(crate) fn transform_partials(model: Model, psi: f64, w: f64) -> (Matrix6<f64>, Matrix6<f64>) {
    let r = rotation(psi).0;
    let k = quarter_turn();
    let kr = k * r;
    let z = Matrix2::zeros();
    match model {
        Model::A => (
            assemble([[kr, z, z], [k * kr * w, kr, z], [kr * (-w * w), k * kr * (2.0 * w), kr]]),
            assemble([[z, z, z], [kr, z, z], [r * (-2.0 * w), kr * 2.0, z]]),
        ),
        Model::B => (assemble([[kr, z, z], [z, kr, z], [z, z, kr]]), Matrix6::zeros()),
        Model::C => (assemble([[kr, z, z], [z, z, z], [z, z, z]]), Matrix6::zeros()),
    }
}

/// Inverse of [`transform_matrix`], written out blockwise.
pub(crate) fn transform_inverse(model: Model, psi: f64, w: f64) -> Matrix6<f64> {
    let rt = rotation(psi).0.transpose();
    match model {
        Model::A => {
            // p = rᵀP, q = rᵀ(U − wKP), s = rᵀ(A − w²P − 2wKU)
            let k = quarter_turn();
            let z = Matrix2::zeros();
            assemble([[rt, z, z], [-(rt * k) * w, rt, z], [rt * (-w * w), -(rt * k) * (2.0 * w), rt]])
        }
        Model::B => {
            let z = Matrix2::zeros();
            assemble([[rt, z, z], [z, rt, z], [z, z, rt]])
        }
        Model::C => {
            let z = Matrix2::zeros();
            let id = Matrix2::identity();
            assemble([[rt, z, z], [z, id, z], [z, z, id]])
        }
    }
}

/// The transform `m` for the given model evaluated at the ego state.
///
/// The implied projector is `diag(1,1,0,0,0,0)` for B and `diag(1,1,1,0,0,0)` for C;
/// model A subtracts the full ego state.
pub fn mixing_matrix(model: Model, ego: &CtraState) -> Transform6 {
    let kind = match model {
        Model::A => TransformKind::NonInertial,
        Model::B => TransformKind::Mixed,
        Model::C => TransformKind::MixedCtra,
    };
    Transform6 { matrix: transform_matrix(model, ego.psi, ego.psidot), kind }
}

/// Maps global target and ego states to the model's relative coordinates.
pub fn to_relative(model: Model, target: &CtraState, ego: &CtraState) -> RelState {
    let m = transform_matrix(model, ego.psi, ego.psidot);
    let data = match model {
        Model::A => m * (ctra_to_cartesian(target).to_vector() - ctra_to_cartesian(ego).to_vector()),
        Model::B => {
            let mut diff = ctra_to_cartesian(target).to_vector();
            diff[0] -= ego.x;
            diff[1] -= ego.y;
            m * diff
        }
        Model::C => {
            let diff = Vector6::new(
                target.x - ego.x,
                target.y - ego.y,
                target.psi - ego.psi,
                target.psidot,
                target.v,
                target.a,
            );
            let mut out = m * diff;
            out[2] = wrap_angle(out[2]);
            out
        }
    };
    RelState::new(model, data)
}

/// Recovers the global target state from relative coordinates and the ego state.
///
/// Models A and B go through Cartesian coordinates and fail with
/// [`Error::DegenerateSpeed`](crate::Error::DegenerateSpeed) when the resulting
/// target speed is too small to define a heading.
pub fn from_relative(model: Model, rel: &RelState, ego: &CtraState) -> Result<CtraState> {
    let inv = transform_inverse(model, ego.psi, ego.psidot);
    match model {
        Model::A => {
            let global = inv * rel.data + ctra_to_cartesian(ego).to_vector();
            cartesian_to_ctra(&CartesianState6::from_vector(&global))
        }
        Model::B => {
            let mut global = inv * rel.data;
            global[0] += ego.x;
            global[1] += ego.y;
            cartesian_to_ctra(&CartesianState6::from_vector(&global))
        }
        Model::C => {
            let local = inv * rel.data;
            Ok(CtraState::new(
                ego.x + local[0],
                ego.y + local[1],
                wrap_angle(local[2] + ego.psi),
                local[3],
                local[4],
                local[5],
            ))
        }
    }
}
