//! Observability matrices and the stochastic observability Gramian.

use nalgebra::{DMatrix, Matrix2, Matrix6};

use crate::error::{Error, Result};
use crate::relmodels::discrete_jacobians;
use crate::statespace::{EgoInput, Model, RelState};

/// Stacking depth used by [`stochastic_gramian`]: the state dimension.
pub const DEFAULT_BLOCKS: usize = 6;

/// Determinants at or below this value are reported as not observable.
pub const DET_TOL: f64 = 1e-18;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GramianReport {
    pub det: f64,
    pub min_singular_value: f64,
    pub n_blocks: usize,
    pub observable: bool,
}

/// Stacks `H, H A, H A², …` into a `(k·n_blocks) × 6` matrix.
pub fn observability_matrix(a: &DMatrix<f64>, h: &DMatrix<f64>, n_blocks: usize) -> Result<DMatrix<f64>> {
    if n_blocks == 0 {
        return Err(Error::Dimension("at least one block is required".into()));
    }
    if !a.is_square() || h.ncols() != a.nrows() {
        return Err(Error::Dimension(format!("A {:?} and H {:?} are incompatible", a.shape(), h.shape())));
    }
    let k = h.nrows();
    let mut q = DMatrix::zeros(k * n_blocks, a.ncols());
    let mut block = h.clone();
    for i in 0..n_blocks {
        q.rows_mut(i * k, k).copy_from(&block);
        block = &block * a;
    }
    Ok(q)
}

/// `Qᵀ diag(W, …, W)⁻¹ Q`.
pub fn gramian(q: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let k = w.nrows();
    if !w.is_square() || k == 0 || !q.nrows().is_multiple_of(k) {
        return Err(Error::Dimension(format!("W {:?} does not tile Q {:?}", w.shape(), q.shape())));
    }
    let w_inv = w
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("measurement covariance is not positive definite".into()))?
        .inverse();
    let mut g = DMatrix::zeros(q.ncols(), q.ncols());
    for i in 0..q.nrows() / k {
        let block = q.rows(i * k, k);
        g += block.transpose() * &w_inv * block;
    }
    Ok((&g + g.transpose()) * 0.5)
}

/// Gramian determinant for position measurements at a linearization point.
pub fn stochastic_gramian(
    model: Model,
    rel: &RelState,
    ego_in: &EgoInput,
    dt: f64,
    w: &Matrix2<f64>,
) -> Result<GramianReport> {
    let a: Matrix6<f64> = discrete_jacobians(model, rel, ego_in, dt).a;
    gramian_report(&DMatrix::from_column_slice(6, 6, a.as_slice()), w, DEFAULT_BLOCKS)
}

/// Determinant of a symmetric PSD matrix, computed on its unit-diagonal equilibration
/// so that graded entries (powers of the step length) do not cost accuracy.
pub fn psd_determinant(g: &DMatrix<f64>) -> f64 {
    let d: Vec<f64> = g.diagonal().iter().map(|&x| x.max(0.0)).collect();
    if d.contains(&0.0) {
        return 0.0;
    }
    let scale: Vec<f64> = d.iter().map(|x| 1.0 / x.sqrt()).collect();
    let unit = DMatrix::from_fn(g.nrows(), g.ncols(), |r, c| g[(r, c)] * scale[r] * scale[c]);
    let inner = match unit.clone().cholesky() {
        Some(ch) => ch.l().diagonal().iter().map(|x| x * x).product::<f64>(),
        None => unit.determinant().max(0.0),
    };
    inner * d.iter().product::<f64>()
}

/// Gramian report for an arbitrary state transition and position measurement.
pub fn gramian_report(a: &DMatrix<f64>, w: &Matrix2<f64>, n_blocks: usize) -> Result<GramianReport> {
    let mut h = DMatrix::zeros(2, a.ncols());
    h[(0, 0)] = 1.0;
    h[(1, 1)] = 1.0;
    let q = observability_matrix(a, &h, n_blocks)?;
    let g = gramian(&q, &DMatrix::from_column_slice(2, 2, w.as_slice()))?;
    let det = psd_determinant(&g);
    let min_singular_value = g.singular_values().min();
    Ok(GramianReport { det, min_singular_value, n_blocks, observable: det > DET_TOL })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Vector6;
    use proptest::prelude::*;

    const TABLE_DET: f64 = 960400.0;

    #[test]
    fn jerk_chain_axis_by_hand() {
        let t = 0.3;
        let a = DMatrix::from_row_slice(3, 3, &[1.0, t, t * t / 2.0, 0.0, 1.0, t, 0.0, 0.0, 1.0]);
        let h = DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]);
        let q = observability_matrix(&a, &h, 3).unwrap();
        let expected = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 1.0, t, t * t / 2.0, 1.0, 2.0 * t, 2.0 * t * t]);
        assert_relative_eq!(q, expected, epsilon = 1e-15);
        assert_relative_eq!(q.determinant(), t.powi(3), epsilon = 1e-15);
    }

    #[test]
    fn trivial_stacks() {
        let h = DMatrix::from_row_slice(2, 6, &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        let q = observability_matrix(&DMatrix::identity(6, 6), &h, 6).unwrap();
        assert_eq!(q.rank(1e-12), 2);
        let q = observability_matrix(&DMatrix::identity(6, 6), &DMatrix::identity(6, 6), 1).unwrap();
        assert_eq!(q, DMatrix::identity(6, 6));
        assert!(observability_matrix(&DMatrix::identity(6, 6), &h, 0).is_err());
    }

    #[test]
    fn jerk_models_reproduce_closed_form() {
        let rel = RelState::new(Model::A, Vector6::new(25.0, 2.0, -3.0, 0.5, 0.1, 0.0));
        let ego = EgoInput::new(18.0, 0.4, 0.15);
        for model in [Model::A, Model::B] {
            let r =
                stochastic_gramian(model, &RelState::new(model, rel.data), &ego, 0.04, &Matrix2::identity()).unwrap();
            let expected = TABLE_DET * 0.04f64.powi(12);
            assert!((r.det / expected - 1.0).abs() < 1e-6, "{model}: {} vs {}", r.det, expected);
            assert!((r.det - 1.6e-11).abs() < 0.01 * 1.6e-11);
            assert!(r.observable);
            assert_eq!(r.n_blocks, 6);
        }
    }

    #[test]
    fn ctra_model_loses_observability_at_standstill() {
        let ego = EgoInput::new(15.0, 0.0, 0.1);
        let stopped = RelState::new(Model::C, Vector6::new(20.0, 1.0, 0.2, 0.0, 0.0, 0.0));
        let r = stochastic_gramian(Model::C, &stopped, &ego, 0.04, &Matrix2::identity()).unwrap();
        assert!(r.det < 1e-15 * 0.04f64.powi(12));
        assert!(!r.observable);

        let moving = RelState::new(Model::C, Vector6::new(20.0, 1.0, 0.2, 0.1, 10.0, 1.0));
        let r = stochastic_gramian(Model::C, &moving, &ego, 0.04, &Matrix2::identity()).unwrap();
        assert!(r.det > 0.0 && r.det <= 3.2e-3, "det {}", r.det);
    }

    #[test]
    fn non_pd_weight_is_a_numerical_error() {
        let rel = RelState::zeros(Model::A);
        let err =
            stochastic_gramian(Model::A, &rel, &EgoInput::new(1.0, 0.0, 0.0), 0.04, &Matrix2::zeros()).unwrap_err();
        assert!(matches!(err, Error::Numerical(_)));
    }

    fn point() -> impl Strategy<Value = (Vector6<f64>, EgoInput)> {
        (prop::array::uniform6(-30.0..30.0f64), 0.0..35.0f64, -3.0..3.0f64, -0.8..0.8f64)
            .prop_map(|(x, v, a, w)| (Vector6::from_row_slice(&x), EgoInput::new(v, a, w)))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn jerk_models_are_state_independent((x, ego) in point()) {
            let expected = TABLE_DET * 0.04f64.powi(12);
            for model in [Model::A, Model::B] {
                let r = stochastic_gramian(model, &RelState::new(model, x), &ego, 0.04, &Matrix2::identity()).unwrap();
                prop_assert!((r.det / expected - 1.0).abs() < 1e-6);
            }
        }

        #[test]
        fn determinant_scales_with_weight((x, ego) in point(), c in 0.1..10.0f64) {
            for model in Model::ALL {
                let mut x = x;
                if model == Model::C {
                    x[4] = x[4].abs() + 1.0;
                }
                let rel = RelState::new(model, x);
                let base = stochastic_gramian(model, &rel, &ego, 0.04, &Matrix2::identity()).unwrap();
                let scaled = stochastic_gramian(model, &rel, &ego, 0.04, &(Matrix2::identity() * c)).unwrap();
                // the Gramian scales as 1/c, so its 6×6 determinant as c⁻⁶
                prop_assert!((scaled.det / (base.det * c.powi(-6)) - 1.0).abs() < 1e-9 || base.det < 1e-300);
            }
        }

        #[test]
        fn gramian_is_symmetric_psd((x, ego) in point()) {
            for model in Model::ALL {
                let a = discrete_jacobians(model, &RelState::new(model, x), &ego, 0.04).a;
                let a = DMatrix::from_column_slice(6, 6, a.as_slice());
                let h = DMatrix::identity(6, 6).rows(0, 2).into_owned();
                let g = gramian(&observability_matrix(&a, &h, 6).unwrap(), &DMatrix::identity(2, 2)).unwrap();
                prop_assert_eq!(g.clone(), g.transpose());
                prop_assert!(g.symmetric_eigenvalues().min() >= -1e-9 * g.amax());
                let r = gramian_report(&a, &Matrix2::identity(), 6).unwrap();
                prop_assert!(r.det >= 0.0);
                prop_assert_eq!(r.observable, r.det > DET_TOL);
            }
        }
    }
}
