//! Continuous 6D rotation representation.
//!
//! A rotation is stored as its first two columns `(a, b)`, laid out
//! `[R00, R10, R20, R01, R11, R21]`. Decoding normalizes `a`, removes the
//! `a` component from `b` and completes the frame with a cross product.

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};

use crate::error::{Result, VmpError};

/// Norm below which a 6D column is treated as degenerate.
pub const DEGENERATE_EPS: f64 = 1e-8;

pub type Rot6 = [f64; 6];

pub const IDENTITY_6D: Rot6 = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];

pub fn rot6d_to_matrix(r6: &Rot6) -> Result<Matrix3<f64>> {
    let a = Vector3::new(r6[0], r6[1], r6[2]);
    let b = Vector3::new(r6[3], r6[4], r6[5]);
    let na = a.norm();
    if !(na > DEGENERATE_EPS) {
        return Err(VmpError::DegenerateRotation(format!(
            "first column norm {na:e} is not above {DEGENERATE_EPS:e}"
        )));
    }
    let a = a / na;
    let b = b - a * a.dot(&b);
    let nb = b.norm();
    if !(nb > DEGENERATE_EPS) {
        return Err(VmpError::DegenerateRotation(format!(
            "second column is parallel to the first (residual norm {nb:e})"
        )));
    }
    let b = b / nb;
    let c = a.cross(&b);
    Ok(Matrix3::from_columns(&[a, b, c]))
}

/// Returns the first two columns of `r` after checking it is a proper rotation.
pub fn matrix_to_rot6d(r: &Matrix3<f64>) -> Result<Rot6> {
    check_rotation(r, 1e-6)?;
    Ok([
        r[(0, 0)],
        r[(1, 0)],
        r[(2, 0)],
        r[(0, 1)],
        r[(1, 1)],
        r[(2, 1)],
    ])
}

pub fn check_rotation(r: &Matrix3<f64>, tol: f64) -> Result<()> {
    if r.iter().any(|v| !v.is_finite()) {
        return Err(VmpError::NotRotation("non-finite entry".into()));
    }
    let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
    if ortho > tol {
        return Err(VmpError::NotRotation(format!(
            "max |R^T R - I| = {ortho:e}"
        )));
    }
    let det = r.determinant();
    if (det - 1.0).abs() > tol {
        return Err(VmpError::NotRotation(format!("det = {det}")));
    }
    Ok(())
}

/// Rotation vector (axis * angle) to matrix.
pub fn axis_angle_to_matrix(v: &Vector3<f64>) -> Matrix3<f64> {
    Rotation3::new(*v).into_inner()
}

pub fn axis_angle_to_rot6d(v: &Vector3<f64>) -> Rot6 {
    let r = axis_angle_to_matrix(v);
    [
        r[(0, 0)],
        r[(1, 0)],
        r[(2, 0)],
        r[(0, 1)],
        r[(1, 1)],
        r[(2, 1)],
    ]
}

pub fn rotation_about(axis: Vector3<f64>, angle: f64) -> Matrix3<f64> {
    Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle).into_inner()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_decodes_to_identity() {
        let r = rot6d_to_matrix(&IDENTITY_6D).unwrap();
        assert_eq!(r, Matrix3::identity());
    }

    #[test]
    fn quarter_turn_about_z() {
        let r = rot6d_to_matrix(&[0.0, 1.0, 0.0, -1.0, 0.0, 0.0]).unwrap();
        let expect = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert!((r - expect).abs().max() < 1e-15);
        assert_eq!(matrix_to_rot6d(&expect).unwrap(), [0.0, 1.0, 0.0, -1.0, 0.0, 0.0]);
    }

    #[test]
    fn identity_encodes() {
        assert_eq!(matrix_to_rot6d(&Matrix3::identity()).unwrap(), IDENTITY_6D);
    }

    #[test]
    fn degenerate_inputs_error() {
        assert!(matches!(
            rot6d_to_matrix(&[0.0, 0.0, 0.0, 0.0, 1.0, 0.0]),
            Err(VmpError::DegenerateRotation(_))
        ));
        assert!(matches!(
            rot6d_to_matrix(&[1.0, 0.0, 0.0, 2.0, 0.0, 0.0]),
            Err(VmpError::DegenerateRotation(_))
        ));
        assert!(rot6d_to_matrix(&[f64::NAN, 0.0, 0.0, 0.0, 1.0, 0.0]).is_err());
    }

    #[test]
    fn rejects_reflections_and_scaled() {
        let mut refl = Matrix3::identity();
        refl[(2, 2)] = -1.0;
        assert!(matches!(matrix_to_rot6d(&refl), Err(VmpError::NotRotation(_))));
        assert!(matrix_to_rot6d(&(Matrix3::identity() * 1.1)).is_err());
    }
}
