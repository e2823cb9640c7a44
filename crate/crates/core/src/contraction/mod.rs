//! Contraction certificates: the pointwise condition on `(M, K)`, its LMI
//! form in `(W, L) = (M⁻¹, K M⁻¹)`, grid synthesis, and verification.

mod certificate;
mod family;
mod synthesis;
mod verify;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{checked_symmetric, max_eigenvalue, min_eigenvalue, symmetrize};

pub use certificate::ContractionCertificate;
pub use family::{Degree, MatrixPolynomial, PolyBasis};
pub use synthesis::{refine_quadratic, synthesize, DegreeChoice, SynthesisProblem};
pub use verify::{verify, PointMargin, VerificationGrid, VerificationReport};

fn expect_shape(name: &str, m: &DMatrix<f64>, rows: usize, cols: usize) -> Result<()> {
    if m.shape() != (rows, cols) {
        return Err(Error::DimensionMismatch(format!(
            "{name} is {}x{}, expected {rows}x{cols}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

/// Largest eigenvalue of `(A + BK)ᵀ M₊ (A + BK) − (1 − β) M`.
///
/// Negative means the closed-loop differential dynamics contract at rate
/// `β` at this point.
pub fn contraction_margin(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    k: &DMatrix<f64>,
    m: &DMatrix<f64>,
    m_plus: &DMatrix<f64>,
    beta: f64,
) -> Result<f64> {
    let n = a.nrows();
    let inputs = b.ncols();
    expect_shape("A", a, n, n)?;
    expect_shape("B", b, n, inputs)?;
    expect_shape("K", k, inputs, n)?;
    expect_shape("M", m, n, n)?;
    expect_shape("M+", m_plus, n, n)?;
    let m = checked_symmetric(m)?;
    let m_plus = checked_symmetric(m_plus)?;
    Ok(contraction_margin_unchecked(a, b, k, &m, &m_plus, beta))
}

pub(crate) fn contraction_margin_unchecked(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    k: &DMatrix<f64>,
    m: &DMatrix<f64>,
    m_plus: &DMatrix<f64>,
    beta: f64,
) -> f64 {
    let closed = a + b * k;
    let lhs = closed.transpose() * m_plus * &closed - m * (1.0 - beta);
    max_eigenvalue(&symmetrize(&lhs))
}

/// Smallest eigenvalue of
/// `[[W₊, AW + BL], [(AW + BL)ᵀ, (1 − β) W]]`.
///
/// Positive means the synthesis condition holds at this point.
pub fn lmi_margin(
    w: &DMatrix<f64>,
    l: &DMatrix<f64>,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    w_plus: &DMatrix<f64>,
    beta: f64,
) -> Result<f64> {
    let n = a.nrows();
    let inputs = b.ncols();
    expect_shape("A", a, n, n)?;
    expect_shape("B", b, n, inputs)?;
    expect_shape("L", l, inputs, n)?;
    expect_shape("W", w, n, n)?;
    expect_shape("W+", w_plus, n, n)?;
    let w = checked_symmetric(w)?;
    let w_plus = checked_symmetric(w_plus)?;
    Ok(lmi_margin_unchecked(&w, l, a, b, &w_plus, beta))
}

pub(crate) fn lmi_block(
    w: &DMatrix<f64>,
    l: &DMatrix<f64>,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    w_plus: &DMatrix<f64>,
    beta: f64,
) -> DMatrix<f64> {
    let n = a.nrows();
    let off = a * w + b * l;
    let mut block = DMatrix::zeros(2 * n, 2 * n);
    block.view_mut((0, 0), (n, n)).copy_from(w_plus);
    block.view_mut((0, n), (n, n)).copy_from(&off);
    block.view_mut((n, 0), (n, n)).copy_from(&off.transpose());
    block.view_mut((n, n), (n, n)).copy_from(&(w * (1.0 - beta)));
    block
}

pub(crate) fn lmi_margin_unchecked(
    w: &DMatrix<f64>,
    l: &DMatrix<f64>,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    w_plus: &DMatrix<f64>,
    beta: f64,
) -> f64 {
    min_eigenvalue(&lmi_block(w, l, a, b, w_plus, beta))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    #[test]
    fn scalar_contraction_margins() {
        let one = s(1.0);
        let m = contraction_margin(&s(0.5), &s(0.0), &s(0.0), &one, &one, 0.3).unwrap();
        assert!((m - (0.25 - 0.7)).abs() < 1e-15);
        let m = contraction_margin(&s(1.0), &s(0.0), &s(0.0), &one, &one, 0.3).unwrap();
        assert!((m - 0.3).abs() < 1e-15);
    }

    #[test]
    fn deadbeat_boundary_at_unit_rate() {
        let id = DMatrix::identity(2, 2);
        let m = contraction_margin(
            &DMatrix::zeros(2, 2),
            &DMatrix::from_element(2, 1, 0.7),
            &DMatrix::zeros(1, 2),
            &id,
            &id,
            1.0,
        )
        .unwrap();
        assert_eq!(m, 0.0);
    }

    #[test]
    fn decoupled_lmi_block() {
        let id = DMatrix::identity(2, 2);
        let m = lmi_margin(
            &id,
            &DMatrix::zeros(1, 2),
            &DMatrix::zeros(2, 2),
            &DMatrix::zeros(2, 1),
            &id,
            0.3,
        )
        .unwrap();
        assert!((m - 0.7).abs() < 1e-14);
    }

    #[test]
    fn scalar_lmi_matches_closed_form_eigenvalue() {
        // [[1, 0.3], [0.3, 0.7]]: λ_min = 0.85 − √(0.15² + 0.3²)
        let expected = 0.85 - (0.15_f64.powi(2) + 0.09).sqrt();
        let m = lmi_margin(&s(1.0), &s(-0.2), &s(0.5), &s(1.0), &s(1.0), 0.3).unwrap();
        assert!((m - expected).abs() < 1e-14);
        assert!((m - 0.5146).abs() < 1e-4);
    }

    #[test]
    fn shape_and_symmetry_errors() {
        let id = DMatrix::identity(2, 2);
        let bad_k = DMatrix::zeros(2, 2);
        assert!(matches!(
            contraction_margin(&id, &DMatrix::zeros(2, 1), &bad_k, &id, &id, 0.3),
            Err(Error::DimensionMismatch(_))
        ));
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.0, 1.0]);
        assert!(matches!(
            contraction_margin(&id, &DMatrix::zeros(2, 1), &DMatrix::zeros(1, 2), &asym, &id, 0.3),
            Err(Error::NotSymmetric(_))
        ));
        assert!(lmi_margin(&id, &DMatrix::zeros(1, 3), &id, &DMatrix::zeros(2, 1), &id, 0.3).is_err());
    }
}
