use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::BoxBounds;

/// Polynomial degree of the `W`/`L` entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Degree {
    Constant,
    Quadratic,
}

impl Degree {
    pub fn as_u32(self) -> u32 {
        match self {
            Degree::Constant => 0,
            Degree::Quadratic => 2,
        }
    }

    pub fn from_u32(d: u32) -> Result<Self> {
        match d {
            0 => Ok(Degree::Constant),
            2 => Ok(Degree::Quadratic),
            other => Err(Error::Synthesis(format!(
                "unsupported parameter degree {other} (expected 0 or 2)"
            ))),
        }
    }
}

/// Monomials up to the given degree in normalized coordinates
/// `z = (x − center) / scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyBasis {
    degree: Degree,
    center: DVector<f64>,
    scale: DVector<f64>,
    monomials: Vec<Vec<u32>>,
}

impl PolyBasis {
    pub fn new(degree: Degree, center: DVector<f64>, scale: DVector<f64>) -> Result<Self> {
        let n = center.len();
        if scale.len() != n || scale.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Synthesis("basis scale must be positive per dimension".into()));
        }
        let mut monomials = vec![vec![0; n]];
        if degree == Degree::Quadratic {
            for i in 0..n {
                let mut p = vec![0; n];
                p[i] = 1;
                monomials.push(p);
            }
            for i in 0..n {
                for j in i..n {
                    let mut p = vec![0; n];
                    p[i] += 1;
                    p[j] += 1;
                    monomials.push(p);
                }
            }
        }
        Ok(Self {
            degree,
            center,
            scale,
            monomials,
        })
    }

    /// Basis normalized to a region: centered, unit half-width.
    pub fn for_region(degree: Degree, region: &BoxBounds) -> Self {
        let scale = region.half_widths().map(|h| if h > 0.0 { h } else { 1.0 });
        Self::new(degree, region.center(), scale).expect("positive scale")
    }

    pub fn degree(&self) -> Degree {
        self.degree
    }

    pub fn center(&self) -> &DVector<f64> {
        &self.center
    }

    pub fn scale(&self) -> &DVector<f64> {
        &self.scale
    }

    pub fn monomials(&self) -> &[Vec<u32>] {
        &self.monomials
    }

    pub fn len(&self) -> usize {
        self.monomials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.monomials.is_empty()
    }

    pub fn eval(&self, x: &DVector<f64>) -> Vec<f64> {
        let z: Vec<f64> = x
            .iter()
            .zip(self.center.iter().zip(self.scale.iter()))
            .map(|(xi, (c, s))| (xi - c) / s)
            .collect();
        self.monomials
            .iter()
            .map(|p| {
                p.iter()
                    .zip(&z)
                    .fold(1.0, |acc, (&e, &zi)| acc * zi.powi(e as i32))
            })
            .collect()
    }
}

/// `Σ_k φ_k(x) C_k` with one coefficient matrix per basis monomial.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixPolynomial {
    coeffs: Vec<DMatrix<f64>>,
}

impl MatrixPolynomial {
    pub fn new(coeffs: Vec<DMatrix<f64>>) -> Result<Self> {
        let Some(first) = coeffs.first() else {
            return Err(Error::Synthesis("matrix polynomial needs coefficients".into()));
        };
        if coeffs.iter().any(|c| c.shape() != first.shape()) {
            return Err(Error::DimensionMismatch(
                "coefficient matrices differ in shape".into(),
            ));
        }
        Ok(Self { coeffs })
    }

    pub fn constant(m: DMatrix<f64>) -> Self {
        Self { coeffs: vec![m] }
    }

    pub fn coeffs(&self) -> &[DMatrix<f64>] {
        &self.coeffs
    }

    pub fn shape(&self) -> (usize, usize) {
        self.coeffs[0].shape()
    }

    pub fn eval_with(&self, phi: &[f64]) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.coeffs[0].nrows(), self.coeffs[0].ncols());
        for (c, &p) in self.coeffs.iter().zip(phi) {
            if p != 0.0 {
                out += c * p;
            }
        }
        out
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            coeffs: self.coeffs.iter().map(|c| c * factor).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_basis_in_two_variables_has_six_terms() {
        let region = BoxBounds::from_intervals(&[[0.0, 2.0], [-1.0, 1.0]]).unwrap();
        let b = PolyBasis::for_region(Degree::Quadratic, &region);
        assert_eq!(b.len(), 6);
        // at x = (2, 1): z = (1, 1), every monomial is 1
        let phi = b.eval(&DVector::from_vec(vec![2.0, 1.0]));
        assert!(phi.iter().all(|&v| (v - 1.0).abs() < 1e-15));
        let phi = b.eval(&DVector::from_vec(vec![1.0, 0.0]));
        assert_eq!(phi, vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn degree_codes() {
        assert_eq!(Degree::from_u32(2).unwrap(), Degree::Quadratic);
        assert!(Degree::from_u32(1).is_err());
    }
}
