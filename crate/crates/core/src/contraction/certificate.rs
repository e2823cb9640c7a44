use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::family::{Degree, MatrixPolynomial, PolyBasis};
use crate::error::{Error, Result};
use crate::linalg::{spd_inverse, symmetrize};
use crate::model::BoxBounds;

/// Metric `M(x) = W(x)⁻¹`, differential gain `K(x) = L(x) W(x)⁻¹`, and rate
/// `β` certified for one timescale `τ`.
#[derive(Debug, Clone)]
pub struct ContractionCertificate {
    tau: f64,
    beta: f64,
    basis: PolyBasis,
    w: MatrixPolynomial,
    l: MatrixPolynomial,
    metric_bounds: (f64, f64),
    region: BoxBounds,
    grid_hash: String,
    constant: Option<(DMatrix<f64>, DMatrix<f64>)>,
}

impl PartialEq for ContractionCertificate {
    fn eq(&self, other: &Self) -> bool {
        self.tau == other.tau
            && self.beta == other.beta
            && self.basis == other.basis
            && self.w == other.w
            && self.l == other.l
            && self.metric_bounds == other.metric_bounds
            && self.region == other.region
            && self.grid_hash == other.grid_hash
    }
}

impl ContractionCertificate {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        tau: f64,
        beta: f64,
        basis: PolyBasis,
        w: MatrixPolynomial,
        l: MatrixPolynomial,
        metric_bounds: (f64, f64),
        region: BoxBounds,
        grid_hash: String,
    ) -> Result<Self> {
        if !(tau > 0.0) {
            return Err(Error::InvalidTimescale(tau));
        }
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(Error::InvalidRate(beta));
        }
        let n = basis.center().len();
        if w.shape() != (n, n) || l.shape().1 != n || region.dim() != n {
            return Err(Error::DimensionMismatch(format!(
                "certificate for {n} states has W {:?}, L {:?}, region {}",
                w.shape(),
                l.shape(),
                region.dim()
            )));
        }
        if w.coeffs().len() != basis.len() || l.coeffs().len() != basis.len() {
            return Err(Error::DimensionMismatch(
                "coefficient count does not match the basis".into(),
            ));
        }
        let (lo, hi) = metric_bounds;
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::NotPositiveDefinite(format!(
                "metric bounds ({lo}, {hi})"
            )));
        }
        let constant = if basis.degree() == Degree::Constant {
            let wc = symmetrize(&w.coeffs()[0]);
            let m = spd_inverse(&wc)?;
            let k = &l.coeffs()[0] * &m;
            Some((m, k))
        } else {
            None
        };
        Ok(Self {
            tau,
            beta,
            basis,
            w,
            l,
            metric_bounds,
            region,
            grid_hash,
            constant,
        })
    }

    /// Constant `(M, K)` certificate, mainly for tests and hand-built gains.
    pub fn from_constant_metric(
        tau: f64,
        beta: f64,
        m: DMatrix<f64>,
        k: DMatrix<f64>,
        region: BoxBounds,
    ) -> Result<Self> {
        let w = spd_inverse(&m)?;
        let l = &k * &w;
        let eig = m.clone().symmetric_eigenvalues();
        let basis = PolyBasis::for_region(Degree::Constant, &region);
        Self::new(
            tau,
            beta,
            basis,
            MatrixPolynomial::constant(w),
            MatrixPolynomial::constant(l),
            (eig.min(), eig.max()),
            region,
            String::new(),
        )
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn degree(&self) -> Degree {
        self.basis.degree()
    }

    pub fn basis(&self) -> &PolyBasis {
        &self.basis
    }

    pub fn w_poly(&self) -> &MatrixPolynomial {
        &self.w
    }

    pub fn l_poly(&self) -> &MatrixPolynomial {
        &self.l
    }

    pub fn region(&self) -> &BoxBounds {
        &self.region
    }

    pub fn grid_hash(&self) -> &str {
        &self.grid_hash
    }

    pub fn state_dim(&self) -> usize {
        self.w.shape().0
    }

    pub fn input_dim(&self) -> usize {
        self.l.shape().0
    }

    pub fn is_constant(&self) -> bool {
        self.constant.is_some()
    }

    /// `(m_lower, m_upper)` with `m_lower I ≤ M(x) ≤ m_upper I` on the grid.
    pub fn metric_bounds(&self) -> (f64, f64) {
        self.metric_bounds
    }

    /// Per-step distance factor `√(1 − β)`.
    pub fn decay(&self) -> f64 {
        (1.0 - self.beta).sqrt()
    }

    /// `R = √(m_upper / m_lower)`.
    pub fn overshoot(&self) -> f64 {
        (self.metric_bounds.1 / self.metric_bounds.0).sqrt()
    }

    /// `λ = −ln √(1 − β)` per step (infinite for β = 1).
    pub fn rate(&self) -> f64 {
        -self.decay().ln()
    }

    pub fn w_at(&self, x: &DVector<f64>) -> DMatrix<f64> {
        symmetrize(&self.w.eval_with(&self.basis.eval(x)))
    }

    pub fn l_at(&self, x: &DVector<f64>) -> DMatrix<f64> {
        self.l.eval_with(&self.basis.eval(x))
    }

    /// `M(x)`.
    pub fn metric(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        if let Some((m, _)) = &self.constant {
            return Ok(m.clone());
        }
        spd_inverse(&self.w_at(x))
    }

    /// `K(x)`.
    pub fn gain(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        if let Some((_, k)) = &self.constant {
            return Ok(k.clone());
        }
        let phi = self.basis.eval(x);
        let m = spd_inverse(&symmetrize(&self.w.eval_with(&phi)))?;
        Ok(self.l.eval_with(&phi) * m)
    }

    /// Borrowed constant `(M, K)` when the certificate is state-independent.
    pub fn constant_parts(&self) -> Option<(&DMatrix<f64>, &DMatrix<f64>)> {
        self.constant.as_ref().map(|(m, k)| (m, k))
    }

    /// Same certificate with a scaled gain, for fault-injection checks.
    pub fn with_scaled_gain(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.tau,
            self.beta,
            self.basis.clone(),
            self.w.clone(),
            self.l.scaled(factor),
            self.metric_bounds,
            self.region.clone(),
            self.grid_hash.clone(),
        )
    }

    pub fn to_toml_string(&self) -> String {
        let n = self.state_dim();
        let file = CertificateFile {
            tau: self.tau,
            beta: self.beta,
            degree: self.degree().as_u32(),
            state_dim: n,
            input_dim: self.input_dim(),
            m_lower: self.metric_bounds.0,
            m_upper: self.metric_bounds.1,
            grid_hash: self.grid_hash.clone(),
            region: self.region.intervals(),
            center: self.basis.center().iter().copied().collect(),
            scale: self.basis.scale().iter().copied().collect(),
            w: coeff_entries(self.basis.monomials(), self.w.coeffs()),
            l: coeff_entries(self.basis.monomials(), self.l.coeffs()),
        };
        toml::to_string(&file).expect("certificate serializes")
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let f: CertificateFile =
            toml::from_str(text).map_err(|e| Error::CertificateFormat(e.to_string()))?;
        let degree = Degree::from_u32(f.degree)
            .map_err(|e| Error::CertificateFormat(e.to_string()))?;
        let n = f.state_dim;
        let m = f.input_dim;
        let basis = PolyBasis::new(
            degree,
            DVector::from_vec(f.center.clone()),
            DVector::from_vec(f.scale.clone()),
        )
        .map_err(|e| Error::CertificateFormat(e.to_string()))?;
        let w = read_coeffs(&f.w, basis.monomials(), n, n, "w")?;
        let l = read_coeffs(&f.l, basis.monomials(), m, n, "l")?;
        Self::new(
            f.tau,
            f.beta,
            basis,
            w,
            l,
            (f.m_lower, f.m_upper),
            BoxBounds::from_intervals(&f.region)?,
            f.grid_hash,
        )
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CertificateFile {
    tau: f64,
    beta: f64,
    degree: u32,
    state_dim: usize,
    input_dim: usize,
    m_lower: f64,
    m_upper: f64,
    grid_hash: String,
    region: Vec<[f64; 2]>,
    center: Vec<f64>,
    scale: Vec<f64>,
    w: Vec<CoeffEntry>,
    l: Vec<CoeffEntry>,
}

/// One coefficient matrix, row-major.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CoeffEntry {
    monomial: Vec<u32>,
    values: Vec<f64>,
}

fn coeff_entries(monomials: &[Vec<u32>], coeffs: &[DMatrix<f64>]) -> Vec<CoeffEntry> {
    monomials
        .iter()
        .zip(coeffs)
        .map(|(mono, c)| CoeffEntry {
            monomial: mono.clone(),
            values: (0..c.nrows())
                .flat_map(|i| (0..c.ncols()).map(move |j| c[(i, j)]))
                .collect(),
        })
        .collect()
}

fn read_coeffs(
    entries: &[CoeffEntry],
    monomials: &[Vec<u32>],
    rows: usize,
    cols: usize,
    name: &str,
) -> Result<MatrixPolynomial> {
    if entries.len() != monomials.len() {
        return Err(Error::CertificateFormat(format!(
            "{name}: {} coefficient blocks for {} monomials",
            entries.len(),
            monomials.len()
        )));
    }
    let mut coeffs = Vec::with_capacity(entries.len());
    for (entry, mono) in entries.iter().zip(monomials) {
        if &entry.monomial != mono {
            return Err(Error::CertificateFormat(format!(
                "{name}: monomial {:?} out of order (expected {:?})",
                entry.monomial, mono
            )));
        }
        if entry.values.len() != rows * cols {
            return Err(Error::CertificateFormat(format!(
                "{name}: expected {} values, got {}",
                rows * cols,
                entry.values.len()
            )));
        }
        coeffs.push(DMatrix::from_row_slice(rows, cols, &entry.values));
    }
    MatrixPolynomial::new(coeffs)
}
