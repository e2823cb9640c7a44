//! Timescale-parameterized control-affine plant models.
//!
//! A model is a discrete map `x⁺ = f_τ(x) + B_τ u` where the input matrix
//! depends only on the interval `τ`. The coupled tank ships built in; other
//! plants can be described as polynomial model files.

mod polynomial;
mod reference;
mod tank;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub use polynomial::{ModelForm, PolynomialModel, Term};
pub use reference::{ReferencePlan, ReferenceSegment};
pub use tank::{CoupledTank, TankParameters, LEVEL_EPS};

pub type State = DVector<f64>;
pub type Input = DVector<f64>;

/// Per-dimension closed intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxBounds {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl BoxBounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::DimensionMismatch(format!(
                "box bounds need matching non-empty lower/upper, got {} and {}",
                lower.len(),
                upper.len()
            )));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l <= u)) {
            return Err(Error::DimensionMismatch(format!(
                "box bounds must satisfy lower <= upper: {lower:?} / {upper:?}"
            )));
        }
        Ok(Self { lower, upper })
    }

    pub fn from_intervals(intervals: &[[f64; 2]]) -> Result<Self> {
        Self::new(
            intervals.iter().map(|i| i[0]).collect(),
            intervals.iter().map(|i| i[1]).collect(),
        )
    }

    pub fn uniform(dim: usize, lo: f64, hi: f64) -> Self {
        Self {
            lower: vec![lo; dim],
            upper: vec![hi; dim],
        }
    }

    pub fn intervals(&self) -> Vec<[f64; 2]> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(&l, &u)| [l, u])
            .collect()
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn contains(&self, v: &DVector<f64>) -> bool {
        self.contains_tol(v, 0.0)
    }

    pub fn contains_tol(&self, v: &DVector<f64>, tol: f64) -> bool {
        v.len() == self.dim()
            && v
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(x, (l, u))| *x >= l - tol && *x <= u + tol)
    }

    pub fn clamp(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            v.len(),
            v.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .map(|(x, (l, u))| x.clamp(*l, *u)),
        )
    }

    /// Largest amount by which `v` leaves the box (0 when inside).
    pub fn violation(&self, v: &DVector<f64>) -> f64 {
        v.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(x, (l, u))| (l - x).max(x - u).max(0.0))
            .fold(0.0, f64::max)
    }

    /// `points_per_dim` evenly spaced points per dimension, full tensor grid,
    /// last dimension varying fastest.
    pub fn grid(&self, points_per_dim: usize) -> Vec<DVector<f64>> {
        let n = self.dim();
        let axes: Vec<Vec<f64>> = (0..n)
            .map(|i| linspace(self.lower[i], self.upper[i], points_per_dim))
            .collect();
        let total: usize = axes.iter().map(Vec::len).product();
        let mut out = Vec::with_capacity(total);
        for flat in 0..total {
            let mut rem = flat;
            let mut v = DVector::zeros(n);
            for d in (0..n).rev() {
                let len = axes[d].len();
                v[d] = axes[d][rem % len];
                rem /= len;
            }
            out.push(v);
        }
        out
    }

    pub fn center(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.dim(),
            self.lower.iter().zip(&self.upper).map(|(l, u)| 0.5 * (l + u)),
        )
    }

    pub fn half_widths(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.dim(),
            self.lower.iter().zip(&self.upper).map(|(l, u)| 0.5 * (u - l)),
        )
    }
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.5 * (lo + hi)],
        _ => (0..n)
            .map(|i| {
                if i == n - 1 {
                    hi
                } else {
                    lo + (hi - lo) * i as f64 / (n - 1) as f64
                }
            })
            .collect(),
    }
}

/// A discrete control-affine plant parameterized by the interval `τ`.
pub trait SystemModel: Send + Sync + std::fmt::Debug {
    fn name(&self) -> &str;
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;

    /// `f_τ(x)`.
    fn drift(&self, x: &State, tau: f64) -> Result<State>;

    /// `B_τ`; never depends on the state.
    fn input_matrix(&self, tau: f64) -> DMatrix<f64>;

    /// `∂f_τ/∂x`. Defaults to central differences of the step map.
    fn state_jacobian(&self, x: &State, u: &Input, tau: f64) -> Result<DMatrix<f64>> {
        finite_difference_jacobian(self, x, u, tau)
    }

    fn state_box(&self) -> &BoxBounds;
    fn input_box(&self) -> &BoxBounds;

    /// Closed-form equilibrium input, when the model knows one. Used as the
    /// Newton starting point in [`steady_state_input`].
    fn steady_input_hint(&self, _x_star: &State) -> Option<Input> {
        None
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidTimescale(tau))
    }
}

fn check_dims<M: SystemModel + ?Sized>(model: &M, x: &State, u: &Input) -> Result<()> {
    if x.len() != model.state_dim() || u.len() != model.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "{} expects state {} / input {}, got {} / {}",
            model.name(),
            model.state_dim(),
            model.input_dim(),
            x.len(),
            u.len()
        )));
    }
    Ok(())
}

/// One step of the model: `f_τ(x) + B_τ u`.
pub fn step<M: SystemModel + ?Sized>(model: &M, x: &State, u: &Input, tau: f64) -> Result<State> {
    check_tau(tau)?;
    check_dims(model, x, u)?;
    if x.iter().chain(u.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NanGuard(format!("state {x:?}, input {u:?}")));
    }
    let next = model.drift(x, tau)? + model.input_matrix(tau) * u;
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::NanGuard(format!("step from {x:?} produced {next:?}")));
    }
    Ok(next)
}

/// `(A, B)` of the differential dynamics at `(x, u, τ)`.
pub fn jacobians<M: SystemModel + ?Sized>(
    model: &M,
    x: &State,
    u: &Input,
    tau: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_tau(tau)?;
    check_dims(model, x, u)?;
    Ok((model.state_jacobian(x, u, tau)?, model.input_matrix(tau)))
}

/// Central-difference state Jacobian of the full step map.
pub fn finite_difference_jacobian<M: SystemModel + ?Sized>(
    model: &M,
    x: &State,
    u: &Input,
    tau: f64,
) -> Result<DMatrix<f64>> {
    let n = model.state_dim();
    let mut jac = DMatrix::zeros(n, n);
    for j in 0..n {
        let h = 1e-6 * x[j].abs().max(1.0);
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += h;
        xm[j] -= h;
        let col = (step(model, &xp, u, tau)? - step(model, &xm, u, tau)?) / (2.0 * h);
        jac.set_column(j, &col);
    }
    Ok(jac)
}

/// Absolute fixed-point residual accepted for a reference pair.
pub const FIXED_POINT_TOL: f64 = 1e-9;

/// Input `u*` making `x*` a fixed point at interval `tau`.
///
/// Damped Gauss–Newton on `step(x*, u, τ) − x*`; for a control-affine model
/// the first full step already solves the least-squares problem, the loop
/// only matters for ill-conditioned `B_τ`.
pub fn steady_state_input<M: SystemModel + ?Sized>(
    model: &M,
    x_star: &State,
    tau: f64,
) -> Result<Input> {
    check_tau(tau)?;
    let m = model.input_dim();
    let mut u = model
        .steady_input_hint(x_star)
        .unwrap_or_else(|| DVector::zeros(m));
    check_dims(model, x_star, &u)?;

    let b = model.input_matrix(tau);
    let b_pinv = b
        .clone()
        .pseudo_inverse(1e-12)
        .map_err(|e| Error::DimensionMismatch(e.to_string()))?;
    let residual = |u: &Input| -> Result<State> { Ok(step(model, x_star, u, tau)? - x_star) };

    let mut r = residual(&u)?;
    for _ in 0..50 {
        if r.amax() < 1e-13 {
            break;
        }
        let delta = -(&b_pinv * &r);
        if delta.amax() == 0.0 {
            break;
        }
        let mut alpha = 1.0;
        let mut improved = false;
        while alpha > 1e-8 {
            let trial = &u + &delta * alpha;
            let rt = residual(&trial)?;
            if rt.norm() < r.norm() {
                u = trial;
                r = rt;
                improved = true;
                break;
            }
            alpha *= 0.5;
        }
        if !improved {
            break;
        }
    }

    let res = r.amax();
    if res >= FIXED_POINT_TOL {
        return Err(Error::NonEquilibrium {
            x_star: x_star.iter().copied().collect(),
            residual: res,
        });
    }
    if !model.input_box().contains_tol(&u, 1e-12) {
        return Err(Error::InfeasibleReference {
            x_star: x_star.iter().copied().collect(),
            input: u.iter().copied().collect(),
        });
    }
    Ok(u)
}
