use std::fmt;

use super::certificate::ContractionCertificate;
use super::contraction_margin_unchecked;
use crate::linalg::eigenvalues;
use crate::model::{jacobians, step, Input, State, SystemModel};
use crate::par::Execution;

const BOUND_TOL: f64 = 1e-9;

/// States × inputs at which the pointwise condition is checked.
#[derive(Debug, Clone)]
pub struct VerificationGrid {
    pub states: Vec<State>,
    pub inputs: Vec<Input>,
}

impl VerificationGrid {
    pub fn new(states: Vec<State>, inputs: Vec<Input>) -> Self {
        Self { states, inputs }
    }

    /// `state_points` per state dimension over the certificate region and
    /// `input_points` per input dimension over 𝒰.
    pub fn for_certificate<M: SystemModel + ?Sized>(
        cert: &ContractionCertificate,
        model: &M,
        state_points: usize,
        input_points: usize,
    ) -> Self {
        Self {
            states: cert.region().grid(state_points),
            inputs: model.input_box().grid(input_points),
        }
    }

    /// The doubled default grid: 41 points per state, 9 per input.
    pub fn dense<M: SystemModel + ?Sized>(cert: &ContractionCertificate, model: &M) -> Self {
        Self::for_certificate(cert, model, 41, 9)
    }

    pub fn len(&self) -> usize {
        self.states.len() * self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointMargin {
    pub state: State,
    pub input: Input,
    /// Largest eigenvalue of the contraction inequality; `+∞` when the
    /// Jacobian or metric could not be evaluated.
    pub margin: f64,
    /// The one-step image left the certified region and was clamped.
    pub clamped: bool,
}

#[derive(Debug, Clone)]
pub struct VerificationReport {
    pub points: Vec<PointMargin>,
    pub worst_margin: f64,
    pub worst_index: usize,
    /// Observed `(min, max)` metric eigenvalues on the grid.
    pub observed_bounds: (f64, f64),
    pub certified_bounds: (f64, f64),
    pub bounds_hold: bool,
    pub clamped: usize,
    pub eta: f64,
    pub passed: bool,
}

impl VerificationReport {
    pub fn worst_point(&self) -> &PointMargin {
        &self.points[self.worst_index]
    }
}

impl fmt::Display for VerificationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let w = self.worst_point();
        writeln!(
            f,
            "verification: {} ({} points, {} clamped)",
            if self.passed { "PASS" } else { "FAIL" },
            self.points.len(),
            self.clamped
        )?;
        writeln!(
            f,
            "  worst margin {:.6e} at x = {:?}, u = {:?} (required <= {:.1e})",
            self.worst_margin,
            w.state.as_slice(),
            w.input.as_slice(),
            -self.eta
        )?;
        write!(
            f,
            "  metric eigenvalues [{:.6e}, {:.6e}] within certified [{:.6e}, {:.6e}]: {}",
            self.observed_bounds.0,
            self.observed_bounds.1,
            self.certified_bounds.0,
            self.certified_bounds.1,
            self.bounds_hold
        )
    }
}

fn point_margin<M: SystemModel + ?Sized>(
    cert: &ContractionCertificate,
    model: &M,
    x: &State,
    u: &Input,
) -> (f64, bool, (f64, f64)) {
    let tau = cert.tau();
    let eval = || -> crate::error::Result<(f64, bool, (f64, f64))> {
        let (a, b) = jacobians(model, x, u, tau)?;
        let next = step(model, x, u, tau)?;
        let clamped = !cert.region().contains(&next);
        let next = cert.region().clamp(&next);
        let m = cert.metric(x)?;
        let m_plus = cert.metric(&next)?;
        let k = cert.gain(x)?;
        let e = eigenvalues(&m);
        let margin = contraction_margin_unchecked(&a, &b, &k, &m, &m_plus, cert.beta());
        Ok((margin, clamped, (e.min(), e.max())))
    };
    eval().unwrap_or((f64::INFINITY, false, (f64::NAN, f64::NAN)))
}

/// Evaluates the contraction inequality at every grid point. Failures are
/// reported, never raised.
pub fn verify<M: SystemModel + ?Sized>(
    cert: &ContractionCertificate,
    model: &M,
    grid: &VerificationGrid,
    eta: f64,
    execution: Execution,
) -> VerificationReport {
    let pairs: Vec<(State, Input)> = grid
        .states
        .iter()
        .flat_map(|x| grid.inputs.iter().map(move |u| (x.clone(), u.clone())))
        .collect();
    let evaluated = execution.map(&pairs, |(x, u)| point_margin(cert, model, x, u));

    let mut points = Vec::with_capacity(pairs.len());
    let mut worst = (f64::NEG_INFINITY, 0);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut clamped = 0;
    let mut nan_bounds = false;
    for (i, ((x, u), (margin, was_clamped, (e_lo, e_hi)))) in
        pairs.into_iter().zip(evaluated).enumerate()
    {
        if margin > worst.0 || margin.is_nan() {
            worst = (margin, i);
        }
        if e_lo.is_nan() || e_hi.is_nan() {
            nan_bounds = true;
        } else {
            lo = lo.min(e_lo);
            hi = hi.max(e_hi);
        }
        clamped += usize::from(was_clamped);
        points.push(PointMargin {
            state: x,
            input: u,
            margin,
            clamped: was_clamped,
        });
    }
    let certified = cert.metric_bounds();
    let bounds_hold = !nan_bounds
        && !points.is_empty()
        && lo >= certified.0 * (1.0 - BOUND_TOL)
        && hi <= certified.1 * (1.0 + BOUND_TOL);
    let passed = !points.is_empty() && bounds_hold && worst.0 <= -eta;
    VerificationReport {
        points,
        worst_margin: worst.0,
        worst_index: worst.1,
        observed_bounds: (lo, hi),
        certified_bounds: certified,
        bounds_hold,
        clamped,
        eta,
        passed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BoxBounds, CoupledTank};
    use nalgebra::DMatrix;

    fn tank_cert() -> ContractionCertificate {
        let m = DMatrix::from_row_slice(2, 2, &[2.1448983, 2.8972562, 2.8972562, 8.331753]);
        let k = DMatrix::from_row_slice(1, 2, &[-20.952, -23.498]);
        ContractionCertificate::from_constant_metric(1.0, 0.3, m, k, BoxBounds::uniform(2, 0.25, 10.0))
            .unwrap()
    }

    #[test]
    fn hand_certificate_passes_and_doubled_gain_fails() {
        let tank = CoupledTank::default();
        let cert = tank_cert();
        let grid = VerificationGrid::for_certificate(&cert, &tank, 21, 3);
        let report = verify(&cert, &tank, &grid, 1e-4, Execution::Sequential);
        assert!(report.passed, "{report}");
        let bad = cert.with_scaled_gain(2.0).unwrap();
        let report = verify(&bad, &tank, &grid, 1e-4, Execution::Sequential);
        assert!(!report.passed);
        assert!(report.worst_margin > 0.0);
    }

    #[test]
    fn singular_points_are_reported_as_failures() {
        let tank = CoupledTank::default();
        let cert = tank_cert();
        let grid = VerificationGrid::new(
            vec![State::from_vec(vec![0.0, 5.0])],
            vec![Input::from_vec(vec![1.0])],
        );
        let report = verify(&cert, &tank, &grid, 1e-4, Execution::Sequential);
        assert!(!report.passed);
        assert_eq!(report.worst_margin, f64::INFINITY);
    }
}
