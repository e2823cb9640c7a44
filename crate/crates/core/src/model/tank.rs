use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{BoxBounds, Input, State, SystemModel};
use crate::error::{Error, Result};

/// Levels at or below this (cm) make the Jacobian singular.
pub const LEVEL_EPS: f64 = 1e-9;

/// Physical constants of the two-tank rig (cm, s, V).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TankParameters {
    /// Cross-section of the upper tank, cm².
    pub alpha1: f64,
    /// Cross-section of the lower tank, cm².
    pub alpha2: f64,
    /// Outflow orifice areas, cm².
    pub sigma1: f64,
    pub sigma2: f64,
    /// Pump gain, cm³/(V·s).
    pub pump_gain: f64,
    /// cm/s².
    pub gravity: f64,
    /// Physical sampling period τ_Δ, s.
    pub sample_period: f64,
}

impl Default for TankParameters {
    fn default() -> Self {
        Self {
            alpha1: 155.0,
            alpha2: 15.5,
            sigma1: 0.178,
            sigma2: 0.178,
            pump_gain: 13.2,
            gravity: 980.0,
            sample_period: 1.0,
        }
    }
}

impl TankParameters {
    pub fn validate(&self) -> Result<()> {
        let named = [
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
            ("sigma1", self.sigma1),
            ("sigma2", self.sigma2),
            ("pump_gain", self.pump_gain),
            ("gravity", self.gravity),
            ("sample_period", self.sample_period),
        ];
        for (name, v) in named {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "tank parameter {name} must be strictly positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Upper tank drains into the lower tank, which drains into the reservoir;
/// the pump refills the upper tank. Euler form:
///
/// ```text
/// x1⁺ = x1 − τ σ1/α1 √(2g x1) + τ k_p/α1 u
/// x2⁺ = x2 + τ σ2/α2 √(2g x1) − τ σ2/α2 √(2g x2)
/// ```
#[derive(Debug, Clone)]
pub struct CoupledTank {
    params: TankParameters,
    state_box: BoxBounds,
    input_box: BoxBounds,
}

impl CoupledTank {
    pub fn new(params: TankParameters) -> Result<Self> {
        params.validate()?;
        Ok(Self::new_unchecked(params))
    }

    /// Skips parameter validation. Test rigs use this for e.g. plugged
    /// orifices (σ = 0).
    pub fn new_unchecked(params: TankParameters) -> Self {
        Self {
            params,
            state_box: BoxBounds::uniform(2, 0.0, 10.0),
            input_box: BoxBounds::uniform(1, 0.0, 10.0),
        }
    }

    pub fn params(&self) -> &TankParameters {
        &self.params
    }

    /// Outflow speed `√(2 g h)` with the level clamped at zero.
    fn torricelli(&self, level: f64) -> f64 {
        (2.0 * self.params.gravity * level.max(0.0)).sqrt()
    }
}

impl Default for CoupledTank {
    fn default() -> Self {
        Self::new_unchecked(TankParameters::default())
    }
}

impl SystemModel for CoupledTank {
    fn name(&self) -> &str {
        "coupled-tank"
    }

    fn state_dim(&self) -> usize {
        2
    }

    fn input_dim(&self) -> usize {
        1
    }

    fn drift(&self, x: &State, tau: f64) -> Result<State> {
        let p = &self.params;
        let q1 = self.torricelli(x[0]);
        let q2 = self.torricelli(x[1]);
        Ok(DVector::from_vec(vec![
            x[0] - tau * p.sigma1 / p.alpha1 * q1,
            x[1] + tau * p.sigma2 / p.alpha2 * (q1 - q2),
        ]))
    }

    fn input_matrix(&self, tau: f64) -> DMatrix<f64> {
        DMatrix::from_vec(2, 1, vec![tau * self.params.pump_gain / self.params.alpha1, 0.0])
    }

    fn state_jacobian(&self, x: &State, _u: &Input, tau: f64) -> Result<DMatrix<f64>> {
        for &level in x.iter() {
            if level <= LEVEL_EPS {
                return Err(Error::Singular {
                    state: x.iter().copied().collect(),
                    level,
                    eps: LEVEL_EPS,
                });
            }
        }
        let p = &self.params;
        // d/dh √(2 g h) = g / √(2 g h)
        let d1 = p.gravity / self.torricelli(x[0]);
        let d2 = p.gravity / self.torricelli(x[1]);
        let c1 = tau * p.sigma1 / p.alpha1;
        let c2 = tau * p.sigma2 / p.alpha2;
        Ok(DMatrix::from_row_slice(
            2,
            2,
            &[1.0 - c1 * d1, 0.0, c2 * d1, 1.0 - c2 * d2],
        ))
    }

    fn state_box(&self) -> &BoxBounds {
        &self.state_box
    }

    fn input_box(&self) -> &BoxBounds {
        &self.input_box
    }

    fn steady_input_hint(&self, x_star: &State) -> Option<Input> {
        let p = &self.params;
        Some(DVector::from_element(
            1,
            p.sigma1 * self.torricelli(x_star[0]) / p.pump_gain,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{finite_difference_jacobian, jacobians, step, steady_state_input};

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    /// Closed-form equilibrium input: σ1 √(2 g x1) / k_p.
    fn closed_form_u(x1: f64) -> f64 {
        0.178 * (2.0 * 980.0 * x1).sqrt() / 13.2
    }

    #[test]
    fn empty_tanks_stay_empty() {
        let t = CoupledTank::default();
        let next = step(&t, &v(&[0.0, 0.0]), &v(&[0.0]), 1.0).unwrap();
        assert_eq!(next.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn steady_input_holds_level() {
        let t = CoupledTank::default();
        let u = closed_form_u(2.5);
        assert!((u - 0.9439).abs() < 1e-4);
        let next = step(&t, &v(&[2.5, 2.5]), &v(&[0.9439]), 1.0).unwrap();
        assert!((next[0] - 2.5).abs() < 1e-3 && (next[1] - 2.5).abs() < 1e-3);
    }

    #[test]
    fn draining_matches_hand_evaluation() {
        let t = CoupledTank::default();
        let next = step(&t, &v(&[5.0, 5.0]), &v(&[0.0]), 1.0).unwrap();
        let expected_drop = 1.0 * (0.178 / 155.0) * (2.0 * 980.0 * 5.0_f64).sqrt();
        assert!((5.0 - next[0] - expected_drop).abs() < 1e-12);
        // equal levels: lower tank inflow equals outflow
        assert!((next[1] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn nonpositive_tau_rejected() {
        let t = CoupledTank::default();
        assert!(matches!(
            step(&t, &v(&[1.0, 1.0]), &v(&[0.0]), 0.0),
            Err(Error::InvalidTimescale(_))
        ));
        assert!(step(&t, &v(&[f64::NAN, 1.0]), &v(&[0.0]), 1.0).is_err());
    }

    #[test]
    fn input_matrix_is_constant_pump_column() {
        let t = CoupledTank::default();
        let (_, b) = jacobians(&t, &v(&[2.5, 2.5]), &v(&[0.0]), 1.0).unwrap();
        assert!((b[(0, 0)] - 13.2 / 155.0).abs() < 1e-15);
        assert!((b[(0, 0)] - 0.08516).abs() < 1e-5);
        assert_eq!(b[(1, 0)], 0.0);
    }

    #[test]
    fn analytic_jacobian_matches_finite_differences() {
        let t = CoupledTank::default();
        for tau in [1.0, 10.0] {
            let x = v(&[5.0, 5.0]);
            let u = v(&[1.0]);
            let a = t.state_jacobian(&x, &u, tau).unwrap();
            let fd = finite_difference_jacobian(&t, &x, &u, tau).unwrap();
            let rel = (&a - &fd).amax() / a.amax();
            assert!(rel < 1e-5, "tau {tau}: rel {rel}");
        }
    }

    #[test]
    fn jacobian_singular_at_empty_tank() {
        let t = CoupledTank::default();
        let r = t.state_jacobian(&v(&[0.0, 3.0]), &v(&[0.0]), 1.0);
        assert!(matches!(r, Err(Error::Singular { .. })));
    }

    #[test]
    fn steady_state_inputs() {
        let t = CoupledTank::default();
        let u = steady_state_input(&t, &v(&[2.5, 2.5]), 1.0).unwrap();
        assert!((u[0] - closed_form_u(2.5)).abs() < 1e-12);
        assert!((u[0] - 0.9439).abs() < 1e-4);
        let u = steady_state_input(&t, &v(&[5.0, 5.0]), 1.0).unwrap();
        assert!((u[0] - 1.3349).abs() < 1e-4);
        let u = steady_state_input(&t, &v(&[0.0, 0.0]), 1.0).unwrap();
        assert_eq!(u[0], 0.0);
    }

    #[test]
    fn unequal_levels_are_not_equilibria() {
        let t = CoupledTank::default();
        let r = steady_state_input(&t, &v(&[2.5, 5.0]), 1.0);
        assert!(matches!(r, Err(Error::NonEquilibrium { .. })));
    }

    #[test]
    fn pump_saturation_makes_high_target_infeasible() {
        // u* = σ1 √(2 g h)/k_p exceeds 10 V once h > ~ (10·13.2/0.178)²/(2g)
        let t = CoupledTank::default();
        let h = (10.5 * 13.2 / 0.178_f64).powi(2) / (2.0 * 980.0);
        let r = steady_state_input(&t, &v(&[h, h]), 1.0);
        assert!(matches!(r, Err(Error::InfeasibleReference { .. })));
    }

    #[test]
    fn zero_or_negative_parameters_rejected() {
        let p = TankParameters {
            sigma1: 0.0,
            ..TankParameters::default()
        };
        assert!(CoupledTank::new(p).is_err());
        assert!(CoupledTank::new(TankParameters::default()).is_ok());
    }
}
