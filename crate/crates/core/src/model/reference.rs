use super::{steady_state_input, Input, State, SystemModel};
use crate::error::{Error, Result};

/// A piecewise-constant operating target on `[start, end)`; the last segment
/// is closed on the right.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSegment {
    pub start: f64,
    pub end: f64,
    pub x_star: State,
    pub u_star: Input,
}

/// Sequence of steady operating targets with their equilibrium inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePlan {
    segments: Vec<ReferenceSegment>,
}

impl ReferencePlan {
    /// Builds the plan, solving `u*` for every target at `tau_delta`.
    pub fn new<M: SystemModel + ?Sized>(
        model: &M,
        tau_delta: f64,
        targets: &[(f64, f64, State)],
    ) -> Result<Self> {
        if targets.is_empty() {
            return Err(Error::Plan("plan needs at least one segment".into()));
        }
        let mut segments = Vec::with_capacity(targets.len());
        for (i, (start, end, x_star)) in targets.iter().enumerate() {
            if !(start < end) {
                return Err(Error::Plan(format!(
                    "segment {i} has start {start} not before end {end}"
                )));
            }
            if let Some(prev) = segments.last() {
                let prev: &ReferenceSegment = prev;
                if (prev.end - start).abs() > 1e-12 {
                    return Err(Error::Plan(format!(
                        "segment {i} starts at {start} but the previous one ends at {}",
                        prev.end
                    )));
                }
            }
            let u_star = steady_state_input(model, x_star, tau_delta)?;
            segments.push(ReferenceSegment {
                start: *start,
                end: *end,
                x_star: x_star.clone(),
                u_star,
            });
        }
        Ok(Self { segments })
    }

    /// Single target held over `[start, end]`.
    pub fn constant<M: SystemModel + ?Sized>(
        model: &M,
        tau_delta: f64,
        start: f64,
        end: f64,
        x_star: State,
    ) -> Result<Self> {
        Self::new(model, tau_delta, &[(start, end, x_star)])
    }

    pub fn segments(&self) -> &[ReferenceSegment] {
        &self.segments
    }

    pub fn start(&self) -> f64 {
        self.segments[0].start
    }

    pub fn end(&self) -> f64 {
        self.segments[self.segments.len() - 1].end
    }

    fn segment_index(&self, time: f64) -> usize {
        // later segment wins at a shared boundary
        self.segments
            .iter()
            .rposition(|s| s.start <= time)
            .unwrap_or(0)
    }

    /// Active `(x*, u*)` at `time`.
    pub fn reference_at(&self, time: f64) -> Result<(&State, &Input)> {
        if !(time >= self.start() && time <= self.end()) {
            return Err(Error::OutOfWindow {
                time,
                start: self.start(),
                end: self.end(),
            });
        }
        let s = &self.segments[self.segment_index(time)];
        Ok((&s.x_star, &s.u_star))
    }

    /// Like [`reference_at`](Self::reference_at) but holds the final target
    /// beyond the end of the plan.
    pub fn reference_held(&self, time: f64) -> Result<(&State, &Input)> {
        if time > self.end() {
            let s = self.segments.last().expect("non-empty plan");
            return Ok((&s.x_star, &s.u_star));
        }
        self.reference_at(time)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{step, CoupledTank};
    use nalgebra::DVector;

    fn three_setpoint_plan(tank: &CoupledTank) -> ReferencePlan {
        let t = |v: f64| DVector::from_vec(vec![v, v]);
        ReferencePlan::new(
            tank,
            1.0,
            &[(0.0, 40.0, t(2.5)), (40.0, 80.0, t(5.0)), (80.0, 120.0, t(7.5))],
        )
        .unwrap()
    }

    #[test]
    fn lookup_and_boundaries() {
        let tank = CoupledTank::default();
        let plan = three_setpoint_plan(&tank);
        assert_eq!(plan.reference_at(10.0).unwrap().0[0], 2.5);
        assert_eq!(plan.reference_at(40.0).unwrap().0[0], 5.0);
        assert_eq!(plan.reference_at(79.999).unwrap().0[0], 5.0);
        assert_eq!(plan.reference_at(120.0).unwrap().0[0], 7.5);
        assert!(matches!(
            plan.reference_at(120.5),
            Err(Error::OutOfWindow { .. })
        ));
        assert!(plan.reference_at(-1.0).is_err());
        assert_eq!(plan.reference_held(500.0).unwrap().0[0], 7.5);
    }

    #[test]
    fn every_pair_is_a_fixed_point_at_each_timescale() {
        let tank = CoupledTank::default();
        let plan = three_setpoint_plan(&tank);
        for seg in plan.segments() {
            for tau in [1.0, 10.0] {
                let next = step(&tank, &seg.x_star, &seg.u_star, tau).unwrap();
                assert!((next - &seg.x_star).amax() < 1e-9);
            }
        }
    }

    #[test]
    fn gaps_and_overlaps_rejected() {
        let tank = CoupledTank::default();
        let t = |v: f64| DVector::from_vec(vec![v, v]);
        assert!(ReferencePlan::new(&tank, 1.0, &[(0.0, 10.0, t(1.0)), (11.0, 20.0, t(2.0))]).is_err());
        assert!(ReferencePlan::new(&tank, 1.0, &[(0.0, 10.0, t(1.0)), (9.0, 20.0, t(2.0))]).is_err());
        assert!(ReferencePlan::new(&tank, 1.0, &[]).is_err());
    }
}
