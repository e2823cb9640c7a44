use crate::error::{Error, Result};

const MULTIPLE_TOL: f64 = 1e-9;

/// One horizon segment: `steps` predictions spaced `tau` apart.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub tau: f64,
    pub steps: usize,
    /// `tau / tau_delta`, exact.
    pub ratio: usize,
}

/// Non-uniform prediction horizon, fine segments first.
#[derive(Debug, Clone, PartialEq)]
pub struct TimescaleSchedule {
    tau_delta: f64,
    segments: Vec<Segment>,
}

/// Validates `(τᵢ, Nᵢ)` pairs against the sampling period and derives the
/// exact step totals.
pub fn build_schedule(tau_delta: f64, segments: &[(f64, usize)]) -> Result<TimescaleSchedule> {
    if !(tau_delta > 0.0 && tau_delta.is_finite()) {
        return Err(Error::InvalidTimescale(tau_delta));
    }
    if segments.is_empty() {
        return Err(Error::Schedule("schedule needs at least one segment".into()));
    }
    let mut out = Vec::with_capacity(segments.len());
    for (i, &(tau, steps)) in segments.iter().enumerate() {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidTimescale(tau));
        }
        if steps == 0 {
            return Err(Error::Schedule(format!("segment {i} has no steps")));
        }
        let ratio = (tau / tau_delta).round();
        if ratio < 1.0 || (ratio * tau_delta - tau).abs() > MULTIPLE_TOL * tau.max(1.0) {
            return Err(Error::Schedule(format!(
                "segment {i}: tau {tau} is not a positive integer multiple of {tau_delta}"
            )));
        }
        let seg = Segment {
            tau,
            steps,
            ratio: ratio as usize,
        };
        if let Some(prev) = out.last() {
            let prev: &Segment = prev;
            if seg.ratio < prev.ratio {
                return Err(Error::Schedule(format!(
                    "segment {i}: tau {tau} is shorter than the preceding {}",
                    prev.tau
                )));
            }
        }
        out.push(seg);
    }
    Ok(TimescaleSchedule {
        tau_delta,
        segments: out,
    })
}

impl TimescaleSchedule {
    pub fn tau_delta(&self) -> f64 {
        self.tau_delta
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    /// `N = Σ Nᵢ`
    pub fn total_steps(&self) -> usize {
        self.segments.iter().map(|s| s.steps).sum()
    }

    /// `k̂ = Σ Nᵢ τᵢ / τ_Δ`
    pub fn k_hat(&self) -> usize {
        self.segments.iter().map(|s| s.steps * s.ratio).sum()
    }

    /// Segment index of every prediction step.
    pub fn step_segments(&self) -> Vec<usize> {
        self.segments
            .iter()
            .enumerate()
            .flat_map(|(i, s)| std::iter::repeat_n(i, s.steps))
            .collect()
    }

    pub fn step_taus(&self) -> Vec<f64> {
        self.step_segments()
            .into_iter()
            .map(|i| self.segments[i].tau)
            .collect()
    }

    /// Elapsed sampling periods at each of the `N + 1` prediction nodes.
    pub fn node_offsets(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.total_steps() + 1);
        let mut t = 0;
        out.push(0);
        for s in &self.segments {
            for _ in 0..s.steps {
                t += s.ratio;
                out.push(t);
            }
        }
        out
    }

    /// Distinct timescales in segment order.
    pub fn distinct_taus(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for s in &self.segments {
            if !out.iter().any(|t| (t - s.tau).abs() <= MULTIPLE_TOL * s.tau.max(1.0)) {
                out.push(s.tau);
            }
        }
        out
    }

    /// Number of steps in the first (finest) segment.
    pub fn fine_steps(&self) -> usize {
        self.segments[0].steps
    }
}
