//! Closed-loop simulation at the sampling period and the per-step timing
//! benchmark.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::contraction::ContractionCertificate;
use crate::error::{Error, Result};
use crate::model::{step, Input, State, SystemModel};
use crate::mpc::{MpcProblem, SolveStatus};
use crate::par::Execution;
use crate::riemann::constraint_residual;

pub const TRACE_HEADER: &str = "t,x1,x2,u,x1_ref,x2_ref,u_ref,residual,solve_ms,status";
pub const BENCH_HEADER: &str = "label,k_hat,n_decisions,median_ms,mean_ms,rms_error";

/// What to do when a step has no feasible candidate and the fallback
/// controller violates the constraints too.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InfeasiblePolicy {
    /// Stop and keep the partial trace.
    #[default]
    Abort,
    /// Apply the least-violating candidate and mark the step `infeasible`.
    LeastViolation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOptions {
    pub horizon: f64,
    pub x0: State,
    pub on_infeasible: InfeasiblePolicy,
    /// Re-check every optimal solution with [`MpcProblem::audit`].
    pub audit: bool,
}

impl SimOptions {
    pub fn new(horizon: f64, x0: State) -> Self {
        Self {
            horizon,
            x0,
            on_infeasible: InfeasiblePolicy::Abort,
            audit: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimulationTrace {
    /// `T / τ_Δ + 1` sample times.
    pub times: Vec<f64>,
    pub states: Vec<State>,
    pub references: Vec<(State, Input)>,
    /// One entry per applied step.
    pub inputs: Vec<Input>,
    pub residuals: Vec<f64>,
    pub solve_ms: Vec<f64>,
    pub statuses: Vec<SolveStatus>,
    pub iterations: Vec<u64>,
    /// Steps whose optimal solution failed the audit, with the reasons.
    pub audit_failures: Vec<(usize, Vec<String>)>,
    pub audited: usize,
    /// Set when the run stopped early.
    pub aborted: Option<String>,
}

fn sig9(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let exp = v.abs().log10().floor() as i32;
    let decimals = 8 - exp;
    if (0..=24).contains(&decimals) {
        format!("{:.*}", decimals as usize, v)
    } else if decimals < 0 && exp < 21 {
        format!("{:.0}", v)
    } else {
        format!("{v:.8e}")
    }
}

fn columns(prefix: &str, dim: usize) -> Vec<String> {
    if dim == 1 && prefix == "u" {
        return vec!["u".into()];
    }
    (1..=dim).map(|i| format!("{prefix}{i}")).collect()
}

impl SimulationTrace {
    pub fn steps(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_complete(&self) -> bool {
        self.aborted.is_none()
    }

    /// `max |x − x*|∞` over samples with `from <= t <= to`.
    pub fn max_tracking_error(&self, from: f64, to: f64) -> f64 {
        self.times
            .iter()
            .zip(self.states.iter().zip(&self.references))
            .filter(|(t, _)| **t >= from && **t <= to)
            .map(|(_, (x, (xs, _)))| (x - xs).amax())
            .fold(0.0, f64::max)
    }

    /// RMS of `‖x − x*‖₂` over all samples.
    pub fn rms_error(&self) -> f64 {
        if self.states.is_empty() {
            return 0.0;
        }
        let sum: f64 = self
            .states
            .iter()
            .zip(&self.references)
            .map(|(x, (xs, _))| (x - xs).norm_squared())
            .sum();
        (sum / self.states.len() as f64).sqrt()
    }

    pub fn input_energy(&self) -> f64 {
        self.inputs.iter().map(|u| u.norm_squared()).sum()
    }

    pub fn header(&self) -> String {
        let n = self.states.first().map_or(2, |x| x.len());
        let m = self
            .inputs
            .first()
            .or(self.references.first().map(|r| &r.1))
            .map_or(1, |u| u.len());
        if n == 2 && m == 1 {
            return TRACE_HEADER.to_string();
        }
        let mut cols = vec!["t".to_string()];
        cols.extend(columns("x", n));
        cols.extend(columns("u", m));
        cols.extend(columns("x", n).into_iter().map(|c| format!("{c}_ref")));
        cols.extend(columns("u", m).into_iter().map(|c| format!("{c}_ref")));
        cols.extend(["residual", "solve_ms", "status"].map(String::from));
        cols.join(",")
    }

    /// One row per sample; the final state-only row leaves the step columns
    /// empty.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{}", self.header())?;
        let m = self
            .inputs
            .first()
            .or(self.references.first().map(|r| &r.1))
            .map_or(1, |u| u.len());
        for i in 0..self.states.len() {
            let mut row = vec![sig9(self.times[i])];
            row.extend(self.states[i].iter().map(|v| sig9(*v)));
            match self.inputs.get(i) {
                Some(u) => row.extend(u.iter().map(|v| sig9(*v))),
                None => row.extend(std::iter::repeat_n(String::new(), m)),
            }
            let (xs, us) = &self.references[i];
            row.extend(xs.iter().map(|v| sig9(*v)));
            row.extend(us.iter().map(|v| sig9(*v)));
            if i < self.inputs.len() {
                row.push(sig9(self.residuals[i]));
                row.push(sig9(self.solve_ms[i]));
                row.push(self.statuses[i].as_str().to_string());
            } else {
                row.extend([String::new(), String::new(), String::new()]);
            }
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Certificate whose timescale equals the sampling period, else the first
/// segment's.
pub fn sampling_certificate(controller: &MpcProblem) -> &ContractionCertificate {
    let td = controller.schedule().tau_delta();
    controller
        .schedule()
        .segments()
        .iter()
        .position(|s| (s.tau - td).abs() <= 1e-9 * td.max(1.0))
        .map_or_else(|| controller.certificate(0), |i| controller.certificate(i))
}

/// Alternates receding-horizon solves and plant steps at `τ_Δ`.
pub fn run_closed_loop(
    plant: &dyn SystemModel,
    controller: &MpcProblem,
    options: &SimOptions,
) -> Result<SimulationTrace> {
    let td = controller.schedule().tau_delta();
    let steps_f = options.horizon / td;
    if !(options.horizon >= 0.0) || (steps_f - steps_f.round()).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "horizon {} is not a non-negative multiple of {td}",
            options.horizon
        )));
    }
    let steps = steps_f.round() as usize;
    let plan = controller.plan();
    if plan.start() + options.horizon > plan.end() + 1e-9 {
        return Err(Error::Plan(format!(
            "plan ends at {} but the run needs {}",
            plan.end(),
            plan.start() + options.horizon
        )));
    }
    if !plant.state_box().contains(&options.x0) {
        return Err(Error::Config(format!(
            "initial state {:?} is outside the state box",
            options.x0.as_slice()
        )));
    }
    let cert = sampling_certificate(controller);
    let geo = controller.options().geodesic();

    let mut trace = SimulationTrace::default();
    let mut x = options.x0.clone();
    let mut warm: Option<Vec<Input>> = None;
    let reference = |k: usize| -> Result<(State, Input)> {
        let (xs, us) = plan.reference_held(plan.start() + k as f64 * td)?;
        Ok((xs.clone(), us.clone()))
    };

    for k in 0..steps {
        let (xs, us) = reference(k)?;
        trace.times.push(plan.start() + k as f64 * td);
        trace.states.push(x.clone());
        trace.references.push((xs.clone(), us.clone()));

        let outcome = match controller.solve(&x, k, warm.as_deref()) {
            Ok(sol) => {
                if options.audit && sol.status == SolveStatus::Optimal {
                    trace.audited += 1;
                    let report = controller.audit(&x, k, &sol);
                    if !report.passed() {
                        trace.audit_failures.push((k, report.failures));
                    }
                }
                sol
            }
            Err(Error::FallbackInfeasible(diag)) => match options.on_infeasible {
                InfeasiblePolicy::LeastViolation => diag.least_violation,
                InfeasiblePolicy::Abort => {
                    trace.aborted = Some(Error::FallbackInfeasible(diag).to_string());
                    return Ok(trace);
                }
            },
            Err(e) => {
                trace.aborted = Some(e.to_string());
                return Ok(trace);
            }
        };
        let solve_ms = outcome.solve_ms;
        let status = outcome.status;
        let iterations = outcome.iterations;
        let step_out = controller.receding_from_solution(outcome, k)?;
        let u = step_out.applied;
        warm = Some(step_out.warm_start);

        let residual = constraint_residual(cert, plant, &x, &xs, &u, &us, &geo)?;
        let next = step(plant, &x, &u, td)?;
        trace.inputs.push(u);
        trace.residuals.push(residual);
        trace.solve_ms.push(solve_ms);
        trace.statuses.push(status);
        trace.iterations.push(iterations);
        // overflow or a dry tank stays on the box
        x = plant.state_box().clamp(&next);
    }
    let (xs, us) = reference(steps)?;
    trace.times.push(plan.start() + steps as f64 * td);
    trace.states.push(x);
    trace.references.push((xs, us));
    Ok(trace)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkRow {
    pub label: String,
    pub k_hat: usize,
    pub n_decisions: usize,
    pub median_ms: f64,
    pub mean_ms: f64,
    pub rms_error: f64,
    pub repetitions: usize,
    /// `None` when every repetition completed.
    pub failure: Option<String>,
}

impl BenchmarkRow {
    pub fn csv_record(&self) -> [String; 6] {
        [
            self.label.clone(),
            self.k_hat.to_string(),
            self.n_decisions.to_string(),
            sig9(self.median_ms),
            sig9(self.mean_ms),
            sig9(self.rms_error),
        ]
    }
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len().is_multiple_of(2) {
        0.5 * (v[mid - 1] + v[mid])
    } else {
        v[mid]
    }
}

fn bench_variant(
    label: &str,
    controller: &MpcProblem,
    plant: &dyn SystemModel,
    options: &SimOptions,
    repetitions: usize,
) -> BenchmarkRow {
    let schedule = controller.schedule();
    let mut times = Vec::new();
    let mut rms = f64::NAN;
    let mut failure = None;
    for _ in 0..repetitions {
        match run_closed_loop(plant, controller, options) {
            Ok(trace) => {
                // the first step is a cold start
                times.extend(trace.solve_ms.iter().skip(1).copied());
                rms = trace.rms_error();
                if let Some(reason) = trace.aborted {
                    failure = Some(reason);
                    break;
                }
            }
            Err(e) => {
                failure = Some(e.to_string());
                break;
            }
        }
    }
    let mean = if times.is_empty() {
        f64::NAN
    } else {
        times.iter().sum::<f64>() / times.len() as f64
    };
    BenchmarkRow {
        label: label.to_string(),
        k_hat: schedule.k_hat(),
        n_decisions: controller.decision_dim(),
        median_ms: median(&times),
        mean_ms: mean,
        rms_error: rms,
        repetitions,
        failure,
    }
}

/// Times every variant on the same plant and scenario. Repetitions of one
/// variant run back to back on one worker; variants may run concurrently.
pub fn benchmark(
    variants: &[(String, MpcProblem)],
    plant: &dyn SystemModel,
    options: &SimOptions,
    repetitions: usize,
    execution: Execution,
) -> Result<Vec<BenchmarkRow>> {
    if repetitions < 1 {
        return Err(Error::Config("benchmark needs at least one repetition".into()));
    }
    Ok(execution.map(variants, |(label, controller)| {
        bench_variant(label, controller, plant, options, repetitions)
    }))
}

pub fn write_benchmark_csv<W: Write>(rows: &[BenchmarkRow], w: W) -> io::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(BENCH_HEADER.split(','))?;
    for r in rows {
        out.write_record(r.csv_record())?;
    }
    out.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(sig9(2.5), "2.50000000");
        assert_eq!(sig9(0.943912345678), "0.943912346");
        assert_eq!(sig9(120.0), "120.000000");
        assert_eq!(sig9(0.0), "0");
        assert_eq!(sig9(-1.5e-7), "-0.000000150000000");
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }
}
