//! Contraction-constrained MPC over a non-uniform multi-timescale horizon.
//!
//! The decision vector is the stitched input sequence; predicted states are
//! eliminated by shooting through each segment's model, and every prediction
//! node carries a contraction residual under that segment's certificate.

mod schedule;
mod solver;

use std::fmt;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::contraction::ContractionCertificate;
use crate::error::{Error, Result};
use crate::model::{step, BoxBounds, Input, ReferencePlan, State, SystemModel};
use crate::par::Execution;
use crate::riemann::{
    constraint_residual, feedback_control, residual_from_successors, GeodesicOptions,
};

pub use schedule::{build_schedule, Segment, TimescaleSchedule};

const BOX_TOL: f64 = 1e-9;

/// Stage cost `ℓ(x, u)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StageCost {
    /// `‖u‖²`
    InputEnergy,
    /// `q ‖x − x*‖² + r ‖u − u*‖²`
    QuadraticTracking { q: f64, r: f64 },
}

impl StageCost {
    pub fn eval(&self, x: &State, u: &Input, x_star: &State, u_star: &Input) -> f64 {
        match *self {
            StageCost::InputEnergy => u.norm_squared(),
            StageCost::QuadraticTracking { q, r } => {
                q * (x - x_star).norm_squared() + r * (u - u_star).norm_squared()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    /// Residuals up to this value count as satisfied.
    pub feasibility_tol: f64,
    pub penalty_init: f64,
    pub penalty_growth: f64,
    pub outer_rounds: usize,
    pub inner_iters: u64,
    /// Central-difference step on the input scale.
    pub fd_step: f64,
    pub grad_tol: f64,
    pub geodesic_segments: usize,
    pub geodesic_iters: usize,
    pub warm_start: bool,
    pub fallback_seed: bool,
    pub reference_seed: bool,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            feasibility_tol: 1e-6,
            penalty_init: 100.0,
            penalty_growth: 10.0,
            outer_rounds: 5,
            inner_iters: 100,
            fd_step: 1e-6,
            grad_tol: 1e-9,
            geodesic_segments: crate::riemann::DEFAULT_SEGMENTS,
            geodesic_iters: 200,
            warm_start: true,
            fallback_seed: true,
            reference_seed: true,
            execution: Execution::Sequential,
        }
    }
}

impl SolverOptions {
    pub fn geodesic(&self) -> GeodesicOptions {
        GeodesicOptions {
            segments: self.geodesic_segments,
            max_iters: self.geodesic_iters,
            relaxed: true,
            ..GeodesicOptions::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SolveStatus {
    Optimal,
    MaxIterations,
    InfeasibleFallback,
    /// Least-violating input applied after every candidate failed.
    Infeasible,
}

impl SolveStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::MaxIterations => "max_iterations",
            SolveStatus::InfeasibleFallback => "infeasible_fallback",
            SolveStatus::Infeasible => "infeasible",
        }
    }
}

impl fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Reference active at one prediction node.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceNode {
    pub time: f64,
    pub x_star: State,
    pub u_star: Input,
}

#[derive(Debug, Clone)]
pub(crate) struct NodeRef {
    node: ReferenceNode,
    /// `x*` pushed one step through the node's model.
    next_star: State,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// `N + 1` states, clamped to 𝒳.
    pub states: Vec<State>,
    /// Some predicted state left 𝒳 before clamping.
    pub escaped: bool,
    /// Largest box violation before clamping.
    pub violation: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct Evaluation {
    states: Vec<State>,
    residuals: Vec<f64>,
    cost: f64,
    state_violation: f64,
    constrained: bool,
}

impl Evaluation {
    fn worst_residual(&self) -> f64 {
        self.residuals.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    fn is_feasible(&self, tol: f64) -> bool {
        self.state_violation <= BOX_TOL && (!self.constrained || self.worst_residual() <= tol)
    }

    fn violation(&self, tol: f64) -> f64 {
        let r = if self.constrained {
            (self.worst_residual() - tol).max(0.0)
        } else {
            0.0
        };
        r + self.state_violation
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcSolution {
    pub inputs: Vec<Input>,
    pub states: Vec<State>,
    pub residuals: Vec<f64>,
    pub references: Vec<ReferenceNode>,
    pub cost: f64,
    pub status: SolveStatus,
    pub solve_ms: f64,
    /// Quasi-Newton iterations summed over seeds and rounds.
    pub iterations: u64,
    pub evaluations: u64,
}

impl MpcSolution {
    pub fn worst_residual(&self) -> f64 {
        self.residuals.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Why a step had no feasible candidate, with the least-violating one.
#[derive(Debug, Clone)]
pub struct FallbackDiagnostics {
    pub step: usize,
    pub state: Vec<f64>,
    pub fallback_worst_residual: f64,
    pub fallback_worst_node: usize,
    pub saturated_nodes: Vec<usize>,
    pub least_violation: MpcSolution,
}

impl fmt::Display for FallbackDiagnostics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "step {} at x = {:?}: fallback residual {:.3e} at node {}, saturated nodes {:?}; best candidate residual {:.3e}",
            self.step,
            self.state,
            self.fallback_worst_residual,
            self.fallback_worst_node,
            self.saturated_nodes,
            self.least_violation.worst_residual()
        )
    }
}

#[derive(Debug, Clone)]
pub struct RecedingStep {
    pub applied: Input,
    pub solution: MpcSolution,
    pub warm_start: Vec<Input>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AuditReport {
    pub failures: Vec<String>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Horizon, per-segment models and certificates, cost, and reference plan.
#[derive(Debug, Clone)]
pub struct MpcProblem {
    schedule: TimescaleSchedule,
    models: Vec<Arc<dyn SystemModel>>,
    certificates: Vec<Arc<ContractionCertificate>>,
    plan: ReferencePlan,
    cost: StageCost,
    options: SolverOptions,
    contraction_constraints: bool,
}

fn same_tau(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(1.0)
}

impl MpcProblem {
    /// One model and one certificate per schedule segment.
    pub fn new(
        schedule: TimescaleSchedule,
        models: Vec<Arc<dyn SystemModel>>,
        certificates: Vec<Arc<ContractionCertificate>>,
        plan: ReferencePlan,
        cost: StageCost,
        options: SolverOptions,
    ) -> Result<Self> {
        let segs = schedule.segments();
        if models.len() != segs.len() || certificates.len() != segs.len() {
            return Err(Error::Problem(format!(
                "{} segments need as many models and certificates (got {} and {})",
                segs.len(),
                models.len(),
                certificates.len()
            )));
        }
        let n = models[0].state_dim();
        let m = models[0].input_dim();
        for (i, (seg, (model, cert))) in segs.iter().zip(models.iter().zip(&certificates)).enumerate() {
            if !same_tau(cert.tau(), seg.tau) {
                return Err(Error::Problem(format!(
                    "segment {i} has tau {} but its certificate is for {}",
                    seg.tau,
                    cert.tau()
                )));
            }
            if model.state_dim() != n
                || model.input_dim() != m
                || cert.state_dim() != n
                || cert.input_dim() != m
            {
                return Err(Error::DimensionMismatch(format!(
                    "segment {i}: model/certificate dimensions differ"
                )));
            }
            for (j, (other_seg, other)) in segs.iter().zip(&certificates).enumerate().take(i) {
                if same_tau(other_seg.tau, seg.tau) && !Arc::ptr_eq(other, cert) && **other != **cert {
                    return Err(Error::Problem(format!(
                        "segments {j} and {i} share tau {} but use different certificates",
                        seg.tau
                    )));
                }
            }
        }
        if plan.segments()[0].x_star.len() != n {
            return Err(Error::DimensionMismatch("plan targets have the wrong dimension".into()));
        }
        Ok(Self {
            schedule,
            models,
            certificates,
            plan,
            cost,
            options,
            contraction_constraints: true,
        })
    }

    /// Shares one model across segments and picks each segment's
    /// certificate by timescale.
    pub fn with_shared_model(
        schedule: TimescaleSchedule,
        model: Arc<dyn SystemModel>,
        certificates: &[Arc<ContractionCertificate>],
        plan: ReferencePlan,
        cost: StageCost,
        options: SolverOptions,
    ) -> Result<Self> {
        let mut certs = Vec::new();
        for seg in schedule.segments() {
            let found: Vec<_> = certificates
                .iter()
                .filter(|c| same_tau(c.tau(), seg.tau))
                .collect();
            match found.as_slice() {
                [one] => certs.push(Arc::clone(one)),
                [] => {
                    return Err(Error::Problem(format!("no certificate for tau {}", seg.tau)))
                }
                _ => {
                    return Err(Error::Problem(format!(
                        "more than one certificate for tau {}",
                        seg.tau
                    )))
                }
            }
        }
        let models = vec![model; schedule.segments().len()];
        Self::new(schedule, models, certs, plan, cost, options)
    }

    pub fn with_contraction_constraints(mut self, on: bool) -> Self {
        self.contraction_constraints = on;
        self
    }

    pub fn with_options(mut self, options: SolverOptions) -> Self {
        self.options = options;
        self
    }

    pub fn schedule(&self) -> &TimescaleSchedule {
        &self.schedule
    }

    pub fn plan(&self) -> &ReferencePlan {
        &self.plan
    }

    pub fn options(&self) -> &SolverOptions {
        &self.options
    }

    pub fn cost_kind(&self) -> StageCost {
        self.cost
    }

    pub fn contraction_constraints(&self) -> bool {
        self.contraction_constraints
    }

    pub fn model(&self, segment: usize) -> &Arc<dyn SystemModel> {
        &self.models[segment]
    }

    pub fn certificate(&self, segment: usize) -> &Arc<ContractionCertificate> {
        &self.certificates[segment]
    }

    pub fn state_box(&self) -> &BoxBounds {
        self.models[0].state_box()
    }

    pub fn input_box(&self) -> &BoxBounds {
        self.models[0].input_box()
    }

    pub fn input_dim(&self) -> usize {
        self.models[0].input_dim()
    }

    /// `N · m`
    pub fn decision_dim(&self) -> usize {
        self.schedule.total_steps() * self.input_dim()
    }

    fn node_models(&self) -> Vec<(&dyn SystemModel, &ContractionCertificate, f64)> {
        self.schedule
            .step_segments()
            .into_iter()
            .map(|i| {
                (
                    self.models[i].as_ref(),
                    self.certificates[i].as_ref(),
                    self.schedule.segments()[i].tau,
                )
            })
            .collect()
    }

    pub(crate) fn flatten(&self, inputs: &[Input]) -> Vec<f64> {
        solver::flatten(inputs)
    }

    pub(crate) fn unflatten(&self, p: &[f64]) -> Vec<Input> {
        solver::unflatten(p, self.input_dim())
    }

    pub(crate) fn clamp_inputs(&self, inputs: &[Input]) -> Vec<Input> {
        inputs.iter().map(|u| self.input_box().clamp(u)).collect()
    }

    /// References at the `N + 1` node times from step `k`; the final target is
    /// held beyond the end of the plan.
    pub fn reference_prediction(&self, k: usize) -> Result<Vec<ReferenceNode>> {
        let td = self.schedule.tau_delta();
        let t0 = self.plan.start() + k as f64 * td;
        self.schedule
            .node_offsets()
            .into_iter()
            .map(|off| {
                let time = t0 + off as f64 * td;
                let (x_star, u_star) = self.plan.reference_held(time)?;
                Ok(ReferenceNode {
                    time,
                    x_star: x_star.clone(),
                    u_star: u_star.clone(),
                })
            })
            .collect()
    }

    fn node_refs(&self, k: usize) -> Result<Vec<NodeRef>> {
        let nodes = self.reference_prediction(k)?;
        let models = self.node_models();
        nodes
            .into_iter()
            .enumerate()
            .map(|(j, node)| {
                let next_star = match models.get(j) {
                    Some((model, _, tau)) => step(*model, &node.x_star, &node.u_star, *tau)?,
                    None => node.x_star.clone(),
                };
                Ok(NodeRef { node, next_star })
            })
            .collect()
    }

    fn check_inputs(&self, inputs: &[Input]) -> Result<()> {
        let n = self.schedule.total_steps();
        if inputs.len() != n || inputs.iter().any(|u| u.len() != self.input_dim()) {
            return Err(Error::DimensionMismatch(format!(
                "expected {n} inputs of dimension {}",
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Stitched prediction: each segment starts where the previous one ended.
    pub fn predict(&self, x_k: &State, inputs: &[Input]) -> Result<Prediction> {
        self.check_inputs(inputs)?;
        let bx = self.state_box();
        let mut states = Vec::with_capacity(inputs.len() + 1);
        let mut violation: f64 = 0.0;
        states.push(x_k.clone());
        for ((model, _, tau), u) in self.node_models().into_iter().zip(inputs) {
            let next = step(model, states.last().expect("non-empty"), u, tau)?;
            let v = bx.violation(&next);
            violation = violation.max(v);
            states.push(if v > 0.0 { bx.clamp(&next) } else { next });
        }
        Ok(Prediction {
            states,
            escaped: violation > 0.0,
            violation,
        })
    }

    pub(crate) fn evaluate(&self, x_k: &State, refs: &[NodeRef], inputs: &[Input]) -> Result<Evaluation> {
        let pred = self.predict(x_k, inputs)?;
        let geo = self.options.geodesic();
        let mut residuals = Vec::with_capacity(inputs.len());
        let mut cost = 0.0;
        for (j, ((_, cert, _), u)) in self.node_models().into_iter().zip(inputs).enumerate() {
            let r = &refs[j];
            cost += self.cost.eval(&pred.states[j], u, &r.node.x_star, &r.node.u_star);
            residuals.push(residual_from_successors(
                cert,
                &pred.states[j],
                &r.node.x_star,
                &pred.states[j + 1],
                &r.next_star,
                &geo,
            )?);
        }
        Ok(Evaluation {
            states: pred.states,
            residuals,
            cost,
            state_violation: pred.violation,
            constrained: self.contraction_constraints,
        })
    }

    /// Integrated feedback applied at every node along its own prediction.
    pub fn fallback_sequence(&self, x_k: &State, k: usize) -> Result<(Vec<Input>, Vec<bool>)> {
        let refs = self.node_refs(k)?;
        self.fallback_from_refs(x_k, &refs)
    }

    fn fallback_from_refs(&self, x_k: &State, refs: &[NodeRef]) -> Result<(Vec<Input>, Vec<bool>)> {
        let geo = self.options.geodesic();
        let mut x = x_k.clone();
        let mut inputs = Vec::new();
        let mut saturated = Vec::new();
        for (j, (model, cert, tau)) in self.node_models().into_iter().enumerate() {
            let r = &refs[j].node;
            let fb = feedback_control(cert, model, &x, &r.x_star, &r.u_star, &geo)?;
            let next = step(model, &x, &fb.input, tau)?;
            x = self.state_box().clamp(&next);
            inputs.push(fb.input);
            saturated.push(fb.saturated);
        }
        Ok((inputs, saturated))
    }

    #[allow(clippy::too_many_arguments)]
    fn solution_from(
        &self,
        x_k: &State,
        refs: &[NodeRef],
        inputs: Vec<Input>,
        status: SolveStatus,
        started: Instant,
        iterations: u64,
        evaluations: u64,
    ) -> Result<MpcSolution> {
        let eval = self.evaluate(x_k, refs, &inputs)?;
        Ok(MpcSolution {
            inputs,
            states: eval.states,
            residuals: eval.residuals,
            references: refs.iter().map(|r| r.node.clone()).collect(),
            cost: eval.cost,
            status,
            solve_ms: started.elapsed().as_secs_f64() * 1e3,
            iterations,
            evaluations,
        })
    }

    /// Minimizes the stage-cost sum subject to the stitched dynamics, boxes
    /// and per-node contraction residuals.
    pub fn solve(&self, x_k: &State, k: usize, warm: Option<&[Input]>) -> Result<MpcSolution> {
        let started = Instant::now();
        if x_k.len() != self.models[0].state_dim() || x_k.iter().any(|v| !v.is_finite()) {
            return Err(Error::DimensionMismatch("measured state has the wrong dimension".into()));
        }
        if !self.state_box().contains_tol(x_k, BOX_TOL) {
            return Err(Error::Problem(format!(
                "measured state {:?} is outside the state box",
                x_k.as_slice()
            )));
        }
        let refs = self.node_refs(k)?;
        let (fallback, saturated) = self.fallback_from_refs(x_k, &refs)?;

        let mut seeds: Vec<Vec<Input>> = Vec::new();
        if self.options.warm_start {
            if let Some(w) = warm.filter(|w| self.check_inputs(w).is_ok()) {
                seeds.push(self.clamp_inputs(w));
            }
        }
        if self.options.fallback_seed {
            seeds.push(fallback.clone());
        }
        if self.options.reference_seed {
            seeds.push(refs[..refs.len() - 1].iter().map(|r| r.node.u_star.clone()).collect());
        }
        if seeds.is_empty() {
            seeds.push(fallback.clone());
        }

        let outcomes = self
            .options
            .execution
            .map(&seeds, |s| solver::run_seed(self, x_k, &refs, s));
        let iterations = outcomes.iter().map(|o| o.iterations).sum();
        let evaluations = outcomes.iter().map(|o| o.evaluations).sum();

        let best = outcomes
            .iter()
            .filter_map(|o| o.feasible.as_ref().map(|c| (c, o.hit_budget)))
            .fold(None::<(&solver::Candidate, bool)>, |acc, (c, hit)| match acc {
                Some((b, _)) if b.cost <= c.cost => acc,
                _ => Some((c, hit)),
            });
        if let Some((cand, hit_budget)) = best {
            let status = if hit_budget {
                SolveStatus::MaxIterations
            } else {
                SolveStatus::Optimal
            };
            return self.solution_from(
                x_k,
                &refs,
                cand.inputs.clone(),
                status,
                started,
                iterations,
                evaluations,
            );
        }

        let tol = self.options.feasibility_tol;
        let fb_eval = self.evaluate(x_k, &refs, &fallback)?;
        if fb_eval.is_feasible(tol) {
            return self.solution_from(
                x_k,
                &refs,
                fallback,
                SolveStatus::InfeasibleFallback,
                started,
                iterations,
                evaluations,
            );
        }

        let least = outcomes
            .iter()
            .filter_map(|o| o.least.as_ref())
            .fold(None::<&solver::Candidate>, |acc, c| match acc {
                Some(b) if (b.violation, b.cost) <= (c.violation, c.cost) => acc,
                _ => Some(c),
            })
            .map(|c| c.inputs.clone())
            .unwrap_or_else(|| fallback.clone());
        let least_violation = self.solution_from(
            x_k,
            &refs,
            least,
            SolveStatus::Infeasible,
            started,
            iterations,
            evaluations,
        )?;
        let (worst_node, worst) = fb_eval
            .residuals
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, r)| if r > acc.1 { (i, r) } else { acc });
        Err(Error::FallbackInfeasible(Box::new(FallbackDiagnostics {
            step: k,
            state: x_k.iter().copied().collect(),
            fallback_worst_residual: worst,
            fallback_worst_node: worst_node,
            saturated_nodes: saturated
                .iter()
                .enumerate()
                .filter_map(|(i, s)| s.then_some(i))
                .collect(),
            least_violation,
        })))
    }

    /// Warm start for step `k + 1`: the fine segment shifts by one step and
    /// its tail is padded with the reference input; coarse entries carry over.
    pub fn shifted_warm_start(&self, solution: &MpcSolution, k: usize) -> Result<Vec<Input>> {
        let fine = self.schedule.fine_steps();
        let next_refs = self.reference_prediction(k + 1)?;
        let mut out = Vec::with_capacity(solution.inputs.len());
        out.extend(solution.inputs[1..fine].iter().cloned());
        out.push(next_refs[fine - 1].u_star.clone());
        out.extend(solution.inputs[fine..].iter().cloned());
        Ok(out)
    }

    /// Solves at `k` and returns the first input for the next sampling
    /// interval.
    pub fn receding_step(&self, x_k: &State, k: usize, warm: Option<&[Input]>) -> Result<RecedingStep> {
        let solution = self.solve(x_k, k, warm)?;
        self.receding_from_solution(solution, k)
    }

    /// Applied input and shifted warm start of an existing solution.
    pub fn receding_from_solution(&self, solution: MpcSolution, k: usize) -> Result<RecedingStep> {
        let warm_start = self.shifted_warm_start(&solution, k)?;
        Ok(RecedingStep {
            applied: solution.inputs[0].clone(),
            solution,
            warm_start,
        })
    }

    /// Re-derives the prediction, boxes and residuals of a solution from
    /// scratch, using the plain step map and the residual definition.
    pub fn audit(&self, x_k: &State, k: usize, solution: &MpcSolution) -> AuditReport {
        let mut failures = Vec::new();
        let n = self.schedule.total_steps();
        if solution.inputs.len() != n || solution.states.len() != n + 1 || solution.residuals.len() != n {
            failures.push(format!(
                "lengths {}/{}/{} do not match N = {n}",
                solution.inputs.len(),
                solution.states.len(),
                solution.residuals.len()
            ));
            return AuditReport { failures };
        }
        if solution.states[0] != *x_k {
            failures.push("first predicted state is not the measurement".into());
        }
        let refs = match self.reference_prediction(k) {
            Ok(r) => r,
            Err(e) => {
                failures.push(format!("reference lookup failed: {e}"));
                return AuditReport { failures };
            }
        };
        let geo = self.options.geodesic();
        let tol = self.options.feasibility_tol;
        let mut x = x_k.clone();
        let taus = self.schedule.step_taus();
        let segs = self.schedule.step_segments();
        for j in 0..n {
            let model = self.models[segs[j]].as_ref();
            let cert = self.certificates[segs[j]].as_ref();
            let u = &solution.inputs[j];
            if !self.input_box().contains(u) {
                failures.push(format!("input {j} {:?} outside the input box", u.as_slice()));
            }
            let next = match step(model, &x, u, taus[j]) {
                Ok(v) => v,
                Err(e) => {
                    failures.push(format!("step {j} failed: {e}"));
                    return AuditReport { failures };
                }
            };
            if !self.state_box().contains_tol(&next, BOX_TOL) {
                failures.push(format!("state {} {:?} outside the state box", j + 1, next.as_slice()));
            }
            if (&next - &solution.states[j + 1]).amax() > 1e-12 {
                failures.push(format!("state {} does not follow from the stitched dynamics", j + 1));
            }
            match constraint_residual(cert, model, &x, &refs[j].x_star, u, &refs[j].u_star, &geo) {
                Ok(r) => {
                    if self.contraction_constraints && r > tol {
                        failures.push(format!("residual {j} = {r:e} exceeds {tol:e}"));
                    }
                    if (r - solution.residuals[j]).abs() > 1e-9 {
                        failures.push(format!(
                            "residual {j} reported {:e}, recomputed {r:e}",
                            solution.residuals[j]
                        ));
                    }
                }
                Err(e) => failures.push(format!("residual {j} failed: {e}")),
            }
            x = next;
        }
        AuditReport { failures }
    }
}
