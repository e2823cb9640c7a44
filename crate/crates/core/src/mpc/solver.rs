//! Single-shooting augmented-Lagrangian solve with a quasi-Newton inner loop.

use std::cell::RefCell;

use argmin::core::{CostFunction, Executor, Gradient, State as _, TerminationReason};
use argmin::solver::linesearch::MoreThuenteLineSearch;
use argmin::solver::quasinewton::BFGS;
use nalgebra::DVector;

use super::{Evaluation, MpcProblem, NodeRef};
use crate::model::{Input, State};

const FAILED_MERIT: f64 = 1e12;

#[derive(Debug, Clone)]
pub(crate) struct Candidate {
    pub inputs: Vec<Input>,
    pub cost: f64,
    pub violation: f64,
}

#[derive(Debug, Default)]
struct Tracker {
    feasible: Option<Candidate>,
    least: Option<Candidate>,
    best_merit: Option<(f64, Vec<f64>)>,
    evaluations: u64,
}

impl Tracker {
    fn record(&mut self, inputs: &[Input], eval: &Evaluation, tol: f64) {
        self.evaluations += 1;
        let cand = || Candidate {
            inputs: inputs.to_vec(),
            cost: eval.cost,
            violation: eval.violation(tol),
        };
        if eval.is_feasible(tol)
            && self.feasible.as_ref().is_none_or(|c| eval.cost < c.cost) {
                self.feasible = Some(cand());
            }
        let v = eval.violation(tol);
        if self
            .least
            .as_ref()
            .is_none_or(|c| v < c.violation || (v == c.violation && eval.cost < c.cost))
        {
            self.least = Some(cand());
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct SeedOutcome {
    pub feasible: Option<Candidate>,
    pub least: Option<Candidate>,
    pub hit_budget: bool,
    pub iterations: u64,
    pub evaluations: u64,
}

struct Merit<'a> {
    problem: &'a MpcProblem,
    x_k: &'a State,
    refs: &'a [NodeRef],
    lambda: &'a [f64],
    rho: f64,
    tighten: f64,
    tracker: &'a RefCell<Tracker>,
}

impl Merit<'_> {
    fn value(&self, p: &[f64]) -> f64 {
        let raw = self.problem.unflatten(p);
        let inputs = self.problem.clamp_inputs(&raw);
        let Ok(eval) = self.problem.evaluate(self.x_k, self.refs, &inputs) else {
            return FAILED_MERIT;
        };
        self.tracker
            .borrow_mut()
            .record(&inputs, &eval, self.problem.options().feasibility_tol);

        let mut merit = eval.cost;
        for (r, c) in raw.iter().zip(&inputs) {
            merit += self.rho * (r - c).norm_squared();
        }
        merit += self.rho * eval.state_violation.powi(2);
        if self.problem.contraction_constraints() {
            for (r, lam) in eval.residuals.iter().zip(self.lambda) {
                let g = r + self.tighten;
                let shifted = (lam + self.rho * g).max(0.0);
                merit += (shifted * shifted - lam * lam) / (2.0 * self.rho);
            }
        }
        if !merit.is_finite() {
            return FAILED_MERIT;
        }
        let mut t = self.tracker.borrow_mut();
        if t.best_merit.as_ref().is_none_or(|(m, _)| merit < *m) {
            t.best_merit = Some((merit, p.to_vec()));
        }
        merit
    }
}

impl CostFunction for Merit<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Self::Param) -> Result<f64, argmin::core::Error> {
        Ok(self.value(p))
    }
}

impl Gradient for Merit<'_> {
    type Param = Vec<f64>;
    type Gradient = Vec<f64>;

    fn gradient(&self, p: &Self::Param) -> Result<Vec<f64>, argmin::core::Error> {
        let h0 = self.problem.options().fd_step;
        let mut g = vec![0.0; p.len()];
        let mut q = p.clone();
        for i in 0..p.len() {
            let h = h0 * p[i].abs().max(1.0);
            q[i] = p[i] + h;
            let fp = self.value(&q);
            q[i] = p[i] - h;
            let fm = self.value(&q);
            q[i] = p[i];
            g[i] = (fp - fm) / (2.0 * h);
        }
        Ok(g)
    }
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

/// Runs the penalty rounds from one seed.
pub(crate) fn run_seed(
    problem: &MpcProblem,
    x_k: &State,
    refs: &[NodeRef],
    seed: &[Input],
) -> SeedOutcome {
    let opts = problem.options();
    let tracker = RefCell::new(Tracker::default());
    let tighten = 0.1 * opts.feasibility_tol;
    let mut lambda = vec![0.0; refs.len() - 1];
    let mut rho = opts.penalty_init;
    let mut p = problem.flatten(seed);
    let mut hit_budget = false;
    let mut iterations = 0;
    let mut previous_cost = f64::INFINITY;

    for _ in 0..opts.outer_rounds {
        let merit = Merit {
            problem,
            x_k,
            refs,
            lambda: &lambda,
            rho,
            tighten,
            tracker: &tracker,
        };
        merit.value(&p);
        let solver = BFGS::new(MoreThuenteLineSearch::new())
            .with_tolerance_grad(opts.grad_tol)
            .expect("non-negative tolerance")
            .with_tolerance_cost(1e-14)
            .expect("non-negative tolerance");
        let n = p.len();
        let start = p.clone();
        let run = Executor::new(merit, solver)
            .configure(|s| s.param(start).inv_hessian(identity(n)).max_iters(opts.inner_iters))
            .timer(false)
            .run();
        match run {
            Ok(res) => {
                let state = res.state();
                iterations += state.get_iter();
                hit_budget = matches!(
                    state.get_termination_reason(),
                    Some(TerminationReason::MaxItersReached)
                );
                if let Some(best) = state.get_best_param() {
                    p = best.clone();
                }
            }
            Err(_) => {
                hit_budget = false;
                if let Some((_, best)) = tracker.borrow().best_merit.clone() {
                    p = best;
                }
            }
        }
        tracker.borrow_mut().best_merit = None;

        let inputs = problem.clamp_inputs(&problem.unflatten(&p));
        let Ok(eval) = problem.evaluate(x_k, refs, &inputs) else {
            break;
        };
        tracker
            .borrow_mut()
            .record(&inputs, &eval, opts.feasibility_tol);
        if problem.contraction_constraints() {
            for (lam, r) in lambda.iter_mut().zip(&eval.residuals) {
                *lam = (*lam + rho * (r + tighten)).max(0.0);
            }
        }
        let feasible = eval.is_feasible(opts.feasibility_tol);
        if feasible && (previous_cost - eval.cost).abs() <= 1e-9 * eval.cost.abs().max(1.0) {
            break;
        }
        previous_cost = eval.cost;
        rho *= opts.penalty_growth;
        // restart from the box-projected point so the penalty does not blow up
        p = problem.flatten(&inputs);
    }

    let t = tracker.into_inner();
    SeedOutcome {
        feasible: t.feasible,
        least: t.least,
        hit_budget,
        iterations,
        evaluations: t.evaluations,
    }
}

pub(crate) fn flatten(inputs: &[Input]) -> Vec<f64> {
    inputs.iter().flat_map(|u| u.iter().copied()).collect()
}

pub(crate) fn unflatten(p: &[f64], m: usize) -> Vec<Input> {
    p.chunks(m).map(DVector::from_column_slice).collect()
}
