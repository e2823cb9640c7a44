use argmin::core::{CostFunction, Executor, State as _};
use argmin::solver::neldermead::NelderMead;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::certificate::ContractionCertificate;
use super::family::{Degree, MatrixPolynomial, PolyBasis};
use super::lmi_block;
use crate::error::{Error, Result};
use crate::linalg::{eigenvalues, min_eigenvalue, symmetrize};
use crate::model::{jacobians, step, BoxBounds, Input, State, SystemModel};
use crate::par::Execution;

/// Which parameter degrees synthesis may use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DegreeChoice {
    /// Constant matrices first, quadratic entries if that fails.
    Auto,
    Fixed(Degree),
}

/// Grid LMI synthesis of `(W, L)` for one timescale.
#[derive(Debug, Clone)]
pub struct SynthesisProblem<'a> {
    pub model: &'a dyn SystemModel,
    pub tau: f64,
    pub beta: f64,
    pub degree: DegreeChoice,
    /// Sub-box of the state box that the grid covers.
    pub region: BoxBounds,
    pub state_points: usize,
    pub input_points: usize,
    pub eta: f64,
    /// Random starts in addition to the two structured ones.
    pub random_starts: usize,
    pub restarts: usize,
    pub max_iters: u64,
    pub seed: u64,
    pub execution: Execution,
}

impl<'a> SynthesisProblem<'a> {
    pub fn new(model: &'a dyn SystemModel, tau: f64, beta: f64) -> Self {
        Self {
            model,
            tau,
            beta,
            degree: DegreeChoice::Auto,
            region: model.state_box().clone(),
            state_points: 21,
            input_points: 5,
            eta: 1e-4,
            random_starts: 6,
            restarts: 4,
            max_iters: 3000,
            seed: 0,
            execution: Execution::Sequential,
        }
    }

    pub fn with_region(mut self, region: BoxBounds) -> Self {
        self.region = region;
        self
    }

    pub fn with_degree(mut self, degree: DegreeChoice) -> Self {
        self.degree = degree;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::InvalidTimescale(self.tau));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::InvalidRate(self.beta));
        }
        let sb = self.model.state_box();
        if self.region.dim() != self.model.state_dim()
            || self
                .region
                .lower()
                .iter()
                .zip(sb.lower())
                .any(|(r, s)| r < s)
            || self
                .region
                .upper()
                .iter()
                .zip(sb.upper())
                .any(|(r, s)| r > s)
        {
            return Err(Error::Synthesis("region must lie inside the state box".into()));
        }
        if self.state_points == 0 || self.input_points == 0 {
            return Err(Error::Synthesis("grid must be non-empty".into()));
        }
        if !(self.eta > 0.0) {
            return Err(Error::Synthesis("margin must be positive".into()));
        }
        Ok(())
    }

    pub fn state_grid(&self) -> Vec<State> {
        self.region.grid(self.state_points)
    }

    pub fn input_grid(&self) -> Vec<Input> {
        self.model.input_box().grid(self.input_points)
    }

    /// SHA-256 over τ, β and the grid coordinates.
    pub fn grid_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.tau.to_le_bytes());
        h.update(self.beta.to_le_bytes());
        for x in self.state_grid() {
            for v in x.iter() {
                h.update(v.to_le_bytes());
            }
        }
        for u in self.input_grid() {
            for v in u.iter() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

#[derive(Debug, Clone)]
struct Sample {
    x: State,
    u: Input,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    phi: Vec<f64>,
    phi_next: Vec<f64>,
}

#[derive(Clone, Copy)]
struct Objective<'s> {
    samples: &'s [Sample],
    n: usize,
    m: usize,
    k: usize,
    beta: f64,
}

impl Objective<'_> {
    fn sym_len(&self) -> usize {
        self.n * (self.n + 1) / 2
    }

    fn len(&self) -> usize {
        self.k * (self.sym_len() + self.m * self.n)
    }

    fn unpack(&self, p: &[f64]) -> (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) {
        let (n, m) = (self.n, self.m);
        let ws = self.k * self.sym_len();
        let w = (0..self.k)
            .map(|c| {
                let block = &p[c * self.sym_len()..(c + 1) * self.sym_len()];
                let mut w = DMatrix::zeros(n, n);
                let mut idx = 0;
                for i in 0..n {
                    for j in i..n {
                        w[(i, j)] = block[idx];
                        w[(j, i)] = block[idx];
                        idx += 1;
                    }
                }
                w
            })
            .collect();
        let l = (0..self.k)
            .map(|c| {
                let off = ws + c * m * n;
                DMatrix::from_row_slice(m, n, &p[off..off + m * n])
            })
            .collect();
        (w, l)
    }

    fn pack(&self, w: &[DMatrix<f64>], l: &[DMatrix<f64>]) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.len());
        for c in w {
            for i in 0..self.n {
                for j in i..self.n {
                    p.push(c[(i, j)]);
                }
            }
        }
        for c in l {
            for i in 0..self.m {
                for j in 0..self.n {
                    p.push(c[(i, j)]);
                }
            }
        }
        p
    }

    /// `(min LMI margin, its sample index, max λ(W), min λ(W))` over the grid.
    fn scan(&self, p: &[f64]) -> (f64, usize, f64, f64) {
        let (wc, lc) = self.unpack(p);
        let wpoly = MatrixPolynomial::new(wc).expect("uniform shapes");
        let lpoly = MatrixPolynomial::new(lc).expect("uniform shapes");
        let mut worst = (f64::INFINITY, 0);
        let mut w_max = f64::NEG_INFINITY;
        let mut w_min = f64::INFINITY;
        for (i, s) in self.samples.iter().enumerate() {
            let w = wpoly.eval_with(&s.phi);
            let w_plus = wpoly.eval_with(&s.phi_next);
            let l = lpoly.eval_with(&s.phi);
            let margin = min_eigenvalue(&lmi_block(&w, &l, &s.a, &s.b, &w_plus, self.beta));
            if margin < worst.0 || margin.is_nan() {
                worst = (margin, i);
            }
            for m in [&w, &w_plus] {
                let e = eigenvalues(m);
                w_max = w_max.max(e.max());
                w_min = w_min.min(e.min());
            }
        }
        (worst.0, worst.1, w_max, w_min)
    }

    /// Scale-free margin `min λ(block) / max λ(W)`.
    fn ratio(&self, p: &[f64]) -> f64 {
        let (margin, _, w_max, _) = self.scan(p);
        if !(w_max > 0.0) || !margin.is_finite() {
            return f64::NEG_INFINITY;
        }
        margin / w_max
    }
}

impl CostFunction for Objective<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        let r = self.ratio(p);
        Ok(if r.is_finite() { -r } else { 1e6 })
    }
}

#[derive(Debug, Clone)]
struct Candidate {
    params: Vec<f64>,
    ratio: f64,
}

fn simplex(p: &[f64]) -> Vec<Vec<f64>> {
    let mut out = vec![p.to_vec()];
    for i in 0..p.len() {
        let mut q = p.to_vec();
        q[i] += 0.1 * p[i].abs().max(1.0);
        out.push(q);
    }
    out
}

fn nelder_mead(obj: &Objective<'_>, start: Vec<f64>, restarts: usize, max_iters: u64) -> Candidate {
    let mut best = Candidate {
        ratio: obj.ratio(&start),
        params: start,
    };
    for _ in 0..=restarts {
        let solver = NelderMead::new(simplex(&best.params))
            .with_sd_tolerance(1e-12)
            .expect("valid tolerance");
        let run = Executor::new(*obj, solver)
        .configure(|s| s.max_iters(max_iters))
        .run();
        let Ok(res) = run else { break };
        let Some(p) = res.state().get_best_param().cloned() else {
            break;
        };
        let r = obj.ratio(&p);
        if r > best.ratio + 1e-12 {
            best = Candidate { params: p, ratio: r };
        } else {
            break;
        }
    }
    best
}

fn build_samples(
    problem: &SynthesisProblem<'_>,
    basis: &PolyBasis,
) -> Result<Vec<Sample>> {
    let model = problem.model;
    let states = problem.state_grid();
    let inputs = if basis.degree() == Degree::Constant {
        // A does not depend on u and W₊ = W, so one input per state suffices
        vec![model.input_box().center()]
    } else {
        problem.input_grid()
    };
    let pairs: Vec<(State, Input)> = states
        .iter()
        .flat_map(|x| inputs.iter().map(move |u| (x.clone(), u.clone())))
        .collect();
    problem
        .execution
        .map(&pairs, |(x, u)| {
            let (a, b) = jacobians(model, x, u, problem.tau)?;
            let next = problem.region.clamp(&step(model, x, u, problem.tau)?);
            Ok(Sample {
                phi: basis.eval(x),
                phi_next: basis.eval(&next),
                x: x.clone(),
                u: u.clone(),
                a,
                b,
            })
        })
        .into_iter()
        .collect()
}

fn structured_starts(
    problem: &SynthesisProblem<'_>,
    obj: &Objective<'_>,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<f64>>> {
    let (n, m, k) = (obj.n, obj.m, obj.k);
    let center = problem.region.center();
    let u0 = problem.model.input_box().center();
    let (a, b) = jacobians(problem.model, &center, &u0, problem.tau)?;
    let b_pinv = b
        .clone()
        .pseudo_inverse(1e-12)
        .map_err(|e| Error::Synthesis(e.to_string()))?;
    let deadbeat = -(&b_pinv * &a);

    let zeros_w = DMatrix::zeros(n, n);
    let zeros_l = DMatrix::zeros(m, n);
    let with_const = |w0: DMatrix<f64>, l0: DMatrix<f64>| {
        let mut w = vec![zeros_w.clone(); k];
        let mut l = vec![zeros_l.clone(); k];
        w[0] = w0;
        l[0] = l0;
        obj.pack(&w, &l)
    };
    let id = DMatrix::identity(n, n);
    let mut starts = vec![
        with_const(id.clone(), zeros_l.clone()),
        with_const(id.clone(), deadbeat.clone()),
    ];
    for _ in 0..problem.random_starts {
        let mut r = DMatrix::from_fn(n, n, |_, _| rng.random_range(-0.5..0.5));
        r = symmetrize(&(&r * r.transpose())) + &id * 0.5;
        let scale = rng.random_range(0.0..1.5);
        let l0 = DMatrix::from_fn(m, n, |i, j| {
            (&deadbeat * &r)[(i, j)] * scale + rng.random_range(-0.1..0.1)
        });
        starts.push(with_const(r, l0));
    }
    Ok(starts)
}

fn synthesize_degree(
    problem: &SynthesisProblem<'_>,
    degree: Degree,
    seed_from: Option<&ContractionCertificate>,
) -> std::result::Result<ContractionCertificate, (f64, State, Input)> {
    let basis = PolyBasis::for_region(degree, &problem.region);
    let samples = build_samples(problem, &basis).map_err(|_| {
        (
            f64::NEG_INFINITY,
            problem.region.center(),
            problem.model.input_box().center(),
        )
    })?;
    let obj = Objective {
        samples: &samples,
        n: problem.model.state_dim(),
        m: problem.model.input_dim(),
        k: basis.len(),
        beta: problem.beta,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(problem.seed);
    let mut starts = structured_starts(problem, &obj, &mut rng).map_err(|_| {
        (
            f64::NEG_INFINITY,
            problem.region.center(),
            problem.model.input_box().center(),
        )
    })?;
    if let Some(prev) = seed_from {
        // lift a constant certificate into the larger family
        let mut w = vec![DMatrix::zeros(obj.n, obj.n); obj.k];
        let mut l = vec![DMatrix::zeros(obj.m, obj.n); obj.k];
        w[0] = prev.w_poly().coeffs()[0].clone();
        l[0] = prev.l_poly().coeffs()[0].clone();
        starts.insert(0, obj.pack(&w, &l));
    }

    let candidates = problem.execution.map(&starts, |s| {
        nelder_mead(&obj, s.clone(), problem.restarts, problem.max_iters)
    });

    let normalized: Vec<(Vec<f64>, f64)> = candidates
        .iter()
        .filter(|c| c.ratio.is_finite())
        .map(|c| {
            let (_, _, w_max, _) = obj.scan(&c.params);
            (c.params.iter().map(|v| v / w_max).collect(), c.ratio)
        })
        .collect();
    let passing = normalized
        .iter()
        .filter(|(_, r)| *r >= problem.eta)
        .min_by(|a, b| norm(&a.0).total_cmp(&norm(&b.0)));

    let Some((params, _)) = passing else {
        let best = candidates
            .iter()
            .max_by(|a, b| a.ratio.total_cmp(&b.ratio))
            .expect("at least one start");
        let (margin, idx, w_max, _) = obj.scan(&best.params);
        let s = &samples[idx];
        let margin = if w_max > 0.0 { margin / w_max } else { margin };
        return Err((margin, s.x.clone(), s.u.clone()));
    };

    let (_, _, w_max, w_min) = obj.scan(params);
    let (wc, lc) = obj.unpack(params);
    let build = || -> Result<ContractionCertificate> {
        ContractionCertificate::new(
            problem.tau,
            problem.beta,
            basis.clone(),
            MatrixPolynomial::new(wc.clone())?,
            MatrixPolynomial::new(lc.clone())?,
            (1.0 / w_max, 1.0 / w_min),
            problem.region.clone(),
            problem.grid_hash(),
        )
    };
    build().map_err(|_| {
        (
            f64::NEG_INFINITY,
            problem.region.center(),
            problem.model.input_box().center(),
        )
    })
}

fn norm(p: &[f64]) -> f64 {
    p.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Maximizes the worst grid-point LMI margin over `(W, L)` and returns the
/// certificate `(M, K) = (W⁻¹, L W⁻¹)`, normalized so that `max λ(W) = 1`.
pub fn synthesize(problem: &SynthesisProblem<'_>) -> Result<ContractionCertificate> {
    problem.validate()?;
    let to_error = |(margin, x, u): (f64, State, Input)| Error::SynthesisFailed {
        margin,
        state: x.iter().copied().collect(),
        input: u.iter().copied().collect(),
    };
    match problem.degree {
        DegreeChoice::Fixed(d) => synthesize_degree(problem, d, None).map_err(to_error),
        DegreeChoice::Auto => match synthesize_degree(problem, Degree::Constant, None) {
            Ok(cert) => Ok(cert),
            Err(_) => synthesize_degree(problem, Degree::Quadratic, None).map_err(to_error),
        },
    }
}

/// Lifts a constant certificate into the quadratic family and re-optimizes.
pub fn refine_quadratic(
    problem: &SynthesisProblem<'_>,
    start: &ContractionCertificate,
) -> Result<ContractionCertificate> {
    problem.validate()?;
    synthesize_degree(problem, Degree::Quadratic, Some(start)).map_err(|(margin, x, u)| {
        Error::SynthesisFailed {
            margin,
            state: x.iter().copied().collect(),
            input: u.iter().copied().collect(),
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CoupledTank, PolynomialModel};
    use nalgebra::DVector;

    fn scalar(a: f64, b: f64) -> PolynomialModel {
        PolynomialModel::linear(
            "scalar",
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, b),
            BoxBounds::uniform(1, -5.0, 5.0),
            BoxBounds::uniform(1, -10.0, 10.0),
        )
        .unwrap()
    }

    #[test]
    fn scalar_unstable_plant_is_stabilized() {
        let model = scalar(1.2, 1.0);
        let cert = synthesize(&SynthesisProblem::new(&model, 1.0, 0.3)).unwrap();
        let k = cert.gain(&DVector::zeros(1)).unwrap()[(0, 0)];
        assert!((1.2 + k).powi(2) < 0.7, "closed-loop factor {}", 1.2 + k);
        assert_eq!(cert.degree(), Degree::Constant);
    }

    #[test]
    fn uncontrollable_unstable_scalar_fails() {
        let model = scalar(2.0, 0.0);
        let err = synthesize(&SynthesisProblem::new(&model, 1.0, 0.3)).unwrap_err();
        match err {
            Error::SynthesisFailed { margin, state, .. } => {
                assert!(margin < 1e-4);
                assert_eq!(state.len(), 1);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn same_seed_same_certificate() {
        let tank = CoupledTank::default();
        let p = SynthesisProblem::new(&tank, 1.0, 0.3)
            .with_region(BoxBounds::uniform(2, 0.25, 10.0))
            .with_degree(DegreeChoice::Fixed(Degree::Constant));
        let p = SynthesisProblem {
            state_points: 6,
            random_starts: 1,
            ..p
        };
        let a = synthesize(&p).unwrap();
        let b = synthesize(&p.clone().with_execution(Execution::Parallel)).unwrap();
        assert_eq!(a, b);
        assert!((a.metric_bounds().0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_rate_and_region() {
        let model = scalar(0.5, 1.0);
        assert!(matches!(
            synthesize(&SynthesisProblem::new(&model, 1.0, 0.0)),
            Err(Error::InvalidRate(_))
        ));
        let p = SynthesisProblem::new(&model, 1.0, 0.3).with_region(BoxBounds::uniform(1, -9.0, 1.0));
        assert!(matches!(synthesize(&p), Err(Error::Synthesis(_))));
    }
}
