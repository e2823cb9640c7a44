//! Riemannian distance under a contraction metric, discretized geodesics,
//! the integrated differential feedback, and the per-step contraction
//! residual.

use nalgebra::{DMatrix, DVector};

use crate::contraction::ContractionCertificate;
use crate::error::{Error, Result};
use crate::linalg::{quad_form, symmetrize};
use crate::model::{step, BoxBounds, Input, State, SystemModel};

pub const DEFAULT_SEGMENTS: usize = 16;

const FD_STEP: f64 = 1e-6;
const SMOOTHING: f64 = 1e-12;

/// A field of symmetric positive-definite matrices over the state space.
pub trait Metric: Sync {
    fn metric_at(&self, x: &State) -> Result<DMatrix<f64>>;

    /// `Some` when the metric does not depend on the state.
    fn constant(&self) -> Option<&DMatrix<f64>> {
        None
    }

    /// Box that interior path samples are projected onto.
    fn domain(&self) -> Option<&BoxBounds> {
        None
    }
}

impl Metric for ContractionCertificate {
    fn metric_at(&self, x: &State) -> Result<DMatrix<f64>> {
        self.metric(x)
    }

    fn constant(&self) -> Option<&DMatrix<f64>> {
        self.constant_parts().map(|(m, _)| m)
    }

    fn domain(&self) -> Option<&BoxBounds> {
        Some(self.region())
    }
}

#[derive(Debug, Clone)]
pub struct ConstantMetric(pub DMatrix<f64>);

impl Metric for ConstantMetric {
    fn metric_at(&self, _x: &State) -> Result<DMatrix<f64>> {
        Ok(self.0.clone())
    }

    fn constant(&self) -> Option<&DMatrix<f64>> {
        Some(&self.0)
    }
}

/// State-dependent metric from a closure, optionally with a domain box.
pub struct FnMetric<F> {
    f: F,
    domain: Option<BoxBounds>,
}

impl<F> FnMetric<F>
where
    F: Fn(&State) -> DMatrix<f64> + Sync,
{
    pub fn new(f: F) -> Self {
        Self { f, domain: None }
    }

    pub fn with_domain(f: F, domain: BoxBounds) -> Self {
        Self {
            f,
            domain: Some(domain),
        }
    }
}

impl<F> Metric for FnMetric<F>
where
    F: Fn(&State) -> DMatrix<f64> + Sync,
{
    fn metric_at(&self, x: &State) -> Result<DMatrix<f64>> {
        Ok((self.f)(x))
    }

    fn domain(&self) -> Option<&BoxBounds> {
        self.domain.as_ref()
    }
}

/// Path `c(s)` sampled at `s = i/S`, `i = 0..=S`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeodesicPath {
    samples: Vec<State>,
    clamped: bool,
    converged: bool,
    iterations: usize,
}

impl GeodesicPath {
    pub fn straight(x: &State, x_star: &State, segments: usize) -> Self {
        let segments = segments.max(1);
        let samples = (0..=segments)
            .map(|i| {
                if i == 0 {
                    x.clone()
                } else if i == segments {
                    x_star.clone()
                } else {
                    let s = i as f64 / segments as f64;
                    x + (x_star - x) * s
                }
            })
            .collect();
        Self {
            samples,
            clamped: false,
            converged: true,
            iterations: 0,
        }
    }

    pub fn from_samples(samples: Vec<State>) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::DimensionMismatch("a path needs at least two samples".into()));
        }
        Ok(Self {
            samples,
            clamped: false,
            converged: true,
            iterations: 0,
        })
    }

    pub fn samples(&self) -> &[State] {
        &self.samples
    }

    pub fn segments(&self) -> usize {
        self.samples.len() - 1
    }

    pub fn start(&self) -> &State {
        &self.samples[0]
    }

    pub fn end(&self) -> &State {
        &self.samples[self.samples.len() - 1]
    }

    pub fn is_clamped(&self) -> bool {
        self.clamped
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// `δ_c` per segment: forward differences scaled by `S`.
    pub fn tangents(&self) -> Vec<State> {
        let s = self.segments() as f64;
        self.samples.windows(2).map(|w| (&w[1] - &w[0]) * s).collect()
    }

    pub fn midpoints(&self) -> Vec<State> {
        self.samples
            .windows(2)
            .map(|w| (&w[0] + &w[1]) * 0.5)
            .collect()
    }

    /// `Σ δᵀ M(mid) δ / S`.
    pub fn energy<G: Metric + ?Sized>(&self, metric: &G) -> Result<f64> {
        let s = self.segments() as f64;
        let mut e = 0.0;
        for (d, mid) in self.tangents().iter().zip(self.midpoints()) {
            e += quad_form(&metric.metric_at(&mid)?, d) / s;
        }
        Ok(e)
    }

    pub fn length<G: Metric + ?Sized>(&self, metric: &G) -> Result<f64> {
        path_length(metric, self)
    }

    pub fn reversed(&self) -> Self {
        let mut out = self.clone();
        out.samples.reverse();
        out
    }
}

/// `Σ √(Δᵀ M(mid) Δ)` over the path segments.
pub fn path_length<G: Metric + ?Sized>(metric: &G, path: &GeodesicPath) -> Result<f64> {
    let mut total = 0.0;
    for w in path.samples.windows(2) {
        let delta = &w[1] - &w[0];
        if delta.iter().all(|v| *v == 0.0) {
            continue;
        }
        let mid = (&w[0] + &w[1]) * 0.5;
        total += quad_form(&metric.metric_at(&mid)?, &delta).max(0.0).sqrt();
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeodesicOptions {
    pub segments: usize,
    pub max_iters: usize,
    /// Stop once the energy decrease falls below this.
    pub tol: f64,
    /// Return the best path with `converged = false` instead of failing.
    pub relaxed: bool,
}

impl Default for GeodesicOptions {
    fn default() -> Self {
        Self {
            segments: DEFAULT_SEGMENTS,
            max_iters: 200,
            tol: 1e-10,
            relaxed: true,
        }
    }
}

fn check_endpoints(x: &State, x_star: &State) -> Result<()> {
    if x.len() != x_star.len() {
        return Err(Error::DimensionMismatch(format!(
            "endpoints have dimensions {} and {}",
            x.len(),
            x_star.len()
        )));
    }
    if x.iter().chain(x_star.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NanGuard("non-finite geodesic endpoint".into()));
    }
    Ok(())
}

/// Gradient of `vᵀ M(x) v` with respect to `x` by central differences.
fn quad_gradient<G: Metric + ?Sized>(metric: &G, x: &State, v: &DVector<f64>) -> Result<DVector<f64>> {
    let mut g = DVector::zeros(x.len());
    for k in 0..x.len() {
        let h = FD_STEP * x[k].abs().max(1.0);
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[k] += h;
        xm[k] -= h;
        g[k] = (quad_form(&metric.metric_at(&xp)?, v) - quad_form(&metric.metric_at(&xm)?, v))
            / (2.0 * h);
    }
    Ok(g)
}

fn energy_and_gradient<G: Metric + ?Sized>(
    metric: &G,
    samples: &[State],
) -> Result<(f64, Vec<DVector<f64>>)> {
    let s = (samples.len() - 1) as f64;
    let mut energy = 0.0;
    let mut grad = vec![DVector::zeros(samples[0].len()); samples.len()];
    for i in 0..samples.len() - 1 {
        let delta = &samples[i + 1] - &samples[i];
        let mid = (&samples[i] + &samples[i + 1]) * 0.5;
        let m = symmetrize(&metric.metric_at(&mid)?);
        energy += s * quad_form(&m, &delta);
        let lin = &m * &delta * (2.0 * s);
        let half_dm = quad_gradient(metric, &mid, &delta)? * (0.5 * s);
        grad[i] += &half_dm - &lin;
        grad[i + 1] += &half_dm + &lin;
    }
    Ok((energy, grad))
}

fn project(domain: Option<&BoxBounds>, samples: &mut [State]) -> bool {
    let Some(b) = domain else { return false };
    let last = samples.len() - 1;
    let mut any = false;
    for c in &mut samples[1..last] {
        if !b.contains(c) {
            *c = b.clamp(c);
            any = true;
        }
    }
    any
}

/// Discrete minimizer of the path energy between `x` and `x_star`, by
/// projected gradient descent on the interior samples from the straight
/// line. Constant metrics return the straight line directly.
pub fn geodesic<G: Metric + ?Sized>(
    metric: &G,
    x: &State,
    x_star: &State,
    options: &GeodesicOptions,
) -> Result<GeodesicPath> {
    check_endpoints(x, x_star)?;
    let straight = GeodesicPath::straight(x, x_star, options.segments);
    if metric.constant().is_some() || x == x_star || straight.segments() < 2 {
        return Ok(straight);
    }

    let domain = metric.domain();
    let mut samples = straight.samples.clone();
    let mut clamped = project(domain, &mut samples);
    let (mut energy, mut grad) = energy_and_gradient(metric, &samples)?;
    let last = samples.len() - 1;
    let mut alpha = 1.0 / (options.segments as f64 * 4.0);
    let mut converged = false;
    let mut iterations = 0;
    let mut grad_norm = f64::INFINITY;

    while iterations < options.max_iters {
        iterations += 1;
        grad_norm = grad[1..last]
            .iter()
            .map(|g| g.norm_squared())
            .sum::<f64>()
            .sqrt();
        if grad_norm < SMOOTHING {
            converged = true;
            break;
        }
        let mut accepted = None;
        let mut trial_alpha = alpha * 2.0;
        for _ in 0..40 {
            let mut trial = samples.clone();
            for i in 1..last {
                trial[i] -= &grad[i] * trial_alpha;
            }
            let c = project(domain, &mut trial);
            let (e, g) = energy_and_gradient(metric, &trial)?;
            if e < energy {
                accepted = Some((trial, e, g, c));
                break;
            }
            trial_alpha *= 0.5;
        }
        let Some((trial, e, g, c)) = accepted else {
            converged = true;
            break;
        };
        let decrease = energy - e;
        samples = trial;
        energy = e;
        grad = g;
        clamped |= c;
        alpha = trial_alpha;
        if decrease < options.tol {
            converged = true;
            break;
        }
    }

    if !converged && !options.relaxed {
        return Err(Error::GeodesicNonConvergence {
            iterations,
            gradient_norm: grad_norm,
        });
    }
    let path = GeodesicPath {
        samples,
        clamped,
        converged,
        iterations,
    };
    if path_length(metric, &path)? > path_length(metric, &straight)? {
        return Ok(GeodesicPath {
            converged,
            iterations,
            ..straight
        });
    }
    Ok(path)
}

/// Riemannian distance: `√(eᵀ M e)` for constant metrics, geodesic length
/// otherwise.
pub fn distance<G: Metric + ?Sized>(
    metric: &G,
    x: &State,
    x_star: &State,
    options: &GeodesicOptions,
) -> Result<f64> {
    check_endpoints(x, x_star)?;
    if let Some(m) = metric.constant() {
        return Ok(quad_form(m, &(x - x_star)).max(0.0).sqrt());
    }
    path_length(metric, &geodesic(metric, x, x_star, options)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackOutput {
    /// Input after saturation onto 𝒰.
    pub input: Input,
    pub raw: Input,
    pub saturated: bool,
}

/// `u* + ∫ K(γ(s)) γ'(s) ds` along the geodesic from `x_star` to `x`.
pub fn feedback_control<M: SystemModel + ?Sized>(
    cert: &ContractionCertificate,
    model: &M,
    x: &State,
    x_star: &State,
    u_star: &Input,
    options: &GeodesicOptions,
) -> Result<FeedbackOutput> {
    check_endpoints(x, x_star)?;
    let raw = if let Some((_, k)) = cert.constant_parts() {
        u_star + k * (x - x_star)
    } else {
        let path = geodesic(cert, x_star, x, options)?;
        let mut u = u_star.clone();
        for w in path.samples.windows(2) {
            let mid = (&w[0] + &w[1]) * 0.5;
            u += cert.gain(&mid)? * (&w[1] - &w[0]);
        }
        u
    };
    let input = model.input_box().clamp(&raw);
    let saturated = input != raw;
    Ok(FeedbackOutput {
        input,
        raw,
        saturated,
    })
}

/// `d(x⁺, x*⁺) − √(1 − β) d(x, x*)` with both successors taken at the
/// certificate's timescale.
#[allow(clippy::too_many_arguments)]
pub fn constraint_residual<M: SystemModel + ?Sized>(
    cert: &ContractionCertificate,
    model: &M,
    x: &State,
    x_star: &State,
    u: &Input,
    u_star: &Input,
    options: &GeodesicOptions,
) -> Result<f64> {
    let next = step(model, x, u, cert.tau())?;
    let next_star = step(model, x_star, u_star, cert.tau())?;
    residual_from_successors(cert, x, x_star, &next, &next_star, options)
}

/// Residual when the successors are already known.
pub fn residual_from_successors(
    cert: &ContractionCertificate,
    x: &State,
    x_star: &State,
    next: &State,
    next_star: &State,
    options: &GeodesicOptions,
) -> Result<f64> {
    let now = distance(cert, x, x_star, options)?;
    let then = distance(cert, next, next_star, options)?;
    Ok(then - cert.decay() * now)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CoupledTank;

    fn v(xs: &[f64]) -> State {
        DVector::from_vec(xs.to_vec())
    }

    fn tank_cert() -> ContractionCertificate {
        let m = DMatrix::from_row_slice(2, 2, &[2.1448983, 2.8972562, 2.8972562, 8.331753]);
        let k = DMatrix::from_row_slice(1, 2, &[-20.952, -23.498]);
        ContractionCertificate::from_constant_metric(1.0, 0.3, m, k, BoxBounds::uniform(2, 0.25, 10.0))
            .unwrap()
    }

    #[test]
    fn euclidean_lengths() {
        let id = ConstantMetric(DMatrix::identity(2, 2));
        for s in [1, 3, 16] {
            let p = GeodesicPath::straight(&v(&[0.0, 0.0]), &v(&[3.0, 4.0]), s);
            assert!((path_length(&id, &p).unwrap() - 5.0).abs() < 1e-9);
        }
        let p = geodesic(&id, &v(&[1.0, 1.0]), &v(&[4.0, 5.0]), &GeodesicOptions::default()).unwrap();
        assert!((path_length(&id, &p).unwrap() - 5.0).abs() < 1e-9);
        let zero = GeodesicPath::straight(&v(&[1.0, 2.0]), &v(&[1.0, 2.0]), 16);
        assert_eq!(path_length(&id, &zero).unwrap(), 0.0);
    }

    #[test]
    fn weighted_constant_metric() {
        let m = ConstantMetric(DMatrix::from_diagonal(&v(&[4.0, 1.0])));
        let p = GeodesicPath::straight(&v(&[0.0, 0.0]), &v(&[1.0, 0.0]), 16);
        assert!((path_length(&m, &p).unwrap() - 2.0).abs() < 1e-12);
        assert!((p.energy(&m).unwrap() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn state_dependent_geodesic_bends_and_shortens() {
        let metric = FnMetric::new(|x: &State| DMatrix::from_diagonal(&v(&[1.0 + x[0] * x[0], 1.0])));
        let a = v(&[-1.0, 0.0]);
        let b = v(&[1.0, 0.0]);
        let g = geodesic(&metric, &a, &b, &GeodesicOptions::default()).unwrap();
        let straight = GeodesicPath::straight(&a, &b, 16);
        assert_eq!(g.start(), &a);
        assert_eq!(g.end(), &b);
        let lg = path_length(&metric, &g).unwrap();
        assert!(lg <= path_length(&metric, &straight).unwrap() + 1e-9);
        assert!(lg * lg <= g.energy(&metric).unwrap() + 1e-12);
    }

    #[test]
    fn strict_mode_reports_non_convergence() {
        let metric = FnMetric::new(|x: &State| {
            DMatrix::from_diagonal(&v(&[1.0 + 4.0 * x[1] * x[1], 1.0 + x[0].powi(4)]))
        });
        let opts = GeodesicOptions {
            max_iters: 1,
            tol: 0.0,
            relaxed: false,
            ..Default::default()
        };
        let r = geodesic(&metric, &v(&[-2.0, 1.0]), &v(&[2.0, -1.0]), &opts);
        assert!(matches!(r, Err(Error::GeodesicNonConvergence { .. })));
    }

    #[test]
    fn controller_with_constant_gain_is_affine() {
        let tank = CoupledTank::default();
        let cert = tank_cert();
        let x = v(&[2.6, 2.55]);
        let xs = v(&[2.5, 2.5]);
        let us = v(&[0.9439]);
        let out = feedback_control(&cert, &tank, &x, &xs, &us, &GeodesicOptions::default()).unwrap();
        let k = cert.gain(&x).unwrap();
        let expected = &us + &k * (&x - &xs);
        assert!((&out.raw - expected).amax() < 1e-12);
        let same = feedback_control(&cert, &tank, &xs, &xs, &us, &GeodesicOptions::default()).unwrap();
        assert_eq!(same.input, us);
    }

    #[test]
    fn residual_signs() {
        let tank = CoupledTank::default();
        let cert = tank_cert();
        let opts = GeodesicOptions::default();
        let xs = v(&[2.5, 2.5]);
        let us = crate::model::steady_state_input(&tank, &xs, 1.0).unwrap();
        assert_eq!(constraint_residual(&cert, &tank, &xs, &xs, &us, &us, &opts).unwrap(), 0.0);
        let x = v(&[3.0, 3.0]);
        let r = constraint_residual(&cert, &tank, &x, &xs, &v(&[0.0]), &us, &opts).unwrap();
        assert!(r > 0.0, "pump off residual {r}");
        let fb = feedback_control(&cert, &tank, &x, &xs, &us, &opts).unwrap();
        let r = constraint_residual(&cert, &tank, &x, &xs, &fb.raw, &us, &opts).unwrap();
        assert!(r <= 1e-8, "feedback residual {r}");
    }
}
