//! Systems with an invariant manifold `{e = 0}`, their transversally linear
//! flow, and the contraction metric built from it.
//!
//! An `(e, x)`-system is `e' = F(e, x)`, `x' = G(e, x)` with `F(0, x) = 0`.
//! Linearizing in `e` along the manifold gives the time-varying linear
//! system `e~' = A(x~) e~`, `x~' = G(0, x~)` with `A(x) = dF/de(0, x)`.
//! Integrating the quadratic form `Phi' Q Phi` of its transition matrix
//! yields a metric `P(x)` that satisfies the matrix inequality
//!
//! ```text
//! d_G P(x) + P(x) A(x) + A(x)' P(x) <= -Q
//! ```
//!
//! with equality up to quadrature error.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::{max_eigenvalue, min_eigenvalue, quadrature_weights, sym_eigenvalues, symmetrize_checked, Matrix, Vector};
use crate::ode::{check_dim, flow_map, integrate, integrate_transition, Trajectory, DEFAULT_FD_STEP};

/// Hard cap on the truncation horizon of the metric integral.
pub const METRIC_HORIZON_CAP: f64 = 200.0;
/// Truncation accepted once `trace(integrand(T)) <= METRIC_TAIL_TOL * trace(P)`.
pub const METRIC_TAIL_TOL: f64 = 1e-10;
/// Default step of the flow central difference defining `d_G P`.
pub const DEFAULT_FLOW_STEP: f64 = 1e-4;
/// Default fraction of samples used by the decay fit.
pub const DEFAULT_TAIL_FRACTION: f64 = 0.5;

type PairFn = dyn Fn(&Vector, &Vector) -> Vector + Send + Sync;
type MatFn = dyn Fn(&Vector) -> Matrix + Send + Sync;
type MetricFn = dyn Fn(&Vector) -> Result<Matrix> + Send + Sync;

/// The pair `(F, G)` of an `(e, x)`-system.
#[derive(Clone)]
pub struct TransverseSystem {
    ne: usize,
    nx: usize,
    f: Arc<PairFn>,
    g: Arc<PairFn>,
    dfde0: Option<Arc<MatFn>>,
}

impl fmt::Debug for TransverseSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TransverseSystem")
            .field("ne", &self.ne)
            .field("nx", &self.nx)
            .field("analytic_dfde0", &self.dfde0.is_some())
            .finish()
    }
}

impl TransverseSystem {
    pub fn new(
        ne: usize,
        nx: usize,
        f: impl Fn(&Vector, &Vector) -> Vector + Send + Sync + 'static,
        g: impl Fn(&Vector, &Vector) -> Vector + Send + Sync + 'static,
    ) -> Self {
        Self {
            ne,
            nx,
            f: Arc::new(f),
            g: Arc::new(g),
            dfde0: None,
        }
    }

    /// Attaches an analytic `x -> dF/de(0, x)`.
    pub fn with_transverse_jacobian(mut self, j: impl Fn(&Vector) -> Matrix + Send + Sync + 'static) -> Self {
        self.dfde0 = Some(Arc::new(j));
        self
    }

    pub fn ne(&self) -> usize {
        self.ne
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn f(&self, e: &Vector, x: &Vector) -> Vector {
        (self.f)(e, x)
    }

    pub fn g(&self, e: &Vector, x: &Vector) -> Vector {
        (self.g)(e, x)
    }

    /// In-manifold drift `G(0, x)`.
    pub fn manifold_drift(&self, x: &Vector) -> Vector {
        (self.g)(&Vector::zeros(self.ne), x)
    }

    /// `A(x) = dF/de(0, x)`.
    pub fn transverse_jacobian(&self, x: &Vector) -> Matrix {
        match &self.dfde0 {
            Some(j) => j(x),
            None => {
                let zero = Vector::zeros(self.ne);
                crate::ode::jacobian_fd_raw(|e| (self.f)(e, x), &zero, DEFAULT_FD_STEP)
            }
        }
    }

    /// Largest `|F(0, x)|` over `probes`; zero for an exact invariant manifold.
    pub fn invariance_defect(&self, probes: &[Vector]) -> f64 {
        let zero = Vector::zeros(self.ne);
        probes.iter().map(|x| (self.f)(&zero, x).amax()).fold(0.0, f64::max)
    }

    /// Full nonlinear `(e, x)` solution; states are `[e; x]`.
    pub fn simulate(&self, e0: &Vector, x0: &Vector, horizon: f64, dt: f64) -> Result<Trajectory> {
        check_dim("TransverseSystem::simulate (e0)", self.ne, e0.len())?;
        check_dim("TransverseSystem::simulate (x0)", self.nx, x0.len())?;
        let (ne, nx) = (self.ne, self.nx);
        let rhs = |z: &Vector| {
            let e = z.rows(0, ne).into_owned();
            let x = z.rows(ne, nx).into_owned();
            stack(&(self.f)(&e, &x), &(self.g)(&e, &x))
        };
        integrate(rhs, &stack(e0, x0), horizon, dt)
    }
}

pub(crate) fn stack(a: &Vector, b: &Vector) -> Vector {
    let mut z = Vector::zeros(a.len() + b.len());
    z.rows_mut(0, a.len()).copy_from(a);
    z.rows_mut(a.len(), b.len()).copy_from(b);
    z
}

/// A symmetric positive definite matrix field `x -> P(x)` with eigenvalue
/// bounds `p_lo I <= P(x) <= p_hi I` and the matrix `Q` it was built against.
#[derive(Clone)]
pub struct MetricField {
    dim: usize,
    eval: Arc<MetricFn>,
    pub p_lo: f64,
    pub p_hi: f64,
    pub q: Matrix,
}

impl fmt::Debug for MetricField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MetricField")
            .field("dim", &self.dim)
            .field("p_lo", &self.p_lo)
            .field("p_hi", &self.p_hi)
            .field("q", &self.q)
            .finish()
    }
}

impl MetricField {
    pub fn new(
        dim: usize,
        q: Matrix,
        p_lo: f64,
        p_hi: f64,
        eval: impl Fn(&Vector) -> Result<Matrix> + Send + Sync + 'static,
    ) -> Self {
        Self {
            dim,
            eval: Arc::new(eval),
            p_lo,
            p_hi,
            q,
        }
    }

    /// A metric that does not depend on the state.
    pub fn constant(p: Matrix, q: Matrix) -> Self {
        let ev = sym_eigenvalues(&p);
        let (lo, hi) = (ev[0], ev[ev.len() - 1]);
        Self::new(p.nrows(), q, lo, hi, move |_| Ok(p.clone()))
    }

    /// The metric obtained by integrating the transversal quadratic form of
    /// `sys` (see [`compute_metric`]). Bounds start unset (`0`, `inf`); use
    /// [`MetricField::with_sampled_bounds`] to fill them.
    pub fn from_transverse(sys: &TransverseSystem, q: Matrix, horizon: f64, dt: f64) -> Self {
        let sys = sys.clone();
        let q2 = q.clone();
        Self::new(sys.ne(), q, 0.0, f64::INFINITY, move |x| compute_metric(&sys, &q2, x, horizon, dt))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eval(&self, x: &Vector) -> Result<Matrix> {
        (self.eval)(x)
    }

    /// Extreme eigenvalues of `P` over `samples`.
    pub fn sampled_bounds(&self, samples: &[Vector]) -> Result<(f64, f64)> {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for x in samples {
            let ev = sym_eigenvalues(&self.eval(x)?);
            lo = lo.min(ev[0]);
            hi = hi.max(ev[ev.len() - 1]);
        }
        Ok((lo, hi))
    }

    /// Replaces `p_lo`, `p_hi` by the sampled eigenvalue extrema.
    pub fn with_sampled_bounds(mut self, samples: &[Vector]) -> Result<Self> {
        let (lo, hi) = self.sampled_bounds(samples)?;
        if !(lo > 0.0) {
            return Err(Error::NotPositiveDefinite(lo));
        }
        self.p_lo = lo;
        self.p_hi = hi;
        Ok(self)
    }
}

/// Fitted exponential envelope `|e(t)| <= k |e(0)| exp(-lambda t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayEstimate {
    pub k: f64,
    pub lambda: f64,
    /// RMS of the log-linear fit residuals.
    pub residual: f64,
}

/// Transversally linear flow from `(e0, x0)`; states are `[e~; x~]`.
pub fn transverse_linear_flow(sys: &TransverseSystem, x0: &Vector, e0: &Vector, horizon: f64, dt: f64) -> Result<Trajectory> {
    check_dim("transverse_linear_flow (e0)", sys.ne(), e0.len())?;
    check_dim("transverse_linear_flow (x0)", sys.nx(), x0.len())?;
    let (ne, nx) = (sys.ne(), sys.nx());
    let rhs = |z: &Vector| {
        let e = z.rows(0, ne).into_owned();
        let x = z.rows(ne, nx).into_owned();
        stack(&(sys.transverse_jacobian(&x) * e), &sys.manifold_drift(&x))
    };
    integrate(rhs, &stack(e0, x0), horizon, dt)
}

/// Least-squares fit of `ln(norm)` against time on the last `tail_fraction`
/// of the samples. `lambda` is minus the slope and `k` is the fitted
/// intercept relative to `norms[0]`, clipped below at 1.
pub fn estimate_decay(times: &[f64], norms: &[f64], tail_fraction: f64) -> Result<DecayEstimate> {
    if times.len() != norms.len() {
        return Err(Error::Dimension {
            context: "estimate_decay",
            expected: times.len(),
            got: norms.len(),
        });
    }
    if !(tail_fraction > 0.0 && tail_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!("tail fraction must lie in (0, 1], got {tail_fraction}")));
    }
    if let Some((index, &value)) = norms.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return Err(Error::Domain { index, value });
    }
    let n = norms.len();
    let start = ((n as f64) * (1.0 - tail_fraction)).floor() as usize;
    let count = n - start.min(n);
    if count < 10 {
        return Err(Error::InvalidArgument(format!("decay fit needs at least 10 tail samples, got {count}")));
    }
    let ts = &times[start..];
    let ys: Vec<f64> = norms[start..].iter().map(|v| v.ln()).collect();
    let m = count as f64;
    let t_mean = ts.iter().sum::<f64>() / m;
    let y_mean = ys.iter().sum::<f64>() / m;
    let sxx: f64 = ts.iter().map(|t| (t - t_mean).powi(2)).sum();
    let sxy: f64 = ts.iter().zip(&ys).map(|(t, y)| (t - t_mean) * (y - y_mean)).sum();
    if !(sxx > 0.0) {
        return Err(Error::InvalidArgument("decay fit needs distinct sample times".into()));
    }
    let slope = sxy / sxx;
    let intercept = y_mean - slope * t_mean;
    let rss: f64 = ts.iter().zip(&ys).map(|(t, y)| (y - intercept - slope * t).powi(2)).sum();
    Ok(DecayEstimate {
        k: (intercept.exp() / norms[0]).max(1.0),
        lambda: -slope,
        residual: (rss / m).sqrt(),
    })
}

/// [`estimate_decay`] on the prefix of the trace that stays above
/// `rel_floor * norms[0]`. Traces that converge to round-off would otherwise
/// flatten the fitted tail.
pub fn estimate_decay_above_floor(times: &[f64], norms: &[f64], rel_floor: f64, tail_fraction: f64) -> Result<DecayEstimate> {
    let floor = rel_floor * norms.first().copied().unwrap_or(0.0);
    let end = norms.iter().position(|v| *v <= floor).unwrap_or(norms.len());
    estimate_decay(&times[..end], &norms[..end], tail_fraction)
}

fn check_spd(q: &Matrix, what: &str) -> Result<()> {
    if !q.is_square() {
        return Err(Error::InvalidArgument(format!("{what} must be square")));
    }
    symmetrize_checked(q, 1e-12)?;
    let lo = min_eigenvalue(q);
    if !(lo > 0.0) {
        return Err(Error::NotPositiveDefinite(lo));
    }
    Ok(())
}

/// `P(x) = int_0^T Phi(s)' Q Phi(s) ds` for the transition matrix of the
/// transversally linear system started at `x`.
///
/// The integral is evaluated with composite Simpson on the integration grid.
/// Starting from `horizon`, the truncation time is doubled until the trace
/// of the integrand at `T` is at most [`METRIC_TAIL_TOL`] times the trace of
/// the accumulated integral, up to [`METRIC_HORIZON_CAP`].
pub fn compute_metric(sys: &TransverseSystem, q: &Matrix, x: &Vector, horizon: f64, dt: f64) -> Result<Matrix> {
    check_dim("compute_metric (x)", sys.nx(), x.len())?;
    check_dim("compute_metric (Q)", sys.ne(), q.nrows())?;
    check_spd(q, "Q")?;
    if !(horizon > 0.0) {
        return Err(Error::InvalidArgument(format!("metric horizon must be positive, got {horizon}")));
    }
    let mut t_end = horizon.min(METRIC_HORIZON_CAP);
    loop {
        let (_, phi) = integrate_transition(
            |y| sys.manifold_drift(y),
            |y| sys.transverse_jacobian(y),
            x,
            sys.ne(),
            t_end,
            dt,
        )?;
        let weights = quadrature_weights(&phi.times);
        let mut p = Matrix::zeros(sys.ne(), sys.ne());
        let mut last = Matrix::zeros(sys.ne(), sys.ne());
        for (w, m) in weights.iter().zip(&phi.mats) {
            last = m.transpose() * q * m;
            p += &last * *w;
        }
        let tail_ratio = last.trace() / p.trace();
        if tail_ratio.is_finite() && tail_ratio <= METRIC_TAIL_TOL {
            return Ok((&p + p.transpose()) * 0.5);
        }
        if t_end >= METRIC_HORIZON_CAP {
            return Err(Error::Truncation {
                horizon: t_end,
                tail_ratio,
            });
        }
        t_end = (2.0 * t_end).min(METRIC_HORIZON_CAP);
    }
}

/// Derivative of `P` along the flow of `drift`:
/// `(P(X(x, h)) - P(X(x, -h))) / (2h)`, with the flow computed at `dt = h / 10`.
pub fn flow_derivative<D>(metric: &MetricField, drift: D, x: &Vector, h: f64) -> Result<Matrix>
where
    D: Fn(&Vector) -> Vector,
{
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("flow step must be positive, got {h}")));
    }
    let fwd = flow_map(&drift, x, h, h / 10.0)?;
    let back = flow_map(&drift, x, -h, h / 10.0)?;
    let d = (metric.eval(&fwd)? - metric.eval(&back)?) / (2.0 * h);
    Ok((&d + d.transpose()) * 0.5)
}

/// `d_G P(x)` along the in-manifold flow `x~' = G(0, x~)`.
pub fn metric_flow_derivative(metric: &MetricField, sys: &TransverseSystem, x: &Vector, h: f64) -> Result<Matrix> {
    flow_derivative(metric, |y| sys.manifold_drift(y), x, h)
}

/// Symmetric matrix `d_G P + P A + A' P + Q` at `x`.
pub fn ulmte_residual_matrix(sys: &TransverseSystem, metric: &MetricField, x: &Vector, h: f64) -> Result<Matrix> {
    let dp = metric_flow_derivative(metric, sys, x, h)?;
    let p = metric.eval(x)?;
    let a = sys.transverse_jacobian(x);
    let m = dp + &p * &a + a.transpose() * &p + &metric.q;
    symmetrize_checked(&m, 1e-8)
}

/// Largest eigenvalue of `d_G P + P A + A' P + Q` at `x`; the matrix
/// inequality holds at `x` iff the result is `<= 0`.
pub fn ulmte_residual(sys: &TransverseSystem, metric: &MetricField, x: &Vector) -> Result<f64> {
    Ok(max_eigenvalue(&ulmte_residual_matrix(sys, metric, x, DEFAULT_FLOW_STEP)?))
}

/// Per-sample residuals and their maximum.
#[derive(Debug, Clone, PartialEq)]
pub struct UlmteReport {
    pub residuals: Vec<f64>,
    pub worst: f64,
}

/// Evaluates [`ulmte_residual`] on a user supplied sample set.
pub fn certify_ulmte(sys: &TransverseSystem, metric: &MetricField, samples: &[Vector]) -> Result<UlmteReport> {
    let residuals = samples.iter().map(|x| ulmte_residual(sys, metric, x)).collect::<Result<Vec<_>>>()?;
    let worst = residuals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(UlmteReport { residuals, worst })
}

/// Closed-form eigenvalue bounds of the integrated metric:
/// `p_lo = lambda_min(Q) / (2 mu)` and `p_hi = k~^2 lambda_max(Q) / (2 lambda~)`,
/// where `mu` bounds `|A(x)|` and `(k~, lambda~)` is the transversal decay.
pub fn metric_bounds(k_tilde: f64, lambda_tilde: f64, mu: f64, q: &Matrix) -> Result<(f64, f64)> {
    if !(k_tilde > 0.0 && lambda_tilde > 0.0 && mu > 0.0) {
        return Err(Error::InvalidArgument("metric bounds need positive k, lambda and mu".into()));
    }
    check_spd(q, "Q")?;
    let ev = sym_eigenvalues(q);
    Ok((ev[0] / (2.0 * mu), k_tilde * k_tilde * ev[ev.len() - 1] / (2.0 * lambda_tilde)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TulesParams {
    /// Radius of the tube around the manifold, 0.9 times `r_bound`.
    pub r: f64,
    /// Strict upper bound on the admissible radius.
    pub r_bound: f64,
    pub k: f64,
    pub lambda: f64,
}

/// Local exponential stability constants implied by a metric with bounds
/// `p_lo`, `p_hi`, the matrix `Q`, and the regularity constants `c`, `eta`.
pub fn tules_params(p_lo: f64, p_hi: f64, q: &Matrix, c: f64, eta: f64) -> Result<TulesParams> {
    if !(p_lo > 0.0 && p_hi >= p_lo && c > 0.0 && eta > 0.0) {
        return Err(Error::InvalidArgument("tules parameters need 0 < p_lo <= p_hi and c, eta > 0".into()));
    }
    check_spd(q, "Q")?;
    let qmin = min_eigenvalue(q);
    let cc = c * (1.0 + c);
    let r_bound = (p_lo / p_hi) * eta.min(qmin / (2.0 * p_hi * cc));
    let r = 0.9 * r_bound;
    Ok(TulesParams {
        r,
        r_bound,
        k: (p_hi / p_lo).sqrt(),
        lambda: qmin / (2.0 * p_hi) - r * cc * p_hi / p_lo,
    })
}

/// `V(t) = e(t)' P(x(t)) e(t)` along the nonlinear `(e, x)` solution, sampled
/// every `stride` integration steps.
pub fn lyapunov_trace(
    sys: &TransverseSystem,
    metric: &MetricField,
    e0: &Vector,
    x0: &Vector,
    horizon: f64,
    dt: f64,
    stride: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let traj = sys.simulate(e0, x0, horizon, dt)?;
    let (ne, nx) = (sys.ne(), sys.nx());
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (i, (t, z)) in traj.times.iter().zip(&traj.states).enumerate() {
        if i % stride.max(1) != 0 && i + 1 != traj.len() {
            continue;
        }
        let e = z.rows(0, ne).into_owned();
        let x = z.rows(ne, nx).into_owned();
        let p = metric.eval(&x)?;
        times.push(*t);
        values.push((e.transpose() * p * &e)[(0, 0)]);
    }
    Ok((times, values))
}

/// Spatial directional derivative `sum_k dP/dx_k v_k` by central differences.
pub fn metric_directional_derivative(metric: &MetricField, x: &Vector, v: &Vector, h: f64) -> Result<Matrix> {
    let n = metric.dim();
    let mut out = Matrix::zeros(n, n);
    for k in 0..x.len() {
        if v[k] == 0.0 {
            continue;
        }
        let hk = h * (1.0 + x[k].abs());
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[k] += hk;
        xm[k] -= hk;
        out += (metric.eval(&xp)? - metric.eval(&xm)?) * (v[k] / (2.0 * hk));
    }
    Ok(out)
}
