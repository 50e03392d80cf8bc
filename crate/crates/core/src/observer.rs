//! Observers of the form `xhat' = f(xhat) + K(y, xhat)` for `x' = f(x)`,
//! `y = h(x)`: detectability probes, the Riemannian gain, simulation, and
//! the planar oscillator `x1' = x2^3`, `x2' = -x1`, `y = x1`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::{kernel_basis, max_eigenvalue, min_eigenvalue, quadrature_weights, Matrix, Vector};
use crate::ode::{check_dim, integrate, integrate_variational, jacobian_of, Trajectory, VectorField, DEFAULT_FD_STEP};
use crate::transverse::{estimate_decay_above_floor, flow_derivative, stack, DecayEstimate, MetricField, DEFAULT_FLOW_STEP, DEFAULT_TAIL_FRACTION};

/// Singular values of the output Jacobian below this count as zero.
pub const RANK_TOL: f64 = 1e-10;
/// Error traces are fitted only above this fraction of the initial error.
pub const ERROR_FLOOR: f64 = 1e-10;

type OutFn = dyn Fn(&Vector) -> Vector + Send + Sync;
type OutJacFn = dyn Fn(&Vector) -> Matrix + Send + Sync;
type CorrectionFn = dyn Fn(&Vector, &Vector) -> Vector + Send + Sync;

/// Measurement map `x -> y` with an optional analytic Jacobian.
#[derive(Clone)]
pub struct OutputMap {
    out_dim: usize,
    eval: Arc<OutFn>,
    jac: Option<Arc<OutJacFn>>,
}

impl fmt::Debug for OutputMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OutputMap").field("out_dim", &self.out_dim).finish()
    }
}

impl OutputMap {
    pub fn new(out_dim: usize, eval: impl Fn(&Vector) -> Vector + Send + Sync + 'static) -> Self {
        Self {
            out_dim,
            eval: Arc::new(eval),
            jac: None,
        }
    }

    pub fn with_jacobian(mut self, jac: impl Fn(&Vector) -> Matrix + Send + Sync + 'static) -> Self {
        self.jac = Some(Arc::new(jac));
        self
    }

    /// `h(x) = C x`.
    pub fn linear(c: Matrix) -> Self {
        let c2 = c.clone();
        Self::new(c.nrows(), move |x| &c * x).with_jacobian(move |_| c2.clone())
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn eval(&self, x: &Vector) -> Vector {
        (self.eval)(x)
    }

    pub fn jacobian(&self, x: &Vector) -> Result<Matrix> {
        match &self.jac {
            Some(j) => Ok(j(x)),
            None => jacobian_of(|y| self.eval(y), x, DEFAULT_FD_STEP),
        }
    }
}

/// Plant `f`, output `h` and correction term `K(y, xhat)`.
#[derive(Clone)]
pub struct ObserverProblem {
    pub f: VectorField,
    pub h: OutputMap,
    correction: Arc<CorrectionFn>,
}

impl fmt::Debug for ObserverProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ObserverProblem").field("f", &self.f).field("h", &self.h).finish()
    }
}

impl ObserverProblem {
    pub fn new(f: VectorField, h: OutputMap, correction: impl Fn(&Vector, &Vector) -> Vector + Send + Sync + 'static) -> Self {
        Self {
            f,
            h,
            correction: Arc::new(correction),
        }
    }

    pub fn correction(&self, y: &Vector, xhat: &Vector) -> Vector {
        (self.correction)(y, xhat)
    }

    /// Largest `|K(h(x), x)|` over `probes`; a well-posed observer has zero.
    pub fn diagonal_defect(&self, probes: &[Vector]) -> f64 {
        probes.iter().map(|x| self.correction(&self.h.eval(x), x).amax()).fold(0.0, f64::max)
    }
}

/// Outcome of a kernel-restricted residual evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelResidual {
    /// Largest eigenvalue of the restricted form, `-inf` when the kernel is trivial.
    pub value: f64,
    pub kernel_dim: usize,
    /// The output Jacobian is nonzero but not of full row rank.
    pub rank_deficient: bool,
}

/// A metric certified for R-detectability on a sample set.
#[derive(Debug, Clone)]
pub struct RDetectCertificate {
    pub metric: MetricField,
    pub q_lo: f64,
    pub worst_residual: f64,
    pub samples: String,
}

impl RDetectCertificate {
    pub fn is_valid(&self) -> bool {
        self.worst_residual <= 0.0
    }
}

/// `int_0^window Phi' C' C Phi dt` along `X(x0, t)` with
/// `C = dh/dx(X(x0, t))`, by Simpson on the integration grid.
pub fn observability_gramian(f: &VectorField, h: &OutputMap, x0: &Vector, window: f64, dt: f64) -> Result<Matrix> {
    if !(window > 0.0) {
        return Err(Error::InvalidArgument(format!("window must be positive, got {window}")));
    }
    let (traj, phi) = integrate_variational(f, x0, window, dt)?;
    let w = quadrature_weights(&traj.times);
    let n = f.dim();
    let mut g = Matrix::zeros(n, n);
    for ((x, m), wi) in traj.states.iter().zip(&phi.mats).zip(&w) {
        let cphi = h.jacobian(x)? * m;
        g += cphi.transpose() * cphi * *wi;
    }
    Ok((&g + g.transpose()) * 0.5)
}

/// Minimum eigenvalue of the observability Gramian; positive values certify
/// detectability of the linearization along the solution through `x0`.
pub fn detectability_gramian(f: &VectorField, h: &OutputMap, x0: &Vector, window: f64, dt: f64) -> Result<f64> {
    Ok(min_eigenvalue(&observability_gramian(f, h, x0, window, dt)?))
}

/// Worst value of `v' d_f P v + 2 v' P df/dx v + q_lo v' P v` over unit `v`
/// in the kernel of `dh/dx(x)`.
pub fn r_detectability_residual(f: &VectorField, h: &OutputMap, metric: &MetricField, q_lo: f64, x: &Vector) -> Result<KernelResidual> {
    check_dim("r_detectability_residual", f.dim(), x.len())?;
    let c = h.jacobian(x)?;
    let basis = kernel_basis(&c, RANK_TOL);
    let kernel_dim = basis.ncols();
    let rank = f.dim() - kernel_dim;
    let rank_deficient = c.amax() > RANK_TOL && rank < c.nrows();
    if kernel_dim == 0 {
        return Ok(KernelResidual {
            value: f64::NEG_INFINITY,
            kernel_dim,
            rank_deficient,
        });
    }
    let p = metric.eval(x)?;
    let dp = flow_derivative(metric, |y| f.eval(y), x, DEFAULT_FLOW_STEP)?;
    let j = f.jacobian(x)?;
    let pj = &p * &j;
    let form = dp + &pj + pj.transpose() + &p * q_lo;
    let restricted = basis.transpose() * form * &basis;
    Ok(KernelResidual {
        value: max_eigenvalue(&((&restricted + restricted.transpose()) * 0.5)),
        kernel_dim,
        rank_deficient,
    })
}

/// Evaluates [`r_detectability_residual`] on `samples` and packages the result.
pub fn certify_r_detectability(
    f: &VectorField,
    h: &OutputMap,
    metric: &MetricField,
    q_lo: f64,
    samples: &[Vector],
    description: &str,
) -> Result<RDetectCertificate> {
    let mut worst = f64::NEG_INFINITY;
    for x in samples {
        worst = worst.max(r_detectability_residual(f, h, metric, q_lo, x)?.value);
    }
    Ok(RDetectCertificate {
        metric: metric.clone(),
        q_lo,
        worst_residual: worst,
        samples: description.to_string(),
    })
}

/// `K(y, x) = k P(x)^{-1} dh/dx(x)' (y - h(x))`.
pub fn riemannian_gain(metric: &MetricField, h: &OutputMap, k_gain: f64, x: &Vector, y: &Vector) -> Result<Vector> {
    let p = metric.eval(x)?;
    let rhs = h.jacobian(x)?.transpose() * (y - h.eval(x)) * k_gain;
    let lo = min_eigenvalue(&p);
    p.cholesky().map(|ch| ch.solve(&rhs)).ok_or(Error::NotPositiveDefinite(lo))
}

/// Plant and observer trajectories with the estimation error.
#[derive(Debug, Clone, PartialEq)]
pub struct ObserverRun {
    pub plant: Trajectory,
    pub estimate: Trajectory,
    pub times: Vec<f64>,
    pub errors: Vec<f64>,
    /// `None` when the observer starts on the plant state.
    pub decay: Option<DecayEstimate>,
}

/// Integrates the plant and the observer together on one grid.
pub fn simulate_observer(prob: &ObserverProblem, x0: &Vector, xhat0: &Vector, horizon: f64, dt: f64) -> Result<ObserverRun> {
    let n = prob.f.dim();
    check_dim("simulate_observer (x0)", n, x0.len())?;
    check_dim("simulate_observer (xhat0)", n, xhat0.len())?;
    let rhs = |z: &Vector| {
        let x = z.rows(0, n).into_owned();
        let xh = z.rows(n, n).into_owned();
        let y = prob.h.eval(&x);
        stack(&prob.f.eval(&x), &(prob.f.eval(&xh) + prob.correction(&y, &xh)))
    };
    let traj = integrate(rhs, &stack(x0, xhat0), horizon, dt)?;
    let plant = traj.components(0..n);
    let estimate = traj.components(n..2 * n);
    let errors: Vec<f64> = plant.states.iter().zip(&estimate.states).map(|(a, b)| (b - a).norm()).collect();
    let decay = if errors[0] > 0.0 {
        Some(estimate_decay_above_floor(&traj.times, &errors, ERROR_FLOOR, DEFAULT_TAIL_FRACTION)?)
    } else {
        None
    };
    Ok(ObserverRun {
        plant,
        estimate,
        times: traj.times,
        errors,
        decay,
    })
}

// ---------------------------------------------------------------------------
// Planar oscillator example

/// `x1' = x2^3`, `x2' = -x1`.
pub fn example1_field() -> VectorField {
    VectorField::new(2, |x| Vector::from_vec(vec![x[1].powi(3), -x[0]]))
        .with_jacobian(|x| Matrix::from_row_slice(2, 2, &[0.0, 3.0 * x[1] * x[1], -1.0, 0.0]))
}

/// `y = x1`.
pub fn example1_output() -> OutputMap {
    OutputMap::linear(Matrix::from_row_slice(1, 2, &[1.0, 0.0]))
}

/// The conserved energy `x1^2 / 2 + x2^4 / 4`; its level sets are invariant.
pub fn example1_energy(x: &Vector) -> f64 {
    x[0] * x[0] / 2.0 + x[1].powi(4) / 4.0
}

/// Jacobian of the observer error dynamics `xhat - x` with the selected gain,
/// `df/dx + L dh/dx = [[-3 x2^2, 3 x2^2], [-3 x2^2, 0]]`.
///
/// Since `K(h(x), x) = 0` forces `dK/dxhat = -dK/dy dh/dx`, the error
/// generator is `df/dx - dK/dy dh/dx`; the gain `L` enters through
/// `dK/dy = -L`.
pub fn example1_error_generator(x: &Vector) -> Matrix {
    let s = 3.0 * x[1] * x[1];
    Matrix::from_row_slice(2, 2, &[-s, s, -s, 0.0])
}

/// Closed-form metric at `x` and `r(x) = sqrt(2 x1^2 + x2^4)`.
pub fn example1_metric(x: &Vector) -> Result<(Matrix, f64)> {
    let (x1, x2) = (x[0], x[1]);
    let r = (2.0 * x1 * x1 + x2.powi(4)).sqrt();
    if !(r > 0.0) {
        return Err(Error::Singular(format!("metric undefined at ({x1}, {x2})")));
    }
    let sr = r.sqrt();
    let p22 = r + x1 * x2 / sr + x2 * x2;
    let p12 = -(5.0 / 24.0) * x2 * x2 / sr - sr / 3.0;
    let p11 = 2.0 + p12 * p12 / (p22 - r / 4.0);
    Ok((Matrix::from_row_slice(2, 2, &[p11, p12, p12, p22]), r))
}

/// [`example1_metric`] as a field with the bounds `eps I <= P <= (12 / eps) I`
/// valid on the annulus `C(eps)`. `Q` is unused for this metric and set to `I`.
pub fn example1_metric_field(eps: f64) -> MetricField {
    MetricField::new(2, Matrix::identity(2, 2), eps, 12.0 / eps, |x| example1_metric(x).map(|(p, _)| p))
}

/// Correction terms available for the oscillator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Example1Correction {
    /// Output injection with `dK/dy = -L`, `L = (-3 x2^2, -3 x2^2 + 1)'`, i.e.
    /// `K(y, x) = (3 x2^2, 3 x2^2 - 1)' (y - x1)`. The error dynamics then
    /// linearize to `df/dx + L dh/dx` (see [`example1_error_generator`]).
    SelectedGain,
    /// `K(y, x) = k P(x)^{-1} (1, 0)' (y - x1)` with the closed-form metric.
    Riemannian { k_gain: f64 },
}

pub fn example1_problem(correction: Example1Correction) -> ObserverProblem {
    match correction {
        Example1Correction::SelectedGain => ObserverProblem::new(example1_field(), example1_output(), |y, x| {
            let s = 3.0 * x[1] * x[1];
            Vector::from_vec(vec![s, s - 1.0]) * (y[0] - x[0])
        }),
        Example1Correction::Riemannian { k_gain } => ObserverProblem::new(example1_field(), example1_output(), move |y, x| {
            let innov = y[0] - x[0];
            if innov == 0.0 {
                return Vector::zeros(2);
            }
            match example1_metric(x) {
                Ok((p, _)) => {
                    let det = p[(0, 0)] * p[(1, 1)] - p[(0, 1)] * p[(0, 1)];
                    Vector::from_vec(vec![p[(1, 1)], -p[(0, 1)]]) * (k_gain * innov / det)
                }
                Err(_) => Vector::from_element(2, f64::NAN),
            }
        }),
    }
}

/// Grid on `C(eps) = {eps <= x1^2/2 + x2^4/4 <= 1/eps}`: `n_levels` energy
/// levels spaced geometrically from `eps` to `1/eps`, each sampled at
/// `n_angles` points of the parameterization
/// `x1 = sqrt(2c) cos(theta)`, `x2 = sign(sin theta) (4c)^(1/4) |sin theta|^(1/2)`.
pub fn annulus_grid(eps: f64, n_levels: usize, n_angles: usize) -> Vec<Vector> {
    let mut pts = Vec::with_capacity(n_levels * n_angles);
    let (lo, hi) = (eps.ln(), (1.0 / eps).ln());
    for i in 0..n_levels {
        let s = if n_levels == 1 { 0.0 } else { i as f64 / (n_levels - 1) as f64 };
        let c = (lo + s * (hi - lo)).exp();
        for j in 0..n_angles {
            let theta = 2.0 * PI * (j as f64 + 0.5) / n_angles as f64;
            pts.push(annulus_point(c, theta));
        }
    }
    pts
}

/// The point of energy `c` at parameter `theta` (see [`annulus_grid`]).
pub fn annulus_point(c: f64, theta: f64) -> Vector {
    let (s, co) = theta.sin_cos();
    Vector::from_vec(vec![(2.0 * c).sqrt() * co, s.signum() * (4.0 * c).powf(0.25) * s.abs().sqrt()])
}

/// Period of the oscillator orbit through `x0`, from two consecutive upward
/// crossings of `x1 = 0` (linear interpolation between grid points).
pub fn example1_period(x0: &Vector, dt: f64) -> Result<f64> {
    let f = example1_field();
    // the period shrinks with energy; 40 time units covers C(0.1) generously
    let horizon = 40.0 / example1_energy(x0).max(1e-3).powf(0.25);
    let traj = integrate(|x| f.eval(x), x0, horizon, dt)?;
    let mut crossings = Vec::new();
    for k in 1..traj.len() {
        let (a, b) = (traj.states[k - 1][0], traj.states[k][0]);
        if a < 0.0 && b >= 0.0 {
            let s = a / (a - b);
            crossings.push(traj.times[k - 1] + s * (traj.times[k] - traj.times[k - 1]));
            if crossings.len() == 2 {
                return Ok(crossings[1] - crossings[0]);
            }
        }
    }
    Err(Error::InvalidArgument("orbit did not close within the search horizon".into()))
}
