//! Fixed-step classical Runge-Kutta integration, finite-difference Jacobians
//! and the variational (sensitivity) equation.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::{is_finite_matrix, is_finite_vector, Matrix, Vector};

/// Base relative step for central finite differences. The actual step for
/// component `j` is `DEFAULT_FD_STEP * (1 + |x_j|)`.
pub const DEFAULT_FD_STEP: f64 = 1e-6;

type EvalFn = dyn Fn(&Vector) -> Vector + Send + Sync;
type JacFn = dyn Fn(&Vector) -> Matrix + Send + Sync;

/// An autonomous vector field `x' = f(x)` with an optional analytic Jacobian.
#[derive(Clone)]
pub struct VectorField {
    dim: usize,
    eval: Arc<EvalFn>,
    jac: Option<Arc<JacFn>>,
}

impl fmt::Debug for VectorField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VectorField")
            .field("dim", &self.dim)
            .field("analytic_jacobian", &self.jac.is_some())
            .finish()
    }
}

impl VectorField {
    pub fn new(dim: usize, eval: impl Fn(&Vector) -> Vector + Send + Sync + 'static) -> Self {
        Self {
            dim,
            eval: Arc::new(eval),
            jac: None,
        }
    }

    pub fn with_jacobian(mut self, jac: impl Fn(&Vector) -> Matrix + Send + Sync + 'static) -> Self {
        self.jac = Some(Arc::new(jac));
        self
    }

    /// Linear field `x' = A x` with its exact Jacobian.
    pub fn linear(a: Matrix) -> Self {
        assert!(a.is_square(), "linear field needs a square matrix");
        let a2 = a.clone();
        Self::new(a.nrows(), move |x| &a * x).with_jacobian(move |_| a2.clone())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eval(&self, x: &Vector) -> Vector {
        (self.eval)(x)
    }

    pub fn has_analytic_jacobian(&self) -> bool {
        self.jac.is_some()
    }

    /// Analytic Jacobian when available, central differences otherwise.
    pub fn jacobian(&self, x: &Vector) -> Result<Matrix> {
        match &self.jac {
            Some(j) => {
                let m = j(x);
                if is_finite_matrix(&m) {
                    Ok(m)
                } else {
                    Err(Error::Evaluation("analytic Jacobian".into()))
                }
            }
            None => jacobian_fd(self, x, DEFAULT_FD_STEP),
        }
    }

    pub(crate) fn jacobian_unchecked(&self, x: &Vector) -> Matrix {
        match &self.jac {
            Some(j) => j(x),
            None => jacobian_fd_raw(|y| self.eval(y), x, DEFAULT_FD_STEP),
        }
    }

    /// Largest relative disagreement between the analytic Jacobian and
    /// central differences over `probes`. Returns 0 when no analytic
    /// Jacobian is attached.
    pub fn jacobian_mismatch(&self, probes: &[Vector]) -> Result<f64> {
        let Some(j) = &self.jac else { return Ok(0.0) };
        let mut worst: f64 = 0.0;
        for x in probes {
            let fd = jacobian_fd(self, x, DEFAULT_FD_STEP)?;
            let an = j(x);
            let scale = an.amax().max(1.0);
            worst = worst.max((fd - an).amax() / scale);
        }
        Ok(worst)
    }
}

/// A solution sampled on a fixed grid. The final interval may be shorter
/// than `dt` when the horizon is not a multiple of the step.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub t0: f64,
    pub dt: f64,
    pub times: Vec<f64>,
    pub states: Vec<Vector>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states.first().map_or(0, |s| s.len())
    }

    pub fn final_state(&self) -> &Vector {
        self.states.last().expect("trajectory has at least the initial state")
    }

    /// States as a `(steps + 1) x dim` matrix.
    pub fn state_matrix(&self) -> Matrix {
        Matrix::from_fn(self.len(), self.dim(), |i, j| self.states[i][j])
    }

    /// Restriction of every state to the components `range`.
    pub fn components(&self, range: std::ops::Range<usize>) -> Trajectory {
        Trajectory {
            t0: self.t0,
            dt: self.dt,
            times: self.times.clone(),
            states: self.states.iter().map(|s| s.rows(range.start, range.len()).into_owned()).collect(),
        }
    }
}

/// Fundamental matrices `Phi(t, 0)` on the grid of a companion [`Trajectory`].
#[derive(Debug, Clone, PartialEq)]
pub struct FundamentalMatrixPath {
    pub times: Vec<f64>,
    pub mats: Vec<Matrix>,
}

impl FundamentalMatrixPath {
    pub fn final_matrix(&self) -> &Matrix {
        self.mats.last().expect("path has at least the identity")
    }
}

/// Step sizes covering `[0, horizon]` with a reduced final step if needed.
fn step_plan(horizon: f64, dt: f64) -> Result<(usize, Option<f64>)> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidArgument(format!("step must be positive, got {dt}")));
    }
    if !(horizon >= 0.0) || !horizon.is_finite() {
        return Err(Error::InvalidArgument(format!("horizon must be >= 0, got {horizon}")));
    }
    let ratio = horizon / dt;
    let full = (ratio + 1e-9).floor();
    let rest = horizon - full * dt;
    let partial = if rest > 1e-9 * dt { Some(rest) } else { None };
    Ok((full as usize, partial))
}

fn rk4_step<F: Fn(&Vector) -> Vector>(rhs: &F, x: &Vector, h: f64) -> Vector {
    let k1 = rhs(x);
    let k2 = rhs(&(x + &k1 * (0.5 * h)));
    let k3 = rhs(&(x + &k2 * (0.5 * h)));
    let k4 = rhs(&(x + &k3 * h));
    x + (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0)
}

/// Integrates `x' = rhs(x)` from `x0` over `[0, horizon]` with the classical
/// fourth-order scheme.
pub fn integrate<F>(rhs: F, x0: &Vector, horizon: f64, dt: f64) -> Result<Trajectory>
where
    F: Fn(&Vector) -> Vector,
{
    let (full, partial) = step_plan(horizon, dt)?;
    if !is_finite_vector(x0) {
        return Err(Error::Divergence { time: 0.0 });
    }
    let steps = full + usize::from(partial.is_some());
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    times.push(0.0);
    states.push(x0.clone());
    let mut x = x0.clone();
    for k in 0..steps {
        let (h, t) = if k < full {
            (dt, (k + 1) as f64 * dt)
        } else {
            (partial.unwrap_or(dt), horizon)
        };
        x = rk4_step(&rhs, &x, h);
        if !is_finite_vector(&x) {
            return Err(Error::Divergence { time: t });
        }
        times.push(t);
        states.push(x.clone());
    }
    Ok(Trajectory {
        t0: 0.0,
        dt,
        times,
        states,
    })
}

/// Final state of the flow of `rhs` after time `t`; negative `t` flows backward.
pub fn flow_map<F>(rhs: F, x: &Vector, t: f64, dt: f64) -> Result<Vector>
where
    F: Fn(&Vector) -> Vector,
{
    let traj = if t >= 0.0 {
        integrate(rhs, x, t, dt)?
    } else {
        integrate(|y| -rhs(y), x, -t, dt)?
    };
    Ok(traj.final_state().clone())
}

pub fn integrate_flow(field: &VectorField, x0: &Vector, horizon: f64, dt: f64) -> Result<Trajectory> {
    check_dim("integrate_flow", field.dim(), x0.len())?;
    integrate(|x| field.eval(x), x0, horizon, dt)
}

pub(crate) fn check_dim(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension { context, expected, got })
    }
}

pub(crate) fn jacobian_fd_raw<F>(f: F, x: &Vector, h: f64) -> Matrix
where
    F: Fn(&Vector) -> Vector,
{
    let n = x.len();
    let mut cols: Vec<Vector> = Vec::with_capacity(n);
    for j in 0..n {
        let hj = h * (1.0 + x[j].abs());
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += hj;
        xm[j] -= hj;
        cols.push((f(&xp) - f(&xm)) / (2.0 * hj));
    }
    if cols.is_empty() {
        return Matrix::zeros(f(x).len(), 0);
    }
    Matrix::from_columns(&cols)
}

/// Central-difference Jacobian of an arbitrary map; column `j` uses the step
/// `h * (1 + |x_j|)`.
pub fn jacobian_of<F>(f: F, x: &Vector, h: f64) -> Result<Matrix>
where
    F: Fn(&Vector) -> Vector,
{
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("finite-difference step must be positive, got {h}")));
    }
    let m = jacobian_fd_raw(f, x, h);
    if is_finite_matrix(&m) {
        Ok(m)
    } else {
        Err(Error::Evaluation("finite-difference Jacobian".into()))
    }
}

pub fn jacobian_fd(field: &VectorField, x: &Vector, h: f64) -> Result<Matrix> {
    check_dim("jacobian_fd", field.dim(), x.len())?;
    jacobian_of(|y| field.eval(y), x, h)
}

fn pack(x: &Vector, phi: &Matrix) -> Vector {
    let nx = x.len();
    let mut z = Vector::zeros(nx + phi.len());
    z.rows_mut(0, nx).copy_from(x);
    z.rows_mut(nx, phi.len()).copy_from_slice(phi.as_slice());
    z
}

fn unpack(z: &Vector, nx: usize, ne: usize) -> (Vector, Matrix) {
    let x = z.rows(0, nx).into_owned();
    let phi = Matrix::from_column_slice(ne, ne, &z.as_slice()[nx..nx + ne * ne]);
    (x, phi)
}

/// Co-integrates `x' = drift(x)` with the transition matrix of
/// `delta' = generator(x(t)) delta`, `delta(0) = I`.
///
/// `generator` must return an `ne x ne` matrix; the state dimension and the
/// transverse dimension may differ.
pub fn integrate_transition<D, A>(
    drift: D,
    generator: A,
    x0: &Vector,
    ne: usize,
    horizon: f64,
    dt: f64,
) -> Result<(Trajectory, FundamentalMatrixPath)>
where
    D: Fn(&Vector) -> Vector,
    A: Fn(&Vector) -> Matrix,
{
    let nx = x0.len();
    let z0 = pack(x0, &Matrix::identity(ne, ne));
    let rhs = |z: &Vector| {
        let (x, phi) = unpack(z, nx, ne);
        let a = generator(&x);
        pack(&drift(&x), &(a * phi))
    };
    let traj = integrate(rhs, &z0, horizon, dt)?;
    let mut states = Vec::with_capacity(traj.len());
    let mut mats = Vec::with_capacity(traj.len());
    for z in &traj.states {
        let (x, phi) = unpack(z, nx, ne);
        states.push(x);
        mats.push(phi);
    }
    Ok((
        Trajectory {
            t0: traj.t0,
            dt,
            times: traj.times.clone(),
            states,
        },
        FundamentalMatrixPath { times: traj.times, mats },
    ))
}

/// Flow of `field` together with its fundamental solution
/// `delta' = (df/dx)(X(x0, t)) delta`, `delta(0) = I`.
pub fn integrate_variational(
    field: &VectorField,
    x0: &Vector,
    horizon: f64,
    dt: f64,
) -> Result<(Trajectory, FundamentalMatrixPath)> {
    check_dim("integrate_variational", field.dim(), x0.len())?;
    integrate_transition(
        |x| field.eval(x),
        |x| field.jacobian_unchecked(x),
        x0,
        field.dim(),
        horizon,
        dt,
    )
}
