//! Synchronization of `m` identical agents `w_i' = f(w_i) + g(w_i) u_i`
//! through the all-to-all law
//! `u_i = ell * alpha(w_i) * (mean_j U(w_j) - U(w_i))`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::{min_eigenvalue, quadrature_weights, sym_eigenvalues, Matrix, Vector};
use crate::ode::{check_dim, integrate, integrate_variational, Trajectory, VectorField};
use crate::transverse::{estimate_decay_above_floor, DecayEstimate, MetricField, TransverseSystem, DEFAULT_TAIL_FRACTION, METRIC_HORIZON_CAP, METRIC_TAIL_TOL};

/// Diagonal distances are fitted only above this fraction of the initial value.
pub const DIST_FLOOR: f64 = 1e-10;

type MatFn = dyn Fn(&Vector) -> Matrix + Send + Sync;
type ScalarFn = dyn Fn(&Vector) -> f64 + Send + Sync;
type VecFn = dyn Fn(&Vector) -> Vector + Send + Sync;

/// `m` identical agents with drift `f`, input matrix `g`, coupling potential
/// `U`, input direction `alpha`, and gain `ell`.
#[derive(Clone)]
pub struct AgentNetwork {
    pub m: usize,
    pub f: VectorField,
    g: Arc<MatFn>,
    potential: Arc<ScalarFn>,
    alpha: Arc<VecFn>,
    pub ell: f64,
}

impl fmt::Debug for AgentNetwork {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AgentNetwork")
            .field("m", &self.m)
            .field("n", &self.f.dim())
            .field("ell", &self.ell)
            .finish()
    }
}

impl AgentNetwork {
    pub fn new(
        m: usize,
        f: VectorField,
        g: impl Fn(&Vector) -> Matrix + Send + Sync + 'static,
        potential: impl Fn(&Vector) -> f64 + Send + Sync + 'static,
        alpha: impl Fn(&Vector) -> Vector + Send + Sync + 'static,
        ell: f64,
    ) -> Result<Self> {
        if m < 2 {
            return Err(Error::InvalidArgument(format!("a network needs at least 2 agents, got {m}")));
        }
        if !(ell >= 0.0) {
            return Err(Error::InvalidArgument(format!("gain must be >= 0, got {ell}")));
        }
        Ok(Self {
            m,
            f,
            g: Arc::new(g),
            potential: Arc::new(potential),
            alpha: Arc::new(alpha),
            ell,
        })
    }

    /// Agent state dimension.
    pub fn n(&self) -> usize {
        self.f.dim()
    }

    pub fn with_gain(mut self, ell: f64) -> Self {
        self.ell = ell;
        self
    }

    pub fn g(&self, x: &Vector) -> Matrix {
        (self.g)(x)
    }

    pub fn potential(&self, x: &Vector) -> f64 {
        (self.potential)(x)
    }

    pub fn alpha(&self, x: &Vector) -> Vector {
        (self.alpha)(x)
    }

    fn agent(&self, w: &Vector, i: usize) -> Vector {
        w.rows(i * self.n(), self.n()).into_owned()
    }

    /// Closed-loop right-hand side on the stacked state.
    pub fn closed_loop(&self, w: &Vector) -> Vector {
        let n = self.n();
        let u = sync_control(self, w);
        let mut out = Vector::zeros(w.len());
        for (i, ui) in u.iter().enumerate() {
            let wi = self.agent(w, i);
            let d = self.f.eval(&wi) + self.g(&wi) * ui;
            out.rows_mut(i * n, n).copy_from(&d);
        }
        out
    }
}

/// Euclidean distance from the stacked state `w` (agents of dimension `n`)
/// to the diagonal `{w_1 = ... = w_m}`, i.e. `sqrt(sum_i |w_i - mean|^2)`.
pub fn diag_distance(w: &Vector, n: usize) -> f64 {
    let m = w.len() / n;
    let mut mean = Vector::zeros(n);
    for i in 0..m {
        mean += w.rows(i * n, n);
    }
    mean /= m as f64;
    (0..m).map(|i| (w.rows(i * n, n) - &mean).norm_squared()).sum::<f64>().sqrt()
}

/// Differences to the first agent, `e = (w_2 - w_1, ..., w_m - w_1)`.
pub fn relative_coordinates(w: &Vector, n: usize) -> Vector {
    let m = w.len() / n;
    let w1 = w.rows(0, n).into_owned();
    let mut e = Vector::zeros((m - 1) * n);
    for i in 1..m {
        e.rows_mut((i - 1) * n, n).copy_from(&(w.rows(i * n, n) - &w1));
    }
    e
}

/// `u_i = ell * alpha(w_i) * (mean_j U(w_j) - U(w_i))` for every agent.
pub fn sync_control(net: &AgentNetwork, w: &Vector) -> Vec<Vector> {
    let potentials: Vec<f64> = (0..net.m).map(|i| net.potential(&net.agent(w, i))).collect();
    // summing in sorted order makes the mean independent of agent labels
    let mut sorted = potentials.clone();
    sorted.sort_by(f64::total_cmp);
    let mean = sorted.iter().sum::<f64>() / net.m as f64;
    (0..net.m)
        .map(|i| {
            let diff = mean - potentials[i];
            // exact zero on the diagonal, independent of rounding in the mean
            if potentials.iter().all(|p| *p == potentials[i]) {
                net.alpha(&net.agent(w, i)) * 0.0
            } else {
                net.alpha(&net.agent(w, i)) * (net.ell * diff)
            }
        })
        .collect()
}

/// Closed-loop run of a network.
#[derive(Debug, Clone, PartialEq)]
pub struct SyncRun {
    pub trajectory: Trajectory,
    pub dist: Vec<f64>,
    /// `None` when the run starts on the diagonal or is too short to fit.
    pub decay: Option<DecayEstimate>,
    pub seed: u64,
}

/// Integrates the closed loop; divergence is reported with its escape time.
pub fn simulate_network(net: &AgentNetwork, w0: &Vector, horizon: f64, dt: f64, seed: u64) -> Result<SyncRun> {
    check_dim("simulate_network", net.m * net.n(), w0.len())?;
    let trajectory = integrate(|w| net.closed_loop(w), w0, horizon, dt)?;
    let dist: Vec<f64> = trajectory.states.iter().map(|w| diag_distance(w, net.n())).collect();
    let decay = if dist[0] > 0.0 {
        estimate_decay_above_floor(&trajectory.times, &dist, DIST_FLOOR, DEFAULT_TAIL_FRACTION).ok()
    } else {
        None
    };
    Ok(SyncRun {
        trajectory,
        dist,
        decay,
        seed,
    })
}

/// `int_0^window Phi(0,t) B B' Phi(0,t)' dt` for the linearization of `f`
/// along `X(x0, t)` with `B = g(X(x0, t))`.
pub fn controllability_gramian<G>(f: &VectorField, g: G, x0: &Vector, window: f64, dt: f64) -> Result<Matrix>
where
    G: Fn(&Vector) -> Matrix,
{
    if !(window > 0.0) {
        return Err(Error::InvalidArgument(format!("window must be positive, got {window}")));
    }
    let (traj, phi) = integrate_variational(f, x0, window, dt)?;
    let w = quadrature_weights(&traj.times);
    let n = f.dim();
    let mut gram = Matrix::zeros(n, n);
    for ((x, m), wi) in traj.states.iter().zip(&phi.mats).zip(&w) {
        let inv = m.clone().try_inverse().ok_or_else(|| Error::Singular("transition matrix not invertible".into()))?;
        let pb = inv * g(x);
        gram += &pb * pb.transpose() * *wi;
    }
    Ok((&gram + gram.transpose()) * 0.5)
}

/// Minimum eigenvalue of [`controllability_gramian`].
pub fn stabilizability_gramian<G>(f: &VectorField, g: G, x0: &Vector, window: f64, dt: f64) -> Result<f64>
where
    G: Fn(&Vector) -> Matrix,
{
    Ok(min_eigenvalue(&controllability_gramian(f, g, x0, window, dt)?))
}

// ---------------------------------------------------------------------------
// Two-dimensional agents with a phase singularity

/// `[[0, 1], [-2, -3]]`, eigenvalues `-1` and `-2`.
pub fn example2_generator() -> Matrix {
    Matrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, -3.0])
}

/// Coupling coefficient `1 + 2 cos(x2)`.
pub fn example2_coupling(phase: f64) -> f64 {
    1.0 + 2.0 * phase.cos()
}

/// `w1' = w2 + 2 sin(w2)`, `w2' = a`.
pub fn example2_drift(a: f64) -> VectorField {
    VectorField::new(2, move |w| Vector::from_vec(vec![w[1] + 2.0 * w[1].sin(), a]))
        .with_jacobian(|w| Matrix::from_row_slice(2, 2, &[0.0, example2_coupling(w[1]), 0.0, 0.0]))
}

/// `g = (0, 1)'`.
pub fn example2_input(_w: &Vector) -> Matrix {
    Matrix::from_column_slice(2, 1, &[0.0, 1.0])
}

/// Accumulated coupling `tau(x, t) = int_0^t (1 + 2 cos(x + s)) ds`.
pub fn example2_tau(phase: f64, t: f64) -> f64 {
    t + 2.0 * (phase + t).sin() - 2.0 * phase.sin()
}

/// Transition matrix `exp(tau M)` of `e' = (1 + 2 cos(x + t)) M e`.
pub fn example2_transition(phase: f64, t: f64) -> Matrix {
    let u = (-example2_tau(phase, t)).exp();
    let u2 = u * u;
    Matrix::from_row_slice(2, 2, &[2.0 * u - u2, u - u2, -2.0 * u + 2.0 * u2, -u + 2.0 * u2])
}

/// The agent with the linear transverse feedback
/// `u = -(1 + 2 cos(x2)) [2 3] e` as an `(e, x)`-system:
/// `F(e, x) = f(x + e) - f(x) + g u`, `G(e, x) = f(x)`, so that
/// `dF/de(0, x) = (1 + 2 cos(x2)) M`.
pub fn example2_transverse_system(a: f64) -> TransverseSystem {
    let f = example2_drift(a);
    let fg = f.clone();
    TransverseSystem::new(
        2,
        2,
        move |e, x| {
            let u = -example2_coupling(x[1]) * (2.0 * e[0] + 3.0 * e[1]);
            f.eval(&(x + e)) - f.eval(x) + Vector::from_vec(vec![0.0, u])
        },
        move |_, x| fg.eval(x),
    )
    .with_transverse_jacobian(|x| example2_generator() * example2_coupling(x[1]))
}

/// Closed-form metric data at one phase.
#[derive(Debug, Clone, PartialEq)]
pub struct Example2Metric {
    pub p: Matrix,
    pub p12: f64,
    /// `dU/dx2 = P22 / P12`.
    pub u_slope: f64,
    /// `alpha = 1 / P12`.
    pub alpha: f64,
}

/// `P(x) = int_0^inf psi(x, s)' psi(x, s) ds` by Simpson quadrature of the
/// closed-form transition matrix, with the same doubling truncation rule as
/// [`crate::transverse::compute_metric`].
pub fn example2_metric(phase: f64, horizon: f64, dt: f64) -> Result<Example2Metric> {
    if !(horizon > 0.0 && dt > 0.0) {
        return Err(Error::InvalidArgument("horizon and step must be positive".into()));
    }
    let mut t_end = horizon.min(METRIC_HORIZON_CAP);
    loop {
        let steps = (t_end / dt).round().max(2.0) as usize;
        let h = t_end / steps as f64;
        let times: Vec<f64> = (0..=steps).map(|i| i as f64 * h).collect();
        let w = quadrature_weights(&times);
        let mut p = Matrix::zeros(2, 2);
        let mut last = Matrix::zeros(2, 2);
        for (t, wi) in times.iter().zip(&w) {
            let psi = example2_transition(phase, *t);
            last = psi.transpose() * psi;
            p += &last * *wi;
        }
        let tail_ratio = last.trace() / p.trace();
        if tail_ratio <= METRIC_TAIL_TOL {
            let p = (&p + p.transpose()) * 0.5;
            let p12 = p[(0, 1)];
            return Ok(Example2Metric {
                u_slope: p[(1, 1)] / p12,
                alpha: 1.0 / p12,
                p12,
                p,
            });
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

/// `(psi' psi)_12 = 4/phi^2 - 9/phi^3 + 5/phi^4` with `phi = exp(tau)`.
pub fn example2_p12_integrand(phase: f64, t: f64) -> f64 {
    let u = (-example2_tau(phase, t)).exp();
    4.0 * u.powi(2) - 9.0 * u.powi(3) + 5.0 * u.powi(4)
}

/// Tabulated coupling data over one period of the phase.
///
/// `P22/P12` and `1/P12` are linearly interpolated between nodes; the
/// potential `U(w) = w1 + int_0^{w2} P22/P12` integrates the interpolant
/// exactly, and extends to all phases through
/// `int_0^{x + 2 pi k} = k * int_0^{2 pi} + int_0^x`.
#[derive(Debug, Clone)]
pub struct Example2Potential {
    step: f64,
    slope: Vec<f64>,
    alpha: Vec<f64>,
    entries: Vec<[f64; 3]>,
    cumulative: Vec<f64>,
}

impl Example2Potential {
    pub fn build(nodes: usize, horizon: f64, dt: f64) -> Result<Self> {
        if nodes < 4 {
            return Err(Error::InvalidArgument("potential table needs at least 4 nodes".into()));
        }
        let step = 2.0 * PI / nodes as f64;
        let mut slope = Vec::with_capacity(nodes + 1);
        let mut alpha = Vec::with_capacity(nodes + 1);
        let mut entries = Vec::with_capacity(nodes + 1);
        for i in 0..nodes {
            let m = example2_metric(i as f64 * step, horizon, dt)?;
            if !(m.p12 > 0.0) {
                return Err(Error::Singular(format!("P12 = {} at phase {}", m.p12, i as f64 * step)));
            }
            slope.push(m.u_slope);
            alpha.push(m.alpha);
            entries.push([m.p[(0, 0)], m.p12, m.p[(1, 1)]]);
        }
        slope.push(slope[0]);
        alpha.push(alpha[0]);
        entries.push(entries[0]);
        let mut cumulative = vec![0.0; nodes + 1];
        for i in 0..nodes {
            cumulative[i + 1] = cumulative[i] + 0.5 * step * (slope[i] + slope[i + 1]);
        }
        Ok(Self {
            step,
            slope,
            alpha,
            entries,
            cumulative,
        })
    }

    fn locate(&self, phase: f64) -> (f64, usize, f64) {
        let period = 2.0 * PI;
        let k = (phase / period).floor();
        let local = phase - k * period;
        let n = self.slope.len() - 1;
        let i = ((local / self.step).floor() as usize).min(n - 1);
        (k, i, local - i as f64 * self.step)
    }

    pub fn u_slope(&self, phase: f64) -> f64 {
        let (_, i, d) = self.locate(phase);
        self.slope[i] + (self.slope[i + 1] - self.slope[i]) * d / self.step
    }

    pub fn alpha(&self, phase: f64) -> f64 {
        let (_, i, d) = self.locate(phase);
        self.alpha[i] + (self.alpha[i + 1] - self.alpha[i]) * d / self.step
    }

    /// `P` at `phase`, by periodic cubic Hermite interpolation with
    /// central-difference node slopes (continuously differentiable, which
    /// the geodesic equation needs).
    pub fn metric(&self, phase: f64) -> Matrix {
        let (_, i, d) = self.locate(phase);
        let n = self.entries.len() - 1;
        let r = d / self.step;
        let (h00, h10, h01, h11) = (
            (1.0 + 2.0 * r) * (1.0 - r) * (1.0 - r),
            r * (1.0 - r) * (1.0 - r),
            r * r * (3.0 - 2.0 * r),
            r * r * (r - 1.0),
        );
        let node = |j: usize| self.entries[j % n];
        let slope = |j: usize, k: usize| 0.5 * (node(j + 1)[k] - node(j + n - 1)[k]);
        let e: Vec<f64> = (0..3)
            .map(|k| h00 * node(i)[k] + h10 * slope(i, k) + h01 * node(i + 1)[k] + h11 * slope(i + 1, k))
            .collect();
        Matrix::from_row_slice(2, 2, &[e[0], e[1], e[1], e[2]])
    }

    /// `P(w) = P(w2)` on the agent state space, with bounds from the nodes.
    pub fn metric_field(self: &Arc<Self>) -> MetricField {
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for e in &self.entries {
            let ev = sym_eigenvalues(&Matrix::from_row_slice(2, 2, &[e[0], e[1], e[1], e[2]]));
            lo = lo.min(ev[0]);
            hi = hi.max(ev[1]);
        }
        let table = self.clone();
        MetricField::new(2, Matrix::identity(2, 2), lo, hi, move |w| Ok(table.metric(w[1])))
    }

    /// `int_0^phase P22/P12`.
    pub fn phase_integral(&self, phase: f64) -> f64 {
        let (k, i, d) = self.locate(phase);
        let n = self.slope.len() - 1;
        let within = self.cumulative[i] + self.slope[i] * d + (self.slope[i + 1] - self.slope[i]) * d * d / (2.0 * self.step);
        k * self.cumulative[n] + within
    }

    /// `U(w) = w1 + int_0^{w2} P22/P12`.
    pub fn potential(&self, w: &Vector) -> f64 {
        w[0] + self.phase_integral(w[1])
    }
}

/// Default horizon, step and node count of the potential table.
pub const EXAMPLE2_TABLE: (usize, f64, f64) = (256, 20.0, 0.005);

/// The synchronization example with `m` agents, gain `ell` and drift `a`.
pub fn example2_network(m: usize, ell: f64, a: f64) -> Result<AgentNetwork> {
    example2_network_with(&example2_table()?, m, ell, a)
}

/// The potential table with the default resolution.
pub fn example2_table() -> Result<Arc<Example2Potential>> {
    let (nodes, horizon, dt) = EXAMPLE2_TABLE;
    Ok(Arc::new(Example2Potential::build(nodes, horizon, dt)?))
}

/// [`example2_network`] sharing an existing table.
pub fn example2_network_with(table: &Arc<Example2Potential>, m: usize, ell: f64, a: f64) -> Result<AgentNetwork> {
    let (tu, ta) = (table.clone(), table.clone());
    AgentNetwork::new(
        m,
        example2_drift(a),
        example2_input,
        move |w| tu.potential(w),
        move |w| Vector::from_element(1, ta.alpha(w[1])),
        ell,
    )
}

/// Agents drawn uniformly from `[lo, hi]^n` with a seeded generator.
pub fn seeded_uniform_agents(m: usize, n: usize, lo: f64, hi: f64, seed: u64) -> Vector {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    Vector::from_iterator(m * n, (0..m * n).map(|_| rng.gen_range(lo..hi)))
}
