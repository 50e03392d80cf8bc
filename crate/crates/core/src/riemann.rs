//! Lengths, geodesics and distances under a state-dependent metric `P(x)`.

use std::cell::RefCell;

use crate::error::{Error, Result};
use crate::linalg::{min_eigenvalue, quadrature_weights, Matrix, Vector};
use crate::ode::{check_dim, flow_map, integrate, integrate_flow, VectorField};
use crate::sync::AgentNetwork;
use crate::transverse::MetricField;

/// Central-difference step for `dP/dx`.
pub const METRIC_FD_STEP: f64 = 1e-5;
/// Relative drift of the metric speed beyond which a shot is rejected.
pub const SPEED_DRIFT_TOL: f64 = 1e-3;

/// A sampled path `s -> gamma(s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSample {
    pub params: Vec<f64>,
    pub points: Vec<Vector>,
    pub velocities: Option<Vec<Vector>>,
}

impl PathSample {
    pub fn new(params: Vec<f64>, points: Vec<Vector>, velocities: Option<Vec<Vector>>) -> Result<Self> {
        if params.len() < 2 || params.len() != points.len() {
            return Err(Error::InvalidArgument(format!(
                "path needs >= 2 samples with matching params, got {} params and {} points",
                params.len(),
                points.len()
            )));
        }
        if params.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument("path params must be strictly increasing".into()));
        }
        if let Some(v) = &velocities {
            check_dim("path velocities", points.len(), v.len())?;
        }
        Ok(Self {
            params,
            points,
            velocities,
        })
    }

    /// Straight segment from `a` to `b` on `n` uniform intervals of `[0, 1]`.
    pub fn segment(a: &Vector, b: &Vector, n: usize) -> Self {
        let n = n.max(1);
        let params: Vec<f64> = (0..=n).map(|i| i as f64 / n as f64).collect();
        let points = params.iter().map(|s| a + (b - a) * *s).collect();
        let velocities = Some(vec![b - a; n + 1]);
        Self {
            params,
            points,
            velocities,
        }
    }

    pub fn start(&self) -> &Vector {
        &self.points[0]
    }

    pub fn end(&self) -> &Vector {
        &self.points[self.points.len() - 1]
    }

    /// Velocities as stored, or second-order differences of the points.
    pub fn velocities(&self) -> Vec<Vector> {
        if let Some(v) = &self.velocities {
            return v.clone();
        }
        let (s, x) = (&self.params, &self.points);
        let n = s.len();
        if n == 2 {
            let d = (&x[1] - &x[0]) / (s[1] - s[0]);
            return vec![d.clone(), d];
        }
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let (a, b, c) = match i {
                0 => (0, 1, 2),
                i if i == n - 1 => (n - 3, n - 2, n - 1),
                i => (i - 1, i, i + 1),
            };
            // derivative at s[i] of the quadratic through three samples
            let (sa, sb, sc) = (s[a], s[b], s[c]);
            let t = s[i];
            let la = (2.0 * t - sb - sc) / ((sa - sb) * (sa - sc));
            let lb = (2.0 * t - sa - sc) / ((sb - sa) * (sb - sc));
            let lc = (2.0 * t - sa - sb) / ((sc - sa) * (sc - sb));
            out.push(&x[a] * la + &x[b] * lb + &x[c] * lc);
        }
        out
    }
}

fn speed_squared(p: &Matrix, v: &Vector) -> f64 {
    v.dot(&(p * v))
}

/// `L = int sqrt(gamma' P(gamma) gamma') ds` by composite Simpson.
pub fn path_length(metric: &MetricField, path: &PathSample) -> Result<f64> {
    let vel = path.velocities();
    let w = quadrature_weights(&path.params);
    let mut total = 0.0;
    for ((x, v), wi) in path.points.iter().zip(&vel).zip(&w) {
        let p = metric.eval(x)?;
        if p.clone().cholesky().is_none() {
            return Err(Error::NotPositiveDefinite(min_eigenvalue(&p)));
        }
        total += wi * speed_squared(&p, v).max(0.0).sqrt();
    }
    Ok(total)
}

/// Partial derivatives `dP/dx_k` by central differences.
pub fn metric_partials(metric: &MetricField, x: &Vector, h: f64) -> Result<Vec<Matrix>> {
    (0..x.len())
        .map(|k| {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[k] += h;
            xm[k] -= h;
            Ok((metric.eval(&xp)? - metric.eval(&xm)?) / (2.0 * h))
        })
        .collect()
}

/// `gamma''` solving `P gamma'' = 1/2 [v' dP_k v]_k - sum_k v_k dP_k v`.
pub fn geodesic_acceleration(metric: &MetricField, x: &Vector, v: &Vector) -> Result<Vector> {
    let p = metric.eval(x)?;
    let dp = metric_partials(metric, x, METRIC_FD_STEP)?;
    let n = x.len();
    let mut rhs = Vector::zeros(n);
    for (k, dpk) in dp.iter().enumerate() {
        let dv = dpk * v;
        rhs[k] += 0.5 * v.dot(&dv);
        rhs -= dv * v[k];
    }
    let chol = p.clone().cholesky().ok_or_else(|| Error::NotPositiveDefinite(min_eigenvalue(&p)))?;
    Ok(chol.solve(&rhs))
}

/// Integrates the geodesic equation from `x` with initial velocity `v` over `[0, s_end]`.
pub fn geodesic_shoot(metric: &MetricField, x: &Vector, v: &Vector, s_end: f64, ds: f64) -> Result<PathSample> {
    if !(ds > 0.0) {
        return Err(Error::InvalidArgument(format!("ds must be positive, got {ds}")));
    }
    check_dim("geodesic_shoot", x.len(), v.len())?;
    let n = x.len();
    let failure: RefCell<Option<Error>> = RefCell::new(None);
    let rhs = |z: &Vector| {
        let (q, w) = (z.rows(0, n).into_owned(), z.rows(n, n).into_owned());
        match geodesic_acceleration(metric, &q, &w) {
            Ok(a) => {
                let mut out = Vector::zeros(2 * n);
                out.rows_mut(0, n).copy_from(&w);
                out.rows_mut(n, n).copy_from(&a);
                out
            }
            Err(e) => {
                failure.borrow_mut().get_or_insert(e);
                Vector::from_element(2 * n, f64::NAN)
            }
        }
    };
    let mut z0 = Vector::zeros(2 * n);
    z0.rows_mut(0, n).copy_from(x);
    z0.rows_mut(n, n).copy_from(v);
    let traj = integrate(rhs, &z0, s_end, ds);
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    let traj = traj?;
    let points: Vec<Vector> = traj.states.iter().map(|z| z.rows(0, n).into_owned()).collect();
    let velocities: Vec<Vector> = traj.states.iter().map(|z| z.rows(n, n).into_owned()).collect();
    let speed0 = speed_squared(&metric.eval(x)?, v);
    if speed0 > 0.0 {
        let mut drift: f64 = 0.0;
        for (q, w) in points.iter().zip(&velocities) {
            drift = drift.max((speed_squared(&metric.eval(q)?, w) - speed0).abs() / speed0);
        }
        if drift > SPEED_DRIFT_TOL {
            return Err(Error::SpeedDrift(drift));
        }
    }
    PathSample::new(traj.times, points, Some(velocities))
}

/// Shooting parameters for [`geodesic_distance`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShootingOptions {
    /// Integration step on `s in [0, 1]`.
    pub ds: f64,
    /// Endpoint tolerance, relative to `1 + |x2 - x1|`.
    pub tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
    /// Stages of the endpoint continuation tried after a failed direct
    /// shooting; `0` or `1` disables it.
    pub continuation: usize,
}

impl Default for ShootingOptions {
    fn default() -> Self {
        Self {
            ds: 1.0 / 64.0,
            tol: 1e-10,
            max_iter: 50,
            max_halvings: 20,
            continuation: 32,
        }
    }
}

/// A connecting path and its length.
#[derive(Debug, Clone, PartialEq)]
pub struct Geodesic {
    pub distance: f64,
    pub path: PathSample,
    /// `false` when shooting failed and `path` is the straight chord.
    pub converged: bool,
    pub iterations: usize,
    pub residual: f64,
}

fn shoot_end(metric: &MetricField, x1: &Vector, v: &Vector, ds: f64) -> Option<(PathSample, Vector)> {
    let path = geodesic_shoot(metric, x1, v, 1.0, ds).ok()?;
    let end = path.end().clone();
    Some((path, end))
}

/// Geodesic distance with default shooting options.
pub fn geodesic_distance(metric: &MetricField, x1: &Vector, x2: &Vector) -> Result<Geodesic> {
    geodesic_distance_with(metric, x1, x2, ShootingOptions::default())
}

/// Damped Newton shooting on the initial velocity, seeded with the chord.
///
/// When the chord seed does not converge, the target is moved from `x1` to
/// `x2` in `continuation` equal stages, each seeded with the previous
/// solution. If that fails too, the chord is returned with
/// `converged = false`.
pub fn geodesic_distance_with(metric: &MetricField, x1: &Vector, x2: &Vector, opts: ShootingOptions) -> Result<Geodesic> {
    check_dim("geodesic_distance", x1.len(), x2.len())?;
    let chord = x2 - x1;
    if chord.norm() == 0.0 {
        return Ok(Geodesic {
            distance: 0.0,
            path: PathSample::segment(x1, x2, 1),
            converged: true,
            iterations: 0,
            residual: 0.0,
        });
    }
    let tol = opts.tol * (1.0 + chord.norm());
    let mut spent = 0;
    let direct = newton(metric, x1, x2, chord.clone(), tol, &opts);
    spent += direct.iterations;
    let mut best_residual = direct.residual;
    if let Some((_, path)) = direct.solution {
        return finish(metric, path, spent, direct.residual);
    }
    if opts.continuation > 1 {
        let stages = opts.continuation;
        let mut v = &chord / stages as f64;
        let mut last = None;
        for k in 1..=stages {
            let target = x1 + &chord * (k as f64 / stages as f64);
            let seed = if k == 1 { v.clone() } else { &v * (k as f64 / (k - 1) as f64) };
            let step = newton(metric, x1, &target, seed, tol, &opts);
            spent += step.iterations;
            best_residual = step.residual;
            match step.solution {
                Some((sol, path)) => {
                    v = sol;
                    last = Some(path);
                }
                None => {
                    last = None;
                    break;
                }
            }
        }
        if let Some(path) = last {
            return finish(metric, path, spent, best_residual);
        }
    }
    let path = PathSample::segment(x1, x2, (1.0 / opts.ds).ceil() as usize);
    Ok(Geodesic {
        distance: path_length(metric, &path)?,
        path,
        converged: false,
        iterations: spent,
        residual: best_residual,
    })
}

fn finish(metric: &MetricField, path: PathSample, iterations: usize, residual: f64) -> Result<Geodesic> {
    Ok(Geodesic {
        distance: path_length(metric, &path)?,
        path,
        converged: true,
        iterations,
        residual,
    })
}

struct NewtonOutcome {
    solution: Option<(Vector, PathSample)>,
    iterations: usize,
    residual: f64,
}

fn newton(metric: &MetricField, x1: &Vector, target: &Vector, seed: Vector, tol: f64, opts: &ShootingOptions) -> NewtonOutcome {
    let n = x1.len();
    let failed = |iterations: usize, residual: f64| NewtonOutcome {
        solution: None,
        iterations,
        residual,
    };
    let mut v = seed;
    let Some((mut path, mut end)) = shoot_end(metric, x1, &v, opts.ds) else {
        return failed(0, f64::INFINITY);
    };
    let mut res = &end - target;
    for it in 0..=opts.max_iter {
        if res.norm() <= tol {
            return NewtonOutcome {
                solution: Some((v, path)),
                iterations: it,
                residual: res.norm(),
            };
        }
        if it == opts.max_iter {
            break;
        }
        let mut jac = Matrix::zeros(n, n);
        for j in 0..n {
            let h = 1e-6 * (1.0 + v[j].abs());
            let mut vp = v.clone();
            vp[j] += h;
            let Some((_, ep)) = shoot_end(metric, x1, &vp, opts.ds) else {
                return failed(it, res.norm());
            };
            jac.set_column(j, &((ep - &end) / h));
        }
        let Some(step) = jac.lu().solve(&(-&res)) else {
            return failed(it, res.norm());
        };
        let mut damping = 1.0;
        let mut accepted = false;
        for _ in 0..=opts.max_halvings {
            let trial = &v + &step * damping;
            if let Some((p, e)) = shoot_end(metric, x1, &trial, opts.ds) {
                let r = &e - target;
                if r.norm() < res.norm() {
                    v = trial;
                    path = p;
                    end = e;
                    res = r;
                    accepted = true;
                    break;
                }
            }
            damping *= 0.5;
        }
        if !accepted {
            return failed(it + 1, res.norm());
        }
    }
    failed(opts.max_iter, res.norm())
}

/// `d(X(x1, t), X(x2, t)) / d(x1, x2)` along the flow of `f`.
pub fn contraction_factor(f: &VectorField, metric: &MetricField, x1: &Vector, x2: &Vector, t: f64, dt: f64) -> Result<f64> {
    if x1 == x2 {
        return Err(Error::DegeneratePair);
    }
    let y1 = integrate_flow(f, x1, t, dt)?.final_state().clone();
    let y2 = integrate_flow(f, x2, t, dt)?.final_state().clone();
    Ok(geodesic_distance(metric, &y1, &y2)?.distance / geodesic_distance(metric, x1, x2)?.distance)
}

/// [`contraction_factor`] for two coupled agents, each moving under the
/// closed loop of a two-agent network.
pub fn pair_contraction_factor(net: &AgentNetwork, metric: &MetricField, w1: &Vector, w2: &Vector, t: f64, dt: f64) -> Result<f64> {
    if net.m != 2 {
        return Err(Error::InvalidArgument(format!("pair factor needs a 2-agent network, got {}", net.m)));
    }
    if w1 == w2 {
        return Err(Error::DegeneratePair);
    }
    let n = net.n();
    let mut w0 = Vector::zeros(2 * n);
    w0.rows_mut(0, n).copy_from(w1);
    w0.rows_mut(n, n).copy_from(w2);
    let w = flow_map(|z| net.closed_loop(z), &w0, t, dt)?;
    let (y1, y2) = (w.rows(0, n).into_owned(), w.rows(n, n).into_owned());
    Ok(geodesic_distance(metric, &y1, &y2)?.distance / geodesic_distance(metric, w1, w2)?.distance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    fn identity() -> MetricField {
        MetricField::constant(Matrix::identity(2, 2), Matrix::identity(2, 2))
    }

    /// Smooth, uniformly positive and nonconstant.
    fn warped() -> MetricField {
        MetricField::new(2, Matrix::identity(2, 2), 0.5, 4.0, |x| {
            let a = 2.0 + x[0].sin();
            let b = 0.3 * (x[1] * 0.7).cos();
            Ok(Matrix::from_row_slice(2, 2, &[a, b, b, 1.0 + 0.5 * x[0] * x[0] / (1.0 + x[0] * x[0])]))
        })
    }

    #[test]
    fn euclidean_segment_length() {
        let path = PathSample::segment(&v(&[0.0, 0.0]), &v(&[3.0, 4.0]), 10);
        assert_abs_diff_eq!(path_length(&identity(), &path).unwrap(), 5.0, epsilon = 1e-8);
    }

    #[test]
    fn weighted_segment_length() {
        let m = MetricField::constant(Matrix::from_diagonal(&v(&[4.0, 1.0])), Matrix::identity(2, 2));
        let path = PathSample::segment(&v(&[0.0, 0.0]), &v(&[1.0, 0.0]), 7);
        assert_abs_diff_eq!(path_length(&m, &path).unwrap(), 2.0, epsilon = 1e-8);
    }

    #[test]
    fn derived_velocities_on_a_parabola() {
        let params: Vec<f64> = (0..=10).map(|i| (i as f64 * 0.1).powf(1.3)).collect();
        let points = params.iter().map(|s| v(&[*s, s * s])).collect();
        let path = PathSample::new(params.clone(), points, None).unwrap();
        for (s, d) in params.iter().zip(path.velocities()) {
            assert_abs_diff_eq!(d, v(&[1.0, 2.0 * s]), epsilon = 1e-12);
        }
    }

    #[test]
    fn rejects_non_increasing_params() {
        assert!(PathSample::new(vec![0.0, 0.0], vec![v(&[0.0]), v(&[1.0])], None).is_err());
    }

    #[test]
    fn indefinite_metric_is_rejected() {
        let m = MetricField::constant(Matrix::from_diagonal(&v(&[1.0, -1.0])), Matrix::identity(2, 2));
        let path = PathSample::segment(&v(&[0.0, 0.0]), &v(&[1.0, 0.0]), 4);
        assert!(matches!(path_length(&m, &path), Err(Error::NotPositiveDefinite(_))));
    }

    #[test]
    fn constant_metric_shoots_straight() {
        let p = geodesic_shoot(&identity(), &v(&[0.0, 0.0]), &v(&[1.0, 0.0]), 2.0, 0.1).unwrap();
        assert_abs_diff_eq!(p.end(), &v(&[2.0, 0.0]), epsilon = 1e-8);
    }

    #[test]
    fn shot_conserves_speed() {
        let m = warped();
        let x = v(&[0.3, -0.4]);
        let u = v(&[0.8, 0.5]);
        let path = geodesic_shoot(&m, &x, &u, 1.0, 1.0 / 64.0).unwrap();
        let s0 = speed_squared(&m.eval(&x).unwrap(), &u);
        for (q, w) in path.points.iter().zip(path.velocities.as_ref().unwrap()) {
            let s = speed_squared(&m.eval(q).unwrap(), w);
            assert!((s - s0).abs() / s0 <= 1e-5, "drift {}", (s - s0).abs() / s0);
        }
    }

    #[test]
    fn shot_is_self_convergent() {
        let m = warped();
        let (x, u) = (v(&[0.3, -0.4]), v(&[0.8, 0.5]));
        let a = geodesic_shoot(&m, &x, &u, 1.0, 1.0 / 32.0).unwrap();
        let b = geodesic_shoot(&m, &x, &u, 1.0, 1.0 / 64.0).unwrap();
        assert!((a.end() - b.end()).norm() <= 1e-5);
    }

    #[test]
    fn euclidean_distance_is_exact() {
        let g = geodesic_distance(&identity(), &v(&[1.0, -2.0]), &v(&[4.0, 2.0])).unwrap();
        assert!(g.converged);
        assert_abs_diff_eq!(g.distance, 5.0, epsilon = 1e-8);
    }

    #[test]
    fn distance_is_symmetric_and_beats_the_chord() {
        let m = warped();
        let (a, b) = (v(&[-1.0, 0.5]), v(&[1.2, -0.3]));
        let dab = geodesic_distance(&m, &a, &b).unwrap();
        let dba = geodesic_distance(&m, &b, &a).unwrap();
        assert!(dab.converged && dba.converged);
        assert_abs_diff_eq!(dab.distance, dba.distance, epsilon = 1e-6);
        let chord = path_length(&m, &PathSample::segment(&a, &b, 64)).unwrap();
        assert!(dab.distance <= chord + 1e-9);
    }

    #[test]
    fn triangle_inequality() {
        let m = warped();
        let (a, b, c) = (v(&[-1.0, 0.5]), v(&[0.2, 0.9]), v(&[1.2, -0.3]));
        let d = |x: &Vector, y: &Vector| geodesic_distance(&m, x, y).unwrap().distance;
        assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-5);
    }

    #[test]
    fn linear_decay_factor() {
        let f = VectorField::new(2, |x| -x);
        let r = contraction_factor(&f, &identity(), &v(&[0.0, 0.0]), &v(&[1.0, 2.0]), 1.0, 0.01).unwrap();
        assert_abs_diff_eq!(r, (-1f64).exp(), epsilon = 1e-6);
    }

    #[test]
    fn degenerate_pair_is_an_error() {
        let f = VectorField::new(2, |x| -x);
        let x = v(&[1.0, 1.0]);
        assert_eq!(contraction_factor(&f, &identity(), &x, &x, 1.0, 0.01), Err(Error::DegeneratePair));
    }
}
