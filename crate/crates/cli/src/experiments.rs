use std::f64::consts::TAU;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::{json, Value};
use tesa_core::incremental::{contraction_rate_check, incremental_gap};
use tesa_core::linalg::sym_eigenvalues;
use tesa_core::observer::{
    annulus_grid, annulus_point, certify_r_detectability, example1_energy, example1_field, example1_metric_field, example1_output,
    example1_problem, r_detectability_residual, simulate_observer, Example1Correction,
};
use tesa_core::registry::{linear_test_field, linear_test_system, SystemId};
use tesa_core::riemann::geodesic_distance;
use tesa_core::sync::{
    example2_drift, example2_metric, example2_network_with, example2_table, example2_transverse_system, seeded_uniform_agents,
    simulate_network, Example2Potential,
};
use tesa_core::transverse::{compute_metric, ulmte_residual};
use tesa_core::{DecayEstimate, Matrix, MetricField, TransverseSystem, Vector, VectorField};

use crate::config::Params;
use crate::output::{num, Series};
use crate::CliError;

/// The experiment kinds understood by the runner.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    Metric,
    UlmteCert,
    Observer,
    Sync,
    Incremental,
    Geodesic,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 6] = [
        ExperimentKind::Geodesic,
        ExperimentKind::Incremental,
        ExperimentKind::Metric,
        ExperimentKind::Observer,
        ExperimentKind::Sync,
        ExperimentKind::UlmteCert,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Metric => "metric",
            ExperimentKind::UlmteCert => "ulmte-cert",
            ExperimentKind::Observer => "observer",
            ExperimentKind::Sync => "sync",
            ExperimentKind::Incremental => "incremental",
            ExperimentKind::Geodesic => "geodesic",
        }
    }

    pub fn lookup(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|e| e.name() == name)
    }

    /// Systems this experiment can run on.
    pub fn systems(self) -> &'static [SystemId] {
        use SystemId::*;
        match self {
            ExperimentKind::Metric => &[LinearATest, Example2Agent],
            ExperimentKind::UlmteCert => &[LinearATest, Example2Agent, Example1Observer],
            ExperimentKind::Observer => &[Example1Observer],
            ExperimentKind::Sync => &[Example2Network],
            ExperimentKind::Incremental => &[LinearATest, Example1Oscillator, Example2Agent],
            ExperimentKind::Geodesic => &[LinearATest, Example1Oscillator, Example1Observer, Example2Agent],
        }
    }
}

/// Series and JSON results of a finished experiment.
#[derive(Debug)]
pub struct Outcome {
    pub series: Vec<Series>,
    pub results: Value,
}

pub fn decay_json(d: &Option<DecayEstimate>) -> Value {
    match d {
        Some(d) => json!({"k": num(d.k), "lambda": num(d.lambda), "residual": num(d.residual)}),
        None => Value::Null,
    }
}

fn vec_json(v: &Vector) -> Value {
    Value::Array(v.iter().map(|x| num(*x)).collect())
}

pub fn run(kind: ExperimentKind, system: SystemId, params: &mut Params, seed: u64) -> Result<Outcome, CliError> {
    match kind {
        ExperimentKind::Metric => metric(system, params, false),
        ExperimentKind::UlmteCert if system == SystemId::Example1Observer => r_detect(params),
        ExperimentKind::UlmteCert => metric(system, params, true),
        ExperimentKind::Observer => observer(params, seed),
        ExperimentKind::Sync => sync(params, seed),
        ExperimentKind::Incremental => incremental(system, params),
        ExperimentKind::Geodesic => geodesic(system, params, seed),
    }
}

/// Accepted parameter keys per experiment and system.
pub fn allowed_keys(kind: ExperimentKind, system: SystemId) -> &'static [&'static str] {
    match (kind, system) {
        (ExperimentKind::Metric, SystemId::Example2Agent) | (ExperimentKind::UlmteCert, SystemId::Example2Agent) => {
            &["horizon", "dt", "samples", "span", "a", "tol"]
        }
        (ExperimentKind::Metric, _) | (ExperimentKind::UlmteCert, SystemId::LinearATest) => &["horizon", "dt", "samples", "span", "tol"],
        (ExperimentKind::UlmteCert, _) => &["eps", "levels", "angles", "q_lo"],
        (ExperimentKind::Observer, _) => &["correction", "k_gain", "eps", "runs", "offset", "horizon", "dt", "stride"],
        (ExperimentKind::Sync, _) => &["m", "ell", "a", "lo", "hi", "horizon", "dt", "runs", "stride"],
        (ExperimentKind::Incremental, _) => &["x1", "x2", "a", "horizon", "dt", "stride"],
        (ExperimentKind::Geodesic, _) => &["pairs", "eps", "spread"],
    }
}

fn transverse_for(system: SystemId, params: &mut Params) -> Result<(TransverseSystem, f64, f64, f64), CliError> {
    match system {
        SystemId::LinearATest => Ok((linear_test_system(), params.f64("horizon", 10.0)?, params.f64("dt", 0.01)?, params.f64("span", 10.0)?)),
        _ => {
            let a = params.f64("a", 1.0)?;
            Ok((example2_transverse_system(a), params.f64("horizon", 20.0)?, params.f64("dt", 0.005)?, params.f64("span", TAU)?))
        }
    }
}

fn manifold_point(system: SystemId, s: f64) -> Vector {
    match system {
        SystemId::LinearATest => Vector::from_element(1, s),
        _ => Vector::from_vec(vec![0.0, s]),
    }
}

/// Integrated metric and its residual at `samples` points along the manifold.
fn metric(system: SystemId, params: &mut Params, certify: bool) -> Result<Outcome, CliError> {
    let (sys, horizon, dt, span) = transverse_for(system, params)?;
    let samples = params.usize("samples", 50)?.max(1);
    let tol = params.f64("tol", 1e-3)?;
    let q = Matrix::identity(2, 2);
    let field = MetricField::from_transverse(&sys, q.clone(), horizon, dt);
    let points: Vec<f64> = (0..samples).map(|k| span * k as f64 / samples as f64).collect();
    let rows = points
        .par_iter()
        .map(|s| {
            let x = manifold_point(system, *s);
            let p = compute_metric(&sys, &q, &x, horizon, dt)?;
            let r = ulmte_residual(&sys, &field, &x)?;
            Ok((p, r))
        })
        .collect::<tesa_core::Result<Vec<_>>>()?;
    let mut series = if certify {
        Series::new("residuals", &["residual"])
    } else {
        Series::new("metric", &["p11", "p12", "p22", "eig_min", "eig_max", "residual"])
    };
    let (mut lo, mut hi, mut worst, mut worst_abs) = (f64::INFINITY, 0.0f64, f64::NEG_INFINITY, 0.0f64);
    for (s, (p, r)) in points.iter().zip(&rows) {
        let ev = sym_eigenvalues(p);
        lo = lo.min(ev[0]);
        hi = hi.max(ev[1]);
        worst = worst.max(*r);
        worst_abs = worst_abs.max(r.abs());
        if certify {
            series.push(*s, &[*r]);
        } else {
            series.push(*s, &[p[(0, 0)], p[(0, 1)], p[(1, 1)], ev[0], ev[1], *r]);
        }
    }
    let mut results = json!({
        "samples": samples,
        "worst_residual": num(worst),
        "max_abs_residual": num(worst_abs),
        "p_lo": num(lo),
        "p_hi": num(hi),
    });
    if certify {
        results["certified"] = json!(worst <= tol);
        results["saturated"] = json!(worst_abs <= tol);
    }
    // the closed form only describes the a = 1 drift
    if system == SystemId::Example2Agent && params.f64("a", 1.0)? == 1.0 {
        let mut max_rel = 0.0f64;
        let mut min_p12 = f64::INFINITY;
        for (s, (p, _)) in points.iter().zip(&rows) {
            let closed = example2_metric(*s, horizon, dt)?;
            max_rel = max_rel.max((p - &closed.p).amax() / closed.p.amax());
            min_p12 = min_p12.min(closed.p12);
        }
        results["closed_form_max_rel_diff"] = num(max_rel);
        results["min_p12"] = num(min_p12);
    }
    Ok(Outcome {
        series: vec![series],
        results,
    })
}

/// R-detectability certificate of the oscillator metric on an annulus grid.
fn r_detect(params: &mut Params) -> Result<Outcome, CliError> {
    let eps = params.f64("eps", 0.1)?;
    let levels = params.usize("levels", 30)?;
    let angles = params.usize("angles", 30)?;
    let q_lo = params.f64("q_lo", eps.sqrt() / 6.0)?;
    let (f, h, metric) = (example1_field(), example1_output(), example1_metric_field(eps));
    let grid = annulus_grid(eps, levels, angles);
    let values = grid
        .par_iter()
        .map(|x| r_detectability_residual(&f, &h, &metric, q_lo, x).map(|r| r.value))
        .collect::<tesa_core::Result<Vec<_>>>()?;
    let mut series = Series::new("residuals", &["x1", "x2", "residual"]);
    for (i, (x, r)) in grid.iter().zip(&values).enumerate() {
        series.push(i as f64, &[x[0], x[1], *r]);
    }
    let cert = certify_r_detectability(&f, &h, &metric, q_lo, &grid, &format!("{levels}x{angles} grid on C({eps})"))?;
    Ok(Outcome {
        series: vec![series],
        results: json!({
            "samples": grid.len(),
            "q_lo": num(q_lo),
            "worst_residual": num(cert.worst_residual),
            "certified": cert.is_valid(),
        }),
    })
}

fn observer(params: &mut Params, seed: u64) -> Result<Outcome, CliError> {
    let correction = match params.string("correction", "selected")?.as_str() {
        "selected" => Example1Correction::SelectedGain,
        "riemannian" => Example1Correction::Riemannian {
            k_gain: params.f64("k_gain", 5.0)?,
        },
        other => return Err(CliError::UnknownName(format!("unknown correction `{other}`; accepted: selected, riemannian"))),
    };
    let eps = params.f64("eps", 0.1)?;
    let runs = params.usize("runs", 20)?.max(1);
    let offset = params.f64("offset", 0.05)?;
    let horizon = params.f64("horizon", 30.0)?;
    let dt = params.f64("dt", 0.005)?;
    let stride = params.usize("stride", 10)?.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let starts: Vec<(Vector, Vector)> = (0..runs)
        .map(|_| {
            let c = rng.gen_range(eps.ln()..(1.0 / eps).ln()).exp();
            let x0 = annulus_point(c, rng.gen_range(0.0..TAU));
            let a: f64 = rng.gen_range(0.0..TAU);
            let xhat0 = &x0 + Vector::from_vec(vec![offset * a.cos(), offset * a.sin()]);
            (x0, xhat0)
        })
        .collect();
    let prob = example1_problem(correction);
    let outcomes = starts
        .par_iter()
        .map(|(x0, xh)| simulate_observer(&prob, x0, xh, horizon, dt))
        .collect::<tesa_core::Result<Vec<_>>>()?;
    let columns = (0..runs).map(|r| format!("run{r}")).collect();
    let mut series = Series::with_columns("errors", columns);
    let times = &outcomes[0].times;
    for i in (0..times.len()).filter(|i| i % stride == 0 || i + 1 == times.len()) {
        let row: Vec<f64> = outcomes.iter().map(|o| o.errors[i]).collect();
        series.push(times[i], &row);
    }
    let finals: Vec<f64> = outcomes.iter().map(|o| *o.errors.last().unwrap()).collect();
    let lambdas: Vec<f64> = outcomes.iter().map(|o| o.decay.map_or(f64::NAN, |d| d.lambda)).collect();
    let per_run: Vec<Value> = starts
        .iter()
        .zip(&outcomes)
        .map(|((x0, xh), o)| json!({"x0": vec_json(x0), "xhat0": vec_json(xh), "final_error": num(*o.errors.last().unwrap()), "decay": decay_json(&o.decay)}))
        .collect();
    Ok(Outcome {
        series: vec![series],
        results: json!({
            "runs": per_run,
            "worst_final_error": num(finals.iter().copied().fold(0.0, f64::max)),
            "min_lambda": num(lambdas.iter().copied().fold(f64::INFINITY, f64::min)),
        }),
    })
}

fn sync(params: &mut Params, seed: u64) -> Result<Outcome, CliError> {
    let m = params.usize("m", 5)?;
    let ell = params.f64("ell", 3.0)?;
    let a = params.f64("a", 1.0)?;
    let (lo, hi) = (params.f64("lo", 0.0)?, params.f64("hi", 10.0)?);
    let horizon = params.f64("horizon", 30.0)?;
    let dt = params.f64("dt", 0.01)?;
    let runs = params.usize("runs", 1)?.max(1);
    let stride = params.usize("stride", 10)?.max(1);
    if !(hi > lo) {
        return Err(CliError::Config("need hi > lo".into()));
    }
    let table = example2_table()?;
    let net = example2_network_with(&table, m, ell, a)?;
    let seeds: Vec<u64> = (0..runs as u64).map(|r| seed.wrapping_add(r)).collect();
    let outcomes = seeds
        .par_iter()
        .map(|s| simulate_network(&net, &seeded_uniform_agents(m, 2, lo, hi, *s), horizon, dt, *s))
        .collect::<tesa_core::Result<Vec<_>>>()?;
    let mut columns = vec!["dist".to_string()];
    for i in 0..m {
        columns.push(format!("w{i}_1"));
        columns.push(format!("w{i}_2"));
    }
    let mut series = Vec::new();
    let mut per_run = Vec::new();
    for (r, run) in outcomes.iter().enumerate() {
        let name = if runs == 1 { "sync".to_string() } else { format!("sync_run{r}") };
        let mut s = Series::with_columns(name, columns.clone());
        let n = run.trajectory.len();
        for i in (0..n).filter(|i| i % stride == 0 || i + 1 == n) {
            let mut row = vec![run.dist[i]];
            row.extend(run.trajectory.states[i].iter());
            s.push(run.trajectory.times[i], &row);
        }
        series.push(s);
        per_run.push(json!({
            "seed": run.seed,
            "dist_initial": num(run.dist[0]),
            "dist_final": num(*run.dist.last().unwrap()),
            "ratio": num(run.dist.last().unwrap() / run.dist[0]),
            "decay": decay_json(&run.decay),
        }));
    }
    Ok(Outcome {
        series,
        results: json!({ "runs": per_run }),
    })
}

fn lyapunov_metric() -> Result<MetricField, CliError> {
    let p = compute_metric(&linear_test_system(), &Matrix::identity(2, 2), &Vector::zeros(1), 10.0, 0.01)?;
    Ok(MetricField::constant(p, Matrix::identity(2, 2)))
}

fn incremental(system: SystemId, params: &mut Params) -> Result<Outcome, CliError> {
    let (field, d1, d2): (VectorField, [f64; 2], [f64; 2]) = match system {
        SystemId::LinearATest => (linear_test_field(), [1.0, 0.0], [-1.0, 2.0]),
        SystemId::Example1Oscillator => (example1_field(), [1.0, 1.0], [1.05, 1.0]),
        _ => (example2_drift(params.f64("a", 1.0)?), [0.0, 0.0], [0.5, 0.2]),
    };
    let x1 = Vector::from_vec(params.vector("x1", &d1)?);
    let x2 = Vector::from_vec(params.vector("x2", &d2)?);
    if x1.len() != 2 || x2.len() != 2 {
        return Err(CliError::Config("x1 and x2 need two components".into()));
    }
    let horizon = params.f64("horizon", 10.0)?;
    let dt = params.f64("dt", 0.01)?;
    let stride = params.usize("stride", 10)?.max(1);
    let gap = incremental_gap(&field, &x1, &x2, horizon, dt)?;
    let mut results = json!({
        "identical": gap.identical,
        "gap_initial": num(gap.gaps[0]),
        "gap_final": num(*gap.gaps.last().unwrap()),
        "decay": decay_json(&gap.decay),
    });
    let n = gap.times.len();
    let keep: Vec<usize> = (0..n).filter(|i| i % stride == 0 || i + 1 == n).collect();
    let series = if system == SystemId::LinearATest {
        let metric = lyapunov_metric()?;
        let a = tesa_core::ode::integrate_flow(&field, &x1, horizon, dt)?;
        let b = tesa_core::ode::integrate_flow(&field, &x2, horizon, dt)?;
        let d0 = geodesic_distance(&metric, &x1, &x2)?.distance;
        let mut s = Series::new("gap", &["gap", "factor"]);
        for i in keep {
            let factor = if d0 > 0.0 {
                geodesic_distance(&metric, &a.states[i], &b.states[i])?.distance / d0
            } else {
                0.0
            };
            s.push(gap.times[i], &[gap.gaps[i], factor]);
        }
        let samples: Vec<Vector> = a.states.iter().step_by(stride).cloned().collect();
        results["contraction_residual"] = num(contraction_rate_check(&field, &metric, &samples)?);
        s
    } else {
        let mut s = Series::new("gap", &["gap"]);
        for i in keep {
            s.push(gap.times[i], &[gap.gaps[i]]);
        }
        s
    };
    Ok(Outcome {
        series: vec![series],
        results,
    })
}

fn geodesic(system: SystemId, params: &mut Params, seed: u64) -> Result<Outcome, CliError> {
    let pairs = params.usize("pairs", 50)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (metric, lo, hi, samples): (MetricField, f64, f64, Vec<(Vector, Vector)>) = match system {
        SystemId::Example1Observer | SystemId::Example1Oscillator => {
            let eps = params.f64("eps", 0.1)?;
            let spread = params.f64("spread", 0.4)?;
            let metric = example1_metric_field(eps);
            let (lo, hi) = metric.sampled_bounds(&annulus_grid(eps, 60, 60))?;
            let inside = |x: &Vector| (eps..=1.0 / eps).contains(&example1_energy(x));
            let mut out = Vec::with_capacity(pairs);
            while out.len() < pairs {
                let c = rng.gen_range(eps.ln()..(1.0 / eps).ln()).exp();
                let a = annulus_point(c, rng.gen_range(0.0..TAU));
                let b = &a + Vector::from_vec(vec![rng.gen_range(-spread..spread), rng.gen_range(-spread..spread)]);
                if (0..=20).all(|i| inside(&(&a + (&b - &a) * (i as f64 / 20.0)))) {
                    out.push((a, b));
                }
            }
            (metric, lo, hi, out)
        }
        SystemId::LinearATest => {
            let spread = params.f64("spread", 3.0)?;
            let metric = lyapunov_metric()?;
            let (lo, hi) = (metric.p_lo, metric.p_hi);
            let mut draw = || Vector::from_vec(vec![rng.gen_range(-spread..spread), rng.gen_range(-spread..spread)]);
            let out = (0..pairs).map(|_| (draw(), draw())).collect();
            (metric, lo, hi, out)
        }
        _ => {
            let spread = params.f64("spread", 0.5)?;
            let table: Arc<Example2Potential> = example2_table()?;
            let metric = table.metric_field();
            let (lo, hi) = (metric.p_lo, metric.p_hi);
            let out = (0..pairs)
                .map(|_| {
                    let a = Vector::from_vec(vec![rng.gen_range(0.0..10.0), rng.gen_range(0.0..10.0)]);
                    let b = &a + Vector::from_vec(vec![rng.gen_range(-spread..spread), rng.gen_range(-spread..spread)]);
                    (a, b)
                })
                .collect();
            (metric, lo, hi, out)
        }
    };
    let found = samples
        .par_iter()
        .map(|(a, b)| geodesic_distance(&metric, a, b))
        .collect::<tesa_core::Result<Vec<_>>>()?;
    let mut series = Series::new("pairs", &["a1", "a2", "b1", "b2", "euclid", "distance", "lower", "upper", "converged", "iterations"]);
    let (mut within, mut converged) = (0usize, 0usize);
    for (i, ((a, b), g)) in samples.iter().zip(&found).enumerate() {
        let e = (b - a).norm();
        let (l, u) = (lo.sqrt() * e, hi.sqrt() * e);
        within += usize::from(l <= g.distance && g.distance <= u);
        converged += usize::from(g.converged);
        series.push(i as f64, &[a[0], a[1], b[0], b[1], e, g.distance, l, u, f64::from(u8::from(g.converged)), g.iterations as f64]);
    }
    Ok(Outcome {
        series: vec![series],
        results: json!({
            "pairs": pairs,
            "p_lo": num(lo),
            "p_hi": num(hi),
            "within_bounds": within,
            "converged": converged,
        }),
    })
}
