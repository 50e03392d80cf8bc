//! Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.

use std::f64::consts::{PI, TAU};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tesa_core::observer::{
    annulus_grid, annulus_point, detectability_gramian, example1_energy, example1_field, example1_metric, example1_metric_field,
    example1_output, example1_period, example1_problem, r_detectability_residual, simulate_observer, Example1Correction,
};
use tesa_core::ode::{integrate_flow, integrate_variational};
use tesa_core::registry::{linear_test_field, linear_test_matrix, linear_test_system};
use tesa_core::riemann::{contraction_factor, geodesic_distance};
use tesa_core::sync::{
    example2_drift, example2_input, example2_network, example2_transverse_system, seeded_uniform_agents, simulate_network,
    stabilizability_gramian,
};
use tesa_core::transverse::{compute_metric, ulmte_residual};
use tesa_core::{Matrix, MetricField, Vector, VectorField};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn within(elapsed: Duration, limit_s: f64) -> (bool, String) {
    let s = elapsed.as_secs_f64();
    (s < limit_s, format!("{s:.2} s (limit {limit_s} s)"))
}

/// `A' P + P A = -Q` through its Kronecker form.
fn lyapunov_oracle(a: &Matrix, q: &Matrix) -> Matrix {
    let n = a.nrows();
    let id = Matrix::identity(n, n);
    let at = a.transpose();
    let k = id.kronecker(&at) + at.kronecker(&id);
    let p = k.lu().solve(&(-Vector::from_column_slice(q.as_slice()))).unwrap();
    Matrix::from_column_slice(n, n, p.as_slice())
}

fn c1_metric_oracle() -> Outcome {
    let start = Instant::now();
    let p = compute_metric(&linear_test_system(), &Matrix::identity(2, 2), &Vector::zeros(1), 10.0, 0.01).unwrap();
    let (ok_t, t) = within(start.elapsed(), 1.0);
    let oracle = lyapunov_oracle(&linear_test_matrix(), &Matrix::identity(2, 2));
    let listed = Matrix::from_row_slice(2, 2, &[1.25, 0.25, 0.25, 0.25]);
    let err = (&p - &oracle).amax();
    let pass = err <= 1e-4 && (&oracle - listed).amax() <= 1e-12 && ok_t;
    outcome(pass, format!("max entry error {err:.2e} (tol 1e-4), {t}"))
}

fn c2_ulmte_saturation() -> Outcome {
    let start = Instant::now();
    let q = Matrix::identity(2, 2);
    let lin = linear_test_system();
    let lin_metric = MetricField::from_transverse(&lin, q.clone(), 10.0, 0.01);
    let mut worst_lin = 0.0f64;
    for i in 0..50 {
        let r = ulmte_residual(&lin, &lin_metric, &Vector::from_element(1, -5.0 + 0.2 * i as f64)).unwrap();
        worst_lin = worst_lin.max(r.abs());
    }
    let ex2 = example2_transverse_system(1.0);
    let ex2_metric = MetricField::from_transverse(&ex2, q, 20.0, 0.005);
    let mut worst_ex2 = 0.0f64;
    for i in 0..50 {
        let r = ulmte_residual(&ex2, &ex2_metric, &Vector::from_vec(vec![0.0, TAU * i as f64 / 50.0])).unwrap();
        worst_ex2 = worst_ex2.max(r.abs());
    }
    let (ok_t, t) = within(start.elapsed(), 10.0);
    outcome(
        worst_lin <= 1e-3 && worst_ex2 <= 1e-3 && ok_t,
        format!("max |residual| linear {worst_lin:.2e}, phase circle {worst_ex2:.2e} (tol 1e-3), {t}"),
    )
}

fn c3_example1_certification() -> Outcome {
    let start = Instant::now();
    let eps: f64 = 0.1;
    let q_lo = eps.sqrt() / 6.0;
    let (f, h, metric) = (example1_field(), example1_output(), example1_metric_field(eps));
    let mut failures = 0;
    let mut worst = f64::NEG_INFINITY;
    for x in annulus_grid(eps, 30, 30) {
        let (p, r) = example1_metric(&x).unwrap();
        let p22 = p[(1, 1)];
        let ev = tesa_core::linalg::sym_eigenvalues(&p);
        let res = r_detectability_residual(&f, &h, &metric, q_lo, &x).unwrap().value;
        worst = worst.max(res);
        if !(r / 2.0 <= p22 && p22 <= 3.0 * r && ev[0] >= 1f64.min(r / 4.0) && res <= 0.0) {
            failures += 1;
        }
    }
    let (ok_t, t) = within(start.elapsed(), 5.0);
    outcome(failures == 0 && ok_t, format!("{failures}/900 grid points fail, worst residual {worst:.3e} (need <= 0), {t}"))
}

fn c4_observer_convergence() -> Outcome {
    let start = Instant::now();
    let eps: f64 = 0.1;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let pairs: Vec<(Vector, Vector)> = (0..20)
        .map(|_| {
            let c = rng.gen_range(eps.ln()..(1.0 / eps).ln()).exp();
            let x0 = annulus_point(c, rng.gen_range(0.0..TAU));
            let a: f64 = rng.gen_range(0.0..TAU);
            let xh = &x0 + Vector::from_vec(vec![0.05 * a.cos(), 0.05 * a.sin()]);
            (x0, xh)
        })
        .collect();
    let mut worst_err = 0.0f64;
    let mut min_lambda = f64::INFINITY;
    for corr in [Example1Correction::SelectedGain, Example1Correction::Riemannian { k_gain: 5.0 }] {
        let prob = example1_problem(corr);
        for (x0, xh) in &pairs {
            match simulate_observer(&prob, x0, xh, 30.0, 0.005) {
                Ok(run) => {
                    worst_err = worst_err.max(*run.errors.last().unwrap());
                    min_lambda = min_lambda.min(run.decay.map_or(f64::NEG_INFINITY, |d| d.lambda));
                }
                Err(_) => worst_err = f64::INFINITY,
            }
        }
    }
    let (ok_t, t) = within(start.elapsed(), 30.0);
    outcome(
        worst_err <= 5e-4 && min_lambda > 0.03 && ok_t,
        format!("40 runs: worst |xhat - x|(30) {worst_err:.2e} (tol 5e-4), min fitted lambda {min_lambda:.3} (need > 0.03), {t}"),
    )
}

fn c5_detectability() -> Outcome {
    let (f, h) = (example1_field(), example1_output());
    let origin = detectability_gramian(&f, &h, &Vector::zeros(2), 10.0, 0.01).unwrap();
    let x0 = Vector::from_vec(vec![1.0, 1.0]);
    let period = example1_period(&x0, 0.001).unwrap();
    let orbit = detectability_gramian(&f, &h, &x0, period, 0.001).unwrap();
    outcome(
        origin.abs() <= 1e-10 && orbit >= 1e-4,
        format!("origin {origin:.2e} (tol 1e-10), orbit through (1,1) over T = {period:.4}: {orbit:.3e} (need >= 1e-4)"),
    )
}

fn c6_synchronization() -> Outcome {
    let start = Instant::now();
    let net = example2_network(5, 3.0, 1.0).unwrap();
    let mut worst_ratio = 0.0f64;
    let mut min_lambda = f64::INFINITY;
    for seed in 0..10 {
        let w0 = seeded_uniform_agents(5, 2, 0.0, 10.0, seed);
        match simulate_network(&net, &w0, 30.0, 0.01, seed) {
            Ok(run) => {
                worst_ratio = worst_ratio.max(run.dist.last().unwrap() / run.dist[0]);
                min_lambda = min_lambda.min(run.decay.map_or(f64::NEG_INFINITY, |d| d.lambda));
            }
            Err(_) => worst_ratio = f64::INFINITY,
        }
    }
    let (ok_t, t) = within(start.elapsed(), 20.0);
    outcome(
        worst_ratio <= 1e-2 && min_lambda > 0.0 && ok_t,
        format!("10 seeds: worst |w|_D(30)/|w|_D(0) {worst_ratio:.2e} (tol 1e-2), min lambda {min_lambda:.3}, {t}"),
    )
}

fn c7_stabilizability() -> Outcome {
    let x0 = Vector::from_vec(vec![0.0, 2.0 * PI / 3.0]);
    let frozen = stabilizability_gramian(&example2_drift(0.0), example2_input, &x0, 5.0, 0.01).unwrap();
    let moving = stabilizability_gramian(&example2_drift(1.0), example2_input, &x0, TAU, 0.01).unwrap();
    outcome(
        frozen.abs() <= 1e-10 && moving >= 1e-3,
        format!("a = 0: {frozen:.2e} (tol 1e-10), a = 1 over 2pi: {moving:.3e} (need >= 1e-3)"),
    )
}

fn variational_error(f: &VectorField, x0: &[f64], t: f64) -> f64 {
    let x0 = Vector::from_column_slice(x0);
    let dt = 0.001;
    let (_, phi) = integrate_variational(f, &x0, t, dt).unwrap();
    let eps = 1e-5;
    let mut fd = Matrix::zeros(x0.len(), x0.len());
    for j in 0..x0.len() {
        let mut xp = x0.clone();
        let mut xm = x0.clone();
        xp[j] += eps;
        xm[j] -= eps;
        let yp = integrate_flow(f, &xp, t, dt).unwrap().final_state().clone();
        let ym = integrate_flow(f, &xm, t, dt).unwrap().final_state().clone();
        fd.set_column(j, &((yp - ym) / (2.0 * eps)));
    }
    (phi.final_matrix() - &fd).amax() / fd.amax()
}

fn c8_variational() -> Outcome {
    let e1 = variational_error(&example1_field(), &[1.0, 0.5], 5.0);
    let e2 = variational_error(&example2_drift(1.0), &[0.5, 0.3], 5.0);
    let e3 = variational_error(&linear_test_field(), &[1.0, -1.0], 5.0);
    let worst = e1.max(e2).max(e3);
    outcome(worst <= 1e-4, format!("relative error example1 {e1:.2e}, example2 {e2:.2e}, linear {e3:.2e} (tol 1e-4)"))
}

fn c9_geodesic_bounds() -> Outcome {
    let eps: f64 = 0.1;
    let metric = example1_metric_field(eps);
    let (lo, hi) = metric.sampled_bounds(&annulus_grid(eps, 60, 60)).unwrap();
    let inside = |x: &Vector| (eps..=1.0 / eps).contains(&example1_energy(x));
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut violations = 0;
    let mut unconverged = 0;
    let mut count = 0;
    while count < 50 {
        let c = rng.gen_range(eps.ln()..(1.0 / eps).ln()).exp();
        let a = annulus_point(c, rng.gen_range(0.0..TAU));
        let b = &a + Vector::from_vec(vec![rng.gen_range(-0.4..0.4), rng.gen_range(-0.4..0.4)]);
        if !(0..=20).all(|i| inside(&(&a + (&b - &a) * (i as f64 / 20.0)))) {
            continue;
        }
        count += 1;
        let g = geodesic_distance(&metric, &a, &b).unwrap();
        let e = (&b - &a).norm();
        if !(lo.sqrt() * e <= g.distance && g.distance <= hi.sqrt() * e) {
            violations += 1;
        }
        unconverged += usize::from(!g.converged);
    }
    let p = Matrix::from_row_slice(2, 2, &[1.25, 0.25, 0.25, 0.25]);
    let constant = MetricField::constant(p.clone(), Matrix::identity(2, 2));
    let (a, b) = (Vector::from_vec(vec![0.3, -1.0]), Vector::from_vec(vec![2.0, 0.5]));
    let d = &b - &a;
    let exact = d.dot(&(&p * &d)).sqrt();
    let const_err = (geodesic_distance(&constant, &a, &b).unwrap().distance - exact).abs();
    outcome(
        violations == 0 && const_err <= 1e-8,
        format!(
            "50 pairs in C(0.1), p_lo {lo:.3} p_hi {hi:.3}: {violations} bound violations, {unconverged} unconverged; constant-metric error {const_err:.1e} (tol 1e-8)"
        ),
    )
}

fn c10_incremental_contraction() -> Outcome {
    let f = linear_test_field();
    let p = compute_metric(&linear_test_system(), &Matrix::identity(2, 2), &Vector::zeros(1), 10.0, 0.01).unwrap();
    let metric = MetricField::constant(p, Matrix::identity(2, 2));
    // slow eigendirection (1, -1)
    let a = Vector::from_vec(vec![0.5, 0.5]);
    let b = &a + Vector::from_vec(vec![1.0, -1.0]);
    let mut prev = f64::INFINITY;
    let mut monotone = true;
    let mut worst_excess = f64::NEG_INFINITY;
    for k in 0..=40 {
        let t = 1.0 + 0.1 * k as f64;
        let c = contraction_factor(&f, &metric, &a, &b, t, 0.01).unwrap();
        monotone &= c < prev;
        prev = c;
        worst_excess = worst_excess.max(c - (-0.9 * t).exp());
    }
    // monotone decrease for generic pairs too
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..5 {
        let x = Vector::from_vec(vec![rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)]);
        let y = Vector::from_vec(vec![rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)]);
        let mut prev = f64::INFINITY;
        for k in 0..=40 {
            let c = contraction_factor(&f, &metric, &x, &y, 1.0 + 0.1 * k as f64, 0.01).unwrap();
            monotone &= c < prev;
            prev = c;
        }
    }
    outcome(
        monotone && worst_excess <= 0.0,
        format!("monotone: {monotone}; max over t in [1,5] of factor - e^(-0.9t) = {worst_excess:.3e} (need <= 0)"),
    )
}

fn c11_determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("sync.json");
    std::fs::write(&cfg, r#"{"experiment": "sync", "system": "example2", "seed": 7, "parameters": {"m": 5, "ell": 3, "runs": 2}}"#).unwrap();
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let root = tmp.path().join(run);
        let status = Command::new(env!("CARGO_BIN_EXE_tesa"))
            .args(["run", cfg.to_str().unwrap(), "--jobs", if run == "a" { "1" } else { "2" }])
            .env("TESA_OUTPUT_DIR", &root)
            .output()
            .unwrap()
            .status;
        if !status.success() {
            return outcome(false, format!("run {run} exited with {status}"));
        }
        let dir = root.join("sync-example2-network-seed7");
        let mut files: Vec<_> = std::fs::read_dir(&dir).unwrap().map(|e| e.unwrap().path()).collect();
        files.sort();
        outputs.push(files.iter().map(|p| (p.file_name().unwrap().to_owned(), std::fs::read(p).unwrap())).collect::<Vec<_>>());
    }
    let csvs = outputs[0].iter().filter(|(n, _)| n.to_string_lossy().ends_with(".csv")).count();
    let same = outputs[0] == outputs[1];
    outcome(same && csvs == 2, format!("{csvs} CSV files + summary, byte-identical across two runs: {same}"))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("metric oracle equivalence", c1_metric_oracle),
        ("ULMTE saturation", c2_ulmte_saturation),
        ("Example 1 certification", c3_example1_certification),
        ("Example 1 observer convergence", c4_observer_convergence),
        ("detectability negative/positive pair", c5_detectability),
        ("synchronization reproduction", c6_synchronization),
        ("non-stabilizable witness", c7_stabilizability),
        ("variational consistency", c8_variational),
        ("geodesic bounds", c9_geodesic_bounds),
        ("incremental contraction", c10_incremental_contraction),
        ("determinism", c11_determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        failed += usize::from(!o.pass);
        println!("criterion {:>2} {} {}: {}", i + 1, if o.pass { "PASS" } else { "FAIL" }, name, o.detail);
    }
    println!("acceptance: {} of {} criteria pass", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
