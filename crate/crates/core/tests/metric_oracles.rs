use std::f64::consts::PI;

use approx::assert_abs_diff_eq;
use tesa_core::linalg::{max_eigenvalue, min_eigenvalue, sym_eigenvalues};
use tesa_core::registry::{linear_test_matrix, linear_test_system};
use tesa_core::sync::{example2_metric, example2_transverse_system};
use tesa_core::transverse::{
    certify_ulmte, compute_metric, flow_derivative, lyapunov_trace, metric_bounds, metric_flow_derivative, tules_params, ulmte_residual,
};
use tesa_core::{Matrix, MetricField, Vector};

/// Solves `A' P + P A = -Q` through the Kronecker form
/// `(I (x) A' + A' (x) I) vec(P) = -vec(Q)`.
fn lyapunov_kronecker(a: &Matrix, q: &Matrix) -> Matrix {
    let n = a.nrows();
    let id = Matrix::identity(n, n);
    let at = a.transpose();
    let k = id.kronecker(&at) + at.kronecker(&id);
    let rhs = -Vector::from_column_slice(q.as_slice());
    let vec_p = k.lu().solve(&rhs).expect("nonsingular Lyapunov operator");
    Matrix::from_column_slice(n, n, vec_p.as_slice())
}

fn phase_point(phase: f64) -> Vector {
    Vector::from_vec(vec![0.0, phase])
}

#[test]
fn kronecker_oracle_matches_listed_solution() {
    let p = lyapunov_kronecker(&linear_test_matrix(), &Matrix::identity(2, 2));
    assert_abs_diff_eq!(p, Matrix::from_row_slice(2, 2, &[1.25, 0.25, 0.25, 0.25]), epsilon = 1e-12);
}

#[test]
fn constant_generator_metric_matches_lyapunov_solution() {
    let sys = linear_test_system();
    let q = Matrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
    let p = compute_metric(&sys, &q, &Vector::zeros(1), 10.0, 0.01).unwrap();
    let oracle = lyapunov_kronecker(&linear_test_matrix(), &q);
    assert!((p - oracle).amax() <= 1e-4);
}

#[test]
fn ulmte_saturates_on_the_linear_test() {
    let sys = linear_test_system();
    let metric = MetricField::from_transverse(&sys, Matrix::identity(2, 2), 10.0, 0.01);
    let samples: Vec<Vector> = (0..50).map(|i| Vector::from_element(1, -5.0 + 0.2 * i as f64)).collect();
    let rep = certify_ulmte(&sys, &metric, &samples).unwrap();
    assert!(rep.residuals.iter().all(|r| r.abs() <= 1e-3), "{:?}", rep.worst);
}

#[test]
fn ulmte_saturates_on_the_phase_circle() {
    let sys = example2_transverse_system(1.0);
    let metric = MetricField::from_transverse(&sys, Matrix::identity(2, 2), 20.0, 0.005);
    for i in 0..50 {
        let x = phase_point(2.0 * PI * i as f64 / 50.0);
        let r = ulmte_residual(&sys, &metric, &x).unwrap();
        assert!(r.abs() <= 1e-3, "phase {} residual {r}", x[1]);
    }
}

#[test]
fn integrated_metric_agrees_with_closed_form() {
    let sys = example2_transverse_system(1.0);
    let q = Matrix::identity(2, 2);
    for i in 0..50 {
        let phase = 2.0 * PI * i as f64 / 50.0;
        let ode = compute_metric(&sys, &q, &phase_point(phase), 20.0, 0.005).unwrap();
        let closed = example2_metric(phase, 20.0, 0.005).unwrap();
        assert!(closed.p12 > 0.0);
        let rel = (&ode - &closed.p).amax() / closed.p.amax();
        assert!(rel <= 1e-4, "phase {phase}: relative mismatch {rel}");
    }
}

#[test]
fn flow_derivative_follows_the_chain_rule() {
    // The phase moves at unit speed, so d_G P = dP/dphase.
    let sys = example2_transverse_system(1.0);
    let metric = MetricField::new(2, Matrix::identity(2, 2), 0.0, f64::INFINITY, |x| Ok(example2_metric(x[1], 20.0, 0.005)?.p));
    for phase in [0.2, 1.0, 2.4, 3.9, 5.5] {
        let x = phase_point(phase);
        let h = 1e-3;
        let chain = (example2_metric(phase + h, 20.0, 0.005).unwrap().p - example2_metric(phase - h, 20.0, 0.005).unwrap().p) / (2.0 * h);
        let dp = metric_flow_derivative(&metric, &sys, &x, 1e-4).unwrap();
        let rel = (&dp - &chain).amax() / chain.amax().max(1.0);
        assert!(rel <= 1e-3, "phase {phase}: {rel}");
        let generic = flow_derivative(&metric, |y: &Vector| sys.manifold_drift(y), &x, 1e-4).unwrap();
        assert_eq!(dp, generic);
    }
}

#[test]
fn closed_form_bounds_contain_the_spectrum() {
    // |exp(At)| e^t is bounded for t >= 0; take its sampled supremum as k~.
    let a = linear_test_matrix();
    let k_tilde = (0..=4000)
        .map(|i| {
            let t = i as f64 * 0.005;
            let (u, v) = ((-t).exp(), (-2.0 * t).exp());
            let m = Matrix::from_row_slice(2, 2, &[2.0 * u - v, u - v, -2.0 * u + 2.0 * v, -u + 2.0 * v]);
            m.norm() * t.exp()
        })
        .fold(0.0, f64::max);
    let mu = a.clone().svd(false, false).singular_values.max();
    let q = Matrix::identity(2, 2);
    let (lo, hi) = metric_bounds(k_tilde, 1.0, mu, &q).unwrap();
    let p = compute_metric(&linear_test_system(), &q, &Vector::zeros(1), 10.0, 0.01).unwrap();
    let ev = sym_eigenvalues(&p);
    assert!(lo <= ev[0] && ev[1] <= hi, "{lo} <= {:?} <= {hi}", ev);
}

#[test]
fn tules_radius_is_positive_for_the_linear_metric() {
    let p = Matrix::from_row_slice(2, 2, &[1.25, 0.25, 0.25, 0.25]);
    let t = tules_params(min_eigenvalue(&p), max_eigenvalue(&p), &Matrix::identity(2, 2), 1.0, 1.0).unwrap();
    assert!(t.r > 0.0 && t.r < t.r_bound);
    assert!(t.lambda > 0.0);
    assert!(t.k >= 1.0);
}

#[test]
fn lyapunov_function_decreases_near_the_manifold() {
    let sys = example2_transverse_system(1.0);
    let metric = MetricField::new(2, Matrix::identity(2, 2), 0.0, f64::INFINITY, |x| Ok(example2_metric(x[1], 20.0, 0.005)?.p));
    let e0 = Vector::from_vec(vec![1e-3, -2e-3]);
    let (_, v) = lyapunov_trace(&sys, &metric, &e0, &Vector::from_vec(vec![0.5, 0.3]), 6.0, 0.005, 20).unwrap();
    for w in v.windows(2) {
        assert!(w[1] < w[0], "{} -> {}", w[0], w[1]);
    }
}
