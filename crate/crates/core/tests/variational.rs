use tesa_core::observer::example1_field;
use tesa_core::ode::{integrate_flow, integrate_variational};
use tesa_core::registry::linear_test_field;
use tesa_core::sync::example2_drift;
use tesa_core::{Matrix, Vector, VectorField};

/// Central-difference sensitivity of the time-`t` flow map, column by column.
fn fd_sensitivity(f: &VectorField, x0: &Vector, t: f64, dt: f64, eps: f64) -> Matrix {
    let n = x0.len();
    let mut s = Matrix::zeros(n, n);
    for j in 0..n {
        let mut xp = x0.clone();
        let mut xm = x0.clone();
        xp[j] += eps;
        xm[j] -= eps;
        let yp = integrate_flow(f, &xp, t, dt).unwrap().final_state().clone();
        let ym = integrate_flow(f, &xm, t, dt).unwrap().final_state().clone();
        s.set_column(j, &((yp - ym) / (2.0 * eps)));
    }
    s
}

fn check(f: &VectorField, x0: &[f64], t: f64) {
    let x0 = Vector::from_column_slice(x0);
    let (_, phi) = integrate_variational(f, &x0, t, 0.001).unwrap();
    let fd = fd_sensitivity(f, &x0, t, 0.001, 1e-5);
    let rel = (phi.final_matrix() - &fd).amax() / fd.amax();
    assert!(rel <= 1e-4, "relative error {rel}");
}

#[test]
fn oscillator_sensitivity() {
    check(&example1_field(), &[1.0, 0.5], 5.0);
    check(&example1_field(), &[-0.3, 1.4], 5.0);
}

#[test]
fn agent_sensitivity() {
    check(&example2_drift(1.0), &[0.5, 0.3], 5.0);
    check(&example2_drift(1.0), &[2.0, 2.0], 5.0);
}

#[test]
fn linear_sensitivity() {
    check(&linear_test_field(), &[1.0, -1.0], 5.0);
}

#[test]
fn fd_jacobian_field_agrees_with_analytic() {
    let analytic = example1_field();
    let numeric = VectorField::new(2, |x| Vector::from_vec(vec![x[1].powi(3), -x[0]]));
    let x0 = Vector::from_vec(vec![0.8, -0.6]);
    let (_, a) = integrate_variational(&analytic, &x0, 3.0, 0.001).unwrap();
    let (_, b) = integrate_variational(&numeric, &x0, 3.0, 0.001).unwrap();
    assert!((a.final_matrix() - b.final_matrix()).amax() <= 1e-6);
}
