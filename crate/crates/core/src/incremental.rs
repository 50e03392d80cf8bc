//! Incremental stability of `x' = f(x)` seen as transverse stability of the
//! diagonal: `e' = f(x + e) - f(x)`, `x' = f(x)`.

use crate::error::Result;
use crate::linalg::Vector;
use crate::ode::{check_dim, integrate_flow, VectorField};
use crate::transverse::{certify_ulmte, estimate_decay_above_floor, DecayEstimate, MetricField, TransverseSystem, DEFAULT_TAIL_FRACTION};

/// Relative floor below which a gap trace is considered converged to round-off.
pub const GAP_FLOOR: f64 = 1e-10;

/// The `(e, x)`-lift of `f`, with `dF/de(0, x) = df/dx(x)`.
pub fn lift_incremental(f: &VectorField) -> TransverseSystem {
    let n = f.dim();
    let (fe, fg, fj) = (f.clone(), f.clone(), f.clone());
    TransverseSystem::new(n, n, move |e, x| fe.eval(&(x + e)) - fe.eval(x), move |_, x| fg.eval(x))
        .with_transverse_jacobian(move |x| fj.jacobian_unchecked(x))
}

/// Distance between two solutions over time.
#[derive(Debug, Clone, PartialEq)]
pub struct GapTrace {
    pub times: Vec<f64>,
    pub gaps: Vec<f64>,
    /// `None` when the two initial states coincide (the trace is identically zero).
    pub decay: Option<DecayEstimate>,
    pub identical: bool,
}

/// `|X(x1, t) - X(x2, t)|` on the integration grid with its fitted decay.
pub fn incremental_gap(f: &VectorField, x1: &Vector, x2: &Vector, horizon: f64, dt: f64) -> Result<GapTrace> {
    check_dim("incremental_gap", x1.len(), x2.len())?;
    let a = integrate_flow(f, x1, horizon, dt)?;
    let b = integrate_flow(f, x2, horizon, dt)?;
    let gaps: Vec<f64> = a.states.iter().zip(&b.states).map(|(p, q)| (p - q).norm()).collect();
    if x1 == x2 {
        return Ok(GapTrace {
            times: a.times,
            gaps,
            decay: None,
            identical: true,
        });
    }
    let decay = estimate_decay_above_floor(&a.times, &gaps, GAP_FLOOR, DEFAULT_TAIL_FRACTION)?;
    Ok(GapTrace {
        times: a.times,
        gaps,
        decay: Some(decay),
        identical: false,
    })
}

/// Worst largest-eigenvalue residual of
/// `d_f P + P df/dx + df/dx' P + Q` over `samples`.
pub fn contraction_rate_check(f: &VectorField, metric: &MetricField, samples: &[Vector]) -> Result<f64> {
    Ok(certify_ulmte(&lift_incremental(f), metric, samples)?.worst)
}
