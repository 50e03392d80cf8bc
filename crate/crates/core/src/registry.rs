//! Named built-in systems.

use crate::linalg::{Matrix, Vector};
use crate::ode::VectorField;
use crate::transverse::TransverseSystem;

/// The built-in systems, listed by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SystemId {
    Example1Observer,
    Example1Oscillator,
    Example2Agent,
    Example2Network,
    LinearATest,
}

impl SystemId {
    pub const ALL: [SystemId; 5] = [
        SystemId::Example1Observer,
        SystemId::Example1Oscillator,
        SystemId::Example2Agent,
        SystemId::Example2Network,
        SystemId::LinearATest,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SystemId::Example1Observer => "example1-observer",
            SystemId::Example1Oscillator => "example1-oscillator",
            SystemId::Example2Agent => "example2-agent",
            SystemId::Example2Network => "example2-network",
            SystemId::LinearATest => "linear-A-test",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            SystemId::Example1Observer => "planar oscillator x1' = x2^3, x2' = -x1 observed through y = x1",
            SystemId::Example1Oscillator => "planar oscillator x1' = x2^3, x2' = -x1",
            SystemId::Example2Agent => "agent w1' = w2 + 2 sin w2, w2' = a + u with linear transverse feedback",
            SystemId::Example2Network => "all-to-all network of example2 agents",
            SystemId::LinearATest => "constant transverse generator A = [[0, 1], [-2, -3]]",
        }
    }

    /// Resolves a name; `example1` and `example2` are short aliases.
    pub fn lookup(name: &str) -> Option<SystemId> {
        match name {
            "example1" => Some(SystemId::Example1Observer),
            "example2" => Some(SystemId::Example2Network),
            _ => SystemId::ALL.into_iter().find(|s| s.name() == name),
        }
    }
}

/// Sorted names of all built-in systems.
pub fn list_registry() -> Vec<&'static str> {
    let mut names: Vec<_> = SystemId::ALL.iter().map(|s| s.name()).collect();
    names.sort_unstable();
    names
}

/// `[[0, 1], [-2, -3]]`.
pub fn linear_test_matrix() -> Matrix {
    Matrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, -3.0])
}

/// `x' = A x` with the test matrix.
pub fn linear_test_field() -> VectorField {
    VectorField::linear(linear_test_matrix())
}

/// `e' = A e` over a scalar manifold coordinate drifting at unit speed.
pub fn linear_test_system() -> TransverseSystem {
    let a = linear_test_matrix();
    let a2 = a.clone();
    TransverseSystem::new(2, 1, move |e, _| &a * e, |_, _| Vector::from_element(1, 1.0)).with_transverse_jacobian(move |_| a2.clone())
}
