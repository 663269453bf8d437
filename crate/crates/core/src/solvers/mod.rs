//! Reference solvers: Darcy finite differences, Lie-Trotter splitting for NLS
//! (Fourier and POD variants) and ETDRK4 for KP-I.

pub mod darcy;
pub mod kp;
pub mod nls;

pub use darcy::{solve_darcy, DarcyProblem};
pub use kp::{etdrk4_kp, kp_linear_exact, KpProblem};
pub use nls::{lie_trotter_nls, pod_lie_trotter_nls, BasisType, NlsProblem};
