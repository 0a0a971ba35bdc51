//! Observability-blocking state feedback for network synchronization
//! dynamics `x' = -(L + B F) x`, `y = C x`.
//!
//! The crate designs real gains `F` that make a chosen closed-loop mode
//! invisible at a set of measurement nodes while preserving the rest of the
//! open-loop eigenstructure, sparsifies the design through vertex cutsets,
//! restricts it to an accessible region with a stabilizing eigenvalue
//! shift, and machine-checks every result.

pub mod blocker;
pub mod cli;
pub mod eigassign;
pub mod error;
pub mod netmodel;
pub mod regional;
pub mod report;
pub mod spectral;
pub mod topology;
pub mod verify;

pub use blocker::{algorithm1, algorithm2, block_modes, enable_mode, select_mode, BlockingDesign, DesignCase, ModeChoice};
pub use report::DesignReport;
pub use eigassign::{complete_target, gain_from_target, place_eigenvalues, GainMatrix, ModalEntry, ModalTarget, Slot};
pub use error::{Error, Result};
pub use netmodel::{
    build_matrices, load_network, parse_network, save_network, simulate, Edge, NetworkFile,
    NetworkGraph, NetworkModel, SimTrace, SystemMatrices,
};
pub use topology::{grounded_spectrum_gap, induced_subgraph, min_vertex_cut, partition_blocks, BlockedLaplacian, CutPartition};
pub use verify::{unobservable_subspace, verify_design, Claims, Stability, VerificationReport};
pub use regional::{cutset_design, regional_design, regional_stable_design, CutsetDesign, RegionalDesign};
pub use spectral::{eig, null_basis, Eigenstructure, NullBasis, Tolerances};

/// Formats like C's `%.{prec}g`.
pub fn fmt_g(x: f64, prec: usize) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let prec = prec.max(1);
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{:.*e}", prec - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= prec as i32 {
        let mantissa = strip_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (prec as i32 - 1 - exp).max(0) as usize;
        strip_zeros(&format!("{:.*}", decimals, x)).to_string()
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}
