//! Wigner-function flux correlations through paired classical trajectories
//! with momentum jumps.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod jumpseries;
pub mod kernel;
pub mod microcanon;
pub mod model;
pub mod numeric;
pub mod observables;
pub mod oracle;
pub mod pairdyn;
pub mod units;
pub mod waveprop;

pub use error::{Error, Result};
pub use jumpseries::{Estimate, EstimatorStatus, SeriesConfig, ShellEnsemble, TimeSeries};
pub use kernel::{JumpDraw, JumpKernel};
pub use microcanon::{ShellConfig, ShellMeasure, ShellSample, Support};
pub use pairdyn::{Branch, JumpEvent, Piece, TrajectoryPair};
pub use model::{GaussianTerm, HarmonicTerm, PhasePoint, Potential, PotentialSpec, WellGeometry};
pub use units::{Units, HBAR, MASS};
