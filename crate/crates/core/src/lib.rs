//! Two-type continuous-space jump dynamics with cross-type repulsion on a
//! periodic box.
//!
//! The crate has four layers:
//! - [`geometry`], [`kernels`], [`theta`]: the model ingredients
//! - [`sim`]: exact event-driven simulation by thinning
//! - [`hierarchy`]: correlation functions and quasi-observables evolved by
//!   operator series, plus the pairing between them
//! - [`estimators`], [`config`], [`orchestrator`]: Monte Carlo functionals,
//!   experiment files and the run layout used by the CLI

pub mod combinatorics;
pub mod config;
pub mod error;
pub mod estimators;
pub mod generator;
pub mod geometry;
pub mod grid;
pub mod hierarchy;
pub mod io;
pub mod kernels;
pub mod observables;
pub mod orchestrator;
pub mod phi;
pub mod quad;
pub mod rng;
pub mod sim;
pub mod theta;

pub use error::{Error, Result};
pub use geometry::{Configuration, Domain, Point, PsiMode};
pub use kernels::{JumpKernel, KernelSet, RepulsionKernel};
