//! Bidirectional synthesis of MRI volumes across field strengths.
//!
//! The crate has two halves that share one data model:
//!
//! * **Degradation** — estimate per-tissue SNR from a high-field volume
//!   ([`contrast::estimate_snr`]), solve a bounded regularized least-squares
//!   problem for the tissue degradation vector ([`contrast::estimate_m`]),
//!   and push the volume through the forward model (mask, smooth, pool,
//!   scale, add Rician noise) to get an ultra-low-field-like volume
//!   ([`forward::simulate_ulf`]).
//! * **Super-resolution** — fit an implicit neural representation to a single
//!   ULF volume and its segmentation, with the forward model embedded in the
//!   training loss so that no high-field supervision is needed
//!   ([`train::train`]), then sample the fitted network on an arbitrary
//!   lattice ([`inr::predict_grid`]).
//!
//! Everything here is `no_std` + `alloc`; file formats and the CLI live in
//! the companion `mrisynth` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod canny;
pub mod contrast;
pub mod error;
pub mod forward;
pub mod grid;
pub mod inr;
pub mod metrics;
pub mod phantom;
pub mod resample;
pub mod rng;
pub mod train;
pub mod volume;

pub use error::Error;
pub use volume::{Segmentation, TissueClass, Volume};
