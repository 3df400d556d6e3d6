//! Fraction of coherent light from interferometric photon correlations.
//!
//! The pipeline runs in four stages:
//!
//! * [`lightfield`] generates stochastic field trajectories (coherent,
//!   chaotic, mixtures, two competing modes) and their closed-form
//!   correlation functions.
//! * [`optics`] sends a field through an asymmetric Mach-Zehnder
//!   interferometer and turns the output intensities into quantized
//!   photodetection timestamps.
//! * [`correlator`] histograms all pair time differences between two
//!   timestamp streams and normalizes them to g^(2X) (or plain g^(2)).
//! * [`inference`] fits the zero-delay dip and converts its amplitude into
//!   upper and lower bounds on the coherent fraction, with confidence
//!   intervals.
//!
//! [`scenario`] wires the stages together for the command-line tool.

pub mod correlator;
pub mod error;
pub mod inference;
pub mod lightfield;
pub mod optics;
pub mod scenario;

pub use error::{Error, Result};
