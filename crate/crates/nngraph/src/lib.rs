//! Learning the nearest-neighbor graph of a finite point set from a
//! noisy pairwise-distance oracle.
//!
//! The library provides adaptive sampling algorithms built on
//! confidence bounds, with optional triangle-inequality propagation
//! that lets samples for one pair tighten bounds on others. Baselines
//! (uniform sampling, anchor triangulation) and synthetic dataset
//! generators are included, along with a reproducible experiment
//! harness driven by the `nn-harness` binary.

pub mod algorithms;
pub mod bounds;
pub mod harness;
pub mod matrix;
pub mod metric;
pub mod oracles;
pub mod reference;
