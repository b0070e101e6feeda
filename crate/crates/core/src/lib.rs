//! Calibration of time-series valued deterministic simulators.
//!
//! A simulator `g(x)` returns a series on a fixed time grid. Scalarizing the
//! mismatch to a target `g0` as `w(x) = rms(g(x) - g0)` turns the functional
//! inverse problem into a global minimization, which is solved by
//! expected-improvement sequential design over either a Gaussian process on
//! `w` or a sum-of-trees model on `log w`.

pub mod bart;
pub mod design;
pub mod ei;
pub mod gp;
pub mod harness;
pub mod optim;
pub mod scalarize;
pub mod sequential;
pub mod simulators;
