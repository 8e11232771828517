//! Trefftz discontinuous Galerkin solver for the 2D Helmholtz equation with a
//! smooth variable coefficient, using generalized plane waves (GPWs).

// `!(x > 0.0)` guards are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytic;
pub mod assembly;
pub mod epsilon;
pub mod geometry;
pub mod gpw;
pub mod harness;
pub mod quadrature;
pub mod solver;
