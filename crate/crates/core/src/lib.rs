//! Curvature invariants and Kähler metrisability analysis for complex
//! projective structures on complex surfaces, computed in a fixed holomorphic
//! chart gauge.
//!
//! The crate is organised around a small symbolic expression language
//! ([`expr`]) for chart functions, closed under Wirtinger differentiation.
//! On top of it:
//!
//! * [`structure`] extracts Levi-Civita connections from Kähler metrics and
//!   projects them to the trace-free invariants of the projective class;
//! * [`curvature`] computes the Weyl, K and Liouville curvature obstructions
//!   and classifies structures;
//! * [`metrisability`] runs the metrisability pipeline: algebraic Weyl
//!   obstruction, parallel transport of the prolonged 9-dimensional linear
//!   system, holonomy probes, and the closed-form solution family of the flat
//!   structure;
//! * [`geodesics`] integrates generalised geodesics and verifies the defining
//!   wedge condition.

pub mod curvature;
pub mod expr;
pub mod geodesics;
pub mod metrisability;
pub mod structure;
