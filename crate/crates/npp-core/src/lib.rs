//! Numerical machinery for finding and certifying nontrivial projections on
//! finite-dimensional normed spaces.
//!
//! A normed space is presented as a symmetric convex body with an evaluable
//! gauge ([`bodies::GaugeBody`]). The library provides:
//!
//! * exact-or-witnessed gauge, support, polar, section, projection and
//!   operator-norm evaluation ([`bodies`]);
//! * seeded Monte-Carlo and exact estimators for Gaussian mean widths,
//!   Rademacher sign averages and Haar-random subspaces ([`gaussian`]);
//! * balancing and optimization of the Gaussian-width position ([`position`]);
//! * random almost-Euclidean sections with projection-norm certificates
//!   ([`euclidean`]);
//! * the greedy-chain / restricted-invertibility / sign-selection / blocking
//!   pipeline extracting well-complemented nearly-l1 subspaces ([`extraction`]);
//! * the three-branch dichotomy driver producing audited projection
//!   certificates, an independent certificate verifier, and factorization
//!   lower-bound benchmarks ([`driver`]).
//!
//! Every randomized routine draws from counter-based substreams keyed by
//! `(seed, operation, index)`, so results are bit-for-bit reproducible across
//! runs and thread counts.

pub mod bodies;
pub mod cli;
pub mod convex;
pub mod corpus;
pub mod driver;
pub mod euclidean;
pub mod extraction;
pub mod gaussian;
pub mod linalg;
pub mod lp;
pub mod position;
pub mod rng;

pub use bodies::{BodyError, BodySpec, GaugeBody, NormEstimate, NormKind, Subspace};
pub use gaussian::{EllEstimate, SignAverage};
