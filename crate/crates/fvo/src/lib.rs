//! Frequency-varying optimization (FVO) for aggregated frequency-response
//! units.
//!
//! A registered aggregation of assets (batteries, flexible demand) must
//! collectively deliver a frequency response that varies live with the grid
//! frequency deviation: the delivery requirement curve maps the measured
//! center-of-inertia deviation to a fraction of the contracted capacity, so
//! the cost-optimal dispatch is a moving trajectory rather than a fixed
//! setpoint. This crate provides:
//!
//! - [`curves`]: piecewise-linear delivery requirement curves for the three
//!   dynamic services (regulation / moderation / containment) and their
//!   piecewise-constant derivatives;
//! - [`costs`]: per-asset deviation cost functions and the partial
//!   derivatives consumed by the feedforward terms;
//! - [`grid`]: a multi-bus swing-equation exosystem producing the deviation
//!   signal, its rate, and its acceleration, closed through the delivered
//!   asset power;
//! - [`controller`]: two projected fixed-time tracking algorithms (with and
//!   without first-order asset dynamics), their feedback/feedforward driving
//!   terms, and a primal-dual projected-gradient benchmark;
//! - [`oracle`]: an independent exact solver of the per-instant optimization
//!   problem, used as ground truth for every optimality assertion;
//! - [`distributed`]: consensus-based distributed realizations of the
//!   controllers over sparse communication graphs.

pub mod controller;
pub mod costs;
pub mod curves;
pub mod distributed;
pub mod grid;
pub mod oracle;
pub mod rng;
