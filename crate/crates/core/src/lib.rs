//! Numerical engine for stochastic PDEs on metric graphs obtained by
//! Freidlin–Wentzell averaging: graph construction from level sets or narrow
//! cross-sections, the averaged generator and its semigroup, SPDE and skeleton
//! solvers, rare-event sampling, multiscale 2-D solvers and weight audits.
//!
//! The graph, generator and solver layers are generic over [`Real`]; the
//! aliases below fix the scalar type for common use.

pub mod audit;
pub mod deviations;
pub mod error;
pub mod experiments;
pub mod generator;
pub mod geometry;
pub mod linalg;
pub mod metric_graph;
pub mod multiscale;
pub mod noise;
pub mod optim;
pub mod skeleton;
pub mod spde;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Graph = metric_graph::MetricGraph<f64>;
pub type Coefficients = metric_graph::EdgeCoefficientTable<f64>;
pub type Space = metric_graph::GraphSpace<f64>;
pub type Function = metric_graph::GraphFunction<f64>;
pub type Weight = metric_graph::GraphWeight<f64>;
pub type Graph32 = metric_graph::MetricGraph<f32>;
pub type Space32 = metric_graph::GraphSpace<f32>;
