//! Generalized likelihood ratio tests for parametric regression models with
//! dimension reduction on the residual smoother.

pub mod analysis;
pub mod baseline;
pub mod dataset;
pub mod dimred;
pub mod error;
pub mod glrtest;
pub mod ingest;
pub mod kernelmath;
pub mod linalg;
pub mod nullfit;
pub mod seeds;
pub mod simlab;
pub mod smooth;

pub use dataset::Dataset;
pub use error::{Error, Result, Stage};
