//! Adam update directions with quadratic-model learning-rate selection and
//! Levenberg-Marquardt damping ("AdamQLR"), together with the machinery to
//! run it: a small reverse-mode autodiff engine with exact Hessian and
//! Gauss-Newton vector products, MLP and Rosenbrock objectives, dataset
//! loaders, a training harness, random-search tuning and bootstrap trend
//! statistics.
//!
//! The runnable programs under `examples/` walk through each capability.

// `!(x > 0.0)` is deliberate throughout: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod bench;
pub mod models;
pub mod data;
pub mod optim;
