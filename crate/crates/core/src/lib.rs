//! Maximum-likelihood regression for zero-inflated count data with B-spline
//! covariate effects.
//!
//! Count expectations enter through a log link and structural-zero
//! probabilities through a logit link. Either linear predictor is a sum of
//! linear terms and B-spline curves; spline knots are either held fixed or
//! optimized inside adaptively widened boxes (see [`estimation::ebok_fit`]).
//!
//! The crate is `no_std` and only needs `alloc`. Parallel drivers plug in
//! through [`exec::Executor`].

#![no_std]
#![deny(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod distributions;
pub mod error;
pub mod estimation;
pub mod exec;
pub mod linalg;
mod math;
pub mod model;
pub mod optimizer;
pub mod selection;
pub mod simulation;
pub mod splines;

pub use distributions::{ZiParams, ZinbParams, ZipParams};
pub use error::{Error, Result};
pub use estimation::{ebok_fit, fit, fit_fixed_knots, BoxConfig, FitOptions, FittedModel};
pub use exec::{Executor, Sequential};
pub use model::{
    assemble, AssembledModel, ComponentSpec, Dataset, Family, KnotPlacement, KnotRegime,
    ModelSpec, ParamVector, SplineSpec, TermKind, TermSpec,
};
pub use optimizer::{maximize, BoxBounds, OptimOptions, OptimReport};
pub use selection::{cv_mre, grid_run, make_folds, score, FoldPlan, MreKind, SelectionScore};
pub use splines::{KnotGrid, NaturalCubicMap};
