//! Boundary-distance profiling of marker expression in segmented nuclei.
//!
//! The pipeline runs geometry (boundary smoothing, BD maps) → profiles
//! (per-nucleus expression curves on a 200-point grid over `(0, 2]`) →
//! alignment (scaling, dilation registration) → inference (permutation
//! tests, penalized discriminant, piecewise-linear fits).

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod alignment;
pub mod error;
pub mod fda;
pub mod geometry;
pub mod grid;
pub mod image;
pub mod io;
pub mod optimize;
pub mod pda;
pub mod plm;
pub mod profiles;
pub mod spline;
pub mod stats;
pub mod synth;
pub mod warning;

pub use alignment::{
    dilate_curve, register_between, register_paired, register_within, scale_curve, BetweenResult,
    RegistrationOptions, RegistrationResult,
};
pub use error::{Error, Result};
pub use fda::{Design, PermutationOptions, TestCurve};
pub use geometry::{build_bd_map, smooth_boundary, BdMap, BoundaryCurve, Point, Smoothing};
pub use grid::{grid, grid_r, GRID_LEN};
pub use image::{ChannelRole, LabeledImage};
pub use pda::{DiscriminantModel, PdaOptions, ScoreMode};
pub use plm::{GroupComparison, KnotPenalty, PiecewiseFit};
pub use profiles::{ExpressionCurve, ProfileCloud};
pub use synth::{SynthOutput, SynthSpec, Template};
pub use warning::{Warning, WarningKind};
