//! Boundary smoothing, exact distance transforms and scaled BD maps.

pub mod bdmap;
pub mod boundary;
pub mod edt;

pub use bdmap::{bd_from_masks, build_bd_map, rasterize_interior, BdMap, NO_ORBIT};
pub use boundary::{
    exclude_border_nuclei, find_self_intersection, keep_interior_indices, shoelace_area, smooth_boundary,
    BoundaryCurve, Point, Smoothing, DEFAULT_SAMPLES,
};
pub use edt::{euclidean_distance_transform, squared_edt};
