//! Scaled boundary-distance maps and orbit assignment.

use ndarray::{Array2, Zip};
use rayon::prelude::*;

use super::boundary::{BoundaryCurve, Point};
use super::edt::euclidean_distance_transform;
use crate::error::{invalid, Error, Result};

/// Orbit label of a pixel that belongs to no nucleus.
pub const NO_ORBIT: u32 = u32::MAX;

/// Per-pixel scaled boundary distance and owning nucleus.
///
/// Distances are measured between pixel centers and shifted by half a pixel,
/// so the boundary sits midway between the outermost interior pixel and the
/// first exterior pixel:
///
/// * interior: `bd = 1 - (D_in - 0.5) / d_max`
/// * exterior: `bd = 1 + (D_out - 0.5) / d_max`
///
/// where `D_in` is the distance to the nearest exterior pixel center, `D_out`
/// the distance to the nearest interior pixel center, and
/// `d_max = max D_in - 0.5`. The deepest interior pixel gets `bd = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct BdMap {
    pub bd: Array2<f64>,
    pub orbit: Array2<u32>,
    pub d_max: Vec<f64>,
}

impl BdMap {
    pub fn shape(&self) -> (usize, usize) {
        self.bd.dim()
    }

    pub fn n_nuclei(&self) -> usize {
        self.d_max.len()
    }

    /// Number of pixels assigned to each nucleus.
    pub fn orbit_sizes(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_nuclei()];
        for &o in &self.orbit {
            if o != NO_ORBIT {
                counts[o as usize] += 1;
            }
        }
        counts
    }
}

/// Pixels whose centers `(x = col, y = row)` fall inside the closed curve
/// under the even-odd rule.
pub fn rasterize_interior(points: &[Point], shape: (usize, usize)) -> Array2<bool> {
    let (rows, cols) = shape;
    let mut mask = Array2::from_elem(shape, false);
    let n = points.len();
    let mut crossings = Vec::new();
    for row in 0..rows {
        let y = row as f64;
        crossings.clear();
        for i in 0..n {
            let (p, q) = (points[i], points[(i + 1) % n]);
            // half-open in y so shared vertices are counted once
            if (p[1] <= y && y < q[1]) || (q[1] <= y && y < p[1]) {
                crossings.push(p[0] + (y - p[1]) * (q[0] - p[0]) / (q[1] - p[1]));
            }
        }
        crossings.sort_by(f64::total_cmp);
        for pair in crossings.chunks_exact(2) {
            let start = pair[0].ceil().max(0.0);
            let end = pair[1].ceil().min(cols as f64);
            let mut col = start;
            while col < end {
                mask[(row, col as usize)] = true;
                col += 1.0;
            }
        }
    }
    mask
}

/// Builds the map from the smoothed curves of all nuclei. `shape` is
/// `(rows, cols)`.
pub fn build_bd_map(boundaries: &[BoundaryCurve], shape: (usize, usize)) -> Result<BdMap> {
    if boundaries.is_empty() {
        return Err(invalid("at least one boundary is required"));
    }
    let masks: Vec<Array2<bool>> = boundaries
        .par_iter()
        .map(|b| rasterize_interior(b.smoothed(), shape))
        .collect();
    bd_from_masks(&masks)
}

/// Builds the map from already rasterized interiors, one mask per nucleus.
pub fn bd_from_masks(masks: &[Array2<bool>]) -> Result<BdMap> {
    let Some(first) = masks.first() else {
        return Err(invalid("at least one mask is required"));
    };
    let shape = first.dim();
    if masks.iter().any(|m| m.dim() != shape) {
        return Err(invalid("masks differ in shape"));
    }
    if masks.len() >= NO_ORBIT as usize {
        return Err(invalid("too many nuclei"));
    }
    for (k, m) in masks.iter().enumerate() {
        if !m.iter().any(|&v| v) {
            return Err(Error::EmptyInterior(k));
        }
    }
    let mut owner = Array2::from_elem(shape, NO_ORBIT);
    for (k, m) in masks.iter().enumerate() {
        for (o, &inside) in owner.iter_mut().zip(m.iter()) {
            if inside {
                if *o != NO_ORBIT {
                    return Err(Error::OverlappingInteriors(*o as usize, k));
                }
                *o = k as u32;
            }
        }
    }

    let per_nucleus: Vec<(Array2<f64>, f64)> = masks
        .par_iter()
        .map(scaled_distance)
        .collect::<Result<_>>()?;

    let mut bd = Array2::from_elem(shape, f64::INFINITY);
    let mut orbit = Array2::from_elem(shape, NO_ORBIT);
    // ascending index with a strict comparison keeps the lowest index on ties
    for (k, (bd_k, _)) in per_nucleus.iter().enumerate() {
        Zip::from(&mut bd).and(&mut orbit).and(bd_k).for_each(|b, o, &v| {
            if v < *b {
                *b = v;
                *o = k as u32;
            }
        });
    }
    Ok(BdMap {
        bd,
        orbit,
        d_max: per_nucleus.into_iter().map(|(_, d)| d).collect(),
    })
}

fn scaled_distance(mask: &Array2<bool>) -> Result<(Array2<f64>, f64)> {
    let d_in = euclidean_distance_transform(mask)?;
    let d_out = euclidean_distance_transform(&mask.mapv(|v| !v))?;
    let d_max = d_in.iter().fold(0.0f64, |a, &b| a.max(b)) - 0.5;
    let mut bd = Array2::zeros(mask.dim());
    Zip::from(&mut bd)
        .and(mask)
        .and(&d_in)
        .and(&d_out)
        .for_each(|b, &inside, &di, &de| {
            *b = if inside {
                1.0 - (di - 0.5) / d_max
            } else {
                1.0 + (de - 0.5) / d_max
            };
        });
    Ok((bd, d_max))
}
