//! Closed nucleus boundaries and their periodic-spline smoothing.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::spline::{PeriodicSmoother, LOG_LAMBDA_RANGE};

pub type Point = [f64; 2];

/// Default number of points on the resampled boundary.
pub const DEFAULT_SAMPLES: usize = 1000;

/// Arc-length spacing (pixels) at which the polygon is sampled before the
/// periodic smoother is fitted.
pub const ARC_SPACING: f64 = 0.5;

/// How a smoothing penalty is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Smoothing {
    /// Minimize generalized cross-validation.
    #[default]
    Gcv,
    /// Use the given penalty.
    Fixed(f64),
}

/// A marked polygon together with its smoothed, oversampled resampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryCurve {
    vertices: Vec<Point>,
    smoothed: Vec<Point>,
    smoothing_penalty: f64,
}

impl BoundaryCurve {
    /// Wraps an already smooth closed curve (e.g. a densely sampled analytic
    /// shape) without refitting it.
    pub fn from_smooth_points(points: Vec<Point>) -> Result<Self> {
        let vertices = clean_vertices(&points)?;
        if shoelace_area(&vertices).abs() <= f64::EPSILON {
            return Err(Error::DegeneratePolygon("zero enclosed area".into()));
        }
        Ok(Self {
            smoothed: vertices.clone(),
            vertices,
            smoothing_penalty: 0.0,
        })
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    /// The resampled curve; the closing edge from the last point back to the
    /// first is implicit.
    pub fn smoothed(&self) -> &[Point] {
        &self.smoothed
    }

    pub fn smoothing_penalty(&self) -> f64 {
        self.smoothing_penalty
    }

    /// Signed shoelace area of the smoothed curve.
    pub fn area(&self) -> f64 {
        shoelace_area(&self.smoothed)
    }

    /// Axis-aligned bounds `(min_x, min_y, max_x, max_y)` of the smoothed curve.
    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        self.smoothed.iter().fold(
            (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
            |(a, b, c, d), p| (a.min(p[0]), b.min(p[1]), c.max(p[0]), d.max(p[1])),
        )
    }
}

/// Signed area by the shoelace formula (positive for counter-clockwise
/// ordering in a y-up frame).
pub fn shoelace_area(points: &[Point]) -> f64 {
    let n = points.len();
    let mut acc = 0.0;
    for i in 0..n {
        let (p, q) = (points[i], points[(i + 1) % n]);
        acc += p[0] * q[1] - q[0] * p[1];
    }
    0.5 * acc
}

fn orient(a: Point, b: Point, c: Point) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

fn on_segment(a: Point, b: Point, p: Point) -> bool {
    p[0] >= a[0].min(b[0]) && p[0] <= a[0].max(b[0]) && p[1] >= a[1].min(b[1]) && p[1] <= a[1].max(b[1])
}

fn segments_intersect(a: Point, b: Point, c: Point, d: Point) -> bool {
    let (o1, o2, o3, o4) = (orient(a, b, c), orient(a, b, d), orient(c, d, a), orient(c, d, b));
    if o1 * o2 < 0.0 && o3 * o4 < 0.0 {
        return true;
    }
    (o1 == 0.0 && on_segment(a, b, c))
        || (o2 == 0.0 && on_segment(a, b, d))
        || (o3 == 0.0 && on_segment(c, d, a))
        || (o4 == 0.0 && on_segment(c, d, b))
}

/// First pair of crossing edges, if any. Edge `i` joins vertex `i` to `i+1`.
pub fn find_self_intersection(points: &[Point]) -> Option<(usize, usize)> {
    let n = points.len();
    for i in 0..n {
        let (a, b) = (points[i], points[(i + 1) % n]);
        for j in i + 1..n {
            // adjacent edges share a vertex
            if j == i + 1 || (i == 0 && j == n - 1) {
                continue;
            }
            if segments_intersect(a, b, points[j], points[(j + 1) % n]) {
                return Some((i, j));
            }
        }
    }
    None
}

// Drops repeated consecutive vertices (including an explicit closing vertex)
// and checks the remaining polygon.
fn clean_vertices(points: &[Point]) -> Result<Vec<Point>> {
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(invalid("non-finite vertex coordinate"));
    }
    let mut out: Vec<Point> = Vec::with_capacity(points.len());
    for &p in points {
        if out.last() != Some(&p) {
            out.push(p);
        }
    }
    while out.len() > 1 && out.first() == out.last() {
        out.pop();
    }
    if out.len() < 3 {
        return Err(Error::DegeneratePolygon(format!(
            "{} distinct vertices, need at least 3",
            out.len()
        )));
    }
    Ok(out)
}

/// Samples the closed polygon at `n` points equally spaced in arc length,
/// starting at the first vertex.
fn resample_by_arc_length(vertices: &[Point], n: usize) -> Vec<Point> {
    let m = vertices.len();
    let lengths: Vec<f64> = (0..m)
        .map(|i| {
            let (p, q) = (vertices[i], vertices[(i + 1) % m]);
            (q[0] - p[0]).hypot(q[1] - p[1])
        })
        .collect();
    let perimeter: f64 = lengths.iter().sum();
    let step = perimeter / n as f64;
    let mut out = Vec::with_capacity(n);
    let mut edge = 0;
    let mut edge_start = 0.0;
    for k in 0..n {
        let s = k as f64 * step;
        while edge + 1 < m && edge_start + lengths[edge] <= s {
            edge_start += lengths[edge];
            edge += 1;
        }
        let (p, q) = (vertices[edge], vertices[(edge + 1) % m]);
        let t = if lengths[edge] > 0.0 {
            ((s - edge_start) / lengths[edge]).clamp(0.0, 1.0)
        } else {
            0.0
        };
        out.push([p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]);
    }
    out
}

/// Fits periodic cubic smoothing splines to both coordinates of a closed
/// polygon, parameterized by arc length normalized to `[0, 2π)`, and
/// resamples the fitted curve at `samples` equispaced parameter values.
///
/// The polygon is first sampled every [`ARC_SPACING`] pixels along its edges,
/// so a zero penalty reproduces the polygon itself. Under [`Smoothing::Gcv`]
/// one penalty is shared by both coordinates and chosen by their pooled GCV
/// score.
pub fn smooth_boundary(vertices: &[Point], penalty: Smoothing, samples: usize) -> Result<BoundaryCurve> {
    let clean = clean_vertices(vertices)?;
    if let Some((i, j)) = find_self_intersection(&clean) {
        return Err(Error::SelfIntersecting(i, j));
    }
    if shoelace_area(&clean).abs() <= f64::EPSILON {
        return Err(Error::DegeneratePolygon("zero enclosed area".into()));
    }
    if samples < clean.len() {
        return Err(invalid(format!(
            "samples ({samples}) must be at least the vertex count ({})",
            clean.len()
        )));
    }
    if let Smoothing::Fixed(l) = penalty {
        if !(l >= 0.0) {
            return Err(invalid("smoothing penalty must be nonnegative"));
        }
    }

    let perimeter: f64 = (0..clean.len())
        .map(|i| {
            let (p, q) = (clean[i], clean[(i + 1) % clean.len()]);
            (q[0] - p[0]).hypot(q[1] - p[1])
        })
        .sum();
    let n = ((perimeter / ARC_SPACING).ceil() as usize).max(4 * clean.len()).max(16);
    let dense = resample_by_arc_length(&clean, n);
    let xs: Vec<f64> = dense.iter().map(|p| p[0]).collect();
    let ys: Vec<f64> = dense.iter().map(|p| p[1]).collect();
    let smoother = PeriodicSmoother::new(&[&xs, &ys])?;
    let lambda = match penalty {
        Smoothing::Fixed(l) => l,
        Smoothing::Gcv => {
            let choice = smoother.select_lambda(LOG_LAMBDA_RANGE);
            if choice.flat {
                0.0
            } else {
                choice.lambda
            }
        }
    };
    let fit = smoother.fit(lambda);
    let smoothed: Vec<Point> = (0..samples)
        .map(|k| {
            let t = TAU * k as f64 / samples as f64;
            [fit.eval(0, t), fit.eval(1, t)]
        })
        .collect();
    if shoelace_area(&smoothed).abs() <= f64::EPSILON {
        return Err(Error::DegeneratePolygon("smoothed curve encloses no area".into()));
    }
    Ok(BoundaryCurve {
        vertices: clean,
        smoothed,
        smoothing_penalty: lambda,
    })
}

/// Keeps the nuclei whose smoothed curve stays at least `margin` pixels away
/// from every image edge. `shape` is `(rows, cols)`.
pub fn exclude_border_nuclei(
    boundaries: &[BoundaryCurve],
    shape: (usize, usize),
    margin: f64,
) -> Vec<BoundaryCurve> {
    keep_interior_indices(boundaries, shape, margin)
        .into_iter()
        .map(|i| boundaries[i].clone())
        .collect()
}

/// Indices retained by [`exclude_border_nuclei`].
pub fn keep_interior_indices(boundaries: &[BoundaryCurve], shape: (usize, usize), margin: f64) -> Vec<usize> {
    let (rows, cols) = shape;
    let (max_x, max_y) = (cols as f64 - 1.0, rows as f64 - 1.0);
    boundaries
        .iter()
        .enumerate()
        .filter(|(_, b)| {
            let (x0, y0, x1, y1) = b.bounds();
            x0 >= margin && y0 >= margin && x1 <= max_x - margin && y1 <= max_y - margin
        })
        .map(|(i, _)| i)
        .collect()
}
