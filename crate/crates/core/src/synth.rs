//! Synthetic labeled images with known boundaries and expression curves.

use std::f64::consts::{SQRT_2, TAU};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{invalid, Error, Result};
use crate::geometry::{build_bd_map, BdMap, BoundaryCurve, Point};
use crate::grid::{grid_r, GRID_LEN};
use crate::image::{ChannelRole, LabeledImage};

/// Points on the exact curve used to rasterize a synthetic nucleus.
const TRUTH_SAMPLES: usize = 1000;

/// Expression as a function of true boundary distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Template {
    Constant {
        value: f64,
    },
    /// `inside` for `r <= at`, `outside` beyond.
    Step {
        inside: f64,
        outside: f64,
        at: f64,
    },
    /// Flat at `from_value` up to `start`, linear to `to_value` at `end`,
    /// flat afterwards.
    Ramp {
        from_value: f64,
        to_value: f64,
        start: f64,
        end: f64,
    },
    /// Gaussian-blurred step from `inside` to `outside` at `center`: the
    /// transition has standard deviation `width`.
    SmoothStep {
        inside: f64,
        outside: f64,
        center: f64,
        width: f64,
    },
    /// `base + height · exp(−(r − center)² / (2 width²))`.
    BoundaryPeak {
        base: f64,
        height: f64,
        center: f64,
        width: f64,
    },
}

impl Template {
    pub fn eval(&self, r: f64) -> f64 {
        match *self {
            Template::Constant { value } => value,
            Template::Step { inside, outside, at } => {
                if r <= at {
                    inside
                } else {
                    outside
                }
            }
            Template::Ramp {
                from_value,
                to_value,
                start,
                end,
            } => {
                if r <= start {
                    from_value
                } else if r >= end {
                    to_value
                } else {
                    from_value + (to_value - from_value) * (r - start) / (end - start)
                }
            }
            Template::SmoothStep {
                inside,
                outside,
                center,
                width,
            } => outside + (inside - outside) * 0.5 * erfc((r - center) / (SQRT_2 * width)),
            Template::BoundaryPeak {
                base,
                height,
                center,
                width,
            } => base + height * (-(r - center).powi(2) / (2.0 * width * width)).exp(),
        }
    }

    /// The template on the 200-point grid.
    pub fn on_grid(&self) -> Vec<f64> {
        (0..GRID_LEN).map(|i| self.eval(grid_r(i))).collect()
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Template::Constant { value } => value.is_finite(),
            Template::Step { inside, outside, at } => inside.is_finite() && outside.is_finite() && at.is_finite(),
            Template::Ramp { from_value, to_value, start, end } => {
                from_value.is_finite() && to_value.is_finite() && start < end
            }
            Template::SmoothStep { inside, outside, center, width } => {
                inside.is_finite() && outside.is_finite() && center.is_finite() && width > 0.0
            }
            Template::BoundaryPeak { base, height, center, width } => {
                base.is_finite() && height.is_finite() && center.is_finite() && width > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("invalid template {self:?}")))
        }
    }
}

/// Radial lobes added to an ellipse: the radius at angle θ is scaled by
/// `1 + amplitude · cos(lobes · θ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Star {
    pub lobes: u32,
    pub amplitude: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipseSpec {
    /// `[x, y]` in pixels (x along columns).
    pub center: Point,
    /// Semi-axes in pixels.
    pub axes: [f64; 2],
    /// Radians, counter-clockwise from the x axis.
    pub rotation: f64,
    #[serde(default)]
    pub star: Option<Star>,
}

impl EllipseSpec {
    /// Radius of a circle about the center enclosing the shape.
    pub fn bounding_radius(&self) -> f64 {
        let amp = self.star.map_or(0.0, |s| s.amplitude.abs());
        self.axes[0].max(self.axes[1]) * (1.0 + amp)
    }

    /// Point at parameter angle `theta`, optionally pushed radially by `dr`.
    pub fn point(&self, theta: f64, dr: f64) -> Point {
        let scale = self.star.map_or(1.0, |s| 1.0 + s.amplitude * (s.lobes as f64 * theta).cos());
        let (ex, ey) = (self.axes[0] * theta.cos() * scale, self.axes[1] * theta.sin() * scale);
        let rho = ex.hypot(ey);
        let f = if rho > 0.0 { (rho + dr) / rho } else { 1.0 };
        let (c, s) = (self.rotation.cos(), self.rotation.sin());
        [
            self.center[0] + f * (c * ex - s * ey),
            self.center[1] + f * (s * ex + c * ey),
        ]
    }

    /// `n` vertices at equally spaced parameter angles.
    pub fn polygon(&self, n: usize) -> Vec<Point> {
        (0..n).map(|k| self.point(TAU * k as f64 / n as f64, 0.0)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub role: ChannelRole,
    pub template: Template,
    /// Coefficients of `1, x, y, x², xy, y²` with `x`, `y` scaled to `[0, 1]`
    /// across the image.
    #[serde(default = "flat_illumination")]
    pub illumination: [f64; 6],
}

pub fn flat_illumination() -> [f64; 6] {
    [1.0, 0.0, 0.0, 0.0, 0.0, 0.0]
}

fn default_vertices() -> usize {
    40
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    /// `(rows, cols)`.
    pub shape: (usize, usize),
    pub nuclei: Vec<EllipseSpec>,
    pub channels: Vec<ChannelSpec>,
    #[serde(default)]
    pub noise_sigma: f64,
    /// Half-width `e` of the uniform radial error on marked vertices.
    #[serde(default)]
    pub boundary_jitter: f64,
    /// Marked vertices per nucleus.
    #[serde(default = "default_vertices")]
    pub vertices: usize,
    /// Required clearance between nuclei and from the image edge.
    #[serde(default)]
    pub margin: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let (rows, cols) = self.shape;
        if rows < 3 || cols < 3 {
            return Err(invalid("synthetic image must be at least 3×3"));
        }
        if self.nuclei.is_empty() {
            return Err(invalid("at least one nucleus is required"));
        }
        if self.channels.is_empty() {
            return Err(invalid("at least one channel is required"));
        }
        if !(self.noise_sigma >= 0.0 && self.boundary_jitter >= 0.0 && self.margin >= 0.0) {
            return Err(invalid("noise, jitter and margin must be nonnegative"));
        }
        if self.vertices < 3 {
            return Err(invalid("need at least 3 marked vertices per nucleus"));
        }
        for ch in &self.channels {
            ch.template.validate()?;
            if ch.illumination.iter().any(|c| !c.is_finite()) {
                return Err(invalid("illumination coefficients must be finite"));
            }
        }
        for (k, e) in self.nuclei.iter().enumerate() {
            if !(e.axes[0] > 0.0 && e.axes[1] > 0.0) {
                return Err(invalid(format!("nucleus {k} has nonpositive axes")));
            }
            if let Some(s) = e.star {
                if !(s.amplitude.abs() < 1.0) {
                    return Err(invalid(format!("nucleus {k} star amplitude must be below 1")));
                }
            }
        }
        check_layout(&self.nuclei, self.shape, self.margin + self.boundary_jitter)
    }
}

/// Checks that bounding circles stay `margin` apart and inside the image.
pub fn check_layout(nuclei: &[EllipseSpec], shape: (usize, usize), margin: f64) -> Result<()> {
    let (max_x, max_y) = (shape.1 as f64 - 1.0, shape.0 as f64 - 1.0);
    for (k, e) in nuclei.iter().enumerate() {
        let r = e.bounding_radius() + margin;
        let [x, y] = e.center;
        if x - r < 0.0 || y - r < 0.0 || x + r > max_x || y + r > max_y {
            return Err(Error::InfeasibleLayout(format!("nucleus {k} does not fit inside the image")));
        }
        for (j, f) in nuclei[..k].iter().enumerate() {
            let d = (e.center[0] - f.center[0]).hypot(e.center[1] - f.center[1]);
            if d <= e.bounding_radius() + f.bounding_radius() + margin {
                return Err(Error::InfeasibleLayout(format!("nuclei {j} and {k} are too close")));
            }
        }
    }
    Ok(())
}

/// Places `n` randomly oriented ellipses with semi-axes drawn from
/// `axis_range` by rejection sampling.
pub fn random_layout(
    shape: (usize, usize),
    n: usize,
    axis_range: (f64, f64),
    margin: f64,
    seed: u64,
) -> Result<Vec<EllipseSpec>> {
    if !(axis_range.0 > 0.0 && axis_range.0 <= axis_range.1) {
        return Err(invalid("axis range must be positive and ordered"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<EllipseSpec> = Vec::with_capacity(n);
    let mut attempts = 0;
    while out.len() < n {
        attempts += 1;
        if attempts > 10_000 * n.max(1) {
            return Err(Error::InfeasibleLayout(format!("could not place {n} nuclei")));
        }
        let axes = [
            rng.random_range(axis_range.0..=axis_range.1),
            rng.random_range(axis_range.0..=axis_range.1),
        ];
        let r = axes[0].max(axes[1]) + margin;
        let (w, h) = (shape.1 as f64 - 1.0, shape.0 as f64 - 1.0);
        if 2.0 * r >= w || 2.0 * r >= h {
            return Err(Error::InfeasibleLayout("nuclei larger than the image".into()));
        }
        let cand = EllipseSpec {
            center: [rng.random_range(r..=w - r), rng.random_range(r..=h - r)],
            axes,
            rotation: rng.random_range(0.0..std::f64::consts::PI),
            star: None,
        };
        let mut trial = out.clone();
        trial.push(cand);
        if check_layout(&trial, shape, margin).is_ok() {
            out = trial;
        }
    }
    Ok(out)
}

/// A generated dataset with its ground truth.
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub image: LabeledImage,
    /// Exact curves used for rendering.
    pub true_boundaries: Vec<BoundaryCurve>,
    /// Marked vertices without error.
    pub true_vertices: Vec<Vec<Point>>,
    /// Marked vertices displaced radially by `U[−e, e]`.
    pub jittered_vertices: Vec<Vec<Point>>,
    /// Template of each channel on the grid.
    pub truth_curves: Vec<(ChannelRole, Vec<f64>)>,
    /// Map of the true boundaries.
    pub true_bd: BdMap,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Renders `illumination(x, y) · template(BD_true) + N(0, σ²)` per channel,
/// clipped to `[0, 255]` and rounded to integers.
pub fn generate(spec: &SynthSpec) -> Result<SynthOutput> {
    spec.validate()?;
    let (rows, cols) = spec.shape;
    let true_boundaries = spec
        .nuclei
        .iter()
        .map(|e| BoundaryCurve::from_smooth_points(e.polygon(TRUTH_SAMPLES)))
        .collect::<Result<Vec<_>>>()?;
    let true_bd = build_bd_map(&true_boundaries, spec.shape)?;

    let true_vertices: Vec<Vec<Point>> = spec.nuclei.iter().map(|e| e.polygon(spec.vertices)).collect();
    let mut jitter_rng = stream(spec.seed, 0);
    let jittered_vertices = spec
        .nuclei
        .iter()
        .map(|e| {
            (0..spec.vertices)
                .map(|k| {
                    let dr = if spec.boundary_jitter > 0.0 {
                        jitter_rng.random_range(-spec.boundary_jitter..=spec.boundary_jitter)
                    } else {
                        0.0
                    };
                    e.point(TAU * k as f64 / spec.vertices as f64, dr)
                })
                .collect()
        })
        .collect();

    let normal = Normal::new(0.0, spec.noise_sigma).map_err(|e| invalid(e.to_string()))?;
    let planes = spec
        .channels
        .iter()
        .enumerate()
        .map(|(c, ch)| {
            let mut rng = stream(spec.seed, 1 + c as u64);
            let sx = 1.0 / (cols as f64 - 1.0);
            let sy = 1.0 / (rows as f64 - 1.0);
            let k = ch.illumination;
            let plane = Array2::from_shape_fn(spec.shape, |(row, col)| {
                let (x, y) = (col as f64 * sx, row as f64 * sy);
                let illum = k[0] + k[1] * x + k[2] * y + k[3] * x * x + k[4] * x * y + k[5] * y * y;
                let mut v = illum * ch.template.eval(true_bd.bd[(row, col)]);
                if spec.noise_sigma > 0.0 {
                    v += normal.sample(&mut rng);
                }
                v.clamp(0.0, 255.0).round()
            });
            (ch.role, plane)
        })
        .collect();
    let image = LabeledImage::new(planes, 1.0)?;
    Ok(SynthOutput {
        image,
        true_boundaries,
        true_vertices,
        jittered_vertices,
        truth_curves: spec.channels.iter().map(|c| (c.role, c.template.on_grid())).collect(),
        true_bd,
    })
}
