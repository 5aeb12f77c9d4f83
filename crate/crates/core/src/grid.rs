//! The fixed analysis grid `r_i = 0.01 i`, `i = 1..=200`, on `(0, 2]`.

/// Number of grid points.
pub const GRID_LEN: usize = 200;
/// Grid spacing, also the Riemann-sum quadrature weight.
pub const GRID_STEP: f64 = 0.01;
/// Right end of the analysis interval.
pub const GRID_END: f64 = 2.0;

/// Abscissa of grid point `i` (zero-based, so `grid_r(0) == 0.01`).
#[inline]
pub fn grid_r(i: usize) -> f64 {
    (i + 1) as f64 / 100.0
}

/// All grid abscissae.
pub fn grid() -> Vec<f64> {
    (0..GRID_LEN).map(grid_r).collect()
}

/// Riemann-sum integral of grid values over `(0, 2]`.
pub fn riemann(values: &[f64]) -> f64 {
    GRID_STEP * values.iter().sum::<f64>()
}

/// Evaluates a function given by its values on the uniform grid at an
/// arbitrary abscissa using monotone (Fritsch–Carlson) cubic Hermite
/// interpolation. Outside `[0.01, 2]` the curve is continued linearly from
/// the two nearest grid values.
#[derive(Debug, Clone)]
pub struct MonotoneInterpolant {
    values: Vec<f64>,
    slopes: Vec<f64>,
}

impl MonotoneInterpolant {
    pub fn new(values: &[f64]) -> Self {
        let n = values.len();
        assert!(n >= 2, "interpolant needs at least two values");
        let h = GRID_STEP;
        let secants: Vec<f64> = values.windows(2).map(|w| (w[1] - w[0]) / h).collect();
        let mut slopes = vec![0.0; n];
        for i in 1..n - 1 {
            let (s0, s1) = (secants[i - 1], secants[i]);
            slopes[i] = if s0 * s1 <= 0.0 {
                0.0
            } else {
                // harmonic mean for equal spacing
                2.0 * s0 * s1 / (s0 + s1)
            };
        }
        slopes[0] = end_slope(&secants, false);
        slopes[n - 1] = end_slope(&secants, true);
        Self {
            values: values.to_vec(),
            slopes,
        }
    }

    /// Evaluates at `x`; the flag is true when `x` needed extrapolation past
    /// the right end of the grid.
    pub fn eval(&self, x: f64) -> (f64, bool) {
        let n = self.values.len();
        let h = GRID_STEP;
        let x0 = h;
        let xn = n as f64 * h;
        if x < x0 {
            let slope = (self.values[1] - self.values[0]) / h;
            return (self.values[0] + slope * (x - x0), false);
        }
        if x > xn {
            let slope = (self.values[n - 1] - self.values[n - 2]) / h;
            return (self.values[n - 1] + slope * (x - xn), x > xn + 1e-12);
        }
        let pos = (x - x0) / h;
        let i = (pos.floor() as usize).min(n - 2);
        let t = pos - i as f64;
        let (y0, y1) = (self.values[i], self.values[i + 1]);
        let (m0, m1) = (self.slopes[i] * h, self.slopes[i + 1] * h);
        let t2 = t * t;
        let t3 = t2 * t;
        let v = (2.0 * t3 - 3.0 * t2 + 1.0) * y0
            + (t3 - 2.0 * t2 + t) * m0
            + (-2.0 * t3 + 3.0 * t2) * y1
            + (t3 - t2) * m1;
        (v, false)
    }
}

// Three-point end derivative with the usual shape-preserving corrections.
fn end_slope(secants: &[f64], right: bool) -> f64 {
    if secants.len() == 1 {
        return secants[0];
    }
    let (d0, d1) = if right {
        (secants[secants.len() - 1], secants[secants.len() - 2])
    } else {
        (secants[0], secants[1])
    };
    let m = (3.0 * d0 - d1) / 2.0;
    if m * d0 <= 0.0 {
        0.0
    } else if d0 * d1 <= 0.0 && m.abs() > 3.0 * d0.abs() {
        3.0 * d0
    } else {
        m
    }
}
