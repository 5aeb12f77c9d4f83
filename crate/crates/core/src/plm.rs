//! Discontinuous three-piece linear fits with a penalized knot search.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::{grid_r, GRID_LEN};
use crate::profiles::grid_weights;
use crate::stats::{median, paired_t_test, welch_t_test};
use crate::warning::{Warning, WarningKind};

/// Knot penalties tried, smallest first, when the penalty is chosen
/// automatically.
pub fn knot_penalty_ladder() -> Vec<f64> {
    (0..=12).map(|t| 1e-6 * 4f64.powi(t)).collect()
}

/// Penalty for the knot search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KnotPenalty {
    /// Smallest ladder value with a unique grid minimizer.
    #[default]
    Auto,
    Fixed(f64),
}

/// Weighted least-squares lines on the three segments for given knots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentFit {
    pub intercepts: [f64; 3],
    pub slopes: [f64; 3],
    pub wsse: f64,
    /// The middle segment holds no grid points; its line is NaN.
    pub empty_middle: bool,
}

/// A fitted three-piece model `g(r) = a_i + b_i r` for `κ_i < r ≤ κ_{i+1}`
/// with `κ_1 = 0`, `κ_4 = 2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseFit {
    pub kappa2: f64,
    pub kappa3: f64,
    pub intercepts: [f64; 3],
    pub slopes: [f64; 3],
    pub wsse: f64,
    pub r_squared: f64,
    pub lambda_knot: f64,
    /// Exactly one grid cell attains the penalized minimum.
    pub unique: bool,
    pub warnings: Vec<Warning>,
}

impl PiecewiseFit {
    /// Fitted value at `r`.
    pub fn eval(&self, r: f64) -> f64 {
        let s = if r <= self.kappa2 {
            0
        } else if r <= self.kappa3 {
            1
        } else {
            2
        };
        self.intercepts[s] + self.slopes[s] * r
    }

    /// Parameters in report order: a1..a3, b1..b3, kappa2, kappa3.
    pub fn parameters(&self) -> [f64; 8] {
        let (a, b) = (self.intercepts, self.slopes);
        [a[0], a[1], a[2], b[0], b[1], b[2], self.kappa2, self.kappa3]
    }
}

pub const PARAMETER_NAMES: [&str; 8] = ["a1", "a2", "a3", "b1", "b2", "b3", "kappa2", "kappa3"];

// Prefix sums of weighted moments over grid indices; entry `k` covers the
// first `k` points.
struct Moments {
    w: Vec<f64>,
    wx: Vec<f64>,
    wxx: Vec<f64>,
    wy: Vec<f64>,
    wxy: Vec<f64>,
    wyy: Vec<f64>,
}

struct Line {
    a: f64,
    b: f64,
    sse: f64,
}

impl Moments {
    fn new(y: &[f64], w: &[f64]) -> Self {
        let n = y.len();
        let mut m = Moments {
            w: vec![0.0; n + 1],
            wx: vec![0.0; n + 1],
            wxx: vec![0.0; n + 1],
            wy: vec![0.0; n + 1],
            wxy: vec![0.0; n + 1],
            wyy: vec![0.0; n + 1],
        };
        for i in 0..n {
            // abscissae centered at r = 1 to limit cancellation
            let (x, yi, wi) = (grid_r(i) - 1.0, y[i], w[i]);
            m.w[i + 1] = m.w[i] + wi;
            m.wx[i + 1] = m.wx[i] + wi * x;
            m.wxx[i + 1] = m.wxx[i] + wi * x * x;
            m.wy[i + 1] = m.wy[i] + wi * yi;
            m.wxy[i + 1] = m.wxy[i] + wi * x * yi;
            m.wyy[i + 1] = m.wyy[i] + wi * yi * yi;
        }
        m
    }

    // Weighted line through points lo..hi (exclusive), in r units.
    fn line(&self, lo: usize, hi: usize) -> Line {
        let d = |v: &[f64]| v[hi] - v[lo];
        let (sw, sx, sxx, sy, sxy, syy) = (d(&self.w), d(&self.wx), d(&self.wxx), d(&self.wy), d(&self.wxy), d(&self.wyy));
        let cxx = sxx - sx * sx / sw;
        let cxy = sxy - sx * sy / sw;
        let cyy = syy - sy * sy / sw;
        let b = if cxx > 0.0 { cxy / cxx } else { 0.0 };
        let a_centered = (sy - b * sx) / sw;
        Line {
            a: a_centered - b,
            b,
            sse: (cyy - b * cxy).max(0.0),
        }
    }
}

fn check_curve(curve: &[f64], weights: &[f64]) -> Result<()> {
    if curve.len() != GRID_LEN || weights.len() != GRID_LEN {
        return Err(invalid("piecewise fits need 200 grid values and weights"));
    }
    if curve.iter().chain(weights).any(|v| !v.is_finite()) {
        return Err(invalid("curve values and weights must be finite"));
    }
    if weights.iter().any(|&w| !(w > 0.0)) {
        return Err(invalid("weights must be positive"));
    }
    Ok(())
}

fn knot_index(kappa: f64) -> Result<usize> {
    let k = (kappa * 100.0).round();
    if !((kappa * 100.0 - k).abs() < 1e-6 && (0.0..=GRID_LEN as f64).contains(&k)) {
        return Err(invalid(format!("knot {kappa} is not on the 0.01 grid within [0, 2]")));
    }
    Ok(k as usize)
}

/// Fits the three segments at fixed knots. Grid point `r` belongs to
/// segment `i` when `κ_i < r ≤ κ_{i+1}`. The outer segments need at least
/// two points; the middle one may be empty when `κ₂ = κ₃`.
pub fn fit_segments(curve: &[f64], kappa2: f64, kappa3: f64, weights: &[f64]) -> Result<SegmentFit> {
    check_curve(curve, weights)?;
    let (j, m) = (knot_index(kappa2)?, knot_index(kappa3)?);
    if j > m {
        return Err(invalid("kappa2 must not exceed kappa3"));
    }
    if j < 2 || GRID_LEN - m < 2 || (m > j && m - j < 2) {
        return Err(invalid(format!(
            "knots ({kappa2}, {kappa3}) leave a segment with fewer than 2 points"
        )));
    }
    let mo = Moments::new(curve, weights);
    let s1 = mo.line(0, j);
    let s3 = mo.line(m, GRID_LEN);
    let s2 = (m > j).then(|| mo.line(j, m));
    let (a2, b2, e2) = s2.map_or((f64::NAN, f64::NAN, 0.0), |l| (l.a, l.b, l.sse));
    Ok(SegmentFit {
        intercepts: [s1.a, a2, s3.a],
        slopes: [s1.b, b2, s3.b],
        wsse: s1.sse + e2 + s3.sse,
        empty_middle: m == j,
    })
}

/// `1 − Σ(g − ĝ)² / Σ(g − ḡ)²` over the grid, unweighted; 1 for a flat curve.
pub fn r_squared(curve: &[f64], fitted: impl Fn(f64) -> f64) -> f64 {
    let mean = curve.iter().sum::<f64>() / curve.len() as f64;
    let sst: f64 = curve.iter().map(|g| (g - mean).powi(2)).sum();
    let sse: f64 = curve.iter().enumerate().map(|(i, g)| (g - fitted(grid_r(i))).powi(2)).sum();
    if sst == 0.0 {
        1.0
    } else {
        1.0 - sse / sst
    }
}

/// Knot-grid cell: indices `j < 100 < m` with `κ₂ = 0.01 j`, `κ₃ = 0.01 m`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Cell {
    j: usize,
    m: usize,
    wsse: f64,
}

// Feasible cells: outer segments with at least 2 points and the middle
// segment straddling r = 1 strictly.
fn knot_grid(mo: &Moments) -> Vec<Cell> {
    let centre = GRID_LEN / 2;
    (2..centre)
        .into_par_iter()
        .flat_map_iter(|j| {
            (centre + 1..=GRID_LEN - 2).map(move |m| Cell {
                j,
                m,
                wsse: mo.line(0, j).sse + mo.line(j, m).sse + mo.line(m, GRID_LEN).sse,
            })
        })
        .collect()
}

fn penalized(cell: &Cell, lambda: f64) -> f64 {
    let k2 = cell.j as f64 / 100.0;
    let k3 = cell.m as f64 / 100.0;
    cell.wsse + lambda * ((k2 - 1.0).powi(2) + (1.0 - k3).powi(2))
}

// Lowest penalized value, ties to the lowest (j, m), and how many cells lie
// within `tol` of it.
fn argmin(cells: &[Cell], lambda: f64, tol: f64) -> (Cell, usize) {
    let mut best = cells[0];
    let mut best_v = penalized(&best, lambda);
    for c in &cells[1..] {
        let v = penalized(c, lambda);
        if v < best_v {
            best = *c;
            best_v = v;
        }
    }
    let near = cells.iter().filter(|c| penalized(c, lambda) - best_v <= tol).count();
    (best, near)
}

/// Searches the knot grid for the minimizer of the weighted SSE plus
/// `λ[(κ₂ − 1)² + (1 − κ₃)²]`, with `κ₂ < 1 < κ₃` required. Under
/// [`KnotPenalty::Auto`] the smallest ladder penalty with a unique minimizer
/// is used, falling back to the largest with a warning.
pub fn fit_piecewise(curve: &[f64], penalty: KnotPenalty, weights: Option<&[f64]>) -> Result<PiecewiseFit> {
    let default_w;
    let w = match weights {
        Some(w) => w,
        None => {
            default_w = grid_weights();
            &default_w
        }
    };
    check_curve(curve, w)?;
    let mo = Moments::new(curve, w);
    let cells = knot_grid(&mo);
    if cells.is_empty() {
        return Err(Error::NoFeasibleKnots);
    }
    let total = mo.line(0, GRID_LEN);
    let tol = 1e-10 * (1.0 + total.sse);
    let mut warnings = Vec::new();
    let (lambda, cell, unique) = match penalty {
        KnotPenalty::Fixed(l) if l >= 0.0 && l.is_finite() => {
            let (c, near) = argmin(&cells, l, tol);
            (l, c, near == 1)
        }
        KnotPenalty::Fixed(_) => return Err(invalid("knot penalty must be nonnegative")),
        KnotPenalty::Auto => {
            let ladder = knot_penalty_ladder();
            let found = ladder.iter().find_map(|&l| {
                let (c, near) = argmin(&cells, l, tol);
                (near == 1).then_some((l, c, true))
            });
            found.unwrap_or_else(|| {
                let l = *ladder.last().unwrap();
                (l, argmin(&cells, l, tol).0, false)
            })
        }
    };
    if !unique {
        warnings.push(Warning::new(
            WarningKind::NonUniqueKnots,
            format!("knot minimizer not unique at lambda = {lambda:.3e}; lowest knot pair reported"),
        ));
    }
    let (k2, k3) = (cell.j as f64 / 100.0, cell.m as f64 / 100.0);
    let seg = fit_segments(curve, k2, k3, w)?;
    let mut fit = PiecewiseFit {
        kappa2: k2,
        kappa3: k3,
        intercepts: seg.intercepts,
        slopes: seg.slopes,
        wsse: seg.wsse,
        r_squared: 0.0,
        lambda_knot: lambda,
        unique,
        warnings,
    };
    fit.r_squared = r_squared(curve, |r| fit.eval(r));
    Ok(fit)
}

/// One parameter's comparison across groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterTest {
    pub name: String,
    pub median_a: f64,
    pub median_c: f64,
    /// Mean of C minus mean of A (or mean paired difference C − A).
    pub mean_difference: f64,
    pub t: Option<f64>,
    pub df: Option<f64>,
    /// Omitted when the variance is zero.
    pub p_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupComparison {
    pub paired: bool,
    pub n_a: usize,
    pub n_c: usize,
    pub parameters: Vec<ParameterTest>,
    pub warnings: Vec<Warning>,
}

/// Welch t-tests (or paired t-tests on `C − A` when `paired`) of every
/// fitted parameter, with group medians.
pub fn compare_groups(fits_a: &[PiecewiseFit], fits_c: &[PiecewiseFit], paired: bool) -> Result<GroupComparison> {
    if paired {
        if fits_a.len() != fits_c.len() {
            return Err(invalid("paired comparison needs equal group sizes"));
        }
        if fits_a.len() < 3 {
            return Err(invalid("paired comparison needs at least 3 pairs"));
        }
    } else if fits_a.len() < 2 || fits_c.len() < 2 {
        return Err(invalid("each group needs at least 2 fits"));
    }
    let mut warnings = Vec::new();
    let parameters = (0..PARAMETER_NAMES.len())
        .map(|p| {
            let a: Vec<f64> = fits_a.iter().map(|f| f.parameters()[p]).collect();
            let c: Vec<f64> = fits_c.iter().map(|f| f.parameters()[p]).collect();
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            let test = if paired { paired_t_test(&a, &c) } else { welch_t_test(&a, &c) };
            if test.is_none() {
                warnings.push(Warning::new(
                    WarningKind::UndefinedStatistic,
                    format!("{}: zero variance, no p-value", PARAMETER_NAMES[p]),
                ));
            }
            ParameterTest {
                name: PARAMETER_NAMES[p].to_string(),
                median_a: median(&a),
                median_c: median(&c),
                mean_difference: mean(&c) - mean(&a),
                t: test.map(|t| t.t),
                df: test.map(|t| t.df),
                p_value: test.map(|t| t.p),
            }
        })
        .collect();
    Ok(GroupComparison {
        paired,
        n_a: fits_a.len(),
        n_c: fits_c.len(),
        parameters,
        warnings,
    })
}
