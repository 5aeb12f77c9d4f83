//! Area scaling and dilation registration of expression curves.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::{grid_r, riemann, MonotoneInterpolant, GRID_LEN, GRID_STEP};
use crate::optimize::golden_section;
use crate::profiles::{grid_weights, ExpressionCurve};
use crate::stats::pearson;
use crate::warning::{Warning, WarningKind};

/// Admissible range for [`dilate_curve`].
pub const DILATION_LIMITS: (f64, f64) = (0.5, 2.0);

/// Divides a curve by its Riemann area `0.01 Σ g(r_i)`, so that it
/// integrates to 1. The `scale` field accumulates the factors divided out.
pub fn scale_curve(curve: &ExpressionCurve) -> Result<ExpressionCurve> {
    let s = riemann(&curve.values);
    if !(s > 0.0 && s.is_finite()) {
        return Err(invalid(format!(
            "nucleus {} {} curve has nonpositive area {s}",
            curve.nucleus_id, curve.channel
        )));
    }
    let mut out = curve.clone();
    // exact no-op on unit-area curves keeps scaling idempotent
    if (s - 1.0).abs() >= 1e-12 {
        out.values.iter_mut().for_each(|v| *v /= s);
        out.scale *= s;
    }
    Ok(out)
}

/// Pearson correlation between per-nucleus scale factors of two channels.
pub fn scale_correlation(scales_a: &[f64], scales_b: &[f64]) -> Result<f64> {
    if scales_a.len() != scales_b.len() {
        return Err(invalid("scale lists differ in length"));
    }
    if scales_a.len() < 3 {
        return Err(invalid("scale correlation needs at least 3 pairs"));
    }
    pearson(scales_a, scales_b).ok_or_else(|| invalid("scale list has zero variance"))
}

// Values of `g(r δ)` on the grid and whether any abscissa ran past r = 2.
fn dilated_values(interp: &MonotoneInterpolant, delta: f64) -> (Vec<f64>, bool) {
    let mut extrapolated = false;
    let values = (0..GRID_LEN)
        .map(|i| {
            let (v, e) = interp.eval(grid_r(i) * delta);
            extrapolated |= e;
            v
        })
        .collect();
    (values, extrapolated)
}

/// Resamples `g(r δ)` on the grid by monotone cubic interpolation. Values
/// needed past `r = 2` are continued linearly and set the `extrapolated`
/// flag. The `dilation` field accumulates `δ`.
pub fn dilate_curve(curve: &ExpressionCurve, delta: f64) -> Result<ExpressionCurve> {
    if !(delta >= DILATION_LIMITS.0 && delta <= DILATION_LIMITS.1) {
        return Err(invalid(format!("dilation {delta} outside [0.5, 2]")));
    }
    let mut out = curve.clone();
    if delta == 1.0 {
        return Ok(out);
    }
    let (values, extrapolated) = dilated_values(&MonotoneInterpolant::new(&curve.values), delta);
    out.values = values;
    out.dilation *= delta;
    out.extrapolated |= extrapolated;
    Ok(out)
}

/// Settings shared by the registration routines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationOptions {
    /// Search interval for each dilation.
    pub bracket: (f64, f64),
    pub max_iter: usize,
    /// Stop when the criterion falls by less than this fraction.
    pub tol: f64,
    /// Width at which the line search stops.
    pub line_tol: f64,
    /// Grid weights; `None` means the density weight.
    pub weights: Option<Vec<f64>>,
}

impl Default for RegistrationOptions {
    fn default() -> Self {
        Self {
            bracket: (0.7, 1.3),
            max_iter: 50,
            tol: 1e-4,
            line_tol: 1e-4,
            weights: None,
        }
    }
}

impl RegistrationOptions {
    fn validate(&self) -> Result<Vec<f64>> {
        let (lo, hi) = self.bracket;
        if !(lo > 0.0 && lo < hi && lo >= DILATION_LIMITS.0 && hi <= DILATION_LIMITS.1) {
            return Err(invalid(format!("dilation bracket ({lo}, {hi}) must lie in [0.5, 2]")));
        }
        if self.max_iter == 0 {
            return Err(invalid("max_iter must be at least 1"));
        }
        if !(self.tol >= 0.0 && self.line_tol > 0.0) {
            return Err(invalid("tolerances must be positive"));
        }
        let w = self.weights.clone().unwrap_or_else(grid_weights);
        if w.len() != GRID_LEN || w.iter().any(|x| !(*x >= 0.0)) {
            return Err(invalid("registration weights must be 200 nonnegative values"));
        }
        Ok(w)
    }
}

/// Outcome of a Procrustes registration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationResult {
    /// Per-curve (or per-cell) dilation, normalized to geometric mean 1.
    pub dilations: Vec<f64>,
    /// Between-group dilation, when one was estimated.
    pub group_dilation: Option<f64>,
    /// Mean registered curve of each channel.
    pub mean_curves: Vec<Vec<f64>>,
    /// Criterion before the first iteration and after each iteration.
    pub sse_trace: Vec<f64>,
    pub iterations: usize,
    /// Per-curve flag: the line search ended on the bracket edge.
    pub bracket_binding: Vec<bool>,
    /// Per-curve flag: registration needed values past r = 2.
    pub extrapolated: Vec<bool>,
    pub warnings: Vec<Warning>,
}

impl RegistrationResult {
    /// Relative drop of the criterion over the whole run.
    pub fn reduction(&self) -> f64 {
        let first = self.sse_trace[0];
        let last = *self.sse_trace.last().unwrap();
        if first > 0.0 {
            (first - last) / first
        } else {
            0.0
        }
    }
}

fn weighted_sse(w: &[f64], a: &[f64], b: &[f64]) -> f64 {
    GRID_STEP * w.iter().zip(a).zip(b).map(|((w, x), y)| w * (x - y) * (x - y)).sum::<f64>()
}

fn pointwise_mean(curves: &[Vec<f64>]) -> Vec<f64> {
    let n = curves.len() as f64;
    // offsets from the first curve make the mean of identical curves exact
    (0..GRID_LEN)
        .map(|i| {
            let base = curves[0][i];
            base + curves.iter().map(|c| c[i] - base).sum::<f64>() / n
        })
        .collect()
}

// Two-step Procrustes iteration over cells that each carry `m` channel
// curves sharing one dilation. `cells[k][j]` is channel `j` of cell `k`.
fn procrustes(cells: &[Vec<&[f64]>], opts: &RegistrationOptions) -> Result<RegistrationResult> {
    let w = opts.validate()?;
    let n = cells.len();
    if n < 2 {
        return Err(invalid("registration needs at least 2 curves"));
    }
    let m = cells[0].len();
    if cells.iter().any(|c| c.len() != m || c.iter().any(|g| g.len() != GRID_LEN)) {
        return Err(invalid("registration curves must all lie on the 200-point grid"));
    }
    let interps: Vec<Vec<MonotoneInterpolant>> = cells
        .iter()
        .map(|c| c.iter().map(|g| MonotoneInterpolant::new(g)).collect())
        .collect();
    let (lo, hi) = opts.bracket;

    let eval_cell = |k: usize, delta: f64| -> (Vec<Vec<f64>>, bool) {
        let mut ext = false;
        let curves = interps[k]
            .iter()
            .map(|ip| {
                let (v, e) = dilated_values(ip, delta);
                ext |= e;
                v
            })
            .collect();
        (curves, ext)
    };
    let means_of = |dilated: &[Vec<Vec<f64>>]| -> Vec<Vec<f64>> {
        (0..m)
            .map(|j| pointwise_mean(&dilated.iter().map(|c| c[j].clone()).collect::<Vec<_>>()))
            .collect()
    };
    let cell_sse = |curves: &[Vec<f64>], mu: &[Vec<f64>]| -> f64 {
        curves.iter().zip(mu).map(|(g, u)| weighted_sse(&w, g, u)).sum()
    };

    let mut delta = vec![1.0; n];
    let mut dilated: Vec<Vec<Vec<f64>>> = (0..n).map(|k| eval_cell(k, 1.0).0).collect();
    let mut mu = means_of(&dilated);
    let mut trace = vec![dilated.iter().map(|c| cell_sse(c, &mu)).sum::<f64>()];
    let mut binding = vec![false; n];
    let mut iterations = 0;

    while iterations < opts.max_iter {
        iterations += 1;
        let prev = *trace.last().unwrap();
        // step 2: per-cell line search against the current means
        let updates: Vec<(f64, bool)> = (0..n)
            .into_par_iter()
            .map(|k| {
                let current = cell_sse(&dilated[k], &mu);
                let (d, f) = golden_section(|d| cell_sse(&eval_cell(k, d).0, &mu), lo, hi, opts.line_tol);
                let edge = 2.0 * opts.line_tol;
                if f < current {
                    (d, d - lo <= edge || hi - d <= edge)
                } else {
                    (delta[k], binding[k])
                }
            })
            .collect();
        for (k, (d, b)) in updates.into_iter().enumerate() {
            if d != delta[k] {
                delta[k] = d;
                dilated[k] = eval_cell(k, d).0;
            }
            binding[k] = b;
        }
        // step 1: means of the re-dilated curves
        mu = means_of(&dilated);
        let sse: f64 = dilated.iter().map(|c| cell_sse(c, &mu)).sum();
        if sse > prev * (1.0 + 1e-10) + 1e-300 {
            return Err(Error::Divergence {
                iteration: iterations,
                previous: prev,
                current: sse,
            });
        }
        let sse = sse.min(prev);
        trace.push(sse);
        if sse == 0.0 || (prev - sse) <= opts.tol * prev {
            break;
        }
    }

    // a common dilation is absorbed by the means; pin the geometric mean
    let log_mean = delta.iter().map(|d| d.ln()).sum::<f64>() / n as f64;
    let g = log_mean.exp();
    delta.iter_mut().for_each(|d| *d /= g);
    let mut extrapolated = vec![false; n];
    for k in 0..n {
        let (c, e) = eval_cell(k, delta[k]);
        dilated[k] = c;
        extrapolated[k] = e;
    }
    let mean_curves = means_of(&dilated);

    let mut warnings = Vec::new();
    let bound: Vec<usize> = (0..n).filter(|&k| binding[k]).collect();
    if !bound.is_empty() {
        warnings.push(Warning::new(
            WarningKind::BracketBinding,
            format!("dilation search hit the bracket [{lo}, {hi}] for curves {bound:?}"),
        ));
    }
    let ext: Vec<usize> = (0..n).filter(|&k| extrapolated[k]).collect();
    if !ext.is_empty() {
        warnings.push(Warning::new(
            WarningKind::Extrapolated,
            format!("registered curves {ext:?} were extrapolated past r = 2"),
        ));
    }
    Ok(RegistrationResult {
        dilations: delta,
        group_dilation: None,
        mean_curves,
        sse_trace: trace,
        iterations,
        bracket_binding: binding,
        extrapolated,
        warnings,
    })
}

/// Registers the curves of one group by dilation, minimizing the weighted
/// within-group sum of squares about the pointwise mean.
pub fn register_within<C: AsRef<[f64]> + Sync>(curves: &[C], opts: &RegistrationOptions) -> Result<RegistrationResult> {
    let cells: Vec<Vec<&[f64]>> = curves.iter().map(|c| vec![c.as_ref()]).collect();
    procrustes(&cells, opts)
}

/// Registers cells whose two channels share one dilation per cell.
pub fn register_paired<C: AsRef<[f64]> + Sync>(pairs: &[(C, C)], opts: &RegistrationOptions) -> Result<RegistrationResult> {
    let cells: Vec<Vec<&[f64]>> = pairs.iter().map(|(y, r)| vec![y.as_ref(), r.as_ref()]).collect();
    procrustes(&cells, opts)
}

/// Applies registration dilations to the original curves.
pub fn apply_dilations(curves: &[ExpressionCurve], dilations: &[f64]) -> Result<Vec<ExpressionCurve>> {
    if curves.len() != dilations.len() {
        return Err(invalid("curve and dilation counts differ"));
    }
    curves.iter().zip(dilations).map(|(c, &d)| dilate_curve(c, d)).collect()
}

/// Dilation of group A that best matches group C's mean curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetweenResult {
    pub delta: f64,
    /// Criterion at `δ = 1`.
    pub sse_before: f64,
    pub sse_after: f64,
    pub bracket_binding: bool,
    pub extrapolated: bool,
}

/// Finds `δ_A` minimizing the unweighted `∫ (μ_A(r δ_A) − μ_C(r))² dr`.
pub fn register_between(mean_a: &[f64], mean_c: &[f64], bracket: (f64, f64), line_tol: f64) -> Result<BetweenResult> {
    if mean_a.len() != GRID_LEN || mean_c.len() != GRID_LEN {
        return Err(invalid("mean curves must lie on the 200-point grid"));
    }
    let (lo, hi) = bracket;
    if !(lo >= DILATION_LIMITS.0 && lo < hi && hi <= DILATION_LIMITS.1) {
        return Err(invalid(format!("dilation bracket ({lo}, {hi}) must lie in [0.5, 2]")));
    }
    let ones = vec![1.0; GRID_LEN];
    let ip = MonotoneInterpolant::new(mean_a);
    let sse = |d: f64| weighted_sse(&ones, &dilated_values(&ip, d).0, mean_c);
    let before = sse(1.0);
    let (d, f) = golden_section(sse, lo, hi, line_tol);
    let (delta, after) = if f < before { (d, f) } else { (1.0, before) };
    Ok(BetweenResult {
        delta,
        sse_before: before,
        sse_after: after,
        bracket_binding: delta - lo <= 2.0 * line_tol || hi - delta <= 2.0 * line_tol,
        extrapolated: dilated_values(&ip, delta).1,
    })
}
