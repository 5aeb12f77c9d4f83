//! Per-nucleus (BD, intensity) clouds and their average expression curves.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{BdMap, Smoothing};
use crate::grid::{grid_r, GRID_END, GRID_LEN};
use crate::image::{ChannelRole, LabeledImage};
use crate::spline::{NaturalSmoother, LOG_LAMBDA_RANGE};
use crate::warning::{Warning, WarningKind};

/// Fewest cloud points accepted by [`fit_expression_curve`].
pub const MIN_POINTS: usize = 50;

/// Upper bound on spline knots; larger clouds are binned first.
pub const MAX_KNOTS: usize = 400;

/// Penalty used when GCV cannot discriminate between penalties.
pub const DEFAULT_LAMBDA: f64 = 1e-2;

/// BD range a cloud must span to avoid the low-coverage flag.
pub const COVERAGE: (f64, f64) = (0.2, 1.5);

/// The (BD, intensity) pairs of one nucleus orbit in one channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileCloud {
    pub nucleus_id: usize,
    pub channel: ChannelRole,
    /// `(r, a)` pairs in row-major pixel order.
    pub points: Vec<(f64, f64)>,
}

/// An average expression curve sampled at `r_i = 0.01 i`, `i = 1..=200`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpressionCurve {
    pub nucleus_id: usize,
    pub channel: ChannelRole,
    pub values: Vec<f64>,
    /// Area factor divided out by scaling; 1 until scaled.
    pub scale: f64,
    /// Abscissa dilation applied by registration; 1 until registered.
    pub dilation: f64,
    /// Spline penalty (0 for curves not produced by a fit).
    pub lambda: f64,
    /// Effective degrees of freedom of the fit.
    pub edf: f64,
    /// The cloud did not span [`COVERAGE`].
    pub low_coverage: bool,
    /// Some grid values lie outside the data range or beyond the grid end.
    pub extrapolated: bool,
    pub warnings: Vec<Warning>,
}

impl ExpressionCurve {
    /// Wraps grid values that did not come from a fit.
    pub fn from_values(nucleus_id: usize, channel: ChannelRole, values: Vec<f64>) -> Result<Self> {
        if values.len() != GRID_LEN {
            return Err(invalid(format!("curve has {} values, expected {GRID_LEN}", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("curve values must be finite"));
        }
        Ok(Self {
            nucleus_id,
            channel,
            values,
            scale: 1.0,
            dilation: 1.0,
            lambda: 0.0,
            edf: 0.0,
            low_coverage: false,
            extrapolated: false,
            warnings: Vec::new(),
        })
    }

    /// Builds a curve by evaluating `f` on the grid.
    pub fn from_fn(nucleus_id: usize, channel: ChannelRole, f: impl Fn(f64) -> f64) -> Self {
        let values = (0..GRID_LEN).map(|i| f(grid_r(i))).collect();
        Self::from_values(nucleus_id, channel, values).expect("function must be finite on the grid")
    }
}

impl AsRef<[f64]> for ExpressionCurve {
    fn as_ref(&self) -> &[f64] {
        &self.values
    }
}

/// Reads every orbit pixel of `nucleus_id` with `0 < r <= 2`.
pub fn extract_profile(
    image: &LabeledImage,
    bdmap: &BdMap,
    nucleus_id: usize,
    channel: ChannelRole,
) -> Result<ProfileCloud> {
    let plane = image
        .channel(channel)
        .ok_or_else(|| invalid(format!("image has no '{channel}' channel")))?;
    if plane.dim() != bdmap.shape() {
        return Err(invalid("image and BD map differ in shape"));
    }
    if nucleus_id >= bdmap.n_nuclei() {
        return Err(invalid(format!("nucleus {nucleus_id} is not in the BD map")));
    }
    let id = nucleus_id as u32;
    let points: Vec<(f64, f64)> = bdmap
        .orbit
        .iter()
        .zip(bdmap.bd.iter())
        .zip(plane.iter())
        .filter(|((&o, &r), _)| o == id && r > 0.0 && r <= GRID_END)
        .map(|((_, &r), &a)| (r, a))
        .collect();
    if points.is_empty() {
        return Err(Error::EmptyOrbit(nucleus_id));
    }
    Ok(ProfileCloud {
        nucleus_id,
        channel,
        points,
    })
}

/// Precision weight of a curve value at scaled BD `r`: `r^0.75` inside the
/// nucleus, 1 outside.
pub fn density_weight(r: f64) -> Result<f64> {
    if !(r > 0.0 && r <= GRID_END) {
        return Err(invalid(format!("density weight is defined on (0, 2], got {r}")));
    }
    Ok(if r < 1.0 { r.powf(0.75) } else { 1.0 })
}

/// Weights on the grid.
pub fn grid_weights() -> Vec<f64> {
    (0..GRID_LEN).map(|i| density_weight(grid_r(i)).unwrap()).collect()
}

struct Binned {
    x: Vec<f64>,
    w: Vec<f64>,
    y: Vec<f64>,
    ss_within: f64,
}

// Collapses tied abscissae to their mean response, then merges runs of
// neighbouring groups until at most `max_bins` remain.
fn bin_cloud(points: &[(f64, f64)], max_bins: usize) -> Binned {
    let mut sorted = points.to_vec();
    sorted.sort_by(|p, q| p.0.total_cmp(&q.0));
    let mut groups: Vec<(f64, usize, usize)> = Vec::new(); // (r, start, end)
    let mut start = 0;
    for i in 1..=sorted.len() {
        if i == sorted.len() || sorted[i].0 != sorted[start].0 {
            groups.push((sorted[start].0, start, i));
            start = i;
        }
    }
    let n = sorted.len();
    let bins: Vec<(usize, usize)> = if groups.len() <= max_bins {
        groups.iter().map(|g| (g.1, g.2)).collect()
    } else {
        // cut at group boundaries nearest to equal-count quantiles
        let mut out = Vec::with_capacity(max_bins);
        let mut lo = 0;
        let mut next_target = 1;
        for g in &groups {
            if g.2 * max_bins >= next_target * n {
                out.push((lo, g.2));
                lo = g.2;
                while next_target * n <= g.2 * max_bins {
                    next_target += 1;
                }
            }
        }
        if lo < n {
            out.push((lo, n));
        }
        out
    };
    let mut b = Binned {
        x: Vec::with_capacity(bins.len()),
        w: Vec::with_capacity(bins.len()),
        y: Vec::with_capacity(bins.len()),
        ss_within: 0.0,
    };
    for (lo, hi) in bins {
        let m = (hi - lo) as f64;
        let xs = sorted[lo..hi].iter().map(|p| p.0).sum::<f64>() / m;
        let ys = sorted[lo..hi].iter().map(|p| p.1).sum::<f64>() / m;
        b.ss_within += sorted[lo..hi].iter().map(|p| (p.1 - ys).powi(2)).sum::<f64>();
        b.x.push(xs);
        b.w.push(m);
        b.y.push(ys);
    }
    b
}

/// Fits a cubic smoothing spline to the cloud and evaluates it on the grid.
///
/// Grid points outside the data range are extrapolated linearly and flagged.
pub fn fit_expression_curve(cloud: &ProfileCloud, penalty: Smoothing) -> Result<ExpressionCurve> {
    if cloud.points.len() < MIN_POINTS {
        return Err(invalid(format!(
            "nucleus {} has {} profile points, need at least {MIN_POINTS}",
            cloud.nucleus_id,
            cloud.points.len()
        )));
    }
    if cloud.points.iter().any(|(r, a)| !r.is_finite() || !a.is_finite()) {
        return Err(invalid("profile points must be finite"));
    }
    let binned = bin_cloud(&cloud.points, MAX_KNOTS);
    if binned.x.len() < 4 {
        return Err(invalid(format!(
            "nucleus {} has {} distinct BD values, need at least 4",
            cloud.nucleus_id,
            binned.x.len()
        )));
    }
    let smoother = NaturalSmoother::new(
        &binned.x,
        &binned.w,
        &binned.y,
        cloud.points.len() as f64,
        binned.ss_within,
    )?;
    let mut warnings = Vec::new();
    let tag = format!("nucleus {} {}", cloud.nucleus_id, cloud.channel);
    let lambda = match penalty {
        Smoothing::Fixed(l) if l >= 0.0 => l,
        Smoothing::Fixed(_) => return Err(invalid("spline penalty must be nonnegative")),
        Smoothing::Gcv => {
            let choice = smoother.select_lambda(LOG_LAMBDA_RANGE);
            if choice.flat {
                warnings.push(Warning::new(
                    WarningKind::GcvFallback,
                    format!("{tag}: GCV flat, using lambda = {DEFAULT_LAMBDA}"),
                ));
                DEFAULT_LAMBDA
            } else {
                if choice.binding {
                    warnings.push(Warning::new(
                        WarningKind::BracketBinding,
                        format!("{tag}: GCV penalty {:.3e} on the search edge", choice.lambda),
                    ));
                }
                choice.lambda
            }
        }
    };
    let fit = smoother.fit(lambda);
    let (lo, hi) = fit.domain();
    let values: Vec<f64> = (0..GRID_LEN).map(|i| fit.eval(grid_r(i))).collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!("{tag}: spline produced non-finite values")));
    }
    let extrapolated = grid_r(0) < lo || grid_r(GRID_LEN - 1) > hi;
    if extrapolated {
        warnings.push(Warning::new(
            WarningKind::Extrapolated,
            format!("{tag}: data span [{lo:.3}, {hi:.3}], grid extrapolated linearly"),
        ));
    }
    let low_coverage = lo > COVERAGE.0 || hi < COVERAGE.1;
    if low_coverage {
        warnings.push(Warning::new(
            WarningKind::LowCoverage,
            format!("{tag}: data span [{lo:.3}, {hi:.3}] misses [{}, {}]", COVERAGE.0, COVERAGE.1),
        ));
    }
    Ok(ExpressionCurve {
        nucleus_id: cloud.nucleus_id,
        channel: cloud.channel,
        values,
        scale: 1.0,
        dilation: 1.0,
        lambda,
        edf: fit.edf,
        low_coverage,
        extrapolated,
        warnings,
    })
}
