//! Ridge-penalized Fisher discriminant with leave-one-out selection of the
//! ridge and the threshold.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Ten log-spaced ridge values from 1e-4 to 1e-1.
pub fn default_lambda_grid() -> Vec<f64> {
    (0..10).map(|k| 10f64.powf(-4.0 + 3.0 * k as f64 / 9.0)).collect()
}

/// Ten equispaced thresholds from 0.5 to 1.5.
pub fn default_tau_grid() -> Vec<f64> {
    (0..10).map(|k| 0.5 + k as f64 / 9.0).collect()
}

/// How curves are projected before thresholding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ScoreMode {
    /// `1 + (dᵀg − dᵀm) / (dᵀΔ)` with `m` the midpoint of the class means and
    /// `Δ = μ_A − μ_C`; the class means score 1.5 and 0.5.
    #[default]
    Standardized,
    /// The bare projection `dᵀg`.
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdaOptions {
    pub lambda_grid: Vec<f64>,
    pub tau_grid: Vec<f64>,
    pub mode: ScoreMode,
}

impl Default for PdaOptions {
    fn default() -> Self {
        Self {
            lambda_grid: default_lambda_grid(),
            tau_grid: default_tau_grid(),
            mode: ScoreMode::Standardized,
        }
    }
}

/// The selected discriminant and its cross-validation record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminantModel {
    pub d_p: Vec<f64>,
    pub lambda_ridge: f64,
    pub tau: f64,
    pub mode: ScoreMode,
    pub cv_errors: usize,
    pub cv_rate: f64,
    /// Scores of all curves (group A first) under the full-data model.
    pub scores: Vec<f64>,
    /// `d_pᵀg` of all curves under the full-data model.
    pub raw_scores: Vec<f64>,
    /// Held-out scores at the selected ridge, one per curve.
    pub loo_scores: Vec<f64>,
    /// `true` for group A.
    pub labels: Vec<bool>,
    /// Cross-validated misclassifications, `[lambda][tau]`.
    pub error_surface: Vec<Vec<usize>>,
    pub lambda_grid: Vec<f64>,
    pub tau_grid: Vec<f64>,
}

impl DiscriminantModel {
    /// Group A when the score exceeds the threshold.
    pub fn classify(&self, score: f64) -> bool {
        score > self.tau
    }
}

fn matrix<C: AsRef<[f64]>>(curves: &[C]) -> Result<DMatrix<f64>> {
    let len = curves[0].as_ref().len();
    if len == 0 || curves.iter().any(|c| c.as_ref().len() != len) {
        return Err(invalid("curves must be non-empty and of equal length"));
    }
    if curves.iter().flat_map(|c| c.as_ref()).any(|v| !v.is_finite()) {
        return Err(invalid("curve values must be finite"));
    }
    Ok(DMatrix::from_fn(curves.len(), len, |i, j| curves[i].as_ref()[j]))
}

fn column_mean(x: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.mean()))
}

// Rows of Z with ZᵀZ = 0.5 Σ_A + 0.5 Σ_C.
fn scaled_deviations(a: &DMatrix<f64>, c: &DMatrix<f64>) -> DMatrix<f64> {
    let mut z = DMatrix::zeros(a.nrows() + c.nrows(), a.ncols());
    let mut row = 0;
    for x in [a, c] {
        let m = column_mean(x);
        let s = (2.0 * (x.nrows() as f64 - 1.0)).sqrt().recip();
        for i in 0..x.nrows() {
            let dev = (x.row(i).transpose() - &m) * s;
            z.row_mut(row).copy_from(&dev.transpose());
            row += 1;
        }
    }
    z
}

fn check_groups<C: AsRef<[f64]>>(a: &[C], c: &[C], min: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if a.len() < min || c.len() < min {
        return Err(invalid(format!("each group needs at least {min} curves")));
    }
    let (ma, mc) = (matrix(a)?, matrix(c)?);
    if ma.ncols() != mc.ncols() {
        return Err(invalid("groups have curves of different lengths"));
    }
    Ok((ma, mc))
}

/// `W = 0.5 Σ_A + 0.5 Σ_C`, each covariance with divisor `n − 1`.
pub fn pooled_within_covariance<C: AsRef<[f64]>>(group_a: &[C], group_c: &[C]) -> Result<DMatrix<f64>> {
    let (a, c) = check_groups(group_a, group_c, 2)?;
    let z = scaled_deviations(&a, &c);
    Ok(z.transpose() * z)
}

/// Solves `(W + λI) d = μ̂_A − μ̂_C` by Cholesky factorization.
pub fn fit_discriminant<C: AsRef<[f64]>>(group_a: &[C], group_c: &[C], lambda: f64) -> Result<Vec<f64>> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(invalid("ridge penalty must be positive"));
    }
    let (a, c) = check_groups(group_a, group_c, 2)?;
    let z = scaled_deviations(&a, &c);
    let mut wp = z.transpose() * &z;
    for i in 0..wp.nrows() {
        wp[(i, i)] += lambda;
    }
    let delta = column_mean(&a) - column_mean(&c);
    let chol = wp
        .cholesky()
        .ok_or_else(|| Error::Numerical("penalized covariance is not positive definite".into()))?;
    Ok(chol.solve(&delta).iter().copied().collect())
}

// Discriminant, class midpoint and Δ from data matrices, via the n×n dual
// system: (ZᵀZ + λI)⁻¹Δ = (Δ − Zᵀ(ZZᵀ + λI)⁻¹ZΔ) / λ.
struct Fit {
    d: DVector<f64>,
    mid: DVector<f64>,
    delta: DVector<f64>,
}

impl Fit {
    fn new(a: &DMatrix<f64>, c: &DMatrix<f64>, lambda: f64) -> Result<Self> {
        let (ma, mc) = (column_mean(a), column_mean(c));
        let delta = &ma - &mc;
        let z = scaled_deviations(a, c);
        let mut gram = &z * z.transpose();
        for i in 0..gram.nrows() {
            gram[(i, i)] += lambda;
        }
        let chol = gram
            .cholesky()
            .ok_or_else(|| Error::Numerical("penalized covariance is not positive definite".into()))?;
        let u = chol.solve(&(&z * &delta));
        let d = (&delta - z.transpose() * u) / lambda;
        Ok(Self {
            d,
            mid: (ma + mc) * 0.5,
            delta,
        })
    }

    fn raw(&self, g: &DVector<f64>) -> f64 {
        self.d.dot(g)
    }

    fn score(&self, g: &DVector<f64>, mode: ScoreMode) -> f64 {
        match mode {
            ScoreMode::Raw => self.raw(g),
            ScoreMode::Standardized => 1.0 + (self.d.dot(g) - self.d.dot(&self.mid)) / self.d.dot(&self.delta),
        }
    }
}

fn drop_row(x: &DMatrix<f64>, i: usize) -> DMatrix<f64> {
    x.clone().remove_row(i)
}

// Orders grid cells: fewer errors, then larger λ, then τ nearer 1, then
// smaller τ.
fn better(cand: (usize, f64, f64), best: (usize, f64, f64)) -> bool {
    let (e, l, t) = cand;
    let (be, bl, bt) = best;
    if e != be {
        return e < be;
    }
    if l != bl {
        return l > bl;
    }
    let (dc, db) = ((t - 1.0).abs(), (bt - 1.0).abs());
    if (dc - db).abs() > 1e-12 {
        return dc < db;
    }
    t < bt
}

/// Leave-one-out search over the `(λ, τ)` grid. Each curve is held out, the
/// discriminant refit on the others and the held-out curve assigned to group
/// A when its score exceeds `τ`. The pair with fewest misclassifications is
/// refit on all curves.
pub fn loocv_select<C: AsRef<[f64]> + Sync>(
    group_a: &[C],
    group_c: &[C],
    opts: &PdaOptions,
) -> Result<DiscriminantModel> {
    if opts.lambda_grid.is_empty() || opts.tau_grid.is_empty() {
        return Err(invalid("lambda and tau grids must be non-empty"));
    }
    if opts.lambda_grid.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
        return Err(invalid("ridge values must be positive"));
    }
    if opts.tau_grid.iter().any(|t| !t.is_finite()) {
        return Err(invalid("thresholds must be finite"));
    }
    let (a, c) = check_groups(group_a, group_c, 3)?;
    let (na, nc) = (a.nrows(), c.nrows());
    let n = na + nc;
    let labels: Vec<bool> = (0..n).map(|k| k < na).collect();
    let curve = |k: usize| -> DVector<f64> {
        if k < na {
            a.row(k).transpose()
        } else {
            c.row(k - na).transpose()
        }
    };

    // held-out scores, [lambda][curve]
    let loo: Vec<Vec<f64>> = opts
        .lambda_grid
        .par_iter()
        .map(|&lambda| {
            (0..n)
                .map(|k| {
                    let fit = if k < na {
                        Fit::new(&drop_row(&a, k), &c, lambda)?
                    } else {
                        Fit::new(&a, &drop_row(&c, k - na), lambda)?
                    };
                    Ok(fit.score(&curve(k), opts.mode))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;

    let error_surface: Vec<Vec<usize>> = loo
        .iter()
        .map(|scores| {
            opts.tau_grid
                .iter()
                .map(|&tau| scores.iter().zip(&labels).filter(|(&s, &y)| (s > tau) != y).count())
                .collect()
        })
        .collect();

    let mut best: Option<(usize, f64, f64, usize)> = None;
    for (li, row) in error_surface.iter().enumerate() {
        for (ti, &e) in row.iter().enumerate() {
            let cand = (e, opts.lambda_grid[li], opts.tau_grid[ti]);
            if best.is_none_or(|b| better(cand, (b.0, b.1, b.2))) {
                best = Some((e, cand.1, cand.2, li));
            }
        }
    }
    let (errors, lambda, tau, li) = best.expect("grids are non-empty");

    let fit = Fit::new(&a, &c, lambda)?;
    let all: Vec<DVector<f64>> = (0..n).map(curve).collect();
    Ok(DiscriminantModel {
        d_p: fit.d.iter().copied().collect(),
        lambda_ridge: lambda,
        tau,
        mode: opts.mode,
        cv_errors: errors,
        cv_rate: errors as f64 / n as f64,
        scores: all.iter().map(|g| fit.score(g, opts.mode)).collect(),
        raw_scores: all.iter().map(|g| fit.raw(g)).collect(),
        loo_scores: loo[li].clone(),
        labels,
        error_surface,
        lambda_grid: opts.lambda_grid.clone(),
        tau_grid: opts.tau_grid.clone(),
    })
}
