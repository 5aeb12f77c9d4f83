//! Cubic smoothing splines.
//!
//! Two smoothers share the roughness penalty `λ ∫ g''²`:
//!
//! * [`NaturalSmoother`] fits a natural cubic spline with knots at distinct,
//!   weighted abscissae. It works in Reinsch form: the penalized normal
//!   equations reduce to a pentadiagonal system in the interior second
//!   derivatives, and the diagonal of the hat matrix comes from the central
//!   band of that system's inverse, so one GCV evaluation costs `O(n)`.
//! * [`PeriodicSmoother`] fits a periodic cubic spline to equally spaced
//!   samples of a closed curve. Every matrix involved is circulant, so the
//!   fit is diagonal in the discrete Fourier basis.

use std::f64::consts::TAU;

use rustfft::{num_complex::Complex, FftPlanner};

use crate::error::{invalid, Result};
use crate::optimize::golden_section;

/// Bracket for GCV searches, in `log10 λ`.
pub const LOG_LAMBDA_RANGE: (f64, f64) = (-8.0, 2.0);

/// Outcome of a GCV search over `log10 λ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GcvChoice {
    pub lambda: f64,
    pub score: f64,
    /// The criterion was numerically flat over the bracket.
    pub flat: bool,
    /// The minimizer sits on an end of the bracket.
    pub binding: bool,
}

fn search_log_lambda<F: FnMut(f64) -> f64>(mut gcv: F, range: (f64, f64)) -> GcvChoice {
    let (lo, hi) = range;
    let mut probe = |ll: f64| {
        let g = gcv(10f64.powf(ll));
        if g.is_finite() {
            g
        } else {
            f64::INFINITY
        }
    };
    // coarse scan guards against the rare multimodal GCV curve
    let steps = 20;
    let scan: Vec<(f64, f64)> = (0..=steps)
        .map(|k| {
            let ll = lo + (hi - lo) * k as f64 / steps as f64;
            (ll, probe(ll))
        })
        .collect();
    let finite: Vec<f64> = scan.iter().map(|s| s.1).filter(|g| g.is_finite()).collect();
    let (gmin, gmax) = finite
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &g| (a.min(g), b.max(g)));
    let flat = finite.is_empty() || (gmax - gmin) <= 1e-10 * gmax.abs().max(f64::MIN_POSITIVE);
    let k_best = scan
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
        .map(|(k, _)| k)
        .unwrap_or(0);
    let a = scan[k_best.saturating_sub(1)].0;
    let b = scan[(k_best + 1).min(steps)].0;
    let (ll, score) = golden_section(&mut probe, a, b, 1e-4);
    let step = (hi - lo) / steps as f64;
    GcvChoice {
        lambda: 10f64.powf(ll),
        score,
        flat,
        binding: ll <= lo + 1e-3 * step || ll >= hi - 1e-3 * step,
    }
}

/// Natural cubic smoothing spline over weighted distinct abscissae.
///
/// Minimizes `Σ w_i (ȳ_i − g(x_i))² + λ ∫ g''²`, which is the raw-point
/// criterion when `ȳ_i` are group means and `w_i` group counts.
#[derive(Debug, Clone)]
pub struct NaturalSmoother {
    x: Vec<f64>,
    w: Vec<f64>,
    y: Vec<f64>,
    h: Vec<f64>,
    /// Row `k` of `Qᵀ` has its three nonzeros at columns `k, k+1, k+2`.
    qt: Vec<[f64; 3]>,
    n_obs: f64,
    ss_within: f64,
}

/// A fitted natural cubic spline.
#[derive(Debug, Clone)]
pub struct NaturalSpline {
    pub lambda: f64,
    knots: Vec<f64>,
    values: Vec<f64>,
    /// Second derivatives at the knots; zero at both ends.
    second: Vec<f64>,
    /// Trace of the hat matrix (effective degrees of freedom).
    pub edf: f64,
    /// Residual sum of squares over the raw observations.
    pub rss: f64,
}

struct Banded {
    d: Vec<f64>,
    l1: Vec<f64>,
    l2: Vec<f64>,
}

impl NaturalSmoother {
    /// `x` strictly increasing, `w > 0`. `n_obs` is the raw observation count
    /// and `ss_within` the within-group sum of squares lost by averaging.
    pub fn new(x: &[f64], w: &[f64], y: &[f64], n_obs: f64, ss_within: f64) -> Result<Self> {
        let n = x.len();
        if n < 4 {
            return Err(invalid(format!("need at least 4 distinct abscissae, got {n}")));
        }
        if w.len() != n || y.len() != n {
            return Err(invalid("abscissa, weight and value lengths differ"));
        }
        if x.windows(2).any(|p| !(p[1] > p[0])) {
            return Err(invalid("abscissae must be strictly increasing"));
        }
        if w.iter().any(|&wi| !(wi > 0.0)) {
            return Err(invalid("weights must be positive"));
        }
        let h: Vec<f64> = x.windows(2).map(|p| p[1] - p[0]).collect();
        let qt = (0..n - 2)
            .map(|k| {
                let (a, b) = (1.0 / h[k], 1.0 / h[k + 1]);
                [a, -(a + b), b]
            })
            .collect();
        Ok(Self {
            x: x.to_vec(),
            w: w.to_vec(),
            y: y.to_vec(),
            h,
            qt,
            n_obs,
            ss_within,
        })
    }

    /// Convenience constructor for unit weights and no grouping.
    pub fn unweighted(x: &[f64], y: &[f64]) -> Result<Self> {
        let w = vec![1.0; x.len()];
        Self::new(x, &w, y, x.len() as f64, 0.0)
    }

    pub fn n_obs(&self) -> f64 {
        self.n_obs
    }

    fn factor(&self, lambda: f64) -> Banded {
        let m = self.qt.len();
        let (qt, w, h) = (&self.qt, &self.w, &self.h);
        let mut b0 = vec![0.0; m];
        let mut b1 = vec![0.0; m];
        let mut b2 = vec![0.0; m];
        for k in 0..m {
            let q = qt[k];
            b0[k] = (h[k] + h[k + 1]) / 3.0
                + lambda * (q[0] * q[0] / w[k] + q[1] * q[1] / w[k + 1] + q[2] * q[2] / w[k + 2]);
            if k + 1 < m {
                let r = qt[k + 1];
                b1[k] = h[k + 1] / 6.0 + lambda * (q[1] * r[0] / w[k + 1] + q[2] * r[1] / w[k + 2]);
            }
            if k + 2 < m {
                b2[k] = lambda * q[2] * qt[k + 2][0] / w[k + 2];
            }
        }
        let mut d = vec![0.0; m];
        let mut l1 = vec![0.0; m];
        let mut l2 = vec![0.0; m];
        for k in 0..m {
            let mut dk = b0[k];
            if k >= 1 {
                dk -= l1[k - 1] * l1[k - 1] * d[k - 1];
            }
            if k >= 2 {
                dk -= l2[k - 2] * l2[k - 2] * d[k - 2];
            }
            d[k] = dk;
            let mut c = b1[k];
            if k >= 1 {
                c -= l1[k - 1] * d[k - 1] * l2[k - 1];
            }
            l1[k] = c / dk;
            l2[k] = b2[k] / dk;
        }
        Banded { d, l1, l2 }
    }

    fn solve(f: &Banded, rhs: &[f64]) -> Vec<f64> {
        let m = rhs.len();
        let mut z = rhs.to_vec();
        for k in 0..m {
            if k >= 1 {
                z[k] -= f.l1[k - 1] * z[k - 1];
            }
            if k >= 2 {
                z[k] -= f.l2[k - 2] * z[k - 2];
            }
        }
        for k in 0..m {
            z[k] /= f.d[k];
        }
        for k in (0..m).rev() {
            if k + 1 < m {
                z[k] -= f.l1[k] * z[k + 1];
            }
            if k + 2 < m {
                z[k] -= f.l2[k] * z[k + 2];
            }
        }
        z
    }

    /// Central band (offsets 0, 1, 2) of the inverse of the factored matrix.
    fn inverse_band(f: &Banded) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let m = f.d.len();
        let mut s0 = vec![0.0; m];
        let mut s1 = vec![0.0; m];
        let mut s2 = vec![0.0; m];
        for k in (0..m).rev() {
            let (a, b) = (f.l1[k], f.l2[k]);
            let s11 = if k + 1 < m { s0[k + 1] } else { 0.0 };
            let s12 = if k + 2 < m { s1[k + 1] } else { 0.0 };
            let s22 = if k + 2 < m { s0[k + 2] } else { 0.0 };
            s2[k] = -a * s12 - b * s22;
            s1[k] = -a * s11 - b * s12;
            s0[k] = 1.0 / f.d[k] - a * s1[k] - b * s2[k];
        }
        (s0, s1, s2)
    }

    /// Fits at a fixed penalty.
    pub fn fit(&self, lambda: f64) -> NaturalSpline {
        let n = self.x.len();
        let m = n - 2;
        let fac = self.factor(lambda);
        let rhs: Vec<f64> = (0..m)
            .map(|k| {
                let q = self.qt[k];
                q[0] * self.y[k] + q[1] * self.y[k + 1] + q[2] * self.y[k + 2]
            })
            .collect();
        let gamma = Self::solve(&fac, &rhs);
        let (s0, s1, s2) = Self::inverse_band(&fac);
        let sigma = |k: usize, l: usize| -> f64 {
            let (a, b) = if k <= l { (k, l) } else { (l, k) };
            match b - a {
                0 => s0[a],
                1 => s1[a],
                2 => s2[a],
                _ => 0.0,
            }
        };

        let mut values = vec![0.0; n];
        let mut edf = 0.0;
        let mut rss = self.ss_within;
        for i in 0..n {
            let rows: Vec<(usize, f64)> = (i.saturating_sub(2)..=i.min(m - 1))
                .filter(|&k| i >= k && i - k <= 2)
                .map(|k| (k, self.qt[k][i - k]))
                .collect();
            let qg: f64 = rows.iter().map(|&(k, q)| q * gamma[k]).sum();
            values[i] = self.y[i] - lambda / self.w[i] * qg;
            let mut quad = 0.0;
            for &(k, qk) in &rows {
                for &(l, ql) in &rows {
                    quad += qk * sigma(k, l) * ql;
                }
            }
            edf += 1.0 - lambda / self.w[i] * quad;
            let r = self.y[i] - values[i];
            rss += self.w[i] * r * r;
        }
        let mut second = vec![0.0; n];
        second[1..n - 1].copy_from_slice(&gamma);
        NaturalSpline {
            lambda,
            knots: self.x.clone(),
            values,
            second,
            edf,
            rss,
        }
    }

    /// Generalized cross-validation score at `lambda`.
    pub fn gcv(&self, lambda: f64) -> f64 {
        let fit = self.fit(lambda);
        gcv_score(self.n_obs, fit.rss, fit.edf)
    }

    /// Minimizes GCV over `log10 λ ∈ range`.
    pub fn select_lambda(&self, range: (f64, f64)) -> GcvChoice {
        search_log_lambda(|l| self.gcv(l), range)
    }
}

fn gcv_score(n: f64, rss: f64, edf: f64) -> f64 {
    let denom = n - edf;
    if denom <= 1e-9 * n {
        return f64::INFINITY;
    }
    n * rss / (denom * denom)
}

impl NaturalSpline {
    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Fitted values at the knots.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.knots[0], self.knots[self.knots.len() - 1])
    }

    /// Evaluates the spline; beyond the knots it continues linearly.
    pub fn eval(&self, x: f64) -> f64 {
        let (k, f, g) = (&self.knots, &self.values, &self.second);
        let n = k.len();
        if x <= k[0] {
            let h = k[1] - k[0];
            let slope = (f[1] - f[0]) / h - h * (2.0 * g[0] + g[1]) / 6.0;
            return f[0] + slope * (x - k[0]);
        }
        if x >= k[n - 1] {
            let h = k[n - 1] - k[n - 2];
            let slope = (f[n - 1] - f[n - 2]) / h + h * (g[n - 2] + 2.0 * g[n - 1]) / 6.0;
            return f[n - 1] + slope * (x - k[n - 1]);
        }
        let i = match k.binary_search_by(|p| p.total_cmp(&x)) {
            Ok(i) => return f[i],
            Err(i) => i - 1,
        };
        let h = k[i + 1] - k[i];
        let a = (k[i + 1] - x) / h;
        let b = (x - k[i]) / h;
        a * f[i] + b * f[i + 1] + ((a * a * a - a) * g[i] + (b * b * b - b) * g[i + 1]) * h * h / 6.0
    }
}

/// Periodic cubic smoothing spline on `n` equally spaced parameter values
/// `t_j = 2πj/n`, fitting one or more coordinate functions with a shared
/// penalty.
pub struct PeriodicSmoother {
    n: usize,
    /// Eigenvalues of the second-difference operator.
    q: Vec<f64>,
    /// Eigenvalues of the cyclic spline Gram matrix.
    r: Vec<f64>,
    /// DFT of each coordinate.
    spectra: Vec<Vec<Complex<f64>>>,
}

/// A fitted periodic cubic spline for each coordinate.
#[derive(Debug, Clone)]
pub struct PeriodicSpline {
    pub lambda: f64,
    values: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl PeriodicSmoother {
    pub fn new(coords: &[&[f64]]) -> Result<Self> {
        let n = coords.first().map_or(0, |c| c.len());
        if n < 4 {
            return Err(invalid(format!("periodic smoother needs at least 4 samples, got {n}")));
        }
        if coords.iter().any(|c| c.len() != n) {
            return Err(invalid("coordinate lengths differ"));
        }
        let h = TAU / n as f64;
        let (q, r): (Vec<f64>, Vec<f64>) = (0..n)
            .map(|k| {
                let c = (TAU * k as f64 / n as f64).cos();
                (2.0 * (c - 1.0) / h, 2.0 * h / 3.0 + h * c / 3.0)
            })
            .unzip();
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(n);
        let spectra = coords
            .iter()
            .map(|c| {
                let mut buf: Vec<Complex<f64>> = c.iter().map(|&v| Complex::new(v, 0.0)).collect();
                fft.process(&mut buf);
                buf
            })
            .collect();
        Ok(Self { n, q, r, spectra })
    }

    fn penalty_eig(&self, k: usize) -> f64 {
        self.q[k] * self.q[k] / self.r[k]
    }

    /// Pooled GCV over all coordinates at `lambda`.
    pub fn gcv(&self, lambda: f64) -> f64 {
        let n = self.n as f64;
        let mut edf = 0.0;
        let mut rss = 0.0;
        for k in 0..self.n {
            let ld = lambda * self.penalty_eig(k);
            edf += 1.0 / (1.0 + ld);
            let shrink = ld / (1.0 + ld);
            for s in &self.spectra {
                rss += s[k].norm_sqr() * shrink * shrink / n;
            }
        }
        let dims = self.spectra.len() as f64;
        gcv_score(dims * n, rss, dims * edf)
    }

    pub fn select_lambda(&self, range: (f64, f64)) -> GcvChoice {
        search_log_lambda(|l| self.gcv(l), range)
    }

    pub fn fit(&self, lambda: f64) -> PeriodicSpline {
        let n = self.n;
        let mut planner = FftPlanner::new();
        let ifft = planner.plan_fft_inverse(n);
        let mut values = Vec::with_capacity(self.spectra.len());
        let mut second = Vec::with_capacity(self.spectra.len());
        for s in &self.spectra {
            let mut fv: Vec<Complex<f64>> = (0..n)
                .map(|k| s[k] / (1.0 + lambda * self.penalty_eig(k)))
                .collect();
            let mut gv: Vec<Complex<f64>> = (0..n).map(|k| fv[k] * (self.q[k] / self.r[k])).collect();
            ifft.process(&mut fv);
            ifft.process(&mut gv);
            values.push(fv.iter().map(|c| c.re / n as f64).collect());
            second.push(gv.iter().map(|c| c.re / n as f64).collect());
        }
        PeriodicSpline {
            lambda,
            values,
            second,
        }
    }
}

impl PeriodicSpline {
    /// Fitted node values of coordinate `dim`.
    pub fn values(&self, dim: usize) -> &[f64] {
        &self.values[dim]
    }

    /// Evaluates coordinate `dim` at parameter `t` (taken modulo 2π).
    pub fn eval(&self, dim: usize, t: f64) -> f64 {
        let f = &self.values[dim];
        let g = &self.second[dim];
        let n = f.len();
        let h = TAU / n as f64;
        let pos = t.rem_euclid(TAU) / h;
        let i = (pos.floor() as usize).min(n - 1);
        let b = pos - i as f64;
        let a = 1.0 - b;
        let j = (i + 1) % n;
        a * f[i] + b * f[j] + ((a * a * a - a) * g[i] + (b * b * b - b) * g[j]) * h * h / 6.0
    }
}
