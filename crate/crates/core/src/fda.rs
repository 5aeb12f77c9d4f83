//! Pointwise t curves with permutation-calibrated simultaneous bands.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::grid::grid_r;
use crate::stats::quantile_sorted;
use crate::warning::{Warning, WarningKind};

/// Standard errors below this are treated as zero.
pub const DEGENERATE_SE: f64 = 1e-12;

/// Fewest replicates accepted for a permutation band.
pub const MIN_PERMUTATIONS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Design {
    #[default]
    Unpaired,
    Paired,
}

/// A pointwise t statistic and the points where it was forced to zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointwiseT {
    pub t: Vec<f64>,
    /// Indices whose standard error vanished.
    pub degenerate: Vec<usize>,
}

impl PointwiseT {
    pub fn sup_abs(&self) -> f64 {
        sup_abs(&self.t)
    }
}

fn sup_abs(t: &[f64]) -> f64 {
    t.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Permutation distribution of `sup |T|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub critical: f64,
    pub level: f64,
    /// Sorted suprema, one per replicate.
    pub null_sups: Vec<f64>,
    /// Every distinct relabeling was evaluated once.
    pub exact: bool,
    pub observed_sup: f64,
    /// Share of replicates at least as extreme as the data.
    pub p_value: f64,
}

impl Band {
    /// Critical value of the same draw at another level.
    pub fn critical_at(&self, level: f64) -> f64 {
        quantile_sorted(&self.null_sups, level)
    }
}

/// A maximal run of grid points where `|T|` exceeds the critical value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub first_index: usize,
    pub last_index: usize,
    pub r_start: f64,
    pub r_end: f64,
}

/// Full report of a functional two-group test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestCurve {
    pub design: Design,
    pub t: Vec<f64>,
    pub degenerate: Vec<usize>,
    pub critical: f64,
    pub level: f64,
    /// Replicates evaluated.
    pub n_perm: usize,
    pub exact: bool,
    pub seed: u64,
    pub observed_sup: f64,
    pub p_value: f64,
    pub reject: bool,
    pub significant_regions: Vec<Region>,
    pub warnings: Vec<Warning>,
}

/// Options for permutation calibration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PermutationOptions {
    pub n_perm: usize,
    pub level: f64,
    pub seed: u64,
}

impl Default for PermutationOptions {
    fn default() -> Self {
        Self {
            n_perm: 5000,
            level: 0.95,
            seed: 0,
        }
    }
}

impl PermutationOptions {
    fn validate(&self) -> Result<()> {
        if self.n_perm < MIN_PERMUTATIONS {
            return Err(invalid(format!(
                "n_perm = {} is below the minimum of {MIN_PERMUTATIONS}",
                self.n_perm
            )));
        }
        if !(self.level > 0.5 && self.level < 1.0) {
            return Err(invalid(format!("level {} must lie in (0.5, 1)", self.level)));
        }
        Ok(())
    }
}

fn curve_len<C: AsRef<[f64]>>(groups: &[&[C]]) -> Result<usize> {
    let len = groups
        .iter()
        .flat_map(|g| g.iter())
        .map(|c| c.as_ref().len())
        .next()
        .ok_or_else(|| invalid("no curves"))?;
    if len == 0 {
        return Err(invalid("curves are empty"));
    }
    if groups.iter().flat_map(|g| g.iter()).any(|c| c.as_ref().len() != len) {
        return Err(invalid("curves differ in length"));
    }
    if groups.iter().flat_map(|g| g.iter()).flat_map(|c| c.as_ref()).any(|v| !v.is_finite()) {
        return Err(invalid("curve values must be finite"));
    }
    Ok(len)
}

// Mean and variance (n - 1) of the selected rows at column `i`, two-pass.
fn column_moments(rows: &[&[f64]], select: impl Fn(usize) -> bool + Copy, i: usize) -> (f64, f64, f64) {
    let mut n = 0.0;
    let mut s = 0.0;
    for (k, r) in rows.iter().enumerate() {
        if select(k) {
            n += 1.0;
            s += r[i];
        }
    }
    let m = s / n;
    let mut ss = 0.0;
    for (k, r) in rows.iter().enumerate() {
        if select(k) {
            ss += (r[i] - m) * (r[i] - m);
        }
    }
    (n, m, ss / (n - 1.0))
}

// T = (mean_C - mean_A) / se with group A the rows where `in_a` holds.
fn welch_curve(rows: &[&[f64]], in_a: &[bool], len: usize) -> PointwiseT {
    let mut t = vec![0.0; len];
    let mut degenerate = Vec::new();
    for i in 0..len {
        let (na, ma, va) = column_moments(rows, |k| in_a[k], i);
        let (nc, mc, vc) = column_moments(rows, |k| !in_a[k], i);
        let se = (vc / nc + va / na).sqrt();
        if se < DEGENERATE_SE {
            degenerate.push(i);
        } else {
            t[i] = (mc - ma) / se;
        }
    }
    PointwiseT { t, degenerate }
}

/// `T(r_i) = (μ̂_C − μ̂_A) / sqrt(s_C²/n_C + s_A²/n_A)` at every grid point.
/// Points with a vanishing standard error get `T = 0` and are listed as
/// degenerate.
pub fn two_sample_tcurve<C: AsRef<[f64]>>(group_a: &[C], group_c: &[C]) -> Result<PointwiseT> {
    if group_a.len() < 2 || group_c.len() < 2 {
        return Err(invalid("each group needs at least 2 curves"));
    }
    let len = curve_len(&[group_a, group_c])?;
    let rows: Vec<&[f64]> = group_a.iter().chain(group_c).map(|c| c.as_ref()).collect();
    let in_a: Vec<bool> = (0..rows.len()).map(|k| k < group_a.len()).collect();
    Ok(welch_curve(&rows, &in_a, len))
}

fn binomial(n: usize, k: usize) -> Option<u128> {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.checked_mul((n - i) as u128)? / (i as u128 + 1);
    }
    Some(acc)
}

// All k-subsets of 0..n in lexicographic order.
fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        let Some(pos) = (0..k).rev().find(|&p| idx[p] != p + n - k) else {
            return out;
        };
        idx[pos] += 1;
        for q in pos + 1..k {
            idx[q] = idx[q - 1] + 1;
        }
    }
}

fn replicate_rng(seed: u64, replicate: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate as u64);
    rng
}

fn finish_band(mut sups: Vec<f64>, exact: bool, observed_sup: f64, level: f64) -> Band {
    sups.sort_by(f64::total_cmp);
    let tol = 1e-9 * observed_sup.max(1.0);
    let at_least = sups.iter().filter(|&&s| s >= observed_sup - tol).count();
    let p_value = if exact {
        at_least as f64 / sups.len() as f64
    } else {
        (at_least + 1) as f64 / (sups.len() + 1) as f64
    };
    Band {
        critical: quantile_sorted(&sups, level),
        level,
        null_sups: sups,
        exact,
        observed_sup,
        p_value,
    }
}

/// Calibrates `sup |T|` by reassigning the pooled curves to groups of the
/// original sizes. When the number of distinct splits does not exceed
/// `n_perm` they are enumerated exactly; otherwise `n_perm` random splits
/// are drawn, replicate `b` using its own stream of the seeded generator so
/// the result does not depend on scheduling.
pub fn permutation_band<C: AsRef<[f64]> + Sync>(
    group_a: &[C],
    group_c: &[C],
    opts: &PermutationOptions,
) -> Result<Band> {
    opts.validate()?;
    let observed = two_sample_tcurve(group_a, group_c)?;
    let len = observed.t.len();
    let rows: Vec<&[f64]> = group_a.iter().chain(group_c).map(|c| c.as_ref()).collect();
    let (n, na) = (rows.len(), group_a.len());
    let splits = binomial(n, na);
    let exact = splits.is_some_and(|s| s <= opts.n_perm as u128);
    let sup_of = |members: &[usize]| {
        let mut in_a = vec![false; n];
        members.iter().for_each(|&k| in_a[k] = true);
        welch_curve(&rows, &in_a, len).sup_abs()
    };
    let sups: Vec<f64> = if exact {
        combinations(n, na).par_iter().map(|m| sup_of(m)).collect()
    } else {
        (0..opts.n_perm)
            .into_par_iter()
            .map(|b| {
                let mut rng = replicate_rng(opts.seed, b);
                sup_of(&rand::seq::index::sample(&mut rng, n, na).into_vec())
            })
            .collect()
    };
    Ok(finish_band(sups, exact, observed.sup_abs(), opts.level))
}

/// Maximal runs of indices with `|t| > critical`.
pub fn significant_regions(t: &[f64], critical: f64) -> Vec<Region> {
    let mut out = Vec::new();
    let mut start = None;
    for i in 0..=t.len() {
        let hit = i < t.len() && t[i].abs() > critical;
        match (hit, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push(Region {
                    first_index: s,
                    last_index: i - 1,
                    r_start: grid_r(s),
                    r_end: grid_r(i - 1),
                });
                start = None;
            }
            _ => {}
        }
    }
    out
}

fn report(design: Design, pt: PointwiseT, band: Band, opts: &PermutationOptions) -> TestCurve {
    let mut warnings = Vec::new();
    if !pt.degenerate.is_empty() {
        warnings.push(Warning::new(
            WarningKind::DegenerateVariance,
            format!("{} grid points had zero variance and T set to 0", pt.degenerate.len()),
        ));
    }
    if band.exact {
        warnings.push(Warning::new(
            WarningKind::ExactEnumeration,
            format!(
                "only {} distinct relabelings exist; all were enumerated instead of {} random draws",
                band.null_sups.len(),
                opts.n_perm
            ),
        ));
    }
    TestCurve {
        design,
        significant_regions: significant_regions(&pt.t, band.critical),
        reject: band.observed_sup > band.critical,
        t: pt.t,
        degenerate: pt.degenerate,
        critical: band.critical,
        level: band.level,
        n_perm: band.null_sups.len(),
        exact: band.exact,
        seed: opts.seed,
        observed_sup: band.observed_sup,
        p_value: band.p_value,
        warnings,
    }
}

/// Two-sample t curve with its permutation band.
pub fn two_sample_test<C: AsRef<[f64]> + Sync>(
    group_a: &[C],
    group_c: &[C],
    opts: &PermutationOptions,
) -> Result<TestCurve> {
    let pt = two_sample_tcurve(group_a, group_c)?;
    let band = permutation_band(group_a, group_c, opts)?;
    Ok(report(Design::Unpaired, pt, band, opts))
}

// One-sample t of the signed differences at every column.
fn paired_curve(diffs: &[Vec<f64>], signs: &[bool], len: usize) -> PointwiseT {
    let n = diffs.len() as f64;
    let mut t = vec![0.0; len];
    let mut degenerate = Vec::new();
    for i in 0..len {
        let val = |k: usize| if signs[k] { -diffs[k][i] } else { diffs[k][i] };
        let m = (0..diffs.len()).map(val).sum::<f64>() / n;
        let ss = (0..diffs.len()).map(|k| (val(k) - m).powi(2)).sum::<f64>();
        let se = (ss / (n - 1.0) / n).sqrt();
        if se < DEGENERATE_SE {
            degenerate.push(i);
        } else {
            t[i] = m / se;
        }
    }
    PointwiseT { t, degenerate }
}

fn differences<C: AsRef<[f64]>>(pairs: &[(C, C)]) -> Result<(Vec<Vec<f64>>, usize)> {
    if pairs.len() < 3 {
        return Err(invalid("paired tests need at least 3 pairs"));
    }
    let ys: Vec<&C> = pairs.iter().map(|p| &p.0).collect();
    let rs: Vec<&C> = pairs.iter().map(|p| &p.1).collect();
    let len = curve_len(&[&ys[..], &rs[..]])?;
    let diffs = pairs
        .iter()
        .map(|(y, r)| y.as_ref().iter().zip(r.as_ref()).map(|(a, b)| a - b).collect())
        .collect();
    Ok((diffs, len))
}

/// Pointwise paired t statistic of `Y − R` across cells.
pub fn paired_tcurve<C: AsRef<[f64]>>(pairs: &[(C, C)]) -> Result<PointwiseT> {
    let (diffs, len) = differences(pairs)?;
    Ok(paired_curve(&diffs, &vec![false; diffs.len()], len))
}

/// Paired t curve with a band from restricted randomization: each cell's two
/// labels are swapped independently with probability one half. With at most
/// `n_perm` sign patterns all of them are enumerated.
pub fn paired_tcurve_and_band<C: AsRef<[f64]>>(pairs: &[(C, C)], opts: &PermutationOptions) -> Result<TestCurve> {
    opts.validate()?;
    let (diffs, len) = differences(pairs)?;
    let n = diffs.len();
    let observed = paired_curve(&diffs, &vec![false; n], len);
    let exact = n < 63 && (1u64 << n) <= opts.n_perm as u64;
    let sup_of = |signs: &[bool]| paired_curve(&diffs, signs, len).sup_abs();
    let sups: Vec<f64> = if exact {
        (0..1u64 << n)
            .into_par_iter()
            .map(|mask| sup_of(&(0..n).map(|k| mask >> k & 1 == 1).collect::<Vec<_>>()))
            .collect()
    } else {
        (0..opts.n_perm)
            .into_par_iter()
            .map(|b| {
                let mut rng = replicate_rng(opts.seed, b);
                sup_of(&(0..n).map(|_| rng.random_bool(0.5)).collect::<Vec<_>>())
            })
            .collect()
    };
    let band = finish_band(sups, exact, observed.sup_abs(), opts.level);
    Ok(report(Design::Paired, observed, band, opts))
}
