use bdplot_core::fda::*;
use bdplot_core::grid::{grid_r, GRID_LEN};
use bdplot_core::pda::*;
use bdplot_core::plm::*;
use bdplot_core::profiles::grid_weights;
use bdplot_core::stats::quantile_sorted;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

fn noisy_curve(rng: &mut ChaCha8Rng, f: impl Fn(f64) -> f64, sigma: f64) -> Vec<f64> {
    (0..GRID_LEN)
        .map(|i| f(grid_r(i)) + sigma * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn welch_sup(a: &[&Vec<f64>], c: &[&Vec<f64>]) -> f64 {
    let stats = |g: &[&Vec<f64>], i: usize| {
        let n = g.len() as f64;
        let m = g.iter().map(|v| v[i]).sum::<f64>() / n;
        let s2 = g.iter().map(|v| (v[i] - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, s2 / n)
    };
    (0..a[0].len())
        .map(|i| {
            let ((ma, va), (mc, vc)) = (stats(a, i), stats(c, i));
            ((mc - ma) / (va + vc).sqrt()).abs()
        })
        .fold(0.0, f64::max)
}

#[test]
fn two_by_two_band_is_the_enumerated_quantile() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let curves: Vec<Vec<f64>> = (0..4).map(|_| noisy_curve(&mut rng, |r| r, 0.3)).collect();
    let mut sups = Vec::new();
    for i in 0..4 {
        for j in i + 1..4 {
            let a: Vec<_> = [i, j].iter().map(|&k| &curves[k]).collect();
            let c: Vec<_> = (0..4).filter(|k| *k != i && *k != j).map(|k| &curves[k]).collect();
            sups.push(welch_sup(&a, &c));
        }
    }
    sups.sort_by(f64::total_cmp);
    let opts = PermutationOptions { n_perm: 1000, level: 0.95, seed: 0 };
    let band = permutation_band(&curves[..2], &curves[2..], &opts).unwrap();
    assert!(band.exact);
    assert_eq!(band.null_sups.len(), 6);
    for (x, y) in band.null_sups.iter().zip(&sups) {
        assert!((x - y).abs() < 1e-9 * y.max(1.0));
    }
    assert!((band.critical - quantile_sorted(&sups, 0.95)).abs() < 1e-9);
}

#[test]
fn t_peaks_inside_the_constructed_zone() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let base = |r: f64| 1.0 + 0.5 * r;
    let a: Vec<_> = (0..15).map(|_| noisy_curve(&mut rng, base, 0.1)).collect();
    let c: Vec<_> = (0..15)
        .map(|_| noisy_curve(&mut rng, |r| base(r) + if r > 0.9 && r < 1.2 { 0.3 } else { 0.0 }, 0.1))
        .collect();
    let t = two_sample_tcurve(&a, &c).unwrap().t;
    let argmax = (0..GRID_LEN).max_by(|&i, &j| t[i].abs().total_cmp(&t[j].abs())).unwrap();
    assert!(grid_r(argmax) > 0.9 && grid_r(argmax) < 1.2);
    let test = two_sample_test(&a, &c, &PermutationOptions { n_perm: 1000, level: 0.95, seed: 4 }).unwrap();
    assert!(test.reject);
    for reg in &test.significant_regions {
        assert!(reg.r_start > 0.85 && reg.r_end < 1.25, "{reg:?}");
    }
}

#[test]
fn constant_positive_differences_give_the_sign_test_p_value() {
    let n = 8;
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..n)
        .map(|k| {
            let r = vec![1.0 + k as f64; GRID_LEN];
            let y = r.iter().map(|v| v + 0.1 * (k + 1) as f64).collect();
            (y, r)
        })
        .collect();
    let test = paired_tcurve_and_band(&pairs, &PermutationOptions { n_perm: 1000, level: 0.95, seed: 0 }).unwrap();
    assert!(test.exact);
    assert!((test.p_value - 2f64.powi(-(n - 1))).abs() < 1e-12, "{}", test.p_value);
    let same: Vec<_> = pairs.iter().map(|(_, r)| (r.clone(), r.clone())).collect();
    assert!(paired_tcurve(&same).unwrap().t.iter().all(|&v| v == 0.0));
}

#[test]
fn paired_difference_beyond_one_point_six_is_localized() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..17)
        .map(|_| {
            let r = noisy_curve(&mut rng, |r| 2.0 - 0.5 * r, 0.1);
            let bump = noisy_curve(&mut rng, |r| if r > 1.6 { 0.4 } else { 0.0 }, 0.05);
            let y = r.iter().zip(&bump).map(|(a, b)| a + b).collect();
            (y, r)
        })
        .collect();
    let test = paired_tcurve_and_band(&pairs, &PermutationOptions { n_perm: 2000, level: 0.95, seed: 2 }).unwrap();
    assert!(!test.significant_regions.is_empty());
    for reg in &test.significant_regions {
        assert!(reg.r_start >= 1.5, "{reg:?}");
    }
}

#[test]
fn paired_null_is_calibrated() {
    let mut rejections = 0;
    for rep in 0..300u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + rep);
        let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..12)
            .map(|_| {
                let r = noisy_curve(&mut rng, |r| 2.0 - 0.5 * r, 0.1);
                let (a, b): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
                let y = (0..GRID_LEN)
                    .map(|i| r[i] + 0.1 * (a * (1.5 * grid_r(i)).sin() + b * grid_r(i)) + 0.05 * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                (y, r)
            })
            .collect();
        let test = paired_tcurve_and_band(&pairs, &PermutationOptions { n_perm: 1000, level: 0.95, seed: rep }).unwrap();
        rejections += test.reject as usize;
    }
    let rate = rejections as f64 / 300.0;
    assert!((0.02..=0.09).contains(&rate), "{rejections}/300");
}

fn truncated(rng: &mut ChaCha8Rng, n: usize, shift: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..10).map(|j| shift * j as f64 + rng.sample::<f64, _>(StandardNormal)).collect())
        .collect()
}

#[test]
fn pooled_covariance_matches_double_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (a, c) = (truncated(&mut rng, 5, 0.0), truncated(&mut rng, 5, 0.3));
    let w = pooled_within_covariance(&a, &c).unwrap();
    for j in 0..10 {
        for k in 0..10 {
            let mut want = 0.0;
            for g in [&a, &c] {
                let mj = g.iter().map(|v| v[j]).sum::<f64>() / 5.0;
                let mk = g.iter().map(|v| v[k]).sum::<f64>() / 5.0;
                let s: f64 = g.iter().map(|v| (v[j] - mj) * (v[k] - mk)).sum();
                want += 0.5 * s / 4.0;
            }
            assert!((w[(j, k)] - want).abs() < 1e-12);
        }
    }
}

// Gaussian elimination with partial pivoting.
fn naive_solve(mut m: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let p = (col..n).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs())).unwrap();
        m.swap(col, p);
        b.swap(col, p);
        for row in col + 1..n {
            let f = m[row][col] / m[col][col];
            for k in col..n {
                m[row][k] -= f * m[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| m[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / m[row][row];
    }
    x
}

#[test]
fn discriminant_matches_direct_solve() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (a, c) = (truncated(&mut rng, 6, 0.2), truncated(&mut rng, 7, 0.0));
    let w = pooled_within_covariance(&a, &c).unwrap();
    let delta: Vec<f64> = (0..10)
        .map(|j| a.iter().map(|v| v[j]).sum::<f64>() / 6.0 - c.iter().map(|v| v[j]).sum::<f64>() / 7.0)
        .collect();
    for lambda in [1e-3, 0.1, 10.0] {
        let m = (0..10)
            .map(|j| (0..10).map(|k| w[(j, k)] + if j == k { lambda } else { 0.0 }).collect())
            .collect();
        let want = naive_solve(m, delta.clone());
        let got = fit_discriminant(&a, &c, lambda).unwrap();
        let scale = want.iter().fold(0.0f64, |s, v| s.max(v.abs()));
        for (g, x) in got.iter().zip(&want) {
            assert!((g - x).abs() <= 1e-10 * scale.max(1.0), "{g} vs {x}");
        }
    }
}

#[test]
fn identity_covariance_shrinks_the_mean_difference() {
    // ±c e_j around each mean gives W = 4c²/(2(n−1)) I with n = 20.
    let c2: f64 = 38.0 / 4.0;
    let make = |mean: f64| -> Vec<Vec<f64>> {
        (0..10)
            .flat_map(|j| {
                [1.0, -1.0].map(|s| (0..10).map(|k| mean + if k == j { s * c2.sqrt() } else { 0.0 }).collect())
            })
            .collect()
    };
    let (a, c) = (make(2.0), make(0.5));
    let w = pooled_within_covariance(&a, &c).unwrap();
    assert!((w - DMatrix::<f64>::identity(10, 10)).abs().max() < 1e-12);
    let d = fit_discriminant(&a, &c, 0.25).unwrap();
    assert!(d.iter().all(|v| (v - 1.5 / 1.25).abs() < 1e-12));
}

#[test]
fn ridge_lifts_every_eigenvalue() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let a: Vec<_> = (0..4).map(|_| noisy_curve(&mut rng, |r| r, 0.2)).collect();
    let c: Vec<_> = (0..4).map(|_| noisy_curve(&mut rng, |r| r, 0.2)).collect();
    let w = pooled_within_covariance(&a, &c).unwrap();
    for lambda in default_lambda_grid() {
        let m = &w + DMatrix::<f64>::identity(GRID_LEN, GRID_LEN) * lambda;
        let min = m.symmetric_eigen().eigenvalues.min();
        assert!(min >= lambda * (1.0 - 1e-6) - 1e-12, "{min} < {lambda}");
    }
}

#[test]
fn separable_groups_have_no_cv_errors() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let a: Vec<_> = (0..12).map(|_| noisy_curve(&mut rng, |r| 1.0 + (r > 1.0) as u8 as f64, 0.05)).collect();
    let c: Vec<_> = (0..12).map(|_| noisy_curve(&mut rng, |_| 1.0, 0.05)).collect();
    let model = loocv_select(&a, &c, &PdaOptions::default()).unwrap();
    assert_eq!(model.cv_errors, 0);
    assert_eq!(model.error_surface.len(), model.lambda_grid.len());
    assert!(model.error_surface.iter().all(|row| row.len() == model.tau_grid.len()));
    assert!(model.scores[..12].iter().all(|&s| model.classify(s)));
    assert!(model.scores[12..].iter().all(|&s| !model.classify(s)));
}

fn ramp(r: f64) -> f64 {
    if r <= 0.85 {
        0.5
    } else if r <= 1.15 {
        0.5 * (1.15 - r) / 0.3
    } else {
        0.0
    }
}

#[test]
fn ramp_knots_are_recovered() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for _ in 0..10 {
        let g = noisy_curve(&mut rng, ramp, 0.005);
        let fit = fit_piecewise(&g, KnotPenalty::Auto, None).unwrap();
        assert!((fit.kappa2 - 0.85).abs() <= 0.02 + 1e-9, "{}", fit.kappa2);
        assert!((fit.kappa3 - 1.15).abs() <= 0.02 + 1e-9, "{}", fit.kappa3);
        assert!(fit.slopes[1] < 0.0);
        assert!(fit.r_squared > 0.98);
    }
}

#[test]
fn grid_search_is_exhaustive() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let w = grid_weights();
    for _ in 0..20 {
        let a: f64 = rng.random_range(-1.0..1.0);
        let g = noisy_curve(&mut rng, |r| a * r * r + (4.0 * r).sin(), 0.1);
        let fit = fit_piecewise(&g, KnotPenalty::Auto, None).unwrap();
        let lam = fit.lambda_knot;
        let crit = |k2: f64, k3: f64, wsse: f64| wsse + lam * ((k2 - 1.0).powi(2) + (1.0 - k3).powi(2));
        let chosen = crit(fit.kappa2, fit.kappa3, fit.wsse);
        let mut best = f64::INFINITY;
        for j in 2..=99 {
            for m in 101..=198 {
                let (k2, k3) = (j as f64 / 100.0, m as f64 / 100.0);
                let s = fit_segments(&g, k2, k3, &w).unwrap();
                best = best.min(crit(k2, k3, s.wsse));
            }
        }
        assert!(chosen <= best + 1e-9 * (1.0 + best), "{chosen} > {best}");
    }
}

#[test]
fn segment_sse_matches_normal_equations() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let g = noisy_curve(&mut rng, |r| r.sin(), 0.2);
    let w = grid_weights();
    let fit = fit_segments(&g, 0.6, 1.4, &w).unwrap();
    let mut total = 0.0;
    for (lo, hi) in [(0, 60), (60, 140), (140, GRID_LEN)] {
        let x = DMatrix::from_fn(hi - lo, 2, |i, k| if k == 0 { 1.0 } else { grid_r(lo + i) });
        let wd = DMatrix::from_diagonal(&DVector::from_row_slice(&w[lo..hi]));
        let y = DVector::from_row_slice(&g[lo..hi]);
        let beta = (x.transpose() * &wd * &x).try_inverse().unwrap() * x.transpose() * &wd * &y;
        let res = &y - &x * beta;
        total += (res.transpose() * &wd * &res)[0];
    }
    assert!((fit.wsse - total).abs() < 1e-10 * total.max(1.0));
}

#[test]
fn middle_slope_difference_is_detected() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let sd = 0.05;
    let noise = Normal::new(0.0, sd).unwrap();
    let mut make = |b2: f64| -> PiecewiseFit {
        let slope = b2 + noise.sample(&mut rng);
        let g = noisy_curve(&mut rng, |r| if r <= 0.8 { 1.0 } else if r <= 1.2 { 3.0 + slope * r } else { 0.2 }, 0.01);
        fit_piecewise(&g, KnotPenalty::Auto, None).unwrap()
    };
    let a: Vec<_> = (0..12).map(|_| make(-0.5)).collect();
    let c: Vec<_> = (0..12).map(|_| make(-0.5 + 5.0 * sd)).collect();
    let cmp = compare_groups(&a, &c, false).unwrap();
    for p in &cmp.parameters {
        match (p.name.as_str(), p.p_value) {
            ("b2", Some(v)) => assert!(v < 0.001, "b2 {v}"),
            ("b2", None) => panic!("b2 untestable"),
            (name, Some(v)) => assert!(v > 0.05, "{name} {v}"),
            (_, None) => {}
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn knots_straddle_the_boundary(seed in 0u64..10_000, amp in 0.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = noisy_curve(&mut rng, |r| amp * (3.0 * r).cos(), 0.2);
        let fit = fit_piecewise(&g, KnotPenalty::Auto, None).unwrap();
        prop_assert!(fit.kappa2 < 1.0 && 1.0 < fit.kappa3);
        prop_assert!(fit.kappa2 >= 0.02 && fit.kappa3 <= 1.98);
    }

    #[test]
    fn swapping_groups_negates_t(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a: Vec<_> = (0..4).map(|_| noisy_curve(&mut rng, |r| r, 0.3)).collect();
        let c: Vec<_> = (0..5).map(|_| noisy_curve(&mut rng, |r| r, 0.3)).collect();
        let t1 = two_sample_tcurve(&a, &c).unwrap().t;
        let t2 = two_sample_tcurve(&c, &a).unwrap().t;
        for (x, y) in t1.iter().zip(&t2) {
            prop_assert!((x + y).abs() < 1e-12);
        }
    }
}
