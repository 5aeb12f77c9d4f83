//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::time::Instant;

use bdplot_cli::config::RunConfig;
use bdplot_cli::synthfiles::write_dataset;
use bdplot_cli::{run_pipeline, RunOptions, RunOutcome};
use bdplot_core::alignment::{register_between, register_within, RegistrationOptions};
use bdplot_core::fda::{two_sample_test, PermutationOptions};
use bdplot_core::geometry::{bd_from_masks, build_bd_map, smooth_boundary, squared_edt};
use bdplot_core::grid::{grid_r, riemann, GRID_LEN};
use bdplot_core::pda::{default_lambda_grid, fit_discriminant, loocv_select, pooled_within_covariance, PdaOptions};
use bdplot_core::plm::{fit_piecewise, fit_segments, KnotPenalty};
use bdplot_core::profiles::{extract_profile, fit_expression_curve, grid_weights, ProfileCloud};
use bdplot_core::spline::{NaturalSmoother, LOG_LAMBDA_RANGE};
use bdplot_core::stats::median;
use bdplot_core::synth::{flat_illumination, generate, random_layout, ChannelSpec, SynthSpec, Template};
use bdplot_core::{scale_curve, ChannelRole, ExpressionCurve, Smoothing};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn noisy(rng: &mut ChaCha8Rng, f: impl Fn(f64) -> f64, sigma: f64) -> Vec<f64> {
    (0..GRID_LEN).map(|i| f(grid_r(i)) + sigma * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn brute_edt(mask: &Array2<bool>) -> Array2<i64> {
    let bg: Vec<(i64, i64)> = mask.indexed_iter().filter(|(_, &v)| !v).map(|((r, c), _)| (r as i64, c as i64)).collect();
    Array2::from_shape_fn(mask.dim(), |(r, c)| {
        if !mask[(r, c)] {
            return 0;
        }
        bg.iter().map(|&(br, bc)| (br - r as i64).pow(2) + (bc - c as i64).pow(2)).min().unwrap()
    })
}

fn edt_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let masks: Vec<Array2<bool>> = (0..200)
        .map(|_| {
            let (rows, cols) = (rng.random_range(1..=64), rng.random_range(2..=64));
            let p = rng.random_range(0.5..0.99);
            let mut m = Array2::from_shape_fn((rows, cols), |_| rng.random_bool(p));
            m[(0, 0)] = false;
            m
        })
        .collect();
    let start = Instant::now();
    let fast: Vec<_> = masks.iter().map(|m| squared_edt(m).unwrap()).collect();
    let secs = start.elapsed().as_secs_f64();
    let mismatches = masks.iter().zip(&fast).filter(|(m, f)| brute_edt(m) != **f).count();
    check(mismatches == 0 && secs < 5.0, format!("{mismatches}/200 mismatches, {secs:.3} s"))
}

fn disk_closed_forms() -> Outcome {
    let (rho, n) = (24.5, 121);
    let mask = Array2::from_shape_fn((n, n), |(r, c)| (r as f64 - 60.0).hypot(c as f64 - 60.0) <= rho);
    let map = bd_from_masks(&[mask]).map_err(|e| e.to_string())?;
    let tol = 0.5 / map.d_max[0] + 1e-12;
    let center = map.bd[(60, 60)];
    let rim = map.bd[(60, 84)];
    let outside = map.bd[(60, 109)];
    let ok = center.abs() <= tol && (rim - 1.0).abs() <= tol && (outside - 2.0).abs() <= 2.0 * tol;
    check(ok, format!("center {center:.4}, rim {rim:.4}, one radius out {outside:.4}, tol {tol:.4}"))
}

fn spline_sanity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let points = (0..2000)
        .map(|_| {
            let r = 2.0 - rng.random_range(0.0..2.0);
            (r, 2.0 * r)
        })
        .collect();
    let cloud = ProfileCloud { nucleus_id: 0, channel: ChannelRole::Marker, points };
    let c = fit_expression_curve(&cloud, Smoothing::Gcv).map_err(|e| e.to_string())?;
    let lin_err = (2..GRID_LEN - 2).map(|i| (c.values[i] - 2.0 * grid_r(i)).abs()).fold(0.0, f64::max);

    let truth = |x: f64| (3.0 * x).sin() + 0.5 * x;
    let x: Vec<f64> = (0..300).map(|i| 2.0 * (i as f64 + 0.5) / 300.0).collect();
    let mut medians = Vec::new();
    for sigma in [0.4, 0.2, 0.1, 0.05, 0.025] {
        let noise = Normal::new(0.0, sigma).unwrap();
        let logs: Vec<f64> = (0..10)
            .map(|_| {
                let y: Vec<f64> = x.iter().map(|&t| truth(t) + noise.sample(&mut rng)).collect();
                NaturalSmoother::unweighted(&x, &y).unwrap().select_lambda(LOG_LAMBDA_RANGE).lambda.log10()
            })
            .collect();
        medians.push(median(&logs));
    }
    let monotone = medians.windows(2).all(|w| w[1] <= w[0]);
    let ladder: Vec<String> = medians.iter().map(|m| format!("{m:.2}")).collect();
    check(
        lin_err < 1e-3 && monotone,
        format!("linear max error {lin_err:.1e}, median log10 lambda [{}]", ladder.join(", ")),
    )
}

fn scaling() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let (mut worst, mut idempotent) = (0.0f64, true);
    for _ in 0..200 {
        let (a, b, c) = (rng.random_range(0.1..5.0), rng.random_range(0.0..2.0), rng.random_range(0.0..3.0));
        let g = ExpressionCurve::from_fn(0, ChannelRole::Marker, |r| a + b * r + c * (-(r - 1.0f64).powi(2) / 0.05).exp());
        let s = scale_curve(&g).map_err(|e| e.to_string())?;
        worst = worst.max((riemann(&s.values) - 1.0).abs());
        let again = scale_curve(&s).map_err(|e| e.to_string())?;
        idempotent &= again.values == s.values;
    }
    check(worst < 1e-6 && idempotent, format!("max |area - 1| {worst:.1e} over 200 curves, idempotent {idempotent}"))
}

fn registration() -> Outcome {
    let factors = [0.9, 1.0, 1.1];
    let opts = RegistrationOptions { tol: 1e-8, line_tol: 1e-6, ..Default::default() };
    let (mut worst, mut monotone) = (0.0f64, true);
    for amp in [0.5, 1.0, 1.5, 2.0] {
        for shift in [-0.02, 0.0, 0.02] {
            let fs = factors.map(|f| f + shift);
            let curves: Vec<Vec<f64>> = fs
                .iter()
                .map(|&f| {
                    (0..GRID_LEN)
                        .map(|i| {
                            let r = grid_r(i) * f;
                            1.0 + amp * (-(r - 1.0).powi(2) / 0.02).exp() + 0.3 * r
                        })
                        .collect()
                })
                .collect();
            let res = register_within(&curves, &opts).map_err(|e| e.to_string())?;
            monotone &= res.sse_trace.windows(2).all(|w| w[1] <= w[0]);
            let gm = fs.iter().map(|f| f.ln()).sum::<f64>() / 3.0;
            for (d, f) in res.dilations.iter().zip(fs) {
                worst = worst.max((d - (gm - f.ln()).exp()).abs());
            }
        }
    }
    let template = |r: f64| 1.0 + (-(r - 1.0f64).powi(2) / 0.02).exp() + 0.3 * r;
    let mu_c: Vec<f64> = (0..GRID_LEN).map(|i| template(grid_r(i))).collect();
    let mu_a: Vec<f64> = (0..GRID_LEN).map(|i| template(0.95 * grid_r(i))).collect();
    let between = register_between(&mu_a, &mu_c, (0.7, 1.3), 1e-6).map_err(|e| e.to_string())?;
    let err = (between.delta - 1.0 / 0.95).abs();
    check(
        worst < 0.02 && monotone && err < 0.01,
        format!("max dilation error {worst:.4}, traces non-increasing {monotone}, delta_A {:.4} (target {:.4})", between.delta, 1.0 / 0.95),
    )
}

fn null_curve(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let a: Vec<f64> = (0..6).map(|_| StandardNormal.sample(rng)).collect();
    (0..GRID_LEN)
        .map(|i| {
            let r = grid_r(i);
            let mut v = 1.0 + 0.5 * (-(r - 1.0f64).powi(2) / 0.02).exp();
            for (k, c) in a.iter().enumerate() {
                v += 0.1 * c * ((k as f64 + 1.0) * PI * r / 2.0).sin();
            }
            v + 0.05 * rng.sample::<f64, _>(StandardNormal)
        })
        .collect()
}

fn null_pair(seed: u64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = (0..20).map(|_| null_curve(&mut rng)).collect();
    let c = (0..20).map(|_| null_curve(&mut rng)).collect();
    (a, c)
}

fn calibration() -> Outcome {
    let start = Instant::now();
    let mut rejections = 0;
    for rep in 0..500u64 {
        let (a, c) = null_pair(1000 + rep);
        let t = two_sample_test(&a, &c, &PermutationOptions { n_perm: 2000, level: 0.95, seed: rep }).map_err(|e| e.to_string())?;
        rejections += t.reject as usize;
    }
    let secs = start.elapsed().as_secs_f64();
    let rate = rejections as f64 / 500.0;
    check(
        (0.03..=0.07).contains(&rate) && secs < 300.0,
        format!("{rejections}/500 = {:.1}% rejections, {secs:.1} s", 100.0 * rate),
    )
}

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

fn discriminant() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(107);
    let a: Vec<_> = (0..12).map(|_| noisy(&mut rng, |r| 1.0 + (r > 1.0) as u8 as f64, 0.05)).collect();
    let c: Vec<_> = (0..12).map(|_| noisy(&mut rng, |_| 1.0, 0.05)).collect();
    let separable = loocv_select(&a, &c, &PdaOptions::default()).map_err(|e| e.to_string())?.cv_errors;

    let mut null_rate = 0.0;
    for rep in 0..50u64 {
        let (a, c) = null_pair(5000 + rep);
        null_rate += loocv_select(&a, &c, &PdaOptions::default()).map_err(|e| e.to_string())?.cv_rate / 50.0;
    }

    let a: Vec<_> = (0..4).map(|_| noisy(&mut rng, |r| r, 0.2)).collect();
    let c: Vec<_> = (0..4).map(|_| noisy(&mut rng, |r| r, 0.2)).collect();
    let w = pooled_within_covariance(&a, &c).map_err(|e| e.to_string())?;
    let mut eig_ok = true;
    for lambda in default_lambda_grid() {
        let m = &w + nalgebra_identity(lambda);
        let min = m.symmetric_eigen().eigenvalues.min();
        eig_ok &= min >= lambda * (1.0 - 1e-6) - 1e-12;
    }

    let mut solve_err = 0.0f64;
    for _ in 0..5 {
        let short = |rng: &mut ChaCha8Rng, n: usize, shift: f64| -> Vec<Vec<f64>> {
            (0..n).map(|_| (0..10).map(|j| shift * j as f64 + rng.sample::<f64, _>(StandardNormal)).collect()).collect()
        };
        let (a, c) = (short(&mut rng, 6, 0.2), short(&mut rng, 7, 0.0));
        let w = pooled_within_covariance(&a, &c).map_err(|e| e.to_string())?;
        let delta: Vec<f64> = (0..10)
            .map(|j| a.iter().map(|v| v[j]).sum::<f64>() / 6.0 - c.iter().map(|v| v[j]).sum::<f64>() / 7.0)
            .collect();
        for lambda in [1e-3, 0.1, 10.0] {
            let m = (0..10).map(|j| (0..10).map(|k| w[(j, k)] + if j == k { lambda } else { 0.0 }).collect()).collect();
            let want = naive_solve(m, delta.clone());
            let got = fit_discriminant(&a, &c, lambda).map_err(|e| e.to_string())?;
            let scale = want.iter().fold(1.0f64, |s, v| s.max(v.abs()));
            for (g, x) in got.iter().zip(&want) {
                solve_err = solve_err.max((g - x).abs() / scale);
            }
        }
    }
    check(
        separable == 0 && (0.35..=0.65).contains(&null_rate) && eig_ok && solve_err <= 1e-10,
        format!(
            "separable CV errors {separable}, null CV rate {:.1}%, eigenvalues >= lambda {eig_ok}, solve error {solve_err:.1e}",
            100.0 * null_rate
        ),
    )
}

fn nalgebra_identity(lambda: f64) -> nalgebra::DMatrix<f64> {
    nalgebra::DMatrix::identity(GRID_LEN, GRID_LEN) * lambda
}

fn piecewise(corpus_r2: Option<f64>) -> Outcome {
    let ramp = |r: f64| {
        if r <= 0.85 {
            0.5
        } else if r <= 1.15 {
            0.5 * (1.15 - r) / 0.3
        } else {
            0.0
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(108);
    let mut knot_err = 0.0f64;
    for _ in 0..10 {
        let fit = fit_piecewise(&noisy(&mut rng, ramp, 0.005), KnotPenalty::Auto, None).map_err(|e| e.to_string())?;
        knot_err = knot_err.max((fit.kappa2 - 0.85).abs()).max((fit.kappa3 - 1.15).abs());
    }

    let w = grid_weights();
    let mut exhaustive = true;
    for _ in 0..20 {
        let a: f64 = rng.random_range(-1.0..1.0);
        let g = noisy(&mut rng, |r| a * r * r + (4.0 * r).sin(), 0.1);
        let fit = fit_piecewise(&g, KnotPenalty::Auto, None).map_err(|e| e.to_string())?;
        let lam = fit.lambda_knot;
        let crit = |k2: f64, k3: f64, wsse: f64| wsse + lam * ((k2 - 1.0).powi(2) + (1.0 - k3).powi(2));
        let chosen = crit(fit.kappa2, fit.kappa3, fit.wsse);
        let mut best = f64::INFINITY;
        for j in 2..=99 {
            for m in 101..=198 {
                let (k2, k3) = (j as f64 / 100.0, m as f64 / 100.0);
                best = best.min(crit(k2, k3, fit_segments(&g, k2, k3, &w).map_err(|e| e.to_string())?.wsse));
            }
        }
        exhaustive &= chosen <= best + 1e-9 * (1.0 + best);
    }

    let mut feasible = true;
    for _ in 0..200 {
        let amp = rng.random_range(0.0..3.0);
        let fit = fit_piecewise(&noisy(&mut rng, |r| amp * (3.0 * r).cos(), 0.2), KnotPenalty::Auto, None)
            .map_err(|e| e.to_string())?;
        feasible &= fit.kappa2 < 1.0 && 1.0 < fit.kappa3;
    }

    let r2 = corpus_r2.ok_or("synthetic corpus run failed")?;
    check(
        knot_err <= 0.02 + 1e-9 && exhaustive && feasible && r2 >= 0.98,
        format!("knot error {knot_err:.3}, grid argmin exhaustive {exhaustive}, kappa2 < 1 < kappa3 {feasible}, corpus median R^2 {r2:.4}"),
    )
}

const ZONE: (f64, f64) = (0.7, 1.3);

/// Two groups of four images, six nuclei each. Marker falls from 150 to 30
/// through a smooth step at r = 1 of width 0.05 in A and 0.1 in C, so the
/// groups differ within three widths of C's step.
fn corpus(dir: &Path) -> Result<Vec<(PathBuf, PathBuf, &'static str)>, String> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(109);
    for (group, width) in [("A", 0.05), ("C", 0.1)] {
        for img in 0..4u64 {
            let seed = rng.random();
            let nuclei = random_layout((240, 240), 6, (16.0, 24.0), 5.0, seed).map_err(|e| e.to_string())?;
            let illumination = [rng.random_range(0.8..1.2), rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), 0.0, 0.0, 0.0];
            let spec = SynthSpec {
                shape: (240, 240),
                nuclei,
                channels: vec![ChannelSpec {
                    role: ChannelRole::Marker,
                    template: Template::SmoothStep { inside: 150.0, outside: 30.0, center: 1.0, width },
                    illumination,
                }],
                noise_sigma: 8.0,
                boundary_jitter: 1.0,
                vertices: 40,
                margin: 4.0,
                seed,
            };
            let name = format!("{group}{img}");
            let (files, _) = write_dataset(&spec, dir, &name).map_err(|e| e.to_string())?;
            out.push((files.image, files.boundaries, group));
        }
    }
    Ok(out)
}

fn corpus_config(dir: &Path, inputs: &[(PathBuf, PathBuf, &str)], output: &Path) -> Result<RunConfig, String> {
    let mut text = format!("channels = {{ \"0\" = \"marker\" }}\nseed = 11\noutput = {:?}\n", output.display().to_string());
    for (image, boundaries, group) in inputs {
        text += &format!(
            "[[inputs]]\nimage = {:?}\nboundaries = {:?}\ngroup = {group:?}\n",
            image.display().to_string(),
            boundaries.display().to_string()
        );
    }
    let mut cfg = RunConfig::from_toml(&text).map_err(|e| e.to_string())?;
    cfg.resolve_paths(dir);
    Ok(cfg)
}

fn end_to_end(run: &Result<(RunOutcome, f64), String>) -> Outcome {
    let (out, secs) = run.as_ref().map_err(|e| e.clone())?;
    let regions = &out.test.significant_regions;
    let overlap = !regions.is_empty() && regions.iter().all(|g| g.r_end >= ZONE.0 && g.r_start <= ZONE.1);
    let d = &out.discriminant;
    let cv = d.cv_errors as f64 / d.labels.len() as f64;
    let b2 = out.comparison.parameters.iter().find(|p| p.name == "b2").and_then(|p| p.p_value);
    let spans: Vec<String> = regions.iter().map(|g| format!("[{:.2}, {:.2}]", g.r_start, g.r_end)).collect();
    check(
        overlap && cv <= 0.05 && b2.is_some_and(|p| p < 0.01) && *secs < 600.0,
        format!(
            "{} curves, regions {} vs zone [{:.2}, {:.2}], CV error {}/{}, b2 p = {}, {secs:.1} s",
            out.records.len(),
            spans.join(" "),
            ZONE.0,
            ZONE.1,
            d.cv_errors,
            d.labels.len(),
            b2.map_or("undefined".into(), |p| format!("{p:.1e}"))
        ),
    )
}

fn mean_curve(curves: &[Vec<f64>]) -> Vec<f64> {
    (0..GRID_LEN).map(|i| curves.iter().map(|c| c[i]).sum::<f64>() / curves.len() as f64).collect()
}

/// Mean dilation of the jittered-boundary mean curve against the mean
/// curve from error-free vertices of the same nuclei.
fn bias_direction() -> Outcome {
    let e = 2.0;
    let mut deltas = Vec::new();
    for rep in 0..50u64 {
        let nuclei = random_layout((220, 220), 5, (14.0, 20.0), 8.0 + e, rep).map_err(|e| e.to_string())?;
        let spec = SynthSpec {
            shape: (220, 220),
            nuclei,
            channels: vec![ChannelSpec {
                role: ChannelRole::Marker,
                template: Template::BoundaryPeak { base: 20.0, height: 150.0, center: 1.0, width: 0.12 },
                illumination: flat_illumination(),
            }],
            noise_sigma: 3.0,
            boundary_jitter: e,
            vertices: 40,
            margin: 8.0,
            seed: rep,
        };
        let out = generate(&spec).map_err(|e| e.to_string())?;
        let mean_of = |vertices: &[Vec<[f64; 2]>]| -> Result<Vec<f64>, String> {
            let bs = vertices
                .iter()
                .map(|v| smooth_boundary(v, Smoothing::Gcv, 1000))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| e.to_string())?;
            let map = build_bd_map(&bs, spec.shape).map_err(|e| e.to_string())?;
            let curves = (0..bs.len())
                .map(|k| {
                    let cloud = extract_profile(&out.image, &map, k, ChannelRole::Marker)?;
                    Ok(fit_expression_curve(&cloud, Smoothing::Gcv)?.values)
                })
                .collect::<Result<Vec<_>, bdplot_core::Error>>()
                .map_err(|e| e.to_string())?;
            Ok(mean_curve(&curves))
        };
        let observed = mean_of(&out.jittered_vertices)?;
        let truth = mean_of(&out.true_vertices)?;
        deltas.push(register_between(&observed, &truth, (0.7, 1.3), 1e-5).map_err(|e| e.to_string())?.delta);
    }
    let mean = deltas.iter().sum::<f64>() / deltas.len() as f64;
    let above = deltas.iter().filter(|d| **d > 1.0).count();
    check(mean > 1.0, format!("e = {e}: mean dilation {mean:.4} over 50 replicates, {above}/50 above 1"))
}

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).into_iter().flatten().flatten() {
            let p = entry.path();
            if p.is_dir() {
                stack.push(p);
            } else if matches!(p.extension().and_then(|e| e.to_str()), Some("csv" | "json")) {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn determinism(cfg: &Result<RunConfig, String>, first: &BTreeMap<PathBuf, Vec<u8>>) -> Outcome {
    let cfg = cfg.as_ref().map_err(|e| e.clone())?;
    if first.is_empty() {
        return Err("first run wrote no artifacts".into());
    }
    run_pipeline(cfg, RunOptions::default()).map_err(|(s, e)| format!("{s:?}: {e}"))?;
    let second = snapshot(&cfg.output);
    let differing: Vec<String> = first
        .iter()
        .filter(|(p, bytes)| second.get(*p) != Some(*bytes))
        .map(|(p, _)| p.display().to_string())
        .collect();
    check(
        differing.is_empty() && first.len() == second.len(),
        format!("{} CSV/JSON files compared, differing: [{}]", first.len(), differing.join(", ")),
    )
}

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    std::panic::catch_unwind(std::panic::AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    })
}

fn main() {
    let dir = tempfile::tempdir().expect("temp dir");
    let data = dir.path().join("data");
    let output = dir.path().join("out");

    let cfg = corpus(&data).and_then(|inputs| corpus_config(dir.path(), &inputs, &output));
    let run = cfg.clone().and_then(|cfg| {
        let start = Instant::now();
        let out = run_pipeline(&cfg, RunOptions::default()).map_err(|(s, e)| format!("{s:?}: {e}"))?;
        Ok((out, start.elapsed().as_secs_f64()))
    });
    let first = snapshot(&output);
    let corpus_r2 = run.as_ref().ok().map(|(o, _)| median(&o.piecewise.iter().map(|(_, _, f)| f.r_squared).collect::<Vec<_>>()));

    let checks: Vec<(&str, Box<dyn FnOnce() -> Outcome>)> = vec![
        ("EDT oracle equivalence", Box::new(edt_oracle)),
        ("BD closed forms on a disk", Box::new(disk_closed_forms)),
        ("spline sanity", Box::new(spline_sanity)),
        ("scaling", Box::new(scaling)),
        ("registration recovery", Box::new(registration)),
        ("permutation calibration", Box::new(calibration)),
        ("penalized discriminant", Box::new(discriminant)),
        ("piecewise-linear model", Box::new(move || piecewise(corpus_r2))),
        ("end-to-end two-group experiment", Box::new(|| end_to_end(&run))),
        ("bias direction under boundary jitter", Box::new(bias_direction)),
        ("determinism", Box::new(|| determinism(&cfg, &first))),
    ];
    // Criterion numbers on the command line select a subset.
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let results: Vec<(usize, &str, Outcome)> = checks
        .into_iter()
        .enumerate()
        .filter(|(k, _)| only.is_empty() || only.contains(&(k + 1)))
        .map(|(k, (name, f))| (k + 1, name, guarded(f)))
        .collect();
    let mut failed = 0;
    for (k, name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("PASS  {k:>2}. {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {k:>2}. {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
