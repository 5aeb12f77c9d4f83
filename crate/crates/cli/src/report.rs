//! Plots of a finished run.

use std::fs;
use std::path::Path;

use bdplot_core::fda::Design;
use bdplot_core::grid::grid;
use bdplot_core::plm::PARAMETER_NAMES;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::pipeline::RunOutcome;
use crate::plot::{render, Panel, Ribbon, Series, COLORS};

fn mean_and_band(rows: &[&[f64]]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = rows.len() as f64;
    let len = rows.first().map_or(0, |r| r.len());
    let mut mean = Vec::with_capacity(len);
    let (mut lo, mut hi) = (Vec::with_capacity(len), Vec::with_capacity(len));
    for i in 0..len {
        let m = rows.iter().map(|r| r[i]).sum::<f64>() / n;
        let se = if n > 1.0 {
            (rows.iter().map(|r| (r[i] - m).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
        } else {
            0.0
        };
        mean.push(m);
        lo.push(m - 1.96 * se);
        hi.push(m + 1.96 * se);
    }
    (mean, lo, hi)
}

fn groups_of<'a>(cfg: &RunConfig, out: &'a RunOutcome) -> [Vec<&'a [f64]>; 2] {
    match cfg.design {
        Design::Paired => [
            out.registered.iter().map(|(m, _)| &m.values[..]).collect(),
            out.registered.iter().filter_map(|(_, r)| r.as_ref().map(|r| &r.values[..])).collect(),
        ],
        Design::Unpaired => [0, 1].map(|g| {
            out.records
                .iter()
                .zip(&out.registered)
                .filter(|(r, _)| r.group == g)
                .map(|(_, (m, _))| &m.values[..])
                .collect()
        }),
    }
}

/// Writes mean curves, the T curve, the discriminant, the score strip and
/// the piecewise parameter panels as SVG.
pub fn write_plots(dir: &Path, cfg: &RunConfig, out: &RunOutcome, names: &[String]) -> Result<(), CliError> {
    let r = grid();
    let sets = groups_of(cfg, out);

    let mut means = Panel {
        title: "Mean expression curves (pointwise 95%)".into(),
        xlabel: "boundary distance r".into(),
        ylabel: "scaled expression".into(),
        vlines: vec![(1.0, "#888")],
        ..Default::default()
    };
    for (g, rows) in sets.iter().enumerate() {
        let (m, lo, hi) = mean_and_band(rows);
        means.ribbons.push(Ribbon { x: r.clone(), lo, hi, color: COLORS[g] });
        means.series.push(Series {
            label: format!("{} (n = {})", names.get(g).map_or("", |s| s.as_str()), rows.len()),
            x: r.clone(),
            y: m,
            color: COLORS[g],
            dashed: false,
        });
    }
    fs::write(dir.join("mean_curves.svg"), render(&[means], 1))?;

    let t = &out.test;
    let tcurve = Panel {
        title: format!("T curve, simultaneous {:.0}% band", 100.0 * t.level),
        xlabel: "boundary distance r".into(),
        ylabel: "T".into(),
        series: vec![Series { label: String::new(), x: r.clone(), y: t.t.clone(), color: COLORS[0], dashed: false }],
        hlines: vec![(t.critical, "#d62728"), (-t.critical, "#d62728"), (0.0, "#888")],
        spans: t.significant_regions.iter().map(|g| (g.r_start, g.r_end)).collect(),
        ..Default::default()
    };
    fs::write(dir.join("tcurve.svg"), render(&[tcurve], 1))?;

    let d = &out.discriminant;
    let coef = Panel {
        title: format!("Discriminant (lambda = {:.3e})", d.lambda_ridge),
        xlabel: "boundary distance r".into(),
        ylabel: "coefficient".into(),
        series: vec![Series { label: String::new(), x: r.clone(), y: d.d_p.clone(), color: COLORS[2], dashed: false }],
        hlines: vec![(0.0, "#888")],
        ..Default::default()
    };
    fs::write(dir.join("discriminant.svg"), render(&[coef], 1))?;

    let points = d
        .scores
        .iter()
        .zip(&d.labels)
        .enumerate()
        .map(|(i, (&s, &is_a))| {
            let lane = if is_a { 1.0 } else { 0.0 };
            let jitter = ((i * 37) % 11) as f64 / 11.0 * 0.3 - 0.15;
            (s, lane + jitter, if is_a { COLORS[0] } else { COLORS[1] })
        })
        .collect();
    let strip = Panel {
        title: format!("Scores ({} = 1, {} = 0), CV errors {}", names.first().map_or("", |s| s.as_str()), names.get(1).map_or("", |s| s.as_str()), d.cv_errors),
        xlabel: "score".into(),
        ylabel: "group".into(),
        points,
        vlines: vec![(d.tau, "#000")],
        ..Default::default()
    };
    fs::write(dir.join("scores.svg"), render(&[strip], 1))?;

    let fits = |g: usize| -> Vec<[f64; 8]> {
        match cfg.design {
            Design::Paired => out
                .piecewise
                .iter()
                .enumerate()
                .filter(|(i, _)| i % 2 == g)
                .map(|(_, (_, _, f))| f.parameters())
                .collect(),
            Design::Unpaired => out
                .records
                .iter()
                .zip(&out.piecewise)
                .filter(|(rec, _)| rec.group == g)
                .map(|(_, (_, _, f))| f.parameters())
                .collect(),
        }
    };
    let (fa, fc) = (fits(0), fits(1));
    let panels: Vec<Panel> = PARAMETER_NAMES
        .iter()
        .enumerate()
        .map(|(p, name)| {
            let p_value = out.comparison.parameters.get(p).and_then(|t| t.p_value);
            let mut points = Vec::new();
            for (g, set) in [&fa, &fc].into_iter().enumerate() {
                for (i, f) in set.iter().enumerate() {
                    if f[p].is_finite() {
                        let jitter = ((i * 37) % 11) as f64 / 11.0 * 0.4 - 0.2;
                        points.push((g as f64 + jitter, f[p], COLORS[g]));
                    }
                }
            }
            Panel {
                title: match p_value {
                    Some(v) => format!("{name} (p = {v:.3})"),
                    None => format!("{name} (p undefined)"),
                },
                xlabel: format!("{} | {}", names.first().map_or("", |s| s.as_str()), names.get(1).map_or("", |s| s.as_str())),
                ylabel: name.to_string(),
                points,
                ..Default::default()
            }
        })
        .collect();
    fs::write(dir.join("piecewise.svg"), render(&panels, 4))?;
    Ok(())
}
