//! Writes synthetic datasets in the formats the pipeline reads.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use bdplot_core::io::{write_boundaries, write_json, NucleusBoundary};
use bdplot_core::synth::{generate, SynthOutput, SynthSpec};
use bdplot_core::{ChannelRole, Point};
use serde::Serialize;

use crate::error::CliError;
use crate::imageio::write_png;

#[derive(Debug, Clone)]
pub struct SynthFiles {
    pub image: PathBuf,
    /// Jittered vertices, as a marker would draw them.
    pub boundaries: PathBuf,
    pub true_boundaries: PathBuf,
    pub truth: PathBuf,
}

#[derive(Serialize)]
struct TruthCurve<'a> {
    channel: ChannelRole,
    values: &'a [f64],
}

#[derive(Serialize)]
struct Truth<'a> {
    spec: &'a SynthSpec,
    curves: Vec<TruthCurve<'a>>,
    d_max: &'a [f64],
}

fn nuclei(vertices: &[Vec<Point>]) -> Vec<NucleusBoundary> {
    vertices
        .iter()
        .enumerate()
        .map(|(k, v)| NucleusBoundary {
            id: Some(k.to_string()),
            vertices: v.clone(),
        })
        .collect()
}

/// Channel keys of the written image, in spec order.
pub fn channel_map(spec: &SynthSpec) -> BTreeMap<String, ChannelRole> {
    spec.channels.iter().enumerate().map(|(i, c)| (i.to_string(), c.role)).collect()
}

/// Generates `spec` and writes `<name>.png`, `<name>.json`,
/// `<name>.true.json` and `<name>.truth.json` into `dir`.
pub fn write_dataset(spec: &SynthSpec, dir: &Path, name: &str) -> Result<(SynthFiles, SynthOutput), CliError> {
    if spec.channels.len() > 4 {
        return Err(CliError::Config("at most 4 synthetic channels fit in one image".into()));
    }
    let out = generate(spec).map_err(|e| match e {
        bdplot_core::Error::InfeasibleLayout(m) => CliError::Config(format!("infeasible layout: {m}")),
        other => other.into(),
    })?;
    std::fs::create_dir_all(dir)?;
    let files = SynthFiles {
        image: dir.join(format!("{name}.png")),
        boundaries: dir.join(format!("{name}.json")),
        true_boundaries: dir.join(format!("{name}.true.json")),
        truth: dir.join(format!("{name}.truth.json")),
    };
    let planes: Vec<_> = spec
        .channels
        .iter()
        .map(|c| out.image.channel(c.role).expect("generated channel"))
        .collect();
    write_png(&files.image, &planes)?;
    write_boundaries(&files.boundaries, &nuclei(&out.jittered_vertices))?;
    write_boundaries(&files.true_boundaries, &nuclei(&out.true_vertices))?;
    let truth = Truth {
        spec,
        curves: out
            .truth_curves
            .iter()
            .map(|(role, v)| TruthCurve { channel: *role, values: v })
            .collect(),
        d_max: &out.true_bd.d_max,
    };
    write_json(&files.truth, &truth)?;
    Ok((files, out))
}
