//! The batch pipeline: geometry → curves → registration → inference.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use bdplot_core::alignment::{dilate_curve, register_between, scale_correlation, scale_curve, BetweenResult};
use bdplot_core::fda::{paired_tcurve_and_band, two_sample_test, Design, TestCurve};
use bdplot_core::geometry::{build_bd_map, keep_interior_indices, smooth_boundary, BdMap, BoundaryCurve};
use bdplot_core::io::{read_boundaries, write_curves_csv, write_json, write_piecewise_csv, NucleusBoundary};
use bdplot_core::pda::{loocv_select, DiscriminantModel};
use bdplot_core::plm::{compare_groups, fit_piecewise, GroupComparison, PiecewiseFit};
use bdplot_core::profiles::{extract_profile, fit_expression_curve, ExpressionCurve};
use bdplot_core::{register_paired, register_within, ChannelRole, LabeledImage, Warning, WarningKind};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::imageio::read_image;
use crate::report;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Validate,
    Geometry,
    Curves,
    Register,
    Test,
    Discriminate,
    Piecewise,
    Write,
}

/// Notes on how ambiguous steps were read, echoed in every manifest.
pub const INTERPRETATION_NOTES: [&str; 4] = [
    "precision weight taken as r^0.75 on (0, 1) and 1 on [1, 2], following the area-density argument",
    "BD uses pixel-center distances shifted by half a pixel: deepest pixel 0, boundary 1",
    "curves are scaled to unit Riemann area over (0, 2] before registration",
    "between-group dilation acts on group A: mu_A(delta_A r) is matched to mu_C(r)",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub software: String,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failed_stage: Option<Stage>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub completed_stages: Vec<StageRecord>,
    pub n_images: usize,
    pub n_curves: usize,
    pub interpretation_notes: Vec<String>,
    pub warnings: Vec<Warning>,
    pub config: RunConfig,
}

/// Warnings in order of first appearance, each once.
#[derive(Debug, Default)]
pub struct WarningLog {
    seen: HashSet<Warning>,
    list: Vec<Warning>,
}

impl WarningLog {
    pub fn push(&mut self, w: Warning) {
        if self.seen.insert(w.clone()) {
            log::warn!("{w}");
            self.list.push(w);
        }
    }

    pub fn extend<'a>(&mut self, ws: impl IntoIterator<Item = &'a Warning>) {
        for w in ws {
            self.push(w.clone());
        }
    }

    pub fn into_vec(self) -> Vec<Warning> {
        self.list
    }
}

/// One analyzed nucleus.
#[derive(Debug, Clone)]
pub struct CurveRecord {
    pub id: String,
    /// 0 for group A (or the paired design), 1 for group C.
    pub group: usize,
    pub image: usize,
    pub nucleus: usize,
    pub marker: ExpressionCurve,
    pub reference: Option<ExpressionCurve>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveDilation {
    pub id: String,
    pub dilation: f64,
    pub bracket_binding: bool,
    pub extrapolated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRegistration {
    pub image: String,
    pub group: String,
    pub iterations: usize,
    pub sse_trace: Vec<f64>,
    pub reduction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationReport {
    pub design: Design,
    pub enabled: bool,
    pub curves: Vec<CurveDilation>,
    pub images: Vec<ImageRegistration>,
    /// Dilation applied to group A after within-image registration.
    pub group_dilation: Option<f64>,
    pub between: Option<BetweenResult>,
    /// Correlation of marker and reference scale estimates.
    pub scale_correlation: Option<f64>,
}

/// Everything a run produces, kept in memory for callers.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub groups: Vec<String>,
    pub records: Vec<CurveRecord>,
    /// Curves after registration, parallel to `records`.
    pub registered: Vec<(ExpressionCurve, Option<ExpressionCurve>)>,
    pub registration: RegistrationReport,
    pub test: TestCurve,
    pub discriminant: DiscriminantModel,
    pub piecewise: Vec<(String, ChannelRole, PiecewiseFit)>,
    pub comparison: GroupComparison,
    pub manifest: Manifest,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Record wall-clock time per stage in the manifest.
    pub timings: bool,
}

struct Input {
    stem: String,
    image: LabeledImage,
    boundaries: Vec<NucleusBoundary>,
    /// Group index of each nucleus in boundary order.
    groups: Vec<usize>,
}

struct Geometry {
    curves: Vec<BoundaryCurve>,
    /// Original boundary index of each kept curve.
    kept: Vec<usize>,
    map: BdMap,
}

struct Runner<'a> {
    cfg: &'a RunConfig,
    opts: RunOptions,
    warnings: WarningLog,
    stages: Vec<StageRecord>,
    clock: Instant,
    n_curves: usize,
}

impl Runner<'_> {
    fn done(&mut self, stage: Stage) {
        let seconds = self.opts.timings.then(|| self.clock.elapsed().as_secs_f64());
        log::info!("stage {stage:?} done");
        self.stages.push(StageRecord { stage, seconds });
        self.clock = Instant::now();
    }
}

fn stem(path: &Path, index: usize) -> String {
    let s = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    format!("{index}-{s}")
}

fn load(cfg: &RunConfig, groups: &[String], log: &mut WarningLog) -> Result<Vec<Input>, CliError> {
    cfg.validate()?;
    let mut inputs = Vec::with_capacity(cfg.inputs.len());
    for (i, spec) in cfg.inputs.iter().enumerate() {
        let boundaries = read_boundaries(&spec.boundaries)?;
        let (image, ws) = read_image(&spec.image, &cfg.channels)?;
        log.extend(&ws);
        let n = boundaries.len();
        let labels: Vec<usize> = match cfg.design {
            Design::Paired => vec![0; n],
            Design::Unpaired => {
                let names: Vec<&String> = match &spec.nucleus_groups {
                    Some(g) if g.len() != n => {
                        return Err(CliError::Config(format!(
                            "input {i}: nucleus_groups has {} labels for {n} nuclei",
                            g.len()
                        )))
                    }
                    Some(g) => g.iter().collect(),
                    None => vec![spec.group.as_ref().expect("validated"); n],
                };
                names.iter().map(|l| groups.iter().position(|g| g == *l).expect("validated")).collect()
            }
        };
        inputs.push(Input {
            stem: stem(&spec.image, i),
            image,
            boundaries,
            groups: labels,
        });
    }
    Ok(inputs)
}

fn geometry(cfg: &RunConfig, input: &Input, log: &mut WarningLog) -> Result<Geometry, CliError> {
    let shape = input.image.shape();
    let curves = input
        .boundaries
        .iter()
        .enumerate()
        .map(|(k, b)| {
            smooth_boundary(&b.vertices, cfg.geometry.smoothing, cfg.geometry.samples)
                .map_err(|e| CliError::from(e).context(format!("{} nucleus {k}", input.stem)))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let kept = keep_interior_indices(&curves, shape, cfg.geometry.border_margin);
    if kept.len() < curves.len() {
        log.push(Warning::new(
            WarningKind::ExcludedNuclei,
            format!("{}: {} nuclei touch the image border", input.stem, curves.len() - kept.len()),
        ));
    }
    let curves: Vec<BoundaryCurve> = kept.iter().map(|&k| curves[k].clone()).collect();
    let map = if curves.is_empty() {
        BdMap {
            bd: ndarray::Array2::zeros(shape),
            orbit: ndarray::Array2::from_elem(shape, bdplot_core::geometry::NO_ORBIT),
            d_max: Vec::new(),
        }
    } else {
        build_bd_map(&curves, shape).map_err(|e| CliError::from(e).context(&input.stem))?
    };
    Ok(Geometry { curves, kept, map })
}

fn curve_for(
    cfg: &RunConfig,
    input: &Input,
    geo: &Geometry,
    k: usize,
    role: ChannelRole,
) -> Result<ExpressionCurve, bdplot_core::Error> {
    let cloud = extract_profile(&input.image, &geo.map, k, role)?;
    let mut c = fit_expression_curve(&cloud, cfg.profiles.smoothing)?;
    c.nucleus_id = geo.kept[k];
    scale_curve(&c)
}

fn curves(cfg: &RunConfig, inputs: &[Input], geos: &[Geometry], log: &mut WarningLog) -> Result<Vec<CurveRecord>, CliError> {
    let mut out = Vec::new();
    for (i, (input, geo)) in inputs.iter().zip(geos).enumerate() {
        for k in 0..geo.curves.len() {
            let nucleus = geo.kept[k];
            let fitted = curve_for(cfg, input, geo, k, cfg.marker).and_then(|m| {
                let r = cfg.reference.map(|role| curve_for(cfg, input, geo, k, role)).transpose()?;
                Ok((m, r))
            });
            match fitted {
                Ok((marker, reference)) => {
                    log.extend(&marker.warnings);
                    if let Some(r) = &reference {
                        log.extend(&r.warnings);
                    }
                    out.push(CurveRecord {
                        id: format!("{}/{nucleus}", input.stem),
                        group: input.groups[nucleus],
                        image: i,
                        nucleus,
                        marker,
                        reference,
                    });
                }
                Err(e) if e.is_numerical() => return Err(CliError::from(e).context(&input.stem)),
                Err(e) => log.push(Warning::new(
                    WarningKind::ExcludedNuclei,
                    format!("{} nucleus {nucleus} dropped: {e}", input.stem),
                )),
            }
        }
    }
    if out.is_empty() {
        return Err(CliError::Data("no analyzable nuclei".into()));
    }
    Ok(out)
}

type Registered = Vec<(ExpressionCurve, Option<ExpressionCurve>)>;

fn register(
    cfg: &RunConfig,
    inputs: &[Input],
    groups: &[String],
    records: &[CurveRecord],
    log: &mut WarningLog,
) -> Result<(Registered, RegistrationReport), CliError> {
    let scale_corr = match cfg.reference {
        Some(_) if records.len() >= 3 => {
            let a: Vec<f64> = records.iter().map(|r| r.marker.scale).collect();
            let b: Vec<f64> = records.iter().map(|r| r.reference.as_ref().expect("reference fitted").scale).collect();
            scale_correlation(&a, &b).ok()
        }
        _ => None,
    };
    let mut out: Registered = records.iter().map(|r| (r.marker.clone(), r.reference.clone())).collect();
    let mut report = RegistrationReport {
        design: cfg.design,
        enabled: cfg.registration.enabled,
        curves: records
            .iter()
            .map(|r| CurveDilation {
                id: r.id.clone(),
                dilation: 1.0,
                bracket_binding: false,
                extrapolated: false,
            })
            .collect(),
        images: Vec::new(),
        group_dilation: None,
        between: None,
        scale_correlation: scale_corr,
    };
    if !cfg.registration.enabled {
        return Ok((out, report));
    }
    let opts = cfg.registration.options();
    let paired = cfg.design == Design::Paired;
    for (i, input) in inputs.iter().enumerate() {
        for g in 0..groups.len().max(1) {
            let members: Vec<usize> = (0..records.len()).filter(|&k| records[k].image == i && records[k].group == g).collect();
            if members.len() < 2 {
                continue;
            }
            let res = if paired {
                let pairs: Vec<(&[f64], &[f64])> = members
                    .iter()
                    .map(|&k| (&out[k].0.values[..], &out[k].1.as_ref().expect("paired reference").values[..]))
                    .collect();
                register_paired(&pairs, &opts)?
            } else {
                let cs: Vec<&[f64]> = members.iter().map(|&k| &out[k].0.values[..]).collect();
                register_within(&cs, &opts)?
            };
            log.extend(&res.warnings);
            for (j, &k) in members.iter().enumerate() {
                let d = res.dilations[j];
                out[k].0 = dilate_curve(&out[k].0, d)?;
                if let Some(r) = &out[k].1 {
                    out[k].1 = Some(dilate_curve(r, d)?);
                }
                let c = &mut report.curves[k];
                c.dilation = d;
                c.bracket_binding = res.bracket_binding[j];
                c.extrapolated = res.extrapolated[j];
            }
            report.images.push(ImageRegistration {
                image: input.stem.clone(),
                group: groups.get(g).cloned().unwrap_or_else(|| "paired".into()),
                iterations: res.iterations,
                sse_trace: res.sse_trace.clone(),
                reduction: res.reduction(),
            });
        }
    }
    if !paired {
        let mean = |g: usize| -> Vec<f64> {
            let rows: Vec<&ExpressionCurve> = (0..records.len()).filter(|&k| records[k].group == g).map(|k| &out[k].0).collect();
            (0..bdplot_core::GRID_LEN)
                .map(|i| rows.iter().map(|c| c.values[i]).sum::<f64>() / rows.len() as f64)
                .collect()
        };
        let between = register_between(&mean(0), &mean(1), opts.bracket, opts.line_tol)?;
        if between.bracket_binding {
            log.push(Warning::new(
                WarningKind::BracketBinding,
                format!("between-group dilation {:.4} on the bracket edge", between.delta),
            ));
        }
        if between.delta != 1.0 {
            for k in 0..records.len() {
                if records[k].group == 0 {
                    out[k].0 = dilate_curve(&out[k].0, between.delta)?;
                    report.curves[k].dilation *= between.delta;
                }
            }
        }
        report.group_dilation = Some(between.delta);
        report.between = Some(between);
    }
    Ok((out, report))
}

fn split<'a>(cfg: &RunConfig, records: &[CurveRecord], reg: &'a Registered) -> (Vec<&'a [f64]>, Vec<&'a [f64]>) {
    match cfg.design {
        Design::Paired => (
            reg.iter().map(|(m, _)| &m.values[..]).collect(),
            reg.iter().map(|(_, r)| &r.as_ref().expect("paired reference").values[..]).collect(),
        ),
        Design::Unpaired => {
            let pick = |g: usize| {
                records
                    .iter()
                    .zip(reg)
                    .filter(|(r, _)| r.group == g)
                    .map(|(_, (m, _))| &m.values[..])
                    .collect()
            };
            (pick(0), pick(1))
        }
    }
}

/// Runs every stage and writes the artifact tree. The manifest is written
/// even when a stage fails.
pub fn run_pipeline(cfg: &RunConfig, opts: RunOptions) -> Result<RunOutcome, (Stage, CliError)> {
    let groups = match cfg.design {
        Design::Unpaired => cfg.group_labels(),
        Design::Paired => Vec::new(),
    };
    let mut runner = Runner {
        cfg,
        opts,
        warnings: WarningLog::default(),
        stages: Vec::new(),
        clock: Instant::now(),
        n_curves: 0,
    };
    let result = stages(&mut runner, &groups);
    let Runner { warnings, stages: done, n_curves, .. } = runner;
    let n_images = cfg.inputs.len();
    let mut manifest = Manifest {
        software: format!("bdplot {}", env!("CARGO_PKG_VERSION")),
        status: "ok".into(),
        failed_stage: None,
        error: None,
        completed_stages: done,
        n_images,
        n_curves,
        interpretation_notes: INTERPRETATION_NOTES.iter().map(|s| s.to_string()).collect(),
        warnings: warnings.into_vec(),
        config: cfg.clone(),
    };
    let manifest_path = cfg.output.join("manifest.json");
    match result {
        Err((stage, e)) => {
            manifest.status = "failed".into();
            manifest.failed_stage = Some(stage);
            manifest.error = Some(e.to_string());
            let _ = fs::create_dir_all(&cfg.output).and_then(|_| {
                write_json(&manifest_path, &manifest).map_err(|e| std::io::Error::other(e.to_string()))
            });
            Err((stage, e))
        }
        Ok((records, registered, registration, test, discriminant, piecewise, comparison)) => {
            let outcome = RunOutcome {
                groups,
                records,
                registered,
                registration,
                test,
                discriminant,
                piecewise,
                comparison,
                manifest,
            };
            if let Err(e) = write_artifacts(cfg, &outcome) {
                let mut m = outcome.manifest.clone();
                m.status = "failed".into();
                m.failed_stage = Some(Stage::Write);
                m.error = Some(e.to_string());
                let _ = write_json(&manifest_path, &m);
                return Err((Stage::Write, e));
            }
            Ok(outcome)
        }
    }
}

type StageOutput = (
    Vec<CurveRecord>,
    Registered,
    RegistrationReport,
    TestCurve,
    DiscriminantModel,
    Vec<(String, ChannelRole, PiecewiseFit)>,
    GroupComparison,
);

fn stages(run: &mut Runner, groups: &[String]) -> Result<StageOutput, (Stage, CliError)> {
    let cfg = run.cfg;
    let inputs = load(cfg, groups, &mut run.warnings).map_err(|e| (Stage::Validate, e))?;
    run.done(Stage::Validate);

    let geos = inputs
        .iter()
        .map(|input| geometry(cfg, input, &mut run.warnings))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| (Stage::Geometry, e))?;
    if geos.iter().all(|g| g.curves.is_empty()) {
        return Err((Stage::Geometry, CliError::Data("no analyzable nuclei after border exclusion".into())));
    }
    run.done(Stage::Geometry);

    let records = curves(cfg, &inputs, &geos, &mut run.warnings).map_err(|e| (Stage::Curves, e))?;
    run.n_curves = records.len();
    if cfg.design == Design::Unpaired {
        for (g, name) in groups.iter().enumerate() {
            if !records.iter().any(|r| r.group == g) {
                return Err((Stage::Curves, CliError::Data(format!("group '{name}' has no analyzable nuclei"))));
            }
        }
    }
    run.done(Stage::Curves);

    let (registered, registration) =
        register(cfg, &inputs, groups, &records, &mut run.warnings).map_err(|e| (Stage::Register, e))?;
    run.done(Stage::Register);

    let (a, c) = split(cfg, &records, &registered);
    let test = match cfg.design {
        Design::Unpaired => two_sample_test(&a, &c, &cfg.permutation()),
        Design::Paired => {
            let pairs: Vec<(&[f64], &[f64])> = a.iter().copied().zip(c.iter().copied()).collect();
            paired_tcurve_and_band(&pairs, &cfg.permutation())
        }
    }
    .map_err(|e| (Stage::Test, e.into()))?;
    run.warnings.extend(&test.warnings);
    run.done(Stage::Test);

    let discriminant = loocv_select(&a, &c, &cfg.discriminant.options()).map_err(|e| (Stage::Discriminate, e.into()))?;
    run.done(Stage::Discriminate);

    let mut piecewise = Vec::new();
    let (mut fits_a, mut fits_c) = (Vec::new(), Vec::new());
    let penalty = cfg.piecewise.knot_penalty;
    let fit = |v: &[f64], id: &str| {
        fit_piecewise(v, penalty, None).map_err(|e| (Stage::Piecewise, CliError::from(e).context(id)))
    };
    for (rec, (m, r)) in records.iter().zip(&registered) {
        let f = fit(&m.values, &rec.id)?;
        run.warnings.extend(&f.warnings);
        piecewise.push((rec.id.clone(), cfg.marker, f.clone()));
        match (cfg.design, r) {
            (Design::Paired, Some(r)) => {
                let fr = fit(&r.values, &rec.id)?;
                run.warnings.extend(&fr.warnings);
                piecewise.push((rec.id.clone(), cfg.reference.expect("paired"), fr.clone()));
                fits_a.push(f);
                fits_c.push(fr);
            }
            _ if rec.group == 0 => fits_a.push(f),
            _ => fits_c.push(f),
        }
    }
    let comparison = compare_groups(&fits_a, &fits_c, cfg.design == Design::Paired)
        .map_err(|e| (Stage::Piecewise, e.into()))?;
    run.warnings.extend(&comparison.warnings);
    run.done(Stage::Piecewise);

    Ok((records, registered, registration, test, discriminant, piecewise, comparison))
}

#[derive(Serialize)]
struct Labeled<'a, T: Serialize> {
    groups: &'a [String],
    #[serde(skip_serializing_if = "Option::is_none")]
    curve_ids: Option<Vec<&'a str>>,
    #[serde(flatten)]
    body: &'a T,
}

fn group_names(cfg: &RunConfig, groups: &[String]) -> Vec<String> {
    match cfg.design {
        Design::Unpaired => groups.to_vec(),
        Design::Paired => vec![cfg.marker.to_string(), cfg.reference.map(|r| r.to_string()).unwrap_or_default()],
    }
}

/// Ids in the order the inference stages saw the curves.
fn ordered_ids(cfg: &RunConfig, out: &RunOutcome) -> Vec<String> {
    match cfg.design {
        Design::Unpaired => (0..2)
            .flat_map(|g| out.records.iter().filter(move |r| r.group == g).map(|r| r.id.clone()))
            .collect(),
        Design::Paired => {
            let tag = |role: Option<ChannelRole>| role.map(|r| r.to_string()).unwrap_or_default();
            let ys = out.records.iter().map(|r| format!("{}:{}", r.id, cfg.marker));
            let rs = out.records.iter().map(|r| format!("{}:{}", r.id, tag(cfg.reference)));
            ys.chain(rs).collect()
        }
    }
}

pub fn artifact_paths(dir: &Path) -> Vec<PathBuf> {
    [
        "curves.csv",
        "curves_registered.csv",
        "registration.json",
        "test.json",
        "discriminant.json",
        "piecewise.csv",
        "comparison.json",
        "manifest.json",
    ]
    .iter()
    .map(|f| dir.join(f))
    .collect()
}

fn write_artifacts(cfg: &RunConfig, out: &RunOutcome) -> Result<(), CliError> {
    let dir = &cfg.output;
    fs::create_dir_all(dir.join("plots"))?;
    let names = group_names(cfg, &out.groups);

    let mut raw = Vec::new();
    let mut reg = Vec::new();
    for (rec, (m, r)) in out.records.iter().zip(&out.registered) {
        raw.push((rec.id.clone(), cfg.marker, &rec.marker.values[..]));
        reg.push((rec.id.clone(), cfg.marker, &m.values[..]));
        if let (Some(rr), Some(r)) = (&rec.reference, r) {
            let role = cfg.reference.expect("reference");
            raw.push((rec.id.clone(), role, &rr.values[..]));
            reg.push((rec.id.clone(), role, &r.values[..]));
        }
    }
    write_curves_csv(fs::File::create(dir.join("curves.csv"))?, &raw)?;
    write_curves_csv(fs::File::create(dir.join("curves_registered.csv"))?, &reg)?;
    write_json(&dir.join("registration.json"), &out.registration)?;
    write_json(
        &dir.join("test.json"),
        &Labeled { groups: &names, curve_ids: None, body: &out.test },
    )?;
    let ids = ordered_ids(cfg, out);
    write_json(
        &dir.join("discriminant.json"),
        &Labeled {
            groups: &names,
            curve_ids: Some(ids.iter().map(|s| s.as_str()).collect()),
            body: &out.discriminant,
        },
    )?;
    let rows: Vec<(String, ChannelRole, &PiecewiseFit)> =
        out.piecewise.iter().map(|(id, role, f)| (id.clone(), *role, f)).collect();
    write_piecewise_csv(fs::File::create(dir.join("piecewise.csv"))?, &rows)?;
    write_json(
        &dir.join("comparison.json"),
        &Labeled { groups: &names, curve_ids: None, body: &out.comparison },
    )?;
    report::write_plots(&dir.join("plots"), cfg, out, &names)?;
    write_json(&dir.join("manifest.json"), &out.manifest)?;
    Ok(())
}
