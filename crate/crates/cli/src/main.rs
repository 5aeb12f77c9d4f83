use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bdplot_core::alignment::{register_paired, register_within, RegistrationOptions};
use bdplot_core::fda::{paired_tcurve_and_band, two_sample_test, PermutationOptions};
use bdplot_core::geometry::{build_bd_map, keep_interior_indices, smooth_boundary, Smoothing};
use bdplot_core::io::{read_boundaries, write_bdmap, write_cloud_csv, write_curves_csv, write_json, write_piecewise_csv};
use bdplot_core::pda::{loocv_select, PdaOptions};
use bdplot_core::plm::{compare_groups, fit_piecewise, KnotPenalty};
use bdplot_core::profiles::{extract_profile, fit_expression_curve};
use bdplot_core::synth::SynthSpec;
use bdplot_core::{dilate_curve, scale_curve, ChannelRole, ExpressionCurve, GRID_LEN};
use bdplot_cli::config::RunConfig;
use bdplot_cli::imageio::read_image;
use bdplot_cli::synthfiles::{channel_map, write_dataset};
use bdplot_cli::{run_pipeline, CliError, RunOptions};
use clap::{Args, Parser, Subcommand};

/// Boundary-distance profiling of marker expression in nucleus images.
///
/// Environment: BDPLOT_LOG sets log verbosity (error, warn, info, debug;
/// default warn). BDPLOT_THREADS caps the worker threads.
#[derive(Parser)]
#[command(name = "bdplot", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Full pipeline from a TOML config.
    Run(RunArgs),
    /// Smoothed boundaries and the BD map of one image.
    Geometry(GeometryArgs),
    /// Expression curves of one image channel.
    Curves(CurvesArgs),
    /// Dilation registration of curves from a CSV.
    Register(RegisterArgs),
    /// Functional permutation test between two curve sets.
    Test(TestArgs),
    /// Penalized discriminant with leave-one-out selection.
    Discriminate(DiscriminateArgs),
    /// Piecewise-linear fits, optionally compared between two sets.
    Piecewise(PiecewiseArgs),
    /// Synthetic image, boundaries and truth from a spec file.
    Synth(SynthArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    design: Option<String>,
    #[arg(long)]
    n_perm: Option<usize>,
    #[arg(long)]
    level: Option<f64>,
    /// `auto` or a nonnegative penalty.
    #[arg(long)]
    knot_penalty: Option<String>,
    /// `gcv` or a nonnegative penalty.
    #[arg(long)]
    curve_smoothing: Option<String>,
    #[arg(long)]
    boundary_smoothing: Option<String>,
    #[arg(long)]
    border_margin: Option<f64>,
    /// `lo,hi`
    #[arg(long)]
    bracket: Option<String>,
    #[arg(long)]
    no_registration: bool,
    /// Record per-stage wall-clock times in the manifest.
    #[arg(long)]
    timings: bool,
}

#[derive(Args)]
struct ImageArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    boundaries: PathBuf,
    /// Channel roles, e.g. `red=membrane,green=marker,blue=body`.
    #[arg(long)]
    channels: String,
    #[arg(long, default_value_t = 1.0)]
    border_margin: f64,
    #[arg(long, default_value = "gcv")]
    boundary_smoothing: String,
}

#[derive(Args)]
struct GeometryArgs {
    #[command(flatten)]
    input: ImageArgs,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct CurvesArgs {
    #[command(flatten)]
    input: ImageArgs,
    #[arg(long, default_value = "marker")]
    channel: ChannelRole,
    #[arg(long, default_value = "gcv")]
    curve_smoothing: String,
    #[arg(long)]
    output: PathBuf,
    /// Also write the raw (r, a) clouds.
    #[arg(long)]
    clouds: Option<PathBuf>,
}

#[derive(Args)]
struct RegisterArgs {
    #[arg(long)]
    curves: PathBuf,
    #[arg(long, default_value = "marker")]
    channel: ChannelRole,
    /// Register cells jointly with this second channel.
    #[arg(long)]
    pair_with: Option<ChannelRole>,
    #[arg(long)]
    bracket: Option<String>,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct TestArgs {
    /// Curves of group A (unpaired) or of both channels (paired).
    #[arg(long)]
    group_a: PathBuf,
    #[arg(long)]
    group_c: Option<PathBuf>,
    /// Paired design: compare `--channel` against this channel per nucleus.
    #[arg(long)]
    paired_with: Option<ChannelRole>,
    #[arg(long, default_value = "marker")]
    channel: ChannelRole,
    #[arg(long, default_value_t = 5000)]
    n_perm: usize,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct DiscriminateArgs {
    #[arg(long)]
    group_a: PathBuf,
    #[arg(long)]
    group_c: PathBuf,
    #[arg(long, default_value = "marker")]
    channel: ChannelRole,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct PiecewiseArgs {
    #[arg(long)]
    curves: PathBuf,
    #[arg(long, default_value = "marker")]
    channel: ChannelRole,
    #[arg(long, default_value = "auto")]
    knot_penalty: String,
    #[arg(long)]
    output: PathBuf,
    /// Second curve set to compare parameters against.
    #[arg(long)]
    compare_with: Option<PathBuf>,
    #[arg(long)]
    paired: bool,
    #[arg(long)]
    comparison: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// Spec in TOML.
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value = "synth")]
    name: String,
}

fn config_err(m: impl Into<String>) -> CliError {
    CliError::Config(m.into())
}

fn parse_smoothing(s: &str) -> Result<Smoothing, CliError> {
    match s {
        "gcv" => Ok(Smoothing::Gcv),
        v => v
            .parse::<f64>()
            .ok()
            .filter(|l| *l >= 0.0 && l.is_finite())
            .map(Smoothing::Fixed)
            .ok_or_else(|| config_err(format!("smoothing must be 'gcv' or a nonnegative number, got '{v}'"))),
    }
}

fn parse_knots(s: &str) -> Result<KnotPenalty, CliError> {
    match s {
        "auto" => Ok(KnotPenalty::Auto),
        v => v
            .parse::<f64>()
            .ok()
            .filter(|l| *l >= 0.0 && l.is_finite())
            .map(KnotPenalty::Fixed)
            .ok_or_else(|| config_err(format!("knot penalty must be 'auto' or a nonnegative number, got '{v}'"))),
    }
}

fn parse_bracket(s: &str) -> Result<(f64, f64), CliError> {
    let parts: Vec<f64> = s.split(',').map(|p| p.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(|e| config_err(format!("bracket: {e}")))?;
    match parts[..] {
        [lo, hi] => Ok((lo, hi)),
        _ => Err(config_err("bracket must be 'lo,hi'")),
    }
}

fn parse_channels(s: &str) -> Result<BTreeMap<String, ChannelRole>, CliError> {
    s.split(',')
        .map(|pair| {
            let (k, v) = pair.split_once('=').ok_or_else(|| config_err(format!("channel mapping '{pair}' is not key=role")))?;
            let role = v.trim().parse::<ChannelRole>().map_err(|e| config_err(e.to_string()))?;
            if bdplot_cli::config::channel_index(k.trim()).is_none() {
                return Err(config_err(format!("unknown channel '{k}'")));
            }
            Ok((k.trim().to_string(), role))
        })
        .collect()
}

/// Reads `nucleus_id,channel,r,g` rows into curves keyed by id, in file
/// order.
fn read_curves(path: &Path) -> Result<Vec<(String, ChannelRole, Vec<f64>)>, CliError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let mut out: Vec<(String, ChannelRole, Vec<f64>)> = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let bad = |m: &str| CliError::Data(format!("{} row {}: {m}", path.display(), line + 2));
        if rec.len() != 4 {
            return Err(bad("expected nucleus_id,channel,r,g"));
        }
        let role: ChannelRole = rec[1].parse().map_err(|_| bad("unknown channel"))?;
        let g: f64 = rec[3].parse().map_err(|_| bad("g is not a number"))?;
        match out.last_mut() {
            Some((id, r, v)) if id == &rec[0] && *r == role && v.len() < GRID_LEN => v.push(g),
            _ => out.push((rec[0].to_string(), role, vec![g])),
        }
    }
    if let Some((id, _, v)) = out.iter().find(|(_, _, v)| v.len() != GRID_LEN) {
        return Err(CliError::Data(format!("{}: curve {id} has {} rows, expected {GRID_LEN}", path.display(), v.len())));
    }
    Ok(out)
}

fn channel_curves(path: &Path, role: ChannelRole) -> Result<Vec<(String, Vec<f64>)>, CliError> {
    let rows: Vec<_> = read_curves(path)?.into_iter().filter(|(_, r, _)| *r == role).map(|(id, _, v)| (id, v)).collect();
    if rows.is_empty() {
        return Err(CliError::Data(format!("{}: no '{role}' curves", path.display())));
    }
    Ok(rows)
}

fn pairs_of(path: &Path, y: ChannelRole, r: ChannelRole) -> Result<Vec<(String, Vec<f64>, Vec<f64>)>, CliError> {
    let ys = channel_curves(path, y)?;
    let rs: BTreeMap<String, Vec<f64>> = channel_curves(path, r)?.into_iter().collect();
    ys.into_iter()
        .map(|(id, yv)| {
            let rv = rs.get(&id).cloned().ok_or_else(|| CliError::Data(format!("nucleus {id} has no '{r}' curve")))?;
            Ok((id, yv, rv))
        })
        .collect()
}

fn cmd_run(a: RunArgs) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(&a.config)?;
    if let Some(o) = a.output {
        cfg.output = o;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(d) = a.design {
        cfg.design = match d.as_str() {
            "unpaired" => bdplot_core::Design::Unpaired,
            "paired" => bdplot_core::Design::Paired,
            other => return Err(config_err(format!("design must be unpaired or paired, got '{other}'"))),
        };
    }
    if let Some(n) = a.n_perm {
        cfg.test.n_perm = n;
    }
    if let Some(l) = a.level {
        cfg.test.level = l;
    }
    if let Some(k) = a.knot_penalty {
        cfg.piecewise.knot_penalty = parse_knots(&k)?;
    }
    if let Some(s) = a.curve_smoothing {
        cfg.profiles.smoothing = parse_smoothing(&s)?;
    }
    if let Some(s) = a.boundary_smoothing {
        cfg.geometry.smoothing = parse_smoothing(&s)?;
    }
    if let Some(m) = a.border_margin {
        cfg.geometry.border_margin = m;
    }
    if let Some(b) = a.bracket {
        cfg.registration.bracket = parse_bracket(&b)?;
    }
    if a.no_registration {
        cfg.registration.enabled = false;
    }
    match run_pipeline(&cfg, RunOptions { timings: a.timings }) {
        Ok(out) => {
            println!(
                "{} curves, {} significant region(s), CV errors {}/{}; artifacts in {}",
                out.records.len(),
                out.test.significant_regions.len(),
                out.discriminant.cv_errors,
                out.discriminant.labels.len(),
                cfg.output.display()
            );
            Ok(())
        }
        Err((stage, e)) => Err(e.context(format!("stage {stage:?}"))),
    }
}

struct ImageGeometry {
    image: bdplot_core::LabeledImage,
    kept: Vec<usize>,
    curves: Vec<bdplot_core::BoundaryCurve>,
    map: bdplot_core::BdMap,
}

fn image_geometry(a: &ImageArgs) -> Result<ImageGeometry, CliError> {
    let channels = parse_channels(&a.channels)?;
    let smoothing = parse_smoothing(&a.boundary_smoothing)?;
    let boundaries = read_boundaries(&a.boundaries)?;
    let (image, warnings) = read_image(&a.image, &channels)?;
    warnings.iter().for_each(|w| log::warn!("{w}"));
    let all = boundaries
        .iter()
        .enumerate()
        .map(|(k, b)| smooth_boundary(&b.vertices, smoothing, 1000).map_err(|e| CliError::from(e).context(format!("nucleus {k}"))))
        .collect::<Result<Vec<_>, _>>()?;
    let kept = keep_interior_indices(&all, image.shape(), a.border_margin);
    if kept.is_empty() {
        return Err(CliError::Data("no analyzable nuclei after border exclusion".into()));
    }
    let curves: Vec<_> = kept.iter().map(|&k| all[k].clone()).collect();
    let map = build_bd_map(&curves, image.shape())?;
    Ok(ImageGeometry { image, kept, curves, map })
}

fn cmd_geometry(a: GeometryArgs) -> Result<(), CliError> {
    let g = image_geometry(&a.input)?;
    fs::create_dir_all(&a.output)?;
    write_bdmap(&g.map, &a.output.join("bd.f32"), &a.output.join("bd.json"))?;
    let smoothed: Vec<bdplot_core::io::NucleusBoundary> = g
        .kept
        .iter()
        .zip(&g.curves)
        .map(|(&k, c)| bdplot_core::io::NucleusBoundary { id: Some(k.to_string()), vertices: c.smoothed().to_vec() })
        .collect();
    write_json(&a.output.join("smoothed.json"), &smoothed)?;
    println!("{} nuclei, BD map {}x{}", g.kept.len(), g.map.shape().0, g.map.shape().1);
    Ok(())
}

fn cmd_curves(a: CurvesArgs) -> Result<(), CliError> {
    let g = image_geometry(&a.input)?;
    let smoothing = parse_smoothing(&a.curve_smoothing)?;
    let mut curves = Vec::new();
    let mut clouds = Vec::new();
    for (k, &orig) in g.kept.iter().enumerate() {
        let cloud = extract_profile(&g.image, &g.map, k, a.channel)?;
        let mut c = fit_expression_curve(&cloud, smoothing)?;
        c.nucleus_id = orig;
        c.warnings.iter().for_each(|w| log::warn!("{w}"));
        curves.push((orig.to_string(), scale_curve(&c)?));
        clouds.push((orig.to_string(), cloud));
    }
    let rows: Vec<_> = curves.iter().map(|(id, c)| (id.clone(), a.channel, &c.values[..])).collect();
    write_curves_csv(fs::File::create(&a.output)?, &rows)?;
    if let Some(p) = a.clouds {
        let rows: Vec<_> = clouds.iter().map(|(id, c)| (id.clone(), a.channel, &c.points[..])).collect();
        write_cloud_csv(fs::File::create(p)?, &rows)?;
    }
    println!("{} curves", curves.len());
    Ok(())
}

fn as_curve(id: &str, role: ChannelRole, v: Vec<f64>) -> Result<ExpressionCurve, CliError> {
    let n = id.parse().unwrap_or(0);
    Ok(ExpressionCurve::from_values(n, role, v)?)
}

fn cmd_register(a: RegisterArgs) -> Result<(), CliError> {
    let mut opts = RegistrationOptions::default();
    if let Some(b) = a.bracket {
        opts.bracket = parse_bracket(&b)?;
    }
    fs::create_dir_all(&a.output)?;
    let (res, rows) = match a.pair_with {
        Some(r) => {
            let pairs = pairs_of(&a.curves, a.channel, r)?;
            let view: Vec<(&[f64], &[f64])> = pairs.iter().map(|(_, y, r)| (&y[..], &r[..])).collect();
            let res = register_paired(&view, &opts)?;
            let mut rows = Vec::new();
            for ((id, y, rv), d) in pairs.into_iter().zip(&res.dilations) {
                rows.push((id.clone(), a.channel, dilate_curve(&as_curve(&id, a.channel, y)?, *d)?.values));
                rows.push((id.clone(), r, dilate_curve(&as_curve(&id, r, rv)?, *d)?.values));
            }
            (res, rows)
        }
        None => {
            let curves = channel_curves(&a.curves, a.channel)?;
            let view: Vec<&[f64]> = curves.iter().map(|(_, v)| &v[..]).collect();
            let res = register_within(&view, &opts)?;
            let rows = curves
                .into_iter()
                .zip(&res.dilations)
                .map(|((id, v), d)| Ok((id.clone(), a.channel, dilate_curve(&as_curve(&id, a.channel, v)?, *d)?.values)))
                .collect::<Result<Vec<_>, CliError>>()?;
            (res, rows)
        }
    };
    let view: Vec<_> = rows.iter().map(|(id, r, v)| (id.clone(), *r, &v[..])).collect();
    write_curves_csv(fs::File::create(a.output.join("registered.csv"))?, &view)?;
    write_json(&a.output.join("registration.json"), &res)?;
    println!("{} iterations, criterion reduced by {:.1}%", res.iterations, 100.0 * res.reduction());
    Ok(())
}

fn cmd_test(a: TestArgs) -> Result<(), CliError> {
    let opts = PermutationOptions { n_perm: a.n_perm, level: a.level, seed: a.seed };
    let test = match (a.paired_with, &a.group_c) {
        (Some(r), None) => {
            let pairs = pairs_of(&a.group_a, a.channel, r)?;
            let view: Vec<(&[f64], &[f64])> = pairs.iter().map(|(_, y, r)| (&y[..], &r[..])).collect();
            paired_tcurve_and_band(&view, &opts)?
        }
        (None, Some(c)) => {
            let ga: Vec<Vec<f64>> = channel_curves(&a.group_a, a.channel)?.into_iter().map(|x| x.1).collect();
            let gc: Vec<Vec<f64>> = channel_curves(c, a.channel)?.into_iter().map(|x| x.1).collect();
            two_sample_test(&ga, &gc, &opts)?
        }
        _ => return Err(config_err("give either --group-c (unpaired) or --paired-with (paired)")),
    };
    write_json(&a.output, &test)?;
    println!(
        "sup|T| = {:.3}, critical {:.3}, {} significant region(s)",
        test.observed_sup,
        test.critical,
        test.significant_regions.len()
    );
    Ok(())
}

fn cmd_discriminate(a: DiscriminateArgs) -> Result<(), CliError> {
    let ga: Vec<Vec<f64>> = channel_curves(&a.group_a, a.channel)?.into_iter().map(|x| x.1).collect();
    let gc: Vec<Vec<f64>> = channel_curves(&a.group_c, a.channel)?.into_iter().map(|x| x.1).collect();
    let model = loocv_select(&ga, &gc, &PdaOptions::default())?;
    write_json(&a.output, &model)?;
    println!("CV errors {}/{} at lambda {:.3e}, tau {:.3}", model.cv_errors, model.labels.len(), model.lambda_ridge, model.tau);
    Ok(())
}

fn cmd_piecewise(a: PiecewiseArgs) -> Result<(), CliError> {
    let penalty = parse_knots(&a.knot_penalty)?;
    let fit_all = |path: &Path| -> Result<Vec<(String, bdplot_core::PiecewiseFit)>, CliError> {
        channel_curves(path, a.channel)?
            .into_iter()
            .map(|(id, v)| Ok((id, fit_piecewise(&v, penalty, None)?)))
            .collect()
    };
    let fits = fit_all(&a.curves)?;
    let rows: Vec<_> = fits.iter().map(|(id, f)| (id.clone(), a.channel, f)).collect();
    write_piecewise_csv(fs::File::create(&a.output)?, &rows)?;
    if let Some(other) = &a.compare_with {
        let fc = fit_all(other)?;
        let cmp = compare_groups(
            &fits.into_iter().map(|x| x.1).collect::<Vec<_>>(),
            &fc.into_iter().map(|x| x.1).collect::<Vec<_>>(),
            a.paired,
        )?;
        let out = a.comparison.clone().unwrap_or_else(|| a.output.with_extension("comparison.json"));
        write_json(&out, &cmp)?;
    }
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Result<(), CliError> {
    let text = fs::read_to_string(&a.spec).map_err(|e| config_err(format!("{}: {e}", a.spec.display())))?;
    let spec: SynthSpec = toml::from_str(&text).map_err(|e| config_err(format!("{}: {e}", a.spec.display())))?;
    let (files, _) = write_dataset(&spec, &a.output, &a.name)?;
    let roles: Vec<String> = channel_map(&spec).into_iter().map(|(k, r)| format!("{k}={r}")).collect();
    println!("wrote {} (channels {})", files.image.display(), roles.join(","));
    Ok(())
}

fn init() {
    let env = env_logger::Env::new().filter_or("BDPLOT_LOG", "warn");
    env_logger::Builder::from_env(env).format_timestamp(None).init();
    if let Some(n) = std::env::var("BDPLOT_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("BDPLOT_THREADS ignored: {e}");
        }
    }
}

fn main() -> ExitCode {
    init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Geometry(a) => cmd_geometry(a),
        Command::Curves(a) => cmd_curves(a),
        Command::Register(a) => cmd_register(a),
        Command::Test(a) => cmd_test(a),
        Command::Discriminate(a) => cmd_discriminate(a),
        Command::Piecewise(a) => cmd_piecewise(a),
        Command::Synth(a) => cmd_synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("bdplot: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
