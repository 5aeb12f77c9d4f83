//! Raster input and output.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use bdplot_core::{ChannelRole, LabeledImage, Warning, WarningKind};
use image::{DynamicImage, ImageReader};
use ndarray::Array2;

use crate::config::channel_index;
use crate::error::CliError;

fn planes_from<T: Copy + Into<f64>>(raw: &[T], n_ch: usize, (w, h): (u32, u32)) -> Vec<Array2<f64>> {
    let (w, h) = (w as usize, h as usize);
    (0..n_ch)
        .map(|c| Array2::from_shape_fn((h, w), |(r, col)| raw[(r * w + col) * n_ch + c].into()))
        .collect()
}

fn decode_planes(img: &DynamicImage, path: &Path) -> Result<Vec<Array2<f64>>, CliError> {
    let dims = (img.width(), img.height());
    let planes = match img {
        DynamicImage::ImageLuma8(b) => planes_from(b.as_raw(), 1, dims),
        DynamicImage::ImageLumaA8(b) => planes_from(b.as_raw(), 2, dims),
        DynamicImage::ImageRgb8(b) => planes_from(b.as_raw(), 3, dims),
        DynamicImage::ImageRgba8(b) => planes_from(b.as_raw(), 4, dims),
        DynamicImage::ImageLuma16(b) => planes_from(b.as_raw(), 1, dims),
        DynamicImage::ImageLumaA16(b) => planes_from(b.as_raw(), 2, dims),
        DynamicImage::ImageRgb16(b) => planes_from(b.as_raw(), 3, dims),
        DynamicImage::ImageRgba16(b) => planes_from(b.as_raw(), 4, dims),
        DynamicImage::ImageRgb32F(_) | DynamicImage::ImageRgba32F(_) => {
            return Err(CliError::Data(format!(
                "{}: 32-bit float images are not supported; only 8- or 16-bit integer rasters are",
                path.display()
            )))
        }
        other => {
            return Err(CliError::Data(format!(
                "{}: unsupported pixel format {:?}",
                path.display(),
                other.color()
            )))
        }
    };
    Ok(planes)
}

/// Micrometres per pixel from a PNG `pHYs` chunk given in metres.
fn png_pixel_size(path: &Path) -> Option<f64> {
    let file = File::open(path).ok()?;
    let reader = png::Decoder::new(BufReader::new(file)).read_info().ok()?;
    let dims = reader.info().pixel_dims?;
    (dims.unit == png::Unit::Meter && dims.xppu > 0).then(|| 1e6 / dims.xppu as f64)
}

/// Reads an 8- or 16-bit raster with 1-4 channels and tags the configured
/// channels with their roles. Unmapped channels are dropped.
pub fn read_image(
    path: &Path,
    channels: &BTreeMap<String, ChannelRole>,
) -> Result<(LabeledImage, Vec<Warning>), CliError> {
    let img = ImageReader::open(path)
        .and_then(|r| r.with_guessed_format())
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?
        .decode()
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let planes = decode_planes(&img, path)?;
    let mut tagged = Vec::with_capacity(channels.len());
    for (key, role) in channels {
        let idx = channel_index(key).ok_or_else(|| CliError::Config(format!("unknown channel '{key}'")))?;
        let plane = planes.get(idx).ok_or_else(|| {
            CliError::Data(format!(
                "{}: channel '{key}' configured as {role} but the image has {} channel(s)",
                path.display(),
                planes.len()
            ))
        })?;
        tagged.push((*role, plane.clone()));
    }
    let mut warnings = Vec::new();
    let is_png = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"));
    let pixel_size = match is_png.then(|| png_pixel_size(path)).flatten() {
        Some(s) => s,
        None => {
            warnings.push(Warning::new(
                WarningKind::MissingPixelSize,
                format!("{}: no pixel size in metadata, using 1.0", path.display()),
            ));
            1.0
        }
    };
    Ok((LabeledImage::new(tagged, pixel_size)?, warnings))
}

/// Writes planes as an 8-bit PNG: one plane as gray, two or three as RGB
/// (missing channels zero), four as RGBA.
pub fn write_png(path: &Path, planes: &[&Array2<f64>]) -> Result<(), CliError> {
    let Some(first) = planes.first() else {
        return Err(CliError::Data("no planes to write".into()));
    };
    let (h, w) = first.dim();
    if planes.len() > 4 || planes.iter().any(|p| p.dim() != (h, w)) {
        return Err(CliError::Data("planes must share a shape and number at most 4".into()));
    }
    let out_ch = match planes.len() {
        1 => 1,
        2 | 3 => 3,
        _ => 4,
    };
    let mut buf = vec![0u8; h * w * out_ch];
    for (c, p) in planes.iter().enumerate() {
        for ((r, col), v) in p.indexed_iter() {
            buf[(r * w + col) * out_ch + c] = v.round().clamp(0.0, 255.0) as u8;
        }
    }
    let color = match out_ch {
        1 => image::ExtendedColorType::L8,
        3 => image::ExtendedColorType::Rgb8,
        _ => image::ExtendedColorType::Rgba8,
    };
    image::save_buffer(path, &buf, w as u32, h as u32, color)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}
