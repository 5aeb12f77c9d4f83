//! Boundary JSON, CSV exports and the BD map debug dump.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{invalid, Error, Result};
use crate::geometry::{BdMap, Point, NO_ORBIT};
use crate::grid::{grid_r, GRID_LEN};
use crate::image::ChannelRole;
use crate::plm::PiecewiseFit;

/// Orbit value written for pixels without an owner.
pub const ORBIT_NONE_U16: u16 = u16::MAX;

/// One marked nucleus from a boundary file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NucleusBoundary {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub vertices: Vec<Point>,
}

fn parse_vertices(v: &Value) -> std::result::Result<Vec<Point>, String> {
    let arr = v.as_array().ok_or("vertices must be an array")?;
    arr.iter()
        .enumerate()
        .map(|(i, p)| {
            let pair = p.as_array().filter(|a| a.len() == 2);
            let xy = pair.and_then(|a| Some([a[0].as_f64()?, a[1].as_f64()?]));
            match xy {
                Some(xy) if xy[0].is_finite() && xy[1].is_finite() => Ok(xy),
                _ => Err(format!("vertex {i} is not a finite [x, y] pair")),
            }
        })
        .collect()
}

fn parse_id(v: &Value) -> std::result::Result<Option<String>, String> {
    match v {
        Value::Null => Ok(None),
        Value::String(s) => Ok(Some(s.clone())),
        Value::Number(n) => Ok(Some(n.to_string())),
        _ => Err("id must be a string or number".into()),
    }
}

/// Parses a boundary document: an array whose entries are either vertex
/// arrays `[[x, y], ...]` or objects `{"id": .., "vertices": [[x, y], ...]}`.
/// `source` names the document in errors.
pub fn parse_boundaries(text: &str, source: &str) -> Result<Vec<NucleusBoundary>> {
    let doc: Value = serde_json::from_str(text).map_err(|e| invalid(format!("{source}: {e}")))?;
    let entries = doc
        .as_array()
        .ok_or_else(|| invalid(format!("{source}: expected an array of nuclei")))?;
    entries
        .iter()
        .enumerate()
        .map(|(k, entry)| {
            let parsed = match entry {
                Value::Array(_) => parse_vertices(entry).map(|vertices| NucleusBoundary { id: None, vertices }),
                Value::Object(map) => {
                    let vertices = map.get("vertices").ok_or_else(|| "missing \"vertices\"".to_string());
                    vertices.and_then(parse_vertices).and_then(|vertices| {
                        Ok(NucleusBoundary {
                            id: parse_id(map.get("id").unwrap_or(&Value::Null))?,
                            vertices,
                        })
                    })
                }
                _ => Err("expected a vertex array or an object".into()),
            };
            parsed.map_err(|e| invalid(format!("{source}: nucleus {k}: {e}")))
        })
        .collect()
}

pub fn read_boundaries(path: &Path) -> Result<Vec<NucleusBoundary>> {
    let text = fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    parse_boundaries(&text, &path.display().to_string())
}

pub fn write_boundaries(path: &Path, nuclei: &[NucleusBoundary]) -> Result<()> {
    write_json(path, nuclei)
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes)?;
    Ok(())
}

/// Writes `nucleus_id,channel,r,g`, one row per grid point.
pub fn write_curves_csv<W: Write>(mut w: W, curves: &[(String, ChannelRole, &[f64])]) -> Result<()> {
    writeln!(w, "nucleus_id,channel,r,g")?;
    for (id, channel, values) in curves {
        if values.len() != GRID_LEN {
            return Err(invalid(format!("curve {id} has {} values", values.len())));
        }
        for (i, g) in values.iter().enumerate() {
            writeln!(w, "{id},{channel},{:.2},{g}", grid_r(i))?;
        }
    }
    Ok(())
}

/// Writes `nucleus_id,channel,r,a` for raw profile clouds.
pub fn write_cloud_csv<W: Write>(mut w: W, clouds: &[(String, ChannelRole, &[(f64, f64)])]) -> Result<()> {
    writeln!(w, "nucleus_id,channel,r,a")?;
    for (id, channel, points) in clouds {
        for (r, a) in points.iter() {
            writeln!(w, "{id},{channel},{r},{a}")?;
        }
    }
    Ok(())
}

/// Writes one row of piecewise-linear parameters per curve.
pub fn write_piecewise_csv<W: Write>(mut w: W, fits: &[(String, ChannelRole, &PiecewiseFit)]) -> Result<()> {
    writeln!(w, "nucleus_id,channel,kappa2,kappa3,a1,a2,a3,b1,b2,b3,r_squared")?;
    for (id, channel, f) in fits {
        let [a1, a2, a3] = f.intercepts;
        let [b1, b2, b3] = f.slopes;
        writeln!(
            w,
            "{id},{channel},{:.2},{:.2},{a1},{a2},{a3},{b1},{b2},{b3},{}",
            f.kappa2, f.kappa3, f.r_squared
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BdMapSidecar {
    /// `[rows, cols]`.
    pub shape: [usize; 2],
    pub d_max: Vec<f64>,
    /// Row-major, 65535 for pixels without an owner.
    pub orbit: Vec<u16>,
}

/// Dumps the BD raster as little-endian `f32` at `raster` and the sidecar
/// JSON at `sidecar`.
pub fn write_bdmap(map: &BdMap, raster: &Path, sidecar: &Path) -> Result<()> {
    if map.n_nuclei() >= ORBIT_NONE_U16 as usize {
        return Err(invalid("too many nuclei for a 16-bit orbit raster"));
    }
    let mut bytes = Vec::with_capacity(map.bd.len() * 4);
    for &v in map.bd.iter() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(raster, bytes)?;
    let (rows, cols) = map.shape();
    let orbit = map
        .orbit
        .iter()
        .map(|&o| if o == NO_ORBIT { ORBIT_NONE_U16 } else { o as u16 })
        .collect();
    write_json(
        sidecar,
        &BdMapSidecar {
            shape: [rows, cols],
            d_max: map.d_max.clone(),
            orbit,
        },
    )
}

/// Reads a dump written by [`write_bdmap`]; BD values come back as `f32`
/// precision.
pub fn read_bdmap(raster: &Path, sidecar: &Path) -> Result<BdMap> {
    let meta: BdMapSidecar = serde_json::from_slice(&fs::read(sidecar)?)?;
    let [rows, cols] = meta.shape;
    let bytes = fs::read(raster)?;
    if bytes.len() != rows * cols * 4 || meta.orbit.len() != rows * cols {
        return Err(Error::InvalidInput("BD map dump does not match its sidecar shape".into()));
    }
    let bd = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let orbit = meta
        .orbit
        .iter()
        .map(|&o| if o == ORBIT_NONE_U16 { NO_ORBIT } else { o as u32 })
        .collect();
    let shape = (rows, cols);
    Ok(BdMap {
        bd: ndarray::Array2::from_shape_vec(shape, bd).map_err(|e| invalid(e.to_string()))?,
        orbit: ndarray::Array2::from_shape_vec(shape, orbit).map_err(|e| invalid(e.to_string()))?,
        d_max: meta.d_max,
    })
}
