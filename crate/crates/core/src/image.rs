//! Multichannel rasters with role-tagged planes.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// What a channel shows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelRole {
    Body,
    Membrane,
    Marker,
}

impl ChannelRole {
    pub const ALL: [ChannelRole; 3] = [ChannelRole::Body, ChannelRole::Membrane, ChannelRole::Marker];

    pub fn as_str(self) -> &'static str {
        match self {
            ChannelRole::Body => "body",
            ChannelRole::Membrane => "membrane",
            ChannelRole::Marker => "marker",
        }
    }
}

impl fmt::Display for ChannelRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ChannelRole {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "body" => Ok(ChannelRole::Body),
            "membrane" => Ok(ChannelRole::Membrane),
            "marker" => Ok(ChannelRole::Marker),
            other => Err(invalid(format!("unknown channel role '{other}'"))),
        }
    }
}

/// A 2-d image whose planes carry channel roles. Intensities are kept in the
/// units of the source file (0..=255 for 8-bit data).
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    planes: Vec<(ChannelRole, Array2<f64>)>,
    /// Physical size of one pixel; 1.0 when unknown.
    pub pixel_size: f64,
}

impl LabeledImage {
    pub fn new(planes: Vec<(ChannelRole, Array2<f64>)>, pixel_size: f64) -> Result<Self> {
        let Some((_, first)) = planes.first() else {
            return Err(invalid("image has no channels"));
        };
        let shape = first.dim();
        if shape.0 == 0 || shape.1 == 0 {
            return Err(invalid("image is empty"));
        }
        if planes.iter().any(|(_, p)| p.dim() != shape) {
            return Err(invalid("channel planes differ in shape"));
        }
        for (i, (role, _)) in planes.iter().enumerate() {
            if planes[..i].iter().any(|(r, _)| r == role) {
                return Err(invalid(format!("channel role '{role}' assigned twice")));
            }
        }
        if !(pixel_size > 0.0 && pixel_size.is_finite()) {
            return Err(invalid("pixel size must be positive"));
        }
        Ok(Self { planes, pixel_size })
    }

    /// `(rows, cols)`.
    pub fn shape(&self) -> (usize, usize) {
        self.planes[0].1.dim()
    }

    pub fn channel(&self, role: ChannelRole) -> Option<&Array2<f64>> {
        self.planes.iter().find(|(r, _)| *r == role).map(|(_, p)| p)
    }

    pub fn roles(&self) -> impl Iterator<Item = ChannelRole> + '_ {
        self.planes.iter().map(|(r, _)| *r)
    }

    pub fn planes(&self) -> &[(ChannelRole, Array2<f64>)] {
        &self.planes
    }
}
