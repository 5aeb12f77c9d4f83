//! Run configuration, read from TOML and overridable from the command line.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use bdplot_core::alignment::RegistrationOptions;
use bdplot_core::fda::{Design, PermutationOptions, MIN_PERMUTATIONS};
use bdplot_core::pda::{PdaOptions, ScoreMode};
use bdplot_core::plm::KnotPenalty;
use bdplot_core::{ChannelRole, Smoothing};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSpec {
    pub image: PathBuf,
    pub boundaries: PathBuf,
    /// Condition of every nucleus in the image (unpaired design).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
    /// Per-nucleus labels overriding `group`, in boundary-file order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nucleus_groups: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    pub smoothing: Smoothing,
    pub samples: usize,
    /// Nuclei closer than this to the image edge are dropped.
    pub border_margin: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self {
            smoothing: Smoothing::Gcv,
            samples: bdplot_core::geometry::DEFAULT_SAMPLES,
            border_margin: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ProfileConfig {
    pub smoothing: Smoothing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegistrationConfig {
    pub enabled: bool,
    pub bracket: (f64, f64),
    pub max_iter: usize,
    pub tol: f64,
    pub line_tol: f64,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        let o = RegistrationOptions::default();
        Self {
            enabled: true,
            bracket: o.bracket,
            max_iter: o.max_iter,
            tol: o.tol,
            line_tol: o.line_tol,
        }
    }
}

impl RegistrationConfig {
    pub fn options(&self) -> RegistrationOptions {
        RegistrationOptions {
            bracket: self.bracket,
            max_iter: self.max_iter,
            tol: self.tol,
            line_tol: self.line_tol,
            weights: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TestConfig {
    pub n_perm: usize,
    pub level: f64,
}

impl Default for TestConfig {
    fn default() -> Self {
        let o = PermutationOptions::default();
        Self {
            n_perm: o.n_perm,
            level: o.level,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminantConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_grid: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_grid: Option<Vec<f64>>,
    pub mode: ScoreMode,
}

impl DiscriminantConfig {
    pub fn options(&self) -> PdaOptions {
        let d = PdaOptions::default();
        PdaOptions {
            lambda_grid: self.lambda_grid.clone().unwrap_or(d.lambda_grid),
            tau_grid: self.tau_grid.clone().unwrap_or(d.tau_grid),
            mode: self.mode,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct PiecewiseConfig {
    pub knot_penalty: KnotPenalty,
}

fn default_marker() -> ChannelRole {
    ChannelRole::Marker
}

fn default_output() -> PathBuf {
    PathBuf::from("bdplot-out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub design: Design,
    pub inputs: Vec<InputSpec>,
    /// Group labels in `[A, C]` order; defaults to order of appearance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub groups: Option<[String; 2]>,
    /// Image channel (`gray`, `red`, `green`, `blue`, `alpha` or an index)
    /// to role.
    pub channels: BTreeMap<String, ChannelRole>,
    /// Channel whose curves are analyzed; `Y` in the paired design.
    #[serde(default = "default_marker")]
    pub marker: ChannelRole,
    /// Second channel of the paired design, or a channel whose scale is
    /// correlated with the marker's.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<ChannelRole>,
    #[serde(default)]
    pub geometry: GeometryConfig,
    #[serde(default)]
    pub profiles: ProfileConfig,
    #[serde(default)]
    pub registration: RegistrationConfig,
    #[serde(default)]
    pub test: TestConfig,
    #[serde(default)]
    pub discriminant: DiscriminantConfig,
    #[serde(default)]
    pub piecewise: PiecewiseConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output: PathBuf,
}

/// Parses a channel key into a zero-based index.
pub fn channel_index(key: &str) -> Option<usize> {
    match key {
        "gray" | "grey" | "red" => Some(0),
        "green" => Some(1),
        "blue" => Some(2),
        "alpha" => Some(3),
        k => k.parse().ok().filter(|i| *i < 4),
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Reads a config file; relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for input in &mut self.inputs {
            fix(&mut input.image);
            fix(&mut input.boundaries);
        }
        fix(&mut self.output);
    }

    /// The channel roles the analysis reads.
    pub fn analyzed_roles(&self) -> Vec<ChannelRole> {
        let mut roles = vec![self.marker];
        if let Some(r) = self.reference {
            roles.push(r);
        }
        roles
    }

    pub fn permutation(&self) -> PermutationOptions {
        PermutationOptions {
            n_perm: self.test.n_perm,
            level: self.test.level,
            seed: self.seed,
        }
    }

    /// Group labels in `[A, C]` order.
    pub fn group_labels(&self) -> Vec<String> {
        if let Some(g) = &self.groups {
            return g.to_vec();
        }
        let mut out: Vec<String> = Vec::new();
        for input in &self.inputs {
            let labels = input.nucleus_groups.iter().flatten().chain(input.group.iter());
            for l in labels {
                if !out.contains(l) {
                    out.push(l.clone());
                }
            }
        }
        out
    }

    /// Checks everything that can be checked without reading inputs.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.inputs.is_empty() {
            return bad("no inputs configured".into());
        }
        if self.channels.is_empty() {
            return bad("no channel roles configured".into());
        }
        let mut seen = Vec::new();
        for (key, role) in &self.channels {
            if channel_index(key).is_none() {
                return bad(format!("unknown channel '{key}'"));
            }
            if seen.contains(role) {
                return bad(format!("role '{role}' is mapped twice"));
            }
            seen.push(*role);
        }
        for role in self.analyzed_roles() {
            if !seen.contains(&role) {
                return bad(format!("channel role '{role}' is not mapped to any image channel"));
            }
        }
        match self.design {
            Design::Unpaired => {
                let labels = self.group_labels();
                if labels.len() != 2 {
                    return bad(format!("unpaired design needs exactly 2 group labels, found {labels:?}"));
                }
                if let Some(g) = &self.groups {
                    if g[0] == g[1] {
                        return bad("group labels must differ".into());
                    }
                }
                for (i, input) in self.inputs.iter().enumerate() {
                    if input.group.is_none() && input.nucleus_groups.is_none() {
                        return bad(format!("input {i} has no group label"));
                    }
                    let used = input.nucleus_groups.iter().flatten().chain(input.group.iter());
                    if let Some(l) = used.into_iter().find(|l| !labels.contains(l)) {
                        return bad(format!("input {i} uses unknown group '{l}'"));
                    }
                }
            }
            Design::Paired => match self.reference {
                None => return bad("paired design needs a reference channel".into()),
                Some(r) if r == self.marker => {
                    return bad("paired design compares two different channel roles".into())
                }
                _ => {}
            },
        }
        if self.test.n_perm < MIN_PERMUTATIONS {
            return bad(format!("n_perm must be at least {MIN_PERMUTATIONS}"));
        }
        if !(self.test.level > 0.5 && self.test.level < 1.0) {
            return bad("test level must lie in (0.5, 1)".into());
        }
        if self.geometry.samples < 16 {
            return bad("geometry.samples must be at least 16".into());
        }
        if !(self.geometry.border_margin >= 0.0) {
            return bad("geometry.border_margin must be nonnegative".into());
        }
        let (lo, hi) = self.registration.bracket;
        if !(0.5..=2.0).contains(&lo) || !(0.5..=2.0).contains(&hi) || lo >= hi {
            return bad(format!("registration bracket ({lo}, {hi}) must be ordered within [0.5, 2]"));
        }
        if self.registration.max_iter == 0 || !(self.registration.tol >= 0.0) || !(self.registration.line_tol > 0.0) {
            return bad("registration max_iter and tolerances must be positive".into());
        }
        let pda = self.discriminant.options();
        if pda.lambda_grid.is_empty() || pda.lambda_grid.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return bad("lambda_grid must hold positive values".into());
        }
        if pda.tau_grid.is_empty() || pda.tau_grid.iter().any(|t| !t.is_finite()) {
            return bad("tau_grid must hold finite values".into());
        }
        if let KnotPenalty::Fixed(l) = self.piecewise.knot_penalty {
            if !(l >= 0.0 && l.is_finite()) {
                return bad("knot_penalty must be nonnegative".into());
            }
        }
        for s in [self.geometry.smoothing, self.profiles.smoothing] {
            if let Smoothing::Fixed(l) = s {
                if !(l >= 0.0 && l.is_finite()) {
                    return bad("smoothing penalties must be nonnegative".into());
                }
            }
        }
        for (i, input) in self.inputs.iter().enumerate() {
            for p in [&input.image, &input.boundaries] {
                if !p.is_file() {
                    return bad(format!("input {i}: {} does not exist", p.display()));
                }
            }
        }
        Ok(())
    }
}
