//! Non-fatal conditions reported alongside results.

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarningKind {
    /// Profile data do not cover the expected BD range.
    LowCoverage,
    /// GCV was flat and the default penalty was used.
    GcvFallback,
    /// A curve was evaluated beyond the range of its data.
    Extrapolated,
    /// A line search ended on the edge of its bracket.
    BracketBinding,
    /// A pointwise variance was zero.
    DegenerateVariance,
    /// All permutations were enumerated instead of sampled.
    ExactEnumeration,
    /// The knot search did not single out one knot pair.
    NonUniqueKnots,
    /// A piecewise fit has an empty middle segment.
    EmptySegment,
    /// A statistic could not be computed for a parameter.
    UndefinedStatistic,
    /// Image metadata lacked a pixel size.
    MissingPixelSize,
    /// Nuclei were dropped before analysis.
    ExcludedNuclei,
    /// A reading of an ambiguous definition that the analysis relies on.
    Interpretation,
}

/// A non-fatal condition with a human-readable detail.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Warning {
    pub kind: WarningKind,
    pub detail: String,
}

impl Warning {
    pub fn new(kind: WarningKind, detail: impl Into<String>) -> Self {
        Self {
            kind,
            detail: detail.into(),
        }
    }
}

impl fmt::Display for Warning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}: {}", self.kind, self.detail)
    }
}
