use thiserror::Error;

use crate::geometry::Vec3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("point {point:?} lies outside the domain")]
    OutsideDomain { point: Vec3 },

    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("{condition} violated at {point:?}: {detail}")]
    Validation {
        condition: Condition,
        point: Vec3,
        detail: String,
    },

    #[error("boundary data declared on {found:?} where {expected:?} was required")]
    Contract {
        expected: Component,
        found: Component,
    },

    #[error("Neumann series is not contracting: ratios {ratios:?}")]
    NonContraction { ratios: Vec<f64> },

    #[error("unresolved source: {0}")]
    Unresolved(String),

    #[error("aliasing: {0}")]
    Aliasing(String),

    #[error("incomplete data: {0}")]
    IncompleteData(String),

    #[error("log-domain failure: {0}")]
    LogDomain(String),

    #[error("dynamic range exceeded: attenuation {attenuation} above cap {cap}")]
    DynamicRange { attenuation: f64, cap: f64 },

    #[error("too few samples: {0}")]
    TooFewSamples(String),

    #[error("unknown phantom `{0}`")]
    UnknownPhantom(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Condition {
    Regularity,
    Absorption,
    Isotropy,
}

impl std::fmt::Display for Condition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Condition::Regularity => "RegularityCondition",
            Condition::Absorption => "AbsorptionCondition",
            Condition::Isotropy => "Isotropik",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Component {
    Incoming,
    Outgoing,
}

impl Component {
    pub fn flipped(self) -> Self {
        match self {
            Component::Incoming => Component::Outgoing,
            Component::Outgoing => Component::Incoming,
        }
    }
}
