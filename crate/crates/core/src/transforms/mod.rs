//! Function rewrites: live-range splitting, spill-code insertion, physical
//! rewriting, and the allocation verifier.

mod rewrite;
mod spill;
mod split;
mod verify;

pub use rewrite::{apply_assignment, materialize, Materialized};
pub use spill::{insert_spill, SpillResult};
pub use split::{split_live_range, splittable_points, SplitResult};
pub use verify::{verify_allocation, verify_partial, Violation, ViolationKind};

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mir::{MirError, ProgramPoint};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TransformError {
    #[error("%{0} does not occur in the function")]
    UnknownVreg(String),
    #[error("point {point} is not an access point of %{vreg}")]
    NotAUsePoint { vreg: String, point: ProgramPoint },
    #[error("%{vreg} cannot be split at point {point}: {reason}")]
    BadSplitPoint {
        vreg: String,
        point: ProgramPoint,
        reason: &'static str,
    },
    #[error("%{0} has a single access and cannot be split")]
    SingleAccess(String),
    #[error("`{0}` is a pre-assigned physical register")]
    Physical(String),
    #[error("no mapping for %{0}")]
    MissingMapping(String),
    #[error("%{0} is mapped to SPILL but its spill code was not inserted")]
    NotMaterialized(String),
    #[error("register ${reg} is not legal for %{vreg} of type {ty}")]
    TypeMismatch {
        vreg: String,
        ty: String,
        reg: String,
    },
    #[error("no register left for %{0} even after spilling every candidate")]
    Unallocatable(String),
    #[error("allocation failed verification: {0:?}")]
    Verification(Vec<Violation>),
    #[error("rewritten function is invalid: {0}")]
    Invalid(#[from] MirError),
}

/// A register or the spill marker.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub enum Color {
    Reg(String),
    Spill,
}

pub const SPILL: &str = "SPILL";

impl From<String> for Color {
    fn from(s: String) -> Self {
        if s == SPILL {
            Color::Spill
        } else {
            Color::Reg(s)
        }
    }
}

impl From<Color> for String {
    fn from(c: Color) -> Self {
        match c {
            Color::Reg(r) => r,
            Color::Spill => SPILL.to_string(),
        }
    }
}

impl fmt::Display for Color {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Color::Reg(r) => f.write_str(r),
            Color::Spill => f.write_str(SPILL),
        }
    }
}

impl Color {
    pub fn reg(&self) -> Option<&str> {
        match self {
            Color::Reg(r) => Some(r),
            Color::Spill => None,
        }
    }
}

/// vreg name to register or SPILL. Serialized as a flat JSON object.
pub type ColorMap = BTreeMap<String, Color>;
