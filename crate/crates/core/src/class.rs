use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Roast degree of a batch of beans.
///
/// The discriminant is the class index frozen into every model artifact;
/// it is alphabetical by label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoastClass {
    Dark = 0,
    Green = 1,
    Light = 2,
    Medium = 3,
}

impl RoastClass {
    pub const COUNT: usize = 4;

    /// All classes in index order.
    pub const ALL: [RoastClass; 4] = [RoastClass::Dark, RoastClass::Green, RoastClass::Light, RoastClass::Medium];

    /// Roasting progression, the row/column order of confusion tables.
    pub const TABLE_ORDER: [RoastClass; 4] =
        [RoastClass::Green, RoastClass::Light, RoastClass::Medium, RoastClass::Dark];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn label(self) -> &'static str {
        match self {
            RoastClass::Dark => "dark",
            RoastClass::Green => "green",
            RoastClass::Light => "light",
            RoastClass::Medium => "medium",
        }
    }

    /// Position of this class in [`RoastClass::TABLE_ORDER`].
    pub fn table_position(self) -> usize {
        match self {
            RoastClass::Green => 0,
            RoastClass::Light => 1,
            RoastClass::Medium => 2,
            RoastClass::Dark => 3,
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            RoastClass::Dark => "Dark Roasted",
            RoastClass::Green => "Green (Unroasted)",
            RoastClass::Light => "Light Roasted",
            RoastClass::Medium => "Medium Roasted",
        }
    }
}

impl fmt::Display for RoastClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for RoastClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|c| c.label().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Data(format!("unknown roast class {s:?}")))
    }
}
