//! Approximate 8×8 unsigned multipliers and the 256×256 product tables that
//! stand in for them during inference.
//!
//! Every kernel works on unsigned magnitudes. Signs are handled by the
//! consumer through sign-magnitude decomposition, so one table covers a
//! multiplier completely.

mod drum;
mod lut;
mod scaletrim;
mod stats;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use drum::drum_scalar;
pub use lut::{build_lut, load_lut, save_lut, ProductLut, LUT_DIM, LUT_MAGIC};
pub use scaletrim::{scaletrim_scalar, ScaleTrim, COMP_FRAC_BITS};
pub use stats::{lut_error_stats, lut_error_stats_where, MultErrorStats};

/// Largest product magnitude representable by an 8×8 unsigned multiplier.
pub const MAX_PRODUCT: i32 = 255 * 255;

/// Which multiplier a table emulates.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MultiplierSpec {
    Exact,
    /// DRUM keeping `k` bits from each operand's leading one.
    Drum { k: u8 },
    /// Truncated log-linearized multiplier: `t` fraction bits per operand,
    /// `c` compensation entries (0 disables compensation).
    ScaleTrim { t: u8, c: u8 },
    /// Product table imported from a LUT file.
    FromFile { path: PathBuf },
}

impl MultiplierSpec {
    pub fn drum(k: u8) -> Result<Self> {
        let spec = MultiplierSpec::Drum { k };
        spec.validate()?;
        Ok(spec)
    }

    pub fn scale_trim(t: u8, c: u8) -> Result<Self> {
        let spec = MultiplierSpec::ScaleTrim { t, c };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            MultiplierSpec::Exact | MultiplierSpec::FromFile { .. } => Ok(()),
            MultiplierSpec::Drum { k } => {
                if (2..=8).contains(&k) {
                    Ok(())
                } else {
                    Err(Error::InvalidMultiplier(format!(
                        "DRUM width k={k} outside [2, 8]"
                    )))
                }
            }
            MultiplierSpec::ScaleTrim { t, c } => {
                if matches!(t, 3 | 4) && matches!(c, 0 | 4 | 8) {
                    Ok(())
                } else {
                    Err(Error::InvalidMultiplier(format!(
                        "scaleTRIM needs t in {{3,4}} and c in {{0,4,8}}, got ({t},{c})"
                    )))
                }
            }
        }
    }

    /// The seven multipliers of the reference experiment: the accurate one,
    /// DRUM-3/4 and the four scaleTRIM configurations.
    pub fn paper_set() -> Vec<MultiplierSpec> {
        vec![
            MultiplierSpec::Exact,
            MultiplierSpec::Drum { k: 3 },
            MultiplierSpec::Drum { k: 4 },
            MultiplierSpec::ScaleTrim { t: 3, c: 0 },
            MultiplierSpec::ScaleTrim { t: 4, c: 0 },
            MultiplierSpec::ScaleTrim { t: 4, c: 4 },
            MultiplierSpec::ScaleTrim { t: 4, c: 8 },
        ]
    }

    /// Short human label in the notation used by result tables.
    pub fn label(&self) -> String {
        match self {
            MultiplierSpec::Exact => "ACC".to_string(),
            MultiplierSpec::Drum { k } => format!("DR{k}"),
            MultiplierSpec::ScaleTrim { t, c } => format!("sT({t},{c})"),
            MultiplierSpec::FromFile { path } => format!(
                "LUT[{}]",
                path.file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default()
            ),
        }
    }

    /// Stem used for generated LUT file names.
    pub fn file_stem(&self) -> String {
        match self {
            MultiplierSpec::FromFile { path } => path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "imported".to_string()),
            other => other.to_string(),
        }
    }

    pub fn is_exact(&self) -> bool {
        matches!(self, MultiplierSpec::Exact)
    }

    /// Evaluates the scalar kernel. `FromFile` has no scalar form.
    pub fn multiply(&self, a: u8, b: u8) -> Result<u32> {
        match *self {
            MultiplierSpec::Exact => Ok(a as u32 * b as u32),
            MultiplierSpec::Drum { k } => drum_scalar(a, b, k as u32),
            MultiplierSpec::ScaleTrim { t, c } => scaletrim_scalar(a, b, t as u32, c as u32),
            MultiplierSpec::FromFile { .. } => Err(Error::InvalidMultiplier(
                "imported LUTs have no scalar kernel".to_string(),
            )),
        }
    }
}

/// Canonical identifiers: `exact`, `drum<k>`, `strim<t>_<c>`, `lut:<path>`.
impl fmt::Display for MultiplierSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MultiplierSpec::Exact => write!(f, "exact"),
            MultiplierSpec::Drum { k } => write!(f, "drum{k}"),
            MultiplierSpec::ScaleTrim { t, c } => write!(f, "strim{t}_{c}"),
            MultiplierSpec::FromFile { path } => write!(f, "lut:{}", path.display()),
        }
    }
}

impl FromStr for MultiplierSpec {
    type Err = Error;

    /// Accepts the canonical identifiers plus the table labels
    /// (`ACC`, `DR3`, `sT(4,8)`), case-insensitively.
    fn from_str(s: &str) -> Result<Self> {
        let raw = s.trim();
        if let Some(path) = raw.strip_prefix("lut:") {
            return Ok(MultiplierSpec::FromFile { path: path.into() });
        }
        let lower = raw.to_ascii_lowercase();
        let bad = || Error::InvalidMultiplier(format!("unrecognised multiplier '{raw}'"));
        let parse_u8 = |v: &str| v.trim().parse::<u8>().map_err(|_| bad());

        let spec = if lower == "exact" || lower == "acc" {
            MultiplierSpec::Exact
        } else if let Some(k) = lower
            .strip_prefix("drum")
            .or_else(|| lower.strip_prefix("dr"))
        {
            MultiplierSpec::Drum { k: parse_u8(k)? }
        } else if let Some(rest) = lower.strip_prefix("strim") {
            let (t, c) = rest.split_once('_').ok_or_else(bad)?;
            MultiplierSpec::ScaleTrim {
                t: parse_u8(t)?,
                c: parse_u8(c)?,
            }
        } else if let Some(rest) = lower.strip_prefix("st(") {
            let inner = rest.strip_suffix(')').ok_or_else(bad)?;
            let (t, c) = inner.split_once(',').ok_or_else(bad)?;
            MultiplierSpec::ScaleTrim {
                t: parse_u8(t)?,
                c: parse_u8(c)?,
            }
        } else {
            return Err(bad());
        };
        spec.validate()?;
        Ok(spec)
    }
}
