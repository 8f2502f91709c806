//! Architecture constants for the GPU models the tool knows how to analyze.

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

/// Threads per warp. Every supported architecture uses 32.
pub const WARP_SIZE: u32 = 32;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum GpuError {
    #[error("warps_per_sm must be at least 1")]
    ZeroWarps,

    #[error("sm_count must be at least 1")]
    ZeroSms,

    #[error("warp_size must be {WARP_SIZE}, got {0}")]
    WarpSize(u32),

    #[error("gpu name must not be empty")]
    EmptyName,

    #[error("unknown gpu preset `{0}`")]
    UnknownPreset(String),

    #[error("preset file line {line}: {msg}")]
    PresetFile { line: usize, msg: String },
}

/// The per-SM shape of a GPU model.
///
/// `warps_per_sm` is the maximum load the atomic unit can see: every resident
/// warp may have at most one shared-memory atomic in flight.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GpuSpec {
    pub name: String,
    pub warps_per_sm: u32,
    pub sm_count: u32,
    #[serde(default = "default_warp_size")]
    pub warp_size: u32,
}

fn default_warp_size() -> u32 {
    WARP_SIZE
}

impl GpuSpec {
    pub fn new(name: impl Into<String>, warps_per_sm: u32, sm_count: u32) -> Result<Self, GpuError> {
        let spec = GpuSpec {
            name: name.into(),
            warps_per_sm,
            sm_count,
            warp_size: WARP_SIZE,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), GpuError> {
        if self.name.trim().is_empty() {
            return Err(GpuError::EmptyName);
        }
        if self.warps_per_sm == 0 {
            return Err(GpuError::ZeroWarps);
        }
        if self.sm_count == 0 {
            return Err(GpuError::ZeroSms);
        }
        if self.warp_size != WARP_SIZE {
            return Err(GpuError::WarpSize(self.warp_size));
        }
        Ok(())
    }

    /// NVIDIA Titan V (Volta): 64 resident warps per SM, 80 SMs.
    pub fn titan_v() -> Self {
        GpuSpec {
            name: "titan-v".into(),
            warps_per_sm: 64,
            sm_count: 80,
            warp_size: WARP_SIZE,
        }
    }

    /// NVIDIA RTX A6000 (Ampere): 48 resident warps per SM, 84 SMs.
    pub fn a6000() -> Self {
        GpuSpec {
            name: "a6000".into(),
            warps_per_sm: 48,
            sm_count: 84,
            warp_size: WARP_SIZE,
        }
    }

    /// Looks up a built-in preset. Architecture names are accepted as aliases.
    pub fn preset(name: &str) -> Result<Self, GpuError> {
        match name.to_ascii_lowercase().as_str() {
            "titan-v" | "titanv" | "volta" => Ok(Self::titan_v()),
            "a6000" | "rtx-a6000" | "ampere" => Ok(Self::a6000()),
            _ => Err(GpuError::UnknownPreset(name.to_string())),
        }
    }

    /// Resolves `name` against user presets first, then the built-ins.
    pub fn resolve(name: &str, user_presets: &[GpuSpec]) -> Result<Self, GpuError> {
        user_presets
            .iter()
            .find(|p| p.name.eq_ignore_ascii_case(name))
            .cloned()
            .map_or_else(|| Self::preset(name), Ok)
    }

    /// Same architecture for the purpose of reusing a calibration table.
    pub fn compatible_with(&self, other: &GpuSpec) -> bool {
        self.name.eq_ignore_ascii_case(&other.name) && self.warps_per_sm == other.warps_per_sm
    }
}

impl fmt::Display for GpuSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} ({} warps/SM, {} SMs)",
            self.name, self.warps_per_sm, self.sm_count
        )
    }
}

/// Splits a `# key=value` header line. Returns `None` for lines that are not
/// headers.
pub(crate) fn split_header(line: &str) -> Option<(&str, &str)> {
    let body = line.strip_prefix('#')?.trim();
    let (key, value) = body.split_once('=')?;
    Some((key.trim(), value.trim()))
}

/// Parses a preset file. Each `# gpu=<name>` header starts a new preset;
/// `# warps_per_sm=` and `# sm_count=` lines fill it in. Anything else is
/// ignored so a table file also works as a single-entry preset file.
pub fn parse_presets(text: &str) -> Result<Vec<GpuSpec>, GpuError> {
    struct Partial {
        line: usize,
        name: String,
        warps: Option<u32>,
        sms: Option<u32>,
    }

    fn finish(p: Partial) -> Result<GpuSpec, GpuError> {
        let missing = |what: &str| GpuError::PresetFile {
            line: p.line,
            msg: format!("preset `{}` has no {what}", p.name),
        };
        let warps = p.warps.ok_or_else(|| missing("warps_per_sm"))?;
        let sms = p.sms.ok_or_else(|| missing("sm_count"))?;
        GpuSpec::new(p.name.clone(), warps, sms).map_err(|e| GpuError::PresetFile {
            line: p.line,
            msg: e.to_string(),
        })
    }

    let mut out = Vec::new();
    let mut current: Option<Partial> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let Some((key, value)) = split_header(raw) else {
            continue;
        };
        let parse_u32 = |v: &str| {
            v.parse::<u32>().map_err(|_| GpuError::PresetFile {
                line,
                msg: format!("`{key}` is not a nonnegative integer: `{v}`"),
            })
        };
        match key {
            "gpu" => {
                if let Some(p) = current.take() {
                    out.push(finish(p)?);
                }
                current = Some(Partial {
                    line,
                    name: value.to_string(),
                    warps: None,
                    sms: None,
                });
            }
            "warps_per_sm" | "sm_count" => {
                let Some(p) = current.as_mut() else {
                    return Err(GpuError::PresetFile {
                        line,
                        msg: format!("`{key}` before any `gpu=` header"),
                    });
                };
                let v = parse_u32(value)?;
                if key == "warps_per_sm" {
                    p.warps = Some(v);
                } else {
                    p.sms = Some(v);
                }
            }
            _ => {}
        }
    }
    if let Some(p) = current.take() {
        out.push(finish(p)?);
    }
    Ok(out)
}

pub fn load_presets(path: &Path) -> Result<Vec<GpuSpec>, GpuError> {
    let text = fs::read_to_string(path).map_err(|e| GpuError::PresetFile {
        line: 0,
        msg: format!("{}: {e}", path.display()),
    })?;
    parse_presets(&text)
}
