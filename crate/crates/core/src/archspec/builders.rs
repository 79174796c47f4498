use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::archspec::{
    calibrate_linear, ArchError, BlockKind, BlockSpec, HeadSpec, LinearParam, ModelSpec, PenultimateSpec, Shortcut,
    StemSpec, SCHEMA_VERSION,
};
use crate::costmodel::{Budget, MIN_CHANNELS};
use crate::numerics::Nonlinearity;

pub const MIN_WIDTH_MULTIPLIER: f64 = 0.5;
pub const MAX_WIDTH_MULTIPLIER: f64 = 3.0;
pub const IMAGENET_CLASSES: usize = 1000;
pub const DEFAULT_PENULTIMATE: usize = 1280;
const STEM_WIDTH: f64 = 32.0;

/// Inverted-bottleneck stage repeats shared with MobileNetV2.
pub const REXNET_REPEATS: [usize; 7] = [1, 2, 3, 4, 3, 3, 1];
/// 1-based stage indices whose first block has stride 2.
pub const REXNET_STRIDED_STAGES: [usize; 4] = [2, 3, 4, 6];
pub const REXNET_DEPTH: usize = 17;
/// 1-based block indices with stride 2 in the MobileNetV1 body.
pub const PLAIN_STRIDED_BLOCKS: [usize; 4] = [2, 4, 6, 12];
pub const PLAIN_DEPTH: usize = 13;

/// Calibration targets at 224² and 1000 classes for the default channel lines.
pub const REXNET_TARGET: (u64, u64) = (4_800_000, 400_000_000);
pub const PLAIN_TARGET: (u64, u64) = (4_200_000, 569_000_000);
pub const CALIBRATION_RESOLUTION: usize = 224;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Rexnet,
    Plain,
    Lite,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Rexnet, Family::Plain, Family::Lite];

    pub fn name(self) -> &'static str {
        match self {
            Family::Rexnet => "rexnet",
            Family::Plain => "plain",
            Family::Lite => "lite",
        }
    }

    pub fn depth(self) -> usize {
        match self {
            Family::Plain => PLAIN_DEPTH,
            Family::Rexnet | Family::Lite => REXNET_DEPTH,
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = ArchError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| ArchError::InvalidParam(format!("unknown family `{s}` (expected rexnet, plain or lite)")))
    }
}

/// Knobs the builders expose; `Default` gives the documented defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildOptions {
    /// Channel line at multiplier 1; `None` uses the family's calibrated default.
    pub linear: Option<LinearParam>,
    /// SE in the inverted bottlenecks (full ReXNet only).
    pub use_se: bool,
    /// Whether the leading expansion-1 block also carries SE.
    pub se_first_block: bool,
    /// Penultimate width is `max(min_penultimate, round(1280·m))`.
    pub min_penultimate: usize,
    /// Hidden dense layer width for the lite family.
    pub lite_hidden: usize,
    pub classes: usize,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            linear: None,
            use_se: true,
            se_first_block: false,
            min_penultimate: DEFAULT_PENULTIMATE,
            lite_hidden: DEFAULT_PENULTIMATE,
            classes: IMAGENET_CLASSES,
        }
    }
}

/// A family skeleton at a fixed width; only the channel line varies.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub family: Family,
    pub width_multiplier: f64,
    pub options: BuildOptions,
}

impl Layout {
    pub fn new(family: Family, width_multiplier: f64) -> Self {
        Self {
            family,
            width_multiplier,
            options: BuildOptions::default(),
        }
    }

    pub fn depth(&self) -> usize {
        self.family.depth()
    }

    /// Builds this layout with the given channel line.
    pub fn spec_with(&self, linear: &LinearParam) -> Result<ModelSpec, ArchError> {
        check_multiplier(self.width_multiplier)?;
        if linear.depth_d != self.depth() {
            return Err(ArchError::InvalidParam(format!(
                "{} needs depth {}, got {}",
                self.family,
                self.depth(),
                linear.depth_d
            )));
        }
        let base = linear.channels()?;
        let channels = scale_channels(&base, self.width_multiplier);
        let m = self.width_multiplier;
        let o = &self.options;
        let penultimate = o.min_penultimate.max(round_scaled(DEFAULT_PENULTIMATE, m));
        let stem = round_scaled_f(STEM_WIDTH, m);
        let spec = match self.family {
            Family::Rexnet | Family::Lite => {
                let lite = self.family == Family::Lite;
                let (expand_act, other_act) = if lite {
                    (Nonlinearity::ReLU6, Nonlinearity::ReLU6)
                } else {
                    (Nonlinearity::SiLU, Nonlinearity::ReLU6)
                };
                let strides = stage_strides(&REXNET_REPEATS, &REXNET_STRIDED_STAGES);
                let mut in_ch = stem;
                let blocks = channels
                    .iter()
                    .zip(strides)
                    .enumerate()
                    .map(|(i, (&c, stride))| {
                        let b = BlockSpec {
                            kind: BlockKind::InvertedBottleneck,
                            out_channels: c,
                            stride,
                            expansion: if i == 0 { 1.0 } else { 6.0 },
                            use_se: !lite && o.use_se && (i > 0 || o.se_first_block),
                            act_after_expand: expand_act,
                            act_after_dw: Nonlinearity::ReLU6,
                            shortcut: padded_shortcut(stride, in_ch, c),
                        };
                        in_ch = c;
                        b
                    })
                    .collect();
                ModelSpec {
                    schema: SCHEMA_VERSION.into(),
                    name: format!("{}-x{m}", self.family),
                    stem: StemSpec {
                        out_channels: stem,
                        stride: 2,
                        nonlinearity: Nonlinearity::ReLU6,
                    },
                    blocks,
                    penultimate: PenultimateSpec {
                        out_channels: penultimate,
                        nonlinearity: if lite { other_act } else { Nonlinearity::SiLU },
                    },
                    head: HeadSpec {
                        hidden: lite.then_some(o.lite_hidden),
                        classes: o.classes,
                    },
                    metadata: None,
                }
            }
            Family::Plain => {
                let blocks = channels
                    .iter()
                    .enumerate()
                    .map(|(i, &c)| BlockSpec {
                        kind: BlockKind::DepthwiseSeparable,
                        out_channels: c,
                        stride: if PLAIN_STRIDED_BLOCKS.contains(&(i + 1)) { 2 } else { 1 },
                        expansion: 1.0,
                        use_se: false,
                        act_after_expand: Nonlinearity::SiLU,
                        act_after_dw: Nonlinearity::ReLU,
                        shortcut: Shortcut::None,
                    })
                    .collect();
                ModelSpec {
                    schema: SCHEMA_VERSION.into(),
                    name: format!("plain-x{m}"),
                    stem: StemSpec {
                        out_channels: stem,
                        stride: 2,
                        nonlinearity: Nonlinearity::ReLU,
                    },
                    blocks,
                    penultimate: PenultimateSpec {
                        out_channels: penultimate,
                        nonlinearity: Nonlinearity::SiLU,
                    },
                    head: HeadSpec {
                        hidden: None,
                        classes: o.classes,
                    },
                    metadata: None,
                }
            }
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Builds with `options.linear`, or the family default when unset.
    pub fn build(&self) -> Result<ModelSpec, ArchError> {
        let linear = match self.options.linear {
            Some(p) => p,
            None => default_linear(self.family)?,
        };
        self.spec_with(&linear)
    }
}

fn check_multiplier(m: f64) -> Result<(), ArchError> {
    if (MIN_WIDTH_MULTIPLIER..=MAX_WIDTH_MULTIPLIER).contains(&m) {
        Ok(())
    } else {
        Err(ArchError::InvalidParam(format!(
            "width multiplier must lie in [{MIN_WIDTH_MULTIPLIER}, {MAX_WIDTH_MULTIPLIER}], got {m}"
        )))
    }
}

fn round_scaled_f(c: f64, m: f64) -> usize {
    ((c * m).round() as usize).max(MIN_CHANNELS)
}

fn round_scaled(c: usize, m: f64) -> usize {
    round_scaled_f(c as f64, m)
}

/// `round(m·c_i)`, floored at the minimum width and kept non-decreasing.
pub fn scale_channels(base: &[usize], m: f64) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::with_capacity(base.len());
    for &c in base {
        let s = round_scaled(c, m);
        out.push(out.last().map_or(s, |&prev| prev.max(s)));
    }
    out
}

/// Per-block strides for a stage layout.
pub fn stage_strides(repeats: &[usize], strided_stages: &[usize]) -> Vec<usize> {
    repeats
        .iter()
        .enumerate()
        .flat_map(|(s, &n)| (0..n).map(move |j| if j == 0 && strided_stages.contains(&(s + 1)) { 2 } else { 1 }))
        .collect()
}

/// Zero-padded residual on stride-1 blocks that widen, identity on those that
/// keep width.
pub fn padded_shortcut(stride: usize, in_ch: usize, out_ch: usize) -> Shortcut {
    if stride != 1 || out_ch < in_ch {
        Shortcut::None
    } else if out_ch == in_ch {
        Shortcut::Identity
    } else {
        Shortcut::ZeroPad
    }
}

/// Channel line each family uses when none is given, calibrated once per
/// process against [`REXNET_TARGET`] (ReXNet and lite) or [`PLAIN_TARGET`].
pub fn default_linear(family: Family) -> Result<LinearParam, ArchError> {
    static REXNET: OnceLock<Result<LinearParam, String>> = OnceLock::new();
    static PLAIN: OnceLock<Result<LinearParam, String>> = OnceLock::new();
    let (cell, fam, target) = match family {
        Family::Rexnet | Family::Lite => (&REXNET, Family::Rexnet, REXNET_TARGET),
        Family::Plain => (&PLAIN, Family::Plain, PLAIN_TARGET),
    };
    cell.get_or_init(|| {
        let budget = Budget::new(Some(target.0), Some(target.1)).map_err(|e| e.to_string())?;
        calibrate_linear(&Layout::new(fam, 1.0), &budget, CALIBRATION_RESOLUTION)
            .map(|c| c.param)
            .map_err(|e| e.to_string())
    })
    .clone()
    .map_err(ArchError::InvalidParam)
}

pub fn build_rexnet(width_multiplier: f64) -> Result<ModelSpec, ArchError> {
    Layout::new(Family::Rexnet, width_multiplier).build()
}

pub fn build_rexnet_plain(width_multiplier: f64) -> Result<ModelSpec, ArchError> {
    Layout::new(Family::Plain, width_multiplier).build()
}

pub fn build_rexnet_lite(width_multiplier: f64) -> Result<ModelSpec, ArchError> {
    Layout::new(Family::Lite, width_multiplier).build()
}
