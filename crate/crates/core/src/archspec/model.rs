use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::archspec::ArchError;
use crate::numerics::Nonlinearity;

/// Version tag written into every exported spec.
pub const SCHEMA_VERSION: &str = "rexrank-spec/1";

fn schema_version() -> String {
    SCHEMA_VERSION.to_string()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    /// 1×1 expand → 3×3 depthwise → 1×1 project.
    InvertedBottleneck,
    /// 3×3 depthwise → 1×1 pointwise.
    DepthwiseSeparable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shortcut {
    None,
    Identity,
    /// Input added to the first `in_channels` output channels.
    ZeroPad,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StemSpec {
    pub out_channels: usize,
    pub stride: usize,
    pub nonlinearity: Nonlinearity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockSpec {
    pub kind: BlockKind,
    pub out_channels: usize,
    pub stride: usize,
    pub expansion: f64,
    pub use_se: bool,
    /// Activation after the first 1×1 (expansion, or pointwise for
    /// depthwise-separable blocks).
    pub act_after_expand: Nonlinearity,
    pub act_after_dw: Nonlinearity,
    pub shortcut: Shortcut,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PenultimateSpec {
    pub out_channels: usize,
    pub nonlinearity: Nonlinearity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadSpec {
    /// Optional fully connected layer between pooling and the classifier.
    pub hidden: Option<usize>,
    pub classes: usize,
}

/// Layer-by-layer architecture description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(default = "schema_version")]
    pub schema: String,
    pub name: String,
    pub stem: StemSpec,
    pub blocks: Vec<BlockSpec>,
    pub penultimate: PenultimateSpec,
    pub head: HeadSpec,
    /// Free-form provenance (tool version, seed, flags); no effect on costs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<serde_json::Value>,
}

impl ModelSpec {
    pub fn channels(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.out_channels).collect()
    }

    /// Product of all strides from the stem onward.
    pub fn total_stride(&self) -> usize {
        self.blocks.iter().fold(self.stem.stride, |acc, b| acc * b.stride)
    }

    /// Checks structural invariants; the error carries the offending field path.
    pub fn validate(&self) -> Result<(), ArchError> {
        let fail = |path: String, message: String| Err(ArchError::Schema { path, message });
        if self.schema != SCHEMA_VERSION {
            return fail("schema".into(), format!("expected `{SCHEMA_VERSION}`, got `{}`", self.schema));
        }
        if self.stem.out_channels == 0 {
            return fail("stem.out_channels".into(), "must be positive".into());
        }
        if !matches!(self.stem.stride, 1 | 2) {
            return fail("stem.stride".into(), "must be 1 or 2".into());
        }
        if self.blocks.is_empty() {
            return fail("blocks".into(), "at least one block required".into());
        }
        let mut in_ch = self.stem.out_channels;
        for (i, b) in self.blocks.iter().enumerate() {
            let at = |field: &str| format!("blocks[{i}].{field}");
            if b.out_channels == 0 {
                return fail(at("out_channels"), "must be positive".into());
            }
            if i > 0 && b.out_channels < self.blocks[i - 1].out_channels {
                return fail(
                    at("out_channels"),
                    format!("{} is below the previous block's {}", b.out_channels, self.blocks[i - 1].out_channels),
                );
            }
            if !matches!(b.stride, 1 | 2) {
                return fail(at("stride"), "must be 1 or 2".into());
            }
            if !(b.expansion >= 1.0 && b.expansion.is_finite()) {
                return fail(at("expansion"), format!("must be >= 1, got {}", b.expansion));
            }
            match b.shortcut {
                Shortcut::None => {}
                _ if b.stride != 1 => {
                    return fail(at("shortcut"), "stride-2 blocks cannot carry a shortcut".into());
                }
                Shortcut::Identity if b.out_channels != in_ch => {
                    return fail(at("shortcut"), format!("identity needs {in_ch} -> {in_ch} channels"));
                }
                Shortcut::ZeroPad if b.out_channels < in_ch => {
                    return fail(at("shortcut"), format!("cannot zero-pad {in_ch} down to {}", b.out_channels));
                }
                _ => {}
            }
            in_ch = b.out_channels;
        }
        if self.penultimate.out_channels == 0 {
            return fail("penultimate.out_channels".into(), "must be positive".into());
        }
        if self.head.hidden == Some(0) {
            return fail("head.hidden".into(), "must be positive when present".into());
        }
        if self.head.classes == 0 {
            return fail("head.classes".into(), "must be positive".into());
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model spec serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ArchError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let spec: ModelSpec = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            ArchError::Schema {
                path,
                message: e.into_inner().to_string(),
            }
        })?;
        spec.validate()?;
        Ok(spec)
    }
}

pub fn export_spec(spec: &ModelSpec, path: &Path) -> Result<(), ArchError> {
    let mut text = spec.to_json();
    text.push('\n');
    fs::write(path, text).map_err(|source| ArchError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn import_spec(path: &Path) -> Result<ModelSpec, ArchError> {
    let text = fs::read_to_string(path).map_err(|source| ArchError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    ModelSpec::from_json(&text)
}
