//! Parameter and multiply-accumulate accounting.
//!
//! "FLOPs" throughout this crate means multiply-accumulates (MACs), the
//! convention under which MobileNetV2 at 224² costs 0.30B. Convolutions carry
//! no bias. Activations and pooling cost nothing. Batch-norm affine
//! parameters are reported per convolution but only enter model totals when
//! [`CostModel::count_bn`] is set; the default folds them away, which gives the
//! 3.4M-class MobileNetV2 count.

mod config_string;

use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use crate::archspec::{BlockKind, BlockSpec, ModelSpec};
use crate::randnet::round_width;

pub use config_string::{
    format_config_string, parse_config_string, BlockConfig, ChannelConfig, ConfigParseError, MIN_CHANNELS,
};

pub const DEFAULT_SE_REDUCTION: usize = 12;
pub const RGB_CHANNELS: usize = 3;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CostError {
    #[error("channels {c_in} -> {c_out} are not divisible by groups={groups}")]
    Groups { c_in: usize, c_out: usize, groups: usize },
    #[error("invalid layer geometry: {0}")]
    Geometry(String),
    #[error("resolution {resolution} is not divisible by {divisor}{}", context.as_deref().map(|c| format!(" ({c})")).unwrap_or_default())]
    Resolution {
        resolution: usize,
        divisor: usize,
        context: Option<String>,
    },
    #[error("budget bounds must be positive")]
    Budget,
}

/// Parameter and MAC count pair.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cost {
    pub params: u64,
    pub macs: u64,
}

impl Add for Cost {
    type Output = Cost;
    fn add(self, o: Cost) -> Cost {
        Cost {
            params: self.params + o.params,
            macs: self.macs + o.macs,
        }
    }
}

impl AddAssign for Cost {
    fn add_assign(&mut self, o: Cost) {
        *self = *self + o;
    }
}

/// One convolution followed by batch norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvCost {
    pub weight_params: u64,
    /// Scale and shift of the following batch norm (2 · c_out).
    pub bn_params: u64,
    pub macs: u64,
}

impl ConvCost {
    /// Weights plus batch-norm affine parameters.
    pub fn params(&self) -> u64 {
        self.weight_params + self.bn_params
    }
}

/// `k × k` convolution with `groups` groups evaluated on an `h × w` output map.
pub fn conv_cost(k: usize, c_in: usize, c_out: usize, h: usize, w: usize, groups: usize) -> Result<ConvCost, CostError> {
    if groups == 0 || c_in % groups != 0 || c_out % groups != 0 {
        return Err(CostError::Groups { c_in, c_out, groups });
    }
    if k == 0 || c_in == 0 || c_out == 0 || h == 0 || w == 0 {
        return Err(CostError::Geometry(format!("k={k}, {c_in}->{c_out}, {h}x{w}")));
    }
    let (k, c_in, c_out, h, w, g) = (k as u64, c_in as u64, c_out as u64, h as u64, w as u64, groups as u64);
    let weight_params = k * k * c_in * c_out / g;
    Ok(ConvCost {
        weight_params,
        bn_params: 2 * c_out,
        macs: weight_params * h * w,
    })
}

/// Fully connected layer with bias.
pub fn dense_cost(c_in: usize, c_out: usize) -> Cost {
    let (c_in, c_out) = (c_in as u64, c_out as u64);
    Cost {
        params: c_in * c_out + c_out,
        macs: c_in * c_out,
    }
}

/// Squeeze-and-excitation on `channels` at an `h × w` map: pool, reduce to
/// ⌈channels / reduction⌉, expand back, both projections with bias.
pub fn se_cost(channels: usize, reduction: usize, h: usize, w: usize) -> Cost {
    let c = channels as u64;
    let r = channels.div_ceil(reduction.max(1)) as u64;
    let params = 2 * c * r + c + r;
    Cost {
        params,
        macs: params + c * (h * w) as u64,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCost {
    pub name: String,
    pub params: u64,
    pub macs: u64,
}

/// Totals plus the per-layer breakdown they are summed from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    pub params: u64,
    pub macs: u64,
    pub per_layer: Vec<LayerCost>,
}

impl CostReport {
    fn from_layers(per_layer: Vec<LayerCost>) -> Self {
        let params = per_layer.iter().map(|l| l.params).sum();
        let macs = per_layer.iter().map(|l| l.macs).sum();
        Self { params, macs, per_layer }
    }

    pub fn cost(&self) -> Cost {
        Cost {
            params: self.params,
            macs: self.macs,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("cost report serializes")
    }
}

/// Per-block breakdown returned by [`CostModel::block_cost`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockCost {
    pub params: u64,
    pub macs: u64,
    pub out_resolution: usize,
    pub layers: Vec<LayerCost>,
}

/// Resource budget; `None` means unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Budget {
    pub max_params: Option<u64>,
    pub max_macs: Option<u64>,
}

impl Budget {
    pub fn new(max_params: Option<u64>, max_macs: Option<u64>) -> Result<Self, CostError> {
        if max_params == Some(0) || max_macs == Some(0) {
            return Err(CostError::Budget);
        }
        Ok(Self { max_params, max_macs })
    }

    pub fn unbounded() -> Self {
        Self::default()
    }

    pub fn admits(&self, cost: Cost) -> bool {
        self.max_params.map_or(true, |p| cost.params <= p) && self.max_macs.map_or(true, |m| cost.macs <= m)
    }
}

/// True iff both bounds hold.
pub fn check_budget(report: &CostReport, budget: &Budget) -> bool {
    budget.admits(report.cost())
}

/// Accounting conventions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostModel {
    pub se_reduction: usize,
    pub count_bn: bool,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            se_reduction: DEFAULT_SE_REDUCTION,
            count_bn: false,
        }
    }
}

impl CostModel {
    fn conv_layer(&self, name: String, c: ConvCost) -> LayerCost {
        LayerCost {
            name,
            params: c.weight_params + if self.count_bn { c.bn_params } else { 0 },
            macs: c.macs,
        }
    }

    /// Cost of one block entered with `in_channels` at `in_resolution`².
    /// The depthwise convolution carries the stride.
    pub fn block_cost(&self, block: &BlockSpec, in_channels: usize, in_resolution: usize) -> Result<BlockCost, CostError> {
        self.block_cost_named(block, in_channels, in_resolution, "block")
    }

    fn block_cost_named(
        &self,
        block: &BlockSpec,
        in_channels: usize,
        in_resolution: usize,
        prefix: &str,
    ) -> Result<BlockCost, CostError> {
        if block.stride == 0 || in_resolution % block.stride != 0 {
            return Err(CostError::Resolution {
                resolution: in_resolution,
                divisor: block.stride.max(1),
                context: Some(format!("{prefix} stride")),
            });
        }
        let out_res = in_resolution / block.stride;
        let mut layers = Vec::with_capacity(4);
        let mid = match block.kind {
            BlockKind::InvertedBottleneck => {
                if block.expansion == 1.0 {
                    in_channels
                } else {
                    let width = round_width(block.expansion * in_channels as f64);
                    let c = conv_cost(1, in_channels, width, in_resolution, in_resolution, 1)?;
                    layers.push(self.conv_layer(format!("{prefix}.expand"), c));
                    width
                }
            }
            BlockKind::DepthwiseSeparable => in_channels,
        };
        let dw = conv_cost(3, mid, mid, out_res, out_res, mid)?;
        layers.push(self.conv_layer(format!("{prefix}.dw"), dw));
        if block.use_se {
            let se = se_cost(mid, self.se_reduction, out_res, out_res);
            layers.push(LayerCost {
                name: format!("{prefix}.se"),
                params: se.params,
                macs: se.macs,
            });
        }
        let pw = conv_cost(1, mid, block.out_channels, out_res, out_res, 1)?;
        let pw_name = match block.kind {
            BlockKind::InvertedBottleneck => "project",
            BlockKind::DepthwiseSeparable => "pw",
        };
        layers.push(self.conv_layer(format!("{prefix}.{pw_name}"), pw));
        Ok(BlockCost {
            params: layers.iter().map(|l| l.params).sum(),
            macs: layers.iter().map(|l| l.macs).sum(),
            out_resolution: out_res,
            layers,
        })
    }

    /// Stem, blocks, penultimate 1×1, global pooling, optional hidden dense
    /// layer and classifier.
    pub fn model_cost(&self, spec: &ModelSpec, input_resolution: usize, num_classes: usize) -> Result<CostReport, CostError> {
        let total = spec.total_stride();
        if input_resolution == 0 || input_resolution % total != 0 {
            return Err(CostError::Resolution {
                resolution: input_resolution,
                divisor: total,
                context: Some("total stride".into()),
            });
        }
        if num_classes == 0 {
            return Err(CostError::Geometry("num_classes must be positive".into()));
        }
        let mut layers = Vec::with_capacity(4 * spec.blocks.len() + 5);
        let mut res = input_resolution / spec.stem.stride;
        let stem = conv_cost(3, RGB_CHANNELS, spec.stem.out_channels, res, res, 1)?;
        layers.push(self.conv_layer("stem".into(), stem));
        let mut ch = spec.stem.out_channels;
        for (i, block) in spec.blocks.iter().enumerate() {
            let bc = self.block_cost_named(block, ch, res, &format!("blocks.{i}"))?;
            layers.extend(bc.layers);
            res = bc.out_resolution;
            ch = block.out_channels;
        }
        let pen = conv_cost(1, ch, spec.penultimate.out_channels, res, res, 1)?;
        layers.push(self.conv_layer("penultimate".into(), pen));
        layers.push(LayerCost {
            name: "pool".into(),
            params: 0,
            macs: 0,
        });
        let mut feat = spec.penultimate.out_channels;
        if let Some(hidden) = spec.head.hidden {
            let d = dense_cost(feat, hidden);
            layers.push(LayerCost {
                name: "head.hidden".into(),
                params: d.params,
                macs: d.macs,
            });
            feat = hidden;
        }
        let cls = dense_cost(feat, num_classes);
        layers.push(LayerCost {
            name: "classifier".into(),
            params: cls.params,
            macs: cls.macs,
        });
        Ok(CostReport::from_layers(layers))
    }
}

/// [`CostModel::model_cost`] under default conventions.
pub fn model_cost(spec: &ModelSpec, input_resolution: usize, num_classes: usize) -> Result<CostReport, CostError> {
    CostModel::default().model_cost(spec, input_resolution, num_classes)
}

/// [`CostModel::block_cost`] under default conventions.
pub fn block_cost(block: &BlockSpec, in_channels: usize, in_resolution: usize) -> Result<BlockCost, CostError> {
    CostModel::default().block_cost(block, in_channels, in_resolution)
}
