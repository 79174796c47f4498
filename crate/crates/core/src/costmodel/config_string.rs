//! Stage-wise channel configuration strings such as
//! `32 / 16(×1)-24(×2)-32(×3)`.

use std::fmt::Write as _;

use crate::archspec::{BlockKind, BlockSpec, HeadSpec, ModelSpec, PenultimateSpec, Shortcut, StemSpec, SCHEMA_VERSION};
use crate::numerics::Nonlinearity;

/// Minimum accepted block width.
pub const MIN_CHANNELS: usize = 8;
const DEFAULT_EXPANSION: f64 = 6.0;
/// 1-based group indices whose first block downsamples.
const STRIDED_GROUPS: [usize; 4] = [2, 3, 4, 6];
const PENULTIMATE: usize = 1280;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("config string, byte {offset}: {message}")]
pub struct ConfigParseError {
    pub offset: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockConfig {
    pub out_channels: usize,
    pub stride: usize,
    pub expansion: f64,
    pub use_se: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelConfig {
    pub stem: usize,
    pub blocks: Vec<BlockConfig>,
}

impl ChannelConfig {
    pub fn channels(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.out_channels).collect()
    }

    /// MobileNetV2-style inverted-bottleneck network: ReLU6 everywhere,
    /// identity shortcuts on shape-preserving blocks, 1280-wide penultimate.
    pub fn to_model_spec(&self, name: &str, classes: usize) -> ModelSpec {
        let mut in_ch = self.stem;
        let blocks = self
            .blocks
            .iter()
            .map(|b| {
                let shortcut = if b.stride == 1 && b.out_channels == in_ch {
                    Shortcut::Identity
                } else {
                    Shortcut::None
                };
                in_ch = b.out_channels;
                BlockSpec {
                    kind: BlockKind::InvertedBottleneck,
                    out_channels: b.out_channels,
                    stride: b.stride,
                    expansion: b.expansion,
                    use_se: b.use_se,
                    act_after_expand: Nonlinearity::ReLU6,
                    act_after_dw: Nonlinearity::ReLU6,
                    shortcut,
                }
            })
            .collect();
        ModelSpec {
            schema: SCHEMA_VERSION.to_string(),
            name: name.to_string(),
            stem: StemSpec {
                out_channels: self.stem,
                stride: 2,
                nonlinearity: Nonlinearity::ReLU6,
            },
            blocks,
            penultimate: PenultimateSpec {
                out_channels: PENULTIMATE,
                nonlinearity: Nonlinearity::ReLU6,
            },
            head: HeadSpec { hidden: None, classes },
            metadata: None,
        }
    }
}

struct Cursor<'a> {
    s: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn err<T>(&self, message: impl Into<String>) -> Result<T, ConfigParseError> {
        Err(ConfigParseError {
            offset: self.pos,
            message: message.into(),
        })
    }

    fn rest(&self) -> &'a str {
        &self.s[self.pos..]
    }

    fn skip_ws(&mut self) {
        let rest = self.rest();
        self.pos += rest.len() - rest.trim_start().len();
    }

    fn eat(&mut self, token: &str) -> bool {
        self.skip_ws();
        if self.rest().starts_with(token) {
            self.pos += token.len();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, token: &str) -> Result<(), ConfigParseError> {
        if self.eat(token) {
            Ok(())
        } else {
            self.err(format!("expected `{token}`"))
        }
    }

    fn int(&mut self, what: &str) -> Result<usize, ConfigParseError> {
        self.skip_ws();
        let digits = self.rest().bytes().take_while(u8::is_ascii_digit).count();
        if digits == 0 {
            return self.err(format!("expected {what}"));
        }
        let start = self.pos;
        let value = self.rest()[..digits].parse::<usize>().map_err(|_| ConfigParseError {
            offset: start,
            message: format!("{what} is too large"),
        })?;
        self.pos += digits;
        Ok(value)
    }
}

/// Parses `<stem> / <c>(×<n>)-<c>(×<n>)-…`. The repeat marker accepts `×`,
/// `x` or `X`; whitespace between tokens is ignored. Group `g` (1-based) starts
/// with a stride-2 block when g ∈ {2, 3, 4, 6}; every block has expansion 6
/// except a leading expansion-1 block when the first group is no wider than
/// the stem.
pub fn parse_config_string(s: &str) -> Result<ChannelConfig, ConfigParseError> {
    let mut cur = Cursor { s, pos: 0 };
    let stem_at = {
        cur.skip_ws();
        cur.pos
    };
    let stem = cur.int("stem width")?;
    if stem < MIN_CHANNELS {
        return Err(ConfigParseError {
            offset: stem_at,
            message: format!("stem width {stem} is below {MIN_CHANNELS}"),
        });
    }
    cur.expect("/")?;
    let mut blocks = Vec::new();
    let mut group = 0;
    loop {
        group += 1;
        cur.skip_ws();
        let width_at = cur.pos;
        let width = cur.int("block width")?;
        if width < MIN_CHANNELS {
            return Err(ConfigParseError {
                offset: width_at,
                message: format!("block width {width} is below {MIN_CHANNELS}"),
            });
        }
        cur.expect("(")?;
        if !(cur.eat("×") || cur.eat("x") || cur.eat("X")) {
            return cur.err("expected repeat marker `×`");
        }
        cur.skip_ws();
        let repeat_at = cur.pos;
        let repeat = cur.int("repeat count")?;
        if repeat == 0 {
            return Err(ConfigParseError {
                offset: repeat_at,
                message: "repeat count must be positive".into(),
            });
        }
        cur.expect(")")?;
        for j in 0..repeat {
            let stride = if j == 0 && STRIDED_GROUPS.contains(&group) { 2 } else { 1 };
            let expansion = if blocks.is_empty() && width <= stem { 1.0 } else { DEFAULT_EXPANSION };
            blocks.push(BlockConfig {
                out_channels: width,
                stride,
                expansion,
                use_se: false,
            });
        }
        if cur.eat("-") {
            continue;
        }
        cur.skip_ws();
        if cur.pos != s.len() {
            return cur.err("expected `-` or end of input");
        }
        break;
    }
    Ok(ChannelConfig { stem, blocks })
}

/// Inverse of [`parse_config_string`]: runs of equal width become one group.
pub fn format_config_string(cfg: &ChannelConfig) -> String {
    let mut out = format!("{} / ", cfg.stem);
    let mut i = 0;
    let mut first = true;
    while i < cfg.blocks.len() {
        let width = cfg.blocks[i].out_channels;
        let mut j = i + 1;
        while j < cfg.blocks.len() && cfg.blocks[j].out_channels == width && cfg.blocks[j].stride == 1 {
            j += 1;
        }
        if !first {
            out.push('-');
        }
        first = false;
        write!(out, "{width}(×{})", j - i).expect("writing to a String");
        i = j;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const MBV2: &str = "32 / 16(×1)-24(×2)-32(×3)-64(×4)-96(×3)-160(×3)-320(×1)";

    #[test]
    fn prefix() {
        let c = parse_config_string("32 / 16(×1)-24(×2)").unwrap();
        assert_eq!(c.stem, 32);
        assert_eq!(c.channels(), vec![16, 24, 24]);
        assert_eq!(c.blocks[0].expansion, 1.0);
        assert_eq!(c.blocks[1].stride, 2);
        assert_eq!(c.blocks[2].stride, 1);
    }

    #[test]
    fn minimal() {
        let c = parse_config_string("16 / 16(×1)").unwrap();
        assert_eq!(c.stem, 16);
        assert_eq!(c.channels(), vec![16]);
    }

    #[test]
    fn mobilenet_v2_row() {
        let c = parse_config_string(MBV2).unwrap();
        assert_eq!(
            c.channels(),
            vec![16, 24, 24, 32, 32, 32, 64, 64, 64, 64, 96, 96, 96, 160, 160, 160, 320]
        );
        let strided: Vec<usize> = (0..17).filter(|&i| c.blocks[i].stride == 2).collect();
        assert_eq!(strided, vec![1, 3, 6, 13]);
        assert_eq!(c.blocks.iter().filter(|b| b.expansion == 1.0).count(), 1);
        assert_eq!(format_config_string(&c), MBV2);
    }

    #[test]
    fn ascii_marker_and_spacing() {
        let a = parse_config_string("32/16(x1)-24( X 2 )").unwrap();
        let b = parse_config_string("32 / 16(×1)-24(×2)").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn wide_first_group_keeps_expansion() {
        let c = parse_config_string("16 / 24(×2)").unwrap();
        assert!(c.blocks.iter().all(|b| b.expansion == 6.0));
    }

    #[test]
    fn errors_carry_byte_offsets() {
        let e = parse_config_string("32 / 16(×1)-24(y2)").unwrap_err();
        assert_eq!(e.offset, 16);
        let e = parse_config_string("32 16(×1)").unwrap_err();
        assert_eq!(e.offset, 3);
        let e = parse_config_string("32 / 4(×1)").unwrap_err();
        assert_eq!(e.offset, 5);
        let e = parse_config_string("32 / 16(×1) junk").unwrap_err();
        assert_eq!(e.offset, 13);
        assert!(parse_config_string("").is_err());
        assert!(parse_config_string("32 / 16(×0)").is_err());
    }
}
