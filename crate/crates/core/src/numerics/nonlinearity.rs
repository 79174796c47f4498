use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::numerics::DenseMatrix;
use crate::scalar::Real;

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;
pub const DEFAULT_ELU_ALPHA: f64 = 1.0;

/// Element-wise activation. `Identity` is the linear control.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Nonlinearity {
    Identity,
    #[serde(rename = "relu")]
    ReLU,
    #[serde(rename = "relu6")]
    ReLU6,
    #[serde(rename = "leaky_relu")]
    LeakyReLU { slope: f64 },
    #[serde(rename = "elu")]
    ELU { alpha: f64 },
    #[serde(rename = "softplus")]
    SoftPlus,
    #[serde(rename = "hard_swish")]
    HardSwish,
    #[serde(rename = "silu")]
    SiLU,
}

impl Nonlinearity {
    /// Every activation of the rank study, Identity first.
    pub const ALL: [Nonlinearity; 8] = [
        Nonlinearity::Identity,
        Nonlinearity::ReLU,
        Nonlinearity::ReLU6,
        Nonlinearity::LeakyReLU {
            slope: DEFAULT_LEAKY_SLOPE,
        },
        Nonlinearity::ELU {
            alpha: DEFAULT_ELU_ALPHA,
        },
        Nonlinearity::SoftPlus,
        Nonlinearity::HardSwish,
        Nonlinearity::SiLU,
    ];

    pub fn leaky_relu() -> Self {
        Nonlinearity::LeakyReLU {
            slope: DEFAULT_LEAKY_SLOPE,
        }
    }

    pub fn elu() -> Self {
        Nonlinearity::ELU {
            alpha: DEFAULT_ELU_ALPHA,
        }
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, Nonlinearity::Identity)
    }

    /// Short lowercase name, also accepted by `FromStr`.
    pub fn name(&self) -> &'static str {
        match self {
            Nonlinearity::Identity => "identity",
            Nonlinearity::ReLU => "relu",
            Nonlinearity::ReLU6 => "relu6",
            Nonlinearity::LeakyReLU { .. } => "leaky-relu",
            Nonlinearity::ELU { .. } => "elu",
            Nonlinearity::SoftPlus => "softplus",
            Nonlinearity::HardSwish => "hard-swish",
            Nonlinearity::SiLU => "silu",
        }
    }

    #[inline]
    pub fn apply<T: Real>(&self, x: T) -> T {
        let zero = T::zero();
        match *self {
            Nonlinearity::Identity => x,
            Nonlinearity::ReLU => x.max(zero),
            Nonlinearity::ReLU6 => x.max(zero).min(T::of(6.0)),
            Nonlinearity::LeakyReLU { slope } => {
                if x >= zero {
                    x
                } else {
                    T::of(slope) * x
                }
            }
            Nonlinearity::ELU { alpha } => {
                if x >= zero {
                    x
                } else {
                    T::of(alpha) * x.exp_m1()
                }
            }
            // max(x, 0) + ln(1 + e^{-|x|}) avoids overflow for large |x|.
            Nonlinearity::SoftPlus => x.max(zero) + (-x.abs()).exp().ln_1p(),
            Nonlinearity::HardSwish => {
                let six = T::of(6.0);
                x * (x + T::of(3.0)).max(zero).min(six) / six
            }
            Nonlinearity::SiLU => x / (T::one() + (-x).exp()),
        }
    }

    pub fn apply_in_place<T: Real>(&self, values: &mut [T]) {
        if self.is_identity() {
            return;
        }
        for v in values {
            *v = self.apply(*v);
        }
    }
}

impl fmt::Display for Nonlinearity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, thiserror::Error)]
#[error("unknown nonlinearity `{0}` (expected one of identity, relu, relu6, leaky-relu, elu, softplus, hard-swish, silu)")]
pub struct UnknownNonlinearity(pub String);

impl FromStr for Nonlinearity {
    type Err = UnknownNonlinearity;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .trim()
            .to_ascii_lowercase()
            .chars()
            .filter(|c| !matches!(c, '-' | '_' | ' '))
            .collect();
        Ok(match key.as_str() {
            "identity" | "linear" | "none" => Nonlinearity::Identity,
            "relu" => Nonlinearity::ReLU,
            "relu6" => Nonlinearity::ReLU6,
            "leakyrelu" => Nonlinearity::leaky_relu(),
            "elu" => Nonlinearity::elu(),
            "softplus" => Nonlinearity::SoftPlus,
            "hardswish" | "hswish" => Nonlinearity::HardSwish,
            "silu" | "swish" | "swish1" => Nonlinearity::SiLU,
            _ => return Err(UnknownNonlinearity(s.to_string())),
        })
    }
}

/// Applies `f` to every entry of `m`.
pub fn apply_nonlinearity<T: Real>(f: Nonlinearity, m: &DenseMatrix<T>) -> DenseMatrix<T> {
    let mut out = m.clone();
    f.apply_in_place(out.as_mut_slice());
    out
}
