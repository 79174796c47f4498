use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::numerics::{gram_singular_values, matmul, rank_of_spectrum, standardize_rows_in_place, Nonlinearity, RankSettings};
use crate::randnet::{LayerArch, RandnetError};
use crate::Matrix;

/// Default spatial extent (H = W) for the convolutional kinds.
pub const DEFAULT_SPATIAL: usize = 7;
/// Batch sizes are multiples of this.
pub const BATCH_QUANTUM: usize = 32;
/// Flattened sample count must reach this multiple of `d_out`.
pub const SAMPLES_PER_OUTPUT: usize = 4;

/// 3×3 "same" convolution kernel on feature maps stored channel × (n, y, x).
#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Conv3x3 {
    /// `c_out × (c_in · 9)`, column index `ci · 9 + ky · 3 + kx`.
    Full(Matrix),
    /// `c × 9`, one filter per channel.
    Depthwise(Matrix),
}

#[derive(Debug, Clone, PartialEq)]
enum Layers {
    Pointwise(Matrix),
    Spatial(Conv3x3),
    Bottleneck {
        expand: Matrix,
        mid: Conv3x3,
        project: Matrix,
    },
}

/// One randomly initialised layer or block from the rank study.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomNetwork {
    arch: LayerArch,
    d_in: usize,
    d_out: usize,
    spatial: usize,
    layers: Layers,
}

/// Rank statistics of one forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankSample {
    pub rank_ratio: f64,
    pub nuclear_norm: f64,
}

pub(crate) fn he_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, fan_in: usize) -> Matrix {
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
    Matrix::from_raw(rows, cols, (0..rows * cols).map(|_| normal.sample(rng)).collect())
}

pub(crate) fn standard_normal_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit std");
    Matrix::from_raw(rows, cols, (0..rows * cols).map(|_| normal.sample(&mut rng)).collect())
}

/// Rounds half away from zero; the rounding used for every derived width.
#[inline]
pub fn round_width(x: f64) -> usize {
    x.round().max(0.0) as usize
}

/// Smallest multiple of [`BATCH_QUANTUM`] whose flattened sample count is at
/// least `SAMPLES_PER_OUTPUT · d_out`.
pub fn default_batch(arch: &LayerArch, d_out: usize, spatial: usize) -> usize {
    let hw = if arch.is_spatial() { spatial * spatial } else { 1 };
    let need = SAMPLES_PER_OUTPUT * d_out;
    let images = need.div_ceil(hw).max(1);
    images.div_ceil(BATCH_QUANTUM) * BATCH_QUANTUM
}

impl RandomNetwork {
    /// Draws He-normal weights (variance 2 / fan_in) for `arch`.
    pub fn sample(arch: LayerArch, d_in: usize, d_out: usize, spatial: usize, seed: u64) -> Result<Self, RandnetError> {
        if d_in < 1 || d_in > d_out {
            return Err(RandnetError::ChannelOrder { d_in, d_out });
        }
        if spatial < 1 {
            return Err(RandnetError::InvalidSpec("spatial size must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = match arch {
            LayerArch::Conv1x1 => Layers::Pointwise(he_matrix(&mut rng, d_out, d_in, d_in)),
            LayerArch::Conv3x3 => Layers::Spatial(Conv3x3::Full(he_matrix(&mut rng, d_out, d_in * 9, d_in * 9))),
            LayerArch::InvertedBottleneckConv { expansion } | LayerArch::InvertedBottleneckDwConv { expansion } => {
                let width = round_width(expansion * d_in as f64).max(1);
                let expand = he_matrix(&mut rng, width, d_in, d_in);
                let mid = if matches!(arch, LayerArch::InvertedBottleneckConv { .. }) {
                    Conv3x3::Full(he_matrix(&mut rng, width, width * 9, width * 9))
                } else {
                    Conv3x3::Depthwise(he_matrix(&mut rng, width, 9, 9))
                };
                let project = he_matrix(&mut rng, d_out, width, width);
                Layers::Bottleneck { expand, mid, project }
            }
        };
        let spatial = if arch.is_spatial() { spatial } else { 1 };
        Ok(Self {
            arch,
            d_in,
            d_out,
            spatial,
            layers,
        })
    }

    pub fn arch(&self) -> LayerArch {
        self.arch
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn d_out(&self) -> usize {
        self.d_out
    }

    /// H = W of the feature maps (1 for the pointwise kind).
    pub fn spatial(&self) -> usize {
        self.spatial
    }

    /// Width of the bottleneck's expanded representation, if any.
    pub fn expanded_width(&self) -> Option<usize> {
        match &self.layers {
            Layers::Bottleneck { expand, .. } => Some(expand.rows()),
            _ => None,
        }
    }

    /// Weight tensors in draw order.
    pub fn weights(&self) -> Vec<&Matrix> {
        fn conv(c: &Conv3x3) -> &Matrix {
            match c {
                Conv3x3::Full(m) | Conv3x3::Depthwise(m) => m,
            }
        }
        match &self.layers {
            Layers::Pointwise(w) => vec![w],
            Layers::Spatial(c) => vec![conv(c)],
            Layers::Bottleneck { expand, mid, project } => vec![expand, conv(mid), project],
        }
    }

    /// Same architecture with every weight set to zero.
    pub fn zeroed(&self) -> Self {
        let zero = |m: &Matrix| Matrix::zeros(m.rows(), m.cols());
        let zero_conv = |c: &Conv3x3| match c {
            Conv3x3::Full(m) => Conv3x3::Full(zero(m)),
            Conv3x3::Depthwise(m) => Conv3x3::Depthwise(zero(m)),
        };
        let layers = match &self.layers {
            Layers::Pointwise(w) => Layers::Pointwise(zero(w)),
            Layers::Spatial(c) => Layers::Spatial(zero_conv(c)),
            Layers::Bottleneck { expand, mid, project } => Layers::Bottleneck {
                expand: zero(expand),
                mid: zero_conv(mid),
                project: zero(project),
            },
        };
        Self { layers, ..self.clone() }
    }

    /// Runs the block on `input` (`d_in × samples`, samples = N·H·W).
    ///
    /// Single layers compute `f(BN(W·X))`. Bottlenecks compute
    /// expand → BN → f → 3×3 → BN → f → project → BN, then add the input
    /// zero-padded from `d_in` to `d_out` channels.
    pub fn forward(&self, f: Nonlinearity, input: &Matrix) -> Result<Matrix, RandnetError> {
        let hw = self.spatial * self.spatial;
        if input.rows() != self.d_in || input.cols() % hw != 0 {
            return Err(RandnetError::InvalidSpec(format!(
                "input shape {}x{} does not fit d_in={} with {}x{} maps",
                input.rows(),
                input.cols(),
                self.d_in,
                self.spatial,
                self.spatial
            )));
        }
        let bn_act = |mut m: Matrix, act: Nonlinearity| -> Result<Matrix, RandnetError> {
            standardize_rows_in_place(&mut m)?;
            act.apply_in_place(m.as_mut_slice());
            Ok(m)
        };
        match &self.layers {
            Layers::Pointwise(w) => bn_act(matmul(w, input)?, f),
            Layers::Spatial(conv) => bn_act(conv3x3(conv, input, self.spatial)?, f),
            Layers::Bottleneck { expand, mid, project } => {
                let h = bn_act(matmul(expand, input)?, f)?;
                let h = bn_act(conv3x3(mid, &h, self.spatial)?, f)?;
                let mut out = bn_act(matmul(project, &h)?, Nonlinearity::Identity)?;
                let cols = input.cols();
                for c in 0..self.d_in {
                    for (o, &x) in out.row_mut(c).iter_mut().zip(input.row(c)) {
                        *o += x;
                    }
                }
                debug_assert_eq!(out.cols(), cols);
                Ok(out)
            }
        }
    }

    /// Forward pass on standard-normal input, returning the output spectrum.
    pub fn forward_spectrum(&self, f: Nonlinearity, batch: usize, seed: u64) -> Result<Vec<f64>, RandnetError> {
        let samples = batch * self.spatial * self.spatial;
        if samples <= self.d_out {
            return Err(RandnetError::TooFewSamples {
                samples,
                d_out: self.d_out,
            });
        }
        let input = standard_normal_matrix(self.d_in, samples, seed);
        let out = self.forward(f, &input)?;
        Ok(gram_singular_values(&out)?)
    }

    /// Rank ratio (`rank / d_out`) and nuclear norm of the block output.
    pub fn forward_and_rank(
        &self,
        f: Nonlinearity,
        batch: usize,
        settings: &RankSettings,
        seed: u64,
    ) -> Result<RankSample, RandnetError> {
        let spectrum = self.forward_spectrum(f, batch, seed)?;
        Ok(sample_from_spectrum(&spectrum, self.d_out, settings))
    }
}

pub(crate) fn sample_from_spectrum(spectrum: &[f64], d_out: usize, settings: &RankSettings) -> RankSample {
    RankSample {
        rank_ratio: rank_of_spectrum(spectrum, settings) as f64 / d_out as f64,
        nuclear_norm: spectrum.iter().sum(),
    }
}

/// `sample_network` with the default spatial extent and seed-keyed weights.
pub fn sample_network(arch: LayerArch, d_in: usize, d_out: usize, seed: u64) -> Result<RandomNetwork, RandnetError> {
    RandomNetwork::sample(arch, d_in, d_out, DEFAULT_SPATIAL, seed)
}

/// Free-function form of [`RandomNetwork::forward_and_rank`].
pub fn forward_and_rank(
    net: &RandomNetwork,
    f: Nonlinearity,
    batch: usize,
    settings: &RankSettings,
    seed: u64,
) -> Result<RankSample, RandnetError> {
    net.forward_and_rank(f, batch, settings, seed)
}

/// Applies a 3×3 stride-1 convolution with zero padding.
pub(crate) fn conv3x3(kernel: &Conv3x3, input: &Matrix, spatial: usize) -> Result<Matrix, RandnetError> {
    match kernel {
        Conv3x3::Full(w) => {
            let cols = im2col3x3(input, spatial);
            Ok(matmul(w, &cols)?)
        }
        Conv3x3::Depthwise(w) => {
            if w.rows() != input.rows() {
                return Err(RandnetError::InvalidSpec(format!(
                    "depthwise kernel has {} channels, input has {}",
                    w.rows(),
                    input.rows()
                )));
            }
            Ok(depthwise3x3(w, input, spatial))
        }
    }
}

fn im2col3x3(input: &Matrix, spatial: usize) -> Matrix {
    let (c_in, samples) = input.shape();
    let hw = spatial * spatial;
    let images = samples / hw;
    let mut out = vec![0.0; c_in * 9 * samples];
    for c in 0..c_in {
        let src = input.row(c);
        for ky in 0..3 {
            for kx in 0..3 {
                let dst = &mut out[((c * 9 + ky * 3 + kx) * samples)..((c * 9 + ky * 3 + kx + 1) * samples)];
                shifted_copy(src, dst, images, spatial, ky, kx);
            }
        }
    }
    Matrix::from_raw(c_in * 9, samples, out)
}

/// dst[n, y, x] = src[n, y + ky − 1, x + kx − 1], zero outside the map.
#[inline]
fn shifted_copy(src: &[f64], dst: &mut [f64], images: usize, spatial: usize, ky: usize, kx: usize) {
    let hw = spatial * spatial;
    for n in 0..images {
        let base = n * hw;
        for y in 0..spatial {
            let sy = y + ky;
            if sy < 1 || sy > spatial {
                continue;
            }
            let sy = sy - 1;
            for x in 0..spatial {
                let sx = x + kx;
                if sx < 1 || sx > spatial {
                    continue;
                }
                dst[base + y * spatial + x] = src[base + sy * spatial + sx - 1];
            }
        }
    }
}

fn depthwise3x3(w: &Matrix, input: &Matrix, spatial: usize) -> Matrix {
    let (channels, samples) = input.shape();
    let hw = spatial * spatial;
    let images = samples / hw;
    let mut out = vec![0.0; channels * samples];
    for c in 0..channels {
        let src = input.row(c);
        let dst = &mut out[c * samples..(c + 1) * samples];
        let k = w.row(c);
        for ky in 0..3 {
            // Output rows y whose source row y + ky − 1 lies inside the map.
            let (y0, y1) = (1usize.saturating_sub(ky), (spatial + 1 - ky).min(spatial));
            for kx in 0..3 {
                let (x0, x1) = (1usize.saturating_sub(kx), (spatial + 1 - kx).min(spatial));
                let wk = k[ky * 3 + kx];
                for n in 0..images {
                    let base = n * hw;
                    for y in y0..y1 {
                        let d = base + y * spatial;
                        let s = base + (y + ky - 1) * spatial + kx;
                        for (o, &v) in dst[d + x0..d + x1].iter_mut().zip(&src[s + x0 - 1..s + x1 - 1]) {
                            *o += wk * v;
                        }
                    }
                }
            }
        }
    }
    Matrix::from_raw(channels, samples, out)
}
