//! Random-network rank study.
//!
//! Builds randomly sized single layers and inverted bottlenecks, feeds them
//! Gaussian inputs and measures how much of the output channel dimension the
//! resulting feature matrix actually spans, swept over the input/output
//! channel ratio.

mod network;

use std::fmt;
use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::numerics::{Nonlinearity, NumericsError, RankSettings};
use crate::seed::derive_seed;

pub use network::{
    default_batch, forward_and_rank, round_width, sample_network, RandomNetwork, RankSample, BATCH_QUANTUM,
    DEFAULT_SPATIAL, SAMPLES_PER_OUTPUT,
};
pub(crate) use network::{conv3x3, he_matrix, sample_from_spectrum, standard_normal_matrix, Conv3x3};

pub const DEFAULT_EXPANSION: f64 = 6.0;
pub const DEFAULT_TRIALS: usize = 200;
pub const DEFAULT_D_OUT_RANGE: (usize, usize) = (32, 128);

#[derive(Debug, thiserror::Error)]
pub enum RandnetError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("need 1 <= d_in <= d_out, got d_in={d_in}, d_out={d_out}")]
    ChannelOrder { d_in: usize, d_out: usize },
    #[error("{samples} flattened samples cannot resolve rank of {d_out} output channels")]
    TooFewSamples { samples: usize, d_out: usize },
    #[error("invalid sweep: {0}")]
    InvalidSpec(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}:{line}: {message}", path.display())]
    Parse { path: PathBuf, line: usize, message: String },
}

/// Block kinds of the rank study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerArch {
    Conv1x1,
    Conv3x3,
    InvertedBottleneckConv { expansion: f64 },
    InvertedBottleneckDwConv { expansion: f64 },
}

impl LayerArch {
    pub const ALL: [LayerArch; 4] = [
        LayerArch::Conv1x1,
        LayerArch::Conv3x3,
        LayerArch::InvertedBottleneckConv {
            expansion: DEFAULT_EXPANSION,
        },
        LayerArch::InvertedBottleneckDwConv {
            expansion: DEFAULT_EXPANSION,
        },
    ];

    pub fn ib_conv() -> Self {
        LayerArch::InvertedBottleneckConv {
            expansion: DEFAULT_EXPANSION,
        }
    }

    pub fn ib_dw() -> Self {
        LayerArch::InvertedBottleneckDwConv {
            expansion: DEFAULT_EXPANSION,
        }
    }

    pub fn is_spatial(&self) -> bool {
        !matches!(self, LayerArch::Conv1x1)
    }

    pub fn is_bottleneck(&self) -> bool {
        matches!(
            self,
            LayerArch::InvertedBottleneckConv { .. } | LayerArch::InvertedBottleneckDwConv { .. }
        )
    }

    pub fn name(&self) -> &'static str {
        match self {
            LayerArch::Conv1x1 => "conv1x1",
            LayerArch::Conv3x3 => "conv3x3",
            LayerArch::InvertedBottleneckConv { .. } => "ib-conv",
            LayerArch::InvertedBottleneckDwConv { .. } => "ib-dw",
        }
    }

    fn validate(&self) -> Result<(), RandnetError> {
        match *self {
            LayerArch::InvertedBottleneckConv { expansion } | LayerArch::InvertedBottleneckDwConv { expansion }
                if !(expansion >= 1.0 && expansion.is_finite()) =>
            {
                Err(RandnetError::InvalidSpec(format!("expansion must be >= 1, got {expansion}")))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for LayerArch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LayerArch {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "1x1" | "conv1x1" => Ok(LayerArch::Conv1x1),
            "3x3" | "conv3x3" => Ok(LayerArch::Conv3x3),
            "ib-conv" | "ib_conv" | "ibconv" => Ok(LayerArch::ib_conv()),
            "ib-dw" | "ib_dw" | "ibdw" | "ib-dwconv" => Ok(LayerArch::ib_dw()),
            other => Err(format!("unknown architecture `{other}` (expected 1x1, 3x3, ib-conv, ib-dw)")),
        }
    }
}

/// `count` evenly spaced ratios from 0.1 to 1.0 inclusive.
pub fn default_ratio_grid(count: usize) -> Vec<f64> {
    match count {
        0 => vec![],
        1 => vec![0.1],
        _ => (0..count)
            .map(|i| {
                let r = 0.1 + 0.9 * i as f64 / (count - 1) as f64;
                // keep grid labels clean (0.3, not 0.30000000000000004)
                (r * 1e9).round() / 1e9
            })
            .collect(),
    }
}

/// One sweep: an architecture, an activation and a grid of d_in / d_out ratios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub arch: LayerArch,
    pub nonlinearity: Nonlinearity,
    pub ratio_grid: Vec<f64>,
    pub trials: usize,
    /// Inclusive range `d_out` is drawn from.
    pub d_out_range: (usize, usize),
    pub spatial: usize,
    pub master_seed: u64,
}

impl SweepSpec {
    pub fn new(arch: LayerArch, nonlinearity: Nonlinearity) -> Self {
        Self {
            arch,
            nonlinearity,
            ratio_grid: default_ratio_grid(10),
            trials: DEFAULT_TRIALS,
            d_out_range: DEFAULT_D_OUT_RANGE,
            spatial: DEFAULT_SPATIAL,
            master_seed: 42,
        }
    }

    pub fn validate(&self) -> Result<(), RandnetError> {
        self.arch.validate()?;
        let bad = |m: &str| Err(RandnetError::InvalidSpec(m.to_string()));
        if self.ratio_grid.is_empty() {
            return bad("ratio grid is empty");
        }
        if self.ratio_grid.iter().any(|&r| !(0.1..=1.0).contains(&r)) {
            return bad("ratios must lie in [0.1, 1.0]");
        }
        if self.ratio_grid.windows(2).any(|w| w[1] <= w[0]) {
            return bad("ratio grid must be strictly increasing");
        }
        if self.trials < 1 {
            return bad("trials must be >= 1");
        }
        let (lo, hi) = self.d_out_range;
        if lo < 8 || hi < lo {
            return bad("d_out range must satisfy 8 <= min <= max");
        }
        if self.spatial < 1 {
            return bad("spatial size must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub ratio: f64,
    pub mean_rank_ratio: f64,
    pub std_rank_ratio: f64,
    pub mean_nuclear_norm: f64,
}

/// Averaged rank ratio per grid ratio for one (architecture, activation) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankCurve {
    pub spec: SweepSpec,
    pub settings: RankSettings,
    pub points: Vec<CurvePoint>,
}

impl RankCurve {
    pub fn point_at(&self, ratio: f64) -> Option<&CurvePoint> {
        self.points.iter().find(|p| (p.ratio - ratio).abs() < 1e-9)
    }
}

/// One trial's outcome before any tolerance is applied.
struct TrialSpectrum {
    d_out: usize,
    spectrum: Vec<f64>,
}

fn run_trial(spec: &SweepSpec, ratio_index: usize, ratio: f64, trial: usize) -> Result<TrialSpectrum, RandnetError> {
    let seed = derive_seed(spec.master_seed, &[ratio_index as u64, trial as u64]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d_out = rng.gen_range(spec.d_out_range.0..=spec.d_out_range.1);
    let d_in = round_width(ratio * d_out as f64).clamp(1, d_out);
    let net = RandomNetwork::sample(spec.arch, d_in, d_out, spec.spatial, derive_seed(seed, &[1]))?;
    let batch = default_batch(&spec.arch, d_out, spec.spatial);
    let spectrum = net.forward_spectrum(spec.nonlinearity, batch, derive_seed(seed, &[2]))?;
    Ok(TrialSpectrum { d_out, spectrum })
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Runs the sweep once and evaluates the rank under several tolerances, one
/// curve per entry of `settings`. Trials may run concurrently; aggregation
/// always walks them in trial-index order.
pub fn run_sweep_multi(spec: &SweepSpec, settings: &[RankSettings]) -> Result<Vec<RankCurve>, RandnetError> {
    spec.validate()?;
    let mut points: Vec<Vec<CurvePoint>> = vec![Vec::with_capacity(spec.ratio_grid.len()); settings.len()];
    for (ri, &ratio) in spec.ratio_grid.iter().enumerate() {
        let trials: Vec<TrialSpectrum> = (0..spec.trials)
            .into_par_iter()
            .map(|t| run_trial(spec, ri, ratio, t))
            .collect::<Result<_, _>>()?;
        let norms: Vec<f64> = trials.iter().map(|t| t.spectrum.iter().sum()).collect();
        let (mean_nuclear_norm, _) = mean_std(&norms);
        for (si, s) in settings.iter().enumerate() {
            let ratios: Vec<f64> = trials
                .iter()
                .map(|t| sample_from_spectrum(&t.spectrum, t.d_out, s).rank_ratio)
                .collect();
            let (mean_rank_ratio, std_rank_ratio) = mean_std(&ratios);
            points[si].push(CurvePoint {
                ratio,
                mean_rank_ratio,
                std_rank_ratio,
                mean_nuclear_norm,
            });
        }
    }
    Ok(settings
        .iter()
        .zip(points)
        .map(|(s, points)| RankCurve {
            spec: spec.clone(),
            settings: *s,
            points,
        })
        .collect())
}

pub fn run_sweep(spec: &SweepSpec, settings: &RankSettings) -> Result<RankCurve, RandnetError> {
    Ok(run_sweep_multi(spec, std::slice::from_ref(settings))?
        .pop()
        .expect("one curve per setting"))
}

pub const CURVE_CSV_HEADER: &str = "ratio,mean_rank_ratio,std_rank_ratio,mean_nuclear_norm";

/// Nine significant digits in scientific notation.
pub(crate) fn sig9(x: f64) -> String {
    format!("{x:.8e}")
}

/// Writes the curve as CSV, optionally preceded by `# ` comment lines.
pub fn write_curve_csv<W: Write>(curve: &RankCurve, mut out: W, comments: &[String]) -> io::Result<()> {
    for c in comments {
        writeln!(out, "# {c}")?;
    }
    writeln!(out, "{CURVE_CSV_HEADER}")?;
    for p in &curve.points {
        writeln!(
            out,
            "{},{},{},{}",
            sig9(p.ratio),
            sig9(p.mean_rank_ratio),
            sig9(p.std_rank_ratio),
            sig9(p.mean_nuclear_norm)
        )?;
    }
    Ok(())
}

pub fn emit_curve_csv(curve: &RankCurve, path: &Path) -> Result<(), RandnetError> {
    emit_curve_csv_with_comments(curve, path, &[])
}

pub fn emit_curve_csv_with_comments(curve: &RankCurve, path: &Path, comments: &[String]) -> Result<(), RandnetError> {
    let io_err = |source| RandnetError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut buf = Vec::new();
    write_curve_csv(curve, &mut buf, comments).map_err(io_err)?;
    fs::write(path, buf).map_err(io_err)
}

/// Reads back the points of a curve CSV (comment lines skipped).
pub fn read_curve_csv(path: &Path) -> Result<Vec<CurvePoint>, RandnetError> {
    let file = fs::File::open(path).map_err(|source| RandnetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let parse_err = |line: usize, message: String| RandnetError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut points = Vec::new();
    let mut seen_header = false;
    for (i, line) in io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| RandnetError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        if !seen_header {
            if line != CURVE_CSV_HEADER {
                return Err(parse_err(i + 1, format!("unexpected header `{line}`")));
            }
            seen_header = true;
            continue;
        }
        let fields: Vec<f64> = line
            .split(',')
            .map(|f| f.parse::<f64>().map_err(|e| parse_err(i + 1, e.to_string())))
            .collect::<Result<_, _>>()?;
        if fields.len() != 4 {
            return Err(parse_err(i + 1, format!("expected 4 fields, got {}", fields.len())));
        }
        points.push(CurvePoint {
            ratio: fields[0],
            mean_rank_ratio: fields[1],
            std_rank_ratio: fields[2],
            mean_nuclear_norm: fields[3],
        });
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(arch: LayerArch, f: Nonlinearity) -> SweepSpec {
        SweepSpec {
            ratio_grid: vec![0.1, 0.5, 1.0],
            trials: 4,
            d_out_range: (16, 32),
            ..SweepSpec::new(arch, f)
        }
    }

    #[test]
    fn default_grid() {
        let g = default_ratio_grid(10);
        assert_eq!(g.len(), 10);
        assert_eq!(g[0], 0.1);
        assert_eq!(g[9], 1.0);
        assert_eq!(g[2], 0.3);
    }

    #[test]
    fn validation() {
        let mut s = small(LayerArch::Conv1x1, Nonlinearity::ReLU);
        assert!(s.validate().is_ok());
        s.ratio_grid = vec![0.5, 0.4];
        assert!(s.validate().is_err());
        s.ratio_grid = vec![0.05];
        assert!(s.validate().is_err());
        s.ratio_grid = vec![0.5];
        s.d_out_range = (4, 16);
        assert!(s.validate().is_err());
        s.d_out_range = (16, 32);
        s.arch = LayerArch::InvertedBottleneckDwConv { expansion: 0.5 };
        assert!(s.validate().is_err());
    }

    #[test]
    fn sweep_is_deterministic() {
        let spec = small(LayerArch::ib_dw(), Nonlinearity::SiLU);
        let a = run_sweep(&spec, &RankSettings::default()).unwrap();
        let b = run_sweep(&spec, &RankSettings::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.points.len(), 3);
    }

    #[test]
    fn multi_matches_single() {
        let spec = small(LayerArch::Conv1x1, Nonlinearity::ELU { alpha: 1.0 });
        let tols = [RankSettings::new(1e-1).unwrap(), RankSettings::new(1e-3).unwrap()];
        let multi = run_sweep_multi(&spec, &tols).unwrap();
        for (curve, t) in multi.iter().zip(&tols) {
            assert_eq!(curve, &run_sweep(&spec, t).unwrap());
        }
    }

    #[test]
    fn arch_names_parse() {
        for a in LayerArch::ALL {
            assert_eq!(a.name().parse::<LayerArch>().unwrap(), a);
        }
        assert!("5x5".parse::<LayerArch>().is_err());
    }
}
