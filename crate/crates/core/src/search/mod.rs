//! Budget-constrained random search over piecewise-linear channel
//! configurations, with pluggable fitness and decile aggregation.
//!
//! The default fitness is a rank surrogate: the numerical rank ratio of the
//! final block's features under random weights. It stands in for trained
//! accuracy and makes no claim of equivalence.

mod aggregate;
mod external;
mod proxy;
mod sampler;

use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::archspec::{BlockKind, BlockSpec, HeadSpec, ModelSpec, PenultimateSpec, Shortcut, StemSpec, SCHEMA_VERSION};
use crate::costmodel::{Budget, CostError, CostReport};
use crate::numerics::{Nonlinearity, NumericsError, RankSettings};
use crate::randnet::RandnetError;

pub use aggregate::{aggregate, bucket_size, emit_run, emit_run_with_metadata, format_channels, Bucket, Deciles, SearchRun};
pub use external::{read_scores, write_candidates_json, CANDIDATES_FILE, SCORES_FILE};
pub use proxy::rank_score;
pub use sampler::{sample_candidate, sample_candidates, PiecewiseLinear, MAX_ATTEMPTS};

pub const DEFAULT_MAX_PIECES: usize = 3;
pub const DEFAULT_STEM: usize = 16;
pub const DEFAULT_RESOLUTION: usize = 32;
pub const DEFAULT_PENULTIMATE: usize = 256;
pub const DEFAULT_CLASSES: usize = 100;
pub const DEFAULT_CANDIDATES: usize = 200;
pub const DEFAULT_TRIALS: usize = 16;
pub const MIN_TRIALS: usize = 8;
pub const MIN_CANDIDATES: usize = 10;
pub const EXPANSION: f64 = 6.0;
/// Strides of the five proxy stages, spread over however many blocks there are.
pub const STAGE_STRIDES: [usize; 5] = [1, 1, 2, 2, 2];

#[derive(Debug, thiserror::Error)]
pub enum SearchError {
    #[error("invalid search spec: {0}")]
    InvalidSpec(String),
    #[error(
        "no feasible candidate within {attempts} attempts; tightest found costs {params} params / {macs} macs"
    )]
    Infeasible { attempts: usize, params: u64, macs: u64 },
    #[error("candidate {0} has no score")]
    Unscored(usize),
    #[error("scores exchange: {0}")]
    Exchange(String),
    #[error("timed out after {0:?} waiting for scores")]
    Timeout(Duration),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error(transparent)]
    Randnet(#[from] RandnetError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FitnessKind {
    /// Mean final-feature rank ratio over `trials` random-weight draws.
    RankScore { trials: usize, settings: RankSettings },
    /// Out-of-process scoring through `candidates.json` / `scores.json`.
    External {
        exchange_dir: PathBuf,
        /// Give up waiting after this long; `None` waits indefinitely.
        timeout: Option<Duration>,
    },
}

impl Default for FitnessKind {
    fn default() -> Self {
        FitnessKind::RankScore {
            trials: DEFAULT_TRIALS,
            settings: RankSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpec {
    pub depth_d: usize,
    pub budget: Budget,
    pub num_candidates: usize,
    pub max_pieces: usize,
    pub stem: usize,
    pub resolution: usize,
    pub penultimate: usize,
    pub classes: usize,
    pub fitness: FitnessKind,
    pub master_seed: u64,
}

impl SearchSpec {
    pub fn new(depth_d: usize, budget: Budget) -> Self {
        Self {
            depth_d,
            budget,
            num_candidates: DEFAULT_CANDIDATES,
            max_pieces: DEFAULT_MAX_PIECES,
            stem: DEFAULT_STEM,
            resolution: DEFAULT_RESOLUTION,
            penultimate: DEFAULT_PENULTIMATE,
            classes: DEFAULT_CLASSES,
            fitness: FitnessKind::default(),
            master_seed: 42,
        }
    }

    pub fn validate(&self) -> Result<(), SearchError> {
        let bad = |m: String| Err(SearchError::InvalidSpec(m));
        if self.depth_d < 2 {
            return bad(format!("depth must be at least 2, got {}", self.depth_d));
        }
        if self.num_candidates < MIN_CANDIDATES {
            return bad(format!("need at least {MIN_CANDIDATES} candidates, got {}", self.num_candidates));
        }
        if self.max_pieces < 1 {
            return bad("max_pieces must be at least 1".into());
        }
        if self.stem == 0 || self.penultimate == 0 || self.classes == 0 {
            return bad("stem, penultimate and classes must be positive".into());
        }
        if self.budget.max_params.is_none() && self.budget.max_macs.is_none() {
            return bad("budget needs at least one bound".into());
        }
        if self.budget.max_params == Some(0) || self.budget.max_macs == Some(0) {
            return bad("budget bounds must be positive".into());
        }
        let total = self.strides().iter().product::<usize>();
        if self.resolution == 0 || self.resolution % total != 0 {
            return bad(format!("resolution {} is not divisible by total stride {total}", self.resolution));
        }
        if let FitnessKind::RankScore { trials, .. } = self.fitness {
            if trials < MIN_TRIALS {
                return bad(format!("rank score needs at least {MIN_TRIALS} trials, got {trials}"));
            }
        }
        Ok(())
    }

    /// Per-block strides: block `i` belongs to stage `⌊5i / d⌋`, and each
    /// stage's first block carries that stage's stride.
    pub fn strides(&self) -> Vec<usize> {
        let d = self.depth_d;
        let stages = STAGE_STRIDES.len();
        let mut prev = usize::MAX;
        (0..d)
            .map(|i| {
                let s = i * stages / d;
                let first = s != prev;
                prev = s;
                if first {
                    STAGE_STRIDES[s]
                } else {
                    1
                }
            })
            .collect()
    }

    /// Fixed proxy network with the given block widths: stem 3×3 + BN + ReLU,
    /// expansion-6 inverted bottlenecks with ReLU6, identity shortcuts on
    /// shape-preserving blocks, and the penultimate 1×1 expansion.
    pub fn skeleton(&self, channels: &[usize]) -> ModelSpec {
        let mut in_ch = self.stem;
        let blocks = channels
            .iter()
            .zip(self.strides())
            .map(|(&c, stride)| {
                let shortcut = if stride == 1 && c == in_ch {
                    Shortcut::Identity
                } else {
                    Shortcut::None
                };
                in_ch = c;
                BlockSpec {
                    kind: BlockKind::InvertedBottleneck,
                    out_channels: c,
                    stride,
                    expansion: EXPANSION,
                    use_se: false,
                    act_after_expand: Nonlinearity::ReLU6,
                    act_after_dw: Nonlinearity::ReLU6,
                    shortcut,
                }
            })
            .collect();
        ModelSpec {
            schema: SCHEMA_VERSION.into(),
            name: format!("search-d{}", self.depth_d),
            stem: StemSpec {
                out_channels: self.stem,
                stride: 1,
                nonlinearity: Nonlinearity::ReLU,
            },
            blocks,
            penultimate: PenultimateSpec {
                out_channels: self.penultimate,
                nonlinearity: Nonlinearity::ReLU6,
            },
            head: HeadSpec {
                hidden: None,
                classes: self.classes,
            },
            metadata: None,
        }
    }

    pub fn cost_of(&self, channels: &[usize]) -> Result<CostReport, SearchError> {
        Ok(crate::costmodel::model_cost(&self.skeleton(channels), self.resolution, self.classes)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: usize,
    pub channels: Vec<usize>,
    pub pieces: PiecewiseLinear,
    pub cost: CostReport,
    pub score: Option<f64>,
    /// Mean nuclear norm of the final features (rank fitness only).
    pub nuclear_norm: Option<f64>,
}

/// Fills `score` for every candidate using `fitness`.
pub fn score_candidates(
    cands: Vec<Candidate>,
    fitness: &FitnessKind,
    master_seed: u64,
    spec: &SearchSpec,
) -> Result<Vec<Candidate>, SearchError> {
    match fitness {
        FitnessKind::RankScore { trials, settings } => {
            use rayon::prelude::*;
            cands
                .into_par_iter()
                .map(|mut c| {
                    let (rank, nuc) = rank_score(spec, &c.channels, *trials, settings, master_seed)?;
                    c.score = Some(rank);
                    c.nuclear_norm = Some(nuc);
                    Ok(c)
                })
                .collect()
        }
        FitnessKind::External { exchange_dir, timeout } => {
            external::exchange(cands, exchange_dir, *timeout, &external::run_id(spec))
        }
    }
}

/// Scores with an in-process function; used for oracles and custom fitness.
pub fn score_with<F>(mut cands: Vec<Candidate>, f: F) -> Vec<Candidate>
where
    F: Fn(&Candidate) -> f64,
{
    for c in &mut cands {
        c.score = Some(f(c));
    }
    cands
}

/// Sample, score with the spec's fitness, aggregate.
pub fn run_search(spec: &SearchSpec) -> Result<SearchRun, SearchError> {
    spec.validate()?;
    let cands = sample_candidates(spec)?;
    let scored = score_candidates(cands, &spec.fitness, spec.master_seed, spec)?;
    aggregate(spec, scored)
}
