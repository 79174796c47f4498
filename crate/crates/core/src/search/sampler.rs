use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::costmodel::{Cost, MIN_CHANNELS};
use crate::search::{Candidate, SearchError, SearchSpec};
use crate::seed::derive_seed;

/// Rejection-sampling bound per candidate.
pub const MAX_ATTEMPTS: usize = 10_000;
const SAMPLE_TAG: u64 = 0x5A4D;
const FLAT_PIECE_PROB: f64 = 0.25;
const MIN_REL_SLOPE: f64 = 0.01;
const MIN_START_RATIO: f64 = 0.05;
const MAX_END_WIDTH: f64 = 1e6;
const BISECT_STEPS: usize = 60;

/// Continuous channel curve `c(i)` over block indices: linear between knots,
/// with `slopes[j]` on `[knots[j], knots[j + 1]]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseLinear {
    /// Breakpoints including the endpoints `1` and `d`.
    pub knots: Vec<usize>,
    pub slopes: Vec<f64>,
    /// Value at block 1.
    pub intercept: f64,
}

impl PiecewiseLinear {
    pub fn pieces(&self) -> usize {
        self.slopes.len()
    }

    pub fn eval(&self, i: f64) -> f64 {
        let mut v = self.intercept;
        for (j, &s) in self.slopes.iter().enumerate() {
            let lo = self.knots[j] as f64;
            let hi = self.knots[j + 1] as f64;
            if i <= lo {
                break;
            }
            v += s * (i.min(hi) - lo);
        }
        v
    }

    /// Values at `i = 1..=d` before rounding.
    pub fn values(&self, d: usize) -> Vec<f64> {
        (1..=d).map(|i| self.eval(i as f64)).collect()
    }

    /// Rounded widths, half away from zero.
    pub fn channels(&self, d: usize) -> Vec<usize> {
        self.values(d).iter().map(|v| v.round().max(0.0) as usize).collect()
    }
}

/// A unit shape: relative slopes and the start/end width ratio.
struct Shape {
    knots: Vec<usize>,
    rel_slopes: Vec<f64>,
    start_ratio: f64,
}

impl Shape {
    fn draw(rng: &mut ChaCha8Rng, d: usize, max_pieces: usize) -> Self {
        let max_k = max_pieces.min(d - 1).max(1);
        let k = rng.gen_range(1..=max_k);
        // Interior breakpoints from {2, …, d − 1}.
        let mut inner: Vec<usize> = index::sample(rng, d - 2, k - 1).into_iter().map(|x| x + 2).collect();
        inner.sort_unstable();
        let mut knots = Vec::with_capacity(k + 1);
        knots.push(1);
        knots.extend(inner);
        knots.push(d);
        let rel_slopes = (0..k)
            .map(|_| {
                if rng.gen_bool(FLAT_PIECE_PROB) {
                    0.0
                } else {
                    (rng.gen_range(MIN_REL_SLOPE.ln()..=0.0)).exp()
                }
            })
            .collect();
        let start_ratio = rng.gen_range(MIN_START_RATIO.ln()..=0.0).exp();
        Self {
            knots,
            rel_slopes,
            start_ratio,
        }
    }

    /// Curve ending at `end` and starting at `start_ratio · end`.
    fn curve(&self, end: f64) -> PiecewiseLinear {
        let rise: f64 = self
            .rel_slopes
            .iter()
            .zip(self.knots.windows(2))
            .map(|(s, w)| s * (w[1] - w[0]) as f64)
            .sum();
        if rise == 0.0 {
            return PiecewiseLinear {
                knots: self.knots.clone(),
                slopes: vec![0.0; self.rel_slopes.len()],
                intercept: end,
            };
        }
        let start = self.start_ratio * end;
        let scale = (end - start) / rise;
        PiecewiseLinear {
            knots: self.knots.clone(),
            slopes: self.rel_slopes.iter().map(|s| s * scale).collect(),
            intercept: start,
        }
    }
}

fn excess(spec: &SearchSpec, c: Cost) -> f64 {
    let over = |x: u64, b: Option<u64>| b.map_or(0.0, |b| x as f64 / b as f64);
    over(c.params, spec.budget.max_params).max(over(c.macs, spec.budget.max_macs))
}

/// Draws one budget-feasible candidate.
///
/// A shape (piece count, breakpoints, relative slopes, start/end ratio) is
/// drawn first; the end width is then bisected to the largest value whose
/// rounded configuration fits the budget, so accepted candidates sit at the
/// budget. Shapes whose smallest admissible configuration (first width 8)
/// already overflows are rejected and redrawn.
pub fn sample_candidate(spec: &SearchSpec, seed: u64) -> Result<Candidate, SearchError> {
    spec.validate()?;
    sample_one(spec, 0, seed)
}

fn sample_one(spec: &SearchSpec, id: usize, seed: u64) -> Result<Candidate, SearchError> {
    let d = spec.depth_d;
    let min = MIN_CHANNELS as f64 - 0.5 + 1e-9;
    let mut tightest: Option<(f64, Cost)> = None;
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[attempt as u64]));
        let shape = Shape::draw(&mut rng, d, spec.max_pieces);
        let fits = |end: f64| -> Result<(bool, Cost, Vec<usize>), SearchError> {
            let ch = shape.curve(end).channels(d);
            let cost = spec.cost_of(&ch)?.cost();
            Ok((spec.budget.admits(cost), cost, ch))
        };
        let mut lo = min / shape.start_ratio.min(1.0);
        let (ok, cost, _) = fits(lo)?;
        if !ok {
            let e = excess(spec, cost);
            if tightest.map_or(true, |(t, _)| e < t) {
                tightest = Some((e, cost));
            }
            continue;
        }
        let mut hi = lo * 2.0;
        while hi < MAX_END_WIDTH && fits(hi)?.0 {
            lo = hi;
            hi *= 2.0;
        }
        for _ in 0..BISECT_STEPS {
            let mid = 0.5 * (lo + hi);
            if fits(mid)?.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let pieces = shape.curve(lo);
        let channels = pieces.channels(d);
        debug_assert!(channels[0] >= MIN_CHANNELS);
        let cost = spec.cost_of(&channels)?;
        return Ok(Candidate {
            id,
            channels,
            pieces,
            cost,
            score: None,
            nuclear_norm: None,
        });
    }
    let (_, c) = tightest.expect("at least one attempt");
    Err(SearchError::Infeasible {
        attempts: MAX_ATTEMPTS,
        params: c.params,
        macs: c.macs,
    })
}

/// `num_candidates` candidates with ids `0..n`, candidate `j` seeded by
/// `derive_seed(master_seed, [tag, j])`.
pub fn sample_candidates(spec: &SearchSpec) -> Result<Vec<Candidate>, SearchError> {
    spec.validate()?;
    (0..spec.num_candidates)
        .into_par_iter()
        .map(|j| sample_one(spec, j, derive_seed(spec.master_seed, &[SAMPLE_TAG, j as u64])))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archspec::fit_linear_in;
    use crate::costmodel::Budget;

    fn spec() -> SearchSpec {
        SearchSpec::new(5, Budget::new(Some(200_000), Some(30_000_000)).unwrap())
    }

    #[test]
    fn piecewise_eval() {
        let p = PiecewiseLinear {
            knots: vec![1, 3, 5],
            slopes: vec![0.0, 10.0],
            intercept: 30.0,
        };
        assert_eq!(p.values(5), vec![30.0, 30.0, 30.0, 40.0, 50.0]);
    }

    #[test]
    fn accepted_candidates_fit_and_are_monotone() {
        let s = spec();
        for seed in 0..20 {
            let c = sample_candidate(&s, seed).unwrap();
            assert!(c.channels.windows(2).all(|w| w[0] <= w[1]), "{:?}", c.channels);
            assert!(c.channels[0] >= 8);
            assert!(s.budget.admits(c.cost.cost()));
            assert_eq!(s.cost_of(&c.channels).unwrap(), c.cost);
        }
    }

    #[test]
    fn single_piece_is_exactly_linear() {
        let mut s = spec();
        s.max_pieces = 1;
        let c = sample_candidate(&s, 3).unwrap();
        assert_eq!(c.pieces.pieces(), 1);
        let fit = fit_linear_in::<f64>(&c.pieces.values(5)).unwrap();
        assert!(fit.rms_residual < 1e-9);
    }

    #[test]
    fn deterministic_per_seed() {
        let s = spec();
        assert_eq!(sample_candidate(&s, 9).unwrap(), sample_candidate(&s, 9).unwrap());
    }

    #[test]
    fn impossible_budget_reports_tightest() {
        let s = SearchSpec::new(5, Budget::new(Some(1_000), None).unwrap());
        match sample_candidate(&s, 1) {
            Err(SearchError::Infeasible { params, .. }) => assert!(params > 1_000),
            other => panic!("{other:?}"),
        }
    }
}
