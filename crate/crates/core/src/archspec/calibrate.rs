use std::cmp::Ordering;

use serde::Serialize;

use crate::archspec::{ArchError, Layout, LinearParam};
use crate::costmodel::{Budget, Cost, CostModel, MIN_CHANNELS};

/// Accepted band for cost / target.
pub const CALIBRATION_BAND: (f64, f64) = (0.90, 1.02);
const GRID: usize = 49;
const MAX_WIDTH: f64 = 65_536.0;
const MIN_STEP: f64 = 1e-4;
const REFINE_STARTS: usize = 4;
const REFINE_ITERS: usize = 400;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Calibration {
    pub param: LinearParam,
    pub params: u64,
    pub macs: u64,
}

#[derive(Debug, Clone, Copy)]
struct Probe {
    a: f64,
    c1: f64,
    cost: Cost,
    /// Distance of the worse ratio from the accepted band; 0 when feasible.
    outside: f64,
    /// Worse relative deviation from the targets.
    deviation: f64,
}

impl Probe {
    fn key_cmp(&self, o: &Probe) -> Ordering {
        self.outside
            .total_cmp(&o.outside)
            .then(self.deviation.total_cmp(&o.deviation))
            .then(self.a.total_cmp(&o.a))
            .then((self.c1 - self.a).total_cmp(&(o.c1 - o.a)))
    }

    fn param(&self, depth: usize) -> LinearParam {
        LinearParam {
            slope_a: self.a,
            intercept_b: self.c1 - self.a,
            depth_d: depth,
        }
    }
}

struct Evaluator<'a> {
    layout: &'a Layout,
    model: CostModel,
    resolution: usize,
    target: (f64, f64),
}

impl Evaluator<'_> {
    fn cost(&self, a: f64, c1: f64) -> Result<Cost, ArchError> {
        let p = LinearParam {
            slope_a: a,
            intercept_b: c1 - a,
            depth_d: self.layout.depth(),
        };
        let spec = self.layout.spec_with(&p)?;
        Ok(self.model.model_cost(&spec, self.resolution, spec.head.classes)?.cost())
    }

    fn probe(&self, a: f64, c1: f64) -> Result<Probe, ArchError> {
        let cost = self.cost(a, c1)?;
        let rp = cost.params as f64 / self.target.0;
        let rm = cost.macs as f64 / self.target.1;
        let out = |r: f64| (CALIBRATION_BAND.0 - r).max(r - CALIBRATION_BAND.1).max(0.0);
        Ok(Probe {
            a,
            c1,
            cost,
            outside: out(rp).max(out(rm)),
            deviation: (rp - 1.0).abs().max((rm - 1.0).abs()),
        })
    }

    fn over(&self, c: Cost) -> bool {
        c.params as f64 > CALIBRATION_BAND.1 * self.target.0 || c.macs as f64 > CALIBRATION_BAND.1 * self.target.1
    }
}

/// Chooses the channel line `(a, b)` whose model lands closest to the budget.
///
/// Both costs must land in `[0.90, 1.02]` of their targets; among such lines
/// the one minimizing the larger relative deviation wins, ties going to the
/// smaller slope and then the smaller intercept. The search is a coarse grid
/// over slope and first-block width followed by pattern-search refinement
/// from the best grid points, so the result is deterministic.
pub fn calibrate_linear(layout: &Layout, budget: &Budget, resolution: usize) -> Result<Calibration, ArchError> {
    calibrate_linear_with(layout, budget, resolution, CostModel::default())
}

pub fn calibrate_linear_with(
    layout: &Layout,
    budget: &Budget,
    resolution: usize,
    model: CostModel,
) -> Result<Calibration, ArchError> {
    let (Some(p), Some(f)) = (budget.max_params, budget.max_macs) else {
        return Err(ArchError::InvalidParam("calibration needs both a params and a macs target".into()));
    };
    let ev = Evaluator {
        layout,
        model,
        resolution,
        target: (p as f64, f as f64),
    };
    let min = MIN_CHANNELS as f64;
    let floor = ev.probe(0.0, min)?;
    if ev.over(floor.cost) {
        return Err(infeasible(&floor, p, f));
    }

    let mut c_max = min;
    while c_max < MAX_WIDTH && !ev.over(ev.cost(0.0, c_max)?) {
        c_max *= 2.0;
    }
    let mut a_max = 1.0;
    while a_max < MAX_WIDTH && !ev.over(ev.cost(a_max, min)?) {
        a_max *= 2.0;
    }

    let da = a_max / (GRID - 1) as f64;
    let dc = (c_max - min) / (GRID - 1) as f64;
    let mut probes = Vec::with_capacity(GRID * GRID);
    for i in 0..GRID {
        for j in 0..GRID {
            probes.push(ev.probe(i as f64 * da, min + j as f64 * dc)?);
        }
    }
    probes.sort_by(Probe::key_cmp);
    let mut best = probes[0];
    for start in probes.iter().take(REFINE_STARTS) {
        let found = refine(&ev, *start, da, dc)?;
        if found.key_cmp(&best) == Ordering::Less {
            best = found;
        }
    }
    if best.outside > 0.0 {
        return Err(infeasible(&best, p, f));
    }
    Ok(Calibration {
        param: best.param(layout.depth()),
        params: best.cost.params,
        macs: best.cost.macs,
    })
}

fn refine(ev: &Evaluator<'_>, start: Probe, mut da: f64, mut dc: f64) -> Result<Probe, ArchError> {
    let min = MIN_CHANNELS as f64;
    let mut cur = start;
    for _ in 0..REFINE_ITERS {
        if da < MIN_STEP && dc < MIN_STEP {
            break;
        }
        let mut moved = false;
        for (sa, sc) in [(1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0), (1.0, 1.0), (-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0)] {
            let a = (cur.a + sa * da).max(0.0);
            let c1 = (cur.c1 + sc * dc).max(min);
            if a == cur.a && c1 == cur.c1 {
                continue;
            }
            let cand = ev.probe(a, c1)?;
            if cand.key_cmp(&cur) == Ordering::Less {
                cur = cand;
                moved = true;
            }
        }
        if !moved {
            da *= 0.5;
            dc *= 0.5;
        }
    }
    Ok(cur)
}

fn infeasible(p: &Probe, target_params: u64, target_macs: u64) -> ArchError {
    ArchError::Infeasible {
        params: p.cost.params,
        macs: p.cost.macs,
        target_params,
        target_macs,
    }
}
