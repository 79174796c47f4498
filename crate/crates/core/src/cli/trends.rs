use std::fmt;

use crate::numerics::Nonlinearity;
use crate::randnet::{LayerArch, RankCurve};

/// Slack allowed below the dimension ratio before the expansion check fails.
pub const EXPANSION_SLACK: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct TrendCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for TrendCheck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: {}", self.name, self.detail)
    }
}

fn label(c: &RankCurve) -> String {
    format!("{}/{}", c.spec.arch.name(), c.spec.nonlinearity.name())
}

/// Directional checks over a set of curves sharing one ratio grid.
///
/// * identity control (1×1 only): the linear curve tracks `r` within
///   `1 / d_out_min`.
/// * obs-i: for every activation the rank at the smallest ratio stays below
///   the rank at the largest one.
/// * obs-ii: every activation keeps the mean rank ratio above `r − 0.02`.
/// * obs-iii: at the smallest ratio SiLU and ELU each reach at least ReLU6,
///   reported only when all three curves are present.
pub fn trend_checks(curves: &[RankCurve]) -> Vec<TrendCheck> {
    let mut out = Vec::new();
    for c in curves {
        let first = &c.points[0];
        let last = c.points.last().expect("non-empty curve");
        if c.spec.nonlinearity.is_identity() {
            // Only a lone 1×1 map has rank exactly d_in; spatial and
            // bottleneck kinds mix neighbouring pixels or add the shortcut.
            if c.spec.arch != LayerArch::Conv1x1 {
                continue;
            }
            let tol = 1.0 / c.spec.d_out_range.0 as f64;
            let worst = c
                .points
                .iter()
                .map(|p| (p.mean_rank_ratio - p.ratio).abs())
                .fold(0.0, f64::max);
            out.push(TrendCheck {
                name: format!("identity-control {}", label(c)),
                passed: worst <= tol,
                detail: format!("max |rank - r| = {worst:.4} (limit {tol:.4})"),
            });
            continue;
        }
        out.push(TrendCheck {
            name: format!("obs-i {}", label(c)),
            passed: first.mean_rank_ratio < last.mean_rank_ratio,
            detail: format!(
                "rank {:.4} at r={} vs {:.4} at r={}",
                first.mean_rank_ratio, first.ratio, last.mean_rank_ratio, last.ratio
            ),
        });
        let (gap, at) = c
            .points
            .iter()
            .map(|p| (p.mean_rank_ratio - p.ratio, p.ratio))
            .fold((f64::INFINITY, 0.0), |a, b| if b.0 < a.0 { b } else { a });
        out.push(TrendCheck {
            name: format!("obs-ii {}", label(c)),
            passed: gap >= -EXPANSION_SLACK,
            detail: format!("min (rank - r) = {gap:.4} at r={at} (limit -{EXPANSION_SLACK})"),
        });
    }

    let find = |f: fn(&Nonlinearity) -> bool| curves.iter().find(|c| f(&c.spec.nonlinearity));
    if let Some(base) = find(|f| matches!(f, Nonlinearity::ReLU6)) {
        let b = base.points[0].mean_rank_ratio;
        let rivals = [
            find(|f| matches!(f, Nonlinearity::SiLU)),
            find(|f| matches!(f, Nonlinearity::ELU { .. })),
        ];
        for c in rivals.into_iter().flatten() {
            let v = c.points[0].mean_rank_ratio;
            out.push(TrendCheck {
                name: format!("obs-iii {} vs relu6", label(c)),
                passed: v >= b,
                detail: format!("rank {v:.4} vs {b:.4} at r={}", c.points[0].ratio),
            });
        }
    }
    out
}
