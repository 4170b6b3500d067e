//! Threshold-free OOD metrics over `(score, is_open)` samples.
//!
//! Every metric treats open (unknown) objects as the positive class unless
//! stated otherwise, and higher scores as "more unknown". Only the ranking of
//! scores matters, so unbounded scores (energy, negated logits) are fine.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::num::Real;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricError {
    #[error("degenerate input: {0}")]
    DegenerateInput(&'static str),
}

/// One matched prediction's OOD score and the open/closed label of its ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample<T> {
    pub score: T,
    pub is_open: bool,
}

impl<T> ScoredSample<T> {
    pub fn new(score: T, is_open: bool) -> Self {
        Self { score, is_open }
    }
}

/// Which partition counts as positive for a precision–recall area.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Positives {
    Open,
    Closed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub auroc: f64,
    pub fpr95: f64,
    pub aupr_e: f64,
    pub aupr_s: f64,
    pub n_open: usize,
    pub n_closed: usize,
}

/// Per-distinct-score counts, sorted by descending score.
struct TieGroup {
    open: u64,
    closed: u64,
}

fn grouped_desc<T: Real>(samples: &[ScoredSample<T>], flip: bool) -> Result<Vec<TieGroup>, MetricError> {
    let mut keyed: Vec<(T, bool)> = Vec::with_capacity(samples.len());
    for s in samples {
        if !s.score.is_finite() {
            return Err(MetricError::DegenerateInput("non-finite score"));
        }
        keyed.push((if flip { -s.score } else { s.score }, s.is_open));
    }
    keyed.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal));
    let mut groups: Vec<TieGroup> = Vec::new();
    let mut last: Option<T> = None;
    for (score, open) in keyed {
        if last != Some(score) {
            groups.push(TieGroup { open: 0, closed: 0 });
            last = Some(score);
        }
        let g = groups.last_mut().expect("group pushed above");
        if open {
            g.open += 1;
        } else {
            g.closed += 1;
        }
    }
    Ok(groups)
}

fn counts<T>(samples: &[ScoredSample<T>]) -> (u64, u64) {
    let n_open = samples.iter().filter(|s| s.is_open).count() as u64;
    (n_open, samples.len() as u64 - n_open)
}

fn require_both<T>(samples: &[ScoredSample<T>]) -> Result<(u64, u64), MetricError> {
    let (o, c) = counts(samples);
    if o == 0 {
        return Err(MetricError::DegenerateInput("no open samples"));
    }
    if c == 0 {
        return Err(MetricError::DegenerateInput("no closed samples"));
    }
    Ok((o, c))
}

/// Area under the ROC curve: probability that a random open sample outscores a
/// random closed one, ties counted one half.
pub fn auroc<T: Real>(samples: &[ScoredSample<T>]) -> Result<f64, MetricError> {
    let (n_open, n_closed) = require_both(samples)?;
    let mut closed_above = 0u64;
    // twice the Mann–Whitney U statistic, kept integral
    let mut u2 = 0u128;
    for g in grouped_desc(samples, false)? {
        // open samples in this group beat every closed sample strictly below
        let closed_below = n_closed - closed_above - g.closed;
        u2 += 2 * g.open as u128 * closed_below as u128 + g.open as u128 * g.closed as u128;
        closed_above += g.closed;
    }
    Ok(u2 as f64 / (2.0 * n_open as f64 * n_closed as f64))
}

/// False-positive rate at the most conservative threshold whose true-positive
/// rate reaches `tpr_target` (positives = open, accept when score ≥ threshold).
pub fn fpr_at_tpr<T: Real>(samples: &[ScoredSample<T>], tpr_target: f64) -> Result<f64, MetricError> {
    let (n_open, n_closed) = require_both(samples)?;
    let (mut tp, mut fp) = (0u64, 0u64);
    for g in grouped_desc(samples, false)? {
        tp += g.open;
        fp += g.closed;
        if tp as f64 / n_open as f64 >= tpr_target {
            return Ok(fp as f64 / n_closed as f64);
        }
    }
    // unreachable for targets ≤ 1: accepting everything gives TPR = 1
    Ok(1.0)
}

/// FPR at 95% TPR.
pub fn fpr95<T: Real>(samples: &[ScoredSample<T>]) -> Result<f64, MetricError> {
    fpr_at_tpr(samples, 0.95)
}

/// Step-wise area under the precision–recall curve (average precision).
///
/// With `Positives::Closed` the score order is reversed, so known objects with
/// low OOD scores rank first.
pub fn aupr<T: Real>(samples: &[ScoredSample<T>], positives: Positives) -> Result<f64, MetricError> {
    let (n_open, n_closed) = counts(samples);
    let n_pos = match positives {
        Positives::Open => n_open,
        Positives::Closed => n_closed,
    };
    if n_pos == 0 {
        return Err(MetricError::DegenerateInput("no positive samples"));
    }
    let flip = positives == Positives::Closed;
    let (mut tp, mut seen) = (0u64, 0u64);
    let mut area = 0.0;
    for g in grouped_desc(samples, flip)? {
        let (pos, neg) = if flip { (g.closed, g.open) } else { (g.open, g.closed) };
        tp += pos;
        seen += pos + neg;
        if pos > 0 {
            area += (pos as f64 / n_pos as f64) * (tp as f64 / seen as f64);
        }
    }
    Ok(area)
}

/// All four metrics; requires both open and closed samples.
pub fn evaluate<T: Real>(samples: &[ScoredSample<T>]) -> Result<MetricReport, MetricError> {
    let (n_open, n_closed) = require_both(samples)?;
    Ok(MetricReport {
        auroc: auroc(samples)?,
        fpr95: fpr95(samples)?,
        aupr_e: aupr(samples, Positives::Open)?,
        aupr_s: aupr(samples, Positives::Closed)?,
        n_open: n_open as usize,
        n_closed: n_closed as usize,
    })
}
