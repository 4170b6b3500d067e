//! Greedy, confidence-ordered assignment of predictions to ground truth.
//!
//! Per scan: drop detections below the detector-score gate, sort the
//! survivors by the configured key (descending, ties by ascending index), and
//! let each one claim its closest still-unmatched ground truth if that lies
//! within the distance gate. Predictions with no unmatched ground truth in
//! range are ignored and contribute to no metric. Iteration stops as soon as
//! every ground truth is matched.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{bev_distance, center_distance};
use crate::io::{DistanceMode, RunConfig, SortMode};
use crate::metrics::ScoredSample;
use crate::model::{Box3D, Scan};
use crate::num::Real;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MatchError {
    #[error("scan {scan_id}: detection {index} has no ood_score")]
    MissingOodScore { scan_id: String, index: usize },
    #[error("hit rate undefined: no {0} ground truth in the evaluated scans")]
    EmptyPartition(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchPair {
    pub detection: usize,
    pub gt: usize,
    pub distance: f64,
}

/// Open-positive confusion counts at the configured OOD threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl std::ops::AddAssign for Confusion {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.tn += o.tn;
        self.fn_ += o.fn_;
    }
}

/// Geometric outcome of matching one scan, independent of OOD scores.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Assignment {
    /// In matching order.
    pub pairs: Vec<MatchPair>,
    /// Detections below the score gate.
    pub gated: Vec<usize>,
    /// Surviving detections that claimed no ground truth, ascending.
    pub ignored: Vec<usize>,
    /// Ground truth left unmatched (misses), ascending.
    pub unmatched_gts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchReport {
    pub scan_id: String,
    pub pairs: Vec<MatchPair>,
    pub unmatched_detections: Vec<usize>,
    pub unmatched_gts: Vec<usize>,
    pub scored_samples: Vec<ScoredSample<f64>>,
    pub confusion: Confusion,
    /// Open flag of every ground-truth object in the scan, by index.
    pub gt_open: Vec<bool>,
}

impl MatchReport {
    pub fn matched_counts(&self) -> (usize, usize) {
        let open = self.pairs.iter().filter(|p| self.gt_open[p.gt]).count();
        (open, self.pairs.len() - open)
    }

    pub fn gt_counts(&self) -> (usize, usize) {
        let open = self.gt_open.iter().filter(|&&o| o).count();
        (open, self.gt_open.len() - open)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HitRates {
    pub hits_open: f64,
    pub hits_closed: f64,
}

fn distance<T: Real>(mode: DistanceMode, a: &Box3D<T>, b: &Box3D<T>) -> T {
    match mode {
        DistanceMode::Euclidean3D => center_distance(a, b),
        DistanceMode::EuclideanBev => bev_distance(a, b),
    }
}

/// Survivor indices of the score gate in matching order.
fn matching_order<T: Real>(scan: &Scan<T>, config: &RunConfig) -> Result<(Vec<usize>, Vec<usize>), MatchError> {
    let delta = T::lit(config.delta_thresh);
    let (mut survivors, gated): (Vec<usize>, Vec<usize>) =
        (0..scan.detections.len()).partition(|&i| scan.detections[i].score >= delta);
    let key = |i: usize| -> Result<T, MatchError> {
        let d = &scan.detections[i];
        match config.sort_mode {
            SortMode::DetectorScore => Ok(d.score),
            SortMode::OodScore => d.ood_score.ok_or_else(|| MatchError::MissingOodScore {
                scan_id: scan.scan_id.clone(),
                index: i,
            }),
        }
    };
    let mut keyed = survivors.iter().map(|&i| key(i).map(|k| (k, i))).collect::<Result<Vec<_>, _>>()?;
    // stable: equal keys keep ascending index order
    keyed.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));
    survivors = keyed.into_iter().map(|(_, i)| i).collect();
    Ok((survivors, gated))
}

/// Runs the greedy assignment without touching OOD scores (unless sorting by them).
pub fn assign<T: Real>(scan: &Scan<T>, config: &RunConfig) -> Result<Assignment, MatchError> {
    let (order, gated) = matching_order(scan, config)?;
    let d_thresh = T::lit(config.d_thresh);
    let n_gt = scan.ground_truth.len();
    let mut gt_taken = vec![false; n_gt];
    let mut det_taken = vec![false; scan.detections.len()];
    let mut n_taken = 0usize;
    let mut pairs = Vec::new();

    for &di in &order {
        if n_taken == n_gt {
            break;
        }
        let dbox = &scan.detections[di].bbox;
        let mut best: Option<(usize, T)> = None;
        for (gi, gt) in scan.ground_truth.iter().enumerate() {
            if gt_taken[gi] {
                continue;
            }
            let dist = distance(config.distance_mode, dbox, &gt.bbox);
            if best.is_none_or(|(_, b)| dist < b) {
                best = Some((gi, dist));
            }
        }
        if let Some((gi, dist)) = best {
            if dist < d_thresh {
                gt_taken[gi] = true;
                det_taken[di] = true;
                n_taken += 1;
                pairs.push(MatchPair { detection: di, gt: gi, distance: dist.to_f64_lossy() });
            }
        }
    }

    let mut ignored: Vec<usize> = order.into_iter().filter(|&i| !det_taken[i]).collect();
    ignored.sort_unstable();
    let unmatched_gts = (0..n_gt).filter(|&g| !gt_taken[g]).collect();
    Ok(Assignment { pairs, gated, ignored, unmatched_gts })
}

/// Matches one scan and accumulates its OOD samples and confusion counts.
///
/// Every detection that survives the score gate must carry an `ood_score`.
pub fn match_scan<T: Real>(scan: &Scan<T>, config: &RunConfig) -> Result<MatchReport, MatchError> {
    let delta = T::lit(config.delta_thresh);
    if let Some(index) = scan.detections.iter().position(|d| d.score >= delta && d.ood_score.is_none()) {
        return Err(MatchError::MissingOodScore { scan_id: scan.scan_id.clone(), index });
    }
    let a = assign(scan, config)?;
    let gt_open: Vec<bool> = scan.ground_truth.iter().map(|g| g.is_open()).collect();
    let ood_thresh = T::lit(config.ood_thresh);
    let mut confusion = Confusion::default();
    let mut scored_samples = Vec::with_capacity(a.pairs.len());
    for p in &a.pairs {
        let s = scan.detections[p.detection].ood_score.expect("checked above");
        let open = gt_open[p.gt];
        scored_samples.push(ScoredSample::new(s.to_f64_lossy(), open));
        match (s > ood_thresh, open) {
            (true, true) => confusion.tp += 1,
            (true, false) => confusion.fp += 1,
            (false, false) => confusion.tn += 1,
            (false, true) => confusion.fn_ += 1,
        }
    }
    Ok(MatchReport {
        scan_id: scan.scan_id.clone(),
        pairs: a.pairs,
        unmatched_detections: a.ignored,
        unmatched_gts: a.unmatched_gts,
        scored_samples,
        confusion,
        gt_open,
    })
}

/// Matches scans in parallel; reports come back ordered by scan id.
pub fn match_scans<T: Real>(scans: &[Scan<T>], config: &RunConfig) -> Result<Vec<MatchReport>, MatchError> {
    let mut reports = scans.par_iter().map(|s| match_scan(s, config)).collect::<Result<Vec<_>, _>>()?;
    reports.sort_by(|a, b| a.scan_id.cmp(&b.scan_id));
    Ok(reports)
}

/// Matched ground truth over total ground truth, per partition.
pub fn hit_rates(reports: &[MatchReport]) -> Result<HitRates, MatchError> {
    let (mut mo, mut mc, mut to, mut tc) = (0usize, 0usize, 0usize, 0usize);
    for r in reports {
        let (o, c) = r.matched_counts();
        let (go, gc) = r.gt_counts();
        mo += o;
        mc += c;
        to += go;
        tc += gc;
    }
    if to == 0 {
        return Err(MatchError::EmptyPartition("open"));
    }
    if tc == 0 {
        return Err(MatchError::EmptyPartition("closed"));
    }
    Ok(HitRates { hits_open: mo as f64 / to as f64, hits_closed: mc as f64 / tc as f64 })
}

/// Hit rates straight from geometry, for sweeps that do not need OOD scores.
pub fn hit_rates_from_assignments<T: Real>(scans: &[Scan<T>], config: &RunConfig) -> Result<HitRates, MatchError> {
    let per_scan = scans
        .par_iter()
        .map(|s| {
            let a = assign(s, config)?;
            let open_matched = a.pairs.iter().filter(|p| s.ground_truth[p.gt].is_open()).count();
            let open_total = s.ground_truth.iter().filter(|g| g.is_open()).count();
            Ok((open_matched, a.pairs.len() - open_matched, open_total, s.ground_truth.len() - open_total))
        })
        .collect::<Result<Vec<_>, MatchError>>()?;
    let (mo, mc, to, tc) = per_scan
        .into_iter()
        .fold((0, 0, 0, 0), |acc, x| (acc.0 + x.0, acc.1 + x.1, acc.2 + x.2, acc.3 + x.3));
    if to == 0 {
        return Err(MatchError::EmptyPartition("open"));
    }
    if tc == 0 {
        return Err(MatchError::EmptyPartition("closed"));
    }
    Ok(HitRates { hits_open: mo as f64 / to as f64, hits_closed: mc as f64 / tc as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ClassLabel, Detection, GroundTruthObject};

    fn bx(x: f64, y: f64) -> Box3D<f64> {
        Box3D::new([x, y, 0.0], [1.0, 1.0, 1.0], 0.0).unwrap()
    }

    fn det(x: f64, score: f64, ood: f64) -> Detection<f64> {
        let mut d = Detection::new(bx(x, 0.0), score, vec![1.0, 0.0], vec![]).unwrap();
        d.ood_score = Some(ood);
        d
    }

    fn gt(x: f64, open: bool) -> GroundTruthObject<f64> {
        let label = if open { ClassLabel::Open(0) } else { ClassLabel::Known(0) };
        GroundTruthObject { bbox: bx(x, 0.0), label, point_indices: None }
    }

    fn cfg() -> RunConfig {
        RunConfig { delta_thresh: 0.3, d_thresh: 2.0, ..RunConfig::default() }
    }

    #[test]
    fn no_detections() {
        let mut s = Scan::empty("a");
        s.ground_truth = vec![gt(0.0, false), gt(5.0, true)];
        let r = match_scan(&s, &cfg()).unwrap();
        assert!(r.pairs.is_empty());
        assert_eq!(r.unmatched_gts, vec![0, 1]);
    }

    #[test]
    fn exact_hit() {
        let mut s = Scan::empty("a");
        s.ground_truth = vec![gt(0.0, true)];
        s.detections = vec![det(0.0, 0.9, 0.8)];
        let r = match_scan(&s, &cfg()).unwrap();
        assert_eq!(r.pairs, vec![MatchPair { detection: 0, gt: 0, distance: 0.0 }]);
        assert_eq!(r.confusion, Confusion { tp: 1, ..Confusion::default() });
        assert_eq!(r.scored_samples, vec![ScoredSample::new(0.8, true)]);
    }

    #[test]
    fn greedy_order_wins_over_proximity() {
        let mut s = Scan::empty("a");
        s.ground_truth = vec![gt(0.0, false)];
        s.detections = vec![det(1.5, 0.9, 0.1), det(0.2, 0.5, 0.1)];
        let r = match_scan(&s, &cfg()).unwrap();
        assert_eq!(r.pairs.len(), 1);
        assert_eq!(r.pairs[0].detection, 0);
        assert_eq!(r.unmatched_detections, vec![1]);
        assert_eq!(r.confusion.tn, 1);
    }

    #[test]
    fn score_gate_and_missing_ood() {
        let mut s = Scan::empty("a");
        s.ground_truth = vec![gt(0.0, false)];
        let mut low = det(0.0, 0.1, 0.0);
        low.ood_score = None;
        s.detections = vec![low.clone()];
        let r = match_scan(&s, &cfg()).unwrap();
        assert!(r.pairs.is_empty());
        s.detections = vec![Detection { score: 0.5, ..low }];
        assert!(matches!(match_scan(&s, &cfg()), Err(MatchError::MissingOodScore { index: 0, .. })));
        // geometry-only matching does not need scores
        assert_eq!(assign(&s, &cfg()).unwrap().pairs.len(), 1);
    }

    #[test]
    fn ties_resolve_by_index() {
        let mut s = Scan::empty("a");
        s.ground_truth = vec![gt(-1.0, false), gt(1.0, true)];
        s.detections = vec![det(0.0, 0.5, 0.0), det(0.0, 0.5, 0.0)];
        let r = match_scan(&s, &cfg()).unwrap();
        assert_eq!(r.pairs[0].detection, 0);
        assert_eq!(r.pairs[0].gt, 0);
        assert_eq!(r.pairs[1].gt, 1);
    }

    #[test]
    fn sort_by_ood_score() {
        let mut s = Scan::empty("a");
        s.ground_truth = vec![gt(0.0, false)];
        s.detections = vec![det(0.1, 0.9, 0.2), det(-0.1, 0.5, 0.7)];
        let c = RunConfig { sort_mode: SortMode::OodScore, ..cfg() };
        assert_eq!(match_scan(&s, &c).unwrap().pairs[0].detection, 1);
    }

    #[test]
    fn bev_distance_mode() {
        let mut s = Scan::empty("a");
        let mut g = gt(0.0, false);
        g.bbox.cz = 3.0;
        s.ground_truth = vec![g];
        s.detections = vec![det(0.0, 0.9, 0.2)];
        assert!(match_scan(&s, &cfg()).unwrap().pairs.is_empty());
        let c = RunConfig { distance_mode: DistanceMode::EuclideanBev, ..cfg() };
        assert_eq!(match_scan(&s, &c).unwrap().pairs.len(), 1);
    }

    #[test]
    fn hit_rate_examples() {
        let mut s = Scan::empty("a");
        s.ground_truth = vec![gt(0.0, false), gt(10.0, true)];
        s.detections = vec![det(0.0, 0.9, 0.1), det(10.0, 0.9, 0.9)];
        let all = hit_rates(&[match_scan(&s, &cfg()).unwrap()]).unwrap();
        assert_eq!((all.hits_open, all.hits_closed), (1.0, 1.0));
        s.detections.clear();
        let none = hit_rates(&[match_scan(&s, &cfg()).unwrap()]).unwrap();
        assert_eq!((none.hits_open, none.hits_closed), (0.0, 0.0));
        s.ground_truth.pop();
        assert_eq!(hit_rates(&[match_scan(&s, &cfg()).unwrap()]), Err(MatchError::EmptyPartition("open")));
        assert_eq!(hit_rates_from_assignments(&[s], &cfg()), Err(MatchError::EmptyPartition("open")));
    }
}
