use super::{ForgeConfig, ForgeError};
use crate::geometry::box_overlap_3d;
use crate::head::{HeadInput, InputLayout};
use crate::io::RunConfig;
use crate::matcher::assign;
use crate::model::{ClassLabel, Scan};
use crate::probe::ProbeConfig;

/// The `k` highest-scoring detections that share no volume with any known
/// ground-truth box. Equal scores keep ascending detection order.
pub fn topk_select(scan: &Scan<f64>, k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scan.detections.len()).collect();
    order.sort_by(|&a, &b| scan.detections[b].score.total_cmp(&scan.detections[a].score));
    order
        .into_iter()
        .filter(|&i| {
            let d = &scan.detections[i].bbox;
            scan.ground_truth
                .iter()
                .filter(|g| matches!(g.label, ClassLabel::Known(_)))
                .all(|g| box_overlap_3d(d, &g.bbox) <= 0.0)
        })
        .take(k)
        .collect()
}

/// Detection labels for Top-K training: selected pseudo-unknowns get 1,
/// detections matched to known ground truth get 0. A detection that is both
/// keeps its pseudo-unknown label.
pub fn topk_labels(scan: &Scan<f64>, config: &ForgeConfig, run: &RunConfig) -> Result<Vec<(usize, u8)>, ForgeError> {
    let unknown = topk_select(scan, config.topk_k);
    let mut out: Vec<(usize, u8)> = unknown.iter().map(|&i| (i, 1)).collect();
    for p in assign(scan, run)?.pairs {
        if matches!(scan.ground_truth[p.gt].label, ClassLabel::Known(_)) && !unknown.contains(&p.detection) {
            out.push((p.detection, 0));
        }
    }
    Ok(out)
}

/// Head inputs for the Top-K pseudo-labels of one scan.
pub fn forge_topk(
    scan: &Scan<f64>,
    config: &ForgeConfig,
    run: &RunConfig,
    probe: &ProbeConfig,
    layout: &InputLayout,
) -> Result<Vec<HeadInput<f64>>, ForgeError> {
    topk_labels(scan, config, run)?
        .into_iter()
        .map(|(i, y)| Ok(HeadInput { x: layout.input_for(scan, &scan.detections[i], probe)?, y }))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Box3D, Detection, GroundTruthObject};

    fn det(x: f64, score: f64) -> Detection<f64> {
        let b = Box3D::new([x, 0.0, 0.5], [1.0, 1.0, 1.0], 0.0).unwrap();
        Detection::new(b, score, vec![0.0, 1.0], vec![0.5; 2]).unwrap()
    }

    fn known(x: f64) -> GroundTruthObject<f64> {
        GroundTruthObject { bbox: Box3D::new([x, 0.0, 0.5], [1.0, 1.0, 1.0], 0.0).unwrap(), label: ClassLabel::Known(0), point_indices: None }
    }

    #[test]
    fn all_overlapping_gives_nothing() {
        let mut s = Scan::empty("a");
        s.ground_truth = vec![known(0.0), known(10.0)];
        s.detections = vec![det(0.2, 0.9), det(10.1, 0.8)];
        assert!(topk_select(&s, 5).is_empty());
    }

    #[test]
    fn picks_highest_scores() {
        let mut s = Scan::empty("b");
        s.ground_truth = vec![known(0.0)];
        let scores = [0.1, 0.9, 0.3, 0.7, 0.5, 0.8, 0.2, 0.6];
        s.detections = scores.iter().enumerate().map(|(i, &sc)| det(5.0 + 3.0 * i as f64, sc)).collect();
        s.detections.push(det(0.0, 0.99));
        assert_eq!(topk_select(&s, 5), vec![1, 5, 3, 7, 4]);
    }

    #[test]
    fn ties_prefer_lower_index() {
        let mut s = Scan::empty("c");
        s.detections = [0.9, 0.5, 0.8, 0.5, 0.5, 0.7].iter().enumerate().map(|(i, &sc)| det(3.0 * i as f64, sc)).collect();
        assert_eq!(topk_select(&s, 4), vec![0, 2, 5, 1]);
    }

    #[test]
    fn touching_faces_do_not_count_as_overlap() {
        let mut s = Scan::empty("d");
        s.ground_truth = vec![known(0.0)];
        s.detections = vec![det(1.0, 0.9)];
        assert_eq!(topk_select(&s, 1), vec![0]);
    }

    #[test]
    fn matched_known_become_negatives() {
        let mut s = Scan::empty("e");
        s.ground_truth = vec![known(0.0)];
        s.detections = vec![det(0.3, 0.9), det(20.0, 0.8)];
        let labels = topk_labels(&s, &ForgeConfig::default(), &RunConfig::default()).unwrap();
        assert_eq!(labels, vec![(1, 1), (0, 0)]);
    }
}
