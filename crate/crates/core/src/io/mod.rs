//! On-disk dataset contract: scan documents, blobs, manifests and run configs.
//!
//! A scan is one JSON document:
//!
//! ```text
//! { "scan_id": str,
//!   "points": [[x,y,z,intensity],...] | {"blob": path, "count": n},
//!   "embeddings"?: {"blob": path, "dim": d},
//!   "ground_truth": [{"box":[cx,cy,cz,l,w,h,yaw], "class": str, "point_indices"?: [...]}],
//!   "detections": [{"box":[...], "score": f, "logits":[...], "predicted_class"?: n,
//!                   "embedding": [...] | {"blob_offset": row}, "ood_score"?: f,
//!                   "logit_samples"?: [[...],...]}],
//!   "feature_map_low"?: {"blob": path, "rows": r, "cols": c, "dim": d, "origin": [x,y], "cell_size": s},
//!   "feature_map_high"?: {...} }
//! ```
//!
//! Blob paths are relative to the document. Inline floats are written in
//! shortest round-trip form, so inline values reload bit-identically; blob
//! values are stored as `f32`.

mod blob;
mod run_config;

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use blob::{read_blob, write_blob};
pub use run_config::{parse_kv, DistanceMode, EvalSubset, RunConfig, SortMode};

use crate::model::{Box3D, ClassPartition, Detection, GroundTruthObject, ModelError, Point, PointCloud, Scan};
use crate::probe::FeatureMap;

#[derive(Debug, Error)]
pub enum ScanIoError {
    #[error("{path}: parse error at line {line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("{path}: schema error: {msg}")]
    Schema { path: PathBuf, msg: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config error: {0}")]
    Config(String),
}

impl ScanIoError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        ScanIoError::Io { path: path.to_path_buf(), source }
    }

    pub(crate) fn schema(path: &Path, msg: impl Into<String>) -> Self {
        ScanIoError::Schema { path: path.to_path_buf(), msg: msg.into() }
    }

    fn parse(path: &Path, e: serde_json::Error) -> Self {
        ScanIoError::Parse { path: path.to_path_buf(), line: e.line(), msg: e.to_string() }
    }
}

/// Dataset description: class partition, scan list and intensity statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub known_classes: Vec<String>,
    pub open_classes: Vec<String>,
    /// Relative paths resolve against the manifest's directory.
    pub scan_paths: Vec<PathBuf>,
    /// `(mean, std)` of point intensity.
    pub intensity_stats: (f64, f64),
    #[serde(skip)]
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn partition(&self) -> ClassPartition {
        ClassPartition { known: self.known_classes.clone(), open: self.open_classes.clone() }
    }

    pub fn validate(&self) -> Result<(), ScanIoError> {
        self.partition().validate().map_err(|e| ScanIoError::Config(e.to_string()))?;
        let (_, std) = self.intensity_stats;
        if !(std > 0.0 && std.is_finite()) {
            return Err(ScanIoError::Config("intensity_stats std must be positive".into()));
        }
        Ok(())
    }

    pub fn resolve(&self, scan_path: &Path) -> PathBuf {
        if scan_path.is_absolute() {
            scan_path.to_path_buf()
        } else {
            self.root.join(scan_path)
        }
    }

    pub fn scan_files(&self) -> Vec<PathBuf> {
        self.scan_paths.iter().map(|p| self.resolve(p)).collect()
    }

    pub fn load(path: &Path) -> Result<Self, ScanIoError> {
        let text = std::fs::read_to_string(path).map_err(|e| ScanIoError::io(path, e))?;
        let mut m: DatasetManifest = serde_json::from_str(&text).map_err(|e| ScanIoError::parse(path, e))?;
        m.validate().map_err(|e| ScanIoError::schema(path, e.to_string()))?;
        m.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<(), ScanIoError> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text + "\n").map_err(|e| ScanIoError::io(path, e))
    }
}

/// Where bulky arrays go when saving.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Storage {
    #[default]
    Inline,
    /// `f32` sidecar blob next to the document.
    Blob,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SaveOptions {
    pub points: Storage,
    pub embeddings: Storage,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScanDoc {
    scan_id: String,
    points: PointsDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    embeddings: Option<EmbeddingBlobDoc>,
    ground_truth: Vec<GtDoc>,
    detections: Vec<DetDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    feature_map_low: Option<MapDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    feature_map_high: Option<MapDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum PointsDoc {
    Inline(Vec<[f64; 4]>),
    Blob { blob: String, count: usize },
}

#[derive(Serialize, Deserialize)]
struct EmbeddingBlobDoc {
    blob: String,
    dim: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GtDoc {
    #[serde(rename = "box")]
    bbox: [f64; 7],
    class: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    point_indices: Option<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DetDoc {
    #[serde(rename = "box")]
    bbox: [f64; 7],
    score: f64,
    logits: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    predicted_class: Option<usize>,
    #[serde(default = "EmbeddingDoc::empty")]
    embedding: EmbeddingDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ood_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    logit_samples: Option<Vec<Vec<f64>>>,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum EmbeddingDoc {
    Inline(Vec<f64>),
    Blob { blob_offset: usize },
}

impl EmbeddingDoc {
    fn empty() -> Self {
        EmbeddingDoc::Inline(Vec::new())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MapDoc {
    blob: String,
    rows: usize,
    cols: usize,
    dim: usize,
    origin: [f64; 2],
    cell_size: f64,
}

#[derive(Deserialize)]
struct GroundTruthOnly {
    ground_truth: Vec<GtDoc>,
}

fn schema_of(path: &Path, what: String) -> impl Fn(ModelError) -> ScanIoError + '_ {
    move |e| ScanIoError::schema(path, format!("{what}: {e}"))
}

fn read_map(base: &Path, doc: &MapDoc) -> Result<FeatureMap<f64>, ScanIoError> {
    let path = base.join(&doc.blob);
    let (dims, values) = read_blob(&path)?;
    if dims != [doc.rows, doc.cols, doc.dim] {
        return Err(ScanIoError::schema(&path, format!("blob dims {dims:?} disagree with document")));
    }
    FeatureMap::new(
        doc.rows,
        doc.cols,
        doc.dim,
        doc.origin,
        doc.cell_size,
        values.into_iter().map(f64::from).collect(),
    )
    .map_err(|e| ScanIoError::schema(&path, e.to_string()))
}

/// Loads and fully validates one scan document.
pub fn load_scan(path: &Path, classes: &ClassPartition) -> Result<Scan<f64>, ScanIoError> {
    let text = std::fs::read_to_string(path).map_err(|e| ScanIoError::io(path, e))?;
    let doc: ScanDoc = serde_json::from_str(&text).map_err(|e| ScanIoError::parse(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));

    let points = match doc.points {
        PointsDoc::Inline(p) => p.into_iter().map(|[x, y, z, i]| Point::new(x, y, z, i)).collect(),
        PointsDoc::Blob { blob, count } => {
            let bp = base.join(&blob);
            let (dims, v) = read_blob(&bp)?;
            if dims != [count, 4] {
                return Err(ScanIoError::schema(&bp, format!("point blob dims {dims:?}, expected [{count}, 4]")));
            }
            v.chunks_exact(4)
                .map(|c| Point::new(f64::from(c[0]), f64::from(c[1]), f64::from(c[2]), f64::from(c[3])))
                .collect()
        }
    };
    let cloud = PointCloud::new(points);
    cloud.validate().map_err(schema_of(path, "points".into()))?;

    let mut ground_truth = Vec::with_capacity(doc.ground_truth.len());
    for (i, g) in doc.ground_truth.into_iter().enumerate() {
        let bbox = Box3D::from_array(g.bbox).map_err(schema_of(path, format!("ground_truth[{i}]")))?;
        let label = classes
            .resolve(&g.class)
            .ok_or_else(|| ScanIoError::schema(path, format!("ground_truth[{i}]: unknown class {:?}", g.class)))?;
        if let Some(idx) = &g.point_indices {
            if let Some(&bad) = idx.iter().find(|&&k| k >= cloud.len()) {
                return Err(ScanIoError::schema(path, format!("ground_truth[{i}]: point index {bad} out of range")));
            }
        }
        ground_truth.push(GroundTruthObject { bbox, label, point_indices: g.point_indices });
    }

    let embedding_rows = match &doc.embeddings {
        Some(e) => {
            let bp = base.join(&e.blob);
            let (dims, v) = read_blob(&bp)?;
            if dims.len() != 2 || dims[1] != e.dim {
                return Err(ScanIoError::schema(&bp, format!("embedding blob dims {dims:?}, expected [_, {}]", e.dim)));
            }
            Some((e.dim, v))
        }
        None => None,
    };

    let mut detections = Vec::with_capacity(doc.detections.len());
    for (i, d) in doc.detections.into_iter().enumerate() {
        let ctx = format!("detections[{i}]");
        let bbox = Box3D::from_array(d.bbox).map_err(schema_of(path, ctx.clone()))?;
        let embedding = match d.embedding {
            EmbeddingDoc::Inline(v) => v,
            EmbeddingDoc::Blob { blob_offset } => {
                let (dim, values) = embedding_rows
                    .as_ref()
                    .ok_or_else(|| ScanIoError::schema(path, format!("{ctx}: blob embedding without an embeddings blob")))?;
                let start = blob_offset * dim;
                let row = values
                    .get(start..start + dim)
                    .ok_or_else(|| ScanIoError::schema(path, format!("{ctx}: blob_offset {blob_offset} out of range")))?;
                row.iter().map(|&v| f64::from(v)).collect()
            }
        };
        let predicted_class = match d.predicted_class {
            Some(p) => p,
            None => crate::num::argmax(&d.logits).ok_or_else(|| ScanIoError::schema(path, format!("{ctx}: empty logits")))?,
        };
        let det = Detection {
            bbox,
            score: d.score,
            logits: d.logits,
            predicted_class,
            embedding,
            ood_score: d.ood_score,
            logit_samples: d.logit_samples,
        };
        det.validate(Some(classes.num_known())).map_err(schema_of(path, ctx))?;
        detections.push(det);
    }

    let feature_map_low = doc.feature_map_low.as_ref().map(|m| read_map(base, m)).transpose()?;
    let feature_map_high = doc.feature_map_high.as_ref().map(|m| read_map(base, m)).transpose()?;

    Ok(Scan { scan_id: doc.scan_id, cloud, ground_truth, detections, feature_map_low, feature_map_high })
}

fn blob_name(path: &Path, suffix: &str) -> String {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("scan");
    format!("{stem}.{suffix}.bin")
}

fn write_map(path: &Path, suffix: &str, map: &FeatureMap<f64>) -> Result<MapDoc, ScanIoError> {
    let name = blob_name(path, suffix);
    let base = path.parent().unwrap_or(Path::new("."));
    write_blob(
        &base.join(&name),
        &[map.rows, map.cols, map.dim],
        map.data.iter().map(|&v| v as f32),
    )?;
    Ok(MapDoc {
        blob: name,
        rows: map.rows,
        cols: map.cols,
        dim: map.dim,
        origin: map.origin,
        cell_size: map.cell_size,
    })
}

/// Writes a scan document (and any sidecar blobs) next to `path`.
pub fn save_scan(scan: &Scan<f64>, path: &Path, classes: &ClassPartition, options: SaveOptions) -> Result<(), ScanIoError> {
    let base = path.parent().unwrap_or(Path::new("."));
    let points = match options.points {
        Storage::Inline => PointsDoc::Inline(scan.cloud.points.iter().map(|p| [p.x, p.y, p.z, p.intensity]).collect()),
        Storage::Blob => {
            let name = blob_name(path, "points");
            write_blob(
                &base.join(&name),
                &[scan.cloud.len(), 4],
                scan.cloud.points.iter().flat_map(|p| [p.x as f32, p.y as f32, p.z as f32, p.intensity as f32]),
            )?;
            PointsDoc::Blob { blob: name, count: scan.cloud.len() }
        }
    };

    let emb_dim = scan.detections.first().map(|d| d.embedding.len()).unwrap_or(0);
    let blob_embeddings = options.embeddings == Storage::Blob
        && emb_dim > 0
        && scan.detections.iter().all(|d| d.embedding.len() == emb_dim);
    let embeddings = if blob_embeddings {
        let name = blob_name(path, "embeddings");
        write_blob(
            &base.join(&name),
            &[scan.detections.len(), emb_dim],
            scan.detections.iter().flat_map(|d| d.embedding.iter().map(|&v| v as f32)),
        )?;
        Some(EmbeddingBlobDoc { blob: name, dim: emb_dim })
    } else {
        None
    };

    let ground_truth = scan
        .ground_truth
        .iter()
        .map(|g| GtDoc {
            bbox: g.bbox.to_array(),
            class: classes.name(g.label).to_string(),
            point_indices: g.point_indices.clone(),
        })
        .collect();
    let detections = scan
        .detections
        .iter()
        .enumerate()
        .map(|(i, d)| DetDoc {
            bbox: d.bbox.to_array(),
            score: d.score,
            logits: d.logits.clone(),
            predicted_class: Some(d.predicted_class),
            embedding: if blob_embeddings { EmbeddingDoc::Blob { blob_offset: i } } else { EmbeddingDoc::Inline(d.embedding.clone()) },
            ood_score: d.ood_score,
            logit_samples: d.logit_samples.clone(),
        })
        .collect();

    let doc = ScanDoc {
        scan_id: scan.scan_id.clone(),
        points,
        embeddings,
        ground_truth,
        detections,
        feature_map_low: scan.feature_map_low.as_ref().map(|m| write_map(path, "fm_low", m)).transpose()?,
        feature_map_high: scan.feature_map_high.as_ref().map(|m| write_map(path, "fm_high", m)).transpose()?,
    };
    let bytes = serde_json::to_vec(&doc).map_err(|e| ScanIoError::schema(path, e.to_string()))?;
    std::fs::write(path, bytes).map_err(|e| ScanIoError::io(path, e))
}

/// Whether the scan at `path` holds at least one open ground-truth object.
pub fn scan_has_open_objects(path: &Path, classes: &ClassPartition) -> Result<bool, ScanIoError> {
    let text = std::fs::read_to_string(path).map_err(|e| ScanIoError::io(path, e))?;
    let doc: GroundTruthOnly = serde_json::from_str(&text).map_err(|e| ScanIoError::parse(path, e))?;
    for g in &doc.ground_truth {
        match classes.resolve(&g.class) {
            Some(label) if label.is_open() => return Ok(true),
            Some(_) => {}
            None => return Err(ScanIoError::schema(path, format!("unknown class {:?}", g.class))),
        }
    }
    Ok(false)
}

/// Keeps exactly the scans that contain at least one open ground-truth object.
pub fn filter_open_subset(manifest: &DatasetManifest) -> Result<DatasetManifest, ScanIoError> {
    let classes = manifest.partition();
    let keep = manifest
        .scan_paths
        .par_iter()
        .map(|p| scan_has_open_objects(&manifest.resolve(p), &classes))
        .collect::<Result<Vec<bool>, _>>()?;
    let scan_paths = manifest
        .scan_paths
        .iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|(p, _)| p.clone())
        .collect();
    Ok(DatasetManifest { scan_paths, ..manifest.clone() })
}

/// Loads every scan of a manifest in parallel, preserving manifest order.
pub fn load_dataset(manifest: &DatasetManifest) -> Result<Vec<Scan<f64>>, ScanIoError> {
    let classes = manifest.partition();
    manifest.scan_files().par_iter().map(|p| load_scan(p, &classes)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ClassLabel;

    fn classes() -> ClassPartition {
        ClassPartition::new(vec!["car".into(), "ped".into()], vec!["cart".into()]).unwrap()
    }

    fn sample_scan() -> Scan<f64> {
        let b = Box3D::new([1.0, 2.0, 0.5], [4.0, 2.0, 1.5], 0.1).unwrap();
        let mut s = Scan::empty("s1");
        s.cloud = PointCloud::new(vec![Point::new(0.1, 0.2, 0.3, 0.4), Point::new(1.0 / 3.0, -2.0, 7.25, 0.0)]);
        s.ground_truth = vec![GroundTruthObject { bbox: b, label: ClassLabel::Open(0), point_indices: Some(vec![1]) }];
        let mut d = Detection::new(b, 0.7, vec![0.3, -1.0 / 7.0], vec![0.5, 0.25]).unwrap();
        d.ood_score = Some(0.123456789);
        d.logit_samples = Some(vec![vec![0.1, 0.2], vec![0.3, 0.4]]);
        s.detections = vec![d];
        s
    }

    #[test]
    fn empty_scan_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.json");
        let s = Scan::empty("e");
        save_scan(&s, &p, &classes(), SaveOptions::default()).unwrap();
        assert_eq!(load_scan(&p, &classes()).unwrap(), s);
    }

    #[test]
    fn inline_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.json");
        let s = sample_scan();
        save_scan(&s, &p, &classes(), SaveOptions::default()).unwrap();
        assert_eq!(load_scan(&p, &classes()).unwrap(), s);
    }

    #[test]
    fn argmax_mismatch_is_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.json");
        let doc = r#"{"scan_id":"x","points":[],"ground_truth":[],
            "detections":[{"box":[0,0,0,1,1,1,0],"score":0.5,"logits":[0.1,0.9],"predicted_class":0,"embedding":[]}]}"#;
        std::fs::write(&p, doc).unwrap();
        assert!(matches!(load_scan(&p, &classes()), Err(ScanIoError::Schema { .. })));
    }

    #[test]
    fn schema_and_parse_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.json");
        std::fs::write(&p, "{\n\"scan_id\": \"x\",\n\"points\": [oops]}").unwrap();
        match load_scan(&p, &classes()) {
            Err(ScanIoError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
        let doc = r#"{"scan_id":"x","points":[],"ground_truth":[{"box":[0,0,0,1,1,1,0],"class":"bus"}],"detections":[]}"#;
        std::fs::write(&p, doc).unwrap();
        assert!(matches!(load_scan(&p, &classes()), Err(ScanIoError::Schema { .. })));
        let doc = r#"{"scan_id":"x","points":[],"ground_truth":[],
            "detections":[{"box":[0,0,0,1,1,1,0],"score":0.5,"logits":[0.1,0.9,0.3],"embedding":[]}]}"#;
        std::fs::write(&p, doc).unwrap();
        assert!(matches!(load_scan(&p, &classes()), Err(ScanIoError::Schema { .. })));
        assert!(matches!(load_scan(&dir.path().join("missing.json"), &classes()), Err(ScanIoError::Io { .. })));
    }

    #[test]
    fn manifest_round_trip_and_filter() {
        let dir = tempfile::tempdir().unwrap();
        let c = classes();
        let mut with_open = sample_scan();
        with_open.scan_id = "a".into();
        let mut closed = sample_scan();
        closed.scan_id = "b".into();
        closed.ground_truth[0].label = ClassLabel::Known(1);
        save_scan(&with_open, &dir.path().join("a.json"), &c, SaveOptions::default()).unwrap();
        save_scan(&closed, &dir.path().join("b.json"), &c, SaveOptions::default()).unwrap();
        let m = DatasetManifest {
            name: "t".into(),
            known_classes: c.known.clone(),
            open_classes: c.open.clone(),
            scan_paths: vec!["a.json".into(), "b.json".into()],
            intensity_stats: (0.3, 0.1),
            root: PathBuf::new(),
        };
        let mp = dir.path().join("manifest.json");
        m.save(&mp).unwrap();
        let loaded = DatasetManifest::load(&mp).unwrap();
        assert_eq!(loaded.scan_paths, m.scan_paths);
        let f = filter_open_subset(&loaded).unwrap();
        assert_eq!(f.scan_paths, vec![PathBuf::from("a.json")]);
        assert_eq!(filter_open_subset(&f).unwrap(), f);
        assert_eq!(load_dataset(&loaded).unwrap().len(), 2);
    }
}
