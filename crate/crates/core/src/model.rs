//! Domain types shared by every stage of the toolkit.
//!
//! All types are plain values: once built and validated they are never
//! mutated in place by the evaluation path, so they can be shared freely
//! across worker threads.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::num::{argmax, Real};
use crate::probe::FeatureMap;

/// Class name given to objects fabricated by the unknown generators.
pub const FORGED_CLASS_NAME: &str = "pseudo_unknown";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("box dimensions must be finite and strictly positive (l={l}, w={w}, h={h})")]
    InvalidDimensions { l: f64, w: f64, h: f64 },
    #[error("box field is not finite")]
    NonFiniteBox,
    #[error("detection has empty logits")]
    EmptyLogits,
    #[error("logit length {got} does not match the {expected} known classes")]
    LogitLength { expected: usize, got: usize },
    #[error("declared predicted class {declared} differs from logits argmax {argmax}")]
    PredictedClassMismatch { declared: usize, argmax: usize },
    #[error("logit sample {index} has length {got}, expected {expected}")]
    SampleLength { index: usize, expected: usize, got: usize },
    #[error("detector score {0} outside [0, 1]")]
    ScoreRange(f64),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("class partition invalid: {0}")]
    Partition(String),
}

/// Upright box with a single heading angle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3D<T> {
    pub cx: T,
    pub cy: T,
    pub cz: T,
    pub l: T,
    pub w: T,
    pub h: T,
    /// Heading in radians, normalized into `[-π, π)`.
    pub yaw: T,
}

/// Wraps an angle into `[-π, π)`.
pub fn normalize_yaw<T: Real>(yaw: T) -> T {
    let pi = T::PI();
    let two_pi = pi + pi;
    if yaw >= -pi && yaw < pi {
        return yaw;
    }
    let mut y = (yaw + pi) % two_pi;
    if y < T::zero() {
        y = y + two_pi;
    }
    let y = y - pi;
    // rounding can land exactly on +π
    if y >= pi {
        -pi
    } else {
        y
    }
}

impl<T: Real> Box3D<T> {
    pub fn new(center: [T; 3], dims: [T; 3], yaw: T) -> Result<Self, ModelError> {
        let b = Self {
            cx: center[0],
            cy: center[1],
            cz: center[2],
            l: dims[0],
            w: dims[1],
            h: dims[2],
            yaw: normalize_yaw(yaw),
        };
        b.validate()?;
        Ok(b)
    }

    /// Builds from the serialized `[cx, cy, cz, l, w, h, yaw]` layout.
    pub fn from_array(v: [T; 7]) -> Result<Self, ModelError> {
        Self::new([v[0], v[1], v[2]], [v[3], v[4], v[5]], v[6])
    }

    pub fn to_array(&self) -> [T; 7] {
        [self.cx, self.cy, self.cz, self.l, self.w, self.h, self.yaw]
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.to_array().iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFiniteBox);
        }
        if !(self.l > T::zero() && self.w > T::zero() && self.h > T::zero()) {
            return Err(ModelError::InvalidDimensions {
                l: self.l.to_f64_lossy(),
                w: self.w.to_f64_lossy(),
                h: self.h.to_f64_lossy(),
            });
        }
        Ok(())
    }

    pub fn center(&self) -> [T; 3] {
        [self.cx, self.cy, self.cz]
    }

    pub fn volume(&self) -> T {
        self.l * self.w * self.h
    }

    pub fn z_min(&self) -> T {
        self.cz - self.h / T::lit(2.0)
    }

    pub fn z_max(&self) -> T {
        self.cz + self.h / T::lit(2.0)
    }

    /// Same box with different dimensions.
    pub fn with_dims(&self, l: T, w: T, h: T) -> Result<Self, ModelError> {
        Self::new(self.center(), [l, w, h], self.yaw)
    }
}

/// One predicted box together with the detector's per-box outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection<T> {
    pub bbox: Box3D<T>,
    pub score: T,
    pub logits: Vec<T>,
    pub predicted_class: usize,
    pub embedding: Vec<T>,
    pub ood_score: Option<T>,
    pub logit_samples: Option<Vec<Vec<T>>>,
}

impl<T: Real> Detection<T> {
    /// Builds a detection whose predicted class is the logits argmax.
    pub fn new(bbox: Box3D<T>, score: T, logits: Vec<T>, embedding: Vec<T>) -> Result<Self, ModelError> {
        let predicted_class = argmax(&logits).ok_or(ModelError::EmptyLogits)?;
        let d = Self {
            bbox,
            score,
            logits,
            predicted_class,
            embedding,
            ood_score: None,
            logit_samples: None,
        };
        d.validate(None)?;
        Ok(d)
    }

    pub fn with_samples(mut self, samples: Vec<Vec<T>>) -> Result<Self, ModelError> {
        self.logit_samples = Some(samples);
        self.validate(None)?;
        Ok(self)
    }

    /// Checks the detection invariants, optionally against the dataset's known-class count.
    pub fn validate(&self, known_classes: Option<usize>) -> Result<(), ModelError> {
        self.bbox.validate()?;
        if !(self.score >= T::zero() && self.score <= T::one()) {
            return Err(ModelError::ScoreRange(self.score.to_f64_lossy()));
        }
        if self.logits.is_empty() {
            return Err(ModelError::EmptyLogits);
        }
        if let Some(c) = known_classes {
            if self.logits.len() != c {
                return Err(ModelError::LogitLength { expected: c, got: self.logits.len() });
            }
        }
        if self.logits.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite("logits"));
        }
        if self.embedding.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite("embedding"));
        }
        let am = argmax(&self.logits).ok_or(ModelError::EmptyLogits)?;
        if am != self.predicted_class {
            return Err(ModelError::PredictedClassMismatch {
                declared: self.predicted_class,
                argmax: am,
            });
        }
        if let Some(samples) = &self.logit_samples {
            for (index, s) in samples.iter().enumerate() {
                if s.len() != self.logits.len() {
                    return Err(ModelError::SampleLength {
                        index,
                        expected: self.logits.len(),
                        got: s.len(),
                    });
                }
                if s.iter().any(|v| !v.is_finite()) {
                    return Err(ModelError::NonFinite("logit_samples"));
                }
            }
        }
        if let Some(s) = self.ood_score {
            if !s.is_finite() {
                return Err(ModelError::NonFinite("ood_score"));
            }
        }
        Ok(())
    }
}

/// Annotation class of a ground-truth object, resolved against a [`ClassPartition`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ClassLabel {
    /// Index into the known (closed) class list.
    Known(usize),
    /// Index into the open class list.
    Open(usize),
    /// Pseudo-unknown fabricated by a generator.
    Forged,
}

impl ClassLabel {
    pub fn is_open(self) -> bool {
        !matches!(self, ClassLabel::Known(_))
    }
}

/// The closed/open split of a dataset's class vocabulary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassPartition {
    pub known: Vec<String>,
    pub open: Vec<String>,
}

impl ClassPartition {
    pub fn new(known: Vec<String>, open: Vec<String>) -> Result<Self, ModelError> {
        let p = Self { known, open };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.known.is_empty() || self.open.is_empty() {
            return Err(ModelError::Partition("known and open class lists must be non-empty".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for name in self.known.iter().chain(&self.open) {
            if name == FORGED_CLASS_NAME {
                return Err(ModelError::Partition(format!("class name {name:?} is reserved")));
            }
            if !seen.insert(name.as_str()) {
                return Err(ModelError::Partition(format!("class {name:?} listed twice")));
            }
        }
        Ok(())
    }

    pub fn num_known(&self) -> usize {
        self.known.len()
    }

    pub fn resolve(&self, name: &str) -> Option<ClassLabel> {
        if name == FORGED_CLASS_NAME {
            return Some(ClassLabel::Forged);
        }
        if let Some(i) = self.known.iter().position(|k| k == name) {
            return Some(ClassLabel::Known(i));
        }
        self.open.iter().position(|k| k == name).map(ClassLabel::Open)
    }

    pub fn name(&self, label: ClassLabel) -> &str {
        match label {
            ClassLabel::Known(i) => &self.known[i],
            ClassLabel::Open(i) => &self.open[i],
            ClassLabel::Forged => FORGED_CLASS_NAME,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthObject<T> {
    pub bbox: Box3D<T>,
    pub label: ClassLabel,
    pub point_indices: Option<Vec<usize>>,
}

impl<T> GroundTruthObject<T> {
    pub fn is_open(&self) -> bool {
        self.label.is_open()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point<T> {
    pub x: T,
    pub y: T,
    pub z: T,
    pub intensity: T,
}

impl<T: Real> Point<T> {
    pub fn new(x: T, y: T, z: T, intensity: T) -> Self {
        Self { x, y, z, intensity }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite() && self.intensity.is_finite()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud<T> {
    pub points: Vec<Point<T>>,
}

impl<T: Real> PointCloud<T> {
    pub fn new(points: Vec<Point<T>>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for p in &self.points {
            if !p.is_finite() {
                return Err(ModelError::NonFinite("point cloud"));
            }
            if p.intensity < T::zero() {
                return Err(ModelError::NonFinite("negative intensity"));
            }
        }
        Ok(())
    }
}

/// One LiDAR sweep with its annotations and detector outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Scan<T> {
    pub scan_id: String,
    pub cloud: PointCloud<T>,
    pub ground_truth: Vec<GroundTruthObject<T>>,
    pub detections: Vec<Detection<T>>,
    pub feature_map_low: Option<FeatureMap<T>>,
    pub feature_map_high: Option<FeatureMap<T>>,
}

impl<T: Real> Scan<T> {
    pub fn empty(scan_id: impl Into<String>) -> Self {
        Self {
            scan_id: scan_id.into(),
            cloud: PointCloud::default(),
            ground_truth: Vec::new(),
            detections: Vec::new(),
            feature_map_low: None,
            feature_map_high: None,
        }
    }

    pub fn has_open_objects(&self) -> bool {
        self.ground_truth.iter().any(|g| g.is_open())
    }
}
