//! Per-detection embedding extraction from bird's-eye-view feature maps.
//!
//! Grid convention: world `x` runs along columns, world `y` along rows, and
//! the center of cell `(0, 0)` sits at the map origin.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Scan;
use crate::num::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProbeError {
    #[error("query ({x}, {y}) lies outside the feature map extent")]
    OutOfBounds { x: f64, y: f64 },
    #[error("scan has no {0:?} feature map")]
    MissingMap(MapSource),
    #[error("invalid feature map: {0}")]
    InvalidMap(String),
}

/// Dense `rows × cols × dim` grid of feature vectors, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<T> {
    pub rows: usize,
    pub cols: usize,
    pub dim: usize,
    pub origin: [T; 2],
    pub cell_size: T,
    pub data: Vec<T>,
}

impl<T: Real> FeatureMap<T> {
    pub fn new(rows: usize, cols: usize, dim: usize, origin: [T; 2], cell_size: T, data: Vec<T>) -> Result<Self, ProbeError> {
        let m = Self { rows, cols, dim, origin, cell_size, data };
        m.validate()?;
        Ok(m)
    }

    pub fn zeros(rows: usize, cols: usize, dim: usize, origin: [T; 2], cell_size: T) -> Result<Self, ProbeError> {
        Self::new(rows, cols, dim, origin, cell_size, vec![T::zero(); rows * cols * dim])
    }

    pub fn validate(&self) -> Result<(), ProbeError> {
        if self.rows == 0 || self.cols == 0 || self.dim == 0 {
            return Err(ProbeError::InvalidMap("rows, cols and dim must be positive".into()));
        }
        if !(self.cell_size > T::zero()) || !self.cell_size.is_finite() {
            return Err(ProbeError::InvalidMap("cell_size must be positive".into()));
        }
        if !self.origin[0].is_finite() || !self.origin[1].is_finite() {
            return Err(ProbeError::InvalidMap("origin must be finite".into()));
        }
        if self.data.len() != self.rows * self.cols * self.dim {
            return Err(ProbeError::InvalidMap(format!(
                "data length {} != {}x{}x{}",
                self.data.len(),
                self.rows,
                self.cols,
                self.dim
            )));
        }
        if self.data.iter().any(|v| !v.is_finite()) {
            return Err(ProbeError::InvalidMap("non-finite feature".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn cell(&self, row: usize, col: usize) -> &[T] {
        let start = (row * self.cols + col) * self.dim;
        &self.data[start..start + self.dim]
    }

    #[inline]
    pub fn cell_mut(&mut self, row: usize, col: usize) -> &mut [T] {
        let start = (row * self.cols + col) * self.dim;
        &mut self.data[start..start + self.dim]
    }

    /// World position of a cell center.
    pub fn cell_center(&self, row: usize, col: usize) -> [T; 2] {
        [
            self.origin[0] + T::from_usize_lossy(col) * self.cell_size,
            self.origin[1] + T::from_usize_lossy(row) * self.cell_size,
        ]
    }

    /// Side lengths covered by the map in meters, `(x, y)`.
    pub fn extent(&self) -> [T; 2] {
        [
            T::from_usize_lossy(self.cols) * self.cell_size,
            T::from_usize_lossy(self.rows) * self.cell_size,
        ]
    }

    /// Max over the replicate-padded 3×3 neighborhood of one cell.
    pub fn pooled_cell(&self, row: usize, col: usize) -> Vec<T> {
        let mut out = self.cell(row, col).to_vec();
        let r_lo = row.saturating_sub(1);
        let r_hi = (row + 1).min(self.rows - 1);
        let c_lo = col.saturating_sub(1);
        let c_hi = (col + 1).min(self.cols - 1);
        // clamped neighbors are a subset of the replicate-padded window, with the same max
        for r in r_lo..=r_hi {
            for c in c_lo..=c_hi {
                for (o, &v) in out.iter_mut().zip(self.cell(r, c)) {
                    if v > *o {
                        *o = v;
                    }
                }
            }
        }
        out
    }
}

/// Continuous grid coordinates `(row, col)` of a world point; cell centers map to integers.
pub fn world_to_grid<T: Real>(map: &FeatureMap<T>, x: T, y: T) -> (T, T) {
    ((y - map.origin[1]) / map.cell_size, (x - map.origin[0]) / map.cell_size)
}

/// Per-channel 3×3 max pooling, stride 1, replicate padding.
pub fn max_pool3x3<T: Real>(map: &FeatureMap<T>) -> FeatureMap<T> {
    let mut data = Vec::with_capacity(map.data.len());
    for r in 0..map.rows {
        for c in 0..map.cols {
            data.extend(map.pooled_cell(r, c));
        }
    }
    FeatureMap { data, ..map.clone() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum MapSource {
    #[default]
    LowDim,
    HighDim,
}

/// Input-processing switches for embedding extraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub source: MapSource,
    pub interpolate: bool,
    pub pool3x3: bool,
}

impl Default for ProbeConfig {
    /// High-dim source, interpolation and pooling all enabled.
    fn default() -> Self {
        Self { source: MapSource::HighDim, interpolate: true, pool3x3: true }
    }
}

fn round_half_away<T: Real>(v: T) -> T {
    // `Float::round` already rounds half away from zero
    v.round()
}

fn clamp_index<T: Real>(v: T, n: usize) -> usize {
    let max = T::from_usize_lossy(n - 1);
    v.max(T::zero()).min(max).to_usize().unwrap_or(0)
}

/// Extracts the embedding at a world position.
///
/// Queries up to half a cell beyond the map extent are clamped to the border
/// cells; anything farther is [`ProbeError::OutOfBounds`].
pub fn probe<T: Real>(map: &FeatureMap<T>, center: [T; 2], config: &ProbeConfig) -> Result<Vec<T>, ProbeError> {
    let (row, col) = world_to_grid(map, center[0], center[1]);
    let half = T::lit(0.5);
    let inside = |v: T, n: usize| v.is_finite() && v >= -(half + half) && v <= T::from_usize_lossy(n);
    if !inside(row, map.rows) || !inside(col, map.cols) {
        return Err(ProbeError::OutOfBounds { x: center[0].to_f64_lossy(), y: center[1].to_f64_lossy() });
    }
    let fetch = |r: usize, c: usize| -> Vec<T> {
        if config.pool3x3 {
            map.pooled_cell(r, c)
        } else {
            map.cell(r, c).to_vec()
        }
    };

    if !config.interpolate {
        let r = clamp_index(round_half_away(row), map.rows);
        let c = clamp_index(round_half_away(col), map.cols);
        return Ok(fetch(r, c));
    }

    let rmax = T::from_usize_lossy(map.rows - 1);
    let cmax = T::from_usize_lossy(map.cols - 1);
    let rq = row.max(T::zero()).min(rmax);
    let cq = col.max(T::zero()).min(cmax);
    let r0 = rq.floor();
    let c0 = cq.floor();
    let fr = rq - r0;
    let fc = cq - c0;
    let r0i = clamp_index(r0, map.rows);
    let c0i = clamp_index(c0, map.cols);
    let r1i = (r0i + 1).min(map.rows - 1);
    let c1i = (c0i + 1).min(map.cols - 1);

    let one = T::one();
    let weights = [
        ((one - fr) * (one - fc), r0i, c0i),
        ((one - fr) * fc, r0i, c1i),
        (fr * (one - fc), r1i, c0i),
        (fr * fc, r1i, c1i),
    ];
    let mut out = vec![T::zero(); map.dim];
    for (w, r, c) in weights {
        if w == T::zero() {
            continue;
        }
        for (o, v) in out.iter_mut().zip(fetch(r, c)) {
            *o = *o + w * v;
        }
    }
    Ok(out)
}

/// Probes the scan's map selected by `config.source`.
pub fn probe_scan<T: Real>(scan: &Scan<T>, center: [T; 2], config: &ProbeConfig) -> Result<Vec<T>, ProbeError> {
    let map = match config.source {
        MapSource::LowDim => scan.feature_map_low.as_ref(),
        MapSource::HighDim => scan.feature_map_high.as_ref(),
    }
    .ok_or(ProbeError::MissingMap(config.source))?;
    probe(map, center, config)
}

/// Radius in meters aggregated by one pooled cell: 3 cells span `2 · radius`.
pub fn pooled_radius<T: Real>(cell_size: T) -> T {
    T::lit(3.0) * cell_size / T::lit(2.0)
}
