//! Triangle meshes for object injection: an OFF reader, a few procedural
//! shapes, area-weighted surface sampling and voxel-grid thinning.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::path::Path;

use rand::Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::Distribution;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("OFF line {line}: {msg}")]
    Off { line: usize, msg: String },
    #[error("{path}: {source}")]
    Io { path: std::path::PathBuf, source: std::io::Error },
    #[error("mesh has no triangles with positive area")]
    Degenerate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<[f64; 3]>,
    pub faces: Vec<[usize; 3]>,
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn norm(a: [f64; 3]) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

impl TriMesh {
    pub fn triangle(&self, f: usize) -> [[f64; 3]; 3] {
        self.faces[f].map(|i| self.vertices[i])
    }

    pub fn triangle_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.triangle(f);
        norm(cross(sub(b, a), sub(c, a))) / 2.0
    }

    pub fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for v in &self.vertices {
            for k in 0..3 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        (lo, hi)
    }

    /// Centers the bounding box at the origin and scales its largest side to 1.
    pub fn normalized(&self) -> Result<TriMesh, MeshError> {
        let (lo, hi) = self.bounds();
        let extent = (0..3).map(|k| hi[k] - lo[k]).fold(0.0, f64::max);
        if !(extent > 0.0 && extent.is_finite()) {
            return Err(MeshError::Degenerate);
        }
        let mid = [0, 1, 2].map(|k| (lo[k] + hi[k]) / 2.0);
        let vertices = self.vertices.iter().map(|v| [0, 1, 2].map(|k| (v[k] - mid[k]) / extent)).collect();
        Ok(TriMesh { vertices, faces: self.faces.clone() })
    }

    /// Area-weighted uniform samples on the surface.
    pub fn sample_surface(&self, n: usize, rng: &mut impl Rng) -> Result<Vec<[f64; 3]>, MeshError> {
        let areas: Vec<f64> = (0..self.faces.len()).map(|f| self.triangle_area(f)).collect();
        let pick = WeightedIndex::new(&areas).map_err(|_| MeshError::Degenerate)?;
        Ok((0..n)
            .map(|_| {
                let [a, b, c] = self.triangle(pick.sample(rng));
                let r1: f64 = rng.random::<f64>().sqrt();
                let r2: f64 = rng.random();
                let (wa, wb, wc) = (1.0 - r1, r1 * (1.0 - r2), r1 * r2);
                [0, 1, 2].map(|k| wa * a[k] + wb * b[k] + wc * c[k])
            })
            .collect())
    }

    fn push_quad(&mut self, q: [usize; 4]) {
        self.faces.push([q[0], q[1], q[2]]);
        self.faces.push([q[0], q[2], q[3]]);
    }

    /// Axis-aligned box with the given side lengths, centered at the origin.
    pub fn cuboid(size: [f64; 3]) -> TriMesh {
        Self::cuboid_at([0.0; 3], size)
    }

    fn cuboid_at(center: [f64; 3], size: [f64; 3]) -> TriMesh {
        let h = size.map(|s| s / 2.0);
        let mut m = TriMesh { vertices: Vec::with_capacity(8), faces: Vec::with_capacity(12) };
        for i in 0..8 {
            let sx = if i & 1 == 0 { -1.0 } else { 1.0 };
            let sy = if i & 2 == 0 { -1.0 } else { 1.0 };
            let sz = if i & 4 == 0 { -1.0 } else { 1.0 };
            m.vertices.push([center[0] + sx * h[0], center[1] + sy * h[1], center[2] + sz * h[2]]);
        }
        for q in [[0, 2, 3, 1], [4, 5, 7, 6], [0, 1, 5, 4], [2, 6, 7, 3], [0, 4, 6, 2], [1, 3, 7, 5]] {
            m.push_quad(q);
        }
        m
    }

    fn merge(parts: &[TriMesh]) -> TriMesh {
        let mut out = TriMesh { vertices: Vec::new(), faces: Vec::new() };
        for p in parts {
            let base = out.vertices.len();
            out.vertices.extend_from_slice(&p.vertices);
            out.faces.extend(p.faces.iter().map(|f| f.map(|i| i + base)));
        }
        out
    }

    /// Closed frustum between radii `r0` (bottom) and `r1` (top); `r1 = 0` gives a cone.
    pub fn frustum(r0: f64, r1: f64, height: f64, segments: usize) -> TriMesh {
        let mut m = TriMesh { vertices: Vec::new(), faces: Vec::new() };
        let z0 = -height / 2.0;
        let z1 = height / 2.0;
        for i in 0..segments {
            let t = TAU * i as f64 / segments as f64;
            m.vertices.push([r0 * t.cos(), r0 * t.sin(), z0]);
            m.vertices.push([r1 * t.cos(), r1 * t.sin(), z1]);
        }
        let bottom = m.vertices.len();
        m.vertices.push([0.0, 0.0, z0]);
        m.vertices.push([0.0, 0.0, z1]);
        for i in 0..segments {
            let j = (i + 1) % segments;
            let (b0, t0, b1, t1) = (2 * i, 2 * i + 1, 2 * j, 2 * j + 1);
            m.faces.push([b0, b1, t1]);
            m.faces.push([b0, t1, t0]);
            m.faces.push([bottom, b1, b0]);
            m.faces.push([bottom + 1, t0, t1]);
        }
        m
    }

    pub fn cylinder(radius: f64, height: f64, segments: usize) -> TriMesh {
        Self::frustum(radius, radius, height, segments)
    }

    pub fn cone(radius: f64, height: f64, segments: usize) -> TriMesh {
        Self::frustum(radius, 0.0, height, segments)
    }

    /// Two slabs forming an L in the ground plane.
    pub fn l_shape() -> TriMesh {
        Self::merge(&[Self::cuboid_at([0.0, 0.0, 0.0], [1.0, 0.3, 0.5]), Self::cuboid_at([-0.35, 0.45, 0.0], [0.3, 0.6, 0.5])])
    }

    /// A top slab on four legs.
    pub fn table() -> TriMesh {
        let mut parts = vec![Self::cuboid_at([0.0, 0.0, 0.3], [1.0, 0.6, 0.08])];
        for (x, y) in [(-0.45, -0.25), (0.45, -0.25), (-0.45, 0.25), (0.45, 0.25)] {
            parts.push(Self::cuboid_at([x, y, -0.04], [0.06, 0.06, 0.6]));
        }
        Self::merge(&parts)
    }
}

/// Reads an ASCII OFF mesh; polygons are fan-triangulated.
pub fn parse_off(text: &str) -> Result<TriMesh, MeshError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(n, l)| (n + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());
    let err = |line: usize, msg: &str| MeshError::Off { line, msg: msg.to_string() };
    let (n, first) = lines.next().ok_or_else(|| err(1, "empty file"))?;
    let rest = first.strip_prefix("OFF").ok_or_else(|| err(n, "missing OFF header"))?.trim();
    // some exporters glue the counts onto the header line
    let (n, counts) = if rest.is_empty() { lines.next().ok_or_else(|| err(n, "missing counts"))? } else { (n, rest) };
    let counts: Vec<usize> = counts.split_whitespace().map(|t| t.parse().map_err(|_| err(n, "bad count"))).collect::<Result<_, _>>()?;
    let [nv, nf, ..] = counts[..] else { return Err(err(n, "expected vertex and face counts")) };

    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (n, l) = lines.next().ok_or_else(|| err(n, "truncated vertex list"))?;
        let v: Vec<f64> = l.split_whitespace().take(3).map(|t| t.parse().map_err(|_| err(n, "bad coordinate"))).collect::<Result<_, _>>()?;
        let [x, y, z] = v[..] else { return Err(err(n, "vertex needs 3 coordinates")) };
        if !(x.is_finite() && y.is_finite() && z.is_finite()) {
            return Err(err(n, "non-finite coordinate"));
        }
        vertices.push([x, y, z]);
    }
    let mut faces = Vec::with_capacity(nf);
    for _ in 0..nf {
        let (n, l) = lines.next().ok_or_else(|| err(n, "truncated face list"))?;
        let v: Vec<usize> = l.split_whitespace().map(|t| t.parse().map_err(|_| err(n, "bad index"))).collect::<Result<_, _>>()?;
        let (&k, idx) = v.split_first().ok_or_else(|| err(n, "empty face"))?;
        if k < 3 || idx.len() < k || idx[..k].iter().any(|&i| i >= nv) {
            return Err(err(n, "malformed face"));
        }
        for t in 1..k - 1 {
            faces.push([idx[0], idx[t], idx[t + 1]]);
        }
    }
    Ok(TriMesh { vertices, faces })
}

pub fn read_off(path: &Path) -> Result<TriMesh, MeshError> {
    let text = std::fs::read_to_string(path).map_err(|e| MeshError::Io { path: path.to_path_buf(), source: e })?;
    parse_off(&text)
}

/// Keeps at most `keep` points per occupied cell of a `cells³` grid over the
/// cube `[-0.5, 0.5]³`, in sample order within each cell. Cells are visited
/// in index order so the output is deterministic.
pub fn grid_sample(points: &[[f64; 3]], cells: usize, keep: usize) -> Vec<[f64; 3]> {
    let mut bins: BTreeMap<[usize; 3], Vec<[f64; 3]>> = BTreeMap::new();
    for &p in points {
        let bin = voxel_of(p, cells);
        let slot = bins.entry(bin).or_default();
        if slot.len() < keep {
            slot.push(p);
        }
    }
    bins.into_values().flatten().collect()
}

/// Voxel index of a point in the unit-cube grid used by [`grid_sample`].
pub fn voxel_of(p: [f64; 3], cells: usize) -> [usize; 3] {
    p.map(|v| (((v + 0.5) * cells as f64).floor().max(0.0) as usize).min(cells - 1))
}

/// Named meshes available for injection.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshBank {
    pub meshes: Vec<(String, TriMesh)>,
}

impl MeshBank {
    /// Box, cylinder, cone, L-shape and table.
    pub fn procedural() -> Self {
        Self {
            meshes: vec![
                ("box".into(), TriMesh::cuboid([1.0, 0.7, 0.5])),
                ("cylinder".into(), TriMesh::cylinder(0.3, 1.0, 24)),
                ("cone".into(), TriMesh::cone(0.4, 0.9, 24)),
                ("l_shape".into(), TriMesh::l_shape()),
                ("table".into(), TriMesh::table()),
            ],
        }
    }

    /// Procedural meshes plus every `*.off` file in `dir`, sorted by name.
    pub fn with_off_dir(dir: &Path) -> Result<Self, MeshError> {
        let mut bank = Self::procedural();
        let io = |e| MeshError::Io { path: dir.to_path_buf(), source: e };
        let mut files: Vec<_> = std::fs::read_dir(dir)
            .map_err(io)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("off")))
            .collect();
        files.sort();
        for f in files {
            let name = f.file_stem().and_then(|s| s.to_str()).unwrap_or("mesh").to_string();
            bank.meshes.push((name, read_off(&f)?));
        }
        Ok(bank)
    }

    pub fn is_empty(&self) -> bool {
        self.meshes.is_empty()
    }
}
