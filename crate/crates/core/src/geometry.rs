//! Box geometry: center distances, exact rotated-box overlap and point membership.

use crate::model::{Box3D, PointCloud};
use crate::num::Real;

/// Euclidean distance between box centers in 3D.
pub fn center_distance<T: Real>(a: &Box3D<T>, b: &Box3D<T>) -> T {
    let (dx, dy, dz) = (a.cx - b.cx, a.cy - b.cy, a.cz - b.cz);
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Euclidean distance between box centers in the ground plane.
pub fn bev_distance<T: Real>(a: &Box3D<T>, b: &Box3D<T>) -> T {
    (a.cx - b.cx).hypot(a.cy - b.cy)
}

/// Footprint corners in counter-clockwise order.
pub fn bev_corners<T: Real>(b: &Box3D<T>) -> [[T; 2]; 4] {
    let (s, c) = b.yaw.sin_cos();
    let hl = b.l / T::lit(2.0);
    let hw = b.w / T::lit(2.0);
    let local = [[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]];
    local.map(|[x, y]| [b.cx + x * c - y * s, b.cy + x * s + y * c])
}

/// Shoelace area, positive for counter-clockwise polygons.
pub fn polygon_area<T: Real>(poly: &[[T; 2]]) -> T {
    if poly.len() < 3 {
        return T::zero();
    }
    let mut acc = T::zero();
    for i in 0..poly.len() {
        let [x0, y0] = poly[i];
        let [x1, y1] = poly[(i + 1) % poly.len()];
        acc = acc + (x0 * y1 - x1 * y0);
    }
    acc / T::lit(2.0)
}

#[inline]
fn cross<T: Real>(o: [T; 2], a: [T; 2], p: [T; 2]) -> T {
    (a[0] - o[0]) * (p[1] - o[1]) - (a[1] - o[1]) * (p[0] - o[0])
}

/// Sutherland–Hodgman clip of `subject` by the convex, counter-clockwise `clip` polygon.
pub fn clip_convex<T: Real>(subject: &[[T; 2]], clip: &[[T; 2]]) -> Vec<[T; 2]> {
    let mut output: Vec<[T; 2]> = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        let input = std::mem::take(&mut output);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let cur_side = cross(a, b, cur);
            let prev_side = cross(a, b, prev);
            let cur_in = cur_side >= T::zero();
            let prev_in = prev_side >= T::zero();
            if cur_in {
                if !prev_in {
                    output.push(segment_intersection(prev, cur, prev_side, cur_side));
                }
                output.push(cur);
            } else if prev_in {
                output.push(segment_intersection(prev, cur, prev_side, cur_side));
            }
        }
    }
    output
}

fn segment_intersection<T: Real>(p: [T; 2], q: [T; 2], sp: T, sq: T) -> [T; 2] {
    let t = sp / (sp - sq);
    [p[0] + (q[0] - p[0]) * t, p[1] + (q[1] - p[1]) * t]
}

/// Intersection area of the two footprints.
pub fn bev_overlap_area<T: Real>(a: &Box3D<T>, b: &Box3D<T>) -> T {
    // cheap rejection on circumscribed circles
    let ra = a.l.hypot(a.w) / T::lit(2.0);
    let rb = b.l.hypot(b.w) / T::lit(2.0);
    if bev_distance(a, b) > ra + rb {
        return T::zero();
    }
    let clipped = clip_convex(&bev_corners(a), &bev_corners(b));
    polygon_area(&clipped).max(T::zero())
}

/// Exact intersection volume of two upright, yaw-rotated boxes.
pub fn box_overlap_3d<T: Real>(a: &Box3D<T>, b: &Box3D<T>) -> T {
    let dz = a.z_max().min(b.z_max()) - a.z_min().max(b.z_min());
    if dz <= T::zero() {
        return T::zero();
    }
    let area = bev_overlap_area(a, b);
    (area * dz).min(a.volume()).min(b.volume())
}

/// Maps a world point into the box frame (x along heading, z up from the center).
#[inline]
pub fn to_box_frame<T: Real>(b: &Box3D<T>, x: T, y: T, z: T) -> [T; 3] {
    let (s, c) = b.yaw.sin_cos();
    let dx = x - b.cx;
    let dy = y - b.cy;
    [dx * c + dy * s, -dx * s + dy * c, z - b.cz]
}

/// Inverse of [`to_box_frame`].
#[inline]
pub fn from_box_frame<T: Real>(b: &Box3D<T>, local: [T; 3]) -> [T; 3] {
    let (s, c) = b.yaw.sin_cos();
    [
        b.cx + local[0] * c - local[1] * s,
        b.cy + local[0] * s + local[1] * c,
        b.cz + local[2],
    ]
}

/// Whether a world point lies inside the box; faces count as inside.
#[inline]
pub fn contains_point<T: Real>(b: &Box3D<T>, x: T, y: T, z: T) -> bool {
    let [lx, ly, lz] = to_box_frame(b, x, y, z);
    let two = T::lit(2.0);
    lx.abs() <= b.l / two && ly.abs() <= b.w / two && lz.abs() <= b.h / two
}

/// Indices of the points inside the box, in ascending order.
pub fn points_in_box<T: Real>(cloud: &PointCloud<T>, b: &Box3D<T>) -> Vec<usize> {
    cloud
        .points
        .iter()
        .enumerate()
        .filter(|(_, p)| contains_point(b, p.x, p.y, p.z))
        .map(|(i, _)| i)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Point;

    fn unit(cx: f64, cy: f64, cz: f64) -> Box3D<f64> {
        Box3D::new([cx, cy, cz], [1.0, 1.0, 1.0], 0.0).unwrap()
    }

    #[test]
    fn distance_examples() {
        assert_eq!(center_distance(&unit(0.0, 0.0, 0.0), &unit(0.0, 0.0, 0.0)), 0.0);
        assert_eq!(center_distance(&unit(0.0, 0.0, 0.0), &unit(3.0, 4.0, 0.0)), 5.0);
        assert_eq!(center_distance(&unit(1.0, 2.0, 3.0), &unit(2.0, 4.0, 5.0)), 3.0);
        assert_eq!(bev_distance(&unit(0.0, 0.0, 7.0), &unit(3.0, 4.0, 0.0)), 5.0);
    }

    #[test]
    fn overlap_examples() {
        let a = unit(0.0, 0.0, 0.0);
        assert!((box_overlap_3d(&a, &a) - 1.0).abs() < 1e-12);
        assert_eq!(box_overlap_3d(&a, &unit(10.0, 0.0, 0.0)), 0.0);
        assert!((box_overlap_3d(&a, &unit(0.5, 0.0, 0.0)) - 0.5).abs() < 1e-12);
        assert_eq!(box_overlap_3d(&a, &unit(0.0, 0.0, 1.0)), 0.0);
    }

    #[test]
    fn rotated_square_in_square() {
        // a 45° rotated unit square inside a 2x2 square overlaps fully
        let big = Box3D::new([0.0, 0.0, 0.0], [2.0, 2.0, 1.0], 0.0).unwrap();
        let rot = Box3D::new([0.0, 0.0, 0.0], [1.0, 1.0, 1.0], std::f64::consts::FRAC_PI_4).unwrap();
        assert!((box_overlap_3d(&big, &rot) - 1.0).abs() < 1e-12);
        // two unit squares, one rotated 45°: octagon area 2(√2 − 1)
        let a = unit(0.0, 0.0, 0.0);
        let expected = 2.0 * (2f64.sqrt() - 1.0);
        assert!((box_overlap_3d(&a, &rot) - expected).abs() < 1e-12);
    }

    #[test]
    fn points_in_box_examples() {
        let b = Box3D::new([1.0, 1.0, 0.0], [2.0, 1.0, 1.0], 0.7).unwrap();
        assert!(points_in_box(&PointCloud::<f64>::default(), &b).is_empty());
        let cloud = PointCloud::new(vec![Point::new(1.0, 1.0, 0.0, 0.0), Point::new(5.0, 5.0, 0.0, 0.0)]);
        assert_eq!(points_in_box(&cloud, &b), vec![0]);
    }

    #[test]
    fn face_points_count_as_inside() {
        let b = unit(0.0, 0.0, 0.0);
        assert!(contains_point(&b, 0.5, 0.0, 0.0));
        assert!(contains_point(&b, 0.5, -0.5, 0.5));
        assert!(!contains_point(&b, 0.5000001, 0.0, 0.0));
    }

    #[test]
    fn frame_round_trip() {
        let b: Box3D<f64> = Box3D::new([3.0, -2.0, 1.0], [4.0, 2.0, 1.5], 2.1).unwrap();
        let w = from_box_frame(&b, [0.3, -0.7, 0.2]);
        let l = to_box_frame(&b, w[0], w[1], w[2]);
        assert!((l[0] - 0.3).abs() < 1e-12 && (l[1] + 0.7).abs() < 1e-12 && (l[2] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn works_in_f32() {
        let a = Box3D::new([0.0f32, 0.0, 0.0], [1.0, 1.0, 1.0], 0.0).unwrap();
        let b = Box3D::new([0.5f32, 0.0, 0.0], [1.0, 1.0, 1.0], 0.0).unwrap();
        assert!((box_overlap_3d(&a, &b) - 0.5).abs() < 1e-6);
    }
}
