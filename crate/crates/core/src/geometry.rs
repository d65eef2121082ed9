//! Small geometric helpers shared across the pipeline.

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};

pub type Vec3 = Vector3<f64>;

/// Signed volume of tetrahedron (a, b, c, d); positive when (b-a, c-a, d-a)
/// is right-handed.
pub fn tet_signed_volume(a: &Vec3, b: &Vec3, c: &Vec3, d: &Vec3) -> f64 {
    (b - a).cross(&(c - a)).dot(&(d - a)) / 6.0
}

/// Area-scaled normal of triangle (a, b, c): twice the area, right-hand rule.
pub fn triangle_cross(a: &Vec3, b: &Vec3, c: &Vec3) -> Vec3 {
    (b - a).cross(&(c - a))
}

pub fn triangle_area(a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    0.5 * triangle_cross(a, b, c).norm()
}

/// Contribution of one oriented triangle to the divergence-theorem volume.
pub fn triangle_volume_term(a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    a.cross(b).dot(c) / 6.0
}

/// Rigid or similarity transform `x -> scale * R x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
    pub scale: f64,
}

impl Similarity {
    pub fn identity() -> Self {
        Similarity {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
            scale: 1.0,
        }
    }

    pub fn rigid(rotation: Matrix3<f64>, translation: Vec3) -> Self {
        Similarity {
            rotation,
            translation,
            scale: 1.0,
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p * self.scale + self.translation
    }

    /// Rotates and scales a direction, ignoring translation.
    pub fn apply_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v * self.scale
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Similarity {
            rotation: rt,
            translation: -(rt * self.translation) / self.scale,
            scale: 1.0 / self.scale,
        }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Similarity) -> Self {
        Similarity {
            rotation: self.rotation * other.rotation,
            translation: self.apply(&other.translation),
            scale: self.scale * other.scale,
        }
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        let r = self.rotation * self.scale;
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }
}

/// Applies a 4x4 homogeneous matrix to a point.
pub fn apply_affine(m: &Matrix4<f64>, p: &Vec3) -> Vec3 {
    let h = m * Vector4::new(p.x, p.y, p.z, 1.0);
    Vec3::new(h.x, h.y, h.z)
}

/// Rotation matrix about a unit axis by `angle` radians (Rodrigues).
pub fn axis_angle(axis: &Vec3, angle: f64) -> Matrix3<f64> {
    let unit = nalgebra::Unit::new_normalize(*axis);
    *nalgebra::Rotation3::from_axis_angle(&unit, angle).matrix()
}

/// Shoelace area of a closed planar polygon given in 2D coordinates.
pub fn polygon_area_2d(pts: &[[f64; 2]]) -> f64 {
    let n = pts.len();
    if n < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..n {
        let p = pts[i];
        let q = pts[(i + 1) % n];
        acc += p[0] * q[1] - q[0] * p[1];
    }
    0.5 * acc
}

/// Even-odd point in polygon test.
pub fn point_in_polygon_2d(pt: [f64; 2], poly: &[[f64; 2]]) -> bool {
    let mut inside = false;
    let n = poly.len();
    let mut j = n.wrapping_sub(1);
    for i in 0..n {
        let (pi, pj) = (poly[i], poly[j]);
        if (pi[1] > pt[1]) != (pj[1] > pt[1]) {
            let x = pj[0] + (pt[1] - pj[1]) * (pi[0] - pj[0]) / (pi[1] - pj[1]);
            if pt[0] < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Axis-aligned bucket grid for nearest-neighbour queries over a fixed
/// point subset.
pub struct BucketGrid {
    origin: Vec3,
    cell: f64,
    dims: [usize; 3],
    buckets: Vec<Vec<usize>>,
    points: Vec<(usize, Vec3)>,
}

impl BucketGrid {
    /// Indexes `points` (pairs of caller id and position).
    pub fn new(points: Vec<(usize, Vec3)>) -> Self {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for (_, p) in &points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        if points.is_empty() {
            lo = Vec3::zeros();
            hi = Vec3::zeros();
        }
        let extent = hi - lo;
        let n = points.len().max(1) as f64;
        // roughly two points per occupied cell for surface-like sets
        let vol = extent.x.max(1e-9) * extent.y.max(1e-9) * extent.z.max(1e-9);
        let mut cell = (vol / n * 2.0).cbrt();
        let longest = extent.max().max(1e-9);
        cell = cell.max(longest / 128.0).max(1e-9);
        let dims = [
            (extent.x / cell).floor() as usize + 1,
            (extent.y / cell).floor() as usize + 1,
            (extent.z / cell).floor() as usize + 1,
        ];
        let mut buckets = vec![Vec::new(); dims[0] * dims[1] * dims[2]];
        for (k, (_, p)) in points.iter().enumerate() {
            let c = Self::cell_of(&lo, cell, &dims, p);
            buckets[c[0] + dims[0] * (c[1] + dims[1] * c[2])].push(k);
        }
        BucketGrid {
            origin: lo,
            cell,
            dims,
            buckets,
            points,
        }
    }

    fn cell_of(origin: &Vec3, cell: f64, dims: &[usize; 3], p: &Vec3) -> [usize; 3] {
        let mut out = [0usize; 3];
        for a in 0..3 {
            let f = ((p[a] - origin[a]) / cell).floor();
            out[a] = if f < 0.0 {
                0
            } else {
                (f as usize).min(dims[a] - 1)
            };
        }
        out
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Returns `(id, squared distance)` of the nearest indexed point. Ties are
    /// broken by the smallest id so results are deterministic.
    pub fn nearest(&self, q: &Vec3) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let c = Self::cell_of(&self.origin, self.cell, &self.dims, q);
        let mut best: Option<(usize, f64)> = None;
        let max_ring = self.dims.iter().copied().max().unwrap_or(1);
        for ring in 0..=max_ring {
            self.visit_shell(&c, ring, |k| {
                let (id, p) = &self.points[k];
                let d2 = (p - q).norm_squared();
                match best {
                    Some((bid, bd)) if d2 > bd || (d2 == bd && *id >= bid) => {}
                    _ => best = Some((*id, d2)),
                }
            });
            // every point closer than the block boundary has been visited
            if let Some((_, d2)) = best {
                let outside = self.outside_distance(q, &c, ring);
                if outside * outside > d2 {
                    break;
                }
            }
        }
        best
    }

    /// Lower bound on the distance from `q` to any cell outside the block of
    /// half-width `ring` around `c`.
    fn outside_distance(&self, q: &Vec3, c: &[usize; 3], ring: usize) -> f64 {
        let mut d = f64::INFINITY;
        for a in 0..3 {
            let lo_cell = c[a] as i64 - ring as i64;
            let hi_cell = c[a] as i64 + ring as i64 + 1;
            if lo_cell > 0 {
                let edge = self.origin[a] + lo_cell as f64 * self.cell;
                d = d.min(q[a] - edge);
            }
            if (hi_cell as usize) < self.dims[a] {
                let edge = self.origin[a] + hi_cell as f64 * self.cell;
                d = d.min(edge - q[a]);
            }
        }
        d.max(0.0)
    }

    fn visit_shell(&self, c: &[usize; 3], ring: usize, mut f: impl FnMut(usize)) {
        let r = ring as i64;
        let lo = |a: usize| (c[a] as i64 - r).max(0);
        let hi = |a: usize| (c[a] as i64 + r).min(self.dims[a] as i64 - 1);
        for z in lo(2)..=hi(2) {
            for y in lo(1)..=hi(1) {
                for x in lo(0)..=hi(0) {
                    let on_shell = (x - c[0] as i64).abs() == r
                        || (y - c[1] as i64).abs() == r
                        || (z - c[2] as i64).abs() == r;
                    if !on_shell {
                        continue;
                    }
                    let idx = x as usize + self.dims[0] * (y as usize + self.dims[1] * z as usize);
                    for &k in &self.buckets[idx] {
                        f(k);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regular_tet_volume_sign() {
        let a = Vec3::new(0.0, 0.0, 0.0);
        let b = Vec3::new(1.0, 0.0, 0.0);
        let c = Vec3::new(0.0, 1.0, 0.0);
        let d = Vec3::new(0.0, 0.0, 1.0);
        assert!((tet_signed_volume(&a, &b, &c, &d) - 1.0 / 6.0).abs() < 1e-15);
        assert!((tet_signed_volume(&a, &c, &b, &d) + 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn similarity_inverse_roundtrip() {
        let t = Similarity {
            rotation: axis_angle(&Vec3::new(1.0, 2.0, 0.5), 0.7),
            translation: Vec3::new(3.0, -1.0, 2.0),
            scale: 1.3,
        };
        let p = Vec3::new(0.2, -4.0, 9.0);
        let q = t.inverse().apply(&t.apply(&p));
        assert!((p - q).norm() < 1e-12);
        let m = t.to_matrix();
        assert!((apply_affine(&m, &p) - t.apply(&p)).norm() < 1e-12);
    }

    #[test]
    fn shoelace_unit_square() {
        let sq = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        assert_eq!(polygon_area_2d(&sq), 1.0);
        assert!(point_in_polygon_2d([0.5, 0.5], &sq));
        assert!(!point_in_polygon_2d([1.5, 0.5], &sq));
    }

    #[test]
    fn bucket_grid_matches_brute_force() {
        let mut pts = Vec::new();
        let mut s = 12345u64;
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 40.0 - 20.0
        };
        for i in 0..500 {
            pts.push((i * 3, Vec3::new(next(), next(), next() * 0.2)));
        }
        let grid = BucketGrid::new(pts.clone());
        for _ in 0..200 {
            let q = Vec3::new(next() * 1.5, next() * 1.5, next());
            let (id, d2) = grid.nearest(&q).unwrap();
            let best = pts
                .iter()
                .map(|(i, p)| (*i, (p - q).norm_squared()))
                .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)))
                .unwrap();
            assert_eq!(id, best.0);
            assert!((d2 - best.1).abs() < 1e-12);
        }
    }
}
