//! Structured tetrahedral meshes for tests and examples.

use crate::geometry::Vec3;

use super::{NodeSet, Region, TetMesh};

/// Splits every cell of an `n0 × n1 × n2` structured grid into six
/// tetrahedra around its main diagonal. Neighbouring cells split shared faces
/// along the same diagonal, so the result is conforming. With `wrap` the
/// second axis is periodic.
fn kuhn_tets(n: [usize; 3], wrap: bool) -> Vec<[usize; 4]> {
    let nj = if wrap { n[1] } else { n[1] + 1 };
    let id = |i: usize, j: usize, k: usize| i + (n[0] + 1) * (j % nj + nj * k);
    const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut tets = Vec::with_capacity(6 * n[0] * n[1] * n[2]);
    for k in 0..n[2] {
        for j in 0..n[1] {
            for i in 0..n[0] {
                for perm in PERMS {
                    let mut c = [i, j, k];
                    let mut t = [id(c[0], c[1], c[2]); 4];
                    for (s, &axis) in perm.iter().enumerate() {
                        c[axis] += 1;
                        t[s + 1] = id(c[0], c[1], c[2]);
                    }
                    tets.push(t);
                }
            }
        }
    }
    tets
}

fn grid_mesh(n: [usize; 3], wrap: bool, place: impl Fn(usize, usize, usize) -> Vec3) -> TetMesh {
    let nj = if wrap { n[1] } else { n[1] + 1 };
    let mut nodes = Vec::with_capacity((n[0] + 1) * nj * (n[2] + 1));
    for k in 0..=n[2] {
        for j in 0..nj {
            for i in 0..=n[0] {
                nodes.push(place(i, j, k));
            }
        }
    }
    let mut m = TetMesh::new(nodes, kuhn_tets(n, wrap), Region::LvMyo);
    m.orient_positive();
    m
}

/// Unit cube `[0,1]³` with `n` cells per side.
pub fn unit_cube(n: usize) -> TetMesh {
    let h = 1.0 / n as f64;
    grid_mesh([n, n, n], false, |i, j, k| {
        // exact 0 and 1 on the faces
        let c = |a: usize| if a == n { 1.0 } else { a as f64 * h };
        Vec3::new(c(i), c(j), c(k))
    })
}

/// Thick cylindrical shell sector `r_in ≤ r ≤ r_out`, `0 ≤ θ ≤ sector`,
/// `0 ≤ z ≤ height`; a full turn gives a closed annulus. Inner wall nodes are tagged `LV_ENDO`, outer `EPI`,
/// the top `BASE` and the bottom `APEX_NODE`.
pub struct Slab {
    pub r_in: f64,
    pub r_out: f64,
    pub height: f64,
    pub sector_rad: f64,
    pub cells: [usize; 3],
}

impl Default for Slab {
    fn default() -> Self {
        Slab {
            r_in: 20.0,
            r_out: 30.0,
            height: 20.0,
            sector_rad: std::f64::consts::FRAC_PI_2,
            cells: [6, 24, 6],
        }
    }
}

impl Slab {
    pub fn build(&self) -> TetMesh {
        let [nr, nt, nz] = self.cells;
        let wrap = (self.sector_rad - 2.0 * std::f64::consts::PI).abs() < 1e-12;
        let nj = if wrap { nt } else { nt + 1 };
        let mut m = grid_mesh([nr, nt, nz], wrap, |i, j, k| {
            let r = self.r_in + (self.r_out - self.r_in) * i as f64 / nr as f64;
            let th = self.sector_rad * j as f64 / nt as f64;
            Vec3::new(r * th.cos(), r * th.sin(), self.height * k as f64 / nz as f64)
        });
        let id = |i: usize, j: usize, k: usize| i + (nr + 1) * (j + nj * k);
        let mut endo = Vec::new();
        let mut epi = Vec::new();
        let mut base = Vec::new();
        let mut bottom = Vec::new();
        for k in 0..=nz {
            for j in 0..nj {
                for i in 0..=nr {
                    if i == 0 {
                        endo.push(id(i, j, k));
                    }
                    if i == nr {
                        epi.push(id(i, j, k));
                    }
                    if k == nz {
                        base.push(id(i, j, k));
                    }
                    if k == 0 {
                        bottom.push(id(i, j, k));
                    }
                }
            }
        }
        m.surface_tags.insert(NodeSet::LvEndo, endo);
        m.surface_tags.insert(NodeSet::Epi, epi);
        m.surface_tags.insert(NodeSet::Base, base);
        m.surface_tags.insert(NodeSet::ApexNode, bottom);
        m
    }

    /// Analytic apicobasal and transmural coordinates of a point.
    pub fn z_rho(&self, p: &Vec3) -> (f64, f64) {
        let r = (p.x * p.x + p.y * p.y).sqrt();
        (p.z / self.height, (r - self.r_in) / (self.r_out - self.r_in))
    }
}
