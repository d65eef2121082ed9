//! The biventricular template: a tagged surface and a conforming
//! tetrahedral mesh sharing their boundary nodes.
//!
//! The LV is a thick truncated ellipsoid built from stacked prism layers.
//! The RV free wall bulges off the LV epicardium over the septal sector and
//! carries a one-prism-thick wall. Thin valve plugs close both openings.
//! Every prism is split into three tetrahedra by the smallest-global-index
//! rule, which keeps shared quad faces conforming.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::anatomy::{
    angle_deg, is_aortic, is_pulmonary, rv_gap_profile, rv_vertical_profile, AORTIC_WINDOW_DEG,
};
use crate::contours::LandmarkName;
use crate::error::{Error, Result};
use crate::fem::{NodeSet, Region, TetMesh};
use crate::geometry::{tet_signed_volume, triangle_cross, Vec3};

use super::{vertex_normals, Patch, SurfaceMesh, VertexRegion};

pub const TEMPLATE_ID: &str = "biv-template-v1";

/// Target width of one strip of the RV valve plug.
const CRESCENT_SEGMENT_MM: f64 = 6.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemplateSpec {
    /// LV endocardial equatorial radius at the base.
    pub lv_radius_mm: f64,
    /// LV endocardial depth from the base plane to the apex.
    pub lv_long_axis_mm: f64,
    pub wall_mm: f64,
    pub wall_layers: usize,
    /// Nodes per circumferential ring; a multiple of 16.
    pub n_theta: usize,
    /// Rings from apex to base.
    pub n_u: usize,
    /// Ring index where the RV cavity closes.
    pub rv_apex_ring: usize,
    pub rv_gap_mm: f64,
    pub rv_wall_mm: f64,
    pub plug_mm: f64,
}

impl Default for TemplateSpec {
    fn default() -> Self {
        TemplateSpec {
            lv_radius_mm: 25.0,
            lv_long_axis_mm: 45.0,
            wall_mm: 8.0,
            wall_layers: 3,
            n_theta: 48,
            n_u: 16,
            rv_apex_ring: 10,
            rv_gap_mm: 18.0,
            rv_wall_mm: 3.0,
            plug_mm: 2.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Template {
    pub spec: TemplateSpec,
    pub surface: SurfaceMesh,
    /// Volume mesh whose first `surface.num_vertices()` nodes are the surface
    /// vertices.
    pub volume: TetMesh,
}

impl Template {
    /// The template built from [`TemplateSpec::default`].
    pub fn standard() -> &'static Template {
        static T: OnceLock<Template> = OnceLock::new();
        T.get_or_init(|| Template::build(&TemplateSpec::default()).expect("default template is valid"))
    }

    pub fn build(spec: &TemplateSpec) -> Result<Template> {
        Builder::new(spec)?.run()
    }

    pub fn num_boundary_nodes(&self) -> usize {
        self.surface.num_vertices()
    }
}

struct Prism {
    v: [usize; 6],
    region: Region,
    /// bottom, top, quads on edges ab, bc, ca
    faces: [Option<Patch>; 5],
}

#[derive(Default)]
struct Tags {
    region: HashMap<usize, VertexRegion>,
    sets: BTreeMap<NodeSet, Vec<usize>>,
}

struct Builder<'a> {
    spec: &'a TemplateSpec,
    nodes: Vec<Vec3>,
    prisms: Vec<Prism>,
    tags: Tags,
    landmarks: BTreeMap<LandmarkName, usize>,
    rv_pairs: Vec<(usize, usize)>,
}

fn theta_deg(j: usize, nt: usize) -> f64 {
    360.0 * j as f64 / nt as f64
}

/// Quad `(i,j) (i+1,j) (i+1,j+1) (i,j+1)` as two triangles; `slash` picks the
/// `(i,j)–(i+1,j+1)` diagonal.
fn quad_tris(i: usize, j: usize, jn: usize, slash: bool) -> [[(usize, usize); 3]; 2] {
    if slash {
        [[(i, j), (i + 1, j), (i + 1, jn)], [(i, j), (i + 1, jn), (i, jn)]]
    } else {
        [[(i, j), (i + 1, j), (i, jn)], [(i + 1, j), (i + 1, jn), (i, jn)]]
    }
}

/// Triangulates the strip between two closed rings whose sizes are equal or
/// differ by a factor of two.
fn ring_strip(inner: &[usize], outer: &[usize]) -> Vec<[usize; 3]> {
    let (n, m) = (inner.len(), outer.len());
    let mut t = Vec::new();
    if m == n {
        for k in 0..n {
            let (a, b, c, d) = (inner[k], inner[(k + 1) % n], outer[k], outer[(k + 1) % n]);
            t.push([a, c, d]);
            t.push([a, d, b]);
        }
    } else {
        assert_eq!(m, 2 * n, "ring sizes must match or double");
        for k in 0..n {
            let (c0, c1) = (inner[k], inner[(k + 1) % n]);
            let (f0, f1, f2) = (outer[2 * k], outer[2 * k + 1], outer[(2 * k + 2) % m]);
            t.push([c0, f0, f1]);
            t.push([c0, f1, c1]);
            t.push([c1, f1, f2]);
        }
    }
    t
}

/// Splits a prism (bottom `a b c`, top `d e f` with `d` above `a`) into
/// three tetrahedra, cutting each quad face along the diagonal through its
/// smallest node index.
fn split_prism(v: [usize; 6]) -> [[usize; 4]; 3] {
    let mut v = v;
    let min = (0..6).min_by_key(|&k| v[k]).unwrap();
    if min >= 3 {
        v = [v[3], v[4], v[5], v[0], v[1], v[2]];
    }
    let r = min % 3;
    let rot = |v: [usize; 6]| [v[1], v[2], v[0], v[4], v[5], v[3]];
    for _ in 0..r {
        v = rot(v);
    }
    if v[1].min(v[5]) < v[2].min(v[4]) {
        [[v[0], v[1], v[2], v[5]], [v[0], v[1], v[5], v[4]], [v[0], v[4], v[5], v[3]]]
    } else {
        [[v[0], v[1], v[2], v[4]], [v[0], v[4], v[2], v[5]], [v[0], v[4], v[5], v[3]]]
    }
}

impl<'a> Builder<'a> {
    fn new(spec: &'a TemplateSpec) -> Result<Self> {
        let bad = |m: &str| Err(Error::Config(format!("template: {m}")));
        if spec.n_theta < 16 || spec.n_theta % 16 != 0 {
            return bad("n_theta must be a positive multiple of 16");
        }
        if spec.n_u < 4 || spec.rv_apex_ring == 0 || spec.rv_apex_ring + 2 > spec.n_u {
            return bad("RV apex ring must lie strictly inside the ring range");
        }
        if spec.wall_layers == 0 {
            return bad("at least one wall layer is needed");
        }
        let positive = [
            spec.lv_radius_mm,
            spec.lv_long_axis_mm,
            spec.wall_mm,
            spec.rv_gap_mm,
            spec.rv_wall_mm,
            spec.plug_mm,
        ];
        if positive.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return bad("lengths must be positive");
        }
        Ok(Builder {
            spec,
            nodes: Vec::new(),
            prisms: Vec::new(),
            tags: Tags::default(),
            landmarks: BTreeMap::new(),
            rv_pairs: Vec::new(),
        })
    }

    fn push(&mut self, p: Vec3) -> usize {
        self.nodes.push(p);
        self.nodes.len() - 1
    }

    fn tag(&mut self, n: usize, r: VertexRegion) {
        self.tags.region.entry(n).or_insert(r);
    }

    fn set(&mut self, s: NodeSet, n: usize) {
        self.tags.sets.entry(s).or_default().push(n);
    }

    fn run(mut self) -> Result<Template> {
        let s = self.spec.clone();
        let (nt, nu, nl, irv) = (s.n_theta, s.n_u, s.wall_layers, s.rv_apex_ring);
        let (j0, j1) = (nt * 5 / 16, nt * 11 / 16);
        let psi = |i: usize| 0.5 * PI * i as f64 / nu as f64;
        let radial = |j: usize| {
            let t = 2.0 * PI * j as f64 / nt as f64;
            Vec3::new(t.cos(), t.sin(), 0.0)
        };

        // LV wall nodes lv[s][i][j]; ring 0 is the pole
        let mut lv = vec![vec![vec![0usize; nt]; nu + 1]; nl + 1];
        for (l, layer) in lv.iter_mut().enumerate() {
            let f = l as f64 / nl as f64;
            let (a, c) = (s.lv_radius_mm + f * s.wall_mm, s.lv_long_axis_mm + f * s.wall_mm);
            let pole = self.push(Vec3::new(0.0, 0.0, -c));
            layer[0] = vec![pole; nt];
            for i in 1..=nu {
                let z = if i == nu { 0.0 } else { -c * psi(i).cos() };
                for j in 0..nt {
                    layer[i][j] = self.push(radial(j) * a * psi(i).sin() + Vec3::new(0.0, 0.0, z));
                }
            }
        }
        let septal = |i: usize, j: usize| i >= irv && (j0..=j1).contains(&j);
        let junction = |i: usize, j: usize| septal(i, j) && (i == irv || j == j0 || j == j1);

        // LV surface triangles in (ring, column) coordinates, with septal flag
        let mut lv_tris: Vec<([(usize, usize); 3], bool)> = Vec::new();
        for j in 0..nt {
            let jn = (j + 1) % nt;
            lv_tris.push(([(0, 0), (1, j), (1, jn)], false));
            for i in 1..nu {
                let sep = i >= irv && j >= j0 && j < j1;
                for t in quad_tris(i, j, jn, true) {
                    lv_tris.push((t, sep));
                }
            }
        }
        let lv_id = |l: usize, (i, j): (usize, usize)| lv[l][i][if i == 0 { 0 } else { j }];
        for l in 0..nl {
            for (t, sep) in &lv_tris {
                let bottom = t.map(|p| lv_id(l, p));
                let top = t.map(|p| lv_id(l + 1, p));
                let quad = |a: (usize, usize), b: (usize, usize)| (a.0 == nu && b.0 == nu).then_some(Patch::LvBase);
                self.prisms.push(Prism {
                    v: [bottom[0], bottom[1], bottom[2], top[0], top[1], top[2]],
                    region: Region::LvMyo,
                    faces: [
                        (l == 0).then_some(Patch::LvEndo),
                        (l + 1 == nl).then_some(if *sep { Patch::RvSeptal } else { Patch::LvEpi }),
                        quad(t[0], t[1]),
                        quad(t[1], t[2]),
                        quad(t[2], t[0]),
                    ],
                });
            }
        }

        // RV free wall, offset horizontally from the LV epicardium
        let epi_z: Vec<f64> = (0..=nu).map(|i| self.nodes[lv[nl][i][0]].z).collect();
        let z_rv = epi_z[irv];
        let mut fw: HashMap<(usize, usize), usize> = HashMap::new();
        for i in irv..=nu {
            let vert = rv_vertical_profile((epi_z[i] - z_rv) / -z_rv);
            for j in j0..=j1 {
                let id = if junction(i, j) {
                    lv[nl][i][j]
                } else {
                    let g = s.rv_gap_mm * rv_gap_profile(theta_deg(j, nt)) * vert;
                    let p = self.nodes[lv[nl][i][j]] + radial(j) * g;
                    self.push(p)
                };
                fw.insert((i, j), id);
            }
        }
        let mut fw_tris: Vec<[(usize, usize); 3]> = Vec::new();
        for i in irv..nu {
            for j in j0..j1 {
                // diagonals chosen so no triangle has three insertion nodes
                fw_tris.extend(quad_tris(i, j, j + 1, j < nt / 2));
            }
        }
        // orient out of the RV cavity
        for t in fw_tris.iter_mut() {
            let p = t.map(|q| self.nodes[fw[&q]]);
            let c = (p[0] + p[1] + p[2]) / 3.0;
            if triangle_cross(&p[0], &p[1], &p[2]).dot(&Vec3::new(c.x, c.y, 0.0)) < 0.0 {
                t.swap(1, 2);
            }
        }
        let fw_ids: Vec<[usize; 3]> = fw_tris.iter().map(|t| t.map(|q| fw[&q])).collect();
        let normals = vertex_normals(&self.nodes, &fw_ids);
        let mut rv_epi: HashMap<(usize, usize), usize> = HashMap::new();
        let mut keys: Vec<(usize, usize)> = fw.keys().copied().collect();
        keys.sort_unstable();
        for q in &keys {
            let e = fw[q];
            let p = self.nodes[e] + normals[e] * s.rv_wall_mm;
            let id = self.push(p);
            rv_epi.insert(*q, id);
            self.rv_pairs.push((e, id));
        }
        for t in &fw_tris {
            let quad = |a: (usize, usize), b: (usize, usize)| {
                if junction(a.0, a.1) && junction(b.0, b.1) {
                    Some(Patch::RvWallEdge)
                } else if a.0 == nu && b.0 == nu {
                    Some(Patch::RvBase)
                } else {
                    None
                }
            };
            self.prisms.push(Prism {
                v: [fw[&t[0]], fw[&t[1]], fw[&t[2]], rv_epi[&t[0]], rv_epi[&t[1]], rv_epi[&t[2]]],
                region: Region::RvMyo,
                faces: [
                    Some(Patch::RvFreewall),
                    Some(Patch::RvEpi),
                    quad(t[0], t[1]),
                    quad(t[1], t[2]),
                    quad(t[2], t[0]),
                ],
            });
        }

        // LV plug: centre, three inner rings and the endocardial rim
        let up = Vec3::new(0.0, 0.0, s.plug_mm);
        let a = s.lv_radius_mm;
        let centre = self.push(Vec3::zeros());
        let mut rings: Vec<Vec<usize>> = Vec::new();
        for (m, count) in [(1, nt / 4), (2, nt / 2), (3, nt)] {
            let r = a * m as f64 / 4.0;
            let ring = (0..count)
                .map(|k| {
                    let t = 2.0 * PI * k as f64 / count as f64;
                    self.push(Vec3::new(r * t.cos(), r * t.sin(), 0.0))
                })
                .collect();
            rings.push(ring);
        }
        let rim: Vec<usize> = lv[0][nu].clone();
        rings.push(rim.clone());
        let mut lid: Vec<[usize; 3]> = (0..nt / 4).map(|k| [centre, rings[0][k], rings[0][(k + 1) % (nt / 4)]]).collect();
        for w in rings.windows(2) {
            lid.extend(ring_strip(&w[0], &w[1]));
        }
        let lv_lid_nodes: Vec<usize> = std::iter::once(centre).chain(rings[..3].iter().flatten().copied()).collect();
        let mut lid_top: HashMap<usize, usize> = HashMap::new();
        for &n in lv_lid_nodes.iter().chain(&rim) {
            let p = self.nodes[n] + up;
            lid_top.insert(n, self.push(p));
        }
        for t in &lid {
            let c = t.iter().map(|&n| self.nodes[n]).sum::<Vec3>() / 3.0;
            let region = if is_aortic(&c, a) { Region::AorticValve } else { Region::MitralValve };
            let quad = |x: usize, y: usize| (rim.contains(&x) && rim.contains(&y)).then_some(Patch::ValveCap);
            self.prisms.push(Prism {
                v: [t[0], t[1], t[2], lid_top[&t[0]], lid_top[&t[1]], lid_top[&t[2]]],
                region,
                faces: [Some(Patch::LvLid), Some(Patch::ValveCap), quad(t[0], t[1]), quad(t[1], t[2]), quad(t[2], t[0])],
            });
        }

        // RV plug: crescent between the septal rim and the free-wall rim
        let mut col: Vec<[usize; 4]> = Vec::new();
        let mut rv_lid_nodes = Vec::new();
        for j in j0..=j1 {
            let inner = lv[nl][nu][j];
            let outer = fw[&(nu, j)];
            if inner == outer {
                col.push([inner; 4]);
                continue;
            }
            let (pi, po) = (self.nodes[inner], self.nodes[outer]);
            let segs = ((po - pi).norm() / CRESCENT_SEGMENT_MM).round().clamp(1.0, 3.0) as usize;
            let mut c = [outer; 4];
            c[0] = inner;
            for k in 1..segs {
                let m = self.push(pi + (po - pi) * (k as f64 / segs as f64));
                rv_lid_nodes.push(m);
                c[k] = m;
            }
            col.push(c);
        }
        let mut crescent: Vec<[usize; 3]> = Vec::new();
        for w in col.windows(2) {
            let (l, r) = (w[0], w[1]);
            for k in 0..3 {
                if l[k] == l[k + 1] && r[k] == r[k + 1] {
                    continue;
                } else if l[k] == l[k + 1] {
                    crescent.push([l[k], r[k], r[k + 1]]);
                } else if r[k] == r[k + 1] {
                    crescent.push([l[k], r[k], l[k + 1]]);
                } else {
                    crescent.push([l[k], r[k], r[k + 1]]);
                    crescent.push([l[k], r[k + 1], l[k + 1]]);
                }
            }
        }
        let inner_arc: Vec<usize> = col.iter().map(|c| c[0]).collect();
        let outer_arc: Vec<usize> = col.iter().map(|c| c[3]).collect();
        let mut crescent_top: HashMap<usize, usize> = HashMap::new();
        let mut bottom_nodes: Vec<usize> = col.iter().flatten().copied().collect();
        bottom_nodes.sort_unstable();
        bottom_nodes.dedup();
        for n in bottom_nodes {
            let p = self.nodes[n] + up;
            let id = self.push(p);
            rv_lid_nodes.push(id);
            crescent_top.insert(n, id);
        }
        for t in &crescent {
            let c = t.iter().map(|&n| self.nodes[n]).sum::<Vec3>() / 3.0;
            let region = if is_pulmonary(angle_deg(&c)) { Region::PulmonaryValve } else { Region::TricuspidValve };
            let on = |arc: &[usize], x: usize, y: usize| arc.contains(&x) && arc.contains(&y);
            let quad = |x: usize, y: usize| (on(&inner_arc, x, y) || on(&outer_arc, x, y)).then_some(Patch::ValveCap);
            self.prisms.push(Prism {
                v: [t[0], t[1], t[2], crescent_top[&t[0]], crescent_top[&t[1]], crescent_top[&t[2]]],
                region,
                faces: [Some(Patch::RvLid), Some(Patch::ValveCap), quad(t[0], t[1]), quad(t[1], t[2]), quad(t[2], t[0])],
            });
        }

        // vertex tags, first assignment wins
        let window = |j: usize| {
            let t = theta_deg(j, nt);
            t > AORTIC_WINDOW_DEG.0 && t < AORTIC_WINDOW_DEG.1
        };
        let valve_ring = |j: usize| if window(j) { VertexRegion::AvRing } else { VertexRegion::MvRing };
        let rv_ring = |t: f64| if is_pulmonary(t) { VertexRegion::PvRing } else { VertexRegion::TvRing };
        for &(_, e) in &self.rv_pairs.clone() {
            self.tag(e, VertexRegion::RvEpi);
            self.set(NodeSet::Epi, e);
        }
        for n in lv_lid_nodes.iter().copied().chain(rim.iter().map(|r| lid_top[r])) {
            let p = self.nodes[n];
            let r = if is_aortic(&p, a) { VertexRegion::AvRing } else { VertexRegion::MvRing };
            self.tag(n, r);
        }
        for n in rv_lid_nodes {
            let t = angle_deg(&self.nodes[n]);
            self.tag(n, rv_ring(t));
        }
        for &(i, j) in &keys {
            let n = fw[&(i, j)];
            self.set(NodeSet::RvEndo, n);
            if i == nu {
                self.set(NodeSet::Base, n);
                self.set(if is_pulmonary(theta_deg(j, nt)) { NodeSet::PvRing } else { NodeSet::TvRing }, n);
                self.set(NodeSet::Base, rv_epi[&(i, j)]);
            }
            if !junction(i, j) {
                self.tag(n, if i == nu { rv_ring(theta_deg(j, nt)) } else { VertexRegion::RvEndoFreewall });
            }
        }
        for l in 0..=nl {
            for i in 0..=nu {
                for j in 0..nt {
                    if i == 0 && j > 0 {
                        continue;
                    }
                    let n = lv[l][i][j];
                    if i == nu {
                        self.set(NodeSet::Base, n);
                    }
                    if l == 0 {
                        self.set(NodeSet::LvEndo, n);
                        if i == nu {
                            self.set(if window(j) { NodeSet::AvRing } else { NodeSet::MvRing }, n);
                        }
                        self.tag(n, if i == nu { valve_ring(j) } else { VertexRegion::LvEndo });
                    } else if l == nl {
                        let interior = septal(i, j) && !junction(i, j);
                        if !interior {
                            self.set(NodeSet::Epi, n);
                        }
                        let r = match (interior, i == nu) {
                            (true, true) => rv_ring(theta_deg(j, nt)),
                            (true, false) => VertexRegion::RvEndoSeptal,
                            _ => VertexRegion::LvEpi,
                        };
                        self.tag(n, r);
                    } else if i == nu {
                        self.tag(n, valve_ring(j));
                    }
                }
            }
        }
        // septal nodes are RV endocardium too; junction nodes already are
        for i in irv..=nu {
            for j in j0..=j1 {
                if !junction(i, j) {
                    self.set(NodeSet::RvEndo, lv[nl][i][j]);
                }
            }
        }
        self.set(NodeSet::ApexNode, lv[nl][0][0]);

        let q = nt / 4;
        let ring2_135 = rings[1][nt / 2 * 3 / 8];
        for (name, n) in [
            (LandmarkName::Mv2chA, lv[0][nu][q]),
            (LandmarkName::Mv2chB, lv[0][nu][3 * q]),
            (LandmarkName::Mv4chA, lv[0][nu][2 * q]),
            (LandmarkName::Mv4chB, lv[0][nu][0]),
            (LandmarkName::Tv4chA, lv[nl][nu][2 * q]),
            (LandmarkName::Tv4chB, fw[&(nu, 2 * q)]),
            (LandmarkName::AoLvA, lv[0][nu][nt * 3 / 8]),
            (LandmarkName::AoLvB, ring2_135),
            (LandmarkName::Mv3chB, ring2_135),
            (LandmarkName::Mv3chA, lv[0][nu][nt * 7 / 8]),
            (LandmarkName::Apex2ch, lv[nl][0][0]),
        ] {
            self.landmarks.insert(name, n);
        }
        self.assemble()
    }

    fn assemble(self) -> Result<Template> {
        let mut tets: Vec<[usize; 4]> = Vec::with_capacity(3 * self.prisms.len());
        let mut origin: Vec<usize> = Vec::with_capacity(3 * self.prisms.len());
        let mut region = Vec::with_capacity(3 * self.prisms.len());
        for (k, pr) in self.prisms.iter().enumerate() {
            for mut t in split_prism(pr.v) {
                let p = t.map(|n| self.nodes[n]);
                let vol = tet_signed_volume(&p[0], &p[1], &p[2], &p[3]);
                if vol.abs() < 1e-6 {
                    return Err(Error::Format(format!("template prism {k} splits into a flat tetrahedron")));
                }
                if vol < 0.0 {
                    t.swap(2, 3);
                }
                tets.push(t);
                origin.push(k);
                region.push(pr.region);
            }
        }

        // boundary faces, labelled by the prism face they lie on
        const FACES: [[usize; 3]; 4] = [[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]];
        let mut count: HashMap<[usize; 3], usize> = HashMap::new();
        for t in &tets {
            for f in FACES {
                let mut key = f.map(|k| t[k]);
                key.sort_unstable();
                *count.entry(key).or_insert(0) += 1;
            }
        }
        let mut faces: Vec<([usize; 3], Patch)> = Vec::new();
        for (e, t) in tets.iter().enumerate() {
            for f in FACES {
                let face = f.map(|k| t[k]);
                let mut key = face;
                key.sort_unstable();
                if count[&key] != 1 {
                    continue;
                }
                let pr = &self.prisms[origin[e]];
                let v = pr.v;
                let members: [&[usize]; 5] = [
                    &[v[0], v[1], v[2]],
                    &[v[3], v[4], v[5]],
                    &[v[0], v[1], v[4], v[3]],
                    &[v[1], v[2], v[5], v[4]],
                    &[v[2], v[0], v[3], v[5]],
                ];
                let slot = (0..5)
                    .find(|&s| face.iter().all(|n| members[s].contains(n)))
                    .expect("a tetrahedron face lies on one prism face");
                let patch = pr.faces[slot].ok_or_else(|| {
                    Error::Format(format!("unlabelled boundary face on template prism {}", origin[e]))
                })?;
                let oriented = if patch.is_cavity() { [face[0], face[2], face[1]] } else { face };
                faces.push((oriented, patch));
            }
        }

        // boundary nodes first, in construction order
        let n = self.nodes.len();
        let mut on_boundary = vec![false; n];
        for (f, _) in &faces {
            for &i in f {
                on_boundary[i] = true;
            }
        }
        let order: Vec<usize> = (0..n).filter(|&i| on_boundary[i]).chain((0..n).filter(|&i| !on_boundary[i])).collect();
        let nb = on_boundary.iter().filter(|b| **b).count();
        let mut new_id = vec![0usize; n];
        for (k, &o) in order.iter().enumerate() {
            new_id[o] = k;
        }
        let nodes: Vec<Vec3> = order.iter().map(|&o| self.nodes[o]).collect();
        let tets: Vec<[usize; 4]> = tets.into_iter().map(|t| t.map(|i| new_id[i])).collect();
        let mut volume = TetMesh::new(nodes.clone(), tets, Region::LvMyo);
        volume.region = region;
        for (set, ids) in self.tags.sets {
            let mut v: Vec<usize> = ids.into_iter().map(|i| new_id[i]).collect();
            v.sort_unstable();
            v.dedup();
            volume.surface_tags.insert(set, v);
        }
        let mut vertex_region = vec![VertexRegion::LvEpi; nb];
        for (&old, &r) in &self.tags.region {
            if on_boundary[old] {
                vertex_region[new_id[old]] = r;
            }
        }
        let surface = SurfaceMesh {
            template_id: TEMPLATE_ID.to_string(),
            vertices: nodes[..nb].to_vec(),
            triangles: faces.iter().map(|(f, _)| f.map(|i| new_id[i])).collect(),
            triangle_patch: faces.iter().map(|(_, p)| *p).collect(),
            vertex_region,
            landmarks: self.landmarks.iter().map(|(k, v)| (*k, new_id[*v])).collect(),
            rv_epi_pairs: self.rv_pairs.iter().map(|(a, b)| (new_id[*a], new_id[*b])).collect(),
        };
        volume.validate()?;
        surface.validate()?;
        Ok(Template {
            spec: self.spec.clone(),
            surface,
            volume,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surface::{extrude_rv_epicardium, mesh_volume, Cavity};

    #[test]
    fn prism_split_is_conforming_on_shared_quads() {
        // two prisms sharing the quad (1,2,5,4); both must cut it the same way
        let a = split_prism([0, 1, 2, 3, 4, 5]);
        let b = split_prism([1, 6, 2, 4, 7, 5]);
        let diag = |tets: &[[usize; 4]; 3]| {
            let has = |x: usize, y: usize| tets.iter().any(|t| t.contains(&x) && t.contains(&y));
            (has(1, 5), has(2, 4))
        };
        assert_eq!(diag(&a), diag(&b));
        assert_ne!(diag(&a).0, diag(&a).1);
    }

    #[test]
    fn standard_template_is_valid() {
        let t = Template::standard();
        assert_eq!(t.volume.count_inverted(), 0);
        t.volume.validate().unwrap();
        assert_eq!(t.volume.connected_components(), 1);
        for r in Region::ALL {
            assert!(t.volume.region.contains(&r), "{r:?} missing");
        }
        // boundary nodes are exactly the surface vertices, numbered first
        let nb = t.surface.num_vertices();
        let boundary = t.volume.boundary_nodes();
        assert_eq!(boundary.len(), nb);
        assert_eq!(*boundary.iter().next_back().unwrap(), nb - 1);
        for i in 0..nb {
            assert_eq!(t.surface.vertices[i], t.volume.nodes[i]);
        }
        assert_eq!(t.surface.landmarks.len(), 11);
    }

    #[test]
    fn shells_are_closed_and_oriented() {
        let s = &Template::standard().surface;
        assert_eq!(s.boundary_edge_count(Cavity::Lv.patches()), 0);
        assert_eq!(s.boundary_edge_count(Cavity::Rv.patches()), 0);
        let outer: Vec<Patch> = Patch::ALL.into_iter().filter(|p| !p.is_cavity()).collect();
        assert_eq!(s.boundary_edge_count(&outer), 0);
        let lv = mesh_volume(s, Cavity::Lv).unwrap();
        let rv = mesh_volume(s, Cavity::Rv).unwrap();
        // half ellipsoid 2/3·π·a²·c with a = 25, c = 45
        let exact = 2.0 / 3.0 * PI * 25.0 * 25.0 * 45.0 / 1000.0;
        assert!((lv - exact).abs() / exact < 0.03, "{lv} vs {exact}");
        assert!(rv > 10.0 && rv < lv, "{rv}");
    }

    #[test]
    fn node_sets_are_on_the_boundary() {
        let t = Template::standard();
        let nb = t.surface.num_vertices();
        for s in NodeSet::ALL {
            let v = t.volume.node_set(s);
            assert!(!v.is_empty(), "{s:?} empty");
            assert!(v.iter().all(|&i| i < nb), "{s:?}");
        }
        assert_eq!(t.volume.node_set(NodeSet::ApexNode).len(), 1);
    }

    #[test]
    fn template_extrusion_is_a_fixed_point() {
        let s = &Template::standard().surface;
        let again = extrude_rv_epicardium(s, 3.0).unwrap();
        for (a, b) in s.vertices.iter().zip(&again.vertices) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn bad_specs_rejected() {
        let mut s = TemplateSpec::default();
        s.n_theta = 40;
        assert!(Template::build(&s).is_err());
        let mut s = TemplateSpec::default();
        s.rv_apex_ring = 15;
        assert!(Template::build(&s).is_err());
    }
}
