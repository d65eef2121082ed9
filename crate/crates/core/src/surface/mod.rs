//! Triangulated biventricular surfaces: the template, fitting to contours
//! and RV epicardium extrusion.

mod extrude;
mod fit;
pub mod template;

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::contours::LandmarkName;
use crate::error::{Error, Result};
use crate::geometry::{triangle_area, triangle_cross, triangle_volume_term, Vec3};

pub use extrude::{extrude_rv_epicardium, vertex_normals};
pub use fit::{fit_surface, rigid_init, umeyama, FitConfig, FitReport};
pub use template::{Template, TemplateSpec};

/// Triangles with smaller area are degenerate.
pub const MIN_TRIANGLE_AREA_MM2: f64 = 1e-9;

/// Per-vertex anatomical tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum VertexRegion {
    LvEndo,
    LvEpi,
    RvEndoSeptal,
    RvEndoFreewall,
    RvEpi,
    MvRing,
    TvRing,
    AvRing,
    PvRing,
}

impl VertexRegion {
    pub const ALL: [VertexRegion; 9] = [
        VertexRegion::LvEndo,
        VertexRegion::LvEpi,
        VertexRegion::RvEndoSeptal,
        VertexRegion::RvEndoFreewall,
        VertexRegion::RvEpi,
        VertexRegion::MvRing,
        VertexRegion::TvRing,
        VertexRegion::AvRing,
        VertexRegion::PvRing,
    ];

    pub fn code(self) -> u8 {
        VertexRegion::ALL.iter().position(|r| *r == self).unwrap() as u8
    }
}

/// Surface patch a triangle belongs to. Cavity patches are oriented out of
/// their cavity; all others out of the myocardium.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Patch {
    LvEndo,
    /// Mitral/aortic plug face closing the LV cavity.
    LvLid,
    LvEpi,
    LvBase,
    RvSeptal,
    RvFreewall,
    /// Tricuspid/pulmonary plug face closing the RV cavity.
    RvLid,
    RvEpi,
    RvBase,
    RvWallEdge,
    ValveCap,
    /// Any closed surface not derived from the template.
    Other,
}

impl Patch {
    pub const ALL: [Patch; 12] = [
        Patch::LvEndo,
        Patch::LvLid,
        Patch::LvEpi,
        Patch::LvBase,
        Patch::RvSeptal,
        Patch::RvFreewall,
        Patch::RvLid,
        Patch::RvEpi,
        Patch::RvBase,
        Patch::RvWallEdge,
        Patch::ValveCap,
        Patch::Other,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Patch::LvEndo => "LV_ENDO",
            Patch::LvLid => "LV_LID",
            Patch::LvEpi => "LV_EPI",
            Patch::LvBase => "LV_BASE",
            Patch::RvSeptal => "RV_SEPTAL",
            Patch::RvFreewall => "RV_FREEWALL",
            Patch::RvLid => "RV_LID",
            Patch::RvEpi => "RV_EPI",
            Patch::RvBase => "RV_BASE",
            Patch::RvWallEdge => "RV_WALL_EDGE",
            Patch::ValveCap => "VALVE_CAP",
            Patch::Other => "OTHER",
        }
    }

    pub fn code(self) -> u8 {
        Patch::ALL.iter().position(|p| *p == self).unwrap() as u8
    }

    pub fn is_cavity(self) -> bool {
        matches!(
            self,
            Patch::LvEndo | Patch::LvLid | Patch::RvSeptal | Patch::RvFreewall | Patch::RvLid
        )
    }
}

impl FromStr for Patch {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Patch::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Format(format!("unknown surface patch {s:?}")))
    }
}

/// Which closed shell to integrate in [`mesh_volume`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cavity {
    Lv,
    Rv,
    /// Every triangle of the surface.
    Whole,
}

impl Cavity {
    pub fn patches(self) -> &'static [Patch] {
        match self {
            Cavity::Lv => &[Patch::LvEndo, Patch::LvLid],
            Cavity::Rv => &[Patch::RvSeptal, Patch::RvFreewall, Patch::RvLid],
            Cavity::Whole => &Patch::ALL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceMesh {
    pub template_id: String,
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[usize; 3]>,
    pub triangle_patch: Vec<Patch>,
    pub vertex_region: Vec<VertexRegion>,
    /// Template vertex carrying each named landmark.
    #[serde(default)]
    pub landmarks: BTreeMap<LandmarkName, usize>,
    /// (RV endocardial vertex, RV epicardial vertex) pairs produced by
    /// extrusion.
    #[serde(default)]
    pub rv_epi_pairs: Vec<(usize, usize)>,
}

impl SurfaceMesh {
    /// Surface without template metadata; every triangle in `Patch::Other`.
    pub fn plain(vertices: Vec<Vec3>, triangles: Vec<[usize; 3]>, region: VertexRegion) -> Self {
        let (nv, nt) = (vertices.len(), triangles.len());
        SurfaceMesh {
            template_id: String::new(),
            vertices,
            triangles,
            triangle_patch: vec![Patch::Other; nt],
            vertex_region: vec![region; nv],
            landmarks: BTreeMap::new(),
            rv_epi_pairs: Vec::new(),
        }
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn triangles_in<'a>(&'a self, patches: &'a [Patch]) -> impl Iterator<Item = &'a [usize; 3]> + 'a {
        self.triangles
            .iter()
            .zip(&self.triangle_patch)
            .filter(move |(_, p)| patches.contains(p))
            .map(|(t, _)| t)
    }

    /// Sorted, de-duplicated vertices of the triangles in `patches`.
    pub fn patch_vertices(&self, patches: &[Patch]) -> Vec<usize> {
        let mut v: Vec<usize> = self.triangles_in(patches).flatten().copied().collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn vertices_with(&self, region: VertexRegion) -> Vec<usize> {
        (0..self.vertices.len()).filter(|&i| self.vertex_region[i] == region).collect()
    }

    /// Copy with vertices replaced; connectivity and tags are kept.
    pub fn with_vertices(&self, vertices: Vec<Vec3>) -> Self {
        assert_eq!(vertices.len(), self.vertices.len());
        SurfaceMesh {
            vertices,
            ..self.clone()
        }
    }

    pub fn map_vertices(&self, f: impl Fn(&Vec3) -> Vec3) -> Self {
        self.with_vertices(self.vertices.iter().map(f).collect())
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        triangle_area(&self.vertices[a], &self.vertices[b], &self.vertices[c])
    }

    pub fn triangle_normal(&self, t: usize) -> Vec3 {
        let [a, b, c] = self.triangles[t];
        triangle_cross(&self.vertices[a], &self.vertices[b], &self.vertices[c])
    }

    /// Unordered vertex neighbours from the triangle edges.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.vertices.len()];
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                adj[a].push(b);
                adj[b].push(a);
            }
        }
        for a in adj.iter_mut() {
            a.sort_unstable();
            a.dedup();
        }
        adj
    }

    /// Number of edges of the selected triangles not matched by exactly one
    /// oppositely oriented edge.
    pub fn boundary_edge_count(&self, patches: &[Patch]) -> usize {
        let mut directed: HashMap<(usize, usize), i64> = HashMap::new();
        for t in self.triangles_in(patches) {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *directed.entry((a, b)).or_insert(0) += 1;
            }
        }
        directed
            .iter()
            .filter(|((a, b), n)| directed.get(&(*b, *a)).copied().unwrap_or(0) != **n || **n != 1)
            .count()
    }

    /// Structural checks: index range, tag lengths and degenerate triangles.
    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        if self.triangle_patch.len() != self.triangles.len() || self.vertex_region.len() != n {
            return Err(Error::Format("tag arrays do not match the mesh size".into()));
        }
        for (k, t) in self.triangles.iter().enumerate() {
            if t.iter().any(|&i| i >= n) {
                return Err(Error::Format(format!("triangle {k} references a missing vertex")));
            }
            if self.triangle_area(k) <= MIN_TRIANGLE_AREA_MM2 {
                return Err(Error::Format(format!("triangle {k} is degenerate")));
            }
        }
        Ok(())
    }

    /// Text format: vertex count, `x y z` lines, triangle count, then
    /// `i j k PATCH` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{}", self.vertices.len()).unwrap();
        for v in &self.vertices {
            writeln!(s, "{} {} {}", v.x, v.y, v.z).unwrap();
        }
        writeln!(s, "{}", self.triangles.len()).unwrap();
        for (t, p) in self.triangles.iter().zip(&self.triangle_patch) {
            writeln!(s, "{} {} {} {}", t[0], t[1], t[2], p.name()).unwrap();
        }
        s
    }

    /// Parses the text format. Template metadata (vertex tags, landmarks,
    /// extrusion pairs) is copied from `template` when given.
    pub fn from_text(text: &str, template: Option<&SurfaceMesh>) -> Result<Self> {
        let bad = |m: &str| Error::Format(format!("surface text: {m}"));
        let mut it = text.lines().filter(|l| !l.trim().is_empty());
        let mut count = |what: &str| -> Result<usize> {
            it.next()
                .ok_or_else(|| bad(&format!("missing {what} count")))?
                .trim()
                .parse()
                .map_err(|_| bad(&format!("bad {what} count")))
        };
        let nv = count("vertex")?;
        let mut vertices = Vec::with_capacity(nv);
        for _ in 0..nv {
            let l = it.next().ok_or_else(|| bad("truncated vertices"))?;
            let f: Vec<f64> = l
                .split_whitespace()
                .map(|x| x.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad("bad vertex line"))?;
            if f.len() != 3 {
                return Err(bad("vertex line needs three values"));
            }
            vertices.push(Vec3::new(f[0], f[1], f[2]));
        }
        let nt: usize = it
            .next()
            .ok_or_else(|| bad("missing triangle count"))?
            .trim()
            .parse()
            .map_err(|_| bad("bad triangle count"))?;
        let mut triangles = Vec::with_capacity(nt);
        let mut patches = Vec::with_capacity(nt);
        for _ in 0..nt {
            let l = it.next().ok_or_else(|| bad("truncated triangles"))?;
            let parts: Vec<&str> = l.split_whitespace().collect();
            if parts.len() != 4 {
                return Err(bad("triangle line needs i j k PATCH"));
            }
            let idx = |k: usize| parts[k].parse::<usize>().map_err(|_| bad("bad triangle index"));
            triangles.push([idx(0)?, idx(1)?, idx(2)?]);
            patches.push(parts[3].parse::<Patch>()?);
        }
        let mut mesh = SurfaceMesh::plain(vertices, triangles, VertexRegion::LvEpi);
        mesh.triangle_patch = patches;
        match template {
            Some(t) if t.vertices.len() == nv && t.triangles == mesh.triangles => {
                mesh.template_id = t.template_id.clone();
                mesh.vertex_region = t.vertex_region.clone();
                mesh.landmarks = t.landmarks.clone();
                mesh.rv_epi_pairs = t.rv_epi_pairs.clone();
            }
            Some(_) => return Err(bad("connectivity differs from the template")),
            None => {}
        }
        Ok(mesh)
    }

    pub fn save_text(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load_text(path: &Path, template: Option<&SurfaceMesh>) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&s, template)
    }

    /// VTK legacy ASCII PolyData with patch and vertex-region codes.
    pub fn to_vtk(&self) -> String {
        let mut s = String::new();
        writeln!(s, "# vtk DataFile Version 3.0").unwrap();
        writeln!(s, "biventricular surface {}", self.template_id).unwrap();
        writeln!(s, "ASCII\nDATASET POLYDATA").unwrap();
        writeln!(s, "POINTS {} double", self.vertices.len()).unwrap();
        for v in &self.vertices {
            writeln!(s, "{:.6} {:.6} {:.6}", v.x, v.y, v.z).unwrap();
        }
        writeln!(s, "POLYGONS {} {}", self.triangles.len(), 4 * self.triangles.len()).unwrap();
        for t in &self.triangles {
            writeln!(s, "3 {} {} {}", t[0], t[1], t[2]).unwrap();
        }
        writeln!(s, "CELL_DATA {}", self.triangles.len()).unwrap();
        writeln!(s, "SCALARS patch int 1\nLOOKUP_TABLE default").unwrap();
        for p in &self.triangle_patch {
            writeln!(s, "{}", p.code()).unwrap();
        }
        writeln!(s, "POINT_DATA {}", self.vertices.len()).unwrap();
        writeln!(s, "SCALARS region int 1\nLOOKUP_TABLE default").unwrap();
        for r in &self.vertex_region {
            writeln!(s, "{}", r.code()).unwrap();
        }
        s
    }

    pub fn save_vtk(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_vtk()).map_err(|e| Error::io(path, e))
    }
}

/// Divergence-theorem volume (mL) enclosed by the selected shell. Errors if
/// the shell is open; an inside-out shell gives a negative volume.
pub fn mesh_volume(mesh: &SurfaceMesh, cavity: Cavity) -> Result<f64> {
    let patches = cavity.patches();
    let open = mesh.boundary_edge_count(patches);
    if open > 0 {
        return Err(Error::OpenSurface(open));
    }
    let v: f64 = mesh
        .triangles_in(patches)
        .map(|t| triangle_volume_term(&mesh.vertices[t[0]], &mesh.vertices[t[1]], &mesh.vertices[t[2]]))
        .sum();
    Ok(v / 1000.0)
}

/// Icosahedron subdivided `levels` times and projected onto a sphere.
pub fn icosphere(radius: f64, levels: usize) -> SurfaceMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut v: Vec<Vec3> = [
        (-1.0, t, 0.0),
        (1.0, t, 0.0),
        (-1.0, -t, 0.0),
        (1.0, -t, 0.0),
        (0.0, -1.0, t),
        (0.0, 1.0, t),
        (0.0, -1.0, -t),
        (0.0, 1.0, -t),
        (t, 0.0, -1.0),
        (t, 0.0, 1.0),
        (-t, 0.0, -1.0),
        (-t, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vec3::new(x, y, z).normalize())
    .collect();
    let mut f: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..levels {
        let mut mid: HashMap<(usize, usize), usize> = HashMap::new();
        let mut next = Vec::with_capacity(f.len() * 4);
        let mut midpoint = |a: usize, b: usize, v: &mut Vec<Vec3>| -> usize {
            let key = (a.min(b), a.max(b));
            *mid.entry(key).or_insert_with(|| {
                v.push(((v[a] + v[b]) / 2.0).normalize());
                v.len() - 1
            })
        };
        for [a, b, c] in f {
            let ab = midpoint(a, b, &mut v);
            let bc = midpoint(b, c, &mut v);
            let ca = midpoint(c, a, &mut v);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        f = next;
    }
    let v = v.into_iter().map(|p| p * radius).collect();
    SurfaceMesh::plain(v, f, VertexRegion::LvEndo)
}

/// Axis-aligned box surface `[0,s]³`, outward oriented.
pub fn box_surface(s: f64) -> SurfaceMesh {
    let v: Vec<Vec3> = (0..8)
        .map(|i| Vec3::new((i & 1) as f64 * s, ((i >> 1) & 1) as f64 * s, ((i >> 2) & 1) as f64 * s))
        .collect();
    let quads = [
        [0, 2, 3, 1], // z = 0
        [4, 5, 7, 6], // z = s
        [0, 1, 5, 4], // y = 0
        [2, 6, 7, 3], // y = s
        [0, 4, 6, 2], // x = 0
        [1, 3, 7, 5], // x = s
    ];
    let mut f = Vec::new();
    for q in quads {
        f.push([q[0], q[1], q[2]]);
        f.push([q[0], q[2], q[3]]);
    }
    SurfaceMesh::plain(v, f, VertexRegion::LvEndo)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn icosphere_volume() {
        let s = icosphere(10.0, 4);
        let v = mesh_volume(&s, Cavity::Whole).unwrap() * 1000.0;
        let exact = 4.0 / 3.0 * std::f64::consts::PI * 1000.0;
        assert!((v - exact).abs() / exact < 0.005, "{v}");
        assert!((exact - 4188.8).abs() < 0.1);
    }

    #[test]
    fn inside_out_is_negative_and_cube_is_one_microlitre() {
        let mut s = icosphere(10.0, 2);
        for t in s.triangles.iter_mut() {
            t.swap(1, 2);
        }
        assert!(mesh_volume(&s, Cavity::Whole).unwrap() < 0.0);
        let c = box_surface(1.0);
        assert!((mesh_volume(&c, Cavity::Whole).unwrap() - 0.001).abs() < 1e-15);
    }

    #[test]
    fn open_surface_is_rejected() {
        let mut s = box_surface(1.0);
        s.triangles.pop();
        s.triangle_patch.pop();
        assert!(matches!(mesh_volume(&s, Cavity::Whole), Err(Error::OpenSurface(3))));
    }

    #[test]
    fn text_roundtrip() {
        let s = icosphere(3.0, 1);
        let back = SurfaceMesh::from_text(&s.to_text(), Some(&s)).unwrap();
        assert_eq!(back, s);
        let plain = SurfaceMesh::from_text(&s.to_text(), None).unwrap();
        assert_eq!(plain.vertices, s.vertices);
        assert_eq!(plain.triangles, s.triangles);
    }
}
