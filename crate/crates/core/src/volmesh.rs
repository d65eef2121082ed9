//! Subject volume meshes by harmonic deformation of the template tetrahedra,
//! element quality, and mesh file formats.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{assemble_stiffness, solve_dirichlet_report, Region, TetMesh};
use crate::geometry::{triangle_area, triangle_volume_term, Vec3};
use crate::surface::SurfaceMesh;

/// Relative CG tolerance of the displacement solves; tight enough that
/// affine boundary data is reproduced to well below a nanometre.
pub const VOLUMIZE_TOL: f64 = 1e-13;

/// Moves the template's boundary nodes onto the fitted surface and extends
/// the displacement harmonically into the interior.
pub fn harmonic_volumize(template_vol: &TetMesh, fitted: &SurfaceMesh) -> Result<TetMesh> {
    let out = harmonic_map(template_vol, fitted)?;
    let inverted = out.count_inverted();
    if inverted > 0 {
        return Err(Error::InvertedElements(inverted));
    }
    Ok(out)
}

/// The harmonic extension without the orientation check.
pub fn harmonic_map(template_vol: &TetMesh, fitted: &SurfaceMesh) -> Result<TetMesh> {
    let nb = fitted.num_vertices();
    let n = template_vol.num_nodes();
    if nb > n {
        return Err(Error::Format(format!("surface has {nb} vertices, template volume {n} nodes")));
    }
    let boundary = template_vol.boundary_nodes();
    if boundary.len() != nb || boundary.iter().next_back().is_some_and(|&b| b + 1 != nb) {
        return Err(Error::Format(
            "template volume boundary nodes do not correspond to the surface vertices".into(),
        ));
    }
    let k = assemble_stiffness(template_vol)?;
    let disp: Vec<Vec<f64>> = (0..3)
        .into_par_iter()
        .map(|a| {
            let bc: BTreeMap<usize, f64> = (0..nb)
                .map(|i| (i, fitted.vertices[i][a] - template_vol.nodes[i][a]))
                .collect();
            solve_dirichlet_report(&k, &bc, VOLUMIZE_TOL, None).map(|(u, _)| u)
        })
        .collect::<Result<_>>()?;
    let mut out = template_vol.clone();
    out.fibers = None;
    for i in 0..n {
        out.nodes[i] = if i < nb {
            fitted.vertices[i]
        } else {
            template_vol.nodes[i] + Vec3::new(disp[0][i], disp[1][i], disp[2][i])
        };
    }
    Ok(out)
}

pub const MAX_UNTANGLE_ITERATIONS: usize = 50;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UntangleReport {
    pub iterations: usize,
    pub moved_vertices: usize,
    pub max_shift_mm: f64,
}

/// Locally smooths the surface around elements the harmonic map would
/// invert, until none are left. Thin parts of the template (valve plugs,
/// the RV wall near the septal junctions) have no interior nodes, so their
/// shape comes from the surface alone.
pub fn untangle_surface(template_vol: &TetMesh, surface: &SurfaceMesh) -> Result<(SurfaceMesh, UntangleReport)> {
    let nb = surface.num_vertices();
    let adj = surface.adjacency();
    let mut s = surface.clone();
    let mut moved: std::collections::BTreeSet<usize> = std::collections::BTreeSet::new();
    for it in 0..=MAX_UNTANGLE_ITERATIONS {
        let mesh = harmonic_map(template_vol, &s)?;
        let bad: Vec<usize> = (0..mesh.num_elements()).filter(|&e| mesh.signed_volume(e) <= 0.0).collect();
        if bad.is_empty() {
            let max_shift_mm = moved
                .iter()
                .map(|&i| (s.vertices[i] - surface.vertices[i]).norm())
                .fold(0.0, f64::max);
            return Ok((
                s,
                UntangleReport {
                    iterations: it,
                    moved_vertices: moved.len(),
                    max_shift_mm,
                },
            ));
        }
        if it == MAX_UNTANGLE_ITERATIONS {
            return Err(Error::InvertedElements(bad.len()));
        }
        // the boundary nodes of bad elements and their surface neighbours
        let mut zone: std::collections::BTreeSet<usize> = std::collections::BTreeSet::new();
        for &e in &bad {
            for &i in &mesh.tets[e] {
                if i < nb {
                    zone.insert(i);
                    zone.extend(adj[i].iter().copied());
                }
            }
        }
        if zone.is_empty() {
            return Err(Error::InvertedElements(bad.len()));
        }
        let next: Vec<(usize, Vec3)> = zone
            .iter()
            .map(|&i| {
                let mean = adj[i].iter().map(|&j| s.vertices[j]).sum::<Vec3>() / adj[i].len() as f64;
                (i, 0.5 * (s.vertices[i] + mean))
            })
            .collect();
        for (i, p) in next {
            s.vertices[i] = p;
            moved.insert(i);
        }
    }
    unreachable!()
}

/// Divergence-theorem volume of the mesh's outward boundary (mm³).
pub fn boundary_volume(mesh: &TetMesh) -> f64 {
    mesh.boundary_faces()
        .iter()
        .map(|f| triangle_volume_term(&mesh.nodes[f[0]], &mesh.nodes[f[1]], &mesh.nodes[f[2]]))
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub min: f64,
    pub median: f64,
    pub max: f64,
}

impl Summary {
    fn of(values: &[f64]) -> Summary {
        if values.is_empty() {
            return Summary {
                min: f64::NAN,
                median: f64::NAN,
                max: f64::NAN,
            };
        }
        let mut v = values.to_vec();
        v.sort_by(|a, b| a.total_cmp(b));
        let m = v.len();
        let median = if m % 2 == 1 { v[m / 2] } else { 0.5 * (v[m / 2 - 1] + v[m / 2]) };
        Summary {
            min: v[0],
            median,
            max: v[m - 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QualityReport {
    pub signed_volume: Vec<f64>,
    /// Circumradius over inradius; 3 for a regular tetrahedron.
    pub aspect: Vec<f64>,
    pub volume_summary: Summary,
    pub aspect_summary: Summary,
    pub non_positive: usize,
}

/// Circumradius-to-inradius ratio; infinite for flat elements.
pub fn tet_aspect(p: [&Vec3; 4]) -> f64 {
    let a = nalgebra::Matrix3::from_rows(&[
        (p[1] - p[0]).transpose(),
        (p[2] - p[0]).transpose(),
        (p[3] - p[0]).transpose(),
    ]);
    let vol = a.determinant().abs() / 6.0;
    let area = triangle_area(p[1], p[2], p[3])
        + triangle_area(p[0], p[2], p[3])
        + triangle_area(p[0], p[1], p[3])
        + triangle_area(p[0], p[1], p[2]);
    if vol <= 0.0 || area <= 0.0 {
        return f64::INFINITY;
    }
    let inradius = 3.0 * vol / area;
    let rhs = nalgebra::Vector3::new(
        (p[1] - p[0]).norm_squared(),
        (p[2] - p[0]).norm_squared(),
        (p[3] - p[0]).norm_squared(),
    ) * 0.5;
    match a.lu().solve(&rhs) {
        Some(c) => c.norm() / inradius,
        None => f64::INFINITY,
    }
}

pub fn element_quality(mesh: &TetMesh) -> QualityReport {
    let per: Vec<(f64, f64)> = (0..mesh.num_elements())
        .into_par_iter()
        .map(|e| {
            let t = mesh.tets[e];
            let p = [&mesh.nodes[t[0]], &mesh.nodes[t[1]], &mesh.nodes[t[2]], &mesh.nodes[t[3]]];
            (mesh.signed_volume(e), tet_aspect(p))
        })
        .collect();
    let signed_volume: Vec<f64> = per.iter().map(|p| p.0).collect();
    let aspect: Vec<f64> = per.iter().map(|p| p.1).collect();
    QualityReport {
        non_positive: signed_volume.iter().filter(|v| **v <= 0.0).count(),
        volume_summary: Summary::of(&signed_volume),
        aspect_summary: Summary::of(&aspect),
        signed_volume,
        aspect,
    }
}

/// Paths of the nodes/elements/fibers text triple sharing one stem.
pub fn text_paths(stem: &Path) -> [PathBuf; 3] {
    ["pts", "elem", "lon"].map(|ext| stem.with_extension(ext))
}

pub fn nodes_text(mesh: &TetMesh) -> String {
    let mut s = String::with_capacity(40 * mesh.num_nodes());
    writeln!(s, "{}", mesh.num_nodes()).unwrap();
    for p in &mesh.nodes {
        writeln!(s, "{:.6} {:.6} {:.6}", p.x, p.y, p.z).unwrap();
    }
    s
}

pub fn elements_text(mesh: &TetMesh) -> String {
    let mut s = String::with_capacity(32 * mesh.num_elements());
    writeln!(s, "{}", mesh.num_elements()).unwrap();
    for (t, r) in mesh.tets.iter().zip(&mesh.region) {
        writeln!(s, "Tt {} {} {} {} {}", t[0], t[1], t[2], t[3], r.tag()).unwrap();
    }
    s
}

/// Writes `.pts` and `.elem` (and `.lon` when the mesh carries fibers).
pub fn write_text_mesh(mesh: &TetMesh, stem: &Path) -> Result<()> {
    let [pts, elem, lon] = text_paths(stem);
    std::fs::write(&pts, nodes_text(mesh)).map_err(|e| Error::io(&pts, e))?;
    std::fs::write(&elem, elements_text(mesh)).map_err(|e| Error::io(&elem, e))?;
    if let Some(f) = &mesh.fibers {
        std::fs::write(&lon, crate::fields::fibers_text(f)).map_err(|e| Error::io(&lon, e))?;
    }
    Ok(())
}

fn parse_count<'a>(lines: &mut impl Iterator<Item = &'a str>, what: &str) -> Result<usize> {
    lines
        .next()
        .ok_or_else(|| Error::Format(format!("{what}: missing count line")))?
        .trim()
        .parse()
        .map_err(|_| Error::Format(format!("{what}: bad count line")))
}

pub fn parse_nodes(text: &str) -> Result<Vec<Vec3>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let n = parse_count(&mut lines, "nodes")?;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let l = lines.next().ok_or_else(|| Error::Format("nodes: truncated".into()))?;
        let v: Vec<f64> = l
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Format(format!("nodes: bad line {l:?}")))?;
        if v.len() != 3 {
            return Err(Error::Format(format!("nodes: bad line {l:?}")));
        }
        out.push(Vec3::new(v[0], v[1], v[2]));
    }
    Ok(out)
}

pub fn parse_elements(text: &str) -> Result<(Vec<[usize; 4]>, Vec<Region>)> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let n = parse_count(&mut lines, "elements")?;
    let mut tets = Vec::with_capacity(n);
    let mut region = Vec::with_capacity(n);
    for _ in 0..n {
        let l = lines.next().ok_or_else(|| Error::Format("elements: truncated".into()))?;
        let bad = || Error::Format(format!("elements: bad line {l:?}"));
        let parts: Vec<&str> = l.split_whitespace().collect();
        if parts.len() != 6 || parts[0] != "Tt" {
            return Err(bad());
        }
        let idx = |k: usize| parts[k].parse::<usize>().map_err(|_| bad());
        tets.push([idx(1)?, idx(2)?, idx(3)?, idx(4)?]);
        let tag: u8 = parts[5].parse().map_err(|_| bad())?;
        region.push(Region::from_tag(tag).ok_or_else(bad)?);
    }
    Ok((tets, region))
}

/// Reads a text triple. Node sets are not part of the format; callers
/// re-attach them from the template.
pub fn read_text_mesh(stem: &Path) -> Result<TetMesh> {
    let [pts, elem, lon] = text_paths(stem);
    let read = |p: &Path| std::fs::read_to_string(p).map_err(|e| Error::io(p, e));
    let nodes = parse_nodes(&read(&pts)?)?;
    let (tets, region) = parse_elements(&read(&elem)?)?;
    let mut mesh = TetMesh::new(nodes, tets, Region::LvMyo);
    mesh.region = region;
    if lon.exists() {
        mesh.fibers = Some(crate::fields::parse_fibers(&read(&lon)?)?);
    }
    mesh.validate()?;
    Ok(mesh)
}

/// Extra per-node or per-element data for VTK output.
pub enum VtkData<'a> {
    PointScalars(&'a str, &'a [f64]),
    CellVectors(&'a str, &'a [Vec3]),
}

/// VTK legacy ASCII UnstructuredGrid with the region tag as cell data.
pub fn vtk_text(mesh: &TetMesh, extra: &[VtkData]) -> String {
    let mut s = String::new();
    writeln!(s, "# vtk DataFile Version 3.0\nbiventricular volume mesh\nASCII\nDATASET UNSTRUCTURED_GRID").unwrap();
    writeln!(s, "POINTS {} double", mesh.num_nodes()).unwrap();
    for p in &mesh.nodes {
        writeln!(s, "{:.6} {:.6} {:.6}", p.x, p.y, p.z).unwrap();
    }
    let ne = mesh.num_elements();
    writeln!(s, "CELLS {} {}", ne, 5 * ne).unwrap();
    for t in &mesh.tets {
        writeln!(s, "4 {} {} {} {}", t[0], t[1], t[2], t[3]).unwrap();
    }
    writeln!(s, "CELL_TYPES {ne}").unwrap();
    for _ in 0..ne {
        s.push_str("10\n");
    }
    writeln!(s, "CELL_DATA {ne}\nSCALARS region int 1\nLOOKUP_TABLE default").unwrap();
    for r in &mesh.region {
        writeln!(s, "{}", r.tag()).unwrap();
    }
    for d in extra {
        if let VtkData::CellVectors(name, v) = d {
            writeln!(s, "VECTORS {name} double").unwrap();
            for x in v.iter() {
                writeln!(s, "{:.6} {:.6} {:.6}", x.x, x.y, x.z).unwrap();
            }
        }
    }
    let points: Vec<_> = extra
        .iter()
        .filter_map(|d| match d {
            VtkData::PointScalars(n, v) => Some((n, v)),
            _ => None,
        })
        .collect();
    if !points.is_empty() {
        writeln!(s, "POINT_DATA {}", mesh.num_nodes()).unwrap();
        for (name, v) in points {
            writeln!(s, "SCALARS {name} double 1\nLOOKUP_TABLE default").unwrap();
            for x in v.iter() {
                writeln!(s, "{x:.6}").unwrap();
            }
        }
    }
    s
}

pub fn write_vtk(mesh: &TetMesh, path: &Path, extra: &[VtkData]) -> Result<()> {
    std::fs::write(path, vtk_text(mesh, extra)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::meshgen::unit_cube;
    use crate::geometry::axis_angle;
    use crate::surface::Template;

    #[test]
    fn regular_tet_aspect_is_three() {
        let p = [
            Vec3::new(1.0, 1.0, 1.0),
            Vec3::new(1.0, -1.0, -1.0),
            Vec3::new(-1.0, 1.0, -1.0),
            Vec3::new(-1.0, -1.0, 1.0),
        ];
        assert!((tet_aspect([&p[0], &p[1], &p[2], &p[3]]) - 3.0).abs() < 1e-12);
        // right-corner tet: R = √3/2, r = 1/(3+√3)
        let q = [Vec3::zeros(), Vec3::x(), Vec3::y(), Vec3::z()];
        let expected = 3f64.sqrt() / 2.0 * (3.0 + 3f64.sqrt());
        assert!((tet_aspect([&q[0], &q[1], &q[2], &q[3]]) - expected).abs() < 1e-12);
    }

    #[test]
    fn flipped_element_reports_negative_volume() {
        let mut m = unit_cube(1);
        m.tets[0].swap(0, 1);
        let q = element_quality(&m);
        assert_eq!(q.non_positive, 1);
        assert!(q.signed_volume[0] < 0.0);
        assert!(q.volume_summary.min < 0.0);
    }

    #[test]
    fn identity_and_affine_deformations() {
        let t = Template::standard();
        let same = harmonic_volumize(&t.volume, &t.surface).unwrap();
        assert_eq!(same.nodes, t.volume.nodes);

        let a = axis_angle(&Vec3::new(0.2, 1.0, -0.4), 0.7) * 1.1
            + nalgebra::Matrix3::new(0.05, 0.02, 0.0, 0.0, -0.03, 0.04, 0.01, 0.0, 0.02);
        let b = Vec3::new(10.0, -4.0, 33.0);
        let f = |p: &Vec3| a * p + b;
        let out = harmonic_volumize(&t.volume, &t.surface.map_vertices(f)).unwrap();
        let worst = t
            .volume
            .nodes
            .iter()
            .zip(&out.nodes)
            .map(|(p, q)| (f(p) - q).norm())
            .fold(0.0, f64::max);
        assert!(worst < 1e-8, "{worst}");
        assert_eq!(out.region, t.volume.region);
    }

    #[test]
    fn boundary_volume_matches_element_sum() {
        let t = Template::standard();
        let v = t.volume.total_volume();
        assert!((boundary_volume(&t.volume) - v).abs() / v < 1e-9);
    }

    #[test]
    fn text_triple_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let m = unit_cube(2);
        let stem = dir.path().join("cube");
        write_text_mesh(&m, &stem).unwrap();
        let back = read_text_mesh(&stem).unwrap();
        assert_eq!(back.tets, m.tets);
        assert_eq!(back.region, m.region);
        for (p, q) in m.nodes.iter().zip(&back.nodes) {
            assert!((p - q).norm() < 1e-6);
        }
        let first = std::fs::read_to_string(stem.with_extension("elem")).unwrap();
        assert!(first.lines().nth(1).unwrap().starts_with("Tt "));
    }

    #[test]
    fn untangling_repairs_a_folded_wall() {
        let t = Template::standard();
        let (none, report) = untangle_surface(&t.volume, &t.surface).unwrap();
        assert_eq!(none.vertices, t.surface.vertices);
        assert_eq!(report.moved_vertices, 0);

        // push one RV wall vertex through its partner on the other side
        let (a, b) = t.surface.rv_epi_pairs[t.surface.rv_epi_pairs.len() / 2];
        let mut folded = t.surface.clone();
        folded.vertices[a] = t.surface.vertices[b] * 2.0 - t.surface.vertices[a];
        assert!(matches!(harmonic_volumize(&t.volume, &folded), Err(Error::InvertedElements(n)) if n > 0));
        let (fixed, report) = untangle_surface(&t.volume, &folded).unwrap();
        assert!(report.moved_vertices > 0 && report.iterations > 0);
        assert_eq!(harmonic_volumize(&t.volume, &fixed).unwrap().count_inverted(), 0);
        // only the neighbourhood of the fold moves
        assert!(report.moved_vertices < 100, "{report:?}");
    }

    #[test]
    fn mismatched_surface_rejected() {
        let t = Template::standard();
        let s = crate::surface::icosphere(5.0, 1);
        assert!(harmonic_volumize(&t.volume, &s).is_err());
    }
}
