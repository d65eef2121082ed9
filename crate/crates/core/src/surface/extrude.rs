use crate::error::{Error, Result};
use crate::geometry::{triangle_cross, Vec3};

use super::{Patch, SurfaceMesh, VertexRegion};

/// Area-weighted vertex normals of the given triangles. Vertices touched by
/// none of them get a zero vector.
pub fn vertex_normals(vertices: &[Vec3], triangles: &[[usize; 3]]) -> Vec<Vec3> {
    let mut n = vec![Vec3::zeros(); vertices.len()];
    for t in triangles {
        // |cross| is twice the area, so the sum is area weighted
        let c = triangle_cross(&vertices[t[0]], &vertices[t[1]], &vertices[t[2]]);
        for &i in t {
            n[i] += c;
        }
    }
    for v in n.iter_mut() {
        let l = v.norm();
        if l > 0.0 {
            *v /= l;
        }
    }
    n
}

/// Places every RV epicardial vertex at its paired endocardial vertex moved
/// `thickness_mm` along the outward normal of the free-wall shell.
///
/// A surface without extrusion pairs is treated as a bare RV endocardium:
/// every `RV_ENDO_FREEWALL` vertex gets a new `RV_EPI` copy and the copied
/// triangles are appended as `RV_EPI`.
pub fn extrude_rv_epicardium(mesh: &SurfaceMesh, thickness_mm: f64) -> Result<SurfaceMesh> {
    if !(thickness_mm >= 0.0) || !thickness_mm.is_finite() {
        return Err(Error::Fit(format!("invalid RV wall thickness {thickness_mm}")));
    }
    if mesh.rv_epi_pairs.is_empty() {
        return extrude_bare(mesh, thickness_mm);
    }
    let free: Vec<[usize; 3]> = mesh.triangles_in(&[Patch::RvFreewall]).copied().collect();
    let normals = vertex_normals(&mesh.vertices, &free);
    let mut out = mesh.clone();
    for &(endo, epi) in &mesh.rv_epi_pairs {
        if normals[endo] == Vec3::zeros() {
            return Err(Error::Fit(format!("RV vertex {endo} has no free-wall triangle")));
        }
        out.vertices[epi] = mesh.vertices[endo] + normals[endo] * thickness_mm;
    }
    check_inversion(mesh, &out, Patch::RvFreewall, Patch::RvEpi)?;
    Ok(out)
}

fn extrude_bare(mesh: &SurfaceMesh, thickness_mm: f64) -> Result<SurfaceMesh> {
    let endo: Vec<usize> = mesh.vertices_with(VertexRegion::RvEndoFreewall);
    if endo.is_empty() {
        return Err(Error::Fit("surface has no RV endocardial vertices".into()));
    }
    let tri: Vec<[usize; 3]> = mesh
        .triangles
        .iter()
        .filter(|t| t.iter().all(|&i| mesh.vertex_region[i] == VertexRegion::RvEndoFreewall))
        .copied()
        .collect();
    let normals = vertex_normals(&mesh.vertices, &tri);
    let mut out = mesh.clone();
    for (k, t) in mesh.triangles.iter().enumerate() {
        if t.iter().all(|&i| mesh.vertex_region[i] == VertexRegion::RvEndoFreewall) {
            out.triangle_patch[k] = Patch::RvFreewall;
        }
    }
    let mut copy = vec![usize::MAX; mesh.vertices.len()];
    for &i in &endo {
        copy[i] = out.vertices.len();
        out.vertices.push(mesh.vertices[i] + normals[i] * thickness_mm);
        out.vertex_region.push(VertexRegion::RvEpi);
        out.rv_epi_pairs.push((i, copy[i]));
    }
    for t in &tri {
        out.triangles.push([copy[t[0]], copy[t[1]], copy[t[2]]]);
        out.triangle_patch.push(Patch::RvEpi);
    }
    check_inversion(&out, &out, Patch::RvFreewall, Patch::RvEpi)?;
    Ok(out)
}

/// Every extruded triangle must keep the orientation of its source triangle.
fn check_inversion(src: &SurfaceMesh, out: &SurfaceMesh, from: Patch, to: Patch) -> Result<()> {
    let map: std::collections::HashMap<usize, usize> = out.rv_epi_pairs.iter().copied().collect();
    let sources: std::collections::HashMap<[usize; 3], usize> = src
        .triangles
        .iter()
        .enumerate()
        .filter(|(k, _)| src.triangle_patch[*k] == from)
        .filter_map(|(k, t)| Some(([*map.get(&t[0])?, *map.get(&t[1])?, *map.get(&t[2])?], k)))
        .collect();
    let mut inverted = 0;
    for (k, t) in out.triangles.iter().enumerate() {
        if out.triangle_patch[k] != to {
            continue;
        }
        // epicardial triangles may be stored in either orientation
        let (s, flip) = match sources.get(t) {
            Some(&s) => (s, false),
            None => match sources.get(&[t[0], t[2], t[1]]) {
                Some(&s) => (s, true),
                None => continue,
            },
        };
        let before = src.triangle_normal(s);
        let mut after = out.triangle_normal(k);
        if flip {
            after = -after;
        }
        if before.dot(&after) <= 0.0 {
            inverted += 1;
        }
    }
    if inverted > 0 {
        return Err(Error::InvertedExtrusion(inverted));
    }
    Ok(())
}
