use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::Vec3;

use super::{CsrMatrix, NodalField, TetMesh, DEGENERATE_VOLUME_MM3};

/// Gradients of the four P1 shape functions and the signed volume of a tet.
pub fn shape_gradients(p: [&Vec3; 4]) -> Option<([Vec3; 4], f64)> {
    let j = nalgebra::Matrix3::from_columns(&[p[1] - p[0], p[2] - p[0], p[3] - p[0]]);
    let vol = j.determinant() / 6.0;
    if vol.abs() < DEGENERATE_VOLUME_MM3 {
        return None;
    }
    let inv = j.try_inverse()?;
    // rows of J⁻¹ are the gradients of the barycentric coordinates 1..3
    let g1 = inv.row(0).transpose();
    let g2 = inv.row(1).transpose();
    let g3 = inv.row(2).transpose();
    Some(([-(g1 + g2 + g3), g1, g2, g3], vol))
}

/// Element stiffness matrix `|V| G Gᵀ`.
pub fn element_matrix(p: [&Vec3; 4]) -> Option<[[f64; 4]; 4]> {
    let (g, vol) = shape_gradients(p)?;
    let mut k = [[0.0; 4]; 4];
    for a in 0..4 {
        for b in 0..4 {
            k[a][b] = vol.abs() * g[a].dot(&g[b]);
        }
    }
    Some(k)
}

fn tet_points(mesh: &TetMesh, e: usize) -> [&Vec3; 4] {
    let t = mesh.tets[e];
    [&mesh.nodes[t[0]], &mesh.nodes[t[1]], &mesh.nodes[t[2]], &mesh.nodes[t[3]]]
}

/// Assembles the P1 Laplacian stiffness matrix. Element matrices are
/// computed in parallel and scattered in element order, so the result does
/// not depend on the thread count.
pub fn assemble_stiffness(mesh: &TetMesh) -> Result<CsrMatrix> {
    let local: Vec<Option<[[f64; 4]; 4]>> = (0..mesh.tets.len())
        .into_par_iter()
        .map(|e| element_matrix(tet_points(mesh, e)))
        .collect();
    if let Some(e) = local.iter().position(|k| k.is_none()) {
        return Err(Error::DegenerateElement {
            element: e,
            volume: mesh.signed_volume(e),
        });
    }
    let mut rows: Vec<Vec<usize>> = vec![Vec::new(); mesh.nodes.len()];
    for t in &mesh.tets {
        for &a in t {
            rows[a].extend_from_slice(t);
        }
    }
    for r in rows.iter_mut() {
        r.sort_unstable();
        r.dedup();
    }
    let mut k = CsrMatrix::from_pattern(&rows);
    for (t, ke) in mesh.tets.iter().zip(&local) {
        let ke = ke.as_ref().expect("checked above");
        for a in 0..4 {
            for b in 0..4 {
                k.add(t[a], t[b], ke[a][b]);
            }
        }
    }
    Ok(k)
}

/// Exact gradient of a P1 field on every element.
pub fn element_gradient(mesh: &TetMesh, f: &NodalField) -> Result<Vec<Vec3>> {
    element_gradients(mesh, &f.values)
}

pub fn element_gradients(mesh: &TetMesh, values: &[f64]) -> Result<Vec<Vec3>> {
    if values.len() != mesh.nodes.len() {
        return Err(Error::Field(format!(
            "field has {} values for {} nodes",
            values.len(),
            mesh.nodes.len()
        )));
    }
    (0..mesh.tets.len())
        .into_par_iter()
        .map(|e| {
            let (g, _) = shape_gradients(tet_points(mesh, e)).ok_or(Error::DegenerateElement {
                element: e,
                volume: mesh.signed_volume(e),
            })?;
            let t = mesh.tets[e];
            Ok((0..4).map(|a| g[a] * values[t[a]]).sum())
        })
        .collect()
}
