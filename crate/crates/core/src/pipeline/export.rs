use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::TetMesh;
use crate::fields::{compute_uvc, UVCField};
use crate::geometry::Vec3;
use crate::surface::Template;
use crate::volmesh::{read_text_mesh, text_paths, write_text_mesh, write_vtk, VtkData};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ExportFormat {
    TextTriple,
    VtkLegacy,
}

/// Writes the mesh next to `stem`; returns the files written.
pub fn export_mesh(mesh: &TetMesh, uvc: Option<&UVCField>, format: ExportFormat, stem: &Path) -> Result<Vec<PathBuf>> {
    if let Some(u) = uvc {
        if u.z.len() != mesh.num_nodes() {
            return Err(Error::Field("coordinates do not match the mesh".into()));
        }
    }
    match format {
        ExportFormat::TextTriple => {
            write_text_mesh(mesh, stem)?;
            let [pts, elem, lon] = text_paths(stem);
            Ok(if mesh.fibers.is_some() { vec![pts, elem, lon] } else { vec![pts, elem] })
        }
        ExportFormat::VtkLegacy => {
            let path = stem.with_extension("vtk");
            let (f, s): (Vec<Vec3>, Vec<Vec3>) = mesh.fibers.iter().flatten().map(|fr| (fr.f, fr.s)).unzip();
            let chamber: Vec<f64> = uvc.map(|u| u.chamber.iter().map(|c| c.code()).collect()).unwrap_or_default();
            let mut extra = Vec::new();
            if mesh.fibers.is_some() {
                extra.push(VtkData::CellVectors("fiber", &f));
                extra.push(VtkData::CellVectors("sheet", &s));
            }
            if let Some(u) = uvc {
                extra.push(VtkData::PointScalars("z", &u.z));
                extra.push(VtkData::PointScalars("rho", &u.rho));
                extra.push(VtkData::PointScalars("phi", &u.phi));
                extra.push(VtkData::PointScalars("chamber", &chamber));
            }
            write_vtk(mesh, &path, &extra)?;
            Ok(vec![path])
        }
    }
}

/// Reads a stored text mesh. When it has the standard template's
/// connectivity the node sets are restored and the coordinates recomputed.
pub fn load_text_mesh(stem: &Path) -> Result<(TetMesh, Option<UVCField>)> {
    let mut mesh = read_text_mesh(stem)?;
    let t = &Template::standard().volume;
    if mesh.tets != t.tets {
        return Ok((mesh, None));
    }
    mesh.surface_tags = t.surface_tags.clone();
    let uvc = compute_uvc(&mesh)?;
    Ok((mesh, Some(uvc)))
}

/// Reads a named POINT_DATA scalar array back from a legacy VTK file.
pub fn vtk_point_scalars(text: &str, name: &str) -> Result<Vec<f64>> {
    let mut lines = text.lines();
    let n: usize = lines
        .by_ref()
        .find_map(|l| l.strip_prefix("POINT_DATA "))
        .ok_or_else(|| Error::Format("VTK file has no point data".into()))?
        .trim()
        .parse()
        .map_err(|_| Error::Format("bad POINT_DATA count".into()))?;
    let header = format!("SCALARS {name} ");
    lines
        .by_ref()
        .find(|l| l.starts_with(&header))
        .ok_or_else(|| Error::Format(format!("VTK file has no point array {name}")))?;
    lines.next();
    lines
        .take(n)
        .map(|l| l.trim().parse().map_err(|_| Error::Format(format!("bad value {l:?} in {name}"))))
        .collect::<Result<Vec<f64>>>()
        .and_then(|v| {
            if v.len() == n {
                Ok(v)
            } else {
                Err(Error::Format(format!("{name}: {} of {n} values", v.len())))
            }
        })
}
