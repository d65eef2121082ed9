//! Demographic bins, rigid Procrustes alignment, the cohort mean shape and
//! per-bin representative meshes.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::TetMesh;
use crate::fields::{compute_fibers, compute_uvc, FiberAngles, FiberReport, UVCField};
use crate::geometry::{Similarity, Vec3};
use crate::surface::{umeyama, SurfaceMesh};
use crate::volmesh::harmonic_volumize;

pub mod stats;

pub use stats::{bland_altman, mann_whitney_u, ols_regression, Agreement, RankTest, Regression};

/// Fewest members a bin needs for a representative mesh.
pub const MIN_BIN_MEMBERS: usize = 3;
pub const PROCRUSTES_TOL: f64 = 1e-6;
pub const MAX_MEAN_ITERATIONS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Sex {
    F,
    M,
}

impl fmt::Display for Sex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sex::F => "F",
            Sex::M => "M",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Demographics {
    pub subject_id: String,
    pub sex: Sex,
    pub age_years: f64,
    pub bmi_kg_m2: f64,
}

pub fn read_demographics(path: &Path) -> Result<Vec<Demographics>> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
    let rows: Vec<Demographics> = r
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
    for d in &rows {
        if !(d.age_years > 0.0) || !(d.bmi_kg_m2 > 0.0) {
            return Err(Error::Manifest(format!("{}: age and BMI must be positive", d.subject_id)));
        }
    }
    Ok(rows)
}

/// Inclusive integer bin ranges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BinRanges {
    pub age: (i32, i32),
    pub bmi: (i32, i32),
}

impl Default for BinRanges {
    fn default() -> Self {
        BinRanges {
            age: (44, 85),
            bmi: (15, 50),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BinKey {
    pub sex: Sex,
    pub age_bin: i32,
    pub bmi_bin: i32,
}

/// One-year, one-kg/m² bins. Subjects outside the ranges get the reason
/// they were left out.
pub fn assign_bin(d: &Demographics, ranges: &BinRanges) -> std::result::Result<BinKey, String> {
    let age = d.age_years.floor() as i32;
    let bmi = d.bmi_kg_m2.floor() as i32;
    if !(ranges.age.0..=ranges.age.1).contains(&age) {
        return Err(format!("age {} outside {}..={}", d.age_years, ranges.age.0, ranges.age.1));
    }
    if !(ranges.bmi.0..=ranges.bmi.1).contains(&bmi) {
        return Err(format!("BMI {} outside {}..={}", d.bmi_kg_m2, ranges.bmi.0, ranges.bmi.1));
    }
    Ok(BinKey {
        sex: d.sex,
        age_bin: age,
        bmi_bin: bmi,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CohortBin {
    pub key: BinKey,
    pub members: Vec<String>,
}

/// Groups subjects by bin; returns the bins and the out-of-range subjects.
pub fn bin_cohort(demo: &[Demographics], ranges: &BinRanges) -> (Vec<CohortBin>, Vec<(String, String)>) {
    let mut bins: BTreeMap<BinKey, Vec<String>> = BTreeMap::new();
    let mut out = Vec::new();
    for d in demo {
        match assign_bin(d, ranges) {
            Ok(k) => bins.entry(k).or_default().push(d.subject_id.clone()),
            Err(why) => out.push((d.subject_id.clone(), why)),
        }
    }
    (bins.into_iter().map(|(key, members)| CohortBin { key, members }).collect(), out)
}

fn rms(a: &[Vec3], b: &[Vec3]) -> f64 {
    (a.iter().zip(b).map(|(p, q)| (p - q).norm_squared()).sum::<f64>() / a.len() as f64).sqrt()
}

fn check_correspondence(a: &SurfaceMesh, b: &SurfaceMesh) -> Result<()> {
    if a.template_id != b.template_id || a.num_vertices() != b.num_vertices() {
        return Err(Error::Cohort(format!(
            "meshes do not correspond ({} with {} vertices vs {} with {})",
            a.template_id,
            a.num_vertices(),
            b.template_id,
            b.num_vertices()
        )));
    }
    Ok(())
}

/// Transform taking `src` onto `reference` and the RMS vertex residual
/// after it. Scaling is only estimated when `with_scale` is set.
pub fn procrustes_align_pair(src: &SurfaceMesh, reference: &SurfaceMesh, with_scale: bool) -> Result<(Similarity, f64)> {
    check_correspondence(src, reference)?;
    let t = umeyama(&src.vertices, &reference.vertices, with_scale).map_err(|e| Error::Cohort(e.to_string()))?;
    let moved: Vec<Vec3> = src.vertices.iter().map(|p| t.apply(p)).collect();
    Ok((t, rms(&moved, &reference.vertices)))
}

pub fn procrustes_distance(a: &SurfaceMesh, b: &SurfaceMesh, with_scale: bool) -> Result<f64> {
    Ok(procrustes_align_pair(a, b, with_scale)?.1)
}

fn vertex_mean(meshes: &[Vec<Vec3>]) -> Vec<Vec3> {
    let n = meshes.len() as f64;
    (0..meshes[0].len())
        .map(|i| meshes.iter().map(|m| m[i]).sum::<Vec3>() / n)
        .collect()
}

fn align_all(meshes: &[SurfaceMesh], reference: &SurfaceMesh, with_scale: bool) -> Result<Vec<Vec<Vec3>>> {
    meshes
        .par_iter()
        .map(|m| {
            let (t, _) = procrustes_align_pair(m, reference, with_scale)?;
            Ok(m.vertices.iter().map(|p| t.apply(p)).collect())
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct MeanShape {
    pub reference: SurfaceMesh,
    pub iterations: usize,
    /// Distance between the last mean and the reference it was built on.
    pub distance: f64,
}

/// Generalised Procrustes mean seeded with the first mesh.
pub fn iterative_mean(meshes: &[SurfaceMesh], tol: f64, with_scale: bool) -> Result<MeanShape> {
    if meshes.len() < 2 {
        return Err(Error::Cohort(format!("mean shape needs 2 meshes, got {}", meshes.len())));
    }
    let mut reference = meshes[0].clone();
    for it in 1..=MAX_MEAN_ITERATIONS {
        let aligned = align_all(meshes, &reference, with_scale)?;
        let mean = reference.with_vertices(vertex_mean(&aligned));
        let d = procrustes_distance(&mean, &reference, with_scale)?;
        reference = mean;
        if d <= tol {
            return Ok(MeanShape {
                reference,
                iterations: it,
                distance: d,
            });
        }
    }
    Err(Error::Cohort(format!("mean shape did not converge in {MAX_MEAN_ITERATIONS} iterations")))
}

/// Vertex-wise average of the members after alignment to `reference`.
pub fn bin_average(members: &[SurfaceMesh], reference: &SurfaceMesh, with_scale: bool) -> Result<SurfaceMesh> {
    if members.len() < MIN_BIN_MEMBERS {
        return Err(Error::Cohort(format!(
            "bin has {} members, at least {MIN_BIN_MEMBERS} are needed",
            members.len()
        )));
    }
    let aligned = align_all(members, reference, with_scale)?;
    Ok(reference.with_vertices(vertex_mean(&aligned)))
}

#[derive(Debug, Clone)]
pub struct Representative {
    pub surface: SurfaceMesh,
    /// Carries the fiber frames.
    pub volume: TetMesh,
    pub uvc: UVCField,
    pub fiber_report: FiberReport,
}

/// Bin average carried through volumization, coordinates and fibers.
pub fn representative_mesh(
    members: &[SurfaceMesh],
    reference: &SurfaceMesh,
    template_volume: &TetMesh,
    angles: &FiberAngles,
    with_scale: bool,
) -> Result<Representative> {
    let surface = bin_average(members, reference, with_scale)?;
    let mut volume = harmonic_volumize(template_volume, &surface)?;
    let uvc = compute_uvc(&volume)?;
    let (frames, fiber_report) = compute_fibers(&volume, &uvc, angles)?;
    volume.fibers = Some(frames);
    Ok(Representative {
        surface,
        volume,
        uvc,
        fiber_report,
    })
}
