//! Clinical phenotypes from SAX masks and from meshes, and the outlier
//! filter comparing the two.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{Region, TetMesh};
use crate::labelgrid::{LabelVolume, Structure, View};
use crate::surface::{Cavity, SurfaceMesh};

pub use crate::surface::mesh_volume;

/// Myocardial tissue density (g/mL).
pub const MYOCARDIAL_DENSITY: f64 = 1.05;
/// Outlier threshold multiplier of the interquartile range.
pub const QC_IQR_MULTIPLIER: f64 = 1.5;
/// Fewest subjects for which quartiles are meaningful.
pub const QC_MIN_SUBJECTS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Source {
    Mask,
    Mesh,
}

impl Source {
    pub fn name(self) -> &'static str {
        match self {
            Source::Mask => "MASK",
            Source::Mesh => "MESH",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhenotypeRecord {
    pub subject_id: String,
    pub source: Source,
    pub lvedv_ml: f64,
    pub lvesv_ml: f64,
    pub rvedv_ml: f64,
    pub rvesv_ml: f64,
    pub lvm_g: f64,
    pub lvef_pct: f64,
    pub rvef_pct: f64,
}

/// Phenotypes that enter quality control, in [`PhenotypeRecord::qc_values`]
/// order.
pub const QC_PHENOTYPES: [&str; 5] = ["lvedv_ml", "lvesv_ml", "rvedv_ml", "rvesv_ml", "lvm_g"];

impl PhenotypeRecord {
    fn from_volumes(subject_id: &str, source: Source, lv: [f64; 2], rv: [f64; 2], lvm_g: f64) -> Result<Self> {
        Ok(PhenotypeRecord {
            subject_id: subject_id.to_string(),
            source,
            lvedv_ml: lv[0],
            lvesv_ml: lv[1],
            rvedv_ml: rv[0],
            rvesv_ml: rv[1],
            lvm_g,
            lvef_pct: ejection_fraction(lv[0], lv[1])?,
            rvef_pct: ejection_fraction(rv[0], rv[1])?,
        })
    }

    pub fn qc_values(&self) -> [f64; 5] {
        [self.lvedv_ml, self.lvesv_ml, self.rvedv_ml, self.rvesv_ml, self.lvm_g]
    }
}

pub fn ejection_fraction(edv: f64, esv: f64) -> Result<f64> {
    if !(edv > 0.0) {
        return Err(Error::Phenotype(format!("end-diastolic volume {edv} is not positive")));
    }
    Ok(100.0 * (edv - esv) / edv)
}

/// Volumes by voxel counting over the whole SAX stack; LV mass from the ED
/// myocardium.
pub fn mask_phenotypes(subject_id: &str, sax: &LabelVolume, ed: usize, es: usize, density: f64) -> Result<PhenotypeRecord> {
    if sax.view != View::Sax {
        return Err(Error::Phenotype(format!("expected a SAX volume, got {}", sax.view.name())));
    }
    let voxel_ml = sax.voxel_volume_mm3() / 1000.0;
    let ml = |s: Structure, t: usize| -> Result<f64> {
        match sax.code(s) {
            Some(code) => Ok(sax.count_label(t, code, None)? as f64 * voxel_ml),
            None => Err(Error::Phenotype(format!("SAX label map lacks {s:?}"))),
        }
    };
    let lv = [ml(Structure::LvCavity, ed)?, ml(Structure::LvCavity, es)?];
    let rv = [ml(Structure::RvCavity, ed)?, ml(Structure::RvCavity, es)?];
    let myo = ml(Structure::LvMyocardium, ed)?;
    PhenotypeRecord::from_volumes(subject_id, Source::Mask, lv, rv, myo * density)
}

/// Total volume (mL) of the elements in `regions`.
pub fn region_volume(mesh: &TetMesh, regions: &[Region]) -> f64 {
    (0..mesh.num_elements())
        .filter(|&e| regions.contains(&mesh.region[e]))
        .map(|e| mesh.signed_volume(e))
        .sum::<f64>()
        / 1000.0
}

/// Cavity volume (mL) of a volumetric mesh whose first nodes are the
/// vertices of `surface`, as produced by harmonic volumization.
pub fn tet_cavity_volume(mesh: &TetMesh, surface: &SurfaceMesh, cavity: Cavity) -> Result<f64> {
    let n = surface.num_vertices();
    if mesh.num_nodes() < n {
        return Err(Error::Phenotype("volume mesh has fewer nodes than the surface".into()));
    }
    mesh_volume(&surface.with_vertices(mesh.nodes[..n].to_vec()), cavity)
}

/// Cavity volumes from the ED and ES surfaces, LV mass from the ED volume
/// mesh's LV myocardium.
pub fn mesh_phenotypes(
    subject_id: &str,
    ed: &SurfaceMesh,
    es: &SurfaceMesh,
    ed_volume: &TetMesh,
    density: f64,
) -> Result<PhenotypeRecord> {
    let lv = [mesh_volume(ed, Cavity::Lv)?, mesh_volume(es, Cavity::Lv)?];
    let rv = [mesh_volume(ed, Cavity::Rv)?, mesh_volume(es, Cavity::Rv)?];
    let myo = region_volume(ed_volume, &[Region::LvMyo]);
    PhenotypeRecord::from_volumes(subject_id, Source::Mesh, lv, rv, myo * density)
}

/// `|mesh − mask| / mask`.
pub fn relative_difference(mesh_val: f64, mask_val: f64) -> Result<f64> {
    if !(mask_val > 0.0) {
        return Err(Error::Phenotype(format!("reference value {mask_val} is not positive")));
    }
    Ok((mesh_val - mask_val).abs() / mask_val)
}

/// Linear-interpolation quantile of sorted data (`(n−1)p` positioning).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QcOutcome {
    /// Per-phenotype threshold `Q3 + k·IQR`.
    pub thresholds: Vec<f64>,
    pub excluded: BTreeSet<String>,
}

/// Excludes every subject with at least one relative difference above its
/// phenotype's `Q3 + k·IQR`. Rows are `(subject, differences)` and must all
/// have the same number of phenotypes.
pub fn qc_outlier_filter(rows: &[(String, Vec<f64>)], k: f64) -> Result<QcOutcome> {
    let Some((_, first)) = rows.first() else {
        return Err(Error::Phenotype("empty cohort".into()));
    };
    if rows.len() < QC_MIN_SUBJECTS {
        return Err(Error::Phenotype(format!(
            "quality control needs at least {QC_MIN_SUBJECTS} subjects, got {}",
            rows.len()
        )));
    }
    let np = first.len();
    if rows.iter().any(|(_, v)| v.len() != np || v.iter().any(|x| !x.is_finite())) {
        return Err(Error::Phenotype("ragged or non-finite relative differences".into()));
    }
    let thresholds: Vec<f64> = (0..np)
        .map(|p| {
            let mut col: Vec<f64> = rows.iter().map(|(_, v)| v[p]).collect();
            col.sort_by(f64::total_cmp);
            let (q1, q3) = (quantile_sorted(&col, 0.25), quantile_sorted(&col, 0.75));
            q3 + k * (q3 - q1)
        })
        .collect();
    let excluded = rows
        .iter()
        .filter(|(_, v)| v.iter().zip(&thresholds).any(|(x, t)| x > t))
        .map(|(s, _)| s.clone())
        .collect();
    Ok(QcOutcome { thresholds, excluded })
}

/// Relative differences of the QC phenotypes, mesh against mask.
pub fn qc_differences(mask: &PhenotypeRecord, mesh: &PhenotypeRecord) -> Result<Vec<f64>> {
    mesh.qc_values()
        .iter()
        .zip(mask.qc_values())
        .map(|(a, b)| relative_difference(*a, b))
        .collect()
}

/// Phenotype table; `qc_pass` is empty for records that were not filtered.
pub fn write_phenotype_csv(path: &Path, rows: &[(PhenotypeRecord, Option<bool>)]) -> Result<()> {
    let csv_err = |e: csv::Error| Error::Format(e.to_string());
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "subject_id", "source", "lvedv_ml", "lvesv_ml", "rvedv_ml", "rvesv_ml", "lvm_g", "lvef_pct", "rvef_pct", "qc_pass",
    ])
    .map_err(csv_err)?;
    for (r, pass) in rows {
        let f = |x: f64| format!("{x:.4}");
        w.write_record([
            r.subject_id.clone(),
            r.source.name().into(),
            f(r.lvedv_ml),
            f(r.lvesv_ml),
            f(r.rvedv_ml),
            f(r.rvesv_ml),
            f(r.lvm_g),
            f(r.lvef_pct),
            f(r.rvef_pct),
            pass.map_or(String::new(), |p| p.to_string()),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
