//! Synthetic batches: phantom NIFTI files, a manifest and demographics.

use std::path::{Path, PathBuf};

use crate::cohort::{Demographics, Sex};
use crate::error::{Error, Result};
use crate::labelgrid::nifti::write_nifti;
use crate::labelgrid::phantom::{synth_phantom, PhantomSpec, PhantomTruth};
use crate::labelgrid::View;

use super::config::{write_manifest, ManifestRow};

pub struct Batch {
    pub manifest: PathBuf,
    pub demographics: PathBuf,
    pub rows: Vec<ManifestRow>,
    pub truth: Vec<PhantomTruth>,
}

/// Demographics for member `k` of a batch: the first four share a female
/// bin, the next three a male bin, and the rest are spread out.
pub fn phantom_demographics(k: usize) -> Demographics {
    let (sex, age, bmi) = match k {
        0..=3 => (Sex::F, 52.1 + 0.2 * k as f64, 24.3 + 0.1 * k as f64),
        4..=6 => (Sex::M, 61.4 + 0.15 * k as f64, 27.05 + 0.1 * k as f64),
        7 => (Sex::F, 88.0, 22.0),
        _ => (if k % 2 == 0 { Sex::M } else { Sex::F }, 45.0 + 3.0 * k as f64, 18.0 + k as f64),
    };
    Demographics {
        subject_id: PhantomSpec::variant(k).subject_id,
        sex,
        age_years: age,
        bmi_kg_m2: bmi,
    }
}

fn view_file(view: View) -> &'static str {
    match view {
        View::Lax2ch => "lax_2ch.nii",
        View::Lax3ch => "lax_3ch.nii",
        View::Lax4ch => "lax_4ch.nii",
        View::Sax => "sax.nii",
    }
}

/// Writes phantoms `0..n` of [`PhantomSpec::variant`] under `dir`.
pub fn write_phantom_batch(dir: &Path, n: usize) -> Result<Batch> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut rows = Vec::new();
    let mut truth = Vec::new();
    for k in 0..n {
        let spec = PhantomSpec::variant(k);
        let (views, t) = synth_phantom(&spec)?;
        let sub = dir.join(&spec.subject_id);
        std::fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
        for (view, vol) in &views.volumes {
            write_nifti(sub.join(view_file(*view)), vol)?;
        }
        let rel = |v: View| PathBuf::from(&spec.subject_id).join(view_file(v));
        rows.push(ManifestRow {
            subject_id: spec.subject_id.clone(),
            path_2ch: rel(View::Lax2ch),
            path_3ch: rel(View::Lax3ch),
            path_4ch: rel(View::Lax4ch),
            path_sax: rel(View::Sax),
        });
        truth.push(t);
    }
    let manifest = dir.join("manifest.csv");
    write_manifest(&manifest, &rows)?;
    let demographics = dir.join("demographics.csv");
    let mut w = csv::Writer::from_path(&demographics).map_err(|e| Error::Manifest(e.to_string()))?;
    for k in 0..n {
        w.serialize(phantom_demographics(k)).map_err(|e| Error::Manifest(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(&demographics, e))?;
    let rows = super::config::read_manifest(&manifest)?;
    Ok(Batch {
        manifest,
        demographics,
        rows,
        truth,
    })
}
