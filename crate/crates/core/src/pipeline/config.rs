use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cohort::{BinRanges, MIN_BIN_MEMBERS, PROCRUSTES_TOL};
use crate::error::{Error, Result};
use crate::fields::FiberAngles;
use crate::frames::EdPolicy;
use crate::labelgrid::{LabelMap, View};
use crate::phenotypes::{MYOCARDIAL_DENSITY, QC_IQR_MULTIPLIER};
use crate::surface::FitConfig;

/// Every tunable of a batch run. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub rv_thickness_mm: f64,
    /// Helix angle at the endocardium and epicardium (degrees).
    pub alpha: [f64; 2],
    /// Transverse angle at the endocardium and epicardium (degrees).
    pub beta: [f64; 2],
    pub density: f64,
    pub procrustes_tol: f64,
    pub procrustes_scaling: bool,
    pub qc_k: f64,
    pub age_bins: [i32; 2],
    pub bmi_bins: [i32; 2],
    pub min_bin_members: usize,
    pub lambda_smooth: f64,
    pub fit_iterations: usize,
    pub es_normalization: bool,
    pub ed_policy: EdPolicy,
    /// Label codes per view; views not listed use the standard codes.
    pub label_maps: BTreeMap<View, LabelMap>,
}

impl Default for Config {
    fn default() -> Self {
        let fit = FitConfig::default();
        let angles = FiberAngles::default();
        let bins = BinRanges::default();
        Config {
            rv_thickness_mm: 3.0,
            alpha: [angles.alpha_endo, angles.alpha_epi],
            beta: [angles.beta_endo, angles.beta_epi],
            density: MYOCARDIAL_DENSITY,
            procrustes_tol: PROCRUSTES_TOL,
            procrustes_scaling: false,
            qc_k: QC_IQR_MULTIPLIER,
            age_bins: [bins.age.0, bins.age.1],
            bmi_bins: [bins.bmi.0, bins.bmi.1],
            min_bin_members: MIN_BIN_MEMBERS,
            lambda_smooth: fit.lambda_smooth,
            fit_iterations: fit.max_iters,
            es_normalization: false,
            ed_policy: EdPolicy::FirstFrame,
            label_maps: BTreeMap::new(),
        }
    }
}

impl Config {
    pub fn from_json(text: &str) -> Result<Config> {
        let cfg: Config = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, what: &str| if ok { Ok(()) } else { Err(Error::Config(what.to_string())) };
        check(self.rv_thickness_mm >= 0.0 && self.rv_thickness_mm.is_finite(), "rv_thickness_mm must be non-negative")?;
        check(self.density > 0.0, "density must be positive")?;
        check(self.procrustes_tol > 0.0, "procrustes_tol must be positive")?;
        check(self.qc_k >= 0.0, "qc_k must be non-negative")?;
        check(self.age_bins[0] <= self.age_bins[1], "age_bins must be [first, last]")?;
        check(self.bmi_bins[0] <= self.bmi_bins[1], "bmi_bins must be [first, last]")?;
        check(self.min_bin_members >= MIN_BIN_MEMBERS, "min_bin_members is below 3")?;
        check(self.lambda_smooth >= 0.0, "lambda_smooth must be non-negative")?;
        check(self.fit_iterations > 0, "fit_iterations must be positive")?;
        check(
            self.alpha.iter().chain(&self.beta).all(|a| a.is_finite()),
            "fiber angles must be finite",
        )
    }

    pub fn angles(&self) -> FiberAngles {
        FiberAngles {
            alpha_endo: self.alpha[0],
            alpha_epi: self.alpha[1],
            beta_endo: self.beta[0],
            beta_epi: self.beta[1],
        }
    }

    pub fn fit(&self) -> FitConfig {
        FitConfig {
            lambda_smooth: self.lambda_smooth,
            max_iters: self.fit_iterations,
            ..FitConfig::default()
        }
    }

    pub fn bins(&self) -> BinRanges {
        BinRanges {
            age: (self.age_bins[0], self.age_bins[1]),
            bmi: (self.bmi_bins[0], self.bmi_bins[1]),
        }
    }

    pub fn label_map(&self, view: View) -> LabelMap {
        self.label_maps.get(&view).cloned().unwrap_or_else(|| LabelMap::standard(view))
    }
}

pub fn load_config(path: &Path) -> Result<Config> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Config::from_json(&text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRow {
    pub subject_id: String,
    pub path_2ch: PathBuf,
    pub path_3ch: PathBuf,
    pub path_4ch: PathBuf,
    pub path_sax: PathBuf,
}

impl ManifestRow {
    pub fn paths(&self) -> [(View, &Path); 4] {
        [
            (View::Lax2ch, &self.path_2ch),
            (View::Lax3ch, &self.path_3ch),
            (View::Lax4ch, &self.path_4ch),
            (View::Sax, &self.path_sax),
        ]
    }
}

/// Reads the manifest; relative paths are taken from the manifest's folder.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let base = path.parent().unwrap_or(Path::new("."));
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
    let mut rows: Vec<ManifestRow> = r
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
    let mut seen = std::collections::BTreeSet::new();
    for row in &mut rows {
        if row.subject_id.is_empty() || row.subject_id.contains(['/', '\\']) || !seen.insert(row.subject_id.clone()) {
            return Err(Error::Manifest(format!("bad or duplicate subject id {:?}", row.subject_id)));
        }
        for p in [&mut row.path_2ch, &mut row.path_3ch, &mut row.path_4ch, &mut row.path_sax] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
    Ok(rows)
}

pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<()> {
    let err = |e: csv::Error| Error::Manifest(e.to_string());
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    for r in rows {
        w.serialize(r).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let c = Config::from_json("{}").unwrap();
        assert_eq!(c, Config::default());
        assert_eq!(c.rv_thickness_mm, 3.0);
        assert_eq!(c.alpha, [60.0, -60.0]);
        assert_eq!(c.beta, [-65.0, 25.0]);
        assert_eq!(c.density, 1.05);
        assert_eq!(c.procrustes_tol, 1e-6);
        assert_eq!(c.qc_k, 1.5);
        assert_eq!((c.age_bins[0], c.bmi_bins[0]), (44, 15));
        assert_eq!(c.min_bin_members, 3);
        assert_eq!(c.lambda_smooth, 1.0);
        assert_eq!(c.fit_iterations, 20);
        assert!(!c.es_normalization);
    }

    #[test]
    fn strict_keys_and_types() {
        let e = Config::from_json(r#"{"rv_thicknes": 2.5}"#).unwrap_err().to_string();
        assert!(e.contains("rv_thicknes"), "{e}");
        assert!(Config::from_json(r#"{"rv_thickness_mm": "thick"}"#).is_err());
        assert!(Config::from_json(r#"{"rv_thickness_mm": -1}"#).is_err());
        assert_eq!(Config::from_json(r#"{"rv_thickness_mm": 2.5}"#).unwrap().rv_thickness_mm, 2.5);
    }
}
