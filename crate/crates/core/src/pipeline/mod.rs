//! Batch orchestration: per-subject stages in a worker pool, then quality
//! control and cohort stages after a barrier. Stages talk through files.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cohort::{
    bin_cohort, bland_altman, iterative_mean, mann_whitney_u, ols_regression, representative_mesh, Agreement,
    Demographics, RankTest, Regression, Sex,
};
use crate::contours::{extract_all, ContourSet};
use crate::error::{Error, Result};
use crate::fem::Region;
use crate::fields::{compute_fibers, compute_uvc};
use crate::frames::{lv_transient, select_ed, select_es_with};
use crate::labelgrid::nifti::read_nifti;
use crate::labelgrid::{View, ViewSet};
use crate::phenotypes::{
    mask_phenotypes, mesh_phenotypes, qc_differences, qc_outlier_filter, region_volume, write_phenotype_csv,
    PhenotypeRecord, QC_MIN_SUBJECTS, QC_PHENOTYPES,
};
use crate::surface::{extrude_rv_epicardium, fit_surface, mesh_volume, rigid_init, Cavity, SurfaceMesh, Template};
use crate::volmesh::{element_quality, harmonic_volumize, untangle_surface, Summary};

pub mod batch;
pub mod config;
pub mod export;

pub use config::{load_config, read_manifest, write_manifest, Config, ManifestRow};
pub use export::{export_mesh, load_text_mesh, vtk_point_scalars, ExportFormat};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailureCategory {
    MissingView,
    ContourFail,
    FitFail,
    VolumizeFail,
    QcExcluded,
}

/// Per-subject stages in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Views,
    Frames,
    Contours,
    Fit,
    Volumize,
    Fields,
    Phenotypes,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Views,
        Stage::Frames,
        Stage::Contours,
        Stage::Fit,
        Stage::Volumize,
        Stage::Fields,
        Stage::Phenotypes,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Views => "views",
            Stage::Frames => "frames",
            Stage::Contours => "contours",
            Stage::Fit => "fit",
            Stage::Volumize => "volumize",
            Stage::Fields => "fields",
            Stage::Phenotypes => "phenotypes",
        }
    }

    pub fn category(self) -> FailureCategory {
        match self {
            Stage::Views => FailureCategory::MissingView,
            Stage::Frames | Stage::Contours => FailureCategory::ContourFail,
            Stage::Fit => FailureCategory::FitFail,
            Stage::Volumize | Stage::Fields => FailureCategory::VolumizeFail,
            // without phenotypes the subject cannot be quality controlled
            Stage::Phenotypes => FailureCategory::QcExcluded,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub stage: Stage,
    pub category: FailureCategory,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectResult {
    pub subject_id: String,
    pub input_hash: String,
    pub completed: Vec<Stage>,
    pub failure: Option<Failure>,
    pub ed_frame: Option<usize>,
    pub es_frame: Option<usize>,
    pub fit_iterations: Vec<usize>,
    pub warnings: Vec<String>,
    pub aspect: Option<Summary>,
    pub fiber_fallback_elements: Option<usize>,
    pub mask: Option<PhenotypeRecord>,
    pub mesh: Option<PhenotypeRecord>,
}

impl SubjectResult {
    pub fn passed(&self, stage: Stage) -> bool {
        self.completed.contains(&stage)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StatusLine {
    pub subject_id: String,
    pub stage: String,
    pub ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub category: Option<FailureCategory>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

/// How far past the per-subject stages a run goes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Scope {
    Subjects,
    Qc,
    Cohort,
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    pub workers: usize,
    /// One worker, and output that depends only on the inputs.
    pub reference_mode: bool,
    /// Last per-subject stage to run.
    pub until: Stage,
    pub scope: Scope,
}

impl RunOptions {
    /// A full run with one worker per core.
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        RunOptions {
            out_dir: out_dir.into(),
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
            reference_mode: false,
            until: Stage::Phenotypes,
            scope: Scope::Cohort,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub attrition: Vec<(String, usize)>,
    pub subjects: Vec<SubjectResult>,
    pub reused_subjects: usize,
    pub bins: Vec<BinRow>,
    pub notes: Vec<String>,
}

pub fn subject_dir(out_dir: &Path, id: &str) -> PathBuf {
    out_dir.join("subjects").join(id)
}

/// Hash of everything a subject's artifacts depend on.
pub fn input_hash(row: &ManifestRow, cfg: &Config) -> String {
    let mut h = Sha256::new();
    h.update(env!("CARGO_PKG_VERSION").as_bytes());
    h.update(serde_json::to_vec(cfg).expect("config serializes"));
    h.update(row.subject_id.as_bytes());
    for (view, path) in row.paths() {
        h.update(view.name().as_bytes());
        match std::fs::read(path) {
            Ok(bytes) => {
                h.update((bytes.len() as u64).to_le_bytes());
                h.update(&bytes);
            }
            Err(e) => h.update(format!("unreadable {}: {e}", path.display()).as_bytes()),
        }
    }
    hex::encode(h.finalize())
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    s.push('\n');
    write(path, s)
}

pub fn load_views(row: &ManifestRow, cfg: &Config) -> Result<ViewSet> {
    let mut set = ViewSet::new(row.subject_id.clone());
    for (view, path) in row.paths() {
        set.insert(read_nifti(path, view, cfg.label_map(view))?)?;
    }
    Ok(set)
}

pub fn frame_contours(views: &ViewSet, frame: usize) -> Result<Vec<ContourSet>> {
    views.volumes.values().map(|v| extract_all(v, frame)).collect()
}

/// Rigid placement, fit and RV extrusion of the template for one frame.
pub fn fit_frame(sets: &[ContourSet], cfg: &Config) -> Result<(SurfaceMesh, usize, Vec<String>)> {
    let template = Template::standard();
    let (placed, _) = rigid_init(&template.surface, sets)?;
    let fit = fit_surface(&placed, sets, &cfg.fit())?;
    let mesh = extrude_rv_epicardium(&fit.mesh, cfg.rv_thickness_mm)?;
    let mut warnings = fit.warnings;
    let (mesh, rep) = untangle_surface(&template.volume, &mesh)?;
    if rep.moved_vertices > 0 {
        warnings.push(format!(
            "smoothed {} vertices to avoid inverted elements (max shift {:.2} mm)",
            rep.moved_vertices, rep.max_shift_mm
        ));
    }
    Ok((mesh, fit.iterations, warnings))
}

#[derive(Serialize)]
struct FramesArtifact<'a> {
    ed: usize,
    es: usize,
    lv_transient: &'a [f64],
}

/// Runs every per-subject stage, stopping at the first failure.
pub fn process_subject(row: &ManifestRow, cfg: &Config, dir: &Path, hash: String, until: Stage) -> SubjectResult {
    let mut res = SubjectResult {
        subject_id: row.subject_id.clone(),
        input_hash: hash,
        completed: Vec::new(),
        failure: None,
        ed_frame: None,
        es_frame: None,
        fit_iterations: Vec::new(),
        warnings: Vec::new(),
        aspect: None,
        fiber_fallback_elements: None,
        mask: None,
        mesh: None,
    };
    if let Err((stage, e)) = run_stages(row, cfg, dir, until, &mut res) {
        res.failure = Some(Failure {
            stage,
            category: stage.category(),
            message: e.to_string(),
        });
    }
    res
}

fn run_stages(
    row: &ManifestRow,
    cfg: &Config,
    dir: &Path,
    until: Stage,
    res: &mut SubjectResult,
) -> std::result::Result<(), (Stage, Error)> {
    let at = |s: Stage| move |e: Error| (s, e);
    std::fs::create_dir_all(dir).map_err(|e| (Stage::Views, Error::io(dir, e)))?;

    let views = load_views(row, cfg).map_err(at(Stage::Views))?;
    res.completed.push(Stage::Views);
    if until == Stage::Views {
        return Ok(());
    }

    let (ed, es) = (|| {
        let ed = select_ed(&views, cfg.ed_policy)?;
        let es = select_es_with(&views, cfg.es_normalization)?;
        let transient = lv_transient(&views, cfg.es_normalization)?;
        write_json(&dir.join("frames.json"), &FramesArtifact { ed, es, lv_transient: &transient })?;
        Ok((ed, es))
    })()
    .map_err(at(Stage::Frames))?;
    res.ed_frame = Some(ed);
    res.es_frame = Some(es);
    res.completed.push(Stage::Frames);
    if until == Stage::Frames {
        return Ok(());
    }

    let sets = (|| {
        let mut out = Vec::new();
        for (name, frame) in [("ed", ed), ("es", es)] {
            let s = frame_contours(&views, frame)?;
            write_json(&dir.join(format!("contours_{name}.json")), &s)?;
            out.push(s);
        }
        Ok(out)
    })()
    .map_err(at(Stage::Contours))?;
    res.completed.push(Stage::Contours);
    if until == Stage::Contours {
        return Ok(());
    }

    let surfaces = (|| {
        let mut out = Vec::new();
        for (name, s) in ["ed", "es"].iter().zip(&sets) {
            let (mesh, iters, warnings) = fit_frame(s, cfg)?;
            mesh.save_text(&dir.join(format!("surface_{name}.txt")))?;
            res.fit_iterations.push(iters);
            res.warnings.extend(warnings.into_iter().map(|w| format!("{name}: {w}")));
            out.push(mesh);
        }
        Ok(out)
    })()
    .map_err(at(Stage::Fit))?;
    res.completed.push(Stage::Fit);
    if until == Stage::Fit {
        return Ok(());
    }

    let template = Template::standard();
    let mut volume = harmonic_volumize(&template.volume, &surfaces[0]).map_err(at(Stage::Volumize))?;
    let q = element_quality(&volume);
    res.aspect = Some(q.aspect_summary);
    res.completed.push(Stage::Volumize);
    if until == Stage::Volumize {
        return Ok(());
    }

    (|| {
        let uvc = compute_uvc(&volume)?;
        let (frames, report) = compute_fibers(&volume, &uvc, &cfg.angles())?;
        volume.fibers = Some(frames);
        res.fiber_fallback_elements = Some(report.fallback_elements);
        let stem = dir.join("mesh");
        export_mesh(&volume, Some(&uvc), ExportFormat::TextTriple, &stem)?;
        export_mesh(&volume, Some(&uvc), ExportFormat::VtkLegacy, &stem)?;
        Ok(())
    })()
    .map_err(at(Stage::Fields))?;
    res.completed.push(Stage::Fields);
    if until == Stage::Fields {
        return Ok(());
    }

    (|| {
        let sax = views
            .get(View::Sax)
            .ok_or_else(|| Error::Phenotype("no SAX view".into()))?;
        let mask = mask_phenotypes(&row.subject_id, sax, ed, es, cfg.density)?;
        let mesh = mesh_phenotypes(&row.subject_id, &surfaces[0], &surfaces[1], &volume, cfg.density)?;
        write_json(&dir.join("phenotypes.json"), &[&mask, &mesh])?;
        res.mask = Some(mask);
        res.mesh = Some(mesh);
        Ok(())
    })()
    .map_err(at(Stage::Phenotypes))?;
    res.completed.push(Stage::Phenotypes);
    Ok(())
}

/// Reuses a stored result when its input hash matches, else reprocesses.
fn process_or_resume(row: &ManifestRow, cfg: &Config, out_dir: &Path, until: Stage) -> (SubjectResult, bool) {
    let dir = subject_dir(out_dir, &row.subject_id);
    let hash = input_hash(row, cfg);
    let stored = dir.join("result.json");
    if let Ok(text) = std::fs::read_to_string(&stored) {
        if let Ok(prev) = serde_json::from_str::<SubjectResult>(&text) {
            if prev.input_hash == hash && (prev.failure.is_some() || prev.passed(until)) {
                return (prev, true);
            }
        }
    }
    let res = process_subject(row, cfg, &dir, hash, until);
    // a result that cannot be stored is recomputed next time
    let _ = write_json(&stored, &res);
    (res, false)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinRow {
    pub sex: Sex,
    pub age_bin: i32,
    pub bmi_bin: i32,
    pub n_members: usize,
    pub emitted: bool,
    pub failure_reason: String,
}

#[derive(Debug, Clone, Serialize)]
struct RepresentativePhenotypes {
    bin: String,
    sex: Sex,
    age_bin: i32,
    bmi_bin: i32,
    lvedv_ml: f64,
    rvedv_ml: f64,
    lvm_g: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
struct Statistics {
    /// Mesh minus mask, per phenotype.
    agreement: BTreeMap<String, Agreement>,
    /// Mean signed `(mesh − mask) / mask` per phenotype, in percent.
    mean_relative_bias_pct: BTreeMap<String, f64>,
    qc_thresholds: BTreeMap<String, f64>,
    representatives: Vec<RepresentativePhenotypes>,
    regressions: BTreeMap<String, Regression>,
    sex_differences: BTreeMap<String, RankTest>,
    notes: Vec<String>,
}

fn phenotype_pairs(r: &PhenotypeRecord) -> [(&'static str, f64); 7] {
    [
        ("lvedv_ml", r.lvedv_ml),
        ("lvesv_ml", r.lvesv_ml),
        ("rvedv_ml", r.rvedv_ml),
        ("rvesv_ml", r.rvesv_ml),
        ("lvm_g", r.lvm_g),
        ("lvef_pct", r.lvef_pct),
        ("rvef_pct", r.rvef_pct),
    ]
}

pub fn bin_name(sex: Sex, age: i32, bmi: i32) -> String {
    format!("{sex}_{age}_{bmi}")
}

/// Runs the whole batch. Per-subject failures are recorded, never raised.
pub fn run_pipeline(
    rows: &[ManifestRow],
    demographics: Option<&[Demographics]>,
    cfg: &Config,
    opts: &RunOptions,
) -> Result<RunSummary> {
    cfg.validate()?;
    let out = &opts.out_dir;
    std::fs::create_dir_all(out.join("subjects")).map_err(|e| Error::io(out, e))?;
    let threads = if opts.reference_mode { 1 } else { opts.workers.max(1) };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    pool.install(|| {
        let results: Vec<(SubjectResult, bool)> = rows.par_iter().map(|r| process_or_resume(r, cfg, out, opts.until)).collect();
        let reused = results.iter().filter(|r| r.1).count();
        let subjects: Vec<SubjectResult> = results.into_iter().map(|r| r.0).collect();
        cohort_stage(subjects, reused, demographics, cfg, out, opts.scope)
    })
}

fn cohort_stage(
    subjects: Vec<SubjectResult>,
    reused: usize,
    demographics: Option<&[Demographics]>,
    cfg: &Config,
    out: &Path,
    scope: Scope,
) -> Result<RunSummary> {
    let mut status = Vec::new();
    for s in &subjects {
        for st in &s.completed {
            status.push(StatusLine {
                subject_id: s.subject_id.clone(),
                stage: st.name().into(),
                ok: true,
                category: None,
                message: None,
            });
        }
        if let Some(f) = &s.failure {
            status.push(StatusLine {
                subject_id: s.subject_id.clone(),
                stage: f.stage.name().into(),
                ok: false,
                category: Some(f.category),
                message: Some(f.message.clone()),
            });
        }
    }
    let mut stats = Statistics::default();
    let mut notes = Vec::new();

    // quality control
    let mut qc_rows = Vec::new();
    let mut qc_failed = BTreeMap::new();
    for s in &subjects {
        if let (Some(mask), Some(mesh)) = (&s.mask, &s.mesh) {
            match qc_differences(mask, mesh) {
                Ok(d) => qc_rows.push((s.subject_id.clone(), d)),
                Err(e) => {
                    qc_failed.insert(s.subject_id.clone(), e.to_string());
                }
            }
        }
    }
    if scope < Scope::Qc {
        qc_rows.clear();
        qc_failed.clear();
    }
    let excluded: BTreeSet<String> = if qc_rows.len() >= QC_MIN_SUBJECTS {
        let q = qc_outlier_filter(&qc_rows, cfg.qc_k)?;
        for (name, t) in QC_PHENOTYPES.iter().zip(&q.thresholds) {
            stats.qc_thresholds.insert(name.to_string(), *t);
        }
        q.excluded
    } else {
        if !qc_rows.is_empty() {
            notes.push(format!(
                "quality control skipped: {} subjects with phenotypes, {QC_MIN_SUBJECTS} needed",
                qc_rows.len()
            ));
        }
        BTreeSet::new()
    };
    let mut passed = Vec::new();
    for s in &subjects {
        let failure = if let Some(why) = qc_failed.get(&s.subject_id) {
            Some(why.clone())
        } else if excluded.contains(&s.subject_id) {
            Some("relative difference above the outlier threshold".to_string())
        } else {
            None
        };
        if !s.passed(Stage::Phenotypes) || scope < Scope::Qc {
            continue;
        }
        status.push(StatusLine {
            subject_id: s.subject_id.clone(),
            stage: "qc".into(),
            ok: failure.is_none(),
            category: failure.as_ref().map(|_| FailureCategory::QcExcluded),
            message: failure.clone(),
        });
        if failure.is_none() {
            passed.push(s);
        }
    }

    // mesh against mask agreement over every subject with both
    let both: Vec<_> = subjects.iter().filter_map(|s| Some((s.mask.as_ref()?, s.mesh.as_ref()?))).collect();
    if both.len() >= 2 {
        for k in 0..7 {
            let name = phenotype_pairs(both[0].0)[k].0;
            let mask: Vec<f64> = both.iter().map(|(a, _)| phenotype_pairs(a)[k].1).collect();
            let mesh: Vec<f64> = both.iter().map(|(_, b)| phenotype_pairs(b)[k].1).collect();
            stats.agreement.insert(name.into(), bland_altman(&mesh, &mask)?);
            let rel = mesh.iter().zip(&mask).map(|(a, b)| (a - b) / b).sum::<f64>() / mask.len() as f64;
            stats.mean_relative_bias_pct.insert(name.into(), 100.0 * rel);
        }
    }

    // binning
    let demographics = demographics.filter(|_| scope == Scope::Cohort);
    let demo: BTreeMap<&str, &Demographics> = demographics
        .unwrap_or_default()
        .iter()
        .map(|d| (d.subject_id.as_str(), d))
        .collect();
    if demographics.is_none() && scope == Scope::Cohort {
        notes.push("no demographics: cohort stage skipped".into());
    }
    let with_demo: Vec<Demographics> = passed
        .iter()
        .filter_map(|s| demo.get(s.subject_id.as_str()).map(|d| (*d).clone()))
        .collect();
    let (bins, out_of_range) = bin_cohort(&with_demo, &cfg.bins());
    for (id, why) in &out_of_range {
        notes.push(format!("{id} not binned: {why}"));
    }
    let binned = with_demo.len() - out_of_range.len();
    let eligible: Vec<_> = bins.iter().filter(|b| b.members.len() >= cfg.min_bin_members).collect();
    let in_eligible: usize = eligible.iter().map(|b| b.members.len()).sum();

    // cohort-wide reference over every QC-passed surface
    let template = Template::standard();
    let cohort_dir = out.join("cohort");
    let mut surfaces = BTreeMap::new();
    let mut reference = None;
    if !eligible.is_empty() {
        std::fs::create_dir_all(&cohort_dir).map_err(|e| Error::io(&cohort_dir, e))?;
        for s in &passed {
            let p = subject_dir(out, &s.subject_id).join("surface_ed.txt");
            surfaces.insert(s.subject_id.clone(), SurfaceMesh::load_text(&p, Some(&template.surface))?);
        }
        let all: Vec<SurfaceMesh> = passed.iter().map(|s| surfaces[&s.subject_id].clone()).collect();
        match iterative_mean(&all, cfg.procrustes_tol, cfg.procrustes_scaling) {
            Ok(m) => {
                m.reference.save_text(&cohort_dir.join("reference_surface.txt"))?;
                notes.push(format!("reference mesh converged in {} iterations", m.iterations));
                reference = Some(m.reference);
            }
            Err(e) => notes.push(format!("no cohort reference: {e}")),
        }
    }

    let outcomes: Vec<(BinRow, Option<RepresentativePhenotypes>)> = bins
        .par_iter()
        .map(|b| {
            let mut row = BinRow {
                sex: b.key.sex,
                age_bin: b.key.age_bin,
                bmi_bin: b.key.bmi_bin,
                n_members: b.members.len(),
                emitted: false,
                failure_reason: String::new(),
            };
            if b.members.len() < cfg.min_bin_members {
                row.failure_reason = format!("fewer than {} members", cfg.min_bin_members);
                return (row, None);
            }
            let Some(reference) = &reference else {
                row.failure_reason = "no cohort reference".into();
                return (row, None);
            };
            let name = bin_name(b.key.sex, b.key.age_bin, b.key.bmi_bin);
            let members: Vec<SurfaceMesh> = b.members.iter().map(|m| surfaces[m].clone()).collect();
            let made = representative_mesh(&members, reference, &template.volume, &cfg.angles(), cfg.procrustes_scaling)
                .and_then(|rep| {
                    let stem = cohort_dir.join(&name);
                    rep.surface.save_text(&stem.with_extension("surface.txt"))?;
                    export_mesh(&rep.volume, Some(&rep.uvc), ExportFormat::TextTriple, &stem)?;
                    export_mesh(&rep.volume, Some(&rep.uvc), ExportFormat::VtkLegacy, &stem)?;
                    Ok(RepresentativePhenotypes {
                        bin: name,
                        sex: b.key.sex,
                        age_bin: b.key.age_bin,
                        bmi_bin: b.key.bmi_bin,
                        lvedv_ml: mesh_volume(&rep.surface, Cavity::Lv)?,
                        rvedv_ml: mesh_volume(&rep.surface, Cavity::Rv)?,
                        lvm_g: region_volume(&rep.volume, &[Region::LvMyo]) * cfg.density,
                    })
                });
            match made {
                Ok(p) => {
                    row.emitted = true;
                    (row, Some(p))
                }
                Err(e) => {
                    row.failure_reason = e.to_string();
                    (row, None)
                }
            }
        })
        .collect();
    let bin_rows: Vec<BinRow> = outcomes.iter().map(|o| o.0.clone()).collect();
    stats.representatives = outcomes.into_iter().filter_map(|o| o.1).collect();
    let n_reps = stats.representatives.len();

    // population statistics over representatives
    let reps = &stats.representatives;
    let pick = |f: fn(&RepresentativePhenotypes) -> f64| reps.iter().map(f).collect::<Vec<f64>>();
    let phen: [(&str, Vec<f64>); 3] = [
        ("lvedv_ml", pick(|r| r.lvedv_ml)),
        ("rvedv_ml", pick(|r| r.rvedv_ml)),
        ("lvm_g", pick(|r| r.lvm_g)),
    ];
    let covariates = [("age", pick(|r| r.age_bin as f64)), ("bmi", pick(|r| r.bmi_bin as f64))];
    for (pname, y) in &phen {
        for (cname, x) in &covariates {
            if let Ok(r) = ols_regression(x, y) {
                stats.regressions.insert(format!("{pname}~{cname}"), r);
            }
        }
        let by = |sex: Sex| reps.iter().zip(y).filter(|(r, _)| r.sex == sex).map(|(_, v)| *v).collect::<Vec<_>>();
        if let Ok(t) = mann_whitney_u(&by(Sex::F), &by(Sex::M)) {
            stats.sex_differences.insert(pname.to_string(), t);
        }
    }
    stats.notes = notes.clone();

    let count = |st: Stage| subjects.iter().filter(|s| s.passed(st)).count();
    let mut attrition = vec![("manifest".to_string(), subjects.len())];
    attrition.extend(Stage::ALL.iter().map(|s| (s.name().to_string(), count(*s))));
    attrition.push(("qc_passed".into(), passed.len()));
    attrition.push(("binned".into(), binned));
    attrition.push(("in_eligible_bins".into(), in_eligible));
    attrition.push(("representative_meshes".into(), n_reps));

    // reports
    let mut lines = String::new();
    for s in &status {
        lines.push_str(&serde_json::to_string(s).map_err(|e| Error::Format(e.to_string()))?);
        lines.push('\n');
    }
    write(&out.join("status.jsonl"), lines)?;
    let mut table = String::from("stage,count\n");
    for (s, n) in &attrition {
        table.push_str(&format!("{s},{n}\n"));
    }
    write(&out.join("attrition.csv"), table)?;
    let excluded_all: BTreeSet<&str> = excluded.iter().map(String::as_str).chain(qc_failed.keys().map(String::as_str)).collect();
    let mut prow = Vec::new();
    for s in &subjects {
        let pass = (s.passed(Stage::Phenotypes) && scope >= Scope::Qc).then(|| !excluded_all.contains(s.subject_id.as_str()));
        for r in [&s.mask, &s.mesh].into_iter().flatten() {
            prow.push((r.clone(), pass));
        }
    }
    write_phenotype_csv(&out.join("phenotypes.csv"), &prow)?;
    let mut bins_csv = csv::Writer::from_writer(Vec::new());
    bins_csv
        .write_record(["sex", "age_bin", "bmi_bin", "n_members", "emitted", "failure_reason"])
        .map_err(|e| Error::Format(e.to_string()))?;
    for b in &bin_rows {
        bins_csv
            .write_record([
                b.sex.to_string(),
                b.age_bin.to_string(),
                b.bmi_bin.to_string(),
                b.n_members.to_string(),
                b.emitted.to_string(),
                b.failure_reason.clone(),
            ])
            .map_err(|e| Error::Format(e.to_string()))?;
    }
    write(&out.join("bins.csv"), bins_csv.into_inner().map_err(|e| Error::Format(e.to_string()))?)?;
    write_json(&out.join("statistics.json"), &stats)?;

    Ok(RunSummary {
        attrition,
        subjects,
        reused_subjects: reused,
        bins: bin_rows,
        notes,
    })
}

/// Attrition table as aligned text.
pub fn format_attrition(rows: &[(String, usize)]) -> String {
    let w = rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
    rows.iter().map(|(s, n)| format!("{s:<w$}  {n}\n")).collect()
}
