use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;

use bivmesh::cohort::read_demographics;
use bivmesh::labelgrid::nifti::{read_nifti, write_nifti};
use bivmesh::labelgrid::{LabelMap, View};
use bivmesh::pipeline::batch::{write_phantom_batch, Batch};
use bivmesh::pipeline::{run_pipeline, Config, FailureCategory, ManifestRow, RunOptions, Scope, Stage};
use bivmesh::surface::{SurfaceMesh, Template};

struct Shared {
    _dir: tempfile::TempDir,
    batch: Batch,
}

fn batch() -> &'static Batch {
    static B: OnceLock<Shared> = OnceLock::new();
    &B.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let batch = write_phantom_batch(&dir.path().join("inputs"), 10).unwrap();
        Shared { _dir: dir, batch }
    })
    .batch
}

fn opts(out: &Path) -> RunOptions {
    let mut o = RunOptions::new(out);
    o.workers = 4;
    o
}

fn monotone(rows: &[(String, usize)]) -> bool {
    rows.windows(2).all(|w| w[1].1 <= w[0].1)
}

#[test]
fn ten_phantoms_complete_every_stage() {
    let b = batch();
    let out = tempfile::tempdir().unwrap();
    let demo = read_demographics(&b.demographics).unwrap();
    let s = run_pipeline(&b.rows, Some(&demo), &Config::default(), &opts(out.path())).unwrap();
    for (stage, n) in &s.attrition[..8] {
        assert_eq!(*n, 10, "{stage}");
    }
    assert!(monotone(&s.attrition), "{:?}", s.attrition);
    for id in b.rows.iter().map(|r| &r.subject_id) {
        let dir = out.path().join("subjects").join(id);
        for f in ["mesh.pts", "mesh.elem", "mesh.lon", "mesh.vtk", "surface_ed.txt", "surface_es.txt", "phenotypes.json"] {
            assert!(dir.join(f).exists(), "{id}/{f}");
        }
    }
    // every emitted representative comes from a bin with at least three members
    assert!(s.bins.iter().any(|b| b.emitted));
    for bin in &s.bins {
        assert_eq!(bin.emitted, bin.n_members >= 3, "{bin:?}");
    }
    let status = std::fs::read_to_string(out.path().join("status.jsonl")).unwrap();
    assert_eq!(status.lines().filter(|l| l.contains("\"ok\":false")).count(), 0);
    for f in ["attrition.csv", "phenotypes.csv", "bins.csv", "statistics.json"] {
        assert!(out.path().join(f).exists(), "{f}");
    }
}

fn rows_with(edit: impl Fn(&mut ManifestRow, &Path), scratch: &Path) -> Vec<ManifestRow> {
    let mut rows = batch().rows.clone();
    edit(&mut rows[3], scratch);
    rows
}

#[test]
fn one_unreadable_file_is_isolated() {
    let scratch = tempfile::tempdir().unwrap();
    let rows = rows_with(
        |r, dir| {
            let bad = dir.join("broken.nii");
            std::fs::write(&bad, b"not a nifti file").unwrap();
            r.path_3ch = bad;
        },
        scratch.path(),
    );
    let out = tempfile::tempdir().unwrap();
    let mut o = opts(out.path());
    o.scope = Scope::Qc;
    let s = run_pipeline(&rows, None, &Config::default(), &o).unwrap();
    let failed: Vec<_> = s.subjects.iter().filter(|r| r.failure.is_some()).collect();
    assert_eq!(failed.len(), 1);
    let f = failed[0].failure.as_ref().unwrap();
    assert_eq!(failed[0].subject_id, rows[3].subject_id);
    assert_eq!((f.stage, f.category), (Stage::Views, FailureCategory::MissingView));
    assert_eq!(s.attrition[0].1, 10);
    assert_eq!(s.attrition.iter().find(|r| r.0 == "phenotypes").unwrap().1, 9);
    assert!(monotone(&s.attrition));
}

#[test]
fn view_without_labels_is_a_contour_failure() {
    let scratch = tempfile::tempdir().unwrap();
    let rows = rows_with(
        |r, dir| {
            let mut v = read_nifti(&r.path_4ch, View::Lax4ch, LabelMap::standard(View::Lax4ch)).unwrap();
            v.data.fill(0);
            let p = dir.join("empty_4ch.nii");
            write_nifti(&p, &v).unwrap();
            r.path_4ch = p;
        },
        scratch.path(),
    );
    let out = tempfile::tempdir().unwrap();
    let mut o = opts(out.path());
    o.until = Stage::Contours;
    o.scope = Scope::Subjects;
    let s = run_pipeline(&rows[3..4], None, &Config::default(), &o).unwrap();
    let f = s.subjects[0].failure.as_ref().expect("failure");
    assert_eq!(f.category, FailureCategory::ContourFail, "{f:?}");
}

#[test]
fn empty_manifest_gives_an_empty_summary() {
    let out = tempfile::tempdir().unwrap();
    let s = run_pipeline(&[], None, &Config::default(), &opts(out.path())).unwrap();
    assert!(s.subjects.is_empty() && s.bins.is_empty());
    assert!(s.attrition.iter().all(|r| r.1 == 0));
    assert_eq!(std::fs::read_to_string(out.path().join("attrition.csv")).unwrap().lines().count(), 1 + s.attrition.len());
}

fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn second_run_reuses_stored_results() {
    let rows = &batch().rows[..3];
    let out = tempfile::tempdir().unwrap();
    let first = run_pipeline(rows, None, &Config::default(), &opts(out.path())).unwrap();
    assert_eq!(first.reused_subjects, 0);
    let before = tree(out.path());
    let again = run_pipeline(rows, None, &Config::default(), &opts(out.path())).unwrap();
    assert_eq!(again.reused_subjects, 3);
    let after = tree(out.path());
    let changed: Vec<_> = before.iter().zip(&after).filter(|(a, b)| a != b).map(|(a, _)| &a.0).collect();
    assert_eq!(before.len(), after.len());
    assert!(changed.is_empty(), "{changed:?}");
    // a changed config invalidates the stored results
    let cfg = Config {
        density: 1.06,
        ..Config::default()
    };
    assert_eq!(run_pipeline(rows, None, &cfg, &opts(out.path())).unwrap().reused_subjects, 0);
}

#[test]
fn partial_run_is_completed_by_a_later_full_run() {
    let rows = &batch().rows[..2];
    let out = tempfile::tempdir().unwrap();
    let mut o = opts(out.path());
    o.until = Stage::Fit;
    o.scope = Scope::Subjects;
    let s = run_pipeline(rows, None, &Config::default(), &o).unwrap();
    assert!(s.subjects.iter().all(|r| r.passed(Stage::Fit) && !r.passed(Stage::Volumize)));
    let full = run_pipeline(rows, None, &Config::default(), &opts(out.path())).unwrap();
    assert_eq!(full.reused_subjects, 0);
    assert!(full.subjects.iter().all(|r| r.passed(Stage::Phenotypes)));
}

#[test]
fn rv_thickness_reaches_the_extruded_wall() {
    let rows = &batch().rows[..1];
    for t in [2.0, 4.5] {
        let out = tempfile::tempdir().unwrap();
        let cfg = Config {
            rv_thickness_mm: t,
            ..Config::default()
        };
        let mut o = opts(out.path());
        o.until = Stage::Fit;
        o.scope = Scope::Subjects;
        run_pipeline(rows, None, &cfg, &o).unwrap();
        let surf = SurfaceMesh::load_text(&out.path().join("subjects").join(&rows[0].subject_id).join("surface_ed.txt"), Some(&Template::standard().surface)).unwrap();
        let d: Vec<f64> = surf.rv_epi_pairs.iter().map(|(a, b)| (surf.vertices[*a] - surf.vertices[*b]).norm()).collect();
        let mut sorted = d.clone();
        sorted.sort_by(f64::total_cmp);
        // untangling may move a few pairs; the median wall stays at the setting
        let median = sorted[sorted.len() / 2];
        assert!((median - t).abs() < 1e-6, "{t}: median {median}");
    }
}

#[test]
fn command_line_stages_and_export() {
    let b = batch();
    let out = tempfile::tempdir().unwrap();
    let exe = env!("CARGO_BIN_EXE_bivmesh");
    let run = |args: &[&str]| {
        let o = Command::new(exe).args(args).output().unwrap();
        (o.status.success(), String::from_utf8_lossy(&o.stdout).into_owned(), String::from_utf8_lossy(&o.stderr).into_owned())
    };
    let manifest = b.manifest.to_str().unwrap();
    let out_dir = out.path().to_str().unwrap();
    let sub = b.rows[0].subject_id.clone();

    let (ok, stdout, err) = run(&["fields", "--manifest", manifest, "--out-dir", out_dir, "--workers", "4"]);
    assert!(ok, "{err}");
    assert!(stdout.lines().any(|l| l.starts_with("fields") && l.ends_with(" 10")), "{stdout}");
    let stem = out.path().join("subjects").join(&sub).join("mesh");
    let target = out.path().join("exported");
    let (ok, stdout, err) = run(&[
        "export",
        "--mesh",
        stem.to_str().unwrap(),
        "--format",
        "vtk-legacy",
        "--out",
        target.to_str().unwrap(),
    ]);
    assert!(ok, "{err}");
    assert_eq!(stdout.trim(), target.with_extension("vtk").to_str().unwrap());
    // coordinates are recomputed from the six-decimal text mesh, so values
    // may differ in the last printed digit
    let exported = std::fs::read_to_string(target.with_extension("vtk")).unwrap();
    let stored = std::fs::read_to_string(stem.with_extension("vtk")).unwrap();
    let (a, b): (Vec<&str>, Vec<&str>) = (exported.split_whitespace().collect(), stored.split_whitespace().collect());
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(&b) {
        match (x.parse::<f64>(), y.parse::<f64>()) {
            // phi may land on either side of its cut
            (Ok(u), Ok(v)) => {
                let d = (u - v).abs();
                assert!(d <= 1e-5 || (d - std::f64::consts::TAU).abs() <= 1e-5, "{x} vs {y}")
            }
            _ => assert_eq!(x, y),
        }
    }

    let cfg = out.path().join("bad.json");
    std::fs::write(&cfg, r#"{"rv_thickness": 3}"#).unwrap();
    let (ok, _, err) = run(&["run", "--manifest", manifest, "--out-dir", out_dir, "--config", cfg.to_str().unwrap()]);
    assert!(!ok);
    assert!(err.contains("rv_thickness"), "{err}");
}
