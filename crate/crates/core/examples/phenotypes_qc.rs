//! Mask and mesh phenotypes for a handful of phantoms, followed by the
//! outlier filter on their relative differences.

use bivmesh::labelgrid::phantom::{synth_phantom, PhantomSpec};
use bivmesh::labelgrid::View;
use bivmesh::phenotypes::{mask_phenotypes, mesh_phenotypes, qc_differences, qc_outlier_filter, QC_PHENOTYPES};
use bivmesh::pipeline::{fit_frame, frame_contours, Config};
use bivmesh::surface::Template;
use bivmesh::volmesh::harmonic_volumize;

fn main() -> bivmesh::Result<()> {
    let cfg = Config::default();
    let template = Template::standard();
    let mut rows = Vec::new();
    for k in 0..6 {
        let spec = PhantomSpec::variant(k);
        let (views, _) = synth_phantom(&spec)?;
        let (ed, es) = (0, 2);
        let sax = views.get(View::Sax).expect("phantoms have a SAX view");
        let mask = mask_phenotypes(&spec.subject_id, sax, ed, es, cfg.density)?;
        let fit = |frame| -> bivmesh::Result<_> {
            let (s, _, _) = fit_frame(&frame_contours(&views, frame)?, &cfg)?;
            Ok(s)
        };
        let (s_ed, s_es) = (fit(ed)?, fit(es)?);
        // fitted surfaces come back already smoothed where they would invert
        let vol = harmonic_volumize(&template.volume, &s_ed)?;
        let mesh = mesh_phenotypes(&spec.subject_id, &s_ed, &s_es, &vol, cfg.density)?;
        println!(
            "{}: LVEDV mask {:.1} mesh {:.1}, LVEF mask {:.1}% mesh {:.1}%, LVM mask {:.1} g mesh {:.1} g",
            spec.subject_id, mask.lvedv_ml, mesh.lvedv_ml, mask.lvef_pct, mesh.lvef_pct, mask.lvm_g, mesh.lvm_g
        );
        rows.push((spec.subject_id.clone(), qc_differences(&mask, &mesh)?));
    }
    let qc = qc_outlier_filter(&rows, cfg.qc_k)?;
    for (name, t) in QC_PHENOTYPES.iter().zip(&qc.thresholds) {
        println!("threshold {name:9} {t:.4}");
    }
    println!("excluded: {:?}", qc.excluded);
    Ok(())
}
