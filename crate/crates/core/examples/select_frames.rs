//! End-diastolic and end-systolic frames of a phantom with a prescribed
//! LV volume transient.

use bivmesh::frames::{lv_transient, select_ed, select_es, select_es_with, EdPolicy};
use bivmesh::labelgrid::phantom::{synth_phantom, PhantomSpec};

fn main() -> bivmesh::Result<()> {
    let spec = PhantomSpec {
        volume_transient: vec![1.0, 0.85, 0.66, 0.62, 0.7, 0.9],
        ..PhantomSpec::default()
    };
    let (views, truth) = synth_phantom(&spec)?;
    let counts = lv_transient(&views, false)?;
    for (t, (c, v)) in counts.iter().zip(&truth.lv_cavity_ml).enumerate() {
        println!("frame {t}: {c:6.0} LV voxels, analytic {v:.1} mL");
    }
    println!("ED (first frame) {}", select_ed(&views, EdPolicy::FirstFrame)?);
    println!("ED (largest LV)  {}", select_ed(&views, EdPolicy::MaxLv)?);
    println!("ES               {}", select_es(&views)?);
    println!("ES, normalised   {}", select_es_with(&views, true)?);
    Ok(())
}
