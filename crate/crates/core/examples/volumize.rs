//! Fits a phantom, extends the fitted surface into the template volume and
//! compares cavity and myocardial volumes.

use bivmesh::fem::Region;
use bivmesh::labelgrid::phantom::{synth_phantom, PhantomSpec};
use bivmesh::phenotypes::region_volume;
use bivmesh::pipeline::{fit_frame, frame_contours, Config};
use bivmesh::surface::{mesh_volume, Cavity, Template};
use bivmesh::volmesh::{boundary_volume, element_quality, harmonic_volumize};

fn main() -> bivmesh::Result<()> {
    let (views, truth) = synth_phantom(&PhantomSpec::default())?;
    let (surface, iterations, warnings) = fit_frame(&frame_contours(&views, 0)?, &Config::default())?;
    println!("fit in {iterations} iterations");
    for w in &warnings {
        println!("note: {w}");
    }
    let template = Template::standard();
    let mesh = harmonic_volumize(&template.volume, &surface)?;
    let q = element_quality(&mesh);
    println!("{} tets, {} inverted, aspect median {:.2} max {:.2}", mesh.num_elements(), q.non_positive, q.aspect_summary.median, q.aspect_summary.max);
    println!("element volume {:.1} mL, enclosed by boundary {:.1} mL", mesh.total_volume() / 1000.0, boundary_volume(&mesh) / 1000.0);
    let lv_myo = region_volume(&mesh, &[Region::LvMyo]);
    println!("LV myocardium {lv_myo:.1} mL (phantom {:.1} mL)", truth.lv_myocardium_ml[0]);
    println!("LV cavity {:.1} mL (phantom {:.1} mL)", mesh_volume(&surface, Cavity::Lv)?, truth.lv_cavity_ml[0]);
    Ok(())
}
