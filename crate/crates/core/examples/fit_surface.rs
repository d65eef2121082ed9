//! Fits the template surface to contours of a synthetic phantom and compares
//! the fitted LV cavity with the phantom's analytic volume.

use bivmesh::contours::extract_all;
use bivmesh::labelgrid::phantom::{synth_phantom, PhantomSpec};
use bivmesh::surface::{extrude_rv_epicardium, fit_surface, mesh_volume, rigid_init, Cavity, FitConfig, Template};

fn main() -> bivmesh::Result<()> {
    let (views, truth) = synth_phantom(&PhantomSpec::default())?;
    let frame = 0;
    let sets = views
        .volumes
        .values()
        .map(|v| extract_all(v, frame))
        .collect::<bivmesh::Result<Vec<_>>>()?;
    let template = Template::standard();
    let (placed, t) = rigid_init(&template.surface, &sets)?;
    println!("similarity scale {:.3}", t.scale);
    let fit = fit_surface(&placed, &sets, &FitConfig::default())?;
    println!("iterations {} converged {}", fit.iterations, fit.converged);
    for (k, (o, d)) in fit.objective.iter().zip(&fit.mean_distance).enumerate() {
        println!("  {k:2} objective {o:12.1} mean distance {d:.3} mm");
    }
    for w in &fit.warnings {
        println!("warning: {w}");
    }
    let mesh = extrude_rv_epicardium(&fit.mesh, 3.0)?;
    let lv = mesh_volume(&mesh, Cavity::Lv)?;
    let rv = mesh_volume(&mesh, Cavity::Rv)?;
    println!("LV cavity {lv:.2} mL (phantom {:.2} mL)", truth.lv_cavity_ml[frame]);
    println!("RV cavity {rv:.2} mL (phantom {:.2} mL)", truth.rv_cavity_ml[frame]);
    Ok(())
}
