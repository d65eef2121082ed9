//! Ventricular coordinates and rule-based fibers on the template, with the
//! fiber inclination sampled through the LV wall.

use bivmesh::fem::Region;
use bivmesh::fields::{compute_fibers, compute_uvc, long_axis, FiberAngles};
use bivmesh::surface::Template;

fn main() -> bivmesh::Result<()> {
    let mesh = &Template::standard().volume;
    let uvc = compute_uvc(mesh)?;
    let (apex, dir) = long_axis(mesh)?;
    println!("long axis from ({:.1}, {:.1}, {:.1}) along ({:.2}, {:.2}, {:.2})", apex.x, apex.y, apex.z, dir.x, dir.y, dir.z);
    let range = |v: &[f64]| v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(*x), b.max(*x)));
    println!("z in {:?}, rho in {:?}, phi in {:?}", range(&uvc.z), range(&uvc.rho), range(&uvc.phi));
    let angles = FiberAngles::default();
    let (frames, report) = compute_fibers(mesh, &uvc, &angles)?;
    println!("{} frames, {} from neighbour averages", frames.len(), report.fallback_elements);
    // mean fiber inclination to the short-axis plane in transmural bands
    let mut bands = [(0.0, 0usize); 5];
    for (e, fr) in frames.iter().enumerate() {
        if mesh.region[e] != Region::LvMyo {
            continue;
        }
        let rho = mesh.tets[e].iter().map(|&i| uvc.rho[i]).sum::<f64>() / 4.0;
        let b = ((rho * 5.0) as usize).min(4);
        bands[b].0 += fr.f.dot(&dir).abs().asin().to_degrees();
        bands[b].1 += 1;
    }
    for (b, (sum, n)) in bands.iter().enumerate() {
        let mid = (b as f64 + 0.5) / 5.0;
        println!("rho {mid:.1}: inclination {:5.1} deg over {n} tets", sum / *n as f64);
    }
    Ok(())
}
