//! The standard template: surface patches, volume regions, node sets and
//! element quality.

use bivmesh::fem::{NodeSet, Region};
use bivmesh::surface::template::TEMPLATE_ID;
use bivmesh::surface::{mesh_volume, Cavity, Template};
use bivmesh::volmesh::element_quality;

fn main() -> bivmesh::Result<()> {
    let t = Template::standard();
    println!("{TEMPLATE_ID}: {} surface vertices, {} triangles", t.surface.num_vertices(), t.surface.triangles.len());
    println!("volume: {} nodes ({} on the boundary), {} tets", t.volume.num_nodes(), t.num_boundary_nodes(), t.volume.num_elements());
    for r in Region::ALL {
        let n = t.volume.region.iter().filter(|x| **x == r).count();
        println!("    region {:16} {n} tets", r.name());
    }
    for s in NodeSet::ALL {
        println!("    node set {:10} {} nodes", s.name(), t.volume.node_set(s).len());
    }
    println!("LV cavity {:.1} mL, RV cavity {:.1} mL", mesh_volume(&t.surface, Cavity::Lv)?, mesh_volume(&t.surface, Cavity::Rv)?);
    let q = element_quality(&t.volume);
    println!("aspect ratio min {:.2} median {:.2} max {:.2}", q.aspect_summary.min, q.aspect_summary.median, q.aspect_summary.max);
    let path = std::env::temp_dir().join("template_surface.vtk");
    t.surface.save_vtk(&path)?;
    println!("surface written to {}", path.display());
    Ok(())
}
