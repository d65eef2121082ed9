//! Contours and valve landmarks of every view at end-diastole, saved as
//! JSON.

use bivmesh::contours::extract_all;
use bivmesh::labelgrid::phantom::{synth_phantom, PhantomSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (views, _) = synth_phantom(&PhantomSpec::default())?;
    let dir = std::env::temp_dir().join("bivmesh-contours");
    std::fs::create_dir_all(&dir)?;
    for (view, vol) in &views.volumes {
        let set = extract_all(vol, 0)?;
        println!("{}:", view.name());
        for c in &set.contours {
            let slice = c.slice.map(|s| format!(" slice {s}")).unwrap_or_default();
            println!("    {:?}{slice}: {} points", c.kind, c.points.len());
        }
        for (name, p) in &set.landmarks {
            println!("    {} at ({:.1}, {:.1}, {:.1})", name.as_str(), p.x, p.y, p.z);
        }
        let path = dir.join(format!("{}_ed.json", view.name()));
        set.save(&path)?;
        println!("    saved {}", path.display());
    }
    Ok(())
}
