//! Writes a phantom's four views as NIFTI files, reads them back and
//! prints their geometry and label counts.

use bivmesh::labelgrid::nifti::{read_nifti, write_nifti};
use bivmesh::labelgrid::phantom::{synth_phantom, PhantomSpec};
use bivmesh::labelgrid::LabelMap;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (views, _) = synth_phantom(&PhantomSpec::default())?;
    let dir = std::env::temp_dir().join("bivmesh-views");
    std::fs::create_dir_all(&dir)?;
    for (view, vol) in &views.volumes {
        let path = dir.join(format!("{}.nii", view.name()));
        write_nifti(&path, vol)?;
        let back = read_nifti(&path, *view, LabelMap::standard(*view))?;
        assert_eq!(back.data, vol.data);
        println!(
            "{:8} dims {:?} spacing {:?} voxel {:.2} mm3",
            view.name(),
            back.dims,
            back.spacing,
            back.voxel_volume_mm3()
        );
        for (s, code) in &back.label_map.0 {
            let n: usize = (0..back.nt()).map(|t| back.count_label(t, *code, None)).sum::<bivmesh::Result<usize>>()?;
            println!("    {s:?} (code {code}): {n} voxels over {} frames", back.nt());
        }
        println!("    centre voxel at {:?} mm", back.index_to_patient([back.nx() as f64 / 2.0, back.ny() as f64 / 2.0, 0.0]).as_slice());
    }
    Ok(())
}
