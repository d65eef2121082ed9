//! Procrustes mean of scattered, perturbed template surfaces, bin
//! assignment and the population statistics.

use nalgebra::Rotation3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use bivmesh::cohort::stats::{bland_altman, mann_whitney_u, ols_regression};
use bivmesh::cohort::{assign_bin, iterative_mean, procrustes_distance, BinRanges, Demographics, Sex, PROCRUSTES_TOL};
use bivmesh::geometry::Vec3;
use bivmesh::surface::Template;

fn main() -> bivmesh::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let shape = &Template::standard().surface;
    let meshes: Vec<_> = (0..8)
        .map(|_| {
            let rot = Rotation3::from_euler_angles(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let shift = Vec3::new(rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0), 0.0);
            let s = 1.0 + rng.gen_range(-0.05..0.05);
            shape.map_vertices(|p| rot * (p * s) + shift)
        })
        .collect();
    let mean = iterative_mean(&meshes, PROCRUSTES_TOL, false)?;
    println!("mean shape after {} iterations (last change {:.1e} mm)", mean.iterations, mean.distance);
    for (k, m) in meshes.iter().enumerate() {
        println!("    mesh {k}: Procrustes distance to the mean {:.3} mm", procrustes_distance(m, &mean.reference, false)?);
    }

    let d = Demographics {
        subject_id: "s1".into(),
        sex: Sex::F,
        age_years: 57.8,
        bmi_kg_m2: 23.4,
    };
    println!("bin of {:?}: {:?}", d, assign_bin(&d, &BinRanges::default()));

    let age: Vec<f64> = (0..30).map(|_| rng.gen_range(45.0..80.0)).collect();
    let lvedv: Vec<f64> = age.iter().map(|a| 160.0 - 0.6 * a + rng.gen_range(-12.0..12.0)).collect();
    let r = ols_regression(&age, &lvedv)?;
    println!("LVEDV vs age: slope {:.3} mL/year, p = {:.2e}", r.slope, r.p_value);
    let t = mann_whitney_u(&lvedv[..15], &lvedv[15..])?;
    println!("rank test between halves: U = {}, p = {:.3} (exact: {})", t.u, t.p_value, t.exact);
    let mesh_v: Vec<f64> = lvedv.iter().map(|v| v * 0.95 + rng.gen_range(-3.0..3.0)).collect();
    let ba = bland_altman(&mesh_v, &lvedv)?;
    println!("mesh minus mask: bias {:.2} mL, limits {:.2} to {:.2} mL", ba.bias, ba.lower_loa, ba.upper_loa);
    Ok(())
}
