//! Assembles the P1 stiffness matrix of a unit cube, solves a Dirichlet
//! problem with linear boundary data and reports the solver's progress.

use std::collections::BTreeMap;

use bivmesh::fem::meshgen::unit_cube;
use bivmesh::fem::{assemble_stiffness, solve_dirichlet_report};

fn main() -> bivmesh::Result<()> {
    let m = unit_cube(8);
    let k = assemble_stiffness(&m)?;
    println!("{} nodes, {} tets, {} stored entries", m.num_nodes(), m.num_elements(), k.nnz());
    let exact = |i: usize| {
        let p = m.nodes[i];
        2.0 * p.x - p.y + 0.25 * p.z
    };
    let bc: BTreeMap<usize, f64> = m.boundary_nodes().into_iter().map(|i| (i, exact(i))).collect();
    let (u, report) = solve_dirichlet_report(&k, &bc, 1e-12, None)?;
    println!("CG: {} iterations, relative residual {:.1e}", report.iterations, report.relative_residual);
    for (it, e) in report.energy.iter().enumerate().step_by(5) {
        println!("    iteration {it:3} energy {e:.6}");
    }
    let err = (0..m.num_nodes()).map(|i| (u[i] - exact(i)).abs()).fold(0.0, f64::max);
    println!("max error against the linear field {err:.2e}");
    Ok(())
}
