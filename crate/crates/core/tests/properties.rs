use std::collections::BTreeMap;

use nalgebra::{Matrix3, Matrix4};
use proptest::prelude::*;

use bivmesh::cohort::{iterative_mean, procrustes_align_pair, procrustes_distance, representative_mesh};
use bivmesh::contours::{ContourKind, ContourSet, LandmarkName};
use bivmesh::fem::{assemble_stiffness, conjugate_gradient, solve_dirichlet, CsrMatrix, NodeSet, Region, TetMesh};
use bivmesh::fields::FiberAngles;
use bivmesh::frames::select_es;
use bivmesh::geometry::{axis_angle, point_in_polygon_2d, Similarity, Vec3};
use bivmesh::labelgrid::nifti::{read_nifti, write_nifti};
use bivmesh::labelgrid::phantom::{synth_phantom, PhantomSpec};
use bivmesh::labelgrid::{LabelMap, LabelVolume, Structure, View, ViewSet};
use bivmesh::phenotypes::{mask_phenotypes, qc_outlier_filter};
use bivmesh::pipeline::frame_contours;
use bivmesh::surface::{fit_surface, mesh_volume, rigid_init, Cavity, FitConfig, SurfaceMesh, Template};
use bivmesh::volmesh::{boundary_volume, harmonic_volumize};

fn rotation() -> impl Strategy<Value = Matrix3<f64>> {
    (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, -3.1..3.1f64).prop_filter_map("zero axis", |(x, y, z, a)| {
        let axis = Vec3::new(x, y, z);
        (axis.norm() > 0.1).then(|| axis_angle(&axis, a))
    })
}

fn rigid() -> impl Strategy<Value = Similarity> {
    (rotation(), -50.0..50.0f64, -50.0..50.0f64, -50.0..50.0f64)
        .prop_map(|(r, x, y, z)| Similarity::rigid(r, Vec3::new(x, y, z)))
}

fn moved(s: &SurfaceMesh, t: &Similarity) -> SurfaceMesh {
    s.map_vertices(|p| t.apply(p))
}

fn max_gap(a: &[Vec3], b: &[Vec3]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).norm()).fold(0.0, f64::max)
}

/// Smooth displacement of amplitude at most `amp` (mm) per component.
fn smooth_field(amp: f64, phase: [f64; 3], p: &Vec3) -> Vec3 {
    let w = 2.0 * std::f64::consts::PI / 80.0;
    Vec3::new(
        amp * (w * p.y + phase[0]).sin() * (w * p.z).cos(),
        amp * (w * p.z + phase[1]).sin() * (w * p.x).cos(),
        amp * (w * p.x + phase[2]).sin() * (w * p.y).cos(),
    )
}

fn perturbed_template(amp: f64, phase: [f64; 3]) -> SurfaceMesh {
    Template::standard().surface.map_vertices(|p| p + smooth_field(amp, phase, p))
}

fn phase() -> impl Strategy<Value = [f64; 3]> {
    [0.0..6.28f64, 0.0..6.28f64, 0.0..6.28f64]
}

fn sax_codes() -> Vec<i32> {
    let m = LabelMap::standard(View::Sax);
    let mut c: Vec<i32> = Structure::ALL.iter().filter_map(|s| m.code(*s)).collect();
    c.push(0);
    c
}

fn random_sax(dims: [usize; 4], spacing: [f64; 3], picks: &[usize]) -> LabelVolume {
    let codes = sax_codes();
    let n = dims.iter().product::<usize>();
    let data = (0..n).map(|i| codes[picks[i % picks.len()] % codes.len()]).collect();
    let mut affine = Matrix4::identity();
    for a in 0..3 {
        affine[(a, a)] = spacing[a];
        affine[(a, 3)] = 0.125 * (a as f64 + 1.0);
    }
    LabelVolume::new(dims, spacing, affine, data, View::Sax, LabelMap::standard(View::Sax)).unwrap()
}

// label grids

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn label_counts_partition_each_frame(
        nx in 1usize..6, ny in 1usize..6, nz in 1usize..4, nt in 1usize..4,
        picks in prop::collection::vec(0usize..16, 1..40),
    ) {
        let v = random_sax([nx, ny, nz, nt], [1.0, 1.0, 2.0], &picks);
        for t in 0..nt {
            let total: usize = sax_codes().iter().map(|&c| v.count_label(t, c, None).unwrap()).sum();
            prop_assert_eq!(total, nx * ny * nz);
        }
    }

    #[test]
    fn voxel_to_patient_is_affine(
        r in rotation(), sp in [0.5..3.0f64, 0.5..3.0f64, 0.5..8.0f64],
        u in [-5.0..20.0f64, -5.0..20.0f64, -5.0..20.0f64],
        w in [-5.0..20.0f64, -5.0..20.0f64, -5.0..20.0f64],
        lambda in -1.0..2.0f64,
    ) {
        let mut affine = Matrix4::identity();
        for c in 0..3 {
            for a in 0..3 {
                affine[(a, c)] = r[(a, c)] * sp[c];
            }
            affine[(c, 3)] = 10.0 * (c as f64) - 4.0;
        }
        let v = LabelVolume::new([4, 4, 4, 1], sp, affine, vec![0; 64], View::Sax, LabelMap::standard(View::Sax)).unwrap();
        let mix: [f64; 3] = std::array::from_fn(|a| lambda * u[a] + (1.0 - lambda) * w[a]);
        let lhs = v.index_to_patient(mix);
        let rhs = lambda * v.index_to_patient(u) + (1.0 - lambda) * v.index_to_patient(w);
        prop_assert!((lhs - rhs).norm() <= 1e-9 * (1.0 + rhs.norm()));
    }

    #[test]
    fn nifti_roundtrip_is_identity(
        nx in 1usize..7, ny in 1usize..7, nz in 1usize..4, nt in 1usize..4,
        sp in [1usize..16, 1usize..16, 1usize..32],
        picks in prop::collection::vec(0usize..16, 1..50),
    ) {
        // eighths of a millimetre survive single-precision header fields
        let spacing = sp.map(|s| s as f64 / 8.0);
        let v = random_sax([nx, ny, nz, nt], spacing, &picks);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.nii");
        write_nifti(&path, &v).unwrap();
        let back = read_nifti(&path, View::Sax, LabelMap::standard(View::Sax)).unwrap();
        prop_assert_eq!(back.dims, v.dims);
        prop_assert_eq!(back.spacing, v.spacing);
        prop_assert_eq!(back.affine, v.affine);
        prop_assert_eq!(back.data, v.data);
    }
}

// frame selection

/// SAX volume whose LV cavity count in frame t is `counts[t]`, all in the
/// middle slice.
fn transient_views(counts: &[usize], extra_lax: bool) -> ViewSet {
    let nt = counts.len();
    let (nx, ny, nz) = (16usize, 16usize, 5usize);
    let lv = LabelMap::standard(View::Sax).code(Structure::LvCavity).unwrap();
    let mut data = vec![0; nx * ny * nz * nt];
    for (t, &c) in counts.iter().enumerate() {
        let start = (t * nz + nz / 2) * nx * ny;
        data[start..start + c].fill(lv);
    }
    let mut set = ViewSet::new("s");
    set.insert(
        LabelVolume::new([nx, ny, nz, nt], [1.0; 3], Matrix4::identity(), data, View::Sax, LabelMap::standard(View::Sax))
            .unwrap(),
    )
    .unwrap();
    if extra_lax {
        // a long-axis view with right-ventricular labels only
        let rv = LabelMap::standard(View::Lax4ch).code(Structure::RvCavity).unwrap();
        let lax = LabelVolume::new(
            [8, 8, 1, nt],
            [1.0; 3],
            Matrix4::identity(),
            vec![rv; 64 * nt],
            View::Lax4ch,
            LabelMap::standard(View::Lax4ch),
        )
        .unwrap();
        set.insert(lax).unwrap();
    }
    set
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn es_selection_ignores_uniform_scaling(counts in prop::collection::vec(1usize..40, 1..12), k in 1usize..6) {
        let es = select_es(&transient_views(&counts, false)).unwrap();
        prop_assert!(es < counts.len());
        let scaled: Vec<usize> = counts.iter().map(|c| c * k).collect();
        prop_assert_eq!(select_es(&transient_views(&scaled, false)).unwrap(), es);
    }

    #[test]
    fn views_without_lv_do_not_change_es(counts in prop::collection::vec(1usize..40, 1..12)) {
        prop_assert_eq!(
            select_es(&transient_views(&counts, true)).unwrap(),
            select_es(&transient_views(&counts, false)).unwrap()
        );
    }
}

// contours

fn in_plane(vol: &LabelVolume, p: &Vec3) -> [f64; 2] {
    let u = vol.affine.fixed_view::<3, 1>(0, 0).normalize();
    let v = vol.affine.fixed_view::<3, 1>(0, 1).normalize();
    [u.dot(p), v.dot(p)]
}

#[test]
fn lax_contour_geometry_on_phantom_family() {
    for k in 0..4 {
        let (views, _) = synth_phantom(&PhantomSpec::variant(k)).unwrap();
        for view in [View::Lax2ch, View::Lax3ch, View::Lax4ch] {
            let vol = views.get(view).unwrap();
            let cs = bivmesh::contours::extract_all(vol, 0).unwrap();
            let epi: Vec<[f64; 2]> = cs
                .of_kind(ContourKind::LvEpi)
                .flat_map(|c| c.points.iter().map(|p| in_plane(vol, p)))
                .collect();
            for c in cs.of_kind(ContourKind::LvEndo) {
                for p in &c.points {
                    assert!(point_in_polygon_2d(in_plane(vol, p), &epi), "{k} {view:?}");
                }
            }
            if view == View::Lax2ch {
                let mid = (cs.landmarks[&LandmarkName::Mv2chA] + cs.landmarks[&LandmarkName::Mv2chB]) / 2.0;
                let apex = (cs.landmarks[&LandmarkName::Apex2ch] - mid).norm();
                let best = cs
                    .of_kind(ContourKind::LvEpi)
                    .flat_map(|c| c.points.iter())
                    .map(|p| (p - mid).norm())
                    .fold(0.0, f64::max);
                assert_eq!(apex, best);
            }
        }
    }
}

#[test]
fn halving_spacing_nearly_doubles_contour_points() {
    let count = |h: f64| {
        let spec = PhantomSpec {
            inplane_spacing_mm: h,
            ..PhantomSpec::default()
        };
        let (views, _) = synth_phantom(&spec).unwrap();
        let cs = bivmesh::contours::extract_all(views.get(View::Lax4ch).unwrap(), 0).unwrap();
        cs.contours.iter().map(|c| c.points.len()).sum::<usize>() as f64
    };
    let (coarse, fine) = (count(2.0), count(1.0));
    assert!(fine >= 1.8 * coarse, "{coarse} -> {fine}");
}

// surfaces and fitting

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn cavity_volume_is_rigid_invariant_and_cubic_in_scale(t in rigid(), s in 0.3..3.0f64) {
        let base = &Template::standard().surface;
        for cavity in [Cavity::Lv, Cavity::Rv] {
            let v0 = mesh_volume(base, cavity).unwrap();
            let v1 = mesh_volume(&moved(base, &t), cavity).unwrap();
            prop_assert!((v1 - v0).abs() <= 1e-9 * v0);
            let v2 = mesh_volume(&base.map_vertices(|p| p * s), cavity).unwrap();
            prop_assert!((v2 - s.powi(3) * v0).abs() <= 1e-9 * v2);
        }
    }
}

fn phantom_contours(k: usize) -> Vec<ContourSet> {
    let (views, _) = synth_phantom(&PhantomSpec::variant(k)).unwrap();
    frame_contours(&views, 0).unwrap()
}

fn move_contours(sets: &[ContourSet], t: &Similarity) -> Vec<ContourSet> {
    sets.iter()
        .map(|s| {
            let mut s = s.clone();
            for c in &mut s.contours {
                c.points.iter_mut().for_each(|p| *p = t.apply(p));
            }
            s.landmarks.values_mut().for_each(|p| *p = t.apply(p));
            s
        })
        .collect()
}

fn fit(sets: &[ContourSet]) -> bivmesh::surface::FitReport {
    let (placed, _) = rigid_init(&Template::standard().surface, sets).unwrap();
    fit_surface(&placed, sets, &FitConfig::default()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4))]

    #[test]
    fn fit_is_rigid_equivariant_and_keeps_correspondence(t in rigid()) {
        let sets = phantom_contours(1);
        let a = fit(&sets);
        let b = fit(&move_contours(&sets, &t));
        let template = &Template::standard().surface;
        for r in [&a, &b] {
            prop_assert_eq!(&r.mesh.triangles, &template.triangles);
            prop_assert_eq!(&r.mesh.vertex_region, &template.vertex_region);
            prop_assert_eq!(&r.mesh.triangle_patch, &template.triangle_patch);
            for w in r.objective.windows(2) {
                prop_assert!(w[1] <= w[0] * (1.0 + 1e-12), "{:?}", r.objective);
            }
        }
        prop_assert_eq!(a.iterations, b.iterations);
        let expect: Vec<Vec3> = a.mesh.vertices.iter().map(|p| t.apply(p)).collect();
        let gap = max_gap(&b.mesh.vertices, &expect);
        prop_assert!(gap <= 1e-6, "{}", gap);
    }
}

// finite elements

fn template_volume() -> &'static TetMesh {
    &Template::standard().volume
}

fn within_boundary_range(m: &TetMesh, bc: &BTreeMap<usize, f64>) -> Result<(), TestCaseError> {
    let k = assemble_stiffness(m).unwrap();
    let lo = bc.values().cloned().fold(f64::INFINITY, f64::min);
    let hi = bc.values().cloned().fold(f64::NEG_INFINITY, f64::max);
    let u = solve_dirichlet(&k, bc, 1e-12).unwrap();
    let slack = 1e-9 * (hi - lo).max(1.0);
    prop_assert!(u.values.iter().all(|v| *v >= lo - slack && *v <= hi + slack));
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn myocardial_dirichlet_solution_obeys_maximum_principle(values in prop::collection::vec(-10.0..10.0f64, 5)) {
        let full = template_volume();
        let (m, back) = full.submesh(&[Region::LvMyo, Region::RvMyo]);
        let local: BTreeMap<usize, usize> = back.iter().enumerate().map(|(j, &g)| (g, j)).collect();
        let mut bc = BTreeMap::new();
        let sets = [NodeSet::Base, NodeSet::ApexNode, NodeSet::LvEndo, NodeSet::Epi, NodeSet::RvEndo];
        for (set, v) in sets.iter().zip(&values) {
            for i in full.node_set(*set) {
                if let Some(&j) = local.get(i) {
                    bc.insert(j, *v);
                }
            }
        }
        within_boundary_range(&m, &bc)?;
    }

    #[test]
    fn template_solution_obeys_maximum_principle_for_coordinate_data(lo in -10.0..10.0f64, span in 0.1..10.0f64) {
        // the apex-to-base problem solved for every subject
        let m = template_volume();
        let mut bc = BTreeMap::new();
        for &i in m.node_set(NodeSet::Base) {
            bc.insert(i, lo + span);
        }
        for &i in m.node_set(NodeSet::ApexNode) {
            bc.insert(i, lo);
        }
        within_boundary_range(m, &bc)?;
    }

    #[test]
    fn stiffness_is_rigid_invariant(t in rigid()) {
        let m = template_volume();
        let a = assemble_stiffness(m).unwrap();
        let b = assemble_stiffness(&m.transformed(|p| t.apply(p))).unwrap();
        prop_assert_eq!(&a.col_idx, &b.col_idx);
        let scale = a.values.iter().fold(0.0f64, |s, v| s.max(v.abs()));
        for (x, y) in a.values.iter().zip(&b.values) {
            prop_assert!((x - y).abs() <= 1e-9 * scale);
        }
    }

    #[test]
    fn cg_energy_never_increases(seed in prop::collection::vec(-1.0..1.0f64, 36), rhs in prop::collection::vec(-5.0..5.0f64, 6)) {
        let m = nalgebra::DMatrix::from_row_slice(6, 6, &seed);
        let spd = &m * m.transpose() + nalgebra::DMatrix::identity(6, 6) * 0.5;
        let a = CsrMatrix::from_dense(&spd);
        let mut x = vec![0.0; 6];
        let report = conjugate_gradient(|v, out| a.mul_vec(v, out), &a.diagonal(), &rhs, &mut x, 1e-12, 100).unwrap();
        for w in report.energy.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0));
        }
    }
}

// volumetric meshes

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn smooth_two_millimetre_perturbation_inverts_nothing(ph in phase()) {
        let out = harmonic_volumize(template_volume(), &perturbed_template(2.0, ph)).unwrap();
        prop_assert_eq!(out.count_inverted(), 0);
        let mut a = out.region.clone();
        let mut b = template_volume().region.clone();
        a.sort();
        b.sort();
        prop_assert_eq!(a, b);
        let v = out.total_volume();
        prop_assert!((v - boundary_volume(&out)).abs() <= 1e-6 * v);
    }

    #[test]
    fn volumize_is_rigid_equivariant(ph in phase(), t in rigid()) {
        let s = perturbed_template(2.0, ph);
        let a = harmonic_volumize(template_volume(), &s).unwrap();
        let b = harmonic_volumize(template_volume(), &moved(&s, &t)).unwrap();
        let expect: Vec<Vec3> = a.nodes.iter().map(|p| t.apply(p)).collect();
        let gap = max_gap(&b.nodes, &expect);
        prop_assert!(gap <= 1e-6, "{}", gap);
    }
}

// phenotypes

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn qc_exclusions_survive_rescaling_one_phenotype(
        rows in prop::collection::vec(prop::collection::vec(0.0..0.2f64, 5), 8..40),
        col in 0usize..5, s in 0.01..100.0f64,
    ) {
        let named: Vec<(String, Vec<f64>)> = rows.iter().enumerate().map(|(i, r)| (format!("s{i}"), r.clone())).collect();
        let scaled: Vec<(String, Vec<f64>)> = named
            .iter()
            .map(|(id, r)| {
                let mut r = r.clone();
                r[col] *= s;
                (id.clone(), r)
            })
            .collect();
        prop_assert_eq!(qc_outlier_filter(&named, 1.5).unwrap().excluded, qc_outlier_filter(&scaled, 1.5).unwrap().excluded);
    }

    #[test]
    fn mask_volumes_are_linear_in_voxel_volume(
        picks in prop::collection::vec(0usize..16, 1..60),
        sp in [0.5..3.0f64, 0.5..3.0f64, 0.5..10.0f64],
    ) {
        let lv = LabelMap::standard(View::Sax).code(Structure::LvCavity).unwrap();
        let mut unit = random_sax([6, 6, 3, 2], [1.0; 3], &picks);
        let rv = LabelMap::standard(View::Sax).code(Structure::RvCavity).unwrap();
        // keep both cavities non-empty in both frames so ejection fractions exist
        let frame = 6 * 6 * 3;
        for t in 0..2 {
            unit.data[t * frame] = lv;
            unit.data[t * frame + 1] = rv;
        }
        let mut big = unit.clone();
        big.spacing = sp;
        for a in 0..3 {
            big.affine[(a, a)] = sp[a];
        }
        let r1 = mask_phenotypes("u", &unit, 0, 1, 1.05).unwrap();
        let r2 = mask_phenotypes("u", &big, 0, 1, 1.05).unwrap();
        let f = sp[0] * sp[1] * sp[2];
        for (a, b) in [(r1.lvedv_ml, r2.lvedv_ml), (r1.lvesv_ml, r2.lvesv_ml), (r1.rvedv_ml, r2.rvedv_ml), (r1.lvm_g, r2.lvm_g)] {
            prop_assert!((b - f * a).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }
}

// cohort shapes

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn procrustes_distance_is_symmetric(p1 in phase(), p2 in phase(), t in rigid()) {
        let a = perturbed_template(3.0, p1);
        let b = moved(&perturbed_template(3.0, p2), &t);
        let ab = procrustes_distance(&a, &b, false).unwrap();
        let ba = procrustes_distance(&b, &a, false).unwrap();
        prop_assert!((ab - ba).abs() <= 1e-12, "{} {}", ab, ba);
    }

    #[test]
    fn mean_shape_ignores_input_order(
        phases in prop::collection::vec(phase(), 3..6),
        poses in prop::collection::vec(rigid(), 6),
        shuffle in Just(()).prop_perturb(|_, mut rng| rng.next_u64()),
    ) {
        let meshes: Vec<SurfaceMesh> = phases
            .iter()
            .zip(&poses)
            .map(|(p, t)| moved(&perturbed_template(3.0, *p), t))
            .collect();
        let mut order: Vec<usize> = (0..meshes.len()).collect();
        order.rotate_left((shuffle % meshes.len() as u64) as usize);
        order.swap(0, meshes.len() - 1);
        let permuted: Vec<SurfaceMesh> = order.iter().map(|&i| meshes[i].clone()).collect();
        let a = iterative_mean(&meshes, 1e-9, false).unwrap();
        let b = iterative_mean(&permuted, 1e-9, false).unwrap();
        let (_, d) = procrustes_align_pair(&b.reference, &a.reference, false).unwrap();
        prop_assert!(d <= 1e-6, "{}", d);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(3))]

    #[test]
    fn representative_commutes_with_global_motion(phases in prop::collection::vec(phase(), 3), t in rigid()) {
        let members: Vec<SurfaceMesh> = phases.iter().map(|p| perturbed_template(1.5, *p)).collect();
        let reference = iterative_mean(&members, 1e-9, false).unwrap().reference;
        let angles = FiberAngles::default();
        let a = representative_mesh(&members, &reference, template_volume(), &angles, false).unwrap();
        let members_t: Vec<SurfaceMesh> = members.iter().map(|m| moved(m, &t)).collect();
        let b = representative_mesh(&members_t, &moved(&reference, &t), template_volume(), &angles, false).unwrap();
        let expect: Vec<Vec3> = a.surface.vertices.iter().map(|p| t.apply(p)).collect();
        prop_assert!(max_gap(&b.surface.vertices, &expect) <= 1e-6);
        let fa = a.volume.fibers.as_ref().unwrap();
        let fb = b.volume.fibers.as_ref().unwrap();
        for (x, y) in fa.iter().zip(fb) {
            prop_assert!((t.apply_vector(&x.f) - y.f).norm() <= 1e-5);
        }
    }
}
