//! Ventricular coordinates (apicobasal, transmural, rotational) and
//! rule-based fiber/sheet directions on a tetrahedral mesh.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{assemble_stiffness, shape_gradients, solve_dirichlet, ElementFrame, NodeSet, Region, TetMesh};
use crate::geometry::Vec3;

/// Relative tolerance of the coordinate solves.
pub const UVC_TOL: f64 = 1e-10;

/// Gradients shorter than this (1/mm) cannot define a local frame.
const MIN_GRADIENT: f64 = 1e-9;

pub const LV_REGIONS: [Region; 3] = [Region::LvMyo, Region::MitralValve, Region::AorticValve];
pub const RV_REGIONS: [Region; 3] = [Region::RvMyo, Region::TricuspidValve, Region::PulmonaryValve];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Chamber {
    Lv,
    Rv,
}

impl Chamber {
    pub fn code(self) -> f64 {
        match self {
            Chamber::Lv => 0.0,
            Chamber::Rv => 1.0,
        }
    }

    pub fn of_region(r: Region) -> Chamber {
        if LV_REGIONS.contains(&r) {
            Chamber::Lv
        } else {
            Chamber::Rv
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UVCField {
    pub z: Vec<f64>,
    pub rho: Vec<f64>,
    pub phi: Vec<f64>,
    pub chamber: Vec<Chamber>,
    /// Transmural solution of each chamber; NaN on nodes outside it.
    pub rho_lv: Vec<f64>,
    pub rho_rv: Vec<f64>,
}

impl UVCField {
    /// Single-chamber field from given apicobasal and transmural values.
    pub fn lv_only(z: Vec<f64>, rho: Vec<f64>) -> Self {
        let n = z.len();
        UVCField {
            phi: vec![0.0; n],
            chamber: vec![Chamber::Lv; n],
            rho_lv: rho.clone(),
            rho_rv: vec![f64::NAN; n],
            z,
            rho,
        }
    }
}

fn require<'a>(mesh: &'a TetMesh, s: NodeSet) -> Result<&'a [usize]> {
    let v = mesh.node_set(s);
    if v.is_empty() {
        Err(Error::Field(format!("node set {s} is empty")))
    } else {
        Ok(v)
    }
}

/// Transmural solve on one chamber. Later entries of `bc` override earlier
/// ones, so nodes in several sets take the last value.
fn chamber_rho(mesh: &TetMesh, regions: &[Region], bc_sets: &[(NodeSet, f64)]) -> Result<Option<Vec<f64>>> {
    if !mesh.region.iter().any(|r| regions.contains(r)) {
        return Ok(None);
    }
    let (sub, back) = mesh.submesh(regions);
    let mut bc = BTreeMap::new();
    for &(s, v) in bc_sets {
        for &i in sub.node_set(s) {
            bc.insert(i, v);
        }
    }
    if !bc.values().any(|v| *v == 0.0) || !bc.values().any(|v| *v == 1.0) {
        return Err(Error::Field(format!("{regions:?}: transmural boundary sets are missing")));
    }
    let k = assemble_stiffness(&sub)?;
    let u = solve_dirichlet(&k, &bc, UVC_TOL)?;
    let mut out = vec![f64::NAN; mesh.num_nodes()];
    for (s, &i) in back.iter().enumerate() {
        out[i] = u.values[s];
    }
    Ok(Some(out))
}

/// Maps an angle measured counter-clockwise from the anterior junction to
/// the rotational coordinate: `0 → π` across the septal span, `0 → −π`
/// the other way round. The cut sits at the inferior junction.
pub fn rotational_coordinate(delta: f64, septal_span: f64) -> f64 {
    let d = delta.rem_euclid(2.0 * PI);
    let phi = if d <= septal_span {
        PI * d / septal_span
    } else {
        -PI * (2.0 * PI - d) / (2.0 * PI - septal_span)
    };
    // rounding may land on the cut from below
    if phi <= -PI {
        PI
    } else {
        phi
    }
}

/// Long axis of the mesh: from the mean apex node towards the LV myocardial
/// centroid.
pub fn long_axis(mesh: &TetMesh) -> Result<(Vec3, Vec3)> {
    let apex_nodes = require(mesh, NodeSet::ApexNode)?;
    let apex = apex_nodes.iter().map(|&i| mesh.nodes[i]).sum::<Vec3>() / apex_nodes.len() as f64;
    let (mut c, mut w) = (Vec3::zeros(), 0.0);
    for e in 0..mesh.num_elements() {
        if mesh.region[e] == Region::LvMyo {
            let v = mesh.signed_volume(e).abs();
            c += mesh.centroid(e) * v;
            w += v;
        }
    }
    if w == 0.0 {
        return Err(Error::Field("mesh has no LV myocardium".into()));
    }
    let axis = (c / w - apex).normalize();
    if !axis.iter().all(|x| x.is_finite()) {
        return Err(Error::Field("apex coincides with the LV centroid".into()));
    }
    Ok((apex, axis))
}

fn phi_field(mesh: &TetMesh) -> Result<Vec<f64>> {
    let (origin, axis) = long_axis(mesh)?;
    let helper = if axis.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let e1 = (helper - axis * helper.dot(&axis)).normalize();
    let e2 = axis.cross(&e1);
    let angle = |p: &Vec3| -> Option<f64> {
        let d = p - origin;
        let (x, y) = (d.dot(&e1), d.dot(&e2));
        (x.hypot(y) > 1e-9).then(|| y.atan2(x))
    };
    // junctions from the angular extent of the RV endocardium
    let mut rv: Vec<f64> = mesh
        .node_set(NodeSet::RvEndo)
        .iter()
        .filter_map(|&i| angle(&mesh.nodes[i]))
        .map(|a| a.rem_euclid(2.0 * PI))
        .collect();
    let (anterior, span) = if rv.len() < 2 {
        (0.0, PI)
    } else {
        rv.sort_by(|a, b| a.total_cmp(b));
        // the largest cyclic gap separates the inferior from the anterior end
        let m = rv.len();
        let (mut gap, mut after) = (rv[0] + 2.0 * PI - rv[m - 1], 0);
        for k in 1..m {
            if rv[k] - rv[k - 1] > gap {
                gap = rv[k] - rv[k - 1];
                after = k;
            }
        }
        (rv[after], 2.0 * PI - gap)
    };
    if !(span > 0.0 && span < 2.0 * PI) {
        return Err(Error::Field("RV endocardium spans no usable angle".into()));
    }
    Ok(mesh
        .nodes
        .iter()
        .map(|p| angle(p).map_or(0.0, |a| rotational_coordinate(a - anterior, span)))
        .collect())
}

/// Apicobasal `z`, per-chamber transmural `rho` and rotational `phi`.
pub fn compute_uvc(mesh: &TetMesh) -> Result<UVCField> {
    let apex = require(mesh, NodeSet::ApexNode)?;
    let base = require(mesh, NodeSet::Base)?;
    require(mesh, NodeSet::LvEndo)?;
    require(mesh, NodeSet::Epi)?;
    let has_rv = mesh.region.contains(&Region::RvMyo);
    if has_rv {
        require(mesh, NodeSet::RvEndo)?;
    }
    let myo: Vec<Region> = [Region::LvMyo, Region::RvMyo].into();
    if mesh.submesh(&myo).0.connected_components() != 1 {
        return Err(Error::Field("myocardium is disconnected".into()));
    }
    let k = assemble_stiffness(mesh)?;
    let mut bc = BTreeMap::new();
    for &i in base {
        bc.insert(i, 1.0);
    }
    for &i in apex {
        bc.insert(i, 0.0);
    }
    let (z, (rho_lv, rho_rv)) = rayon::join(
        || solve_dirichlet(&k, &bc, UVC_TOL),
        || {
            rayon::join(
                || chamber_rho(mesh, &LV_REGIONS, &[(NodeSet::Epi, 1.0), (NodeSet::RvEndo, 1.0), (NodeSet::LvEndo, 0.0)]),
                || chamber_rho(mesh, &RV_REGIONS, &[(NodeSet::Epi, 1.0), (NodeSet::RvEndo, 0.0)]),
            )
        },
    );
    let z = z?.values;
    let rho_lv = rho_lv?.ok_or_else(|| Error::Field("mesh has no LV elements".into()))?;
    let rho_rv = rho_rv?.unwrap_or_else(|| vec![f64::NAN; mesh.num_nodes()]);
    let mut chamber = vec![Chamber::Rv; mesh.num_nodes()];
    for (t, r) in mesh.tets.iter().zip(&mesh.region) {
        if Chamber::of_region(*r) == Chamber::Lv {
            for &i in t {
                chamber[i] = Chamber::Lv;
            }
        }
    }
    let rho = (0..mesh.num_nodes())
        .map(|i| match chamber[i] {
            Chamber::Lv => rho_lv[i],
            Chamber::Rv => rho_rv[i],
        })
        .collect();
    Ok(UVCField {
        z,
        rho,
        phi: phi_field(mesh)?,
        chamber,
        rho_lv,
        rho_rv,
    })
}

/// Helix (α) and transverse (β) angle endpoints in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiberAngles {
    pub alpha_endo: f64,
    pub alpha_epi: f64,
    pub beta_endo: f64,
    pub beta_epi: f64,
}

impl Default for FiberAngles {
    fn default() -> Self {
        FiberAngles {
            alpha_endo: 60.0,
            alpha_epi: -60.0,
            beta_endo: -65.0,
            beta_epi: 25.0,
        }
    }
}

impl FiberAngles {
    pub fn alpha(&self, rho: f64) -> f64 {
        self.alpha_endo * (1.0 - rho) + self.alpha_epi * rho
    }

    pub fn beta(&self, rho: f64) -> f64 {
        self.beta_endo * (1.0 - rho) + self.beta_epi * rho
    }
}

/// Local circumferential, longitudinal and transmural unit vectors from the
/// coordinate gradients, or `None` if they are degenerate.
pub fn local_axes(grad_z: &Vec3, grad_rho: &Vec3) -> Option<(Vec3, Vec3, Vec3)> {
    let t = grad_rho.try_normalize(MIN_GRADIENT)?;
    let c = grad_z.cross(grad_rho).try_normalize(MIN_GRADIENT * MIN_GRADIENT)?;
    let l = t.cross(&c);
    Some((c, l, t))
}

/// Fiber, sheet and normal from local axes, rotating by α about the
/// transmural axis and then by β about the fiber.
pub fn frame_from_axes(c: &Vec3, l: &Vec3, t: &Vec3, alpha_deg: f64, beta_deg: f64) -> ElementFrame {
    let (a, b) = (alpha_deg.to_radians(), beta_deg.to_radians());
    let f = (c * a.cos() + l * a.sin()).normalize();
    let s = (t * b.cos() + f.cross(t) * b.sin()).normalize();
    let n = f.cross(&s);
    ElementFrame { f, s, n }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FiberReport {
    /// Elements whose own gradients were degenerate and whose frame was
    /// averaged from neighbours.
    pub fallback_elements: usize,
}

/// Per-element fiber frames. Elements use the transmural solution of their
/// own chamber.
pub fn compute_fibers(mesh: &TetMesh, uvc: &UVCField, angles: &FiberAngles) -> Result<(Vec<ElementFrame>, FiberReport)> {
    let n = mesh.num_nodes();
    if uvc.z.len() != n || uvc.rho_lv.len() != n || uvc.rho_rv.len() != n {
        return Err(Error::Field("coordinate field does not match the mesh".into()));
    }
    let mut frames: Vec<Option<ElementFrame>> = (0..mesh.num_elements())
        .into_par_iter()
        .map(|e| {
            let t = mesh.tets[e];
            let rho = match Chamber::of_region(mesh.region[e]) {
                Chamber::Lv => &uvc.rho_lv,
                Chamber::Rv => &uvc.rho_rv,
            };
            let vals = t.map(|i| rho[i]);
            if vals.iter().any(|v| !v.is_finite()) {
                return None;
            }
            let (g, _) = shape_gradients(t.map(|i| &mesh.nodes[i]))?;
            let gz: Vec3 = (0..4).map(|a| g[a] * uvc.z[t[a]]).sum();
            let gr: Vec3 = (0..4).map(|a| g[a] * vals[a]).sum();
            let (c, l, tt) = local_axes(&gz, &gr)?;
            let r = vals.iter().sum::<f64>() / 4.0;
            Some(frame_from_axes(&c, &l, &tt, angles.alpha(r), angles.beta(r)))
        })
        .collect();
    let fallback = frames.iter().filter(|f| f.is_none()).count();
    if fallback > 0 {
        fill_from_neighbours(mesh, &mut frames)?;
    }
    Ok((
        frames.into_iter().map(|f| f.expect("filled")).collect(),
        FiberReport {
            fallback_elements: fallback,
        },
    ))
}

/// Gives every missing frame the orthonormalised mean of the frames of
/// elements sharing a node with it, sweeping outwards from defined ones.
fn fill_from_neighbours(mesh: &TetMesh, frames: &mut [Option<ElementFrame>]) -> Result<()> {
    let mut node_elems = vec![Vec::new(); mesh.num_nodes()];
    for (e, t) in mesh.tets.iter().enumerate() {
        for &i in t {
            node_elems[i].push(e);
        }
    }
    loop {
        let missing: Vec<usize> = (0..frames.len()).filter(|&e| frames[e].is_none()).collect();
        if missing.is_empty() {
            return Ok(());
        }
        let found: Vec<(usize, ElementFrame)> = missing
            .iter()
            .filter_map(|&e| {
                let (mut f, mut s) = (Vec3::zeros(), Vec3::zeros());
                for &i in &mesh.tets[e] {
                    for &o in &node_elems[i] {
                        if let Some(fr) = &frames[o] {
                            f += fr.f;
                            s += fr.s;
                        }
                    }
                }
                let f = f.try_normalize(1e-12)?;
                let s = (s - f * s.dot(&f)).try_normalize(1e-12)?;
                Some((e, ElementFrame { f, s, n: f.cross(&s) }))
            })
            .collect();
        if found.is_empty() {
            return Err(Error::Field(format!("{} elements have no frame to inherit", missing.len())));
        }
        for (e, fr) in found {
            frames[e] = Some(fr);
        }
    }
}

/// Fibers file: `2`, then `fx fy fz sx sy sz` per element.
pub fn fibers_text(frames: &[ElementFrame]) -> String {
    let mut s = String::with_capacity(64 * frames.len() + 2);
    s.push_str("2\n");
    for fr in frames {
        writeln!(
            s,
            "{:.6} {:.6} {:.6} {:.6} {:.6} {:.6}",
            fr.f.x, fr.f.y, fr.f.z, fr.s.x, fr.s.y, fr.s.z
        )
        .unwrap();
    }
    s
}

/// Parses a fibers file; the normal is rebuilt as `f × s`.
pub fn parse_fibers(text: &str) -> Result<Vec<ElementFrame>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    if lines.next().map(str::trim) != Some("2") {
        return Err(Error::Format("fibers: first line must be 2".into()));
    }
    lines
        .map(|l| {
            let v: Vec<f64> = l
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Format(format!("fibers: bad line {l:?}")))?;
            if v.len() != 6 {
                return Err(Error::Format(format!("fibers: bad line {l:?}")));
            }
            let f = Vec3::new(v[0], v[1], v[2]);
            let s = Vec3::new(v[3], v[4], v[5]);
            Ok(ElementFrame { f, s, n: f.cross(&s) })
        })
        .collect()
}

/// Angle (degrees) of the fiber above the circumferential direction, within
/// the plane spanned by the circumferential and longitudinal axes.
pub fn helix_angle(f: &Vec3, circumferential: &Vec3, longitudinal: &Vec3) -> f64 {
    f.dot(longitudinal).atan2(f.dot(circumferential)).to_degrees()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::meshgen::Slab;

    fn orthonormal(fr: &ElementFrame) {
        for v in [fr.f, fr.s, fr.n] {
            assert!((v.norm() - 1.0).abs() < 1e-6);
        }
        assert!(fr.f.dot(&fr.s).abs() < 1e-6);
        assert!(fr.f.dot(&fr.n).abs() < 1e-6);
        assert!(fr.s.dot(&fr.n).abs() < 1e-6);
        let det = nalgebra::Matrix3::from_columns(&[fr.f, fr.s, fr.n]).determinant();
        assert!((det - 1.0).abs() < 1e-6);
    }

    #[test]
    fn helix_endpoints() {
        let a = FiberAngles::default();
        assert_eq!(a.alpha(0.0), 60.0);
        assert_eq!(a.alpha(1.0), -60.0);
        assert_eq!(a.alpha(0.5), 0.0);
        let (c, l, t) = (Vec3::y(), Vec3::z(), Vec3::x());
        for rho in [0.0, 0.5, 1.0] {
            let fr = frame_from_axes(&c, &l, &t, a.alpha(rho), a.beta(rho));
            orthonormal(&fr);
            assert!((helix_angle(&fr.f, &c, &l) - a.alpha(rho)).abs() < 1e-9);
            assert!(fr.f.dot(&t).abs() < 1e-12);
        }
    }

    #[test]
    fn rotational_coordinate_convention() {
        let s = 0.75 * PI;
        assert_eq!(rotational_coordinate(0.0, s), 0.0);
        assert!((rotational_coordinate(s, s) - PI).abs() < 1e-12);
        assert!((rotational_coordinate(s + 1e-9, s) + PI).abs() < 1e-6);
        assert!(rotational_coordinate(-0.1, s) < 0.0);
        // symmetric span: mirrored angles have opposite coordinates
        for d in [0.1, 1.0, 2.5] {
            assert!((rotational_coordinate(d, PI) + rotational_coordinate(-d, PI)).abs() < 1e-12);
        }
    }

    #[test]
    fn slab_helix_matches_rule() {
        let slab = Slab {
            cells: [6, 48, 6],
            ..Slab::default()
        };
        let m = slab.build();
        let (z, rho): (Vec<f64>, Vec<f64>) = m.nodes.iter().map(|p| slab.z_rho(p)).unzip();
        let uvc = UVCField::lv_only(z, rho.clone());
        let a = FiberAngles::default();
        let (frames, report) = compute_fibers(&m, &uvc, &a).unwrap();
        assert_eq!(report.fallback_elements, 0);
        let mut worst = 0.0f64;
        for (e, fr) in frames.iter().enumerate() {
            orthonormal(fr);
            let c = m.centroid(e);
            let th = c.y.atan2(c.x);
            let circ = Vec3::new(-th.sin(), th.cos(), 0.0);
            let r = m.tets[e].iter().map(|&i| rho[i]).sum::<f64>() / 4.0;
            let h = helix_angle(&fr.f, &circ, &Vec3::z());
            worst = worst.max((h - a.alpha(r)).abs());
        }
        assert!(worst < 2.0, "worst helix error {worst}");
    }

    #[test]
    fn swapped_endpoints_negate_helix() {
        let m = Slab::default().build();
        let slab = Slab::default();
        let (z, rho): (Vec<f64>, Vec<f64>) = m.nodes.iter().map(|p| slab.z_rho(p)).unzip();
        let uvc = UVCField::lv_only(z, rho);
        let a = FiberAngles::default();
        let b = FiberAngles {
            alpha_endo: a.alpha_epi,
            alpha_epi: a.alpha_endo,
            ..a
        };
        let (fa, _) = compute_fibers(&m, &uvc, &a).unwrap();
        let (fb, _) = compute_fibers(&m, &uvc, &b).unwrap();
        for (e, (x, y)) in fa.iter().zip(&fb).enumerate() {
            let c = m.centroid(e);
            let th = c.y.atan2(c.x);
            let circ = Vec3::new(-th.sin(), th.cos(), 0.0);
            let (hx, hy) = (helix_angle(&x.f, &circ, &Vec3::z()), helix_angle(&y.f, &circ, &Vec3::z()));
            assert!((hx + hy).abs() < 1e-6, "{hx} {hy}");
        }
    }

    #[test]
    fn slab_uvc_is_bounded_and_exact_on_fixed_sets() {
        let m = Slab::default().build();
        let u = compute_uvc(&m).unwrap();
        for &i in m.node_set(NodeSet::Base) {
            assert_eq!(u.z[i], 1.0);
        }
        for &i in m.node_set(NodeSet::LvEndo) {
            assert_eq!(u.rho[i], 0.0);
        }
        for &i in m.node_set(NodeSet::Epi) {
            assert_eq!(u.rho[i], 1.0);
        }
        assert!(u.z.iter().chain(&u.rho).all(|v| (0.0..=1.0).contains(v)));
        // z is linear in height on the slab
        for (p, z) in m.nodes.iter().zip(&u.z) {
            assert!((z - p.z / 20.0).abs() < 1e-6);
        }
    }

    #[test]
    fn mirrored_nodes_have_opposite_phi() {
        // closed annulus whose RV attachment covers exactly half a turn
        let cells = [2, 32, 2];
        let slab = Slab {
            sector_rad: 2.0 * PI,
            cells,
            ..Slab::default()
        };
        let mut m = slab.build();
        let epi = m.node_set(NodeSet::Epi).to_vec();
        let half: Vec<usize> = epi
            .into_iter()
            .filter(|&i| m.nodes[i].y >= -1e-9)
            .collect();
        m.surface_tags.insert(NodeSet::RvEndo, half);
        let u = compute_uvc(&m).unwrap();
        let nt = cells[1];
        let id = |i: usize, j: usize, k: usize| i + (cells[0] + 1) * (j % nt + nt * k);
        for k in 0..=cells[2] {
            for i in 0..=cells[0] {
                for j in 1..nt / 2 {
                    let (a, b) = (id(i, j, k), id(i, nt - j, k));
                    assert!((u.phi[a] + u.phi[b]).abs() < 1e-6, "{} {}", u.phi[a], u.phi[b]);
                }
            }
        }
    }

    #[test]
    fn fibers_file_roundtrip() {
        let (c, l, t) = (Vec3::y(), Vec3::z(), Vec3::x());
        let frames = vec![frame_from_axes(&c, &l, &t, 30.0, 10.0); 3];
        let text = fibers_text(&frames);
        assert!(text.starts_with("2\n"));
        let back = parse_fibers(&text).unwrap();
        assert_eq!(back.len(), 3);
        assert!((back[0].f - frames[0].f).norm() < 1e-6);
    }
}
