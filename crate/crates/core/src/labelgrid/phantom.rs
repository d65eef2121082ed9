//! Synthetic biventricular phantoms rasterised into SAX and LAX label volumes.

use std::f64::consts::PI;

use nalgebra::Matrix4;
use serde::{Deserialize, Serialize};

use super::{LabelMap, LabelVolume, Structure, View, ViewSet};
use crate::anatomy::{self, angle_deg};
use crate::error::{Error, Result};
use crate::geometry::{axis_angle, Similarity, Vec3};

/// Geometry and acquisition parameters of a phantom.
///
/// The LV cavity is an ellipsoid of revolution (`lv_radius_mm`,
/// `lv_long_axis_mm`) truncated at `valve_height_mm`, wrapped by a myocardium
/// of constant thickness. The RV cavity is a crescent on the septal side whose
/// maximal width is `rv_gap_mm`. Atria and aorta sit above the valve plane.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomSpec {
    pub subject_id: String,
    pub lv_radius_mm: f64,
    pub lv_long_axis_mm: f64,
    pub wall_mm: f64,
    /// Height of the valve plane above the ellipsoid centre.
    pub valve_height_mm: f64,
    pub rv_gap_mm: f64,
    /// RV apex depth as a fraction of the epicardial long semi-axis.
    pub rv_depth_fraction: f64,
    pub la_height_mm: f64,
    pub ra_height_mm: f64,
    pub aorta_height_mm: f64,
    /// Relative LV cavity volume per frame; its length is the frame count.
    pub volume_transient: Vec<f64>,
    pub inplane_spacing_mm: f64,
    pub sax_slice_mm: f64,
    pub lax_thickness_mm: f64,
    /// Extra field of view around the heart.
    pub margin_mm: f64,
    /// Rotation (axis, angle in degrees) and translation placing the heart
    /// frame in patient coordinates.
    pub rotation_axis: [f64; 3],
    pub rotation_deg: f64,
    pub translation_mm: [f64; 3],
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            subject_id: "phantom".into(),
            lv_radius_mm: 26.0,
            lv_long_axis_mm: 48.0,
            wall_mm: 9.0,
            valve_height_mm: 0.0,
            rv_gap_mm: 20.0,
            rv_depth_fraction: 0.55,
            la_height_mm: 30.0,
            ra_height_mm: 30.0,
            aorta_height_mm: 25.0,
            volume_transient: vec![1.0, 0.6],
            inplane_spacing_mm: 1.8,
            sax_slice_mm: 8.0,
            lax_thickness_mm: 6.0,
            margin_mm: 8.0,
            rotation_axis: [1.0, 0.3, 0.0],
            rotation_deg: -20.0,
            translation_mm: [12.0, -30.0, 45.0],
        }
    }
}

/// Analytic quantities recorded alongside the rasterised views.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhantomTruth {
    /// LV cavity volume per frame (mL).
    pub lv_cavity_ml: Vec<f64>,
    /// LV myocardial volume per frame (mL).
    pub lv_myocardium_ml: Vec<f64>,
    /// RV cavity volume per frame (mL), by quadrature.
    pub rv_cavity_ml: Vec<f64>,
    /// Cavity scale factor per frame.
    pub scale: Vec<f64>,
    pub heart_to_patient: [[f64; 4]; 4],
}

/// Frame-specific geometry in the heart frame.
struct FrameGeometry {
    a: f64,
    c: f64,
    w: f64,
    zv: f64,
    z_rv_bottom: f64,
    gap: f64,
    la_h: f64,
    ra_h: f64,
    ao_h: f64,
    opening_radius: f64,
}

impl FrameGeometry {
    fn new(spec: &PhantomSpec, scale: f64) -> Self {
        let a = spec.lv_radius_mm * scale;
        let c = spec.lv_long_axis_mm * scale;
        let w = spec.wall_mm;
        let zv = spec.valve_height_mm;
        let opening_radius = if zv.abs() < c {
            a * (1.0 - zv * zv / (c * c)).sqrt()
        } else {
            0.0
        };
        FrameGeometry {
            a,
            c,
            w,
            zv,
            z_rv_bottom: -spec.rv_depth_fraction * (c + w),
            gap: spec.rv_gap_mm * scale,
            la_h: spec.la_height_mm,
            ra_h: spec.ra_height_mm,
            ao_h: spec.aorta_height_mm,
            opening_radius,
        }
    }

    fn epi_radius(&self, z: f64) -> f64 {
        let ce = self.c + self.w;
        if z.abs() >= ce {
            0.0
        } else {
            (self.a + self.w) * (1.0 - z * z / (ce * ce)).sqrt()
        }
    }

    fn rv_gap(&self, theta_deg: f64, z: f64) -> f64 {
        if z <= self.z_rv_bottom || z > self.zv {
            return 0.0;
        }
        let frac = (z - self.z_rv_bottom) / (self.zv - self.z_rv_bottom);
        self.gap * anatomy::rv_gap_profile(theta_deg) * anatomy::rv_vertical_profile(frac)
    }

    fn classify(&self, p: &Vec3) -> Option<Structure> {
        let r2 = p.x * p.x + p.y * p.y;
        let z = p.z;
        if z <= self.zv {
            let cav = r2 / (self.a * self.a) + z * z / (self.c * self.c);
            if cav <= 1.0 {
                return Some(Structure::LvCavity);
            }
            let ae = self.a + self.w;
            let ce = self.c + self.w;
            if r2 / (ae * ae) + z * z / (ce * ce) <= 1.0 {
                return Some(Structure::LvMyocardium);
            }
            let theta = angle_deg(p);
            if anatomy::in_rv_sector(theta) {
                let g = self.rv_gap(theta, z);
                if g > 0.0 && r2.sqrt() <= self.epi_radius(z) + g {
                    return Some(Structure::RvCavity);
                }
            }
            return None;
        }
        let height = z - self.zv;
        let r = r2.sqrt();
        if r <= self.opening_radius {
            if anatomy::is_aortic(p, self.opening_radius) {
                if height <= self.ao_h {
                    return Some(Structure::Aorta);
                }
            } else if height <= self.la_h {
                return Some(Structure::LaCavity);
            }
            return None;
        }
        let theta = angle_deg(p);
        if height <= self.ra_h && anatomy::in_rv_sector(theta) && !anatomy::is_pulmonary(theta) {
            let re = self.epi_radius(self.zv);
            let g = self.rv_gap(theta, self.zv);
            if r > re && r <= re + g {
                return Some(Structure::RaCavity);
            }
        }
        None
    }

    fn lv_cavity_volume(&self) -> f64 {
        truncated_ellipsoid_volume(self.a, self.c, self.zv)
    }

    fn lv_myocardium_volume(&self) -> f64 {
        truncated_ellipsoid_volume(self.a + self.w, self.c + self.w, self.zv) - self.lv_cavity_volume()
    }

    fn rv_cavity_volume(&self) -> f64 {
        let nz = 600;
        let nth = 400;
        let t0 = anatomy::deg(anatomy::RV_SECTOR_START_DEG);
        let t1 = anatomy::deg(anatomy::RV_SECTOR_END_DEG);
        let dz = (self.zv - self.z_rv_bottom) / nz as f64;
        let dt = (t1 - t0) / nth as f64;
        let mut acc = 0.0;
        for iz in 0..nz {
            let z = self.z_rv_bottom + (iz as f64 + 0.5) * dz;
            let re = self.epi_radius(z);
            for it in 0..nth {
                let th = (t0 + (it as f64 + 0.5) * dt).to_degrees();
                let g = self.rv_gap(th, z);
                acc += 0.5 * ((re + g).powi(2) - re * re) * dt * dz;
            }
        }
        acc
    }
}

/// Volume of `{x²/a² + y²/a² + z²/c² <= 1, z <= top}`.
pub(crate) fn truncated_ellipsoid_volume(a: f64, c: f64, top: f64) -> f64 {
    let zt = top.clamp(-c, c);
    let prim = |z: f64| z - z * z * z / (3.0 * c * c);
    PI * a * a * (prim(zt) - prim(-c))
}

impl PhantomSpec {
    fn validate(&self) -> Result<()> {
        let positive = [
            ("lv_radius_mm", self.lv_radius_mm),
            ("lv_long_axis_mm", self.lv_long_axis_mm),
            ("wall_mm", self.wall_mm),
            ("inplane_spacing_mm", self.inplane_spacing_mm),
            ("sax_slice_mm", self.sax_slice_mm),
            ("lax_thickness_mm", self.lax_thickness_mm),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidPhantom(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [
            ("rv_gap_mm", self.rv_gap_mm),
            ("la_height_mm", self.la_height_mm),
            ("ra_height_mm", self.ra_height_mm),
            ("aorta_height_mm", self.aorta_height_mm),
            ("margin_mm", self.margin_mm),
        ] {
            if !(v >= 0.0) {
                return Err(Error::InvalidPhantom(format!("{name} must be non-negative, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.rv_depth_fraction) {
            return Err(Error::InvalidPhantom("rv_depth_fraction must lie in [0, 1)".into()));
        }
        if self.volume_transient.is_empty() {
            return Err(Error::InvalidPhantom("volume_transient needs at least one frame".into()));
        }
        if self.volume_transient.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::InvalidPhantom("volume_transient entries must be positive".into()));
        }
        if self.valve_height_mm <= -self.lv_long_axis_mm * 0.9 {
            return Err(Error::InvalidPhantom("valve plane cuts away the whole cavity".into()));
        }
        Ok(())
    }

    pub fn heart_to_patient(&self) -> Similarity {
        let axis = Vec3::from(self.rotation_axis);
        let rotation = if axis.norm() > 0.0 && self.rotation_deg != 0.0 {
            axis_angle(&axis, self.rotation_deg.to_radians())
        } else {
            nalgebra::Matrix3::identity()
        };
        Similarity::rigid(rotation, Vec3::from(self.translation_mm))
    }

    fn scales(&self) -> Vec<f64> {
        self.volume_transient.iter().map(|v| v.cbrt()).collect()
    }

    /// Deterministic member `k` of a family of plausible phantoms: sizes,
    /// pose and a five-frame transient vary with `k`.
    pub fn variant(k: usize) -> PhantomSpec {
        // additive recurrences with irrational steps spread the parameters
        let q = |step: f64| (0.5 + k as f64 * step).fract();
        let base = PhantomSpec::default();
        let es = 0.55 + 0.15 * q(0.618_034);
        PhantomSpec {
            subject_id: format!("phantom{k:03}"),
            lv_radius_mm: 23.0 + 5.0 * q(0.414_214),
            lv_long_axis_mm: 44.0 + 8.0 * q(0.732_051),
            wall_mm: 8.0 + 2.0 * q(0.236_068),
            rv_gap_mm: 17.0 + 5.0 * q(0.645_751),
            volume_transient: vec![1.0, 0.5 * (1.0 + es), es, 0.5 * (1.0 + es), 1.0],
            rotation_axis: [1.0, 0.6 * q(0.162_278) - 0.3, 0.2],
            rotation_deg: -30.0 + 20.0 * q(0.872_983),
            translation_mm: [10.0 * q(0.316_625), -30.0, 40.0 + 10.0 * q(0.123_106)],
            ..base
        }
    }
}

/// Rasterises the phantom into SAX and three LAX label volumes (standard
/// label codes) and records its analytic volumes.
pub fn synth_phantom(spec: &PhantomSpec) -> Result<(ViewSet, PhantomTruth)> {
    spec.validate()?;
    let scales = spec.scales();
    let frames: Vec<FrameGeometry> = scales.iter().map(|s| FrameGeometry::new(spec, *s)).collect();
    let smax = scales.iter().cloned().fold(0.0, f64::max);
    let big = FrameGeometry::new(spec, smax);

    let half_width = big.a + big.w + big.gap + spec.margin_mm;
    let z_low = -(big.c + big.w) - spec.margin_mm;
    let above = spec.la_height_mm.max(spec.ra_height_mm).max(spec.aorta_height_mm);
    let z_high = spec.valve_height_mm.min(big.c + big.w) + above + spec.margin_mm;
    let h2p = spec.heart_to_patient();
    let h = spec.inplane_spacing_mm;

    let mut set = ViewSet::new(spec.subject_id.clone());
    for view in View::ALL {
        let (u, v, n, origin, dims, spacing) = if view == View::Sax {
            let nxy = (2.0 * half_width / h).ceil() as usize + 1;
            let dz = spec.sax_slice_mm;
            let z_top = spec.valve_height_mm.min(big.c) - 0.5 * dz;
            let nz = ((z_top - (-(big.c + big.w))) / dz).floor() as usize + 1;
            let z0 = z_top - (nz as f64 - 1.0) * dz;
            (
                Vec3::x(),
                Vec3::y(),
                Vec3::z(),
                Vec3::new(-half_width, -half_width, z0),
                [nxy, nxy, nz],
                [h, h, dz],
            )
        } else {
            let angle = match view {
                View::Lax2ch => anatomy::PLANE_2CH_DEG,
                View::Lax3ch => anatomy::PLANE_3CH_DEG,
                _ => anatomy::PLANE_4CH_DEG,
            };
            let u = anatomy::plane_direction(angle);
            let v = Vec3::z();
            let n = u.cross(&v);
            let nu = (2.0 * half_width / h).ceil() as usize + 1;
            let nv = ((z_high - z_low) / h).ceil() as usize + 1;
            (
                u,
                v,
                n,
                -half_width * u + z_low * v,
                [nu, nv, 1],
                [h, h, spec.lax_thickness_mm],
            )
        };

        let map = LabelMap::standard(view);
        let codes: Vec<(Structure, i32)> = Structure::ALL
            .iter()
            .map(|s| (*s, map.code(*s).unwrap_or(0)))
            .collect();
        let code_of = |s: Structure| codes.iter().find(|(k, _)| *k == s).map(|(_, c)| *c).unwrap_or(0);

        let nt = frames.len();
        let mut data = vec![0i32; dims[0] * dims[1] * dims[2] * nt];
        let per_frame = dims[0] * dims[1] * dims[2];
        for (t, geom) in frames.iter().enumerate() {
            // frames with identical scale share their raster
            if let Some(prev) = (0..t).find(|&p| scales[p] == scales[t]) {
                let (head, tail) = data.split_at_mut(t * per_frame);
                tail[..per_frame].copy_from_slice(&head[prev * per_frame..(prev + 1) * per_frame]);
                continue;
            }
            let base = t * per_frame;
            for k in 0..dims[2] {
                for j in 0..dims[1] {
                    for i in 0..dims[0] {
                        let p = origin + u * (i as f64 * spacing[0]) + v * (j as f64 * spacing[1]) + n * (k as f64 * spacing[2]);
                        if let Some(s) = geom.classify(&p) {
                            data[base + i + dims[0] * (j + dims[1] * k)] = code_of(s);
                        }
                    }
                }
            }
        }

        let mut affine = Matrix4::identity();
        let r = h2p.rotation;
        affine.fixed_view_mut::<3, 1>(0, 0).copy_from(&(r * u * spacing[0]));
        affine.fixed_view_mut::<3, 1>(0, 1).copy_from(&(r * v * spacing[1]));
        affine.fixed_view_mut::<3, 1>(0, 2).copy_from(&(r * n * spacing[2]));
        affine.fixed_view_mut::<3, 1>(0, 3).copy_from(&h2p.apply(&origin));
        let vol = LabelVolume::new([dims[0], dims[1], dims[2], nt], spacing, affine, data, view, map)?;
        set.insert(vol)?;
    }

    let m = h2p.to_matrix();
    let mut heart_to_patient = [[0.0; 4]; 4];
    for (r, row) in heart_to_patient.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = m[(r, c)];
        }
    }
    let truth = PhantomTruth {
        lv_cavity_ml: frames.iter().map(|f| f.lv_cavity_volume() / 1000.0).collect(),
        lv_myocardium_ml: frames.iter().map(|f| f.lv_myocardium_volume() / 1000.0).collect(),
        rv_cavity_ml: frames.iter().map(|f| f.rv_cavity_volume() / 1000.0).collect(),
        scale: scales,
        heart_to_patient,
    };
    Ok((set, truth))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lv_count(vs: &ViewSet, view: View, t: usize) -> usize {
        let v = vs.get(view).unwrap();
        v.count_label(t, v.code(Structure::LvCavity).unwrap(), None).unwrap()
    }

    #[test]
    fn full_ellipsoid_voxel_volume() {
        let spec = PhantomSpec {
            lv_radius_mm: 25.0,
            lv_long_axis_mm: 45.0,
            valve_height_mm: 60.0,
            rv_gap_mm: 0.0,
            la_height_mm: 0.0,
            ra_height_mm: 0.0,
            aorta_height_mm: 0.0,
            volume_transient: vec![1.0],
            inplane_spacing_mm: 1.0,
            sax_slice_mm: 1.0,
            rotation_deg: 0.0,
            ..Default::default()
        };
        let (vs, truth) = synth_phantom(&spec).unwrap();
        let analytic = 4.0 / 3.0 * PI * 25.0 * 25.0 * 45.0;
        assert!((truth.lv_cavity_ml[0] * 1000.0 - analytic).abs() < 1e-6 * analytic);
        let voxels = lv_count(&vs, View::Sax, 0) as f64;
        assert!((voxels - analytic).abs() / analytic < 0.03, "{voxels} vs {analytic}");
    }

    #[test]
    fn transient_minimum_is_preserved() {
        let mut transient: Vec<f64> = (0..25).map(|t| 1.0 - 0.4 * (PI * t as f64 / 34.0).sin()).collect();
        transient[17] = 0.5;
        let spec = PhantomSpec {
            volume_transient: transient,
            inplane_spacing_mm: 2.5,
            ..Default::default()
        };
        let (vs, _) = synth_phantom(&spec).unwrap();
        let counts: Vec<usize> = (0..25).map(|t| lv_count(&vs, View::Sax, t)).collect();
        let min = *counts.iter().min().unwrap();
        assert_eq!(counts.iter().position(|c| *c == min), Some(17));
    }

    #[test]
    fn zero_height_atria_are_absent() {
        let spec = PhantomSpec {
            la_height_mm: 0.0,
            ra_height_mm: 0.0,
            volume_transient: vec![1.0],
            inplane_spacing_mm: 2.0,
            ..Default::default()
        };
        let (vs, _) = synth_phantom(&spec).unwrap();
        for view in [View::Lax2ch, View::Lax3ch, View::Lax4ch] {
            let v = vs.get(view).unwrap();
            for s in [Structure::LaCavity, Structure::RaCavity] {
                if let Some(code) = v.code(s) {
                    assert_eq!(v.count_label(0, code, None).unwrap(), 0, "{view} {s:?}");
                }
            }
        }
        let with_atria = PhantomSpec {
            volume_transient: vec![1.0],
            inplane_spacing_mm: 2.0,
            ..Default::default()
        };
        let (vs, _) = synth_phantom(&with_atria).unwrap();
        let v = vs.get(View::Lax4ch).unwrap();
        assert!(v.count_label(0, v.code(Structure::LaCavity).unwrap(), None).unwrap() > 50);
        assert!(v.count_label(0, v.code(Structure::RaCavity).unwrap(), None).unwrap() > 20);
    }

    #[test]
    fn rejects_non_physical_specs() {
        for bad in [
            PhantomSpec { wall_mm: 0.0, ..Default::default() },
            PhantomSpec { lv_radius_mm: -1.0, ..Default::default() },
            PhantomSpec { volume_transient: vec![], ..Default::default() },
        ] {
            assert!(matches!(synth_phantom(&bad), Err(Error::InvalidPhantom(_))));
        }
    }

    #[test]
    fn truncated_volume_formula() {
        // half ellipsoid
        let v = truncated_ellipsoid_volume(2.0, 3.0, 0.0);
        assert!((v - 2.0 / 3.0 * PI * 4.0 * 3.0).abs() < 1e-12);
    }
}
