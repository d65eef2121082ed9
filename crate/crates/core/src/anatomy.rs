//! Canonical heart-frame conventions shared by the phantom generator and the
//! shipped template.
//!
//! Heart frame: `z` runs from apex to base with the base (valve) plane at the
//! top, `x` points from the LV axis towards the lateral wall and `y` is
//! anterior. The RV wraps the septal side (around `-x`). Angles are measured
//! counter-clockwise about `+z` from `+x`.

use std::f64::consts::PI;

use crate::geometry::Vec3;

pub fn deg(d: f64) -> f64 {
    d * PI / 180.0
}

/// Angular extent of the RV attachment on the LV epicardium (degrees). The
/// start is the anterior insertion, the end the inferior insertion.
pub const RV_SECTOR_START_DEG: f64 = 112.5;
pub const RV_SECTOR_END_DEG: f64 = 247.5;

/// Fraction of the RV sector (from the anterior insertion) occupied by the
/// pulmonary outflow; the rest of the RV opening is tricuspid.
pub const PULMONARY_FRACTION: f64 = 0.35;

/// Direction of the aortic outflow and the angular window it occupies.
pub const AORTIC_DIRECTION_DEG: f64 = 135.0;
pub const AORTIC_WINDOW_DEG: (f64, f64) = (100.0, 170.0);
/// The aortic orifice lies beyond this fraction of the LV opening radius
/// along [`AORTIC_DIRECTION_DEG`].
pub const AORTIC_CHORD_FRACTION: f64 = 0.5;

/// In-plane direction (degrees) of each long-axis imaging plane; every plane
/// contains the long axis.
pub const PLANE_2CH_DEG: f64 = 90.0;
pub const PLANE_3CH_DEG: f64 = 135.0;
pub const PLANE_4CH_DEG: f64 = 0.0;

/// Polar angle in degrees, wrapped to [0, 360).
pub fn angle_deg(p: &Vec3) -> f64 {
    let a = p.y.atan2(p.x).to_degrees();
    if a < 0.0 {
        a + 360.0
    } else {
        a
    }
}

pub fn in_rv_sector(theta_deg: f64) -> bool {
    (RV_SECTOR_START_DEG..=RV_SECTOR_END_DEG).contains(&theta_deg)
}

/// Position within the RV sector in [0, 1].
pub fn rv_sector_fraction(theta_deg: f64) -> f64 {
    (theta_deg - RV_SECTOR_START_DEG) / (RV_SECTOR_END_DEG - RV_SECTOR_START_DEG)
}

/// Angular profile of the RV cavity gap: zero at both insertions.
pub fn rv_gap_profile(theta_deg: f64) -> f64 {
    if !in_rv_sector(theta_deg) {
        return 0.0;
    }
    (PI * rv_sector_fraction(theta_deg)).sin().max(0.0).powf(0.5)
}

/// Apicobasal profile of the RV gap, zero at the RV apex and one at the base.
pub fn rv_vertical_profile(frac: f64) -> f64 {
    (0.5 * PI * frac.clamp(0.0, 1.0)).sin().powf(0.5)
}

pub fn is_pulmonary(theta_deg: f64) -> bool {
    in_rv_sector(theta_deg) && rv_sector_fraction(theta_deg) < PULMONARY_FRACTION
}

/// Whether a point of the LV opening (heart frame, any height) lies in the
/// aortic orifice, given the opening radius.
pub fn is_aortic(p: &Vec3, opening_radius: f64) -> bool {
    let theta = angle_deg(p);
    let d = deg(AORTIC_DIRECTION_DEG);
    theta > AORTIC_WINDOW_DEG.0
        && theta < AORTIC_WINDOW_DEG.1
        && p.x * d.cos() + p.y * d.sin() > AORTIC_CHORD_FRACTION * opening_radius
}

/// Unit in-plane direction of a long-axis plane.
pub fn plane_direction(deg_angle: f64) -> Vec3 {
    let a = deg(deg_angle);
    Vec3::new(a.cos(), a.sin(), 0.0)
}
