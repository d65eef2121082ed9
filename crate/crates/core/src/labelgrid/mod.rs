//! Segmentation label volumes: storage, queries, NIFTI-1 I/O and synthetic
//! phantoms.

pub mod nifti;
pub mod phantom;

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use nalgebra::Matrix4;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{apply_affine, Vec3};

pub use nifti::{read_nifti, write_nifti, NiftiDatatype};
pub use phantom::{synth_phantom, PhantomSpec, PhantomTruth};

/// CMR acquisition view.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum View {
    #[serde(rename = "LAX2CH")]
    Lax2ch,
    #[serde(rename = "LAX3CH")]
    Lax3ch,
    #[serde(rename = "LAX4CH")]
    Lax4ch,
    #[serde(rename = "SAX")]
    Sax,
}

impl View {
    pub const ALL: [View; 4] = [View::Lax2ch, View::Lax3ch, View::Lax4ch, View::Sax];

    pub fn is_lax(self) -> bool {
        self != View::Sax
    }

    pub fn name(self) -> &'static str {
        match self {
            View::Lax2ch => "LAX2CH",
            View::Lax3ch => "LAX3CH",
            View::Lax4ch => "LAX4CH",
            View::Sax => "SAX",
        }
    }

    /// Structures segmented in this view by default.
    pub fn default_structures(self) -> &'static [Structure] {
        use Structure::*;
        match self {
            View::Lax2ch => &[LvCavity, LvMyocardium, LaCavity],
            // the left atrium is needed for the mitral landmarks of this view
            View::Lax3ch => &[LvCavity, LvMyocardium, RvCavity, LaCavity, RaCavity, Aorta],
            View::Lax4ch => &[LvCavity, LvMyocardium, RvCavity, LaCavity, RaCavity],
            View::Sax => &[LvCavity, LvMyocardium, RvCavity],
        }
    }
}

impl fmt::Display for View {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for View {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "LAX2CH" | "2CH" => Ok(View::Lax2ch),
            "LAX3CH" | "3CH" => Ok(View::Lax3ch),
            "LAX4CH" | "4CH" => Ok(View::Lax4ch),
            "SAX" => Ok(View::Sax),
            other => Err(Error::Config(format!("unknown view {other:?}"))),
        }
    }
}

/// Anatomical structure that may carry a label code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Structure {
    LvCavity,
    LvMyocardium,
    RvCavity,
    LaCavity,
    RaCavity,
    Aorta,
}

impl Structure {
    pub const ALL: [Structure; 6] = [
        Structure::LvCavity,
        Structure::LvMyocardium,
        Structure::RvCavity,
        Structure::LaCavity,
        Structure::RaCavity,
        Structure::Aorta,
    ];

    /// Code used by [`LabelMap::standard`].
    pub fn standard_code(self) -> i32 {
        match self {
            Structure::LvCavity => 1,
            Structure::LvMyocardium => 2,
            Structure::RvCavity => 3,
            Structure::LaCavity => 4,
            Structure::RaCavity => 5,
            Structure::Aorta => 6,
        }
    }
}

/// Name to integer code assignment for one view's structures.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelMap(pub BTreeMap<Structure, i32>);

impl LabelMap {
    /// Codes 1..=6 for the structures segmented in `view`.
    pub fn standard(view: View) -> Self {
        LabelMap(
            view.default_structures()
                .iter()
                .map(|s| (*s, s.standard_code()))
                .collect(),
        )
    }

    pub fn code(&self, s: Structure) -> Option<i32> {
        self.0.get(&s).copied()
    }

    pub fn contains_code(&self, code: i32) -> bool {
        self.0.values().any(|c| *c == code)
    }
}

/// A 2D+t or 3D+t integer label grid in patient millimetres.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVolume {
    /// (nx, ny, nz, nt)
    pub dims: [usize; 4],
    pub spacing: [f64; 3],
    /// voxel index -> patient mm
    pub affine: Matrix4<f64>,
    /// x fastest, then y, z, t
    pub data: Vec<i32>,
    pub view: View,
    pub label_map: LabelMap,
}

impl LabelVolume {
    /// Builds a volume after checking the structural invariants.
    pub fn new(
        dims: [usize; 4],
        spacing: [f64; 3],
        affine: Matrix4<f64>,
        data: Vec<i32>,
        view: View,
        label_map: LabelMap,
    ) -> Result<Self> {
        let vol = LabelVolume {
            dims,
            spacing,
            affine,
            data,
            view,
            label_map,
        };
        vol.validate()?;
        Ok(vol)
    }

    pub fn validate(&self) -> Result<()> {
        let [nx, ny, nz, nt] = self.dims;
        if nx == 0 || ny == 0 || nz == 0 || nt == 0 {
            return Err(Error::InvalidVolume(format!("zero dimension in {:?}", self.dims)));
        }
        if self.view.is_lax() && nz != 1 {
            return Err(Error::InvalidVolume(format!(
                "{} volume must have a single slice, got nz = {nz}",
                self.view
            )));
        }
        if self.data.len() != nx * ny * nz * nt {
            return Err(Error::InvalidVolume(format!(
                "data length {} does not match dims {:?}",
                self.data.len(),
                self.dims
            )));
        }
        let block = self.affine.fixed_view::<3, 3>(0, 0).into_owned();
        if block.determinant().abs() < 1e-12 {
            return Err(Error::InvalidVolume("singular affine".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for &v in &self.data {
            if v != 0 && seen.insert(v) && !self.label_map.contains_code(v) {
                return Err(Error::InvalidVolume(format!(
                    "label code {v} not present in the {} label map",
                    self.view
                )));
            }
        }
        Ok(())
    }

    pub fn nx(&self) -> usize {
        self.dims[0]
    }
    pub fn ny(&self) -> usize {
        self.dims[1]
    }
    pub fn nz(&self) -> usize {
        self.dims[2]
    }
    pub fn nt(&self) -> usize {
        self.dims[3]
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize, t: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * (k + self.dims[2] * t))
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize, t: usize) -> i32 {
        self.data[self.index(i, j, k, t)]
    }

    /// Borrowed view of one 2D slice of one frame.
    pub fn slice(&self, k: usize, t: usize) -> &[i32] {
        let n = self.dims[0] * self.dims[1];
        let start = self.index(0, 0, k, t);
        &self.data[start..start + n]
    }

    pub fn code(&self, s: Structure) -> Option<i32> {
        self.label_map.code(s)
    }

    /// Maps a (possibly fractional) voxel index to patient millimetres.
    pub fn index_to_patient(&self, ijk: [f64; 3]) -> Vec3 {
        apply_affine(&self.affine, &Vec3::new(ijk[0], ijk[1], ijk[2]))
    }

    /// Patient position of the voxel centre at integer index `ijk`.
    pub fn voxel_to_patient(&self, ijk: [usize; 3]) -> Result<Vec3> {
        for a in 0..3 {
            if ijk[a] >= self.dims[a] {
                return Err(Error::OutOfBounds(format!(
                    "voxel {:?} outside dims {:?}",
                    ijk,
                    &self.dims[..3]
                )));
            }
        }
        Ok(self.index_to_patient([ijk[0] as f64, ijk[1] as f64, ijk[2] as f64]))
    }

    /// Number of voxels equal to `label` in `frame`, optionally restricted to
    /// a slice range.
    pub fn count_label(&self, frame: usize, label: i32, slices: Option<Range<usize>>) -> Result<usize> {
        if frame >= self.nt() {
            return Err(Error::OutOfBounds(format!("frame {frame} >= nt {}", self.nt())));
        }
        let range = slices.unwrap_or(0..self.nz());
        if range.end > self.nz() || range.start > range.end {
            return Err(Error::OutOfBounds(format!(
                "slice range {range:?} outside 0..{}",
                self.nz()
            )));
        }
        Ok(range
            .map(|k| self.slice(k, frame).iter().filter(|&&v| v == label).count())
            .sum())
    }

    /// Voxel volume in mm³.
    pub fn voxel_volume_mm3(&self) -> f64 {
        self.spacing.iter().product()
    }
}

/// All views acquired for one subject.
#[derive(Debug, Clone, Default)]
pub struct ViewSet {
    pub subject_id: String,
    pub volumes: BTreeMap<View, LabelVolume>,
}

impl ViewSet {
    pub fn new(subject_id: impl Into<String>) -> Self {
        ViewSet {
            subject_id: subject_id.into(),
            volumes: BTreeMap::new(),
        }
    }

    /// Adds a view; at most one volume per view and all share nt.
    pub fn insert(&mut self, vol: LabelVolume) -> Result<()> {
        if self.volumes.contains_key(&vol.view) {
            return Err(Error::InvalidVolume(format!("duplicate {} view", vol.view)));
        }
        if let Some(nt) = self.nt() {
            if nt != vol.nt() {
                return Err(Error::InvalidVolume(format!(
                    "{} has {} frames, other views have {nt}",
                    vol.view,
                    vol.nt()
                )));
            }
        }
        self.volumes.insert(vol.view, vol);
        Ok(())
    }

    pub fn get(&self, view: View) -> Option<&LabelVolume> {
        self.volumes.get(&view)
    }

    pub fn nt(&self) -> Option<usize> {
        self.volumes.values().next().map(|v| v.nt())
    }

    pub fn is_empty(&self) -> bool {
        self.volumes.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(view: View, dims: [usize; 4], data: Vec<i32>) -> LabelVolume {
        LabelVolume::new(dims, [1.0; 3], Matrix4::identity(), data, view, LabelMap::standard(view)).unwrap()
    }

    #[test]
    fn identity_affine_maps_indices() {
        let v = small(View::Sax, [4, 4, 2, 1], vec![0; 32]);
        assert_eq!(v.voxel_to_patient([2, 3, 0]).unwrap(), Vec3::new(2.0, 3.0, 0.0));
        assert!(v.voxel_to_patient([4, 0, 0]).is_err());
    }

    #[test]
    fn translation_affine() {
        let mut m = Matrix4::identity();
        m[(0, 3)] = 10.0;
        let v = LabelVolume::new([1, 1, 1, 1], [1.0; 3], m, vec![0], View::Sax, LabelMap::standard(View::Sax))
            .unwrap();
        assert_eq!(v.voxel_to_patient([0, 0, 0]).unwrap(), Vec3::new(10.0, 0.0, 0.0));
    }

    #[test]
    fn count_with_slice_restriction() {
        let dims = [3, 3, 9, 2];
        let mut data = vec![0; 3 * 3 * 9 * 2];
        // one voxel of label 1 in every slice of frame 1
        for k in 0..9 {
            data[4 + 9 * (k + 9)] = 1;
        }
        let v = small(View::Sax, dims, data);
        assert_eq!(v.count_label(0, 1, None).unwrap(), 0);
        assert_eq!(v.count_label(1, 1, None).unwrap(), 9);
        assert_eq!(v.count_label(1, 1, Some(2..7)).unwrap(), 5);
        assert!(v.count_label(2, 1, None).is_err());
        assert!(v.count_label(1, 1, Some(5..10)).is_err());
    }

    #[test]
    fn rejects_unknown_codes_and_thick_lax() {
        let err = LabelVolume::new(
            [1, 1, 1, 1],
            [1.0; 3],
            Matrix4::identity(),
            vec![9],
            View::Sax,
            LabelMap::standard(View::Sax),
        );
        assert!(err.is_err());
        let err = LabelVolume::new(
            [1, 1, 2, 1],
            [1.0; 3],
            Matrix4::identity(),
            vec![0, 0],
            View::Lax2ch,
            LabelMap::standard(View::Lax2ch),
        );
        assert!(err.is_err());
    }

    #[test]
    fn viewset_enforces_shared_nt() {
        let mut vs = ViewSet::new("s");
        vs.insert(small(View::Sax, [1, 1, 1, 2], vec![0, 0])).unwrap();
        assert!(vs.insert(small(View::Lax2ch, [1, 1, 1, 3], vec![0; 3])).is_err());
        assert!(vs.insert(small(View::Sax, [1, 1, 1, 2], vec![0, 0])).is_err());
    }
}
