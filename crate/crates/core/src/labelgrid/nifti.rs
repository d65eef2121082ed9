//! Strict NIFTI-1 single-file (`.nii`) support.
//!
//! Only uncompressed files with uint8, int16, uint16 or integral float32
//! voxels are read. Either byte order is accepted; it is detected from the
//! `sizeof_hdr` field.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{Matrix3, Matrix4};

use super::{LabelMap, LabelVolume, View};
use crate::error::{Error, Result};

const HEADER_SIZE: usize = 348;
const MAGIC_SINGLE: &[u8; 4] = b"n+1\0";

/// Voxel datatypes accepted by [`read_nifti`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NiftiDatatype {
    Uint8,
    Int16,
    Uint16,
    Float32,
}

impl NiftiDatatype {
    fn from_code(code: i16) -> Result<Self> {
        match code {
            2 => Ok(NiftiDatatype::Uint8),
            4 => Ok(NiftiDatatype::Int16),
            512 => Ok(NiftiDatatype::Uint16),
            16 => Ok(NiftiDatatype::Float32),
            other => Err(Error::UnsupportedDatatype(other)),
        }
    }

    pub fn code(self) -> i16 {
        match self {
            NiftiDatatype::Uint8 => 2,
            NiftiDatatype::Int16 => 4,
            NiftiDatatype::Uint16 => 512,
            NiftiDatatype::Float32 => 16,
        }
    }

    pub fn bytes(self) -> usize {
        match self {
            NiftiDatatype::Uint8 => 1,
            NiftiDatatype::Int16 | NiftiDatatype::Uint16 => 2,
            NiftiDatatype::Float32 => 4,
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    big_endian: bool,
}

impl Reader<'_> {
    fn bytes<const N: usize>(&self, off: usize) -> [u8; N] {
        let mut b = [0u8; N];
        b.copy_from_slice(&self.buf[off..off + N]);
        b
    }
    fn i16(&self, off: usize) -> i16 {
        let b = self.bytes::<2>(off);
        if self.big_endian {
            i16::from_be_bytes(b)
        } else {
            i16::from_le_bytes(b)
        }
    }
    fn u16(&self, off: usize) -> u16 {
        let b = self.bytes::<2>(off);
        if self.big_endian {
            u16::from_be_bytes(b)
        } else {
            u16::from_le_bytes(b)
        }
    }
    fn f32(&self, off: usize) -> f32 {
        let b = self.bytes::<4>(off);
        if self.big_endian {
            f32::from_be_bytes(b)
        } else {
            f32::from_le_bytes(b)
        }
    }
}

/// Reads a label volume from an uncompressed NIFTI-1 file.
///
/// The affine comes from the `srow_*` rows when `sform_code > 0`, else from
/// the quaternion when `qform_code > 0`, else it is the diagonal spacing
/// matrix.
pub fn read_nifti(path: impl AsRef<Path>, view: View, label_map: LabelMap) -> Result<LabelVolume> {
    let path = path.as_ref();
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    if buf.len() >= 2 && buf[0] == 0x1f && buf[1] == 0x8b {
        return Err(Error::GzipInput(path.to_path_buf()));
    }
    parse_nifti(&buf, view, label_map)
}

pub(crate) fn parse_nifti(buf: &[u8], view: View, label_map: LabelMap) -> Result<LabelVolume> {
    if buf.len() < HEADER_SIZE {
        return Err(Error::MalformedHeader(format!(
            "file is {} bytes, shorter than the 348-byte header",
            buf.len()
        )));
    }
    let le = i32::from_le_bytes([buf[0], buf[1], buf[2], buf[3]]);
    let be = i32::from_be_bytes([buf[0], buf[1], buf[2], buf[3]]);
    let big_endian = match (le, be) {
        (348, _) => false,
        (_, 348) => true,
        _ => {
            return Err(Error::MalformedHeader(format!(
                "sizeof_hdr is {le} (little-endian) / {be} (big-endian), expected 348"
            )))
        }
    };
    let r = Reader { buf, big_endian };
    if &buf[344..348] != MAGIC_SINGLE {
        return Err(Error::MalformedHeader(format!(
            "magic {:?} is not \"n+1\\0\" (only single-file NIFTI-1 is supported)",
            &buf[344..348]
        )));
    }

    let ndim = r.i16(40);
    if !(1..=7).contains(&ndim) {
        return Err(Error::MalformedHeader(format!("dim[0] = {ndim} outside 1..=7")));
    }
    let mut dims = [1usize; 4];
    for (a, d) in dims.iter_mut().enumerate() {
        if (a as i16) < ndim {
            let v = r.i16(42 + 2 * a);
            if v < 1 {
                return Err(Error::MalformedHeader(format!("dim[{}] = {v}", a + 1)));
            }
            *d = v as usize;
        }
    }
    for a in 4..ndim as usize {
        if r.i16(42 + 2 * a) > 1 {
            return Err(Error::MalformedHeader(format!(
                "dimension {} has extent > 1; only 3D+t volumes are supported",
                a + 1
            )));
        }
    }

    let datatype = NiftiDatatype::from_code(r.i16(70))?;
    let bitpix = r.i16(72);
    if bitpix as usize != datatype.bytes() * 8 {
        return Err(Error::MalformedHeader(format!(
            "bitpix {bitpix} inconsistent with datatype {datatype:?}"
        )));
    }

    let pixdim: Vec<f64> = (0..8).map(|i| r.f32(76 + 4 * i) as f64).collect();
    let spacing = [pixdim[1].abs(), pixdim[2].abs(), pixdim[3].abs()];
    if spacing.iter().any(|s| !s.is_finite() || *s <= 0.0) {
        return Err(Error::MalformedHeader(format!("non-positive pixdim {spacing:?}")));
    }

    let vox_offset = r.f32(108);
    if !vox_offset.is_finite() || vox_offset < HEADER_SIZE as f32 || vox_offset.fract() != 0.0 {
        return Err(Error::MalformedHeader(format!("vox_offset {vox_offset}")));
    }
    let vox_offset = vox_offset as usize;
    let slope = r.f32(112) as f64;
    let inter = r.f32(116) as f64;

    let qform_code = r.i16(252);
    let sform_code = r.i16(254);
    let affine = if sform_code > 0 {
        let mut m = Matrix4::identity();
        for row in 0..3 {
            for col in 0..4 {
                m[(row, col)] = r.f32(280 + 16 * row + 4 * col) as f64;
            }
        }
        m
    } else if qform_code > 0 {
        let (b, c, d) = (r.f32(256) as f64, r.f32(260) as f64, r.f32(264) as f64);
        let a = (1.0 - (b * b + c * c + d * d)).max(0.0).sqrt();
        let rot = Matrix3::new(
            a * a + b * b - c * c - d * d,
            2.0 * (b * c - a * d),
            2.0 * (b * d + a * c),
            2.0 * (b * c + a * d),
            a * a + c * c - b * b - d * d,
            2.0 * (c * d - a * b),
            2.0 * (b * d - a * c),
            2.0 * (c * d + a * b),
            a * a + d * d - c * c - b * b,
        );
        let qfac = if pixdim[0] < 0.0 { -1.0 } else { 1.0 };
        let scale = Matrix3::from_diagonal(&nalgebra::Vector3::new(spacing[0], spacing[1], qfac * spacing[2]));
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&(rot * scale));
        m[(0, 3)] = r.f32(268) as f64;
        m[(1, 3)] = r.f32(272) as f64;
        m[(2, 3)] = r.f32(276) as f64;
        m
    } else {
        let mut m = Matrix4::identity();
        m[(0, 0)] = spacing[0];
        m[(1, 1)] = spacing[1];
        m[(2, 2)] = spacing[2];
        m
    };

    let n: usize = dims.iter().product();
    let nbytes = n * datatype.bytes();
    if buf.len() < vox_offset + nbytes {
        return Err(Error::MalformedHeader(format!(
            "file holds {} data bytes after vox_offset, {} needed",
            buf.len().saturating_sub(vox_offset),
            nbytes
        )));
    }
    let scaled = slope != 0.0 && (slope != 1.0 || inter != 0.0);
    let mut data = Vec::with_capacity(n);
    for idx in 0..n {
        let off = vox_offset + idx * datatype.bytes();
        let raw = match datatype {
            NiftiDatatype::Uint8 => buf[off] as f64,
            NiftiDatatype::Int16 => r.i16(off) as f64,
            NiftiDatatype::Uint16 => r.u16(off) as f64,
            NiftiDatatype::Float32 => r.f32(off) as f64,
        };
        let v = if scaled { raw * slope + inter } else { raw };
        if !v.is_finite() || v.fract() != 0.0 {
            return Err(Error::InvalidVolume(format!(
                "non-integral label value {v} at voxel {idx}"
            )));
        }
        data.push(v as i32);
    }

    LabelVolume::new(dims, spacing, affine, data, view, label_map)
}

/// Writes a volume as little-endian NIFTI-1 with an sform affine. Labels are
/// stored as uint8 when they fit, int16 otherwise.
pub fn write_nifti(path: impl AsRef<Path>, vol: &LabelVolume) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_nifti(vol)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub(crate) fn encode_nifti(vol: &LabelVolume) -> Result<Vec<u8>> {
    let max = vol.data.iter().copied().max().unwrap_or(0);
    let min = vol.data.iter().copied().min().unwrap_or(0);
    let datatype = if min >= 0 && max <= 255 {
        NiftiDatatype::Uint8
    } else if min >= i16::MIN as i32 && max <= i16::MAX as i32 {
        NiftiDatatype::Int16
    } else {
        return Err(Error::InvalidVolume(format!("label range {min}..={max} does not fit int16")));
    };

    let mut h = vec![0u8; 352];
    let put_i16 = |h: &mut Vec<u8>, off: usize, v: i16| h[off..off + 2].copy_from_slice(&v.to_le_bytes());
    let put_f32 = |h: &mut Vec<u8>, off: usize, v: f32| h[off..off + 4].copy_from_slice(&v.to_le_bytes());
    h[0..4].copy_from_slice(&348i32.to_le_bytes());
    let ndim: i16 = if vol.nt() > 1 { 4 } else { 3 };
    put_i16(&mut h, 40, ndim);
    for a in 0..4 {
        put_i16(&mut h, 42 + 2 * a, vol.dims[a] as i16);
    }
    for a in 4..7 {
        put_i16(&mut h, 42 + 2 * a, 1);
    }
    put_i16(&mut h, 70, datatype.code());
    put_i16(&mut h, 72, (datatype.bytes() * 8) as i16);
    put_f32(&mut h, 76, 1.0);
    for a in 0..3 {
        put_f32(&mut h, 80 + 4 * a, vol.spacing[a] as f32);
    }
    put_f32(&mut h, 92, 1.0);
    put_f32(&mut h, 108, 352.0);
    put_f32(&mut h, 112, 1.0);
    h[123] = 2 | 8; // mm, seconds
    put_i16(&mut h, 254, 1);
    for row in 0..3 {
        for col in 0..4 {
            put_f32(&mut h, 280 + 16 * row + 4 * col, vol.affine[(row, col)] as f32);
        }
    }
    h[344..348].copy_from_slice(MAGIC_SINGLE);

    h.reserve(vol.data.len() * datatype.bytes());
    for &v in &vol.data {
        match datatype {
            NiftiDatatype::Uint8 => h.push(v as u8),
            _ => h.extend_from_slice(&(v as i16).to_le_bytes()),
        }
    }
    Ok(h)
}
