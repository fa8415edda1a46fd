//! Single-file NIfTI-1 (.nii) reading and writing, little-endian.
//!
//! Reading supports the common scalar datatypes with slope/intercept
//! scaling applied; writing always emits float32 with a 352-byte data
//! offset (348-byte header plus the 4-byte extension flag), which makes
//! volume round trips bit-exact.

use std::fs;
use std::path::Path;

use mrisynth_core::volume::Volume;

use crate::error::{CliError, Result};

mod offset {
    pub const SIZEOF_HDR: usize = 0;
    pub const DIM: usize = 40;
    pub const DATATYPE: usize = 70;
    pub const BITPIX: usize = 72;
    pub const PIXDIM: usize = 76;
    pub const VOX_OFFSET: usize = 108;
    pub const SCL_SLOPE: usize = 112;
    pub const SCL_INTER: usize = 116;
    pub const XYZT_UNITS: usize = 123;
    pub const DESCRIP: usize = 148;
    pub const QFORM_CODE: usize = 252;
    pub const SFORM_CODE: usize = 254;
    pub const SROW_X: usize = 280;
    pub const SROW_Y: usize = 296;
    pub const SROW_Z: usize = 312;
    pub const MAGIC: usize = 344;
}

pub const HEADER_SIZE: usize = 348;
pub const DATA_OFFSET: usize = 352;

/// Datatype codes supported by the reader.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataType {
    UInt8 = 2,
    Int16 = 4,
    Int32 = 8,
    Float32 = 16,
    Float64 = 64,
    UInt16 = 512,
}

impl DataType {
    fn from_code(code: i16) -> Option<Self> {
        match code {
            2 => Some(DataType::UInt8),
            4 => Some(DataType::Int16),
            8 => Some(DataType::Int32),
            16 => Some(DataType::Float32),
            64 => Some(DataType::Float64),
            512 => Some(DataType::UInt16),
            _ => None,
        }
    }

    fn byte_size(self) -> usize {
        match self {
            DataType::UInt8 => 1,
            DataType::Int16 | DataType::UInt16 => 2,
            DataType::Int32 | DataType::Float32 => 4,
            DataType::Float64 => 8,
        }
    }
}

/// Header fields surfaced alongside the decoded volume.
#[derive(Debug, Clone, PartialEq)]
pub struct NiftiHeader {
    pub dims: (usize, usize, usize),
    pub spacing: [f32; 3],
    pub datatype: DataType,
    pub scl_slope: f32,
    pub scl_inter: f32,
    pub qform_code: i16,
    pub sform_code: i16,
    pub descrip: String,
}

fn read_i16(buf: &[u8], at: usize) -> i16 {
    i16::from_le_bytes([buf[at], buf[at + 1]])
}

fn read_i32(buf: &[u8], at: usize) -> i32 {
    i32::from_le_bytes([buf[at], buf[at + 1], buf[at + 2], buf[at + 3]])
}

fn read_f32(buf: &[u8], at: usize) -> f32 {
    f32::from_le_bytes([buf[at], buf[at + 1], buf[at + 2], buf[at + 3]])
}

/// Load a single-file NIfTI-1 volume.
pub fn load_nifti(path: &Path) -> Result<(Volume, NiftiHeader)> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    if bytes.len() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b {
        return Err(CliError::unsupported(
            path,
            "gzip-compressed input; decompress to a plain .nii first",
        ));
    }
    if bytes.len() < HEADER_SIZE {
        return Err(CliError::format(path, "file shorter than a NIfTI-1 header"));
    }
    if read_i32(&bytes, offset::SIZEOF_HDR) != 348 {
        return Err(CliError::format(
            path,
            "sizeof_hdr is not 348 (not a little-endian NIfTI-1 file)",
        ));
    }
    let magic = &bytes[offset::MAGIC..offset::MAGIC + 4];
    if magic == b"ni1\0" {
        return Err(CliError::unsupported(
            path,
            "detached header/image pairs (magic ni1) are not supported",
        ));
    }
    if magic != b"n+1\0" {
        return Err(CliError::format(path, format!("bad magic {magic:?}")));
    }

    let ndim = read_i16(&bytes, offset::DIM);
    if ndim != 3 {
        return Err(CliError::unsupported(
            path,
            format!("volume must be 3-dimensional, got dim[0] = {ndim}"),
        ));
    }
    let nx = read_i16(&bytes, offset::DIM + 2);
    let ny = read_i16(&bytes, offset::DIM + 4);
    let nz = read_i16(&bytes, offset::DIM + 6);
    if nx <= 0 || ny <= 0 || nz <= 0 {
        return Err(CliError::format(path, "non-positive dimension"));
    }
    let dims = (nx as usize, ny as usize, nz as usize);

    let dt_code = read_i16(&bytes, offset::DATATYPE);
    let datatype = DataType::from_code(dt_code).ok_or_else(|| {
        CliError::unsupported(path, format!("datatype code {dt_code} not supported"))
    })?;

    let mut spacing = [0f32; 3];
    for (a, s) in spacing.iter_mut().enumerate() {
        let p = read_f32(&bytes, offset::PIXDIM + 4 * (a + 1));
        *s = if p > 0.0 && p.is_finite() { p } else { 1.0 };
    }

    let vox_offset = read_f32(&bytes, offset::VOX_OFFSET);
    if !vox_offset.is_finite() || vox_offset < HEADER_SIZE as f32 {
        return Err(CliError::format(path, format!("bad vox_offset {vox_offset}")));
    }
    let data_start = vox_offset as usize;

    let raw_slope = read_f32(&bytes, offset::SCL_SLOPE);
    let scl_inter = read_f32(&bytes, offset::SCL_INTER);
    // slope 0 conventionally means "no scaling"
    let slope = if raw_slope == 0.0 || !raw_slope.is_finite() { 1.0 } else { raw_slope };
    let inter = if scl_inter.is_finite() { scl_inter } else { 0.0 };

    let n = dims.0 * dims.1 * dims.2;
    let need = data_start + n * datatype.byte_size();
    if bytes.len() < need {
        return Err(CliError::io(
            path,
            std::io::Error::new(
                std::io::ErrorKind::UnexpectedEof,
                format!("data section truncated: need {need} bytes, have {}", bytes.len()),
            ),
        ));
    }
    let raw = &bytes[data_start..need];
    let mut data = Vec::with_capacity(n);
    match datatype {
        DataType::UInt8 => {
            for &b in raw {
                data.push(slope * b as f32 + inter);
            }
        }
        DataType::Int16 => {
            for c in raw.chunks_exact(2) {
                data.push(slope * i16::from_le_bytes([c[0], c[1]]) as f32 + inter);
            }
        }
        DataType::UInt16 => {
            for c in raw.chunks_exact(2) {
                data.push(slope * u16::from_le_bytes([c[0], c[1]]) as f32 + inter);
            }
        }
        DataType::Int32 => {
            for c in raw.chunks_exact(4) {
                data.push(slope * i32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f32 + inter);
            }
        }
        DataType::Float32 => {
            for c in raw.chunks_exact(4) {
                let v = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
                // identity scaling stays bit-exact
                data.push(if slope == 1.0 && inter == 0.0 { v } else { slope * v + inter });
            }
        }
        DataType::Float64 => {
            for c in raw.chunks_exact(8) {
                let v = f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]]);
                data.push((slope as f64 * v + inter as f64) as f32);
            }
        }
    }

    let qform_code = read_i16(&bytes, offset::QFORM_CODE);
    let sform_code = read_i16(&bytes, offset::SFORM_CODE);
    let mut affine = [[0f32; 4]; 4];
    affine[3][3] = 1.0;
    if sform_code > 0 {
        for (r, base) in [(0, offset::SROW_X), (1, offset::SROW_Y), (2, offset::SROW_Z)] {
            for c in 0..4 {
                affine[r][c] = read_f32(&bytes, base + 4 * c);
            }
        }
    } else {
        affine[0][0] = spacing[0];
        affine[1][1] = spacing[1];
        affine[2][2] = spacing[2];
    }

    let descrip = String::from_utf8_lossy(&bytes[offset::DESCRIP..offset::DESCRIP + 80])
        .trim_end_matches('\0')
        .to_string();

    let volume = Volume::new(dims, spacing, affine, data).map_err(CliError::Core)?;
    Ok((
        volume,
        NiftiHeader {
            dims,
            spacing,
            datatype,
            scl_slope: raw_slope,
            scl_inter: inter,
            qform_code,
            sform_code,
            descrip,
        },
    ))
}

/// Write a volume as little-endian float32 NIfTI-1.
pub fn save_nifti(volume: &Volume, path: &Path) -> Result<()> {
    let dims = volume.dims();
    for n in [dims.0, dims.1, dims.2] {
        if n > i16::MAX as usize {
            return Err(CliError::Usage(format!(
                "dimension {n} exceeds the NIfTI-1 limit of {}",
                i16::MAX
            )));
        }
    }
    let mut buf = vec![0u8; DATA_OFFSET + volume.data().len() * 4];
    let w_i32 = |buf: &mut [u8], at: usize, v: i32| buf[at..at + 4].copy_from_slice(&v.to_le_bytes());
    let w_i16 = |buf: &mut [u8], at: usize, v: i16| buf[at..at + 2].copy_from_slice(&v.to_le_bytes());
    let w_f32 = |buf: &mut [u8], at: usize, v: f32| buf[at..at + 4].copy_from_slice(&v.to_le_bytes());

    w_i32(&mut buf, offset::SIZEOF_HDR, 348);
    buf[38] = b'r'; // "regular" flag, kept for compatibility
    w_i16(&mut buf, offset::DIM, 3);
    w_i16(&mut buf, offset::DIM + 2, dims.0 as i16);
    w_i16(&mut buf, offset::DIM + 4, dims.1 as i16);
    w_i16(&mut buf, offset::DIM + 6, dims.2 as i16);
    for k in 4..8 {
        w_i16(&mut buf, offset::DIM + 2 * k, 1);
    }
    w_i16(&mut buf, offset::DATATYPE, DataType::Float32 as i16);
    w_i16(&mut buf, offset::BITPIX, 32);
    w_f32(&mut buf, offset::PIXDIM, 1.0);
    let spacing = volume.spacing();
    for a in 0..3 {
        w_f32(&mut buf, offset::PIXDIM + 4 * (a + 1), spacing[a]);
    }
    w_f32(&mut buf, offset::VOX_OFFSET, DATA_OFFSET as f32);
    w_f32(&mut buf, offset::SCL_SLOPE, 1.0);
    w_f32(&mut buf, offset::SCL_INTER, 0.0);
    buf[offset::XYZT_UNITS] = 2; // millimetres
    let descrip = b"mrisynth";
    buf[offset::DESCRIP..offset::DESCRIP + descrip.len()].copy_from_slice(descrip);
    w_i16(&mut buf, offset::QFORM_CODE, 0);
    w_i16(&mut buf, offset::SFORM_CODE, 1);
    let affine = volume.affine();
    for (r, base) in [(0, offset::SROW_X), (1, offset::SROW_Y), (2, offset::SROW_Z)] {
        for c in 0..4 {
            w_f32(&mut buf, base + 4 * c, affine[r][c]);
        }
    }
    buf[offset::MAGIC..offset::MAGIC + 4].copy_from_slice(b"n+1\0");
    // bytes 348..352 stay zero: no header extensions

    let mut at = DATA_OFFSET;
    for &v in volume.data() {
        buf[at..at + 4].copy_from_slice(&v.to_le_bytes());
        at += 4;
    }
    crate::manifest::write_atomic(path, &buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use mrisynth_core::volume::spacing_affine;
    use tempfile::tempdir;

    fn sample_volume() -> Volume {
        let data: Vec<f32> = (0..64).map(|i| (i as f32).sin()).collect();
        let mut v = Volume::from_data((4, 4, 4), data).unwrap();
        v.set_spacing([1.0, 2.0, 0.5]);
        let mut aff = spacing_affine([1.0, 2.0, 0.5]);
        aff[0][3] = -3.25;
        aff[1][3] = 7.5;
        v.set_affine(aff);
        v
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("vol.nii");
        let vol = sample_volume();
        save_nifti(&vol, &path).unwrap();
        let (loaded, header) = load_nifti(&path).unwrap();
        assert_eq!(loaded.dims(), vol.dims());
        assert_eq!(loaded.spacing(), vol.spacing());
        assert_eq!(loaded.affine(), vol.affine());
        assert_eq!(loaded.data(), vol.data());
        assert_eq!(header.datatype, DataType::Float32);
        // and the bytes themselves are reproducible
        save_nifti(&loaded, dir.path().join("again.nii").as_path()).unwrap();
        let a = std::fs::read(&path).unwrap();
        let b = std::fs::read(dir.path().join("again.nii")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn constant_volume_data_section() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("c.nii");
        let vol = Volume::constant((2, 3, 2), 0.5);
        save_nifti(&vol, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(bytes.len(), DATA_OFFSET + 12 * 4);
        for c in bytes[DATA_OFFSET..].chunks_exact(4) {
            assert_eq!(f32::from_le_bytes([c[0], c[1], c[2], c[3]]), 0.5);
        }
    }

    #[test]
    fn detached_header_magic_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("d.nii");
        let vol = Volume::constant((2, 2, 2), 0.0);
        save_nifti(&vol, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[offset::MAGIC..offset::MAGIC + 4].copy_from_slice(b"ni1\0");
        std::fs::write(&path, bytes).unwrap();
        match load_nifti(&path) {
            Err(CliError::Unsupported { .. }) => {}
            other => panic!("expected unsupported error, got {other:?}"),
        }
    }

    #[test]
    fn int16_slope_intercept_scaling() {
        // raw voxel 3 with slope 2 and intercept 1 decodes to 7.0
        let dir = tempdir().unwrap();
        let path = dir.path().join("s.nii");
        let vol = Volume::constant((2, 2, 2), 0.0);
        save_nifti(&vol, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[offset::DATATYPE..offset::DATATYPE + 2]
            .copy_from_slice(&(DataType::Int16 as i16).to_le_bytes());
        bytes[offset::BITPIX..offset::BITPIX + 2].copy_from_slice(&16i16.to_le_bytes());
        bytes[offset::SCL_SLOPE..offset::SCL_SLOPE + 4].copy_from_slice(&2f32.to_le_bytes());
        bytes[offset::SCL_INTER..offset::SCL_INTER + 4].copy_from_slice(&1f32.to_le_bytes());
        bytes.truncate(DATA_OFFSET);
        for raw in [3i16, 0, -2, 100, 7, 1, 2, 5] {
            bytes.extend_from_slice(&raw.to_le_bytes());
        }
        std::fs::write(&path, bytes).unwrap();
        let (loaded, header) = load_nifti(&path).unwrap();
        assert_eq!(loaded.data()[0], 7.0);
        assert_eq!(loaded.data()[2], -3.0);
        assert_eq!(header.scl_slope, 2.0);
        // hand-decoded reference for every voxel
        for (v, raw) in loaded.data().iter().zip([3i16, 0, -2, 100, 7, 1, 2, 5]) {
            assert_eq!(*v, 2.0 * raw as f32 + 1.0);
        }
    }

    #[test]
    fn truncated_data_is_io_error() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("t.nii");
        let vol = Volume::constant((4, 4, 4), 1.0);
        save_nifti(&vol, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(DATA_OFFSET + 10);
        std::fs::write(&path, bytes).unwrap();
        match load_nifti(&path) {
            Err(CliError::Io { .. }) => {}
            other => panic!("expected io error, got {other:?}"),
        }
    }

    #[test]
    fn four_dimensional_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("f.nii");
        let vol = Volume::constant((2, 2, 2), 1.0);
        save_nifti(&vol, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[offset::DIM..offset::DIM + 2].copy_from_slice(&4i16.to_le_bytes());
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(load_nifti(&path), Err(CliError::Unsupported { .. })));
    }

    #[test]
    fn gzip_input_gets_clear_message() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("z.nii.gz");
        std::fs::write(&path, [0x1f, 0x8b, 0x08, 0x00]).unwrap();
        match load_nifti(&path) {
            Err(CliError::Unsupported { message, .. }) => {
                assert!(message.contains("decompress"));
            }
            other => panic!("{other:?}"),
        }
    }
}
