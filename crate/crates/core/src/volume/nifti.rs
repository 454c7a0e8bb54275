//! Minimal single-file NIfTI-1 (`.nii`) reader and writer.
//!
//! Written files are little-endian with a 348-byte header, an empty
//! extension block and data at offset 352. Scalar volumes are stored as
//! FLOAT32, label volumes and masks as UINT8. Spacing goes in `pixdim[1..4]`
//! and a diagonal `sform` so external viewers place voxels correctly.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::{BinaryMask, LabelVolume, ScalarVolume, VolumeError, VolumeGeometry};

const HEADER_SIZE: usize = 348;
const DATA_OFFSET: usize = 352;

const DT_UINT8: i16 = 2;
const DT_INT16: i16 = 4;
const DT_INT32: i16 = 8;
const DT_FLOAT32: i16 = 16;
const DT_FLOAT64: i16 = 64;
const DT_INT8: i16 = 256;
const DT_UINT16: i16 = 512;

#[derive(Debug, Error)]
pub enum NiftiError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("not a NIfTI-1 single-file image: {0}")]
    Format(String),
    #[error("unsupported NIfTI datatype code {0}")]
    Datatype(i16),
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

/// Decoded image: geometry plus voxel values widened to f64.
#[derive(Debug, Clone)]
pub struct NiftiImage {
    pub geometry: VolumeGeometry,
    pub datatype: i16,
    pub values: Vec<f64>,
}

fn header(geometry: &VolumeGeometry, datatype: i16, bitpix: i16, descrip: &str) -> Vec<u8> {
    let mut h = vec![0u8; DATA_OFFSET];
    let put_i16 = |h: &mut [u8], at: usize, v: i16| h[at..at + 2].copy_from_slice(&v.to_le_bytes());
    let put_i32 = |h: &mut [u8], at: usize, v: i32| h[at..at + 4].copy_from_slice(&v.to_le_bytes());
    let put_f32 = |h: &mut [u8], at: usize, v: f32| h[at..at + 4].copy_from_slice(&v.to_le_bytes());

    put_i32(&mut h, 0, HEADER_SIZE as i32);
    h[38] = b'r'; // regular
    let [nx, ny, nz] = geometry.dims();
    let dim = [3i16, nx as i16, ny as i16, nz as i16, 1, 1, 1, 1];
    for (k, d) in dim.iter().enumerate() {
        put_i16(&mut h, 40 + 2 * k, *d);
    }
    put_i16(&mut h, 70, datatype);
    put_i16(&mut h, 72, bitpix);
    let [sx, sy, sz] = geometry.spacing();
    let pixdim = [1.0f32, sx as f32, sy as f32, sz as f32, 0.0, 0.0, 0.0, 0.0];
    for (k, p) in pixdim.iter().enumerate() {
        put_f32(&mut h, 76 + 4 * k, *p);
    }
    put_f32(&mut h, 108, DATA_OFFSET as f32);
    put_f32(&mut h, 112, 1.0); // scl_slope
    h[123] = 2; // xyzt_units: mm
    let d = descrip.as_bytes();
    let n = d.len().min(79);
    h[148..148 + n].copy_from_slice(&d[..n]);
    put_i16(&mut h, 254, 1); // sform_code: scanner
    put_f32(&mut h, 280, sx as f32);
    put_f32(&mut h, 296 + 4, sy as f32);
    put_f32(&mut h, 312 + 8, sz as f32);
    h[344..348].copy_from_slice(b"n+1\0");
    h
}

fn ensure_dims_fit(geometry: &VolumeGeometry) -> Result<(), NiftiError> {
    if geometry.dims().iter().any(|&d| d > i16::MAX as usize) {
        return Err(NiftiError::Format(format!("dims {:?} exceed NIfTI-1 limits", geometry.dims())));
    }
    Ok(())
}

pub fn encode_scalar(volume: &ScalarVolume) -> Result<Vec<u8>, NiftiError> {
    ensure_dims_fit(volume.geometry())?;
    let mut out = header(volume.geometry(), DT_FLOAT32, 32, "scalar");
    out.reserve(volume.values().len() * 4);
    for v in volume.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn encode_u8(geometry: &VolumeGeometry, data: &[u8], descrip: &str) -> Result<Vec<u8>, NiftiError> {
    ensure_dims_fit(geometry)?;
    let mut out = header(geometry, DT_UINT8, 8, descrip);
    out.extend_from_slice(data);
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<NiftiImage, NiftiError> {
    if bytes.len() < HEADER_SIZE {
        return Err(NiftiError::Format(format!("file too small ({} bytes)", bytes.len())));
    }
    let i16_at = |at: usize| i16::from_le_bytes([bytes[at], bytes[at + 1]]);
    let i32_at = |at: usize| i32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
    let f32_at = |at: usize| f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());

    if i32_at(0) != HEADER_SIZE as i32 {
        return Err(NiftiError::Format(format!(
            "sizeof_hdr is {} (big-endian files are not supported)",
            i32_at(0)
        )));
    }
    if &bytes[344..348] != b"n+1\0" {
        return Err(NiftiError::Format("magic is not 'n+1'".into()));
    }
    let ndim = i16_at(40);
    if !(1..=7).contains(&ndim) {
        return Err(NiftiError::Format(format!("dim[0] = {ndim}")));
    }
    let mut dims = [1usize; 3];
    for (k, d) in dims.iter_mut().enumerate().take((ndim as usize).min(3)) {
        let v = i16_at(42 + 2 * k);
        if v < 1 {
            return Err(NiftiError::Format(format!("dim[{}] = {v}", k + 1)));
        }
        *d = v as usize;
    }
    for k in 3..ndim as usize {
        if i16_at(42 + 2 * k) > 1 {
            return Err(NiftiError::Format("only 3D volumes are supported".into()));
        }
    }
    let mut spacing = [1.0f64; 3];
    for (k, s) in spacing.iter_mut().enumerate() {
        let p = f32_at(80 + 4 * k).abs() as f64;
        if p > 0.0 && p.is_finite() {
            *s = p;
        }
    }
    let geometry = VolumeGeometry::new(dims, spacing)?;
    let datatype = i16_at(70);
    let offset = f32_at(108) as usize;
    let slope = f32_at(112) as f64;
    let inter = f32_at(116) as f64;
    let (slope, inter) = if slope == 0.0 || !slope.is_finite() { (1.0, 0.0) } else { (slope, inter) };

    let width = match datatype {
        DT_UINT8 | DT_INT8 => 1,
        DT_INT16 | DT_UINT16 => 2,
        DT_INT32 | DT_FLOAT32 => 4,
        DT_FLOAT64 => 8,
        other => return Err(NiftiError::Datatype(other)),
    };
    let n = geometry.len();
    let offset = offset.max(HEADER_SIZE);
    let end = offset + n * width;
    if bytes.len() < end {
        return Err(NiftiError::Format(format!("expected {end} bytes, file has {}", bytes.len())));
    }
    let data = &bytes[offset..end];
    let raw: Vec<f64> = match datatype {
        DT_UINT8 => data.iter().map(|&b| b as f64).collect(),
        DT_INT8 => data.iter().map(|&b| b as i8 as f64).collect(),
        DT_INT16 => data.chunks_exact(2).map(|c| i16::from_le_bytes([c[0], c[1]]) as f64).collect(),
        DT_UINT16 => data.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]]) as f64).collect(),
        DT_INT32 => data.chunks_exact(4).map(|c| i32::from_le_bytes(c.try_into().unwrap()) as f64).collect(),
        DT_FLOAT32 => data.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect(),
        _ => data.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
    };
    let values = if slope == 1.0 && inter == 0.0 { raw } else { raw.into_iter().map(|v| v * slope + inter).collect() };
    Ok(NiftiImage { geometry, datatype, values })
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), NiftiError> {
    fs::write(path, bytes).map_err(|source| NiftiError::Io { path: path.to_path_buf(), source })
}

fn read_image(path: &Path) -> Result<NiftiImage, NiftiError> {
    let bytes = fs::read(path).map_err(|source| NiftiError::Io { path: path.to_path_buf(), source })?;
    decode(&bytes)
}

pub fn write_scalar(path: &Path, volume: &ScalarVolume) -> Result<(), NiftiError> {
    write_bytes(path, &encode_scalar(volume)?)
}

pub fn write_labels(path: &Path, volume: &LabelVolume) -> Result<(), NiftiError> {
    write_bytes(path, &encode_u8(volume.geometry(), &volume.to_raw(), "anatomy")?)
}

pub fn write_mask(path: &Path, mask: &BinaryMask) -> Result<(), NiftiError> {
    write_bytes(path, &encode_u8(mask.geometry(), &mask.to_raw(), "mask")?)
}

pub fn read_scalar(path: &Path) -> Result<ScalarVolume, NiftiError> {
    let img = read_image(path)?;
    let values = img.values.into_iter().map(|v| v as f32).collect();
    Ok(ScalarVolume::new(img.geometry, values)?)
}

pub fn read_labels(path: &Path) -> Result<LabelVolume, NiftiError> {
    let img = read_image(path)?;
    let raw: Vec<u8> = img
        .values
        .iter()
        .map(|&v| if (0.0..=255.0).contains(&v) && v.fract() == 0.0 { v as u8 } else { u8::MAX })
        .collect();
    Ok(LabelVolume::from_raw(img.geometry, &raw)?)
}

pub fn read_mask(path: &Path) -> Result<BinaryMask, NiftiError> {
    let img = read_image(path)?;
    let bits = img.values.iter().map(|&v| v != 0.0).collect();
    Ok(BinaryMask::new(img.geometry, bits)?)
}
