//! Dense 3D volumes and NIfTI-1 single-file I/O.
//!
//! Volumes are flat `f32` arrays in x-fastest order (the NIfTI column-major
//! convention): linear index = `x + nx * (y + ny * z)`. Readers accept raw
//! or gzip-compressed NIfTI-1 single files (magic `n+1\0`), honor the
//! header endianness probe, apply `scl_slope`/`scl_inter` scaling, and
//! replace non-finite voxels with 0.0. Writers always emit little-endian
//! float32 with a 352-byte header region.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use flate2::read::MultiGzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use crate::error::{Error, Result};

/// A dense 3D grid of finite f32 voxels.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3 {
    shape: (usize, usize, usize),
    voxels: Vec<f32>,
}

impl Volume3 {
    /// Build from a flat x-fastest voxel array. Length must be nx*ny*nz
    /// and all dims positive.
    pub fn new(shape: (usize, usize, usize), voxels: Vec<f32>) -> Result<Self> {
        let (nx, ny, nz) = shape;
        if nx == 0 || ny == 0 || nz == 0 {
            return Err(Error::BadDim(format!("zero-sized axis in {shape:?}")));
        }
        let n = nx
            .checked_mul(ny)
            .and_then(|v| v.checked_mul(nz))
            .ok_or_else(|| Error::BadDim(format!("shape {shape:?} overflows")))?;
        if voxels.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} needs {n} voxels, got {}",
                voxels.len()
            )));
        }
        debug_assert!(voxels.iter().all(|v| v.is_finite()));
        Ok(Volume3 { shape, voxels })
    }

    pub fn zeros(shape: (usize, usize, usize)) -> Self {
        let (nx, ny, nz) = shape;
        Volume3 {
            shape,
            voxels: vec![0.0; nx * ny * nz],
        }
    }

    /// Fill from a function of voxel coordinates.
    pub fn from_fn(shape: (usize, usize, usize), mut f: impl FnMut(usize, usize, usize) -> f32) -> Self {
        let (nx, ny, nz) = shape;
        let mut voxels = Vec::with_capacity(nx * ny * nz);
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    voxels.push(f(x, y, z));
                }
            }
        }
        Volume3 { shape, voxels }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        false // shape axes are always positive
    }

    pub fn voxels(&self) -> &[f32] {
        &self.voxels
    }

    pub fn voxels_mut(&mut self) -> &mut [f32] {
        &mut self.voxels
    }

    pub fn into_voxels(self) -> Vec<f32> {
        self.voxels
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        let (nx, ny, _) = self.shape;
        x + nx * (y + ny * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.voxels[self.index(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, v: f32) {
        let i = self.index(x, y, z);
        self.voxels[i] = v;
    }

    /// Exact minimum and maximum over all voxels.
    pub fn min_max(&self) -> (f32, f32) {
        let mut lo = f32::INFINITY;
        let mut hi = f32::NEG_INFINITY;
        for &v in &self.voxels {
            if v < lo {
                lo = v;
            }
            if v > hi {
                hi = v;
            }
        }
        (lo, hi)
    }

    /// Geometric center in voxel coordinates: (n-1)/2 per axis.
    pub fn center(&self) -> [f64; 3] {
        let (nx, ny, nz) = self.shape;
        [
            (nx as f64 - 1.0) / 2.0,
            (ny as f64 - 1.0) / 2.0,
            (nz as f64 - 1.0) / 2.0,
        ]
    }
}

/// NIFTI-1 header fields we read through.
#[derive(Debug, Clone)]
pub struct NiftiMeta {
    pub datatype: i16,
    pub dim: [i16; 8],
    /// Voxel sizes in mm (pixdim[1..4]).
    pub voxel_mm: [f32; 3],
    pub scl_slope: f32,
    pub scl_inter: f32,
    pub magic: [u8; 4],
}

// Datatype codes from the NIfTI-1 standard.
const DT_UINT8: i16 = 2;
const DT_INT16: i16 = 4;
const DT_INT32: i16 = 8;
const DT_FLOAT32: i16 = 16;
const DT_FLOAT64: i16 = 64;

const HEADER_SIZE: usize = 348;
const VOX_OFFSET: usize = 352;

fn dt_size(datatype: i16) -> Result<usize> {
    match datatype {
        DT_UINT8 => Ok(1),
        DT_INT16 => Ok(2),
        DT_INT32 => Ok(4),
        DT_FLOAT32 => Ok(4),
        DT_FLOAT64 => Ok(8),
        other => Err(Error::UnsupportedDatatype(other)),
    }
}

// Endian-aware field readers over the raw header bytes.
fn rd_i16(b: &[u8], off: usize, be: bool) -> i16 {
    let x = [b[off], b[off + 1]];
    if be {
        i16::from_be_bytes(x)
    } else {
        i16::from_le_bytes(x)
    }
}

fn rd_f32(b: &[u8], off: usize, be: bool) -> f32 {
    let x = [b[off], b[off + 1], b[off + 2], b[off + 3]];
    if be {
        f32::from_be_bytes(x)
    } else {
        f32::from_le_bytes(x)
    }
}

fn is_gzip(bytes: &[u8]) -> bool {
    bytes.len() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b
}

/// Read a NIfTI-1 single file (raw or gzip, auto-detected).
///
/// Voxels are scaled by `scl_slope`/`scl_inter` when the slope is nonzero,
/// converted to f32, and non-finite values are replaced by 0.0.
pub fn read_nifti(path: impl AsRef<Path>) -> Result<(Volume3, NiftiMeta)> {
    let mut raw = Vec::new();
    File::open(path.as_ref())?.read_to_end(&mut raw)?;
    let bytes = if is_gzip(&raw) {
        let mut out = Vec::new();
        MultiGzDecoder::new(&raw[..]).read_to_end(&mut out)?;
        out
    } else {
        raw
    };
    read_nifti_bytes(&bytes)
}

/// Parse a decompressed NIfTI-1 byte buffer.
pub fn read_nifti_bytes(bytes: &[u8]) -> Result<(Volume3, NiftiMeta)> {
    if bytes.len() < HEADER_SIZE {
        return Err(Error::TruncatedPayload {
            expected: HEADER_SIZE,
            got: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[344..348].try_into().unwrap();
    if &magic != b"n+1\0" {
        return Err(Error::BadMagic { found: magic });
    }

    // Standard endianness probe: dim[0] must land in 1..=7 under the
    // correct byte order.
    let dim0_le = rd_i16(bytes, 40, false);
    let be = !(1..=7).contains(&dim0_le);

    let mut dim = [0i16; 8];
    for (i, d) in dim.iter_mut().enumerate() {
        *d = rd_i16(bytes, 40 + 2 * i, be);
    }
    if !(1..=7).contains(&dim[0]) {
        return Err(Error::BadDim(format!("dim[0] = {} under both byte orders", dim[0])));
    }
    match dim[0] {
        3 => {}
        4 if dim[4] == 1 => {}
        4 => {
            return Err(Error::BadDim(format!(
                "4D file with {} timepoints; only single-volume files are supported",
                dim[4]
            )))
        }
        d => return Err(Error::BadDim(format!("dim[0] = {d}, expected 3 or 4"))),
    }
    if dim[1] <= 0 || dim[2] <= 0 || dim[3] <= 0 {
        return Err(Error::BadDim(format!(
            "non-positive spatial dims [{}, {}, {}]",
            dim[1], dim[2], dim[3]
        )));
    }

    let datatype = rd_i16(bytes, 70, be);
    let elem = dt_size(datatype)?;
    let scl_slope = rd_f32(bytes, 112, be);
    let scl_inter = rd_f32(bytes, 116, be);
    let vox_offset = rd_f32(bytes, 108, be) as usize;
    let vox_offset = vox_offset.max(HEADER_SIZE);
    let voxel_mm = [
        rd_f32(bytes, 80, be),
        rd_f32(bytes, 84, be),
        rd_f32(bytes, 88, be),
    ];

    let (nx, ny, nz) = (dim[1] as usize, dim[2] as usize, dim[3] as usize);
    let n = nx * ny * nz;
    let need = vox_offset + n * elem;
    if bytes.len() < need {
        return Err(Error::TruncatedPayload {
            expected: need,
            got: bytes.len(),
        });
    }
    let payload = &bytes[vox_offset..need];

    let scale = scl_slope != 0.0 && !(scl_slope == 1.0 && scl_inter == 0.0);
    let mut voxels = Vec::with_capacity(n);
    for i in 0..n {
        let o = i * elem;
        let v: f64 = match datatype {
            DT_UINT8 => payload[o] as f64,
            DT_INT16 => rd_i16(payload, o, be) as f64,
            DT_INT32 => {
                let x = [payload[o], payload[o + 1], payload[o + 2], payload[o + 3]];
                (if be { i32::from_be_bytes(x) } else { i32::from_le_bytes(x) }) as f64
            }
            DT_FLOAT32 => rd_f32(payload, o, be) as f64,
            DT_FLOAT64 => {
                let x: [u8; 8] = payload[o..o + 8].try_into().unwrap();
                if be {
                    f64::from_be_bytes(x)
                } else {
                    f64::from_le_bytes(x)
                }
            }
            _ => unreachable!(),
        };
        let v = if scale {
            v * scl_slope as f64 + scl_inter as f64
        } else {
            v
        };
        let v = v as f32;
        voxels.push(if v.is_finite() { v } else { 0.0 });
    }

    let meta = NiftiMeta {
        datatype,
        dim,
        voxel_mm,
        scl_slope,
        scl_inter,
        magic,
    };
    Ok((Volume3::new((nx, ny, nz), voxels)?, meta))
}

fn wr_i16(b: &mut [u8], off: usize, v: i16) {
    b[off..off + 2].copy_from_slice(&v.to_le_bytes());
}

fn wr_i32(b: &mut [u8], off: usize, v: i32) {
    b[off..off + 4].copy_from_slice(&v.to_le_bytes());
}

fn wr_f32(b: &mut [u8], off: usize, v: f32) {
    b[off..off + 4].copy_from_slice(&v.to_le_bytes());
}

/// Serialize a volume as canonical NIfTI-1 bytes: 348-byte header,
/// 4 zero extension bytes, then the little-endian float32 payload.
pub fn nifti_bytes(vol: &Volume3) -> Vec<u8> {
    let (nx, ny, nz) = vol.shape();
    let mut h = vec![0u8; VOX_OFFSET];
    wr_i32(&mut h, 0, HEADER_SIZE as i32);
    wr_i16(&mut h, 40, 3);
    wr_i16(&mut h, 42, nx as i16);
    wr_i16(&mut h, 44, ny as i16);
    wr_i16(&mut h, 46, nz as i16);
    for i in 4..8 {
        wr_i16(&mut h, 40 + 2 * i, 1);
    }
    wr_i16(&mut h, 70, DT_FLOAT32);
    wr_i16(&mut h, 72, 32); // bitpix
    wr_f32(&mut h, 76, 1.0); // pixdim[0] = qfac
    for i in 1..4 {
        wr_f32(&mut h, 76 + 4 * i, 1.0);
    }
    wr_f32(&mut h, 108, VOX_OFFSET as f32);
    wr_f32(&mut h, 112, 1.0); // scl_slope
    wr_f32(&mut h, 116, 0.0); // scl_inter
    h[123] = 2; // xyzt_units: mm
    h[344..348].copy_from_slice(b"n+1\0");

    let mut out = h;
    out.reserve(vol.len() * 4);
    for &v in vol.voxels() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Write a volume as a NIfTI-1 single file, optionally gzip-compressed.
pub fn write_nifti(vol: &Volume3, path: impl AsRef<Path>, gzip: bool) -> Result<()> {
    let bytes = nifti_bytes(vol);
    let file = File::create(path.as_ref())?;
    if gzip {
        let mut enc = GzEncoder::new(BufWriter::new(file), Compression::default());
        enc.write_all(&bytes)?;
        enc.finish()?.flush()?;
    } else {
        let mut w = BufWriter::new(file);
        w.write_all(&bytes)?;
        w.flush()?;
    }
    Ok(())
}
