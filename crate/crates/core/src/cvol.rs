//! CVOL container: a fixed 64-byte little-endian header followed by a
//! row-major payload.
//!
//! | offset | size | field                                           |
//! |--------|------|-------------------------------------------------|
//! | 0      | 4    | magic `CVOL`                                    |
//! | 4      | 2    | version (1)                                     |
//! | 6      | 1    | dtype: 0 = f32, 1 = u8, 2 = f64                 |
//! | 7      | 1    | kind: 0 = voxel, 1 = spherical, 2 = RF frame    |
//! | 8      | 12   | three u32 dims                                  |
//! | 20     | 24   | six f32 grid bounds (voxel kind, H/D/W order)   |
//! | 44     | 20   | zero padding                                    |
//!
//! Spherical and RF payloads have no Cartesian bounds; their grid
//! descriptor follows the header as f64 values (7 for spherical grids,
//! 2 for RF frames) before the samples.

use std::path::Path;

use crate::beamform::SphericalVolume;
use crate::error::{Error, Result};
use crate::grid::{SphericalGrid, VoxelGrid};
use crate::processing::Volume;
use crate::scene::RfFrame;

pub const MAGIC: [u8; 4] = *b"CVOL";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum DType {
    F32 = 0,
    U8 = 1,
    F64 = 2,
}

impl DType {
    fn size(self) -> u64 {
        match self {
            DType::F32 => 4,
            DType::U8 => 1,
            DType::F64 => 8,
        }
    }

    fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(DType::F32),
            1 => Ok(DType::U8),
            2 => Ok(DType::F64),
            other => Err(Error::Format(format!("unknown dtype {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Kind {
    Voxel = 0,
    Spherical = 1,
    Rf = 2,
}

impl Kind {
    fn descriptor_len(self) -> usize {
        match self {
            Kind::Voxel => 0,
            Kind::Spherical => 7,
            Kind::Rf => 2,
        }
    }

    fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(Kind::Voxel),
            1 => Ok(Kind::Spherical),
            2 => Ok(Kind::Rf),
            other => Err(Error::Format(format!("unknown payload kind {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Header {
    pub dtype: DType,
    pub kind: Kind,
    pub dims: [u32; 3],
    pub bounds: [f32; 6],
}

impl Header {
    fn encode(&self) -> [u8; HEADER_LEN] {
        let mut h = [0u8; HEADER_LEN];
        h[0..4].copy_from_slice(&MAGIC);
        h[4..6].copy_from_slice(&VERSION.to_le_bytes());
        h[6] = self.dtype as u8;
        h[7] = self.kind as u8;
        for (i, d) in self.dims.iter().enumerate() {
            h[8 + 4 * i..12 + 4 * i].copy_from_slice(&d.to_le_bytes());
        }
        for (i, b) in self.bounds.iter().enumerate() {
            h[20 + 4 * i..24 + 4 * i].copy_from_slice(&b.to_le_bytes());
        }
        h
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(Error::Truncated {
                expected: HEADER_LEN as u64,
                found: bytes.len() as u64,
            });
        }
        let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
        if magic != MAGIC {
            return Err(Error::BadMagic {
                expected: MAGIC,
                found: magic,
            });
        }
        if bytes.len() < HEADER_LEN {
            return Err(Error::Truncated {
                expected: HEADER_LEN as u64,
                found: bytes.len() as u64,
            });
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(Error::VersionMismatch {
                expected: VERSION,
                found: version,
            });
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let f32_at = |o: usize| f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        Ok(Header {
            dtype: DType::from_byte(bytes[6])?,
            kind: Kind::from_byte(bytes[7])?,
            dims: [u32_at(8), u32_at(12), u32_at(16)],
            bounds: std::array::from_fn(|i| f32_at(20 + 4 * i)),
        })
    }

    /// Element count, or `DimsOverflow` if the payload size is not addressable.
    fn element_count(&self) -> Result<usize> {
        let overflow = || Error::DimsOverflow {
            dims: self.dims.iter().map(|&d| d as u64).collect(),
        };
        let n = self.dims.iter().try_fold(1u64, |acc, &d| acc.checked_mul(d as u64)).ok_or_else(overflow)?;
        n.checked_mul(self.dtype.size())
            .filter(|&b| b <= isize::MAX as u64)
            .ok_or_else(overflow)?;
        usize::try_from(n).map_err(|_| overflow())
    }
}

enum Payload<'a> {
    F32(Vec<f32>),
    U8(&'a [u8]),
    F64(&'a [f64]),
}

fn dim_u32(d: usize) -> Result<u32> {
    u32::try_from(d).map_err(|_| Error::DimsOverflow { dims: vec![d as u64] })
}

fn encode(header: Header, descriptor: &[f64], payload: Payload<'_>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&header.encode());
    for d in descriptor {
        out.extend_from_slice(&d.to_le_bytes());
    }
    match payload {
        Payload::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        Payload::U8(v) => out.extend_from_slice(v),
        Payload::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
    }
    out
}

struct Decoded<'a> {
    header: Header,
    descriptor: Vec<f64>,
    payload: &'a [u8],
    count: usize,
}

fn decode(bytes: &[u8], kind: Kind, dtype: DType) -> Result<Decoded<'_>> {
    let header = Header::decode(bytes)?;
    if header.kind != kind {
        return Err(Error::Format(format!("expected {kind:?} payload, file holds {:?}", header.kind)));
    }
    if header.dtype != dtype {
        return Err(Error::Format(format!("expected {dtype:?} samples, file holds {:?}", header.dtype)));
    }
    let count = header.element_count()?;
    let desc_bytes = kind.descriptor_len() * 8;
    let expected = HEADER_LEN as u64 + desc_bytes as u64 + count as u64 * dtype.size();
    if (bytes.len() as u64) < expected {
        return Err(Error::Truncated {
            expected,
            found: bytes.len() as u64,
        });
    }
    if (bytes.len() as u64) > expected {
        return Err(Error::Format(format!(
            "{} trailing bytes after payload",
            bytes.len() as u64 - expected
        )));
    }
    let descriptor = bytes[HEADER_LEN..HEADER_LEN + desc_bytes]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Decoded {
        header,
        descriptor,
        payload: &bytes[HEADER_LEN + desc_bytes..],
        count,
    })
}

fn f32_exact(v: f64, what: &str) -> Result<f32> {
    let f = v as f32;
    if f as f64 != v {
        return Err(Error::Format(format!("{what} {v} is not representable as f32")));
    }
    Ok(f)
}

fn voxel_header(grid: &VoxelGrid, dtype: DType) -> Result<Header> {
    grid.validate()?;
    let (h, d, w) = grid.dims;
    let b = grid.bounds_hdw();
    let mut bounds = [0f32; 6];
    for (o, v) in bounds.iter_mut().zip(b) {
        *o = f32_exact(v, "grid bound")?;
    }
    Ok(Header {
        dtype,
        kind: Kind::Voxel,
        dims: [dim_u32(h)?, dim_u32(d)?, dim_u32(w)?],
        bounds,
    })
}

fn voxel_grid(header: &Header) -> Result<VoxelGrid> {
    let [h, d, w] = header.dims;
    let g = VoxelGrid::from_bounds_hdw(header.bounds.map(f64::from), (h as usize, d as usize, w as usize));
    g.validate().map_err(|e| Error::Format(format!("invalid grid in header: {e}")))?;
    Ok(g)
}

/// Voxel volume as f32 samples. Values must be f32-representable for the
/// round trip to be exact; see [`Volume::quantized`].
pub fn encode_volume(v: &Volume) -> Result<Vec<u8>> {
    let header = voxel_header(&v.grid, DType::F32)?;
    Ok(encode(header, &[], Payload::F32(v.values.iter().map(|&x| x as f32).collect())))
}

pub fn decode_volume(bytes: &[u8]) -> Result<Volume> {
    let d = decode(bytes, Kind::Voxel, DType::F32)?;
    let grid = voxel_grid(&d.header)?;
    let values = d
        .payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect::<Vec<_>>();
    debug_assert_eq!(values.len(), d.count);
    Ok(Volume { values, grid })
}

pub fn encode_labels(labels: &[u8], grid: &VoxelGrid) -> Result<Vec<u8>> {
    if labels.len() != grid.len() {
        return Err(Error::Shape {
            op: "encode_labels",
            axis: "voxels",
            expected: grid.len(),
            found: labels.len(),
        });
    }
    let header = voxel_header(grid, DType::U8)?;
    Ok(encode(header, &[], Payload::U8(labels)))
}

pub fn decode_labels(bytes: &[u8]) -> Result<(Vec<u8>, VoxelGrid)> {
    let d = decode(bytes, Kind::Voxel, DType::U8)?;
    Ok((d.payload.to_vec(), voxel_grid(&d.header)?))
}

pub fn encode_spherical(v: &SphericalVolume) -> Result<Vec<u8>> {
    let g = v.grid;
    g.validate()?;
    let [p, r, t] = g.shape();
    let header = Header {
        dtype: DType::F64,
        kind: Kind::Spherical,
        dims: [dim_u32(p)?, dim_u32(r)?, dim_u32(t)?],
        bounds: [0.0; 6],
    };
    let desc = [g.r_min, g.r_max, g.r_step, g.theta_bounds.0, g.theta_bounds.1, g.phi_bounds.0, g.phi_bounds.1];
    Ok(encode(header, &desc, Payload::F64(&v.values)))
}

pub fn decode_spherical(bytes: &[u8]) -> Result<SphericalVolume> {
    let d = decode(bytes, Kind::Spherical, DType::F64)?;
    let s = &d.descriptor;
    let [p, r, t] = d.header.dims;
    let grid = SphericalGrid {
        r_min: s[0],
        r_max: s[1],
        r_step: s[2],
        theta_bounds: (s[3], s[4]),
        theta_bins: t as usize,
        phi_bounds: (s[5], s[6]),
        phi_bins: p as usize,
    };
    grid.validate().map_err(|e| Error::Format(format!("invalid spherical grid: {e}")))?;
    if grid.r_bins() != r as usize {
        return Err(Error::Format(format!(
            "range dims {r} disagree with the descriptor's {} bins",
            grid.r_bins()
        )));
    }
    Ok(SphericalVolume {
        values: read_f64(d.payload),
        grid,
    })
}

fn read_f64(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect()
}

pub fn encode_rf(f: &RfFrame) -> Result<Vec<u8>> {
    let header = Header {
        dtype: DType::F64,
        kind: Kind::Rf,
        dims: [dim_u32(f.channels)?, dim_u32(f.len())?, 1],
        bounds: [0.0; 6],
    };
    Ok(encode(header, &[f.sample_rate, f.ping_time], Payload::F64(&f.samples)))
}

pub fn decode_rf(bytes: &[u8]) -> Result<RfFrame> {
    let d = decode(bytes, Kind::Rf, DType::F64)?;
    if d.header.dims[2] != 1 {
        return Err(Error::Format("RF frames have a unit third dimension".into()));
    }
    Ok(RfFrame {
        samples: read_f64(d.payload),
        channels: d.header.dims[0] as usize,
        sample_rate: d.descriptor[0],
        ping_time: d.descriptor[1],
    })
}

pub fn write_volume(path: &Path, v: &Volume) -> Result<()> {
    std::fs::write(path, encode_volume(v)?)?;
    Ok(())
}

pub fn read_volume(path: &Path) -> Result<Volume> {
    decode_volume(&std::fs::read(path)?)
}

pub fn write_spherical(path: &Path, v: &SphericalVolume) -> Result<()> {
    std::fs::write(path, encode_spherical(v)?)?;
    Ok(())
}

pub fn read_spherical(path: &Path) -> Result<SphericalVolume> {
    decode_spherical(&std::fs::read(path)?)
}

pub fn write_rf(path: &Path, f: &RfFrame) -> Result<()> {
    std::fs::write(path, encode_rf(f)?)?;
    Ok(())
}

pub fn read_rf(path: &Path) -> Result<RfFrame> {
    decode_rf(&std::fs::read(path)?)
}
