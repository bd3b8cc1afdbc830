//! `SFLW` binary feature container and a CSV debug dump.
//!
//! Layout (little-endian): magic `SFLW`, version `u16`, C/H/W as `u32`, spec
//! string as `u32` byte length + UTF-8, then C*H*W `f32` in channel-major,
//! row-major order.

use std::io::{Read, Write};

use ndarray::Array2;

use super::{FeaturePlane, FeatureSpec, FeatureTensor, PLANE_SIZE};
use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"SFLW";
pub const FEATURE_VERSION: u16 = 1;

pub fn write_feature_file<W: Write>(tensor: &FeatureTensor, mut out: W) -> Result<()> {
    let (c, h, w) = tensor.shape();
    let spec = tensor.spec().to_string();
    out.write_all(FEATURE_MAGIC)?;
    out.write_all(&FEATURE_VERSION.to_le_bytes())?;
    for dim in [c, h, w] {
        out.write_all(&(dim as u32).to_le_bytes())?;
    }
    out.write_all(&(spec.len() as u32).to_le_bytes())?;
    out.write_all(spec.as_bytes())?;
    let mut body = Vec::with_capacity(c * h * w * 4);
    for v in tensor.to_f32_vec() {
        body.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&body)?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_feature_file<R: Read>(mut input: R) -> Result<FeatureTensor> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != FEATURE_MAGIC {
        return Err(Error::Parse(format!("bad feature file magic {magic:?}")));
    }
    let mut version = [0u8; 2];
    input.read_exact(&mut version)?;
    let version = u16::from_le_bytes(version);
    if version != FEATURE_VERSION {
        return Err(Error::UnsupportedFormat(format!("feature file version {version}")));
    }
    let c = read_u32(&mut input)? as usize;
    let h = read_u32(&mut input)? as usize;
    let w = read_u32(&mut input)? as usize;
    if h != PLANE_SIZE || w != PLANE_SIZE {
        return Err(Error::Shape(format!("feature planes must be {PLANE_SIZE}x{PLANE_SIZE}, file has {h}x{w}")));
    }
    let spec_len = read_u32(&mut input)? as usize;
    if spec_len > 64 {
        return Err(Error::Parse(format!("implausible spec length {spec_len}")));
    }
    let mut spec = vec![0u8; spec_len];
    input.read_exact(&mut spec)?;
    let spec: FeatureSpec = String::from_utf8(spec)
        .map_err(|e| Error::Parse(format!("spec is not UTF-8: {e}")))?
        .parse()?;
    if spec.channels() != c {
        return Err(Error::Shape(format!("spec {spec} has {} channels, header says {c}", spec.channels())));
    }
    let mut body = vec![0u8; c * h * w * 4];
    input.read_exact(&mut body)?;
    let values: Vec<f64> = body
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    let planes = spec
        .planes()
        .iter()
        .zip(values.chunks_exact(h * w))
        .map(|(&kind, chunk)| {
            FeaturePlane::new(kind, Array2::from_shape_vec((h, w), chunk.to_vec()).expect("chunk is h*w long"))
        })
        .collect();
    FeatureTensor::new(spec, planes)
}

/// One line per (channel, row): `channel,row,v0,...,v127`.
pub fn write_feature_csv<W: Write>(tensor: &FeatureTensor, mut out: W) -> Result<()> {
    write!(out, "channel,row")?;
    for t in 0..PLANE_SIZE {
        write!(out, ",t{t}")?;
    }
    writeln!(out)?;
    for (c, plane) in tensor.planes().iter().enumerate() {
        for (r, row) in plane.data.rows().into_iter().enumerate() {
            write!(out, "{c},{r}")?;
            for v in row {
                write!(out, ",{}", *v as f32)?;
            }
            writeln!(out)?;
        }
    }
    Ok(())
}
