use super::{CroplandMask, HistogramCube, RasterImage};
use crate::codec::{len_u32, put_f64s, put_u32, read_file, write_file, Reader};
use crate::crop::Crop;
use crate::error::{Error, Result};
use std::path::Path;

const RASTER_MAGIC: &[u8; 4] = b"RSR1";
const MASK_MAGIC: &[u8; 4] = b"MSK1";
const CUBE_MAGIC: &[u8; 4] = b"HCB1";
const VERSION: u32 = 1;

/// Magic plus seven `u32` fields; the location id follows.
pub const RASTER_HEADER_LEN: usize = 32;

pub fn parse_raster(bytes: &[u8]) -> Result<RasterImage> {
    let mut r = Reader::new(bytes);
    r.magic(RASTER_MAGIC)?;
    r.version(VERSION)?;
    let height = r.extent("height")?;
    let width = r.extent("width")?;
    let bands = r.extent("band count")?;
    let year = r.u32("year")?;
    let timestep = r.u32("timestep")?;
    let id_len = r.u32("location id length")? as usize;
    let location_id = r.string(id_len, "location id")?;
    let count = height
        .checked_mul(width)
        .and_then(|n| n.checked_mul(bands))
        .ok_or_else(|| Error::Parse {
            offset: r.offset(),
            message: "pixel count overflows".into(),
        })?;
    let pixels = r.f32s(count, "pixel payload")?;
    r.finish()?;
    Ok(RasterImage {
        location_id,
        year,
        timestep,
        height,
        width,
        bands,
        pixels,
    })
}

pub fn write_raster(raster: &RasterImage) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(RASTER_HEADER_LEN + raster.location_id.len() + raster.pixels.len() * 4);
    out.extend_from_slice(RASTER_MAGIC);
    put_u32(&mut out, VERSION);
    put_u32(&mut out, len_u32(raster.height, "height")?);
    put_u32(&mut out, len_u32(raster.width, "width")?);
    put_u32(&mut out, len_u32(raster.bands, "band count")?);
    put_u32(&mut out, raster.year);
    put_u32(&mut out, raster.timestep);
    put_u32(&mut out, len_u32(raster.location_id.len(), "location id length")?);
    out.extend_from_slice(raster.location_id.as_bytes());
    for p in &raster.pixels {
        out.extend_from_slice(&p.to_le_bytes());
    }
    Ok(out)
}

pub fn parse_mask(bytes: &[u8]) -> Result<CroplandMask> {
    let mut r = Reader::new(bytes);
    r.magic(MASK_MAGIC)?;
    r.version(VERSION)?;
    let height = r.extent("height")?;
    let width = r.extent("width")?;
    let at = r.offset();
    let crop = Crop::from_code(r.u32("crop code")?).ok_or(Error::Parse {
        offset: at,
        message: "unknown crop code".into(),
    })?;
    let start = r.offset();
    let values = r.take(height * width, "mask payload")?.to_vec();
    if let Some(i) = values.iter().position(|&v| v > 1) {
        return Err(Error::Parse {
            offset: start + i,
            message: format!("mask value {} is not 0 or 1", values[i]),
        });
    }
    r.finish()?;
    Ok(CroplandMask {
        height,
        width,
        crop,
        values,
    })
}

pub fn write_mask(mask: &CroplandMask) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(20 + mask.values.len());
    out.extend_from_slice(MASK_MAGIC);
    put_u32(&mut out, VERSION);
    put_u32(&mut out, len_u32(mask.height, "height")?);
    put_u32(&mut out, len_u32(mask.width, "width")?);
    put_u32(&mut out, mask.crop.code());
    out.extend_from_slice(&mask.values);
    Ok(out)
}

/// Cube layout: magic, `u32` {version, T, b, d, crop code}, `u32` id
/// length + UTF-8 id, `u32` year, T validity bytes, T·b·d `f64` values.
pub fn parse_cube(bytes: &[u8]) -> Result<HistogramCube> {
    let mut r = Reader::new(bytes);
    r.magic(CUBE_MAGIC)?;
    r.version(VERSION)?;
    let time = r.extent("timestep count")?;
    let bins = r.extent("bin count")?;
    let bands = r.extent("band count")?;
    let at = r.offset();
    let crop = Crop::from_code(r.u32("crop code")?).ok_or(Error::Parse {
        offset: at,
        message: "unknown crop code".into(),
    })?;
    let id_len = r.u32("location id length")? as usize;
    let location_id = r.string(id_len, "location id")?;
    let year = r.u32("year")?;
    let flags_at = r.offset();
    let flags = r.take(time, "validity flags")?;
    let mut timestep_valid = Vec::with_capacity(time);
    for (i, &f) in flags.iter().enumerate() {
        match f {
            0 => timestep_valid.push(false),
            1 => timestep_valid.push(true),
            other => {
                return Err(Error::Parse {
                    offset: flags_at + i,
                    message: format!("validity flag {other} is not 0 or 1"),
                })
            }
        }
    }
    let values = r.f64s(time * bins * bands, "cube payload")?;
    r.finish()?;
    Ok(HistogramCube {
        location_id,
        year,
        crop,
        time,
        bins,
        bands,
        values,
        timestep_valid,
    })
}

pub fn write_cube(cube: &HistogramCube) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(40 + cube.location_id.len() + cube.time + cube.values.len() * 8);
    out.extend_from_slice(CUBE_MAGIC);
    put_u32(&mut out, VERSION);
    put_u32(&mut out, len_u32(cube.time, "timestep count")?);
    put_u32(&mut out, len_u32(cube.bins, "bin count")?);
    put_u32(&mut out, len_u32(cube.bands, "band count")?);
    put_u32(&mut out, cube.crop.code());
    put_u32(&mut out, len_u32(cube.location_id.len(), "location id length")?);
    out.extend_from_slice(cube.location_id.as_bytes());
    put_u32(&mut out, cube.year);
    out.extend(cube.timestep_valid.iter().map(|&v| v as u8));
    put_f64s(&mut out, &cube.values);
    Ok(out)
}

pub fn read_raster(path: &Path) -> Result<RasterImage> {
    parse_raster(&read_file(path)?)
}

pub fn write_raster_file(path: &Path, raster: &RasterImage) -> Result<()> {
    write_file(path, &write_raster(raster)?)
}

pub fn read_mask(path: &Path) -> Result<CroplandMask> {
    parse_mask(&read_file(path)?)
}

pub fn write_mask_file(path: &Path, mask: &CroplandMask) -> Result<()> {
    write_file(path, &write_mask(mask)?)
}

pub fn read_cube(path: &Path) -> Result<HistogramCube> {
    parse_cube(&read_file(path)?)
}

pub fn write_cube_file(path: &Path, cube: &HistogramCube) -> Result<()> {
    write_file(path, &write_cube(cube)?)
}
