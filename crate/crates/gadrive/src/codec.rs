//! On-disk formats: 8-bit RGB PNG, raw float32 depth rasters, 16-bit
//! PNG depth interchange, 0/255 mask PNG, and length-prefixed float32
//! LiDAR point records. Every codec round-trips byte-exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use image::{DynamicImage, GrayImage, ImageReader, RgbImage};
use nalgebra::Vector3;
use thiserror::Error;

use crate::geometry::DepthMap;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("image error on {path}: {source}")]
    Image { path: String, source: image::ImageError },
    #[error("{path}: expected an 8-bit RGB image")]
    NotRgb8 { path: String },
    #[error("{path}: expected a 16-bit grayscale image")]
    NotLuma16 { path: String },
    #[error("{path}: bad depth raster ({width}x{height} implies {expected} values, file holds {actual})")]
    BadDepthHeader { path: String, width: u32, height: u32, expected: usize, actual: usize },
    #[error("{path}: NaN depth at pixel index {index}")]
    NanDepth { path: String, index: usize },
    #[error("{path}: truncated point file (length prefix {expected} points, payload holds {actual})")]
    TruncatedPoints { path: String, expected: usize, actual: usize },
    #[error("{path}: depth scale must be finite and > 0, got {scale}")]
    BadScale { path: String, scale: f64 },
}

fn io_err(path: &Path, source: std::io::Error) -> CodecError {
    CodecError::Io { path: path.display().to_string(), source }
}

// ---- RGB images ----

pub fn read_rgb(path: &Path) -> Result<RgbImage, CodecError> {
    let img = ImageReader::open(path)
        .map_err(|e| io_err(path, e))?
        .decode()
        .map_err(|e| CodecError::Image { path: path.display().to_string(), source: e })?;
    match img {
        DynamicImage::ImageRgb8(rgb) => Ok(rgb),
        DynamicImage::ImageRgba8(rgba) => Ok(DynamicImage::ImageRgba8(rgba).to_rgb8()),
        _ => Err(CodecError::NotRgb8 { path: path.display().to_string() }),
    }
}

pub fn write_rgb(path: &Path, image: &RgbImage) -> Result<(), CodecError> {
    image
        .save(path)
        .map_err(|e| CodecError::Image { path: path.display().to_string(), source: e })
}

// ---- raw float32 depth rasters ----
//
// Header is just `width: u32 LE, height: u32 LE`, followed by
// width*height little-endian f32 values in row-major order. Invalid
// pixels are stored as 0.0; any non-positive value decodes as invalid.

pub fn write_depth_raw(path: &Path, depth: &DepthMap) -> Result<(), CodecError> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| io_err(path, e))?);
    w.write_u32::<LittleEndian>(depth.width()).map_err(|e| io_err(path, e))?;
    w.write_u32::<LittleEndian>(depth.height()).map_err(|e| io_err(path, e))?;
    for (value, valid) in depth.values().iter().zip(depth.validity()) {
        let v = if *valid { *value as f32 } else { 0.0 };
        w.write_f32::<LittleEndian>(v).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn read_depth_raw(path: &Path) -> Result<DepthMap, CodecError> {
    let mut r = BufReader::new(File::open(path).map_err(|e| io_err(path, e))?);
    let width = r.read_u32::<LittleEndian>().map_err(|e| io_err(path, e))?;
    let height = r.read_u32::<LittleEndian>().map_err(|e| io_err(path, e))?;
    let expected = width as usize * height as usize;
    let mut payload = Vec::new();
    r.read_to_end(&mut payload).map_err(|e| io_err(path, e))?;
    let actual = payload.len() / 4;
    if payload.len() % 4 != 0 || actual != expected {
        return Err(CodecError::BadDepthHeader {
            path: path.display().to_string(),
            width,
            height,
            expected,
            actual,
        });
    }
    let mut values = Vec::with_capacity(expected);
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap()) as f64;
        if v.is_nan() {
            return Err(CodecError::NanDepth { path: path.display().to_string(), index: i });
        }
        values.push(v);
    }
    DepthMap::from_values(width, height, values).map_err(|_| CodecError::BadDepthHeader {
        path: path.display().to_string(),
        width,
        height,
        expected,
        actual,
    })
}

// ---- 16-bit PNG depth interchange ----

/// Reads a 16-bit grayscale PNG where pixel value × `scale` is depth in
/// meters (e.g. scale 0.001 for millimeter-encoded depth). Zero pixels
/// are invalid.
pub fn read_depth_png16(path: &Path, scale: f64) -> Result<DepthMap, CodecError> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(CodecError::BadScale { path: path.display().to_string(), scale });
    }
    let img = ImageReader::open(path)
        .map_err(|e| io_err(path, e))?
        .decode()
        .map_err(|e| CodecError::Image { path: path.display().to_string(), source: e })?;
    let DynamicImage::ImageLuma16(gray) = img else {
        return Err(CodecError::NotLuma16 { path: path.display().to_string() });
    };
    let values = gray.pixels().map(|p| p.0[0] as f64 * scale).collect();
    DepthMap::from_values(gray.width(), gray.height(), values).map_err(|_| CodecError::NotLuma16 {
        path: path.display().to_string(),
    })
}

pub fn write_depth_png16(path: &Path, depth: &DepthMap, scale: f64) -> Result<(), CodecError> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(CodecError::BadScale { path: path.display().to_string(), scale });
    }
    let img = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::from_fn(
        depth.width(),
        depth.height(),
        |x, y| {
            let v = depth.get(x, y).map_or(0.0, |d| (d / scale).round());
            image::Luma([v.clamp(0.0, u16::MAX as f64) as u16])
        },
    );
    img.save(path)
        .map_err(|e| CodecError::Image { path: path.display().to_string(), source: e })
}

// ---- 0/255 mask PNG ----

pub fn write_mask(path: &Path, width: u32, height: u32, mask: &[bool]) -> Result<(), CodecError> {
    let img = GrayImage::from_fn(width, height, |x, y| {
        image::Luma([if mask[(y * width + x) as usize] { 255 } else { 0 }])
    });
    img.save(path)
        .map_err(|e| CodecError::Image { path: path.display().to_string(), source: e })
}

pub fn read_mask(path: &Path) -> Result<(u32, u32, Vec<bool>), CodecError> {
    let img = ImageReader::open(path)
        .map_err(|e| io_err(path, e))?
        .decode()
        .map_err(|e| CodecError::Image { path: path.display().to_string(), source: e })?
        .to_luma8();
    let mask = img.pixels().map(|p| p.0[0] >= 128).collect();
    Ok((img.width(), img.height(), mask))
}

// ---- LiDAR points ----
//
// `count: u32 LE` followed by count xyz triplets of little-endian f32.

pub fn write_points(path: &Path, points: &[Vector3<f64>]) -> Result<(), CodecError> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| io_err(path, e))?);
    w.write_u32::<LittleEndian>(points.len() as u32).map_err(|e| io_err(path, e))?;
    for p in points {
        for c in [p.x, p.y, p.z] {
            w.write_f32::<LittleEndian>(c as f32).map_err(|e| io_err(path, e))?;
        }
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn read_points(path: &Path) -> Result<Vec<Vector3<f64>>, CodecError> {
    let mut r = BufReader::new(File::open(path).map_err(|e| io_err(path, e))?);
    let count = r.read_u32::<LittleEndian>().map_err(|e| io_err(path, e))? as usize;
    let mut payload = Vec::new();
    r.read_to_end(&mut payload).map_err(|e| io_err(path, e))?;
    if payload.len() < count * 12 {
        return Err(CodecError::TruncatedPoints {
            path: path.display().to_string(),
            expected: count,
            actual: payload.len() / 12,
        });
    }
    let mut points = Vec::with_capacity(count);
    for i in 0..count {
        let at = |j: usize| {
            f32::from_le_bytes(payload[i * 12 + j * 4..i * 12 + j * 4 + 4].try_into().unwrap())
                as f64
        };
        points.push(Vector3::new(at(0), at(1), at(2)));
    }
    Ok(points)
}
