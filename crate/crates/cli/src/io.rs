//! File formats: lossless float maps, 8-bit PNG/PPM images, and the JSON
//! schemas for intrinsics, poses, and optimizer state.
//!
//! Float maps carry exact f32 values so metrics never ride on an image
//! codec's quantization. Layout: 8-byte magic, then height/width/channels as
//! little-endian u32, then row-major channel-interleaved f32 data.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use photodepth::depth::DepthMap;
use photodepth::image::{BoolMask, ImageBuffer};
use photodepth::pose::PoseSE3;
use photodepth::Intrinsics;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const FMAP_MAGIC: [u8; 8] = *b"PDFM0001";

/// Pose files state their convention explicitly; anything else is rejected.
pub const POSE_CONVENTION: &str = "target_to_support";

fn input_err(path: &Path, what: impl std::fmt::Display) -> CliError {
    CliError::Input(format!("{}: {what}", path.display()))
}

pub struct FloatMap {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub values: Vec<f64>,
}

pub fn write_fmap(
    path: &Path,
    height: usize,
    width: usize,
    channels: usize,
    values: &[f64],
) -> Result<(), CliError> {
    assert_eq!(values.len(), height * width * channels, "fmap length mismatch");
    let mut bytes = Vec::with_capacity(20 + values.len() * 4);
    bytes.extend_from_slice(&FMAP_MAGIC);
    for dim in [height, width, channels] {
        let dim = u32::try_from(dim).map_err(|_| input_err(path, "dimension exceeds u32"))?;
        bytes.extend_from_slice(&dim.to_le_bytes());
    }
    for &v in values {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| input_err(path, e))
}

pub fn read_fmap(path: &Path) -> Result<FloatMap, CliError> {
    let mut file = fs::File::open(path).map_err(|e| input_err(path, e))?;
    let mut header = [0u8; 20];
    file.read_exact(&mut header)
        .map_err(|_| input_err(path, "truncated float-map header"))?;
    if header[..8] != FMAP_MAGIC {
        return Err(input_err(path, "not a float map (bad magic)"));
    }
    let dim = |i: usize| u32::from_le_bytes(header[8 + 4 * i..12 + 4 * i].try_into().unwrap());
    let (height, width, channels) = (dim(0) as usize, dim(1) as usize, dim(2) as usize);
    let count = height
        .checked_mul(width)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| input_err(path, "float-map dimensions overflow"))?;
    let mut data = Vec::new();
    file.read_to_end(&mut data).map_err(|e| input_err(path, e))?;
    if data.len() != count * 4 {
        return Err(input_err(
            path,
            format!("expected {} data bytes, found {}", count * 4, data.len()),
        ));
    }
    let values = data
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    Ok(FloatMap {
        height,
        width,
        channels,
        values,
    })
}

pub fn write_image_fmap(path: &Path, img: &ImageBuffer) -> Result<(), CliError> {
    write_fmap(path, img.height(), img.width(), img.channels(), img.data())
}

/// Depth maps store invalid pixels as 0, which cannot collide with a real
/// depth because depth is strictly positive.
pub fn write_depth_fmap(path: &Path, depth: &DepthMap) -> Result<(), CliError> {
    let values: Vec<f64> = (0..depth.height() * depth.width())
        .map(|i| {
            let (r, c) = (i / depth.width(), i % depth.width());
            if depth.is_valid(r, c) {
                depth.get(r, c)
            } else {
                0.0
            }
        })
        .collect();
    write_fmap(path, depth.height(), depth.width(), 1, &values)
}

pub fn read_depth_fmap(path: &Path) -> Result<DepthMap, CliError> {
    let map = read_fmap(path)?;
    if map.channels != 1 {
        return Err(input_err(
            path,
            format!("depth map must have 1 channel, found {}", map.channels),
        ));
    }
    let valid: Vec<bool> = map.values.iter().map(|&v| v > 0.0 && v.is_finite()).collect();
    let mask = BoolMask::new(map.height, map.width, valid);
    DepthMap::with_mask(map.height, map.width, map.values, mask)
        .map_err(|e| input_err(path, e))
}

fn is_fmap(path: &Path) -> bool {
    path.extension().and_then(|e| e.to_str()) == Some("fmap")
}

/// Loads `.fmap` exactly; PNG/PPM via the image codecs, mapped to [0, 1].
pub fn load_image(path: &Path) -> Result<ImageBuffer, CliError> {
    if is_fmap(path) {
        let map = read_fmap(path)?;
        return ImageBuffer::new(map.height, map.width, map.channels, map.values)
            .map_err(|e| input_err(path, e));
    }
    let img = image::open(path).map_err(|e| input_err(path, e))?;
    let (buf, channels) = match img {
        image::DynamicImage::ImageLuma8(gray) => (gray.into_raw(), 1),
        other => (other.into_rgb8().into_raw(), 3),
    };
    let dims = image::image_dimensions(path).map_err(|e| input_err(path, e))?;
    let (w, h) = (dims.0 as usize, dims.1 as usize);
    let values = buf.iter().map(|&b| b as f64 / 255.0).collect();
    ImageBuffer::new(h, w, channels, values).map_err(|e| input_err(path, e))
}

pub fn save_image_png(path: &Path, img: &ImageBuffer) -> Result<(), CliError> {
    let to_byte = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let (h, w) = (img.height() as u32, img.width() as u32);
    let result = match img.channels() {
        1 => {
            let raw: Vec<u8> = img.data().iter().map(|&v| to_byte(v)).collect();
            image::GrayImage::from_raw(w, h, raw)
                .expect("raw length matches dimensions")
                .save(path)
        }
        3 => {
            let raw: Vec<u8> = img.data().iter().map(|&v| to_byte(v)).collect();
            image::RgbImage::from_raw(w, h, raw)
                .expect("raw length matches dimensions")
                .save(path)
        }
        n => return Err(input_err(path, format!("cannot encode {n}-channel image"))),
    };
    result.map_err(|e| input_err(path, e))
}

pub fn save_mask_png(path: &Path, mask: &BoolMask) -> Result<(), CliError> {
    let raw: Vec<u8> = (0..mask.height() * mask.width())
        .map(|i| {
            if mask.get(i / mask.width(), i % mask.width()) {
                255
            } else {
                0
            }
        })
        .collect();
    image::GrayImage::from_raw(mask.width() as u32, mask.height() as u32, raw)
        .expect("raw length matches dimensions")
        .save(path)
        .map_err(|e| input_err(path, e))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IntrinsicsFile {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: usize,
    height: usize,
}

pub fn write_intrinsics_json(path: &Path, k: &Intrinsics) -> Result<(), CliError> {
    write_json(
        path,
        &IntrinsicsFile {
            fx: k.fx,
            fy: k.fy,
            cx: k.cx,
            cy: k.cy,
            width: k.width,
            height: k.height,
        },
    )
}

pub fn read_intrinsics_json(path: &Path) -> Result<Intrinsics, CliError> {
    let file: IntrinsicsFile = read_json(path)?;
    Intrinsics::new(file.fx, file.fy, file.cx, file.cy, file.width, file.height)
        .map_err(|e| input_err(path, e))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoseFile {
    axis_angle: [f64; 3],
    translation: [f64; 3],
    convention: String,
}

pub fn write_poses_json(path: &Path, poses: &[PoseSE3]) -> Result<(), CliError> {
    let records: Vec<PoseFile> = poses
        .iter()
        .map(|p| PoseFile {
            axis_angle: p.rotation,
            translation: p.translation,
            convention: POSE_CONVENTION.to_string(),
        })
        .collect();
    write_json(path, &records)
}

pub fn read_poses_json(path: &Path) -> Result<Vec<PoseSE3>, CliError> {
    let records: Vec<PoseFile> = read_json(path)?;
    records
        .into_iter()
        .map(|record| {
            if record.convention != POSE_CONVENTION {
                return Err(input_err(
                    path,
                    format!(
                        "pose convention {:?} is not {POSE_CONVENTION:?}",
                        record.convention
                    ),
                ));
            }
            Ok(PoseSE3::new(record.axis_angle, record.translation))
        })
        .collect()
}

/// Pretty JSON with a trailing newline. Struct fields serialize in declaration
/// order and maps must be BTreeMaps, so output bytes are stable.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| input_err(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| input_err(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| input_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| input_err(path, e))
}

/// CSV writer wrapper so every table goes through RFC-4180 quoting.
pub fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>, CliError> {
    let file = fs::File::create(path).map_err(|e| input_err(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

pub fn create_out_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| input_err(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    let mut file = fs::File::create(path).map_err(|e| input_err(path, e))?;
    file.write_all(text.as_bytes()).map_err(|e| input_err(path, e))
}
