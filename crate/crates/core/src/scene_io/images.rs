//! 8-bit PNG and raw float (`NGSF`) image files.
//!
//! NGSF layout: magic `NGSF`, then `u32` height, width, channels, then
//! `height * width * channels` little-endian `f32` values in HWC order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Image;

use super::write_atomic;

fn codec_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Reads an 8- or 16-bit PNG as RGB in [0, 1]. Gray is replicated; an alpha
/// channel is composited over black.
pub fn read_png(path: &Path) -> Result<Image> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::normalize_to_color8());
    let mut reader = decoder.read_info().map_err(|e| codec_err(path, e))?;
    let size = reader.output_buffer_size().ok_or_else(|| codec_err(path, "image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| codec_err(path, e))?;
    let (h, w) = (info.height as usize, info.width as usize);
    let ch = info.color_type.samples();
    let mut img = Image::new(h, w, 3);
    for y in 0..h {
        let row = &buf[y * info.line_size..];
        for x in 0..w {
            let px = &row[x * ch..(x + 1) * ch];
            let (rgb, a) = match ch {
                1 => ([px[0]; 3], 255),
                2 => ([px[0]; 3], px[1]),
                3 => ([px[0], px[1], px[2]], 255),
                _ => ([px[0], px[1], px[2]], px[3]),
            };
            let a = a as f64 / 255.0;
            for c in 0..3 {
                img.set(y, x, c, rgb[c] as f64 / 255.0 * a);
            }
        }
    }
    Ok(img)
}

/// Writes a 1- or 3-channel image as an 8-bit PNG, clamping to [0, 1].
pub fn write_png(path: &Path, img: &Image) -> Result<()> {
    let color = match img.channels {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        c => return Err(codec_err(path, format!("cannot encode {c} channels"))),
    };
    let bytes: Vec<u8> = img.data.iter().map(|&v| quantize(v)).collect();
    write_atomic(path, |w| {
        let mut enc = png::Encoder::new(w, img.width as u32, img.height as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| codec_err(path, e))?;
        writer.write_image_data(&bytes).map_err(|e| codec_err(path, e))?;
        writer.finish().map_err(|e| codec_err(path, e))
    })
}

pub const NGSF_MAGIC: &[u8; 4] = b"NGSF";

pub fn write_ngsf(path: &Path, img: &Image) -> Result<()> {
    write_atomic(path, |w| {
        let mut w = BufWriter::new(w);
        let mut out = Vec::with_capacity(16 + 4 * img.len());
        out.extend_from_slice(NGSF_MAGIC);
        for d in [img.height, img.width, img.channels] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &img.data {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        w.write_all(&out).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    })
}

pub fn read_ngsf(path: &Path) -> Result<Image> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 || &bytes[..4] != NGSF_MAGIC {
        return Err(codec_err(path, "not an NGSF file"));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (h, w, c) = (dim(0), dim(1), dim(2));
    let n = h * w * c;
    if bytes.len() != 16 + 4 * n {
        return Err(codec_err(path, format!("expected {} data bytes, found {}", 4 * n, bytes.len() - 16)));
    }
    let data = bytes[16..].chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64).collect();
    Image::from_data(h, w, c, data)
}

/// Maps a non-negative scalar image to an RGB heatmap scaled by its maximum.
pub fn heatmap(img: &Image) -> Image {
    let max = img.data.iter().cloned().fold(0.0, f64::max);
    let scale = if max > 0.0 { 1.0 / max } else { 0.0 };
    Image::from_fn(img.height, img.width, 3, |y, x, c| {
        let t = img.get(y, x, 0) * scale;
        match c {
            0 => (2.0 * t).min(1.0),
            1 => (2.0 * t - 0.5).clamp(0.0, 1.0),
            _ => (2.0 * t - 1.0).clamp(0.0, 1.0),
        }
    })
}
