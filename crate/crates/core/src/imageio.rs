//! Conversions between canonical `[0,1]` CHW arrays and 8-bit PNG files.

use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, ExtendedColorType, ImageEncoder, ImageFormat};
use ndarray::{Array2, Array3};

use crate::error::{Error, Result};

/// Canonical image: `(channels, height, width)` with values in `[0, 1]`.
pub type Image = Array3<f64>;

pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Interleaved (HWC) 8-bit samples.
pub fn to_u8(img: &Image) -> Vec<u8> {
    let (c, h, w) = img.dim();
    let mut out = Vec::with_capacity(c * h * w);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                out.push(quantize(img[[ch, y, x]]));
            }
        }
    }
    out
}

pub fn from_u8(data: &[u8], channels: usize, height: usize, width: usize) -> Result<Image> {
    if data.len() != channels * height * width {
        return Err(Error::Input(format!(
            "expected {} samples, got {}",
            channels * height * width,
            data.len()
        )));
    }
    Ok(Array3::from_shape_fn((channels, height, width), |(c, y, x)| {
        f64::from(data[(y * width + x) * channels + c]) / 255.0
    }))
}

fn color_type(channels: usize) -> Result<ExtendedColorType> {
    match channels {
        1 => Ok(ExtendedColorType::L8),
        3 => Ok(ExtendedColorType::Rgb8),
        c => Err(Error::Input(format!("unsupported channel count {c}"))),
    }
}

pub fn encode_png(img: &Image) -> Result<Vec<u8>> {
    let (c, h, w) = img.dim();
    let mut buf = Vec::new();
    image::codecs::png::PngEncoder::new(&mut buf).write_image(
        &to_u8(img),
        w as u32,
        h as u32,
        color_type(c)?,
    )?;
    Ok(buf)
}

pub fn save_png(path: &Path, img: &Image) -> Result<Vec<u8>> {
    let bytes = encode_png(img)?;
    std::fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    Ok(bytes)
}

fn from_dynamic(img: DynamicImage) -> Result<Image> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        DynamicImage::ImageLuma8(g) => from_u8(g.as_raw(), 1, h, w),
        other => from_u8(other.to_rgb8().as_raw(), 3, h, w),
    }
}

pub fn decode_png(bytes: &[u8]) -> Result<Image> {
    from_dynamic(image::load_from_memory_with_format(bytes, ImageFormat::Png)?)
}

pub fn load_png(path: &Path) -> Result<Image> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_png(&bytes)
}

/// Round-trips an image through the baseline JPEG codec at `quality`.
pub fn jpeg_roundtrip(img: &Image, quality: u8) -> Result<Image> {
    let (c, h, w) = img.dim();
    let mut buf = Cursor::new(Vec::new());
    image::codecs::jpeg::JpegEncoder::new_with_quality(&mut buf, quality).write_image(
        &to_u8(img),
        w as u32,
        h as u32,
        color_type(c)?,
    )?;
    let decoded = image::load_from_memory_with_format(buf.get_ref(), ImageFormat::Jpeg)?;
    let raw = if c == 1 {
        decoded.to_luma8().into_raw()
    } else {
        decoded.to_rgb8().into_raw()
    };
    from_u8(&raw, c, h, w)
}

/// BT.601 luma for RGB input; single-channel input is returned as is.
pub fn luma(img: &Image) -> Array2<f64> {
    let (c, h, w) = img.dim();
    if c == 3 {
        Array2::from_shape_fn((h, w), |(y, x)| {
            0.299 * img[[0, y, x]] + 0.587 * img[[1, y, x]] + 0.114 * img[[2, y, x]]
        })
    } else {
        img.index_axis(ndarray::Axis(0), 0).to_owned()
    }
}

/// `[0,1] -> [-1,1]`
pub fn to_signed(img: &Image) -> Image {
    img.mapv(|v| 2.0 * v - 1.0)
}

/// `[-1,1] -> [0,1]`, clamped.
pub fn from_signed(img: &Image) -> Image {
    img.mapv(|v| ((v + 1.0) * 0.5).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_roundtrip_is_exact_on_quantized_values() {
        let img = Array3::from_shape_fn((3, 5, 7), |(c, y, x)| {
            ((c * 31 + y * 7 + x * 13) % 256) as f64 / 255.0
        });
        let back = decode_png(&encode_png(&img).unwrap()).unwrap();
        assert_eq!(back, img);
        let gray = img.slice(ndarray::s![0..1, .., ..]).to_owned();
        assert_eq!(decode_png(&encode_png(&gray).unwrap()).unwrap(), gray);
    }

    #[test]
    fn jpeg_is_lossy_but_close() {
        let img = Array3::from_shape_fn((1, 16, 16), |(_, y, x)| (x + y) as f64 / 30.0);
        let out = jpeg_roundtrip(&img, 90).unwrap();
        assert_eq!(out.dim(), img.dim());
        let err = (&out - &img).mapv(f64::abs).fold(0.0f64, |m, &v| m.max(v));
        assert!(err < 0.05, "{err}");
    }

    #[test]
    fn signed_mapping_inverts() {
        let img = Array3::from_shape_fn((1, 2, 2), |(_, y, x)| (y * 2 + x) as f64 / 3.0);
        let back = from_signed(&to_signed(&img));
        assert!(back.iter().zip(img.iter()).all(|(a, b)| (a - b).abs() < 1e-15));
    }
}
