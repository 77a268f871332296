//! 8-bit PNG and PPM images.
//!
//! Reading maps 8-bit values to `v / 255`; writing quantizes with round half
//! up, so a write/read cycle is within `1/510` per component. PNG alpha is
//! dropped and 8-bit grayscale is expanded to RGB; 16-bit and float images are
//! rejected. PPM output is ASCII (`P3`).

use std::io::Cursor;
use std::path::Path;

use image::codecs::png::PngEncoder;
use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ExtendedColorType, ImageEncoder, ImageFormat, ImageReader};

use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::scalar::Real;

fn format_error(e: impl std::fmt::Display) -> Error {
    Error::Format(e.to_string())
}

fn from_dynamic<T: Real>(img: DynamicImage) -> Result<ImageBuffer<T>> {
    let rgb = match img {
        DynamicImage::ImageRgb8(b) => b,
        DynamicImage::ImageRgba8(_) | DynamicImage::ImageLuma8(_) | DynamicImage::ImageLumaA8(_) => img.to_rgb8(),
        other => {
            return Err(Error::Format(format!(
                "unsupported pixel format {:?}; only 8-bit RGB, RGBA and grayscale are accepted",
                other.color()
            )))
        }
    };
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let scale = T::lit(255.0);
    let pixels = rgb.pixels().map(|p| p.0.map(|v| T::lit(f64::from(v)) / scale)).collect();
    ImageBuffer::new(w, h, pixels)
}

/// Round-half-up 8-bit quantization of an image, row-major RGB.
pub fn quantize<T: Real>(image: &ImageBuffer<T>) -> Vec<u8> {
    image
        .pixels()
        .iter()
        .flat_map(|p| p.map(|v| (v.as_f64() * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8))
        .collect()
}

fn dims_u32<T: Real>(image: &ImageBuffer<T>) -> Result<(u32, u32)> {
    let w = u32::try_from(image.width()).map_err(format_error)?;
    let h = u32::try_from(image.height()).map_err(format_error)?;
    Ok((w, h))
}

/// Decodes PNG or PPM bytes, guessing the format from the content.
pub fn decode_image<T: Real>(bytes: &[u8]) -> Result<ImageBuffer<T>> {
    let reader = ImageReader::new(Cursor::new(bytes)).with_guessed_format().map_err(format_error)?;
    match reader.format() {
        Some(ImageFormat::Png) | Some(ImageFormat::Pnm) => {}
        Some(other) => return Err(Error::Format(format!("unsupported image format {other:?}"))),
        None => return Err(Error::Format("unrecognized image data".into())),
    }
    from_dynamic(reader.decode().map_err(format_error)?)
}

/// Width and height from the image header, without decoding pixels.
pub fn image_dimensions(bytes: &[u8]) -> Result<(usize, usize)> {
    let reader = ImageReader::new(Cursor::new(bytes)).with_guessed_format().map_err(format_error)?;
    let (w, h) = reader.into_dimensions().map_err(format_error)?;
    Ok((w as usize, h as usize))
}

pub fn encode_png<T: Real>(image: &ImageBuffer<T>) -> Result<Vec<u8>> {
    let (w, h) = dims_u32(image)?;
    let mut out = Vec::new();
    PngEncoder::new(&mut out)
        .write_image(&quantize(image), w, h, ExtendedColorType::Rgb8)
        .map_err(format_error)?;
    Ok(out)
}

/// ASCII `P3` pixmap.
pub fn encode_ppm<T: Real>(image: &ImageBuffer<T>) -> Result<Vec<u8>> {
    let (w, h) = dims_u32(image)?;
    let mut out = Vec::new();
    PnmEncoder::new(&mut out)
        .with_subtype(PnmSubtype::Pixmap(SampleEncoding::Ascii))
        .write_image(&quantize(image), w, h, ExtendedColorType::Rgb8)
        .map_err(format_error)?;
    Ok(out)
}

pub fn read_image<T: Real>(path: impl AsRef<Path>) -> Result<ImageBuffer<T>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image(&bytes)
}

/// Writes PNG or PPM depending on the extension.
pub fn write_image<T: Real>(image: &ImageBuffer<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    let bytes = match ext.as_str() {
        "png" => encode_png(image)?,
        "ppm" => encode_ppm(image)?,
        other => return Err(Error::Format(format!("unsupported output extension {other:?}; use .png or .ppm"))),
    };
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
