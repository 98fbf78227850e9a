//! Portable pixmaps: binary PPM for colour images, binary PGM for masks.

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, GrayImage, ImageEncoder, ImageFormat};

use crate::geometry::{BinaryMask, RgbImage};
use crate::{Error, Result};

fn encode(img: DynamicImage, subtype: PnmSubtype) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    PnmEncoder::new(&mut out)
        .with_subtype(subtype)
        .write_image(img.as_bytes(), img.width(), img.height(), img.color().into())
        .map_err(|e| Error::format("pnm image", e.to_string()))?;
    Ok(out)
}

fn decode(bytes: &[u8]) -> Result<DynamicImage> {
    image::load_from_memory_with_format(bytes, ImageFormat::Pnm).map_err(|e| Error::format("pnm image", e.to_string()))
}

/// Quantizes to 8 bits and writes a P6 pixmap.
pub fn encode_ppm(img: &RgbImage) -> Result<Vec<u8>> {
    let raw = image::RgbImage::from_raw(img.width as u32, img.height as u32, img.to_u8())
        .ok_or_else(|| Error::DimensionMismatch(format!("{}x{} image buffer", img.width, img.height)))?;
    encode(DynamicImage::ImageRgb8(raw), PnmSubtype::Pixmap(SampleEncoding::Binary))
}

/// Any PNM flavour, converted to 8-bit RGB.
pub fn decode_ppm(bytes: &[u8]) -> Result<RgbImage> {
    let img = decode(bytes)?.to_rgb8();
    Ok(RgbImage::from_u8(img.width() as usize, img.height() as usize, img.as_raw()))
}

/// Writes a P5 graymap with 255 for set pixels.
pub fn encode_mask(mask: &BinaryMask) -> Result<Vec<u8>> {
    let bytes = mask.data.iter().map(|&b| if b { 255 } else { 0 }).collect();
    let raw = GrayImage::from_raw(mask.width as u32, mask.height as u32, bytes)
        .ok_or_else(|| Error::DimensionMismatch(format!("{}x{} mask buffer", mask.width, mask.height)))?;
    encode(DynamicImage::ImageLuma8(raw), PnmSubtype::Graymap(SampleEncoding::Binary))
}

/// Any PNM flavour; pixels at or above half intensity are set.
pub fn decode_mask(bytes: &[u8]) -> Result<BinaryMask> {
    let img = decode(bytes)?.to_luma8();
    Ok(BinaryMask { width: img.width() as usize, height: img.height() as usize, data: img.as_raw().iter().map(|&v| v >= 128).collect() })
}
