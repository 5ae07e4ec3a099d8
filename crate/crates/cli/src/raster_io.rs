//! PNG and raw-capture file conversion.

use std::io::Cursor;

use image::{ColorType, DynamicImage, ExtendedColorType, ImageEncoder, ImageFormat};
use nanosat_core::raster::Image;

const PNG_MAGIC: &[u8] = b"\x89PNG\r\n\x1a\n";

#[derive(Debug, thiserror::Error)]
pub enum RasterIoError {
    #[error("png: {0}")]
    Png(#[from] image::ImageError),
    #[error(transparent)]
    Raster(#[from] nanosat_core::raster::RasterError),
}

pub fn to_png(img: &Image) -> Result<Vec<u8>, RasterIoError> {
    let color = if img.channels == 1 { ExtendedColorType::L8 } else { ExtendedColorType::Rgb8 };
    let mut out = Vec::new();
    image::codecs::png::PngEncoder::new(&mut out).write_image(&img.interleaved(), img.width, img.height, color)?;
    Ok(out)
}

pub fn from_png(bytes: &[u8]) -> Result<Image, RasterIoError> {
    let dynamic = image::load(Cursor::new(bytes), ImageFormat::Png)?;
    let gray = matches!(dynamic.color(), ColorType::L8 | ColorType::L16 | ColorType::La8 | ColorType::La16);
    Ok(if gray {
        let buf = dynamic.to_luma8();
        Image::from_interleaved(buf.width(), buf.height(), 1, buf.as_raw())?
    } else {
        let buf = DynamicImage::to_rgb8(&dynamic);
        Image::from_interleaved(buf.width(), buf.height(), 3, buf.as_raw())?
    })
}

/// Reads PNG when the magic matches, otherwise the raw capture format.
pub fn load_any(bytes: &[u8]) -> Result<Image, RasterIoError> {
    if bytes.starts_with(PNG_MAGIC) {
        from_png(bytes)
    } else {
        Ok(Image::from_raw(bytes)?)
    }
}
