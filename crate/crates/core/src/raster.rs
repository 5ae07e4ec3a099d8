//! 8-bit planar images and the raw on-disk capture format.

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RasterError {
    #[error("image dimensions must be at least 1x1 with 1 or 3 channels, got {width}x{height}x{channels}")]
    BadShape { width: u32, height: u32, channels: u8 },
    #[error("sample buffer holds {got} bytes, expected {expected}")]
    BadLength { expected: usize, got: usize },
    #[error("raw image truncated")]
    Truncated,
}

/// Channel-major (planar) 8-bit image: all of channel 0, then channel 1, ...
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    pub width: u32,
    pub height: u32,
    pub channels: u8,
    pub data: Vec<u8>,
}

pub const RAW_HEADER_LEN: usize = 9;

impl Image {
    pub fn new(width: u32, height: u32, channels: u8, data: Vec<u8>) -> Result<Self, RasterError> {
        check_shape(width, height, channels)?;
        let expected = width as usize * height as usize * channels as usize;
        if data.len() != expected {
            return Err(RasterError::BadLength { expected, got: data.len() });
        }
        Ok(Image { width, height, channels, data })
    }

    pub fn filled(width: u32, height: u32, channels: u8, value: u8) -> Result<Self, RasterError> {
        check_shape(width, height, channels)?;
        let n = width as usize * height as usize * channels as usize;
        Ok(Image { width, height, channels, data: vec![value; n] })
    }

    /// Re-checks shape and buffer length of an image built field by field.
    pub fn check(&self) -> Result<(), RasterError> {
        check_shape(self.width, self.height, self.channels)?;
        let expected = self.plane_len() * self.channels as usize;
        if self.data.len() != expected {
            return Err(RasterError::BadLength { expected, got: self.data.len() });
        }
        Ok(())
    }

    pub fn plane_len(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn plane(&self, c: usize) -> &[u8] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn sample(&self, c: usize, x: u32, y: u32) -> u8 {
        self.data[c * self.plane_len() + y as usize * self.width as usize + x as usize]
    }

    /// Size of the samples alone: width x height x channels bytes.
    pub fn raw_size(&self) -> usize {
        self.data.len()
    }

    /// Pixel-interleaved samples (RGBRGB...), as raster file writers expect.
    pub fn interleaved(&self) -> Vec<u8> {
        let n = self.plane_len();
        let ch = self.channels as usize;
        let mut out = vec![0u8; self.data.len()];
        for i in 0..n {
            for c in 0..ch {
                out[i * ch + c] = self.data[c * n + i];
            }
        }
        out
    }

    pub fn from_interleaved(width: u32, height: u32, channels: u8, px: &[u8]) -> Result<Self, RasterError> {
        check_shape(width, height, channels)?;
        let n = width as usize * height as usize;
        let ch = channels as usize;
        if px.len() != n * ch {
            return Err(RasterError::BadLength { expected: n * ch, got: px.len() });
        }
        let mut data = vec![0u8; px.len()];
        for i in 0..n {
            for c in 0..ch {
                data[c * n + i] = px[i * ch + c];
            }
        }
        Ok(Image { width, height, channels, data })
    }

    /// Raw capture file: width u32 LE, height u32 LE, channels u8, samples.
    pub fn to_raw(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(RAW_HEADER_LEN + self.data.len());
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        out.push(self.channels);
        out.extend_from_slice(&self.data);
        out
    }

    pub fn from_raw(bytes: &[u8]) -> Result<Self, RasterError> {
        if bytes.len() < RAW_HEADER_LEN {
            return Err(RasterError::Truncated);
        }
        let width = u32::from_le_bytes(bytes[0..4].try_into().expect("4 bytes"));
        let height = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        let channels = bytes[8];
        check_shape(width, height, channels)?;
        let n = width as usize * height as usize * channels as usize;
        let body = &bytes[RAW_HEADER_LEN..];
        if body.len() < n {
            return Err(RasterError::Truncated);
        }
        Image::new(width, height, channels, body[..n].to_vec())
    }
}

fn check_shape(width: u32, height: u32, channels: u8) -> Result<(), RasterError> {
    if width == 0 || height == 0 || !(channels == 1 || channels == 3) {
        return Err(RasterError::BadShape { width, height, channels });
    }
    Ok(())
}
