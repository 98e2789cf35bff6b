//! 8-bit grayscale images and binary PGM (P5) I/O.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::scalar::{num, Scalar};

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("data length {got} does not match {width}x{height}")]
    SizeMismatch { width: u32, height: u32, got: usize },
    #[error("image dimensions must be at least 1x1")]
    EmptyDimensions,
    #[error("not a binary PGM: expected magic \"P5\"")]
    BadMagic,
    #[error("malformed PGM header: {0}")]
    BadHeader(String),
    #[error("PGM maxval must be 255, got {0}")]
    BadMaxval(u32),
    #[error("PGM pixel payload truncated")]
    Truncated,
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Row-major 8-bit grayscale image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl Image {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::EmptyDimensions);
        }
        if data.len() != (width as usize) * (height as usize) {
            return Err(ImageError::SizeMismatch {
                width,
                height,
                got: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> u8) -> Self {
        let mut data = Vec::with_capacity((width as usize) * (height as usize));
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    /// Bilinear sample at real coordinates; `None` outside `[0, w-1] x [0, h-1]`.
    pub fn sample_bilinear<S: Scalar>(&self, x: S, y: S) -> Option<S> {
        if x < S::zero() || y < S::zero() {
            return None;
        }
        let max_x = num::<S>((self.width - 1) as f64);
        let max_y = num::<S>((self.height - 1) as f64);
        if x > max_x || y > max_y {
            return None;
        }
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let xi = x0.to_usize().unwrap().min(self.width as usize - 1);
        let yi = y0.to_usize().unwrap().min(self.height as usize - 1);
        let x1 = (xi + 1).min(self.width as usize - 1);
        let y1 = (yi + 1).min(self.height as usize - 1);
        let w = self.width as usize;
        let at = |xx: usize, yy: usize| num::<S>(self.data[yy * w + xx] as f64);
        let top = at(xi, yi) * (S::one() - fx) + at(x1, yi) * fx;
        let bot = at(xi, y1) * (S::one() - fx) + at(x1, y1) * fx;
        Some(top * (S::one() - fy) + bot * fy)
    }

    /// Writes the image as binary PGM: `P5\n<w> <h>\n255\n` followed by raw rows.
    pub fn write_pgm(&self, mut w: impl Write) -> io::Result<()> {
        write!(w, "P5\n{} {}\n255\n", self.width, self.height)?;
        w.write_all(&self.data)
    }

    pub fn save_pgm(&self, path: impl AsRef<Path>) -> io::Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_pgm(&mut w)?;
        w.flush()
    }

    pub fn read_pgm(r: impl Read) -> Result<Self, ImageError> {
        let mut r = BufReader::new(r);
        let mut magic = [0u8; 2];
        r.read_exact(&mut magic).map_err(|_| ImageError::BadMagic)?;
        if &magic != b"P5" {
            return Err(ImageError::BadMagic);
        }
        let width = read_header_value(&mut r)?;
        let height = read_header_value(&mut r)?;
        let maxval = read_header_value(&mut r)?;
        if maxval != 255 {
            return Err(ImageError::BadMaxval(maxval));
        }
        if width == 0 || height == 0 {
            return Err(ImageError::EmptyDimensions);
        }
        let mut data = vec![0u8; width as usize * height as usize];
        r.read_exact(&mut data).map_err(|_| ImageError::Truncated)?;
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn load_pgm(path: impl AsRef<Path>) -> Result<Self, ImageError> {
        Self::read_pgm(File::open(path)?)
    }
}

/// Reads one ASCII integer from a PGM header, skipping whitespace and
/// `#` comment lines. Exactly one whitespace byte terminates the value.
fn read_header_value(r: &mut impl BufRead) -> Result<u32, ImageError> {
    let mut value: Option<u32> = None;
    loop {
        let mut byte = [0u8; 1];
        if r.read(&mut byte)? == 0 {
            return Err(ImageError::BadHeader("unexpected end of header".into()));
        }
        let b = byte[0];
        match b {
            b'#' if value.is_none() => {
                let mut comment = String::new();
                r.read_line(&mut comment)?;
            }
            b'0'..=b'9' => {
                let digit = (b - b'0') as u32;
                value = Some(
                    value
                        .unwrap_or(0)
                        .checked_mul(10)
                        .and_then(|v| v.checked_add(digit))
                        .ok_or_else(|| ImageError::BadHeader("value overflow".into()))?,
                );
            }
            b' ' | b'\t' | b'\r' | b'\n' => {
                if let Some(v) = value {
                    return Ok(v);
                }
            }
            other => {
                return Err(ImageError::BadHeader(format!(
                    "unexpected byte 0x{other:02x}"
                )))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_validates_dimensions() {
        assert!(Image::new(0, 4, vec![]).is_err());
        assert!(Image::new(2, 2, vec![0; 3]).is_err());
        assert!(Image::new(2, 2, vec![0; 4]).is_ok());
    }

    #[test]
    fn pgm_roundtrip_is_bit_exact() {
        let img = Image::from_fn(13, 7, |x, y| (x * 19 + y * 31) as u8);
        let mut bytes = Vec::new();
        img.write_pgm(&mut bytes).unwrap();
        assert!(bytes.starts_with(b"P5\n13 7\n255\n"));
        let back = Image::read_pgm(&bytes[..]).unwrap();
        assert_eq!(back, img);

        let mut again = Vec::new();
        back.write_pgm(&mut again).unwrap();
        assert_eq!(again, bytes);
    }

    #[test]
    fn pgm_reader_accepts_comments_and_rejects_garbage() {
        let mut bytes: Vec<u8> = b"P5\n# produced by a scanner\n3 2\n255\n".to_vec();
        bytes.extend_from_slice(&[1, 2, 3, 4, 5, 6]);
        let img = Image::read_pgm(&bytes[..]).unwrap();
        assert_eq!((img.width(), img.height()), (3, 2));
        assert_eq!(img.get(2, 1), 6);

        assert!(matches!(
            Image::read_pgm(&b"P6\n1 1\n255\n\0"[..]),
            Err(ImageError::BadMagic)
        ));
        assert!(matches!(
            Image::read_pgm(&b"P5\n1 1\n65535\n\0\0"[..]),
            Err(ImageError::BadMaxval(65535))
        ));
        assert!(matches!(
            Image::read_pgm(&b"P5\n4 4\n255\nxx"[..]),
            Err(ImageError::Truncated)
        ));
    }

    #[test]
    fn bilinear_interpolates_and_bounds() {
        let img = Image::new(2, 2, vec![0, 100, 200, 100]).unwrap();
        assert_eq!(img.sample_bilinear::<f64>(0.0, 0.0), Some(0.0));
        assert_eq!(img.sample_bilinear::<f64>(1.0, 0.0), Some(100.0));
        assert_eq!(img.sample_bilinear::<f64>(0.5, 0.5), Some(100.0));
        assert_eq!(img.sample_bilinear::<f64>(-0.1, 0.0), None);
        assert_eq!(img.sample_bilinear::<f64>(1.01, 0.0), None);
    }
}
