//! Binary PPM (P6) colour images and PGM (P5) grayscale images.

use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `3 x H x W` image with values in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageSample<T: Scalar> {
    pub tensor: Tensor<T>,
}

impl<T: Scalar> ImageSample<T> {
    pub fn height(&self) -> usize {
        self.tensor.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.tensor.shape()[2]
    }

    /// Interleaved RGB bytes in `[0, 255]` with round-half-up.
    pub fn to_bytes(&self) -> Vec<u8> {
        let (h, w) = (self.height(), self.width());
        let d = self.tensor.data();
        let mut out = Vec::with_capacity(3 * h * w);
        for p in 0..h * w {
            for c in 0..3 {
                out.push(to_byte(d[c * h * w + p].to_f64_lossy()));
            }
        }
        out
    }

    pub fn from_bytes(w: usize, h: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != 3 * w * h {
            return Err(Error::format(format!(
                "expected {} RGB bytes for {w}x{h}, got {}",
                3 * w * h,
                bytes.len()
            )));
        }
        let mut data = vec![T::zero(); 3 * h * w];
        for p in 0..h * w {
            for c in 0..3 {
                data[c * h * w + p] = from_byte(bytes[3 * p + c]);
            }
        }
        Ok(ImageSample { tensor: Tensor::new(vec![3, h, w], data)? })
    }
}

pub fn from_byte<T: Scalar>(b: u8) -> T {
    T::lit(2.0 * b as f64 / 255.0 - 1.0)
}

pub fn to_byte(v: f64) -> u8 {
    ((v + 1.0) * 255.0 / 2.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

struct Header {
    width: usize,
    height: usize,
    data_start: usize,
}

fn parse_header(bytes: &[u8], magic: &[u8; 2]) -> Result<Header> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(Error::format(format!(
            "not a binary {} file",
            String::from_utf8_lossy(magic)
        )));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and comments between tokens
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(Error::format("truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format("malformed header field"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| Error::format("header value out of range"))?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::format("missing whitespace after maxval")),
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(Error::format(format!("unsupported maxval {maxval} (only 255)")));
    }
    if width == 0 || height == 0 {
        return Err(Error::format("zero image dimension"));
    }
    Ok(Header { width, height, data_start: pos })
}

pub fn decode_ppm<T: Scalar>(bytes: &[u8]) -> Result<ImageSample<T>> {
    let h = parse_header(bytes, b"P6")?;
    let need = 3 * h.width * h.height;
    let payload = &bytes[h.data_start..];
    if payload.len() < need {
        return Err(Error::format(format!(
            "truncated payload: {} of {need} bytes",
            payload.len()
        )));
    }
    ImageSample::from_bytes(h.width, h.height, &payload[..need])
}

pub fn encode_ppm<T: Scalar>(img: &ImageSample<T>) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.to_bytes());
    out
}

pub fn load_image<T: Scalar>(path: &Path) -> Result<ImageSample<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ppm(&bytes).map_err(|e| Error::format(format!("{}: {e}", path.display())))
}

pub fn save_image<T: Scalar>(path: &Path, img: &ImageSample<T>) -> Result<()> {
    std::fs::write(path, encode_ppm(img)).map_err(|e| Error::io(path, e))
}

/// Grayscale bytes, row-major, `width * height` long.
pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    assert_eq!(pixels.len(), width * height);
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

pub fn decode_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let h = parse_header(bytes, b"P5")?;
    let need = h.width * h.height;
    let payload = &bytes[h.data_start..];
    if payload.len() < need {
        return Err(Error::format(format!("truncated payload: {} of {need} bytes", payload.len())));
    }
    Ok((h.width, h.height, payload[..need].to_vec()))
}

pub fn save_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    std::fs::write(path, encode_pgm(width, height, pixels)).map_err(|e| Error::io(path, e))
}

pub fn load_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes).map_err(|e| Error::format(format!("{}: {e}", path.display())))
}
