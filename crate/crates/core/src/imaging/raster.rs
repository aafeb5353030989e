use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{IdcError, Result};

/// 8-bit RGB image, rows top to bottom, channels interleaved.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Raster {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl Raster {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(IdcError::InvalidArgument(format!(
                "raster dimensions must be positive, got {width}x{height}"
            )));
        }
        if data.len() != width * height * 3 {
            return Err(IdcError::Shape(format!(
                "{width}x{height} RGB raster needs {} bytes, got {}",
                width * height * 3,
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let data = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Self::new(width, height, data).expect("filled raster")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn mean_level(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    /// Binary PPM (P6, maxval 255).
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn from_ppm(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| IdcError::InvalidArgument(format!("malformed PPM: {m}"));
        let mut pos = 0;
        let mut fields = Vec::with_capacity(4);
        while fields.len() < 4 {
            // whitespace and comments between header tokens
            loop {
                match bytes.get(pos) {
                    Some(b) if b.is_ascii_whitespace() => pos += 1,
                    Some(b'#') => {
                        while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                            pos += 1;
                        }
                    }
                    Some(_) => break,
                    None => return Err(bad("truncated header")),
                }
            }
            let start = pos;
            while bytes.get(pos).is_some_and(|b| !b.is_ascii_whitespace()) {
                pos += 1;
            }
            fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header"))?);
        }
        if fields[0] != "P6" {
            return Err(bad("magic is not P6"));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| bad("header number"));
        let (w, h, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
        if maxval != 255 {
            return Err(bad("maxval must be 255"));
        }
        // exactly one whitespace byte before the raster
        pos += 1;
        let need = w * h * 3;
        if bytes.len() < pos + need {
            return Err(bad("truncated pixel data"));
        }
        Self::new(w, h, bytes[pos..pos + need].to_vec())
    }

    pub fn save_ppm(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| IdcError::io(path, e))?;
        f.write_all(&self.to_ppm()).map_err(|e| IdcError::io(path, e))
    }

    pub fn load_ppm(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| IdcError::io(path, e))?;
        Self::from_ppm(&bytes).map_err(|e| match e {
            IdcError::InvalidArgument(m) => IdcError::InvalidArgument(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ppm_header_is_bit_exact() {
        let r = Raster::filled(2, 1, [1, 2, 3]);
        assert_eq!(r.to_ppm(), b"P6\n2 1\n255\n\x01\x02\x03\x01\x02\x03".to_vec());
    }

    #[test]
    fn ppm_accepts_comments_and_rejects_junk() {
        let bytes = b"P6 # made by hand\n1 1\n255\n\x09\x08\x07";
        let r = Raster::from_ppm(bytes).unwrap();
        assert_eq!(r.pixel(0, 0), [9, 8, 7]);
        assert!(Raster::from_ppm(b"P5\n1 1\n255\n\x00").is_err());
        assert!(Raster::from_ppm(b"P6\n2 2\n255\n\x00\x00").is_err());
        assert!(Raster::from_ppm(b"P6\n1 1\n65535\n\x00\x00\x00").is_err());
    }

    proptest! {
        #[test]
        fn ppm_round_trip(w in 1usize..6, h in 1usize..6, seed in any::<u8>()) {
            let data: Vec<u8> = (0..w * h * 3).map(|i| (i as u8).wrapping_mul(31).wrapping_add(seed)).collect();
            let r = Raster::new(w, h, data).unwrap();
            prop_assert_eq!(Raster::from_ppm(&r.to_ppm()).unwrap(), r);
        }
    }
}
