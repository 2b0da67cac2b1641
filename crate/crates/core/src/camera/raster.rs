use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{invalid, Error, Result};

/// Row-major, channels-last float image.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Raster {
    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn from_fn(width: usize, height: usize, channels: usize, f: impl Fn(usize, usize, usize) -> f32) -> Self {
        let mut r = Self::zeros(width, height, channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    r.data[(y * width + x) * channels + c] = f(x, y, c);
                }
            }
        }
        r
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    /// Bilinear sample at a continuous pixel position; `None` outside
    /// `[0, width-1] x [0, height-1]`.
    pub fn sample_bilinear(&self, u: f64, v: f64, out: &mut [f32]) -> bool {
        if !(u >= 0.0 && v >= 0.0 && u <= (self.width - 1) as f64 && v <= (self.height - 1) as f64) {
            return false;
        }
        let x0 = (u.floor() as usize).min(self.width - 1);
        let y0 = (v.floor() as usize).min(self.height - 1);
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = (u - x0 as f64) as f32;
        let fy = (v - y0 as f64) as f32;
        for (c, o) in out.iter_mut().enumerate().take(self.channels) {
            let top = self.get(x0, y0, c) * (1.0 - fx) + self.get(x1, y0, c) * fx;
            let bottom = self.get(x0, y1, c) * (1.0 - fx) + self.get(x1, y1, c) * fx;
            *o = top * (1.0 - fy) + bottom * fy;
        }
        true
    }

    /// Reads a binary PGM (`P5`) or PPM (`P6`) with 8-bit samples.
    pub fn read_pnm(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::decode_pnm(BufReader::new(file))
    }

    pub fn decode_pnm(mut r: impl BufRead) -> Result<Self> {
        let magic = next_token(&mut r)?;
        let channels = match magic.as_str() {
            "P5" => 1,
            "P6" => 3,
            other => return Err(invalid(format!("unsupported PNM magic {other:?}"))),
        };
        let width: usize = parse_token(&mut r, "width")?;
        let height: usize = parse_token(&mut r, "height")?;
        let maxval: usize = parse_token(&mut r, "maxval")?;
        if maxval == 0 || maxval > 255 {
            return Err(invalid(format!("only 8-bit PNM supported, maxval {maxval}")));
        }
        if width == 0 || height == 0 {
            return Err(invalid("PNM image must be non-empty"));
        }
        let mut bytes = vec![0u8; width * height * channels];
        r.read_exact(&mut bytes)?;
        let scale = 255.0 / maxval as f32;
        Ok(Self {
            width,
            height,
            channels,
            data: bytes.into_iter().map(|b| b as f32 * scale).collect(),
        })
    }

    /// Writes `P5` for one channel, `P6` for three; values are rounded and
    /// clamped to `[0, 255]`.
    pub fn write_pnm(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.encode_pnm(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn encode_pnm(&self, w: &mut impl Write) -> Result<()> {
        let magic = match self.channels {
            1 => "P5",
            3 => "P6",
            c => return Err(invalid(format!("PNM needs 1 or 3 channels, got {c}"))),
        };
        write!(w, "{magic}\n{} {}\n255\n", self.width, self.height)?;
        let bytes: Vec<u8> = self.data.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect();
        w.write_all(&bytes)?;
        Ok(())
    }
}

fn next_token(r: &mut impl BufRead) -> Result<String> {
    let mut tok = String::new();
    let mut byte = [0u8; 1];
    loop {
        if r.read(&mut byte)? == 0 {
            if tok.is_empty() {
                return Err(Error::Io(std::io::Error::new(
                    std::io::ErrorKind::UnexpectedEof,
                    "truncated PNM header",
                )));
            }
            return Ok(tok);
        }
        let c = byte[0];
        if c == b'#' && tok.is_empty() {
            let mut line = Vec::new();
            r.read_until(b'\n', &mut line)?;
            continue;
        }
        if c.is_ascii_whitespace() {
            if tok.is_empty() {
                continue;
            }
            return Ok(tok);
        }
        tok.push(c as char);
    }
}

fn parse_token<T: std::str::FromStr>(r: &mut impl BufRead, what: &str) -> Result<T> {
    let tok = next_token(r)?;
    tok.parse()
        .map_err(|_| invalid(format!("bad PNM {what}: {tok:?}")))
}
