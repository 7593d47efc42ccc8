//! Binary PGM (P5) reading/writing. P6 color files are accepted on read and
//! converted to luma.

use std::fs;
use std::path::Path;

use super::{luma, Image};
use crate::error::{Error, Result};

pub fn encode_pgm(img: &Image) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(img.pixels());
    out
}

pub fn write_pgm(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    fs::write(path, encode_pgm(img))?;
    Ok(())
}

pub fn read_pnm(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    decode_pnm(&bytes).map_err(|e| match e {
        Error::InvalidArgument(msg) => Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: msg,
        },
        other => other,
    })
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderReader<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn token(&mut self) -> Result<&str> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::InvalidArgument("truncated PNM header".into()));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .map_err(|_| Error::InvalidArgument("non-ascii PNM header".into()))
    }

    fn number(&mut self) -> Result<usize> {
        let tok = self.token()?;
        tok.parse()
            .map_err(|_| Error::InvalidArgument(format!("bad PNM header field {tok:?}")))
    }
}

pub fn decode_pnm(bytes: &[u8]) -> Result<Image> {
    let mut r = HeaderReader { bytes, pos: 0 };
    let magic = r.token()?.to_owned();
    let channels = match magic.as_str() {
        "P5" => 1,
        "P6" => 3,
        other => {
            return Err(Error::InvalidArgument(format!(
                "unsupported PNM type {other:?}, expected P5 or P6"
            )))
        }
    };
    let width = r.number()?;
    let height = r.number()?;
    let maxval = r.number()?;
    if maxval != 255 {
        return Err(Error::InvalidArgument(format!(
            "only maxval 255 is supported, got {maxval}"
        )));
    }
    // exactly one whitespace byte separates the header from the raster
    let start = r.pos + 1;
    let needed = width * height * channels;
    let raster = bytes
        .get(start..start + needed)
        .ok_or_else(|| Error::InvalidArgument("PNM raster shorter than header declares".into()))?;
    let pixels = if channels == 1 {
        raster.to_vec()
    } else {
        raster.chunks_exact(3).map(|c| luma(c[0], c[1], c[2])).collect()
    };
    Image::new(width, height, pixels)
}
