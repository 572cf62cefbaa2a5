//! Binary PGM (P5) and PPM (P6) with maxval 255.

use std::fs;
use std::path::Path;

use super::ImageU8;
use crate::error::{Error, Result};

pub fn encode_pnm(img: &ImageU8) -> Vec<u8> {
    let magic = if img.channels() == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(img.pixels());
    out
}

pub fn decode_pnm(bytes: &[u8]) -> Result<ImageU8> {
    let mut pos = 0;
    let token = |pos: &mut usize| -> Result<String> {
        loop {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < bytes.len() && bytes[*pos] == b'#' {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
                continue;
            }
            break;
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if start == *pos {
            return Err(Error::format(start, "truncated header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
    };
    let channels = match token(&mut pos)?.as_str() {
        "P5" => 1,
        "P6" => 3,
        other => return Err(Error::format(0, format!("unsupported magic {other:?}"))),
    };
    let number = |pos: &mut usize, what: &str| -> Result<usize> {
        let at = *pos;
        token(pos)?.parse().map_err(|_| Error::format(at, format!("bad {what}")))
    };
    let width = number(&mut pos, "width")?;
    let height = number(&mut pos, "height")?;
    let maxval_at = pos;
    let maxval = number(&mut pos, "maxval")?;
    if maxval != 255 {
        return Err(Error::format(maxval_at, format!("maxval {maxval}; only 255 is supported")));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let need = width * height * channels;
    if bytes.len() < pos + need {
        return Err(Error::format(bytes.len(), format!("raster needs {need} bytes")));
    }
    ImageU8::new(height, width, channels, bytes[pos..pos + need].to_vec())
}

pub fn read_pnm(path: impl AsRef<Path>) -> Result<ImageU8> {
    decode_pnm(&fs::read(path)?)
}

pub fn write_pnm(path: impl AsRef<Path>, img: &ImageU8) -> Result<()> {
    fs::write(path, encode_pnm(img))?;
    Ok(())
}
