use std::io::{Read, Write};

use crate::error::{CoreError, Result};

/// Quantise a `[0,1]` value to 8 bits.
pub fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Binary P6 encoding of an `H×W×3` image with values in `[0,1]`.
pub fn encode_ppm(image: &[f64], width: usize, height: usize) -> Vec<u8> {
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend(image.iter().map(|&v| to_u8(v)));
    out
}

pub fn write_ppm<W: Write>(w: &mut W, image: &[f64], width: usize, height: usize) -> Result<()> {
    w.write_all(&encode_ppm(image, width, height))?;
    Ok(())
}

/// Parse a binary P6 file into `(values in [0,1], width, height)`.
pub fn read_ppm<R: Read>(r: &mut R) -> Result<(Vec<f64>, usize, usize)> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let bad = |m: &str| CoreError::Data(format!("ppm: {m}"));
    let mut pos = 0;
    let mut fields = Vec::new();
    while fields.len() < 4 {
        while pos < buf.len() && buf[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < buf.len() && buf[pos] == b'#' {
            while pos < buf.len() && buf[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < buf.len() && !buf[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(String::from_utf8_lossy(&buf[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != "P6" {
        return Err(bad("not a binary P6 file"));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
    let (w, h, max) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
    if max != 255 {
        return Err(bad("only 8-bit images are supported"));
    }
    let n = w * h * 3;
    if buf.len() < pos + n {
        return Err(bad("truncated pixel data"));
    }
    Ok((buf[pos..pos + n].iter().map(|&b| b as f64 / 255.0).collect(), w, h))
}
