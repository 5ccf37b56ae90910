//! Binary pixmaps (P6, 8-bit) and greyscale float maps (Pf).

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Writes `[H,W,3]` in `[0,1]` as P6, rounding to the nearest 8-bit level.
pub fn write_ppm(mut w: impl Write, img: &Tensor<f64>) -> std::io::Result<()> {
    let s = img.shape();
    write!(w, "P6\n{} {}\n255\n", s[1], s[0])?;
    let bytes: Vec<u8> = img.data().iter().map(|&v| to_byte(v)).collect();
    w.write_all(&bytes)
}

pub fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Snaps values to the 8-bit levels a pixmap can store.
pub fn quantize(img: &Tensor<f64>) -> Tensor<f64> {
    img.map(|v| to_byte(v) as f64 / 255.0)
}

fn header_token(r: &mut impl BufRead) -> Result<String> {
    let mut tok = String::new();
    loop {
        let mut b = [0u8; 1];
        if r.read(&mut b).map_err(|e| Error::Data(format!("pixmap header: {e}")))? == 0 {
            return Err(Error::Data("pixmap header ended early".into()));
        }
        let c = b[0] as char;
        if c == '#' && tok.is_empty() {
            let mut skip = String::new();
            r.read_line(&mut skip).map_err(|e| Error::Data(format!("pixmap header: {e}")))?;
        } else if c.is_ascii_whitespace() {
            if !tok.is_empty() {
                return Ok(tok);
            }
        } else {
            tok.push(c);
        }
    }
}

fn number(r: &mut impl BufRead, what: &str) -> Result<usize> {
    let t = header_token(r)?;
    t.parse().map_err(|_| Error::Data(format!("pixmap {what} {t:?} is not a number")))
}

/// Reads a P6 pixmap into `[H,W,3]` with values `byte / 255`.
pub fn read_ppm(mut r: impl BufRead) -> Result<Tensor<f64>> {
    let magic = header_token(&mut r)?;
    if magic != "P6" {
        return Err(Error::Data(format!("expected a P6 pixmap, found {magic:?}")));
    }
    let (w, h, max) = (number(&mut r, "width")?, number(&mut r, "height")?, number(&mut r, "maxval")?);
    if max != 255 {
        return Err(Error::Data(format!("only 8-bit pixmaps are supported, maxval {max}")));
    }
    let mut bytes = vec![0u8; w * h * 3];
    r.read_exact(&mut bytes).map_err(|_| Error::Data(format!("pixmap data shorter than {w}x{h}")))?;
    Tensor::new(&[h, w, 3], bytes.iter().map(|&b| b as f64 / 255.0).collect())
}

/// Writes `[H,W]` as a little-endian greyscale float map, rows bottom to top.
pub fn write_pfm(mut w: impl Write, map: &Tensor<f64>) -> std::io::Result<()> {
    let s = map.shape();
    write!(w, "Pf\n{} {}\n-1.0\n", s[1], s[0])?;
    for row in map.data().chunks(s[1]).rev() {
        for &v in row {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_pfm(mut r: impl BufRead) -> Result<Tensor<f64>> {
    let magic = header_token(&mut r)?;
    if magic != "Pf" {
        return Err(Error::Data(format!("expected a Pf float map, found {magic:?}")));
    }
    let (w, h) = (number(&mut r, "width")?, number(&mut r, "height")?);
    let scale = header_token(&mut r)?;
    if !scale.starts_with('-') {
        return Err(Error::Data("only little-endian float maps are supported".into()));
    }
    let mut bytes = vec![0u8; w * h * 4];
    r.read_exact(&mut bytes).map_err(|_| Error::Data(format!("float map data shorter than {w}x{h}")))?;
    let vals: Vec<f64> = bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64).collect();
    let mut out = Vec::with_capacity(w * h);
    for row in vals.chunks(w).rev() {
        out.extend_from_slice(row);
    }
    Tensor::new(&[h, w], out)
}
