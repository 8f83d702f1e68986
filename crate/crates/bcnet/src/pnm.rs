//! Binary PPM (P6) and PGM (P5) reading and writing, 8-bit only.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

fn parse_header(bytes: &[u8], magic: &str, path: &Path) -> Result<(usize, usize, usize)> {
    let p = || path.display().to_string();
    let mut pos = 0usize;
    let mut token = |expect_magic: bool| -> Result<String> {
        // skip whitespace and comments
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(p(), "truncated header"));
        }
        let s = std::str::from_utf8(&bytes[start..pos])
            .map_err(|_| Error::format(p(), "non-ASCII header"))?;
        let _ = expect_magic;
        Ok(s.to_string())
    };
    let m = token(true)?;
    if m != magic {
        return Err(Error::format(p(), format!("expected {magic}, got {m}")));
    }
    let w: usize = token(false)?
        .parse()
        .map_err(|_| Error::format(p(), "bad width"))?;
    let h: usize = token(false)?
        .parse()
        .map_err(|_| Error::format(p(), "bad height"))?;
    let maxval: usize = token(false)?
        .parse()
        .map_err(|_| Error::format(p(), "bad maxval"))?;
    if maxval != 255 {
        return Err(Error::format(p(), format!("unsupported maxval {maxval}")));
    }
    // exactly one whitespace byte separates header from payload
    pos += 1;
    Ok((w, h, pos))
}

/// Read a P6 image into row-major H×W×3 floats in [0, 1].
pub fn read_ppm(path: &Path) -> Result<(Vec<f32>, usize, usize)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let (w, h, off) = parse_header(&bytes, "P6", path)?;
    let need = w * h * 3;
    if bytes.len() < off + need {
        return Err(Error::format(path.display().to_string(), "truncated pixel data"));
    }
    let data = bytes[off..off + need]
        .iter()
        .map(|&b| b as f32 / 255.0)
        .collect();
    Ok((data, w, h))
}

/// Write H×W×3 floats in [0, 1] as a P6 image.
pub fn write_ppm(path: &Path, data: &[f32], w: usize, h: usize) -> Result<()> {
    assert_eq!(data.len(), w * h * 3);
    let mut out = Vec::with_capacity(w * h * 3 + 32);
    write!(out, "P6\n{w} {h}\n255\n").unwrap();
    out.extend(data.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Read a P5 image as raw bytes.
pub fn read_pgm(path: &Path) -> Result<(Vec<u8>, usize, usize)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let (w, h, off) = parse_header(&bytes, "P5", path)?;
    let need = w * h;
    if bytes.len() < off + need {
        return Err(Error::format(path.display().to_string(), "truncated pixel data"));
    }
    Ok((bytes[off..off + need].to_vec(), w, h))
}

pub fn write_pgm(path: &Path, data: &[u8], w: usize, h: usize) -> Result<()> {
    assert_eq!(data.len(), w * h);
    let mut out = Vec::with_capacity(w * h + 32);
    write!(out, "P5\n{w} {h}\n255\n").unwrap();
    out.extend_from_slice(data);
    fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Binary mask to a 0/255 P5 image.
pub fn write_mask_pgm(path: &Path, mask: &[bool], w: usize, h: usize) -> Result<()> {
    let bytes: Vec<u8> = mask.iter().map(|&b| if b { 255 } else { 0 }).collect();
    write_pgm(path, &bytes, w, h)
}

/// 0/255 P5 image back to a binary mask.
pub fn read_mask_pgm(path: &Path) -> Result<(Vec<bool>, usize, usize)> {
    let (bytes, w, h) = read_pgm(path)?;
    for &b in &bytes {
        if b != 0 && b != 255 {
            return Err(Error::format(
                path.display().to_string(),
                format!("mask value {b} is neither 0 nor 255"),
            ));
        }
    }
    Ok((bytes.iter().map(|&b| b == 255).collect(), w, h))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_round_trip_within_one_level() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.ppm");
        let (w, h) = (5, 3);
        let data: Vec<f32> = (0..w * h * 3).map(|i| (i as f32 / 44.0).min(1.0)).collect();
        write_ppm(&p, &data, w, h).unwrap();
        let (back, rw, rh) = read_ppm(&p).unwrap();
        assert_eq!((rw, rh), (w, h));
        for (a, b) in data.iter().zip(&back) {
            assert!((a - b).abs() <= 1.0 / 255.0 + 1e-6);
        }
    }

    #[test]
    fn mask_round_trip_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.pgm");
        let mask: Vec<bool> = (0..24).map(|i| i % 3 == 0).collect();
        write_mask_pgm(&p, &mask, 6, 4).unwrap();
        let (back, w, h) = read_mask_pgm(&p).unwrap();
        assert_eq!((w, h), (6, 4));
        assert_eq!(back, mask);
    }

    #[test]
    fn header_comments_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.pgm");
        let mut bytes = b"P5\n# a comment\n2 2\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 255, 255, 0]);
        std::fs::write(&p, bytes).unwrap();
        let (m, w, h) = read_mask_pgm(&p).unwrap();
        assert_eq!((w, h), (2, 2));
        assert_eq!(m, vec![false, true, true, false]);
    }

    #[test]
    fn corrupt_file_reports_path() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.ppm");
        std::fs::write(&p, b"P6\n2 2\n255\nxx").unwrap();
        let err = read_ppm(&p).unwrap_err();
        assert!(err.to_string().contains("bad.ppm"));
    }
}
