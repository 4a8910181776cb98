//! Image and table outputs: label maps as PGM, binary masks as PBM, scores
//! as CSV.

use std::path::Path;

use crate::{Error, Result};

/// Binary (`P5`) PGM with one byte per pixel. Background (`-1`) is written
/// as 255; labels must be below 255.
pub fn encode_label_pgm(labels: &[i32], height: usize, width: usize) -> Result<Vec<u8>> {
    if labels.len() != height * width {
        return Err(Error::Shape(format!("{} labels for a {height}x{width} map", labels.len())));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    for &l in labels {
        out.push(match l {
            -1 => 255,
            0..=254 => l as u8,
            _ => return Err(Error::Invalid(format!("label {l} cannot be written to an 8-bit map"))),
        });
    }
    Ok(out)
}

/// Inverse of [`encode_label_pgm`].
pub fn decode_label_pgm(bytes: &[u8]) -> std::result::Result<(usize, usize, Vec<i32>), String> {
    let (h, w, maxval, body) = parse_header(bytes, b"P5")?;
    if maxval != 255 {
        return Err(format!("expected maxval 255, got {maxval}"));
    }
    if body.len() != h * w {
        return Err(format!("pixel data has {} bytes, expected {}", body.len(), h * w));
    }
    Ok((h, w, body.iter().map(|&b| if b == 255 { -1 } else { b as i32 }).collect()))
}

/// Binary (`P4`) PBM; set pixels are 1 (black), rows padded to whole bytes.
pub fn encode_pbm(mask: &[bool], height: usize, width: usize) -> Result<Vec<u8>> {
    if mask.len() != height * width {
        return Err(Error::Shape(format!("{} pixels for a {height}x{width} mask", mask.len())));
    }
    let mut out = format!("P4\n{width} {height}\n").into_bytes();
    for row in mask.chunks(width.max(1)) {
        for byte in row.chunks(8) {
            let mut b = 0u8;
            for (i, &bit) in byte.iter().enumerate() {
                b |= (bit as u8) << (7 - i);
            }
            out.push(b);
        }
    }
    Ok(out)
}

pub fn decode_pbm(bytes: &[u8]) -> std::result::Result<(usize, usize, Vec<bool>), String> {
    let (h, w, _, body) = parse_header(bytes, b"P4")?;
    let row_bytes = w.div_ceil(8);
    if body.len() != h * row_bytes {
        return Err(format!("pixel data has {} bytes, expected {}", body.len(), h * row_bytes));
    }
    let mut mask = Vec::with_capacity(h * w);
    for row in body.chunks(row_bytes.max(1)).take(h) {
        for c in 0..w {
            mask.push(row[c / 8] >> (7 - c % 8) & 1 == 1);
        }
    }
    Ok((h, w, mask))
}

fn parse_header<'a>(bytes: &'a [u8], magic: &[u8]) -> std::result::Result<(usize, usize, usize, &'a [u8]), String> {
    if !bytes.starts_with(magic) {
        return Err(format!("missing {} magic", String::from_utf8_lossy(magic)));
    }
    let fields = if magic == b"P4" { 2 } else { 3 };
    let mut pos = magic.len();
    let mut values = Vec::with_capacity(fields);
    while values.len() < fields {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        let text = std::str::from_utf8(&bytes[start..pos]).map_err(|_| "bad header")?;
        values.push(text.parse::<usize>().map_err(|_| "truncated header".to_string())?);
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let body = bytes.get(pos..).ok_or("truncated header")?;
    let maxval = values.get(2).copied().unwrap_or(1);
    Ok((values[1], values[0], maxval, body))
}

/// Per-pixel scores as CSV rows (`row,col,label,score`).
pub fn scores_csv(labels: &[i32], scores: &[f64], width: usize) -> String {
    let mut out = String::from("row,col,label,score\n");
    for (u, (l, s)) in labels.iter().zip(scores).enumerate() {
        out.push_str(&format!("{},{},{l},{s}\n", u / width.max(1), u % width.max(1)));
    }
    out
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip() {
        let labels = vec![-1, 0, 3, 254, 1, -1];
        let b = encode_label_pgm(&labels, 2, 3).unwrap();
        assert!(b.starts_with(b"P5\n3 2\n255\n"));
        assert_eq!(decode_label_pgm(&b).unwrap(), (2, 3, labels));
        assert!(encode_label_pgm(&[300], 1, 1).is_err());
    }

    #[test]
    fn pbm_round_trip() {
        let mask: Vec<bool> = (0..30).map(|i| i % 3 == 0).collect();
        let b = encode_pbm(&mask, 3, 10).unwrap();
        assert_eq!(b.len(), "P4\n10 3\n".len() + 3 * 2);
        assert_eq!(decode_pbm(&b).unwrap(), (3, 10, mask));
    }
}
