//! Binary mask run-length coding: `H`, `W` as little-endian `u32`, then
//! alternating run lengths (zeros first) over the row-major pixels.

use super::tensor::Reader;

/// Run lengths of a row-major binary mask, starting with the zero run
/// (which may be empty).
pub fn mask_runs(mask: &[bool]) -> Vec<u32> {
    let mut runs = Vec::new();
    let mut current = false;
    let mut len = 0u32;
    for &b in mask {
        if b != current {
            runs.push(len);
            current = b;
            len = 0;
        }
        len += 1;
    }
    runs.push(len);
    runs
}

pub fn encode_mask_rle(mask: &[bool], height: usize, width: usize) -> Vec<u8> {
    assert_eq!(mask.len(), height * width, "mask size disagrees with its dimensions");
    let runs = mask_runs(mask);
    let mut out = Vec::with_capacity(8 + 4 * runs.len());
    out.extend_from_slice(&(height as u32).to_le_bytes());
    out.extend_from_slice(&(width as u32).to_le_bytes());
    for r in runs {
        out.extend_from_slice(&r.to_le_bytes());
    }
    out
}

/// Inverse of [`encode_mask_rle`]: `(height, width, mask)`.
pub fn decode_mask_rle(bytes: &[u8]) -> Result<(usize, usize, Vec<bool>), String> {
    let mut r = Reader { bytes, pos: 0 };
    let height = r.u32()? as usize;
    let width = r.u32()? as usize;
    if !(bytes.len() - r.pos).is_multiple_of(4) {
        return Err("run section is not a whole number of u32 values".into());
    }
    let total = height * width;
    let mut mask = Vec::with_capacity(total);
    let mut value = false;
    while r.pos < bytes.len() {
        let run = r.u32()? as usize;
        if mask.len() + run > total {
            return Err(format!("runs exceed {height}x{width} = {total} pixels"));
        }
        mask.resize(mask.len() + run, value);
        value = !value;
    }
    if mask.len() != total {
        return Err(format!("runs sum to {} but the mask has {total} pixels", mask.len()));
    }
    Ok((height, width, mask))
}
