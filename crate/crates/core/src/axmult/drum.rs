use crate::error::{Error, Result};

/// Reduces an operand to its `k` leading bits with the lowest kept bit
/// forced high. Returns the reduced value and the number of dropped bits.
#[inline]
fn reduce(x: u32, k: u32) -> (u32, u32) {
    let len = u32::BITS - x.leading_zeros();
    if len <= k {
        (x, 0)
    } else {
        let shift = len - k;
        ((x >> shift) | 1, shift)
    }
}

/// DRUM-k product of two unsigned 8-bit magnitudes.
///
/// Operands of bit-length ≤ k are used exactly. Longer operands keep the
/// k bits starting at their leading one, with the lowest kept bit set to 1
/// so the truncation error is zero-mean.
pub fn drum_scalar(a: u8, b: u8, k: u32) -> Result<u32> {
    if !(2..=8).contains(&k) {
        return Err(Error::InvalidMultiplier(format!(
            "DRUM width k={k} outside [2, 8]"
        )));
    }
    let (ra, sa) = reduce(a as u32, k);
    let (rb, sb) = reduce(b as u32, k);
    Ok((ra * rb) << (sa + sb))
}
