use serde::Serialize;

use super::{ProductLut, LUT_DIM};

/// Error profile of a product table against exact multiplication, over
/// operand pairs whose exact product is nonzero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MultErrorStats {
    /// Mean relative error distance, mean of |approx − exact| / exact.
    pub mred: f64,
    /// Mean of (approx − exact) / exact.
    pub mean_signed_rel_error: f64,
    pub max_abs_error: i64,
    pub nonzero_pair_count: u64,
}

pub fn lut_error_stats(lut: &ProductLut) -> MultErrorStats {
    lut_error_stats_where(lut, |_, _| true)
}

/// Statistics restricted to operand pairs accepted by `keep`.
pub fn lut_error_stats_where(lut: &ProductLut, keep: impl Fn(u8, u8) -> bool) -> MultErrorStats {
    let mut abs_sum = 0.0f64;
    let mut signed_sum = 0.0f64;
    let mut max_abs = 0i64;
    let mut count = 0u64;
    for a in 1..LUT_DIM {
        for b in 1..LUT_DIM {
            let (a8, b8) = (a as u8, b as u8);
            if !keep(a8, b8) {
                continue;
            }
            let exact = (a * b) as i64;
            let err = lut.get(a8, b8) as i64 - exact;
            let rel = err as f64 / exact as f64;
            abs_sum += rel.abs();
            signed_sum += rel;
            max_abs = max_abs.max(err.abs());
            count += 1;
        }
    }
    let n = count.max(1) as f64;
    MultErrorStats {
        mred: abs_sum / n,
        mean_signed_rel_error: signed_sum / n,
        max_abs_error: max_abs,
        nonzero_pair_count: count,
    }
}
