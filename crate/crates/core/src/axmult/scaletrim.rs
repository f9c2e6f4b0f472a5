//! Truncated log-linearized multiplier with bucketed additive compensation.
//!
//! Each nonzero operand is written as `2^n · (1 + f)`. The fraction `f` is
//! truncated to its top `t` bits and stands in for `log2(1 + f)`. The two
//! truncated fractions are summed and the anti-logarithm is taken with the
//! same linearization:
//!
//! ```text
//! s = fa + fb
//! mantissa ≈ 1 + s      if s < 1
//!          ≈ 2 · s      otherwise
//! ```
//!
//! The linearization always under-estimates. With `c > 0` a compensation
//! term is added to the mantissa; it is picked from `c` buckets keyed by the
//! high bits of `s`. Bucket values are the median residual of all operand
//! pairs falling in the bucket, which minimises the bucket's mean absolute
//! mantissa error. Products of two powers of two bypass compensation and
//! stay exact.
//!
//! All arithmetic is fixed point with [`COMP_FRAC_BITS`] fraction bits.

use std::sync::OnceLock;

use crate::error::{Error, Result};

/// Fraction bits of the fixed-point mantissa and compensation terms.
pub const COMP_FRAC_BITS: u32 = 16;

const MAX_PRODUCT: u64 = 255 * 255;

#[derive(Debug, Clone, Copy)]
struct Decomposed {
    exp: u32,
    /// Top `t` fraction bits.
    frac_t: u32,
    /// Whether the full fraction is zero (operand is a power of two).
    pow2: bool,
}

#[inline]
fn decompose(x: u32, t: u32) -> Decomposed {
    debug_assert!(x > 0);
    let exp = u32::BITS - 1 - x.leading_zeros();
    let frac = x - (1 << exp);
    let frac_t = if exp >= t {
        frac >> (exp - t)
    } else {
        frac << (t - exp)
    };
    Decomposed {
        exp,
        frac_t,
        pow2: frac == 0,
    }
}

/// A configured scaleTRIM(t, c) kernel with its fitted compensation table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScaleTrim {
    t: u32,
    c: u32,
    /// Compensation per bucket, in units of 2^-COMP_FRAC_BITS of the mantissa.
    compensation: Vec<i64>,
}

impl ScaleTrim {
    pub fn new(t: u32, c: u32) -> Result<Self> {
        if !matches!(t, 3 | 4) || !matches!(c, 0 | 4 | 8) {
            return Err(Error::InvalidMultiplier(format!(
                "scaleTRIM needs t in {{3,4}} and c in {{0,4,8}}, got ({t},{c})"
            )));
        }
        let mut st = ScaleTrim {
            t,
            c,
            compensation: vec![0; c as usize],
        };
        if c > 0 {
            st.compensation = st.fit_compensation();
        }
        Ok(st)
    }

    pub fn truncation(&self) -> u32 {
        self.t
    }

    pub fn compensation_entries(&self) -> u32 {
        self.c
    }

    pub fn compensation_table(&self) -> &[i64] {
        &self.compensation
    }

    /// Bucket index for a summed truncated fraction `s ∈ [0, 2^(t+1))`.
    #[inline]
    pub fn bucket(&self, frac_sum: u32) -> usize {
        debug_assert!(self.c > 0);
        let bucket_bits = self.c.trailing_zeros();
        (frac_sum >> (self.t + 1 - bucket_bits)) as usize
    }

    /// Linearized mantissa in fixed point, before compensation.
    #[inline]
    fn linear_mantissa(&self, frac_sum: u32) -> i64 {
        let one = 1u32 << self.t;
        let m = if frac_sum < one {
            one + frac_sum
        } else {
            2 * frac_sum
        };
        (m as i64) << (COMP_FRAC_BITS - self.t)
    }

    /// Mantissa residual of the uncompensated approximation for `a · b`.
    fn residual(&self, a: u32, b: u32) -> (u32, i64) {
        let da = decompose(a, self.t);
        let db = decompose(b, self.t);
        let sum = da.frac_t + db.frac_t;
        let exact = ((a as u64 * b as u64) << COMP_FRAC_BITS) >> (da.exp + db.exp);
        (sum, exact as i64 - self.linear_mantissa(sum))
    }

    fn fit_compensation(&self) -> Vec<i64> {
        let mut buckets: Vec<Vec<i64>> = vec![Vec::new(); self.c as usize];
        for a in 1..=255u32 {
            for b in 1..=255u32 {
                if a.is_power_of_two() && b.is_power_of_two() {
                    continue;
                }
                let (sum, res) = self.residual(a, b);
                buckets[self.bucket(sum)].push(res);
            }
        }
        buckets
            .into_iter()
            .map(|mut r| {
                if r.is_empty() {
                    return 0;
                }
                r.sort_unstable();
                // lower median
                r[(r.len() - 1) / 2]
            })
            .collect()
    }

    pub fn multiply(&self, a: u8, b: u8) -> u32 {
        if a == 0 || b == 0 {
            return 0;
        }
        let da = decompose(a as u32, self.t);
        let db = decompose(b as u32, self.t);
        let sum = da.frac_t + db.frac_t;
        let mut mantissa = self.linear_mantissa(sum);
        if self.c > 0 && !(da.pow2 && db.pow2) {
            mantissa += self.compensation[self.bucket(sum)];
        }
        let mantissa = mantissa.max(0) as u64;
        let scaled = mantissa << (da.exp + db.exp);
        let rounded = (scaled + (1 << (COMP_FRAC_BITS - 1))) >> COMP_FRAC_BITS;
        rounded.min(MAX_PRODUCT) as u32
    }
}

fn cached(t: u32, c: u32) -> Result<&'static ScaleTrim> {
    static TABLES: [OnceLock<ScaleTrim>; 6] = [const { OnceLock::new() }; 6];
    let slot = match (t, c) {
        (3, 0) => 0,
        (3, 4) => 1,
        (3, 8) => 2,
        (4, 0) => 3,
        (4, 4) => 4,
        (4, 8) => 5,
        _ => {
            return Err(Error::InvalidMultiplier(format!(
                "scaleTRIM needs t in {{3,4}} and c in {{0,4,8}}, got ({t},{c})"
            )))
        }
    };
    Ok(TABLES[slot].get_or_init(|| ScaleTrim::new(t, c).expect("validated configuration")))
}

/// scaleTRIM(t, c) product of two unsigned 8-bit magnitudes.
pub fn scaletrim_scalar(a: u8, b: u8, t: u32, c: u32) -> Result<u32> {
    Ok(cached(t, c)?.multiply(a, b))
}
