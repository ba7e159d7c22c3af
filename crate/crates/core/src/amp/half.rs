//! Software IEEE 754 binary16.
//!
//! Conversions round to nearest, ties to even, directly from the f64 bit
//! pattern so there is no double rounding through f32.

use std::fmt;

/// An IEEE binary16 value stored as its bit pattern.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Half16(u16);

impl Half16 {
    pub const ZERO: Half16 = Half16(0);
    pub const ONE: Half16 = Half16(0x3c00);
    pub const INFINITY: Half16 = Half16(0x7c00);
    pub const NEG_INFINITY: Half16 = Half16(0xfc00);
    pub const NAN: Half16 = Half16(0x7e00);
    /// Largest finite value, 65504.
    pub const MAX: Half16 = Half16(0x7bff);
    /// Smallest positive subnormal, 2^-24.
    pub const MIN_POSITIVE_SUBNORMAL: Half16 = Half16(0x0001);

    pub const fn from_bits(bits: u16) -> Self {
        Half16(bits)
    }

    pub const fn to_bits(self) -> u16 {
        self.0
    }

    pub fn from_f32(x: f32) -> Self {
        Self::from_f64(f64::from(x))
    }

    pub fn from_f64(x: f64) -> Self {
        Half16(f64_to_half_bits(x))
    }

    pub fn to_f32(self) -> f32 {
        // every binary16 value is exact in f32
        self.to_f64() as f32
    }

    pub fn to_f64(self) -> f64 {
        half_bits_to_f64(self.0)
    }

    pub fn is_finite(self) -> bool {
        self.0 & 0x7c00 != 0x7c00
    }

    pub fn is_nan(self) -> bool {
        self.0 & 0x7c00 == 0x7c00 && self.0 & 0x03ff != 0
    }
}

impl fmt::Debug for Half16 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Half16({:#06x} = {})", self.0, self.to_f64())
    }
}

impl fmt::Display for Half16 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.to_f64(), f)
    }
}

impl From<Half16> for f32 {
    fn from(h: Half16) -> f32 {
        h.to_f32()
    }
}

impl From<Half16> for f64 {
    fn from(h: Half16) -> f64 {
        h.to_f64()
    }
}

/// Round an f32 to the nearest binary16.
pub fn to_half(x: f32) -> Half16 {
    Half16::from_f32(x)
}

/// Round to binary16 and widen back, the value a half register would hold.
#[inline]
pub fn round_to_half(x: f64) -> f64 {
    half_bits_to_f64(f64_to_half_bits(x))
}

fn round_shift(value: u64, shift: u32) -> u64 {
    let kept = value >> shift;
    let rem = value & ((1u64 << shift) - 1);
    let halfway = 1u64 << (shift - 1);
    if rem > halfway || (rem == halfway && kept & 1 == 1) {
        kept + 1
    } else {
        kept
    }
}

fn f64_to_half_bits(x: f64) -> u16 {
    let bits = x.to_bits();
    let sign = ((bits >> 48) & 0x8000) as u16;
    let exp = ((bits >> 52) & 0x7ff) as i32;
    let man = bits & ((1u64 << 52) - 1);

    if exp == 0x7ff {
        return if man == 0 {
            sign | 0x7c00
        } else {
            sign | 0x7e00
        };
    }

    let half_exp = exp - 1023 + 15;
    if half_exp >= 0x1f {
        return sign | 0x7c00;
    }
    if half_exp <= 0 {
        // Result is subnormal (or rounds up into the smallest normal).
        let shift = (43 - half_exp) as u32;
        if shift >= 54 {
            return sign;
        }
        let m = man | (1u64 << 52);
        return sign | round_shift(m, shift) as u16;
    }
    // Carry out of the mantissa bumps the exponent, up to infinity.
    let merged = ((half_exp as u64) << 52) | man;
    sign | round_shift(merged, 42) as u16
}

fn half_bits_to_f64(h: u16) -> f64 {
    let sign = if h & 0x8000 != 0 { -1.0 } else { 1.0 };
    let exp = i32::from((h >> 10) & 0x1f);
    let man = f64::from(h & 0x03ff);
    match exp {
        0 => sign * man * 2f64.powi(-24),
        0x1f if man == 0.0 => sign * f64::INFINITY,
        0x1f => f64::NAN,
        _ => sign * (1.0 + man / 1024.0) * 2f64.powi(exp - 15),
    }
}
