//! Exact rational arithmetic used for volumes and thresholds.

use num_rational::Ratio;
use num_traits::{ToPrimitive, Zero};

/// Exact rational number. Volumes on a level-`k` grid in dimension `d` have
/// denominators dividing `2^{kd}`, coverage values `j/n` divide `n`; products
/// of the two stay far below the `i128` range.
pub type Exact = Ratio<i128>;

pub fn ratio(numer: i128, denom: i128) -> Exact {
    Ratio::new(numer, denom)
}

pub fn to_f64(x: &Exact) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// Converts a finite `f64` into the exact dyadic rational it represents.
pub fn from_f64(x: f64) -> Exact {
    if x == 0.0 {
        return Exact::zero();
    }
    let bits = x.to_bits();
    let sign: i128 = if bits >> 63 == 0 { 1 } else { -1 };
    let raw_exp = ((bits >> 52) & 0x7ff) as i32;
    let frac = (bits & ((1u64 << 52) - 1)) as i128;
    let (mut mant, mut exp) = if raw_exp == 0 {
        (frac, -1074)
    } else {
        (frac | (1i128 << 52), raw_exp - 1075)
    };
    while mant & 1 == 0 && exp < 0 {
        mant >>= 1;
        exp += 1;
    }
    if exp >= 0 {
        return Ratio::from_integer(sign * (mant << exp.min(126 - 53)));
    }
    // denominators beyond 2^126 are rounded onto that grid
    let shift = -exp;
    if shift > 126 {
        let drop = (shift - 126) as u32;
        return Ratio::new(sign * (mant >> drop.min(127)), 1i128 << 126);
    }
    Ratio::new(sign * mant, 1i128 << shift)
}

pub fn floor_i128(x: &Exact) -> i128 {
    x.floor().to_integer()
}

pub fn ceil_i128(x: &Exact) -> i128 {
    x.ceil().to_integer()
}
