//! Hexadecimal floating-point formatting and parsing (C99 `%a` style).
//!
//! Artifact files carry every real as `0x1.9p+3`-style text so that a value
//! written on one machine reparses to the identical bit pattern on another.
//! Rust's standard formatter has no `%a` equivalent, so the two directions
//! live here.

use std::error::Error;
use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseHexError {
    Empty,
    MissingPrefix,
    NoDigits,
    BadDigit(char),
    MissingExponent,
    BadExponent,
    NonFinite,
}

impl fmt::Display for ParseHexError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseHexError::Empty => write!(f, "empty hex-float literal"),
            ParseHexError::MissingPrefix => write!(f, "hex-float literal must start with 0x"),
            ParseHexError::NoDigits => write!(f, "hex-float literal has no mantissa digits"),
            ParseHexError::BadDigit(c) => write!(f, "invalid character {:?} in hex-float", c),
            ParseHexError::MissingExponent => write!(f, "hex-float literal has no p exponent"),
            ParseHexError::BadExponent => write!(f, "unreadable exponent in hex-float"),
            ParseHexError::NonFinite => write!(f, "non-finite value not representable"),
        }
    }
}

impl Error for ParseHexError {}

/// Render a finite f64 as a hex-float literal, e.g. `-0x1.5b8p-7`.
///
/// Panics on NaN or infinity: nothing in the file formats carries those.
pub fn format_hex(x: f64) -> String {
    assert!(x.is_finite(), "cannot format non-finite value");
    let bits = x.to_bits();
    let sign = if bits >> 63 == 1 { "-" } else { "" };
    let exp_bits = ((bits >> 52) & 0x7ff) as i32;
    let man = bits & ((1u64 << 52) - 1);
    if exp_bits == 0 && man == 0 {
        return format!("{}0x0p+0", sign);
    }
    let (lead, e) = if exp_bits == 0 {
        ('0', -1022) // subnormal
    } else {
        ('1', exp_bits - 1023)
    };
    let mut frac = format!("{:013x}", man);
    while frac.ends_with('0') {
        frac.pop();
    }
    if frac.is_empty() {
        format!("{}0x{}p{:+}", sign, lead, e)
    } else {
        format!("{}0x{}.{}p{:+}", sign, lead, frac, e)
    }
}

fn hex_val(c: char) -> Option<u64> {
    c.to_digit(16).map(u64::from)
}

/// Parse a hex-float literal back to f64, rounding to nearest-even when the
/// literal carries more than 53 significant bits.
pub fn parse_hex(s: &str) -> Result<f64, ParseHexError> {
    let s = s.trim();
    if s.is_empty() {
        return Err(ParseHexError::Empty);
    }
    let (neg, rest) = match s.strip_prefix('-') {
        Some(r) => (true, r),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    if rest == "inf" || rest == "nan" {
        return Err(ParseHexError::NonFinite);
    }
    let rest = rest
        .strip_prefix("0x")
        .or_else(|| rest.strip_prefix("0X"))
        .ok_or(ParseHexError::MissingPrefix)?;

    // Mantissa digits accumulate into a u128; past its capacity extra digits
    // only shift the exponent (integer side) or set a sticky bit (fraction).
    let mut acc: u128 = 0;
    let mut saturated = false;
    let mut sticky = false;
    let mut frac_digits: i64 = 0;
    let mut int_overflow: i64 = 0;
    let mut seen_digit = false;
    let mut in_frac = false;
    let mut chars = rest.chars().peekable();
    while let Some(&c) = chars.peek() {
        if c == '.' {
            if in_frac {
                return Err(ParseHexError::BadDigit('.'));
            }
            in_frac = true;
            chars.next();
        } else if let Some(v) = hex_val(c) {
            seen_digit = true;
            if saturated {
                if in_frac {
                    sticky |= v != 0;
                } else {
                    int_overflow += 4;
                }
            } else if acc >> 124 != 0 {
                saturated = true;
                if in_frac {
                    sticky |= v != 0;
                } else {
                    int_overflow += 4;
                }
            } else {
                acc = (acc << 4) | v as u128;
                if in_frac {
                    frac_digits += 1;
                }
            }
            chars.next();
        } else {
            break;
        }
    }
    if !seen_digit {
        return Err(ParseHexError::NoDigits);
    }
    let exp: i64 = match chars.next() {
        Some('p') | Some('P') => {
            let tail: String = chars.collect();
            if tail.is_empty() {
                return Err(ParseHexError::BadExponent);
            }
            tail.parse::<i64>().map_err(|_| ParseHexError::BadExponent)?
        }
        Some(c) => return Err(ParseHexError::BadDigit(c)),
        None => return Err(ParseHexError::MissingExponent),
    };

    if acc == 0 {
        return Ok(if neg { -0.0 } else { 0.0 });
    }
    let mut e2 = exp - 4 * frac_digits + int_overflow;

    // Normalize to at most 53 significant bits with nearest-even rounding.
    let nbits = 128 - acc.leading_zeros() as i64;
    if nbits > 53 {
        let shift = (nbits - 53) as u32;
        let dropped = acc & ((1u128 << shift) - 1);
        let half = 1u128 << (shift - 1);
        let mut m = acc >> shift;
        let round_up = dropped > half || (dropped == half && (sticky || m & 1 == 1));
        if round_up {
            m += 1;
            if m >> 53 != 0 {
                m >>= 1;
                e2 += 1;
            }
        }
        acc = m;
        e2 += shift as i64;
    }
    let mag = scale_by_pow2(acc as u64 as f64, e2);
    Ok(if neg { -mag } else { mag })
}

/// m * 2^k for m with at most 53 significant bits.
fn scale_by_pow2(m: f64, k: i64) -> f64 {
    if m == 0.0 {
        return 0.0;
    }
    let k = k.clamp(-2200, 2200) as i32;
    if (-1022..=1023).contains(&k) {
        return m * f64::powi(2.0, k);
    }
    if k > 1023 {
        let r = m * f64::powi(2.0, 1023);
        return r * f64::powi(2.0, k - 1023);
    }
    // Two steps into the subnormal range; fine for round-tripping our own
    // output, which never goes below 2^-1022 anyway.
    let r = m * f64::powi(2.0, -1022);
    r * f64::powi(2.0, k + 1022)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn formats_known_values() {
        assert_eq!(format_hex(1.0), "0x1p+0");
        assert_eq!(format_hex(-2.0), "-0x1p+1");
        assert_eq!(format_hex(0.5), "0x1p-1");
        assert_eq!(format_hex(1.5), "0x1.8p+0");
        assert_eq!(format_hex(0.0), "0x0p+0");
        assert_eq!(format_hex(f64::MIN_POSITIVE), "0x1p-1022");
    }

    #[test]
    fn parses_known_values() {
        assert_eq!(parse_hex("0x1p+0").unwrap(), 1.0);
        assert_eq!(parse_hex("0x1.8p+0").unwrap(), 1.5);
        assert_eq!(parse_hex("-0x1p+1").unwrap(), -2.0);
        assert_eq!(parse_hex("0x0p+0").unwrap(), 0.0);
        assert_eq!(parse_hex("0x.8p+1").unwrap(), 1.0);
        assert_eq!(parse_hex("0x10p-4").unwrap(), 1.0);
    }

    #[test]
    fn parse_rejects_garbage() {
        assert!(matches!(parse_hex(""), Err(ParseHexError::Empty)));
        assert!(matches!(parse_hex("1.5"), Err(ParseHexError::MissingPrefix)));
        assert!(matches!(parse_hex("0x"), Err(ParseHexError::NoDigits)));
        assert!(matches!(parse_hex("0x1.8"), Err(ParseHexError::MissingExponent)));
        assert!(matches!(parse_hex("0x1.8p"), Err(ParseHexError::BadExponent)));
        assert!(matches!(parse_hex("0x1.8pq"), Err(ParseHexError::BadExponent)));
        assert!(matches!(parse_hex("0xz.8p+1"), Err(ParseHexError::NoDigits)));
        assert!(matches!(parse_hex("0x1..0p+1"), Err(ParseHexError::BadDigit('.'))));
    }

    #[test]
    fn rounds_excess_digits_to_nearest_even() {
        // 53 one-bits followed by a 1: rounds up.
        let x = parse_hex("0x1.fffffffffffff8p+0").unwrap();
        assert_eq!(x, 2.0);
        // Tie without sticky: rounds to even mantissa.
        let y = parse_hex("0x1.0000000000000800000000p+0").unwrap();
        assert_eq!(y, 1.0);
        let z = parse_hex("0x1.0000000000000800000001p+0").unwrap();
        assert_eq!(z.to_bits(), 1.0f64.to_bits() + 1);
    }

    proptest! {
        #[test]
        fn roundtrip_is_bit_exact(bits in any::<u64>()) {
            let x = f64::from_bits(bits);
            prop_assume!(x.is_finite());
            let s = format_hex(x);
            let y = parse_hex(&s).unwrap();
            prop_assert_eq!(y.to_bits(), x.to_bits());
        }

        #[test]
        fn roundtrip_unit_range(x in 0.0f64..1.0, scale in -60i32..60) {
            let v = x * f64::powi(2.0, scale);
            let s = format_hex(v);
            prop_assert_eq!(parse_hex(&s).unwrap().to_bits(), v.to_bits());
        }
    }
}
