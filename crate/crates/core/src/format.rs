//! Locale-independent number formatting shared by every CSV writer.

/// Significant digits used for floating-point CSV columns.
pub const CSV_DIGITS: usize = 9;

/// Formats `x` with `digits` significant digits in the style of C's `%g`:
/// fixed notation for moderate exponents, scientific otherwise, trailing
/// zeros removed.
pub fn sig(x: f64, digits: usize) -> String {
    if !x.is_finite() {
        return if x.is_nan() {
            "nan".into()
        } else if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    if x == 0.0 {
        return "0".into();
    }
    let digits = digits.max(1);
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    if exp < -5 || exp >= digits as i32 {
        let mantissa = trim_zeros(mantissa);
        format!("{mantissa}e{exp}")
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{:.*}", decimals, x)).to_string()
    }
}

/// Shorthand for [`sig`] at [`CSV_DIGITS`].
pub fn csv_float(x: f64) -> String {
    sig(x, CSV_DIGITS)
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Seconds rendered from an integer count of picoseconds, exactly.
pub fn seconds_from_ps(ps: i64) -> String {
    let sign = if ps < 0 { "-" } else { "" };
    let abs = ps.unsigned_abs();
    format!("{sign}{}.{:012}", abs / 1_000_000_000_000, abs % 1_000_000_000_000)
}

/// Parses a decimal seconds value and rounds it to whole picoseconds.
pub fn ps_from_seconds_str(s: &str) -> Option<i64> {
    let v: f64 = s.trim().parse().ok()?;
    ps_from_seconds(v)
}

pub fn ps_from_seconds(v: f64) -> Option<i64> {
    let ps = (v * 1e12).round();
    // 2^62 ps is about 53 days; anything beyond is not a time tag.
    if !ps.is_finite() || ps.abs() > (1u64 << 62) as f64 {
        return None;
    }
    Some(ps as i64)
}

/// Seconds as `f64` from integer picoseconds. Every module converts
/// through this one function so that identical tags give identical floats.
#[inline]
pub fn ps_to_seconds(ps: i64) -> f64 {
    ps as f64 * 1e-12
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sig_matches_printf_g() {
        assert_eq!(sig(0.0654205607, 2), "0.065");
        assert_eq!(sig(6.54205607, 2), "6.5");
        assert_eq!(sig(1222403.4982630913, 9), "1222403.5");
        assert_eq!(sig(4.3e-7, 9), "4.3e-7");
        assert_eq!(sig(-12.5, 9), "-12.5");
        assert_eq!(sig(1.5e12, 9), "1.5e12");
        assert_eq!(sig(100.0, 9), "100");
    }

    #[test]
    fn picosecond_text_is_exact() {
        assert_eq!(seconds_from_ps(40_123_456_789_012), "40.123456789012");
        assert_eq!(seconds_from_ps(-81), "-0.000000000081");
        assert_eq!(ps_from_seconds_str("40.123456789012"), Some(40_123_456_789_012));
        assert_eq!(ps_from_seconds_str("nan"), None);
        assert_eq!(ps_from_seconds_str("1e300"), None);
    }

    proptest! {
        #[test]
        fn ps_text_round_trips(ps in -(1i64 << 45)..(1i64 << 45)) {
            prop_assert_eq!(ps_from_seconds_str(&seconds_from_ps(ps)), Some(ps));
        }

        #[test]
        fn sig_reparses_to_nine_digits(x in proptest::num::f64::NORMAL) {
            let s = csv_float(x);
            let back: f64 = s.parse().unwrap();
            prop_assert_eq!(csv_float(back), s);
        }
    }
}
