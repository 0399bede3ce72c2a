//! C-style `%.Ng` number formatting for CSV logs.

/// Formats `v` like C's `printf("%.9g", v)`.
pub fn g9(v: f64) -> String {
    format_g(v, 9)
}

/// Formats `v` like C's `printf("%.{precision}g", v)`.
pub fn format_g(v: f64, precision: usize) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let p = precision.max(1);
    if v == 0.0 {
        return if v.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    // Round to p significant digits first; the exponent after rounding picks
    // the style.
    let sci = format!("{:.*e}", p - 1, v);
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("exponent digits");
    if exp < -4 || exp >= p as i32 {
        let m = strip_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (p as i32 - 1 - exp).max(0) as usize;
        strip_zeros(&format!("{:.*}", decimals, v)).to_string()
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_printf() {
        // Expected strings from glibc printf("%.9g").
        let cases = [
            (0.0, "0"),
            (1.0, "1"),
            (-4.905, "-4.905"),
            (0.001, "0.001"),
            (1e-5, "1e-05"),
            (0.0001, "0.0001"),
            (123456789.0, "123456789"),
            (1234567890.0, "1.23456789e+09"),
            (1.0 / 3.0, "0.333333333"),
            (2.0 / 3.0, "0.666666667"),
            (19.62, "19.62"),
            (1.962e-5, "1.962e-05"),
            (999999999.5, "1e+09"),
            (std::f64::consts::PI, "3.14159265"),
            (-1e300, "-1e+300"),
            (0.000123456789123, "0.000123456789"),
        ];
        for (v, want) in cases {
            assert_eq!(g9(v), want, "{v}");
        }
        assert_eq!(g9(f64::NAN), "nan");
        assert_eq!(g9(f64::NEG_INFINITY), "-inf");
    }
}
