//! Deterministic significant-digit formatting for CSV artifacts.

/// Formats `x` with `sig` significant digits, fixed notation where the
/// exponent allows it, trimming trailing zeros. The output parses back with
/// `f64::from_str`.
pub fn format_sig(x: f64, sig: usize) -> String {
    assert!(sig >= 1);
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return if x.is_nan() {
            "NaN".to_string()
        } else if x > 0.0 {
            "inf".to_string()
        } else {
            "-inf".to_string()
        };
    }
    let sci = format!("{:.*e}", sig - 1, x);
    let (mantissa, exp_str) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp_str.parse().expect("exponent");
    let neg = mantissa.starts_with('-');
    let digits: String = mantissa.chars().filter(|c| c.is_ascii_digit()).collect();

    let body = if exp >= -4 && exp < sig as i32 {
        render_fixed(&digits, exp)
    } else {
        let trimmed = digits.trim_end_matches('0');
        let trimmed = if trimmed.is_empty() { "0" } else { trimmed };
        if trimmed.len() == 1 {
            format!("{trimmed}e{exp}")
        } else {
            format!("{}.{}e{exp}", &trimmed[..1], &trimmed[1..])
        }
    };
    if neg {
        format!("-{body}")
    } else {
        body
    }
}

fn render_fixed(digits: &str, exp: i32) -> String {
    if exp >= 0 {
        let split = (exp + 1) as usize;
        let int_part = &digits[..split.min(digits.len())];
        let frac_part = if split < digits.len() {
            digits[split..].trim_end_matches('0')
        } else {
            ""
        };
        if frac_part.is_empty() {
            int_part.to_string()
        } else {
            format!("{int_part}.{frac_part}")
        }
    } else {
        let zeros = "0".repeat((-exp - 1) as usize);
        let frac = format!("{zeros}{digits}");
        let frac = frac.trim_end_matches('0');
        if frac.is_empty() {
            "0".to_string()
        } else {
            format!("0.{frac}")
        }
    }
}
