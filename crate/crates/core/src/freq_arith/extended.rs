//! Double-double helpers: exact integer dot products and decimal I/O.

use twofloat::TwoFloat;

use crate::error::{KamError, Result};

/// `sum_i k_i * omega_i` accumulated in double-double arithmetic.
///
/// Integer coefficients up to 2^53 are exact in binary64, so the only
/// rounding comes from the double-double accumulation itself.
pub fn int_dot(k: &[i64], omega: &[TwoFloat]) -> TwoFloat {
    let mut acc = TwoFloat::from(0.0);
    for (&ki, &wi) in k.iter().zip(omega) {
        if ki != 0 {
            acc += wi * TwoFloat::from(ki as f64);
        }
    }
    acc
}

/// `10^e` by repeated exact-ish multiplication (each step rounds at 2^-106).
/// `a / b` to double-double accuracy (long division on the leading limb;
/// the `Div` impl of `TwoFloat` stops at binary64 precision).
pub fn dd_div(a: TwoFloat, b: TwoFloat) -> TwoFloat {
    let q1 = a.hi() / b.hi();
    let r1 = a - b * TwoFloat::from(q1);
    let q2 = r1.hi() / b.hi();
    let r2 = r1 - b * TwoFloat::from(q2);
    let q3 = r2.hi() / b.hi();
    TwoFloat::new_add(q1, q2) + TwoFloat::from(q3)
}

pub fn dd_recip(b: TwoFloat) -> TwoFloat {
    dd_div(TwoFloat::from(1.0), b)
}

/// Positive real `n`-th root of `x > 0`, refined by Newton steps.
pub fn dd_root(x: TwoFloat, n: u32) -> TwoFloat {
    let mut r = TwoFloat::from(x.hi().powf(1.0 / n as f64));
    for _ in 0..3 {
        let mut p = TwoFloat::from(1.0);
        for _ in 0..n - 1 {
            p *= r;
        }
        // r <- r - (r^n - x) / (n r^(n-1))
        r -= dd_div(p * r - x, p * TwoFloat::from(n as f64));
    }
    r
}

pub fn ten_pow(e: i32) -> TwoFloat {
    let mut acc = TwoFloat::from(1.0);
    let mut left = e.unsigned_abs();
    // 10^22 is the largest power of ten exact in binary64.
    while left > 0 {
        let step = left.min(22);
        acc *= TwoFloat::from(10f64.powi(step as i32));
        left -= step;
    }
    if e < 0 {
        dd_recip(acc)
    } else {
        acc
    }
}

/// Decimal rendering with `sig` significant digits (digits are truncated,
/// not rounded; pick `sig` above the working precision).
pub fn format_decimal(x: TwoFloat, sig: usize) -> String {
    let hi = x.hi();
    if hi == 0.0 {
        return "0.0".to_string();
    }
    let negative = hi < 0.0;
    let a = if negative { -x } else { x };
    let mut e = a.hi().log10().floor() as i32;
    let mut m = if e >= 0 {
        dd_div(a, ten_pow(e))
    } else {
        a * ten_pow(-e)
    };
    if m.hi() >= 10.0 {
        m = dd_div(m, TwoFloat::from(10.0));
        e += 1;
    }
    if m.hi() < 1.0 {
        m *= TwoFloat::from(10.0);
        e -= 1;
    }
    let mut digits = Vec::with_capacity(sig);
    for _ in 0..sig {
        let d = m.hi().floor().clamp(0.0, 9.0);
        digits.push(d as u8);
        m = (m - TwoFloat::from(d)) * TwoFloat::from(10.0);
    }
    let mut out = String::new();
    if negative {
        out.push('-');
    }
    if (-6..4).contains(&e) {
        if e < 0 {
            out.push_str("0.");
            for _ in 0..(-e - 1) {
                out.push('0');
            }
            out.extend(digits.iter().map(|d| char::from(b'0' + d)));
        } else {
            let int_len = (e + 1) as usize;
            out.extend(digits[..int_len].iter().map(|d| char::from(b'0' + d)));
            out.push('.');
            out.extend(digits[int_len..].iter().map(|d| char::from(b'0' + d)));
        }
    } else {
        out.push(char::from(b'0' + digits[0]));
        out.push('.');
        out.extend(digits[1..].iter().map(|d| char::from(b'0' + d)));
        out.push_str(&format!("e{e}"));
    }
    out
}

pub fn parse_decimal(s: &str) -> Result<TwoFloat> {
    let bad = || KamError::Parse(format!("not a decimal number: {s:?}"));
    let s = s.trim();
    let (negative, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    let (mantissa, exp) = match body.find(['e', 'E']) {
        Some(pos) => {
            let e: i32 = body[pos + 1..].parse().map_err(|_| bad())?;
            (&body[..pos], e)
        }
        None => (body, 0),
    };
    let (int_part, frac_part) = match mantissa.find('.') {
        Some(pos) => (&mantissa[..pos], &mantissa[pos + 1..]),
        None => (mantissa, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(bad());
    }
    // Digits are folded in blocks of 15, each block exact in binary64.
    let digits: Vec<u32> = int_part
        .chars()
        .chain(frac_part.chars())
        .map(|c| c.to_digit(10).ok_or_else(bad))
        .collect::<Result<_>>()?;
    let mut acc = TwoFloat::from(0.0);
    for block in digits.chunks(15) {
        let v = block.iter().fold(0u64, |a, &d| a * 10 + d as u64);
        acc = acc * TwoFloat::from(10f64.powi(block.len() as i32)) + TwoFloat::from(v as f64);
    }
    let shift = exp - frac_part.len() as i32;
    let value = if shift >= 0 {
        acc * ten_pow(shift)
    } else {
        dd_div(acc, ten_pow(-shift))
    };
    Ok(if negative { -value } else { value })
}
