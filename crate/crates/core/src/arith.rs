//! Relative value changes shared by the adjust tool and the benchmark's
//! ground truth.
//!
//! Arithmetic runs on the shortest decimal representation of each operand,
//! so `1000.1 + 0.2` lands on the Float32 nearest to `1000.3` and Int16
//! rounding of `155 * 0.9 = 139.5` is decided on the exact midpoint. Results
//! too large for the decimal engine fall back to f64.

use thiserror::Error;

use crate::node::{DataType, TypedValue};

/// A relative change applied to a numeric node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Change {
    /// `v + delta`
    Add(f64),
    /// `v * (1 + percent / 100)`
    Percent(f64),
    /// `v * factor`
    Scale(f64),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ArithError {
    #[error("{0} node is not numeric")]
    NotNumeric(DataType),
    #[error("result {0} is outside the Int16 range [-32768, 32767]")]
    OutOfRange(String),
    #[error("result {0} is not a finite Float32")]
    NotFinite(String),
    #[error("argument {0} is not a finite number")]
    BadArgument(f64),
}

/// Fixed-point decimal `mantissa / 10^scale`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Decimal {
    mantissa: i128,
    scale: u32,
}

const MAX_SCALE: u32 = 36;

impl Decimal {
    pub fn from_int(v: i128) -> Self {
        Self {
            mantissa: v,
            scale: 0,
        }
    }

    /// Parses plain positional notation (`-12.50`); no exponents.
    pub fn parse(text: &str) -> Option<Self> {
        let (negative, digits) = match text.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, text.strip_prefix('+').unwrap_or(text)),
        };
        let (int_part, frac_part) = digits.split_once('.').unwrap_or((digits, ""));
        if int_part.is_empty() && frac_part.is_empty() {
            return None;
        }
        if !int_part.bytes().chain(frac_part.bytes()).all(|b| b.is_ascii_digit()) {
            return None;
        }
        let frac_part = frac_part.trim_end_matches('0');
        let scale = u32::try_from(frac_part.len()).ok()?;
        if scale > MAX_SCALE {
            return None;
        }
        let mut mantissa: i128 = 0;
        for b in int_part.bytes().chain(frac_part.bytes()) {
            mantissa = mantissa
                .checked_mul(10)?
                .checked_add(i128::from(b - b'0'))?;
        }
        Some(Self {
            mantissa: if negative { -mantissa } else { mantissa },
            scale,
        })
    }

    /// Exact decimal of the shortest representation that round-trips `v`.
    pub fn from_f64(v: f64) -> Option<Self> {
        if !v.is_finite() {
            return None;
        }
        Self::parse(&v.to_string())
    }

    pub fn from_f32(v: f32) -> Option<Self> {
        if !v.is_finite() {
            return None;
        }
        Self::parse(&v.to_string())
    }

    fn pow10(exp: u32) -> Option<i128> {
        10i128.checked_pow(exp)
    }

    fn rescale(self, scale: u32) -> Option<i128> {
        debug_assert!(scale >= self.scale);
        self.mantissa.checked_mul(Self::pow10(scale - self.scale)?)
    }

    fn normalized(mut self) -> Self {
        while self.scale > 0 && self.mantissa % 10 == 0 {
            self.mantissa /= 10;
            self.scale -= 1;
        }
        self
    }

    pub fn checked_add(self, other: Self) -> Option<Self> {
        let scale = self.scale.max(other.scale);
        let mantissa = self.rescale(scale)?.checked_add(other.rescale(scale)?)?;
        Some(Self { mantissa, scale }.normalized())
    }

    pub fn checked_mul(self, other: Self) -> Option<Self> {
        let scale = self.scale + other.scale;
        if scale > MAX_SCALE {
            return None;
        }
        let mantissa = self.mantissa.checked_mul(other.mantissa)?;
        Some(Self { mantissa, scale }.normalized())
    }

    /// Divides by `10^places` (exact).
    pub fn shift_right(self, places: u32) -> Option<Self> {
        let scale = self.scale + places;
        (scale <= MAX_SCALE).then_some(Self { scale, ..self }.normalized())
    }

    /// Rounds to an integer, ties away from zero.
    pub fn round_half_away_from_zero(self) -> i128 {
        if self.scale == 0 {
            return self.mantissa;
        }
        let unit = Self::pow10(self.scale).expect("scale bounded by MAX_SCALE");
        let quotient = self.mantissa / unit;
        let remainder = (self.mantissa % unit).abs();
        if remainder * 2 >= unit {
            quotient + self.mantissa.signum()
        } else {
            quotient
        }
    }

    /// Nearest f32 (correctly rounded by the standard parser).
    pub fn to_f32(self) -> f32 {
        self.to_string().parse().unwrap_or(f32::NAN)
    }
}

impl std::fmt::Display for Decimal {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.scale == 0 {
            return write!(f, "{}", self.mantissa);
        }
        let digits = self.mantissa.unsigned_abs().to_string();
        let scale = self.scale as usize;
        let sign = if self.mantissa < 0 { "-" } else { "" };
        if digits.len() > scale {
            let (int, frac) = digits.split_at(digits.len() - scale);
            write!(f, "{sign}{int}.{frac}")
        } else {
            write!(f, "{sign}0.{}{digits}", "0".repeat(scale - digits.len()))
        }
    }
}

fn exact(old: Decimal, change: Change) -> Option<Decimal> {
    match change {
        Change::Add(delta) => old.checked_add(Decimal::from_f64(delta)?),
        Change::Percent(percent) => {
            let factor = Decimal::from_int(100).checked_add(Decimal::from_f64(percent)?)?;
            old.checked_mul(factor)?.shift_right(2)
        }
        Change::Scale(factor) => old.checked_mul(Decimal::from_f64(factor)?),
    }
}

fn approximate(old: f64, change: Change) -> f64 {
    match change {
        Change::Add(delta) => old + delta,
        Change::Percent(percent) => old * (1.0 + percent / 100.0),
        Change::Scale(factor) => old * factor,
    }
}

fn check_int16(v: i128) -> Result<TypedValue, ArithError> {
    i16::try_from(v)
        .map(TypedValue::Int16)
        .map_err(|_| ArithError::OutOfRange(v.to_string()))
}

/// Applies `change` to a numeric value, rounding Int16 results half away
/// from zero.
pub fn apply_change(old: &TypedValue, change: Change) -> Result<TypedValue, ArithError> {
    let arg = match change {
        Change::Add(x) | Change::Percent(x) | Change::Scale(x) => x,
    };
    if !arg.is_finite() {
        return Err(ArithError::BadArgument(arg));
    }
    match old {
        TypedValue::Text(_) => Err(ArithError::NotNumeric(DataType::Text)),
        TypedValue::Int16(v) => match exact(Decimal::from_int(i128::from(*v)), change) {
            Some(result) => check_int16(result.round_half_away_from_zero()),
            None => {
                let approx = approximate(f64::from(*v), change).round();
                if approx.is_finite() && approx.abs() <= 1.0e30 {
                    check_int16(approx as i128)
                } else {
                    Err(ArithError::OutOfRange(approx.to_string()))
                }
            }
        },
        TypedValue::Float32(v) => {
            let result = Decimal::from_f32(*v)
                .and_then(|d| exact(d, change))
                .map(Decimal::to_f32)
                .unwrap_or_else(|| approximate(f64::from(*v), change) as f32);
            if result.is_finite() {
                Ok(TypedValue::Float32(result))
            } else {
                Err(ArithError::NotFinite(result.to_string()))
            }
        }
    }
}
