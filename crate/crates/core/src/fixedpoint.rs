//! Finite-precision arithmetic of the device: quantization with saturation
//! ("railing"), LSB trimming and dynamic range.
//!
//! Quantization rounds half away from zero. Trimming is an arithmetic right
//! shift, i.e. truncation toward negative infinity, which is what dropping
//! bits off a two's-complement bus does.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Fixed-point number format: `total_bits` wide with `frac_bits` fractional bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct QFormat {
    total_bits: u32,
    frac_bits: u32,
    signed: bool,
}

impl QFormat {
    pub const MAX_BITS: u32 = 64;

    pub fn new(total_bits: u32, frac_bits: u32, signed: bool) -> Result<Self> {
        if total_bits == 0 || total_bits > Self::MAX_BITS {
            return Err(invalid(format!("total_bits must be in 1..=64, got {total_bits}")));
        }
        if frac_bits > total_bits {
            return Err(invalid(format!(
                "frac_bits {frac_bits} exceeds total_bits {total_bits}"
            )));
        }
        Ok(Self {
            total_bits,
            frac_bits,
            signed,
        })
    }

    pub fn signed(total_bits: u32, frac_bits: u32) -> Result<Self> {
        Self::new(total_bits, frac_bits, true)
    }

    pub fn unsigned(total_bits: u32, frac_bits: u32) -> Result<Self> {
        Self::new(total_bits, frac_bits, false)
    }

    /// Signed format with full scale ±1, e.g. `Q12.11` for a 12-bit converter.
    pub fn full_scale(total_bits: u32) -> Result<Self> {
        if total_bits == 0 {
            return Err(invalid("total_bits must be at least 1"));
        }
        Self::signed(total_bits, total_bits - 1)
    }

    pub fn total_bits(&self) -> u32 {
        self.total_bits
    }

    pub fn frac_bits(&self) -> u32 {
        self.frac_bits
    }

    pub fn is_signed(&self) -> bool {
        self.signed
    }

    pub fn min_raw(&self) -> i128 {
        if self.signed {
            -(1i128 << (self.total_bits - 1))
        } else {
            0
        }
    }

    pub fn max_raw(&self) -> i128 {
        if self.signed {
            (1i128 << (self.total_bits - 1)) - 1
        } else {
            (1i128 << self.total_bits) - 1
        }
    }

    /// Weight of one least significant bit.
    pub fn lsb(&self) -> f64 {
        (-(self.frac_bits as f64)).exp2()
    }

    pub fn min_value(&self) -> f64 {
        self.min_raw() as f64 * self.lsb()
    }

    pub fn max_value(&self) -> f64 {
        self.max_raw() as f64 * self.lsb()
    }

    /// Clamp a raw integer into range, reporting whether it railed.
    pub fn saturate_raw(&self, raw: i128) -> (i128, bool) {
        let clamped = raw.clamp(self.min_raw(), self.max_raw());
        (clamped, clamped != raw)
    }

    pub fn dynamic_range_db(&self) -> f64 {
        dynamic_range_db(self.total_bits)
    }
}

impl fmt::Display for QFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Q{}.{}", self.total_bits, self.frac_bits)?;
        if !self.signed {
            write!(f, "u")?;
        }
        Ok(())
    }
}

impl FromStr for QFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || invalid(format!("malformed Q format {s:?}, expected Q<total>.<frac>[u]"));
        let body = s.trim().strip_prefix('Q').ok_or_else(bad)?;
        let (body, signed) = match body.strip_suffix('u') {
            Some(b) => (b, false),
            None => (body, true),
        };
        let (total, frac) = body.split_once('.').ok_or_else(bad)?;
        let total = total.parse::<u32>().map_err(|_| bad())?;
        let frac = frac.parse::<u32>().map_err(|_| bad())?;
        Self::new(total, frac, signed)
    }
}

impl TryFrom<String> for QFormat {
    type Error = Error;

    fn try_from(value: String) -> Result<Self> {
        value.parse()
    }
}

impl From<QFormat> for String {
    fn from(value: QFormat) -> Self {
        value.to_string()
    }
}

/// A quantized sample. `raw` always lies inside the format's range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FixedSample {
    raw: i128,
    format: QFormat,
    saturated: bool,
}

impl FixedSample {
    /// Build from a raw integer, saturating if it is out of range.
    pub fn from_raw(raw: i128, format: QFormat) -> Self {
        let (raw, saturated) = format.saturate_raw(raw);
        Self { raw, format, saturated }
    }

    pub fn zero(format: QFormat) -> Self {
        Self::from_raw(0, format)
    }

    pub fn raw(&self) -> i128 {
        self.raw
    }

    pub fn format(&self) -> QFormat {
        self.format
    }

    /// True when the value was clamped to a rail while being produced.
    pub fn saturated(&self) -> bool {
        self.saturated
    }

    /// The same value with the saturation flag raised.
    pub fn with_saturation(self) -> Self {
        Self {
            saturated: true,
            ..self
        }
    }

    pub fn to_real(&self) -> f64 {
        self.raw as f64 * self.format.lsb()
    }
}

/// Nearest representable value of `x`, saturating at the range edges.
pub fn quantize(x: f64, fmt: QFormat) -> FixedSample {
    if x.is_nan() {
        return FixedSample {
            raw: 0,
            format: fmt,
            saturated: true,
        };
    }
    let scaled = (x * (fmt.frac_bits as f64).exp2()).round();
    // `as` saturates at the i128 bounds, which are far outside any 64-bit format.
    FixedSample::from_raw(scaled as i128, fmt)
}

/// Drop `k` least significant bits. The value keeps its binary point, so the
/// result has `k` fewer total and fractional bits.
pub fn trim(s: FixedSample, k: u32) -> Result<FixedSample> {
    let fmt = s.format;
    if k >= fmt.total_bits {
        return Err(invalid(format!(
            "cannot trim {k} bits from a {}-bit value",
            fmt.total_bits
        )));
    }
    if k > fmt.frac_bits {
        return Err(invalid(format!(
            "cannot trim {k} bits: only {} fractional bits in {fmt}",
            fmt.frac_bits
        )));
    }
    let format = QFormat::new(fmt.total_bits - k, fmt.frac_bits - k, fmt.signed)?;
    Ok(FixedSample {
        raw: s.raw >> k,
        format,
        saturated: s.saturated,
    })
}

/// `20·log10(2^bits)` dB.
pub fn dynamic_range_db(bits: u32) -> f64 {
    20.0 * bits as f64 * 2f64.log10()
}

/// Finest binary point, at most `fmt.frac_bits()`, at which a value of
/// magnitude `largest` still rounds inside `fmt`'s raw range. Never negative.
pub(crate) fn shared_frac_bits(largest: f64, fmt: QFormat) -> u32 {
    if !(largest > 0.0) || !largest.is_finite() {
        return fmt.frac_bits;
    }
    let max_raw = fmt.max_raw() as f64;
    let fit = (max_raw / largest).log2().floor();
    let mut f = fit.clamp(0.0, fmt.frac_bits as f64) as u32;
    if f > 0 && (largest * (f as f64).exp2()).round() > max_raw {
        f -= 1;
    }
    f
}

/// Arithmetic right shift by `k` (truncation toward negative infinity);
/// negative `k` shifts left.
pub(crate) fn shift_raw(raw: i128, k: i32) -> i128 {
    if k >= 0 {
        raw >> k.min(127)
    } else {
        raw << (-k).min(127)
    }
}
