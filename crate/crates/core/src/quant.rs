//! Dynamic fixed-point quantization.
//!
//! A value is represented as `k * 2^-l` for an integer code `k`. The code range
//! depends on the platform scheme:
//!
//! * CMOS complement: `[-2^(Q-l), 2^-l (2^Q - 1)]`, i.e. codes `[-2^Q, 2^Q - 1]`.
//!   The same bound is used for RRAM features, which live in CMOS circuits.
//! * RRAM symmetric (weights split over positive/negative crossbars):
//!   `[-R, R]` with `R = 2^-l (2^(Q+1) - 1)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Fraction lengths searched by [`find_frac_len`].
pub const MIN_FRAC_LEN: i32 = -64;
pub const MAX_FRAC_LEN: i32 = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    CmosComplement,
    RramSymmetric,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantSpec {
    pub bits: u32,
    pub frac_len: i32,
    pub scheme: Scheme,
}

impl QuantSpec {
    pub fn new(bits: u32, frac_len: i32, scheme: Scheme) -> Result<Self> {
        let spec = Self { bits, frac_len, scheme };
        spec.validate()?;
        Ok(spec)
    }

    pub fn cmos(bits: u32, frac_len: i32) -> Result<Self> {
        Self::new(bits, frac_len, Scheme::CmosComplement)
    }

    pub fn rram(bits: u32, frac_len: i32) -> Result<Self> {
        Self::new(bits, frac_len, Scheme::RramSymmetric)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=30).contains(&self.bits) {
            return Err(Error::InvalidQuant(format!("bit width {} outside 1..=30", self.bits)));
        }
        if !(MIN_FRAC_LEN..=MAX_FRAC_LEN).contains(&self.frac_len) {
            return Err(Error::InvalidQuant(format!("fraction length {} outside {MIN_FRAC_LEN}..={MAX_FRAC_LEN}", self.frac_len)));
        }
        Ok(())
    }

    pub fn step(&self) -> f64 {
        pow2(-self.frac_len)
    }

    /// Inclusive integer code range.
    pub fn code_range(&self) -> (i64, i64) {
        let q = 1i64 << self.bits;
        match self.scheme {
            Scheme::CmosComplement => (-q, q - 1),
            Scheme::RramSymmetric => (-(2 * q - 1), 2 * q - 1),
        }
    }

    /// Inclusive real-valued range.
    pub fn range(&self) -> (f64, f64) {
        let (lo, hi) = self.code_range();
        (lo as f64 * self.step(), hi as f64 * self.step())
    }

    /// `R^w` of the RRAM scheme; `None` for CMOS.
    pub fn rram_bound(&self) -> Option<f64> {
        match self.scheme {
            Scheme::RramSymmetric => Some(self.range().1),
            Scheme::CmosComplement => None,
        }
    }

    pub fn quantize_value(&self, x: f64) -> f64 {
        self.code_of(x) as f64 * self.step()
    }

    /// Nearest code (ties to even), saturated to the code range.
    pub fn code_of(&self, x: f64) -> i64 {
        let (lo, hi) = self.code_range();
        let scaled = (x * pow2(self.frac_len)).round_ties_even();
        if scaled.is_nan() {
            0
        } else {
            (scaled.clamp(lo as f64, hi as f64)) as i64
        }
    }

    pub fn clamp(&self, x: f64) -> f64 {
        let (lo, hi) = self.range();
        x.clamp(lo, hi)
    }

    /// Exact code of an on-grid, in-range value.
    pub fn exact_code(&self, x: f64) -> Option<i64> {
        let scaled = x * pow2(self.frac_len);
        let (lo, hi) = self.code_range();
        if scaled.fract() != 0.0 || scaled < lo as f64 || scaled > hi as f64 {
            return None;
        }
        Some(scaled as i64)
    }

    pub fn value_of(&self, code: i64) -> f64 {
        code as f64 * self.step()
    }
}

pub(crate) fn pow2(e: i32) -> f64 {
    if (-1022..=1023).contains(&e) {
        f64::from_bits(((e + 1023) as u64) << 52)
    } else {
        2f64.powi(e)
    }
}

/// Round every element to the spec's grid. The input is left untouched.
pub fn quantize(x: &Tensor, spec: QuantSpec) -> Tensor {
    let (lo, hi) = spec.code_range();
    let (lo, hi) = (lo as f64, hi as f64);
    let (scale, step) = (pow2(spec.frac_len), spec.step());
    x.map(|v| {
        let k = (v * scale).round_ties_even();
        if k.is_nan() {
            0.0
        } else {
            k.clamp(lo, hi) * step
        }
    })
    .with_quant(Some(spec))
}

/// Integer codes of a tensor that is already on the spec's grid.
pub fn codes(x: &Tensor, spec: QuantSpec) -> Result<Vec<i64>> {
    x.data()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            spec.exact_code(v)
                .ok_or_else(|| Error::precondition(format!("element {i} = {v} is not a Q={} l={} code", spec.bits, spec.frac_len)))
        })
        .collect()
}

/// Largest fraction length whose range contains every element of `x`
/// (minimal-overflow). An all-zero tensor gets `l = bits`.
pub fn find_frac_len(x: &Tensor, bits: u32, scheme: Scheme) -> Result<i32> {
    if x.is_empty() {
        return Err(Error::precondition("find_frac_len on an empty tensor"));
    }
    let (mut lo, mut hi) = (0.0f64, 0.0f64);
    for &v in x.data() {
        if !v.is_finite() {
            return Err(Error::NonFinite { context: "find_frac_len input".into() });
        }
        lo = lo.min(v);
        hi = hi.max(v);
    }
    frac_len_for_extremes(lo, hi, bits, scheme)
}

pub(crate) fn frac_len_for_extremes(lo: f64, hi: f64, bits: u32, scheme: Scheme) -> Result<i32> {
    QuantSpec::new(bits, 0, scheme)?;
    if lo == 0.0 && hi == 0.0 {
        return Ok(bits as i32);
    }
    for l in (MIN_FRAC_LEN..=MAX_FRAC_LEN).rev() {
        let spec = QuantSpec { bits, frac_len: l, scheme };
        let (rlo, rhi) = spec.range();
        if lo >= rlo && hi <= rhi {
            return Ok(l);
        }
    }
    Ok(MIN_FRAC_LEN)
}

/// Quantize with a per-tensor fraction length found by minimal overflow.
pub fn quantize_dynamic(x: &Tensor, bits: u32, scheme: Scheme) -> Result<Tensor> {
    let l = find_frac_len(x, bits, scheme)?;
    Ok(quantize(x, QuantSpec::new(bits, l, scheme)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(x: f64, bits: u32, l: i32, scheme: Scheme) -> f64 {
        QuantSpec::new(bits, l, scheme).unwrap().quantize_value(x)
    }

    // Scalar reference: nearest multiple of the step, ties to even.
    fn reference_round(x: f64, step: f64) -> f64 {
        let k = x / step;
        let fl = k.floor();
        let diff = k - fl;
        let r = if diff > 0.5 || (diff == 0.5 && fl % 2.0 != 0.0) { fl + 1.0 } else { fl };
        r * step
    }

    #[test]
    fn worked_examples() {
        assert_eq!(reference_round(0.3, 0.0625), 0.3125);
        assert_eq!(q(0.3, 8, 4, Scheme::CmosComplement), 0.3125);
        assert_eq!(q(0.0, 8, 4, Scheme::CmosComplement), 0.0);
        assert_eq!(q(100.0, 8, 4, Scheme::CmosComplement), 15.9375);
        assert_eq!(q(-100.0, 8, 4, Scheme::CmosComplement), -16.0);
    }

    #[test]
    fn ranges() {
        let c = QuantSpec::cmos(8, 4).unwrap();
        assert_eq!(c.range(), (-16.0, 15.9375));
        let r = QuantSpec::rram(8, 4).unwrap();
        assert_eq!(r.range(), (-511.0 / 16.0, 511.0 / 16.0));
        assert_eq!(r.rram_bound(), Some(511.0 / 16.0));
        assert_eq!(c.rram_bound(), None);
    }

    #[test]
    fn ties_go_to_even() {
        assert_eq!(q(0.5, 8, 0, Scheme::CmosComplement), 0.0);
        assert_eq!(q(1.5, 8, 0, Scheme::CmosComplement), 2.0);
        assert_eq!(q(-2.5, 8, 0, Scheme::CmosComplement), -2.0);
    }

    // Oracle: enumerate l and test the printed bounds directly.
    fn enumerate_frac_len(max_abs: f64, bits: u32) -> i32 {
        (-20..=40).rev().find(|&l| max_abs <= 2f64.powi(-l) * (2f64.powi(bits as i32) - 1.0)).unwrap()
    }

    #[test]
    fn frac_len_examples() {
        assert_eq!(enumerate_frac_len(0.9, 8), 8);
        assert_eq!(enumerate_frac_len(16.0, 8), 3);
        let t = Tensor::from_vec(vec![0.1, -0.5, 0.9]);
        assert_eq!(find_frac_len(&t, 8, Scheme::CmosComplement).unwrap(), 8);
        let t = Tensor::from_vec(vec![16.0, 1.0]);
        assert_eq!(find_frac_len(&t, 8, Scheme::CmosComplement).unwrap(), 3);
        let z = Tensor::zeros(&[4]);
        assert_eq!(find_frac_len(&z, 8, Scheme::CmosComplement).unwrap(), 8);
        assert!(find_frac_len(&Tensor::zeros(&[0]), 8, Scheme::CmosComplement).is_err());
    }

    #[test]
    fn frac_len_negative_extreme_uses_lower_bound() {
        // -16 is representable at l=4 (lower bound -2^(8-4)) even though +16 is not.
        let t = Tensor::from_vec(vec![-16.0]);
        assert_eq!(find_frac_len(&t, 8, Scheme::CmosComplement).unwrap(), 4);
    }

    #[test]
    fn exact_code_rejects_off_grid() {
        let s = QuantSpec::cmos(8, 4).unwrap();
        assert_eq!(s.exact_code(0.3125), Some(5));
        assert_eq!(s.exact_code(0.3), None);
        assert_eq!(s.exact_code(17.0), None);
    }
}
