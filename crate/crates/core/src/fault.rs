//! Statistical fault models and deterministic mask generation.
//!
//! Every model is split into two steps: [`sample_mask`] draws a [`FaultMask`]
//! from a `(seed, stream id)` pair, and [`apply_mask`] applies it to a
//! tensor. Masks depend only on `(model, seed, stream id, shape)`, so any
//! injection can be replayed bit-exactly from its provenance.
//!
//! Supported models:
//!
//! | model | target | effect |
//! |---|---|---|
//! | bit-flip (BF / iBF) | weights | XOR of i.i.d. Bernoulli(p) bits into each Q-bit code |
//! | bit-bias (BB / iBB) | features | adds `±2^(q-1-l)` for every faulty bit position |
//! | MiBB | conv pre-activations | one `±2^(α-l)` bias per faulty site, rate `p_m·c·k²` |
//! | adSAF multi-bit | RRAM weights | stuck at 0 (p0) or at `±R^w` (p1) |
//! | adSAF 1-bit | RRAM weights | each magnitude bit stuck at 0 / 1 |
//! | LogNormal / ReciprocalNormal | RRAM weights | multiplicative programming variation |

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quant::{pow2, QuantSpec, Scheme};
use crate::rng::RngStream;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FaultModelSpec {
    #[default]
    None,
    /// Random bit-flip; `bf` and `ibf` name the per-value and per-tensor views
    /// of the same i.i.d. process.
    #[serde(rename = "ibf", alias = "bf")]
    BitFlip { p: f64 },
    /// Random bit-bias on feature values (`bb` / `ibb`).
    #[serde(rename = "ibb", alias = "bb")]
    BitBias { p: f64 },
    /// MAC-i.i.d. bit-bias with per-MAC error rate `p_m`.
    Mibb { p_m: f64 },
    #[serde(rename = "adsaf-multibit")]
    AdsafMultibit { p0: f64, p1: f64 },
    #[serde(rename = "adsaf-1bit")]
    Adsaf1bit { p0: f64, p1: f64 },
    #[serde(rename = "lognormal")]
    LogNormal { sigma: f64 },
    #[serde(rename = "reciprocal-normal")]
    ReciprocalNormal { sigma: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FaultTarget {
    None,
    Weights,
    Features,
}

impl FaultModelSpec {
    pub fn validate(&self) -> Result<()> {
        let prob = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::InvalidFault(format!("{name} = {v} is not a probability")))
            }
        };
        match *self {
            Self::None => Ok(()),
            Self::BitFlip { p } | Self::BitBias { p } => prob("p", p),
            Self::Mibb { p_m } => prob("p_m", p_m),
            Self::AdsafMultibit { p0, p1 } | Self::Adsaf1bit { p0, p1 } => {
                prob("p0", p0)?;
                prob("p1", p1)?;
                if p0 + p1 > 1.0 + 1e-12 {
                    return Err(Error::InvalidFault(format!("p0 + p1 = {} exceeds 1", p0 + p1)));
                }
                Ok(())
            }
            Self::LogNormal { sigma } | Self::ReciprocalNormal { sigma } => {
                if sigma.is_finite() && sigma >= 0.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidFault(format!("sigma = {sigma} must be finite and >= 0")))
                }
            }
        }
    }

    pub fn target(&self) -> FaultTarget {
        match self {
            Self::None => FaultTarget::None,
            Self::BitBias { .. } | Self::Mibb { .. } => FaultTarget::Features,
            _ => FaultTarget::Weights,
        }
    }

    /// Same model with its headline rate replaced. For adSAF the SAF0/SAF1
    /// proportion is kept and `rate` is the total `p0 + p1`.
    pub fn with_rate(&self, rate: f64) -> Self {
        match *self {
            Self::None => Self::None,
            Self::BitFlip { .. } => Self::BitFlip { p: rate },
            Self::BitBias { .. } => Self::BitBias { p: rate },
            Self::Mibb { .. } => Self::Mibb { p_m: rate },
            Self::AdsafMultibit { p0, p1 } => {
                let (a, b) = split_rate(p0, p1, rate);
                Self::AdsafMultibit { p0: a, p1: b }
            }
            Self::Adsaf1bit { p0, p1 } => {
                let (a, b) = split_rate(p0, p1, rate);
                Self::Adsaf1bit { p0: a, p1: b }
            }
            Self::LogNormal { .. } => Self::LogNormal { sigma: rate },
            Self::ReciprocalNormal { .. } => Self::ReciprocalNormal { sigma: rate },
        }
    }

    /// Headline rate (`p`, `p_m`, `p0 + p1` or `sigma`).
    pub fn rate(&self) -> f64 {
        match *self {
            Self::None => 0.0,
            Self::BitFlip { p } | Self::BitBias { p } => p,
            Self::Mibb { p_m } => p_m,
            Self::AdsafMultibit { p0, p1 } | Self::Adsaf1bit { p0, p1 } => p0 + p1,
            Self::LogNormal { sigma } | Self::ReciprocalNormal { sigma } => sigma,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.rate() == 0.0
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::None => "none",
            Self::BitFlip { .. } => "ibf",
            Self::BitBias { .. } => "ibb",
            Self::Mibb { .. } => "mibb",
            Self::AdsafMultibit { .. } => "adsaf-multibit",
            Self::Adsaf1bit { .. } => "adsaf-1bit",
            Self::LogNormal { .. } => "lognormal",
            Self::ReciprocalNormal { .. } => "reciprocal-normal",
        }
    }
}

fn split_rate(p0: f64, p1: f64, total: f64) -> (f64, f64) {
    let s = p0 + p1;
    // Measured RRAM SAF0/SAF1 proportions (83.7% / 16.3%) when no split is given.
    let frac0 = if s > 0.0 { p0 / s } else { 0.837 };
    (total * frac0, total * (1.0 - frac0))
}

/// Per-feature error rate of a convolution with kernel `(c, k, k)`:
/// `min(p_m · c · k², 1)`.
pub fn mibb_feature_rate(c: usize, k: usize, p_m: f64) -> f64 {
    mibb_rate_for_macs(c * k * k, p_m)
}

/// Per-feature rate when each output accumulates `macs` products.
pub fn mibb_rate_for_macs(macs: usize, p_m: f64) -> f64 {
    (p_m * macs as f64).min(1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum MaskPayload {
    /// `(element, flipped bits)`; bit `q` (1-based) is `1 << (q - 1)`.
    BitFlip(Vec<(usize, u32)>),
    /// `(element, faulty bits, negative-sign bits)`.
    BitBias(Vec<(usize, u32, u32)>),
    /// `(site, α, β)`: adds `(-1)^β 2^(α - l)`.
    Mibb(Vec<(usize, u8, bool)>),
    /// `(element, stuck at the bound)`; `false` means stuck at zero.
    StuckAt(Vec<(usize, bool)>),
    /// `(element, stuck bits θ, stuck values e)`.
    StuckBits(Vec<(usize, u32, u32)>),
    /// Dense multiplicative factors.
    Variation(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaultMask {
    pub shape: Vec<usize>,
    pub seed: u64,
    pub stream: u64,
    pub payload: MaskPayload,
}

impl FaultMask {
    /// Number of faulty sites (elements for element models, bits for bit models).
    pub fn fault_count(&self) -> usize {
        match &self.payload {
            MaskPayload::BitFlip(v) => v.iter().map(|(_, b)| b.count_ones() as usize).sum(),
            MaskPayload::BitBias(v) => v.iter().map(|(_, b, _)| b.count_ones() as usize).sum(),
            MaskPayload::Mibb(v) => v.len(),
            MaskPayload::StuckAt(v) => v.len(),
            MaskPayload::StuckBits(v) => v.iter().map(|(_, t, _)| t.count_ones() as usize).sum(),
            MaskPayload::Variation(v) => v.iter().filter(|&&f| f != 1.0).count(),
        }
    }

    /// Sites whose faulty outcome differs from the model's "benign" state;
    /// for stuck-at masks, `(stuck at zero, stuck at bound)`.
    pub fn stuck_counts(&self) -> Option<(usize, usize)> {
        match &self.payload {
            MaskPayload::StuckAt(v) => {
                let ones = v.iter().filter(|(_, s)| *s).count();
                Some((v.len() - ones, ones))
            }
            MaskPayload::StuckBits(v) => {
                let ones: usize = v.iter().map(|(_, t, e)| (t & e).count_ones() as usize).sum();
                let all: usize = v.iter().map(|(_, t, _)| t.count_ones() as usize).sum();
                Some((all - ones, ones))
            }
            _ => None,
        }
    }
}

fn bits_of(quant: Option<QuantSpec>, model: &FaultModelSpec) -> Result<u32> {
    quant.map(|q| q.bits).ok_or_else(|| Error::InvalidFault(format!("{} needs a quantization context", model.name())))
}

/// Per-element rate used when sampling a mask. For MiBB this is the
/// per-feature rate, which the caller derives from the conv shape.
fn sample_bit_sites(n: usize, bits: u32, p: f64, rng: &mut RngStream) -> Vec<(usize, u32)> {
    let mut out: Vec<(usize, u32)> = Vec::new();
    for site in rng.bernoulli_sites(n * bits as usize, p) {
        let (elem, bit) = (site / bits as usize, site % bits as usize);
        match out.last_mut() {
            Some((e, pat)) if *e == elem => *pat |= 1 << bit,
            _ => out.push((elem, 1 << bit)),
        }
    }
    out
}

/// Draw a mask for `model` over a tensor of `shape`.
///
/// `quant` supplies the bit width for bit-level models. `site_rate`
/// overrides the per-site probability of MiBB (the per-feature rate
/// `p_m · c · k²`); it is required for MiBB.
pub fn sample_mask(
    model: &FaultModelSpec,
    shape: &[usize],
    quant: Option<QuantSpec>,
    site_rate: Option<f64>,
    stream: &RngStream,
) -> Result<FaultMask> {
    model.validate()?;
    let n: usize = shape.iter().product();
    let mut rng = RngStream::with_stream(stream.seed(), stream.stream_id());
    let payload = match *model {
        FaultModelSpec::None => MaskPayload::BitFlip(Vec::new()),
        FaultModelSpec::BitFlip { p } => {
            let bits = bits_of(quant, model)?;
            MaskPayload::BitFlip(sample_bit_sites(n, bits, p, &mut rng))
        }
        FaultModelSpec::BitBias { p } => {
            let bits = bits_of(quant, model)?;
            let sites = sample_bit_sites(n, bits, p, &mut rng);
            let mut out = Vec::with_capacity(sites.len());
            for (e, pat) in sites {
                let mut neg = 0u32;
                for b in 0..bits {
                    if pat & (1 << b) != 0 && rng.bernoulli(0.5) {
                        neg |= 1 << b;
                    }
                }
                out.push((e, pat, neg));
            }
            MaskPayload::BitBias(out)
        }
        FaultModelSpec::Mibb { .. } => {
            let bits = bits_of(quant, model)?;
            let p = site_rate.ok_or_else(|| Error::InvalidFault("MiBB needs the producing convolution's shape to set its rate".into()))?;
            let sites = rng.bernoulli_sites(n, p.clamp(0.0, 1.0));
            let mut out = Vec::with_capacity(sites.len());
            for s in sites {
                let alpha = rng.below(bits as usize) as u8;
                let beta = rng.bernoulli(0.5);
                out.push((s, alpha, beta));
            }
            MaskPayload::Mibb(out)
        }
        FaultModelSpec::AdsafMultibit { p0, p1 } => {
            let p = p0 + p1;
            let cond = if p > 0.0 { p1 / p } else { 0.0 };
            let sites = rng.bernoulli_sites(n, p.min(1.0));
            MaskPayload::StuckAt(sites.into_iter().map(|s| (s, rng.bernoulli(cond))).collect())
        }
        FaultModelSpec::Adsaf1bit { p0, p1 } => {
            let bits = bits_of(quant, model)?;
            let p = p0 + p1;
            let cond = if p > 0.0 { p1 / p } else { 0.0 };
            let sites = sample_bit_sites(n, bits, p.min(1.0), &mut rng);
            let mut out = Vec::with_capacity(sites.len());
            for (e, theta) in sites {
                let mut val = 0u32;
                for b in 0..bits {
                    if theta & (1 << b) != 0 && rng.bernoulli(cond) {
                        val |= 1 << b;
                    }
                }
                out.push((e, theta, val));
            }
            MaskPayload::StuckBits(out)
        }
        FaultModelSpec::LogNormal { sigma } => MaskPayload::Variation((0..n).map(|_| (sigma * rng.normal()).exp()).collect()),
        FaultModelSpec::ReciprocalNormal { sigma } => MaskPayload::Variation(
            (0..n)
                .map(|_| {
                    if sigma == 0.0 {
                        return 1.0;
                    }
                    // Resistance R0 (1 + σz) must stay positive; redraw otherwise.
                    loop {
                        let r = 1.0 + sigma * rng.normal();
                        if r > 0.0 {
                            break 1.0 / r;
                        }
                    }
                })
                .collect(),
        ),
    };
    Ok(FaultMask { shape: shape.to_vec(), seed: stream.seed(), stream: stream.stream_id(), payload })
}

/// Apply a mask. `quant` is the grid the tensor lives on (bit-flip, 1-bit
/// adSAF), the fraction length of the features (bit-bias, MiBB), or the RRAM
/// spec providing `R^w` (multi-bit adSAF).
pub fn apply_mask(x: &Tensor, mask: &FaultMask, quant: Option<QuantSpec>) -> Result<Tensor> {
    if x.shape() != mask.shape.as_slice() {
        return Err(Error::shape(format!("mask {:?} vs tensor {:?}", mask.shape, x.shape())));
    }
    let need = || quant.ok_or_else(|| Error::InvalidFault("mask needs a quantization context".into()));
    let mut out = x.clone();
    match &mask.payload {
        MaskPayload::BitFlip(sites) => {
            let spec = need()?;
            let (lo, hi) = spec.code_range();
            let data = out.data_mut();
            for &(e, pat) in sites {
                let code = spec.exact_code(data[e]).ok_or_else(|| {
                    Error::precondition(format!("bit-flip input {} is not on the Q={} l={} grid", data[e], spec.bits, spec.frac_len))
                })?;
                data[e] = spec.value_of((code ^ i64::from(pat)).clamp(lo, hi));
            }
            return Ok(out.with_quant(Some(spec)));
        }
        MaskPayload::BitBias(sites) => {
            let spec = need()?;
            let data = out.data_mut();
            for &(e, pat, neg) in sites {
                let mut bias = 0.0;
                for b in 0..32i32 {
                    if pat & (1 << b) != 0 {
                        let mag = pow2(b - spec.frac_len);
                        bias += if neg & (1 << b) != 0 { -mag } else { mag };
                    }
                }
                data[e] += bias;
            }
        }
        MaskPayload::Mibb(sites) => {
            let spec = need()?;
            let data = out.data_mut();
            for &(s, alpha, negative) in sites {
                let mag = pow2(i32::from(alpha) - spec.frac_len);
                data[s] += if negative { -mag } else { mag };
            }
        }
        MaskPayload::StuckAt(sites) => {
            let spec = need()?;
            let bound = spec.rram_bound().ok_or_else(|| Error::InvalidFault("stuck-at faults need an RRAM-symmetric spec (R^w)".into()))?;
            let data = out.data_mut();
            for &(e, saf1) in sites {
                // e = R^w sign(W) m; sign(0) = 0 keeps zero weights at zero.
                data[e] = if saf1 { bound * sign(data[e]) } else { 0.0 };
            }
            return Ok(out.with_quant(x.quant()));
        }
        MaskPayload::StuckBits(sites) => {
            let spec = need()?;
            let scale = pow2(spec.frac_len);
            let limit = 1u64 << spec.bits;
            let data = out.data_mut();
            for &(e, theta, val) in sites {
                let w = data[e];
                let mag = w.abs() * scale;
                if mag.fract() != 0.0 || mag >= limit as f64 {
                    return Err(Error::precondition(format!(
                        "weight {w} does not fit {} magnitude bits at l={}",
                        spec.bits, spec.frac_len
                    )));
                }
                let m = mag as u64;
                let m2 = (m & !u64::from(theta)) | (u64::from(theta) & u64::from(val));
                data[e] = sign(w) * m2 as f64 / scale;
            }
            return Ok(out.with_quant(x.quant()));
        }
        MaskPayload::Variation(factors) => {
            if factors.len() != x.len() {
                return Err(Error::shape("variation factors length"));
            }
            for (v, f) in out.data_mut().iter_mut().zip(factors) {
                *v *= f;
            }
        }
    }
    Ok(out)
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Random bit-flips on an already quantized tensor.
pub fn inject_bf(x: &Tensor, p: f64, quant: QuantSpec, stream: &RngStream) -> Result<Tensor> {
    quant.validate()?;
    crate::quant::codes(x, quant)?;
    let mask = sample_mask(&FaultModelSpec::BitFlip { p }, x.shape(), Some(quant), None, stream)?;
    apply_mask(x, &mask, Some(quant))
}

/// Random bit-bias with adder width `quant.bits` and fraction `quant.frac_len`.
pub fn inject_bb(x: &Tensor, p: f64, quant: QuantSpec, stream: &RngStream) -> Result<Tensor> {
    let mask = sample_mask(&FaultModelSpec::BitBias { p }, x.shape(), Some(quant), None, stream)?;
    apply_mask(x, &mask, Some(quant))
}

/// MiBB on the pre-activation output of a convolution whose kernel is
/// `(c, k, k)`. Masks cover the whole batch, so each sample draws its own.
pub fn inject_mibb(f: &Tensor, conv_shape: Option<(usize, usize)>, p_m: f64, quant: QuantSpec, stream: &RngStream) -> Result<Tensor> {
    let (c, k) = conv_shape.ok_or_else(|| Error::InvalidFault("MiBB needs the producing convolution's kernel shape".into()))?;
    let rate = mibb_feature_rate(c, k, p_m);
    let mask = sample_mask(&FaultModelSpec::Mibb { p_m }, f.shape(), Some(quant), Some(rate), stream)?;
    apply_mask(f, &mask, Some(quant))
}

pub fn inject_adsaf(w: &Tensor, p0: f64, p1: f64, quant: QuantSpec, stream: &RngStream) -> Result<Tensor> {
    if quant.scheme != Scheme::RramSymmetric {
        return Err(Error::InvalidFault("multi-bit adSAF requires an RRAM-symmetric spec".into()));
    }
    let mask = sample_mask(&FaultModelSpec::AdsafMultibit { p0, p1 }, w.shape(), Some(quant), None, stream)?;
    apply_mask(w, &mask, Some(quant))
}

pub fn inject_adsaf_1bit(w: &Tensor, p0: f64, p1: f64, quant: QuantSpec, stream: &RngStream) -> Result<Tensor> {
    let mask = sample_mask(&FaultModelSpec::Adsaf1bit { p0, p1 }, w.shape(), Some(quant), None, stream)?;
    apply_mask(w, &mask, Some(quant))
}

/// LogNormal or ReciprocalNormal programming variation. Zero weights stay zero.
pub fn inject_variation(w: &Tensor, model: &FaultModelSpec, stream: &RngStream) -> Result<Tensor> {
    match model {
        FaultModelSpec::LogNormal { .. } | FaultModelSpec::ReciprocalNormal { .. } => {}
        other => return Err(Error::InvalidFault(format!("{} is not a variation model", other.name()))),
    }
    let mask = sample_mask(model, w.shape(), None, None, stream)?;
    apply_mask(w, &mask, None)
}

/// Largest fraction length at which every magnitude fits `bits` bits, the
/// sign-magnitude layout the 1-bit adSAF model assumes.
pub fn magnitude_frac_len(w: &Tensor, bits: u32) -> Result<i32> {
    let m = w.max_abs();
    let limit = (1u64 << bits) as f64 - 1.0;
    if m == 0.0 {
        return Ok(bits as i32);
    }
    for l in (crate::quant::MIN_FRAC_LEN..=crate::quant::MAX_FRAC_LEN).rev() {
        if m * pow2(l) <= limit {
            return Ok(l);
        }
    }
    Err(Error::precondition("weights too large for any fraction length"))
}

/// Round onto the sign-magnitude grid used by [`inject_adsaf_1bit`].
pub fn quantize_magnitude(w: &Tensor, bits: u32) -> Result<(Tensor, QuantSpec)> {
    let l = magnitude_frac_len(w, bits)?;
    // Codes of the RRAM scheme at bit width Q-1 span ±(2^Q - 1): exactly the
    // Q-bit magnitude range.
    let spec = QuantSpec::new(bits - 1, l, Scheme::RramSymmetric)?;
    let q = crate::quant::quantize(w, spec);
    Ok((q, QuantSpec { bits, frac_len: l, scheme: Scheme::RramSymmetric }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64]) -> Tensor {
        Tensor::from_vec(v.to_vec())
    }

    fn mask(shape: &[usize], payload: MaskPayload) -> FaultMask {
        FaultMask { shape: shape.to_vec(), seed: 0, stream: 0, payload }
    }

    #[test]
    fn forced_bit_flip() {
        let q = QuantSpec::cmos(8, 0).unwrap();
        let m = mask(&[1], MaskPayload::BitFlip(vec![(0, 1)]));
        assert_eq!(apply_mask(&t(&[0.0]), &m, Some(q)).unwrap().data(), &[1.0]);
    }

    #[test]
    fn bit_flip_stays_in_range_and_rejects_off_grid() {
        let q = QuantSpec::cmos(8, 4).unwrap();
        let m = mask(&[2], MaskPayload::BitFlip(vec![(0, 0xFF), (1, 0x80)]));
        let out = apply_mask(&t(&[-16.0, 15.9375]), &m, Some(q)).unwrap();
        let (lo, hi) = q.range();
        assert!(out.data().iter().all(|v| (lo..=hi).contains(v)));
        let s = RngStream::new(0);
        assert!(matches!(inject_bf(&t(&[0.3]), 0.5, q, &s), Err(Error::Precondition(_))));
    }

    #[test]
    fn forced_bit_bias() {
        let q = QuantSpec::cmos(8, 4).unwrap();
        let m = mask(&[1], MaskPayload::BitBias(vec![(0, 1 << 2, 0)]));
        assert_eq!(apply_mask(&t(&[1.0]), &m, Some(q)).unwrap().data(), &[1.25]);
    }

    #[test]
    fn zero_rates_are_identity() {
        let s = RngStream::new(9);
        let q = QuantSpec::cmos(8, 4).unwrap();
        let x = crate::quant::quantize(&t(&[0.5, -1.25, 3.0]), q);
        assert_eq!(inject_bf(&x, 0.0, q, &s).unwrap().data(), x.data());
        assert_eq!(inject_bb(&x, 0.0, q, &s).unwrap().data(), x.data());
        assert_eq!(inject_mibb(&x, Some((3, 3)), 0.0, q, &s).unwrap().data(), x.data());
        let r = QuantSpec::rram(8, 4).unwrap();
        assert_eq!(inject_adsaf(&x, 0.0, 0.0, r, &s).unwrap().data(), x.data());
        let v = inject_variation(&x, &FaultModelSpec::LogNormal { sigma: 0.0 }, &s).unwrap();
        assert_eq!(v.data(), x.data());
        let v = inject_variation(&x, &FaultModelSpec::ReciprocalNormal { sigma: 0.0 }, &s).unwrap();
        assert_eq!(v.data(), x.data());
    }

    #[test]
    fn mibb_rate_examples() {
        assert!((mibb_feature_rate(20, 3, 1e-4) - 1.8e-2).abs() < 1e-15);
        assert_eq!(mibb_feature_rate(20, 3, 0.0), 0.0);
        assert_eq!(mibb_feature_rate(512, 5, 3e-4), 1.0);
    }

    #[test]
    fn forced_mibb_site() {
        let q = QuantSpec::cmos(8, 4).unwrap();
        let m = mask(&[1, 2, 1, 1], MaskPayload::Mibb(vec![(1, 7, true)]));
        let f = Tensor::new(vec![1, 2, 1, 1], vec![2.0, 2.0]).unwrap();
        let out = apply_mask(&f, &m, Some(q)).unwrap();
        assert_eq!(out.data(), &[2.0, -6.0]);
    }

    #[test]
    fn mibb_requires_conv_shape() {
        let q = QuantSpec::cmos(8, 4).unwrap();
        let s = RngStream::new(1);
        assert!(inject_mibb(&t(&[1.0]), None, 1e-3, q, &s).is_err());
    }

    #[test]
    fn adsaf_examples() {
        let r = QuantSpec::rram(8, 4).unwrap();
        let s = RngStream::new(2);
        let w = t(&[0.5, -0.5, 0.25]);
        assert!(inject_adsaf(&w, 1.0, 0.0, r, &s).unwrap().data().iter().all(|&v| v == 0.0));
        let rw = r.rram_bound().unwrap();
        assert_eq!(inject_adsaf(&t(&[0.5, -0.5]), 0.0, 1.0, r, &s).unwrap().data(), &[rw, -rw]);
        let c = QuantSpec::cmos(8, 4).unwrap();
        assert!(inject_adsaf(&w, 0.1, 0.1, c, &s).is_err());
    }

    #[test]
    fn one_bit_examples() {
        let q = QuantSpec::rram(8, 4).unwrap();
        let w = t(&[0.5]);
        let bit4 = mask(&[1], MaskPayload::StuckBits(vec![(0, 1 << 3, 1 << 3)]));
        assert_eq!(apply_mask(&w, &bit4, Some(q)).unwrap().data(), &[0.5]);
        let bit1 = mask(&[1], MaskPayload::StuckBits(vec![(0, 1, 1)]));
        assert_eq!(apply_mask(&w, &bit1, Some(q)).unwrap().data(), &[0.5625]);
        let all0 = mask(&[1], MaskPayload::StuckBits(vec![(0, 0xFF, 0)]));
        assert_eq!(apply_mask(&t(&[-7.9375]), &all0, Some(q)).unwrap().data(), &[0.0]);
        let over = t(&[16.0]);
        assert!(matches!(apply_mask(&over, &bit1, Some(q)), Err(Error::Precondition(_))));
        let neg = apply_mask(&t(&[-0.5]), &bit1, Some(q)).unwrap();
        assert_eq!(neg.data(), &[-0.5625]);
    }

    #[test]
    fn reciprocal_normal_leaves_zero() {
        let s = RngStream::new(3);
        let out = inject_variation(&t(&[0.0, 1.0]), &FaultModelSpec::ReciprocalNormal { sigma: 0.3 }, &s).unwrap();
        assert_eq!(out.data()[0], 0.0);
        assert!(out.data()[1] > 0.0);
    }

    #[test]
    fn spec_validation() {
        assert!(FaultModelSpec::AdsafMultibit { p0: 0.7, p1: 0.4 }.validate().is_err());
        assert!(FaultModelSpec::BitFlip { p: -0.1 }.validate().is_err());
        assert!(FaultModelSpec::LogNormal { sigma: -1.0 }.validate().is_err());
        assert!(FaultModelSpec::Mibb { p_m: 1e-4 }.validate().is_ok());
    }

    #[test]
    fn with_rate_keeps_saf_split() {
        let m = FaultModelSpec::AdsafMultibit { p0: 0.067, p1: 0.013 }.with_rate(0.04);
        let FaultModelSpec::AdsafMultibit { p0, p1 } = m else { panic!() };
        assert!((p0 - 0.0335).abs() < 1e-12 && (p1 - 0.0065).abs() < 1e-12);
    }

    #[test]
    fn magnitude_quantization_fits_bits() {
        let w = t(&[0.9, -0.3, 0.01]);
        let (q, spec) = quantize_magnitude(&w, 8).unwrap();
        assert_eq!(spec.frac_len, 8);
        for &v in q.data() {
            assert!(v.abs() * 256.0 <= 255.0);
        }
    }

    #[test]
    fn serde_kind_names() {
        let m: FaultModelSpec = serde_json::from_str(r#"{"kind":"bf","p":0.01}"#).unwrap();
        assert_eq!(m, FaultModelSpec::BitFlip { p: 0.01 });
        let m: FaultModelSpec = serde_json::from_str(r#"{"kind":"adsaf-1bit","p0":0.1,"p1":0.0}"#).unwrap();
        assert_eq!(m.name(), "adsaf-1bit");
    }
}
