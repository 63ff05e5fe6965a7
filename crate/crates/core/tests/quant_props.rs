//! Property checks of the fixed-point quantizer against an integer oracle.

use faultnas_core::quant::{find_frac_len, quantize, quantize_dynamic, QuantSpec, Scheme};
use faultnas_core::Tensor;
use proptest::prelude::*;

/// Independent oracle: integer code range and nearest-even rounding.
fn oracle(x: f64, bits: u32, l: i32, scheme: Scheme) -> f64 {
    let scale = 2f64.powi(l);
    let (lo, hi) = match scheme {
        Scheme::CmosComplement => (-(1i64 << bits), (1i64 << bits) - 1),
        Scheme::RramSymmetric => (-((1i64 << (bits + 1)) - 1), (1i64 << (bits + 1)) - 1),
    };
    let k = (x * scale).round_ties_even().clamp(lo as f64, hi as f64);
    k / scale
}

fn scheme() -> impl Strategy<Value = Scheme> {
    prop_oneof![Just(Scheme::CmosComplement), Just(Scheme::RramSymmetric)]
}

proptest! {
    #[test]
    fn matches_oracle(x in -1e3f64..1e3, bits in 4u32..=10, l in -2i32..=10, s in scheme()) {
        let spec = QuantSpec::new(bits, l, s).unwrap();
        prop_assert_eq!(spec.quantize_value(x), oracle(x, bits, l, s));
    }

    #[test]
    fn idempotent(x in -1e3f64..1e3, bits in 4u32..=10, l in -2i32..=10, s in scheme()) {
        let spec = QuantSpec::new(bits, l, s).unwrap();
        let once = spec.quantize_value(x);
        prop_assert_eq!(spec.quantize_value(once), once);
    }

    #[test]
    fn saturates_into_range(x in -1e6f64..1e6, bits in 4u32..=10, l in -2i32..=10, s in scheme()) {
        let spec = QuantSpec::new(bits, l, s).unwrap();
        let (lo, hi) = spec.range();
        let q = spec.quantize_value(x);
        prop_assert!(lo <= q && q <= hi);
        match s {
            Scheme::CmosComplement => {
                prop_assert_eq!(lo, -(2f64.powi(bits as i32 - l)));
                prop_assert_eq!(hi, 2f64.powi(-l) * (2f64.powi(bits as i32) - 1.0));
            }
            Scheme::RramSymmetric => {
                prop_assert_eq!(hi, -lo);
                prop_assert_eq!(hi, 2f64.powi(-l) * (2f64.powi(bits as i32 + 1) - 1.0));
            }
        }
    }

    #[test]
    fn monotone(a in -1e3f64..1e3, b in -1e3f64..1e3, bits in 4u32..=10, l in -2i32..=10, s in scheme()) {
        let spec = QuantSpec::new(bits, l, s).unwrap();
        let (x, y) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(spec.quantize_value(x) <= spec.quantize_value(y));
    }

    #[test]
    fn half_step_error_in_range(bits in 4u32..=10, l in -2i32..=10, s in scheme(), u in 0.0f64..1.0) {
        let spec = QuantSpec::new(bits, l, s).unwrap();
        let (lo, hi) = spec.range();
        let x = lo + u * (hi - lo);
        prop_assert!((spec.quantize_value(x) - x).abs() <= 2f64.powi(-l - 1));
    }

    #[test]
    fn dynamic_frac_len_is_maximal(v in prop::collection::vec(-50.0f64..50.0, 1..40), bits in 4u32..=10, s in scheme()) {
        let t = Tensor::from_vec(v.clone());
        let l = find_frac_len(&t, bits, s).unwrap();
        let fits = |l: i32| {
            let (lo, hi) = QuantSpec::new(bits, l, s).unwrap().range();
            v.iter().all(|&x| lo <= x && x <= hi)
        };
        prop_assert!(fits(l));
        if v.iter().any(|&x| x != 0.0) {
            prop_assert!(!fits(l + 1));
        }
        let q = quantize_dynamic(&t, bits, s).unwrap();
        prop_assert_eq!(q.quant().unwrap().frac_len, l);
        let again = quantize(&q, q.quant().unwrap());
        prop_assert_eq!(again.data(), q.data());
    }
}

#[test]
fn all_zero_tensor_uses_full_fraction() {
    assert_eq!(find_frac_len(&Tensor::zeros(&[4]), 8, Scheme::CmosComplement).unwrap(), 8);
}
