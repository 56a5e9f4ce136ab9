//! Signed fixed-point encoding of real vectors into Z_n.
//!
//! encode(v) = round(v * 2^scale_log2), negatives mapped to the upper half
//! as n - |.|. The upper-half convention composes under addition, so
//! Paillier ciphertext sums decode straight to real sums. Headroom is
//! budgeted for `max_addends` summands: every encoded magnitude must stay
//! below n / (2 * max_addends).

use alloc::format;
use alloc::vec::Vec;

use num_bigint::{BigInt, BigUint};
use num_traits::{FromPrimitive, Signed, ToPrimitive};

use crate::error::{CoreError, CoreResult};
use crate::fp;

pub const DEFAULT_SCALE_LOG2: u32 = 20;
pub const DEFAULT_MAX_ADDENDS: usize = 64;

/// Codec bound to a public modulus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixedPointCodec {
    scale_log2: u32,
    modulus: BigUint,
    max_addends: usize,
}

impl FixedPointCodec {
    pub fn new(modulus: BigUint, scale_log2: u32, max_addends: usize) -> CoreResult<Self> {
        if max_addends == 0 {
            return Err(CoreError::crypto("max_addends must be positive"));
        }
        if modulus.bits() <= u64::from(scale_log2) + 8 {
            return Err(CoreError::crypto("modulus too small for the scale"));
        }
        Ok(FixedPointCodec {
            scale_log2,
            modulus,
            max_addends,
        })
    }

    pub fn with_defaults(modulus: BigUint) -> CoreResult<Self> {
        Self::new(modulus, DEFAULT_SCALE_LOG2, DEFAULT_MAX_ADDENDS)
    }

    pub fn scale_log2(&self) -> u32 {
        self.scale_log2
    }

    pub fn max_addends(&self) -> usize {
        self.max_addends
    }

    pub fn modulus(&self) -> &BigUint {
        &self.modulus
    }

    fn scale(&self) -> f64 {
        fp::powi(2.0, self.scale_log2)
    }

    /// Largest encodable magnitude: n / (2^{scale+1} * max_addends).
    pub fn max_magnitude(&self) -> f64 {
        let n = self.modulus.to_f64().unwrap_or(f64::MAX);
        n / (self.scale() * 2.0 * self.max_addends as f64)
    }

    /// Encodes one real value into Z_n.
    pub fn encode_value(&self, v: f64) -> CoreResult<BigUint> {
        if !v.is_finite() {
            return Err(CoreError::crypto("cannot encode non-finite value"));
        }
        if fp::abs(v) >= self.max_magnitude() {
            return Err(CoreError::crypto(format!(
                "magnitude {} exceeds codec headroom {}",
                v,
                self.max_magnitude()
            )));
        }
        let scaled = fp::round(v * self.scale());
        let as_int = BigInt::from_f64(scaled)
            .ok_or_else(|| CoreError::crypto("encode conversion failure"))?;
        if as_int.is_negative() {
            let mag = as_int.magnitude().clone();
            Ok(&self.modulus - mag)
        } else {
            Ok(as_int.magnitude().clone())
        }
    }

    /// Decodes one element of Z_n back to a real, upper half negative.
    /// `addends` is how many codec-encoded values were summed into it
    /// (1 for a plain value); the fixed-point scale is divided out once.
    pub fn decode_value(&self, encoded: &BigUint, addends: usize) -> CoreResult<f64> {
        if encoded >= &self.modulus {
            return Err(CoreError::crypto("encoded value outside Z_n"));
        }
        if addends > self.max_addends {
            return Err(CoreError::crypto("addend count exceeds codec budget"));
        }
        let half = &self.modulus >> 1;
        let signed: BigInt = if encoded > &half {
            -BigInt::from(&self.modulus - encoded)
        } else {
            BigInt::from(encoded.clone())
        };
        let as_f64 = signed
            .to_f64()
            .ok_or_else(|| CoreError::crypto("decode conversion failure"))?;
        Ok(as_f64 / self.scale())
    }

    /// Encodes a real vector componentwise.
    pub fn encode_vector(&self, v: &[f64]) -> CoreResult<Vec<BigUint>> {
        v.iter().map(|&x| self.encode_value(x)).collect()
    }

    /// Decodes a (possibly aggregated) vector componentwise.
    pub fn decode_vector(&self, encoded: &[BigUint], addends: usize) -> CoreResult<Vec<f64>> {
        encoded
            .iter()
            .map(|e| self.decode_value(e, addends))
            .collect()
    }

    /// Worst-case absolute decode error for a sum of `addends` encodings.
    pub fn error_bound(&self, addends: usize) -> f64 {
        addends as f64 / (2.0 * self.scale())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed_rng;
    use rand::Rng;

    fn codec() -> FixedPointCodec {
        // modulus comparable to a tiny RSA-free test modulus
        let n = BigUint::from(1u8) << 128;
        FixedPointCodec::with_defaults(n).unwrap()
    }

    #[test]
    fn encode_positive_known_value() {
        let c = codec();
        assert_eq!(c.encode_value(1.5).unwrap(), BigUint::from(1_572_864u64));
    }

    #[test]
    fn encode_negative_upper_half_convention() {
        let c = codec();
        let enc = c.encode_value(-1.0).unwrap();
        assert_eq!(enc, c.modulus() - BigUint::from(1_048_576u64));
        let back = c.decode_value(&enc, 1).unwrap();
        assert_eq!(back, -1.0);
    }

    #[test]
    fn roundtrip_error_within_half_ulp() {
        let c = codec();
        let mut rng = seed_rng(0);
        let bound = 1.0 / 2f64.powi(21);
        for _ in 0..500 {
            let v: f64 = rng.gen_range(-100.0..100.0);
            let enc = c.encode_value(v).unwrap();
            let dec = c.decode_value(&enc, 1).unwrap();
            assert!((dec - v).abs() <= bound, "v={} dec={}", v, dec);
        }
    }

    #[test]
    fn magnitude_overflow_rejected() {
        let c = codec();
        assert!(c.encode_value(c.max_magnitude() * 2.0).is_err());
    }

    #[test]
    fn modular_sums_decode_to_real_sums() {
        let c = codec();
        let mut rng = seed_rng(1);
        for _ in 0..200 {
            let a: f64 = rng.gen_range(-50.0..50.0);
            let b: f64 = rng.gen_range(-50.0..50.0);
            let ea = c.encode_value(a).unwrap();
            let eb = c.encode_value(b).unwrap();
            let sum = (ea + eb) % c.modulus();
            let dec = c.decode_value(&sum, 2).unwrap();
            assert!((dec - (a + b)).abs() <= c.error_bound(2));
        }
    }
}
