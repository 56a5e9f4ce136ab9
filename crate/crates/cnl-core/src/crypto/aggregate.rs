//! Ciphertext vectors and their commutative summation.
//!
//! [`secure_sum`] is the only aggregation entry point and it consumes
//! ciphertext vectors exclusively; aggregator code never sees plaintext.

use alloc::vec::Vec;

use num_bigint::BigUint;

use super::paillier::{he_add, PaillierPublicKey};
use crate::error::{CoreError, CoreResult};

/// Per-component Paillier ciphertexts of one fixed-point-encoded vector
/// (or a sum of several).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CiphertextVector {
    components: Vec<BigUint>,
    scale_log2: u32,
    addend_count: usize,
}

impl CiphertextVector {
    pub fn new(components: Vec<BigUint>, scale_log2: u32, addend_count: usize) -> CoreResult<Self> {
        if addend_count == 0 {
            return Err(CoreError::crypto("addend_count must be at least 1"));
        }
        Ok(CiphertextVector {
            components,
            scale_log2,
            addend_count,
        })
    }

    /// A fresh single-sender vector.
    pub fn fresh(components: Vec<BigUint>, scale_log2: u32) -> Self {
        CiphertextVector {
            components,
            scale_log2,
            addend_count: 1,
        }
    }

    pub fn components(&self) -> &[BigUint] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn scale_log2(&self) -> u32 {
        self.scale_log2
    }

    pub fn addend_count(&self) -> usize {
        self.addend_count
    }

    pub fn validate_under(&self, pk: &PaillierPublicKey) -> CoreResult<()> {
        let n2 = pk.modulus_squared();
        if self.components.iter().any(|c| c >= n2) {
            return Err(CoreError::crypto("component exceeds n^2"));
        }
        Ok(())
    }
}

/// Componentwise homomorphic sum of the senders' vectors. Commutative:
/// arrival order cannot change the result.
pub fn secure_sum(
    pk: &PaillierPublicKey,
    vectors: &[CiphertextVector],
    max_addends: usize,
) -> CoreResult<CiphertextVector> {
    let first = vectors
        .first()
        .ok_or_else(|| CoreError::crypto("secure_sum of zero vectors"))?;
    let len = first.len();
    let scale = first.scale_log2();
    let total_addends: usize = vectors.iter().map(|v| v.addend_count()).sum();
    if total_addends > max_addends {
        return Err(CoreError::crypto("addend overflow beyond codec budget"));
    }
    for v in vectors {
        if v.len() != len {
            return Err(CoreError::crypto("ciphertext vector length mismatch"));
        }
        if v.scale_log2() != scale {
            return Err(CoreError::crypto("ciphertext scale mismatch"));
        }
        v.validate_under(pk)?;
    }
    let mut acc = first.components.clone();
    for v in &vectors[1..] {
        for (a, c) in acc.iter_mut().zip(v.components()) {
            *a = he_add(pk, a, c)?;
        }
    }
    CiphertextVector::new(acc, scale, total_addends)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::codec::FixedPointCodec;
    use crate::crypto::paillier::{paillier_decrypt, paillier_encrypt, paillier_keygen};
    use crate::seed_rng;
    use alloc::vec;
    use rand::Rng;

    fn encrypt_vector(
        pk: &PaillierPublicKey,
        codec: &FixedPointCodec,
        values: &[f64],
        rng: &mut impl rand::RngCore,
    ) -> CiphertextVector {
        let encoded = codec.encode_vector(values).unwrap();
        let components = encoded
            .iter()
            .map(|m| paillier_encrypt(pk, m, rng).unwrap())
            .collect();
        CiphertextVector::fresh(components, codec.scale_log2())
    }

    #[test]
    fn single_sender_is_identity() {
        let kp = paillier_keygen(512, &mut seed_rng(1)).unwrap();
        let codec = FixedPointCodec::with_defaults(kp.public.modulus().clone()).unwrap();
        let mut rng = seed_rng(2);
        let v = encrypt_vector(&kp.public, &codec, &[1.25, -3.5], &mut rng);
        let sum = secure_sum(&kp.public, &[v.clone()], 64).unwrap();
        assert_eq!(sum.addend_count(), 1);
        assert_eq!(sum.components(), v.components());
    }

    #[test]
    fn eight_vectors_sum_within_bound() {
        let kp = paillier_keygen(512, &mut seed_rng(3)).unwrap();
        let codec = FixedPointCodec::with_defaults(kp.public.modulus().clone()).unwrap();
        let mut rng = seed_rng(4);
        let dim = 16;
        let mut plain_sum = vec![0.0; dim];
        let mut vectors = Vec::new();
        for _ in 0..8 {
            let values: Vec<f64> = (0..dim).map(|_| rng.gen_range(-10.0..10.0)).collect();
            for (s, v) in plain_sum.iter_mut().zip(&values) {
                *s += *v;
            }
            vectors.push(encrypt_vector(&kp.public, &codec, &values, &mut rng));
        }
        let sum = secure_sum(&kp.public, &vectors, 64).unwrap();
        assert_eq!(sum.addend_count(), 8);
        let decrypted: Vec<_> = sum
            .components()
            .iter()
            .map(|c| paillier_decrypt(&kp, c).unwrap())
            .collect();
        let decoded = codec.decode_vector(&decrypted, 8).unwrap();
        let bound = 8.0 / 2f64.powi(21);
        for (d, p) in decoded.iter().zip(&plain_sum) {
            assert!((d - p).abs() <= bound, "decoded {} expected {}", d, p);
        }
    }

    #[test]
    fn arrival_order_is_irrelevant() {
        let kp = paillier_keygen(512, &mut seed_rng(5)).unwrap();
        let codec = FixedPointCodec::with_defaults(kp.public.modulus().clone()).unwrap();
        let mut rng = seed_rng(6);
        let a = encrypt_vector(&kp.public, &codec, &[1.0, 2.0], &mut rng);
        let b = encrypt_vector(&kp.public, &codec, &[-0.5, 4.0], &mut rng);
        let c = encrypt_vector(&kp.public, &codec, &[3.25, -1.0], &mut rng);
        let s1 = secure_sum(&kp.public, &[a.clone(), b.clone(), c.clone()], 64).unwrap();
        let s2 = secure_sum(&kp.public, &[c, a, b], 64).unwrap();
        let dec = |s: &CiphertextVector| -> Vec<f64> {
            let plain: Vec<_> = s
                .components()
                .iter()
                .map(|x| paillier_decrypt(&kp, x).unwrap())
                .collect();
            codec.decode_vector(&plain, s.addend_count()).unwrap()
        };
        assert_eq!(dec(&s1), dec(&s2));
    }

    #[test]
    fn mismatched_inputs_rejected() {
        let kp = paillier_keygen(512, &mut seed_rng(7)).unwrap();
        let codec = FixedPointCodec::with_defaults(kp.public.modulus().clone()).unwrap();
        let mut rng = seed_rng(8);
        let a = encrypt_vector(&kp.public, &codec, &[1.0, 2.0], &mut rng);
        let short = encrypt_vector(&kp.public, &codec, &[1.0], &mut rng);
        assert!(secure_sum(&kp.public, &[a.clone(), short], 64).is_err());
        let other_scale = CiphertextVector::new(a.components().to_vec(), 10, 1).unwrap();
        assert!(secure_sum(&kp.public, &[a.clone(), other_scale], 64).is_err());
        assert!(secure_sum(&kp.public, &[], 64).is_err());
        // addend budget
        let b = encrypt_vector(&kp.public, &codec, &[0.0, 0.0], &mut rng);
        assert!(secure_sum(&kp.public, &[a, b], 1).is_err());
    }
}
