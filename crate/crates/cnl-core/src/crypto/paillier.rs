//! Paillier cryptosystem, g = n + 1 variant.
//!
//! Encryption: c = (1 + m*n) * r^n mod n^2 with r uniform in the units of
//! Z_n. Decryption: m = L(c^lambda mod n^2) * mu mod n, L(u) = (u-1)/n.
//! Ciphertext products realize plaintext addition mod n.

use alloc::format;

use num_bigint::BigUint;
use num_integer::Integer;
use num_traits::One;
use rand::RngCore;

use super::primes::{lcm, random_below, random_prime};
use crate::error::{CoreError, CoreResult};

/// Allowed modulus sizes: 512 is for tests, production keys are >= 1024.
pub const ALLOWED_KEY_BITS: [u64; 3] = [512, 1024, 2048];

/// Public modulus and cached square; g is implicitly n + 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PaillierPublicKey {
    n: BigUint,
    n_squared: BigUint,
    bits: u64,
}

impl PaillierPublicKey {
    pub fn from_modulus(n: BigUint) -> Self {
        let n_squared = &n * &n;
        let bits = n.bits();
        PaillierPublicKey { n, n_squared, bits }
    }

    pub fn modulus(&self) -> &BigUint {
        &self.n
    }

    pub fn modulus_squared(&self) -> &BigUint {
        &self.n_squared
    }

    /// The generator g = n + 1.
    pub fn generator(&self) -> BigUint {
        &self.n + BigUint::one()
    }

    pub fn bits(&self) -> u64 {
        self.bits
    }
}

/// lambda = lcm(p-1, q-1) and mu = lambda^{-1} mod n.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PaillierPrivateKey {
    lambda: BigUint,
    mu: BigUint,
}

impl PaillierPrivateKey {
    pub fn lambda(&self) -> &BigUint {
        &self.lambda
    }

    pub fn mu(&self) -> &BigUint {
        &self.mu
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PaillierKeypair {
    pub public: PaillierPublicKey,
    pub private: PaillierPrivateKey,
}

impl PaillierKeypair {
    /// Builds a keypair from two primes. Used by tests with textbook-sized
    /// primes; [`paillier_keygen`] is the sized entry point.
    pub fn from_primes(p: &BigUint, q: &BigUint) -> CoreResult<Self> {
        if p == q {
            return Err(CoreError::crypto("primes must be distinct"));
        }
        let one = BigUint::one();
        let n = p * q;
        let lambda = lcm(&(p - &one), &(q - &one));
        // With g = n + 1: L(g^lambda mod n^2) = lambda mod n, so
        // mu = lambda^{-1} mod n.
        let mu = (&lambda % &n)
            .modinv(&n)
            .ok_or_else(|| CoreError::crypto("lambda not invertible mod n"))?;
        Ok(PaillierKeypair {
            public: PaillierPublicKey::from_modulus(n),
            private: PaillierPrivateKey { lambda, mu },
        })
    }
}

/// Generates a Paillier keypair with an exactly `bits`-sized modulus from
/// two equal-length probable primes (Miller-Rabin, 64 rounds).
pub fn paillier_keygen(bits: u64, rng: &mut impl RngCore) -> CoreResult<PaillierKeypair> {
    if !ALLOWED_KEY_BITS.contains(&bits) {
        return Err(CoreError::crypto(format!(
            "modulus size {} not in {:?}",
            bits, ALLOWED_KEY_BITS
        )));
    }
    let half = bits / 2;
    loop {
        let p = random_prime(rng, half)?;
        let q = random_prime(rng, half)?;
        if p == q {
            continue;
        }
        let keypair = PaillierKeypair::from_primes(&p, &q)?;
        if keypair.public.bits() == bits {
            return Ok(keypair);
        }
    }
}

/// Encrypts `m` in `[0, n)` with fresh randomness from `rng`.
pub fn paillier_encrypt(
    pk: &PaillierPublicKey,
    m: &BigUint,
    rng: &mut impl RngCore,
) -> CoreResult<BigUint> {
    let n = pk.modulus();
    if m >= n {
        return Err(CoreError::crypto("plaintext out of range [0, n)"));
    }
    let one = BigUint::one();
    let r = loop {
        let candidate = random_below(rng, n);
        if !num_traits::Zero::is_zero(&candidate) && candidate.gcd(n).is_one() {
            break candidate;
        }
    };
    // (1 + n)^m = 1 + m*n (mod n^2)
    let gm = (one + m * n) % pk.modulus_squared();
    let rn = r.modpow(n, pk.modulus_squared());
    Ok((gm * rn) % pk.modulus_squared())
}

/// Decrypts a ciphertext in `[0, n^2)` coprime to n.
pub fn paillier_decrypt(
    keypair: &PaillierKeypair,
    c: &BigUint,
) -> CoreResult<BigUint> {
    let pk = &keypair.public;
    let sk = &keypair.private;
    if c >= pk.modulus_squared() {
        return Err(CoreError::crypto("ciphertext out of range [0, n^2)"));
    }
    if !c.gcd(pk.modulus_squared()).is_one() {
        return Err(CoreError::crypto("ciphertext not coprime to modulus"));
    }
    let u = c.modpow(sk.lambda(), pk.modulus_squared());
    let l = (&u - BigUint::one()) / pk.modulus();
    Ok((l * sk.mu()) % pk.modulus())
}

/// Homomorphic addition: D(he_add(E(x), E(y))) = x + y mod n.
pub fn he_add(pk: &PaillierPublicKey, c_a: &BigUint, c_b: &BigUint) -> CoreResult<BigUint> {
    let n2 = pk.modulus_squared();
    if c_a >= n2 || c_b >= n2 {
        return Err(CoreError::crypto("ciphertext out of range for modulus"));
    }
    Ok((c_a * c_b) % n2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed_rng;

    fn tiny_keys() -> PaillierKeypair {
        // p = 5, q = 7: n = 35, lambda = lcm(4, 6) = 12, mu = 12^{-1} mod 35 = 3
        PaillierKeypair::from_primes(&BigUint::from(5u32), &BigUint::from(7u32)).unwrap()
    }

    #[test]
    fn tiny_key_parameters_match_hand_computation() {
        let kp = tiny_keys();
        assert_eq!(kp.public.modulus(), &BigUint::from(35u32));
        assert_eq!(kp.private.lambda(), &BigUint::from(12u32));
        assert_eq!(kp.private.mu(), &BigUint::from(3u32));
        assert_eq!(kp.public.generator(), BigUint::from(36u32));
    }

    #[test]
    fn tiny_key_roundtrip_m4() {
        let kp = tiny_keys();
        let mut rng = seed_rng(0);
        let c = paillier_encrypt(&kp.public, &BigUint::from(4u32), &mut rng).unwrap();
        assert_eq!(paillier_decrypt(&kp, &c).unwrap(), BigUint::from(4u32));
    }

    #[test]
    fn tiny_key_all_plaintexts_roundtrip() {
        let kp = tiny_keys();
        let mut rng = seed_rng(1);
        for m in 0u32..35 {
            let m = BigUint::from(m);
            let c = paillier_encrypt(&kp.public, &m, &mut rng).unwrap();
            assert_eq!(paillier_decrypt(&kp, &c).unwrap(), m);
        }
    }

    #[test]
    fn tiny_key_homomorphic_addition() {
        let kp = tiny_keys();
        let mut rng = seed_rng(2);
        let c3 = paillier_encrypt(&kp.public, &BigUint::from(3u32), &mut rng).unwrap();
        let c4 = paillier_encrypt(&kp.public, &BigUint::from(4u32), &mut rng).unwrap();
        let sum = he_add(&kp.public, &c3, &c4).unwrap();
        assert_eq!(paillier_decrypt(&kp, &sum).unwrap(), BigUint::from(7u32));
    }

    #[test]
    fn he_add_with_zero_is_identity() {
        let kp = tiny_keys();
        let mut rng = seed_rng(3);
        let c0 = paillier_encrypt(&kp.public, &BigUint::from(0u32), &mut rng).unwrap();
        let c9 = paillier_encrypt(&kp.public, &BigUint::from(9u32), &mut rng).unwrap();
        let sum = he_add(&kp.public, &c0, &c9).unwrap();
        assert_eq!(paillier_decrypt(&kp, &sum).unwrap(), BigUint::from(9u32));
    }

    #[test]
    fn encryptions_are_randomized() {
        let kp = tiny_keys();
        let mut rng = seed_rng(4);
        let m = BigUint::from(11u32);
        let c1 = paillier_encrypt(&kp.public, &m, &mut rng).unwrap();
        let c2 = paillier_encrypt(&kp.public, &m, &mut rng).unwrap();
        assert_ne!(c1, c2);
        assert_eq!(paillier_decrypt(&kp, &c1).unwrap(), m);
        assert_eq!(paillier_decrypt(&kp, &c2).unwrap(), m);
    }

    #[test]
    fn boundary_plaintext_n_minus_one() {
        let kp = tiny_keys();
        let mut rng = seed_rng(5);
        let m = BigUint::from(34u32);
        let c = paillier_encrypt(&kp.public, &m, &mut rng).unwrap();
        assert_eq!(paillier_decrypt(&kp, &c).unwrap(), m);
        assert!(paillier_encrypt(&kp.public, &BigUint::from(35u32), &mut rng).is_err());
    }

    #[test]
    fn keygen_512_roundtrips_and_is_seeded() {
        let kp1 = paillier_keygen(512, &mut seed_rng(100)).unwrap();
        let kp2 = paillier_keygen(512, &mut seed_rng(100)).unwrap();
        assert_eq!(kp1.public.modulus(), kp2.public.modulus());
        let kp3 = paillier_keygen(512, &mut seed_rng(101)).unwrap();
        assert_ne!(kp1.public.modulus(), kp3.public.modulus());
        assert_eq!(kp1.public.bits(), 512);
        let mut rng = seed_rng(6);
        for i in 0..50u32 {
            let m = random_below(&mut rng, kp1.public.modulus());
            let c = paillier_encrypt(&kp1.public, &m, &mut rng).unwrap();
            assert_eq!(paillier_decrypt(&kp1, &c).unwrap(), m, "iteration {}", i);
        }
    }

    #[test]
    fn fold_of_many_ciphertexts_matches_plaintext_sum() {
        let kp = paillier_keygen(512, &mut seed_rng(200)).unwrap();
        let mut rng = seed_rng(7);
        let n = kp.public.modulus().clone();
        let mut plain_sum = BigUint::from(0u32);
        let mut cipher_fold: Option<BigUint> = None;
        for _ in 0..64 {
            let m = random_below(&mut rng, &n);
            let c = paillier_encrypt(&kp.public, &m, &mut rng).unwrap();
            plain_sum = (plain_sum + &m) % &n;
            cipher_fold = Some(match cipher_fold {
                None => c,
                Some(acc) => he_add(&kp.public, &acc, &c).unwrap(),
            });
        }
        assert_eq!(
            paillier_decrypt(&kp, &cipher_fold.unwrap()).unwrap(),
            plain_sum
        );
    }

    #[test]
    fn tampered_ciphertext_decrypts_to_garbage() {
        let kp = paillier_keygen(512, &mut seed_rng(300)).unwrap();
        let mut rng = seed_rng(8);
        let mut mismatches = 0;
        for _ in 0..20 {
            let m = random_below(&mut rng, kp.public.modulus());
            let c = paillier_encrypt(&kp.public, &m, &mut rng).unwrap();
            let tampered = (&c * BigUint::from(2u32)) % kp.public.modulus_squared();
            match paillier_decrypt(&kp, &tampered) {
                Ok(m2) if m2 != m => mismatches += 1,
                Ok(_) => {}
                Err(_) => mismatches += 1,
            }
        }
        assert!(mismatches >= 19, "tampering went unnoticed too often");
    }

    #[test]
    fn disallowed_key_size_rejected() {
        assert!(paillier_keygen(768, &mut seed_rng(0)).is_err());
    }
}
