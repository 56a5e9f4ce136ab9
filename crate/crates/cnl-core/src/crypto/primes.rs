//! Probable-prime generation via Miller-Rabin.


use num_bigint::BigUint;
use num_integer::Integer;
use num_traits::{One, Zero};
use rand::RngCore;

use crate::error::{CoreError, CoreResult};

const MILLER_RABIN_ROUNDS: usize = 64;

/// Small primes for cheap trial division before Miller-Rabin.
const SMALL_PRIMES: [u32; 54] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89,
    97, 101, 103, 107, 109, 113, 127, 131, 137, 139, 149, 151, 157, 163, 167, 173, 179, 181, 191,
    193, 197, 199, 211, 223, 227, 229, 233, 239, 241, 251,
];

/// Uniform integer in `[0, bound)` by rejection sampling over whole-byte
/// candidates masked to the bound's bit length.
pub fn random_below(rng: &mut impl RngCore, bound: &BigUint) -> BigUint {
    assert!(!bound.is_zero(), "bound must be positive");
    let bits = bound.bits();
    let bytes = bits.div_ceil(8) as usize;
    let top_mask: u8 = if bits % 8 == 0 {
        0xff
    } else {
        (1u8 << (bits % 8)) - 1
    };
    loop {
        let mut buf = alloc::vec![0u8; bytes];
        rng.fill_bytes(&mut buf);
        buf[0] &= top_mask;
        let candidate = BigUint::from_bytes_be(&buf);
        if &candidate < bound {
            return candidate;
        }
    }
}

/// Random odd integer with exactly `bits` bits and the two top bits set
/// (so products of two such integers have full length).
fn random_prime_candidate(rng: &mut impl RngCore, bits: u64) -> BigUint {
    let bytes = bits.div_ceil(8) as usize;
    let mut buf = alloc::vec![0u8; bytes];
    rng.fill_bytes(&mut buf);
    let excess = bytes as u64 * 8 - bits;
    buf[0] &= 0xffu8 >> excess;
    let mut candidate = BigUint::from_bytes_be(&buf);
    candidate |= BigUint::one() << (bits - 1);
    candidate |= BigUint::one() << (bits - 2);
    candidate |= BigUint::one();
    candidate
}

/// Miller-Rabin with 64 random bases.
pub fn is_probable_prime(n: &BigUint, rng: &mut impl RngCore) -> bool {
    let one = BigUint::one();
    let two = &one + &one;
    if n < &two {
        return false;
    }
    for p in SMALL_PRIMES {
        let p = BigUint::from(p);
        if n == &p {
            return true;
        }
        if (n % &p).is_zero() {
            return false;
        }
    }
    // n - 1 = d * 2^s with d odd
    let n_minus_1 = n - &one;
    let s = n_minus_1.trailing_zeros().unwrap_or(0);
    let d = &n_minus_1 >> s;
    'witness: for _ in 0..MILLER_RABIN_ROUNDS {
        let bound = n - &two - &one;
        let a = random_below(rng, &bound) + &two; // a in [2, n-2]
        let mut x = a.modpow(&d, n);
        if x == one || x == n_minus_1 {
            continue;
        }
        for _ in 0..s.saturating_sub(1) {
            x = x.modpow(&two, n);
            if x == n_minus_1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// Random probable prime with exactly `bits` bits.
pub fn random_prime(rng: &mut impl RngCore, bits: u64) -> CoreResult<BigUint> {
    if bits < 8 {
        return Err(CoreError::crypto("prime size below 8 bits"));
    }
    // Candidate density ~ 2/ln(2^bits); this bound is generous.
    let max_attempts = (bits as usize) * 64;
    for _ in 0..max_attempts {
        let candidate = random_prime_candidate(rng, bits);
        if is_probable_prime(&candidate, rng) {
            return Ok(candidate);
        }
    }
    Err(CoreError::crypto("prime generation exhausted attempts"))
}

/// Hex serialization helpers shared by key and ciphertext formats:
/// lowercase, no leading zeros.
pub fn biguint_to_hex(n: &BigUint) -> alloc::string::String {
    alloc::format!("{:x}", n)
}

pub fn biguint_from_hex(s: &str) -> CoreResult<BigUint> {
    BigUint::parse_bytes(s.as_bytes(), 16)
        .ok_or_else(|| CoreError::crypto(alloc::format!("invalid hex integer: {:?}", s)))
}

pub(crate) fn lcm(a: &BigUint, b: &BigUint) -> BigUint {
    a / a.gcd(b) * b
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed_rng;

    #[test]
    fn small_primes_recognized() {
        let mut rng = seed_rng(0);
        for p in [2u32, 3, 5, 97, 251, 257, 65537] {
            assert!(is_probable_prime(&BigUint::from(p), &mut rng), "{}", p);
        }
        for c in [1u32, 4, 9, 91, 561, 65536] {
            assert!(!is_probable_prime(&BigUint::from(c), &mut rng), "{}", c);
        }
    }

    #[test]
    fn generated_primes_have_exact_bit_length() {
        let mut rng = seed_rng(1);
        for bits in [64u64, 128, 256] {
            let p = random_prime(&mut rng, bits).unwrap();
            assert_eq!(p.bits(), bits);
        }
    }

    #[test]
    fn random_below_strictly_bounded() {
        let mut rng = seed_rng(2);
        let bound = BigUint::from(1000u32);
        for _ in 0..200 {
            assert!(random_below(&mut rng, &bound) < bound);
        }
    }

    #[test]
    fn hex_roundtrip_lowercase_no_leading_zeros() {
        let n = BigUint::from(0x0abcdefu64);
        let hex = biguint_to_hex(&n);
        assert_eq!(hex, "abcdef");
        assert_eq!(biguint_from_hex(&hex).unwrap(), n);
    }
}
