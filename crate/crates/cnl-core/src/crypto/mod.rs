//! Paillier additively homomorphic encryption, the signed fixed-point
//! vector codec, and ciphertext-only secure summation.
//!
//! The aggregation path accepts only [`CiphertextVector`]s: a plaintext
//! embedding never reaches aggregator code at the type level. Paillier
//! itself provides no ciphertext integrity; tampering yields garbage
//! plaintext, not an error. The authenticated control channel in the node
//! service is the layer that protects message integrity.

mod aggregate;
mod codec;
mod paillier;
mod primes;

pub use aggregate::{secure_sum, CiphertextVector};
pub use codec::{FixedPointCodec, DEFAULT_MAX_ADDENDS, DEFAULT_SCALE_LOG2};
pub use paillier::{
    he_add, paillier_decrypt, paillier_encrypt, paillier_keygen, PaillierKeypair,
    PaillierPrivateKey, PaillierPublicKey, ALLOWED_KEY_BITS,
};
pub use primes::{biguint_from_hex, biguint_to_hex, is_probable_prime, random_below, random_prime};
