//! Hybrid sealing for control messages: a fresh 32-byte session key is
//! encrypted under the recipient's 2048-bit RSA-OAEP(SHA-256) identity
//! key, and the payload under ChaCha20-Poly1305 with that session key.
//! Opening authenticates; any bit flip is rejected.
//!
//! Blob layout: 2-byte BE RSA block length | RSA block | 12-byte nonce |
//! AEAD ciphertext.

use chacha20poly1305::aead::{Aead, KeyInit};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use num_bigint::BigUint;
use rand::rngs::OsRng;
use rand::RngCore;
use rsa::traits::{PrivateKeyParts, PublicKeyParts};
use rsa::{BigUint as RsaUint, Oaep, RsaPrivateKey, RsaPublicKey};
use serde::{Deserialize, Serialize};
use sha2::Sha256;

use crate::error::{NodeError, NodeResult};

pub const IDENTITY_KEY_BITS: usize = 2048;
const SESSION_KEY_LEN: usize = 32;
const NONCE_LEN: usize = 12;

/// Serialized identity public key (hex components, lowercase).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdentityPublicJson {
    pub n: String,
    pub e: String,
}

/// Serialized identity keypair as stored on disk.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IdentityKeyJson {
    pub n: String,
    pub e: String,
    pub d: String,
    pub p: String,
    pub q: String,
}

/// A node identity: RSA keypair for the sealed control channel.
#[derive(Debug, Clone)]
pub struct IdentityKey {
    private: RsaPrivateKey,
    public: RsaPublicKey,
}

fn hex_of(n: &RsaUint) -> String {
    format!("{:x}", BigUint::from_bytes_be(&n.to_bytes_be()))
}

fn uint_of(hex: &str) -> NodeResult<RsaUint> {
    let n = BigUint::parse_bytes(hex.as_bytes(), 16)
        .ok_or_else(|| NodeError::Config(format!("invalid hex integer {:?}", hex)))?;
    Ok(RsaUint::from_bytes_be(&n.to_bytes_be()))
}

impl IdentityKey {
    /// Generates a fresh 2048-bit identity from OS entropy.
    pub fn generate() -> NodeResult<Self> {
        let mut rng = OsRng;
        let private = RsaPrivateKey::new(&mut rng, IDENTITY_KEY_BITS)
            .map_err(|e| NodeError::Crypto(format!("identity keygen: {}", e)))?;
        let public = private.to_public_key();
        Ok(IdentityKey { private, public })
    }

    pub fn public(&self) -> &RsaPublicKey {
        &self.public
    }

    pub fn public_json(&self) -> IdentityPublicJson {
        IdentityPublicJson {
            n: hex_of(self.public.n()),
            e: hex_of(self.public.e()),
        }
    }

    pub fn to_json(&self) -> IdentityKeyJson {
        let primes = self.private.primes();
        IdentityKeyJson {
            n: hex_of(self.private.n()),
            e: hex_of(self.private.e()),
            d: hex_of(self.private.d()),
            p: hex_of(&primes[0]),
            q: hex_of(&primes[1]),
        }
    }

    pub fn from_json(json: &IdentityKeyJson) -> NodeResult<Self> {
        let private = RsaPrivateKey::from_components(
            uint_of(&json.n)?,
            uint_of(&json.e)?,
            uint_of(&json.d)?,
            vec![uint_of(&json.p)?, uint_of(&json.q)?],
        )
        .map_err(|e| NodeError::Crypto(format!("identity key rebuild: {}", e)))?;
        let public = private.to_public_key();
        Ok(IdentityKey { private, public })
    }
}

pub fn public_key_from_json(json: &IdentityPublicJson) -> NodeResult<RsaPublicKey> {
    RsaPublicKey::new(uint_of(&json.n)?, uint_of(&json.e)?)
        .map_err(|e| NodeError::Crypto(format!("peer public key: {}", e)))
}

/// Seals `payload` to `recipient`.
pub fn control_seal(recipient: &RsaPublicKey, payload: &[u8]) -> NodeResult<Vec<u8>> {
    let mut rng = OsRng;
    let mut session = [0u8; SESSION_KEY_LEN];
    rng.fill_bytes(&mut session);
    let mut nonce = [0u8; NONCE_LEN];
    rng.fill_bytes(&mut nonce);
    let rsa_block = recipient
        .encrypt(&mut rng, Oaep::new::<Sha256>(), &session)
        .map_err(|e| NodeError::Crypto(format!("seal session key: {}", e)))?;
    let cipher = ChaCha20Poly1305::new(Key::from_slice(&session));
    let sealed = cipher
        .encrypt(Nonce::from_slice(&nonce), payload)
        .map_err(|_| NodeError::Crypto("seal payload".into()))?;
    let mut out = Vec::with_capacity(2 + rsa_block.len() + NONCE_LEN + sealed.len());
    out.extend_from_slice(&(rsa_block.len() as u16).to_be_bytes());
    out.extend_from_slice(&rsa_block);
    out.extend_from_slice(&nonce);
    out.extend_from_slice(&sealed);
    Ok(out)
}

/// Opens a sealed blob; fails on any tamper or wrong key.
pub fn control_open(identity: &IdentityKey, blob: &[u8]) -> NodeResult<Vec<u8>> {
    if blob.len() < 2 {
        return Err(NodeError::Crypto("sealed blob truncated".into()));
    }
    let rsa_len = u16::from_be_bytes([blob[0], blob[1]]) as usize;
    let rest = &blob[2..];
    if rest.len() < rsa_len + NONCE_LEN {
        return Err(NodeError::Crypto("sealed blob truncated".into()));
    }
    let (rsa_block, tail) = rest.split_at(rsa_len);
    let (nonce, sealed) = tail.split_at(NONCE_LEN);
    let session = identity
        .private
        .decrypt(Oaep::new::<Sha256>(), rsa_block)
        .map_err(|_| NodeError::Crypto("session key rejected".into()))?;
    if session.len() != SESSION_KEY_LEN {
        return Err(NodeError::Crypto("bad session key length".into()));
    }
    let cipher = ChaCha20Poly1305::new(Key::from_slice(&session));
    cipher
        .decrypt(Nonce::from_slice(nonce), sealed)
        .map_err(|_| NodeError::Crypto("authentication failed".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_identity() -> IdentityKey {
        IdentityKey::generate().unwrap()
    }

    #[test]
    fn roundtrip_various_sizes() {
        let id = test_identity();
        let mut rng = OsRng;
        for len in [0usize, 1, 64, 4096, 1 << 20] {
            let mut payload = vec![0u8; len];
            rng.fill_bytes(&mut payload);
            let sealed = control_seal(id.public(), &payload).unwrap();
            let opened = control_open(&id, &sealed).unwrap();
            assert_eq!(opened, payload, "len {}", len);
        }
    }

    #[test]
    fn bit_flip_rejected() {
        let id = test_identity();
        let sealed = control_seal(id.public(), b"attack at dawn").unwrap();
        for pos in [2usize, 40, sealed.len() - 1] {
            let mut tampered = sealed.clone();
            tampered[pos] ^= 0x01;
            assert!(control_open(&id, &tampered).is_err(), "flip at {}", pos);
        }
    }

    #[test]
    fn wrong_key_rejected() {
        let alice = test_identity();
        let mallory = test_identity();
        let sealed = control_seal(alice.public(), b"secret").unwrap();
        assert!(control_open(&mallory, &sealed).is_err());
    }

    #[test]
    fn key_json_roundtrip() {
        let id = test_identity();
        let rebuilt = IdentityKey::from_json(&id.to_json()).unwrap();
        let sealed = control_seal(rebuilt.public(), b"hello").unwrap();
        assert_eq!(control_open(&id, &sealed).unwrap(), b"hello");
        assert_eq!(id.public_json(), rebuilt.public_json());
    }
}
