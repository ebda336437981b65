//! Keys, decentralized identifiers, signatures, sealed envelopes and the
//! digest used for consent proofs.
//!
//! Suites: Ed25519 signatures, X25519 key agreement derived from the Ed25519
//! key (as `did:key` does), ChaCha20-Poly1305 for envelopes and SHA-256 for
//! digests.

mod did;
mod envelope;
mod keys;

pub use did::{create_did, parse_did_key, resolve_did, Did, DidDocument, DidKind, DidRegistry};
pub use envelope::{open_envelope, seal_envelope, Envelope};
pub use keys::KeyPair;

use std::fmt;

use ed25519_dalek::{Signer, Verifier};
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use crate::canonical::b64;

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum IdentityError {
    #[error("entropy source failed: {0}")]
    Entropy(String),
    #[error("malformed DID `{0}`")]
    MalformedDid(String),
    #[error("DID `{0}` not found")]
    NotFound(String),
    #[error("DID `{0}` already registered")]
    AlreadyRegistered(String),
    #[error("DID `{0}` carries no secret key")]
    MissingSecret(String),
    #[error("document for `{0}` has no usable key-agreement key")]
    MissingAgreementKey(String),
    #[error("envelope addressed to `{expected}`, not `{actual}`")]
    WrongRecipient { expected: String, actual: String },
    #[error("envelope authentication failed")]
    Authentication,
    #[error("sender authentication failed")]
    SenderAuthentication,
    #[error("malformed envelope: {0}")]
    MalformedEnvelope(String),
    #[error("key self-test failed: {0}")]
    SelfTest(&'static str),
}

/// 32-byte SHA-256 value. Serialized as lowercase hex.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub const ZERO: Digest = Digest([0; 32]);

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(text: &str) -> Option<Self> {
        let bytes = hex::decode(text).ok()?;
        Some(Digest(bytes.try_into().ok()?))
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", &self.to_hex()[..16])
    }
}

impl Serialize for Digest {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        Digest::from_hex(&text).ok_or_else(|| serde::de::Error::custom("expected 64 hex characters"))
    }
}

pub fn digest(input: &[u8]) -> Digest {
    Digest(Sha256::digest(input).into())
}

/// Ed25519 signature tagged with the signer's DID text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Signature {
    #[serde(with = "b64")]
    pub bytes: Vec<u8>,
    pub signer: String,
}

pub fn sign(payload: &[u8], did: &Did) -> Result<Signature, IdentityError> {
    let keys = did.keys().ok_or_else(|| IdentityError::MissingSecret(did.text().to_owned()))?;
    Ok(Signature {
        bytes: keys.signing_key().sign(payload).to_bytes().to_vec(),
        signer: did.text().to_owned(),
    })
}

/// Malformed keys or signature bytes yield `false`.
pub fn verify(payload: &[u8], sig: &Signature, verification_key: &[u8]) -> bool {
    let Ok(key_bytes) = <[u8; 32]>::try_from(verification_key) else {
        return false;
    };
    let Ok(key) = ed25519_dalek::VerifyingKey::from_bytes(&key_bytes) else {
        return false;
    };
    let Ok(sig_bytes) = <[u8; 64]>::try_from(sig.bytes.as_slice()) else {
        return false;
    };
    key.verify(payload, &ed25519_dalek::Signature::from_bytes(&sig_bytes)).is_ok()
}

/// Verify against the key self-certified by `sig.signer`.
pub fn verify_by_signer(payload: &[u8], sig: &Signature) -> bool {
    match parse_did_key(&sig.signer) {
        Ok(key) => verify(payload, sig, &key),
        Err(_) => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngCore, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn did(seed: u64) -> Did {
        create_did(DidKind::Private, &mut ChaCha20Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn sha256_empty_input_vector() {
        assert_eq!(
            digest(b"").to_hex(),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
        assert_eq!(
            digest(b"abc").to_hex(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn single_bit_flips_change_digest() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let mut input = vec![0u8; 64];
        rng.fill_bytes(&mut input);
        let base = digest(&input);
        for _ in 0..64 {
            let bit = (rng.next_u32() as usize) % (input.len() * 8);
            let mut flipped = input.clone();
            flipped[bit / 8] ^= 1 << (bit % 8);
            assert_ne!(digest(&flipped), base);
        }
    }

    #[test]
    fn digest_hex_roundtrip() {
        let d = digest(b"x");
        let json = serde_json::to_string(&d).unwrap();
        assert_eq!(serde_json::from_str::<Digest>(&json).unwrap(), d);
        assert!(serde_json::from_str::<Digest>("\"abcd\"").is_err());
    }

    // RFC 8032 section 7.1, TEST 1 and TEST 2.
    #[test]
    fn ed25519_rfc8032_vectors() {
        let cases = [
            (
                "9d61b19deffd5a60ba844af492ec2cc44449c5697b326919703bac031cae7f60",
                "d75a980182b10ab7d54bfed3c964073a0ee172f3daa62325af021a68f707511a",
                "",
                "e5564300c360ac729086e2cc806e828a84877f1eb8e5d974d873e065224901555fb8821590a33bacc61e39701cf9b46bd25bf5f0595bbe24655141438e7a100b",
            ),
            (
                "4ccd089b28ff96da9db6c346ec114e0f5b8a319f35aba624da8cf6ed4fb8a6fb",
                "3d4017c3e843895a92b70aa74d1b7ebc9c982ccf2ec4968cc0cd55f12af4660c",
                "72",
                "92a009a9f0d4cab8720e820b5f642540a2b27b5416503f8fb3762223ebdb69da085ac1e43e15996e458f3613d0f11d8c387b2eaeb4302aeeb00d291612bb0c00",
            ),
        ];
        for (secret, public, msg, sig) in cases {
            let seed: [u8; 32] = hex::decode(secret).unwrap().try_into().unwrap();
            let keys = KeyPair::from_seed(&seed);
            assert_eq!(hex::encode(keys.signing_public()), public);
            let d = Did::from_keys(DidKind::Private, keys);
            let msg = hex::decode(msg).unwrap();
            let s = sign(&msg, &d).unwrap();
            assert_eq!(hex::encode(&s.bytes), sig);
            assert!(verify(&msg, &s, &hex::decode(public).unwrap()));
        }
    }

    #[test]
    fn verify_rejects_other_message_key_and_truncation() {
        let a = did(1);
        let b = did(2);
        let s = sign(b"payload", &a).unwrap();
        assert!(verify(b"payload", &s, &a.verification_key()));
        assert!(!verify(b"payloaD", &s, &a.verification_key()));
        assert!(!verify(b"payload", &s, &b.verification_key()));
        let mut short = s.clone();
        short.bytes.truncate(63);
        assert!(!verify(b"payload", &short, &a.verification_key()));
        assert!(!verify(b"payload", &s, &[0u8; 7]));
        assert!(verify_by_signer(b"payload", &s));
    }

    #[test]
    fn sign_requires_secret() {
        let public_only = Did::from_text(DidKind::Private, did(3).text()).unwrap();
        assert!(matches!(sign(b"m", &public_only), Err(IdentityError::MissingSecret(_))));
    }

    proptest::proptest! {
        #[test]
        fn signature_roundtrip(payload in proptest::collection::vec(proptest::prelude::any::<u8>(), 0..256), other in proptest::prelude::any::<u8>()) {
            let d = did(11);
            let s = sign(&payload, &d).unwrap();
            proptest::prop_assert!(verify(&payload, &s, &d.verification_key()));
            let mut changed = payload.clone();
            changed.push(other);
            proptest::prop_assert!(!verify(&changed, &s, &d.verification_key()));
        }
    }
}
