use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use parking_lot::RwLock;
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};

use super::{IdentityError, KeyPair};
use crate::canonical::b64;

const DID_KEY_PREFIX: &str = "did:key:z";
/// Multicodec varint for `ed25519-pub`.
const ED25519_CODEC: [u8; 2] = [0xed, 0x01];

/// Public DIDs are registered and discoverable; private DIDs are known only
/// to their counterparties. The text encoding is the same for both.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DidKind {
    Public,
    Private,
}

#[derive(Clone)]
pub struct Did {
    kind: DidKind,
    text: String,
    keys: Option<Arc<KeyPair>>,
}

impl Did {
    pub fn from_keys(kind: DidKind, keys: KeyPair) -> Self {
        let text = encode_did_key(&keys.signing_public());
        Did { kind, text, keys: Some(Arc::new(keys)) }
    }

    /// A key-less handle for a counterparty's DID.
    pub fn from_text(kind: DidKind, text: &str) -> Result<Self, IdentityError> {
        parse_did_key(text)?;
        Ok(Did { kind, text: text.to_owned(), keys: None })
    }

    pub fn kind(&self) -> DidKind {
        self.kind
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn keys(&self) -> Option<&KeyPair> {
        self.keys.as_deref()
    }

    pub fn verification_key(&self) -> [u8; 32] {
        parse_did_key(&self.text).expect("DID text validated at construction")
    }

    pub fn agreement_key(&self) -> [u8; 32] {
        agreement_from_verification(&self.verification_key()).expect("validated key")
    }

    /// Self-certified document with no service endpoint.
    pub fn document(&self) -> DidDocument {
        DidDocument::synthesize(&self.text).expect("validated DID text")
    }
}

impl PartialEq for Did {
    fn eq(&self, other: &Self) -> bool {
        self.text == other.text
    }
}

impl Eq for Did {}

impl std::hash::Hash for Did {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.text.hash(state)
    }
}

impl fmt::Debug for Did {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Did({:?}, {})", self.kind, self.text)
    }
}

/// Generate a fresh identifier. The new key pair passes its self-test
/// before it is returned. Nothing is registered.
pub fn create_did<R: RngCore + CryptoRng + ?Sized>(kind: DidKind, rng: &mut R) -> Result<Did, IdentityError> {
    let keys = KeyPair::generate(rng)?;
    keys.self_test()?;
    Ok(Did::from_keys(kind, keys))
}

fn encode_did_key(public: &[u8; 32]) -> String {
    let mut raw = Vec::with_capacity(34);
    raw.extend_from_slice(&ED25519_CODEC);
    raw.extend_from_slice(public);
    format!("{DID_KEY_PREFIX}{}", bs58::encode(raw).into_string())
}

/// Decode the Ed25519 verification key carried by a `did:key` text.
pub fn parse_did_key(text: &str) -> Result<[u8; 32], IdentityError> {
    let malformed = || IdentityError::MalformedDid(text.to_owned());
    let encoded = text.strip_prefix(DID_KEY_PREFIX).ok_or_else(malformed)?;
    let raw = bs58::decode(encoded).into_vec().map_err(|_| malformed())?;
    if raw.len() != 34 || raw[..2] != ED25519_CODEC {
        return Err(malformed());
    }
    let key: [u8; 32] = raw[2..].try_into().expect("length checked");
    ed25519_dalek::VerifyingKey::from_bytes(&key).map_err(|_| malformed())?;
    Ok(key)
}

fn agreement_from_verification(key: &[u8; 32]) -> Option<[u8; 32]> {
    let vk = ed25519_dalek::VerifyingKey::from_bytes(key).ok()?;
    Some(vk.to_montgomery().to_bytes())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DidDocument {
    pub did: String,
    #[serde(with = "b64")]
    pub verification_key: Vec<u8>,
    #[serde(with = "b64")]
    pub agreement_key: Vec<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub service_endpoint: Option<String>,
}

impl DidDocument {
    pub fn synthesize(did_text: &str) -> Result<Self, IdentityError> {
        let verification_key = parse_did_key(did_text)?;
        let agreement_key = agreement_from_verification(&verification_key)
            .ok_or_else(|| IdentityError::MalformedDid(did_text.to_owned()))?;
        Ok(DidDocument {
            did: did_text.to_owned(),
            verification_key: verification_key.to_vec(),
            agreement_key: agreement_key.to_vec(),
            service_endpoint: None,
        })
    }
}

/// Discovery registry for public DIDs.
#[derive(Debug, Default)]
pub struct DidRegistry {
    docs: RwLock<HashMap<String, DidDocument>>,
}

impl DidRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&self, did: &Did) -> Result<(), IdentityError> {
        let mut docs = self.docs.write();
        if docs.contains_key(did.text()) {
            return Err(IdentityError::AlreadyRegistered(did.text().to_owned()));
        }
        docs.insert(did.text().to_owned(), did.document());
        Ok(())
    }

    pub fn set_endpoint(&self, did_text: &str, endpoint: &str) -> Result<(), IdentityError> {
        let mut docs = self.docs.write();
        let doc = docs.get_mut(did_text).ok_or_else(|| IdentityError::NotFound(did_text.to_owned()))?;
        doc.service_endpoint = Some(endpoint.to_owned());
        Ok(())
    }

    pub fn contains(&self, did_text: &str) -> bool {
        self.docs.read().contains_key(did_text)
    }

    pub fn len(&self) -> usize {
        self.docs.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn resolve_public(&self, did_text: &str) -> Result<DidDocument, IdentityError> {
        self.docs
            .read()
            .get(did_text)
            .cloned()
            .ok_or_else(|| IdentityError::NotFound(did_text.to_owned()))
    }
}

/// Public DIDs come from the registry; private DIDs are synthesized from
/// their self-certifying text.
pub fn resolve_did(did_text: &str, kind: DidKind, registry: &DidRegistry) -> Result<DidDocument, IdentityError> {
    match kind {
        DidKind::Public => registry.resolve_public(did_text),
        DidKind::Private => DidDocument::synthesize(did_text),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn fresh_entropy_distinct_seed_reproducible() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let a = create_did(DidKind::Private, &mut rng).unwrap();
        let b = create_did(DidKind::Private, &mut rng).unwrap();
        assert_ne!(a.text(), b.text());
        let again = create_did(DidKind::Private, &mut ChaCha20Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a.text(), again.text());
        assert_eq!(a, again);
    }

    #[test]
    fn ed25519_did_key_shape() {
        let d = create_did(DidKind::Public, &mut ChaCha20Rng::seed_from_u64(2)).unwrap();
        // Every ed25519 did:key begins with z6Mk.
        assert!(d.text().starts_with("did:key:z6Mk"), "{}", d.text());
        assert_eq!(parse_did_key(d.text()).unwrap(), d.keys().unwrap().signing_public());
    }

    // u = (1 + y) / (1 - y) mod 2^255 - 19 for the RFC 8032 TEST 1 public
    // key, computed independently with big-integer arithmetic.
    #[test]
    fn x25519_derivation_matches_birational_map() {
        let public: [u8; 32] = hex::decode("d75a980182b10ab7d54bfed3c964073a0ee172f3daa62325af021a68f707511a")
            .unwrap()
            .try_into()
            .unwrap();
        let did = encode_did_key(&public);
        let doc = DidDocument::synthesize(&did).unwrap();
        assert_eq!(
            hex::encode(&doc.agreement_key),
            "d85e07ec22b0ad881537c2f44d662d1a143cf830c57aca4305d85c7a90f6b62e"
        );
    }

    #[test]
    fn agreement_key_matches_secret_half() {
        let d = create_did(DidKind::Private, &mut ChaCha20Rng::seed_from_u64(3)).unwrap();
        assert_eq!(d.agreement_key(), d.keys().unwrap().agreement_public());
    }

    #[test]
    fn malformed_texts_rejected() {
        for bad in ["", "did:web:example.com", "did:key:z", "did:key:zzzz", "did:key:6Mk"] {
            assert!(parse_did_key(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn resolution() {
        let registry = DidRegistry::new();
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let org = create_did(DidKind::Public, &mut rng).unwrap();
        registry.register(&org).unwrap();
        registry.set_endpoint(org.text(), "mediator://inbox/abc").unwrap();
        let doc = resolve_did(org.text(), DidKind::Public, &registry).unwrap();
        assert_eq!(doc.service_endpoint.as_deref(), Some("mediator://inbox/abc"));
        assert_eq!(doc.verification_key, org.verification_key().to_vec());

        let private = create_did(DidKind::Private, &mut rng).unwrap();
        let doc = resolve_did(private.text(), DidKind::Private, &registry).unwrap();
        assert!(doc.service_endpoint.is_none());
        assert_eq!(doc.verification_key, private.verification_key().to_vec());

        let stranger = create_did(DidKind::Public, &mut rng).unwrap();
        assert!(matches!(
            resolve_did(stranger.text(), DidKind::Public, &registry),
            Err(IdentityError::NotFound(_))
        ));
        assert!(matches!(registry.register(&org), Err(IdentityError::AlreadyRegistered(_))));
    }

    proptest::proptest! {
        #[test]
        fn self_certification(seed in proptest::prelude::any::<[u8; 32]>()) {
            let d = Did::from_keys(DidKind::Private, KeyPair::from_seed(&seed));
            proptest::prop_assert_eq!(parse_did_key(d.text()).unwrap(), d.keys().unwrap().signing_public());
            let doc = DidDocument::synthesize(d.text()).unwrap();
            proptest::prop_assert_eq!(doc.agreement_key, d.keys().unwrap().agreement_public().to_vec());
        }
    }
}
