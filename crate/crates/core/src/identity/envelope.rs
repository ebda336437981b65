use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use ed25519_dalek::Signer;
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use x25519_dalek::{PublicKey, StaticSecret};

use super::{parse_did_key, verify, Did, DidDocument, IdentityError, Signature};
use crate::canonical::{self, b64};

const KDF_LABEL: &[u8] = b"ccn/envelope/v1";

/// Sealed message addressed to one DID.
///
/// Serialized with the field order `recipient`, `epk`, `nonce`, `ct`,
/// `skid`; the proof digest is taken over exactly these bytes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Envelope {
    pub recipient: String,
    #[serde(with = "b64")]
    pub epk: Vec<u8>,
    #[serde(with = "b64")]
    pub nonce: Vec<u8>,
    #[serde(with = "b64")]
    pub ct: Vec<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skid: Option<String>,
}

impl Envelope {
    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("envelope serialization is infallible")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, IdentityError> {
        serde_json::from_slice(bytes).map_err(|e| IdentityError::MalformedEnvelope(e.to_string()))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SignedInner {
    #[serde(with = "b64")]
    msg: Vec<u8>,
    #[serde(with = "b64")]
    sig: Vec<u8>,
}

fn derive_key(shared: &[u8; 32], epk: &[u8], recipient_key: &[u8]) -> Key {
    let mut h = Sha256::new();
    h.update(KDF_LABEL);
    h.update(shared);
    h.update(epk);
    h.update(recipient_key);
    Key::from(<[u8; 32]>::from(h.finalize()))
}

fn associated_data(recipient: &str, epk: &[u8], skid: Option<&str>) -> Vec<u8> {
    canonical::to_vec(&(recipient, canonical::b64_encode(epk), skid))
}

fn sender_binding(recipient: &str, epk: &[u8], msg: &[u8]) -> Vec<u8> {
    let mut bound = Vec::with_capacity(recipient.len() + epk.len() + msg.len() + 1);
    bound.extend_from_slice(recipient.as_bytes());
    bound.push(0);
    bound.extend_from_slice(epk);
    bound.extend_from_slice(msg);
    bound
}

/// Ephemeral X25519 + ChaCha20-Poly1305. With `authenticate_sender` the
/// plaintext is wrapped together with the sender's signature over
/// (recipient, epk, plaintext) and the sender DID rides in `skid`.
pub fn seal_envelope<R: RngCore + CryptoRng + ?Sized>(
    plaintext: &[u8],
    sender: &Did,
    recipient_doc: &DidDocument,
    authenticate_sender: bool,
    rng: &mut R,
) -> Result<Envelope, IdentityError> {
    let recipient_key: [u8; 32] = recipient_doc
        .agreement_key
        .as_slice()
        .try_into()
        .map_err(|_| IdentityError::MissingAgreementKey(recipient_doc.did.clone()))?;

    let mut eph_bytes = [0u8; 32];
    rng.try_fill_bytes(&mut eph_bytes).map_err(|e| IdentityError::Entropy(e.to_string()))?;
    let eph = StaticSecret::from(eph_bytes);
    let epk = PublicKey::from(&eph).to_bytes();
    let shared = eph.diffie_hellman(&PublicKey::from(recipient_key));
    if !shared.was_contributory() {
        return Err(IdentityError::MissingAgreementKey(recipient_doc.did.clone()));
    }

    let mut nonce = [0u8; 12];
    rng.try_fill_bytes(&mut nonce).map_err(|e| IdentityError::Entropy(e.to_string()))?;

    let (inner, skid) = if authenticate_sender {
        let keys = sender.keys().ok_or_else(|| IdentityError::MissingSecret(sender.text().to_owned()))?;
        let sig = keys.signing_key().sign(&sender_binding(&recipient_doc.did, &epk, plaintext));
        let wrapped = SignedInner { msg: plaintext.to_vec(), sig: sig.to_bytes().to_vec() };
        (canonical::to_vec(&wrapped), Some(sender.text().to_owned()))
    } else {
        (plaintext.to_vec(), None)
    };

    let cipher = ChaCha20Poly1305::new(&derive_key(shared.as_bytes(), &epk, &recipient_key));
    let aad = associated_data(&recipient_doc.did, &epk, skid.as_deref());
    let ct = cipher
        .encrypt(Nonce::from_slice(&nonce), Payload { msg: &inner, aad: &aad })
        .expect("ChaCha20-Poly1305 encryption of in-memory buffers cannot fail");

    Ok(Envelope {
        recipient: recipient_doc.did.clone(),
        epk: epk.to_vec(),
        nonce: nonce.to_vec(),
        ct,
        skid,
    })
}

/// Returns the plaintext and, for sender-authenticated envelopes, the
/// verified sender DID text.
pub fn open_envelope(env: &Envelope, recipient: &Did) -> Result<(Vec<u8>, Option<String>), IdentityError> {
    if env.recipient != recipient.text() {
        return Err(IdentityError::WrongRecipient {
            expected: env.recipient.clone(),
            actual: recipient.text().to_owned(),
        });
    }
    let keys = recipient.keys().ok_or_else(|| IdentityError::MissingSecret(recipient.text().to_owned()))?;
    let epk: [u8; 32] = env.epk.as_slice().try_into().map_err(|_| IdentityError::Authentication)?;
    if env.nonce.len() != 12 {
        return Err(IdentityError::Authentication);
    }
    let shared = keys.agreement_secret().diffie_hellman(&PublicKey::from(epk));
    let cipher = ChaCha20Poly1305::new(&derive_key(shared.as_bytes(), &epk, &keys.agreement_public()));
    let aad = associated_data(&env.recipient, &epk, env.skid.as_deref());
    let inner = cipher
        .decrypt(Nonce::from_slice(&env.nonce), Payload { msg: &env.ct, aad: &aad })
        .map_err(|_| IdentityError::Authentication)?;

    match &env.skid {
        None => Ok((inner, None)),
        Some(skid) => {
            let wrapped: SignedInner =
                canonical::from_slice(&inner).map_err(|_| IdentityError::SenderAuthentication)?;
            let sender_key = parse_did_key(skid).map_err(|_| IdentityError::SenderAuthentication)?;
            let sig = Signature { bytes: wrapped.sig, signer: skid.clone() };
            if !verify(&sender_binding(&env.recipient, &epk, &wrapped.msg), &sig, &sender_key) {
                return Err(IdentityError::SenderAuthentication);
            }
            Ok((wrapped.msg, Some(skid.clone())))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::identity::{create_did, DidKind};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn pair() -> (Did, Did, ChaCha20Rng) {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let a = create_did(DidKind::Private, &mut rng).unwrap();
        let b = create_did(DidKind::Private, &mut rng).unwrap();
        (a, b, rng)
    }

    #[test]
    fn roundtrip_anonymous_and_authenticated() {
        let (a, b, mut rng) = pair();
        let env = seal_envelope(b"hello consent", &a, &b.document(), false, &mut rng).unwrap();
        assert_eq!(open_envelope(&env, &b).unwrap(), (b"hello consent".to_vec(), None));

        let env = seal_envelope(b"hello consent", &a, &b.document(), true, &mut rng).unwrap();
        let (msg, sender) = open_envelope(&env, &b).unwrap();
        assert_eq!(msg, b"hello consent");
        assert_eq!(sender.as_deref(), Some(a.text()));
    }

    #[test]
    fn any_bit_flip_fails_authentication() {
        let (a, b, mut rng) = pair();
        let env = seal_envelope(b"sixteen byte msg", &a, &b.document(), true, &mut rng).unwrap();
        for i in 0..env.ct.len() * 8 {
            let mut t = env.clone();
            t.ct[i / 8] ^= 1 << (i % 8);
            assert!(open_envelope(&t, &b).is_err());
        }
        let mut t = env.clone();
        t.nonce[0] ^= 1;
        assert_eq!(open_envelope(&t, &b), Err(IdentityError::Authentication));
        let mut t = env.clone();
        t.epk[3] ^= 0x10;
        assert!(open_envelope(&t, &b).is_err());
    }

    #[test]
    fn forged_sender_rejected() {
        let (a, b, mut rng) = pair();
        let c = create_did(DidKind::Private, &mut rng).unwrap();
        let mut env = seal_envelope(b"message", &a, &b.document(), true, &mut rng).unwrap();
        env.skid = Some(c.text().to_owned());
        assert!(open_envelope(&env, &b).is_err());
    }

    #[test]
    fn wrong_recipient_rejected() {
        let (a, b, mut rng) = pair();
        let c = create_did(DidKind::Private, &mut rng).unwrap();
        let env = seal_envelope(b"message", &a, &b.document(), false, &mut rng).unwrap();
        assert!(matches!(open_envelope(&env, &c), Err(IdentityError::WrongRecipient { .. })));
        let mut redirected = env.clone();
        redirected.recipient = c.text().to_owned();
        assert_eq!(open_envelope(&redirected, &c), Err(IdentityError::Authentication));
    }

    #[test]
    fn missing_agreement_key() {
        let (a, b, mut rng) = pair();
        let mut doc = b.document();
        doc.agreement_key.clear();
        assert!(matches!(
            seal_envelope(b"m", &a, &doc, false, &mut rng),
            Err(IdentityError::MissingAgreementKey(_))
        ));
    }

    #[test]
    fn wire_field_order_fixed() {
        let (a, b, mut rng) = pair();
        let env = seal_envelope(b"m", &a, &b.document(), true, &mut rng).unwrap();
        let text = String::from_utf8(env.to_bytes()).unwrap();
        let pos: Vec<usize> = ["\"recipient\"", "\"epk\"", "\"nonce\"", "\"ct\"", "\"skid\""]
            .iter()
            .map(|k| text.find(k).unwrap())
            .collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]), "{text}");
        assert_eq!(Envelope::from_bytes(&env.to_bytes()).unwrap(), env);
        let extra = text.replacen('{', "{\"x\":1,", 1);
        assert!(Envelope::from_bytes(extra.as_bytes()).is_err());
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(64))]
        #[test]
        fn serialization_never_contains_plaintext(plain in proptest::collection::vec(proptest::prelude::any::<u8>(), 16..200)) {
            let (a, b, mut rng) = pair();
            let env = seal_envelope(&plain, &a, &b.document(), true, &mut rng).unwrap();
            let bytes = env.to_bytes();
            for window in plain.windows(16) {
                proptest::prop_assert!(!bytes.windows(16).any(|w| w == window));
            }
            proptest::prop_assert!(!bytes.windows(plain.len()).any(|w| w == plain.as_slice()));
        }
    }
}
