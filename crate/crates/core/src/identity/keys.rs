use std::fmt;

use ed25519_dalek::{Signer, SigningKey, Verifier};
use rand::CryptoRng;
use rand::RngCore;
use x25519_dalek::{PublicKey, StaticSecret};

use super::IdentityError;

/// Signing and key-agreement key material for one identifier.
///
/// The X25519 secret is the clamped Ed25519 secret scalar, so both public
/// halves follow from the 32-byte seed and the agreement key can be
/// recomputed from the signing public key alone.
#[derive(Clone)]
pub struct KeyPair {
    signing: SigningKey,
    agreement: StaticSecret,
}

// Fixed peer used for the key-agreement self-test.
const PROBE_SECRET: [u8; 32] = [0x5a; 32];

impl KeyPair {
    pub fn generate<R: RngCore + CryptoRng + ?Sized>(rng: &mut R) -> Result<Self, IdentityError> {
        let mut seed = [0u8; 32];
        rng.try_fill_bytes(&mut seed).map_err(|e| IdentityError::Entropy(e.to_string()))?;
        Ok(Self::from_seed(&seed))
    }

    pub fn from_seed(seed: &[u8; 32]) -> Self {
        let signing = SigningKey::from_bytes(seed);
        let agreement = StaticSecret::from(signing.to_scalar_bytes());
        KeyPair { signing, agreement }
    }

    pub fn seed(&self) -> [u8; 32] {
        self.signing.to_bytes()
    }

    pub fn signing_public(&self) -> [u8; 32] {
        self.signing.verifying_key().to_bytes()
    }

    pub fn agreement_public(&self) -> [u8; 32] {
        PublicKey::from(&self.agreement).to_bytes()
    }

    pub(crate) fn signing_key(&self) -> &SigningKey {
        &self.signing
    }

    pub(crate) fn agreement_secret(&self) -> &StaticSecret {
        &self.agreement
    }

    /// Every secret byte string held by this pair: the seed and the
    /// agreement scalar. Used by leak scans.
    pub fn secret_material(&self) -> Vec<[u8; 32]> {
        vec![self.seed(), self.agreement.to_bytes()]
    }

    /// Pairwise-consistency test run on freshly generated keys: a probe
    /// signature must verify, the agreement key must match the birational
    /// image of the signing key, and a probe key agreement must agree from
    /// both sides.
    pub fn self_test(&self) -> Result<(), IdentityError> {
        let probe = b"ccn/key-self-test";
        let sig = self.signing.sign(probe);
        self.signing
            .verifying_key()
            .verify(probe, &sig)
            .map_err(|_| IdentityError::SelfTest("signature"))?;

        let derived = self.signing.verifying_key().to_montgomery().to_bytes();
        if derived != self.agreement_public() {
            return Err(IdentityError::SelfTest("agreement key derivation"));
        }

        let probe_secret = StaticSecret::from(PROBE_SECRET);
        let ours = self.agreement.diffie_hellman(&PublicKey::from(&probe_secret));
        let theirs = probe_secret.diffie_hellman(&PublicKey::from(self.agreement_public()));
        if ours.as_bytes() != theirs.as_bytes() || !ours.was_contributory() {
            return Err(IdentityError::SelfTest("key agreement"));
        }
        Ok(())
    }
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair")
            .field("signing_public", &hex::encode(self.signing_public()))
            .finish_non_exhaustive()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn public_halves_follow_from_seed() {
        let a = KeyPair::generate(&mut rand_chacha::ChaCha20Rng::seed_from_u64(9)).unwrap();
        let b = KeyPair::from_seed(&a.seed());
        assert_eq!(a.signing_public(), b.signing_public());
        assert_eq!(a.agreement_public(), b.agreement_public());
        a.self_test().unwrap();
    }

    #[test]
    fn debug_does_not_print_secrets() {
        let k = KeyPair::from_seed(&[3; 32]);
        let text = format!("{k:?}");
        assert!(!text.contains(&hex::encode(k.seed())));
    }

    struct Broken;
    impl RngCore for Broken {
        fn next_u32(&mut self) -> u32 {
            0
        }
        fn next_u64(&mut self) -> u64 {
            0
        }
        fn fill_bytes(&mut self, _: &mut [u8]) {}
        fn try_fill_bytes(&mut self, _: &mut [u8]) -> Result<(), rand::Error> {
            Err(rand::Error::new(std::io::Error::other("no entropy")))
        }
    }
    impl CryptoRng for Broken {}

    #[test]
    fn entropy_failure_surfaces() {
        assert!(matches!(KeyPair::generate(&mut Broken), Err(IdentityError::Entropy(_))));
    }
}
