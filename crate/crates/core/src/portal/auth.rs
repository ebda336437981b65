//! DID-Auth: nonce challenges and the signed tokens that answer them.

use serde::{Deserialize, Serialize};

use crate::canonical::{self, b64};
use crate::identity::{sign, verify, Did, IdentityError, Signature};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Challenge {
    #[serde(with = "b64")]
    pub nonce: Vec<u8>,
    /// DID the challenge was issued to.
    pub subject: String,
    pub audience: String,
    pub issued_at: u64,
    pub ttl_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthToken {
    #[serde(with = "b64")]
    pub nonce: Vec<u8>,
    pub holder: String,
    pub audience: String,
    pub issued_at: u64,
    pub signature: Signature,
}

impl AuthToken {
    fn signing_bytes(nonce: &[u8], holder: &str, audience: &str, issued_at: u64) -> Vec<u8> {
        canonical::to_vec(&("ccn-did-auth", canonical::b64_encode(nonce), holder, audience, issued_at))
    }

    pub fn sign(challenge: &Challenge, holder: &Did, now: u64) -> Result<Self, IdentityError> {
        let bytes = Self::signing_bytes(&challenge.nonce, holder.text(), &challenge.audience, now);
        Ok(AuthToken {
            nonce: challenge.nonce.clone(),
            holder: holder.text().to_owned(),
            audience: challenge.audience.clone(),
            issued_at: now,
            signature: sign(&bytes, holder)?,
        })
    }

    pub fn verify(&self, holder_key: &[u8]) -> bool {
        self.signature.signer == self.holder
            && verify(
                &Self::signing_bytes(&self.nonce, &self.holder, &self.audience, self.issued_at),
                &self.signature,
                holder_key,
            )
    }
}
