//! Optional enrollment authority: binds a verified real-world identity to a
//! participant's public DID with a signed credential, and reveals that
//! identity only to a warranted investigation.

use std::collections::BTreeMap;
use std::sync::Arc;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

use crate::canonical;
use crate::clock::Clock;
use crate::identity::{digest, parse_did_key, sign, verify, Did, IdentityError, Signature};

/// Claim holding an expiry time in milliseconds.
pub const EXPIRES_AT_CLAIM: &str = "expires_at";

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum EnrollmentError {
    #[error("identity evidence rejected")]
    EvidenceRejected,
    #[error("`{0}` is already enrolled")]
    AlreadyEnrolled(String),
    #[error("`{0}` is not enrolled")]
    NotEnrolled(String),
    #[error("investigation requires a warrant")]
    NoWarrant,
    #[error("warrant does not verify for this subject")]
    InvalidWarrant,
    #[error(transparent)]
    Identity(#[from] IdentityError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifiableCredential {
    pub subject_did: String,
    pub claims: BTreeMap<String, String>,
    pub issuer: String,
    pub issued_at: u64,
    pub signature: Signature,
}

impl VerifiableCredential {
    pub fn signed_bytes(&self) -> Vec<u8> {
        canonical::to_vec(&(&self.subject_did, &self.claims, &self.issuer, self.issued_at))
    }

    /// Reference stored by relying parties instead of the credential.
    pub fn reference(&self) -> String {
        digest(&canonical::to_vec(self)).to_hex()
    }
}

/// Signature check plus the optional `expires_at` claim.
pub fn verify_credential(vc: &VerifiableCredential, authority_key: &[u8], now_ms: u64) -> bool {
    if vc.signature.signer != vc.issuer || parse_did_key(&vc.subject_did).is_err() {
        return false;
    }
    if let Some(expiry) = vc.claims.get(EXPIRES_AT_CLAIM) {
        match expiry.parse::<u64>() {
            Ok(t) if now_ms < t => {}
            _ => return false,
        }
    }
    verify(&vc.signed_bytes(), &vc.signature, authority_key)
}

/// Authorization for a non-repudiation investigation, issued by a party the
/// authority and portal are configured to trust.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Warrant {
    pub subject: String,
    pub purpose: String,
    pub issued_at: u64,
    pub signature: Signature,
}

impl Warrant {
    fn signed_bytes(subject: &str, purpose: &str, issued_at: u64) -> Vec<u8> {
        canonical::to_vec(&("ccn-warrant", subject, purpose, issued_at))
    }

    pub fn issue(issuer: &Did, subject: &str, purpose: &str, issued_at: u64) -> Result<Self, IdentityError> {
        let signature = sign(&Self::signed_bytes(subject, purpose, issued_at), issuer)?;
        Ok(Warrant { subject: subject.to_owned(), purpose: purpose.to_owned(), issued_at, signature })
    }

    pub fn verify_for(&self, subject: &str, issuer_key: &[u8]) -> bool {
        self.subject == subject
            && verify(&Self::signed_bytes(&self.subject, &self.purpose, self.issued_at), &self.signature, issuer_key)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdentityRecord {
    pub real_identity: String,
    pub public_did: String,
}

pub type EvidenceCheck = Box<dyn Fn(&[u8]) -> bool + Send + Sync>;

pub struct EnrollmentAuthority {
    did: Did,
    records: RwLock<BTreeMap<String, IdentityRecord>>,
    evidence_check: EvidenceCheck,
    warrant_issuer_key: Vec<u8>,
    validity_ms: Option<u64>,
    clock: Arc<dyn Clock>,
}

impl std::fmt::Debug for EnrollmentAuthority {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EnrollmentAuthority").field("did", &self.did.text()).finish_non_exhaustive()
    }
}

impl EnrollmentAuthority {
    /// Accepts any non-empty evidence blob.
    pub fn new(did: Did, warrant_issuer_key: Vec<u8>, clock: Arc<dyn Clock>) -> Self {
        Self::with_check(did, warrant_issuer_key, clock, Box::new(|e: &[u8]| !e.is_empty()))
    }

    pub fn with_check(did: Did, warrant_issuer_key: Vec<u8>, clock: Arc<dyn Clock>, evidence_check: EvidenceCheck) -> Self {
        EnrollmentAuthority {
            did,
            records: RwLock::new(BTreeMap::new()),
            evidence_check,
            warrant_issuer_key,
            validity_ms: None,
            clock,
        }
    }

    /// Credentials issued from now on carry an `expires_at` claim.
    pub fn with_validity(mut self, validity_ms: u64) -> Self {
        self.validity_ms = Some(validity_ms);
        self
    }

    pub fn did(&self) -> &Did {
        &self.did
    }

    pub fn verification_key(&self) -> Vec<u8> {
        self.did.verification_key().to_vec()
    }

    pub fn enroll(&self, evidence: &[u8], public_did: &str) -> Result<VerifiableCredential, EnrollmentError> {
        parse_did_key(public_did)?;
        if !(self.evidence_check)(evidence) {
            return Err(EnrollmentError::EvidenceRejected);
        }
        let mut records = self.records.write();
        if records.contains_key(public_did) {
            return Err(EnrollmentError::AlreadyEnrolled(public_did.to_owned()));
        }
        let now = self.clock.now_ms();
        let mut claims = BTreeMap::new();
        claims.insert("enrollment_level".to_owned(), "verified".to_owned());
        if let Some(validity) = self.validity_ms {
            claims.insert(EXPIRES_AT_CLAIM.to_owned(), (now + validity).to_string());
        }
        let mut vc = VerifiableCredential {
            subject_did: public_did.to_owned(),
            claims,
            issuer: self.did.text().to_owned(),
            issued_at: now,
            signature: Signature { bytes: vec![], signer: String::new() },
        };
        vc.signature = sign(&vc.signed_bytes(), &self.did)?;
        records.insert(
            public_did.to_owned(),
            IdentityRecord { real_identity: digest(evidence).to_hex(), public_did: public_did.to_owned() },
        );
        Ok(vc)
    }

    pub fn investigate(&self, public_did: &str, warrant: Option<&Warrant>) -> Result<String, EnrollmentError> {
        let warrant = warrant.ok_or(EnrollmentError::NoWarrant)?;
        if !warrant.verify_for(public_did, &self.warrant_issuer_key) {
            return Err(EnrollmentError::InvalidWarrant);
        }
        self.records
            .read()
            .get(public_did)
            .map(|r| r.real_identity.clone())
            .ok_or_else(|| EnrollmentError::NotEnrolled(public_did.to_owned()))
    }

    pub fn is_enrolled(&self, public_did: &str) -> bool {
        self.records.read().contains_key(public_did)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::ManualClock;
    use crate::identity::{create_did, DidKind};
    use rand::SeedableRng;

    struct Fixture {
        authority: EnrollmentAuthority,
        court: Did,
        subject: Did,
        clock: Arc<ManualClock>,
    }

    fn fixture() -> Fixture {
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(21);
        let court = create_did(DidKind::Public, &mut rng).unwrap();
        let clock = Arc::new(ManualClock::new(1_000));
        let authority = EnrollmentAuthority::new(
            create_did(DidKind::Public, &mut rng).unwrap(),
            court.verification_key().to_vec(),
            clock.clone(),
        );
        let subject = create_did(DidKind::Public, &mut rng).unwrap();
        Fixture { authority, court, subject, clock }
    }

    #[test]
    fn issued_credential_verifies_and_tamper_fails() {
        let f = fixture();
        let vc = f.authority.enroll(b"passport:123", f.subject.text()).unwrap();
        assert!(verify_credential(&vc, &f.authority.verification_key(), 2_000));
        let mut tampered = vc.clone();
        tampered.claims.insert("enrollment_level".into(), "admin".into());
        assert!(!verify_credential(&tampered, &f.authority.verification_key(), 2_000));
        assert!(!verify_credential(&vc, &f.court.verification_key(), 2_000));
    }

    #[test]
    fn enrollment_is_once_per_did() {
        let f = fixture();
        f.authority.enroll(b"e", f.subject.text()).unwrap();
        assert_eq!(
            f.authority.enroll(b"e", f.subject.text()).unwrap_err(),
            EnrollmentError::AlreadyEnrolled(f.subject.text().into())
        );
        assert_eq!(f.authority.enroll(b"", "did:key:zbad").unwrap_err().to_string().is_empty(), false);
    }

    #[test]
    fn empty_evidence_rejected() {
        let f = fixture();
        assert_eq!(f.authority.enroll(b"", f.subject.text()).unwrap_err(), EnrollmentError::EvidenceRejected);
    }

    #[test]
    fn expiry_claim() {
        let f = fixture();
        let authority = f.authority.with_validity(500);
        let vc = authority.enroll(b"e", f.subject.text()).unwrap();
        assert!(verify_credential(&vc, &authority.verification_key(), f.clock.now_ms() + 100));
        assert!(!verify_credential(&vc, &authority.verification_key(), f.clock.now_ms() + 10_000));
    }

    #[test]
    fn investigation_needs_warrant() {
        let f = fixture();
        f.authority.enroll(b"passport:123", f.subject.text()).unwrap();
        let warrant = Warrant::issue(&f.court, f.subject.text(), "consent dispute", 5).unwrap();
        assert_eq!(
            f.authority.investigate(f.subject.text(), Some(&warrant)).unwrap(),
            digest(b"passport:123").to_hex()
        );
        assert_eq!(f.authority.investigate(f.subject.text(), None), Err(EnrollmentError::NoWarrant));
        let forged = Warrant::issue(&f.subject, f.subject.text(), "x", 5).unwrap();
        assert_eq!(f.authority.investigate(f.subject.text(), Some(&forged)), Err(EnrollmentError::InvalidWarrant));
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(99);
        let stranger = create_did(DidKind::Public, &mut rng).unwrap();
        let w = Warrant::issue(&f.court, stranger.text(), "x", 5).unwrap();
        assert!(matches!(f.authority.investigate(stranger.text(), Some(&w)), Err(EnrollmentError::NotEnrolled(_))));
    }
}
