//! Participant portal.
//!
//! Participants log in with DID-Auth on their public DID. The portal then
//! publishes consent proofs to the ledger under its own ledger identity,
//! so the ledger never sees a participant identifier, and keeps the only
//! link between a public DID and its proofs in a per-participant match
//! entry. Forgetting a consent removes that link; with the default
//! configuration the consent is revoked on the ledger first.

mod auth;
mod store;

pub use auth::{AuthToken, Challenge};
pub use store::DocumentStore;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::PathBuf;
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::canonical;
use crate::clock::Clock;
use crate::enrollment::{verify_credential, VerifiableCredential, Warrant};
use crate::identity::{parse_did_key, Did, Digest};
use crate::ledger::{ConsentState, LedgerClient, LedgerError, QueryResult, TxRef};
use crate::wallet::{Catalog, CatalogEntry};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum PortalError {
    #[error("unknown challenge")]
    UnknownChallenge,
    #[error("challenge expired")]
    ChallengeExpired,
    #[error("challenge already used")]
    ChallengeReplayed,
    #[error("DID-Auth signature does not verify")]
    BadSignature,
    #[error("registration requires an enrollment credential")]
    EnrollmentRequired,
    #[error("enrollment credential does not verify for this DID")]
    InvalidCredential,
    #[error("`{0}` is already registered")]
    AlreadyRegistered(String),
    #[error("DID is not registered")]
    NotRegistered,
    #[error("invalid or expired session")]
    InvalidSession,
    #[error("not authorized")]
    Unauthorized,
    #[error("unknown consent transaction")]
    UnknownConsent,
    #[error("terms transaction does not match the project")]
    UnknownTerms,
    #[error("warrant does not verify")]
    InvalidWarrant,
    #[error("no participant holds that proof")]
    NotFound,
    #[error("malformed request: {0}")]
    Schema(String),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error("store: {0}")]
    Store(String),
}

impl PortalError {
    pub fn kind(&self) -> &'static str {
        match self {
            PortalError::UnknownChallenge => "unknown_challenge",
            PortalError::ChallengeExpired => "challenge_expired",
            PortalError::ChallengeReplayed => "challenge_replayed",
            PortalError::BadSignature => "bad_signature",
            PortalError::EnrollmentRequired => "enrollment_required",
            PortalError::InvalidCredential => "invalid_credential",
            PortalError::AlreadyRegistered(_) => "already_registered",
            PortalError::NotRegistered => "not_registered",
            PortalError::InvalidSession => "invalid_session",
            PortalError::Unauthorized => "unauthorized",
            PortalError::UnknownConsent => "unknown_consent",
            PortalError::UnknownTerms => "unknown_terms",
            PortalError::InvalidWarrant => "invalid_warrant",
            PortalError::NotFound => "not_found",
            PortalError::Schema(_) => "schema",
            PortalError::Ledger(e) => e.kind(),
            PortalError::Store(_) => "store",
        }
    }
}

impl From<std::io::Error> for PortalError {
    fn from(e: std::io::Error) -> Self {
        PortalError::Store(e.to_string())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PortalConfig {
    pub challenge_ttl_ms: u64,
    pub session_ttl_ms: u64,
    pub enrollment_required: bool,
    /// Revoke on the ledger before deleting the match-table link.
    pub forget_revokes_first: bool,
    pub store_dir: Option<PathBuf>,
    #[serde(skip)]
    pub enrollment_authority_key: Option<Vec<u8>>,
    #[serde(skip)]
    pub warrant_issuer_key: Option<Vec<u8>>,
}

impl Default for PortalConfig {
    fn default() -> Self {
        PortalConfig {
            challenge_ttl_ms: 120_000,
            session_ttl_ms: 3_600_000,
            enrollment_required: false,
            forget_revokes_first: true,
            store_dir: None,
            enrollment_authority_key: None,
            warrant_issuer_key: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfileRole {
    Participant,
    Organization,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Profile {
    pub public_did: String,
    pub role: ProfileRole,
    /// Reference to the enrollment credential, never the credential.
    pub enrollment_vc: Option<String>,
    pub registered_at: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub token: String,
    pub public_did: String,
    pub role: ProfileRole,
    pub expires_at: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryItem {
    pub proof: Digest,
    pub consent_tx: TxRef,
    pub status: ConsentState,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchEntry {
    pub public_did: String,
    pub items: Vec<HistoryItem>,
}

/// Body of a proxied publication. Unknown fields are rejected, so a
/// request cannot carry anything beyond the session and the proof.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PublishRequest {
    pub session: String,
    pub proof: Digest,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectFilter {
    pub org_did: Option<String>,
    pub text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "scope", rename_all = "lowercase")]
pub enum ForgetScope {
    One { consent_tx: TxRef },
    All,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForgetReceipt {
    pub forgotten: usize,
    pub revoked: usize,
}

/// One line of the portal's request log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestLogEntry {
    pub at: u64,
    pub endpoint: String,
    pub public_did: String,
    pub proof: Option<Digest>,
}

#[derive(Debug)]
struct PendingChallenge {
    challenge: Challenge,
    consumed: bool,
}

pub struct Portal {
    did: Did,
    config: PortalConfig,
    ledger: LedgerClient,
    clock: Arc<dyn Clock>,
    rng: Mutex<ChaCha20Rng>,
    challenges: Mutex<HashMap<Vec<u8>, PendingChallenge>>,
    sessions: RwLock<HashMap<String, Session>>,
    profiles: RwLock<BTreeMap<String, Profile>>,
    matches: RwLock<HashMap<String, Arc<Mutex<MatchEntry>>>>,
    catalog: RwLock<BTreeMap<String, CatalogEntry>>,
    request_log: Mutex<Vec<RequestLogEntry>>,
    store: Mutex<DocumentStore>,
}

impl std::fmt::Debug for Portal {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Portal").field("did", &self.did.text()).finish_non_exhaustive()
    }
}

fn profile_key(did: &str) -> String {
    format!("profile/{did}")
}

fn match_key(did: &str) -> String {
    format!("match/{did}")
}

fn project_key(id: &str) -> String {
    format!("project/{id}")
}

fn decode<T: serde::de::DeserializeOwned>(v: &serde_json::Value) -> Result<T, PortalError> {
    serde_json::from_value(v.clone()).map_err(|e| PortalError::Store(e.to_string()))
}

impl Portal {
    /// `ledger` must be admitted with the portal role. With a store
    /// directory configured, profiles, match entries and the catalog are
    /// reloaded from it.
    pub fn new(did: Did, config: PortalConfig, ledger: LedgerClient, clock: Arc<dyn Clock>, seed: u64) -> Result<Self, PortalError> {
        let store = match &config.store_dir {
            Some(dir) => DocumentStore::open(dir)?,
            None => DocumentStore::in_memory(),
        };
        let mut profiles = BTreeMap::new();
        let mut matches = HashMap::new();
        let mut catalog = BTreeMap::new();
        for (_, v) in store.with_prefix("profile/") {
            let p: Profile = decode(v)?;
            profiles.insert(p.public_did.clone(), p);
        }
        for (_, v) in store.with_prefix("match/") {
            let m: MatchEntry = decode(v)?;
            matches.insert(m.public_did.clone(), Arc::new(Mutex::new(m)));
        }
        for (_, v) in store.with_prefix("project/") {
            let e: CatalogEntry = decode(v)?;
            catalog.insert(e.project_id.clone(), e);
        }
        Ok(Portal {
            did,
            config,
            ledger,
            clock,
            rng: Mutex::new(ChaCha20Rng::seed_from_u64(seed)),
            challenges: Mutex::new(HashMap::new()),
            sessions: RwLock::new(HashMap::new()),
            profiles: RwLock::new(profiles),
            matches: RwLock::new(matches),
            catalog: RwLock::new(catalog),
            request_log: Mutex::new(Vec::new()),
            store: Mutex::new(store),
        })
    }

    pub fn did(&self) -> &Did {
        &self.did
    }

    pub fn config(&self) -> &PortalConfig {
        &self.config
    }

    // DID-Auth and sessions.

    /// Issue a single-use challenge for `subject`; used for registration
    /// and login alike.
    pub fn challenge(&self, subject: &str) -> Challenge {
        let mut nonce = vec![0u8; 32];
        self.rng.lock().fill_bytes(&mut nonce);
        let now = self.clock.now_ms();
        let challenge = Challenge {
            nonce: nonce.clone(),
            subject: subject.to_owned(),
            audience: self.did.text().to_owned(),
            issued_at: now,
            ttl_ms: self.config.challenge_ttl_ms,
        };
        let mut pending = self.challenges.lock();
        let horizon = 2 * self.config.challenge_ttl_ms;
        if pending.len() >= 1024 {
            pending.retain(|_, p| p.challenge.issued_at + horizon > now);
        }
        pending.insert(nonce, PendingChallenge { challenge: challenge.clone(), consumed: false });
        challenge
    }

    /// Consume the challenge a token answers. Tokens with a bad signature
    /// leave the challenge usable; expiry consumes it.
    fn consume(&self, token: &AuthToken) -> Result<(), PortalError> {
        let now = self.clock.now_ms();
        let mut pending = self.challenges.lock();
        let entry = pending.get_mut(&token.nonce).ok_or(PortalError::UnknownChallenge)?;
        if entry.consumed {
            return Err(PortalError::ChallengeReplayed);
        }
        let ch = &entry.challenge;
        if ch.subject != token.holder || token.audience != ch.audience {
            return Err(PortalError::BadSignature);
        }
        let key = parse_did_key(&token.holder).map_err(|_| PortalError::BadSignature)?;
        if !token.verify(&key) {
            return Err(PortalError::BadSignature);
        }
        entry.consumed = true;
        if now > ch.issued_at + ch.ttl_ms {
            return Err(PortalError::ChallengeExpired);
        }
        Ok(())
    }

    fn open_session(&self, profile: &Profile) -> Session {
        let mut token = [0u8; 32];
        self.rng.lock().fill_bytes(&mut token);
        let session = Session {
            token: hex::encode(token),
            public_did: profile.public_did.clone(),
            role: profile.role,
            expires_at: self.clock.now_ms() + self.config.session_ttl_ms,
        };
        self.sessions.write().insert(session.token.clone(), session.clone());
        session
    }

    pub fn register(&self, token: &AuthToken, credential: Option<&VerifiableCredential>, role: ProfileRole) -> Result<Session, PortalError> {
        self.consume(token)?;
        let now = self.clock.now_ms();
        let enrollment_vc = match (role, self.config.enrollment_required) {
            (ProfileRole::Participant, true) => {
                let vc = credential.ok_or(PortalError::EnrollmentRequired)?;
                let key = self.config.enrollment_authority_key.as_deref().ok_or(PortalError::InvalidCredential)?;
                if vc.subject_did != token.holder || !verify_credential(vc, key, now) {
                    return Err(PortalError::InvalidCredential);
                }
                Some(vc.reference())
            }
            _ => None,
        };
        let mut profiles = self.profiles.write();
        if profiles.contains_key(&token.holder) {
            return Err(PortalError::AlreadyRegistered(token.holder.clone()));
        }
        let profile = Profile { public_did: token.holder.clone(), role, enrollment_vc, registered_at: now };
        self.store.lock().put(&profile_key(&profile.public_did), serde_json::to_value(&profile).expect("profile serializes"))?;
        profiles.insert(profile.public_did.clone(), profile.clone());
        drop(profiles);
        Ok(self.open_session(&profile))
    }

    /// Log in with a token answering a fresh challenge.
    pub fn authenticate(&self, token: &AuthToken) -> Result<Session, PortalError> {
        self.consume(token)?;
        let profile = self.profiles.read().get(&token.holder).cloned().ok_or(PortalError::NotRegistered)?;
        Ok(self.open_session(&profile))
    }

    pub fn session(&self, token: &str) -> Result<Session, PortalError> {
        let session = self.sessions.read().get(token).cloned().ok_or(PortalError::InvalidSession)?;
        if self.clock.now_ms() > session.expires_at {
            self.sessions.write().remove(token);
            return Err(PortalError::InvalidSession);
        }
        Ok(session)
    }

    fn participant(&self, token: &str) -> Result<Session, PortalError> {
        let session = self.session(token)?;
        if session.role != ProfileRole::Participant {
            return Err(PortalError::Unauthorized);
        }
        Ok(session)
    }

    pub fn profile(&self, public_did: &str) -> Option<Profile> {
        self.profiles.read().get(public_did).cloned()
    }

    fn log(&self, endpoint: &str, public_did: &str, proof: Option<Digest>) {
        self.request_log.lock().push(RequestLogEntry {
            at: self.clock.now_ms(),
            endpoint: endpoint.to_owned(),
            public_did: public_did.to_owned(),
            proof,
        });
    }

    // Catalog.

    /// Announce a project whose terms are already on the ledger. Only the
    /// owning organization may publish or replace an entry.
    pub fn publish_project(&self, session: &str, entry: CatalogEntry) -> Result<(), PortalError> {
        let session = self.session(session)?;
        if session.role != ProfileRole::Organization || entry.org_did != session.public_did {
            return Err(PortalError::Unauthorized);
        }
        match self.ledger.query_tx(&entry.terms_tx) {
            Ok(QueryResult::Terms(t)) if t.org_did == entry.org_did && t.project_id == entry.project_id => {}
            _ => return Err(PortalError::UnknownTerms),
        }
        let mut catalog = self.catalog.write();
        if catalog.get(&entry.project_id).is_some_and(|e| e.org_did != entry.org_did) {
            return Err(PortalError::Unauthorized);
        }
        self.store.lock().put(&project_key(&entry.project_id), serde_json::to_value(&entry).expect("entry serializes"))?;
        catalog.insert(entry.project_id.clone(), entry);
        Ok(())
    }

    pub fn list_projects(&self, session: &str, filter: &ProjectFilter) -> Result<Catalog, PortalError> {
        let session = self.session(session)?;
        self.log("projects", &session.public_did, None);
        let text = filter.text.as_ref().map(|t| t.to_lowercase());
        let entries = self
            .catalog
            .read()
            .values()
            .filter(|e| filter.org_did.as_ref().is_none_or(|o| &e.org_did == o))
            .filter(|e| {
                text.as_ref()
                    .is_none_or(|t| e.title.to_lowercase().contains(t) || e.project_id.to_lowercase().contains(t))
            })
            .cloned()
            .collect();
        Ok(Catalog { entries })
    }

    // Consent operations, serialized per participant.

    fn entry_for(&self, public_did: &str) -> Arc<Mutex<MatchEntry>> {
        if let Some(e) = self.matches.read().get(public_did) {
            return e.clone();
        }
        self.matches
            .write()
            .entry(public_did.to_owned())
            .or_insert_with(|| Arc::new(Mutex::new(MatchEntry { public_did: public_did.to_owned(), items: vec![] })))
            .clone()
    }

    fn existing_entry(&self, public_did: &str) -> Option<Arc<Mutex<MatchEntry>>> {
        self.matches.read().get(public_did).cloned()
    }

    fn persist_entry(&self, entry: &MatchEntry) -> Result<(), PortalError> {
        let mut store = self.store.lock();
        if entry.items.is_empty() {
            store.delete(&match_key(&entry.public_did))?;
        } else {
            store.put(&match_key(&entry.public_did), serde_json::to_value(entry).expect("entry serializes"))?;
        }
        Ok(())
    }

    /// Publish `proof` under the portal's ledger identity and record the
    /// link to the caller's public DID.
    pub fn proxy_publish(&self, request: &PublishRequest) -> Result<TxRef, PortalError> {
        let session = self.participant(&request.session)?;
        self.log("publish", &session.public_did, Some(request.proof));
        let entry = self.entry_for(&session.public_did);
        let mut entry = entry.lock();
        let tx = self.ledger.publish_consent_proof(request.proof)?;
        entry.items.push(HistoryItem { proof: request.proof, consent_tx: tx.clone(), status: ConsentState::Valid });
        self.persist_entry(&entry)?;
        Ok(tx)
    }

    /// Wire form of [`Portal::proxy_publish`]; anything other than exactly
    /// a session and a proof is refused.
    pub fn proxy_publish_json(&self, body: &[u8]) -> Result<TxRef, PortalError> {
        let request: PublishRequest = serde_json::from_slice(body).map_err(|e| PortalError::Schema(e.to_string()))?;
        self.proxy_publish(&request)
    }

    /// The caller's consents with statuses refreshed from the ledger.
    pub fn consent_history(&self, session: &str) -> Result<Vec<HistoryItem>, PortalError> {
        let session = self.participant(session)?;
        self.log("history", &session.public_did, None);
        let Some(entry) = self.existing_entry(&session.public_did) else { return Ok(vec![]) };
        let mut entry = entry.lock();
        let mut changed = false;
        for item in entry.items.iter_mut() {
            if let Ok(record) = self.ledger.query_consent_proof(&item.proof) {
                if record.state != item.status {
                    item.status = record.state;
                    changed = true;
                }
            }
        }
        if changed {
            self.persist_entry(&entry)?;
        }
        Ok(entry.items.clone())
    }

    /// Revoke one of the caller's consents. Consents that are not the
    /// caller's, and ones that do not exist, get the same error.
    pub fn request_revoke(&self, session: &str, consent_tx: &TxRef) -> Result<TxRef, PortalError> {
        let session = self.participant(session)?;
        let entry = self.existing_entry(&session.public_did).ok_or(PortalError::Unauthorized)?;
        let mut entry = entry.lock();
        let idx = entry.items.iter().position(|i| &i.consent_tx == consent_tx).ok_or(PortalError::Unauthorized)?;
        let proof = entry.items[idx].proof;
        self.log("revoke", &session.public_did, Some(proof));
        match self.ledger.revoke_consent(proof) {
            Ok(tx) => {
                entry.items[idx].status = ConsentState::Revoked;
                self.persist_entry(&entry)?;
                Ok(tx)
            }
            Err(e @ LedgerError::AlreadyRevoked(_)) => {
                entry.items[idx].status = ConsentState::Revoked;
                self.persist_entry(&entry)?;
                Err(e.into())
            }
            Err(e) => Err(e.into()),
        }
    }

    /// Replace one of the caller's consents with a new proof in a single
    /// ledger transaction.
    pub fn request_update(&self, session: &str, old_consent_tx: &TxRef, new_proof: Digest) -> Result<TxRef, PortalError> {
        let session = self.participant(session)?;
        let entry = self.existing_entry(&session.public_did).ok_or(PortalError::Unauthorized)?;
        let mut entry = entry.lock();
        let idx = entry.items.iter().position(|i| &i.consent_tx == old_consent_tx).ok_or(PortalError::Unauthorized)?;
        let old = entry.items[idx].proof;
        self.log("update", &session.public_did, Some(new_proof));
        let (tx, _) = self.ledger.update_consent(old, new_proof)?;
        entry.items[idx].status = ConsentState::Revoked;
        entry.items.push(HistoryItem { proof: new_proof, consent_tx: tx.clone(), status: ConsentState::Valid });
        self.persist_entry(&entry)?;
        Ok(tx)
    }

    /// Delete the link between the caller and the selected consents, and
    /// scrub them from the request log. If revocation is configured to
    /// come first and fails, nothing is deleted.
    pub fn forget_me(&self, session: &str, scope: &ForgetScope) -> Result<ForgetReceipt, PortalError> {
        let session = self.participant(session)?;
        let entry = match (self.existing_entry(&session.public_did), scope) {
            (Some(e), _) => e,
            (None, ForgetScope::All) => return Ok(ForgetReceipt { forgotten: 0, revoked: 0 }),
            (None, ForgetScope::One { .. }) => return Err(PortalError::UnknownConsent),
        };
        let mut entry = entry.lock();
        let targets: Vec<usize> = match scope {
            ForgetScope::All => (0..entry.items.len()).collect(),
            ForgetScope::One { consent_tx } => {
                vec![entry.items.iter().position(|i| &i.consent_tx == consent_tx).ok_or(PortalError::UnknownConsent)?]
            }
        };
        let mut revoked = 0;
        if self.config.forget_revokes_first {
            for &i in &targets {
                if entry.items[i].status != ConsentState::Valid {
                    continue;
                }
                match self.ledger.revoke_consent(entry.items[i].proof) {
                    Ok(_) => revoked += 1,
                    Err(LedgerError::AlreadyRevoked(_)) => {}
                    Err(e) => return Err(e.into()),
                }
                entry.items[i].status = ConsentState::Revoked;
            }
        }
        let removed: HashSet<Digest> = targets.iter().map(|&i| entry.items[i].proof).collect();
        entry.items.retain(|i| !removed.contains(&i.proof));
        self.request_log.lock().retain(|r| r.proof.is_none_or(|p| !removed.contains(&p)));
        self.persist_entry(&entry)?;
        self.store.lock().compact()?;
        Ok(ForgetReceipt { forgotten: removed.len(), revoked })
    }

    /// Reveal which public DID submitted `proof`, for a warranted
    /// non-repudiation investigation.
    pub fn investigate_proof(&self, proof: &Digest, warrant: &Warrant) -> Result<String, PortalError> {
        let key = self.config.warrant_issuer_key.as_deref().ok_or(PortalError::InvalidWarrant)?;
        if !warrant.verify_for(&proof.to_hex(), key) {
            return Err(PortalError::InvalidWarrant);
        }
        let entries: Vec<_> = self.matches.read().values().cloned().collect();
        entries
            .iter()
            .find_map(|e| {
                let e = e.lock();
                e.items.iter().any(|i| &i.proof == proof).then(|| e.public_did.clone())
            })
            .ok_or(PortalError::NotFound)
    }

    // Operator view, used by the adversary models and erasure checks.

    pub fn request_log(&self) -> Vec<RequestLogEntry> {
        self.request_log.lock().clone()
    }

    pub fn match_table(&self) -> Vec<MatchEntry> {
        let mut out: Vec<MatchEntry> = self.matches.read().values().map(|e| e.lock().clone()).collect();
        out.sort_by(|a, b| a.public_did.cmp(&b.public_did));
        out
    }

    /// Store contents at rest followed by the request log.
    pub fn persisted_bytes(&self) -> Result<Vec<u8>, PortalError> {
        let mut out = self.store.lock().raw_bytes()?;
        out.extend(canonical::to_vec(&*self.request_log.lock()));
        Ok(out)
    }
}

#[cfg(test)]
mod tests;
