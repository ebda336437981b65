//! Cloud agent: per-DID inboxes with store-and-forward routing.
//!
//! The mediator only ever handles envelope bytes. Its routing log is the
//! honest-but-curious metadata view and is exposed only in harness mode.

use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::canonical::{self, b64};
use crate::clock::Clock;
use crate::identity::{parse_did_key, verify, DidKind, DidRegistry, Envelope, IdentityError, Signature};

const REGISTER_LABEL: &[u8] = b"ccn/mediator/register";

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum MediatorError {
    #[error("inbox for `{0}` already registered")]
    DuplicateInbox(String),
    #[error("proof of control for `{0}` failed")]
    FailedProof(String),
    #[error("no inbox for `{0}`")]
    UnknownDestination(String),
    #[error("endpoint token does not open this inbox")]
    BadToken,
    #[error("metadata view is only available in harness mode")]
    HarnessModeDisabled,
    #[error(transparent)]
    Identity(#[from] IdentityError),
}

/// Network-level source identifier the mediator observes.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TransportHandle(pub String);

/// Transport the agent connects through. With `pseudonymous` set every
/// session gets a fresh random handle, modeling an onion-routed link;
/// otherwise the stable address is visible.
#[derive(Debug, Clone)]
pub struct Transport {
    pub pseudonymous: bool,
    pub stable_address: String,
}

impl Transport {
    pub fn new(pseudonymous: bool, stable_address: impl Into<String>) -> Self {
        Transport { pseudonymous, stable_address: stable_address.into() }
    }

    pub fn open_session<R: RngCore + ?Sized>(&self, rng: &mut R) -> TransportHandle {
        if self.pseudonymous {
            let mut id = [0u8; 16];
            rng.fill_bytes(&mut id);
            TransportHandle(format!("onion-{}", hex::encode(id)))
        } else {
            TransportHandle(self.stable_address.clone())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoutingLogEntry {
    pub timestamp: u64,
    pub source: TransportHandle,
    pub destination: String,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeliveryReceipt {
    pub destination: String,
    pub sequence: u64,
    pub size: usize,
}

#[derive(Debug)]
pub struct Inbox {
    pub owner_did: String,
    pub endpoint_token: String,
    queue: VecDeque<Vec<u8>>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MediatorConfig {
    pub harness_mode: bool,
}

/// Challenge issued for inbox registration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InboxChallenge {
    pub did: String,
    #[serde(with = "b64")]
    pub nonce: Vec<u8>,
}

impl InboxChallenge {
    pub fn signing_bytes(&self) -> Vec<u8> {
        let mut out = REGISTER_LABEL.to_vec();
        out.extend_from_slice(&self.nonce);
        out.extend_from_slice(self.did.as_bytes());
        out
    }
}

pub struct Mediator {
    config: MediatorConfig,
    registry: Arc<DidRegistry>,
    inboxes: RwLock<HashMap<String, Arc<Mutex<Inbox>>>>,
    pending: Mutex<HashMap<String, Vec<u8>>>,
    log: Mutex<Vec<RoutingLogEntry>>,
    sequence: AtomicU64,
    rng: Mutex<ChaCha20Rng>,
    clock: Arc<dyn Clock>,
}

impl std::fmt::Debug for Mediator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Mediator").field("inboxes", &self.inboxes.read().len()).finish_non_exhaustive()
    }
}

pub fn endpoint_for(token: &str) -> String {
    format!("mediator://inbox/{token}")
}

impl Mediator {
    pub fn new(config: MediatorConfig, registry: Arc<DidRegistry>, clock: Arc<dyn Clock>, seed: u64) -> Self {
        Mediator {
            config,
            registry,
            inboxes: RwLock::new(HashMap::new()),
            pending: Mutex::new(HashMap::new()),
            log: Mutex::new(Vec::new()),
            sequence: AtomicU64::new(0),
            rng: Mutex::new(ChaCha20Rng::seed_from_u64(seed)),
            clock,
        }
    }

    pub fn challenge(&self, did_text: &str) -> InboxChallenge {
        let mut nonce = vec![0u8; 32];
        self.rng.lock().fill_bytes(&mut nonce);
        self.pending.lock().insert(did_text.to_owned(), nonce.clone());
        InboxChallenge { did: did_text.to_owned(), nonce }
    }

    /// Register an inbox after DID-Auth. Public inboxes are advertised as
    /// the DID's service endpoint; private ones stay undiscoverable.
    pub fn register_inbox(&self, did_text: &str, kind: DidKind, response: Option<&Signature>) -> Result<String, MediatorError> {
        let key = parse_did_key(did_text)?;
        let nonce = self.pending.lock().remove(did_text);
        let (Some(nonce), Some(sig)) = (nonce, response) else {
            return Err(MediatorError::FailedProof(did_text.to_owned()));
        };
        let challenge = InboxChallenge { did: did_text.to_owned(), nonce };
        if sig.signer != did_text || !verify(&challenge.signing_bytes(), sig, &key) {
            return Err(MediatorError::FailedProof(did_text.to_owned()));
        }
        let mut inboxes = self.inboxes.write();
        if inboxes.contains_key(did_text) {
            return Err(MediatorError::DuplicateInbox(did_text.to_owned()));
        }
        let mut token = [0u8; 16];
        self.rng.lock().fill_bytes(&mut token);
        let token = hex::encode(token);
        if kind == DidKind::Public {
            self.registry.set_endpoint(did_text, &endpoint_for(&token))?;
        }
        inboxes.insert(
            did_text.to_owned(),
            Arc::new(Mutex::new(Inbox { owner_did: did_text.to_owned(), endpoint_token: token.clone(), queue: VecDeque::new() })),
        );
        Ok(token)
    }

    pub fn has_inbox(&self, did_text: &str) -> bool {
        self.inboxes.read().contains_key(did_text)
    }

    /// Enqueue the envelope unmodified for its recipient.
    pub fn route(&self, source: &TransportHandle, envelope: &Envelope) -> Result<DeliveryReceipt, MediatorError> {
        self.route_bytes(source, &envelope.recipient, envelope.to_bytes())
    }

    pub fn route_bytes(&self, source: &TransportHandle, destination: &str, bytes: Vec<u8>) -> Result<DeliveryReceipt, MediatorError> {
        let inbox = self
            .inboxes
            .read()
            .get(destination)
            .cloned()
            .ok_or_else(|| MediatorError::UnknownDestination(destination.to_owned()))?;
        let size = bytes.len();
        let mut inbox = inbox.lock();
        let sequence = self.sequence.fetch_add(1, Ordering::SeqCst);
        self.log.lock().push(RoutingLogEntry {
            timestamp: self.clock.now_ms(),
            source: source.clone(),
            destination: destination.to_owned(),
            size,
        });
        inbox.queue.push_back(bytes);
        Ok(DeliveryReceipt { destination: destination.to_owned(), sequence, size })
    }

    /// Drain the inbox in arrival order.
    pub fn fetch_bytes(&self, did_text: &str, token: &str) -> Result<Vec<Vec<u8>>, MediatorError> {
        let inbox = self
            .inboxes
            .read()
            .get(did_text)
            .cloned()
            .ok_or_else(|| MediatorError::UnknownDestination(did_text.to_owned()))?;
        let mut inbox = inbox.lock();
        if inbox.endpoint_token != token {
            return Err(MediatorError::BadToken);
        }
        Ok(inbox.queue.drain(..).collect())
    }

    pub fn fetch(&self, did_text: &str, token: &str) -> Result<Vec<Envelope>, MediatorError> {
        self.fetch_bytes(did_text, token)?
            .iter()
            .map(|b| Envelope::from_bytes(b).map_err(MediatorError::from))
            .collect()
    }

    pub fn metadata_view(&self) -> Result<Vec<RoutingLogEntry>, MediatorError> {
        if !self.config.harness_mode {
            return Err(MediatorError::HarnessModeDisabled);
        }
        Ok(self.log.lock().clone())
    }

    /// Everything the mediator holds: routing log plus queued envelopes.
    pub fn persisted_bytes(&self) -> Result<Vec<u8>, MediatorError> {
        let mut out = canonical::to_vec(&self.metadata_view()?);
        for inbox in self.inboxes.read().values() {
            for item in &inbox.lock().queue {
                out.extend_from_slice(item);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::ManualClock;
    use crate::identity::{create_did, seal_envelope, sign, Did};

    fn setup() -> (Mediator, Arc<DidRegistry>, ChaCha20Rng) {
        let registry = Arc::new(DidRegistry::new());
        let m = Mediator::new(MediatorConfig { harness_mode: true }, registry.clone(), Arc::new(ManualClock::new(0)), 1);
        (m, registry, ChaCha20Rng::seed_from_u64(2))
    }

    fn register(m: &Mediator, did: &Did) -> String {
        let ch = m.challenge(did.text());
        let sig = sign(&ch.signing_bytes(), did).unwrap();
        m.register_inbox(did.text(), did.kind(), Some(&sig)).unwrap()
    }

    #[test]
    fn public_registration_sets_endpoint_private_does_not() {
        let (m, registry, mut rng) = setup();
        let org = create_did(DidKind::Public, &mut rng).unwrap();
        registry.register(&org).unwrap();
        let token = register(&m, &org);
        assert_eq!(registry.resolve_public(org.text()).unwrap().service_endpoint, Some(endpoint_for(&token)));

        let private = create_did(DidKind::Private, &mut rng).unwrap();
        register(&m, &private);
        assert!(m.has_inbox(private.text()));
        assert!(!registry.contains(private.text()));
        assert_eq!(registry.len(), 1);
    }

    #[test]
    fn registration_requires_proof() {
        let (m, _, mut rng) = setup();
        let d = create_did(DidKind::Private, &mut rng).unwrap();
        assert!(matches!(m.register_inbox(d.text(), DidKind::Private, None), Err(MediatorError::FailedProof(_))));
        let other = create_did(DidKind::Private, &mut rng).unwrap();
        let ch = m.challenge(d.text());
        let sig = sign(&ch.signing_bytes(), &other).unwrap();
        assert!(matches!(m.register_inbox(d.text(), DidKind::Private, Some(&sig)), Err(MediatorError::FailedProof(_))));
        register(&m, &d);
        let ch = m.challenge(d.text());
        let sig = sign(&ch.signing_bytes(), &d).unwrap();
        assert!(matches!(m.register_inbox(d.text(), DidKind::Private, Some(&sig)), Err(MediatorError::DuplicateInbox(_))));
    }

    #[test]
    fn store_and_forward_fidelity_and_order() {
        let (m, _, mut rng) = setup();
        let a = create_did(DidKind::Private, &mut rng).unwrap();
        let b = create_did(DidKind::Private, &mut rng).unwrap();
        let token = register(&m, &b);
        let src = TransportHandle("ip-1".into());
        let envs: Vec<_> = (0..3)
            .map(|i| seal_envelope(format!("message number {i} padded").as_bytes(), &a, &b.document(), true, &mut rng).unwrap())
            .collect();
        for e in &envs {
            m.route(&src, e).unwrap();
        }
        let fetched = m.fetch_bytes(b.text(), &token).unwrap();
        assert_eq!(fetched, envs.iter().map(|e| e.to_bytes()).collect::<Vec<_>>());
        assert!(m.fetch_bytes(b.text(), &token).unwrap().is_empty());
        assert_eq!(m.fetch_bytes(b.text(), "nope"), Err(MediatorError::BadToken));
    }

    #[test]
    fn unknown_destination() {
        let (m, _, mut rng) = setup();
        let a = create_did(DidKind::Private, &mut rng).unwrap();
        let e = seal_envelope(b"x", &a, &a.document(), false, &mut rng).unwrap();
        assert!(matches!(m.route(&TransportHandle("s".into()), &e), Err(MediatorError::UnknownDestination(_))));
    }

    #[test]
    fn log_has_no_plaintext() {
        let (m, _, mut rng) = setup();
        let a = create_did(DidKind::Private, &mut rng).unwrap();
        let b = create_did(DidKind::Private, &mut rng).unwrap();
        register(&m, &b);
        let plain = b"the participant agrees to genomic data reuse".to_vec();
        let e = seal_envelope(&plain, &a, &b.document(), true, &mut rng).unwrap();
        m.route(&TransportHandle("ip-1".into()), &e).unwrap();
        let log = m.metadata_view().unwrap();
        assert_eq!(log.len(), 1);
        assert_eq!(log[0].destination, b.text());
        assert_eq!(log[0].size, e.to_bytes().len());
        let dump = m.persisted_bytes().unwrap();
        assert!(plain.windows(16).all(|w| !dump.windows(16).any(|d| d == w)));
    }

    #[test]
    fn metadata_view_gated() {
        let m = Mediator::new(MediatorConfig::default(), Arc::new(DidRegistry::new()), Arc::new(ManualClock::new(0)), 1);
        assert_eq!(m.metadata_view(), Err(MediatorError::HarnessModeDisabled));
    }

    #[test]
    fn pseudonymous_handles_fresh_per_session() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let t = Transport::new(true, "ip-10.0.0.7");
        let handles: std::collections::HashSet<_> = (0..100).map(|_| t.open_session(&mut rng)).collect();
        assert_eq!(handles.len(), 100);
        let plain = Transport::new(false, "ip-10.0.0.7");
        assert_eq!(plain.open_session(&mut rng), plain.open_session(&mut rng));
    }
}
