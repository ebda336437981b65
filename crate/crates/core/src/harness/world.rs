use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use parking_lot::Mutex;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::transcript::{EventKind, Transcript, TranscriptBook};
use super::{sub_seed, HarnessError, ScenarioConfig};
use crate::canonical;
use crate::clock::{Clock, ManualClock, SystemClock};
use crate::enrollment::{EnrollmentAuthority, VerifiableCredential};
use crate::identity::{create_did, digest, sign, Did, DidKind, DidRegistry, Digest, Envelope, KeyPair};
use crate::ledger::{Ledger, LedgerClient, Role, TermsSubmission, TxRef};
use crate::mediator::{Mediator, MediatorConfig, Transport, TransportHandle};
use crate::portal::{AuthToken, Portal, PortalConfig, ProfileRole, ProjectFilter, PublishRequest, Session};
use crate::wallet::{CatalogCheck, CatalogEntry, ConsentField, PublishedProject, Wallet, WalletConfig, WalletRole, WireMessage};

pub const PORTAL: &str = "portal";
pub const MEDIATOR: &str = "mediator";
pub const LEDGER: &str = "ledger";

const TEMPLATE: &[(&str, &str)] = &[
    ("primary_use", "Use of collected data for the stated study aims"),
    ("secondary_use", "Reuse of data in future studies with compatible aims"),
    ("sample_storage", "Storage of biological samples in the project biobank"),
    ("recontact", "Being contacted about related studies"),
    ("third_party_sharing", "Sharing pseudonymized data with partner institutions"),
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectSpec {
    pub project_id: String,
    pub org: usize,
    pub title: String,
    pub fields: Vec<ConsentField>,
    pub terms_tx: TxRef,
}

/// How a participant picks the private DID for a connection.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum ControlMode {
    #[default]
    Honest,
    /// Reuse the private DID of the participant's first project; the
    /// negative control for the linkage probes.
    ReusePrivateDid,
}

pub struct OrgActor {
    pub name: String,
    pub wallet: Wallet,
    pub ledger: LedgerClient,
    pub session: Session,
    pub inbox_token: String,
    pub handle: TransportHandle,
}

pub struct ParticipantActor {
    pub name: String,
    pub wallet: Wallet,
    pub session: Session,
    pub inboxes: BTreeMap<String, String>,
    pub transport: Transport,
    pub rng: ChaCha20Rng,
    pub evidence: Vec<u8>,
    pub credential: Option<VerifiableCredential>,
    mailbox: BTreeMap<String, VecDeque<WireMessage>>,
    pub(crate) handles: BTreeMap<String, TransportHandle>,
}

impl ParticipantActor {
    /// Transport handle used for the connection on `project_id`.
    pub fn handle_for(&self, project_id: &str) -> Option<&TransportHandle> {
        self.handles.get(project_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairOutcome {
    pub participant: usize,
    pub project: usize,
    pub private_did: String,
    pub proof: Digest,
    pub consent_tx: TxRef,
    pub accepted: bool,
}

/// A whole in-process deployment.
pub struct World {
    pub config: ScenarioConfig,
    pub clock: Arc<dyn Clock>,
    pub ledger: Arc<Ledger>,
    pub registry: Arc<DidRegistry>,
    pub mediator: Arc<Mediator>,
    pub portal: Arc<Portal>,
    pub authority: Option<Arc<EnrollmentAuthority>>,
    /// Issuer of investigation warrants.
    pub court: Did,
    pub orgs: Vec<Mutex<OrgActor>>,
    pub participants: Vec<Mutex<ParticipantActor>>,
    pub projects: Vec<ProjectSpec>,
    pub transcripts: TranscriptBook,
    pub failures: Mutex<Vec<String>>,
    /// Set for sequential runs, which use a manual clock.
    pub manual_clock: Option<Arc<ManualClock>>,
    rng: Mutex<ChaCha20Rng>,
}

impl std::fmt::Debug for World {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("World").field("config", &self.config).finish_non_exhaustive()
    }
}

fn keys(seed: u64, label: &str, i: u64) -> Result<KeyPair, HarnessError> {
    Ok(KeyPair::generate(&mut ChaCha20Rng::seed_from_u64(sub_seed(seed, label, i)))?)
}

fn did(seed: u64, label: &str, kind: DidKind) -> Result<Did, HarnessError> {
    Ok(create_did(kind, &mut ChaCha20Rng::seed_from_u64(sub_seed(seed, label, 0)))?)
}

impl World {
    /// Bring up the ledger, portal, mediator and optional enrollment
    /// authority, then the organizations with their published projects and
    /// the registered participants.
    pub fn new(config: ScenarioConfig) -> Result<Self, HarnessError> {
        if config.n_orgs == 0 || config.n_projects < config.n_orgs {
            return Err(HarnessError::Config("need at least one project per organization".into()));
        }
        let seed = config.seed;
        let manual_clock = (!config.concurrent).then(|| Arc::new(ManualClock::ticking(1_700_000_000_000, 1)));
        let clock: Arc<dyn Clock> = match &manual_clock {
            Some(c) => c.clone(),
            None => Arc::new(SystemClock),
        };
        if let Some(dir) = &config.storage_dir {
            std::fs::create_dir_all(dir)?;
        }
        let ledger = Arc::new(Ledger::open(config.ledger_config(), [])?);
        let registry = Arc::new(DidRegistry::new());
        let mediator = Arc::new(Mediator::new(
            MediatorConfig { harness_mode: true },
            registry.clone(),
            clock.clone(),
            sub_seed(seed, "mediator", 0),
        ));
        let court = did(seed, "court", DidKind::Public)?;
        let authority = if config.enrollment {
            Some(Arc::new(EnrollmentAuthority::new(
                did(seed, "authority", DidKind::Public)?,
                court.verification_key().to_vec(),
                clock.clone(),
            )))
        } else {
            None
        };
        let portal_client = LedgerClient::new(PORTAL, Role::Portal, keys(seed, "portal-ledger", 0)?, ledger.clone()).admitted()?;
        let portal_config = PortalConfig {
            enrollment_required: config.enrollment,
            forget_revokes_first: config.forget_revokes_first,
            store_dir: config.storage_dir.as_ref().map(|d| d.join("portal")),
            enrollment_authority_key: authority.as_ref().map(|a| a.verification_key()),
            warrant_issuer_key: Some(court.verification_key().to_vec()),
            ..PortalConfig::default()
        };
        let portal = Arc::new(Portal::new(
            did(seed, "portal-did", DidKind::Public)?,
            portal_config,
            portal_client,
            clock.clone(),
            sub_seed(seed, "portal", 0),
        )?);

        let mut world = World {
            config: config.clone(),
            clock,
            ledger,
            registry,
            mediator,
            portal,
            authority,
            court,
            orgs: vec![],
            participants: vec![],
            projects: vec![],
            transcripts: TranscriptBook::default(),
            failures: Mutex::new(vec![]),
            manual_clock,
            rng: Mutex::new(ChaCha20Rng::seed_from_u64(sub_seed(seed, "schedule", 0))),
        };
        for i in 0..config.n_orgs {
            let org = world.new_org(i)?;
            world.orgs.push(Mutex::new(org));
        }
        for j in 0..config.n_projects {
            let proj = world.publish_project(j, j % config.n_orgs)?;
            world.projects.push(proj);
        }
        for i in 0..config.n_participants {
            let p = world.new_participant(i)?;
            world.participants.push(Mutex::new(p));
        }
        Ok(world)
    }

    fn wallet_seed(&self, label: &str, i: usize) -> u64 {
        sub_seed(self.config.seed, label, i as u64)
    }

    fn login(&self, actor: &str, did: &Did, credential: Option<&VerifiableCredential>, role: ProfileRole, wallet: &Wallet) -> Result<Session, HarnessError> {
        let challenge = self.portal.challenge(did.text());
        self.transcripts.record(actor, EventKind::PortalResponse, PORTAL, "auth", canonical::to_vec(&challenge));
        let token: AuthToken = wallet.did_auth_response(&challenge)?;
        let body = canonical::to_vec(&(&token, credential));
        self.transcripts.record(actor, EventKind::Sent, PORTAL, "auth", body.clone());
        self.transcripts.record(PORTAL, EventKind::PortalRequest, did.text(), "auth", body);
        Ok(self.portal.register(&token, credential, role)?)
    }

    pub(crate) fn register_inbox(&self, did: &Did) -> Result<String, HarnessError> {
        let challenge = self.mediator.challenge(did.text());
        let sig = sign(&challenge.signing_bytes(), did)?;
        Ok(self.mediator.register_inbox(did.text(), did.kind(), Some(&sig))?)
    }

    fn new_org(&self, i: usize) -> Result<OrgActor, HarnessError> {
        let name = format!("org-{i}");
        let wallet = Wallet::seeded(WalletRole::Organization, WalletConfig::default(), self.wallet_seed("org", i), self.clock.clone())?;
        self.registry.register(wallet.public_did())?;
        let inbox_token = self.register_inbox(wallet.public_did())?;
        let ledger = LedgerClient::new(name.clone(), Role::Organization, keys(self.config.seed, "org-ledger", i as u64)?, self.ledger.clone())
            .admitted()?;
        let session = self.login(&name, &wallet.public_did().clone(), None, ProfileRole::Organization, &wallet)?;
        Ok(OrgActor { handle: TransportHandle(format!("ip-192.0.2.{}", i + 1)), name, wallet, ledger, session, inbox_token })
    }

    fn publish_project(&self, j: usize, org_idx: usize) -> Result<ProjectSpec, HarnessError> {
        let mut org = self.orgs[org_idx].lock();
        let project_id = format!("project-{j:02}");
        let title = format!("Cohort study {j} of {}", org.name);
        let fields: Vec<ConsentField> =
            TEMPLATE.iter().map(|(n, v)| ConsentField { name: (*n).to_owned(), value: (*v).to_owned() }).collect();
        let terms_doc = canonical::to_vec(&(&project_id, &title, &fields, 1u32));
        let terms_tx = org.ledger.publish_consent_terms(TermsSubmission {
            org_did: org.wallet.public_did().text().to_owned(),
            project_id: project_id.clone(),
            version: 1,
            terms_digest: digest(&terms_doc),
        })?;
        org.wallet.register_project(PublishedProject {
            project_id: project_id.clone(),
            title: title.clone(),
            terms_tx: terms_tx.clone(),
            fields: fields.clone(),
        })?;
        let entry = CatalogEntry {
            project_id: project_id.clone(),
            org_did: org.wallet.public_did().text().to_owned(),
            title: title.clone(),
            terms_tx: terms_tx.clone(),
            requires_enrollment: self.config.enrollment,
        };
        self.portal.publish_project(&org.session.token, entry)?;
        Ok(ProjectSpec { project_id, org: org_idx, title, fields, terms_tx })
    }

    fn new_participant(&self, i: usize) -> Result<ParticipantActor, HarnessError> {
        let name = format!("participant-{i}");
        let wallet_config = WalletConfig { k_threshold: self.config.k_threshold, preseed_dids: self.config.preseed_dids };
        let wallet = Wallet::seeded(WalletRole::Participant, wallet_config, self.wallet_seed("participant", i), self.clock.clone())?;
        let evidence = format!("national-id:{:016x}", self.wallet_seed("evidence", i)).into_bytes();
        let credential = match &self.authority {
            Some(a) => Some(a.enroll(&evidence, wallet.public_did().text())?),
            None => None,
        };
        let public = wallet.public_did().clone();
        let session = self.login(&name, &public, credential.as_ref(), ProfileRole::Participant, &wallet)?;
        Ok(ParticipantActor {
            transport: Transport::new(self.config.pseudonymous_transport, format!("ip-198.51.{}.{}", i / 250, i % 250 + 1)),
            rng: ChaCha20Rng::seed_from_u64(self.wallet_seed("participant-choices", i)),
            name,
            wallet,
            session,
            inboxes: BTreeMap::new(),
            evidence,
            credential,
            mailbox: BTreeMap::new(),
            handles: BTreeMap::new(),
        })
    }

    /// Shuffle with the run's scheduling generator.
    pub fn shuffle<T>(&self, items: &mut [T]) {
        items.shuffle(&mut *self.rng.lock());
    }

    pub fn project_index(&self, project_id: &str) -> Option<usize> {
        self.projects.iter().position(|p| p.project_id == project_id)
    }

    // Messaging through the mediator.

    pub(crate) fn send(&self, actor: &str, handle: &TransportHandle, channel: &str, env: &Envelope) -> Result<(), HarnessError> {
        let bytes = env.to_bytes();
        self.transcripts.record(actor, EventKind::Sent, &env.recipient, channel, bytes.clone());
        self.mediator.route(handle, env)?;
        self.transcripts.record(MEDIATOR, EventKind::Routed, &handle.0, &env.recipient, bytes);
        Ok(())
    }

    /// Process every message waiting in an organization's inbox.
    pub fn pump_org(&self, org_idx: usize) -> Result<(), HarnessError> {
        let mut guard = self.orgs[org_idx].lock();
        let org = &mut *guard;
        let envelopes = self.mediator.fetch(org.wallet.public_did().text(), &org.inbox_token)?;
        for env in envelopes {
            if let Err(e) = self.org_handle(org, &env) {
                self.failures.lock().push(format!("{}: {e}", org.name));
            }
        }
        Ok(())
    }

    fn org_handle(&self, org: &mut OrgActor, env: &Envelope) -> Result<(), HarnessError> {
        let (msg, sender) = org.wallet.open_message(env)?;
        let channel = sender.clone().unwrap_or_default();
        self.transcripts.record(&org.name, EventKind::Received, MEDIATOR, &channel, env.to_bytes());
        self.transcripts.record(&org.name, EventKind::Opened, &channel, &channel, msg.to_bytes());
        match msg {
            WireMessage::ConnectionRequest { .. } => {
                let (participant_did, project_id, reply) = org.wallet.accept_connection(env)?;
                self.send(&org.name, &org.handle, &participant_did, &reply)?;
                let project = org
                    .wallet
                    .published_project(&project_id)
                    .cloned()
                    .ok_or_else(|| HarnessError::Protocol(format!("unknown project {project_id}")))?;
                let (_, form_env) = org.wallet.build_consent_form(&project_id, &project.terms_tx, &participant_did, &project.fields)?;
                self.send(&org.name, &org.handle, &participant_did, &form_env)
            }
            WireMessage::ConsentPackage { .. } => {
                let (outcome, receipt) = org.wallet.receive_package(env, &self.ledger)?;
                if let Err(r) = &outcome {
                    self.failures.lock().push(format!("{} rejected package from {channel}: {r}", org.name));
                }
                self.send(&org.name, &org.handle, &channel, &receipt)
            }
            other => Err(HarnessError::Protocol(format!("organization got {}", other.kind()))),
        }
    }

    pub(crate) fn fetch_participant(&self, p: &mut ParticipantActor, did: &str) -> Result<(), HarnessError> {
        let token = p.inboxes.get(did).ok_or_else(|| HarnessError::Protocol(format!("no inbox for {did}")))?.clone();
        for env in self.mediator.fetch(did, &token)? {
            let (msg, sender) = p.wallet.open_message(&env)?;
            let channel = did.to_owned();
            self.transcripts.record(&p.name, EventKind::Received, MEDIATOR, &channel, env.to_bytes());
            self.transcripts.record(&p.name, EventKind::Opened, sender.as_deref().unwrap_or(""), &channel, msg.to_bytes());
            p.mailbox.entry(did.to_owned()).or_default().push_back(msg);
        }
        Ok(())
    }

    /// Wait for a message on `did`, pumping the organization as needed.
    pub(crate) fn expect(&self, p: &mut ParticipantActor, did: &str, org_idx: usize, kind: &str) -> Result<WireMessage, HarnessError> {
        for attempt in 0..2_000 {
            if let Some(q) = p.mailbox.get_mut(did) {
                if let Some(pos) = q.iter().position(|m| m.kind() == kind) {
                    return Ok(q.remove(pos).expect("position is in range"));
                }
            }
            self.pump_org(org_idx)?;
            self.fetch_participant(p, did)?;
            if attempt > 0 && self.config.concurrent {
                std::thread::sleep(std::time::Duration::from_millis(1));
            }
        }
        Err(HarnessError::Protocol(format!("{} never received {kind}", p.name)))
    }

    /// One participant joins one project: connection, form exchange,
    /// signing, proof generation, proxied publication and package delivery.
    pub fn establish_consent(&self, p_idx: usize, project_idx: usize, mode: ControlMode) -> Result<PairOutcome, HarnessError> {
        let mut guard = self.participants[p_idx].lock();
        let p = &mut *guard;
        let proj = &self.projects[project_idx];

        let filter = ProjectFilter::default();
        self.transcripts.record(PORTAL, EventKind::PortalRequest, &p.session.public_did, "projects", canonical::to_vec(&filter));
        let catalog = self.portal.list_projects(&p.session.token, &filter)?;
        self.transcripts.record(&p.name, EventKind::PortalResponse, PORTAL, "projects", canonical::to_vec(&catalog));
        if let CatalogCheck::Abort { size, threshold } = p.wallet.observe_catalog(&catalog) {
            return Err(crate::wallet::WalletError::HerdPrivacy { size, threshold }.into());
        }
        let entry = catalog
            .find(&proj.project_id)
            .cloned()
            .ok_or_else(|| HarnessError::Protocol(format!("{} not listed", proj.project_id)))?;
        let org_doc = self.registry.resolve_public(&entry.org_did)?;

        let first_project = p.wallet.project_identities().next().map(|(k, _)| k.clone());
        let (private_did, request) = match (mode, first_project) {
            (ControlMode::ReusePrivateDid, Some(first)) => {
                let did = p.wallet.reuse_identity_for_negative_control(&proj.project_id, &first)?;
                (did, p.wallet.request_with_bound_identity(&proj.project_id, &org_doc)?)
            }
            _ => p.wallet.request_participation(&entry, &org_doc)?,
        };
        let did_text = private_did.text().to_owned();
        if !p.inboxes.contains_key(&did_text) {
            let token = self.register_inbox(&private_did)?;
            p.inboxes.insert(did_text.clone(), token);
        }
        let handle = p.transport.open_session(&mut p.rng);
        p.handles.insert(proj.project_id.clone(), handle.clone());
        self.send(&p.name, &handle, &did_text, &request)?;

        self.expect(p, &did_text, proj.org, "connection_accepted")?;
        let WireMessage::ConsentForm { form } = self.expect(p, &did_text, proj.org, "consent_form")? else {
            unreachable!("expect filters by kind")
        };
        let choices: Vec<ConsentField> = form
            .fields
            .iter()
            .map(|f| ConsentField { name: f.name.clone(), value: if p.rng.gen_bool(0.7) { "granted" } else { "declined" }.into() })
            .collect();
        let completed = p.wallet.complete_and_sign_form(&form, choices)?;
        let (_, proof) = p.wallet.generate_consent_proof(&completed, &org_doc)?;

        let request = PublishRequest { session: p.session.token.clone(), proof };
        self.transcripts.record(&p.name, EventKind::Sent, PORTAL, "publish", canonical::to_vec(&request));
        self.transcripts.record(PORTAL, EventKind::PortalRequest, &p.session.public_did, "publish", canonical::to_vec(&request));
        let consent_tx = self.portal.proxy_publish(&request)?;
        self.transcripts.record(&p.name, EventKind::PortalResponse, PORTAL, "publish", canonical::to_vec(&consent_tx));
        p.wallet.record_consent_tx(&proof, consent_tx.clone())?;
        self.ledger.query_proof(&proof)?;

        let (_, package_env) = p.wallet.consent_package(&proof, &org_doc)?;
        self.send(&p.name, &handle, &did_text, &package_env)?;
        let WireMessage::PackageReceipt { accepted, .. } = self.expect(p, &did_text, proj.org, "package_receipt")? else {
            unreachable!("expect filters by kind")
        };
        Ok(PairOutcome { participant: p_idx, project: project_idx, private_did: did_text, proof, consent_tx, accepted })
    }

    /// Re-send the package for `proof` and report whether the organization
    /// accepts it now.
    pub fn resend_package(&self, p_idx: usize, project_idx: usize, proof: &Digest) -> Result<bool, HarnessError> {
        let mut guard = self.participants[p_idx].lock();
        let p = &mut *guard;
        let proj = &self.projects[project_idx];
        let org_did = self.orgs[proj.org].lock().wallet.public_did().text().to_owned();
        let org_doc = self.registry.resolve_public(&org_did)?;
        let did_text = p
            .wallet
            .project_identity(&proj.project_id)
            .map(|d| d.text().to_owned())
            .ok_or_else(|| HarnessError::Protocol("no connection for project".into()))?;
        let handle = p.transport.open_session(&mut p.rng);
        let (_, env) = p.wallet.consent_package(proof, &org_doc)?;
        self.send(&p.name, &handle, &did_text, &env)?;
        let WireMessage::PackageReceipt { accepted, .. } = self.expect(p, &did_text, proj.org, "package_receipt")? else {
            unreachable!("expect filters by kind")
        };
        Ok(accepted)
    }

    /// Ledger view as a transcript: one event per committed block.
    pub fn ledger_transcript(&self) -> Transcript {
        let mut t = Transcript::new(LEDGER);
        for b in self.ledger.blocks() {
            t.push(EventKind::Block, "", &b.height.to_string(), canonical::to_vec(&b));
        }
        t
    }

    /// Every actor's transcript, the ledger's included.
    pub fn all_transcripts(&self) -> Vec<Transcript> {
        let mut out = self.transcripts.all();
        out.push(self.ledger_transcript());
        out
    }

    pub fn participant_public_did(&self, p_idx: usize) -> String {
        self.participants[p_idx].lock().wallet.public_did().text().to_owned()
    }
}
