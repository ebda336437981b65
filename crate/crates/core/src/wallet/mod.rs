//! Edge agents for participants and organizations.
//!
//! A participant wallet holds one public DID and a fresh private DID per
//! project; nothing it sends for one project shares an identifier with
//! another project. Organization wallets sign consent forms and verify the
//! consent packages returned to them.

mod consent;
mod form;
mod messages;
mod store;

pub use consent::*;
pub use form::{ConsentField, PrivateConsentForm};
pub use messages::{ConsentPackage, WireMessage};
pub use store::{load_wallet, save_wallet, WALLET_MAGIC};

use std::collections::{BTreeMap, HashSet, VecDeque};
use std::fmt;
use std::sync::Arc;

use rand::{CryptoRng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::clock::{Clock, SystemClock};
use crate::identity::{create_did, Did, DidKind, IdentityError};
use crate::ledger::TxRef;

pub const DEFAULT_K_THRESHOLD: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WalletRole {
    Participant,
    Organization,
}

#[derive(Debug, thiserror::Error)]
pub enum WalletError {
    #[error(transparent)]
    Identity(#[from] IdentityError),
    #[error("operation requires a {0:?} wallet")]
    WrongRole(WalletRole),
    #[error("project `{0}` already has a private DID")]
    IdentityReuse(String),
    #[error("herd privacy: catalog lists {size} projects, at least {threshold} required")]
    HerdPrivacy { size: usize, threshold: usize },
    #[error("no catalog has been observed")]
    NoCatalog,
    #[error("organization signature on the form does not verify")]
    OrgSignatureInvalid,
    #[error("form is addressed to a DID this wallet does not hold for the project")]
    ForeignParticipantDid,
    #[error("choices do not answer exactly the template fields")]
    IncompleteChoices,
    #[error("consent form template is empty or has duplicate fields")]
    InvalidTemplate,
    #[error("form is not dual-signed")]
    IncompleteForm,
    #[error("unknown project `{0}`")]
    UnknownProject(String),
    #[error("terms reference does not match the published terms of `{0}`")]
    TermsMismatch(String),
    #[error("no connection for `{0}`")]
    UnknownConnection(String),
    #[error("unknown consent proof")]
    UnknownProof,
    #[error("unexpected message: {0}")]
    UnexpectedMessage(String),
    #[error("wallet store: {0}")]
    Store(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub project_id: String,
    pub org_did: String,
    pub title: String,
    pub terms_tx: TxRef,
    #[serde(default)]
    pub requires_enrollment: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Catalog {
    pub entries: Vec<CatalogEntry>,
}

impl Catalog {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn find(&self, project_id: &str) -> Option<&CatalogEntry> {
        self.entries.iter().find(|e| e.project_id == project_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CatalogCheck {
    Ok,
    Abort { size: usize, threshold: usize },
}

/// Herd-privacy gate: a participation request may only follow a catalog
/// of at least `threshold` projects.
pub fn check_catalog_privacy(catalog: &Catalog, threshold: usize) -> CatalogCheck {
    if catalog.len() >= threshold {
        CatalogCheck::Ok
    } else {
        CatalogCheck::Abort { size: catalog.len(), threshold }
    }
}

#[derive(Debug, Clone)]
pub struct WalletConfig {
    pub k_threshold: usize,
    pub preseed_dids: usize,
}

impl Default for WalletConfig {
    fn default() -> Self {
        WalletConfig { k_threshold: DEFAULT_K_THRESHOLD, preseed_dids: 0 }
    }
}

pub trait WalletRng: RngCore + CryptoRng + Send {}
impl<T: RngCore + CryptoRng + Send> WalletRng for T {}

/// Terms an organization has published for one of its projects.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublishedProject {
    pub project_id: String,
    pub title: String,
    pub terms_tx: TxRef,
    pub fields: Vec<ConsentField>,
}

pub struct Wallet {
    pub(crate) role: WalletRole,
    pub(crate) public_did: Did,
    pub(crate) project_identities: BTreeMap<String, Did>,
    pub(crate) pool: VecDeque<Did>,
    pub(crate) issued_private: HashSet<String>,
    pub(crate) signed_forms: BTreeMap<String, PrivateConsentForm>,
    pub(crate) consent_store: Vec<ConsentDossier>,
    pub(crate) last_catalog_size: Option<usize>,
    // organization side
    pub(crate) projects: BTreeMap<String, PublishedProject>,
    pub(crate) connections: BTreeMap<String, String>,
    pub(crate) accepted: Vec<AcceptedConsent>,
    pub(crate) config: WalletConfig,
    pub(crate) rng: Box<dyn WalletRng>,
    pub(crate) clock: Arc<dyn Clock>,
}

impl fmt::Debug for Wallet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Wallet")
            .field("role", &self.role)
            .field("public_did", &self.public_did.text())
            .field("projects", &self.project_identities.len())
            .field("dossiers", &self.consent_store.len())
            .finish_non_exhaustive()
    }
}

/// New wallet with OS entropy and the system clock.
pub fn init_wallet(role: WalletRole) -> Result<Wallet, WalletError> {
    Wallet::with_rng(role, WalletConfig::default(), ChaCha20Rng::from_entropy(), Arc::new(SystemClock))
}

impl Wallet {
    pub fn with_rng(
        role: WalletRole,
        config: WalletConfig,
        rng: impl WalletRng + 'static,
        clock: Arc<dyn Clock>,
    ) -> Result<Self, WalletError> {
        let mut rng: Box<dyn WalletRng> = Box::new(rng);
        let public_did = create_did(DidKind::Public, &mut rng)?;
        let mut wallet = Wallet {
            role,
            public_did,
            project_identities: BTreeMap::new(),
            pool: VecDeque::new(),
            issued_private: HashSet::new(),
            signed_forms: BTreeMap::new(),
            consent_store: Vec::new(),
            last_catalog_size: None,
            projects: BTreeMap::new(),
            connections: BTreeMap::new(),
            accepted: Vec::new(),
            config,
            rng,
            clock,
        };
        if role == WalletRole::Participant {
            wallet.preseed(wallet.config.preseed_dids)?;
        }
        Ok(wallet)
    }

    pub fn seeded(role: WalletRole, config: WalletConfig, seed: u64, clock: Arc<dyn Clock>) -> Result<Self, WalletError> {
        Self::with_rng(role, config, ChaCha20Rng::seed_from_u64(seed), clock)
    }

    pub fn role(&self) -> WalletRole {
        self.role
    }

    pub fn public_did(&self) -> &Did {
        &self.public_did
    }

    pub fn config(&self) -> &WalletConfig {
        &self.config
    }

    pub fn rng(&mut self) -> &mut dyn WalletRng {
        &mut *self.rng
    }

    pub(crate) fn now(&self) -> u64 {
        self.clock.now_ms()
    }

    fn require(&self, role: WalletRole) -> Result<(), WalletError> {
        if self.role == role {
            Ok(())
        } else {
            Err(WalletError::WrongRole(role))
        }
    }

    /// Generate `count` private DIDs ahead of time so that a later
    /// participation does not pay for key generation.
    pub fn preseed(&mut self, count: usize) -> Result<(), WalletError> {
        self.require(WalletRole::Participant)?;
        for _ in 0..count {
            let did = self.fresh_private_did()?;
            self.pool.push_back(did);
        }
        Ok(())
    }

    pub fn pool_len(&self) -> usize {
        self.pool.len()
    }

    /// A new private DID that is not bound to any project.
    pub fn create_private_did(&mut self) -> Result<Did, WalletError> {
        self.fresh_private_did()
    }

    fn fresh_private_did(&mut self) -> Result<Did, WalletError> {
        let did = create_did(DidKind::Private, &mut self.rng)?;
        if did.text() == self.public_did.text() || !self.issued_private.insert(did.text().to_owned()) {
            // Only reachable with a broken entropy source.
            return Err(WalletError::IdentityReuse(did.text().to_owned()));
        }
        Ok(did)
    }

    pub fn create_project_identity(&mut self, project_id: &str) -> Result<Did, WalletError> {
        self.require(WalletRole::Participant)?;
        if self.project_identities.contains_key(project_id) {
            return Err(WalletError::IdentityReuse(project_id.to_owned()));
        }
        let did = match self.pool.pop_front() {
            Some(did) => did,
            None => self.fresh_private_did()?,
        };
        self.project_identities.insert(project_id.to_owned(), did.clone());
        Ok(did)
    }

    pub fn project_identity(&self, project_id: &str) -> Option<&Did> {
        self.project_identities.get(project_id)
    }

    pub fn project_identities(&self) -> impl Iterator<Item = (&String, &Did)> {
        self.project_identities.iter()
    }

    /// Negative-control hook for the linkage probes: bind `project_id` to the
    /// private DID already used for `existing_project`, breaking the
    /// one-DID-per-project rule on purpose.
    pub fn reuse_identity_for_negative_control(&mut self, project_id: &str, existing_project: &str) -> Result<Did, WalletError> {
        let did = self
            .project_identities
            .get(existing_project)
            .cloned()
            .ok_or_else(|| WalletError::UnknownProject(existing_project.to_owned()))?;
        self.project_identities.insert(project_id.to_owned(), did.clone());
        Ok(did)
    }

    /// Record the catalog size and apply the herd-privacy gate.
    pub fn observe_catalog(&mut self, catalog: &Catalog) -> CatalogCheck {
        self.last_catalog_size = Some(catalog.len());
        check_catalog_privacy(catalog, self.config.k_threshold)
    }

    pub(crate) fn herd_privacy_gate(&self) -> Result<(), WalletError> {
        match self.last_catalog_size {
            None => Err(WalletError::NoCatalog),
            Some(size) if size < self.config.k_threshold => {
                Err(WalletError::HerdPrivacy { size, threshold: self.config.k_threshold })
            }
            Some(_) => Ok(()),
        }
    }

    pub fn dossiers(&self) -> &[ConsentDossier] {
        &self.consent_store
    }

    pub fn dossier(&self, proof: &crate::identity::Digest) -> Option<&ConsentDossier> {
        self.consent_store.iter().find(|d| &d.proof == proof)
    }

    /// Every secret key byte string the wallet holds, for leak scans.
    pub fn secret_material(&self) -> Vec<[u8; 32]> {
        let mut out = Vec::new();
        let dids = std::iter::once(&self.public_did).chain(self.project_identities.values()).chain(self.pool.iter());
        for did in dids {
            if let Some(keys) = did.keys() {
                out.extend(keys.secret_material());
            }
        }
        out
    }

    // Organization side.

    pub fn register_project(&mut self, project: PublishedProject) -> Result<(), WalletError> {
        self.require(WalletRole::Organization)?;
        self.projects.insert(project.project_id.clone(), project);
        Ok(())
    }

    pub fn published_project(&self, project_id: &str) -> Option<&PublishedProject> {
        self.projects.get(project_id)
    }

    pub fn connections(&self) -> &BTreeMap<String, String> {
        &self.connections
    }

    pub fn accepted_consents(&self) -> &[AcceptedConsent] {
        &self.accepted
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::ManualClock;

    fn participant(preseed: usize) -> Wallet {
        Wallet::seeded(
            WalletRole::Participant,
            WalletConfig { preseed_dids: preseed, ..Default::default() },
            1,
            Arc::new(ManualClock::new(0)),
        )
        .unwrap()
    }

    #[test]
    fn distinct_public_dids() {
        let a = init_wallet(WalletRole::Participant).unwrap();
        let b = init_wallet(WalletRole::Participant).unwrap();
        assert_ne!(a.public_did(), b.public_did());
        let org = init_wallet(WalletRole::Organization).unwrap();
        assert_eq!(org.role(), WalletRole::Organization);
        assert_eq!(org.project_identities().count(), 0);
    }

    #[test]
    fn project_identities_unique_and_not_reused() {
        let mut w = participant(0);
        let a = w.create_project_identity("p1").unwrap();
        let b = w.create_project_identity("p2").unwrap();
        assert_ne!(a, b);
        assert_ne!(&a, w.public_did());
        assert!(matches!(w.create_project_identity("p1"), Err(WalletError::IdentityReuse(_))));
    }

    #[test]
    fn organizations_have_no_project_identities() {
        let mut org = Wallet::seeded(WalletRole::Organization, WalletConfig::default(), 2, Arc::new(ManualClock::new(0))).unwrap();
        assert!(matches!(org.create_project_identity("p"), Err(WalletError::WrongRole(_))));
    }

    #[test]
    fn preseeded_pool() {
        let w = participant(5);
        assert_eq!(w.pool_len(), 5);
    }

    #[test]
    fn catalog_gate() {
        let entry = |i: usize| CatalogEntry {
            project_id: format!("p{i}"),
            org_did: "did:key:zorg".into(),
            title: String::new(),
            terms_tx: TxRef { block_height: 1, tx_index: 0, tx_id: "t".into() },
            requires_enrollment: false,
        };
        let catalog = |n: usize| Catalog { entries: (0..n).map(entry).collect() };
        assert_eq!(check_catalog_privacy(&catalog(12), 10), CatalogCheck::Ok);
        assert_eq!(check_catalog_privacy(&catalog(9), 10), CatalogCheck::Abort { size: 9, threshold: 10 });
        assert_eq!(check_catalog_privacy(&catalog(1), 1), CatalogCheck::Ok);

        let mut w = participant(0);
        assert!(matches!(w.herd_privacy_gate(), Err(WalletError::NoCatalog)));
        w.observe_catalog(&catalog(9));
        assert!(matches!(w.herd_privacy_gate(), Err(WalletError::HerdPrivacy { size: 9, threshold: 10 })));
        w.observe_catalog(&catalog(10));
        assert!(w.herd_privacy_gate().is_ok());
    }
}
