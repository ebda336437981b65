//! Encrypted-at-rest wallet file.
//!
//! Layout: `CCNW` magic, one version byte, 16-byte PBKDF2 salt, 12-byte
//! nonce, then the ChaCha20-Poly1305 ciphertext of the wallet's canonical
//! JSON. The header is bound as associated data.

use std::collections::{BTreeMap, HashSet, VecDeque};
use std::path::Path;
use std::sync::Arc;

use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::*;
use crate::canonical::{self, b64};
use crate::identity::KeyPair;

pub const WALLET_MAGIC: &[u8; 4] = b"CCNW";
const FORMAT_VERSION: u8 = 1;
const KDF_ROUNDS: u32 = 100_000;
const HEADER_LEN: usize = 4 + 1 + 16 + 12;

#[derive(Serialize, Deserialize)]
struct Seed(#[serde(with = "b64")] Vec<u8>);

impl Seed {
    fn of(did: &Did) -> Seed {
        Seed(did.keys().expect("wallet DIDs carry keys").seed().to_vec())
    }

    fn restore(&self, kind: DidKind) -> Result<Did, WalletError> {
        let seed: [u8; 32] = self.0.as_slice().try_into().map_err(|_| WalletError::Store("bad key length".into()))?;
        Ok(Did::from_keys(kind, KeyPair::from_seed(&seed)))
    }
}

#[derive(Serialize, Deserialize)]
struct WalletFile {
    format: String,
    role: WalletRole,
    public_seed: Seed,
    project_identities: BTreeMap<String, Seed>,
    pool: Vec<Seed>,
    issued_private: Vec<String>,
    signed_forms: BTreeMap<String, PrivateConsentForm>,
    consent_store: Vec<ConsentDossier>,
    last_catalog_size: Option<usize>,
    projects: BTreeMap<String, PublishedProject>,
    connections: BTreeMap<String, String>,
    accepted: Vec<AcceptedConsent>,
    k_threshold: usize,
    preseed_dids: usize,
}

fn derive_key(passphrase: &str, salt: &[u8]) -> Key {
    let mut key = [0u8; 32];
    pbkdf2::pbkdf2_hmac::<sha2::Sha256>(passphrase.as_bytes(), salt, KDF_ROUNDS, &mut key);
    Key::from(key)
}

pub fn save_wallet(wallet: &mut Wallet, path: &Path, passphrase: &str) -> Result<(), WalletError> {
    let mut issued: Vec<String> = wallet.issued_private.iter().cloned().collect();
    issued.sort();
    let file = WalletFile {
        format: "ccn-wallet".into(),
        role: wallet.role,
        public_seed: Seed::of(&wallet.public_did),
        project_identities: wallet.project_identities.iter().map(|(p, d)| (p.clone(), Seed::of(d))).collect(),
        pool: wallet.pool.iter().map(Seed::of).collect(),
        issued_private: issued,
        signed_forms: wallet.signed_forms.clone(),
        consent_store: wallet.consent_store.clone(),
        last_catalog_size: wallet.last_catalog_size,
        projects: wallet.projects.clone(),
        connections: wallet.connections.clone(),
        accepted: wallet.accepted.clone(),
        k_threshold: wallet.config.k_threshold,
        preseed_dids: wallet.config.preseed_dids,
    };
    let plain = canonical::to_vec(&file);

    let mut header = Vec::with_capacity(HEADER_LEN);
    header.extend_from_slice(WALLET_MAGIC);
    header.push(FORMAT_VERSION);
    let mut salt_nonce = [0u8; 28];
    wallet.rng.fill_bytes(&mut salt_nonce);
    header.extend_from_slice(&salt_nonce);

    let cipher = ChaCha20Poly1305::new(&derive_key(passphrase, &header[5..21]));
    let ct = cipher
        .encrypt(Nonce::from_slice(&header[21..33]), Payload { msg: &plain, aad: &header })
        .map_err(|_| WalletError::Store("encryption failed".into()))?;
    header.extend_from_slice(&ct);
    std::fs::write(path, header).map_err(|e| WalletError::Store(e.to_string()))
}

pub fn load_wallet(
    path: &Path,
    passphrase: &str,
    rng: impl WalletRng + 'static,
    clock: Arc<dyn Clock>,
) -> Result<Wallet, WalletError> {
    let bytes = std::fs::read(path).map_err(|e| WalletError::Store(e.to_string()))?;
    if bytes.len() < HEADER_LEN || &bytes[..4] != WALLET_MAGIC {
        return Err(WalletError::Store("not a wallet file".into()));
    }
    if bytes[4] != FORMAT_VERSION {
        return Err(WalletError::Store(format!("unsupported wallet version {}", bytes[4])));
    }
    let (header, ct) = bytes.split_at(HEADER_LEN);
    let cipher = ChaCha20Poly1305::new(&derive_key(passphrase, &header[5..21]));
    let plain = cipher
        .decrypt(Nonce::from_slice(&header[21..33]), Payload { msg: ct, aad: header })
        .map_err(|_| WalletError::Store("wrong passphrase or corrupted file".into()))?;
    let file: WalletFile = canonical::from_slice(&plain).map_err(|e| WalletError::Store(e.to_string()))?;

    let mut project_identities = BTreeMap::new();
    for (project, seed) in &file.project_identities {
        project_identities.insert(project.clone(), seed.restore(DidKind::Private)?);
    }
    let pool = file.pool.iter().map(|s| s.restore(DidKind::Private)).collect::<Result<VecDeque<_>, _>>()?;

    Ok(Wallet {
        role: file.role,
        public_did: file.public_seed.restore(DidKind::Public)?,
        project_identities,
        pool,
        issued_private: file.issued_private.into_iter().collect::<HashSet<_>>(),
        signed_forms: file.signed_forms,
        consent_store: file.consent_store,
        last_catalog_size: file.last_catalog_size,
        projects: file.projects,
        connections: file.connections,
        accepted: file.accepted,
        config: WalletConfig { k_threshold: file.k_threshold, preseed_dids: file.preseed_dids },
        rng: Box::new(rng),
        clock,
    })
}
