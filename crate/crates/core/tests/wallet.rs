//! Two wallets and a ledger, wired by hand.

use std::sync::Arc;

use ccn::clock::{Clock, ManualClock};
use ccn::identity::{digest, open_envelope, KeyPair};
use ccn::ledger::{Ledger, LedgerClient, LedgerConfig, Role, TermsSubmission};
use ccn::wallet::{
    load_wallet, save_wallet, Catalog, CatalogEntry, ConsentField, ConsentPackage, DossierStatus, PublishedProject, Rejection,
    Wallet, WalletConfig, WalletError, WalletRole, WireMessage,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

struct Setup {
    ledger: Arc<Ledger>,
    portal: LedgerClient,
    org: Wallet,
    participant: Wallet,
    entry: CatalogEntry,
    fields: Vec<ConsentField>,
}

fn setup(seed: u64) -> Setup {
    let clock: Arc<dyn Clock> = Arc::new(ManualClock::ticking(1_000, 1));
    let ledger = Arc::new(Ledger::new(LedgerConfig::immediate()));
    let org_client =
        LedgerClient::new("org", Role::Organization, KeyPair::from_seed(&[1; 32]), Arc::clone(&ledger)).admitted().unwrap();
    let portal = LedgerClient::new("portal", Role::Portal, KeyPair::from_seed(&[2; 32]), Arc::clone(&ledger)).admitted().unwrap();
    let mut org = Wallet::seeded(WalletRole::Organization, WalletConfig::default(), seed, clock.clone()).unwrap();
    let participant =
        Wallet::seeded(WalletRole::Participant, WalletConfig { k_threshold: 1, preseed_dids: 0 }, seed + 1, clock).unwrap();

    let fields = vec![ConsentField::new("genomics", "Sequencing of stored samples"), ConsentField::new("recontact", "Follow-up contact")];
    let terms_tx = org_client
        .publish_consent_terms(TermsSubmission {
            org_did: org.public_did().text().into(),
            project_id: "p1".into(),
            version: 1,
            terms_digest: digest(b"p1 terms"),
        })
        .unwrap();
    org.register_project(PublishedProject { project_id: "p1".into(), title: "P1".into(), terms_tx: terms_tx.clone(), fields: fields.clone() })
        .unwrap();
    let entry = CatalogEntry {
        project_id: "p1".into(),
        org_did: org.public_did().text().into(),
        title: "P1".into(),
        terms_tx,
        requires_enrollment: false,
    };
    Setup { ledger, portal, org, participant, entry, fields }
}

/// Runs the protocol up to an accepted package and returns it together
/// with the participant's private DID.
fn establish(s: &mut Setup) -> (ConsentPackage, String) {
    let org_doc = s.org.public_did().document();
    s.participant.observe_catalog(&Catalog { entries: vec![s.entry.clone()] });
    let (did, request) = s.participant.request_participation(&s.entry, &org_doc).unwrap();
    let (sender, project, accepted) = s.org.accept_connection(&request).unwrap();
    assert_eq!((sender.as_str(), project.as_str()), (did.text(), "p1"));
    assert!(matches!(s.participant.open_message(&accepted).unwrap().0, WireMessage::ConnectionAccepted { .. }));

    let (_, form_env) = s.org.build_consent_form("p1", &s.entry.terms_tx, did.text(), &s.fields).unwrap();
    let (WireMessage::ConsentForm { form }, Some(from)) = s.participant.open_message(&form_env).unwrap() else {
        panic!("expected an authenticated consent form");
    };
    assert_eq!(from, s.org.public_did().text());
    let choices = s.fields.iter().map(|f| ConsentField::new(f.name.clone(), "granted")).collect();
    let completed = s.participant.complete_and_sign_form(&form, choices).unwrap();
    let (_, proof) = s.participant.generate_consent_proof(&completed, &org_doc).unwrap();
    let tx = s.portal.publish_consent_proof(proof).unwrap();
    s.participant.record_consent_tx(&proof, tx).unwrap();

    let (package, env) = s.participant.consent_package(&proof, &org_doc).unwrap();
    let (outcome, receipt) = s.org.receive_package(&env, &s.ledger).unwrap();
    outcome.unwrap();
    let WireMessage::PackageReceipt { accepted: true, .. } = s.participant.open_message(&receipt).unwrap().0 else {
        panic!("receipt should report acceptance");
    };
    (package, did.text().to_owned())
}

#[test]
fn honest_exchange_is_accepted_and_only_the_proof_reaches_the_ledger() {
    let mut s = setup(1);
    let (package, did) = establish(&mut s);
    assert_eq!(s.org.accepted_consents().len(), 1);
    let journal = s.ledger.journal_bytes();
    let contains = |needle: &[u8]| journal.windows(needle.len()).any(|w| w == needle);
    assert!(!contains(did.as_bytes()));
    assert!(!contains(s.participant.public_did().text().as_bytes()));
    assert!(contains(package.proof.to_hex().as_bytes()));
    // The proof commits to ciphertext the organization can open.
    let (plain, _) = open_envelope(&package.envelope, s.org.public_did()).unwrap();
    assert!(String::from_utf8(plain).unwrap().contains("Sequencing of stored samples"));
}

#[test]
fn revoked_consent_is_refused_on_presentation() {
    let mut s = setup(2);
    let (package, did) = establish(&mut s);
    s.portal.revoke_consent(package.proof).unwrap();
    assert_eq!(s.org.verify_consent_package(&package, &did, &s.ledger).unwrap_err(), Rejection::NotValid);
    s.participant.set_status(&package.proof, DossierStatus::Revoked).unwrap();
    assert_eq!(s.participant.dossier(&package.proof).unwrap().status_cache, DossierStatus::Revoked);
}

#[test]
fn package_over_another_connection_is_refused() {
    let mut s = setup(3);
    let (package, _) = establish(&mut s);
    let other = s.participant.create_private_did().unwrap();
    assert_eq!(s.org.verify_consent_package(&package, other.text(), &s.ledger).unwrap_err(), Rejection::ParticipantMismatch);
}

#[test]
fn forms_for_unpublished_terms_are_not_issued() {
    let mut s = setup(4);
    let mut wrong = s.entry.terms_tx.clone();
    wrong.tx_index += 1;
    let did = s.participant.create_private_did().unwrap();
    assert!(matches!(s.org.build_consent_form("p1", &wrong, did.text(), &s.fields), Err(WalletError::TermsMismatch(_))));
    assert!(matches!(s.org.build_consent_form("p2", &s.entry.terms_tx, did.text(), &s.fields), Err(WalletError::UnknownProject(_))));
}

#[test]
fn saved_wallet_regenerates_proofs_and_rejects_wrong_passphrase() {
    let mut s = setup(5);
    let (package, did) = establish(&mut s);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("participant.wallet");
    save_wallet(&mut s.participant, &path, "correct horse").unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert!(!bytes.windows(did.len()).any(|w| w == did.as_bytes()), "wallet file is encrypted");

    let clock: Arc<dyn Clock> = Arc::new(ManualClock::ticking(5_000, 1));
    let restored = load_wallet(&path, "correct horse", ChaCha20Rng::seed_from_u64(9), clock.clone()).unwrap();
    assert_eq!(restored.public_did().text(), s.participant.public_did().text());
    assert_eq!(restored.regenerate_proof(&package.proof), Some(package.proof));
    assert_eq!(restored.project_identity("p1").map(|d| d.text().to_owned()), Some(did));
    assert!(load_wallet(&path, "wrong", ChaCha20Rng::seed_from_u64(9), clock).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    /// Any single-bit change to the sealed form is rejected, whether or not
    /// the tamperer also recomputes the proof.
    #[test]
    fn tampered_packages_are_rejected(byte in any::<prop::sample::Index>(), bit in 0u8..8, rehash in any::<bool>()) {
        let mut s = setup(6);
        let (package, did) = establish(&mut s);
        let mut bad = package.clone();
        let len = bad.envelope.ct.len() + bad.envelope.nonce.len() + bad.envelope.epk.len();
        let i = byte.index(len);
        let target = if i < bad.envelope.ct.len() {
            &mut bad.envelope.ct[i]
        } else if i < bad.envelope.ct.len() + bad.envelope.nonce.len() {
            &mut bad.envelope.nonce[i - bad.envelope.ct.len()]
        } else {
            &mut bad.envelope.epk[i - bad.envelope.ct.len() - bad.envelope.nonce.len()]
        };
        *target ^= 1 << bit;
        if rehash {
            bad.proof = digest(&bad.envelope.to_bytes());
        }
        prop_assert!(s.org.verify_consent_package(&bad, &did, &s.ledger).is_err());
    }
}
