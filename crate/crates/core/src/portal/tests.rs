use super::*;
use crate::clock::ManualClock;
use crate::enrollment::EnrollmentAuthority;
use crate::identity::{create_did, digest, DidKind, KeyPair};
use crate::ledger::{Ledger, LedgerConfig, Role, TermsSubmission};

struct Env {
    portal: Portal,
    ledger: Arc<Ledger>,
    org: LedgerClient,
    clock: Arc<ManualClock>,
    rng: ChaCha20Rng,
}

fn env_with(config: PortalConfig) -> Env {
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    let ledger = Arc::new(Ledger::new(LedgerConfig::immediate()));
    let org = LedgerClient::new("org-1", Role::Organization, KeyPair::generate(&mut rng).unwrap(), ledger.clone())
        .admitted()
        .unwrap();
    let client = LedgerClient::new("portal", Role::Portal, KeyPair::generate(&mut rng).unwrap(), ledger.clone())
        .admitted()
        .unwrap();
    let clock = Arc::new(ManualClock::new(1_000));
    let did = create_did(DidKind::Public, &mut rng).unwrap();
    let portal = Portal::new(did, config, client, clock.clone(), 9).unwrap();
    Env { portal, ledger, org, clock, rng }
}

fn env() -> Env {
    env_with(PortalConfig::default())
}

fn login(portal: &Portal, did: &Did, role: ProfileRole) -> Session {
    let ch = portal.challenge(did.text());
    let token = AuthToken::sign(&ch, did, 0).unwrap();
    portal.register(&token, None, role).unwrap()
}

fn proof(n: u8) -> Digest {
    digest(&[n; 8])
}

#[test]
fn register_then_login() {
    let mut e = env();
    let p = create_did(DidKind::Public, &mut e.rng).unwrap();
    let s = login(&e.portal, &p, ProfileRole::Participant);
    assert_eq!(e.portal.session(&s.token).unwrap().public_did, p.text());
    let ch = e.portal.challenge(p.text());
    let token = AuthToken::sign(&ch, &p, 0).unwrap();
    assert!(matches!(e.portal.register(&token, None, ProfileRole::Participant), Err(PortalError::AlreadyRegistered(_))));
    let ch = e.portal.challenge(p.text());
    let s2 = e.portal.authenticate(&AuthToken::sign(&ch, &p, 0).unwrap()).unwrap();
    assert_ne!(s.token, s2.token);
}

#[test]
fn challenge_replay_expiry_and_forgery() {
    let mut e = env();
    let p = create_did(DidKind::Public, &mut e.rng).unwrap();
    let intruder = create_did(DidKind::Public, &mut e.rng).unwrap();
    login(&e.portal, &p, ProfileRole::Participant);

    let ch = e.portal.challenge(p.text());
    let token = AuthToken::sign(&ch, &p, 0).unwrap();
    e.portal.authenticate(&token).unwrap();
    assert_eq!(e.portal.authenticate(&token).unwrap_err(), PortalError::ChallengeReplayed);

    let ch = e.portal.challenge(p.text());
    let forged = AuthToken::sign(&ch, &intruder, 0).unwrap();
    assert_eq!(e.portal.authenticate(&forged).unwrap_err(), PortalError::BadSignature);
    let mut altered = AuthToken::sign(&ch, &p, 0).unwrap();
    altered.issued_at += 1;
    assert_eq!(e.portal.authenticate(&altered).unwrap_err(), PortalError::BadSignature);
    e.portal.authenticate(&AuthToken::sign(&ch, &p, 0).unwrap()).unwrap();

    let ch = e.portal.challenge(p.text());
    e.clock.advance(120_001);
    let late = AuthToken::sign(&ch, &p, 0).unwrap();
    assert_eq!(e.portal.authenticate(&late).unwrap_err(), PortalError::ChallengeExpired);
    assert_eq!(e.portal.authenticate(&late).unwrap_err(), PortalError::ChallengeReplayed);

    let mut unknown = late.clone();
    unknown.nonce = vec![0; 32];
    assert_eq!(e.portal.authenticate(&unknown).unwrap_err(), PortalError::UnknownChallenge);
}

#[test]
fn unregistered_login_refused() {
    let mut e = env();
    let p = create_did(DidKind::Public, &mut e.rng).unwrap();
    let ch = e.portal.challenge(p.text());
    assert_eq!(e.portal.authenticate(&AuthToken::sign(&ch, &p, 0).unwrap()).unwrap_err(), PortalError::NotRegistered);
}

#[test]
fn enrollment_gate() {
    let mut rng = ChaCha20Rng::seed_from_u64(77);
    let court = create_did(DidKind::Public, &mut rng).unwrap();
    let authority = EnrollmentAuthority::new(
        create_did(DidKind::Public, &mut rng).unwrap(),
        court.verification_key().to_vec(),
        Arc::new(ManualClock::new(0)),
    );
    let config = PortalConfig {
        enrollment_required: true,
        enrollment_authority_key: Some(authority.verification_key()),
        ..PortalConfig::default()
    };
    let mut e = env_with(config);
    let p = create_did(DidKind::Public, &mut e.rng).unwrap();
    let other = create_did(DidKind::Public, &mut e.rng).unwrap();

    let ch = e.portal.challenge(p.text());
    let token = AuthToken::sign(&ch, &p, 0).unwrap();
    assert_eq!(e.portal.register(&token, None, ProfileRole::Participant).unwrap_err(), PortalError::EnrollmentRequired);

    let wrong = authority.enroll(b"someone else", other.text()).unwrap();
    let ch = e.portal.challenge(p.text());
    let token = AuthToken::sign(&ch, &p, 0).unwrap();
    assert_eq!(e.portal.register(&token, Some(&wrong), ProfileRole::Participant).unwrap_err(), PortalError::InvalidCredential);

    let vc = authority.enroll(b"passport", p.text()).unwrap();
    let ch = e.portal.challenge(p.text());
    let token = AuthToken::sign(&ch, &p, 0).unwrap();
    e.portal.register(&token, Some(&vc), ProfileRole::Participant).unwrap();
    assert_eq!(e.portal.profile(p.text()).unwrap().enrollment_vc, Some(vc.reference()));
}

#[test]
fn proxy_publish_hides_participant_from_ledger() {
    let mut e = env();
    let p = create_did(DidKind::Public, &mut e.rng).unwrap();
    let s = login(&e.portal, &p, ProfileRole::Participant);
    let tx = e.portal.proxy_publish(&PublishRequest { session: s.token.clone(), proof: proof(1) }).unwrap();
    let record = e.ledger.query_proof(&proof(1)).unwrap();
    assert_eq!(record.publisher, "portal");
    assert_eq!(record.state, ConsentState::Valid);
    let journal = e.ledger.journal_bytes();
    assert!(!journal.windows(p.text().len()).any(|w| w == p.text().as_bytes()));
    let history = e.portal.consent_history(&s.token).unwrap();
    assert_eq!(history, vec![HistoryItem { proof: proof(1), consent_tx: tx, status: ConsentState::Valid }]);
    assert!(matches!(
        e.portal.proxy_publish(&PublishRequest { session: s.token, proof: proof(1) }),
        Err(PortalError::Ledger(LedgerError::DuplicateKey(_)))
    ));
}

#[test]
fn publish_schema_is_closed() {
    let mut e = env();
    let p = create_did(DidKind::Public, &mut e.rng).unwrap();
    let s = login(&e.portal, &p, ProfileRole::Participant);
    let good = serde_json::json!({"session": s.token, "proof": proof(2)});
    e.portal.proxy_publish_json(good.to_string().as_bytes()).unwrap();
    let extra = serde_json::json!({"session": s.token, "proof": proof(3), "project_id": "p1"});
    assert!(matches!(e.portal.proxy_publish_json(extra.to_string().as_bytes()), Err(PortalError::Schema(_))));
}

#[test]
fn revoke_and_update_only_own_consents() {
    let mut e = env();
    let alice = create_did(DidKind::Public, &mut e.rng).unwrap();
    let bob = create_did(DidKind::Public, &mut e.rng).unwrap();
    let sa = login(&e.portal, &alice, ProfileRole::Participant);
    let sb = login(&e.portal, &bob, ProfileRole::Participant);
    let tx = e.portal.proxy_publish(&PublishRequest { session: sa.token.clone(), proof: proof(1) }).unwrap();

    let foreign = e.portal.request_revoke(&sb.token, &tx).unwrap_err();
    let mut missing = tx.clone();
    missing.tx_id = "0".repeat(64);
    let nonexistent = e.portal.request_revoke(&sa.token, &missing).unwrap_err();
    assert_eq!(foreign, PortalError::Unauthorized);
    assert_eq!(foreign, nonexistent);
    assert_eq!(e.portal.request_update(&sb.token, &tx, proof(9)).unwrap_err(), PortalError::Unauthorized);

    let new_tx = e.portal.request_update(&sa.token, &tx, proof(2)).unwrap();
    let old = e.ledger.query_proof(&proof(1)).unwrap();
    assert_eq!(old.state, ConsentState::Revoked);
    assert_eq!(old.superseded_by, Some(proof(2)));
    e.portal.request_revoke(&sa.token, &new_tx).unwrap();
    assert!(matches!(e.portal.request_revoke(&sa.token, &new_tx), Err(PortalError::Ledger(LedgerError::AlreadyRevoked(_)))));
    let statuses: Vec<_> = e.portal.consent_history(&sa.token).unwrap().iter().map(|h| h.status).collect();
    assert_eq!(statuses, vec![ConsentState::Revoked, ConsentState::Revoked]);
}

#[test]
fn forget_revokes_then_removes_link() {
    let mut e = env();
    let p = create_did(DidKind::Public, &mut e.rng).unwrap();
    let s = login(&e.portal, &p, ProfileRole::Participant);
    let t1 = e.portal.proxy_publish(&PublishRequest { session: s.token.clone(), proof: proof(1) }).unwrap();
    e.portal.proxy_publish(&PublishRequest { session: s.token.clone(), proof: proof(2) }).unwrap();

    let r = e.portal.forget_me(&s.token, &ForgetScope::One { consent_tx: t1.clone() }).unwrap();
    assert_eq!(r, ForgetReceipt { forgotten: 1, revoked: 1 });
    assert_eq!(e.ledger.query_proof(&proof(1)).unwrap().state, ConsentState::Revoked);
    assert_eq!(e.portal.consent_history(&s.token).unwrap().len(), 1);
    assert_eq!(e.portal.forget_me(&s.token, &ForgetScope::One { consent_tx: t1 }).unwrap_err(), PortalError::UnknownConsent);
    let r = e.portal.forget_me(&s.token, &ForgetScope::All).unwrap();
    assert_eq!(r, ForgetReceipt { forgotten: 1, revoked: 1 });

    let bytes = e.portal.persisted_bytes().unwrap();
    for pr in [proof(1), proof(2)] {
        assert!(!bytes.windows(64).any(|w| w == pr.to_hex().as_bytes()));
    }
}

#[test]
fn forget_without_revoke_leaves_ledger_valid() {
    let mut e = env_with(PortalConfig { forget_revokes_first: false, ..PortalConfig::default() });
    let p = create_did(DidKind::Public, &mut e.rng).unwrap();
    let s = login(&e.portal, &p, ProfileRole::Participant);
    e.portal.proxy_publish(&PublishRequest { session: s.token.clone(), proof: proof(1) }).unwrap();
    assert_eq!(e.portal.forget_me(&s.token, &ForgetScope::All).unwrap().revoked, 0);
    assert_eq!(e.ledger.query_proof(&proof(1)).unwrap().state, ConsentState::Valid);
}

#[test]
fn durable_store_survives_restart_and_forgets_physically() {
    let dir = tempfile::tempdir().unwrap();
    let config = PortalConfig { store_dir: Some(dir.path().to_path_buf()), ..PortalConfig::default() };
    let mut e = env_with(config.clone());
    let p = create_did(DidKind::Public, &mut e.rng).unwrap();
    let s = login(&e.portal, &p, ProfileRole::Participant);
    e.portal.proxy_publish(&PublishRequest { session: s.token.clone(), proof: proof(4) }).unwrap();

    let mut rng = ChaCha20Rng::seed_from_u64(6);
    let client = LedgerClient::new("portal-2", Role::Portal, KeyPair::generate(&mut rng).unwrap(), e.ledger.clone())
        .admitted()
        .unwrap();
    let reopened = Portal::new(e.portal.did().clone(), config.clone(), client, e.clock.clone(), 1).unwrap();
    assert!(reopened.profile(p.text()).is_some());
    assert_eq!(reopened.match_table()[0].items[0].proof, proof(4));
    drop(reopened);

    e.portal.forget_me(&s.token, &ForgetScope::All).unwrap();
    let needle = proof(4).to_hex();
    for f in std::fs::read_dir(dir.path()).unwrap() {
        let bytes = std::fs::read(f.unwrap().path()).unwrap();
        assert!(!bytes.windows(needle.len()).any(|w| w == needle.as_bytes()));
    }
}

#[test]
fn catalog_requires_terms_on_ledger_and_owner() {
    let mut e = env();
    let org = create_did(DidKind::Public, &mut e.rng).unwrap();
    let rival = create_did(DidKind::Public, &mut e.rng).unwrap();
    let so = login(&e.portal, &org, ProfileRole::Organization);
    let sr = login(&e.portal, &rival, ProfileRole::Organization);
    let terms_tx = e
        .org
        .publish_consent_terms(TermsSubmission {
            org_did: org.text().into(),
            project_id: "cardio".into(),
            version: 1,
            terms_digest: digest(b"terms"),
        })
        .unwrap();
    let entry = CatalogEntry {
        project_id: "cardio".into(),
        org_did: org.text().into(),
        title: "Cardiology cohort".into(),
        terms_tx: terms_tx.clone(),
        requires_enrollment: false,
    };
    let mut bogus = entry.clone();
    bogus.project_id = "other".into();
    assert_eq!(e.portal.publish_project(&so.token, bogus).unwrap_err(), PortalError::UnknownTerms);
    assert_eq!(e.portal.publish_project(&sr.token, entry.clone()).unwrap_err(), PortalError::Unauthorized);
    e.portal.publish_project(&so.token, entry.clone()).unwrap();

    let p = create_did(DidKind::Public, &mut e.rng).unwrap();
    let sp = login(&e.portal, &p, ProfileRole::Participant);
    assert_eq!(e.portal.list_projects(&sp.token, &ProjectFilter::default()).unwrap().entries, vec![entry]);
    let filtered = ProjectFilter { text: Some("oncology".into()), ..ProjectFilter::default() };
    assert!(e.portal.list_projects(&sp.token, &filtered).unwrap().entries.is_empty());
    assert_eq!(
        e.portal.proxy_publish(&PublishRequest { session: so.token, proof: proof(1) }).unwrap_err(),
        PortalError::Unauthorized
    );
}

#[test]
fn warranted_investigation() {
    let mut rng = ChaCha20Rng::seed_from_u64(8);
    let court = create_did(DidKind::Public, &mut rng).unwrap();
    let mut e = env_with(PortalConfig { warrant_issuer_key: Some(court.verification_key().to_vec()), ..PortalConfig::default() });
    let p = create_did(DidKind::Public, &mut e.rng).unwrap();
    let s = login(&e.portal, &p, ProfileRole::Participant);
    e.portal.proxy_publish(&PublishRequest { session: s.token, proof: proof(1) }).unwrap();
    let w = Warrant::issue(&court, &proof(1).to_hex(), "dispute", 0).unwrap();
    assert_eq!(e.portal.investigate_proof(&proof(1), &w).unwrap(), p.text());
    assert_eq!(e.portal.investigate_proof(&proof(2), &w).unwrap_err(), PortalError::InvalidWarrant);
    let self_issued = Warrant::issue(&p, &proof(1).to_hex(), "dispute", 0).unwrap();
    assert_eq!(e.portal.investigate_proof(&proof(1), &self_issued).unwrap_err(), PortalError::InvalidWarrant);
}

#[test]
fn concurrent_participants_do_not_block_each_other() {
    let env = env();
    let mut rng = ChaCha20Rng::seed_from_u64(11);
    let sessions: Vec<_> = (0..8)
        .map(|_| {
            let d = create_did(DidKind::Public, &mut rng).unwrap();
            login(&env.portal, &d, ProfileRole::Participant)
        })
        .collect();
    std::thread::scope(|scope| {
        for (i, s) in sessions.iter().enumerate() {
            let portal = &env.portal;
            scope.spawn(move || {
                for j in 0..5u8 {
                    portal.proxy_publish(&PublishRequest { session: s.token.clone(), proof: proof(i as u8 * 10 + j) }).unwrap();
                }
            });
        }
    });
    assert!(env.portal.match_table().iter().all(|m| m.items.len() == 5));
    assert_eq!(env.ledger.snapshot().consent_records().count(), 40);
}
