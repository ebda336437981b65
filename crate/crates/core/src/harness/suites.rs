use std::collections::BTreeMap;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::flows::run_consent_flow;
use super::world::World;
use super::{sub_seed, HarnessError, ScenarioConfig};
use crate::canonical;
use crate::enrollment::Warrant;
use crate::identity::{digest, seal_envelope, sign, Digest};
use crate::ledger::{ConsentState, QueryResult};
use crate::portal::{AuthToken, ForgetScope, PortalError, ProfileRole};
use crate::wallet::{ConsentField, ConsentPackage, PrivateConsentForm};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NonRepudiationReport {
    pub tampered: usize,
    pub tampered_accepted: usize,
    pub rejections: BTreeMap<String, usize>,
    /// Warranted investigation tied the consent to the participant's
    /// public DID.
    pub participant_denial_refuted: bool,
    /// With enrollment on, the authority revealed the enrolled identity.
    pub identity_revealed: bool,
    /// The participant's stored form reproduced the on-ledger proof and
    /// carries a valid organization signature over published terms.
    pub org_denial_refuted: bool,
}

const TAMPER_KINDS: usize = 9;

/// Tamper with honest packages in nine ways, then run both denial
/// procedures. Enrollment is switched on for the run.
pub fn non_repudiation_suite(config: &ScenarioConfig, tampered: usize) -> Result<NonRepudiationReport, HarnessError> {
    let config = ScenarioConfig { enrollment: true, concurrent: false, ..config.clone() };
    let (world, flow) = run_consent_flow(&config)?;
    if flow.outcomes.len() < 2 {
        return Err(HarnessError::Config("need at least two consents".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(sub_seed(config.seed, "tamper", 0));
    let mut report = NonRepudiationReport {
        tampered: 0,
        tampered_accepted: 0,
        rejections: BTreeMap::new(),
        participant_denial_refuted: false,
        identity_revealed: false,
        org_denial_refuted: false,
    };

    for t in 0..tampered {
        let o = &flow.outcomes[t % flow.outcomes.len()];
        let other = &flow.outcomes[(t + 1) % flow.outcomes.len()];
        let proj = &world.projects[o.project];
        let org_did = world.orgs[proj.org].lock().wallet.public_did().text().to_owned();
        let org_doc = world.registry.resolve_public(&org_did)?;
        let (honest, other_package, form) = {
            let mut p = world.participants[o.participant].lock();
            let (honest, _) = p.wallet.consent_package(&o.proof, &org_doc)?;
            let form = p.wallet.dossier(&o.proof).map(|d| d.form.clone()).expect("dossier exists");
            drop(p);
            let mut q = world.participants[other.participant].lock();
            let other_doc = world.registry.resolve_public(
                &world.orgs[world.projects[other.project].org].lock().wallet.public_did().text().to_owned(),
            )?;
            let (other_package, _) = q.wallet.consent_package(&other.proof, &other_doc)?;
            (honest, other_package, form)
        };
        let participant_did = world.participants[o.participant].lock().wallet.project_identity(&proj.project_id).cloned().expect("bound DID");

        let reseal = |form: &PrivateConsentForm, rng: &mut ChaCha20Rng| -> Result<ConsentPackage, HarnessError> {
            let env = seal_envelope(&form.to_bytes(), &participant_did, &org_doc, false, rng)?;
            Ok(ConsentPackage { proof: digest(&env.to_bytes()), envelope: env, consent_tx: o.consent_tx.clone() })
        };
        let mut package = honest.clone();
        match t % TAMPER_KINDS {
            0 => {
                let i = rng.gen_range(0..package.envelope.ct.len());
                package.envelope.ct[i] ^= 1 << rng.gen_range(0..8);
            }
            1 => {
                let i = rng.gen_range(0..package.envelope.ct.len());
                package.envelope.ct[i] ^= 0x80;
                package.proof = digest(&package.envelope.to_bytes());
            }
            2 => package.proof = other.proof,
            3 => package.consent_tx = other.consent_tx.clone(),
            4 => {
                // Choices altered after signing.
                let mut f = form.clone();
                f.choices[0].value = if f.choices[0].value == "granted" { "declined" } else { "granted" }.into();
                package = reseal(&f, &mut rng)?;
            }
            5 => {
                // Organization-signed terms altered, participant re-signs.
                let mut f = form.clone();
                f.fields.push(ConsentField { name: "extra".into(), value: "Unconditional data sale".into() });
                f.choices.push(ConsentField { name: "extra".into(), value: "granted".into() });
                f.participant_signature = Some(sign(&f.participant_signed_bytes(), &participant_did)?);
                package = reseal(&f, &mut rng)?;
            }
            6 => package = other_package.clone(),
            7 => package.envelope = other_package.envelope.clone(),
            _ => {
                // A validly dual-signed form that was never published.
                let mut f = form.clone();
                f.completed_at = f.completed_at.map(|c| c + 1);
                f.participant_signature = Some(sign(&f.participant_signed_bytes(), &participant_did)?);
                package = reseal(&f, &mut rng)?;
            }
        }
        let org = world.orgs[proj.org].lock();
        report.tampered += 1;
        match org.wallet.verify_consent_package(&package, &o.private_did, &world.ledger) {
            Ok(_) => report.tampered_accepted += 1,
            Err(r) => *report.rejections.entry(format!("{r:?}")).or_default() += 1,
        }
    }

    // Participant denial: the organization holds an accepted package; a
    // warrant on the proof makes the portal reveal the submitting public
    // DID, and a warrant on that DID makes the authority reveal identity.
    let o = &flow.outcomes[0];
    let accepted = {
        let org = world.orgs[world.projects[o.project].org].lock();
        org.wallet.accepted_consents().iter().find(|a| a.proof == o.proof).cloned()
    };
    if let Some(a) = accepted {
        let now = world.clock.now_ms();
        let on_proof = Warrant::issue(&world.court, &a.proof.to_hex(), "participant disputes consent", now)?;
        let revealed = world.portal.investigate_proof(&a.proof, &on_proof)?;
        let (public, evidence) = {
            let p = world.participants[o.participant].lock();
            (p.wallet.public_did().text().to_owned(), p.evidence.clone())
        };
        report.participant_denial_refuted = revealed == public;
        if let Some(authority) = &world.authority {
            let on_did = Warrant::issue(&world.court, &revealed, "participant disputes consent", now)?;
            report.identity_revealed = authority.investigate(&revealed, Some(&on_did))? == digest(&evidence).to_hex();
        }
    }

    // Organization denial: regenerate the proof from the wallet and check
    // it against the ledger and the organization's signature.
    {
        let p = world.participants[o.participant].lock();
        let dossier = p.wallet.dossier(&o.proof).expect("dossier exists");
        let regenerated = p.wallet.regenerate_proof(&o.proof);
        let on_ledger = matches!(
            world.ledger.query_tx(&o.consent_tx),
            Ok(QueryResult::Consent(r)) if Some(r.key) == regenerated && r.state == ConsentState::Valid
        );
        let org_key = world.registry.resolve_public(&dossier.form.org_did)?.verification_key;
        let org_signed =
            dossier.form.verify_org_signature() && dossier.form.org_signature.signer == dossier.form.org_did && {
                crate::identity::verify(&dossier.form.org_signed_bytes(), &dossier.form.org_signature, &org_key)
            };
        let terms_published = matches!(
            world.ledger.query_tx(&dossier.form.terms_tx),
            Ok(QueryResult::Terms(t)) if t.org_did == dossier.form.org_did && t.project_id == dossier.form.project_id
        );
        report.org_denial_refuted = on_ledger && org_signed && terms_published;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RtbfReport {
    pub joined_per_participant: usize,
    /// Associations left for the participant who forgot one consent.
    pub remaining_after_single: usize,
    pub forgotten: usize,
    pub orphans_queryable: bool,
    /// (public DID, proof) co-occurrences for forgotten items.
    pub cooccurrences: usize,
    /// Co-occurrences for items nobody forgot; shows the scan can see.
    pub control_cooccurrences: usize,
    pub stores_scanned: Vec<String>,
}

fn contains(hay: &[u8], needle: &[u8]) -> bool {
    !needle.is_empty() && hay.windows(needle.len()).any(|w| w == needle)
}

fn proof_encodings(p: &Digest) -> Vec<Vec<u8>> {
    vec![p.to_hex().into_bytes(), canonical::b64_encode(&p.0).into_bytes(), p.0.to_vec()]
}

/// Participant 0 forgets one consent, participant 1 forgets all; then
/// every store is scanned for surviving associations.
pub fn rtbf_suite(config: &ScenarioConfig) -> Result<RtbfReport, HarnessError> {
    let temp = tempfile::tempdir()?;
    let dir: PathBuf = config.storage_dir.clone().unwrap_or_else(|| temp.path().to_path_buf());
    let config = ScenarioConfig {
        n_participants: config.n_participants.max(3),
        n_projects: config.n_projects.max(3),
        storage_dir: Some(dir.clone()),
        concurrent: false,
        ..config.clone()
    };
    let (world, flow) = run_consent_flow(&config)?;
    let mine = |i: usize| flow.outcomes.iter().filter(move |o| o.participant == i);
    let joined = mine(0).count();

    let s0 = world.participants[0].lock().session.token.clone();
    let first = mine(0).next().ok_or_else(|| HarnessError::Protocol("participant 0 has no consent".into()))?;
    world.portal.forget_me(&s0, &ForgetScope::One { consent_tx: first.consent_tx.clone() })?;
    let remaining_after_single = world.portal.consent_history(&s0)?.len();
    let s1 = world.participants[1].lock().session.token.clone();
    world.portal.forget_me(&s1, &ForgetScope::All)?;

    let mut forgotten: Vec<(String, Digest)> = vec![(world.participant_public_did(0), first.proof)];
    forgotten.extend(mine(1).map(|o| (world.participant_public_did(1), o.proof)));
    let control: Vec<(String, Digest)> = mine(2).map(|o| (world.participant_public_did(2), o.proof)).collect();
    let orphans_queryable = forgotten.iter().all(|(_, p)| world.ledger.query_proof(p).is_ok());

    let mut stores: Vec<(String, Vec<u8>)> = vec![];
    let mut files = vec![];
    collect_files(&dir, &mut files)?;
    for f in files {
        stores.push((f.display().to_string(), std::fs::read(&f)?));
    }
    stores.push(("portal request log and store".into(), world.portal.persisted_bytes()?));
    stores.push(("mediator log and queues".into(), world.mediator.persisted_bytes()?));
    stores.push(("ledger journal".into(), world.ledger.journal_bytes()));

    let count = |items: &[(String, Digest)]| -> usize {
        let mut n = 0;
        for (_, blob) in &stores {
            for (did, proof) in items {
                if contains(blob, did.as_bytes()) && proof_encodings(proof).iter().any(|e| contains(blob, e)) {
                    n += 1;
                }
            }
        }
        n
    };
    Ok(RtbfReport {
        joined_per_participant: joined,
        remaining_after_single,
        forgotten: forgotten.len(),
        orphans_queryable,
        cooccurrences: count(&forgotten),
        control_cooccurrences: count(&control),
        stores_scanned: stores.into_iter().map(|(n, _)| n).collect(),
    })
}

fn collect_files(dir: &std::path::Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(&path, out)?;
        } else {
            out.push(path);
        }
    }
    out.sort();
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthHygieneReport {
    pub honest_logins: usize,
    pub honest_failures: usize,
    pub replay_attempts: usize,
    pub replay_accepted: usize,
    pub expired_attempts: usize,
    pub expired_accepted: usize,
    pub error_kinds: BTreeMap<String, usize>,
}

/// Randomly interleave honest logins, replays of earlier tokens against
/// login and registration, and answers to challenges past their lifetime.
pub fn auth_hygiene_suite(config: &ScenarioConfig, replays: usize, expired: usize) -> Result<AuthHygieneReport, HarnessError> {
    let config = ScenarioConfig { concurrent: false, enrollment: false, storage_dir: None, ..config.clone() };
    let world = World::new(config.clone())?;
    let clock = world.manual_clock.clone().ok_or_else(|| HarnessError::Config("needs a manual clock".into()))?;
    let ttl = world.portal.config().challenge_ttl_ms;
    let mut rng = ChaCha20Rng::seed_from_u64(sub_seed(config.seed, "auth-schedule", 0));
    let mut schedule: Vec<bool> = std::iter::repeat_n(true, replays).chain(std::iter::repeat_n(false, expired)).collect();
    world.shuffle(&mut schedule);

    let mut report = AuthHygieneReport {
        honest_logins: 0,
        honest_failures: 0,
        replay_attempts: 0,
        replay_accepted: 0,
        expired_attempts: 0,
        expired_accepted: 0,
        error_kinds: BTreeMap::new(),
    };
    let mut used: Vec<AuthToken> = vec![];
    let n = world.participants.len();
    for is_replay in schedule {
        let i = rng.gen_range(0..n);
        let p = world.participants[i].lock();
        let did = p.wallet.public_did().clone();
        if is_replay {
            let ch = world.portal.challenge(did.text());
            let token = p.wallet.did_auth_response(&ch)?;
            match world.portal.authenticate(&token) {
                Ok(_) => report.honest_logins += 1,
                Err(_) => report.honest_failures += 1,
            }
            used.push(token);
            let victim = used[rng.gen_range(0..used.len())].clone();
            clock.advance(rng.gen_range(0..ttl / 2));
            report.replay_attempts += 1;
            let outcome = if rng.gen_bool(0.5) {
                world.portal.authenticate(&victim)
            } else {
                world.portal.register(&victim, None, ProfileRole::Participant)
            };
            record(&mut report.error_kinds, &mut report.replay_accepted, outcome);
        } else {
            let ch = world.portal.challenge(did.text());
            clock.advance(ttl + 1 + rng.gen_range(0..10 * ttl));
            let token = p.wallet.did_auth_response(&ch)?;
            report.expired_attempts += 1;
            record(&mut report.error_kinds, &mut report.expired_accepted, world.portal.authenticate(&token));
        }
    }
    Ok(report)
}

fn record<T>(kinds: &mut BTreeMap<String, usize>, accepted: &mut usize, outcome: Result<T, PortalError>) {
    match outcome {
        Ok(_) => *accepted += 1,
        Err(e) => *kinds.entry(e.kind().to_owned()).or_default() += 1,
    }
}
