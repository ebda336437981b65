use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::world::{ControlMode, PairOutcome, World};
use super::{HarnessError, ScenarioConfig, Summary};
use crate::identity::Digest;
use crate::ledger::{ConsentState, TxRef};
use crate::portal::PortalError;
use crate::wallet::{local_consent_history, ConsentField, DossierStatus, HistoryStatus};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairFailure {
    pub participant: usize,
    pub project: usize,
    pub error: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlowReport {
    pub pairs_attempted: usize,
    pub accepted: usize,
    pub failures: Vec<PairFailure>,
    pub org_failures: Vec<String>,
    pub outcomes: Vec<PairOutcome>,
    pub ledger_height: u64,
    pub terms_records: usize,
    pub consent_records: usize,
    pub valid_proofs: usize,
    /// One terms record per project and exactly one valid proof per
    /// accepted pair.
    pub state_consistent: bool,
    /// Wall-clock figures; not part of any transcript.
    pub pair_ms: Summary,
    pub elapsed_ms: f64,
}

impl FlowReport {
    pub fn all_accepted(&self) -> bool {
        self.failures.is_empty() && self.accepted == self.pairs_attempted
    }
}

/// Every participant joins every project. Sequential runs interleave all
/// pairs in one seeded order; concurrent runs give each participant a
/// thread and its own seeded project order.
pub fn run_consent_flow(config: &ScenarioConfig) -> Result<(World, FlowReport), HarnessError> {
    let world = World::new(config.clone())?;
    let pairs: Vec<(usize, usize)> =
        (0..config.n_participants).flat_map(|p| (0..config.n_projects).map(move |j| (p, j))).collect();
    let report = run_pairs(&world, pairs, ControlMode::Honest);
    Ok((world, report))
}

pub(crate) fn run_pairs(world: &World, mut pairs: Vec<(usize, usize)>, mode: ControlMode) -> FlowReport {
    let started = Instant::now();
    let mut results: Vec<(usize, usize, f64, Result<PairOutcome, HarnessError>)> = Vec::new();
    if world.config.concurrent {
        let mut per_participant: Vec<Vec<usize>> = vec![vec![]; world.participants.len()];
        for (p, j) in &pairs {
            per_participant[*p].push(*j);
        }
        for list in per_participant.iter_mut() {
            world.shuffle(list);
        }
        let collected = parking_lot::Mutex::new(Vec::new());
        std::thread::scope(|scope| {
            for (p, projects) in per_participant.iter().enumerate() {
                let collected = &collected;
                scope.spawn(move || {
                    for &j in projects {
                        let t = Instant::now();
                        let r = world.establish_consent(p, j, mode);
                        collected.lock().push((p, j, t.elapsed().as_secs_f64() * 1e3, r));
                    }
                });
            }
        });
        results = collected.into_inner();
    } else {
        world.shuffle(&mut pairs);
        for (p, j) in pairs {
            let t = Instant::now();
            let r = world.establish_consent(p, j, mode);
            results.push((p, j, t.elapsed().as_secs_f64() * 1e3, r));
        }
    }
    let pairs_attempted = results.len();
    let mut outcomes = vec![];
    let mut failures = vec![];
    let mut pair_ms = vec![];
    for (p, j, ms, r) in results {
        pair_ms.push(ms);
        match r {
            Ok(o) if o.accepted => outcomes.push(o),
            Ok(_) => failures.push(PairFailure { participant: p, project: j, error: "package rejected".into() }),
            Err(e) => failures.push(PairFailure { participant: p, project: j, error: e.to_string() }),
        }
    }
    outcomes.sort_by_key(|o| (o.participant, o.project));
    let snapshot = world.ledger.snapshot();
    let terms_records = snapshot.terms_records().count();
    let consent_records = snapshot.consent_records().count();
    let valid_proofs = snapshot.consent_records().filter(|r| r.state == ConsentState::Valid).count();
    let mut per_project_terms = vec![0usize; world.projects.len()];
    for t in snapshot.terms_records() {
        if let Some(j) = world.project_index(&t.project_id) {
            per_project_terms[j] += 1;
        }
    }
    let proofs_valid = outcomes.iter().all(|o| snapshot.consent(&o.proof).is_some_and(|r| r.state == ConsentState::Valid));
    let state_consistent = per_project_terms.iter().all(|c| *c == 1)
        && terms_records == world.projects.len()
        && valid_proofs == outcomes.len()
        && consent_records == outcomes.len()
        && proofs_valid;
    FlowReport {
        pairs_attempted,
        accepted: outcomes.len(),
        failures,
        org_failures: world.failures.lock().clone(),
        outcomes,
        ledger_height: world.ledger.height(),
        terms_records,
        consent_records,
        valid_proofs,
        state_consistent,
        pair_ms: Summary::of(&pair_ms),
        elapsed_ms: started.elapsed().as_secs_f64() * 1e3,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RevocationReport {
    pub established: usize,
    pub revoked: usize,
    /// Revoked consents the organization refused when the package was
    /// presented again.
    pub revoked_then_rejected: usize,
    pub updated: usize,
    /// Updates where the old proof is revoked, points at the new one, and
    /// the new package is accepted.
    pub updates_superseded: usize,
    pub error_paths: Vec<String>,
    /// Portal history, wallet history and ledger agree for every
    /// participant.
    pub consistent: bool,
}

/// Establish consents, then exercise revocation and supersede-and-replace
/// updates for a third of the participants each.
pub fn run_revocation_flow(config: &ScenarioConfig) -> Result<(World, RevocationReport), HarnessError> {
    let (world, flow) = run_consent_flow(config)?;
    let mut report = RevocationReport {
        established: flow.accepted,
        revoked: 0,
        revoked_then_rejected: 0,
        updated: 0,
        updates_superseded: 0,
        error_paths: vec![],
        consistent: true,
    };
    for (i, participant) in world.participants.iter().enumerate() {
        let Some(target) = flow.outcomes.iter().find(|o| o.participant == i) else { continue };
        match i % 3 {
            0 => {
                let session = participant.lock().session.token.clone();
                world.portal.request_revoke(&session, &target.consent_tx)?;
                participant.lock().wallet.set_status(&target.proof, DossierStatus::Revoked)?;
                report.revoked += 1;
                if !world.resend_package(i, target.project, &target.proof)? {
                    report.revoked_then_rejected += 1;
                }
            }
            1 => {
                let new_proof = update_consent(&world, i, target.project, &target.proof, &target.consent_tx)?;
                report.updated += 1;
                let old = world.ledger.query_proof(&target.proof)?;
                let accepted = world.resend_package(i, target.project, &new_proof)?;
                if old.state == ConsentState::Revoked && old.superseded_by == Some(new_proof) && accepted {
                    report.updates_superseded += 1;
                }
            }
            _ => {}
        }
    }

    // A revoke for a consent that was never published.
    let session = world.participants[0].lock().session.token.clone();
    let bogus = TxRef { block_height: u64::MAX, tx_index: 0, tx_id: "0".repeat(64) };
    match world.portal.request_revoke(&session, &bogus) {
        Err(e @ PortalError::Unauthorized) => report.error_paths.push(format!("revoke of unpublished consent: {e}")),
        other => {
            report.consistent = false;
            report.error_paths.push(format!("revoke of unpublished consent unexpectedly returned {other:?}"));
        }
    }

    for participant in &world.participants {
        let p = participant.lock();
        let history = world.portal.consent_history(&p.session.token)?;
        for row in local_consent_history(&p.wallet, &history) {
            let ledger_state = world.ledger.query_proof(&row.proof).map(|r| r.state).ok();
            let expected = match row.status {
                HistoryStatus::Valid => Some(ConsentState::Valid),
                HistoryStatus::Revoked => Some(ConsentState::Revoked),
                _ => None,
            };
            if expected.is_none() || ledger_state != expected {
                report.consistent = false;
            }
        }
    }
    Ok((world, report))
}

/// Supersede-and-replace one consent with freshly drawn choices.
fn update_consent(world: &World, p_idx: usize, project_idx: usize, old_proof: &Digest, old_tx: &TxRef) -> Result<Digest, HarnessError> {
    let org_did = world.orgs[world.projects[project_idx].org].lock().wallet.public_did().text().to_owned();
    let org_doc = world.registry.resolve_public(&org_did)?;
    let mut p = world.participants[p_idx].lock();
    let fields = p.wallet.dossier(old_proof).map(|d| d.form.fields.clone()).unwrap_or_default();
    let choices = fields.iter().map(|f| ConsentField { name: f.name.clone(), value: "declined".into() }).collect();
    let (_, new_proof) = p.wallet.revise_consent(old_proof, choices, &org_doc)?;
    let tx = world.portal.request_update(&p.session.token, old_tx, new_proof)?;
    p.wallet.record_consent_tx(&new_proof, tx)?;
    p.wallet.set_status(old_proof, DossierStatus::Revoked)?;
    Ok(new_proof)
}
