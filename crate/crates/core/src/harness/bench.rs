use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Barrier};
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::report::{BenchReport, BenchRow, Environment, WalletBenchReport, WalletBenchRow};
use super::world::{ControlMode, World};
use super::{sub_seed, HarnessError, ScenarioConfig};
use crate::identity::{digest, sign, verify_by_signer, Digest, KeyPair};
use crate::ledger::{Ledger, LedgerClient, LedgerConfig, LedgerError, Operation, Role, Transaction};
use crate::portal::{ProjectFilter, PublishRequest};
use crate::wallet::{ConsentField, WireMessage};

/// One fixed-rate round: `n` writes per write function at `rate_tps`, then
/// reads at `query_factor` times both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRound {
    pub label: String,
    pub rate_tps: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerBenchConfig {
    pub rounds: Vec<BenchRound>,
    pub query_factor: usize,
    /// Concurrent submitters; the driver is open-loop as long as enough
    /// are idle.
    pub workers: usize,
    /// One revoke in this many is sent as a pair targeting the same proof,
    /// both endorsed before either is ordered.
    pub duplicate_every: usize,
    pub batch_size: usize,
    pub batch_timeout_ms: u64,
    pub seed: u64,
}

impl LedgerBenchConfig {
    /// Two rounds at 50 TPS × 500 and a stress round at 500 TPS × 5000,
    /// reads doubled.
    pub fn full() -> Self {
        let round = |label: &str, rate_tps, n| BenchRound { label: label.into(), rate_tps, n };
        LedgerBenchConfig {
            rounds: vec![round("run-1", 50.0, 500), round("run-2", 50.0, 500), round("stress", 500.0, 5000)],
            query_factor: 2,
            workers: 128,
            duplicate_every: 625,
            batch_size: 50,
            batch_timeout_ms: 100,
            seed: 0,
        }
    }

    /// Stress rates with fewer transactions; a few seconds per round.
    pub fn stress(n: usize, runs: usize) -> Self {
        LedgerBenchConfig {
            rounds: (1..=runs).map(|i| BenchRound { label: format!("stress-{i}"), rate_tps: 500.0, n }).collect(),
            ..Self::full()
        }
    }
}

struct Sample {
    latency: Duration,
    done: Instant,
    error: Option<LedgerError>,
}

/// Issue job `i` at `start + offsets[i]` from a pool of workers. A job
/// may submit several transactions, each yielding a sample.
fn drive<F>(offsets: &[Duration], workers: usize, job: F) -> (Instant, Vec<Sample>)
where
    F: Fn(usize) -> Vec<Result<(), LedgerError>> + Sync,
{
    let next = AtomicUsize::new(0);
    let samples = Mutex::new(Vec::with_capacity(offsets.len()));
    let start = Instant::now() + Duration::from_millis(5);
    std::thread::scope(|scope| {
        for _ in 0..workers.max(1) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= offsets.len() {
                    break;
                }
                let due = start + offsets[i];
                let now = Instant::now();
                if due > now {
                    std::thread::sleep(due - now);
                }
                let sent = Instant::now();
                let outcomes = job(i);
                let done = Instant::now();
                let mut out = samples.lock();
                for r in outcomes {
                    out.push(Sample { latency: done - sent, done, error: r.err() });
                }
            });
        }
    });
    (start, samples.into_inner())
}

fn row(round: &BenchRound, function: &str, rate: f64, start: Instant, samples: &[Sample]) -> BenchRow {
    let ms = |d: Duration| d.as_secs_f64() * 1e3;
    let succeeded = samples.iter().filter(|s| s.error.is_none()).count();
    let conflicts = samples.iter().filter(|s| s.error.as_ref().is_some_and(LedgerError::is_conflict)).count();
    let end = samples.iter().map(|s| s.done).max().unwrap_or(start);
    let span = (end - start).as_secs_f64().max(1e-9);
    let latencies: Vec<f64> = samples.iter().map(|s| ms(s.latency)).collect();
    BenchRow {
        round: round.label.clone(),
        function: function.into(),
        send_rate_tps: rate,
        succeeded,
        failed: samples.len() - succeeded,
        conflicts,
        max_latency_ms: latencies.iter().copied().fold(0.0, f64::max),
        min_latency_ms: if latencies.is_empty() { 0.0 } else { latencies.iter().copied().fold(f64::INFINITY, f64::min) },
        avg_latency_ms: latencies.iter().sum::<f64>() / latencies.len().max(1) as f64,
        throughput_tps: succeeded as f64 / span,
    }
}

fn schedule(count: usize, rate: f64) -> Vec<Duration> {
    (0..count).map(|i| Duration::from_secs_f64(i as f64 / rate)).collect()
}

fn submit_all(ledger: &Ledger, txs: Vec<Transaction>) -> Vec<Result<(), LedgerError>> {
    let pending: Vec<_> = txs.into_iter().map(|tx| ledger.submit(tx)).collect();
    pending.into_iter().map(|p| p.and_then(|p| p.wait()).map(|_| ())).collect()
}

fn portal_client(ledger: &Arc<Ledger>, id: &str, seed: u64) -> Result<LedgerClient, LedgerError> {
    LedgerClient::new(id, Role::Portal, KeyPair::from_seed(&digest(&[id.as_bytes(), &seed.to_be_bytes()].concat()).0), Arc::clone(ledger))
        .admitted()
}

/// Publish, revoke and query at fixed send rates on a fresh batching
/// ledger per round, in process.
pub fn bench_ledger(config: &LedgerBenchConfig) -> Result<BenchReport, HarnessError> {
    let mut rows = vec![];
    for (r, round) in config.rounds.iter().enumerate() {
        let ledger = Arc::new(Ledger::new(LedgerConfig {
            batch_size: config.batch_size,
            batch_timeout: Duration::from_millis(config.batch_timeout_ms),
            journal_path: None,
        }));
        let client = portal_client(&ledger, "bench-portal", config.seed)?;
        let proofs: Vec<Digest> =
            (0..round.n).map(|i| digest(format!("bench/{}/{r}/{i}", config.seed).as_bytes())).collect();

        let (start, samples) = drive(&schedule(round.n, round.rate_tps), config.workers, |i| {
            let tx = client.endorse(Operation::PublishProof { proof: proofs[i] });
            vec![tx.and_then(|tx| ledger.submit_and_wait(tx)).map(|_| ())]
        });
        rows.push(row(round, "publish_consent_proof", round.rate_tps, start, &samples));

        // Jobs are single revokes or duplicate pairs; each transaction
        // takes one send slot.
        let mut rng = ChaCha20Rng::seed_from_u64(sub_seed(config.seed, "revoke-duplicates", r as u64));
        let mut jobs: Vec<(Digest, usize)> = vec![];
        let mut offsets = vec![];
        let (mut slot, mut key) = (0usize, 0usize);
        while slot < round.n && key < proofs.len() {
            let pair = config.duplicate_every > 0 && slot + 1 < round.n && rng.gen_range(0..config.duplicate_every) == 0;
            let width = if pair { 2 } else { 1 };
            offsets.push(Duration::from_secs_f64(slot as f64 / round.rate_tps));
            jobs.push((proofs[key], width));
            slot += width;
            key += 1;
        }
        let (start, samples) = drive(&offsets, config.workers, |i| {
            let (key, width) = jobs[i];
            let endorsed: Result<Vec<_>, _> = (0..width).map(|_| client.endorse(Operation::Revoke { key })).collect();
            match endorsed {
                Ok(txs) => submit_all(&ledger, txs),
                Err(e) => vec![Err(e); width],
            }
        });
        rows.push(row(round, "revoke_consent", round.rate_tps, start, &samples));

        let reads = round.n * config.query_factor;
        let rate = round.rate_tps * config.query_factor as f64;
        let (start, samples) = drive(&schedule(reads, rate), config.workers, |i| {
            vec![ledger.query_proof(&proofs[i % proofs.len()]).map(|_| ())]
        });
        rows.push(row(round, "query_consent_proof", rate, start, &samples));
        ledger.shutdown();
    }
    Ok(BenchReport { environment: Environment::current(), rows })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DuplicateRevokeReport {
    pub keys: usize,
    pub submitters: usize,
    /// Keys whose committed history holds exactly one revoke.
    pub keys_revoked_once: usize,
    pub committed: usize,
    pub failed: usize,
    pub conflict_failures: usize,
    pub failure_kinds: BTreeMap<String, usize>,
}

/// `submitters` portal clients each endorse a revoke for every key, then
/// all submit at once.
pub fn duplicate_revoke_probe(keys: usize, submitters: usize, seed: u64) -> Result<DuplicateRevokeReport, HarnessError> {
    let ledger = Arc::new(Ledger::new(LedgerConfig::default()));
    let publisher = portal_client(&ledger, "publisher", seed)?;
    let proofs: Vec<Digest> = (0..keys).map(|i| digest(format!("dup/{seed}/{i}").as_bytes())).collect();
    let txs = proofs.iter().map(|p| publisher.endorse(Operation::PublishProof { proof: *p })).collect::<Result<Vec<_>, _>>()?;
    for r in submit_all(&ledger, txs) {
        r?;
    }

    let clients: Vec<LedgerClient> =
        (0..submitters).map(|s| portal_client(&ledger, &format!("revoker-{s}"), seed)).collect::<Result<_, _>>()?;
    let endorsed: Vec<Vec<Transaction>> = clients
        .iter()
        .map(|c| proofs.iter().map(|p| c.endorse(Operation::Revoke { key: *p })).collect::<Result<Vec<_>, _>>())
        .collect::<Result<_, _>>()?;

    let barrier = Barrier::new(submitters);
    let results = Mutex::new(vec![]);
    std::thread::scope(|scope| {
        for batch in endorsed {
            let (barrier, results, ledger) = (&barrier, &results, &ledger);
            scope.spawn(move || {
                barrier.wait();
                let r = submit_all(ledger, batch);
                results.lock().extend(r);
            });
        }
    });
    let results = results.into_inner();

    let mut per_key: BTreeMap<Digest, usize> = BTreeMap::new();
    for block in ledger.blocks() {
        for btx in block.txs {
            if let (Operation::Revoke { key }, crate::ledger::Validation::Valid) = (&btx.tx.payload.operation, &btx.validation) {
                *per_key.entry(*key).or_default() += 1;
            }
        }
    }
    let mut failure_kinds = BTreeMap::new();
    for e in results.iter().filter_map(|r| r.as_ref().err()) {
        *failure_kinds.entry(e.kind().to_owned()).or_default() += 1;
    }
    let failed = results.iter().filter(|r| r.is_err()).count();
    ledger.shutdown();
    Ok(DuplicateRevokeReport {
        keys,
        submitters,
        keys_revoked_once: proofs.iter().filter(|p| per_key.get(*p) == Some(&1)).count(),
        committed: results.len() - failed,
        failed,
        conflict_failures: results.iter().filter(|r| r.as_ref().is_err_and(LedgerError::is_conflict)).count(),
        failure_kinds,
    })
}

fn elapsed_ms<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let t = Instant::now();
    let out = f();
    (out, t.elapsed().as_secs_f64() * 1e3)
}

pub const WALLET_OPS: [&str; 5] =
    ["create_private_did", "did_auth_response", "generate_consent_proof", "sign_consent_data", "verify_consent_signature"];

/// Time the participant wallet's cryptographic functions: `rounds` rounds
/// of `batches × reps` samples each, with a warm-up before every round.
/// Operations are interleaved so drift hits all of them alike.
pub fn bench_wallet(rounds: usize, batches: usize, reps: usize, seed: u64) -> Result<WalletBenchReport, HarnessError> {
    let world = World::new(ScenarioConfig::small(1, 1, 1, seed))?;
    let outcome = world.establish_consent(0, 0, ControlMode::Honest)?;
    let org_did = world.orgs[0].lock().wallet.public_did().text().to_owned();
    let org_doc = world.registry.resolve_public(&org_did)?;
    let mut guard = world.participants[0].lock();
    let p = &mut *guard;
    let form = p.wallet.dossier(&outcome.proof).map(|d| d.form.clone()).expect("dossier exists");
    let private = p.wallet.project_identity(&world.projects[0].project_id).cloned().expect("bound DID");
    let public_did = p.wallet.public_did().text().to_owned();
    let payload = form.participant_signed_bytes();

    let mut samples: BTreeMap<&str, Vec<f64>> = WALLET_OPS.iter().map(|op| (*op, vec![])).collect();
    for _round in 0..rounds {
        for rep in 0..(reps + batches * reps) {
            let warm = rep < reps;
            let (did, t_did) = elapsed_ms(|| p.wallet.create_private_did());
            did?;
            let challenge = world.portal.challenge(&public_did);
            let (token, t_auth) = elapsed_ms(|| p.wallet.did_auth_response(&challenge));
            token?;
            let (proof, t_proof) = elapsed_ms(|| p.wallet.generate_consent_proof(&form, &org_doc));
            proof?;
            let (sig, t_sign) = elapsed_ms(|| sign(&payload, &private));
            let sig = sig?;
            let (ok, t_verify) = elapsed_ms(|| verify_by_signer(&payload, &sig));
            if !ok {
                return Err(HarnessError::Protocol("benchmark signature failed to verify".into()));
            }
            if !warm {
                for (op, t) in WALLET_OPS.iter().zip([t_did, t_auth, t_proof, t_sign, t_verify]) {
                    samples.get_mut(op).expect("known op").push(t);
                }
            }
        }
    }
    let ordered: Vec<(String, Vec<f64>)> =
        WALLET_OPS.iter().map(|op| (op.to_string(), samples.remove(op).unwrap_or_default())).collect();
    Ok(WalletBenchReport {
        environment: Environment::current(),
        rows: ordered.iter().map(|(op, s)| WalletBenchRow::from_samples(op, s)).collect(),
        rounds,
        samples_ms: ordered,
    })
}

/// The consent-establishment sequence, in order.
pub const LIFECYCLE_OPS: [&str; 11] = [
    "create_private_did",
    "connect_cloud_agent",
    "connect_organization",
    "receive_consent_form",
    "verify_form_signature",
    "sign_form",
    "generate_consent_proof",
    "authenticate_portal",
    "publish_consent_proof",
    "query_consent_proof",
    "send_consent_package",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct E2eReport {
    pub environment: Environment,
    pub iterations: usize,
    pub ops: Vec<WalletBenchRow>,
    /// Sum of per-operation medians.
    pub median_total_ms: f64,
    /// Slowest single run through the whole sequence.
    pub worst_iteration_ms: f64,
    pub did_creation_median_ms: f64,
    /// Same world with every wallet preseeded, so the first step draws a
    /// ready DID.
    pub preseeded_ops: Vec<WalletBenchRow>,
    pub preseeded_measured_total_ms: f64,
    /// Default medians with the DID-creation step replaced by the
    /// preseeded draw median.
    pub preseeded_total_ms: f64,
}

fn lifecycle_samples(config: &ScenarioConfig) -> Result<Vec<Vec<f64>>, HarnessError> {
    let world = World::new(config.clone())?;
    let mut per_op = vec![vec![]; LIFECYCLE_OPS.len()];
    let org_did = world.orgs[0].lock().wallet.public_did().text().to_owned();
    let org_doc = world.registry.resolve_public(&org_did)?;
    for i in 0..config.n_participants {
        let proj = &world.projects[i % world.projects.len()];
        let mut guard = world.participants[i].lock();
        let p = &mut *guard;
        let catalog = world.portal.list_projects(&p.session.token, &ProjectFilter::default())?;
        p.wallet.observe_catalog(&catalog);
        let mut t = [0f64; 11];

        let (did, ms) = elapsed_ms(|| p.wallet.create_project_identity(&proj.project_id));
        let did = did?;
        let did_text = did.text().to_owned();
        t[0] = ms;
        let (token, ms) = elapsed_ms(|| world.register_inbox(&did));
        p.inboxes.insert(did_text.clone(), token?);
        t[1] = ms;
        let (accepted, ms) = elapsed_ms(|| -> Result<(), HarnessError> {
            let request = p.wallet.request_with_bound_identity(&proj.project_id, &org_doc)?;
            let handle = p.transport.open_session(&mut p.rng);
            p.handles.insert(proj.project_id.clone(), handle.clone());
            world.send(&p.name, &handle, &did_text, &request)?;
            world.expect(p, &did_text, proj.org, "connection_accepted")?;
            Ok(())
        });
        accepted?;
        t[2] = ms;
        let (form, ms) = elapsed_ms(|| world.expect(p, &did_text, proj.org, "consent_form"));
        let WireMessage::ConsentForm { form } = form? else { unreachable!("expect filters by kind") };
        t[3] = ms;
        let (ok, ms) = elapsed_ms(|| form.verify_org_signature());
        if !ok {
            return Err(HarnessError::Protocol("organization signature invalid".into()));
        }
        t[4] = ms;
        let choices: Vec<ConsentField> = form.fields.iter().map(|f| ConsentField::new(f.name.clone(), "granted")).collect();
        let (completed, ms) = elapsed_ms(|| p.wallet.complete_and_sign_form(&form, choices));
        let completed = completed?;
        t[5] = ms;
        let (proof, ms) = elapsed_ms(|| p.wallet.generate_consent_proof(&completed, &org_doc));
        let (_, proof) = proof?;
        t[6] = ms;
        let (session, ms) = elapsed_ms(|| -> Result<String, HarnessError> {
            let ch = world.portal.challenge(p.wallet.public_did().text());
            let token = p.wallet.did_auth_response(&ch)?;
            Ok(world.portal.authenticate(&token)?.token)
        });
        let session = session?;
        t[7] = ms;
        let (tx, ms) = elapsed_ms(|| world.portal.proxy_publish(&PublishRequest { session, proof }));
        let tx = tx?;
        p.wallet.record_consent_tx(&proof, tx)?;
        t[8] = ms;
        let (record, ms) = elapsed_ms(|| world.ledger.query_proof(&proof));
        record?;
        t[9] = ms;
        let (receipt, ms) = elapsed_ms(|| -> Result<bool, HarnessError> {
            let (_, env) = p.wallet.consent_package(&proof, &org_doc)?;
            let handle = p.handle_for(&proj.project_id).cloned().expect("session opened above");
            world.send(&p.name, &handle, &did_text, &env)?;
            match world.expect(p, &did_text, proj.org, "package_receipt")? {
                WireMessage::PackageReceipt { accepted, .. } => Ok(accepted),
                _ => unreachable!("expect filters by kind"),
            }
        });
        if !receipt? {
            return Err(HarnessError::Protocol("organization rejected the package".into()));
        }
        t[10] = ms;
        for (k, v) in t.iter().enumerate() {
            per_op[k].push(*v);
        }
    }
    world.ledger.shutdown();
    Ok(per_op)
}

fn rows(per_op: &[Vec<f64>]) -> Vec<WalletBenchRow> {
    LIFECYCLE_OPS.iter().zip(per_op).map(|(op, s)| WalletBenchRow::from_samples(op, s)).collect()
}

/// Time each step of consent establishment against the batching orderer
/// and wall clock, one participant per iteration. The figure of merit is
/// the sum of the step medians.
pub fn e2e_lifecycle(iterations: usize, seed: u64) -> Result<E2eReport, HarnessError> {
    let projects = 10;
    let base = ScenarioConfig { concurrent: true, ..ScenarioConfig::small(iterations.max(1), 1, projects, seed) };
    let default = lifecycle_samples(&base)?;
    let preseeded = lifecycle_samples(&ScenarioConfig { preseed_dids: 1, seed: sub_seed(seed, "preseeded", 0), ..base })?;
    let ops = rows(&default);
    let preseeded_ops = rows(&preseeded);
    let total = |rows: &[WalletBenchRow]| rows.iter().map(|r| r.median_ms).sum::<f64>();
    let worst_iteration_ms = (0..default[0].len()).map(|i| default.iter().map(|s| s[i]).sum::<f64>()).fold(0.0, f64::max);
    let median_total_ms = total(&ops);
    Ok(E2eReport {
        environment: Environment::current(),
        iterations: default[0].len(),
        did_creation_median_ms: ops[0].median_ms,
        preseeded_measured_total_ms: total(&preseeded_ops),
        preseeded_total_ms: median_total_ms - ops[0].median_ms + preseeded_ops[0].median_ms,
        worst_iteration_ms,
        median_total_ms,
        ops,
        preseeded_ops,
    })
}
