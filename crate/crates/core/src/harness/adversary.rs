//! Honest-but-curious adversaries. Each analysis reads only the
//! transcripts and stores of the actors that collude; ground truth comes
//! from the harness afterwards, for scoring.

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::flows::run_pairs;
use super::stats::binomial_interval;
use super::transcript::{collect_tokens, Transcript};
use super::world::{ControlMode, World, MEDIATOR, PORTAL};
use super::{sub_seed, HarnessError, ScenarioConfig};
use crate::canonical;
use crate::identity::{digest, Digest};
use crate::ledger::QueryResult;
use crate::portal::PublishRequest;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkageResult {
    pub trials: usize,
    /// Individual attribution decisions across all trials.
    pub decisions: u64,
    pub correct_matches: u64,
    pub accuracy: f64,
    pub baseline: f64,
    /// Two-sided 95% acceptance region for the accuracy under chance,
    /// from exact binomial tail sums.
    pub ci_low: f64,
    pub ci_high: f64,
    /// Participant-derived identifiers seen by more than one colluder.
    pub identifier_intersection: usize,
}

impl LinkageResult {
    fn new(trials: usize, decisions: u64, correct: u64, baseline: f64, identifier_intersection: usize) -> Self {
        let (ci_low, ci_high) = binomial_interval(decisions.max(1), baseline, 0.05);
        LinkageResult {
            trials,
            decisions,
            correct_matches: correct,
            accuracy: correct as f64 / decisions.max(1) as f64,
            baseline,
            ci_low,
            ci_high,
            identifier_intersection,
        }
    }

    pub fn within_chance(&self) -> bool {
        (self.ci_low..=self.ci_high).contains(&self.accuracy)
    }
}

/// Connection-specific tokens: those seen on exactly one channel.
fn channel_fingerprints(t: &Transcript) -> BTreeMap<String, HashSet<String>> {
    let by_channel: BTreeMap<String, HashSet<String>> =
        t.tokens_by_channel().into_iter().filter(|(c, _)| c.starts_with("did:")).collect();
    let mut seen: HashMap<&String, usize> = HashMap::new();
    for toks in by_channel.values() {
        for tok in toks {
            *seen.entry(tok).or_default() += 1;
        }
    }
    by_channel
        .iter()
        .map(|(c, toks)| (c.clone(), toks.iter().filter(|t| seen[t] == 1).cloned().collect()))
        .collect()
}

fn first_seen(t: &Transcript) -> HashMap<String, usize> {
    let mut out = HashMap::new();
    for (i, e) in t.events.iter().enumerate() {
        out.entry(e.channel.clone()).or_insert(i);
    }
    out
}

/// The colluding organizations' matching: shared connection-specific
/// tokens first, then closeness of arrival rank, then a seeded random
/// tiebreak; assigned greedily.
pub fn match_connections(a: &Transcript, b: &Transcript, seed: u64) -> Vec<(String, String)> {
    let fa = channel_fingerprints(a);
    let fb = channel_fingerprints(b);
    let (ra, rb) = (first_seen(a), first_seen(b));
    let rank = |m: &HashMap<String, usize>, keys: &BTreeMap<String, HashSet<String>>| -> HashMap<String, usize> {
        let mut ordered: Vec<_> = keys.keys().cloned().collect();
        ordered.sort_by_key(|k| m.get(k).copied().unwrap_or(usize::MAX));
        ordered.into_iter().enumerate().map(|(i, k)| (k, i)).collect()
    };
    let (rank_a, rank_b) = (rank(&ra, &fa), rank(&rb, &fb));
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut candidates = vec![];
    for (ca, ta) in &fa {
        for (cb, tb) in &fb {
            let shared = ta.intersection(tb).count();
            let distance = rank_a[ca].abs_diff(rank_b[cb]);
            candidates.push((shared, distance, rng.gen::<u64>(), ca.clone(), cb.clone()));
        }
    }
    candidates.sort_by(|x, y| y.0.cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let (mut used_a, mut used_b) = (HashSet::new(), HashSet::new());
    let mut out = vec![];
    for (_, _, _, ca, cb) in candidates {
        if !used_a.contains(&ca) && !used_b.contains(&cb) {
            used_a.insert(ca.clone());
            used_b.insert(cb.clone());
            out.push((ca, cb));
        }
    }
    out
}

/// Identifiers derived from participant secrets: DIDs and public keys in
/// the encodings that appear on the wire.
fn participant_identifiers(world: &World) -> HashSet<String> {
    let mut out = HashSet::new();
    for p in &world.participants {
        let p = p.lock();
        let dids = std::iter::once(p.wallet.public_did().clone()).chain(p.wallet.project_identities().map(|(_, d)| d.clone()));
        for d in dids {
            out.insert(d.text().to_owned());
            for key in [d.verification_key(), d.agreement_key()] {
                out.insert(canonical::b64_encode(&key));
                out.insert(hex::encode(key));
            }
        }
    }
    out
}

fn identifiers_in(t: &Transcript, ids: &HashSet<String>) -> HashSet<String> {
    t.tokens().into_iter().filter(|tok| ids.contains(tok)).collect()
}

/// Linkage across two colluding organizations. Each trial deploys two
/// organizations with a catalog of `max(k_threshold, 2)` projects; every
/// participant joins the first project of each.
pub fn adversary_link_projects(config: &ScenarioConfig, trials: usize, mode: ControlMode) -> Result<LinkageResult, HarnessError> {
    let n = config.n_participants;
    let mut decisions = 0u64;
    let mut correct = 0u64;
    let mut intersection = 0usize;
    for trial in 0..trials {
        let trial_config = ScenarioConfig {
            n_orgs: 2,
            n_projects: config.k_threshold.max(2),
            seed: sub_seed(config.seed, "link-trial", trial as u64),
            concurrent: false,
            storage_dir: None,
            ..config.clone()
        };
        let world = World::new(trial_config)?;
        let pairs = (0..n).flat_map(|p| [(p, 0), (p, 1)]).collect();
        let flow = run_pairs(&world, pairs, mode);
        if !flow.failures.is_empty() {
            return Err(HarnessError::Protocol(format!("linkage trial {trial}: {:?}", flow.failures[0])));
        }
        let (ta, tb) = (world.transcripts.get("org-0"), world.transcripts.get("org-1"));

        let ids = participant_identifiers(&world);
        intersection += identifiers_in(&ta, &ids).intersection(&identifiers_in(&tb, &ids)).count();

        let matching = match_connections(&ta, &tb, sub_seed(config.seed, "link-tiebreak", trial as u64));
        let owner: HashMap<String, usize> = flow.outcomes.iter().map(|o| (o.private_did.clone(), o.participant)).collect();
        decisions += n as u64;
        correct += matching.iter().filter(|(a, b)| owner.get(a).is_some() && owner.get(a) == owner.get(b)).count() as u64;
    }
    Ok(LinkageResult::new(trials, decisions, correct, 1.0 / n as f64, intersection))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortalProbe {
    /// Proof-to-project attribution from the portal's own state.
    pub content: LinkageResult,
    /// Accuracy of attributing by ledger position of terms; informational.
    pub timing_accuracy: f64,
    /// Every publication request carried exactly `proof` and `session`,
    /// and a request with an extra field was refused.
    pub schema_closed: bool,
}

/// Curious portal: attribute each proof it published to a catalog
/// project. Each participant joins one uniformly drawn project.
pub fn adversary_portal(config: &ScenarioConfig, trials: usize) -> Result<PortalProbe, HarnessError> {
    let k = config.k_threshold.max(1);
    let mut decisions = 0u64;
    let mut correct = 0u64;
    let mut timing_correct = 0u64;
    let mut schema_closed = true;
    for trial in 0..trials {
        let seed = sub_seed(config.seed, "portal-trial", trial as u64);
        let trial_config = ScenarioConfig {
            n_orgs: config.n_orgs.clamp(1, k),
            n_projects: k,
            seed,
            concurrent: false,
            storage_dir: None,
            ..config.clone()
        };
        let world = World::new(trial_config)?;
        let mut rng = ChaCha20Rng::seed_from_u64(sub_seed(seed, "portal-choice", 0));
        let pairs = (0..config.n_participants).map(|p| (p, rng.gen_range(0..k))).collect();
        let flow = run_pairs(&world, pairs, ControlMode::Honest);
        if !flow.failures.is_empty() {
            return Err(HarnessError::Protocol(format!("portal trial {trial}: {:?}", flow.failures[0])));
        }

        // What the portal holds: catalog, match table, request log, and
        // read access to the ledger as a consortium member.
        let catalog: Vec<_> = world.projects.iter().map(|p| (p.project_id.clone(), p.terms_tx.clone())).collect();
        let known: Vec<HashSet<Digest>> = catalog
            .iter()
            .map(|(id, tx)| {
                let mut s = HashSet::from([digest(id.as_bytes()), digest(&canonical::to_vec(tx))]);
                if let Ok(QueryResult::Terms(t)) = world.ledger.query_tx(tx) {
                    s.insert(t.terms_digest);
                }
                s
            })
            .collect();
        let mut guess_rng = ChaCha20Rng::seed_from_u64(sub_seed(seed, "portal-guess", 0));
        let truth: HashMap<Digest, usize> = flow.outcomes.iter().map(|o| (o.proof, o.project)).collect();
        for entry in world.portal.match_table() {
            for item in entry.items {
                let content_guess = known
                    .iter()
                    .position(|s| s.contains(&item.proof))
                    .unwrap_or_else(|| *(0..k).collect::<Vec<_>>().choose(&mut guess_rng).expect("k > 0"));
                let timing_guess = catalog
                    .iter()
                    .enumerate()
                    .filter(|(_, (_, tx))| tx.time() < item.consent_tx.time())
                    .max_by_key(|(_, (_, tx))| tx.time())
                    .map(|(i, _)| i)
                    .unwrap_or(0);
                decisions += 1;
                correct += u64::from(truth.get(&item.proof) == Some(&content_guess));
                timing_correct += u64::from(truth.get(&item.proof) == Some(&timing_guess));
            }
        }

        let keys_ok = world.transcripts.get(PORTAL).events.iter().filter(|e| e.channel == "publish").all(|e| {
            serde_json::from_slice::<serde_json::Map<String, serde_json::Value>>(&e.bytes)
                .map(|m| m.keys().map(String::as_str).collect::<Vec<_>>() == ["proof", "session"])
                .unwrap_or(false)
        });
        let extra = serde_json::json!({"session": "s", "proof": Digest::ZERO, "project_id": "project-00"});
        let refused = matches!(
            world.portal.proxy_publish_json(extra.to_string().as_bytes()),
            Err(crate::portal::PortalError::Schema(_))
        );
        let fields = serde_json::to_value(PublishRequest { session: String::new(), proof: Digest::ZERO })
            .ok()
            .and_then(|v| v.as_object().map(|m| m.len()));
        schema_closed &= keys_ok && refused && fields == Some(2);
    }
    Ok(PortalProbe {
        content: LinkageResult::new(trials, decisions, correct, 1.0 / k as f64, 0),
        timing_accuracy: timing_correct as f64 / decisions.max(1) as f64,
        schema_closed,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MediatorProbe {
    pub pseudonymous: bool,
    pub sessions: usize,
    /// Pairs of one participant's sessions that share a source handle.
    pub linkable_pairs: usize,
    /// Participant public DIDs or consent-form text found in anything the
    /// mediator holds.
    pub plaintext_hits: usize,
}

/// Curious mediator: link a participant's sessions through network
/// metadata, and look for plaintext in its log and queues.
pub fn adversary_mediator(config: &ScenarioConfig) -> Result<MediatorProbe, HarnessError> {
    let (world, flow) = super::flows::run_consent_flow(&ScenarioConfig { concurrent: false, ..config.clone() })?;
    if !flow.failures.is_empty() {
        return Err(HarnessError::Protocol(format!("mediator probe: {:?}", flow.failures[0])));
    }
    let log = world.mediator.metadata_view()?;
    let mut by_handle: HashMap<&str, HashSet<&str>> = HashMap::new();
    for e in &log {
        by_handle.entry(e.source.0.as_str()).or_default().insert(e.destination.as_str());
    }

    let mut sessions = 0;
    let mut linkable_pairs = 0;
    for p in &world.participants {
        let p = p.lock();
        let handles: Vec<_> = world.projects.iter().filter_map(|s| p.handle_for(&s.project_id)).collect();
        sessions += handles.len();
        for (i, a) in handles.iter().enumerate() {
            // The mediator must actually have seen the handle to use it.
            if !by_handle.contains_key(a.0.as_str()) {
                continue;
            }
            linkable_pairs += handles[i + 1..].iter().filter(|b| *b == a).count();
        }
    }

    let mut held = world.mediator.persisted_bytes()?;
    for e in world.transcripts.get(MEDIATOR).events {
        held.extend(e.bytes);
    }
    let mut held_tokens = HashSet::new();
    collect_tokens(&held, &mut held_tokens);
    let mut needles: Vec<Vec<u8>> = world.projects.iter().flat_map(|p| p.fields.iter().map(|f| f.value.clone().into_bytes())).collect();
    needles.sort();
    needles.dedup();
    let mut plaintext_hits = needles.iter().filter(|n| held.windows(n.len()).any(|w| w == n.as_slice())).count();
    for i in 0..world.participants.len() {
        plaintext_hits += usize::from(held_tokens.contains(&world.participant_public_did(i)));
    }
    Ok(MediatorProbe { pseudonymous: config.pseudonymous_transport, sessions, linkable_pairs, plaintext_hits })
}
