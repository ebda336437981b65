//! The portal publishes proofs under its own identity, keeps the
//! participant link off the ledger, and forgets it on request.

use ccn::harness::{run_consent_flow, ScenarioConfig};
use ccn::portal::{ForgetScope, PublishRequest};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (world, flow) = run_consent_flow(&ScenarioConfig::small(2, 1, 3, 7))?;
    let session = world.participants[0].lock().session.token.clone();
    let public_did = world.participant_public_did(0);

    let history = world.portal.consent_history(&session)?;
    println!("participant 0 has {} consents", history.len());
    let journal = world.ledger.journal_bytes();
    let on_ledger = journal.windows(public_did.len()).any(|w| w == public_did.as_bytes());
    println!("public DID in ledger journal: {on_ledger}");

    // Anything beyond {session, proof} is refused.
    let extra = format!(r#"{{"session":"{session}","proof":"{}","project_id":"project-00"}}"#, flow.outcomes[0].proof);
    println!("publish with project field: {}", world.portal.proxy_publish_json(extra.as_bytes()).unwrap_err());
    let fresh = ccn::identity::digest(b"another consent");
    println!("closed-schema publish: {}", world.portal.proxy_publish(&PublishRequest { session: session.clone(), proof: fresh })?);

    let receipt = world.portal.forget_me(&session, &ForgetScope::All)?;
    println!("forgot {} associations ({} revoked first)", receipt.forgotten, receipt.revoked);
    for item in &history {
        println!("orphan {} still on ledger: {:?}", &item.proof.to_hex()[..16], world.ledger.query_proof(&item.proof)?.state);
    }
    println!("history after forgetting: {}", world.portal.consent_history(&session)?.len());
    Ok(())
}
