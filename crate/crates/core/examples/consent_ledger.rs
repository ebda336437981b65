//! Terms, proofs and revocation on the consent ledger, then a replay.

use std::sync::Arc;

use ccn::identity::{digest, KeyPair};
use ccn::ledger::{Ledger, LedgerClient, LedgerConfig, Operation, Role, TermsSubmission};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ledger = Arc::new(Ledger::new(LedgerConfig::immediate()));
    let org = LedgerClient::new("hospital", Role::Organization, KeyPair::from_seed(&[1; 32]), ledger.clone()).admitted()?;
    let portal = LedgerClient::new("portal", Role::Portal, KeyPair::from_seed(&[2; 32]), ledger.clone()).admitted()?;

    let terms_tx = org.publish_consent_terms(TermsSubmission {
        org_did: "did:key:z6Mk-hospital".into(),
        project_id: "cardio-2026".into(),
        version: 1,
        terms_digest: digest(b"terms document"),
    })?;
    println!("terms committed at {terms_tx}");

    let proof = digest(b"encrypted consent form");
    let tx = portal.publish_consent_proof(proof)?;
    println!("proof committed at {tx}: {:?}", ledger.query_proof(&proof)?.state);

    // Two revokes endorsed against the same version: only one commits.
    let a = portal.endorse(Operation::Revoke { key: proof })?;
    let b = portal.endorse(Operation::Revoke { key: proof })?;
    ledger.submit_and_wait(a)?;
    println!("second revoke: {}", ledger.submit_and_wait(b).unwrap_err());
    println!("state now {:?}", ledger.query_proof(&proof)?.state);

    let replica = Ledger::replay(&ledger.blocks(), ledger.members(), LedgerConfig::immediate())?;
    println!("replica height {} identical state: {}", replica.height(), replica.state_digest() == ledger.state_digest());
    ledger.verify_chain()?;
    Ok(())
}
