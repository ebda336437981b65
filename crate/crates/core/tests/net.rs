use std::sync::Arc;

use ccn::harness::{ScenarioConfig, World};
use ccn::identity::digest;
use ccn::ledger::{ConsentRecord, ConsentState, TxRef};
use ccn::net::{serve, Client, LedgerService, PortalService};
use ccn::portal::{Challenge, HistoryItem, Session};
use serde_json::json;

#[test]
fn participant_publishes_and_revokes_over_sockets() {
    let world = World::new(ScenarioConfig::small(1, 1, 1, 3)).unwrap();
    let portal = serve(Arc::new(PortalService(Arc::clone(&world.portal))), "127.0.0.1:0").unwrap();
    let ledger = serve(Arc::new(LedgerService(Arc::clone(&world.ledger))), "127.0.0.1:0").unwrap();
    let mut pc = Client::connect(portal.addr()).unwrap();
    let mut lc = Client::connect(ledger.addr()).unwrap();

    let p = world.participants[0].lock();
    let did = p.wallet.public_did().text().to_owned();
    let challenge: Challenge = pc.call_as("challenge", None, json!({ "did": did })).unwrap();
    let token = p.wallet.did_auth_response(&challenge).unwrap();
    let session: Session = pc.call_as("authenticate", None, json!(token)).unwrap();
    // The same token a second time is a replay.
    assert_eq!(pc.call("authenticate", None, json!(token)).unwrap_err().kind, "challenge_replayed");

    let proof = digest(b"consent over the wire");
    let tx: TxRef = pc.call_as("publish", None, json!({ "session": session.token, "proof": proof })).unwrap();
    let found: serde_json::Value = lc.call("query_proof", None, json!({ "proof": proof })).unwrap();
    let record: ConsentRecord = serde_json::from_value(found["record"].clone()).unwrap();
    assert_eq!(record.state, ConsentState::Valid);
    assert_eq!(record.publisher, "portal");

    let history: Vec<HistoryItem> = pc.call_as("history", Some(&session.token), json!(null)).unwrap();
    assert_eq!(history.len(), 1);
    pc.call("revoke", Some(&session.token), json!({ "consent_tx": tx })).unwrap();
    let found: serde_json::Value = lc.call("query_proof", None, json!({ "proof": proof })).unwrap();
    assert_eq!(found["record"]["state"], "revoked");
}

#[test]
fn malformed_and_out_of_schema_requests_get_typed_errors() {
    let world = World::new(ScenarioConfig::small(1, 1, 1, 4)).unwrap();
    let server = serve(Arc::new(PortalService(Arc::clone(&world.portal))), "127.0.0.1:0").unwrap();
    let mut c = Client::connect(server.addr()).unwrap();
    let session = world.participants[0].lock().session.token.clone();

    let extra = json!({ "session": session, "proof": digest(b"x"), "project_id": "project-00" });
    assert_eq!(c.call("publish", None, extra).unwrap_err().kind, "schema");
    assert_eq!(c.send_line(b"{not json").unwrap_err().kind, "bad_request");
    assert_eq!(c.call("no_such_endpoint", None, json!(null)).unwrap_err().kind, "unknown_endpoint");
    assert_eq!(c.call("history", Some("forged"), json!(null)).unwrap_err().kind, "invalid_session");
    // The connection is still usable after errors.
    assert!(c.call("history", Some(&session), json!(null)).is_ok());
}
