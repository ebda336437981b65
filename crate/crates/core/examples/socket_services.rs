//! The portal and ledger behind TCP, driven by a participant wallet.

use std::sync::Arc;

use ccn::harness::{ScenarioConfig, World};
use ccn::identity::digest;
use ccn::ledger::TxRef;
use ccn::net::{serve, Client, LedgerService, PortalService};
use ccn::portal::{Challenge, Session};
use serde_json::json;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let world = World::new(ScenarioConfig::small(1, 1, 1, 9))?;
    let portal = serve(Arc::new(PortalService(world.portal.clone())), "127.0.0.1:0")?;
    let ledger = serve(Arc::new(LedgerService(world.ledger.clone())), "127.0.0.1:0")?;
    println!("portal on {}, ledger on {}", portal.addr(), ledger.addr());

    let mut pc = Client::connect(portal.addr())?;
    let p = world.participants[0].lock();
    let challenge: Challenge = pc.call_as("challenge", None, json!({ "did": p.wallet.public_did().text() }))?;
    let session: Session = pc.call_as("authenticate", None, json!(p.wallet.did_auth_response(&challenge)?))?;
    let tx: TxRef = pc.call_as("publish", None, json!({ "session": session.token, "proof": digest(b"over the wire") }))?;
    println!("published at {tx}");

    let mut lc = Client::connect(ledger.addr())?;
    println!("ledger says {}", lc.call("verify_chain", None, json!(null))?);
    Ok(())
}
