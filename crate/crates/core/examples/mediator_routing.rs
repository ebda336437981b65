//! Store-and-forward inboxes and what the mediator operator sees.

use std::sync::Arc;

use ccn::clock::SystemClock;
use ccn::identity::{create_did, seal_envelope, sign, DidKind, DidRegistry};
use ccn::mediator::{Mediator, MediatorConfig, Transport};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let registry = Arc::new(DidRegistry::new());
    let mediator = Mediator::new(MediatorConfig { harness_mode: true }, registry.clone(), Arc::new(SystemClock), 3);

    let org = create_did(DidKind::Public, &mut rng)?;
    registry.register(&org)?;
    let challenge = mediator.challenge(org.text());
    let token = mediator.register_inbox(org.text(), DidKind::Public, Some(&sign(&challenge.signing_bytes(), &org)?))?;
    println!("org endpoint {}", registry.resolve_public(org.text())?.service_endpoint.unwrap_or_default());

    let transport = Transport::new(true, "198.51.100.7");
    for i in 0..3 {
        let peer = create_did(DidKind::Private, &mut rng)?;
        let env = seal_envelope(format!("request {i}").as_bytes(), &peer, &registry.resolve_public(org.text())?, true, &mut rng)?;
        mediator.route(&transport.open_session(&mut rng), &env)?;
    }
    println!("org fetched {} envelopes", mediator.fetch(org.text(), &token)?.len());
    for entry in mediator.metadata_view()? {
        println!("seen: {} -> {}... {} bytes", entry.source.0, &entry.destination[..24], entry.size);
    }
    Ok(())
}
