//! DIDs, signatures and encrypted envelopes.

use ccn::identity::{create_did, open_envelope, parse_did_key, seal_envelope, sign, verify_by_signer, DidKind, DidRegistry};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let alice = create_did(DidKind::Public, &mut rng)?;
    let org = create_did(DidKind::Public, &mut rng)?;
    let peer = create_did(DidKind::Private, &mut rng)?;
    println!("public DID  {}", alice.text());
    println!("private DID {}", peer.text());

    // did:key carries its own verification key.
    assert_eq!(parse_did_key(alice.text())?, alice.verification_key());

    let sig = sign(b"I agree", &alice)?;
    println!("signature verifies: {}", verify_by_signer(b"I agree", &sig));
    println!("altered payload verifies: {}", verify_by_signer(b"I agree not", &sig));

    // Public DIDs resolve through the registry; private ones never do.
    let registry = DidRegistry::new();
    registry.register(&org)?;
    let org_doc = registry.resolve_public(org.text())?;
    println!("private DID resolvable: {}", registry.resolve_public(peer.text()).is_ok());

    let env = seal_envelope(b"consent form", &peer, &org_doc, true, &mut rng)?;
    let (plain, sender) = open_envelope(&env, &org)?;
    println!("opened {:?} from {}", String::from_utf8(plain)?, sender.unwrap_or_default());
    println!("third party can open: {}", open_envelope(&env, &alice).is_ok());
    Ok(())
}
