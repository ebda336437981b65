//! Identity enrollment and lawful investigation.

use std::sync::Arc;

use ccn::clock::{Clock, SystemClock};
use ccn::enrollment::{verify_credential, EnrollmentAuthority, Warrant};
use ccn::identity::{create_did, DidKind};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    let clock: Arc<dyn Clock> = Arc::new(SystemClock);
    let court = create_did(DidKind::Public, &mut rng)?;
    let authority = EnrollmentAuthority::new(create_did(DidKind::Public, &mut rng)?, court.verification_key().to_vec(), clock.clone());

    let participant = create_did(DidKind::Public, &mut rng)?;
    let vc = authority.enroll(b"passport:X1234567", participant.text())?;
    println!("credential {} valid: {}", vc.reference(), verify_credential(&vc, &authority.verification_key(), clock.now_ms()));
    println!("enrolling twice: {}", authority.enroll(b"passport:X1234567", participant.text()).unwrap_err());

    println!("investigation without warrant: {}", authority.investigate(participant.text(), None).unwrap_err());
    let warrant = Warrant::issue(&court, participant.text(), "disputed consent", clock.now_ms())?;
    println!("identity under warrant: {}", authority.investigate(participant.text(), Some(&warrant))?);
    Ok(())
}
