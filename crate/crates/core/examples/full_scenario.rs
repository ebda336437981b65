//! A full deployment: every participant joins every project, then some
//! revoke and some update.

use ccn::harness::{run_consent_flow, run_revocation_flow, ScenarioConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = ScenarioConfig::small(8, 2, 4, 42);
    let (world, report) = run_consent_flow(&config)?;
    println!(
        "{} of {} consents accepted in {:.0} ms, ledger height {}, consistent {}",
        report.accepted, report.pairs_attempted, report.elapsed_ms, report.ledger_height, report.state_consistent
    );
    let mediator_entries = world.mediator.metadata_view()?.len();
    println!("mediator routed {mediator_entries} envelopes");

    let (_, revocation) = run_revocation_flow(&config)?;
    println!(
        "revoked {} (all refused afterwards: {}), updated {} (superseded: {}), consistent {}",
        revocation.revoked,
        revocation.revoked_then_rejected == revocation.revoked,
        revocation.updated,
        revocation.updates_superseded == revocation.updated,
        revocation.consistent
    );
    for line in &revocation.error_paths {
        println!("expected error: {line}");
    }
    Ok(())
}
