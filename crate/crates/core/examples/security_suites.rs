//! Non-repudiation, right to be forgotten and login hygiene.

use ccn::harness::{auth_hygiene_suite, non_repudiation_suite, rtbf_suite, ScenarioConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let nr = non_repudiation_suite(&ScenarioConfig::small(6, 2, 3, 1), 100)?;
    println!("tampered packages accepted: {}/{}", nr.tampered_accepted, nr.tampered);
    for (reason, n) in &nr.rejections {
        println!("  rejected as {reason}: {n}");
    }
    println!("participant denial refuted: {}, identity revealed: {}", nr.participant_denial_refuted, nr.identity_revealed);
    println!("organization denial refuted: {}", nr.org_denial_refuted);

    let rtbf = rtbf_suite(&ScenarioConfig::small(4, 1, 3, 2))?;
    println!(
        "forgotten {} associations; surviving co-occurrences {} (control {}), orphans queryable {}",
        rtbf.forgotten, rtbf.cooccurrences, rtbf.control_cooccurrences, rtbf.orphans_queryable
    );

    let auth = auth_hygiene_suite(&ScenarioConfig::small(4, 1, 1, 3), 500, 500)?;
    println!("replays accepted {}/{}, expired accepted {}/{}", auth.replay_accepted, auth.replay_attempts, auth.expired_accepted, auth.expired_attempts);
    Ok(())
}
