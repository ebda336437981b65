//! Honest-but-curious organizations, portal and mediator.

use ccn::harness::{adversary_link_projects, adversary_mediator, adversary_portal, ControlMode, ScenarioConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let trials: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(20);
    let config = ScenarioConfig { n_participants: 16, ..ScenarioConfig::default() };

    let link = adversary_link_projects(&config, trials, ControlMode::Honest)?;
    println!(
        "colluding orgs: accuracy {:.3} (chance {:.3}, 95% region {:.3}-{:.3}), shared identifiers {}",
        link.accuracy, link.baseline, link.ci_low, link.ci_high, link.identifier_intersection
    );
    let reuse = adversary_link_projects(&config, 2, ControlMode::ReusePrivateDid)?;
    println!("same orgs against a reused private DID: accuracy {:.3}", reuse.accuracy);

    let portal = adversary_portal(&config, trials)?;
    println!(
        "curious portal: content attribution {:.3} (chance {:.3}), timing attribution {:.3}, closed schema {}",
        portal.content.accuracy, portal.content.baseline, portal.timing_accuracy, portal.schema_closed
    );

    for pseudonymous in [true, false] {
        let m = adversary_mediator(&ScenarioConfig { pseudonymous_transport: pseudonymous, ..ScenarioConfig::small(8, 2, 4, 1) })?;
        println!("mediator, pseudonymous={pseudonymous}: {} linkable session pairs, {} plaintext hits", m.linkable_pairs, m.plaintext_hits);
    }
    Ok(())
}
