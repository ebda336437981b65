//! Wallet microbenchmarks, a short fixed-rate ledger run and the
//! end-to-end lifecycle.

use ccn::harness::{bench_ledger, bench_wallet, e2e_lifecycle, LedgerBenchConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    print!("{}", bench_wallet(3, 10, 10, 0)?.to_table());
    println!();

    let ledger = bench_ledger(&LedgerBenchConfig::stress(500, 1))?;
    print!("{}", ledger.to_table());
    println!();

    let e2e = e2e_lifecycle(10, 0)?;
    for op in &e2e.ops {
        println!("{:<24} {:>9.3} ms", op.function, op.median_ms);
    }
    println!("{:<24} {:>9.3} ms (preseeded {:.3} ms)", "lifecycle median", e2e.median_total_ms, e2e.preseeded_total_ms);
    Ok(())
}
