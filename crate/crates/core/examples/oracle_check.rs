//! Runs every internal consistency oracle and prints one line per check.

use posi::oracle::{run_oracles, Fault};

fn main() -> posi::Result<()> {
    let outcomes = run_oracles(None, Fault::None)?;
    for o in &outcomes {
        println!("{o}");
    }
    if outcomes.iter().any(|o| !o.passed) {
        std::process::exit(3);
    }
    Ok(())
}
