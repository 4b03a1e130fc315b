//! A small simulation cell comparing selection-informed inference with the
//! naive and data-splitting baselines.

use posi::simlab::{run_experiment, summarize, ScenarioConfig, Setting, Snr};

fn main() -> posi::Result<()> {
    let reps = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(20);
    let cfg = ScenarioConfig::new(Setting::Balanced, Snr::Low, "1:1", reps, 0);
    let rows = run_experiment(&cfg)?;
    println!("{:<20} {:>6} {:>9} {:>9}", "method", "F1", "coverage", "length");
    for s in summarize(&rows) {
        println!(
            "{:<20} {:>6.3} {:>9.3} {:>9.2}",
            s.method.name(),
            s.f1_mean,
            s.coverage_mean,
            s.length_median
        );
    }
    Ok(())
}
