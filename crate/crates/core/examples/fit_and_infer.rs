//! The full pipeline on one simulated dataset: randomized selection,
//! selection-informed posterior, Langevin sampling, credible intervals.

use posi::adjust::AdjustmentParams;
use posi::groupsolve::{select, SolveOptions};
use posi::linalg::Mat;
use posi::model::{draw_randomization, RandomizationConfig};
use posi::posterior::{PosteriorSpec, Prior};
use posi::sampler::{credible_intervals, run_chain, ChainConfig};
use posi::simlab::{generate_instance, ScenarioConfig, Setting, Snr};

fn main() -> posi::Result<()> {
    let cfg = ScenarioConfig::new(Setting::Balanced, Snr::High, "1:1", 1, 7);
    let inst = generate_instance(&cfg, 0)?;
    let ds = &inst.dataset;
    let tau2 = cfg.tau2();

    let omega = draw_randomization(&RandomizationConfig::isotropic(tau2, 42), ds.p())?;
    let (problem, record) = select(ds, &inst.groups, &omega, &SolveOptions::default())?;
    println!(
        "true groups {:?}, selected groups {:?}",
        inst.active_groups,
        record.selected_groups
    );

    let cov = Mat::identity(ds.p(), ds.p()) * tau2;
    let params = AdjustmentParams::build(&problem, &record, ds, &cov)?;
    let prior = Prior::isotropic(record.n_active(), cfg.prior_variance * cfg.sigma * cfg.sigma)?;
    let spec = PosteriorSpec::new(params, prior)?;
    let chain = run_chain(&spec, &ChainConfig { seed: 1, ..Default::default() })?;
    let report = credible_intervals(&chain, 0.9)?;

    println!("{:>6} {:>9} {:>9} {:>9} {:>9}", "column", "truth", "median", "lower", "upper");
    for (j, &col) in record.active.iter().enumerate() {
        let iv = report.intervals[j];
        println!(
            "{:>6} {:>9.3} {:>9.3} {:>9.3} {:>9.3}",
            col + 1,
            inst.beta[col],
            report.estimate[j],
            iv.lower,
            iv.upper
        );
    }
    Ok(())
}
