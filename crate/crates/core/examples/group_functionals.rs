//! Posterior intervals for functionals of a selected group's coefficients.

use posi::adjust::AdjustmentParams;
use posi::groupsolve::{select, SolveOptions};
use posi::linalg::Mat;
use posi::model::{draw_randomization, RandomizationConfig};
use posi::posterior::{PosteriorSpec, Prior};
use posi::sampler::{group_functional_interval, run_chain, ChainConfig, Functional};
use posi::simlab::{generate_instance, ScenarioConfig, Setting, Snr};

fn main() -> posi::Result<()> {
    let cfg = ScenarioConfig::new(Setting::Heterogeneous, Snr::High, "1:1", 1, 21);
    let inst = generate_instance(&cfg, 0)?;
    let ds = &inst.dataset;
    let omega = draw_randomization(&RandomizationConfig::isotropic(cfg.tau2(), 5), ds.p())?;
    let (problem, record) = select(ds, &inst.groups, &omega, &SolveOptions::default())?;
    let cov = Mat::identity(ds.p(), ds.p()) * cfg.tau2();
    let spec = PosteriorSpec::new(AdjustmentParams::build(&problem, &record, ds, &cov)?, Prior::Flat)?;
    let chain = run_chain(&spec, &ChainConfig::default())?;

    for &g in &record.selected_groups {
        let cols = &inst.groups.groups[g];
        let truth: Vec<f64> = cols.iter().map(|&c| inst.beta[c]).collect();
        println!("group {} ({} columns, true l2 norm {:.3})", g + 1, cols.len(), Functional::L2Norm.apply(&truth));
        for f in [Functional::Mean, Functional::L2Norm, Functional::MaxAbs] {
            let iv = group_functional_interval(&chain, &record, &inst.groups, f, g, 0.9)?;
            println!("  {:<8} [{:>8.3}, {:>8.3}]", f.name(), iv.lower, iv.upper);
        }
    }
    Ok(())
}
