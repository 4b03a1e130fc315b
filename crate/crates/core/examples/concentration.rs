//! Credible intervals shrink like 1/sqrt(n): the same signal at n = 100 and
//! n = 1000.

use posi::model::Variant;
use posi::sampler::ChainConfig;
use posi::simlab::{generate_instance, selection_informed, ScenarioConfig, Setting, Snr};

fn median_length(n: usize, seed: u64) -> posi::Result<f64> {
    let mut cfg = ScenarioConfig::new(Setting::Balanced, Snr::High, "1:1", 1, seed);
    cfg.n = n;
    cfg.variant = Some(Variant::Disjoint);
    let inst = generate_instance(&cfg, 0)?;
    // design columns are unit norm; rescale to unit variance so the signal does not shrink with n
    let scale = (n as f64).sqrt();
    let mut ds = inst.dataset.clone();
    ds.x *= scale;
    ds.y = &ds.x * &inst.beta + (&inst.dataset.y - &inst.dataset.x * &inst.beta);
    let si = selection_informed(&ds, &inst.groups, cfg.tau2(), seed, 100.0 * cfg.sigma.powi(2), &ChainConfig::default(), 0.9)?;
    let mut l = si.report.lengths();
    l.sort_by(f64::total_cmp);
    Ok(l[l.len() / 2])
}

fn main() -> posi::Result<()> {
    for seed in 0..3 {
        let small = median_length(100, seed)?;
        let large = median_length(1000, seed)?;
        println!("seed {seed}: median length n=100 {small:.3}, n=1000 {large:.3}, ratio {:.2}", small / large);
    }
    Ok(())
}
