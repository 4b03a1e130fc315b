//! Overlapping groups (each shares two columns with its neighbour):
//! selection-informed intervals next to the naive ones.

use posi::baselines::naive_inference;
use posi::model::Variant;
use posi::sampler::ChainConfig;
use posi::simlab::{generate_instance, projection_target, selection_informed, ScenarioConfig, Setting, Snr};

fn main() -> posi::Result<()> {
    let cfg = ScenarioConfig::new(Setting::BalancedOverlapping, Snr::Medium, "1:1", 1, 3);
    let inst = generate_instance(&cfg, 0)?;
    assert_eq!(inst.groups.variant, Variant::Overlapping);
    let ds = &inst.dataset;
    let all_rows: Vec<usize> = (0..ds.n()).collect();

    let si = selection_informed(ds, &inst.groups, cfg.tau2(), 11, 100.0 * cfg.sigma.powi(2), &ChainConfig::default(), 0.9)?;
    let target = projection_target(&ds.x, &inst.beta, &si.active, &all_rows)?;
    println!(
        "selection-informed: {} columns, covers {}/{}, median length {:.2}",
        si.active.len(),
        si.report.covers(target.as_slice()).iter().filter(|c| **c).count(),
        si.active.len(),
        median(si.report.lengths())
    );

    let nv = naive_inference(ds, &inst.groups, 0.9)?;
    let target = projection_target(&ds.x, &inst.beta, &nv.active, &all_rows)?;
    println!(
        "naive:              {} columns, covers {}/{}, median length {:.2}",
        nv.active.len(),
        nv.report.covers(target.as_slice()).iter().filter(|c| **c).count(),
        nv.active.len(),
        median(nv.report.lengths())
    );
    Ok(())
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}
