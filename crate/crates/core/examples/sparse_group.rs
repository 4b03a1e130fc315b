//! Sparse group lasso: an extra l1 term lets selection drop single columns
//! inside a selected group.

use posi::groupsolve::{select, SolveOptions};
use posi::model::{draw_randomization, Dataset, GroupStructure, RandomizationConfig, SigmaSpec, Variant};
use posi::linalg::{Mat, Vector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

fn main() -> posi::Result<()> {
    let (n, p) = (200, 12);
    let mut rng = ChaCha20Rng::seed_from_u64(17);
    let x = Mat::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng));
    // only the first column of group 1 and two columns of group 2 matter
    let mut beta = Vector::zeros(p);
    beta[0] = 1.5;
    beta[4] = -1.0;
    beta[5] = 1.0;
    let noise = Vector::from_fn(n, |_, _| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng));
    let ds = Dataset::new(x.clone(), &x * &beta + noise, SigmaSpec::Known(1.0))?;

    let layout: Vec<Vec<usize>> = (0..3).map(|g| (4 * g..4 * g + 4).collect()).collect();
    let omega = draw_randomization(&RandomizationConfig::isotropic(20.0, 3), p)?;
    for l1 in [0.0, 25.0] {
        let variant = if l1 > 0.0 { Variant::Sparse } else { Variant::Disjoint };
        let groups = GroupStructure::new(variant, layout.clone(), vec![30.0; 3], l1, 0.0, p)?;
        let (_, rec) = select(&ds, &groups, &omega, &SolveOptions::default())?;
        let cols: Vec<usize> = rec.active.iter().map(|c| c + 1).collect();
        println!("{:<9} l1={l1:<5} selected columns {cols:?}", variant.name());
    }
    Ok(())
}
