//! Comparison procedures: naive inference that ignores selection, and data
//! splitting with OLS on the holdout rows.

use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::groupsolve::{select, SelectionProblem, SolveOptions};
use crate::linalg::{cholesky, normal_quantile, select_columns, spd_inverse, Vector};
use crate::model::{Dataset, GroupStructure, SigmaSpec, Variant};
use crate::sampler::{Interval, IntervalReport};

/// Outcome of a baseline: the selected set and the intervals for its
/// coefficients.
#[derive(Debug, Clone)]
pub struct BaselineResult {
    pub active: Vec<usize>,
    pub selected_groups: Vec<usize>,
    pub report: IntervalReport,
    /// Rows whose design defines the targeted projection parameter.
    pub inference_rows: Vec<usize>,
}

fn check_level(level: f64) -> Result<()> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Config(format!("level must lie in (0, 1), got {level}")));
    }
    Ok(())
}

fn zero_randomization(dataset: &Dataset, groups: &GroupStructure) -> Result<Vector> {
    Ok(Vector::zeros(SelectionProblem::new(dataset, groups)?.dim()))
}

/// Non-randomized group lasso followed by textbook Gaussian intervals for the
/// refitted coefficients.
pub fn naive_inference(dataset: &Dataset, groups: &GroupStructure, level: f64) -> Result<BaselineResult> {
    naive_inference_with(dataset, groups, level, &SolveOptions::default())
}

pub fn naive_inference_with(
    dataset: &Dataset,
    groups: &GroupStructure,
    level: f64,
    opts: &SolveOptions,
) -> Result<BaselineResult> {
    check_level(level)?;
    let omega = zero_randomization(dataset, groups)?;
    let (_, rec) = select(dataset, groups, &omega, opts)?;
    let z = normal_quantile(0.5 * (1.0 + level));
    let sigma_e = rec.sigma_e_mat();
    let intervals = rec
        .beta_hat
        .iter()
        .enumerate()
        .map(|(j, b)| {
            let h = z * sigma_e[(j, j)].sqrt();
            Interval { lower: b - h, upper: b + h }
        })
        .collect();
    Ok(BaselineResult {
        active: rec.active,
        selected_groups: rec.selected_groups,
        report: IntervalReport { level, estimate: rec.beta_hat, intervals },
        inference_rows: (0..dataset.n()).collect(),
    })
}

/// Selection fraction of a split, e.g. `"2:1"` selects on two thirds of the rows.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitConfig {
    pub ratio: f64,
    pub seed: u64,
    pub label: String,
}

pub const SPLIT_LABELS: [&str; 3] = ["2:1", "1:1", "1:2"];

impl SplitConfig {
    pub fn new(ratio: f64, seed: u64) -> Result<Self> {
        if !(ratio > 0.0 && ratio < 1.0) {
            return Err(Error::Config(format!("split ratio must lie in (0, 1), got {ratio}")));
        }
        Ok(Self { ratio, seed, label: format!("{ratio}") })
    }

    pub fn from_label(label: &str, seed: u64) -> Result<Self> {
        let ratio = label_ratio(label)?;
        Ok(Self { ratio, seed, label: label.to_string() })
    }

    /// Rows used for selection out of `n`.
    pub fn selection_rows(&self, n: usize) -> usize {
        (self.ratio * n as f64).floor() as usize
    }

    /// Both halves must be usable: at least two selection rows and at least
    /// two holdout rows (one coefficient plus one degree of freedom).
    pub fn validate(&self, n: usize) -> Result<()> {
        let m = self.selection_rows(n);
        if m < 2 || n - m < 2 {
            return Err(Error::Config(format!(
                "split ratio {} on {n} rows leaves {m} selection and {} holdout rows; each needs at least 2",
                self.ratio,
                n - m
            )));
        }
        Ok(())
    }

    /// Penalty scaling on the selection subsample.
    pub fn penalty_scale(&self, variant: Variant) -> f64 {
        match variant {
            Variant::Standardized => self.ratio.sqrt(),
            _ => self.ratio,
        }
    }
}

/// `"a:b"` with positive integers → `a / (a + b)`.
pub fn label_ratio(label: &str) -> Result<f64> {
    let bad = || {
        Error::Config(format!(
            "invalid randomization label {label:?}; allowed labels are {}",
            SPLIT_LABELS.join(", ")
        ))
    };
    if !SPLIT_LABELS.contains(&label.trim()) {
        return Err(bad());
    }
    let (a, b) = label.trim().split_once(':').ok_or_else(bad)?;
    let a = f64::from_str(a).map_err(|_| bad())?;
    let b = f64::from_str(b).map_err(|_| bad())?;
    Ok(a / (a + b))
}

/// Group lasso on a random `floor(r n)` subsample, then OLS intervals for the
/// selected columns from the remaining rows.
pub fn split_inference(
    dataset: &Dataset,
    groups: &GroupStructure,
    config: &SplitConfig,
    level: f64,
) -> Result<BaselineResult> {
    split_inference_with(dataset, groups, config, level, &SolveOptions::default())
}

pub fn split_inference_with(
    dataset: &Dataset,
    groups: &GroupStructure,
    config: &SplitConfig,
    level: f64,
    opts: &SolveOptions,
) -> Result<BaselineResult> {
    check_level(level)?;
    let n = dataset.n();
    config.validate(n)?;
    let mut rows: Vec<usize> = (0..n).collect();
    rows.shuffle(&mut ChaCha20Rng::seed_from_u64(config.seed));
    let m = config.selection_rows(n);
    let mut sel_rows = rows[..m].to_vec();
    let mut hold_rows = rows[m..].to_vec();
    sel_rows.sort_unstable();
    hold_rows.sort_unstable();

    let sel = dataset.subset_rows(&sel_rows)?;
    let scaled = groups.scaled(config.penalty_scale(groups.variant));
    let omega = zero_randomization(&sel, &scaled)?;
    let (_, rec) = select(&sel, &scaled, &omega, opts)?;

    let k = rec.active.len();
    if hold_rows.len() < k + 1 {
        return Err(Error::RankDeficient(format!(
            "holdout has {} rows for {k} selected columns; needs at least {}",
            hold_rows.len(),
            k + 1
        )));
    }
    let hold = dataset.subset_rows(&hold_rows)?;
    let xe = select_columns(&hold.x, &rec.active);
    let gram = xe.transpose() * &xe;
    let chol = cholesky(&gram, "holdout X_E^T X_E")
        .map_err(|_| Error::RankDeficient("holdout design of the selected columns is rank deficient".into()))?;
    let beta = chol.solve(&(xe.transpose() * &hold.y));
    let gram_inv = spd_inverse(&gram, "holdout X_E^T X_E")?;

    let (sigma, quantile) = match hold.sigma {
        SigmaSpec::Known(s) => (s, normal_quantile(0.5 * (1.0 + level))),
        SigmaSpec::Estimate => {
            let df = hold_rows.len() - k;
            let resid = &hold.y - &xe * &beta;
            let s = (resid.norm_squared() / df as f64).sqrt();
            let t = StudentsT::new(0.0, 1.0, df as f64)
                .map_err(|e| Error::Numerical(format!("Student t with {df} df: {e}")))?;
            (s, t.inverse_cdf(0.5 * (1.0 + level)))
        }
    };
    let intervals = (0..k)
        .map(|j| {
            let h = quantile * sigma * gram_inv[(j, j)].sqrt();
            Interval { lower: beta[j] - h, upper: beta[j] + h }
        })
        .collect();
    Ok(BaselineResult {
        active: rec.active,
        selected_groups: rec.selected_groups,
        report: IntervalReport { level, estimate: beta.iter().copied().collect(), intervals },
        inference_rows: hold_rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{thin_qr, Mat};
    use rand_distr::{Distribution, StandardNormal};

    fn orthonormal_dataset(n: usize, p: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let raw = Mat::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng));
        let (q, _) = thin_qr(&raw);
        let beta = Vector::from_fn(p, |j, _| if j < 2 { 20.0 } else { 0.0 });
        let noise = Vector::from_fn(n, |_, _| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng));
        let y = &q * beta + noise;
        Dataset::new(q, y, SigmaSpec::Known(1.0)).unwrap()
    }

    fn two_groups() -> GroupStructure {
        GroupStructure::disjoint(vec![vec![0, 1], vec![2, 3]], 3.0, 4).unwrap()
    }

    #[test]
    fn naive_half_width_on_orthonormal_design_is_z() {
        let ds = orthonormal_dataset(50, 4, 1);
        let res = naive_inference(&ds, &two_groups(), 0.9).unwrap();
        assert_eq!(res.active, vec![0, 1]);
        for iv in &res.report.intervals {
            assert!((0.5 * iv.length() - 1.6448536269514722).abs() < 1e-6);
        }
    }

    #[test]
    fn naive_intervals_nest_across_levels() {
        let ds = orthonormal_dataset(50, 4, 2);
        let a = naive_inference(&ds, &two_groups(), 0.5).unwrap();
        let b = naive_inference(&ds, &two_groups(), 0.9).unwrap();
        for (s, l) in a.report.intervals.iter().zip(&b.report.intervals) {
            assert!(s.within(l));
        }
    }

    #[test]
    fn naive_on_zero_response_is_empty() {
        let mut ds = orthonormal_dataset(50, 4, 3);
        ds.y.fill(0.0);
        assert!(matches!(naive_inference(&ds, &two_groups(), 0.9), Err(Error::EmptySelection)));
    }

    #[test]
    fn degenerate_split_ratio_is_rejected() {
        let n = 50;
        let cfg = SplitConfig::new(1.0 - 1.0 / n as f64, 0).unwrap();
        assert!(cfg.validate(n).is_err());
        assert!(SplitConfig::new(1.0, 0).is_err());
        assert!(SplitConfig::from_label("3:1", 0).is_err());
        assert!((SplitConfig::from_label("2:1", 0).unwrap().ratio - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn split_is_deterministic_given_its_seed() {
        let ds = orthonormal_dataset(60, 4, 4);
        let cfg = SplitConfig::from_label("1:1", 11).unwrap();
        let a = split_inference(&ds, &two_groups(), &cfg, 0.9).unwrap();
        let b = split_inference(&ds, &two_groups(), &cfg, 0.9).unwrap();
        assert_eq!(a.report, b.report);
        assert_eq!(a.inference_rows, b.inference_rows);
        assert_eq!(a.inference_rows.len(), 30);
    }

    #[test]
    fn standardized_split_scales_penalty_by_root_ratio() {
        let cfg = SplitConfig::from_label("1:2", 0).unwrap();
        assert!((cfg.penalty_scale(Variant::Standardized) - (1.0_f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!((cfg.penalty_scale(Variant::Overlapping) - 1.0 / 3.0).abs() < 1e-15);
    }
}
