//! Synthetic designs, replicated experiments comparing selection-informed,
//! naive and split inference, and their F1 / coverage / length metrics.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::{index::sample, IndexedRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adjust::AdjustmentParams;
use crate::baselines::{label_ratio, naive_inference_with, split_inference_with, BaselineResult, SplitConfig};
use crate::error::{Error, Result};
use crate::groupsolve::{select, SolveOptions};
use crate::linalg::{cholesky, quantile_sorted, select_columns, select_rows, sorted_copy, Mat, Vector};
use crate::model::{
    draw_randomization, format_float, Dataset, GroupStructure, RandomizationConfig, SigmaSpec, Variant,
    DEFAULT_OVERLAP_RIDGE,
};
use crate::posterior::{PosteriorSpec, Prior};
use crate::sampler::{credible_intervals, run_chain, ChainConfig, IntervalReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    Balanced,
    Heterogeneous,
    BalancedOverlapping,
}

impl Setting {
    pub fn name(self) -> &'static str {
        match self {
            Setting::Balanced => "balanced",
            Setting::Heterogeneous => "heterogeneous",
            Setting::BalancedOverlapping => "balanced_overlapping",
        }
    }

    pub fn p(self) -> usize {
        match self {
            Setting::BalancedOverlapping => 103,
            _ => 100,
        }
    }

    /// Column layout of the candidate groups.
    pub fn groups(self) -> Vec<Vec<usize>> {
        match self {
            Setting::Balanced => (0..25).map(|g| (4 * g..4 * g + 4).collect()).collect(),
            Setting::BalancedOverlapping => (0..34).map(|g| (3 * g..3 * g + 4).collect()).collect(),
            Setting::Heterogeneous => {
                let sizes = [3, 3, 3, 4, 4, 4, 4, 5, 5, 5, 5, 5, 10, 10, 10, 10, 10];
                let mut start = 0;
                sizes
                    .iter()
                    .map(|&s| {
                        let g: Vec<usize> = (start..start + s).collect();
                        start += s;
                        g
                    })
                    .collect()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Snr {
    Low,
    Medium,
    High,
}

impl Snr {
    pub fn t(self) -> f64 {
        match self {
            Snr::Low => 0.2,
            Snr::Medium => 0.5,
            Snr::High => 1.5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Snr::Low => "low",
            Snr::Medium => "medium",
            Snr::High => "high",
        }
    }
}

/// Unit of the signal magnitude `sqrt(2 t log p)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignalUnits {
    /// Coefficients equal the magnitude itself.
    Absolute,
    /// Coefficients are the magnitude times `sigma`.
    Sigma,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum F1Unit {
    Group,
    Covariate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    SelectionInformed,
    Naive,
    Split,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::SelectionInformed, Method::Naive, Method::Split];

    pub fn name(self) -> &'static str {
        match self {
            Method::SelectionInformed => "selection_informed",
            Method::Naive => "naive",
            Method::Split => "split",
        }
    }
}

fn default_n() -> usize {
    500
}
fn default_sigma() -> f64 {
    3.0
}
fn default_ar_rho() -> f64 {
    0.2
}
fn default_randomization() -> String {
    "1:1".into()
}
fn default_replications() -> usize {
    100
}
fn default_one() -> f64 {
    1.0
}
fn default_level() -> f64 {
    0.9
}
fn default_draws() -> usize {
    1500
}
fn default_burn_in() -> usize {
    100
}
fn default_prior_variance() -> f64 {
    100.0
}
fn default_f1_unit() -> F1Unit {
    F1Unit::Covariate
}
fn default_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}
fn default_signal_units() -> SignalUnits {
    SignalUnits::Sigma
}

/// One simulation cell, read from TOML or JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub setting: Setting,
    /// `disjoint` or `standardized`; the overlapping setting forces `overlapping`.
    #[serde(default)]
    pub variant: Option<Variant>,
    pub snr: Snr,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default = "default_ar_rho")]
    pub ar_rho: f64,
    /// `"2:1"`, `"1:1"` or `"1:2"`.
    #[serde(default = "default_randomization")]
    pub randomization: String,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default = "default_one")]
    pub lambda_scale: f64,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default = "default_draws")]
    pub draws: usize,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    /// Prior variance in units of `sigma^2`.
    #[serde(default = "default_prior_variance")]
    pub prior_variance: f64,
    #[serde(default = "default_f1_unit")]
    pub f1_unit: F1Unit,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_signal_units")]
    pub signal_units: SignalUnits,
}

impl ScenarioConfig {
    pub fn new(setting: Setting, snr: Snr, randomization: &str, replications: usize, base_seed: u64) -> Self {
        Self {
            setting,
            variant: None,
            snr,
            n: default_n(),
            sigma: default_sigma(),
            ar_rho: default_ar_rho(),
            randomization: randomization.into(),
            replications,
            lambda_scale: 1.0,
            base_seed,
            level: default_level(),
            draws: default_draws(),
            burn_in: default_burn_in(),
            prior_variance: default_prior_variance(),
            f1_unit: default_f1_unit(),
            methods: default_methods(),
            signal_units: default_signal_units(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(format!("scenario config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(format!("scenario config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `.json` as JSON and anything else as TOML.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
            Self::from_json(&text)
        } else {
            Self::from_toml(&text)
        }
    }

    pub fn validate(&self) -> Result<()> {
        label_ratio(&self.randomization)?;
        let p = self.setting.p();
        if self.n < 2 * p {
            return Err(Error::Config(format!("n = {} is too small for p = {p}; need n >= 2p", self.n)));
        }
        for (v, what) in [(self.sigma, "sigma"), (self.lambda_scale, "lambda_scale"), (self.prior_variance, "prior_variance")] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{what} must be positive, got {v}")));
            }
        }
        if !(self.ar_rho.abs() < 1.0) {
            return Err(Error::Config(format!("ar_rho must lie in (-1, 1), got {}", self.ar_rho)));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::Config(format!("level must lie in (0, 1), got {}", self.level)));
        }
        if self.replications == 0 {
            return Err(Error::Config("replications must be positive".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("at least one method is required".into()));
        }
        match (self.setting, self.variant) {
            (Setting::BalancedOverlapping, None | Some(Variant::Overlapping)) => {}
            (Setting::BalancedOverlapping, Some(v)) => {
                return Err(Error::Config(format!("the overlapping setting cannot use variant {}", v.name())))
            }
            (_, Some(Variant::Overlapping)) => {
                return Err(Error::Config("the overlapping variant needs setting balanced_overlapping".into()))
            }
            (_, Some(Variant::Sparse)) => {
                return Err(Error::Config("the sparse variant is not part of the simulation grid".into()))
            }
            _ => {}
        }
        ChainConfig { draws: self.draws, burn_in: self.burn_in, ..Default::default() }.validate()
    }

    pub fn variant(&self) -> Variant {
        match self.setting {
            Setting::BalancedOverlapping => Variant::Overlapping,
            _ => self.variant.unwrap_or(Variant::Disjoint),
        }
    }

    /// Selection fraction `r` of the randomization label.
    pub fn ratio(&self) -> f64 {
        label_ratio(&self.randomization).expect("validated label")
    }

    /// `tau^2 = sigma^2 (1 - r) / r`.
    pub fn tau2(&self) -> f64 {
        let r = self.ratio();
        self.sigma * self.sigma * (1.0 - r) / r
    }
}

/// SplitMix64 finalizer; decorrelates seeds derived from nearby inputs.
pub fn mix_seed(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for `stream` of replication `rep`.
pub fn derive_seed(base: u64, rep: u64, stream: u64) -> u64 {
    mix_seed(mix_seed(mix_seed(base) ^ rep) ^ stream)
}

const STREAM_DATA: u64 = 1;
const STREAM_OMEGA: u64 = 2;
const STREAM_CHAIN: u64 = 3;
const STREAM_SPLIT: u64 = 4;

/// `n` rows of `N(0, Sigma)` with `Sigma_ij = rho^|i - j|`, via the stationary
/// AR(1) recursion.
pub fn ar_design(n: usize, p: usize, rho: f64, rng: &mut impl Rng) -> Mat {
    let innov = (1.0 - rho * rho).sqrt();
    let mut x = Mat::zeros(n, p);
    for i in 0..n {
        let mut prev: f64 = StandardNormal.sample(rng);
        x[(i, 0)] = prev;
        for j in 1..p {
            let e: f64 = StandardNormal.sample(rng);
            prev = rho * prev + innov * e;
            x[(i, j)] = prev;
        }
    }
    x
}

/// Centers each column and scales it to unit Euclidean norm.
pub fn normalize_columns(x: &mut Mat) {
    for mut col in x.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
        let nrm = col.norm();
        if nrm > 0.0 {
            col /= nrm;
        }
    }
}

/// `lambda_g = lambda rho sigma sqrt(2 log p |g| / gbar)`, `gbar` the floor of
/// the mean group size.
pub fn penalty_weights(groups: &[Vec<usize>], p: usize, sigma: f64, lambda_scale: f64, rho: f64) -> Vec<f64> {
    let total: usize = groups.iter().map(Vec::len).sum();
    let gbar = (total / groups.len()).max(1) as f64;
    let base = 2.0 * (p as f64).ln();
    groups
        .iter()
        .map(|g| lambda_scale * rho * sigma * (base * g.len() as f64 / gbar).sqrt())
        .collect()
}

/// One simulated dataset with its candidate groups and true coefficients.
#[derive(Debug, Clone)]
pub struct Instance {
    pub dataset: Dataset,
    pub groups: GroupStructure,
    pub beta: Vector,
    pub active_groups: Vec<usize>,
}

impl Instance {
    pub fn true_support(&self) -> Vec<usize> {
        (0..self.beta.len()).filter(|&j| self.beta[j] != 0.0).collect()
    }
}

fn group_structure(config: &ScenarioConfig, rho: f64) -> Result<GroupStructure> {
    let p = config.setting.p();
    let layout = config.setting.groups();
    let weights = penalty_weights(&layout, p, config.sigma, config.lambda_scale, rho);
    let variant = config.variant();
    let ridge = if variant == Variant::Overlapping { DEFAULT_OVERLAP_RIDGE } else { 0.0 };
    GroupStructure::new(variant, layout, weights, 0.0, ridge, p)
}

pub fn generate_instance(config: &ScenarioConfig, replication: u64) -> Result<Instance> {
    config.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(config.base_seed, replication, STREAM_DATA));
    let p = config.setting.p();
    let groups = group_structure(config, 1.0)?;
    let layout = &groups.groups;

    let active_groups: Vec<usize> = match config.setting {
        Setting::Heterogeneous => {
            // one group each of sizes 3, 4 and 5
            [3usize, 4, 5]
                .iter()
                .map(|&s| {
                    let cands: Vec<usize> = (0..layout.len()).filter(|&g| layout[g].len() == s).collect();
                    *cands.choose(&mut rng).expect("layout has every size")
                })
                .collect()
        }
        _ => {
            let mut a = sample(&mut rng, layout.len(), 3).into_vec();
            a.sort_unstable();
            a
        }
    };

    let mut magnitude = (2.0 * config.snr.t() * (p as f64).ln()).sqrt();
    if config.signal_units == SignalUnits::Sigma {
        magnitude *= config.sigma;
    }
    let mut beta = Vector::zeros(p);
    let support: Vec<usize> = active_groups
        .iter()
        .flat_map(|&g| layout[g].iter().copied())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let t = support.len();
    for (k, &j) in support.iter().enumerate() {
        let m = match config.setting {
            Setting::Heterogeneous => {
                let lo = magnitude / t as f64;
                lo + (magnitude - lo) * k as f64 / (t - 1) as f64
            }
            _ => magnitude,
        };
        beta[j] = if rng.random::<bool>() { m } else { -m };
    }

    let mut x = ar_design(config.n, p, config.ar_rho, &mut rng);
    normalize_columns(&mut x);
    let noise = Vector::from_fn(config.n, |_, _| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng));
    let y = &x * &beta + noise * config.sigma;
    let dataset = Dataset::new(x, y, SigmaSpec::Known(config.sigma))?;
    Ok(Instance { dataset, groups, beta, active_groups })
}

/// `TP / (TP + (FP + FN) / 2)`; zero when both sets are empty.
pub fn f1_score(selected: &[usize], truth: &[usize]) -> f64 {
    let s: BTreeSet<_> = selected.iter().collect();
    let t: BTreeSet<_> = truth.iter().collect();
    let tp = s.intersection(&t).count() as f64;
    let fp = s.len() as f64 - tp;
    let fneg = t.len() as f64 - tp;
    let denom = tp + 0.5 * (fp + fneg);
    if denom == 0.0 {
        0.0
    } else {
        tp / denom
    }
}

/// Projection parameter `(X_E^T X_E)^{-1} X_E^T X beta` on `rows`.
pub fn projection_target(x: &Mat, beta: &Vector, active: &[usize], rows: &[usize]) -> Result<Vector> {
    let xr = select_rows(x, rows);
    let xe = select_columns(&xr, active);
    let chol = cholesky(&(xe.transpose() * &xe), "X_E^T X_E for the projection target")?;
    Ok(chol.solve(&(xe.transpose() * (xr * beta))))
}

/// Selection-informed inference on one dataset: randomized selection with
/// `Omega = tau^2 I`, then the surrogate posterior under an isotropic prior.
#[derive(Debug, Clone)]
pub struct SelectionInformed {
    pub active: Vec<usize>,
    pub selected_groups: Vec<usize>,
    pub report: IntervalReport,
}

pub fn selection_informed(
    dataset: &Dataset,
    groups: &GroupStructure,
    tau2: f64,
    omega_seed: u64,
    prior_variance: f64,
    chain: &ChainConfig,
    level: f64,
) -> Result<SelectionInformed> {
    let opts = SolveOptions::default();
    let dim = match groups.variant {
        Variant::Overlapping => groups.augmented_dim(),
        _ => dataset.p(),
    };
    let omega = draw_randomization(&RandomizationConfig::isotropic(tau2, omega_seed), dim)?;
    let (problem, rec) = select(dataset, groups, &omega, &opts)?;
    let params = AdjustmentParams::build(&problem, &rec, dataset, &(Mat::identity(dim, dim) * tau2))?;
    let prior = Prior::isotropic(rec.n_active(), prior_variance)?;
    let spec = PosteriorSpec::new(params, prior)?;
    let draws = run_chain(&spec, chain)?;
    Ok(SelectionInformed {
        active: rec.active,
        selected_groups: rec.selected_groups,
        report: credible_intervals(&draws, level)?,
    })
}

/// One method on one replication. Interval fields are `NaN` when the
/// selection was empty or the method failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub method: Method,
    pub setting: Setting,
    pub variant: String,
    pub snr: Snr,
    pub randomization: String,
    pub replication: u64,
    pub f1: f64,
    pub coverage: f64,
    pub n_covered: usize,
    pub mean_length: f64,
    pub median_length: f64,
    pub n_selected: usize,
    pub n_selected_groups: usize,
    pub empty: bool,
    pub failed: bool,
}

impl MetricsRow {
    fn blank(config: &ScenarioConfig, method: Method, replication: u64) -> Self {
        Self {
            method,
            setting: config.setting,
            variant: config.variant().name().into(),
            snr: config.snr,
            randomization: config.randomization.clone(),
            replication,
            f1: 0.0,
            coverage: f64::NAN,
            n_covered: 0,
            mean_length: f64::NAN,
            median_length: f64::NAN,
            n_selected: 0,
            n_selected_groups: 0,
            empty: false,
            failed: false,
        }
    }

    /// Whether the row carries interval metrics.
    pub fn has_intervals(&self) -> bool {
        !self.empty && !self.failed
    }
}

fn fill_row(
    row: &mut MetricsRow,
    inst: &Instance,
    config: &ScenarioConfig,
    active: &[usize],
    selected_groups: &[usize],
    report: &IntervalReport,
    rows: &[usize],
) -> Result<()> {
    row.n_selected = active.len();
    row.n_selected_groups = selected_groups.len();
    row.f1 = match config.f1_unit {
        F1Unit::Covariate => f1_score(active, &inst.true_support()),
        F1Unit::Group => f1_score(selected_groups, &inst.active_groups),
    };
    let target = projection_target(&inst.dataset.x, &inst.beta, active, rows)?;
    let covers = report.covers(target.as_slice());
    row.n_covered = covers.iter().filter(|c| **c).count();
    row.coverage = row.n_covered as f64 / covers.len() as f64;
    let lengths = report.lengths();
    row.mean_length = lengths.iter().sum::<f64>() / lengths.len() as f64;
    row.median_length = quantile_sorted(&sorted_copy(lengths), 0.5);
    Ok(())
}

/// Runs every configured method on replication `replication`.
pub fn run_replication(config: &ScenarioConfig, replication: u64) -> Result<Vec<MetricsRow>> {
    let inst = generate_instance(config, replication)?;
    let mut out = Vec::new();
    let mut methods = config.methods.clone();
    methods.sort();
    methods.dedup();
    let all_rows: Vec<usize> = (0..config.n).collect();
    for method in methods {
        let mut row = MetricsRow::blank(config, method, replication);
        let outcome = match method {
            Method::SelectionInformed => {
                let chain = ChainConfig {
                    draws: config.draws,
                    burn_in: config.burn_in,
                    seed: derive_seed(config.base_seed, replication, STREAM_CHAIN),
                    ..Default::default()
                };
                selection_informed(
                    &inst.dataset,
                    &inst.groups,
                    config.tau2(),
                    derive_seed(config.base_seed, replication, STREAM_OMEGA),
                    config.prior_variance * config.sigma * config.sigma,
                    &chain,
                    config.level,
                )
                .map(|si| BaselineResult {
                    active: si.active,
                    selected_groups: si.selected_groups,
                    report: si.report,
                    inference_rows: all_rows.clone(),
                })
            }
            Method::Naive => naive_inference_with(&inst.dataset, &inst.groups, config.level, &SolveOptions::default()),
            Method::Split => {
                let split = SplitConfig::from_label(
                    &config.randomization,
                    derive_seed(config.base_seed, replication, STREAM_SPLIT),
                )?;
                split_inference_with(&inst.dataset, &inst.groups, &split, config.level, &SolveOptions::default())
            }
        };
        match outcome {
            Ok(res) => {
                fill_row(&mut row, &inst, config, &res.active, &res.selected_groups, &res.report, &res.inference_rows)?
            }
            Err(Error::EmptySelection) => {
                row.empty = true;
                row.f1 = 0.0;
            }
            Err(e) => {
                log::warn!("replication {replication}, method {}: {e}", method.name());
                row.failed = true;
                row.f1 = f64::NAN;
            }
        }
        out.push(row);
    }
    Ok(out)
}

/// All replications in parallel; rows ordered by replication then method.
pub fn run_experiment(config: &ScenarioConfig) -> Result<Vec<MetricsRow>> {
    config.validate()?;
    let per_rep: Vec<Result<Vec<MetricsRow>>> =
        (0..config.replications as u64).into_par_iter().map(|r| run_replication(config, r)).collect();
    let mut rows = Vec::with_capacity(config.replications * config.methods.len());
    for r in per_rep {
        rows.extend(r?);
    }
    Ok(rows)
}

/// Per-method quartiles and pooled rates over a set of rows.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub method: Method,
    pub setting: Setting,
    pub variant: String,
    pub snr: Snr,
    pub randomization: String,
    pub replications: usize,
    pub n_empty: usize,
    pub n_failed: usize,
    pub f1_mean: f64,
    pub f1_q1: f64,
    pub f1_median: f64,
    pub f1_q3: f64,
    pub coverage_mean: f64,
    pub coverage_pooled: f64,
    pub coverage_q1: f64,
    pub coverage_median: f64,
    pub coverage_q3: f64,
    pub length_mean: f64,
    pub length_q1: f64,
    pub length_median: f64,
    pub length_q3: f64,
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn quartiles(v: &[f64]) -> (f64, f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let s = sorted_copy(v.iter().copied());
    (quantile_sorted(&s, 0.25), quantile_sorted(&s, 0.5), quantile_sorted(&s, 0.75))
}

/// Summaries for one method. Length quartiles are over the per-replication
/// median lengths; empty and failed replications only enter the counts
/// (and F1, where an empty selection scores zero).
pub fn summarize_method(rows: &[MetricsRow], method: Method) -> Option<SummaryRow> {
    let mine: Vec<&MetricsRow> = rows.iter().filter(|r| r.method == method).collect();
    let first = *mine.first()?;
    let f1: Vec<f64> = mine.iter().filter(|r| !r.failed).map(|r| r.f1).collect();
    let ok: Vec<&&MetricsRow> = mine.iter().filter(|r| r.has_intervals()).collect();
    let cov: Vec<f64> = ok.iter().map(|r| r.coverage).collect();
    let len: Vec<f64> = ok.iter().map(|r| r.median_length).collect();
    let covered: usize = ok.iter().map(|r| r.n_covered).sum();
    let total: usize = ok.iter().map(|r| r.n_selected).sum();
    let (f1_q1, f1_median, f1_q3) = quartiles(&f1);
    let (coverage_q1, coverage_median, coverage_q3) = quartiles(&cov);
    let (length_q1, length_median, length_q3) = quartiles(&len);
    Some(SummaryRow {
        method,
        setting: first.setting,
        variant: first.variant.clone(),
        snr: first.snr,
        randomization: first.randomization.clone(),
        replications: mine.len(),
        n_empty: mine.iter().filter(|r| r.empty).count(),
        n_failed: mine.iter().filter(|r| r.failed).count(),
        f1_mean: mean(&f1),
        f1_q1,
        f1_median,
        f1_q3,
        coverage_mean: mean(&cov),
        coverage_pooled: if total == 0 { f64::NAN } else { covered as f64 / total as f64 },
        coverage_q1,
        coverage_median,
        coverage_q3,
        length_mean: mean(&len),
        length_q1,
        length_median,
        length_q3,
    })
}

pub fn summarize(rows: &[MetricsRow]) -> Vec<SummaryRow> {
    Method::ALL.iter().filter_map(|&m| summarize_method(rows, m)).collect()
}

fn fmt(v: f64) -> String {
    if v.is_nan() {
        "NA".into()
    } else {
        format_float(v)
    }
}

pub const METRICS_HEADER: [&str; 15] = [
    "method",
    "setting",
    "variant",
    "snr",
    "randomization",
    "replication",
    "f1",
    "coverage",
    "n_covered",
    "mean_length",
    "median_length",
    "n_selected",
    "n_selected_groups",
    "empty",
    "failed",
];

pub fn write_metrics_csv(rows: &[MetricsRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(METRICS_HEADER)?;
    for r in rows {
        w.write_record([
            r.method.name().to_string(),
            r.setting.name().to_string(),
            r.variant.clone(),
            r.snr.name().to_string(),
            r.randomization.clone(),
            r.replication.to_string(),
            fmt(r.f1),
            fmt(r.coverage),
            r.n_covered.to_string(),
            fmt(r.mean_length),
            fmt(r.median_length),
            r.n_selected.to_string(),
            r.n_selected_groups.to_string(),
            r.empty.to_string(),
            r.failed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary_csv(rows: &[SummaryRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "method",
        "setting",
        "variant",
        "snr",
        "randomization",
        "replications",
        "n_empty",
        "n_failed",
        "f1_mean",
        "f1_q1",
        "f1_median",
        "f1_q3",
        "coverage_mean",
        "coverage_pooled",
        "coverage_q1",
        "coverage_median",
        "coverage_q3",
        "length_mean",
        "length_q1",
        "length_median",
        "length_q3",
    ])?;
    for r in rows {
        let mut rec = vec![
            r.method.name().to_string(),
            r.setting.name().to_string(),
            r.variant.clone(),
            r.snr.name().to_string(),
            r.randomization.clone(),
            r.replications.to_string(),
            r.n_empty.to_string(),
            r.n_failed.to_string(),
        ];
        rec.extend(
            [
                r.f1_mean,
                r.f1_q1,
                r.f1_median,
                r.f1_q3,
                r.coverage_mean,
                r.coverage_pooled,
                r.coverage_q1,
                r.coverage_median,
                r.coverage_q3,
                r.length_mean,
                r.length_q1,
                r.length_median,
                r.length_q3,
            ]
            .map(fmt),
        );
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(setting: Setting) -> ScenarioConfig {
        let mut c = ScenarioConfig::new(setting, Snr::Medium, "1:1", 2, 5);
        c.draws = 200;
        c.burn_in = 20;
        c
    }

    #[test]
    fn balanced_truth_has_twelve_equal_magnitudes() {
        let mut cfg = quick(Setting::Balanced);
        cfg.signal_units = SignalUnits::Absolute;
        let inst = generate_instance(&cfg, 0).unwrap();
        let nz: Vec<f64> = inst.beta.iter().copied().filter(|b| *b != 0.0).collect();
        assert_eq!(nz.len(), 12);
        let m = (2.0 * 0.5 * 100f64.ln()).sqrt();
        assert!(nz.iter().all(|b| (b.abs() - m).abs() < 1e-12));
    }

    #[test]
    fn heterogeneous_truth_is_linearly_spaced() {
        let mut cfg = quick(Setting::Heterogeneous);
        cfg.signal_units = SignalUnits::Absolute;
        let inst = generate_instance(&cfg, 3).unwrap();
        let mags: Vec<f64> = inst.beta.iter().filter(|b| **b != 0.0).map(|b| b.abs()).collect();
        assert_eq!(mags.len(), 12);
        let m = (2.0 * 0.5 * 100f64.ln()).sqrt();
        let sizes: Vec<usize> = inst.active_groups.iter().map(|&g| inst.groups.groups[g].len()).collect();
        assert_eq!(sizes, vec![3, 4, 5]);
        let mut sorted = mags.clone();
        sorted.sort_by(f64::total_cmp);
        for (k, v) in sorted.iter().enumerate() {
            let expect = m / 12.0 + (m - m / 12.0) * k as f64 / 11.0;
            assert!((v - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn overlapping_layout_chains_groups() {
        let g = Setting::BalancedOverlapping.groups();
        assert_eq!(g.len(), 34);
        assert_eq!(g[0], vec![0, 1, 2, 3]);
        assert_eq!(g[1], vec![3, 4, 5, 6]);
        assert_eq!(g[33], vec![99, 100, 101, 102]);
    }

    #[test]
    fn ar_rows_have_the_ar_covariance() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let n = 100_000;
        let x = ar_design(n, 5, 0.2, &mut rng);
        for i in 0..5 {
            for j in 0..5 {
                let c = x.column(i).dot(&x.column(j)) / n as f64;
                assert!((c - 0.2f64.powi((i as i32 - j as i32).abs())).abs() < 0.01, "({i},{j}) {c}");
            }
        }
    }

    #[test]
    fn penalty_weight_examples() {
        let bal = Setting::Balanced.groups();
        let w = penalty_weights(&bal, 100, 3.0, 1.0, 1.0);
        assert!(w.iter().all(|v| (v - 3.0 * (2.0 * 100f64.ln()).sqrt()).abs() < 1e-12));
        assert!((w[0] - 9.1049).abs() < 1e-3);
        let het = Setting::Heterogeneous.groups();
        let wh = penalty_weights(&het, 100, 3.0, 1.0, 1.0);
        let five = het.iter().position(|g| g.len() == 5).unwrap();
        let ten = het.iter().position(|g| g.len() == 10).unwrap();
        assert!((wh[ten] / wh[five] - 2f64.sqrt()).abs() < 1e-12);
        let half = penalty_weights(&bal, 100, 3.0, 1.0, 0.5);
        assert!((half[0] - 0.5 * w[0]).abs() < 1e-12);
    }

    #[test]
    fn f1_examples() {
        let truth: Vec<usize> = (0..12).collect();
        assert_eq!(f1_score(&truth, &truth), 1.0);
        let selected: Vec<usize> = (0..8).chain(40..44).collect();
        assert!((f1_score(&selected, &truth) - 8.0 / 12.0).abs() < 1e-12);
        assert_eq!(f1_score(&[], &truth), 0.0);
    }

    #[test]
    fn unknown_label_lists_the_allowed_ones() {
        let mut cfg = quick(Setting::Balanced);
        cfg.randomization = "3:1".into();
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("2:1") && msg.contains("1:2"), "{msg}");
    }

    #[test]
    fn config_parses_from_toml_with_defaults() {
        let cfg = ScenarioConfig::from_toml("setting = \"balanced\"\nsnr = \"medium\"\nreplications = 2\n").unwrap();
        assert_eq!(cfg.n, 500);
        assert_eq!(cfg.randomization, "1:1");
        assert!((cfg.tau2() - 9.0).abs() < 1e-12);
        assert!(ScenarioConfig::from_toml("setting = \"balanced\"\nsnr = \"medium\"\nbogus = 1\n").is_err());
    }

    #[test]
    fn experiment_is_deterministic_and_complete() {
        let cfg = quick(Setting::Balanced);
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(a.len(), 6);
        let dir = tempfile::tempdir().unwrap();
        write_metrics_csv(&a, &dir.path().join("a.csv")).unwrap();
        write_metrics_csv(&b, &dir.path().join("b.csv")).unwrap();
        let ta = std::fs::read(dir.path().join("a.csv")).unwrap();
        let tb = std::fs::read(dir.path().join("b.csv")).unwrap();
        assert_eq!(ta, tb);
        for r in &a {
            assert!(r.f1.is_nan() || (0.0..=1.0).contains(&r.f1));
            if r.has_intervals() {
                assert!((0.0..=1.0).contains(&r.coverage) && r.mean_length >= 0.0);
            }
        }
    }
}
