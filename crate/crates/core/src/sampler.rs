//! Preconditioned unadjusted Langevin sampler for the surrogate posterior and
//! the credible intervals read off its draws.

use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, quantile_sorted, sorted_copy, spd_inverse, Mat, Vector};
use crate::model::{format_float, GroupStructure, SelectionRecord};
use crate::posterior::{evaluate, Adjustment, PosteriorSpec};

const DIVERGENCE_GRAD_NORM: f64 = 1e8;

#[derive(Debug, Clone, PartialEq)]
pub enum Preconditioner {
    /// Inverse Hessian of the Gaussian data term plus prior at `beta_hat`.
    InverseHessianAtInit,
    Matrix(Mat),
}

/// Langevin step size. `PerCoordinate(s)` uses `eta = s / |E|`; a unit step
/// with an exact preconditioner would otherwise double the stationary
/// variance of the unadjusted chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSize {
    Absolute(f64),
    PerCoordinate(f64),
}

impl StepSize {
    pub fn eta(self, dim: usize) -> f64 {
        match self {
            StepSize::Absolute(e) => e,
            StepSize::PerCoordinate(s) => s / dim.max(1) as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainConfig {
    /// Total number of draws `K`, including the initial point and burn-in.
    pub draws: usize,
    pub burn_in: usize,
    pub step: StepSize,
    pub seed: u64,
    pub preconditioner: Preconditioner,
    /// Test hook: `false` drops the Gaussian innovation (pure gradient flow).
    pub noise: bool,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            draws: 1500,
            burn_in: 100,
            step: StepSize::PerCoordinate(1.0),
            seed: 0,
            preconditioner: Preconditioner::InverseHessianAtInit,
            noise: true,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.draws <= self.burn_in {
            return Err(Error::Config(format!(
                "number of draws ({}) must exceed burn-in ({})",
                self.draws, self.burn_in
            )));
        }
        let s = match self.step {
            StepSize::Absolute(e) | StepSize::PerCoordinate(e) => e,
        };
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::Config(format!("step size must be positive, got {s}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Chain {
    /// `(K - burn_in) x |E|`, one retained draw per row.
    pub draws: Mat,
    pub init: Vector,
    pub grad_norms: Vec<f64>,
    pub inner_iters: Vec<usize>,
    pub preconditioner: Mat,
    pub eta: f64,
}

impl Chain {
    pub fn len(&self) -> usize {
        self.draws.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.draws.ncols()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.draws.column(j).iter().copied().collect()
    }

    /// Sample covariance of the retained draws.
    pub fn covariance(&self) -> Mat {
        let n = self.len() as f64;
        let mean = self.draws.row_mean();
        let centered = Mat::from_fn(self.len(), self.dim(), |i, j| self.draws[(i, j)] - mean[j]);
        centered.transpose() * centered / (n - 1.0)
    }

    /// One row per draw, header = column names.
    pub fn write_csv(&self, path: &Path, names: &[String]) -> Result<()> {
        if names.len() != self.dim() {
            return Err(Error::Dimension(format!("{} names for {} chain columns", names.len(), self.dim())));
        }
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(names)?;
        for row in self.draws.row_iter() {
            w.write_record(row.iter().map(|v| format_float(*v)))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `chi` for the `InverseHessianAtInit` sentinel: the inverse of the data
/// term's curvature plus the prior precision, falling back to `Theta_bar`.
pub fn default_preconditioner(spec: &PosteriorSpec) -> Mat {
    let p = &spec.params;
    let dim = spec.dim();
    let data = match spec.adjustment {
        Adjustment::Enabled => p.r_bar.transpose() * &p.theta_bar_inv * &p.r_bar,
        Adjustment::Disabled => p.sigma_e_inv.clone(),
    };
    match spd_inverse(&(data + spec.prior.precision(dim)), "posterior Hessian at beta_hat") {
        Ok(chi) => chi,
        Err(e) => {
            log::warn!("{e}; falling back to Theta_bar as the Langevin preconditioner");
            p.theta_bar.clone()
        }
    }
}

/// Runs `beta <- beta + eta chi grad + sqrt(2 eta) chi^{1/2} z` from `beta_hat`.
pub fn run_chain(spec: &PosteriorSpec, config: &ChainConfig) -> Result<Chain> {
    run_chain_from(spec, config, &spec.beta_hat)
}

pub fn run_chain_from(spec: &PosteriorSpec, config: &ChainConfig, start: &Vector) -> Result<Chain> {
    config.validate()?;
    if start.len() != spec.dim() {
        return Err(Error::Dimension(format!("start has length {}, expected {}", start.len(), spec.dim())));
    }
    let dim = spec.dim();
    let chi = match &config.preconditioner {
        Preconditioner::InverseHessianAtInit => default_preconditioner(spec),
        Preconditioner::Matrix(m) => {
            if m.nrows() != dim || m.ncols() != dim {
                return Err(Error::Dimension(format!("preconditioner is {}x{}, expected {dim}x{dim}", m.nrows(), m.ncols())));
            }
            m.clone()
        }
    };
    let l = cholesky(&chi, "Langevin preconditioner")?.l();
    let eta = config.step.eta(dim);
    let noise_scale = (2.0 * eta).sqrt();
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);

    let kept = config.draws - config.burn_in;
    let mut draws = Mat::zeros(kept, dim);
    let mut grad_norms = Vec::with_capacity(config.draws);
    let mut inner_iters = Vec::with_capacity(config.draws);
    let mut beta = start.clone();
    for k in 0..config.draws {
        if k >= config.burn_in {
            draws.set_row(k - config.burn_in, &beta.transpose());
        }
        if k + 1 == config.draws {
            break;
        }
        let ev = evaluate(&beta, spec)?;
        let gn = ev.grad.norm();
        grad_norms.push(gn);
        inner_iters.push(ev.inner.as_ref().map_or(0, |s| s.newton_iters));
        if !(gn <= DIVERGENCE_GRAD_NORM) {
            return Err(Error::Numerical(format!(
                "Langevin chain diverged at step {k}: gradient norm {gn:.3e} (last finite norms: {:?})",
                &grad_norms[grad_norms.len().saturating_sub(5)..]
            )));
        }
        beta += &chi * &ev.grad * eta;
        if config.noise {
            let z = Vector::from_fn(dim, |_, _| StandardNormal.sample(&mut rng));
            beta += &l * z * noise_scale;
        }
    }
    Ok(Chain { draws, init: start.clone(), grad_norms, inner_iters, preconditioner: chi, eta })
}

fn check_level(level: f64) -> Result<()> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Config(format!("credible level must lie in (0, 1), got {level}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn length(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lower <= v && v <= self.upper
    }

    pub fn within(&self, other: &Interval) -> bool {
        other.lower <= self.lower && self.upper <= other.upper
    }
}

/// Equal-tailed interval from a sample, `[q((1-level)/2), q((1+level)/2)]`.
pub fn quantile_interval(values: &[f64], level: f64) -> Result<Interval> {
    check_level(level)?;
    if values.is_empty() {
        return Err(Error::Config("cannot form an interval from an empty sample".into()));
    }
    let sorted = sorted_copy(values.iter().copied());
    Ok(Interval {
        lower: quantile_sorted(&sorted, 0.5 * (1.0 - level)),
        upper: quantile_sorted(&sorted, 0.5 * (1.0 + level)),
    })
}

/// Per-coefficient intervals at one level, shared by every inference method.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalReport {
    pub level: f64,
    /// Point estimate per coefficient (posterior median, or OLS estimate).
    pub estimate: Vec<f64>,
    pub intervals: Vec<Interval>,
}

impl IntervalReport {
    pub fn lengths(&self) -> Vec<f64> {
        self.intervals.iter().map(Interval::length).collect()
    }

    pub fn covers(&self, truth: &[f64]) -> Vec<bool> {
        self.intervals.iter().zip(truth).map(|(i, t)| i.contains(*t)).collect()
    }
}

pub fn credible_intervals(chain: &Chain, level: f64) -> Result<IntervalReport> {
    check_level(level)?;
    if chain.is_empty() {
        return Err(Error::Config("chain has no retained draws".into()));
    }
    let mut estimate = Vec::with_capacity(chain.dim());
    let mut intervals = Vec::with_capacity(chain.dim());
    for j in 0..chain.dim() {
        let sorted = sorted_copy(chain.draws.column(j).iter().copied());
        estimate.push(quantile_sorted(&sorted, 0.5));
        intervals.push(Interval {
            lower: quantile_sorted(&sorted, 0.5 * (1.0 - level)),
            upper: quantile_sorted(&sorted, 0.5 * (1.0 + level)),
        });
    }
    Ok(IntervalReport { level, estimate, intervals })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Functional {
    Mean,
    /// Sample variance with denominator `|g| - 1`.
    Variance,
    L2Norm,
    MaxAbs,
}

impl Functional {
    pub fn name(self) -> &'static str {
        match self {
            Functional::Mean => "mean",
            Functional::Variance => "variance",
            Functional::L2Norm => "l2",
            Functional::MaxAbs => "max_abs",
        }
    }

    pub fn apply(self, v: &[f64]) -> f64 {
        let n = v.len() as f64;
        match self {
            Functional::Mean => v.iter().sum::<f64>() / n,
            Functional::Variance => {
                let mean = v.iter().sum::<f64>() / n;
                v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
            }
            Functional::L2Norm => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
            Functional::MaxAbs => v.iter().fold(0.0_f64, |m, x| m.max(x.abs())),
        }
    }
}

impl FromStr for Functional {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mean" => Ok(Functional::Mean),
            "variance" | "var" => Ok(Functional::Variance),
            "l2" | "l2_norm" | "norm" => Ok(Functional::L2Norm),
            "max_abs" | "max" | "maxabs" => Ok(Functional::MaxAbs),
            other => Err(Error::Config(format!(
                "unknown functional '{other}' (expected mean, variance, l2, max_abs)"
            ))),
        }
    }
}

/// Interval of `functional` applied row-wise to the chain coordinates `positions`.
pub fn functional_intervals(chain: &Chain, functional: Functional, positions: &[usize], level: f64) -> Result<Interval> {
    if positions.is_empty() {
        return Err(Error::Config("functional requested on an empty set of coordinates".into()));
    }
    if functional == Functional::Variance && positions.len() < 2 {
        return Err(Error::Config("the variance functional needs at least two coordinates".into()));
    }
    if let Some(p) = positions.iter().find(|&&p| p >= chain.dim()) {
        return Err(Error::Dimension(format!("coordinate {p} is outside the chain ({} columns)", chain.dim())));
    }
    let mut buf = vec![0.0; positions.len()];
    let values: Vec<f64> = chain
        .draws
        .row_iter()
        .map(|row| {
            for (b, &p) in buf.iter_mut().zip(positions) {
                *b = row[p];
            }
            functional.apply(&buf)
        })
        .collect();
    quantile_interval(&values, level)
}

/// Functional interval for original group `group` (0-based), which must be selected.
pub fn group_functional_interval(
    chain: &Chain,
    record: &SelectionRecord,
    groups: &GroupStructure,
    functional: Functional,
    group: usize,
    level: f64,
) -> Result<Interval> {
    let k = record.selected_groups.iter().position(|&g| g == group).ok_or_else(|| {
        Error::Config(format!("group {} was not selected; functionals need a selected group", group + 1))
    })?;
    let positions = &record.group_positions(groups)[k];
    functional_intervals(chain, functional, positions, level)
}

/// Monte Carlo standard error of the `prob` quantile of a chain column:
/// batch means of the indicator `1(x <= q)` give the error in probability,
/// a Gaussian kernel density at `q` converts it to the quantile scale.
pub fn quantile_batch_se(values: &[f64], prob: f64, batches: usize) -> f64 {
    let size = values.len() / batches.max(1);
    if batches < 2 || size == 0 {
        return f64::NAN;
    }
    let sorted = sorted_copy(values.iter().copied());
    let q = quantile_sorted(&sorted, prob);
    let means: Vec<f64> = (0..batches)
        .map(|b| values[b * size..(b + 1) * size].iter().filter(|&&v| v <= q).count() as f64 / size as f64)
        .collect();
    let mean = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (batches - 1) as f64;

    let n = sorted.len() as f64;
    let avg = sorted.iter().sum::<f64>() / n;
    let sd = (sorted.iter().map(|v| (v - avg).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    if spread <= 0.0 {
        return 0.0;
    }
    // Silverman's rule
    let h = 0.9 * spread * n.powf(-0.2);
    let density = sorted.iter().map(|v| (-0.5 * ((v - q) / h).powi(2)).exp()).sum::<f64>()
        / (n * h * (2.0 * std::f64::consts::PI).sqrt());
    (var / batches as f64).sqrt() / density
}
