//! Surrogate selection-informed posterior: value and exact gradient through a
//! barrier-penalized Newton solve in the group sizes, plus an importance
//! sampling oracle for the exact adjustment factor.

use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::adjust::AdjustmentParams;
use crate::error::{Error, Result};
use crate::linalg::{cholesky, gaussian_log_density, spd_inverse, Mat, Vector};

/// Barrier `sum_g log(1 + 1/gamma_g)`; infinite off the positive orthant.
pub fn barrier(gamma: &Vector) -> f64 {
    if gamma.iter().any(|g| *g <= 0.0) {
        return f64::INFINITY;
    }
    gamma.iter().map(|g| (1.0 / g).ln_1p()).sum()
}

pub fn barrier_grad(gamma: &Vector) -> Vector {
    gamma.map(|g| -1.0 / (g * g + g))
}

pub fn barrier_hess_diag(gamma: &Vector) -> Vector {
    gamma.map(|g| (2.0 * g + 1.0) / (g * g + g).powi(2))
}

/// Compares the analytic barrier derivatives with central differences at a
/// handful of points; run once per process.
pub fn barrier_self_check() -> Result<()> {
    static CHECK: OnceLock<std::result::Result<(), String>> = OnceLock::new();
    CHECK
        .get_or_init(|| {
            for &g in &[0.05, 0.3, 1.0, 4.0, 25.0] {
                let h = 1e-6 * g;
                let v = |x: f64| barrier(&Vector::from_element(1, x));
                let d = |x: f64| barrier_grad(&Vector::from_element(1, x))[0];
                let fd1 = (v(g + h) - v(g - h)) / (2.0 * h);
                let fd2 = (d(g + h) - d(g - h)) / (2.0 * h);
                let an1 = d(g);
                let an2 = barrier_hess_diag(&Vector::from_element(1, g))[0];
                if (fd1 - an1).abs() > 1e-5 * an1.abs() || (fd2 - an2).abs() > 1e-5 * an2.abs() {
                    return Err(format!("barrier derivatives disagree with finite differences at {g}"));
                }
            }
            Ok(())
        })
        .clone()
        .map_err(Error::Numerical)
}

#[derive(Debug, Clone)]
pub enum Prior {
    Flat,
    Gaussian { mean: Vector, cov: Mat, precision: Mat, log_norm: f64 },
}

impl Prior {
    pub fn gaussian(mean: Vector, cov: Mat) -> Result<Self> {
        if cov.nrows() != mean.len() {
            return Err(Error::Dimension(format!(
                "prior mean has length {}, covariance is {}x{}",
                mean.len(),
                cov.nrows(),
                cov.ncols()
            )));
        }
        let precision = spd_inverse(&cov, "prior covariance")?;
        let log_norm = gaussian_log_density(&mean, &mean, &cov)?;
        Ok(Prior::Gaussian { mean, cov, precision, log_norm })
    }

    /// Isotropic Gaussian `N(0, variance I)` in dimension `dim`.
    pub fn isotropic(dim: usize, variance: f64) -> Result<Self> {
        Self::gaussian(Vector::zeros(dim), Mat::identity(dim, dim) * variance)
    }

    pub fn log_density(&self, beta: &Vector) -> f64 {
        match self {
            Prior::Flat => 0.0,
            Prior::Gaussian { mean, precision, log_norm, .. } => {
                let d = beta - mean;
                log_norm - 0.5 * d.dot(&(precision * &d))
            }
        }
    }

    pub fn grad(&self, beta: &Vector) -> Vector {
        match self {
            Prior::Flat => Vector::zeros(beta.len()),
            Prior::Gaussian { mean, precision, .. } => -(precision * (beta - mean)),
        }
    }

    /// Precision matrix (zero for the flat prior).
    pub fn precision(&self, dim: usize) -> Mat {
        match self {
            Prior::Flat => Mat::zeros(dim, dim),
            Prior::Gaussian { precision, .. } => precision.clone(),
        }
    }
}

/// Whether the selection adjustment is applied. `Disabled` is a test hook that
/// reduces the target to prior times the unadjusted likelihood `N(beta_hat; beta, Sigma_E)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Adjustment {
    Enabled,
    Disabled,
}

#[derive(Debug, Clone)]
pub struct PosteriorSpec {
    pub params: AdjustmentParams,
    pub prior: Prior,
    pub beta_hat: Vector,
    pub adjustment: Adjustment,
    /// Mutation hook: flips the sign of `J*` in the gradient only.
    #[doc(hidden)]
    pub flip_jacobian_grad: bool,
    rt_theta_inv: Mat,
    pt_sigma_inv: Mat,
}

impl PosteriorSpec {
    pub fn new(params: AdjustmentParams, prior: Prior) -> Result<Self> {
        barrier_self_check()?;
        if let Prior::Gaussian { mean, .. } = &prior {
            if mean.len() != params.n_active() {
                return Err(Error::Dimension(format!(
                    "prior has dimension {}, selected model has {}",
                    mean.len(),
                    params.n_active()
                )));
            }
        }
        let rt_theta_inv = params.r_bar.transpose() * &params.theta_bar_inv;
        let pt_sigma_inv = params.p_bar.transpose() * &params.sigma_bar_inv;
        Ok(Self {
            beta_hat: params.beta_hat.clone(),
            params,
            prior,
            adjustment: Adjustment::Enabled,
            flip_jacobian_grad: false,
            rt_theta_inv,
            pt_sigma_inv,
        })
    }

    pub fn with_adjustment(mut self, adjustment: Adjustment) -> Self {
        self.adjustment = adjustment;
        self
    }

    pub fn dim(&self) -> usize {
        self.beta_hat.len()
    }

    /// Mean `P_bar beta + q_bar` of the group sizes given `beta`.
    pub fn gamma_mean(&self, beta: &Vector) -> Vector {
        &self.params.p_bar * beta + &self.params.q_bar
    }

    fn check_beta(&self, beta: &Vector) -> Result<()> {
        if beta.len() != self.dim() {
            return Err(Error::Dimension(format!("beta has length {}, expected {}", beta.len(), self.dim())));
        }
        if beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::Numerical("beta has non-finite entries".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct InnerSolution {
    pub gamma_star: Vector,
    pub newton_iters: usize,
    pub kkt_residual: f64,
    /// `Sigma_bar^{-1} + diag(Barr''(gamma*))`.
    pub hessian_at_opt: Mat,
}

const INNER_TOL: f64 = 1e-9;
const INNER_MAX_ITERS: usize = 200;

/// Minimizes `1/2 (g - m)^T S (g - m) + Barr(g)` by damped Newton, with `S`
/// the inverse covariance. Iterates until the Newton step is at rounding
/// level, then requires the gradient to be below `1e-9` (or a small multiple
/// of the rounding error of `S (g - m)` when that is larger).
pub fn solve_barrier_problem(m: &Vector, sigma_inv: &Mat) -> Result<InnerSolution> {
    let k = m.len();
    let objective = |g: &Vector| {
        let d = g - m;
        0.5 * d.dot(&(sigma_inv * &d)) + barrier(g)
    };
    let gradient = |g: &Vector| sigma_inv * (g - m) + barrier_grad(g);
    let mut gamma = m.map(|v| v.max(1.0));
    let mut f = objective(&gamma);
    let mut grad = gradient(&gamma);
    for iter in 1..=INNER_MAX_ITERS {
        let mut hess = sigma_inv.clone();
        for (i, h) in barrier_hess_diag(&gamma).iter().enumerate() {
            hess[(i, i)] += h;
        }
        let chol = cholesky(&hess, "inner Newton Hessian")?;
        let dir = -chol.solve(&grad);
        let mut step = 1.0;
        while (0..k).any(|i| gamma[i] + step * dir[i] <= 0.0) {
            step *= 0.5;
        }
        let slope = grad.dot(&dir);
        let mut next = &gamma + &dir * step;
        let mut f_next = objective(&next);
        // once the predicted decrease is below the rounding of f, the line
        // search carries no information; take the (feasible) Newton step
        let resolvable = -slope > 1e-12 * (1.0 + f.abs());
        while resolvable && f_next > f + 1e-4 * step * slope && step > 1e-12 {
            step *= 0.5;
            next = &gamma + &dir * step;
            f_next = objective(&next);
        }
        let moved = (&next - &gamma).amax();
        gamma = next;
        f = f_next.min(f);
        grad = gradient(&gamma);
        let residual = grad.amax();
        // 1e-9 absolute, unless rounding in S (g - m) alone exceeds that
        let scale = sigma_inv.abs().column_sum().amax() * (gamma.amax() + m.amax());
        let tol = INNER_TOL.max(1e3 * f64::EPSILON * scale);
        let stalled = moved <= 1e-15 * (1.0 + gamma.amax());
        if (residual <= tol && moved <= 1e-12 * (1.0 + gamma.amax())) || stalled {
            if residual > tol {
                return Err(Error::NonConvergence { iters: iter, residual });
            }
            let mut hess = sigma_inv.clone();
            for (i, h) in barrier_hess_diag(&gamma).iter().enumerate() {
                hess[(i, i)] += h;
            }
            return Ok(InnerSolution { gamma_star: gamma, newton_iters: iter, kkt_residual: residual, hessian_at_opt: hess });
        }
    }
    Err(Error::NonConvergence { iters: INNER_MAX_ITERS, residual: grad.amax() })
}

pub fn solve_inner(beta: &Vector, spec: &PosteriorSpec) -> Result<InnerSolution> {
    spec.check_beta(beta)?;
    solve_barrier_problem(&spec.gamma_mean(beta), &spec.params.sigma_bar_inv)
}

/// Log-posterior (up to a `beta`-free constant), its gradient, and the inner
/// solution it was computed from.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub log_posterior: f64,
    pub grad: Vector,
    pub inner: Option<InnerSolution>,
}

pub fn evaluate(beta: &Vector, spec: &PosteriorSpec) -> Result<Evaluation> {
    spec.check_beta(beta)?;
    let p = &spec.params;
    let log_prior = spec.prior.log_density(beta);
    let grad_prior = spec.prior.grad(beta);
    if spec.adjustment == Adjustment::Disabled {
        let r = &spec.beta_hat - beta;
        let prec_r = &p.sigma_e_inv * &r;
        return Ok(Evaluation { log_posterior: log_prior - 0.5 * r.dot(&prec_r), grad: grad_prior + prec_r, inner: None });
    }
    let resid = &spec.beta_hat - &p.r_bar * beta - &p.s_bar;
    let data = -0.5 * resid.dot(&(&p.theta_bar_inv * &resid));
    let m = spec.gamma_mean(beta);
    let inner = solve_barrier_problem(&m, &p.sigma_bar_inv)?;
    let g = &inner.gamma_star;
    let dev = g - &m;
    let log_post = log_prior + data + 0.5 * dev.dot(&(&p.sigma_bar_inv * &dev)) + barrier(g) - p.log_jacobian(g)?;

    let mut j_star = p.jacobian_grad(g)?;
    if spec.flip_jacobian_grad {
        j_star = -j_star;
    }
    let h_inv_j = cholesky(&inner.hessian_at_opt, "inner Hessian")?.solve(&j_star);
    let grad = grad_prior + &spec.rt_theta_inv * &resid + &spec.pt_sigma_inv * (-dev - h_inv_j);
    Ok(Evaluation { log_posterior: log_post, grad, inner: Some(inner) })
}

pub fn log_posterior(beta: &Vector, spec: &PosteriorSpec) -> Result<f64> {
    evaluate(beta, spec).map(|e| e.log_posterior)
}

pub fn grad_log_posterior(beta: &Vector, spec: &PosteriorSpec) -> Result<Vector> {
    evaluate(beta, spec).map(|e| e.grad)
}

/// Importance-sampling estimate of a log adjustment factor.
#[derive(Debug, Clone, Copy)]
pub struct McEstimate {
    pub log_value: f64,
    /// Standard error on the log scale (delta method).
    pub std_error: f64,
    pub ess: f64,
}

const MC_MAX_GROUPS: usize = 4;
const MC_MIN_ESS: f64 = 100.0;

/// `log E[J(g) 1(g > 0)]` for `g ~ N(m, Sigma_bar)`, by importance sampling
/// from the defensive mixture `1/2 N(gamma*, 2 H^{-1}) + 1/2 N(m, Sigma_bar)`.
pub fn log_truncated_jacobian_mass(beta: &Vector, spec: &PosteriorSpec, draws: usize, seed: u64) -> Result<McEstimate> {
    let p = &spec.params;
    let k = p.n_groups();
    if k > MC_MAX_GROUPS {
        return Err(Error::Config(format!("the Monte Carlo oracle supports at most {MC_MAX_GROUPS} groups, got {k}")));
    }
    if draws < 2 {
        return Err(Error::Config("the Monte Carlo oracle needs at least two draws".into()));
    }
    let m = spec.gamma_mean(beta);
    let inner = solve_barrier_problem(&m, &p.sigma_bar_inv)?;
    let prop_cov = spd_inverse(&inner.hessian_at_opt, "inner Hessian")? * 2.0;
    let l_prop = cholesky(&prop_cov, "proposal covariance")?.l();
    let l_nom = cholesky(&p.sigma_bar, "Sigma_bar")?.l();
    let prop_prec = spd_inverse(&prop_cov, "proposal covariance")?;
    let log_det = |l: &Mat| 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let (ld_prop, ld_nom) = (log_det(&l_prop), log_det(&l_nom));
    let half_log_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln() * k as f64;
    let log_n = |x: &Vector, mean: &Vector, prec: &Mat, ld: f64| {
        let d = x - mean;
        -0.5 * d.dot(&(prec * &d)) - 0.5 * ld - half_log_2pi
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut log_w = Vec::with_capacity(draws);
    for i in 0..draws {
        let z = Vector::from_fn(k, |_, _| StandardNormal.sample(&mut rng));
        let g = if i % 2 == 0 { &inner.gamma_star + &l_prop * z } else { &m + &l_nom * z };
        if g.iter().any(|v| *v <= 0.0) {
            log_w.push(f64::NEG_INFINITY);
            continue;
        }
        let lt = log_n(&g, &m, &p.sigma_bar_inv, ld_nom);
        let lq1 = log_n(&g, &inner.gamma_star, &prop_prec, ld_prop);
        let lq = log_sum_exp(&[lq1, lt]) - std::f64::consts::LN_2;
        log_w.push(lt + p.log_jacobian(&g)? - lq);
    }
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::Numerical("no importance draw landed in the positive orthant".into()));
    }
    let w: Vec<f64> = log_w.iter().map(|l| (l - max).exp()).collect();
    let n = draws as f64;
    let sum: f64 = w.iter().sum();
    let sum_sq: f64 = w.iter().map(|v| v * v).sum();
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0) * n / (n - 1.0);
    let ess = sum * sum / sum_sq;
    if ess < MC_MIN_ESS {
        return Err(Error::Numerical(format!("importance sampling effective sample size {ess:.1} is below {MC_MIN_ESS}")));
    }
    Ok(McEstimate { log_value: max + mean.ln(), std_error: (var / n).sqrt() / mean, ess })
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Estimate of `log P(selection | beta)` up to a `beta`-free constant:
/// `log K(beta) + log E[J(g) 1(g > 0)]`, where `K` is the part of the
/// Gaussian factorization that depends on `beta` alone.
pub fn adjustment_mc_oracle(beta: &Vector, spec: &PosteriorSpec, draws: usize, seed: u64) -> Result<McEstimate> {
    spec.check_beta(beta)?;
    let p = &spec.params;
    let log_k = gaussian_log_density(&spec.beta_hat, beta, &p.sigma_e)?
        - gaussian_log_density(&spec.beta_hat, &(&p.r_bar * beta + &p.s_bar), &p.theta_bar)?;
    let mass = log_truncated_jacobian_mass(beta, spec, draws, seed)?;
    Ok(McEstimate { log_value: log_k + mass.log_value, ..mass })
}

/// Exact selection-adjusted log posterior (up to a constant) with the
/// adjustment factor estimated by [`adjustment_mc_oracle`].
pub fn oracle_log_posterior(beta: &Vector, spec: &PosteriorSpec, draws: usize, seed: u64) -> Result<McEstimate> {
    let adj = adjustment_mc_oracle(beta, spec, draws, seed)?;
    let log_lik = gaussian_log_density(&spec.beta_hat, beta, &spec.params.sigma_e)?;
    Ok(McEstimate { log_value: spec.prior.log_density(beta) + log_lik - adj.log_value, ..adj })
}
