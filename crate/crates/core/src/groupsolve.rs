//! Randomized Group LASSO solvers and the freezing of their output into a
//! [`SelectionRecord`].
//!
//! Every variant is reduced to the same problem in "solve coordinates":
//!
//! ```text
//! minimize  1/2 b^T (D^T D + eps I) b - (D^T y + omega)^T b
//!           + sum_g lambda_g ||b_g||_2 + lambda_0 ||b||_1
//! ```
//!
//! where `D` is the original design (disjoint, sparse), the design augmented
//! with duplicated columns (overlapping, `eps > 0`), or the per-group
//! orthonormal bases `W_g` of `X_g = W_g R_g` (standardized). The default
//! solver is a cyclic block coordinate descent working on the Gram matrix.
//! Blocks without an l1 term are minimized exactly through a one-dimensional
//! secular equation; sparse blocks take repeated proximal-gradient steps.
//! The augmented design uses a monotone accelerated proximal gradient instead,
//! since duplicated columns couple neighbouring blocks too tightly for cyclic
//! updates.

use nalgebra::SymmetricEigen;

use crate::error::{Error, Result};
use crate::linalg::{cholesky, select_columns, spd_inverse, Mat, Vector};
use crate::model::{mat_to_rows, Dataset, GroupStructure, InactiveBlock, SelectionRecord, Variant};

/// Iterations of the accelerated solver per unit of `max_iters`; a proximal
/// gradient step is much cheaper than a cyclic sweep.
const ACCELERATED_BUDGET: usize = 10;
const POLISH_EVERY: usize = 200;
const POLISH_NEWTON_STEPS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub max_iters: usize,
    /// Threshold for both the largest blockwise change and the KKT residual.
    pub tol: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { max_iters: 10_000, tol: 1e-8 }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.max_iters == 0 {
            return Err(Error::Config(format!("invalid solver options {self:?}")));
        }
        Ok(())
    }

    /// A group is selected when its solved block norm exceeds this value.
    pub fn active_threshold(&self) -> f64 {
        10.0 * self.tol
    }
}

/// `X_g = W_g R_g` with orthonormal `W_g` and upper-triangular `R_g`.
#[derive(Debug, Clone)]
pub struct GroupFactor {
    pub w: Mat,
    pub r: Mat,
}

/// Thin QR of every group block, with `diag(R_g) > 0`.
pub fn standardize_groups(dataset: &Dataset, groups: &GroupStructure) -> Result<Vec<GroupFactor>> {
    groups
        .groups
        .iter()
        .enumerate()
        .map(|(g, cols)| {
            let xg = select_columns(&dataset.x, cols);
            if xg.nrows() < xg.ncols() {
                return Err(Error::RankDeficient(format!("group {} has more columns than rows", g + 1)));
            }
            let (w, r) = crate::linalg::thin_qr(&xg);
            let scale = r.diagonal().amax().max(f64::MIN_POSITIVE);
            if r.diagonal().iter().any(|d| *d <= 1e-10 * scale) {
                return Err(Error::RankDeficient(format!("group {} block is not of full column rank", g + 1)));
            }
            Ok(GroupFactor { w, r })
        })
        .collect()
}

/// Design augmented with one copy of each column per group containing it.
#[derive(Debug, Clone)]
pub struct Augmentation {
    pub x_star: Mat,
    /// Original column of every augmented column.
    pub column_map: Vec<usize>,
    /// Groups over the augmented columns; consecutive and disjoint.
    pub groups_star: Vec<Vec<usize>>,
}

pub fn augment_for_overlap(dataset: &Dataset, groups: &GroupStructure) -> Augmentation {
    let column_map: Vec<usize> = groups.groups.iter().flatten().copied().collect();
    let mut next = 0;
    let groups_star = groups
        .groups
        .iter()
        .map(|g| {
            let block: Vec<usize> = (next..next + g.len()).collect();
            next += g.len();
            block
        })
        .collect();
    Augmentation { x_star: select_columns(&dataset.x, &column_map), column_map, groups_star }
}

/// One penalized block in solve coordinates.
#[derive(Debug, Clone)]
struct Block {
    cols: Vec<usize>,
    weight: f64,
    /// Eigen-decomposition of the block Hessian `D_g^T D_g + eps I`.
    eig_vectors: Mat,
    eig_values: Vector,
}

/// The selection problem of one variant, expressed in solve coordinates.
#[derive(Debug, Clone)]
pub struct SelectionProblem {
    pub variant: Variant,
    pub design: Mat,
    pub gram: Mat,
    pub dty: Vector,
    pub l1_weight: f64,
    pub ridge: f64,
    pub augmentation: Option<Augmentation>,
    pub factors: Option<Vec<GroupFactor>>,
    blocks: Vec<Block>,
}

impl SelectionProblem {
    pub fn new(dataset: &Dataset, groups: &GroupStructure) -> Result<Self> {
        groups.validate(dataset.p())?;
        let (design, block_cols, augmentation, factors) = match groups.variant {
            Variant::Disjoint | Variant::Sparse => (dataset.x.clone(), groups.groups.clone(), None, None),
            Variant::Overlapping => {
                let aug = augment_for_overlap(dataset, groups);
                (aug.x_star.clone(), aug.groups_star.clone(), Some(aug), None)
            }
            Variant::Standardized => {
                let factors = standardize_groups(dataset, groups)?;
                let mut w = Mat::zeros(dataset.n(), dataset.p());
                for (cols, f) in groups.groups.iter().zip(&factors) {
                    for (k, &c) in cols.iter().enumerate() {
                        w.set_column(c, &f.w.column(k));
                    }
                }
                (w, groups.groups.clone(), None, Some(factors))
            }
        };
        let gram = design.transpose() * &design;
        let dty = design.transpose() * &dataset.y;
        let ridge = if groups.variant == Variant::Overlapping { groups.ridge } else { 0.0 };
        let blocks = block_cols
            .into_iter()
            .zip(&groups.weights)
            .map(|(cols, &weight)| {
                let mut h = Mat::from_fn(cols.len(), cols.len(), |i, j| gram[(cols[i], cols[j])]);
                for i in 0..cols.len() {
                    h[(i, i)] += ridge;
                }
                let eig = SymmetricEigen::new(h);
                Block { cols, weight, eig_vectors: eig.eigenvectors, eig_values: eig.eigenvalues }
            })
            .collect();
        Ok(Self {
            variant: groups.variant,
            design,
            gram,
            dty,
            l1_weight: if groups.variant == Variant::Sparse { groups.l1_weight } else { 0.0 },
            ridge,
            augmentation,
            factors,
            blocks,
        })
    }

    /// Dimension of the solve coordinates (`p`, or `p*` when overlapping).
    pub fn dim(&self) -> usize {
        self.design.ncols()
    }

    pub fn n_groups(&self) -> usize {
        self.blocks.len()
    }

    /// Columns (in solve coordinates) of group `g`.
    pub fn block_columns(&self, g: usize) -> &[usize] {
        &self.blocks[g].cols
    }

    pub fn block_weight(&self, g: usize) -> f64 {
        self.blocks[g].weight
    }

    /// Gradient of the smooth part, `(D^T D + eps I) b - D^T y - omega`.
    pub fn smooth_gradient(&self, omega: &Vector, coef: &Vector) -> Vector {
        &self.gram * coef + coef * self.ridge - &self.dty - omega
    }

    /// Objective value without the constant `||y||^2 / 2`.
    pub fn objective(&self, omega: &Vector, coef: &Vector) -> f64 {
        let quad = 0.5 * coef.dot(&(&self.gram * coef)) + 0.5 * self.ridge * coef.norm_squared();
        let lin = coef.dot(&(&self.dty + omega));
        let pen: f64 = self
            .blocks
            .iter()
            .map(|b| b.weight * b.cols.iter().map(|&c| coef[c] * coef[c]).sum::<f64>().sqrt())
            .sum();
        let l1 = self.l1_weight * coef.iter().map(|v| v.abs()).sum::<f64>();
        quad - lin + pen + l1
    }

    /// Maps a solution in solve coordinates back to original coefficients.
    pub fn to_original(&self, coef: &Vector, groups: &GroupStructure) -> Vector {
        match self.variant {
            Variant::Disjoint | Variant::Sparse => coef.clone(),
            Variant::Overlapping => {
                let aug = self.augmentation.as_ref().expect("overlapping problem is augmented");
                let mut out = Vector::zeros(aug.column_map.iter().max().map_or(0, |m| m + 1));
                for (k, &c) in aug.column_map.iter().enumerate() {
                    out[c] += coef[k];
                }
                out
            }
            Variant::Standardized => {
                let factors = self.factors.as_ref().expect("standardized problem is factored");
                let mut out = Vector::zeros(coef.len());
                for (cols, f) in groups.groups.iter().zip(factors) {
                    let theta = Vector::from_iterator(cols.len(), cols.iter().map(|&c| coef[c]));
                    let beta = f.r.clone().solve_upper_triangular(&theta).expect("R_g is invertible");
                    for (k, &c) in cols.iter().enumerate() {
                        out[c] = beta[k];
                    }
                }
                out
            }
        }
    }
}

/// Raw solver output in solve coordinates.
#[derive(Debug, Clone)]
pub struct RawSolution {
    pub coef: Vector,
    pub iterations: usize,
    pub kkt_residual: f64,
    /// Objective value after every sweep.
    pub objective_trace: Vec<f64>,
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    v.signum() * (v.abs() - t).max(0.0)
}

/// Minimizer of `1/2 b^T H b - v^T b + lambda ||b||` given `H = Q diag(h) Q^T`.
fn exact_block_minimizer(block: &Block, v: &Vector) -> Result<Vector> {
    let lambda = block.weight;
    let vn = v.norm();
    if vn <= lambda {
        return Ok(Vector::zeros(v.len()));
    }
    let h = &block.eig_values;
    let h_min = h.min();
    if h_min <= 0.0 {
        return Err(Error::RankDeficient("block Hessian is singular; add a ridge term".into()));
    }
    let vt = block.eig_vectors.transpose() * v;
    // phi(t) = sum vt_i^2 / (h_i t + lambda)^2 - 1, decreasing in t.
    let phi = |t: f64| -> (f64, f64) {
        let mut f = -1.0;
        let mut df = 0.0;
        for i in 0..h.len() {
            let d = h[i] * t + lambda;
            f += vt[i] * vt[i] / (d * d);
            df -= 2.0 * h[i] * vt[i] * vt[i] / (d * d * d);
        }
        (f, df)
    };
    let (mut lo, mut hi) = (0.0, vn / h_min);
    let mut t = (vn - lambda) / h.max();
    for _ in 0..200 {
        let (f, df) = phi(t);
        if f > 0.0 {
            lo = t;
        } else {
            hi = t;
        }
        let mut next = t - f / df;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - t).abs() <= 4.0 * f64::EPSILON * next.abs() || hi - lo <= 4.0 * f64::EPSILON * hi {
            t = next;
            break;
        }
        t = next;
    }
    let scaled = Vector::from_iterator(h.len(), (0..h.len()).map(|i| t * vt[i] / (h[i] * t + lambda)));
    Ok(&block.eig_vectors * scaled)
}

/// Proximal map of `step * (lambda_0 ||.||_1 + lambda ||.||_2)`.
fn sparse_group_prox(z: &Vector, step: f64, lambda: f64, l1: f64) -> Vector {
    let st = z.map(|v| soft_threshold(v, step * l1));
    let nrm = st.norm();
    if nrm <= step * lambda {
        Vector::zeros(z.len())
    } else {
        st * (1.0 - step * lambda / nrm)
    }
}

fn sparse_block_minimizer(block: &Block, l1: f64, v: &Vector, start: &Vector) -> Vector {
    let lipschitz = block.eig_values.max().max(f64::MIN_POSITIVE);
    let h = &block.eig_vectors * Mat::from_diagonal(&block.eig_values) * block.eig_vectors.transpose();
    let step = 1.0 / lipschitz;
    let mut b = start.clone();
    for _ in 0..200 {
        let grad = &h * &b - v;
        let next = sparse_group_prox(&(&b - grad * step), step, block.weight, l1);
        let change = (&next - &b).amax();
        b = next;
        if change <= 1e-15 * (1.0 + b.amax()) {
            break;
        }
    }
    b
}

impl SelectionProblem {
    /// Solves the randomized problem for the given `omega` (solve coordinates).
    pub fn solve(&self, omega: &Vector, opts: &SolveOptions) -> Result<RawSolution> {
        opts.validate()?;
        if omega.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "randomization has length {}, problem dimension is {}",
                omega.len(),
                self.dim()
            )));
        }
        if self.variant == Variant::Overlapping {
            self.solve_accelerated(omega, opts)
        } else {
            self.solve_cyclic(omega, opts)
        }
    }

    /// Monotone accelerated proximal gradient with restarts. Used for the
    /// augmented design, whose duplicated columns couple blocks so strongly
    /// that cyclic block updates crawl.
    fn solve_accelerated(&self, omega: &Vector, opts: &SolveOptions) -> Result<RawSolution> {
        let hessian_max = SymmetricEigen::new(self.gram.clone()).eigenvalues.max().max(0.0) + self.ridge;
        let step = 1.0 / hessian_max.max(f64::MIN_POSITIVE);
        let prox = |z: &Vector| {
            let mut out = z.clone();
            for block in &self.blocks {
                let zb = Vector::from_iterator(block.cols.len(), block.cols.iter().map(|&c| z[c]));
                let pb = sparse_group_prox(&zb, step, block.weight, self.l1_weight);
                for (j, &c) in block.cols.iter().enumerate() {
                    out[c] = pb[j];
                }
            }
            out
        };
        let mut x = Vector::zeros(self.dim());
        let mut fx = self.objective(omega, &x);
        let mut y = x.clone();
        let mut t = 1.0_f64;
        let mut trace = Vec::new();
        let mut kkt = f64::INFINITY;
        let mut restarted = false;
        let budget = opts.max_iters.saturating_mul(ACCELERATED_BUDGET);
        for iter in 1..=budget {
            let z = prox(&(&y - self.smooth_gradient(omega, &y) * step));
            let fz = self.objective(omega, &z);
            let x_prev = x.clone();
            let change = (&z - &x_prev).amax();
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            // A step right after a restart is a plain proximal gradient step,
            // which cannot increase the objective; near the optimum its true
            // decrease is below the rounding of f, so it is taken regardless.
            if fz <= fx || change < opts.tol || restarted {
                x = z.clone();
                fx = fz;
                y = &x + (&x - &x_prev) * ((t - 1.0) / t_next);
                t = t_next;
                restarted = false;
            } else {
                // restart from the last accepted point
                y = x.clone();
                t = 1.0;
                restarted = true;
            }
            trace.push(fx);
            if change < opts.tol || iter % POLISH_EVERY == 0 {
                kkt = self.check_stationarity(omega, &x);
                if kkt < opts.tol {
                    return Ok(RawSolution { coef: x, iterations: iter, kkt_residual: kkt, objective_trace: trace });
                }
                if let Some(p) = self.polish_support(omega, &x) {
                    let (fp, kp) = (self.objective(omega, &p), self.check_stationarity(omega, &p));
                    if kp < opts.tol && fp <= fx + 1e-12 * fx.abs().max(1.0) {
                        trace.push(fp.min(fx));
                        return Ok(RawSolution { coef: p, iterations: iter, kkt_residual: kp, objective_trace: trace });
                    }
                }
            }
        }
        if kkt.is_infinite() {
            kkt = self.check_stationarity(omega, &x);
        }
        Err(Error::NonConvergence { iters: budget, residual: kkt })
    }

    /// Damped Newton on the blocks that are nonzero in `x`, holding the others
    /// at zero. On the support the objective is smooth and, with the ridge,
    /// strongly convex, so once first-order iterations have found the support
    /// a few Newton steps reach full precision. `None` if a block collapses or
    /// the system is singular; the caller still checks full stationarity.
    fn polish_support(&self, omega: &Vector, x: &Vector) -> Option<Vector> {
        if self.l1_weight > 0.0 {
            return None;
        }
        let active: Vec<&Block> = self.blocks.iter().filter(|b| b.cols.iter().any(|&c| x[c] != 0.0)).collect();
        if active.is_empty() {
            return None;
        }
        let cols: Vec<usize> = active.iter().flat_map(|b| b.cols.iter().copied()).collect();
        let k = cols.len();
        let mut hess_quad = Mat::from_fn(k, k, |i, j| self.gram[(cols[i], cols[j])]);
        for i in 0..k {
            hess_quad[(i, i)] += self.ridge;
        }
        let mut b = x.clone();
        for _ in 0..POLISH_NEWTON_STEPS {
            let grad_full = self.smooth_gradient(omega, &b);
            let mut g = Vector::from_iterator(k, cols.iter().map(|&c| grad_full[c]));
            let mut h = hess_quad.clone();
            let mut offset = 0;
            for blk in &active {
                let m = blk.cols.len();
                let bg = Vector::from_iterator(m, blk.cols.iter().map(|&c| b[c]));
                let nrm = bg.norm();
                if nrm == 0.0 {
                    return None;
                }
                let u = &bg / nrm;
                for i in 0..m {
                    g[offset + i] += blk.weight * u[i];
                    for j in 0..m {
                        let id = if i == j { 1.0 } else { 0.0 };
                        h[(offset + i, offset + j)] += blk.weight / nrm * (id - u[i] * u[j]);
                    }
                }
                offset += m;
            }
            if g.amax() <= 1e-14 * (1.0 + b.amax()) {
                break;
            }
            let dir = -h.cholesky()?.solve(&g);
            let f0 = self.objective(omega, &b);
            let slope = g.dot(&dir);
            let mut step = 1.0;
            loop {
                let mut cand = b.clone();
                for (i, &c) in cols.iter().enumerate() {
                    cand[c] += step * dir[i];
                }
                let fc = self.objective(omega, &cand);
                if fc <= f0 + 1e-4 * step * slope || step < 1e-12 {
                    b = cand;
                    break;
                }
                step *= 0.5;
            }
        }
        Some(b)
    }

    fn solve_cyclic(&self, omega: &Vector, opts: &SolveOptions) -> Result<RawSolution> {
        let b = &self.dty + omega;
        let mut coef = Vector::zeros(self.dim());
        let mut resid = b.clone(); // b - (G + eps) coef
        let mut trace = Vec::new();
        let mut kkt = f64::INFINITY;
        for iter in 1..=opts.max_iters {
            let mut max_change = 0.0_f64;
            for block in &self.blocks {
                let k = block.cols.len();
                let old = Vector::from_iterator(k, block.cols.iter().map(|&c| coef[c]));
                // v = resid_g + H_g old
                let h_old = &block.eig_vectors
                    * Mat::from_diagonal(&block.eig_values)
                    * (block.eig_vectors.transpose() * &old);
                let v = Vector::from_iterator(k, block.cols.iter().map(|&c| resid[c])) + h_old;
                let new = if self.l1_weight > 0.0 {
                    sparse_block_minimizer(block, self.l1_weight, &v, &old)
                } else {
                    exact_block_minimizer(block, &v)?
                };
                let delta = &new - &old;
                let change = delta.amax();
                if change > 0.0 {
                    max_change = max_change.max(change);
                    for (j, &c) in block.cols.iter().enumerate() {
                        coef[c] = new[j];
                        if delta[j] != 0.0 {
                            let col = self.gram.column(c);
                            resid.axpy(-delta[j], &col, 1.0);
                            resid[c] -= self.ridge * delta[j];
                        }
                    }
                }
            }
            // refresh to keep accumulated round-off out of the residual
            resid = &b - &self.gram * &coef - &coef * self.ridge;
            trace.push(self.objective(omega, &coef));
            if max_change < opts.tol {
                kkt = self.check_stationarity(omega, &coef);
                if kkt < opts.tol {
                    return Ok(RawSolution { coef, iterations: iter, kkt_residual: kkt, objective_trace: trace });
                }
            }
        }
        if kkt.is_infinite() {
            kkt = self.check_stationarity(omega, &coef);
        }
        Err(Error::NonConvergence { iters: opts.max_iters, residual: kkt })
    }

    /// Largest entry of `grad + subgradient - omega` with the exact
    /// subgradient on nonzero blocks and the best feasible one elsewhere.
    pub fn check_stationarity(&self, omega: &Vector, coef: &Vector) -> f64 {
        let grad = self.smooth_gradient(omega, coef);
        let l1 = self.l1_weight;
        let mut worst = 0.0_f64;
        for block in &self.blocks {
            let k = block.cols.len();
            let bg = Vector::from_iterator(k, block.cols.iter().map(|&c| coef[c]));
            let gg = Vector::from_iterator(k, block.cols.iter().map(|&c| grad[c]));
            let nrm = bg.norm();
            let r = if nrm > 0.0 {
                let mut r = &gg + &bg * (block.weight / nrm);
                if l1 > 0.0 {
                    for j in 0..k {
                        r[j] += if bg[j] != 0.0 {
                            l1 * bg[j].signum()
                        } else {
                            l1 * (-r[j] / l1).clamp(-1.0, 1.0)
                        };
                    }
                }
                r
            } else {
                let w = -gg;
                let rem = if l1 > 0.0 { w.map(|v| soft_threshold(v, l1)) } else { w };
                let rn = rem.norm();
                if rn <= block.weight {
                    Vector::zeros(k)
                } else {
                    rem * (1.0 - block.weight / rn)
                }
            };
            worst = worst.max(r.amax());
        }
        worst
    }

    /// Extracts the polar pieces, subgradients and refit statistics of a
    /// converged solution.
    pub fn freeze_selection(
        &self,
        dataset: &Dataset,
        groups: &GroupStructure,
        omega: &Vector,
        solution: &RawSolution,
        opts: &SolveOptions,
    ) -> Result<SelectionRecord> {
        if solution.kkt_residual > opts.tol {
            return Err(Error::Numerical(format!(
                "solution KKT residual {:.3e} exceeds tolerance {:.1e}",
                solution.kkt_residual, opts.tol
            )));
        }
        let threshold = opts.active_threshold();
        let mut coef = solution.coef.clone();
        let mut selected = Vec::new();
        for (g, block) in self.blocks.iter().enumerate() {
            let nrm: f64 = block.cols.iter().map(|&c| coef[c] * coef[c]).sum::<f64>().sqrt();
            if nrm > threshold {
                selected.push(g);
            } else {
                block.cols.iter().for_each(|&c| coef[c] = 0.0);
            }
        }
        if selected.is_empty() {
            return Err(Error::EmptySelection);
        }

        let mut solve_active = Vec::new();
        let mut block_sizes = Vec::new();
        let mut gamma = Vec::new();
        let mut u_blocks = Vec::new();
        for &g in &selected {
            let cols: Vec<usize> = self.blocks[g].cols.iter().copied().filter(|&c| coef[c] != 0.0).collect();
            let vals = Vector::from_iterator(cols.len(), cols.iter().map(|&c| coef[c]));
            let size = vals.norm();
            gamma.push(size);
            u_blocks.push((vals / size).iter().copied().collect::<Vec<f64>>());
            block_sizes.push(cols.len());
            solve_active.extend(cols);
        }

        let active: Vec<usize> = match &self.augmentation {
            Some(aug) => {
                let mut out: Vec<usize> = Vec::new();
                for &k in &solve_active {
                    let c = aug.column_map[k];
                    if !out.contains(&c) {
                        out.push(c);
                    }
                }
                out
            }
            None => solve_active.clone(),
        };

        let xe = select_columns(&dataset.x, &active);
        let gram_e = xe.transpose() * &xe;
        let chol = cholesky(&gram_e, "X_E^T X_E")
            .map_err(|_| Error::RankDeficient(format!("selected design X_E ({} columns) is rank deficient", active.len())))?;
        let beta_hat = chol.solve(&(xe.transpose() * &dataset.y));
        let n_e = self.design.transpose() * (&dataset.y - &xe * &beta_hat);
        let sigma = dataset.resolve_sigma(&active)?;
        let sigma_e = spd_inverse(&gram_e, "X_E^T X_E")? * (sigma * sigma);

        // subgradient pieces from the stationary map at the frozen solution
        let target = omega - self.smooth_gradient(&Vector::zeros(self.dim()), &coef);
        let l1 = self.l1_weight;
        let mut l1_sub = vec![0.0; self.dim()];
        let mut z_blocks = Vec::new();
        for (g, block) in self.blocks.iter().enumerate() {
            let is_selected = selected.contains(&g);
            if is_selected {
                if l1 > 0.0 {
                    for &c in &block.cols {
                        l1_sub[c] = if coef[c] != 0.0 { coef[c].signum() } else { target[c] / l1 };
                    }
                }
                continue;
            }
            let v = Vector::from_iterator(block.cols.len(), block.cols.iter().map(|&c| target[c]));
            let rem = if l1 > 0.0 {
                for (j, &c) in block.cols.iter().enumerate() {
                    l1_sub[c] = (v[j] / l1).clamp(-1.0, 1.0);
                }
                v.map(|x| soft_threshold(x, l1))
            } else {
                v
            };
            let z = rem / block.weight;
            if z.norm() >= 1.0 {
                return Err(Error::Numerical(format!(
                    "inactive group {} sits on the selection boundary (||z|| = {:.6})",
                    g + 1,
                    z.norm()
                )));
            }
            z_blocks.push(InactiveBlock { group: g, z: z.iter().copied().collect() });
        }
        let _ = groups;

        Ok(SelectionRecord {
            variant: self.variant,
            active,
            selected_groups: selected,
            solve_active,
            block_sizes,
            gamma,
            u_blocks,
            z_blocks,
            l1_subgradient: (l1 > 0.0).then_some(l1_sub),
            beta_hat: beta_hat.iter().copied().collect(),
            n_e: n_e.iter().copied().collect(),
            sigma_e: mat_to_rows(&sigma_e),
            sigma,
            omega: omega.iter().copied().collect(),
            solution: coef.iter().copied().collect(),
            kkt_residual: self.check_stationarity(omega, &coef),
        })
    }
}

/// Builds the problem for `groups` and solves it.
pub fn solve(dataset: &Dataset, groups: &GroupStructure, omega: &Vector, opts: &SolveOptions) -> Result<RawSolution> {
    SelectionProblem::new(dataset, groups)?.solve(omega, opts)
}

pub fn check_stationarity(dataset: &Dataset, groups: &GroupStructure, omega: &Vector, solution: &Vector) -> Result<f64> {
    let problem = SelectionProblem::new(dataset, groups)?;
    if solution.len() != problem.dim() {
        return Err(Error::Dimension(format!(
            "solution has length {}, problem dimension is {}",
            solution.len(),
            problem.dim()
        )));
    }
    Ok(problem.check_stationarity(omega, solution))
}

/// Solves and freezes in one go.
pub fn select(
    dataset: &Dataset,
    groups: &GroupStructure,
    omega: &Vector,
    opts: &SolveOptions,
) -> Result<(SelectionProblem, SelectionRecord)> {
    let problem = SelectionProblem::new(dataset, groups)?;
    let sol = problem.solve(omega, opts)?;
    let record = problem.freeze_selection(dataset, groups, omega, &sol, opts)?;
    Ok((problem, record))
}
