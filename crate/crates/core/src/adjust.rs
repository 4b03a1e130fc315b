//! Matrices of the selection-informed likelihood: the affine decomposition
//! `omega = A beta_hat + B gamma + c` of the stationary map, its "barred"
//! reparameterization, the conditional law of the group sizes, and the
//! Jacobian of the change of variables `omega -> (gamma, U, Z)`.
//!
//! All four variants share one code path: the decomposition is written in the
//! solve coordinates of [`SelectionProblem`], and the Jacobian uses
//! `Q = D_E^T D_E + eps I` over the selected solve columns.

use nalgebra::SymmetricEigen;
use twofloat::TwoFloat;

use crate::error::{Error, Result};
use crate::groupsolve::SelectionProblem;
use crate::linalg::{cholesky, gaussian_log_density, log_det_spd, select_columns, spd_inverse, symmetrize, Mat, Vector};
use crate::model::{Dataset, GroupStructure, SelectionRecord};

const SYMMETRY_TOL: f64 = 1e-10;

/// Every derived matrix needed by the surrogate posterior.
#[derive(Debug, Clone)]
pub struct AdjustmentParams {
    pub a: Mat,
    pub b: Mat,
    pub c: Vector,
    pub omega_bar: Mat,
    pub a_bar: Mat,
    pub b_bar: Vector,
    pub theta_bar: Mat,
    pub r_bar: Mat,
    pub s_bar: Vector,
    pub sigma_bar: Mat,
    pub p_bar: Mat,
    pub q_bar: Vector,
    /// Penalty weight of each selected group.
    pub lambda: Vec<f64>,
    /// Block-diagonal orthonormal completion of the selected directions.
    pub u_bar: Mat,
    /// `Q` over the selected solve columns.
    pub gram: Mat,
    /// `Q^{-1}` for the variant's `Q`.
    pub gram_inv: Mat,
    /// Block size entering the Jacobian (`|g|`, or `|T_g|` when sparse).
    pub group_sizes: Vec<usize>,
    pub beta_hat: Vector,
    pub sigma_e: Mat,
    pub sigma_e_inv: Mat,
    pub theta_bar_inv: Mat,
    pub sigma_bar_inv: Mat,
    jacobian: JacobianCore,
}

/// `Lambda'^{1/2} U_bar^T Q^{-1} U_bar Lambda'^{1/2}`, with
/// `Lambda' = diag(lambda_g I_{d_g - 1})`. The Jacobian matrix is similar to
/// `Gamma + core`, which is symmetric.
#[derive(Debug, Clone)]
struct JacobianCore {
    core: Mat,
    /// `M_g` index ranges along the diagonal.
    ranges: Vec<std::ops::Range<usize>>,
    /// Eigenvalues of `core`; used when there is a single selected group, in
    /// which case `Gamma = gamma I` and `det = prod (gamma + d_i)`.
    single_group_eigs: Option<Vec<f64>>,
}

impl JacobianCore {
    fn new(lambda: &[f64], sizes: &[usize], u_bar: &Mat, gram: &Mat, gram_inv: &Mat) -> Self {
        let s = u_bar.transpose() * refined_solve(gram, gram_inv, u_bar);
        let mut scale = Vec::with_capacity(s.nrows());
        let mut ranges = Vec::with_capacity(sizes.len());
        for (l, &d) in lambda.iter().zip(sizes) {
            let start = scale.len();
            scale.extend(std::iter::repeat_n(l.sqrt(), d.saturating_sub(1)));
            ranges.push(start..scale.len());
        }
        let core = symmetrize(&Mat::from_fn(s.nrows(), s.ncols(), |i, j| scale[i] * s[(i, j)] * scale[j]));
        let single_group_eigs = (sizes.len() == 1 && core.nrows() > 0)
            .then(|| SymmetricEigen::new(core.clone()).eigenvalues.iter().copied().collect());
        Self { core, ranges, single_group_eigs }
    }

    fn matrix(&self, gamma: &Vector) -> Mat {
        let mut m = self.core.clone();
        for (g, r) in self.ranges.iter().enumerate() {
            for i in r.clone() {
                m[(i, i)] += gamma[g];
            }
        }
        m
    }
}

/// `Q^{-1} rhs` with two steps of iterative refinement, residuals accumulated
/// in double-double. `Q` over overlapping designs has condition numbers near
/// 1e6, which the plain product with `Q^{-1}` passes straight into `log J`.
fn refined_solve(q: &Mat, q_inv: &Mat, rhs: &Mat) -> Mat {
    let mut x = q_inv * rhs;
    for _ in 0..2 {
        let r = Mat::from_fn(rhs.nrows(), rhs.ncols(), |i, j| {
            let mut acc = TwoFloat::from(rhs[(i, j)]);
            for k in 0..q.ncols() {
                acc -= TwoFloat::new_mul(q[(i, k)], x[(k, j)]);
            }
            f64::from(acc)
        });
        x += q_inv * r;
    }
    x
}

fn check_gamma(gamma: &Vector, groups: usize) -> Result<()> {
    if gamma.len() != groups {
        return Err(Error::Dimension(format!("gamma has length {}, expected {groups}", gamma.len())));
    }
    if let Some(g) = gamma.iter().find(|g| !(**g > 0.0)) {
        return Err(Error::Numerical(format!("Jacobian evaluated at nonpositive group size {g}")));
    }
    Ok(())
}

/// Orthonormal completion of a unit vector: columns `2..d` of the Householder
/// reflector mapping `e_1` to `-sign(u_1) u`.
pub fn orthonormal_completion(u: &Vector) -> Result<Mat> {
    let d = u.len();
    if d == 0 || (u.norm() - 1.0).abs() > 1e-8 {
        return Err(Error::Numerical(format!("orthonormal completion needs a unit vector (norm {})", u.norm())));
    }
    let sign = if u[0] >= 0.0 { 1.0 } else { -1.0 };
    let mut v = u.clone();
    v[0] += sign;
    let vv = v.norm_squared();
    let h = Mat::identity(d, d) - (&v * v.transpose()) * (2.0 / vv);
    Ok(h.columns(1, d - 1).into_owned())
}

/// `(A, B, c)` such that `omega = A beta_hat + B gamma + c` at the frozen
/// selection, in the problem's solve coordinates.
pub fn selection_maps_for(problem: &SelectionProblem, record: &SelectionRecord, dataset: &Dataset) -> Result<(Mat, Mat, Vector)> {
    if record.selected_groups.is_empty() {
        return Err(Error::EmptySelection);
    }
    let q = problem.dim();
    let xe = select_columns(&dataset.x, &record.active);
    let a = -(problem.design.transpose() * &xe);

    let mut b = select_columns(&problem.gram, &record.solve_active);
    for (k, &c) in record.solve_active.iter().enumerate() {
        b[(c, k)] += problem.ridge;
    }
    let b = b * record.u_matrix();

    let mut c = -Vector::from_vec(record.n_e.clone());
    let mut offset = 0;
    for (k, &g) in record.selected_groups.iter().enumerate() {
        let w = problem.block_weight(g);
        for (j, &col) in record.solve_active[offset..offset + record.block_sizes[k]].iter().enumerate() {
            c[col] += w * record.u_blocks[k][j];
        }
        offset += record.block_sizes[k];
    }
    for z in &record.z_blocks {
        let w = problem.block_weight(z.group);
        for (j, &col) in problem.block_columns(z.group).iter().enumerate() {
            c[col] += w * z.z[j];
        }
    }
    if let Some(s) = &record.l1_subgradient {
        for (j, sj) in s.iter().enumerate() {
            c[j] += problem.l1_weight * sj;
        }
    }
    debug_assert_eq!(c.len(), q);
    Ok((a, b, c))
}

pub fn selection_maps(record: &SelectionRecord, dataset: &Dataset, groups: &GroupStructure) -> Result<(Mat, Mat, Vector)> {
    selection_maps_for(&SelectionProblem::new(dataset, groups)?, record, dataset)
}

/// Residual `max |A beta_hat + B gamma + c - omega|` at the frozen selection.
pub fn reconstruction_residual(a: &Mat, b: &Mat, c: &Vector, record: &SelectionRecord) -> f64 {
    let gamma = Vector::from_vec(record.gamma.clone());
    (a * record.beta_hat_vec() + b * gamma + c - record.omega_vec()).amax()
}

/// The barred reparameterization `(Omega_bar, A_bar, b_bar, Theta_bar, R_bar, s_bar)`.
#[derive(Debug, Clone)]
pub struct BarParameters {
    pub omega_bar: Mat,
    pub a_bar: Mat,
    pub b_bar: Vector,
    pub theta_bar: Mat,
    pub r_bar: Mat,
    pub s_bar: Vector,
}

pub fn bar_parameters(a: &Mat, b: &Mat, c: &Vector, sigma_e: &Mat, omega: &Mat) -> Result<BarParameters> {
    let l = cholesky(omega, "randomization covariance")?.l();
    let whiten = |m: &Mat| {
        l.solve_lower_triangular(m)
            .ok_or_else(|| Error::Numerical("whitening by the randomization covariance failed".into()))
    };
    let a_w = whiten(a)?;
    let b_w = whiten(b)?;
    let c_w = whiten(&Mat::from_column_slice(c.len(), 1, c.as_slice()))?;

    let btb = b_w.transpose() * &b_w;
    let omega_bar = spd_inverse(&btb, "B^T Omega^{-1} B")
        .map_err(|_| Error::RankDeficient("B^T Omega^{-1} B is singular".into()))?;
    let a_bar = -(&omega_bar * b_w.transpose() * &a_w);
    let b_bar = -(&omega_bar * b_w.transpose() * &c_w).column(0).into_owned();

    // Theta_bar^{-1} = Sigma_E^{-1} + A~^T (I - P_B~) A~, formed from the
    // residuals of the whitened A and c after projection onto span(B~).
    let (qb, _) = crate::linalg::thin_qr(&b_w);
    let a_perp = &a_w - &qb * (qb.transpose() * &a_w);
    let c_perp = &c_w - &qb * (qb.transpose() * &c_w);
    let sigma_e_inv = spd_inverse(sigma_e, "Sigma_E")?;
    let theta_inv = symmetrize(&(&sigma_e_inv + a_perp.transpose() * &a_perp));
    let theta_bar = spd_inverse(&theta_inv, "Theta_bar^{-1}")?;
    let r_bar = &theta_bar * &sigma_e_inv;
    let s_bar = -(&theta_bar * a_perp.transpose() * &c_perp).column(0).into_owned();
    Ok(BarParameters { omega_bar, a_bar, b_bar, theta_bar, r_bar, s_bar })
}

/// `(Sigma_bar, P_bar, q_bar)` of the marginal law of `gamma` given `beta`.
pub fn conditional_parameters(bar: &BarParameters) -> (Mat, Mat, Vector) {
    let sigma_bar = symmetrize(&(&bar.omega_bar + &bar.a_bar * &bar.theta_bar * bar.a_bar.transpose()));
    let p_bar = &bar.a_bar * &bar.r_bar;
    let q_bar = &bar.a_bar * &bar.s_bar + &bar.b_bar;
    (sigma_bar, p_bar, q_bar)
}

/// `log N(bh; beta, Sigma_E) - ||A bh + B g + c||^2_{Omega^{-1}} / 2`
/// minus `log N(bh; R_bar beta + s_bar, Theta_bar) + log N(g; A_bar bh + b_bar, Omega_bar)`.
/// Depends on `beta` only.
pub fn factorization_log_ratio(
    params: &AdjustmentParams,
    omega_inv: &Mat,
    beta: &Vector,
    beta_hat: &Vector,
    gamma: &Vector,
) -> Result<f64> {
    let w = &params.a * beta_hat + &params.b * gamma + &params.c;
    let lhs = gaussian_log_density(beta_hat, beta, &params.sigma_e)? - 0.5 * w.dot(&(omega_inv * &w));
    let rhs = gaussian_log_density(beta_hat, &(&params.r_bar * beta + &params.s_bar), &params.theta_bar)?
        + gaussian_log_density(gamma, &(&params.a_bar * beta_hat + &params.b_bar), &params.omega_bar)?;
    Ok(lhs - rhs)
}

fn check_symmetric_pd(m: &Mat, what: &str) -> Result<()> {
    let asym = crate::linalg::max_abs_diff(m, &m.transpose());
    if asym > SYMMETRY_TOL * (1.0 + m.amax()) {
        return Err(Error::Numerical(format!("{what} is not symmetric (gap {asym:.2e})")));
    }
    cholesky(m, what).map(|_| ())
}

impl AdjustmentParams {
    /// Builds every matrix for a frozen selection. `omega_cov` is the
    /// randomization covariance in solve coordinates.
    pub fn build(problem: &SelectionProblem, record: &SelectionRecord, dataset: &Dataset, omega_cov: &Mat) -> Result<Self> {
        let (a, b, c) = selection_maps_for(problem, record, dataset)?;
        let residual = reconstruction_residual(&a, &b, &c, record);
        let scale = 1.0 + record.omega.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if residual > 1e-8 * scale {
            return Err(Error::Numerical(format!(
                "stationary map does not reproduce the randomization (residual {residual:.3e})"
            )));
        }
        let sigma_e = record.sigma_e_mat();
        let bar = bar_parameters(&a, &b, &c, &sigma_e, omega_cov)?;
        let (sigma_bar, p_bar, q_bar) = conditional_parameters(&bar);
        for (m, what) in [(&bar.omega_bar, "Omega_bar"), (&bar.theta_bar, "Theta_bar"), (&sigma_bar, "Sigma_bar")] {
            check_symmetric_pd(m, what)?;
        }

        let mut gram_e = Mat::from_fn(record.solve_active.len(), record.solve_active.len(), |i, j| {
            problem.gram[(record.solve_active[i], record.solve_active[j])]
        });
        for i in 0..gram_e.nrows() {
            gram_e[(i, i)] += problem.ridge;
        }
        let gram_inv = spd_inverse(&gram_e, "Q = D_E^T D_E + eps I")
            .map_err(|_| Error::RankDeficient("selected solve design is rank deficient".into()))?;

        let completions = record
            .u_blocks
            .iter()
            .map(|u| orthonormal_completion(&Vector::from_vec(u.clone())))
            .collect::<Result<Vec<_>>>()?;
        let u_bar = crate::linalg::block_diag(&completions);
        let lambda: Vec<f64> = record.selected_groups.iter().map(|&g| problem.block_weight(g)).collect();
        let jacobian = JacobianCore::new(&lambda, &record.block_sizes, &u_bar, &gram_e, &gram_inv);

        Ok(Self {
            a,
            b,
            c,
            sigma_e_inv: spd_inverse(&sigma_e, "Sigma_E")?,
            theta_bar_inv: spd_inverse(&bar.theta_bar, "Theta_bar")?,
            sigma_bar_inv: spd_inverse(&sigma_bar, "Sigma_bar")?,
            omega_bar: bar.omega_bar,
            a_bar: bar.a_bar,
            b_bar: bar.b_bar,
            theta_bar: bar.theta_bar,
            r_bar: bar.r_bar,
            s_bar: bar.s_bar,
            sigma_bar,
            p_bar,
            q_bar,
            lambda,
            u_bar,
            gram: gram_e,
            gram_inv,
            group_sizes: record.block_sizes.clone(),
            beta_hat: record.beta_hat_vec(),
            sigma_e,
            jacobian,
        })
    }

    /// Convenience wrapper that rebuilds the selection problem.
    pub fn from_selection(record: &SelectionRecord, dataset: &Dataset, groups: &GroupStructure, omega_cov: &Mat) -> Result<Self> {
        let problem = SelectionProblem::new(dataset, groups)?;
        Self::build(&problem, record, dataset, omega_cov)
    }

    pub fn n_groups(&self) -> usize {
        self.lambda.len()
    }

    pub fn n_active(&self) -> usize {
        self.beta_hat.len()
    }

    /// Checks that the factorization log-ratio is constant in `(beta_hat, gamma)`
    /// at a few deterministic perturbations; returns the largest spread.
    pub fn verify_factorization(&self, omega_cov: &Mat) -> Result<f64> {
        let omega_inv = spd_inverse(omega_cov, "randomization covariance")?;
        let beta = self.beta_hat.map(|v| 0.5 * v + 0.1);
        let g0 = Vector::from_element(self.n_groups(), 1.0);
        let base = factorization_log_ratio(self, &omega_inv, &beta, &self.beta_hat, &g0)?;
        let mut spread = 0.0_f64;
        for k in 1..=3 {
            let t = k as f64;
            let bh = self.beta_hat.map(|v| v + 0.05 * t);
            let g = Vector::from_fn(self.n_groups(), |i, _| 0.5 + 0.3 * t + 0.1 * i as f64);
            let r = factorization_log_ratio(self, &omega_inv, &beta, &bh, &g)?;
            spread = spread.max((r - base).abs() / (1.0 + base.abs()));
        }
        Ok(spread)
    }

    /// The (symmetrized) Jacobian matrix `Gamma + Lambda'^{1/2} S Lambda'^{1/2}`.
    pub fn jacobian_matrix(&self, gamma: &Vector) -> Result<Mat> {
        check_gamma(gamma, self.n_groups())?;
        Ok(self.jacobian.matrix(gamma))
    }

    pub fn log_jacobian(&self, gamma: &Vector) -> Result<f64> {
        log_jacobian(gamma, self)
    }

    pub fn jacobian_grad(&self, gamma: &Vector) -> Result<Vector> {
        jacobian_grad(gamma, self)
    }

    /// `log J` recomputed from scratch with another orthonormal completion
    /// `u_bar` of the selected directions (block-diagonal, `|g| - 1` columns
    /// per block).
    pub fn log_jacobian_with_completion(&self, u_bar: &Mat, gamma: &Vector) -> Result<f64> {
        check_gamma(gamma, self.n_groups())?;
        if u_bar.nrows() != self.u_bar.nrows() || u_bar.ncols() != self.u_bar.ncols() {
            return Err(Error::Dimension(format!(
                "completion is {}x{}, expected {}x{}",
                u_bar.nrows(),
                u_bar.ncols(),
                self.u_bar.nrows(),
                self.u_bar.ncols()
            )));
        }
        if u_bar.ncols() == 0 {
            return Ok(0.0);
        }
        let core = JacobianCore::new(&self.lambda, &self.group_sizes, u_bar, &self.gram, &self.gram_inv);
        log_det_spd(&core.matrix(gamma), "Jacobian matrix")
    }
}

/// `log det(Gamma + U_bar^T Q^{-1} Lambda U_bar)`.
pub fn log_jacobian(gamma: &Vector, params: &AdjustmentParams) -> Result<f64> {
    check_gamma(gamma, params.n_groups())?;
    let core = &params.jacobian;
    if core.core.nrows() == 0 {
        return Ok(0.0);
    }
    if let Some(eigs) = &core.single_group_eigs {
        return Ok(eigs.iter().map(|d| (gamma[0] + d).ln()).sum());
    }
    let chol = cholesky(&core.matrix(gamma), "Jacobian matrix")?;
    Ok(2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

/// Gradient of [`log_jacobian`]: per group, the trace of the inverse Jacobian
/// matrix over that group's diagonal block.
pub fn jacobian_grad(gamma: &Vector, params: &AdjustmentParams) -> Result<Vector> {
    check_gamma(gamma, params.n_groups())?;
    let core = &params.jacobian;
    if core.core.nrows() == 0 {
        return Ok(Vector::zeros(params.n_groups()));
    }
    if let Some(eigs) = &core.single_group_eigs {
        return Ok(Vector::from_element(1, eigs.iter().map(|d| 1.0 / (gamma[0] + d)).sum()));
    }
    let inv = spd_inverse(&core.matrix(gamma), "Jacobian matrix")?;
    Ok(Vector::from_iterator(
        core.ranges.len(),
        core.ranges.iter().map(|r| r.clone().map(|i| inv[(i, i)]).sum::<f64>()),
    ))
}

/// `log |det [(Q Gamma_full + Lambda_full) U_bar, Q U]|` built directly from
/// the derivative of the stationary map; `Gamma_full` and `Lambda_full` carry
/// one entry per coordinate of each selected block. Equals
/// `log det Q + log J` whenever `Q` is invertible.
pub fn log_abs_stacked_determinant(q: &Mat, gamma: &Vector, lambda: &[f64], sizes: &[usize], u_blocks: &[Vec<f64>]) -> Result<f64> {
    let u = crate::linalg::block_diag(
        &u_blocks.iter().map(|b| Mat::from_column_slice(b.len(), 1, b)).collect::<Vec<_>>(),
    );
    let completions = u_blocks
        .iter()
        .map(|b| orthonormal_completion(&Vector::from_vec(b.clone())))
        .collect::<Result<Vec<_>>>()?;
    let u_bar = crate::linalg::block_diag(&completions);
    let mut g_full = Vec::new();
    let mut l_full = Vec::new();
    for (k, &d) in sizes.iter().enumerate() {
        g_full.extend(std::iter::repeat_n(gamma[k], d));
        l_full.extend(std::iter::repeat_n(lambda[k], d));
    }
    let gamma_full = Mat::from_diagonal(&Vector::from_vec(g_full));
    let lambda_full = Mat::from_diagonal(&Vector::from_vec(l_full));
    let left = (q * gamma_full + lambda_full) * u_bar;
    let right = q * u;
    let mut stacked = Mat::zeros(q.nrows(), left.ncols() + right.ncols());
    stacked.columns_mut(0, left.ncols()).copy_from(&left);
    stacked.columns_mut(left.ncols(), right.ncols()).copy_from(&right);
    let lu = stacked.lu();
    let diag = lu.u().diagonal();
    Ok(diag.iter().map(|d| d.abs().ln()).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::groupsolve::{select, SolveOptions};
    use crate::model::{SigmaSpec, Variant};
    use nalgebra::DVector;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normal_mat(r: usize, c: usize, rng: &mut ChaCha8Rng) -> Mat {
        Mat::from_fn(r, c, |_, _| StandardNormal.sample(rng))
    }

    fn identity_example() -> (SelectionProblem, SelectionRecord, Dataset) {
        let ds = Dataset::new(Mat::identity(2, 2), Vector::zeros(2), SigmaSpec::Known(1.0)).unwrap();
        let gs = GroupStructure::disjoint(vec![vec![0, 1]], 1.0, 2).unwrap();
        let (p, r) = select(&ds, &gs, &DVector::from_vec(vec![1.0, -0.5]), &SolveOptions::default()).unwrap();
        (p, r, ds)
    }

    /// A correlated design with three groups, all selected by a large `omega`.
    fn correlated_instance(seed: u64, variant: Variant) -> (SelectionProblem, SelectionRecord, Dataset, Mat) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 40;
        let p = 7;
        let mut x = normal_mat(n, p, &mut rng);
        for i in 0..n {
            x[(i, 1)] += 0.5 * x[(i, 0)];
            x[(i, 4)] += 0.3 * x[(i, 3)];
        }
        let beta = DVector::from_vec(vec![1.0, -1.0, 0.5, 0.0, 0.0, 0.8, 0.6]);
        let y = &x * &beta + Vector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
        let ds = Dataset::new(x, y, SigmaSpec::Known(1.0)).unwrap();
        let (groups, weights, l1, ridge) = match variant {
            Variant::Overlapping => (vec![vec![0, 1, 2], vec![2, 3, 4], vec![5, 6]], vec![2.0; 3], 0.0, 1e-4),
            Variant::Sparse => (vec![vec![0, 1, 2], vec![3, 4], vec![5, 6]], vec![2.0; 3], 0.5, 0.0),
            _ => (vec![vec![0, 1, 2], vec![3, 4], vec![5, 6]], vec![2.0; 3], 0.0, 0.0),
        };
        let gs = GroupStructure::new(variant, groups, weights, l1, ridge, p).unwrap();
        let q = gs.augmented_dim();
        // duplicated coordinates with very different randomization make the
        // ridge-stabilized objective nearly unbounded; keep it moderate there
        let scale = if variant == Variant::Overlapping { 1.0 } else { 3.0 };
        let omega = Vector::from_fn(q, |_, _| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng));
        let (problem, record) = select(&ds, &gs, &omega, &SolveOptions::default()).unwrap();
        let omega_cov = Mat::identity(q, q) * 9.0;
        (problem, record, ds, omega_cov)
    }

    #[test]
    fn identity_example_maps() {
        let (problem, rec, ds) = identity_example();
        let (a, b, c) = selection_maps_for(&problem, &rec, &ds).unwrap();
        assert!(crate::linalg::max_abs_diff(&a, &(-Mat::identity(2, 2))) < 1e-15);
        let u = DVector::from_vec(rec.u_blocks[0].clone());
        assert!((b.column(0) - &u).amax() < 1e-12);
        assert!((&c - &u).amax() < 1e-12); // N_E = 0 for y = 0
        assert!(reconstruction_residual(&a, &b, &c, &rec) < 1e-10);
    }

    #[test]
    fn identity_example_conditional_parameters() {
        let (problem, rec, ds) = identity_example();
        let params = AdjustmentParams::build(&problem, &rec, &ds, &Mat::identity(2, 2)).unwrap();
        let u = DVector::from_vec(rec.u_blocks[0].clone());
        let m = (Mat::identity(2, 2) * 2.0 - &u * u.transpose()).try_inverse().unwrap();
        let sigma_bar = 1.0 + (u.transpose() * &m * &u)[(0, 0)];
        let p_bar = Mat::from_iterator(1, 2, (m.transpose() * &u).iter().copied());
        assert!((params.sigma_bar[(0, 0)] - sigma_bar).abs() < 1e-12);
        assert!(crate::linalg::max_abs_diff(&params.p_bar, &p_bar) < 1e-12);
        assert!((params.q_bar[0] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn atomic_groups_reconstruct_and_have_unit_jacobian() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = normal_mat(20, 2, &mut rng);
        let y = Vector::from_fn(20, |_, _| StandardNormal.sample(&mut rng));
        let ds = Dataset::new(x, y, SigmaSpec::Known(1.0)).unwrap();
        let gs = GroupStructure::disjoint(vec![vec![0], vec![1]], 0.5, 2).unwrap();
        let omega = DVector::from_vec(vec![8.0, -9.0]);
        let (problem, rec) = select(&ds, &gs, &omega, &SolveOptions::default()).unwrap();
        let (a, b, c) = selection_maps_for(&problem, &rec, &ds).unwrap();
        let signs: Vec<f64> = rec.u_blocks.iter().map(|u| u[0]).collect();
        assert!(signs.iter().all(|s| s.abs() == 1.0));
        let expect = &problem.gram * Mat::from_diagonal(&DVector::from_vec(signs));
        assert!(crate::linalg::max_abs_diff(&b, &expect) < 1e-12);
        assert!(reconstruction_residual(&a, &b, &c, &rec) < 1e-10);
        let params = AdjustmentParams::build(&problem, &rec, &ds, &Mat::identity(2, 2)).unwrap();
        for g in [0.1, 1.0, 7.0] {
            let gamma = Vector::from_element(2, g);
            assert_eq!(params.log_jacobian(&gamma).unwrap(), 0.0);
            assert_eq!(params.jacobian_grad(&gamma).unwrap(), Vector::zeros(2));
        }
    }

    #[test]
    fn reconstruction_holds_for_every_variant() {
        for variant in [Variant::Disjoint, Variant::Overlapping, Variant::Standardized, Variant::Sparse] {
            for seed in 0..5 {
                let (problem, rec, ds, _) = correlated_instance(seed, variant);
                let (a, b, c) = selection_maps_for(&problem, &rec, &ds).unwrap();
                let r = reconstruction_residual(&a, &b, &c, &rec);
                assert!(r < 1e-8, "{variant:?} seed {seed}: {r}");
            }
        }
    }

    #[test]
    fn overlapping_ridge_enters_selected_rows_of_b() {
        let (problem, rec, ds, _) = correlated_instance(1, Variant::Overlapping);
        let (_, b, _) = selection_maps_for(&problem, &rec, &ds).unwrap();
        let plain = select_columns(&problem.gram, &rec.solve_active) * rec.u_matrix();
        let diff = &b - &plain;
        let expect = {
            let mut m = Mat::zeros(problem.dim(), rec.solve_active.len());
            for (k, &c) in rec.solve_active.iter().enumerate() {
                m[(c, k)] = 1e-4;
            }
            m * rec.u_matrix()
        };
        assert!(crate::linalg::max_abs_diff(&diff, &expect) < 1e-12);
    }

    #[test]
    fn factorization_ratio_is_free_of_data_coordinates() {
        for variant in [Variant::Disjoint, Variant::Overlapping, Variant::Standardized, Variant::Sparse] {
            let (problem, rec, ds, cov) = correlated_instance(2, variant);
            let params = AdjustmentParams::build(&problem, &rec, &ds, &cov).unwrap();
            let omega_inv = spd_inverse(&cov, "cov").unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            let e = params.n_active();
            let beta = Vector::from_fn(e, |_, _| StandardNormal.sample(&mut rng));
            let ratios: Vec<f64> = (0..10)
                .map(|_| {
                    let bh = &params.beta_hat + Vector::from_fn(e, |_, _| 0.3 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng));
                    let g = Vector::from_fn(params.n_groups(), |_, _| rand_distr::Uniform::new(0.1, 3.0).unwrap().sample(&mut rng));
                    factorization_log_ratio(&params, &omega_inv, &beta, &bh, &g).unwrap()
                })
                .collect();
            let spread = ratios.iter().fold(0.0_f64, |m, r| m.max((r - ratios[0]).abs()));
            assert!(spread < 1e-8, "{variant:?}: {spread}");
            assert!(params.verify_factorization(&cov).unwrap() < 1e-10);
        }
    }

    #[test]
    fn theta_bar_approaches_sigma_e_as_randomization_grows() {
        let (problem, rec, ds, cov) = correlated_instance(3, Variant::Disjoint);
        let small = AdjustmentParams::build(&problem, &rec, &ds, &cov).unwrap();
        let large = AdjustmentParams::build(&problem, &rec, &ds, &(&cov * 100.0)).unwrap();
        let gap_small = crate::linalg::max_abs_diff(&small.theta_bar, &small.sigma_e);
        let gap_large = crate::linalg::max_abs_diff(&large.theta_bar, &large.sigma_e);
        assert!(gap_large * 10.0 <= gap_small, "{gap_small} vs {gap_large}");
    }

    #[test]
    fn zero_a_bar_gives_marginal_equal_to_omega_bar() {
        let bar = BarParameters {
            omega_bar: Mat::identity(2, 2) * 3.0,
            a_bar: Mat::zeros(2, 3),
            b_bar: DVector::from_vec(vec![1.0, -2.0]),
            theta_bar: Mat::identity(3, 3),
            r_bar: Mat::identity(3, 3),
            s_bar: Vector::zeros(3),
        };
        let (s, p, q) = conditional_parameters(&bar);
        assert_eq!(s, bar.omega_bar);
        assert_eq!(p, Mat::zeros(2, 3));
        assert_eq!(q, bar.b_bar);
    }

    #[test]
    fn sigma_bar_matches_simulated_group_size_covariance() {
        let (problem, rec, ds, cov) = correlated_instance(5, Variant::Disjoint);
        let params = AdjustmentParams::build(&problem, &rec, &ds, &cov).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let lt = cholesky(&params.theta_bar, "t").unwrap().l();
        let lo = cholesky(&params.omega_bar, "o").unwrap().l();
        let k = params.n_groups();
        let draws = 100_000;
        let mut mean = Vector::zeros(k);
        let mut second = Mat::zeros(k, k);
        for _ in 0..draws {
            let bh = &lt * Vector::from_fn(params.n_active(), |_, _| StandardNormal.sample(&mut rng));
            let g = &params.a_bar * bh + &lo * Vector::from_fn(k, |_, _| StandardNormal.sample(&mut rng));
            mean += &g;
            second += &g * g.transpose();
        }
        mean /= draws as f64;
        let emp = second / draws as f64 - &mean * mean.transpose();
        let rel = (&emp - &params.sigma_bar).norm() / params.sigma_bar.norm();
        assert!(rel < 0.05, "{rel}");
    }

    #[test]
    fn completion_of_first_basis_vector() {
        let e1 = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let ub = orthonormal_completion(&e1).unwrap();
        assert_eq!(ub.shape(), (3, 2));
        assert!(ub.row(0).amax() < 1e-15);
        assert!(crate::linalg::max_abs_diff(&(ub.transpose() * &ub), &Mat::identity(2, 2)) < 1e-15);
        assert_eq!(orthonormal_completion(&DVector::from_vec(vec![-1.0])).unwrap().shape(), (1, 0));
        assert!(orthonormal_completion(&DVector::from_vec(vec![1.0, 1.0])).is_err());
    }

    #[test]
    fn completion_of_random_unit_vectors_is_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let u = Vector::from_fn(5, |_, _| StandardNormal.sample(&mut rng)).normalize();
            let mut q = Mat::zeros(5, 5);
            q.set_column(0, &u);
            q.columns_mut(1, 4).copy_from(&orthonormal_completion(&u).unwrap());
            assert!(crate::linalg::max_abs_diff(&(q.transpose() * &q), &Mat::identity(5, 5)) < 1e-12);
        }
    }

    /// Orthonormal selected design, sizes (2, 3), unit weights.
    fn orthogonal_params() -> AdjustmentParams {
        let n = 10;
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (qx, _) = crate::linalg::thin_qr(&normal_mat(n, 5, &mut rng));
        let y = &qx * DVector::from_vec(vec![3.0, 2.0, -3.0, 2.0, 4.0]);
        let ds = Dataset::new(qx, y, SigmaSpec::Known(1.0)).unwrap();
        let gs = GroupStructure::disjoint(vec![vec![0, 1], vec![2, 3, 4]], 1.0, 5).unwrap();
        let omega = Vector::zeros(5);
        let (problem, rec) = select(&ds, &gs, &omega, &SolveOptions::default()).unwrap();
        assert_eq!(rec.n_groups(), 2);
        AdjustmentParams::build(&problem, &rec, &ds, &Mat::identity(5, 5)).unwrap()
    }

    #[test]
    fn orthogonal_design_jacobian_is_product_form() {
        let params = orthogonal_params();
        let gamma = DVector::from_vec(vec![2.0, 3.0]);
        let lj = params.log_jacobian(&gamma).unwrap();
        assert!((lj - 48.0_f64.ln()).abs() < 1e-10, "{lj}");
        let grad = params.jacobian_grad(&gamma).unwrap();
        assert!((grad[0] - 1.0 / 3.0).abs() < 1e-12 && (grad[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn closed_form_jacobian_matches_stacked_determinant() {
        for variant in [Variant::Disjoint, Variant::Standardized, Variant::Overlapping, Variant::Sparse] {
            for seed in 0..4 {
                let (problem, rec, ds, cov) = correlated_instance(seed, variant);
                let params = AdjustmentParams::build(&problem, &rec, &ds, &cov).unwrap();
                let q = params.gram_inv.clone().try_inverse().unwrap();
                let log_det_q = crate::linalg::log_det_spd(&q, "q").unwrap();
                let gamma = Vector::from_fn(params.n_groups(), |i, _| 0.4 + 0.7 * i as f64);
                let stacked =
                    log_abs_stacked_determinant(&q, &gamma, &params.lambda, &params.group_sizes, &rec.u_blocks).unwrap();
                let lj = params.log_jacobian(&gamma).unwrap();
                assert!((stacked - log_det_q - lj).abs() < 1e-8, "{variant:?}: {stacked} {log_det_q} {lj}");
            }
        }
    }

    #[test]
    fn jacobian_gradient_matches_finite_differences() {
        for variant in [Variant::Disjoint, Variant::Standardized, Variant::Overlapping, Variant::Sparse] {
            let (problem, rec, ds, cov) = correlated_instance(6, variant);
            let params = AdjustmentParams::build(&problem, &rec, &ds, &cov).unwrap();
            let gamma = Vector::from_fn(params.n_groups(), |i, _| 0.8 + 0.5 * i as f64);
            let grad = params.jacobian_grad(&gamma).unwrap();
            for g in 0..params.n_groups() {
                let h = 1e-6;
                let mut up = gamma.clone();
                up[g] += h;
                let mut dn = gamma.clone();
                dn[g] -= h;
                let fd = (params.log_jacobian(&up).unwrap() - params.log_jacobian(&dn).unwrap()) / (2.0 * h);
                let rel = (fd - grad[g]).abs() / grad[g].abs().max(1e-8);
                assert!(rel < 1e-5 || (fd - grad[g]).abs() < 1e-9, "{variant:?} group {g}: {fd} vs {}", grad[g]);
            }
        }
    }

    #[test]
    fn jacobian_is_invariant_to_completion_basis() {
        let (problem, rec, ds, cov) = correlated_instance(7, Variant::Disjoint);
        let params = AdjustmentParams::build(&problem, &rec, &ds, &cov).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rotated: Vec<Mat> = rec
            .u_blocks
            .iter()
            .map(|u| {
                let ub = orthonormal_completion(&Vector::from_vec(u.clone())).unwrap();
                let k = ub.ncols();
                let (qr, _) = crate::linalg::thin_qr(&normal_mat(k, k, &mut rng));
                ub * qr
            })
            .collect();
        let u_rot = crate::linalg::block_diag(&rotated);
        let core = JacobianCore::new(&params.lambda, &params.group_sizes, &u_rot, &params.gram, &params.gram_inv);
        let gamma = DVector::from_vec(vec![0.7, 1.9, 0.3]);
        let direct = crate::linalg::log_det_spd(&core.matrix(&gamma), "rotated").unwrap();
        assert!((direct - params.log_jacobian(&gamma).unwrap()).abs() < 1e-10);
    }

    #[test]
    fn jacobian_matrix_is_positive_definite_for_positive_sizes() {
        let (problem, rec, ds, cov) = correlated_instance(8, Variant::Disjoint);
        let params = AdjustmentParams::build(&problem, &rec, &ds, &cov).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dist = rand_distr::Uniform::new(1e-6, 50.0).unwrap();
        for _ in 0..100 {
            let gamma = Vector::from_fn(params.n_groups(), |_, _| dist.sample(&mut rng));
            assert!(cholesky(&params.jacobian_matrix(&gamma).unwrap(), "J").is_ok());
        }
        assert!(params.log_jacobian(&Vector::from_element(params.n_groups(), 0.0)).is_err());
    }
}
