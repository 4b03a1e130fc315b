//! Small dense linear-algebra helpers on top of `nalgebra`.
//!
//! Every inversion of a matrix that should be symmetric positive definite goes
//! through a Cholesky factorization; failure is reported, never regularized.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

pub fn cholesky(m: &Mat, what: &str) -> Result<Cholesky<f64, Dyn>> {
    if m.nrows() != m.ncols() {
        return Err(Error::Dimension(format!("{what} is {}x{}", m.nrows(), m.ncols())));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!("{what} has non-finite entries")));
    }
    Cholesky::new(symmetrize(m)).ok_or_else(|| Error::NotPositiveDefinite(what.to_string()))
}

pub fn spd_inverse(m: &Mat, what: &str) -> Result<Mat> {
    Ok(symmetrize(&cholesky(m, what)?.inverse()))
}

pub fn log_det_spd(m: &Mat, what: &str) -> Result<f64> {
    let chol = cholesky(m, what)?;
    Ok(2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

/// Gaussian log-density `log N(x; mean, cov)` up to the `-(d/2) log(2 pi)`
/// constant, which is included.
pub fn gaussian_log_density(x: &Vector, mean: &Vector, cov: &Mat) -> Result<f64> {
    let chol = cholesky(cov, "Gaussian covariance")?;
    let diff = x - mean;
    let white = chol.l().solve_lower_triangular(&diff).ok_or_else(|| {
        Error::Numerical("triangular solve failed in Gaussian density".into())
    })?;
    let log_det = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let d = x.len() as f64;
    Ok(-0.5 * white.norm_squared() - 0.5 * log_det - 0.5 * d * (2.0 * std::f64::consts::PI).ln())
}

/// Columns of `x` selected by `cols`, in the given order.
pub fn select_columns(x: &Mat, cols: &[usize]) -> Mat {
    Mat::from_fn(x.nrows(), cols.len(), |i, j| x[(i, cols[j])])
}

pub fn select_rows(x: &Mat, rows: &[usize]) -> Mat {
    Mat::from_fn(rows.len(), x.ncols(), |i, j| x[(rows[i], j)])
}

pub fn select_entries(v: &Vector, idx: &[usize]) -> Vector {
    Vector::from_iterator(idx.len(), idx.iter().map(|&i| v[i]))
}

pub fn max_abs(v: &Vector) -> f64 {
    v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

/// Largest absolute entry of `a - b`.
pub fn max_abs_diff(a: &Mat, b: &Mat) -> f64 {
    a.iter().zip(b.iter()).fold(0.0_f64, |acc, (x, y)| acc.max((x - y).abs()))
}

/// Block-diagonal matrix assembled from `blocks`.
pub fn block_diag(blocks: &[Mat]) -> Mat {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Mat::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// Thin QR factorization `x = q r` with the diagonal of `r` made nonnegative.
pub fn thin_qr(x: &Mat) -> (Mat, Mat) {
    let qr = x.clone().qr();
    let mut q = qr.q();
    let mut r = qr.r();
    for k in 0..r.nrows() {
        if r[(k, k)] < 0.0 {
            r.row_mut(k).neg_mut();
            q.column_mut(k).neg_mut();
        }
    }
    (q, r)
}

/// Empirical quantile with linear interpolation between order statistics.
/// `sorted` must be sorted ascending and non-empty.
pub fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = prob.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn sorted_copy(values: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = values.into_iter().collect();
    v.sort_by(|a, b| a.total_cmp(b));
    v
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    Normal::standard().inverse_cdf(p)
}

pub fn normal_cdf(x: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    Normal::standard().cdf(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn qr_has_positive_diagonal_and_reconstructs() {
        let x = Mat::from_row_slice(4, 2, &[1.0, 2.0, -3.0, 0.5, 0.2, 1.0, 4.0, -1.0]);
        let (q, r) = thin_qr(&x);
        assert!(r.diagonal().iter().all(|d| *d > 0.0));
        assert!(max_abs_diff(&(&q * &r), &x) < 1e-12);
        assert!(max_abs_diff(&(q.transpose() * &q), &Mat::identity(2, 2)) < 1e-12);
    }

    #[test]
    fn quantile_interpolates() {
        let s = [0.0, 1.0, 2.0, 3.0];
        assert_eq!(quantile_sorted(&s, 0.5), 1.5);
        assert_eq!(quantile_sorted(&s, 0.0), 0.0);
        assert_eq!(quantile_sorted(&s, 1.0), 3.0);
    }

    #[test]
    fn non_pd_is_an_error() {
        let m = Mat::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(spd_inverse(&m, "m"), Err(Error::NotPositiveDefinite(_))));
    }

    #[test]
    fn gaussian_density_matches_univariate_formula() {
        let x = Vector::from_vec(vec![1.3]);
        let m = Vector::from_vec(vec![0.2]);
        let c = Mat::from_element(1, 1, 4.0);
        let expect = -0.5 * (1.1_f64 / 2.0).powi(2) - 2.0_f64.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
        assert!((gaussian_log_density(&x, &m, &c).unwrap() - expect).abs() < 1e-12);
    }
}
