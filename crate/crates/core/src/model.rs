//! Core data types: the regression inputs, the group structure that defines
//! the selection problem, the Gaussian randomization, and the frozen outcome
//! of a selection.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, select_columns, Mat, Vector};

/// Noise standard deviation: either known or estimated from residuals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SigmaSpec {
    Known(f64),
    Estimate,
}

impl std::str::FromStr for SigmaSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("estimate") {
            return Ok(SigmaSpec::Estimate);
        }
        let v: f64 = s
            .parse()
            .map_err(|_| Error::Parse(format!("sigma must be a positive number or 'estimate', got {s:?}")))?;
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::Config(format!("sigma must be positive, got {v}")));
        }
        Ok(SigmaSpec::Known(v))
    }
}

/// Fixed-design regression inputs.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub y: Vector,
    pub x: Mat,
    pub sigma: SigmaSpec,
    pub standardized: bool,
}

impl Dataset {
    pub fn new(x: Mat, y: Vector, sigma: SigmaSpec) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::Dimension(format!(
                "design has {} rows but response has {} entries",
                x.nrows(),
                y.len()
            )));
        }
        if x.nrows() < 2 {
            return Err(Error::Dimension(format!("need at least 2 observations, got {}", x.nrows())));
        }
        if x.ncols() < 1 {
            return Err(Error::Dimension("design has no columns".into()));
        }
        if let SigmaSpec::Known(s) = sigma {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::Config(format!("sigma must be positive, got {s}")));
            }
        }
        Ok(Self { y, x, sigma, standardized: false })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn with_sigma(mut self, sigma: SigmaSpec) -> Self {
        self.sigma = sigma;
        self
    }

    /// Centers every column and scales it to unit population variance.
    /// Constant columns are only centered.
    pub fn standardize(mut self) -> Self {
        standardize_columns(&mut self.x);
        self.standardized = true;
        self
    }

    /// Rows `rows` of the dataset, keeping the noise specification.
    pub fn subset_rows(&self, rows: &[usize]) -> Result<Self> {
        let x = crate::linalg::select_rows(&self.x, rows);
        let y = Vector::from_iterator(rows.len(), rows.iter().map(|&i| self.y[i]));
        let mut d = Dataset::new(x, y, self.sigma)?;
        d.standardized = self.standardized;
        Ok(d)
    }

    /// Noise level used for inference. With `Estimate`, the residual standard
    /// deviation of least squares on the full design when `n > p + 1`, and on
    /// the `selected` columns otherwise.
    pub fn resolve_sigma(&self, selected: &[usize]) -> Result<f64> {
        match self.sigma {
            SigmaSpec::Known(s) => Ok(s),
            SigmaSpec::Estimate => {
                let cols: Vec<usize> = if self.n() > self.p() + 1 {
                    (0..self.p()).collect()
                } else {
                    selected.to_vec()
                };
                residual_sd(&self.x, &self.y, &cols)
            }
        }
    }

    pub fn write_csv(&self, x_path: &Path, y_path: &Path) -> Result<()> {
        let mut wx = csv::WriterBuilder::new().has_headers(false).from_path(x_path)?;
        for i in 0..self.n() {
            wx.write_record(self.x.row(i).iter().map(|v| format_float(*v)))?;
        }
        wx.flush()?;
        let mut wy = csv::WriterBuilder::new().has_headers(false).from_path(y_path)?;
        for v in self.y.iter() {
            wy.write_record([format_float(*v)])?;
        }
        wy.flush()?;
        Ok(())
    }
}

/// Shortest decimal representation that parses back to the same `f64`.
pub(crate) fn format_float(v: f64) -> String {
    format!("{v:?}")
}

pub fn standardize_columns(x: &mut Mat) {
    let n = x.nrows() as f64;
    for mut col in x.column_iter_mut() {
        let mean = col.sum() / n;
        col.add_scalar_mut(-mean);
        let sd = (col.norm_squared() / n).sqrt();
        if sd > 0.0 {
            col /= sd;
        }
    }
}

fn residual_sd(x: &Mat, y: &Vector, cols: &[usize]) -> Result<f64> {
    let n = x.nrows();
    if n <= cols.len() {
        return Err(Error::Config(format!(
            "cannot estimate sigma with n = {n} and {} predictors",
            cols.len()
        )));
    }
    let xs = select_columns(x, cols);
    let resid = if cols.is_empty() {
        y.clone()
    } else {
        let gram = xs.transpose() * &xs;
        let chol = cholesky(&gram, "X^T X for sigma estimate")
            .map_err(|_| Error::RankDeficient("design used for sigma estimate".into()))?;
        let coef = chol.solve(&(xs.transpose() * y));
        y - &xs * coef
    };
    Ok((resid.norm_squared() / (n - cols.len()) as f64).sqrt())
}

fn read_numeric_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)?;
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .enumerate()
            .map(|(j, cell)| {
                cell.parse::<f64>().map_err(|_| {
                    Error::Parse(format!("{}: row {}, column {}: not a number: {cell:?}", path.display(), i + 1, j + 1))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

/// Reads a headerless numeric design and response from CSV files.
pub fn load_dataset(x_path: &Path, y_path: &Path, standardize: bool) -> Result<Dataset> {
    let xr = read_numeric_csv(x_path)?;
    let yr = read_numeric_csv(y_path)?;
    let n = xr.len();
    let p = xr.first().map_or(0, |r| r.len());
    if let Some((i, r)) = xr.iter().enumerate().find(|(_, r)| r.len() != p) {
        return Err(Error::Dimension(format!("row {} of X has {} columns, expected {p}", i + 1, r.len())));
    }
    let y: Vec<f64> = if yr.len() == 1 && yr[0].len() > 1 {
        yr[0].clone()
    } else {
        if let Some((i, _)) = yr.iter().enumerate().find(|(_, r)| r.len() != 1) {
            return Err(Error::Dimension(format!("row {} of y must hold a single value", i + 1)));
        }
        yr.iter().map(|r| r[0]).collect()
    };
    let x = Mat::from_row_iterator(n, p, xr.into_iter().flatten());
    let ds = Dataset::new(x, DVector::from_vec(y), SigmaSpec::Estimate)?;
    Ok(if standardize { ds.standardize() } else { ds })
}

/// Penalty family of the selection problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Disjoint,
    Overlapping,
    Standardized,
    Sparse,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Disjoint => "disjoint",
            Variant::Overlapping => "overlapping",
            Variant::Standardized => "standardized",
            Variant::Sparse => "sparse",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "disjoint" => Ok(Variant::Disjoint),
            "overlapping" => Ok(Variant::Overlapping),
            "standardized" => Ok(Variant::Standardized),
            "sparse" => Ok(Variant::Sparse),
            other => Err(Error::Config(format!(
                "unknown variant {other:?} (expected disjoint, overlapping, standardized or sparse)"
            ))),
        }
    }
}

/// Ridge added to the overlapping objective when the group file omits it.
pub const DEFAULT_OVERLAP_RIDGE: f64 = 1e-4;

/// Groups over the columns of the design, with their penalty weights.
/// Column indices are zero-based in memory and one-based on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupStructure {
    pub variant: Variant,
    pub groups: Vec<Vec<usize>>,
    pub weights: Vec<f64>,
    pub l1_weight: f64,
    pub ridge: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct GroupFile {
    variant: Variant,
    groups: Vec<Vec<usize>>,
    weights: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    l1_weight: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ridge: Option<f64>,
}

impl GroupStructure {
    /// Builds and validates a group structure against `p` columns.
    pub fn new(
        variant: Variant,
        groups: Vec<Vec<usize>>,
        weights: Vec<f64>,
        l1_weight: f64,
        ridge: f64,
        p: usize,
    ) -> Result<Self> {
        let gs = Self { variant, groups, weights, l1_weight, ridge };
        gs.validate(p)?;
        Ok(gs)
    }

    /// Non-overlapping groups with the same weight for all.
    pub fn disjoint(groups: Vec<Vec<usize>>, weight: f64, p: usize) -> Result<Self> {
        let w = vec![weight; groups.len()];
        Self::new(Variant::Disjoint, groups, w, 0.0, 0.0, p)
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        if self.groups.is_empty() {
            return Err(Error::Groups("no groups given".into()));
        }
        if self.weights.len() != self.groups.len() {
            return Err(Error::Groups(format!(
                "{} groups but {} weights",
                self.groups.len(),
                self.weights.len()
            )));
        }
        for (g, (cols, w)) in self.groups.iter().zip(&self.weights).enumerate() {
            if cols.is_empty() {
                return Err(Error::Groups(format!("group {} is empty", g + 1)));
            }
            if !(*w > 0.0 && w.is_finite()) {
                return Err(Error::Groups(format!("group {} has nonpositive weight {w}", g + 1)));
            }
            let mut seen = BTreeSet::new();
            for &c in cols {
                if c >= p {
                    return Err(Error::Groups(format!(
                        "group {} references column {} outside 1..{p}",
                        g + 1,
                        c + 1
                    )));
                }
                if !seen.insert(c) {
                    return Err(Error::Groups(format!("group {} repeats column {}", g + 1, c + 1)));
                }
            }
        }
        let mut count = vec![0usize; p];
        for cols in &self.groups {
            for &c in cols {
                count[c] += 1;
            }
        }
        if let Some(c) = count.iter().position(|&k| k == 0) {
            return Err(Error::Groups(format!("column {} is not covered by any group", c + 1)));
        }
        if self.variant != Variant::Overlapping {
            if let Some(c) = count.iter().position(|&k| k > 1) {
                return Err(Error::Groups(format!(
                    "column {} appears in more than one group of a {} structure",
                    c + 1,
                    self.variant.name()
                )));
            }
        }
        match self.variant {
            Variant::Sparse if !(self.l1_weight > 0.0 && self.l1_weight.is_finite()) => {
                return Err(Error::Groups("sparse variant requires l1_weight > 0".into()))
            }
            Variant::Disjoint | Variant::Overlapping | Variant::Standardized if self.l1_weight != 0.0 => {
                return Err(Error::Groups("l1_weight is only allowed for the sparse variant".into()))
            }
            _ => {}
        }
        match self.variant {
            Variant::Overlapping if !(self.ridge > 0.0 && self.ridge.is_finite()) => {
                return Err(Error::Groups("overlapping variant requires ridge > 0".into()))
            }
            Variant::Disjoint | Variant::Standardized | Variant::Sparse if self.ridge != 0.0 => {
                return Err(Error::Groups("ridge is only allowed for the overlapping variant".into()))
            }
            _ => {}
        }
        Ok(())
    }

    /// Parses the JSON group specification (one-based column indices).
    pub fn from_json(text: &str, p: usize) -> Result<Self> {
        let file: GroupFile = serde_json::from_str(text)
            .map_err(|e| Error::Parse(format!("group specification: {e}")))?;
        let groups = file
            .groups
            .into_iter()
            .enumerate()
            .map(|(g, cols)| {
                cols.into_iter()
                    .map(|c| {
                        c.checked_sub(1).ok_or_else(|| {
                            Error::Groups(format!("group {} uses index 0; indices are 1-based", g + 1))
                        })
                    })
                    .collect::<Result<Vec<usize>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let ridge = match (file.variant, file.ridge) {
            (Variant::Overlapping, None) => DEFAULT_OVERLAP_RIDGE,
            (_, r) => r.unwrap_or(0.0),
        };
        Self::new(file.variant, groups, file.weights, file.l1_weight.unwrap_or(0.0), ridge, p)
    }

    pub fn to_json(&self) -> String {
        let file = GroupFile {
            variant: self.variant,
            groups: self.groups.iter().map(|g| g.iter().map(|c| c + 1).collect()).collect(),
            weights: self.weights.clone(),
            l1_weight: (self.variant == Variant::Sparse).then_some(self.l1_weight),
            ridge: (self.variant == Variant::Overlapping).then_some(self.ridge),
        };
        serde_json::to_string_pretty(&file).expect("group file serializes")
    }

    /// Same structure with every weight multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.weights.iter_mut().for_each(|w| *w *= factor);
        out
    }

    /// Total augmented dimension `sum |g|`.
    pub fn augmented_dim(&self) -> usize {
        self.groups.iter().map(Vec::len).sum()
    }
}

pub fn parse_groups(spec_path: &Path, p: usize) -> Result<GroupStructure> {
    GroupStructure::from_json(&fs::read_to_string(spec_path)?, p)
}

/// Covariance of the randomization `omega ~ N(0, Omega)`.
#[derive(Debug, Clone, PartialEq)]
pub enum RandomizationCovariance {
    Isotropic(f64),
    Matrix(Mat),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomizationConfig {
    pub covariance: RandomizationCovariance,
    pub seed: u64,
}

impl RandomizationConfig {
    pub fn isotropic(tau2: f64, seed: u64) -> Self {
        Self { covariance: RandomizationCovariance::Isotropic(tau2), seed }
    }

    /// The `dim x dim` covariance matrix, checked for positive definiteness.
    pub fn covariance_matrix(&self, dim: usize) -> Result<Mat> {
        match &self.covariance {
            RandomizationCovariance::Isotropic(t) => {
                if !(*t > 0.0 && t.is_finite()) {
                    return Err(Error::NotPositiveDefinite(format!(
                        "randomization variance tau^2 = {t} must be positive"
                    )));
                }
                Ok(Mat::identity(dim, dim) * *t)
            }
            RandomizationCovariance::Matrix(m) => {
                if m.nrows() != dim || m.ncols() != dim {
                    return Err(Error::Dimension(format!(
                        "randomization covariance is {}x{}, expected {dim}x{dim}",
                        m.nrows(),
                        m.ncols()
                    )));
                }
                if crate::linalg::max_abs_diff(m, &m.transpose()) > 1e-10 * (1.0 + m.amax()) {
                    return Err(Error::NotPositiveDefinite("randomization covariance is not symmetric".into()));
                }
                cholesky(m, "randomization covariance")?;
                Ok(m.clone())
            }
        }
    }
}

/// Draws `omega ~ N(0, Omega)` as `L z` with `L` the lower Cholesky factor and
/// `z` standard normal from a ChaCha stream seeded by `config.seed`.
pub fn draw_randomization(config: &RandomizationConfig, dim: usize) -> Result<Vector> {
    let scale = match &config.covariance {
        RandomizationCovariance::Isotropic(t) => {
            config.covariance_matrix(0)?;
            Some(t.sqrt())
        }
        RandomizationCovariance::Matrix(_) => None,
    };
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let z = Vector::from_iterator(dim, (0..dim).map(|_| StandardNormal.sample(&mut rng)));
    Ok(match scale {
        Some(s) => z * s,
        None => cholesky(&config.covariance_matrix(dim)?, "randomization covariance")?.l() * z,
    })
}

/// Subgradient of the inactive group `group` of the penalty, divided by its
/// weight; lies strictly inside the unit ball.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InactiveBlock {
    pub group: usize,
    pub z: Vec<f64>,
}

/// Frozen outcome of a selection. Indices are zero-based.
///
/// "Solve coordinates" are the coordinates in which the penalized problem was
/// solved: original columns (disjoint, sparse), augmented duplicated columns
/// (overlapping), or orthonormalized group bases (standardized).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub variant: Variant,
    /// Selected original columns, grouped by selected group.
    pub active: Vec<usize>,
    pub selected_groups: Vec<usize>,
    /// Selected coordinates in solve coordinates, grouped by selected group.
    pub solve_active: Vec<usize>,
    /// Number of solve coordinates contributed by each selected group
    /// (`|g|`, or `|T_g|` for the sparse variant).
    pub block_sizes: Vec<usize>,
    pub gamma: Vec<f64>,
    pub u_blocks: Vec<Vec<f64>>,
    pub z_blocks: Vec<InactiveBlock>,
    /// l1 subgradient `s_j` for every solve coordinate (sparse variant only).
    pub l1_subgradient: Option<Vec<f64>>,
    pub beta_hat: Vec<f64>,
    /// Ancillary projection `D^T (y - X_E beta_hat)` in solve coordinates.
    pub n_e: Vec<f64>,
    /// `sigma^2 (X_E^T X_E)^{-1}`, row-major.
    pub sigma_e: Vec<Vec<f64>>,
    pub sigma: f64,
    pub omega: Vec<f64>,
    pub solution: Vec<f64>,
    pub kkt_residual: f64,
}

impl SelectionRecord {
    pub fn n_active(&self) -> usize {
        self.active.len()
    }

    pub fn n_groups(&self) -> usize {
        self.selected_groups.len()
    }

    pub fn beta_hat_vec(&self) -> Vector {
        DVector::from_vec(self.beta_hat.clone())
    }

    pub fn sigma_e_mat(&self) -> Mat {
        rows_to_mat(&self.sigma_e)
    }

    pub fn omega_vec(&self) -> Vector {
        DVector::from_vec(self.omega.clone())
    }

    /// Block-diagonal `U` with one unit column per selected group.
    pub fn u_matrix(&self) -> Mat {
        let blocks: Vec<Mat> = self
            .u_blocks
            .iter()
            .map(|u| DMatrix::from_column_slice(u.len(), 1, u))
            .collect();
        crate::linalg::block_diag(&blocks)
    }

    /// Positions within `active` of the coordinates of each selected group's
    /// original columns.
    pub fn group_positions(&self, groups: &GroupStructure) -> Vec<Vec<usize>> {
        self.selected_groups
            .iter()
            .map(|&g| {
                groups.groups[g]
                    .iter()
                    .filter_map(|c| self.active.iter().position(|a| a == c))
                    .collect()
            })
            .collect()
    }
}

pub(crate) fn rows_to_mat(rows: &[Vec<f64>]) -> Mat {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    Mat::from_fn(r, c, |i, j| rows[i][j])
}

pub(crate) fn mat_to_rows(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}
