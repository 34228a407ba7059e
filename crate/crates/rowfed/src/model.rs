//! Core data types for the federated multivariate linear model and the shared
//! loss/gradient computations.
//!
//! Client matrices are stored with rows pre-scaled by `1/sqrt(n_m)`, so the
//! squared Frobenius residual of the stored pair equals the per-sample average
//! of the raw data. All downstream math works on the scaled matrices.

use ndarray::{Array1, Array2, ArrayView2, ArrayViewMut2, s};

use crate::error::{Result, RowFedError};
use crate::penalty::{PenaltyFamily, PenaltyPair, PenaltySpec};
use crate::util::all_finite;

/// One client's design and response pair.
#[derive(Debug, Clone)]
pub struct ClientDataset {
    client_id: usize,
    x: Array2<f64>,
    y: Array2<f64>,
    n_raw: usize,
}

impl ClientDataset {
    /// Builds a dataset from raw rows, applying the `1/sqrt(n_m)` scaling.
    pub fn from_raw(client_id: usize, x_raw: Array2<f64>, y_raw: Array2<f64>) -> Result<Self> {
        let n = x_raw.nrows();
        if n == 0 {
            return Err(RowFedError::Data(format!(
                "client {client_id} has no samples"
            )));
        }
        if y_raw.nrows() != n {
            return Err(RowFedError::DimensionMismatch(format!(
                "client {client_id}: X has {n} rows but Y has {}",
                y_raw.nrows()
            )));
        }
        if !all_finite(&x_raw) || !all_finite(&y_raw) {
            return Err(RowFedError::Data(format!(
                "client {client_id}: non-finite entries in raw data"
            )));
        }
        let scale = 1.0 / (n as f64).sqrt();
        Ok(Self {
            client_id,
            x: x_raw * scale,
            y: y_raw * scale,
            n_raw: n,
        })
    }

    /// Wraps matrices that already carry the `1/sqrt(n_m)` scaling.
    pub fn from_scaled(
        client_id: usize,
        x: Array2<f64>,
        y: Array2<f64>,
        n_raw: usize,
    ) -> Result<Self> {
        if x.nrows() != y.nrows() {
            return Err(RowFedError::DimensionMismatch(format!(
                "client {client_id}: X has {} rows but Y has {}",
                x.nrows(),
                y.nrows()
            )));
        }
        if n_raw == 0 {
            return Err(RowFedError::Data(format!(
                "client {client_id}: raw sample count must be positive"
            )));
        }
        if !all_finite(&x) || !all_finite(&y) {
            return Err(RowFedError::Data(format!(
                "client {client_id}: non-finite entries"
            )));
        }
        Ok(Self { client_id, x, y, n_raw })
    }

    pub fn client_id(&self) -> usize {
        self.client_id
    }

    /// Scaled design matrix.
    pub fn x(&self) -> ArrayView2<'_, f64> {
        self.x.view()
    }

    /// Scaled response matrix.
    pub fn y(&self) -> ArrayView2<'_, f64> {
        self.y.view()
    }

    /// Raw sample count `n_m`.
    pub fn n_raw(&self) -> usize {
        self.n_raw
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn q(&self) -> usize {
        self.y.ncols()
    }
}

/// The stacked parameter matrix with per-client block views. Block `m`
/// occupies rows `m*p .. (m+1)*p` of the `Mp x q` stack.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientStack {
    theta: Array2<f64>,
    m: usize,
    p: usize,
    q: usize,
}

impl CoefficientStack {
    pub fn zeros(m: usize, p: usize, q: usize) -> Self {
        Self {
            theta: Array2::zeros((m * p, q)),
            m,
            p,
            q,
        }
    }

    pub fn from_matrix(theta: Array2<f64>, m: usize) -> Result<Self> {
        if m == 0 || theta.nrows() % m != 0 {
            return Err(RowFedError::DimensionMismatch(format!(
                "stack with {} rows cannot be split into {m} client blocks",
                theta.nrows()
            )));
        }
        let p = theta.nrows() / m;
        let q = theta.ncols();
        Ok(Self { theta, m, p, q })
    }

    pub fn from_blocks(blocks: &[Array2<f64>]) -> Result<Self> {
        if blocks.is_empty() {
            return Err(RowFedError::DimensionMismatch("no blocks given".into()));
        }
        let p = blocks[0].nrows();
        let q = blocks[0].ncols();
        let mut out = Self::zeros(blocks.len(), p, q);
        for (m, b) in blocks.iter().enumerate() {
            if b.nrows() != p || b.ncols() != q {
                return Err(RowFedError::DimensionMismatch(format!(
                    "block {m} has shape {:?}, expected ({p}, {q})",
                    b.dim()
                )));
            }
            out.block_mut(m).assign(b);
        }
        Ok(out)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.theta
    }

    pub fn into_matrix(self) -> Array2<f64> {
        self.theta
    }

    /// Client `m`'s coefficient block.
    pub fn block(&self, m: usize) -> ArrayView2<'_, f64> {
        self.theta.slice(s![m * self.p..(m + 1) * self.p, ..])
    }

    pub fn block_mut(&mut self, m: usize) -> ArrayViewMut2<'_, f64> {
        self.theta.slice_mut(s![m * self.p..(m + 1) * self.p, ..])
    }

    pub fn to_blocks(&self) -> Vec<Array2<f64>> {
        (0..self.m).map(|m| self.block(m).to_owned()).collect()
    }

    pub fn is_finite(&self) -> bool {
        all_finite(&self.theta)
    }
}

/// Partition of the clients for a single covariate, stored as a group-id
/// assignment vector so disjointness and coverage hold by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct VariablePartition {
    assignment: Vec<usize>,
    values: Option<Vec<Array1<f64>>>,
}

impl VariablePartition {
    pub fn new(assignment: Vec<usize>) -> Result<Self> {
        Self::build(assignment, None)
    }

    pub fn with_values(assignment: Vec<usize>, values: Vec<Array1<f64>>) -> Result<Self> {
        Self::build(assignment, Some(values))
    }

    fn build(assignment: Vec<usize>, values: Option<Vec<Array1<f64>>>) -> Result<Self> {
        if assignment.is_empty() {
            return Err(RowFedError::InvalidArgument(
                "partition needs at least one client".into(),
            ));
        }
        let k = assignment.iter().max().unwrap() + 1;
        let mut seen = vec![false; k];
        for &g in &assignment {
            seen[g] = true;
        }
        if !seen.iter().all(|s| *s) {
            return Err(RowFedError::InvalidArgument(
                "group ids must be contiguous starting from 0".into(),
            ));
        }
        if let Some(vals) = &values {
            if vals.len() != k {
                return Err(RowFedError::DimensionMismatch(format!(
                    "{} group values for {k} groups",
                    vals.len()
                )));
            }
            for a in 0..k {
                for b in (a + 1)..k {
                    if vals[a] == vals[b] {
                        return Err(RowFedError::InvalidArgument(
                            "distinct groups must carry distinct values".into(),
                        ));
                    }
                }
            }
        }
        Ok(Self { assignment, values })
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn group_count(&self) -> usize {
        self.assignment.iter().max().unwrap() + 1
    }

    pub fn values(&self) -> Option<&[Array1<f64>]> {
        self.values.as_deref()
    }
}

/// Per-variable partition of clients into coefficient groups.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupStructure {
    per_variable: Vec<VariablePartition>,
    m: usize,
}

impl GroupStructure {
    pub fn new(per_variable: Vec<VariablePartition>) -> Result<Self> {
        if per_variable.is_empty() {
            return Err(RowFedError::InvalidArgument(
                "group structure needs at least one variable".into(),
            ));
        }
        let m = per_variable[0].assignment.len();
        for part in &per_variable {
            if part.assignment.len() != m {
                return Err(RowFedError::DimensionMismatch(
                    "partitions disagree on client count".into(),
                ));
            }
        }
        Ok(Self { per_variable, m })
    }

    pub fn p(&self) -> usize {
        self.per_variable.len()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn variable(&self, j: usize) -> &VariablePartition {
        &self.per_variable[j]
    }

    pub fn iter(&self) -> impl Iterator<Item = &VariablePartition> {
        self.per_variable.iter()
    }

    /// Total number of distinct groups over all variables.
    pub fn total_groups(&self) -> usize {
        self.per_variable.iter().map(|v| v.group_count()).sum()
    }
}

/// Client-selection scheme for partial participation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplingMode {
    /// Independent Bernoulli(r_p) per client per round.
    Bernoulli,
    /// Uniformly random subset of fixed size `round(r_p * M)`.
    FixedSize,
}

/// All algorithmic hyperparameters of a solver run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub penalty: PenaltyFamily,
    pub lambda1: f64,
    pub lambda2: f64,
    pub gamma: f64,
    pub rho0: f64,
    pub alpha: f64,
    pub tau: f64,
    pub rounds: usize,
    pub participation: f64,
    pub seed: u64,
    pub sampling: SamplingMode,
    pub early_stop: bool,
    pub primal_tol: f64,
    pub step_tol: f64,
    pub ridge_scale: f64,
    /// Cluster-extraction tolerance; `None` uses the scale-aware default
    /// `1e-4 * sqrt(q)`.
    pub cluster_tol: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            penalty: PenaltyFamily::Mcp,
            lambda1: 0.1,
            lambda2: 0.5,
            gamma: 3.0,
            rho0: 1.0,
            alpha: 1.02,
            tau: 1.0,
            rounds: 2000,
            participation: 1.0,
            seed: 0,
            sampling: SamplingMode::Bernoulli,
            early_stop: true,
            primal_tol: 1e-6,
            step_tol: 1e-8,
            ridge_scale: 1e-6,
            cluster_tol: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        // constructing the pair checks lambda and gamma bounds
        self.penalty_pair()?;
        if !self.rho0.is_finite() || self.rho0 <= 0.0 {
            return Err(RowFedError::InvalidConfig(format!(
                "rho0 must be positive, got {}",
                self.rho0
            )));
        }
        if !self.alpha.is_finite() || self.alpha < 1.0 {
            return Err(RowFedError::InvalidConfig(format!(
                "alpha must be >= 1 (1 disables the schedule), got {}",
                self.alpha
            )));
        }
        if !self.tau.is_finite() || self.tau <= 0.0 {
            return Err(RowFedError::InvalidConfig(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        if !(self.participation > 0.0 && self.participation <= 1.0) {
            return Err(RowFedError::InvalidConfig(format!(
                "participation rate must lie in (0, 1], got {}",
                self.participation
            )));
        }
        if self.ridge_scale < 0.0 || !self.ridge_scale.is_finite() {
            return Err(RowFedError::InvalidConfig(
                "ridge_scale must be nonnegative".into(),
            ));
        }
        if let Some(tol) = self.cluster_tol {
            if tol < 0.0 || !tol.is_finite() {
                return Err(RowFedError::InvalidConfig(
                    "cluster_tol must be nonnegative".into(),
                ));
            }
        }
        Ok(())
    }

    /// Penalty specs for the fusion (`lambda2`) and identity (`lambda1`) rows.
    pub fn penalty_pair(&self) -> Result<PenaltyPair> {
        Ok(PenaltyPair {
            fusion: PenaltySpec::new(self.penalty, self.lambda2, self.gamma)?,
            sparsity: PenaltySpec::new(self.penalty, self.lambda1, self.gamma)?,
        })
    }

    pub fn cluster_tolerance(&self, q: usize) -> f64 {
        self.cluster_tol
            .unwrap_or_else(|| 1e-4 * (q as f64).sqrt())
    }
}

fn check_block_dims(theta: &CoefficientStack, d: &ClientDataset) -> Result<()> {
    if d.p() != theta.p() || d.q() != theta.q() {
        return Err(RowFedError::DimensionMismatch(format!(
            "client {}: data is ({}, {}) but coefficients are ({}, {})",
            d.client_id(),
            d.p(),
            d.q(),
            theta.p(),
            theta.q()
        )));
    }
    Ok(())
}

/// Full objective loss `f(theta) = (1/2M) sum_m ||Y_m - X_m theta_m||_F^2`
/// over the stored (scaled) matrices.
pub fn loss<'a, I>(theta: &CoefficientStack, data: I) -> Result<f64>
where
    I: IntoIterator<Item = &'a ClientDataset>,
{
    let mut total = 0.0;
    let mut count = 0usize;
    for (m, d) in data.into_iter().enumerate() {
        check_block_dims(theta, d)?;
        let resid = &d.y() - &d.x().dot(&theta.block(m));
        total += resid.iter().map(|v| v * v).sum::<f64>();
        count += 1;
    }
    if count != theta.m() {
        return Err(RowFedError::DimensionMismatch(format!(
            "{} clients for a stack of {} blocks",
            count,
            theta.m()
        )));
    }
    Ok(total / (2.0 * count as f64))
}

/// Gradient of `f` with respect to client `m`'s block:
/// `-(1/M) X_m^T (Y_m - X_m theta_m)`.
pub fn grad_local(
    theta_m: ArrayView2<f64>,
    d: &ClientDataset,
    m_total: usize,
) -> Result<Array2<f64>> {
    if d.p() != theta_m.nrows() || d.q() != theta_m.ncols() {
        return Err(RowFedError::DimensionMismatch(format!(
            "client {}: data is ({}, {}) but block is {:?}",
            d.client_id(),
            d.p(),
            d.q(),
            theta_m.dim()
        )));
    }
    if m_total == 0 {
        return Err(RowFedError::InvalidArgument("m_total must be positive".into()));
    }
    let resid = &d.y() - &d.x().dot(&theta_m);
    Ok(d.x().t().dot(&resid) * (-1.0 / m_total as f64))
}

/// Stacks the per-client gradients into a full-gradient stack.
pub fn grad_full(theta: &CoefficientStack, data: &[ClientDataset]) -> Result<CoefficientStack> {
    if data.len() != theta.m() {
        return Err(RowFedError::DimensionMismatch(format!(
            "{} clients for a stack of {} blocks",
            data.len(),
            theta.m()
        )));
    }
    let mut out = CoefficientStack::zeros(theta.m(), theta.p(), theta.q());
    for (m, d) in data.iter().enumerate() {
        let g = grad_local(theta.block(m), d, data.len())?;
        out.block_mut(m).assign(&g);
    }
    Ok(out)
}

/// Lipschitz constant bound for the full-loss gradient, computed from the
/// scaled rows as `(1/M) max_m ||X_m||_F^2`. This is the tight form of the
/// bound and the one the solver uses for its step-size rule.
pub fn lipschitz_bound<'a, I>(data: I) -> Result<f64>
where
    I: IntoIterator<Item = &'a ClientDataset>,
{
    let mut count = 0usize;
    let mut max_frob2 = 0.0f64;
    for d in data {
        let frob2 = d.x().iter().map(|v| v * v).sum::<f64>();
        max_frob2 = max_frob2.max(frob2);
        count += 1;
    }
    if count == 0 {
        return Err(RowFedError::InvalidArgument("empty dataset".into()));
    }
    Ok(max_frob2 / count as f64)
}

/// The looser row-maximum form `max_{m,i} ||x_mi||^2` over raw rows,
/// recovered from the stored scaling as `n_m * max_i ||scaled row i||^2`.
pub fn lipschitz_bound_row_max<'a, I>(data: I) -> Result<f64>
where
    I: IntoIterator<Item = &'a ClientDataset>,
{
    let mut count = 0usize;
    let mut bound = 0.0f64;
    for d in data {
        let max_row = d
            .x()
            .rows()
            .into_iter()
            .map(|r| r.iter().map(|v| v * v).sum::<f64>())
            .fold(0.0f64, f64::max);
        bound = bound.max(d.n_raw() as f64 * max_row);
        count += 1;
    }
    if count == 0 {
        return Err(RowFedError::InvalidArgument("empty dataset".into()));
    }
    Ok(bound)
}
