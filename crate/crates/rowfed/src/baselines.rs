//! Comparator estimators: per-client and pooled row-sparse fits, the
//! least-squares oracle on a known grouping, and the KKT residual checker for
//! the collapsed penalized problem.

use ndarray::Array2;

use crate::error::{Result, RowFedError};
use crate::model::{ClientDataset, CoefficientStack, GroupStructure};
use crate::penalty::{PenaltySpec, penalty_derivative, penalty_value, prox_row};
use crate::util::{all_finite, frob_diff, row_norm, solve_spd, sym_max_eig};

/// Collapsed design bookkeeping for a known grouping: each (variable, group)
/// owns one column of the collapsed design; each (client, variable) cell
/// belongs to exactly one column.
#[derive(Debug, Clone)]
pub struct OracleDesign {
    /// `col_of[j][m]` = global column of client `m`'s group for variable `j`.
    col_of: Vec<Vec<usize>>,
    /// Variable index of each global column.
    var_of_col: Vec<usize>,
    /// Number of clients in each column's group.
    group_sizes: Vec<usize>,
    /// Columns with nonzero group values (estimated freely).
    k1: Vec<usize>,
    /// Columns constrained to zero.
    k2: Vec<usize>,
    m: usize,
    p: usize,
}

impl OracleDesign {
    /// Builds the design from a grouping. Groups whose stored value has norm
    /// at most `zero_tol` form the known zero set; groups without values are
    /// all treated as nonzero.
    pub fn from_groups(groups: &GroupStructure, zero_tol: f64) -> Result<Self> {
        let m = groups.m();
        let p = groups.p();
        let mut col_of = vec![vec![0usize; m]; p];
        let mut var_of_col = Vec::new();
        let mut group_sizes = Vec::new();
        let mut k1 = Vec::new();
        let mut k2 = Vec::new();
        let mut next = 0usize;
        for j in 0..p {
            let part = groups.variable(j);
            let k = part.group_count();
            for g in 0..k {
                let col = next + g;
                var_of_col.push(j);
                group_sizes.push(part.assignment().iter().filter(|a| **a == g).count());
                let zero = part
                    .values()
                    .map(|vals| row_norm(vals[g].view()) <= zero_tol)
                    .unwrap_or(false);
                if zero {
                    k2.push(col);
                } else {
                    k1.push(col);
                }
            }
            for (client, g) in part.assignment().iter().enumerate() {
                col_of[j][client] = next + g;
            }
            next += k;
        }
        Ok(Self {
            col_of,
            var_of_col,
            group_sizes,
            k1,
            k2,
            m,
            p,
        })
    }

    pub fn total_columns(&self) -> usize {
        self.var_of_col.len()
    }

    pub fn nonzero_columns(&self) -> &[usize] {
        &self.k1
    }

    pub fn zero_columns(&self) -> &[usize] {
        &self.k2
    }
}

/// Options for the proximal-gradient baseline fits.
#[derive(Debug, Clone, Copy)]
pub struct ProxGradOptions {
    pub max_iters: usize,
    /// Gradient-map norm threshold.
    pub tol: f64,
}

impl Default for ProxGradOptions {
    fn default() -> Self {
        Self {
            max_iters: 5000,
            tol: 1e-8,
        }
    }
}

/// Proximal gradient on `scale/2 ||Y - X theta||^2 + sum_j p(||theta_j||)`
/// given the Gram form `gram = scale X^T X`, `cross = scale X^T Y`,
/// `y_sq = scale ||Y||^2`. Returns the fit and the objective trace.
pub(crate) fn prox_grad_rows(
    gram: &Array2<f64>,
    cross: &Array2<f64>,
    y_sq: f64,
    spec: &PenaltySpec,
    opts: &ProxGradOptions,
) -> Result<(Array2<f64>, Vec<f64>)> {
    let p = gram.nrows();
    let q = cross.ncols();
    let mut lip = sym_max_eig(gram.view());
    if !lip.is_finite() {
        return Err(RowFedError::NumericalFailure(
            "design Gram has non-finite spectrum".into(),
        ));
    }
    if lip <= 0.0 {
        lip = 1.0;
    }
    let mut theta = Array2::zeros((p, q));
    let mut history = Vec::new();
    for _ in 0..opts.max_iters {
        let gtheta = gram.dot(&theta);
        let mut objective = 0.5
            * (y_sq - 2.0 * theta.iter().zip(cross.iter()).map(|(a, b)| a * b).sum::<f64>()
                + theta.iter().zip(gtheta.iter()).map(|(a, b)| a * b).sum::<f64>());
        for row in theta.rows() {
            objective += penalty_value(spec, row_norm(row))?;
        }
        history.push(objective);
        let grad = &gtheta - cross;
        let z = &theta - &(&grad / lip);
        let mut theta_new = Array2::zeros((p, q));
        for (j, row) in z.rows().into_iter().enumerate() {
            theta_new.row_mut(j).assign(&prox_row(spec, row, lip)?);
        }
        let gap = lip * frob_diff(&theta_new, &theta);
        theta = theta_new;
        if !all_finite(&theta) {
            return Err(RowFedError::NumericalFailure(
                "proximal gradient diverged".into(),
            ));
        }
        if gap <= opts.tol {
            break;
        }
    }
    Ok((theta, history))
}

/// Fits each client independently with the row-sparse penalty on its local
/// least squares objective.
pub fn nonfed_fit(
    data: &[ClientDataset],
    spec: &PenaltySpec,
    opts: &ProxGradOptions,
) -> Result<CoefficientStack> {
    if data.is_empty() {
        return Err(RowFedError::InvalidArgument("empty dataset".into()));
    }
    let blocks: Vec<Array2<f64>> = data
        .iter()
        .map(|d| {
            let gram = d.x().t().dot(&d.x());
            let cross = d.x().t().dot(&d.y());
            let y_sq = d.y().iter().map(|v| v * v).sum::<f64>();
            prox_grad_rows(&gram, &cross, y_sq, spec, opts).map(|(t, _)| t)
        })
        .collect::<Result<_>>()?;
    CoefficientStack::from_blocks(&blocks)
}

/// Fits one shared coefficient matrix on the pooled stack, ignoring
/// client heterogeneity.
pub fn fedavg_fit(
    data: &[ClientDataset],
    spec: &PenaltySpec,
    opts: &ProxGradOptions,
) -> Result<Array2<f64>> {
    if data.is_empty() {
        return Err(RowFedError::InvalidArgument("empty dataset".into()));
    }
    let m = data.len() as f64;
    let p = data[0].p();
    let q = data[0].q();
    let mut gram = Array2::zeros((p, p));
    let mut cross = Array2::zeros((p, q));
    let mut y_sq = 0.0;
    for d in data {
        if d.p() != p || d.q() != q {
            return Err(RowFedError::DimensionMismatch(
                "clients disagree on dimensions".into(),
            ));
        }
        gram += &d.x().t().dot(&d.x());
        cross += &d.x().t().dot(&d.y());
        y_sq += d.y().iter().map(|v| v * v).sum::<f64>();
    }
    gram /= m;
    cross /= m;
    y_sq /= m;
    let (theta, _) = prox_grad_rows(&gram, &cross, y_sq, spec, opts)?;
    Ok(theta)
}

/// Replicates a shared fit across clients for metric computation.
pub fn replicate_shared(theta: &Array2<f64>, m: usize) -> Result<CoefficientStack> {
    let blocks: Vec<Array2<f64>> = (0..m).map(|_| theta.clone()).collect();
    CoefficientStack::from_blocks(&blocks)
}

fn tune_by_gic<F>(
    data: &[ClientDataset],
    lambda_grid: &[f64],
    cluster_tol: f64,
    mut fit: F,
) -> Result<(f64, CoefficientStack)>
where
    F: FnMut(f64) -> Result<CoefficientStack>,
{
    if lambda_grid.is_empty() {
        return Err(RowFedError::InvalidArgument("empty lambda grid".into()));
    }
    let mut best: Option<(f64, f64, CoefficientStack)> = None;
    for &lam in lambda_grid {
        let theta = fit(lam)?;
        let clusters = crate::evaluation::extract_clusters(&theta, cluster_tol);
        let k: Vec<usize> = (0..clusters.p())
            .map(|j| clusters.variable(j).group_count())
            .collect();
        let g = crate::evaluation::gic(&theta, data, &k)?;
        let wins = match &best {
            None => true,
            Some((bg, bl, _)) => g < *bg || (g == *bg && lam > *bl),
        };
        if wins {
            best = Some((g, lam, theta));
        }
    }
    let (_, lam, theta) = best.expect("grid is nonempty");
    Ok((lam, theta))
}

/// GIC-tuned per-client fit over a `lambda1` grid; ties go to the larger
/// lambda.
pub fn tune_nonfed(
    data: &[ClientDataset],
    lambda_grid: &[f64],
    family: crate::penalty::PenaltyFamily,
    gamma: f64,
    opts: &ProxGradOptions,
    cluster_tol: f64,
) -> Result<(f64, CoefficientStack)> {
    tune_by_gic(data, lambda_grid, cluster_tol, |lam| {
        nonfed_fit(data, &PenaltySpec::new(family, lam, gamma)?, opts)
    })
}

/// GIC-tuned pooled fit over a `lambda1` grid, replicated across clients.
pub fn tune_fedavg(
    data: &[ClientDataset],
    lambda_grid: &[f64],
    family: crate::penalty::PenaltyFamily,
    gamma: f64,
    opts: &ProxGradOptions,
    cluster_tol: f64,
) -> Result<(f64, CoefficientStack)> {
    tune_by_gic(data, lambda_grid, cluster_tol, |lam| {
        let shared = fedavg_fit(data, &PenaltySpec::new(family, lam, gamma)?, opts)?;
        replicate_shared(&shared, data.len())
    })
}

fn collapsed_normal_parts(
    data: &[ClientDataset],
    design: &OracleDesign,
    cols: &[usize],
) -> Result<(Array2<f64>, Array2<f64>)> {
    let q = data[0].q();
    let s = cols.len();
    let pos: std::collections::HashMap<usize, usize> =
        cols.iter().enumerate().map(|(i, c)| (*c, i)).collect();
    let mut gram = Array2::zeros((s, s));
    let mut cross = Array2::zeros((s, q));
    for (m, d) in data.iter().enumerate() {
        let gm = d.x().t().dot(&d.x());
        let cm = d.x().t().dot(&d.y());
        for j in 0..design.p {
            let Some(&cj) = pos.get(&design.col_of[j][m]) else {
                continue;
            };
            for (v, value) in cm.row(j).iter().enumerate() {
                cross[[cj, v]] += value;
            }
            for j2 in 0..design.p {
                if let Some(&cj2) = pos.get(&design.col_of[j2][m]) {
                    gram[[cj, cj2]] += gm[[j, j2]];
                }
            }
        }
    }
    Ok((gram, cross))
}

/// Least squares with the grouping and zero set known: solves the collapsed
/// normal equations over the nonzero columns and expands back to the stack.
pub fn oracle_fit(data: &[ClientDataset], design: &OracleDesign) -> Result<CoefficientStack> {
    if data.len() != design.m {
        return Err(RowFedError::DimensionMismatch(format!(
            "{} clients for a design over {}",
            data.len(),
            design.m
        )));
    }
    let p = data[0].p();
    let q = data[0].q();
    if p != design.p {
        return Err(RowFedError::DimensionMismatch(
            "design and data disagree on covariate count".into(),
        ));
    }
    let mut theta = CoefficientStack::zeros(design.m, p, q);
    if design.k1.is_empty() {
        return Ok(theta);
    }
    let (gram, cross) = collapsed_normal_parts(data, design, &design.k1)?;
    let xi = solve_spd(gram.view(), cross.view()).map_err(|_| {
        RowFedError::RankDeficient("collapsed Gram matrix is singular".into())
    })?;
    if !all_finite(&xi) {
        return Err(RowFedError::RankDeficient(
            "collapsed normal equations produced non-finite values".into(),
        ));
    }
    let pos: std::collections::HashMap<usize, usize> = design
        .k1
        .iter()
        .enumerate()
        .map(|(i, c)| (*c, i))
        .collect();
    for m in 0..design.m {
        let mut block = theta.block_mut(m);
        for j in 0..p {
            if let Some(&row) = pos.get(&design.col_of[j][m]) {
                block.row_mut(j).assign(&xi.row(row));
            }
        }
    }
    Ok(theta)
}

/// KKT residuals of the collapsed penalized least squares at a fit.
#[derive(Debug, Clone)]
pub struct KktReport {
    /// Frobenius norm of the stationarity residual over the nonzero columns.
    pub stationarity_norm: f64,
    /// Minimum slack of the zero-block condition; infinite when the zero set
    /// is empty.
    pub zero_block_margin: f64,
    /// `||X1^T Y||_F`, the natural scale for the stationarity residual.
    pub design_response_norm: f64,
}

/// Evaluates the first-order conditions at `est` collapsed through the given
/// grouping: (a) the stationarity residual
/// `M^{-1} X1^T (Y - X1 Xi) - T1(Xi) Xi` over nonzero columns and (b) the
/// margin `|G_i| p'(0+) - M^{-1} ||X2_i^T (Y - X1 Xi)||` over zero columns.
pub fn kkt_residuals(
    est: &CoefficientStack,
    data: &[ClientDataset],
    design: &OracleDesign,
    spec: &PenaltySpec,
) -> Result<KktReport> {
    if data.len() != design.m || est.m() != design.m || est.p() != design.p {
        return Err(RowFedError::DimensionMismatch(
            "estimate, data, and design disagree on shape".into(),
        ));
    }
    let m_count = data.len() as f64;
    let q = est.q();
    // collapse: group value = mean of member rows over nonzero columns
    let total = design.total_columns();
    let mut xi = Array2::zeros((total, q));
    for j in 0..design.p {
        for m in 0..design.m {
            let col = design.col_of[j][m];
            let block = est.block(m);
            for (v, value) in block.row(j).iter().enumerate() {
                xi[[col, v]] += value / design.group_sizes[col] as f64;
            }
        }
    }
    for &c in &design.k2 {
        for v in 0..q {
            xi[[c, v]] = 0.0;
        }
    }

    // per-client residuals at the expanded collapsed estimate
    let mut grad_cols: Array2<f64> = Array2::zeros((total, q)); // sum_m X_m[:, j]^T R_m per column
    let mut xty: Array2<f64> = Array2::zeros((total, q));
    for (m, d) in data.iter().enumerate() {
        let mut expanded = Array2::zeros((design.p, q));
        for j in 0..design.p {
            expanded.row_mut(j).assign(&xi.row(design.col_of[j][m]));
        }
        let resid = &d.y() - &d.x().dot(&expanded);
        let xtr = d.x().t().dot(&resid);
        let xty_m = d.x().t().dot(&d.y());
        for j in 0..design.p {
            let col = design.col_of[j][m];
            for v in 0..q {
                grad_cols[[col, v]] += xtr[[j, v]];
                xty[[col, v]] += xty_m[[j, v]];
            }
        }
    }

    let mut stationarity = 0.0f64;
    let mut design_response = 0.0f64;
    for &c in &design.k1 {
        let norm = row_norm(xi.row(c));
        let shrink = if norm > 0.0 {
            design.group_sizes[c] as f64 * penalty_derivative(spec, norm)? / norm
        } else {
            0.0
        };
        for v in 0..q {
            let r = grad_cols[[c, v]] / m_count - shrink * xi[[c, v]];
            stationarity += r * r;
        }
        design_response += xty.row(c).iter().map(|v| v * v).sum::<f64>();
    }
    let mut margin = f64::INFINITY;
    for &c in &design.k2 {
        let lhs = row_norm(grad_cols.row(c)) / m_count;
        let rhs = design.group_sizes[c] as f64 * spec.lambda;
        margin = margin.min(rhs - lhs);
    }
    Ok(KktReport {
        stationarity_norm: stationarity.sqrt(),
        zero_block_margin: margin,
        design_response_norm: design_response.sqrt(),
    })
}
