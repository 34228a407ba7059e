//! Synthetic heterogeneous-scenario generation and delimited-table ingestion.
//!
//! Synthetic designs draw i.i.d. rows from an AR(1) Gaussian; each covariate's
//! coefficient row is shared within one of two latent clusters, one cluster
//! signed-uniform on the leading coordinates and the other Rademacher on the
//! trailing coordinates, so rows cluster exactly across clients.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Result, RowFedError};
use crate::model::{ClientDataset, CoefficientStack, GroupStructure, VariablePartition};
use crate::util::{from_na, to_na};

/// AR(1) correlation of the error rows; the main design fixes it at 0.5.
const ERROR_AR_CORR: f64 = 0.5;

/// Synthetic scenario parameters. `sigma_x` is the AR(1) parameter of the
/// design covariance; `sigma_e` scales the error rows (0 gives noiseless
/// responses), whose AR(1) correlation is fixed at 0.5. The signal length is
/// `s = round(0.2 q)`, at least 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioSpec {
    pub m: usize,
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub seed: u64,
    pub sigma_x: f64,
    pub sigma_e: f64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            m: 10,
            n: 100,
            p: 50,
            q: 20,
            seed: 0,
            sigma_x: 0.5,
            sigma_e: 0.5,
        }
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n == 0 || self.p == 0 || self.q == 0 {
            return Err(RowFedError::InvalidConfig(
                "scenario dimensions must be positive".into(),
            ));
        }
        if !(self.sigma_x.abs() < 1.0) {
            return Err(RowFedError::InvalidConfig(format!(
                "design AR parameter must satisfy |rho| < 1, got {}",
                self.sigma_x
            )));
        }
        if !self.sigma_e.is_finite() || self.sigma_e < 0.0 {
            return Err(RowFedError::InvalidConfig(format!(
                "error scale must be nonnegative, got {}",
                self.sigma_e
            )));
        }
        Ok(())
    }

    /// Per-row signal length `s = round(0.2 q)`, at least 1.
    pub fn signal_len(&self) -> usize {
        ((0.2 * self.q as f64).round() as usize).max(1)
    }
}

/// Ground truth of a generated scenario.
#[derive(Debug, Clone)]
pub struct TrueModel {
    pub theta_star: CoefficientStack,
    pub groups: GroupStructure,
    /// Leading-support cluster value per variable.
    pub v_star: Vec<Array1<f64>>,
    /// Trailing-support cluster value per variable.
    pub u_star: Vec<Array1<f64>>,
}

impl TrueModel {
    /// Minimum inter-group row gap over variables with more than one group.
    pub fn min_group_gap(&self) -> f64 {
        let mut gap = f64::INFINITY;
        for j in 0..self.groups.p() {
            if self.groups.variable(j).group_count() > 1 {
                let d = &self.v_star[j] - &self.u_star[j];
                gap = gap.min(d.iter().map(|v| v * v).sum::<f64>().sqrt());
            }
        }
        gap
    }
}

/// AR(1) covariance with entry `rho^{|i-j|}`.
pub fn ar1_covariance(dim: usize, rho: f64) -> Result<Array2<f64>> {
    if dim == 0 {
        return Err(RowFedError::InvalidArgument("dimension must be positive".into()));
    }
    if !(rho.abs() < 1.0) {
        return Err(RowFedError::InvalidArgument(format!(
            "AR(1) parameter must satisfy |rho| < 1, got {rho}"
        )));
    }
    Ok(Array2::from_shape_fn((dim, dim), |(i, j)| {
        rho.powi((i as i32 - j as i32).abs())
    }))
}

fn cholesky_factor(cov: &Array2<f64>) -> Result<Array2<f64>> {
    let chol = nalgebra::Cholesky::new(to_na(cov.view())).ok_or_else(|| {
        RowFedError::NumericalFailure("covariance is not positive definite".into())
    })?;
    Ok(from_na(&chol.l()))
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    let draws: Vec<f64> = (0..rows * cols)
        .map(|_| StandardNormal.sample(rng))
        .collect();
    Array2::from_shape_vec((rows, cols), draws).expect("shape matches draw count")
}

/// Generates the heterogeneous two-cluster scenario: per variable `j`, each
/// client's row equals `v*_j` or `u*_j` with equal probability. Returns the
/// pre-scaled datasets and the generating truth. Same spec, same output.
pub fn gen_scenario(spec: &ScenarioSpec) -> Result<(Vec<ClientDataset>, TrueModel)> {
    spec.validate()?;
    let s = spec.signal_len();
    let lx = cholesky_factor(&ar1_covariance(spec.p, spec.sigma_x)?)?;
    let le = cholesky_factor(&ar1_covariance(spec.q, ERROR_AR_CORR)?)?;

    // structure stream: cluster values and assignments, per variable
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(0);
    let mut v_star = Vec::with_capacity(spec.p);
    let mut u_star = Vec::with_capacity(spec.p);
    let mut sides: Vec<Vec<bool>> = Vec::with_capacity(spec.p); // true = u cluster
    for _ in 0..spec.p {
        let mut v = Array1::zeros(spec.q);
        for i in 0..s {
            let mag = rng.random_range(0.5..1.0);
            v[i] = if rng.random::<bool>() { -mag } else { mag };
        }
        let mut u = Array1::zeros(spec.q);
        for i in (spec.q - s)..spec.q {
            u[i] = if rng.random::<bool>() { -1.0 } else { 1.0 };
        }
        let assign: Vec<bool> = (0..spec.m).map(|_| rng.random::<bool>()).collect();
        v_star.push(v);
        u_star.push(u);
        sides.push(assign);
    }

    let mut theta_star = CoefficientStack::zeros(spec.m, spec.p, spec.q);
    for m in 0..spec.m {
        let mut block = theta_star.block_mut(m);
        for j in 0..spec.p {
            let row = if sides[j][m] { &u_star[j] } else { &v_star[j] };
            block.row_mut(j).assign(row);
        }
    }

    let mut partitions = Vec::with_capacity(spec.p);
    for j in 0..spec.p {
        let any_u = sides[j].iter().any(|s| *s);
        let any_v = sides[j].iter().any(|s| !*s);
        let (assignment, values) = if any_u && any_v {
            (
                sides[j].iter().map(|s| usize::from(*s)).collect(),
                vec![v_star[j].clone(), u_star[j].clone()],
            )
        } else if any_u {
            (vec![0; spec.m], vec![u_star[j].clone()])
        } else {
            (vec![0; spec.m], vec![v_star[j].clone()])
        };
        partitions.push(VariablePartition::with_values(assignment, values)?);
    }
    let groups = GroupStructure::new(partitions)?;

    // per-client streams, parallel-safe by construction
    let mut data = Vec::with_capacity(spec.m);
    for m in 0..spec.m {
        let mut rng_m = ChaCha8Rng::seed_from_u64(spec.seed);
        rng_m.set_stream(1 + m as u64);
        let x_raw = gaussian_matrix(&mut rng_m, spec.n, spec.p).dot(&lx.t());
        let noise = gaussian_matrix(&mut rng_m, spec.n, spec.q).dot(&le.t()) * spec.sigma_e;
        let y_raw = x_raw.dot(&theta_star.block(m)) + &noise;
        data.push(ClientDataset::from_raw(m, x_raw, y_raw)?);
    }

    Ok((
        data,
        TrueModel {
            theta_star,
            groups,
            v_star,
            u_star,
        },
    ))
}

/// Derives a child seed from a master seed (splitmix64 step).
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master
        .wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Ingestion options for delimited tables.
#[derive(Debug, Clone)]
pub struct IngestOptions {
    pub delimiter: u8,
    pub knn_k: usize,
    /// Clients with fewer rows than this are dropped.
    pub min_rows: usize,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            delimiter: b',',
            knn_k: 5,
            min_rows: 3,
        }
    }
}

/// One ingested client before the final `1/sqrt(n)` scaling.
#[derive(Debug, Clone)]
pub struct IngestedClient {
    pub key: String,
    pub x: Array2<f64>,
    pub y: Array2<f64>,
}

/// Result of table ingestion: per-client `[0,1]`-scaled, imputed matrices.
#[derive(Debug, Clone)]
pub struct IngestResult {
    pub clients: Vec<IngestedClient>,
    pub predictor_names: Vec<String>,
    pub response_names: Vec<String>,
    pub dropped_rows: usize,
    pub dropped_clients: usize,
}

impl IngestResult {
    /// Final datasets with the `1/sqrt(n_m)` scaling applied.
    pub fn to_datasets(&self) -> Result<Vec<ClientDataset>> {
        self.clients
            .iter()
            .enumerate()
            .map(|(id, c)| ClientDataset::from_raw(id, c.x.clone(), c.y.clone()))
            .collect()
    }

    /// The pooled normalized table (clients stacked in order), for dumps.
    pub fn normalized_table(&self) -> (Vec<String>, Array2<f64>) {
        let mut header = vec!["client".to_string()];
        header.extend(self.predictor_names.iter().cloned());
        header.extend(self.response_names.iter().cloned());
        let total: usize = self.clients.iter().map(|c| c.x.nrows()).sum();
        let cols = 1 + self.predictor_names.len() + self.response_names.len();
        let mut out = Array2::zeros((total, cols));
        let mut r = 0;
        for (id, c) in self.clients.iter().enumerate() {
            for i in 0..c.x.nrows() {
                out[[r, 0]] = id as f64;
                for (k, v) in c.x.row(i).iter().enumerate() {
                    out[[r, 1 + k]] = *v;
                }
                for (k, v) in c.y.row(i).iter().enumerate() {
                    out[[r, 1 + self.predictor_names.len() + k]] = *v;
                }
                r += 1;
            }
        }
        (header, out)
    }
}

fn is_missing(token: &str) -> bool {
    let t = token.trim();
    t.is_empty() || t == "?"
}

/// Reads a delimited table with a header row, min-max scales every numeric
/// column to `[0,1]` over the pooled table, imputes missing cells by k-NN
/// (Euclidean distance over the coordinates observed in both rows, mean of
/// the `k` nearest rows where the cell is observed), splits rows by the
/// client key, and drops clients with fewer than `min_rows` rows.
pub fn ingest_table_raw(
    path: &Path,
    client_key_column: &str,
    response_columns: &[String],
    opts: &IngestOptions,
) -> Result<IngestResult> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(opts.delimiter)
        .flexible(false)
        .from_path(path)
        .map_err(|e| RowFedError::Data(format!("cannot read {}: {e}", path.display())))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| RowFedError::Data(format!("bad header: {e}")))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let key_idx = headers
        .iter()
        .position(|h| h == client_key_column)
        .ok_or_else(|| {
            RowFedError::Data(format!("client key column '{client_key_column}' not found"))
        })?;
    for r in response_columns {
        if !headers.iter().any(|h| h == r) {
            return Err(RowFedError::Data(format!("response column '{r}' not found")));
        }
    }
    let numeric_cols: Vec<usize> = (0..headers.len()).filter(|i| *i != key_idx).collect();

    let mut keys: Vec<String> = Vec::new();
    let mut cells: Vec<Vec<Option<f64>>> = Vec::new();
    let mut dropped_rows = 0usize;
    for record in reader.records() {
        let record = record.map_err(|e| RowFedError::Data(format!("bad record: {e}")))?;
        let key = record.get(key_idx).unwrap_or("").trim().to_string();
        if is_missing(&key) {
            dropped_rows += 1;
            continue;
        }
        let mut row = Vec::with_capacity(numeric_cols.len());
        for &c in &numeric_cols {
            let token = record.get(c).unwrap_or("");
            if is_missing(token) {
                row.push(None);
            } else {
                let v: f64 = token.trim().parse().map_err(|_| {
                    RowFedError::Data(format!(
                        "column '{}' has non-numeric value '{token}'",
                        headers[c]
                    ))
                })?;
                row.push(Some(v));
            }
        }
        keys.push(key);
        cells.push(row);
    }
    if cells.is_empty() {
        return Err(RowFedError::Data("table has no usable rows".into()));
    }
    let ncols = numeric_cols.len();

    // pooled min-max scaling to [0, 1]
    for c in 0..ncols {
        let observed: Vec<f64> = cells.iter().filter_map(|r| r[c]).collect();
        if observed.is_empty() {
            return Err(RowFedError::Data(format!(
                "column '{}' has no observed values",
                headers[numeric_cols[c]]
            )));
        }
        let lo = observed.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = observed.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        for row in cells.iter_mut() {
            if let Some(v) = row[c] {
                row[c] = Some(if span > 0.0 { (v - lo) / span } else { 0.0 });
            }
        }
    }

    // k-NN imputation on the scaled table
    let imputed = impute_knn(&cells, opts.knn_k)?;

    // split by client key, in order of first appearance
    let mut by_key: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, k) in keys.iter().enumerate() {
        by_key.entry(k.clone()).or_default().push(i);
    }
    let resp_positions: Vec<usize> = response_columns
        .iter()
        .map(|r| {
            let col = headers.iter().position(|h| h == r).unwrap();
            numeric_cols.iter().position(|c| *c == col).unwrap()
        })
        .collect();
    let pred_positions: Vec<usize> = (0..ncols)
        .filter(|c| !resp_positions.contains(c))
        .collect();

    let mut clients = Vec::new();
    let mut dropped_clients = 0usize;
    for (key, rows) in &by_key {
        if rows.len() < opts.min_rows {
            dropped_clients += 1;
            continue;
        }
        let mut x = Array2::zeros((rows.len(), pred_positions.len()));
        let mut y = Array2::zeros((rows.len(), resp_positions.len()));
        for (ri, &r) in rows.iter().enumerate() {
            for (ci, &c) in pred_positions.iter().enumerate() {
                x[[ri, ci]] = imputed[r][c];
            }
            for (ci, &c) in resp_positions.iter().enumerate() {
                y[[ri, ci]] = imputed[r][c];
            }
        }
        clients.push(IngestedClient {
            key: key.clone(),
            x,
            y,
        });
    }
    if clients.is_empty() {
        return Err(RowFedError::Data(
            "no client has enough rows after filtering".into(),
        ));
    }
    Ok(IngestResult {
        clients,
        predictor_names: pred_positions
            .iter()
            .map(|&c| headers[numeric_cols[c]].clone())
            .collect(),
        response_names: response_columns.to_vec(),
        dropped_rows,
        dropped_clients,
    })
}

/// Spec-level ingestion entry point returning the final scaled datasets.
pub fn ingest_table(
    path: &Path,
    client_key_column: &str,
    response_columns: &[String],
    opts: &IngestOptions,
) -> Result<Vec<ClientDataset>> {
    ingest_table_raw(path, client_key_column, response_columns, opts)?.to_datasets()
}

fn impute_knn(cells: &[Vec<Option<f64>>], k: usize) -> Result<Vec<Vec<f64>>> {
    if k == 0 {
        return Err(RowFedError::InvalidConfig("knn_k must be positive".into()));
    }
    let ncols = cells[0].len();
    let mut out: Vec<Vec<f64>> = cells
        .iter()
        .map(|r| r.iter().map(|v| v.unwrap_or(f64::NAN)).collect())
        .collect();
    // column means of observed values, the fallback when no neighbor shares
    // coordinates with the target row
    let col_means: Vec<f64> = (0..ncols)
        .map(|c| {
            let obs: Vec<f64> = cells.iter().filter_map(|r| r[c]).collect();
            obs.iter().sum::<f64>() / obs.len() as f64
        })
        .collect();
    for i in 0..cells.len() {
        for c in 0..ncols {
            if cells[i][c].is_some() {
                continue;
            }
            // candidate donors: rows where this cell is observed
            let mut dists: Vec<(f64, usize)> = Vec::new();
            for (r, row) in cells.iter().enumerate() {
                if r == i || row[c].is_none() {
                    continue;
                }
                let mut d2 = 0.0;
                let mut shared = 0usize;
                for cc in 0..ncols {
                    if let (Some(a), Some(b)) = (cells[i][cc], row[cc]) {
                        d2 += (a - b) * (a - b);
                        shared += 1;
                    }
                }
                if shared > 0 {
                    dists.push((d2.sqrt(), r));
                }
            }
            if dists.is_empty() {
                out[i][c] = col_means[c];
                continue;
            }
            dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let take = k.min(dists.len());
            let mean: f64 = dists[..take]
                .iter()
                .map(|(_, r)| cells[*r][c].unwrap())
                .sum::<f64>()
                / take as f64;
            out[i][c] = mean;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::frob_diff;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use std::io::Write;

    #[test]
    fn ar1_small_example() {
        let c = ar1_covariance(2, 0.5).unwrap();
        assert_eq!(c, array![[1.0, 0.5], [0.5, 1.0]]);
        let id = ar1_covariance(3, 0.0).unwrap();
        assert_eq!(id, Array2::eye(3));
        assert!(ar1_covariance(2, 1.0).is_err());
    }

    #[test]
    fn ar1_positive_definite() {
        let c = ar1_covariance(5, 0.5).unwrap();
        let eigs = to_na(c.view()).symmetric_eigenvalues();
        assert!(eigs.iter().all(|e| *e > 0.0));
    }

    #[test]
    fn noiseless_scenario_is_exact() {
        let spec = ScenarioSpec {
            m: 3,
            n: 8,
            p: 4,
            q: 5,
            seed: 7,
            sigma_e: 0.0,
            ..ScenarioSpec::default()
        };
        let (data, truth) = gen_scenario(&spec).unwrap();
        for (m, d) in data.iter().enumerate() {
            let predicted = d.x().dot(&truth.theta_star.block(m));
            assert!(frob_diff(&predicted, &d.y().to_owned()) < 1e-12);
        }
    }

    #[test]
    fn raw_design_covariance_close_to_ar1() {
        let spec = ScenarioSpec {
            m: 10,
            n: 100,
            p: 50,
            seed: 3,
            ..ScenarioSpec::default()
        };
        let (data, _) = gen_scenario(&spec).unwrap();
        // pool raw rows (undo the 1/sqrt(n) scaling)
        let scale = (spec.n as f64).sqrt();
        let mut acc = Array2::zeros((spec.p, spec.p));
        let mut rows = 0usize;
        for d in &data {
            let raw = &d.x() * scale;
            acc += &raw.t().dot(&raw);
            rows += spec.n;
        }
        acc /= rows as f64;
        let target = ar1_covariance(spec.p, spec.sigma_x).unwrap();
        assert!(
            frob_diff(&acc, &target) <= 0.15 * spec.p as f64,
            "empirical covariance too far: {}",
            frob_diff(&acc, &target)
        );
    }

    #[test]
    fn each_variable_has_at_most_two_distinct_rows() {
        let spec = ScenarioSpec {
            m: 8,
            n: 5,
            p: 12,
            q: 10,
            seed: 5,
            ..ScenarioSpec::default()
        };
        let (_, truth) = gen_scenario(&spec).unwrap();
        for j in 0..spec.p {
            let mut distinct: Vec<Array1<f64>> = Vec::new();
            for m in 0..spec.m {
                let row = truth.theta_star.block(m).row(j).to_owned();
                if !distinct.iter().any(|r| r == &row) {
                    distinct.push(row);
                }
            }
            assert!(distinct.len() <= 2, "variable {j} has {} values", distinct.len());
            assert_eq!(distinct.len(), truth.groups.variable(j).group_count());
        }
    }

    #[test]
    fn determinism_same_seed_same_bytes() {
        let spec = ScenarioSpec {
            m: 4,
            n: 10,
            p: 6,
            q: 5,
            seed: 11,
            ..ScenarioSpec::default()
        };
        let (a, ta) = gen_scenario(&spec).unwrap();
        let (b, tb) = gen_scenario(&spec).unwrap();
        assert_eq!(ta.theta_star.matrix(), tb.theta_star.matrix());
        for (da, db) in a.iter().zip(b.iter()) {
            assert_eq!(da.x(), db.x());
            assert_eq!(da.y(), db.y());
        }
    }

    #[test]
    fn cluster_assignment_frequency_balanced() {
        // over many seeds each (variable, client) goes to the u-cluster about
        // half the time
        let mut u_count = 0usize;
        let mut total = 0usize;
        for seed in 0..200 {
            let spec = ScenarioSpec {
                m: 10,
                n: 2,
                p: 5,
                q: 5,
                seed,
                ..ScenarioSpec::default()
            };
            let (_, truth) = gen_scenario(&spec).unwrap();
            for j in 0..spec.p {
                let part = truth.groups.variable(j);
                let vals = part.values().unwrap();
                for m in 0..spec.m {
                    let block = truth.theta_star.block(m);
                    // u rows match u_star
                    if vals.len() == 2 && block.row(j) == truth.u_star[j].view()
                        || vals.len() == 1 && vals[0] == truth.u_star[j]
                    {
                        u_count += 1;
                    }
                    total += 1;
                }
            }
        }
        let freq = u_count as f64 / total as f64;
        assert!((freq - 0.5).abs() <= 0.1, "u-cluster frequency {freq}");
    }

    #[test]
    fn supports_disjoint_when_signal_fits() {
        let spec = ScenarioSpec {
            m: 3,
            n: 5,
            p: 6,
            q: 10,
            seed: 13,
            ..ScenarioSpec::default()
        };
        let (_, truth) = gen_scenario(&spec).unwrap();
        let s = spec.signal_len();
        assert!(s <= spec.q / 2);
        for j in 0..spec.p {
            for i in 0..spec.q {
                let v_active = truth.v_star[j][i] != 0.0;
                let u_active = truth.u_star[j][i] != 0.0;
                assert!(!(v_active && u_active), "overlap at variable {j} coord {i}");
            }
        }
        assert!(truth.min_group_gap() >= 1.0);
    }

    #[test]
    fn derive_seed_spreads() {
        let a = derive_seed(42, 0);
        let b = derive_seed(42, 1);
        let c = derive_seed(43, 0);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, derive_seed(42, 0));
    }

    fn write_table(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f.flush().unwrap();
        f
    }

    #[test]
    fn min_max_scaling_example() {
        // column with min 2, max 12: value 7 scales to 0.5
        let f = write_table(
            "state,a,y\nA,2,1\nA,7,2\nA,12,3\nB,2,1\nB,7,2\nB,12,3\n",
        );
        let res = ingest_table_raw(
            f.path(),
            "state",
            &["y".to_string()],
            &IngestOptions::default(),
        )
        .unwrap();
        assert_eq!(res.clients.len(), 2);
        let a = &res.clients[0];
        assert_abs_diff_eq!(a.x[[1, 0]], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(a.x[[0, 0]], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(a.x[[2, 0]], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn no_missing_values_only_scaled() {
        let f = write_table("k,a,b,y\nA,0,1,4\nA,1,3,6\nA,0.5,2,5\n");
        let res = ingest_table_raw(
            f.path(),
            "k",
            &["y".to_string()],
            &IngestOptions { knn_k: 3, ..IngestOptions::default() },
        )
        .unwrap();
        let c = &res.clients[0];
        // scaled values must match the direct min-max formula
        assert_eq!(c.x[[0, 0]], 0.0);
        assert_eq!(c.x[[1, 0]], 1.0);
        assert_eq!(c.x[[2, 0]], 0.5);
        assert_eq!(c.y[[0, 0]], 0.0);
        assert_eq!(c.y[[1, 0]], 1.0);
    }

    #[test]
    fn knn_imputation_matches_brute_force() {
        // one missing cell; k = 2 neighbors among complete rows
        let f = write_table(
            "k,a,b\nA,0.0,0.0\nA,0.1,0.1\nA,0.9,1.0\nA,0.2,?\nA,0.85,0.8\nA,0.15,0.2\n",
        );
        let opts = IngestOptions { knn_k: 2, min_rows: 1, ..IngestOptions::default() };
        let res = ingest_table_raw(f.path(), "k", &["b".to_string()], &opts).unwrap();
        let c = &res.clients[0];
        // scaled a-column: lo=0, hi=0.9 -> a/0.9; scaled b: lo=0, hi=1.
        // target row has a=0.2/0.9=0.2222; distances over the shared 'a'
        // coordinate to the complete rows:
        //   r0: .2222, r1: .1111, r2: .7778, r4: .7222, r5: .0556
        // two nearest: r5 (b=0.2), r1 (b=0.1) -> mean 0.15
        assert_abs_diff_eq!(c.y[[3, 0]], 0.15, epsilon = 1e-12);
    }

    #[test]
    fn short_clients_dropped_and_missing_keys_skipped() {
        let f = write_table("k,a,y\nA,1,2\nA,2,3\nA,3,4\nB,1,2\n,5,6\n");
        let res = ingest_table_raw(
            f.path(),
            "k",
            &["y".to_string()],
            &IngestOptions::default(),
        )
        .unwrap();
        assert_eq!(res.clients.len(), 1);
        assert_eq!(res.clients[0].key, "A");
        assert_eq!(res.dropped_clients, 1);
        assert_eq!(res.dropped_rows, 1);
        let datasets = res.to_datasets().unwrap();
        assert_eq!(datasets[0].n_raw(), 3);
    }

    #[test]
    fn all_missing_column_rejected() {
        let f = write_table("k,a,y\nA,?,1\nA,?,2\nA,?,3\n");
        assert!(ingest_table_raw(
            f.path(),
            "k",
            &["y".to_string()],
            &IngestOptions::default()
        )
        .is_err());
    }

    #[test]
    fn unreadable_file_rejected() {
        let missing = Path::new("/nonexistent/table.csv");
        assert!(ingest_table(
            missing,
            "k",
            &["y".to_string()],
            &IngestOptions::default()
        )
        .is_err());
    }
}
