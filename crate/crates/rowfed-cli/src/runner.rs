//! Command implementations: experiment orchestration and report emission.
//!
//! Every run is fully determined by the config file bytes and the master
//! seed; emitted tables carry both in a header comment. Replications run
//! concurrently but are collected and written in replication order, so
//! outputs are byte-identical across reruns.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use rowfed::baselines::{
    OracleDesign, ProxGradOptions, oracle_fit, tune_fedavg, tune_nonfed,
};
use rowfed::datagen::{IngestedClient, TrueModel, derive_seed, gen_scenario, ingest_table_raw};
use rowfed::engine::{RoundReport, run_admm_centralized, descent_condition};
use rowfed::evaluation::{MetricsReport, evaluate_fit, grid_search};
use rowfed::federation::{ClientNode, run_federated};
use rowfed::fusion::FusionLayout;
use rowfed::model::{ClientDataset, CoefficientStack};
use rowfed::RunConfig;

use crate::config::ExperimentConfig;

pub struct RunContext {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub master_seed: u64,
    pub out_dir: PathBuf,
}

impl RunContext {
    fn header(&self) -> String {
        format!(
            "# config_sha256={}\n# master_seed={}\n",
            self.config_hash, self.master_seed
        )
    }

    fn write_table(&self, name: &str, columns: &str, body: &str) -> anyhow::Result<PathBuf> {
        fs::create_dir_all(&self.out_dir)?;
        let path = self.out_dir.join(name);
        let mut text = self.header();
        text.push_str(columns);
        text.push('\n');
        text.push_str(body);
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        eprintln!("wrote {}", path.display());
        Ok(path)
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> anyhow::Result<PathBuf> {
        fs::create_dir_all(&self.out_dir)?;
        let path = self.out_dir.join(name);
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        eprintln!("wrote {}", path.display());
        Ok(path)
    }
}

#[derive(Debug, Clone)]
struct MethodRow {
    replication: usize,
    seed: u64,
    method: &'static str,
    lambda1: f64,
    lambda2: f64,
    report: MetricsReport,
    sse: f64,
}

impl MethodRow {
    fn csv_line(&self) -> String {
        let k_total: usize = self.report.per_variable_k.iter().sum();
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.replication,
            self.seed,
            self.method,
            self.lambda1,
            self.lambda2,
            self.report.mse_est,
            self.report.mse_pred,
            self.report.ri,
            self.report.gic,
            self.sse,
            k_total
        )
    }
}

const METHOD_COLUMNS: &str =
    "replication,seed,method,lambda1,lambda2,mse_est,mse_pred,rand_index,gic,sse,k_total";

struct ReplicationResult {
    rows: Vec<MethodRow>,
    rowfed_rounds: Vec<RoundReport>,
}

fn fit_rowfed(
    data: &[ClientDataset],
    truth: Option<&TrueModel>,
    config: &ExperimentConfig,
    run: &RunConfig,
) -> anyhow::Result<(f64, f64, CoefficientStack, Vec<RoundReport>)> {
    if config.experiment.tune {
        let search = grid_search(
            data,
            &config.tuning.lambda1_grid,
            &config.tuning.lambda2_grid,
            run,
            truth,
        )?;
        Ok((search.lambda1, search.lambda2, search.theta, search.reports))
    } else {
        let (theta, reports) = run_admm_centralized(data, run)?;
        Ok((run.lambda1, run.lambda2, theta, reports))
    }
}

fn run_replication(
    ctx: &RunContext,
    replication: usize,
) -> anyhow::Result<ReplicationResult> {
    let seed = derive_seed(ctx.master_seed, replication as u64);
    let spec = ctx.config.scenario_spec(seed);
    let run = ctx.config.run_config(seed)?;
    let (data, truth) = gen_scenario(&spec)?;
    let tol = run.cluster_tolerance(spec.q);
    let family = ctx.config.penalty_family()?;
    let opts = ProxGradOptions::default();
    let mut rows = Vec::new();
    let mut rowfed_rounds = Vec::new();
    for method in &ctx.config.experiment.methods {
        match method.as_str() {
            "rowfed" => {
                let (l1, l2, theta, reports) = fit_rowfed(&data, Some(&truth), &ctx.config, &run)?;
                let report = evaluate_fit(&theta, &data, Some(&truth), tol)?;
                let sse = rowfed::evaluation::sse(&theta, &data)?;
                rowfed_rounds = reports;
                rows.push(MethodRow {
                    replication,
                    seed,
                    method: "rowfed",
                    lambda1: l1,
                    lambda2: l2,
                    report,
                    sse,
                });
            }
            "nonfed" => {
                let (l1, theta) = tune_nonfed(
                    &data,
                    &ctx.config.tuning.lambda1_grid,
                    family,
                    run.gamma,
                    &opts,
                    tol,
                )?;
                let report = evaluate_fit(&theta, &data, Some(&truth), tol)?;
                let sse = rowfed::evaluation::sse(&theta, &data)?;
                rows.push(MethodRow {
                    replication,
                    seed,
                    method: "nonfed",
                    lambda1: l1,
                    lambda2: f64::NAN,
                    report,
                    sse,
                });
            }
            "fedavg" => {
                let (l1, theta) = tune_fedavg(
                    &data,
                    &ctx.config.tuning.lambda1_grid,
                    family,
                    run.gamma,
                    &opts,
                    tol,
                )?;
                let report = evaluate_fit(&theta, &data, Some(&truth), tol)?;
                let sse = rowfed::evaluation::sse(&theta, &data)?;
                rows.push(MethodRow {
                    replication,
                    seed,
                    method: "fedavg",
                    lambda1: l1,
                    lambda2: f64::NAN,
                    report,
                    sse,
                });
            }
            "oracle" => {
                let design = OracleDesign::from_groups(&truth.groups, 0.0)?;
                let theta = oracle_fit(&data, &design)?;
                let report = evaluate_fit(&theta, &data, Some(&truth), tol)?;
                let sse = rowfed::evaluation::sse(&theta, &data)?;
                rows.push(MethodRow {
                    replication,
                    seed,
                    method: "oracle",
                    lambda1: f64::NAN,
                    lambda2: f64::NAN,
                    report,
                    sse,
                });
            }
            other => anyhow::bail!("unknown method '{other}'"),
        }
    }
    Ok(ReplicationResult {
        rows,
        rowfed_rounds,
    })
}

#[derive(Serialize)]
struct AggregateEntry {
    mean: f64,
    sd: f64,
}

fn aggregate(rows: &[MethodRow]) -> BTreeMap<String, BTreeMap<String, AggregateEntry>> {
    let mut grouped: BTreeMap<&'static str, Vec<&MethodRow>> = BTreeMap::new();
    for row in rows {
        grouped.entry(row.method).or_default().push(row);
    }
    let stats = |xs: &[f64]| -> AggregateEntry {
        let valid: Vec<f64> = xs.iter().cloned().filter(|v| v.is_finite()).collect();
        if valid.is_empty() {
            return AggregateEntry {
                mean: f64::NAN,
                sd: f64::NAN,
            };
        }
        let mean = valid.iter().sum::<f64>() / valid.len() as f64;
        let sd = if valid.len() > 1 {
            (valid.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                / (valid.len() - 1) as f64)
                .sqrt()
        } else {
            0.0
        };
        AggregateEntry { mean, sd }
    };
    let mut out = BTreeMap::new();
    for (method, rows) in grouped {
        let mut metrics = BTreeMap::new();
        metrics.insert(
            "mse_est".to_string(),
            stats(&rows.iter().map(|r| r.report.mse_est).collect::<Vec<_>>()),
        );
        metrics.insert(
            "mse_pred".to_string(),
            stats(&rows.iter().map(|r| r.report.mse_pred).collect::<Vec<_>>()),
        );
        metrics.insert(
            "rand_index".to_string(),
            stats(&rows.iter().map(|r| r.report.ri).collect::<Vec<_>>()),
        );
        metrics.insert(
            "gic".to_string(),
            stats(&rows.iter().map(|r| r.report.gic).collect::<Vec<_>>()),
        );
        metrics.insert(
            "sse".to_string(),
            stats(&rows.iter().map(|r| r.sse).collect::<Vec<_>>()),
        );
        out.insert(method.to_string(), metrics);
    }
    out
}

#[derive(Serialize)]
struct SimulateSummary {
    mode: String,
    config_sha256: String,
    master_seed: u64,
    replications: usize,
    methods: Vec<String>,
    aggregates: BTreeMap<String, BTreeMap<String, AggregateEntry>>,
}

fn install_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> anyhow::Result<T> {
    if workers == 0 {
        Ok(f())
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()?;
        Ok(pool.install(f))
    }
}

pub fn cmd_simulate(ctx: &RunContext) -> anyhow::Result<()> {
    let reps = ctx.config.experiment.replications.max(1);
    let results: Vec<anyhow::Result<ReplicationResult>> =
        install_pool(ctx.config.experiment.workers, || {
            (0..reps)
                .into_par_iter()
                .map(|r| run_replication(ctx, r))
                .collect()
        })?;
    let mut rows = Vec::new();
    let mut rounds_body = String::new();
    let mut failures = Vec::new();
    for (r, result) in results.into_iter().enumerate() {
        match result {
            Ok(res) => {
                rows.extend(res.rows);
                for report in &res.rowfed_rounds {
                    writeln!(
                        rounds_body,
                        "{},{},{},{},{},{},{}",
                        r,
                        report.round,
                        report.primal_residual,
                        report.dual_gap,
                        report.theta_step,
                        report.lagrangian,
                        report.loss
                    )?;
                }
            }
            Err(e) => failures.push(format!("replication {r}: {e}")),
        }
    }
    if rows.is_empty() {
        anyhow::bail!(
            "all replications failed: {}",
            failures.join("; ")
        );
    }
    for f in &failures {
        eprintln!("warning: {f}");
    }
    let body: String = rows.iter().map(|r| r.csv_line() + "\n").collect();
    ctx.write_table("replications.csv", METHOD_COLUMNS, &body)?;
    let aggregates = aggregate(&rows);
    let mut agg_body = String::new();
    for (method, metrics) in &aggregates {
        for (metric, entry) in metrics {
            writeln!(agg_body, "{},{},{},{}", method, metric, entry.mean, entry.sd)?;
        }
    }
    ctx.write_table("aggregate.csv", "method,metric,mean,sd", &agg_body)?;
    if !rounds_body.is_empty() {
        ctx.write_table(
            "rounds.csv",
            "replication,round,primal_residual,dual_gap,theta_step,lagrangian,loss",
            &rounds_body,
        )?;
    }
    let summary = SimulateSummary {
        mode: "simulate".into(),
        config_sha256: ctx.config_hash.clone(),
        master_seed: ctx.master_seed,
        replications: reps,
        methods: ctx.config.experiment.methods.clone(),
        aggregates,
    };
    ctx.write_json("summary.json", &summary)?;
    Ok(())
}

#[derive(Serialize)]
struct TuneSummary {
    mode: String,
    config_sha256: String,
    master_seed: u64,
    selected_lambda1: f64,
    selected_lambda2: f64,
    selected_gic: f64,
    grid_points: usize,
}

pub fn cmd_tune(ctx: &RunContext) -> anyhow::Result<()> {
    let seed = derive_seed(ctx.master_seed, 0);
    let spec = ctx.config.scenario_spec(seed);
    let run = ctx.config.run_config(seed)?;
    let (data, truth) = gen_scenario(&spec)?;
    if ctx.config.tuning.lambda1_grid.is_empty() || ctx.config.tuning.lambda2_grid.is_empty() {
        anyhow::bail!("tuning grids must be nonempty");
    }
    let search = install_pool(ctx.config.experiment.workers, || {
        grid_search(
            &data,
            &ctx.config.tuning.lambda1_grid,
            &ctx.config.tuning.lambda2_grid,
            &run,
            Some(&truth),
        )
    })??;
    let mut body = String::new();
    let mut selected_gic = f64::NAN;
    for point in &search.table {
        let k_total: usize = point.report.per_variable_k.iter().sum();
        writeln!(
            body,
            "{},{},{},{},{},{},{},{}",
            point.lambda1,
            point.lambda2,
            point.report.gic,
            point.sse,
            k_total,
            point.report.mse_est,
            point.report.ri,
            point.diverged
        )?;
        if (point.lambda1, point.lambda2) == (search.lambda1, search.lambda2) {
            selected_gic = point.report.gic;
        }
    }
    ctx.write_table(
        "gic_surface.csv",
        "lambda1,lambda2,gic,sse,k_total,mse_est,rand_index,diverged",
        &body,
    )?;
    // final fit at the selected pair
    let tol = run.cluster_tolerance(spec.q);
    let report = evaluate_fit(&search.theta, &data, Some(&truth), tol)?;
    let row = MethodRow {
        replication: 0,
        seed,
        method: "rowfed",
        lambda1: search.lambda1,
        lambda2: search.lambda2,
        report,
        sse: rowfed::evaluation::sse(&search.theta, &data)?,
    };
    ctx.write_table("metrics.csv", METHOD_COLUMNS, &(row.csv_line() + "\n"))?;
    write_rounds(ctx, &search.reports)?;
    write_theta(ctx, &search.theta)?;
    let summary = TuneSummary {
        mode: "tune".into(),
        config_sha256: ctx.config_hash.clone(),
        master_seed: ctx.master_seed,
        selected_lambda1: search.lambda1,
        selected_lambda2: search.lambda2,
        selected_gic,
        grid_points: search.table.len(),
    };
    ctx.write_json("summary.json", &summary)?;
    Ok(())
}

fn write_rounds(ctx: &RunContext, reports: &[RoundReport]) -> anyhow::Result<()> {
    let mut body = String::new();
    for report in reports {
        writeln!(
            body,
            "0,{},{},{},{},{},{}",
            report.round,
            report.primal_residual,
            report.dual_gap,
            report.theta_step,
            report.lagrangian,
            report.loss
        )?;
    }
    ctx.write_table(
        "rounds.csv",
        "replication,round,primal_residual,dual_gap,theta_step,lagrangian,loss",
        &body,
    )?;
    Ok(())
}

fn write_theta(ctx: &RunContext, theta: &CoefficientStack) -> anyhow::Result<()> {
    let mut body = String::new();
    for m in 0..theta.m() {
        let block = theta.block(m);
        for i in 0..theta.p() {
            for j in 0..theta.q() {
                writeln!(body, "{},{},{},{}", m, i, j, block[[i, j]])?;
            }
        }
    }
    ctx.write_table("theta.csv", "client,row,col,value", &body)?;
    Ok(())
}

fn read_theta(path: &Path, m: usize, p: usize, q: usize) -> anyhow::Result<CoefficientStack> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut theta = CoefficientStack::zeros(m, p, q);
    for line in text.lines() {
        if line.starts_with('#') || line.starts_with("client") || line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 4 {
            anyhow::bail!("bad theta line: {line}");
        }
        let (mm, i, j): (usize, usize, usize) =
            (parts[0].parse()?, parts[1].parse()?, parts[2].parse()?);
        let v: f64 = parts[3].parse()?;
        theta.block_mut(mm)[[i, j]] = v;
    }
    Ok(theta)
}

#[derive(Serialize)]
struct FitSummary {
    mode: String,
    config_sha256: String,
    master_seed: u64,
    lambda1: f64,
    lambda2: f64,
    rounds_run: usize,
    final_primal_residual: f64,
    final_loss: f64,
    descent_condition_lhs: f64,
    descent_condition_rhs: f64,
}

pub fn cmd_fit(ctx: &RunContext) -> anyhow::Result<()> {
    let seed = derive_seed(ctx.master_seed, 0);
    let spec = ctx.config.scenario_spec(seed);
    let run = ctx.config.run_config(seed)?;
    let (data, truth) = gen_scenario(&spec)?;
    let federated = run.participation < 1.0;
    let (theta, reports) = if federated {
        let mut clients: Vec<ClientNode> = data.iter().map(|d| ClientNode::new(d.clone())).collect();
        let (theta, reports, transcript) = run_federated(&mut clients, &run)?;
        let lines = transcript.export_lines();
        fs::create_dir_all(&ctx.out_dir)?;
        let path = ctx.out_dir.join("transcript.csv");
        fs::write(&path, ctx.header() + &lines)?;
        eprintln!("wrote {}", path.display());
        let n_raws: Vec<usize> = data.iter().map(|d| d.n_raw()).collect();
        let violations = transcript.audit(spec.p, spec.q, &n_raws);
        if !violations.is_empty() {
            anyhow::bail!("privacy audit failed: {violations:?}");
        }
        (theta, reports)
    } else {
        run_admm_centralized(&data, &run)?
    };
    let tol = run.cluster_tolerance(spec.q);
    let report = evaluate_fit(&theta, &data, Some(&truth), tol)?;
    let row = MethodRow {
        replication: 0,
        seed,
        method: "rowfed",
        lambda1: run.lambda1,
        lambda2: run.lambda2,
        report,
        sse: rowfed::evaluation::sse(&theta, &data)?,
    };
    ctx.write_table("metrics.csv", METHOD_COLUMNS, &(row.csv_line() + "\n"))?;
    write_rounds(ctx, &reports)?;
    write_theta(ctx, &theta)?;
    let layout = FusionLayout::new(spec.m, spec.p, spec.q)?;
    let initial_lagrangian = reports.first().map(|r| r.lagrangian).unwrap_or(f64::NAN);
    let (lhs, rhs) = descent_condition(&run, &layout, initial_lagrangian);
    if lhs <= rhs {
        eprintln!(
            "note: sufficient descent condition not certified (lhs {lhs:.3e} <= rhs {rhs:.3e}); convergence is still expected in practice"
        );
    }
    let last = reports.last();
    let summary = FitSummary {
        mode: "fit".into(),
        config_sha256: ctx.config_hash.clone(),
        master_seed: ctx.master_seed,
        lambda1: run.lambda1,
        lambda2: run.lambda2,
        rounds_run: reports.len(),
        final_primal_residual: last.map(|r| r.primal_residual).unwrap_or(f64::NAN),
        final_loss: last.map(|r| r.loss).unwrap_or(f64::NAN),
        descent_condition_lhs: lhs,
        descent_condition_rhs: rhs,
    };
    ctx.write_json("summary.json", &summary)?;
    Ok(())
}

pub fn cmd_eval(ctx: &RunContext, theta_path: &Path) -> anyhow::Result<()> {
    let seed = derive_seed(ctx.master_seed, 0);
    let spec = ctx.config.scenario_spec(seed);
    let run = ctx.config.run_config(seed)?;
    let (data, truth) = gen_scenario(&spec)?;
    let theta = read_theta(theta_path, spec.m, spec.p, spec.q)?;
    let tol = run.cluster_tolerance(spec.q);
    let report = evaluate_fit(&theta, &data, Some(&truth), tol)?;
    let row = MethodRow {
        replication: 0,
        seed,
        method: "rowfed",
        lambda1: f64::NAN,
        lambda2: f64::NAN,
        report,
        sse: rowfed::evaluation::sse(&theta, &data)?,
    };
    ctx.write_table("metrics.csv", METHOD_COLUMNS, &(row.csv_line() + "\n"))?;
    let summary = SimulateSummary {
        mode: "eval".into(),
        config_sha256: ctx.config_hash.clone(),
        master_seed: ctx.master_seed,
        replications: 1,
        methods: vec!["rowfed".into()],
        aggregates: aggregate(std::slice::from_ref(&row)),
    };
    ctx.write_json("summary.json", &summary)?;
    Ok(())
}

struct SplitClient {
    key: String,
    train: ClientDataset,
    x_test: Array2<f64>,
    y_test: Array2<f64>,
}

fn split_client(
    id: usize,
    client: &IngestedClient,
    test_fraction: f64,
    seed: u64,
) -> anyhow::Result<SplitClient> {
    let n = client.x.nrows();
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id as u64 + 1);
    idx.shuffle(&mut rng);
    let n_test = ((test_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let (test_idx, train_idx) = idx.split_at(n_test);
    let take = |rows: &[usize], mat: &Array2<f64>| -> Array2<f64> {
        let mut sorted = rows.to_vec();
        sorted.sort_unstable();
        let mut out = Array2::zeros((sorted.len(), mat.ncols()));
        for (i, &r) in sorted.iter().enumerate() {
            out.row_mut(i).assign(&mat.row(r));
        }
        out
    };
    let train = ClientDataset::from_raw(
        id,
        take(train_idx, &client.x),
        take(train_idx, &client.y),
    )?;
    Ok(SplitClient {
        key: client.key.clone(),
        train,
        x_test: take(test_idx, &client.x),
        y_test: take(test_idx, &client.y),
    })
}

fn holdout_mse(theta_m: &Array2<f64>, x: &Array2<f64>, y: &Array2<f64>) -> f64 {
    let pred = x.dot(theta_m);
    let diff = y - &pred;
    diff.iter().map(|v| v * v).sum::<f64>() / (y.nrows() * y.ncols()) as f64
}

#[derive(Serialize)]
struct RealDataSummary {
    mode: String,
    config_sha256: String,
    master_seed: u64,
    clients: usize,
    dropped_clients: usize,
    dropped_rows: usize,
    predictors: usize,
    responses: usize,
    selected_lambda1: f64,
    selected_lambda2: f64,
    mean_holdout_mse: BTreeMap<String, f64>,
}

pub fn cmd_real_data(ctx: &RunContext) -> anyhow::Result<()> {
    let section = ctx
        .config
        .realdata
        .as_ref()
        .ok_or_else(|| anyhow::anyhow!("config has no [realdata] section"))?;
    let opts = ctx.config.ingest_options()?;
    let ingest = ingest_table_raw(
        Path::new(&section.path),
        &section.client_key,
        &section.responses,
        &opts,
    )?;
    eprintln!(
        "ingested {} clients ({} dropped), {} predictors, {} responses",
        ingest.clients.len(),
        ingest.dropped_clients,
        ingest.predictor_names.len(),
        ingest.response_names.len()
    );
    if section.dump_normalized {
        let (header, table) = ingest.normalized_table();
        let mut body = String::new();
        for row in table.rows() {
            let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            writeln!(body, "{}", line.join(","))?;
        }
        ctx.write_table("normalized_table.csv", &header.join(","), &body)?;
    }
    let seed = derive_seed(ctx.master_seed, 0);
    let splits: Vec<SplitClient> = ingest
        .clients
        .iter()
        .enumerate()
        .map(|(id, c)| split_client(id, c, section.test_fraction, seed))
        .collect::<anyhow::Result<_>>()?;
    let train: Vec<ClientDataset> = splits.iter().map(|s| s.train.clone()).collect();
    let run = ctx.config.run_config(seed)?;
    let q = train[0].q();
    let tol = run.cluster_tolerance(q);
    let family = ctx.config.penalty_family()?;
    let prox_opts = ProxGradOptions::default();

    let (l1, l2, rowfed_theta, reports) =
        install_pool(ctx.config.experiment.workers, || {
            fit_rowfed(&train, None, &ctx.config, &run)
        })??;
    write_rounds(ctx, &reports)?;

    let mut fits: Vec<(&'static str, CoefficientStack)> = vec![("rowfed", rowfed_theta)];
    for method in &ctx.config.experiment.methods {
        match method.as_str() {
            "nonfed" => {
                let (_, theta) = tune_nonfed(
                    &train,
                    &ctx.config.tuning.lambda1_grid,
                    family,
                    run.gamma,
                    &prox_opts,
                    tol,
                )?;
                fits.push(("nonfed", theta));
            }
            "fedavg" => {
                let (_, theta) = tune_fedavg(
                    &train,
                    &ctx.config.tuning.lambda1_grid,
                    family,
                    run.gamma,
                    &prox_opts,
                    tol,
                )?;
                fits.push(("fedavg", theta));
            }
            // rowfed already fit; the oracle needs ground truth
            _ => {}
        }
    }

    // the variance-only baseline predicts each response's train column mean
    let mut body = String::new();
    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for (id, split) in splits.iter().enumerate() {
        let n_train = split.train.n_raw();
        let scale = (n_train as f64).sqrt();
        let y_train_raw = &split.train.y() * scale;
        let means = y_train_raw.mean_axis(ndarray::Axis(0)).unwrap();
        let mean_mse = {
            let mut total = 0.0;
            for row in split.y_test.rows() {
                for (v, mu) in row.iter().zip(means.iter()) {
                    total += (v - mu) * (v - mu);
                }
            }
            total / (split.y_test.nrows() * split.y_test.ncols()) as f64
        };
        for (name, theta) in &fits {
            let mse = holdout_mse(&theta.block(id).to_owned(), &split.x_test, &split.y_test);
            writeln!(
                body,
                "{},{},{},{},{},{}",
                split.key,
                n_train,
                split.y_test.nrows(),
                name,
                mse,
                mean_mse
            )?;
            let entry = sums.entry(name.to_string()).or_insert((0.0, 0));
            entry.0 += mse;
            entry.1 += 1;
        }
        let entry = sums.entry("mean_baseline".to_string()).or_insert((0.0, 0));
        entry.0 += mean_mse;
        entry.1 += 1;
    }
    ctx.write_table(
        "per_client_mse.csv",
        "client,n_train,n_test,method,mse_holdout,mse_mean_baseline",
        &body,
    )?;
    let summary = RealDataSummary {
        mode: "real-data".into(),
        config_sha256: ctx.config_hash.clone(),
        master_seed: ctx.master_seed,
        clients: splits.len(),
        dropped_clients: ingest.dropped_clients,
        dropped_rows: ingest.dropped_rows,
        predictors: ingest.predictor_names.len(),
        responses: ingest.response_names.len(),
        selected_lambda1: l1,
        selected_lambda2: l2,
        mean_holdout_mse: sums
            .into_iter()
            .map(|(k, (s, n))| (k, s / n as f64))
            .collect(),
    };
    ctx.write_json("summary.json", &summary)?;
    Ok(())
}
