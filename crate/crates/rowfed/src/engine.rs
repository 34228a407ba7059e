//! Centralized ADMM mechanics: the linearized coefficient update, the rowwise
//! proximal split-variable update, the dual ascent step, and the geometric
//! penalty schedule.
//!
//! The coefficient subproblem is replaced by the quadratic surrogate with
//! metric `H = r I - rho tau A^T A`, so a round needs no matrix inversion.
//! Minimizing the surrogate gives
//!
//! `theta^{t+1} = r^{-1} H theta^t - r^{-1} tau [grad f + A^T G - rho A^T P]`
//!
//! which is evaluated matrix-free as
//! `theta - (tau/r) A^T [G + rho (A theta - P)] - (tau/r) grad f`.

use ndarray::Array2;

use crate::error::{Result, RowFedError};
use crate::fusion::{FusionLayout, FusionState, apply_a, apply_at};
use crate::model::{ClientDataset, CoefficientStack, RunConfig, grad_local, lipschitz_bound, loss};
use crate::penalty::{PenaltyFamily, PenaltyPair, penalty_value, prox_row};
use crate::util::{frob_diff, row_norm, solve_spd};

/// Slack added to the positive-definiteness floor of `r`.
pub const R_MARGIN: f64 = 1e-8;

/// Server-side solver state.
#[derive(Debug, Clone)]
pub struct ServerState {
    layout: FusionLayout,
    /// Split variable `P`.
    pub p_aux: FusionState,
    /// Dual variable (Lagrange multipliers) `G`.
    pub g_dual: FusionState,
    /// Server's copy of the last uploaded coefficient stack.
    pub theta_mirror: CoefficientStack,
    /// Current penalty parameter `rho^(t)`.
    pub rho: f64,
    /// Current linearization constant; kept at
    /// `rho*tau*(M+1) + max(tau*mu/2, 1) + margin` so `H` stays positive
    /// definite as `rho` grows.
    pub r: f64,
    pub tau: f64,
    /// Lipschitz bound of the loss gradient on the given data.
    pub mu: f64,
    pub alpha: f64,
    pub round: usize,
}

/// `r` floor for the current round.
pub fn compute_r(rho: f64, tau: f64, m: usize, mu: f64) -> f64 {
    rho * tau * (m as f64 + 1.0) + (tau * mu / 2.0).max(1.0) + R_MARGIN
}

impl ServerState {
    pub fn new(theta0: CoefficientStack, config: &RunConfig, mu: f64) -> Result<Self> {
        config.validate()?;
        let layout = FusionLayout::new(theta0.m(), theta0.p(), theta0.q())?;
        let p_aux = apply_a(&layout, &theta0)?;
        let g_dual = FusionState::zeros(&layout);
        let rho = config.rho0;
        let r = compute_r(rho, config.tau, layout.m(), mu);
        Ok(Self {
            layout,
            p_aux,
            g_dual,
            theta_mirror: theta0,
            rho,
            r,
            tau: config.tau,
            mu,
            alpha: config.alpha,
            round: 0,
        })
    }

    pub fn layout(&self) -> &FusionLayout {
        &self.layout
    }
}

/// Per-round convergence diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundReport {
    pub round: usize,
    /// `||A theta - P||_F` after the round.
    pub primal_residual: f64,
    /// `||P^{t+1} - P^t||_F`.
    pub dual_gap: f64,
    /// `||theta^{t+1} - theta^t||_F`.
    pub theta_step: f64,
    /// Augmented Lagrangian value at the new iterates (current `rho`).
    pub lagrangian: f64,
    /// Loss `f(theta)` at the new iterates.
    pub loss: f64,
}

/// Sum of rowwise penalties over the split variable, `lambda2` on fusion rows
/// and `lambda1` on identity rows.
pub fn h_value(layout: &FusionLayout, p_aux: &FusionState, pair: &PenaltyPair) -> Result<f64> {
    let mut total = 0.0;
    for (d, row) in p_aux.matrix().rows().into_iter().enumerate() {
        let spec = if layout.is_identity_row(d) {
            &pair.sparsity
        } else {
            &pair.fusion
        };
        total += penalty_value(spec, row_norm(row))?;
    }
    Ok(total)
}

/// Lagrangian terms that do not need client data, given the loss value.
pub fn lagrangian_terms(
    state: &ServerState,
    theta: &CoefficientStack,
    loss_value: f64,
    pair: &PenaltyPair,
) -> Result<f64> {
    let a_theta = apply_a(&state.layout, theta)?;
    let diff = a_theta.matrix() - state.p_aux.matrix();
    let inner: f64 = state
        .g_dual
        .matrix()
        .iter()
        .zip(diff.iter())
        .map(|(g, d)| g * d)
        .sum();
    let quad: f64 = diff.iter().map(|d| d * d).sum();
    Ok(loss_value + h_value(&state.layout, &state.p_aux, pair)? + inner + state.rho / 2.0 * quad)
}

/// Augmented Lagrangian `f(theta) + h(P) + <G, A theta - P> + rho/2 ||A theta - P||^2`.
pub fn augmented_lagrangian(
    state: &ServerState,
    theta: &CoefficientStack,
    data: &[ClientDataset],
    pair: &PenaltyPair,
) -> Result<f64> {
    let f = loss(theta, data)?;
    lagrangian_terms(state, theta, f, pair)
}

fn tilde_from(state: &ServerState, theta: &CoefficientStack) -> Result<CoefficientStack> {
    let a_theta = apply_a(&state.layout, theta)?;
    let mut bracket = a_theta.into_matrix();
    bracket -= state.p_aux.matrix();
    bracket *= state.rho;
    bracket += state.g_dual.matrix();
    let pulled = apply_at(&state.layout, &FusionState::from_matrix(&state.layout, bracket)?)?;
    let step = state.tau / state.r;
    let tilde = theta.matrix() - &(pulled.matrix() * step);
    CoefficientStack::from_matrix(tilde, theta.m())
}

/// Server precomputation `T~ = theta - (tau/r) A^T [G + rho (A theta - P)]`,
/// using only server-held quantities.
pub fn compute_tilde_theta(state: &ServerState) -> Result<CoefficientStack> {
    tilde_from(state, &state.theta_mirror)
}

/// One client's linearized step from its downloaded block.
pub fn local_step(
    tilde_block: ndarray::ArrayView2<f64>,
    grad: &Array2<f64>,
    r: f64,
    tau: f64,
) -> Array2<f64> {
    let step = tau / r;
    &tilde_block - &(grad * step)
}

/// Full-batch coefficient update: exact minimizer of the linearized surrogate.
pub fn t_update_full(
    state: &ServerState,
    theta: &CoefficientStack,
    data: &[ClientDataset],
) -> Result<CoefficientStack> {
    if data.len() != theta.m() {
        return Err(RowFedError::DimensionMismatch(format!(
            "{} clients for a stack of {} blocks",
            data.len(),
            theta.m()
        )));
    }
    // At very large rho the margin terms round away, so r can equal the
    // floor exactly; only a strictly smaller r is a configuration error.
    if state.r < state.rho * state.tau * (state.layout.m() as f64 + 1.0) {
        return Err(RowFedError::InvalidConfig(
            "r violates the positive-definiteness floor for H".into(),
        ));
    }
    let tilde = tilde_from(state, theta)?;
    let mut out = CoefficientStack::zeros(theta.m(), theta.p(), theta.q());
    for (m, d) in data.iter().enumerate() {
        let g = grad_local(theta.block(m), d, data.len())?;
        out.block_mut(m)
            .assign(&local_step(tilde.block(m), &g, state.r, state.tau));
    }
    Ok(out)
}

/// Rowwise proximal update of the split variable at
/// `Psi = A theta^{t+1} + rho^{-1} G^t`.
pub fn p_update(
    state: &ServerState,
    theta_new: &CoefficientStack,
    pair: &PenaltyPair,
) -> Result<FusionState> {
    let a_theta = apply_a(&state.layout, theta_new)?;
    let inv_rho = 1.0 / state.rho;
    let psi = a_theta.matrix() + &(state.g_dual.matrix() * inv_rho);
    let mut out = Array2::zeros(psi.dim());
    for (d, row) in psi.rows().into_iter().enumerate() {
        let spec = if state.layout.is_identity_row(d) {
            &pair.sparsity
        } else {
            &pair.fusion
        };
        out.row_mut(d).assign(&prox_row(spec, row, state.rho)?);
    }
    FusionState::from_matrix(&state.layout, out)
}

/// Dual ascent `G^{t+1} = G^t + rho (A theta^{t+1} - P^{t+1})`.
pub fn g_update(
    state: &ServerState,
    theta_new: &CoefficientStack,
    p_new: &FusionState,
) -> Result<FusionState> {
    let a_theta = apply_a(&state.layout, theta_new)?;
    let mut g = state.g_dual.matrix().clone();
    g += &((a_theta.matrix() - p_new.matrix()) * state.rho);
    FusionState::from_matrix(&state.layout, g)
}

/// Geometric penalty schedule `rho <- alpha * rho`, with `r` recomputed to
/// keep `H` positive definite. `alpha = 1` leaves `rho` constant.
pub fn rho_schedule(state: &mut ServerState) -> Result<()> {
    if state.alpha < 1.0 {
        return Err(RowFedError::InvalidConfig(format!(
            "rho schedule requires alpha >= 1, got {}",
            state.alpha
        )));
    }
    state.rho *= state.alpha;
    state.r = compute_r(state.rho, state.tau, state.layout.m(), state.mu);
    state.round += 1;
    Ok(())
}

pub(crate) fn check_penalty_round(pair: &PenaltyPair, rho: f64) -> Result<()> {
    for spec in [&pair.fusion, &pair.sparsity] {
        if spec.lambda == 0.0 {
            continue;
        }
        match spec.family {
            PenaltyFamily::Mcp => {
                if spec.gamma * rho <= 1.0 {
                    return Err(RowFedError::InvalidConfig(format!(
                        "MCP requires gamma > 1/rho at every round (gamma={}, rho={rho})",
                        spec.gamma
                    )));
                }
            }
            PenaltyFamily::Scad => {
                if spec.gamma <= 1.0 + 1.0 / rho {
                    return Err(RowFedError::InvalidConfig(format!(
                        "SCAD requires a > 1 + 1/rho at every round (a={}, rho={rho})",
                        spec.gamma
                    )));
                }
            }
            PenaltyFamily::L1 => {}
        }
    }
    Ok(())
}

/// Ridge-regularized local least squares, the standard initializer.
pub(crate) fn ridge_local(
    x: ndarray::ArrayView2<f64>,
    y: ndarray::ArrayView2<f64>,
    ridge_scale: f64,
) -> Result<Array2<f64>> {
    let p = x.ncols();
    let gram = x.t().dot(&x);
    let trace: f64 = (0..p).map(|i| gram[[i, i]]).sum();
    let mut delta = ridge_scale * trace / p as f64;
    if delta <= 0.0 {
        delta = ridge_scale.max(1e-12);
    }
    let mut reg = gram;
    for i in 0..p {
        reg[[i, i]] += delta;
    }
    solve_spd(reg.view(), x.t().dot(&y).view())
}

/// Per-client ridge least squares as the starting stack.
pub fn ridge_init(data: &[ClientDataset], ridge_scale: f64) -> Result<CoefficientStack> {
    if data.is_empty() {
        return Err(RowFedError::InvalidArgument("empty dataset".into()));
    }
    let blocks: Vec<Array2<f64>> = data
        .iter()
        .map(|d| ridge_local(d.x(), d.y(), ridge_scale))
        .collect::<Result<_>>()?;
    CoefficientStack::from_blocks(&blocks)
}

/// Left- and right-hand sides of the sufficient descent condition
/// `min(lambda1^2, lambda2^2)/2 > L^(0) + c_lambda alpha (alpha+1) / (2 rho0 (alpha-1))`.
/// Diagnostic only; an infinite right-hand side means the schedule is off.
pub fn descent_condition(config: &RunConfig, layout: &FusionLayout, initial_lagrangian: f64) -> (f64, f64) {
    let lhs = config.lambda1.powi(2).min(config.lambda2.powi(2)) / 2.0;
    let c_lambda = layout.fusion_rows() as f64 * config.lambda2.powi(2)
        + layout.identity_rows() as f64 * config.lambda1.powi(2);
    let rhs = if config.alpha > 1.0 {
        initial_lagrangian
            + c_lambda * config.alpha * (config.alpha + 1.0)
                / (2.0 * config.rho0 * (config.alpha - 1.0))
    } else {
        f64::INFINITY
    };
    (lhs, rhs)
}

fn finite_or_abort(report: &RoundReport, theta: &CoefficientStack) -> Result<()> {
    let ok = theta.is_finite()
        && report.primal_residual.is_finite()
        && report.dual_gap.is_finite()
        && report.theta_step.is_finite()
        && report.lagrangian.is_finite()
        && report.loss.is_finite();
    if ok {
        Ok(())
    } else {
        Err(RowFedError::NumericalFailure(format!(
            "non-finite iterate at round {}",
            report.round
        )))
    }
}

/// Runs the full three-step scheme for `config.rounds` rounds (optionally
/// stopping early once both the primal residual and the coefficient step fall
/// below their tolerances). Returns the final stack and per-round diagnostics.
pub fn run_admm_centralized(
    data: &[ClientDataset],
    config: &RunConfig,
) -> Result<(CoefficientStack, Vec<RoundReport>)> {
    run_admm_with_init(data, config, None)
}

/// Same as [`run_admm_centralized`] but optionally warm-started from a given
/// stack; the split and dual variables are reinitialized either way.
pub fn run_admm_with_init(
    data: &[ClientDataset],
    config: &RunConfig,
    theta0: Option<CoefficientStack>,
) -> Result<(CoefficientStack, Vec<RoundReport>)> {
    config.validate()?;
    if data.is_empty() {
        return Err(RowFedError::InvalidArgument("empty dataset".into()));
    }
    let pair = config.penalty_pair()?;
    let mut theta = match theta0 {
        Some(t) => {
            if t.m() != data.len() {
                return Err(RowFedError::DimensionMismatch(
                    "warm start has wrong client count".into(),
                ));
            }
            t
        }
        None => ridge_init(data, config.ridge_scale)?,
    };
    let mu = lipschitz_bound(data)?;
    let mut state = ServerState::new(theta.clone(), config, mu)?;
    let mut reports = Vec::with_capacity(config.rounds);
    for t in 0..config.rounds {
        check_penalty_round(&pair, state.rho)?;
        let theta_new = t_update_full(&state, &theta, data)?;
        let theta_step = frob_diff(theta_new.matrix(), theta.matrix());
        let p_new = p_update(&state, &theta_new, &pair)?;
        let dual_gap = frob_diff(p_new.matrix(), state.p_aux.matrix());
        let g_new = g_update(&state, &theta_new, &p_new)?;
        let primal_residual = frob_diff(
            apply_a(&state.layout, &theta_new)?.matrix(),
            p_new.matrix(),
        );
        state.p_aux = p_new;
        state.g_dual = g_new;
        state.theta_mirror = theta_new.clone();
        theta = theta_new;
        let f = loss(&theta, data)?;
        let lagrangian = lagrangian_terms(&state, &theta, f, &pair)?;
        let report = RoundReport {
            round: t,
            primal_residual,
            dual_gap,
            theta_step,
            lagrangian,
            loss: f,
        };
        finite_or_abort(&report, &theta)?;
        reports.push(report);
        if config.early_stop
            && primal_residual < config.primal_tol
            && theta_step < config.step_tol
        {
            break;
        }
        rho_schedule(&mut state)?;
    }
    Ok((theta, reports))
}
