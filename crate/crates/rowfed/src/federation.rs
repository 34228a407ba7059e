//! Client/server protocol simulation with partial participation.
//!
//! The transport is an in-process deterministic message queue. Every message
//! carries only a `p x q` coefficient block and a client id; raw data never
//! leaves its [`ClientNode`], which is what the transcript audit checks.
//! Rounds are synchronous barriers; all randomness flows from per-round
//! streams of the master seed, so runs are reproducible regardless of
//! scheduling.

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::engine::{
    ServerState, check_penalty_round, compute_tilde_theta, g_update, lagrangian_terms,
    local_step, p_update, rho_schedule, ridge_local, RoundReport,
};
use crate::error::{Result, RowFedError};
use crate::fusion::apply_a;
use crate::model::{
    ClientDataset, CoefficientStack, RunConfig, SamplingMode, grad_local, lipschitz_bound, loss,
};
use crate::util::frob_diff;

/// A simulated client. The dataset is reachable only through local
/// operations; no message constructor accepts it.
#[derive(Debug)]
pub struct ClientNode {
    dataset: ClientDataset,
    theta: Option<Array2<f64>>,
    pub client_id: usize,
}

impl ClientNode {
    pub fn new(dataset: ClientDataset) -> Self {
        let client_id = dataset.client_id();
        Self {
            dataset,
            theta: None,
            client_id,
        }
    }

    /// Current local coefficient block, if initialized.
    pub fn theta(&self) -> Option<&Array2<f64>> {
        self.theta.as_ref()
    }

    fn local_init(&mut self, ridge_scale: f64) -> Result<Array2<f64>> {
        let theta = ridge_local(self.dataset.x(), self.dataset.y(), ridge_scale)?;
        self.theta = Some(theta.clone());
        Ok(theta)
    }

    /// Linearized local update from the downloaded block:
    /// `theta_m <- T~_m - (tau/r) grad f_m(theta_m)`.
    pub fn local_t_update(
        &self,
        tilde_theta: ArrayView2<f64>,
        r: f64,
        tau: f64,
        m_total: usize,
    ) -> Result<Array2<f64>> {
        let theta = self.theta.as_ref().ok_or_else(|| {
            RowFedError::InvalidArgument(format!("client {} is not initialized", self.client_id))
        })?;
        let grad = grad_local(theta.view(), &self.dataset, m_total)?;
        Ok(local_step(tilde_theta, &grad, r, tau))
    }

    /// Consumes a download message and produces the matching upload.
    pub fn handle_download(
        &mut self,
        msg: &Message,
        r: f64,
        tau: f64,
        m_total: usize,
    ) -> Result<Message> {
        match msg {
            Message::DownloadTilde {
                client_id,
                tilde_theta,
            } if *client_id == self.client_id => {
                let theta = self.local_t_update(tilde_theta.view(), r, tau, m_total)?;
                self.theta = Some(theta.clone());
                Ok(Message::UploadTheta {
                    client_id: self.client_id,
                    theta,
                })
            }
            _ => Err(RowFedError::InvalidArgument(format!(
                "client {} received a message it cannot handle",
                self.client_id
            ))),
        }
    }
}

/// Wire messages. The closed set of variants is what enforces the
/// data-locality contract: payloads are coefficient blocks only.
#[derive(Debug, Clone)]
pub enum Message {
    InitUpload { client_id: usize, theta: Array2<f64> },
    DownloadTilde { client_id: usize, tilde_theta: Array2<f64> },
    UploadTheta { client_id: usize, theta: Array2<f64> },
}

impl Message {
    pub fn client_id(&self) -> usize {
        match self {
            Message::InitUpload { client_id, .. }
            | Message::DownloadTilde { client_id, .. }
            | Message::UploadTheta { client_id, .. } => *client_id,
        }
    }

    pub fn payload_shape(&self) -> (usize, usize) {
        match self {
            Message::InitUpload { theta, .. } | Message::UploadTheta { theta, .. } => theta.dim(),
            Message::DownloadTilde { tilde_theta, .. } => tilde_theta.dim(),
        }
    }

    pub fn direction(&self) -> Direction {
        match self {
            Message::DownloadTilde { .. } => Direction::ServerToClient,
            _ => Direction::ClientToServer,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Message::InitUpload { .. } => "init_upload",
            Message::DownloadTilde { .. } => "download_tilde",
            Message::UploadTheta { .. } => "upload_theta",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    ClientToServer,
    ServerToClient,
}

impl Direction {
    pub fn as_str(&self) -> &'static str {
        match self {
            Direction::ClientToServer => "client_to_server",
            Direction::ServerToClient => "server_to_client",
        }
    }
}

/// One logged message: round (-1 for the initialization uploads), direction,
/// message kind, client id, and payload shape.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TranscriptEntry {
    pub round: i64,
    pub direction: Direction,
    pub kind: &'static str,
    pub client_id: usize,
    pub rows: usize,
    pub cols: usize,
}

/// Log of every message exchanged during a federated run.
#[derive(Debug, Default, Clone)]
pub struct Transcript {
    entries: Vec<TranscriptEntry>,
}

impl Transcript {
    fn record(&mut self, round: i64, msg: &Message) {
        let (rows, cols) = msg.payload_shape();
        self.entries.push(TranscriptEntry {
            round,
            direction: msg.direction(),
            kind: msg.kind(),
            client_id: msg.client_id(),
            rows,
            cols,
        });
    }

    pub fn entries(&self) -> &[TranscriptEntry] {
        &self.entries
    }

    /// Line-delimited export: `round,direction,kind,client_id,rows,cols`.
    pub fn export_lines(&self) -> String {
        let mut out = String::from("round,direction,kind,client_id,rows,cols\n");
        for e in &self.entries {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                e.round,
                e.direction.as_str(),
                e.kind,
                e.client_id,
                e.rows,
                e.cols
            ));
        }
        out
    }

    /// Privacy audit: every payload must be a `p x q` block and no payload
    /// axis may equal any client's raw sample count. Returns violations.
    pub fn audit(&self, p: usize, q: usize, n_raws: &[usize]) -> Vec<String> {
        let mut violations = Vec::new();
        for e in &self.entries {
            if e.rows != p || e.cols != q {
                violations.push(format!(
                    "round {} {} for client {}: payload {}x{} is not the {p}x{q} block",
                    e.round, e.kind, e.client_id, e.rows, e.cols
                ));
            }
            for (m, n) in n_raws.iter().enumerate() {
                if e.rows == *n || e.cols == *n {
                    violations.push(format!(
                        "round {} {} for client {}: payload axis matches n_{m} = {n}",
                        e.round, e.kind, e.client_id
                    ));
                }
            }
        }
        violations
    }
}

/// Per-round client selection.
#[derive(Debug, Clone, Copy)]
pub struct ParticipationSampler {
    pub rate: f64,
    pub seed: u64,
    pub mode: SamplingMode,
}

impl ParticipationSampler {
    pub fn new(rate: f64, seed: u64, mode: SamplingMode) -> Result<Self> {
        if !(rate > 0.0 && rate <= 1.0) {
            return Err(RowFedError::InvalidConfig(format!(
                "participation rate must lie in (0, 1], got {rate}"
            )));
        }
        Ok(Self { rate, seed, mode })
    }

    /// Selected client ids for a round, in ascending order. Bernoulli mode
    /// may return an empty set; fixed-size mode returns `round(rate * M)`
    /// clients (at least one).
    pub fn select(&self, m_total: usize, round: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(round as u64 + 1);
        match self.mode {
            SamplingMode::Bernoulli => (0..m_total)
                .filter(|_| rng.random::<f64>() < self.rate)
                .collect(),
            SamplingMode::FixedSize => {
                let k = ((self.rate * m_total as f64).round() as usize).clamp(1, m_total);
                let mut ids: Vec<usize> = (0..m_total).collect();
                for i in 0..k {
                    let j = rng.random_range(i..m_total);
                    ids.swap(i, j);
                }
                let mut chosen = ids[..k].to_vec();
                chosen.sort_unstable();
                chosen
            }
        }
    }
}

/// Runs the federated protocol: local ridge initialization and uploads, then
/// `config.rounds` rounds of download / local update / upload for the
/// selected clients, with the split-variable and dual updates applied on the
/// server every round (even when no client is selected). With full
/// participation the trajectory matches the centralized solver exactly.
pub fn run_federated(
    clients: &mut [ClientNode],
    config: &RunConfig,
) -> Result<(CoefficientStack, Vec<RoundReport>, Transcript)> {
    config.validate()?;
    let m_total = clients.len();
    if m_total == 0 {
        return Err(RowFedError::InvalidArgument("no clients".into()));
    }
    for (i, c) in clients.iter().enumerate() {
        if c.client_id != i {
            return Err(RowFedError::InvalidArgument(
                "clients must be ordered by contiguous ids starting at 0".into(),
            ));
        }
    }
    let p = clients[0].dataset.p();
    let q = clients[0].dataset.q();
    for c in clients.iter() {
        if c.dataset.p() != p || c.dataset.q() != q {
            return Err(RowFedError::DimensionMismatch(
                "clients disagree on covariate/response dimensions".into(),
            ));
        }
    }
    let pair = config.penalty_pair()?;
    let mu = lipschitz_bound(clients.iter().map(|c| &c.dataset))?;
    let mut transcript = Transcript::default();

    // initialization: local estimates, uploaded once
    let mut theta0 = CoefficientStack::zeros(m_total, p, q);
    for node in clients.iter_mut() {
        let block = node.local_init(config.ridge_scale)?;
        let msg = Message::InitUpload {
            client_id: node.client_id,
            theta: block,
        };
        transcript.record(-1, &msg);
        if let Message::InitUpload { client_id, theta } = msg {
            theta0.block_mut(client_id).assign(&theta);
        }
    }

    let mut state = ServerState::new(theta0, config, mu)?;
    let sampler = ParticipationSampler::new(config.participation, config.seed, config.sampling)?;
    let mut reports = Vec::with_capacity(config.rounds);

    for t in 0..config.rounds {
        check_penalty_round(&pair, state.rho)?;
        let tilde = compute_tilde_theta(&state)?;
        let selected = sampler.select(m_total, t);
        let mut theta_new = state.theta_mirror.clone();
        for &m in &selected {
            let down = Message::DownloadTilde {
                client_id: m,
                tilde_theta: tilde.block(m).to_owned(),
            };
            transcript.record(t as i64, &down);
            let up = clients[m].handle_download(&down, state.r, state.tau, m_total)?;
            transcript.record(t as i64, &up);
            if let Message::UploadTheta { client_id, theta } = up {
                theta_new.block_mut(client_id).assign(&theta);
            }
        }
        let theta_step = frob_diff(theta_new.matrix(), state.theta_mirror.matrix());
        let p_new = p_update(&state, &theta_new, &pair)?;
        let dual_gap = frob_diff(p_new.matrix(), state.p_aux.matrix());
        let g_new = g_update(&state, &theta_new, &p_new)?;
        let primal_residual = frob_diff(
            apply_a(state.layout(), &theta_new)?.matrix(),
            p_new.matrix(),
        );
        state.p_aux = p_new;
        state.g_dual = g_new;
        state.theta_mirror = theta_new;
        let f = loss(&state.theta_mirror, clients.iter().map(|c| &c.dataset))?;
        let lagrangian = lagrangian_terms(&state, &state.theta_mirror, f, &pair)?;
        let report = RoundReport {
            round: t,
            primal_residual,
            dual_gap,
            theta_step,
            lagrangian,
            loss: f,
        };
        if !state.theta_mirror.is_finite() || !report.lagrangian.is_finite() {
            return Err(RowFedError::NumericalFailure(format!(
                "non-finite iterate at round {t}"
            )));
        }
        reports.push(report);
        if config.early_stop
            && primal_residual < config.primal_tol
            && theta_step < config.step_tol
        {
            break;
        }
        rho_schedule(&mut state)?;
    }
    Ok((state.theta_mirror.clone(), reports, transcript))
}
