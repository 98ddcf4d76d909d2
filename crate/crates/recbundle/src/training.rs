//! Next-item training of the fiber model with geometric regularizers.
//!
//! The objective is
//! `L_total = L_task + lambda_curv * mean_u omega_u + lambda_hol * hol`,
//! where the curvature term is evaluated on end-of-sequence fiber states
//! (refreshed every `curvature_every` epochs and treated as constants, so
//! its gradient flows into the transport matrix W only) and the holonomy
//! term penalizes per-step Jacobians, either through `(log|det J_t|)^2`
//! (closed form) or `(sigma_max(J_t) - 1)^2`.
//!
//! Optimization is full-batch deterministic gradient descent; gradients are
//! backpropagated through the recurrence in chunks of `bptt_window` steps
//! (chunk-initial states are detached).

use std::fmt;
use std::fs::File;
use std::io::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::fiber::{init_model, Connection, FiberModel};
use crate::geometry::{self, holonomy_record};
use crate::ingest::{InteractionDataset, UserGraph};
use crate::linalg::{self, l2_norm, top_singular_triplet};
use crate::transport::attention_coeffs;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HolMode {
    Logdet,
    Spectral,
    Off,
}

impl std::str::FromStr for HolMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logdet" => Ok(HolMode::Logdet),
            "spectral" => Ok(HolMode::Spectral),
            "off" => Ok(HolMode::Off),
            other => Err(Error::Usage(format!("unknown hol-mode '{other}'"))),
        }
    }
}

impl fmt::Display for HolMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HolMode::Logdet => write!(f, "logdet"),
            HolMode::Spectral => write!(f, "spectral"),
            HolMode::Off => write!(f, "off"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub dim: usize,
    pub epochs: usize,
    pub step_size: f64,
    pub lambda_curv: f64,
    pub lambda_hol: f64,
    pub hol_mode: HolMode,
    pub seed: u64,
    /// Epochs between refreshes of the frozen curvature fiber states.
    pub curvature_every: usize,
    pub bptt_window: usize,
    /// Attention temperature of the learned connection.
    pub tau: f64,
}

impl TrainConfig {
    pub fn new(dim: usize, epochs: usize, seed: u64) -> Self {
        TrainConfig {
            dim,
            epochs,
            step_size: 0.1,
            lambda_curv: 0.0,
            lambda_hol: 0.0,
            hol_mode: HolMode::Off,
            seed,
            curvature_every: 1,
            bptt_window: 50,
            tau: 1.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.step_size <= 0.0 {
            return Err(Error::Usage("step_size must be positive".into()));
        }
        if self.bptt_window < 1 {
            return Err(Error::Usage("bptt_window must be >= 1".into()));
        }
        if self.curvature_every < 1 {
            return Err(Error::Usage("curvature_every must be >= 1".into()));
        }
        if self.lambda_curv < 0.0 || self.lambda_hol < 0.0 {
            return Err(Error::Usage("regularizer weights must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub task_loss: f64,
    pub curvature_term: f64,
    pub holonomy_term: f64,
    pub mean_omega: f64,
    pub mean_gbi: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainTrace {
    pub epochs: Vec<EpochRecord>,
}

impl TrainTrace {
    /// CSV export: `epoch,task_loss,curvature_term,holonomy_term,mean_omega,mean_gbi`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("epoch,task_loss,curvature_term,holonomy_term,mean_omega,mean_gbi\n");
        for r in &self.epochs {
            out.push_str(&format!(
                "{},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}\n",
                r.epoch, r.task_loss, r.curvature_term, r.holonomy_term, r.mean_omega, r.mean_gbi
            ));
        }
        let mut file = File::create(path)
            .map_err(|e| Error::Io { path: path.display().to_string(), source: e })?;
        file.write_all(out.as_bytes())
            .map_err(|e| Error::Io { path: path.display().to_string(), source: e })?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Individual loss terms (also exposed as standalone operations)
// ---------------------------------------------------------------------------

/// Softmax cross-entropy and its gradient w.r.t. the logits.
fn softmax_ce(logits: &Array1<f64>, target: usize) -> (f64, Array1<f64>) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps = logits.mapv(|x| (x - max).exp());
    let total: f64 = exps.iter().sum();
    let loss = total.ln() - (logits[target] - max);
    let mut grad = exps / total;
    grad[target] -= 1.0;
    (loss, grad)
}

/// Mean next-item cross-entropy over positions 1..T-1 of one sequence.
pub fn task_loss(model: &FiberModel, sequence: &[usize]) -> Result<f64> {
    if sequence.len() < 2 {
        return Err(Error::Data("task_loss: sequence shorter than 2".into()));
    }
    let traj = model.roll(sequence)?;
    let mut total = 0.0;
    for t in 1..sequence.len() {
        let (loss, _) = softmax_ce(&model.score(&traj.states[t]), sequence[t]);
        total += loss;
    }
    Ok(total / (sequence.len() - 1) as f64)
}

/// Frozen per-user fiber states and attention coefficients used by the
/// curvature term between refreshes.
#[derive(Debug, Clone)]
pub struct CurvatureContext {
    pub end_states: Vec<Array1<f64>>,
    /// Per user: (neighbor index, alpha), cosine-softmax over neighbor end states.
    pub attention: Vec<Vec<(usize, f64)>>,
}

impl CurvatureContext {
    pub fn build(
        model: &FiberModel,
        conn: &Connection,
        ds: &InteractionDataset,
        graph: &UserGraph,
    ) -> Result<Self> {
        let mut end_states = Vec::with_capacity(ds.n_users);
        for seq in &ds.sequences {
            let items: Vec<usize> = seq.iter().map(|&(i, _)| i).collect();
            end_states.push(model.roll(&items)?.end_state().clone());
        }
        let mut attention = Vec::with_capacity(ds.n_users);
        for u in 0..ds.n_users {
            let nbr_states: Vec<(usize, Array1<f64>)> = graph.neighbors[u]
                .iter()
                .map(|&(v, _)| (v, end_states[v].clone()))
                .collect();
            let set = attention_coeffs(&end_states[u], &nbr_states, conn.tau)?;
            attention.push(set.entries);
        }
        Ok(CurvatureContext { end_states, attention })
    }
}

/// Mean curvature over users with at least one neighbor, on the frozen
/// context states with the current transport matrix.
pub fn curvature_loss(conn: &Connection, ctx: &CurvatureContext) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for (u, entries) in ctx.attention.iter().enumerate() {
        if entries.is_empty() {
            continue;
        }
        let nbrs: Vec<(f64, Array1<f64>)> = entries
            .iter()
            .map(|&(v, alpha)| (alpha, ctx.end_states[v].clone()))
            .collect();
        total += geometry::curvature(&ctx.end_states[u], &nbrs, &conn.transport)?;
        count += 1;
    }
    if count == 0 {
        return Err(Error::Data("curvature_loss: no user has neighbors".into()));
    }
    Ok(total / count as f64)
}

/// Volume-preservation penalty over one trajectory's Jacobians.
///
/// logdet mode uses the closed form `log|det J_t| = log|det A| + sum_i
/// log(1 - f_t_i^2)`; spectral mode computes sigma_max(J_t) through the
/// eigen solver on J^T J.
pub fn holonomy_loss(
    model: &FiberModel,
    states: &[Array1<f64>],
    jacobians: &[Array2<f64>],
    mode: HolMode,
) -> Result<f64> {
    if mode == HolMode::Off {
        return Err(Error::Usage("holonomy_loss called with mode off".into()));
    }
    if jacobians.is_empty() {
        return Err(Error::Data("holonomy_loss: no steps".into()));
    }
    match mode {
        HolMode::Logdet => {
            let det_a = linalg::det(&model.recurrence);
            if det_a == 0.0 {
                return Err(Error::Numeric(
                    "holonomy_loss: det A = 0, log-det penalty is infinite at step 0".into(),
                ));
            }
            let mut total = 0.0;
            for (t, f_next) in states[1..].iter().enumerate() {
                let ld = model.log_abs_det_jacobian(f_next);
                if !ld.is_finite() {
                    return Err(Error::Numeric(format!(
                        "holonomy_loss: det J = 0 at step {t}, log-det penalty is infinite"
                    )));
                }
                total += ld * ld;
            }
            Ok(total / jacobians.len() as f64)
        }
        HolMode::Spectral => {
            let mut total = 0.0;
            for jac in jacobians {
                let gram = jac.t().dot(jac);
                let moduli = geometry::eigen_moduli(&gram)?;
                let sigma = moduli[0].max(0.0).sqrt();
                total += (sigma - 1.0) * (sigma - 1.0);
            }
            Ok(total / jacobians.len() as f64)
        }
        HolMode::Off => unreachable!(),
    }
}

// ---------------------------------------------------------------------------
// Batch evaluation with analytic gradients
// ---------------------------------------------------------------------------

/// Gradient of `L_total` w.r.t. every parameter block.
#[derive(Debug, Clone)]
pub struct Grads {
    pub embeddings: Array2<f64>,
    pub recurrence: Array2<f64>,
    pub input_map: Array2<f64>,
    pub bias: Array1<f64>,
    pub transport: Array2<f64>,
}

impl Grads {
    fn zeros(model: &FiberModel) -> Self {
        Grads {
            embeddings: Array2::zeros(model.embeddings.dim()),
            recurrence: Array2::zeros((model.d, model.d)),
            input_map: Array2::zeros((model.d, model.d)),
            bias: Array1::zeros(model.d),
            transport: Array2::zeros((model.d, model.d)),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BatchEval {
    pub task_loss: f64,
    /// Raw mean curvature (before lambda weighting).
    pub mean_omega: f64,
    /// Raw mean holonomy penalty (before lambda weighting).
    pub holonomy: f64,
    pub total: f64,
}

/// Full-batch `L_total` and its analytic gradients under a frozen curvature
/// context. The curvature term treats the context states as constants, so
/// its gradient reaches only the transport matrix.
pub fn evaluate_with_grads(
    model: &FiberModel,
    conn: &Connection,
    ds: &InteractionDataset,
    ctx: &CurvatureContext,
    cfg: &TrainConfig,
) -> Result<(BatchEval, Grads)> {
    let d = model.d;
    let n_users = ds.n_users as f64;
    let mut grads = Grads::zeros(model);
    let mut task_total = 0.0;
    let mut hol_total = 0.0;

    let use_hol = cfg.hol_mode != HolMode::Off && cfg.lambda_hol > 0.0;
    let (log_det_a, inv_a_t) = if use_hol && cfg.hol_mode == HolMode::Logdet {
        let det_a = linalg::det(&model.recurrence);
        if det_a == 0.0 {
            return Err(Error::Numeric("det A = 0: log-det penalty is infinite".into()));
        }
        (det_a.abs().ln(), Some(linalg::inverse(&model.recurrence)?.t().to_owned()))
    } else {
        (0.0, None)
    };

    for (u, seq) in ds.sequences.iter().enumerate() {
        let items: Vec<usize> = seq.iter().map(|&(i, _)| i).collect();
        let t_len = items.len();
        if t_len < 2 {
            return Err(Error::Data(format!("user {u}: sequence shorter than 2")));
        }
        let wt_task = 1.0 / (n_users * (t_len - 1) as f64);
        let wt_hol = cfg.lambda_hol / (n_users * t_len as f64);

        let traj = model.roll(&items)?;

        // dL/df_t for every state index t in 1..=T
        let mut state_grads: Vec<Array1<f64>> = vec![Array1::zeros(d); t_len + 1];

        for t in 1..=t_len {
            let f_t = &traj.states[t];
            // task CE: predict items[t] from f_t, for t <= T-1
            if t < t_len {
                let (loss, g_logits) = softmax_ce(&model.score(f_t), items[t]);
                task_total += wt_task * loss;
                let g = g_logits * wt_task;
                // dL/dE += g (outer) f_t ; dL/df_t += E^T g
                for (i, gi) in g.iter().enumerate() {
                    if *gi != 0.0 {
                        for j in 0..d {
                            grads.embeddings[[i, j]] += gi * f_t[j];
                        }
                    }
                }
                state_grads[t] += &model.embeddings.t().dot(&g);
            }
            if use_hol {
                match cfg.hol_mode {
                    HolMode::Logdet => {
                        let sum_log: f64 = f_t.iter().map(|x| (1.0 - x * x).ln()).sum();
                        let ld = log_det_a + sum_log;
                        if !ld.is_finite() {
                            return Err(Error::Numeric(format!(
                                "det J = 0 at user {u} step {}: log-det penalty is infinite",
                                t - 1
                            )));
                        }
                        hol_total += (ld * ld) / (n_users * t_len as f64);
                        let coeff = wt_hol * 2.0 * ld;
                        for i in 0..d {
                            state_grads[t][i] += coeff * (-2.0 * f_t[i] / (1.0 - f_t[i] * f_t[i]));
                        }
                        grads.recurrence += &(inv_a_t.as_ref().unwrap() * coeff);
                    }
                    HolMode::Spectral => {
                        let jac = &traj.jacobians[t - 1];
                        let (sigma, u_vec, v_vec) = top_singular_triplet(jac);
                        hol_total += (sigma - 1.0) * (sigma - 1.0) / (n_users * t_len as f64);
                        let coeff = wt_hol * 2.0 * (sigma - 1.0);
                        // J = D A with D = diag(1 - f^2):
                        // dsigma/dA = D u v^T, dsigma/df_i = -2 f_i u_i (A v)_i
                        let av = model.recurrence.dot(&v_vec);
                        for i in 0..d {
                            let gain = 1.0 - f_t[i] * f_t[i];
                            for j in 0..d {
                                grads.recurrence[[i, j]] += coeff * gain * u_vec[i] * v_vec[j];
                            }
                            state_grads[t][i] += coeff * (-2.0 * f_t[i] * u_vec[i] * av[i]);
                        }
                    }
                    HolMode::Off => unreachable!(),
                }
            }
        }

        // truncated BPTT: backward pass, detached at chunk boundaries
        // (state indices that are multiples of the window).
        let mut carried = Array1::<f64>::zeros(d);
        for t in (1..=t_len).rev() {
            let f_t = &traj.states[t];
            let f_prev = &traj.states[t - 1];
            let df = &state_grads[t] + &carried;
            // dL/dz = df * (1 - f_t^2)
            let dz = Array1::from_shape_fn(d, |i| df[i] * (1.0 - f_t[i] * f_t[i]));
            let e_in = model.embeddings.row(items[t - 1]);
            for i in 0..d {
                if dz[i] != 0.0 {
                    for j in 0..d {
                        grads.recurrence[[i, j]] += dz[i] * f_prev[j];
                        grads.input_map[[i, j]] += dz[i] * e_in[j];
                    }
                }
            }
            grads.bias += &dz;
            let de = model.input_map.t().dot(&dz);
            for j in 0..d {
                grads.embeddings[[items[t - 1], j]] += de[j];
            }
            if (t - 1) % cfg.bptt_window == 0 {
                carried.fill(0.0);
            } else {
                carried = model.recurrence.t().dot(&dz);
            }
        }
    }

    // curvature term: frozen states, gradient into W only
    let mut omega_total = 0.0;
    let mut omega_count = 0usize;
    for (u, entries) in ctx.attention.iter().enumerate() {
        if entries.is_empty() {
            continue;
        }
        let f_u = &ctx.end_states[u];
        let inv_n = 1.0 / entries.len() as f64;
        let mut omega_u = 0.0;
        for &(v, alpha) in entries {
            let f_v = &ctx.end_states[v];
            let residual = f_u - &conn.transport.dot(f_v);
            let norm = l2_norm(&residual);
            omega_u += alpha * norm;
            if cfg.lambda_curv > 0.0 && norm > 0.0 {
                // d||r||/dW = -(r/||r||) f_v^T, weighted into the batch mean
                let scale = cfg.lambda_curv * alpha * inv_n / norm;
                for i in 0..d {
                    for j in 0..d {
                        grads.transport[[i, j]] -= scale * residual[i] * f_v[j];
                    }
                }
            }
        }
        omega_total += omega_u * inv_n;
        omega_count += 1;
    }
    let mean_omega = if omega_count > 0 {
        omega_total / omega_count as f64
    } else if cfg.lambda_curv > 0.0 {
        return Err(Error::Data("curvature_loss: no user has neighbors".into()));
    } else {
        0.0
    };
    if omega_count > 0 && cfg.lambda_curv > 0.0 {
        // the per-user 1/count factor of the batch mean
        grads.transport /= omega_count as f64;
    }

    let eval = BatchEval {
        task_loss: task_total,
        mean_omega,
        holonomy: hol_total,
        total: task_total + cfg.lambda_curv * mean_omega + cfg.lambda_hol * hol_total,
    };
    Ok((eval, grads))
}

/// Mean GBI over users, from each user's full-path holonomy spectrum.
pub fn mean_gbi(model: &FiberModel, ds: &InteractionDataset) -> Result<f64> {
    let mut total = 0.0;
    for seq in &ds.sequences {
        let items: Vec<usize> = seq.iter().map(|&(i, _)| i).collect();
        let traj = model.roll(&items)?;
        let log_dets: Vec<f64> = traj.states[1..]
            .iter()
            .map(|f| model.log_abs_det_jacobian(f))
            .collect();
        let rec = holonomy_record(&traj.jacobians, &log_dets)?;
        total += rec.gbi;
    }
    Ok(total / ds.n_users as f64)
}

/// Full-batch gradient descent on `L_total`. Deterministic: identical
/// config and data give an identical trace.
pub fn train(
    ds: &InteractionDataset,
    graph: &UserGraph,
    cfg: &TrainConfig,
) -> Result<(FiberModel, Connection, TrainTrace)> {
    cfg.validate()?;
    if ds.n_users == 0 {
        return Err(Error::Data("train: empty dataset".into()));
    }
    if let Some(u) = ds.sequences.iter().position(|s| s.len() < 2) {
        return Err(Error::Data(format!("train: user {u} has sequence length < 2")));
    }
    if graph.neighbors.len() != ds.n_users {
        return Err(Error::Data("train: graph/dataset user count mismatch".into()));
    }

    let mut model = init_model(ds.n_items, cfg.dim, cfg.seed)?;
    let mut conn = Connection::identity(cfg.dim, cfg.tau)?;
    let mut trace = TrainTrace::default();
    let mut ctx = CurvatureContext::build(&model, &conn, ds, graph)?;
    let mut initial_task: Option<f64> = None;

    for epoch in 0..cfg.epochs {
        if epoch > 0 && epoch % cfg.curvature_every == 0 {
            ctx = CurvatureContext::build(&model, &conn, ds, graph)?;
        }
        let (eval, grads) = evaluate_with_grads(&model, &conn, ds, &ctx, cfg)?;
        if !eval.total.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss at epoch {epoch}")));
        }
        let first = *initial_task.get_or_insert(eval.task_loss);
        if eval.task_loss > 10.0 * first {
            return Err(Error::Numeric(format!(
                "divergence guard: task loss {} exceeds 10x initial {} at epoch {epoch}",
                eval.task_loss, first
            )));
        }
        trace.epochs.push(EpochRecord {
            epoch,
            task_loss: eval.task_loss,
            curvature_term: cfg.lambda_curv * eval.mean_omega,
            holonomy_term: cfg.lambda_hol * eval.holonomy,
            mean_omega: eval.mean_omega,
            mean_gbi: mean_gbi(&model, ds)?,
        });

        model.embeddings -= &(&grads.embeddings * cfg.step_size);
        model.recurrence -= &(&grads.recurrence * cfg.step_size);
        model.input_map -= &(&grads.input_map * cfg.step_size);
        model.bias -= &(&grads.bias * cfg.step_size);
        conn.transport -= &(&grads.transport * cfg.step_size);
    }
    Ok((model, conn, trace))
}
