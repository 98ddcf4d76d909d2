//! Geometry reports: per-user curvature, holonomy spectrum invariants, and
//! exposure-entropy proxy, with aggregates and provenance, plus the CSV and
//! plot-data export formats.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write as _};
use std::path::Path;

use ndarray::Array1;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::fiber::{Connection, FiberModel};
use crate::geometry::{curvature, holonomy_record, pearson, shannon_entropy};
use crate::ingest::{InteractionDataset, UserGraph};
use crate::transport::attention_coeffs;

/// Number of top items in the static-mode entropy proxy.
pub const ENTROPY_TOP_K: usize = 10;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UserRow {
    pub user: usize,
    /// Absent for users with no graph neighbors.
    pub omega: Option<f64>,
    pub rho: f64,
    pub gbi: f64,
    pub entropy: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeometryReport {
    pub dataset: String,
    pub model: String,
    pub mean_omega: f64,
    pub mean_rho: f64,
    pub mean_gbi: f64,
    pub mean_entropy: f64,
    pub pearson_gbi_entropy: Option<f64>,
    pub pearson_rho_entropy: Option<f64>,
    pub per_user: Vec<UserRow>,
    /// Config, seed, and toolkit version, so every number is regenerable.
    pub provenance: Value,
}

/// Static diagnosis over a dataset: per user, roll the full sequence,
/// curvature from the end state against transported neighbor end states,
/// holonomy spectrum over the path's Jacobians, and entropy of the top-10
/// renormalized softmax over next-item logits.
pub fn diagnose(
    model: &FiberModel,
    conn: &Connection,
    ds: &InteractionDataset,
    graph: &UserGraph,
    dataset_name: &str,
    model_name: &str,
    provenance: Value,
) -> Result<GeometryReport> {
    if graph.neighbors.len() != ds.n_users {
        return Err(Error::Data("diagnose: graph/dataset user count mismatch".into()));
    }
    if ds.sequences.iter().any(|s| s.is_empty()) {
        return Err(Error::Data("diagnose: empty user sequence".into()));
    }

    let mut end_states: Vec<Array1<f64>> = Vec::with_capacity(ds.n_users);
    let mut rows: Vec<UserRow> = Vec::with_capacity(ds.n_users);
    for (u, seq) in ds.sequences.iter().enumerate() {
        let items: Vec<usize> = seq.iter().map(|&(i, _)| i).collect();
        let traj = model.roll(&items)?;
        let log_dets: Vec<f64> = traj.states[1..]
            .iter()
            .map(|f| model.log_abs_det_jacobian(f))
            .collect();
        let hol = holonomy_record(&traj.jacobians, &log_dets)?;
        let entropy = top_k_entropy(&model.score(traj.end_state()), ENTROPY_TOP_K)?;
        end_states.push(traj.end_state().clone());
        rows.push(UserRow { user: u, omega: None, rho: hol.rho, gbi: hol.gbi, entropy });
    }
    for u in 0..ds.n_users {
        let nbr_states: Vec<(usize, Array1<f64>)> = graph.neighbors[u]
            .iter()
            .map(|&(v, _)| (v, end_states[v].clone()))
            .collect();
        let alphas = attention_coeffs(&end_states[u], &nbr_states, conn.tau)?;
        if alphas.is_empty() {
            continue;
        }
        let weighted: Vec<(f64, Array1<f64>)> = alphas
            .entries
            .iter()
            .map(|&(v, a)| (a, end_states[v].clone()))
            .collect();
        rows[u].omega = Some(curvature(&end_states[u], &weighted, &conn.transport)?);
    }

    let n = rows.len() as f64;
    let omegas: Vec<f64> = rows.iter().filter_map(|r| r.omega).collect();
    let mean_omega = if omegas.is_empty() {
        f64::NAN
    } else {
        omegas.iter().sum::<f64>() / omegas.len() as f64
    };
    let gbis: Vec<f64> = rows.iter().map(|r| r.gbi).collect();
    let rhos: Vec<f64> = rows.iter().map(|r| r.rho).collect();
    let ents: Vec<f64> = rows.iter().map(|r| r.entropy).collect();
    Ok(GeometryReport {
        dataset: dataset_name.to_string(),
        model: model_name.to_string(),
        mean_omega,
        mean_rho: rhos.iter().sum::<f64>() / n,
        mean_gbi: gbis.iter().sum::<f64>() / n,
        mean_entropy: ents.iter().sum::<f64>() / n,
        pearson_gbi_entropy: pearson(&gbis, &ents).ok(),
        pearson_rho_entropy: pearson(&rhos, &ents).ok(),
        per_user: rows,
        provenance,
    })
}

/// Entropy of the top-k renormalized softmax over logits.
fn top_k_entropy(logits: &Array1<f64>, k: usize) -> Result<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = logits.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = probs.iter().sum();
    for p in probs.iter_mut() {
        *p /= total;
    }
    probs.sort_by(|a, b| b.partial_cmp(a).unwrap());
    probs.truncate(k);
    let head: f64 = probs.iter().sum();
    for p in probs.iter_mut() {
        *p /= head;
    }
    shannon_entropy(&probs)
}

pub fn write_report_json(report: &GeometryReport, path: &Path) -> Result<()> {
    let file = File::create(path)
        .map_err(|e| Error::Io { path: path.display().to_string(), source: e })?;
    serde_json::to_writer_pretty(BufWriter::new(file), report)
        .map_err(|e| Error::Data(format!("report serialization failed: {e}")))?;
    Ok(())
}

pub fn read_report_json(path: &Path) -> Result<GeometryReport> {
    let file = File::open(path)
        .map_err(|e| Error::Io { path: path.display().to_string(), source: e })?;
    serde_json::from_reader(BufReader::new(file))
        .map_err(|e| Error::Data(format!("{}: bad report JSON: {e}", path.display())))
}

/// CSV rows `user,omega,rho,gbi,entropy`; absent omega prints empty.
/// Values carry 12 significant digits.
pub fn report_to_csv(report: &GeometryReport) -> String {
    let mut out = String::from("user,omega,rho,gbi,entropy\n");
    for r in &report.per_user {
        let omega = r.omega.map_or(String::new(), |o| format!("{o:.11e}"));
        out.push_str(&format!(
            "{},{},{:.11e},{:.11e},{:.11e}\n",
            r.user, omega, r.rho, r.gbi, r.entropy
        ));
    }
    out
}

/// Two-column whitespace-separated pair data, one file per pair:
/// (gbi, entropy) and (rho, entropy).
pub fn write_plotdata(report: &GeometryReport, out_prefix: &Path) -> Result<()> {
    let write_pairs = |suffix: &str, xs: Vec<f64>| -> Result<()> {
        let path = out_prefix.with_extension(suffix);
        let mut file = File::create(&path)
            .map_err(|e| Error::Io { path: path.display().to_string(), source: e })?;
        let mut body = String::new();
        for (x, r) in xs.iter().zip(report.per_user.iter()) {
            body.push_str(&format!("{:.17e} {:.17e}\n", x, r.entropy));
        }
        file.write_all(body.as_bytes())
            .map_err(|e| Error::Io { path: path.display().to_string(), source: e })?;
        Ok(())
    };
    write_pairs("gbi_entropy.dat", report.per_user.iter().map(|r| r.gbi).collect())?;
    write_pairs("rho_entropy.dat", report.per_user.iter().map(|r| r.rho).collect())?;
    Ok(())
}
