//! Geometric invariants of the feedback loop: connection curvature,
//! holonomy as the ordered product of update Jacobians, eigen-moduli,
//! spectral radius, the Geometric Bias Index, and exposure entropy.

use std::collections::HashMap;

use ndarray::{Array1, Array2};

use crate::eigen::eigen_moduli_impl;
use crate::error::{Error, Result};
use crate::linalg::l2_norm;

/// Holonomy matrix with its derived scalar invariants.
#[derive(Debug, Clone)]
pub struct HolonomyRecord {
    pub holonomy: Array2<f64>,
    /// Eigenvalue moduli, sorted descending.
    pub eigen_moduli: Vec<f64>,
    /// Spectral radius: the largest modulus.
    pub rho: f64,
    /// Geometric Bias Index: 1 - mean modulus. Never clamped.
    pub gbi: f64,
    /// Sum of per-step log|det J_t| (avoids underflow of the raw product).
    pub log_abs_det: f64,
}

/// Per-user curvature with its population mean over users that have
/// at least one neighbor.
#[derive(Debug, Clone, Default)]
pub struct CurvatureReport {
    pub per_user: HashMap<usize, f64>,
    pub mean_omega: f64,
}

/// Local alignment-residual curvature:
/// omega_u = (1/|N(u)|) sum_v alpha_uv * ||f_u - W f_v||_2.
pub fn curvature(
    f_u: &Array1<f64>,
    neighbors: &[(f64, Array1<f64>)],
    transport: &Array2<f64>,
) -> Result<f64> {
    if neighbors.is_empty() {
        return Err(Error::Data(
            "curvature undefined for a user with no neighbors".into(),
        ));
    }
    let total: f64 = neighbors
        .iter()
        .map(|(alpha, f_v)| {
            let residual = f_u - &transport.dot(f_v);
            alpha * l2_norm(&residual)
        })
        .sum();
    Ok(total / neighbors.len() as f64)
}

/// Ordered Jacobian product H = J_T ... J_1 (later steps on the left).
pub fn holonomy(jacobians: &[Array2<f64>]) -> Result<Array2<f64>> {
    let first = jacobians
        .first()
        .ok_or_else(|| Error::Data("holonomy of an empty Jacobian list".into()))?;
    let d = first.nrows();
    if first.ncols() != d {
        return Err(Error::Data("holonomy: non-square Jacobian".into()));
    }
    let mut h = first.clone();
    for jac in &jacobians[1..] {
        if jac.nrows() != d || jac.ncols() != d {
            return Err(Error::Data(format!(
                "holonomy: dimension mismatch ({}x{} after {d}x{d})",
                jac.nrows(),
                jac.ncols()
            )));
        }
        h = jac.dot(&h);
    }
    Ok(h)
}

/// Eigenvalue moduli of a real square matrix, sorted descending.
pub fn eigen_moduli(h: &Array2<f64>) -> Result<Vec<f64>> {
    let moduli = eigen_moduli_impl(h)?;
    // rho <= sum |lambda_k| <= d * rho holds for every valid spectrum
    debug_assert!({
        let rho = moduli[0];
        let sum: f64 = moduli.iter().sum();
        sum >= rho - 1e-12 && sum <= moduli.len() as f64 * rho + 1e-12
    });
    Ok(moduli)
}

/// Spectral radius: the maximum modulus.
pub fn spectral_radius(moduli: &[f64]) -> f64 {
    assert!(!moduli.is_empty(), "spectral_radius of empty moduli");
    moduli.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
}

/// Geometric Bias Index: 1 - (1/d) sum |lambda_k|. Reported raw; negative
/// values flag expansive dynamics.
pub fn gbi(moduli: &[f64], d: usize) -> f64 {
    assert_eq!(moduli.len(), d, "gbi: moduli length must equal d");
    1.0 - moduli.iter().sum::<f64>() / d as f64
}

/// Full holonomy record for a path, given its per-step Jacobians and the
/// closed-form per-step log|det J_t| values.
pub fn holonomy_record(jacobians: &[Array2<f64>], log_dets: &[f64]) -> Result<HolonomyRecord> {
    let h = holonomy(jacobians)?;
    let moduli = eigen_moduli(&h)?;
    let d = h.nrows();
    Ok(HolonomyRecord {
        rho: spectral_radius(&moduli),
        gbi: gbi(&moduli, d),
        log_abs_det: log_dets.iter().sum(),
        holonomy: h,
        eigen_moduli: moduli,
    })
}

/// Shannon entropy in nats, with 0 ln 0 := 0.
pub fn shannon_entropy(p: &[f64]) -> Result<f64> {
    if p.iter().any(|&x| x < 0.0) {
        return Err(Error::Data("shannon_entropy: negative probability".into()));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Data(format!(
            "shannon_entropy: probabilities sum to {total}, not 1"
        )));
    }
    Ok(p.iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| -x * x.ln())
        .sum())
}

/// Empirical item-frequency distribution over the full catalog.
pub fn exposure_distribution(exposures: &[usize], n_items: usize) -> Result<Vec<f64>> {
    if exposures.is_empty() {
        return Err(Error::Data("exposure_distribution: empty multiset".into()));
    }
    let mut counts = vec![0usize; n_items];
    for &item in exposures {
        if item >= n_items {
            return Err(Error::Data(format!(
                "exposure_distribution: item {item} out of range"
            )));
        }
        counts[item] += 1;
    }
    let total = exposures.len() as f64;
    Ok(counts.into_iter().map(|c| c as f64 / total).collect())
}

/// Standard Pearson correlation coefficient.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 3 {
        return Err(Error::Data(
            "pearson: inputs must have equal length >= 3".into(),
        ));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys.iter()) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Data("pearson: zero variance".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}
