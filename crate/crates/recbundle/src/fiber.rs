//! Reference sequential recommender: item embeddings plus a tanh recurrence
//! over each user's fiber state.
//!
//! The update law is `f_next = tanh(A f + B e_item + b)`, chosen so the
//! per-step Jacobian is available in closed form:
//! `J = diag(1 - f_next^2) A`, and
//! `det J = det(A) * prod_i (1 - f_next_i^2)`.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone, PartialEq)]
pub struct FiberModel {
    pub d: usize,
    pub n_items: usize,
    /// n_items x d item embeddings, rows e_i.
    pub embeddings: Array2<f64>,
    /// d x d recurrence map.
    pub recurrence: Array2<f64>,
    /// d x d input map.
    pub input_map: Array2<f64>,
    /// d bias.
    pub bias: Array1<f64>,
}

/// States f_0..f_T and exact Jacobians J_1..J_T along one user sequence.
#[derive(Debug, Clone)]
pub struct FiberTrajectory {
    pub states: Vec<Array1<f64>>,
    pub jacobians: Vec<Array2<f64>>,
}

impl FiberTrajectory {
    pub fn end_state(&self) -> &Array1<f64> {
        self.states.last().expect("trajectory has at least f_0")
    }
}

fn check_dim(d: usize) -> Result<()> {
    if !(2..=256).contains(&d) {
        return Err(Error::Usage(format!("fiber dimension {d} outside [2, 256]")));
    }
    Ok(())
}

/// Seeded Gaussian init: E, A, B entries i.i.d. normal with variance 1/d,
/// bias zero. Identical seed gives identical parameters.
pub fn init_model(n_items: usize, d: usize, seed: u64) -> Result<FiberModel> {
    check_dim(d)?;
    if n_items == 0 {
        return Err(Error::Usage("n_items must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std = 1.0 / (d as f64).sqrt(); // entry variance 1/d
    let normal = Normal::new(0.0, std).expect("valid std");
    let mut draw = |shape: (usize, usize)| {
        Array2::from_shape_fn(shape, |_| normal.sample(&mut rng))
    };
    let embeddings = draw((n_items, d));
    let recurrence = draw((d, d));
    let input_map = draw((d, d));
    Ok(FiberModel {
        d,
        n_items,
        embeddings,
        recurrence,
        input_map,
        bias: Array1::zeros(d),
    })
}

impl FiberModel {
    /// One recurrence step: next state and its exact Jacobian w.r.t. f.
    pub fn step(&self, f: &Array1<f64>, item: usize) -> Result<(Array1<f64>, Array2<f64>)> {
        if item >= self.n_items {
            return Err(Error::Data(format!(
                "item index {item} out of range (n_items = {})",
                self.n_items
            )));
        }
        let e = self.embeddings.row(item);
        let z = self.recurrence.dot(f) + self.input_map.dot(&e) + &self.bias;
        let f_next = z.mapv(f64::tanh);
        if f_next.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric("non-finite fiber state (parameter blow-up)".into()));
        }
        let gain = f_next.mapv(|x| 1.0 - x * x);
        let mut jac = self.recurrence.clone();
        for (i, g) in gain.iter().enumerate() {
            for j in 0..self.d {
                jac[[i, j]] *= g;
            }
        }
        Ok((f_next, jac))
    }

    /// Iterate the recurrence from f_0 = 0 over a whole sequence.
    pub fn roll(&self, sequence: &[usize]) -> Result<FiberTrajectory> {
        if sequence.is_empty() {
            return Err(Error::Data("roll: empty sequence".into()));
        }
        let mut states = Vec::with_capacity(sequence.len() + 1);
        let mut jacobians = Vec::with_capacity(sequence.len());
        states.push(Array1::zeros(self.d));
        for (pos, &item) in sequence.iter().enumerate() {
            let (f_next, jac) = self.step(states.last().unwrap(), item).map_err(|e| match e {
                Error::Numeric(msg) => Error::Numeric(format!("{msg} at position {pos}")),
                other => other,
            })?;
            states.push(f_next);
            jacobians.push(jac);
        }
        Ok(FiberTrajectory { states, jacobians })
    }

    /// Next-item logits: E . f.
    pub fn score(&self, f: &Array1<f64>) -> Array1<f64> {
        self.embeddings.dot(f)
    }

    /// Closed-form log|det J| for the Jacobian at state f_next:
    /// log|det A| + sum_i log(1 - f_next_i^2).
    pub fn log_abs_det_jacobian(&self, f_next: &Array1<f64>) -> f64 {
        let det_a = linalg::det(&self.recurrence);
        det_a.abs().ln() + f_next.iter().map(|x| (1.0 - x * x).ln()).sum::<f64>()
    }
}

/// Learned connection: shared transport matrix W and attention temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct Connection {
    pub transport: Array2<f64>,
    pub tau: f64,
}

impl Connection {
    /// Identity transport at a given temperature.
    pub fn identity(d: usize, tau: f64) -> Result<Self> {
        if tau <= 0.0 {
            return Err(Error::Usage("tau must be positive".into()));
        }
        Ok(Connection { transport: Array2::eye(d), tau })
    }
}

// ---------------------------------------------------------------------------
// Serialization: one JSON document {d, n_items, E, A, B, b, W, tau} with
// row-major flat arrays. The loader rejects shape mismatches.
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct ModelDoc {
    d: usize,
    n_items: usize,
    #[serde(rename = "E")]
    embeddings: Vec<f64>,
    #[serde(rename = "A")]
    recurrence: Vec<f64>,
    #[serde(rename = "B")]
    input_map: Vec<f64>,
    #[serde(rename = "b")]
    bias: Vec<f64>,
    #[serde(rename = "W")]
    transport: Vec<f64>,
    tau: f64,
}

pub fn save_model(model: &FiberModel, conn: &Connection, path: &Path) -> Result<()> {
    let doc = ModelDoc {
        d: model.d,
        n_items: model.n_items,
        embeddings: model.embeddings.iter().copied().collect(),
        recurrence: model.recurrence.iter().copied().collect(),
        input_map: model.input_map.iter().copied().collect(),
        bias: model.bias.to_vec(),
        transport: conn.transport.iter().copied().collect(),
        tau: conn.tau,
    };
    let file = File::create(path).map_err(|e| Error::Io { path: path.display().to_string(), source: e })?;
    serde_json::to_writer(BufWriter::new(file), &doc)
        .map_err(|e| Error::Data(format!("model serialization failed: {e}")))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<(FiberModel, Connection)> {
    let file = File::open(path).map_err(|e| Error::Io { path: path.display().to_string(), source: e })?;
    let doc: ModelDoc = serde_json::from_reader(BufReader::new(file))
        .map_err(|e| Error::Data(format!("{}: bad model JSON: {e}", path.display())))?;
    check_dim(doc.d)?;
    let shaped = |name: &str, data: Vec<f64>, rows: usize, cols: usize| -> Result<Array2<f64>> {
        Array2::from_shape_vec((rows, cols), data)
            .map_err(|_| Error::Data(format!("model field {name}: expected {rows}x{cols} entries")))
    };
    if doc.bias.len() != doc.d {
        return Err(Error::Data(format!("model field b: expected {} entries", doc.d)));
    }
    if doc.tau <= 0.0 {
        return Err(Error::Data("model field tau must be positive".into()));
    }
    let model = FiberModel {
        d: doc.d,
        n_items: doc.n_items,
        embeddings: shaped("E", doc.embeddings, doc.n_items, doc.d)?,
        recurrence: shaped("A", doc.recurrence, doc.d, doc.d)?,
        input_map: shaped("B", doc.input_map, doc.d, doc.d)?,
        bias: Array1::from_vec(doc.bias),
    };
    let conn = Connection {
        transport: shaped("W", doc.transport, doc.d, doc.d)?,
        tau: doc.tau,
    };
    Ok((model, conn))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    #[test]
    fn init_is_deterministic_per_seed() {
        let m1 = init_model(3, 2, 42).unwrap();
        let m2 = init_model(3, 2, 42).unwrap();
        assert_eq!(m1, m2);
        let m3 = init_model(3, 2, 43).unwrap();
        assert_ne!(m1, m3);
    }

    #[test]
    fn init_shapes() {
        let m = init_model(3, 2, 0).unwrap();
        assert_eq!(m.embeddings.dim(), (3, 2));
        assert_eq!(m.recurrence.dim(), (2, 2));
        assert_eq!(m.input_map.dim(), (2, 2));
        assert_eq!(m.bias.len(), 2);
    }

    #[test]
    fn init_rejects_bad_dimension() {
        assert!(init_model(3, 1, 0).is_err());
        assert!(init_model(3, 257, 0).is_err());
    }

    #[test]
    fn init_variance_is_one_over_d() {
        // 10^5 draws across E entries; sample variance within 5% of 1/d
        let d = 4;
        let m = init_model(25_000, d, 9).unwrap();
        let mean: f64 = m.embeddings.iter().sum::<f64>() / (25_000.0 * d as f64);
        let var: f64 =
            m.embeddings.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (25_000.0 * d as f64);
        let target = 1.0 / d as f64;
        assert!((var - target).abs() < 0.05 * target, "var {var} vs {target}");
    }

    #[test]
    fn zero_model_step() {
        let mut m = init_model(3, 2, 1).unwrap();
        m.recurrence.fill(0.0);
        m.input_map.fill(0.0);
        m.bias.fill(0.0);
        let (f, jac) = m.step(&array![0.3, -0.2], 0).unwrap();
        assert_eq!(f, array![0.0, 0.0]);
        assert_eq!(jac, Array2::<f64>::zeros((2, 2)));
    }

    #[test]
    fn identity_model_step_at_origin() {
        let mut m = init_model(3, 2, 1).unwrap();
        m.recurrence = Array2::eye(2);
        m.input_map.fill(0.0);
        m.bias.fill(0.0);
        let (f, jac) = m.step(&Array1::zeros(2), 0).unwrap();
        assert_eq!(f, array![0.0, 0.0]);
        assert_eq!(jac, Array2::<f64>::eye(2)); // tanh'(0) = 1
    }

    /// Central finite differences of step w.r.t. f, the independent
    /// Jacobian oracle.
    fn fd_jacobian(m: &FiberModel, f: &Array1<f64>, item: usize, h: f64) -> Array2<f64> {
        let d = m.d;
        let mut jac = Array2::zeros((d, d));
        for j in 0..d {
            let mut fp = f.clone();
            let mut fm = f.clone();
            fp[j] += h;
            fm[j] -= h;
            let (sp, _) = m.step(&fp, item).unwrap();
            let (sm, _) = m.step(&fm, item).unwrap();
            for i in 0..d {
                jac[[i, j]] = (sp[i] - sm[i]) / (2.0 * h);
            }
        }
        jac
    }

    fn rel_frobenius(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        let diff: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
        let norm: f64 = b.iter().map(|x| x * x).sum();
        (diff / norm.max(1e-300)).sqrt()
    }

    #[test]
    fn jacobian_matches_finite_differences_seed7() {
        let m = init_model(5, 4, 7).unwrap();
        let f = array![0.1, -0.3, 0.2, 0.05];
        let (_, jac) = m.step(&f, 2).unwrap();
        let fd = fd_jacobian(&m, &f, 2, 1e-5);
        assert!(rel_frobenius(&jac, &fd) < 1e-5);
    }

    #[test]
    fn jacobian_exactness_over_100_random_triples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        for _ in 0..100 {
            let d = 2 + (rng.random_range(0..4usize));
            let m = init_model(6, d, rng.random()).unwrap();
            let f = Array1::from_shape_fn(d, |_| rng.random_range(-0.9..0.9));
            let item = rng.random_range(0..6);
            let (_, jac) = m.step(&f, item).unwrap();
            let fd = fd_jacobian(&m, &f, item, 1e-5);
            assert!(rel_frobenius(&jac, &fd) < 1e-5);
        }
    }

    #[test]
    fn closed_form_determinant_matches_lu() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let m = init_model(4, 3, rng.random()).unwrap();
            let f = Array1::from_shape_fn(3, |_| rng.random_range(-0.9..0.9));
            let (f_next, jac) = m.step(&f, 1).unwrap();
            let lu_det = crate::linalg::det(&jac);
            let closed = crate::linalg::det(&m.recurrence)
                * f_next.iter().map(|x| 1.0 - x * x).product::<f64>();
            assert_relative_eq!(lu_det, closed, max_relative = 1e-10);
            // and the log form
            assert_relative_eq!(
                m.log_abs_det_jacobian(&f_next),
                lu_det.abs().ln(),
                max_relative = 1e-8
            );
        }
    }

    #[test]
    fn roll_length_one() {
        let m = init_model(3, 2, 2).unwrap();
        let traj = m.roll(&[1]).unwrap();
        assert_eq!(traj.states.len(), 2);
        assert_eq!(traj.jacobians.len(), 1);
        assert_eq!(traj.states[0], Array1::<f64>::zeros(2));
    }

    #[test]
    fn roll_equals_composed_steps() {
        let m = init_model(3, 2, 2).unwrap();
        let traj = m.roll(&[0, 2]).unwrap();
        let (f1, _) = m.step(&Array1::zeros(2), 0).unwrap();
        let (f2, _) = m.step(&f1, 2).unwrap();
        assert_eq!(traj.states[1], f1);
        assert_eq!(traj.states[2], f2);
    }

    #[test]
    fn roll_matches_straight_line_reimplementation() {
        // 3-line independent recurrence: f = tanh(A f + B e + b)
        let m = init_model(3, 4, 7).unwrap();
        let seq = [0usize, 1, 2];
        let traj = m.roll(&seq).unwrap();
        let mut f = Array1::<f64>::zeros(4);
        for (t, &item) in seq.iter().enumerate() {
            f = (m.recurrence.dot(&f) + m.input_map.dot(&m.embeddings.row(item)) + &m.bias)
                .mapv(f64::tanh);
            for i in 0..4 {
                assert_relative_eq!(traj.states[t + 1][i], f[i], epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn roll_is_pure() {
        let m = init_model(5, 3, 11).unwrap();
        let t1 = m.roll(&[0, 1, 2, 3]).unwrap();
        let t2 = m.roll(&[0, 1, 2, 3]).unwrap();
        assert_eq!(t1.states, t2.states);
        assert_eq!(t1.jacobians, t2.jacobians);
    }

    #[test]
    fn states_stay_inside_unit_box() {
        let m = init_model(5, 8, 3).unwrap();
        let traj = m.roll(&[0, 1, 2, 3, 4, 0, 1]).unwrap();
        for f in &traj.states[1..] {
            assert!(f.iter().all(|x| x.abs() < 1.0));
        }
    }

    #[test]
    fn score_is_row_dot_products() {
        let m = init_model(6, 3, 13).unwrap();
        let f = array![0.2, -0.4, 0.7];
        let logits = m.score(&f);
        assert_eq!(m.score(&Array1::zeros(3)), Array1::<f64>::zeros(6));
        for i in 0..6 {
            let oracle: f64 = (0..3).map(|j| m.embeddings[[i, j]] * f[j]).sum();
            assert_relative_eq!(logits[i], oracle, epsilon = 1e-12);
        }
    }

    #[test]
    fn score_argmax_geometry() {
        let mut m = init_model(3, 2, 1).unwrap();
        let f = array![0.6, 0.8];
        let norm2 = 1.0f64;
        m.embeddings = array![[-0.8, 0.6], [0.6 / norm2, 0.8 / norm2], [0.8, -0.6]];
        let logits = m.score(&f);
        let argmax = logits
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(argmax, 1);
    }

    #[test]
    fn model_json_roundtrip_and_shape_rejection() {
        let m = init_model(4, 3, 77).unwrap();
        let c = Connection::identity(3, 0.7).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        save_model(&m, &c, f.path()).unwrap();
        let (m2, c2) = load_model(f.path()).unwrap();
        assert_eq!(m, m2);
        assert_eq!(c, c2);

        // corrupt the shape: drop one entry from E
        let text = std::fs::read_to_string(f.path()).unwrap();
        let mut doc: serde_json::Value = serde_json::from_str(&text).unwrap();
        doc["E"].as_array_mut().unwrap().pop();
        let g = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(g.path(), serde_json::to_string(&doc).unwrap()).unwrap();
        assert!(load_model(g.path()).is_err());
    }
}
