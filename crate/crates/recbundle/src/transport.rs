//! The discrete connection: cosine-softmax attention coefficients and the
//! parallel-transport operator `P(f_v) = alpha * W * f_v`, plus a single
//! transport-based neighbor-aggregation layer.

use ndarray::Array1;

use crate::error::{Error, Result};
use crate::fiber::Connection;
use crate::linalg::cosine;

/// Normalized attention over a neighbor list; empty when there are no
/// neighbors. Non-empty sets sum to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionSet {
    pub entries: Vec<(usize, f64)>,
}

impl AttentionSet {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// alpha_v = softmax_v( cos(f_u, f_v) / tau ). Zero-norm vectors contribute
/// cosine 0; an empty neighbor list yields an empty set.
pub fn attention_coeffs(
    f_u: &Array1<f64>,
    neighbor_states: &[(usize, Array1<f64>)],
    tau: f64,
) -> Result<AttentionSet> {
    if tau <= 0.0 {
        return Err(Error::Usage("tau must be positive".into()));
    }
    if neighbor_states.is_empty() {
        return Ok(AttentionSet { entries: Vec::new() });
    }
    let scores: Vec<f64> = neighbor_states
        .iter()
        .map(|(_, f_v)| cosine(f_u, f_v) / tau)
        .collect();
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let entries = neighbor_states
        .iter()
        .zip(exps.iter())
        .map(|((v, _), e)| (*v, e / total))
        .collect();
    Ok(AttentionSet { entries })
}

/// Parallel transport of a neighbor state: alpha * W * f_v.
pub fn parallel_transport(c: &Connection, alpha: f64, f_v: &Array1<f64>) -> Array1<f64> {
    c.transport.dot(f_v) * alpha
}

/// One aggregation layer: f'_u = (1 - beta) f_u + beta * sum_v alpha_v W f_v.
/// Empty neighbor list leaves f_u unchanged.
pub fn aggregate(
    c: &Connection,
    f_u: &Array1<f64>,
    neighbors: &[(f64, Array1<f64>)],
    beta: f64,
) -> Array1<f64> {
    if neighbors.is_empty() {
        return f_u.clone();
    }
    let mut transported = Array1::<f64>::zeros(f_u.len());
    for (alpha, f_v) in neighbors {
        transported += &parallel_transport(c, *alpha, f_v);
    }
    f_u * (1.0 - beta) + transported * beta
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::{array, Array2};
    use proptest::prelude::*;

    #[test]
    fn singleton_attention_is_one() {
        let f_u = array![1.0, 0.0];
        let set = attention_coeffs(&f_u, &[(3, array![-1.0, 0.5])], 0.3).unwrap();
        assert_eq!(set.entries.len(), 1);
        assert_eq!(set.entries[0].0, 3);
        assert_relative_eq!(set.entries[0].1, 1.0);
    }

    #[test]
    fn equal_cosines_split_evenly() {
        let f_u = array![1.0, 1.0];
        let set = attention_coeffs(
            &f_u,
            &[(0, array![2.0, 2.0]), (1, array![0.5, 0.5])],
            1.0,
        )
        .unwrap();
        assert_relative_eq!(set.entries[0].1, 0.5, epsilon = 1e-12);
        assert_relative_eq!(set.entries[1].1, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn hand_computed_softmax() {
        // cos with (1,0) is 1; with (0,1) is 0; tau = 1
        let f_u = array![1.0, 0.0];
        let set = attention_coeffs(&f_u, &[(0, array![1.0, 0.0]), (1, array![0.0, 1.0])], 1.0)
            .unwrap();
        let e1 = 1f64.exp();
        assert_relative_eq!(set.entries[0].1, e1 / (e1 + 1.0), epsilon = 1e-12);
        assert_relative_eq!(set.entries[1].1, 1.0 / (e1 + 1.0), epsilon = 1e-12);
        assert_relative_eq!(set.entries[0].1, 0.7311, epsilon = 1e-4);
        assert_relative_eq!(set.entries[1].1, 0.2689, epsilon = 1e-4);
    }

    #[test]
    fn zero_norm_neighbor_counts_as_cosine_zero() {
        let f_u = array![1.0, 0.0];
        let set = attention_coeffs(&f_u, &[(0, array![0.0, 0.0]), (1, array![0.0, 1.0])], 1.0)
            .unwrap();
        // both cosines are 0 -> even split
        assert_relative_eq!(set.entries[0].1, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn empty_neighbor_list_gives_empty_set() {
        let set = attention_coeffs(&array![1.0, 0.0], &[], 1.0).unwrap();
        assert!(set.is_empty());
    }

    #[test]
    fn transport_identity_and_zero() {
        let c = Connection::identity(2, 1.0).unwrap();
        let f_v = array![0.4, -0.7];
        assert_eq!(parallel_transport(&c, 1.0, &f_v), f_v);
        assert_eq!(parallel_transport(&c, 0.0, &f_v), array![0.0, 0.0]);
    }

    #[test]
    fn transport_with_swap_matrix() {
        let c = Connection {
            transport: array![[0.0, 1.0], [1.0, 0.0]],
            tau: 1.0,
        };
        let out = parallel_transport(&c, 0.5, &array![2.0, 4.0]);
        assert_eq!(out, array![2.0, 1.0]);
    }

    #[test]
    fn aggregate_limits() {
        let c = Connection::identity(2, 1.0).unwrap();
        let f_u = array![1.0, 0.0];
        let f_v = array![0.0, 1.0];
        // beta = 0 leaves f_u
        assert_eq!(aggregate(&c, &f_u, &[(1.0, f_v.clone())], 0.0), f_u);
        // beta = 1, single neighbor, W = I -> f_v
        assert_eq!(aggregate(&c, &f_u, &[(1.0, f_v.clone())], 1.0), f_v);
        // beta = 0.5 midpoint
        assert_eq!(aggregate(&c, &f_u, &[(1.0, f_v)], 0.5), array![0.5, 0.5]);
        // no neighbors: unchanged
        assert_eq!(aggregate(&c, &f_u, &[], 1.0), f_u);
    }

    #[test]
    fn aggregate_is_weighted_mean_with_identity_transport() {
        let c = Connection::identity(3, 1.0).unwrap();
        let f_u = array![0.0, 0.0, 0.0];
        let nbrs = vec![
            (0.2, array![1.0, 0.0, 2.0]),
            (0.3, array![0.0, 1.0, -1.0]),
            (0.5, array![4.0, 4.0, 4.0]),
        ];
        let got = aggregate(&c, &f_u, &nbrs, 1.0);
        for i in 0..3 {
            let oracle: f64 = nbrs.iter().map(|(a, f)| a * f[i]).sum();
            assert_relative_eq!(got[i], oracle, epsilon = 1e-12);
        }
    }

    proptest! {
        #[test]
        fn attention_always_sums_to_one(
            fu in proptest::collection::vec(-5.0f64..5.0, 3),
            nbrs in proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, 3), 1..8),
            tau in 0.05f64..5.0,
        ) {
            let f_u = Array1::from_vec(fu);
            let states: Vec<(usize, Array1<f64>)> = nbrs
                .into_iter()
                .enumerate()
                .map(|(i, v)| (i, Array1::from_vec(v)))
                .collect();
            let set = attention_coeffs(&f_u, &states, tau).unwrap();
            let total: f64 = set.entries.iter().map(|(_, a)| a).sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            prop_assert!(set.entries.iter().all(|(_, a)| *a >= 0.0));
        }

        #[test]
        fn transport_is_linear(
            x in proptest::collection::vec(-3.0f64..3.0, 3),
            y in proptest::collection::vec(-3.0f64..3.0, 3),
            a in -2.0f64..2.0,
            alpha in 0.0f64..1.0,
            w in proptest::collection::vec(-2.0f64..2.0, 9),
        ) {
            let c = Connection {
                transport: Array2::from_shape_vec((3, 3), w).unwrap(),
                tau: 1.0,
            };
            let x = Array1::from_vec(x);
            let y = Array1::from_vec(y);
            let lhs = parallel_transport(&c, alpha, &(&x * a + &y));
            let rhs = parallel_transport(&c, alpha, &x) * a + parallel_transport(&c, alpha, &y);
            for i in 0..3 {
                prop_assert!((lhs[i] - rhs[i]).abs() < 1e-12);
            }
        }
    }
}
