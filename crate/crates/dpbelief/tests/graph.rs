use approx::assert_abs_diff_eq;
use dpbelief::graph::{build_network, erdos_renyi_edges, parse_edge_list, path_edges, Network, Topology, WeightScheme};
use dpbelief::Error;
use proptest::prelude::*;

/// Random graph made connected by adding a spanning path.
fn connected_random(n: usize, p: f64, seed: u64) -> Network {
    let mut edges = path_edges(n);
    for (a, b) in erdos_renyi_edges(n, p, seed).unwrap() {
        if b != a + 1 {
            edges.push((a, b));
        }
    }
    build_network(&edges, n, WeightScheme::Metropolis).unwrap()
}

fn mat_mul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    (0..n)
        .map(|i| (0..n).map(|j| (0..n).map(|k| a[i][k] * b[k][j]).sum()).collect())
        .collect()
}

#[test]
fn complete_graph_is_uniform() {
    let net = Network::complete(5).unwrap();
    for i in 0..5 {
        for j in 0..5 {
            assert_abs_diff_eq!(net.weight(i, j), 0.2, epsilon = 1e-15);
        }
    }
    // (1/5)·J has eigenvalues {1, 0, 0, 0, 0}; the lazy matrix has {1, 1/2, ...}.
    assert_abs_diff_eq!(net.slem(), 0.0, epsilon = 1e-10);
    assert_abs_diff_eq!(net.slem_lazy(), 0.5, epsilon = 1e-10);
    assert_eq!(net.diameter(), 1);
}

#[test]
fn path_of_three_matches_hand_metropolis() {
    let net = Network::path(3).unwrap();
    let expected = [[2.0 / 3.0, 1.0 / 3.0, 0.0], [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0], [0.0, 1.0 / 3.0, 2.0 / 3.0]];
    for i in 0..3 {
        for j in 0..3 {
            assert_abs_diff_eq!(net.weight(i, j), expected[i][j], epsilon = 1e-15);
        }
    }
    assert_eq!(net.diameter(), 2);
}

#[test]
fn single_agent_is_trivial() {
    let net = build_network(&[], 1, WeightScheme::Metropolis).unwrap();
    assert_eq!(net.weight(0, 0), 1.0);
    assert_eq!(net.slem(), 0.0);
    assert_eq!(net.slem_lazy(), 0.0);
    assert_eq!(net.diameter(), 0);
}

#[test]
fn two_cycle_is_flagged_periodic() {
    let net = Network::from_weights(vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
    assert!(net.is_periodic());
    assert_abs_diff_eq!(net.slem(), 1.0, epsilon = 1e-12);
    assert!(net.slem_lazy() < 1.0);
}

#[test]
fn disconnected_graph_is_rejected() {
    let err = build_network(&[(0, 1), (2, 3)], 4, WeightScheme::Metropolis).unwrap_err();
    assert!(matches!(err, Error::NotIrreducible));
}

#[test]
fn bad_weights_are_rejected() {
    assert!(Network::from_weights(vec![vec![0.5, 0.5], vec![0.4, 0.6]]).is_err());
    assert!(Network::from_weights(vec![vec![0.7, 0.3], vec![0.3, 0.6]]).is_err());
    assert!(Network::from_weights(vec![]).is_err());
}

#[test]
fn self_loops_and_out_of_range_edges_are_rejected() {
    assert!(build_network(&[(0, 0), (0, 1)], 2, WeightScheme::Metropolis).is_err());
    assert!(build_network(&[(0, 5)], 2, WeightScheme::Metropolis).is_err());
}

#[test]
fn edge_list_parsing() {
    let edges = parse_edge_list("# ring\n0 1\n1 2\n\n2 0\n").unwrap();
    assert_eq!(edges, vec![(0, 1), (1, 2), (2, 0)]);
    match parse_edge_list("0 1\n1 x\n").unwrap_err() {
        Error::Parse { line, .. } => assert_eq!(line, 2),
        e => panic!("unexpected error {e}"),
    }
}

#[test]
fn topology_names_round_trip() {
    for text in ["complete", "path", "cycle", "erdos-renyi p=0.4 seed=9"] {
        let t: Topology = text.parse().unwrap();
        assert_eq!(t.to_string(), text);
    }
    assert!("star".parse::<Topology>().is_err());
    assert!("erdos-renyi seed=3".parse::<Topology>().is_err());
}

#[test]
fn cycle_slem_matches_closed_form() {
    // Metropolis weights on a cycle are 1/3 everywhere on the band, so the
    // eigenvalues are (1 + 2cos(2πk/n))/3.
    for n in [5usize, 6, 9] {
        let net = Network::cycle(n).unwrap();
        let slem = (1..n)
            .map(|k| ((1.0 + 2.0 * (2.0 * std::f64::consts::PI * k as f64 / n as f64).cos()) / 3.0).abs())
            .fold(0.0, f64::max);
        assert_abs_diff_eq!(net.slem(), slem, epsilon = 1e-10);
    }
}

proptest! {
    #[test]
    fn random_graphs_are_doubly_stochastic(n in 2usize..9, p in 0.2f64..0.9, seed in any::<u64>()) {
        let net = connected_random(n, p, seed);
        for i in 0..n {
            let row: f64 = net.row(i).iter().sum();
            let col: f64 = (0..n).map(|j| net.weight(j, i)).sum();
            prop_assert!((row - 1.0).abs() <= 1e-12);
            prop_assert!((col - 1.0).abs() <= 1e-12);
            for j in 0..n {
                prop_assert_eq!(net.weight(i, j), net.weight(j, i));
            }
        }
        prop_assert!(net.slem_lazy() < 1.0);
        prop_assert!(net.slem_lazy() >= 0.0);
    }

    #[test]
    fn lazy_powers_converge_to_average(n in 2usize..9, p in 0.2f64..0.9, seed in any::<u64>(), t in 1usize..50) {
        let net = connected_random(n, p, seed);
        let lazy: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| 0.5 * net.weight(i, j) + if i == j { 0.5 } else { 0.0 }).collect())
            .collect();
        let mut power = lazy.clone();
        for _ in 1..t {
            power = mat_mul(&power, &lazy);
        }
        let bound = 2.0 * (n as f64 - 1.0) * net.slem_lazy().powi(t as i32) + 1e-12;
        for row in &power {
            for &v in row {
                prop_assert!((v - 1.0 / n as f64).abs() <= bound);
            }
        }
    }
}
