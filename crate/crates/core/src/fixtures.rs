//! Small reference graphs used by tests, benches and examples.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::DirectedGraph;

/// Complete digraph on `n` nodes without self loops.
pub fn complete(n: usize) -> DirectedGraph {
    let edges: Vec<_> = (0..n)
        .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
        .collect();
    DirectedGraph::from_edges(n, &edges).expect("complete graph")
}

pub fn two_cycle() -> DirectedGraph {
    DirectedGraph::from_edges(2, &[(0, 1), (1, 0)]).expect("2-cycle")
}

/// Directed cycle 0 -> 1 -> … -> n-1 -> 0 (periodic).
pub fn directed_cycle(n: usize) -> DirectedGraph {
    let edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n)).collect();
    DirectedGraph::from_edges(n, &edges).expect("cycle")
}

/// `0->1, 1->0, 1->2, 2->0`; its spectral radius is the real root of
/// `x^3 = x + 1` (the plastic number).
pub fn plastic() -> DirectedGraph {
    DirectedGraph::from_edges(3, &[(0, 1), (1, 0), (1, 2), (2, 0)]).expect("plastic graph")
}

/// Random strongly connected digraph without self loops: a random
/// Hamiltonian cycle plus each remaining off-diagonal edge with
/// probability `density`.
pub fn random_strongly_connected(n: usize, density: f64, seed: u64) -> DirectedGraph {
    assert!(n >= 2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut edges: Vec<_> = (0..n).map(|k| (order[k], order[(k + 1) % n])).collect();
    for i in 0..n {
        for j in 0..n {
            if i != j && rng.random::<f64>() < density {
                edges.push((i, j));
            }
        }
    }
    DirectedGraph::from_edges(n, &edges).expect("random graph")
}
