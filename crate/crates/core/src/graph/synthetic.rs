//! Small synthetic graph families used by tests, benchmarks and the
//! `synth` subcommand.

use ndarray::{Array1, Array2};
use rand::Rng;

use super::{degrees, one_hot, Graph, GraphDataset};
use crate::error::Result;

/// Cycle on `n` nodes (`n >= 3`).
pub fn ring_adjacency(n: usize) -> Array2<f64> {
    let mut a = Array2::zeros((n, n));
    for i in 0..n {
        let j = (i + 1) % n;
        if i != j {
            a[[i, j]] = 1.0;
            a[[j, i]] = 1.0;
        }
    }
    a
}

/// Star with node 0 at the centre.
pub fn star_adjacency(n: usize) -> Array2<f64> {
    let mut a = Array2::zeros((n, n));
    for i in 1..n {
        a[[0, i]] = 1.0;
        a[[i, 0]] = 1.0;
    }
    a
}

/// Undirected G(n, p).
pub fn erdos_renyi_adjacency<R: Rng + ?Sized>(n: usize, p: f64, rng: &mut R) -> Array2<f64> {
    let mut a = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.random::<f64>() < p {
                a[[i, j]] = 1.0;
                a[[j, i]] = 1.0;
            }
        }
    }
    a
}

/// Graph whose single node feature is the node degree.
pub fn with_degree_features(adjacency: Array2<f64>, label: Array1<f64>) -> Result<Graph> {
    let n = adjacency.nrows();
    let probe = Graph::new(Array2::zeros((n, 1)), adjacency, label)?;
    let deg = degrees(&probe).insert_axis(ndarray::Axis(1));
    Graph::new(deg, probe.adjacency().clone(), probe.label().clone())
}

/// `per_class` rings (class 0) then `per_class` stars (class 1), sizes
/// uniform in `sizes`, constant node features.
pub fn rings_and_stars<R: Rng + ?Sized>(
    per_class: usize,
    sizes: std::ops::RangeInclusive<usize>,
    rng: &mut R,
) -> Result<GraphDataset> {
    let mut graphs = Vec::with_capacity(2 * per_class);
    for class in 0..2 {
        for _ in 0..per_class {
            let n = rng.random_range(sizes.clone());
            let a = if class == 0 {
                ring_adjacency(n)
            } else {
                star_adjacency(n)
            };
            graphs.push(Graph::new(Array2::ones((n, 1)), a, one_hot(class, 2))?);
        }
    }
    GraphDataset::new("RINGSTAR", graphs, 1, 2)
}

/// Two-class Erdos-Renyi task: class `c` has edge density `densities[c]`,
/// node features are degrees.
pub fn erdos_renyi_classes<R: Rng + ?Sized>(
    per_class: usize,
    densities: [f64; 2],
    sizes: std::ops::RangeInclusive<usize>,
    rng: &mut R,
) -> Result<GraphDataset> {
    let mut graphs = Vec::with_capacity(2 * per_class);
    for (class, &p) in densities.iter().enumerate() {
        for _ in 0..per_class {
            let n = rng.random_range(sizes.clone());
            let a = erdos_renyi_adjacency(n, p, rng);
            graphs.push(with_degree_features(a, one_hot(class, 2))?);
        }
    }
    GraphDataset::new("ERDENSITY", graphs, 1, 2)
}
