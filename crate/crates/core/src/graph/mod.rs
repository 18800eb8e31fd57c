//! Graph and dataset value types plus the shape utilities shared by the
//! classifier, the structural auto-encoder and the mixup generator.

pub mod synthetic;
pub mod tu;

pub use tu::{load_tu_dataset, write_tu_dataset};

use ndarray::{s, Array1, Array2};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};

/// Tolerance for a label vector summing to one.
pub const LABEL_SUM_TOL: f64 = 1e-9;

/// A single attributed graph with a (possibly soft) class label.
///
/// The adjacency never stores self-loops; they are added transiently when
/// the propagation operator is built.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    node_features: Array2<f64>,
    adjacency: Array2<f64>,
    label: Array1<f64>,
}

impl Graph {
    pub fn new(
        node_features: Array2<f64>,
        adjacency: Array2<f64>,
        label: Array1<f64>,
    ) -> Result<Self> {
        let n = adjacency.nrows();
        if n == 0 {
            return Err(Error::contract("graph must have at least one node"));
        }
        if adjacency.ncols() != n {
            return Err(Error::contract(format!(
                "adjacency must be square, got {}x{}",
                n,
                adjacency.ncols()
            )));
        }
        if node_features.nrows() != n {
            return Err(Error::contract(format!(
                "node features have {} rows for {} nodes",
                node_features.nrows(),
                n
            )));
        }
        if adjacency.iter().any(|&v| !v.is_finite() || v < 0.0) {
            return Err(Error::contract(
                "adjacency entries must be finite and non-negative",
            ));
        }
        if (0..n).any(|i| adjacency[[i, i]] != 0.0) {
            return Err(Error::contract("adjacency must not store self-loops"));
        }
        if node_features.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract("node features must be finite"));
        }
        check_label(&label)?;
        Ok(Graph {
            node_features,
            adjacency,
            label,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.adjacency.nrows()
    }

    pub fn feature_dim(&self) -> usize {
        self.node_features.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.label.len()
    }

    pub fn node_features(&self) -> &Array2<f64> {
        &self.node_features
    }

    pub fn adjacency(&self) -> &Array2<f64> {
        &self.adjacency
    }

    pub fn label(&self) -> &Array1<f64> {
        &self.label
    }

    /// Index of the largest label entry, ties going to the lowest index.
    pub fn class_index(&self) -> usize {
        argmax(self.label.iter().copied())
    }

    pub fn is_symmetric(&self) -> bool {
        self.adjacency == self.adjacency.t()
    }

    /// True when every adjacency entry is 0 or 1.
    pub fn is_binary(&self) -> bool {
        self.adjacency.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    /// Unordered node pairs `(i, j)`, `i < j`, joined by an edge in either
    /// direction.
    pub fn edge_pairs(&self) -> Vec<(usize, usize)> {
        let n = self.num_nodes();
        let a = &self.adjacency;
        let mut pairs = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if a[[i, j]] > 0.0 || a[[j, i]] > 0.0 {
                    pairs.push((i, j));
                }
            }
        }
        pairs
    }

    /// Same graph with a replacement label.
    pub fn with_label(&self, label: Array1<f64>) -> Result<Self> {
        check_label(&label)?;
        Ok(Graph {
            label,
            ..self.clone()
        })
    }
}

fn check_label(label: &Array1<f64>) -> Result<()> {
    if label.is_empty() {
        return Err(Error::contract("label vector is empty"));
    }
    if label.iter().any(|&v| !v.is_finite() || v < 0.0) {
        return Err(Error::contract(
            "label entries must be finite and non-negative",
        ));
    }
    let sum: f64 = label.sum();
    if (sum - 1.0).abs() > LABEL_SUM_TOL {
        return Err(Error::contract(format!("label sums to {sum}, expected 1")));
    }
    Ok(())
}

/// Position of the maximum, first occurrence wins.
pub fn argmax(values: impl IntoIterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, v) in values.into_iter().enumerate() {
        if v > best_val {
            best = i;
            best_val = v;
        }
    }
    best
}

pub fn one_hot(class: usize, num_classes: usize) -> Array1<f64> {
    let mut y = Array1::zeros(num_classes);
    y[class] = 1.0;
    y
}

/// An ordered collection of graphs sharing feature width and class count.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphDataset {
    pub name: String,
    pub graphs: Vec<Graph>,
    pub feature_dim: usize,
    pub num_classes: usize,
    pub undirected: bool,
    /// Raw class identifiers as they appeared in the source files, indexed
    /// by contiguous class index.
    pub class_values: Vec<i64>,
}

impl GraphDataset {
    pub fn new(
        name: impl Into<String>,
        graphs: Vec<Graph>,
        feature_dim: usize,
        num_classes: usize,
    ) -> Result<Self> {
        for (i, g) in graphs.iter().enumerate() {
            if g.feature_dim() != feature_dim || g.num_classes() != num_classes {
                return Err(Error::contract(format!(
                    "graph {i} has d={} C={}, dataset expects d={feature_dim} C={num_classes}",
                    g.feature_dim(),
                    g.num_classes()
                )));
            }
        }
        let undirected = graphs.iter().all(Graph::is_symmetric);
        Ok(GraphDataset {
            name: name.into(),
            graphs,
            feature_dim,
            num_classes,
            undirected,
            class_values: (0..num_classes as i64).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    /// True when every adjacency is 0/1-valued.
    pub fn is_binary(&self) -> bool {
        self.graphs.iter().all(Graph::is_binary)
    }

    pub fn max_nodes(&self) -> usize {
        self.graphs.iter().map(Graph::num_nodes).max().unwrap_or(0)
    }

    /// Graph indices grouped by class.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut by_class = vec![Vec::new(); self.num_classes];
        for (i, g) in self.graphs.iter().enumerate() {
            by_class[g.class_index()].push(i);
        }
        by_class
    }

    /// A dataset over a subset of the graphs, keeping metadata.
    pub fn select(&self, indices: &[usize]) -> GraphDataset {
        GraphDataset {
            graphs: indices.iter().map(|&i| self.graphs[i].clone()).collect(),
            ..self.clone_meta()
        }
    }

    fn clone_meta(&self) -> GraphDataset {
        GraphDataset {
            name: self.name.clone(),
            graphs: Vec::new(),
            feature_dim: self.feature_dim,
            num_classes: self.num_classes,
            undirected: self.undirected,
            class_values: self.class_values.clone(),
        }
    }
}

/// Per-node degree: row sums of the adjacency.
pub fn degrees(g: &Graph) -> Array1<f64> {
    g.adjacency.sum_axis(ndarray::Axis(1))
}

/// Zero-pads a graph to `target_n` nodes. Padded nodes are isolated and
/// carry all-zero features.
pub fn pad_to(g: &Graph, target_n: usize) -> Result<Graph> {
    let n = g.num_nodes();
    if target_n < n {
        return Err(Error::contract(format!(
            "cannot pad {n} nodes down to {target_n}"
        )));
    }
    if target_n == n {
        return Ok(g.clone());
    }
    let mut x = Array2::zeros((target_n, g.feature_dim()));
    x.slice_mut(s![..n, ..]).assign(&g.node_features);
    let mut a = Array2::zeros((target_n, target_n));
    a.slice_mut(s![..n, ..n]).assign(&g.adjacency);
    Ok(Graph {
        node_features: x,
        adjacency: a,
        label: g.label.clone(),
    })
}

/// Subgraph induced by `nodes`, in the given order.
pub fn induced_subgraph(g: &Graph, nodes: &[usize]) -> Result<Graph> {
    let n = g.num_nodes();
    if nodes.is_empty() {
        return Err(Error::contract("induced subgraph needs at least one node"));
    }
    if let Some(&bad) = nodes.iter().find(|&&v| v >= n) {
        return Err(Error::contract(format!(
            "node {bad} out of range for {n} nodes"
        )));
    }
    let x = g.node_features.select(ndarray::Axis(0), nodes);
    let a = g
        .adjacency
        .select(ndarray::Axis(0), nodes)
        .select(ndarray::Axis(1), nodes);
    Graph::new(x, a, g.label.clone())
}

/// Reorders nodes so that new node `k` is old node `perm[k]`.
pub fn permute_nodes(g: &Graph, perm: &[usize]) -> Result<Graph> {
    let n = g.num_nodes();
    let mut seen = vec![false; n];
    if perm.len() != n
        || perm
            .iter()
            .any(|&p| p >= n || std::mem::replace(&mut seen[p], true))
    {
        return Err(Error::contract("not a permutation of the node set"));
    }
    induced_subgraph(g, perm)
}

pub fn random_permutation<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    perm
}

/// Applies one uniformly random node permutation.
pub fn random_node_permutation<R: Rng + ?Sized>(g: &Graph, rng: &mut R) -> Graph {
    let perm = random_permutation(g.num_nodes(), rng);
    permute_nodes(g, &perm).expect("shuffled identity is a permutation")
}

/// Inverse of a permutation vector.
pub fn invert_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (k, &p) in perm.iter().enumerate() {
        inv[p] = k;
    }
    inv
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use ndarray::array;

    fn path3() -> Graph {
        let a = array![[0.0, 1.0, 0.0], [1.0, 0.0, 1.0], [0.0, 1.0, 0.0]];
        let x = array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
        Graph::new(x, a, array![0.0, 1.0]).unwrap()
    }

    #[test]
    fn degrees_are_row_sums() {
        let g = Graph::new(
            array![[1.0], [1.0]],
            array![[0.0, 1.0], [1.0, 0.0]],
            array![1.0],
        )
        .unwrap();
        assert_eq!(degrees(&g), array![1.0, 1.0]);
        let empty = Graph::new(array![[1.0], [1.0]], Array2::zeros((2, 2)), array![1.0]).unwrap();
        assert_eq!(degrees(&empty), array![0.0, 0.0]);
        assert_eq!(degrees(&path3()), array![1.0, 2.0, 1.0]);
    }

    #[test]
    fn rejects_invalid_graphs() {
        let x = array![[1.0], [1.0]];
        assert!(Graph::new(x.clone(), array![[1.0, 0.0], [0.0, 0.0]], array![1.0]).is_err());
        assert!(Graph::new(x.clone(), array![[0.0, 1.0], [1.0, 0.0]], array![0.6, 0.6]).is_err());
        assert!(Graph::new(x.clone(), Array2::zeros((3, 3)), array![1.0]).is_err());
        assert!(Graph::new(Array2::zeros((0, 1)), Array2::zeros((0, 0)), array![1.0]).is_err());
    }

    #[test]
    fn pad_is_noop_at_same_size() {
        let g = path3();
        assert_eq!(pad_to(&g, 3).unwrap(), g);
    }

    #[test]
    fn pad_appends_zero_rows() {
        let g = Graph::new(array![[5.0]], array![[0.0]], array![1.0]).unwrap();
        let p = pad_to(&g, 3).unwrap();
        assert_eq!(p.node_features(), &array![[5.0], [0.0], [0.0]]);
        assert_eq!(p.adjacency(), &Array2::<f64>::zeros((3, 3)));
        assert_eq!(p.num_nodes(), 3);
        assert_eq!(degrees(&p), array![0.0, 0.0, 0.0]);
        assert!(pad_to(&p, 2).is_err());
    }

    #[test]
    fn pad_then_restrict_is_identity() {
        let g = path3();
        let p = pad_to(&g, 7).unwrap();
        assert_eq!(degrees(&p).slice(s![3..]).sum(), 0.0);
        assert_eq!(induced_subgraph(&p, &[0, 1, 2]).unwrap(), g);
    }

    #[test]
    fn single_node_permutation_is_identity() {
        let g = Graph::new(array![[2.0, 3.0]], array![[0.0]], array![1.0]).unwrap();
        let mut rng = rng_from(1);
        assert_eq!(random_node_permutation(&g, &mut rng), g);
    }

    #[test]
    fn inverse_permutation_recovers_graph() {
        let g = path3();
        let mut rng = rng_from(11);
        for _ in 0..10 {
            let perm = random_permutation(3, &mut rng);
            let p = permute_nodes(&g, &perm).unwrap();
            let mut deg_p = degrees(&p).to_vec();
            let mut deg_g = degrees(&g).to_vec();
            deg_p.sort_by(f64::total_cmp);
            deg_g.sort_by(f64::total_cmp);
            assert_eq!(deg_p, deg_g);
            assert_eq!(permute_nodes(&p, &invert_permutation(&perm)).unwrap(), g);
        }
        assert!(permute_nodes(&g, &[0, 0, 1]).is_err());
    }

    #[test]
    fn edge_pairs_are_unordered() {
        assert_eq!(path3().edge_pairs(), vec![(0, 1), (1, 2)]);
    }
}
