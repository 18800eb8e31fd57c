//! Structural graph auto-encoder.
//!
//! The encoder sees only structure: per-node degree inputs propagated over
//! the normalized adjacency by two graph convolutions. The decoder is the
//! parameter-free inner product `sigmoid(H H^T)`. Training minimizes the
//! negative log-likelihood of true edges and of an equal number of sampled
//! non-edges, summed over all graphs.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Axis};
use rand::seq::index::sample;
use rand::Rng;

use crate::classifier::TrainingLog;
use crate::error::{Error, Result};
use crate::graph::{degrees, Graph};
use crate::kernel::{normalize_adjacency, Adam, Tape, Var};
use crate::layers::{bound_dense, Dense, Parameterized};
use crate::rng::rng_from;

/// Floor applied inside the reconstruction log terms.
pub const LOG_FLOOR: f64 = 1e-12;

/// How node degrees are presented to the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StructuralInput {
    /// One scalar per node: its degree. Permutation-equivariant, but every
    /// node of a regular graph looks identical.
    Degree,
    /// Row `i` of the diagonal degree matrix, zero-padded to `width`
    /// columns. Nodes are told apart by position, which lets the encoder
    /// reconstruct regular structures.
    DegreeDiagonal { width: usize },
}

impl StructuralInput {
    pub fn width(&self) -> usize {
        match self {
            StructuralInput::Degree => 1,
            StructuralInput::DegreeDiagonal { width } => *width,
        }
    }

    pub fn kind(&self) -> StructuralInputKind {
        match self {
            StructuralInput::Degree => StructuralInputKind::Degree,
            StructuralInput::DegreeDiagonal { .. } => StructuralInputKind::DegreeDiagonal,
        }
    }
}

/// [`StructuralInput`] without its dataset-dependent width.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StructuralInputKind {
    Degree,
    DegreeDiagonal,
}

impl StructuralInputKind {
    /// Resolves the width against the largest graph the encoder must handle.
    pub fn resolve(self, max_nodes: usize) -> StructuralInput {
        match self {
            StructuralInputKind::Degree => StructuralInput::Degree,
            StructuralInputKind::DegreeDiagonal => StructuralInput::DegreeDiagonal {
                width: max_nodes.max(1),
            },
        }
    }
}

impl FromStr for StructuralInputKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "degree" => Ok(StructuralInputKind::Degree),
            "degree-diagonal" | "diagonal" => Ok(StructuralInputKind::DegreeDiagonal),
            other => Err(Error::Usage(format!("unknown structural input {other:?}"))),
        }
    }
}

impl fmt::Display for StructuralInputKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StructuralInputKind::Degree => "degree",
            StructuralInputKind::DegreeDiagonal => "degree-diagonal",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GsaeConfig {
    pub input: StructuralInput,
    pub hidden_dim: usize,
    pub embed_dim: usize,
}

impl GsaeConfig {
    pub fn new(input: StructuralInput) -> Self {
        GsaeConfig {
            input,
            hidden_dim: 32,
            embed_dim: 32,
        }
    }
}

/// Encoder parameters; the decoder has none.
#[derive(Debug, Clone, PartialEq)]
pub struct GsaeModel {
    config: GsaeConfig,
    pub(crate) layer1: Dense,
    pub(crate) layer2: Dense,
}

impl Parameterized for GsaeModel {
    fn parameters(&self) -> Vec<&crate::kernel::Tensor> {
        vec![
            &self.layer1.weight,
            &self.layer1.bias,
            &self.layer2.weight,
            &self.layer2.bias,
        ]
    }

    fn parameters_mut(&mut self) -> Vec<&mut crate::kernel::Tensor> {
        vec![
            &mut self.layer1.weight,
            &mut self.layer1.bias,
            &mut self.layer2.weight,
            &mut self.layer2.bias,
        ]
    }
}

impl GsaeModel {
    pub fn new(config: GsaeConfig, seed: u64) -> Result<Self> {
        if config.input.width() == 0 || config.hidden_dim == 0 || config.embed_dim == 0 {
            return Err(Error::contract("auto-encoder dimensions must be positive"));
        }
        let mut rng = rng_from(seed);
        let layer1 = Dense::new(config.input.width(), config.hidden_dim, &mut rng);
        let layer2 = Dense::new(config.hidden_dim, config.embed_dim, &mut rng);
        Ok(GsaeModel {
            config,
            layer1,
            layer2,
        })
    }

    pub(crate) fn from_parts(config: GsaeConfig, layer1: Dense, layer2: Dense) -> Result<Self> {
        if layer1.input_dim() != config.input.width()
            || layer1.output_dim() != config.hidden_dim
            || layer2.input_dim() != config.hidden_dim
            || layer2.output_dim() != config.embed_dim
        {
            return Err(Error::contract(
                "auto-encoder layer shapes do not match config",
            ));
        }
        Ok(GsaeModel {
            config,
            layer1,
            layer2,
        })
    }

    pub fn config(&self) -> &GsaeConfig {
        &self.config
    }

    pub fn embed_dim(&self) -> usize {
        self.config.embed_dim
    }

    /// Encoder input derived from the adjacency alone.
    pub fn structural_features(&self, g: &Graph) -> Result<Array2<f64>> {
        let deg = degrees(g);
        match self.config.input {
            StructuralInput::Degree => Ok(deg.insert_axis(Axis(1))),
            StructuralInput::DegreeDiagonal { width } => {
                let n = g.num_nodes();
                if n > width {
                    return Err(Error::contract(format!(
                        "graph has {n} nodes, structural encoder handles at most {width}"
                    )));
                }
                let mut x = Array2::zeros((n, width));
                for i in 0..n {
                    x[[i, i]] = deg[i];
                }
                Ok(x)
            }
        }
    }

    fn encode_on_tape(&self, tape: &mut Tape, params: &[Var], g: &Graph) -> Result<Var> {
        let a_hat = tape.constant(normalize_adjacency(g.adjacency()))?;
        let x = tape.constant(self.structural_features(g)?)?;
        let h = bound_dense(params, 0).propagate(tape, a_hat, x)?;
        let h = tape.relu(h)?;
        bound_dense(params, 1).propagate(tape, a_hat, h)
    }

    /// Structural node embeddings, `n x embed_dim`. Node features and labels
    /// are never read.
    pub fn encode(&self, g: &Graph) -> Result<Array2<f64>> {
        let mut tape = Tape::new();
        let params = self.bind(&mut tape)?;
        let h = self.encode_on_tape(&mut tape, &params, g)?;
        Ok(tape.value(h).clone())
    }

    /// Records the reconstruction loss of one graph; `None` when the graph
    /// has neither edges nor negatives.
    pub(crate) fn loss_on_tape(
        &self,
        tape: &mut Tape,
        params: &[Var],
        g: &Graph,
        neg: &NegativeEdgeSample,
    ) -> Result<Option<Var>> {
        let edges = g.edge_pairs();
        if edges.is_empty() && neg.pairs.is_empty() {
            return Ok(None);
        }
        let h = self.encode_on_tape(tape, params, g)?;
        let ht = tape.transpose(h)?;
        let gram = tape.matmul(h, ht)?;
        // ln(1 - sigmoid(x)) = ln sigmoid(-x)
        let mut total: Option<Var> = None;
        if !edges.is_empty() {
            let pos = tape.gather(gram, &edges)?;
            let ln = tape.log_sigmoid_clamped(pos, LOG_FLOOR)?;
            total = Some(tape.sum_all(ln)?);
        }
        if !neg.pairs.is_empty() {
            let logits = tape.gather(gram, &neg.pairs)?;
            let flipped = tape.scale(logits, -1.0)?;
            let ln = tape.log_sigmoid_clamped(flipped, LOG_FLOOR)?;
            let s = tape.sum_all(ln)?;
            total = Some(match total {
                Some(t) => tape.add(t, s)?,
                None => s,
            });
        }
        let t = total.expect("at least one term");
        Ok(Some(tape.scale(t, -1.0)?))
    }
}

/// Inner-product decoder `sigmoid(H H^T)`.
pub fn decode(h: &Array2<f64>) -> Array2<f64> {
    h.dot(&h.t()).mapv(crate::kernel::sigmoid)
}

/// Node pairs absent from a graph's edge set, `i < j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NegativeEdgeSample {
    pub pairs: Vec<(usize, usize)>,
}

impl NegativeEdgeSample {
    /// Uniform sample without replacement of `min(|E|, #non-edges)`
    /// non-edges.
    pub fn sample<R: Rng + ?Sized>(g: &Graph, rng: &mut R) -> Self {
        let n = g.num_nodes();
        let a = g.adjacency();
        let mut non_edges = Vec::new();
        let mut edge_count = 0usize;
        for i in 0..n {
            for j in (i + 1)..n {
                if a[[i, j]] > 0.0 || a[[j, i]] > 0.0 {
                    edge_count += 1;
                } else {
                    non_edges.push((i, j));
                }
            }
        }
        let count = edge_count.min(non_edges.len());
        let mut chosen: Vec<usize> = sample(rng, non_edges.len(), count).into_vec();
        chosen.sort_unstable();
        NegativeEdgeSample {
            pairs: chosen.into_iter().map(|k| non_edges[k]).collect(),
        }
    }

    /// Validates explicit pairs against `g`.
    pub fn from_pairs(g: &Graph, pairs: Vec<(usize, usize)>) -> Result<Self> {
        let n = g.num_nodes();
        let a = g.adjacency();
        let mut seen = std::collections::HashSet::new();
        for &(i, j) in &pairs {
            if i >= n || j >= n || i == j {
                return Err(Error::contract(format!("invalid negative pair ({i}, {j})")));
            }
            if a[[i, j]] > 0.0 || a[[j, i]] > 0.0 {
                return Err(Error::contract(format!(
                    "negative pair ({i}, {j}) is an edge"
                )));
            }
            if !seen.insert((i.min(j), i.max(j))) {
                return Err(Error::contract(format!(
                    "duplicate negative pair ({i}, {j})"
                )));
            }
        }
        Ok(NegativeEdgeSample { pairs })
    }
}

/// Reconstruction loss of one graph for a given negative sample.
pub fn reconstruction_loss(model: &GsaeModel, g: &Graph, neg: &NegativeEdgeSample) -> Result<f64> {
    let mut tape = Tape::new();
    let params = model.bind(&mut tape)?;
    Ok(match model.loss_on_tape(&mut tape, &params, g, neg)? {
        Some(l) => tape.scalar(l),
        None => 0.0,
    })
}

/// Gradient of the reconstruction loss of one graph with respect to every
/// encoder parameter, in [`Parameterized::parameters`] order.
pub fn reconstruction_gradients(
    model: &GsaeModel,
    g: &Graph,
    neg: &NegativeEdgeSample,
) -> Result<Vec<Array2<f64>>> {
    let mut tape = Tape::new();
    let params = model.bind(&mut tape)?;
    let zeros = || {
        model
            .parameters()
            .iter()
            .map(|p| Array2::zeros(p.shape()))
            .collect()
    };
    let Some(loss) = model.loss_on_tape(&mut tape, &params, g, neg)? else {
        return Ok(zeros());
    };
    let grads = tape.backward(loss)?;
    Ok(params
        .iter()
        .zip(model.parameters())
        .map(|(&v, p)| {
            grads
                .get(v)
                .cloned()
                .unwrap_or_else(|| Array2::zeros(p.shape()))
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GsaeTraining {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Draw a fresh negative sample every epoch rather than once up front.
    pub resample_negatives: bool,
}

impl Default for GsaeTraining {
    fn default() -> Self {
        GsaeTraining {
            epochs: 200,
            learning_rate: 1e-2,
            resample_negatives: true,
        }
    }
}

/// Trains the encoder on the summed reconstruction loss of `graphs`, one
/// optimizer step per epoch.
pub fn train_gsae(
    model: &mut GsaeModel,
    graphs: &[Graph],
    schedule: &GsaeTraining,
    seed: u64,
) -> Result<TrainingLog> {
    let mut rng = rng_from(seed);
    let mut adam = Adam::new(schedule.learning_rate);
    let mut log = TrainingLog::default();
    let mut negatives: Vec<NegativeEdgeSample> = graphs
        .iter()
        .map(|g| NegativeEdgeSample::sample(g, &mut rng))
        .collect();
    for epoch in 0..schedule.epochs {
        if schedule.resample_negatives && epoch > 0 {
            negatives = graphs
                .iter()
                .map(|g| NegativeEdgeSample::sample(g, &mut rng))
                .collect();
        }
        let mut tape = Tape::new();
        let params = model.bind(&mut tape)?;
        let mut total: Option<Var> = None;
        for (g, neg) in graphs.iter().zip(&negatives) {
            if let Some(l) = model.loss_on_tape(&mut tape, &params, g, neg)? {
                total = Some(match total {
                    Some(t) => tape.add(t, l)?,
                    None => l,
                });
            }
        }
        let Some(loss) = total else {
            log.losses.push(0.0);
            continue;
        };
        log.losses.push(tape.scalar(loss));
        let grads = tape.backward(loss)?;
        model.absorb(&params, &grads)?;
        adam.step(&mut model.parameters_mut())?;
    }
    Ok(log)
}

/// Probability that a true edge outscores a sampled non-edge under the
/// decoder, pooled over all graphs; ties count one half.
pub fn edge_ranking_auc<R: Rng + ?Sized>(
    model: &GsaeModel,
    graphs: &[Graph],
    rng: &mut R,
) -> Result<f64> {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for g in graphs {
        let recon = decode(&model.encode(g)?);
        pos.extend(g.edge_pairs().into_iter().map(|e| recon[e]));
        neg.extend(
            NegativeEdgeSample::sample(g, rng)
                .pairs
                .into_iter()
                .map(|e| recon[e]),
        );
    }
    Ok(auc(&pos, &neg))
}

/// Mann-Whitney AUC with midrank ties.
pub fn auc(pos: &[f64], neg: &[f64]) -> f64 {
    if pos.is_empty() || neg.is_empty() {
        return 0.5;
    }
    let mut all: Vec<(f64, bool)> = pos
        .iter()
        .map(|&v| (v, true))
        .chain(neg.iter().map(|&v| (v, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += all[i..=j].iter().filter(|e| e.1).count() as f64 * mid;
        i = j + 1;
    }
    let (np, nn) = (pos.len() as f64, neg.len() as f64);
    (rank_sum - np * (np + 1.0) / 2.0) / (np * nn)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{one_hot, permute_nodes, random_permutation, synthetic};
    use ndarray::array;

    fn degree_model(seed: u64) -> GsaeModel {
        GsaeModel::new(GsaeConfig::new(StructuralInput::Degree), seed).unwrap()
    }

    fn er_graph(n: usize, seed: u64) -> Graph {
        let mut rng = rng_from(seed);
        let a = synthetic::erdos_renyi_adjacency(n, 0.4, &mut rng);
        Graph::new(crate::kernel::glorot(n, 3, &mut rng), a, one_hot(0, 2)).unwrap()
    }

    #[test]
    fn encoder_ignores_node_features() {
        let g = er_graph(6, 1);
        let other = Graph::new(
            Array2::from_elem((6, 3), 9.0),
            g.adjacency().clone(),
            one_hot(1, 2),
        )
        .unwrap();
        for model in [
            degree_model(2),
            GsaeModel::new(
                GsaeConfig::new(StructuralInput::DegreeDiagonal { width: 8 }),
                2,
            )
            .unwrap(),
        ] {
            assert_eq!(model.encode(&g).unwrap(), model.encode(&other).unwrap());
        }
    }

    #[test]
    fn degree_encoder_is_equivariant() {
        let g = er_graph(7, 3);
        let model = degree_model(4);
        let h = model.encode(&g).unwrap();
        let mut rng = rng_from(5);
        for _ in 0..5 {
            let perm = random_permutation(7, &mut rng);
            let hp = model.encode(&permute_nodes(&g, &perm).unwrap()).unwrap();
            for (k, &p) in perm.iter().enumerate() {
                for c in 0..h.ncols() {
                    assert!((hp[[k, c]] - h[[p, c]]).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn single_node_encodes_finite() {
        let g = Graph::new(array![[1.0]], array![[0.0]], one_hot(0, 1)).unwrap();
        let h = degree_model(1).encode(&g).unwrap();
        assert_eq!(h.dim(), (1, 32));
        assert!(h.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn diagonal_input_rejects_oversized_graphs() {
        let model = GsaeModel::new(
            GsaeConfig::new(StructuralInput::DegreeDiagonal { width: 3 }),
            0,
        )
        .unwrap();
        assert!(matches!(
            model.encode(&er_graph(5, 1)),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn decode_contracts() {
        assert!(decode(&Array2::zeros((3, 4))).iter().all(|&v| v == 0.5));
        let h = array![[0.3, -1.0], [0.3, -1.0], [2.0, 0.5]];
        let d = decode(&h);
        assert_eq!(d, d.t());
        assert_eq!(d[[0, 0]], d[[0, 1]]);
        assert_eq!(d[[0, 0]], d[[1, 1]]);
        assert!(d.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn half_probabilities_cost_four_ln2() {
        // A zero second layer makes every decoded entry sigmoid(0) = 0.5.
        let mut model = degree_model(0);
        model.layer2.weight.values.fill(0.0);
        let g = Graph::new(
            Array2::ones((3, 1)),
            synthetic::star_adjacency(3),
            one_hot(0, 1),
        )
        .unwrap();
        let neg = NegativeEdgeSample::from_pairs(&g, vec![(1, 2)]).unwrap();
        // star(3): edges (0,1), (0,2); one negative (1,2) -> 3 terms.
        let l = reconstruction_loss(&model, &g, &neg).unwrap();
        assert!((l - 3.0 * std::f64::consts::LN_2).abs() < 1e-12);

        let path4 = Graph::new(
            Array2::ones((4, 1)),
            array![
                [0.0, 1.0, 0.0, 0.0],
                [1.0, 0.0, 0.0, 0.0],
                [0.0, 0.0, 0.0, 1.0],
                [0.0, 0.0, 1.0, 0.0]
            ],
            one_hot(0, 1),
        )
        .unwrap();
        let neg = NegativeEdgeSample::from_pairs(&path4, vec![(0, 2), (1, 3)]).unwrap();
        let l = reconstruction_loss(&model, &path4, &neg).unwrap();
        assert!((l - 4.0 * std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn negatives_avoid_edges() {
        let g = er_graph(9, 4);
        let mut rng = rng_from(6);
        let edges: std::collections::HashSet<_> = g.edge_pairs().into_iter().collect();
        for _ in 0..20 {
            let neg = NegativeEdgeSample::sample(&g, &mut rng);
            let non_edges = 36 - edges.len();
            assert_eq!(neg.pairs.len(), edges.len().min(non_edges));
            assert!(neg.pairs.iter().all(|p| !edges.contains(p) && p.0 < p.1));
            assert!(NegativeEdgeSample::from_pairs(&g, neg.pairs.clone()).is_ok());
        }
        let complete = Graph::new(
            Array2::ones((3, 1)),
            array![[0.0, 1.0, 1.0], [1.0, 0.0, 1.0], [1.0, 1.0, 0.0]],
            one_hot(0, 1),
        )
        .unwrap();
        assert!(NegativeEdgeSample::sample(&complete, &mut rng)
            .pairs
            .is_empty());
        assert!(NegativeEdgeSample::from_pairs(&complete, vec![(0, 1)]).is_err());
    }

    #[test]
    fn loss_is_non_negative() {
        let mut rng = rng_from(8);
        for seed in 0..10 {
            let g = er_graph(6, seed);
            let neg = NegativeEdgeSample::sample(&g, &mut rng);
            assert!(reconstruction_loss(&degree_model(seed), &g, &neg).unwrap() >= 0.0);
        }
    }

    #[test]
    fn single_node_dataset_does_not_move() {
        let g = Graph::new(array![[1.0]], array![[0.0]], one_hot(0, 1)).unwrap();
        let mut model = degree_model(3);
        let before = model.clone();
        let log = train_gsae(
            &mut model,
            &[g.clone(), g],
            &GsaeTraining {
                epochs: 5,
                ..Default::default()
            },
            1,
        )
        .unwrap();
        assert_eq!(log.losses, vec![0.0; 5]);
        assert_eq!(model, before);
    }

    #[test]
    fn training_reduces_loss_on_rings_and_stars() {
        let mut rng = rng_from(10);
        let ds = synthetic::rings_and_stars(10, 6..=12, &mut rng).unwrap();
        let mut model = GsaeModel::new(
            GsaeConfig::new(StructuralInput::DegreeDiagonal {
                width: ds.max_nodes(),
            }),
            11,
        )
        .unwrap();
        let log = train_gsae(&mut model, &ds.graphs, &GsaeTraining::default(), 12).unwrap();
        assert!(log.losses[199] < log.losses[0]);
    }

    #[test]
    fn auc_handles_ties() {
        assert_eq!(auc(&[0.9, 0.8], &[0.1, 0.2]), 1.0);
        assert_eq!(auc(&[0.1], &[0.9]), 0.0);
        assert_eq!(auc(&[0.5, 0.5], &[0.5]), 0.5);
        assert!((auc(&[0.3, 0.7], &[0.5]) - 0.5).abs() < 1e-15);
    }
}
