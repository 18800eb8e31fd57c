//! GCN graph classifier: message passing layers, a permutation-invariant
//! readout and a two-layer classification head.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::graph::{argmax, Graph};
use crate::kernel::{normalize_adjacency, soft_cross_entropy, Adam, Tape, Var};
use crate::layers::{bound_dense, Dense, Parameterized};
use crate::rng::rng_from;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Readout {
    Mean,
    Add,
    Max,
}

impl FromStr for Readout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mean" => Ok(Readout::Mean),
            "add" | "sum" => Ok(Readout::Add),
            "max" => Ok(Readout::Max),
            other => Err(Error::Usage(format!("unknown readout {other:?}"))),
        }
    }
}

impl fmt::Display for Readout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Readout::Mean => "mean",
            Readout::Add => "add",
            Readout::Max => "max",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifierConfig {
    pub input_dim: usize,
    pub num_classes: usize,
    pub hidden_dim: usize,
    pub mp_layers: usize,
    pub readout: Readout,
}

impl ClassifierConfig {
    pub fn new(input_dim: usize, num_classes: usize) -> Self {
        ClassifierConfig {
            input_dim,
            num_classes,
            hidden_dim: 64,
            mp_layers: 4,
            readout: Readout::Mean,
        }
    }
}

/// Class probabilities for one graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub probs: Array1<f64>,
    pub log_probs: Array1<f64>,
}

impl Prediction {
    fn from_log_probs(log_probs: Array1<f64>) -> Self {
        Prediction {
            probs: log_probs.mapv(f64::exp),
            log_probs,
        }
    }

    pub fn class_index(&self) -> usize {
        argmax(self.probs.iter().copied())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    config: ClassifierConfig,
    pub(crate) mp: Vec<Dense>,
    pub(crate) fc1: Dense,
    pub(crate) fc2: Dense,
}

impl Parameterized for ClassifierModel {
    fn parameters(&self) -> Vec<&crate::kernel::Tensor> {
        self.layers().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    fn parameters_mut(&mut self) -> Vec<&mut crate::kernel::Tensor> {
        self.mp
            .iter_mut()
            .chain([&mut self.fc1, &mut self.fc2])
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }
}

/// A graph with its propagation operator computed once.
#[derive(Debug, Clone)]
pub(crate) struct PreparedGraph {
    a_hat: Array2<f64>,
    x: Array2<f64>,
    target: Array1<f64>,
}

impl PreparedGraph {
    pub(crate) fn new(g: &Graph) -> Self {
        PreparedGraph {
            a_hat: normalize_adjacency(g.adjacency()),
            x: g.node_features().clone(),
            target: g.label().clone(),
        }
    }
}

impl ClassifierModel {
    /// Fresh model with Glorot weights drawn from `seed`.
    pub fn new(config: ClassifierConfig, seed: u64) -> Result<Self> {
        if config.input_dim == 0 || config.num_classes == 0 || config.hidden_dim == 0 {
            return Err(Error::contract("classifier dimensions must be positive"));
        }
        if config.mp_layers == 0 {
            return Err(Error::contract(
                "at least one message passing layer is required",
            ));
        }
        let mut rng = rng_from(seed);
        let mut mp = Vec::with_capacity(config.mp_layers);
        let mut width = config.input_dim;
        for _ in 0..config.mp_layers {
            mp.push(Dense::new(width, config.hidden_dim, &mut rng));
            width = config.hidden_dim;
        }
        let fc1 = Dense::new(config.hidden_dim, config.hidden_dim, &mut rng);
        let fc2 = Dense::new(config.hidden_dim, config.num_classes, &mut rng);
        Ok(ClassifierModel {
            config,
            mp,
            fc1,
            fc2,
        })
    }

    pub(crate) fn from_parts(
        config: ClassifierConfig,
        mp: Vec<Dense>,
        fc1: Dense,
        fc2: Dense,
    ) -> Result<Self> {
        let mut width = config.input_dim;
        for layer in &mp {
            if layer.input_dim() != width || layer.output_dim() != config.hidden_dim {
                return Err(Error::contract("message passing layer shapes do not chain"));
            }
            width = config.hidden_dim;
        }
        if mp.len() != config.mp_layers
            || fc1.input_dim() != config.hidden_dim
            || fc1.output_dim() != config.hidden_dim
            || fc2.input_dim() != config.hidden_dim
            || fc2.output_dim() != config.num_classes
        {
            return Err(Error::contract(
                "classifier head shapes do not match config",
            ));
        }
        Ok(ClassifierModel {
            config,
            mp,
            fc1,
            fc2,
        })
    }

    pub fn config(&self) -> &ClassifierConfig {
        &self.config
    }

    pub(crate) fn layers(&self) -> impl Iterator<Item = &Dense> {
        self.mp.iter().chain([&self.fc1, &self.fc2])
    }

    fn check_input(&self, g: &Graph) -> Result<()> {
        if g.feature_dim() != self.config.input_dim {
            return Err(Error::contract(format!(
                "graph has {} features, model expects {}",
                g.feature_dim(),
                self.config.input_dim
            )));
        }
        Ok(())
    }

    /// Records the forward pass; returns the `1 x hidden` graph embedding
    /// and the `1 x C` log-probabilities.
    pub(crate) fn forward_on_tape(
        &self,
        tape: &mut Tape,
        params: &[Var],
        g: &PreparedGraph,
    ) -> Result<(Var, Var)> {
        let a_hat = tape.constant(g.a_hat.clone())?;
        let mut h = tape.constant(g.x.clone())?;
        for l in 0..self.mp.len() {
            let z = bound_dense(params, l).propagate(tape, a_hat, h)?;
            h = tape.relu(z)?;
        }
        let embedding = match self.config.readout {
            Readout::Mean => tape.row_mean(h)?,
            Readout::Add => tape.row_sum(h)?,
            Readout::Max => tape.row_max(h)?,
        };
        let hidden = bound_dense(params, self.mp.len()).apply(tape, embedding)?;
        let hidden = tape.relu(hidden)?;
        let logits = bound_dense(params, self.mp.len() + 1).apply(tape, hidden)?;
        let log_probs = tape.log_softmax(logits)?;
        Ok((embedding, log_probs))
    }

    pub fn forward(&self, g: &Graph) -> Result<Prediction> {
        self.check_input(g)?;
        let mut tape = Tape::new();
        let params = self.bind(&mut tape)?;
        let (_, lp) = self.forward_on_tape(&mut tape, &params, &PreparedGraph::new(g))?;
        Ok(Prediction::from_log_probs(tape.value(lp).row(0).to_owned()))
    }

    /// Readout output before the classification head.
    pub fn graph_embedding(&self, g: &Graph) -> Result<Array1<f64>> {
        self.check_input(g)?;
        let mut tape = Tape::new();
        let params = self.bind(&mut tape)?;
        let (emb, _) = self.forward_on_tape(&mut tape, &params, &PreparedGraph::new(g))?;
        Ok(tape.value(emb).row(0).to_owned())
    }

    pub fn predict_all(&self, graphs: &[Graph]) -> Result<Vec<Prediction>> {
        graphs.iter().map(|g| self.forward(g)).collect()
    }
}

/// How per-graph losses are combined within a set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossReduction {
    Mean,
    Sum,
}

impl FromStr for LossReduction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mean" => Ok(LossReduction::Mean),
            "sum" => Ok(LossReduction::Sum),
            other => Err(Error::Usage(format!("unknown loss reduction {other:?}"))),
        }
    }
}

impl fmt::Display for LossReduction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossReduction::Mean => "mean",
            LossReduction::Sum => "sum",
        })
    }
}

/// Per-epoch training losses.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub losses: Vec<f64>,
}

pub(crate) fn set_loss(
    model: &ClassifierModel,
    tape: &mut Tape,
    params: &[Var],
    set: &[PreparedGraph],
    reduction: LossReduction,
) -> Result<Var> {
    let mut rows = Vec::with_capacity(set.len());
    for g in set {
        rows.push(model.forward_on_tape(tape, params, g)?.1);
    }
    let log_probs = tape.concat_rows(&rows)?;
    let targets = Array2::from_shape_fn((set.len(), model.config.num_classes), |(b, c)| {
        set[b].target[c]
    });
    let loss = soft_cross_entropy(tape, log_probs, &targets)?;
    match reduction {
        LossReduction::Mean => Ok(loss),
        LossReduction::Sum => tape.scale(loss, set.len() as f64),
    }
}

/// Full-batch training on a labeled set.
pub fn train(
    model: &mut ClassifierModel,
    train_set: &[Graph],
    epochs: usize,
    lr: f64,
) -> Result<TrainingLog> {
    train_augmented(model, train_set, &[], 0.0, LossReduction::Mean, epochs, lr)
}

/// Full-batch training on originals plus a weighted generated set:
/// `loss(originals) + weight * loss(generated)`. An empty generated set
/// contributes no term at all.
pub fn train_augmented(
    model: &mut ClassifierModel,
    originals: &[Graph],
    generated: &[Graph],
    weight: f64,
    reduction: LossReduction,
    epochs: usize,
    lr: f64,
) -> Result<TrainingLog> {
    if originals.is_empty() {
        return Err(Error::contract("training set is empty"));
    }
    for g in originals.iter().chain(generated) {
        model.check_input(g)?;
        if g.num_classes() != model.config.num_classes {
            return Err(Error::contract("label width does not match model classes"));
        }
    }
    let orig: Vec<PreparedGraph> = originals.iter().map(PreparedGraph::new).collect();
    let gen: Vec<PreparedGraph> = generated.iter().map(PreparedGraph::new).collect();

    let mut adam = Adam::new(lr);
    let mut log = TrainingLog::default();
    for _ in 0..epochs {
        let mut tape = Tape::new();
        let params = model.bind(&mut tape)?;
        let mut loss = set_loss(model, &mut tape, &params, &orig, reduction)?;
        if !gen.is_empty() {
            let extra = set_loss(model, &mut tape, &params, &gen, reduction)?;
            let extra = tape.scale(extra, weight)?;
            loss = tape.add(loss, extra)?;
        }
        log.losses.push(tape.scalar(loss));
        let grads = tape.backward(loss)?;
        model.absorb(&params, &grads)?;
        adam.step(&mut model.parameters_mut())?;
    }
    Ok(log)
}

/// Fraction of graphs whose predicted class matches the label's argmax.
pub fn evaluate(model: &ClassifierModel, eval_set: &[Graph]) -> Result<f64> {
    if eval_set.is_empty() {
        return Err(Error::contract("evaluation set is empty"));
    }
    let mut correct = 0usize;
    for g in eval_set {
        if model.forward(g)?.class_index() == g.class_index() {
            correct += 1;
        }
    }
    Ok(correct as f64 / eval_set.len() as f64)
}
