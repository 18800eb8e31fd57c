//! Dual mixup of a graph pair.
//!
//! Node features and labels are interpolated directly. Structure is
//! interpolated in the auto-encoder's embedding space and decoded back to
//! an adjacency, which is then pruned of weak edges and, for binary
//! datasets, binarized.

use ndarray::{Array2, Axis};
use rand::Rng;
use rand_distr::{Beta, Distribution};

use crate::error::{Error, Result};
use crate::graph::{induced_subgraph, pad_to, permute_nodes, random_permutation, Graph};
use crate::gsae::{decode, GsaeModel};
use crate::rng::rng_from;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixupConfig {
    /// Beta shape parameters for the mixing coefficient.
    pub alpha: f64,
    pub beta: f64,
    /// Decoded weights below this are dropped.
    pub epsilon: f64,
    /// Replace surviving weights with 1.
    pub binarize: bool,
    /// Keep nodes left without edges (including padding).
    pub keep_isolated: bool,
}

impl Default for MixupConfig {
    fn default() -> Self {
        MixupConfig {
            alpha: 1.0,
            beta: 1.0,
            epsilon: 0.1,
            binarize: true,
            keep_isolated: true,
        }
    }
}

impl MixupConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.beta > 0.0 && self.alpha.is_finite() && self.beta.is_finite())
        {
            return Err(Error::contract(format!(
                "beta parameters must be positive, got ({}, {})",
                self.alpha, self.beta
            )));
        }
        if !(0.0..1.0).contains(&self.epsilon) {
            return Err(Error::contract(format!(
                "epsilon {} outside [0, 1)",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// One draw from `Beta(alpha, beta)`.
pub fn sample_lambda<R: Rng + ?Sized>(cfg: &MixupConfig, rng: &mut R) -> Result<f64> {
    cfg.validate()?;
    let dist = Beta::new(cfg.alpha, cfg.beta).map_err(|e| Error::contract(e.to_string()))?;
    Ok(dist.sample(rng))
}

/// A generated graph together with the intermediate values that produced
/// it.
#[derive(Debug, Clone)]
pub struct MixupTrace {
    pub graph: Graph,
    /// Inputs after alignment and padding.
    pub aligned_i: Graph,
    pub aligned_j: Graph,
    /// Interpolated structural embeddings.
    pub mixed_embedding: Array2<f64>,
    /// Decoder output before pruning.
    pub decoded: Array2<f64>,
}

/// Zeroes the diagonal, drops entries below `epsilon` and optionally
/// binarizes what is left.
pub fn prune_and_binarize(decoded: &Array2<f64>, cfg: &MixupConfig) -> Array2<f64> {
    let mut a = decoded.clone();
    for ((i, j), v) in a.indexed_iter_mut() {
        if i == j || *v < cfg.epsilon {
            *v = 0.0;
        } else if cfg.binarize && *v > 0.0 {
            *v = 1.0;
        }
    }
    a
}

fn check_pair(gi: &Graph, gj: &Graph, lambda: f64) -> Result<()> {
    if gi.feature_dim() != gj.feature_dim() {
        return Err(Error::contract(format!(
            "feature widths differ: {} vs {}",
            gi.feature_dim(),
            gj.feature_dim()
        )));
    }
    if gi.num_classes() != gj.num_classes() {
        return Err(Error::contract(format!(
            "class counts differ: {} vs {}",
            gi.num_classes(),
            gj.num_classes()
        )));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::contract(format!("lambda {lambda} outside [0, 1]")));
    }
    Ok(())
}

/// Mixes two graphs whose node order is taken as the alignment: pads the
/// smaller, interpolates features, labels and structural embeddings,
/// decodes, prunes and post-processes.
pub fn mix_aligned(
    gsae: &GsaeModel,
    gi: &Graph,
    gj: &Graph,
    lambda: f64,
    cfg: &MixupConfig,
) -> Result<MixupTrace> {
    check_pair(gi, gj, lambda)?;
    cfg.validate()?;
    let n = gi.num_nodes().max(gj.num_nodes());
    let pi = pad_to(gi, n)?;
    let pj = pad_to(gj, n)?;
    let rest = 1.0 - lambda;

    let x = pi.node_features() * lambda + pj.node_features() * rest;
    let y = pi.label() * lambda + pj.label() * rest;
    let mixed_embedding = gsae.encode(&pi)? * lambda + gsae.encode(&pj)? * rest;
    let decoded = decode(&mixed_embedding);
    let a = prune_and_binarize(&decoded, cfg);

    let mut graph = Graph::new(x, a, y)?;
    if !cfg.keep_isolated {
        let connected: Vec<usize> = graph
            .adjacency()
            .axis_iter(Axis(0))
            .zip(graph.adjacency().axis_iter(Axis(1)))
            .enumerate()
            .filter(|(_, (row, col))| row.iter().chain(col.iter()).any(|&v| v != 0.0))
            .map(|(k, _)| k)
            .collect();
        // An edgeless result keeps all of its nodes.
        if !connected.is_empty() {
            graph = induced_subgraph(&graph, &connected)?;
        }
    }
    Ok(MixupTrace {
        graph,
        aligned_i: pi,
        aligned_j: pj,
        mixed_embedding,
        decoded,
    })
}

/// Full dual mixup with random node alignment drawn from `seed`.
pub fn dual_mixup_traced(
    gsae: &GsaeModel,
    gi: &Graph,
    gj: &Graph,
    lambda: f64,
    cfg: &MixupConfig,
    seed: u64,
) -> Result<MixupTrace> {
    check_pair(gi, gj, lambda)?;
    let mut rng = rng_from(seed);
    let perm_i = random_permutation(gi.num_nodes(), &mut rng);
    let perm_j = random_permutation(gj.num_nodes(), &mut rng);
    mix_aligned(
        gsae,
        &permute_nodes(gi, &perm_i)?,
        &permute_nodes(gj, &perm_j)?,
        lambda,
        cfg,
    )
}

pub fn dual_mixup(
    gsae: &GsaeModel,
    gi: &Graph,
    gj: &Graph,
    lambda: f64,
    cfg: &MixupConfig,
    seed: u64,
) -> Result<Graph> {
    dual_mixup_traced(gsae, gi, gj, lambda, cfg, seed).map(|t| t.graph)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{one_hot, synthetic};
    use crate::gsae::{GsaeConfig, StructuralInput};
    use ndarray::array;

    fn gsae() -> GsaeModel {
        GsaeModel::new(GsaeConfig::new(StructuralInput::Degree), 3).unwrap()
    }

    fn pair() -> (Graph, Graph) {
        let mut rng = rng_from(2);
        let a = synthetic::erdos_renyi_adjacency(5, 0.5, &mut rng);
        let gi = Graph::new(crate::kernel::glorot(5, 2, &mut rng), a, one_hot(0, 2)).unwrap();
        let b = synthetic::erdos_renyi_adjacency(8, 0.3, &mut rng);
        let gj = Graph::new(crate::kernel::glorot(8, 2, &mut rng), b, one_hot(1, 2)).unwrap();
        (gi, gj)
    }

    #[test]
    fn lambda_draws_have_uniform_moments() {
        let cfg = MixupConfig::default();
        let mut rng = rng_from(1);
        let draws: Vec<f64> = (0..100_000)
            .map(|_| sample_lambda(&cfg, &mut rng).unwrap())
            .collect();
        assert!(draws.iter().all(|&l| (0.0..=1.0).contains(&l)));
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        assert!((mean - 0.5).abs() < 0.01);
    }

    #[test]
    fn arcsine_draws_match_beta_variance() {
        let cfg = MixupConfig {
            alpha: 0.5,
            beta: 0.5,
            ..Default::default()
        };
        let mut rng = rng_from(2);
        let draws: Vec<f64> = (0..100_000)
            .map(|_| sample_lambda(&cfg, &mut rng).unwrap())
            .collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / draws.len() as f64;
        // alpha * beta / ((alpha + beta)^2 (alpha + beta + 1)) = 0.25 / 2
        assert!((var - 0.125).abs() < 0.01, "variance {var}");
    }

    #[test]
    fn invalid_config_is_rejected() {
        let mut rng = rng_from(0);
        let bad = MixupConfig {
            alpha: 0.0,
            ..Default::default()
        };
        assert!(sample_lambda(&bad, &mut rng).is_err());
        let bad = MixupConfig {
            epsilon: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn lambda_one_reproduces_first_graph() {
        let (gi, gj) = pair();
        let t = dual_mixup_traced(&gsae(), &gi, &gj, 1.0, &MixupConfig::default(), 9).unwrap();
        assert_eq!(t.graph.node_features(), t.aligned_i.node_features());
        assert_eq!(t.graph.label(), gi.label());
        assert_eq!(t.mixed_embedding, gsae().encode(&t.aligned_i).unwrap());
        assert_eq!(t.graph.num_nodes(), 8);
    }

    #[test]
    fn half_lambda_mixes_labels() {
        let (gi, gj) = pair();
        let g = dual_mixup(&gsae(), &gi, &gj, 0.5, &MixupConfig::default(), 1).unwrap();
        assert_eq!(g.label(), &array![0.5, 0.5]);
    }

    #[test]
    fn binarized_output_is_symmetric_binary_without_loops() {
        let (gi, gj) = pair();
        let mut rng = rng_from(4);
        for seed in 0..20 {
            let lambda = rng.random::<f64>();
            let g = dual_mixup(&gsae(), &gi, &gj, lambda, &MixupConfig::default(), seed).unwrap();
            let a = g.adjacency();
            assert!(a.iter().all(|&v| v == 0.0 || v == 1.0));
            assert_eq!(a, &a.t());
            assert!((0..a.nrows()).all(|i| a[[i, i]] == 0.0));
            assert!((g.label().sum() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn prune_boundary_keeps_epsilon() {
        let decoded = array![[0.9, 0.09, 0.10], [0.09, 0.7, 0.5], [0.10, 0.5, 0.95]];
        let cfg = MixupConfig::default();
        let out = prune_and_binarize(&decoded, &cfg);
        assert_eq!(
            out,
            array![[0.0, 0.0, 1.0], [0.0, 0.0, 1.0], [1.0, 1.0, 0.0]]
        );
        let weighted = prune_and_binarize(
            &decoded,
            &MixupConfig {
                binarize: false,
                ..cfg
            },
        );
        assert_eq!(
            weighted,
            array![[0.0, 0.0, 0.10], [0.0, 0.0, 0.5], [0.10, 0.5, 0.0]]
        );
    }

    #[test]
    fn swapping_inputs_with_complementary_lambda_is_identical() {
        let (gi, gj) = pair();
        let cfg = MixupConfig {
            binarize: false,
            ..Default::default()
        };
        for lambda in [0.25, 0.375, 0.5, 0.8125] {
            let a = mix_aligned(&gsae(), &gi, &gj, lambda, &cfg).unwrap();
            let b = mix_aligned(&gsae(), &gj, &gi, 1.0 - lambda, &cfg).unwrap();
            assert_eq!(a.graph, b.graph);
        }
    }

    #[test]
    fn dropping_isolated_nodes_removes_padding() {
        let gi = Graph::new(
            array![[1.0], [2.0]],
            array![[0.0, 1.0], [1.0, 0.0]],
            one_hot(0, 2),
        )
        .unwrap();
        let gj = Graph::new(Array2::ones((4, 1)), Array2::zeros((4, 4)), one_hot(1, 2)).unwrap();
        let model = gsae();
        let cfg = MixupConfig {
            epsilon: 0.0,
            ..Default::default()
        };
        let kept = mix_aligned(&model, &gi, &gj, 0.5, &cfg).unwrap().graph;
        assert_eq!(kept.num_nodes(), 4);
        let dropped = mix_aligned(
            &model,
            &gi,
            &gj,
            0.5,
            &MixupConfig {
                keep_isolated: false,
                ..cfg
            },
        )
        .unwrap()
        .graph;
        // epsilon 0 keeps every off-diagonal entry, so nothing is isolated.
        assert_eq!(dropped.num_nodes(), 4);
        let strict = MixupConfig {
            epsilon: 0.999,
            keep_isolated: false,
            ..Default::default()
        };
        let all_isolated = mix_aligned(&model, &gi, &gj, 0.5, &strict).unwrap().graph;
        assert_eq!(all_isolated.num_nodes(), 4);
    }

    #[test]
    fn mismatched_pairs_are_rejected() {
        let (gi, _) = pair();
        let other = Graph::new(array![[1.0]], array![[0.0]], one_hot(0, 2)).unwrap();
        assert!(matches!(
            dual_mixup(&gsae(), &gi, &other, 0.5, &MixupConfig::default(), 0),
            Err(Error::Contract(_))
        ));
        assert!(dual_mixup(&gsae(), &gi, &gi, 1.5, &MixupConfig::default(), 0).is_err());
    }
}
