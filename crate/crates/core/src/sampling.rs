//! Difficulty-aware pair selection.
//!
//! A pre-trained classifier splits the training graphs into low and high
//! difficulty halves. Mixup pairs are then drawn as (low, low), (low, high)
//! and (high, high) so the generated set holds equal numbers of each.

use std::fmt;
use std::str::FromStr;

use log::warn;
use ndarray::Array1;
use rand::Rng;
use rayon::prelude::*;

use crate::classifier::ClassifierModel;
use crate::error::{Error, Result};
use crate::graph::{argmax, Graph};
use crate::gsae::GsaeModel;
use crate::mixup::{dual_mixup, sample_lambda, MixupConfig};
use crate::rng::{derive, derive_named, rng_from};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Difficulty {
    Low,
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DifficultyPolicy {
    /// Wrongly classified graphs are hard.
    Acc,
    /// Graphs above the median prediction entropy are hard.
    Unc,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DifficultyTag {
    pub index: usize,
    pub level: Difficulty,
    pub policy: DifficultyPolicy,
    /// Entropy under `Unc`, 1 for correct and 0 for wrong under `Acc`.
    pub score: f64,
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn entropy(p: &Array1<f64>) -> f64 {
    -p.iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| v * v.ln())
        .sum::<f64>()
}

/// Median, averaging the two middle values for even lengths.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    Some(if sorted.len().is_multiple_of(2) {
        (sorted[mid - 1] + sorted[mid]) / 2.0
    } else {
        sorted[mid]
    })
}

/// Tags graphs from predicted class distributions and their labels.
pub fn tags_from_predictions(
    probs: &[Array1<f64>],
    labels: &[Array1<f64>],
    policy: DifficultyPolicy,
) -> Result<Vec<DifficultyTag>> {
    if probs.len() != labels.len() {
        return Err(Error::contract(format!(
            "{} predictions for {} labels",
            probs.len(),
            labels.len()
        )));
    }
    let tags = match policy {
        DifficultyPolicy::Acc => probs
            .iter()
            .zip(labels)
            .enumerate()
            .map(|(index, (p, y))| {
                let correct = argmax(p.iter().copied()) == argmax(y.iter().copied());
                DifficultyTag {
                    index,
                    level: if correct {
                        Difficulty::Low
                    } else {
                        Difficulty::High
                    },
                    policy,
                    score: if correct { 1.0 } else { 0.0 },
                }
            })
            .collect(),
        DifficultyPolicy::Unc => {
            let ent: Vec<f64> = probs.iter().map(entropy).collect();
            let med = median(&ent).unwrap_or(0.0);
            ent.iter()
                .enumerate()
                .map(|(index, &e)| DifficultyTag {
                    index,
                    level: if e <= med {
                        Difficulty::Low
                    } else {
                        Difficulty::High
                    },
                    policy,
                    score: e,
                })
                .collect()
        }
    };
    Ok(tags)
}

/// Runs the classifier over `graphs` and tags each one.
pub fn assess_difficulty(
    model: &ClassifierModel,
    graphs: &[Graph],
    policy: DifficultyPolicy,
) -> Result<Vec<DifficultyTag>> {
    let probs = graphs
        .par_iter()
        .map(|g| model.forward(g).map(|p| p.probs))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<Array1<f64>> = graphs.iter().map(|g| g.label().clone()).collect();
    tags_from_predictions(&probs, &labels, policy)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Subset {
    Low,
    Medium,
    High,
    Random,
}

impl Subset {
    fn name(self) -> &'static str {
        match self {
            Subset::Low => "low",
            Subset::Medium => "medium",
            Subset::High => "high",
            Subset::Random => "random",
        }
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Subset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "low" => Ok(Subset::Low),
            "medium" => Ok(Subset::Medium),
            "high" => Ok(Subset::High),
            "random" => Ok(Subset::Random),
            other => Err(Error::Usage(format!("unknown subset '{other}'"))),
        }
    }
}

/// Everything needed to replay one generated graph.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Provenance {
    pub subset: Subset,
    pub source_i: usize,
    pub source_j: usize,
    pub lambda: f64,
    /// Node alignment seed passed to mixup.
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct GeneratedGraph {
    pub graph: Graph,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SubsetToggles {
    pub low: bool,
    pub medium: bool,
    pub high: bool,
}

impl Default for SubsetToggles {
    fn default() -> Self {
        SubsetToggles {
            low: true,
            medium: true,
            high: true,
        }
    }
}

impl SubsetToggles {
    pub fn none() -> Self {
        SubsetToggles {
            low: false,
            medium: false,
            high: false,
        }
    }

    pub fn any(&self) -> bool {
        self.low || self.medium || self.high
    }
}

fn plan_one(
    subset: Subset,
    k: usize,
    seed: u64,
    cfg: &MixupConfig,
    pick: impl Fn(&mut rand_chacha::ChaCha8Rng) -> (usize, usize),
) -> Result<Provenance> {
    let mut rng = rng_from(derive(derive_named(seed, subset.name()), k as u64));
    let (source_i, source_j) = pick(&mut rng);
    let lambda = sample_lambda(cfg, &mut rng)?;
    Ok(Provenance {
        subset,
        source_i,
        source_j,
        lambda,
        seed: rng.random(),
    })
}

fn pick_within<R: Rng + ?Sized>(pool: &[usize], rng: &mut R) -> (usize, usize) {
    let a = rng.random_range(0..pool.len());
    if pool.len() == 1 {
        return (pool[0], pool[0]);
    }
    let mut b = rng.random_range(0..pool.len() - 1);
    if b >= a {
        b += 1;
    }
    (pool[a], pool[b])
}

/// Draws pairs for the three difficulty subsets, `m` per enabled subset.
pub fn plan_balanced(
    tags: &[DifficultyTag],
    m: usize,
    toggles: SubsetToggles,
    cfg: &MixupConfig,
    seed: u64,
) -> Result<Vec<Provenance>> {
    cfg.validate()?;
    let n = tags.len();
    let low: Vec<usize> = tags
        .iter()
        .filter(|t| t.level == Difficulty::Low)
        .map(|t| t.index)
        .collect();
    let high: Vec<usize> = tags
        .iter()
        .filter(|t| t.level == Difficulty::High)
        .map(|t| t.index)
        .collect();
    let wanted = [
        (Subset::Low, toggles.low),
        (Subset::Medium, toggles.medium),
        (Subset::High, toggles.high),
    ];
    if m > 0 && toggles.any() && n == 0 {
        return Err(Error::contract("cannot generate pairs from an empty set"));
    }
    if m > 0 && toggles.any() && (low.is_empty() || high.is_empty()) {
        warn!(
            "difficulty split is degenerate ({} low, {} high); falling back to random pairs",
            low.len(),
            high.len()
        );
    }
    let mut plans = Vec::with_capacity(3 * m);
    for (subset, enabled) in wanted {
        if !enabled {
            continue;
        }
        for k in 0..m {
            let plan = plan_one(subset, k, seed, cfg, |rng| match subset {
                _ if low.is_empty() || high.is_empty() => {
                    (rng.random_range(0..n), rng.random_range(0..n))
                }
                Subset::Low => pick_within(&low, rng),
                Subset::High => pick_within(&high, rng),
                _ => (
                    low[rng.random_range(0..low.len())],
                    high[rng.random_range(0..high.len())],
                ),
            })?;
            plans.push(plan);
        }
    }
    Ok(plans)
}

/// Draws `count` uniformly random ordered pairs over `n` graphs.
pub fn plan_random(
    n: usize,
    count: usize,
    cfg: &MixupConfig,
    seed: u64,
) -> Result<Vec<Provenance>> {
    cfg.validate()?;
    if count > 0 && n == 0 {
        return Err(Error::contract("cannot generate pairs from an empty set"));
    }
    (0..count)
        .map(|k| {
            plan_one(Subset::Random, k, seed, cfg, |rng| {
                (rng.random_range(0..n), rng.random_range(0..n))
            })
        })
        .collect()
}

/// Runs mixup for every plan. Output order follows `plans`.
pub fn realize(
    gsae: &GsaeModel,
    graphs: &[Graph],
    plans: &[Provenance],
    cfg: &MixupConfig,
) -> Result<Vec<GeneratedGraph>> {
    plans
        .par_iter()
        .map(|p| {
            let gi = graphs
                .get(p.source_i)
                .ok_or_else(|| Error::contract(format!("source {} out of range", p.source_i)))?;
            let gj = graphs
                .get(p.source_j)
                .ok_or_else(|| Error::contract(format!("source {} out of range", p.source_j)))?;
            Ok(GeneratedGraph {
                graph: dual_mixup(gsae, gi, gj, p.lambda, cfg, p.seed)?,
                provenance: *p,
            })
        })
        .collect()
}

/// Equal-size low, medium and high difficulty generated subsets.
pub fn generate_balanced(
    gsae: &GsaeModel,
    graphs: &[Graph],
    tags: &[DifficultyTag],
    cfg: &MixupConfig,
    m: usize,
    toggles: SubsetToggles,
    seed: u64,
) -> Result<Vec<GeneratedGraph>> {
    if tags.len() != graphs.len() {
        return Err(Error::contract(format!(
            "{} tags for {} graphs",
            tags.len(),
            graphs.len()
        )));
    }
    let plans = plan_balanced(tags, m, toggles, cfg, seed)?;
    realize(gsae, graphs, &plans, cfg)
}

/// Generated graphs from uniformly random pairs.
pub fn generate_random(
    gsae: &GsaeModel,
    graphs: &[Graph],
    cfg: &MixupConfig,
    count: usize,
    seed: u64,
) -> Result<Vec<GeneratedGraph>> {
    let plans = plan_random(graphs.len(), count, cfg, seed)?;
    realize(gsae, graphs, &plans, cfg)
}
