//! End-to-end augmentation and training, k-fold experiments and their
//! on-disk outputs.

mod config;
mod output;

pub use config::{Binarize, ExperimentConfig, Policy};
pub use output::{provenance_csv, write_outputs, write_provenance, OutputFiles};

use log::info;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rayon::prelude::*;

use crate::classifier::{
    evaluate, train, train_augmented, ClassifierConfig, ClassifierModel, TrainingLog,
};
use crate::error::{Error, Result};
use crate::graph::{Graph, GraphDataset};
use crate::gsae::{train_gsae, GsaeConfig, GsaeModel, GsaeTraining};
use crate::rng::{derive, derive_named, rng_from};
use crate::sampling::{assess_difficulty, generate_balanced, generate_random, GeneratedGraph};

/// Which training recipe an experiment runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arm {
    /// Pre-train, fit the auto-encoder, generate, train on the union.
    Gdm,
    /// Train on the labeled originals only.
    Baseline,
}

impl std::fmt::Display for Arm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Arm::Gdm => "gdm",
            Arm::Baseline => "baseline",
        })
    }
}

/// Named random streams of one job.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct JobSeeds {
    pub labels: u64,
    pub pretrain: u64,
    pub gsae: u64,
    pub generate: u64,
    pub fin: u64,
}

impl JobSeeds {
    pub fn new(job_seed: u64) -> Self {
        JobSeeds {
            labels: derive_named(job_seed, "labels"),
            pretrain: derive_named(job_seed, "pretrain"),
            gsae: derive_named(job_seed, "gsae"),
            generate: derive_named(job_seed, "generate"),
            fin: derive_named(job_seed, "final"),
        }
    }
}

/// Seed of the job for one fold and repeat.
pub fn job_seed(master: u64, fold: usize, repeat: usize) -> u64 {
    derive(derive(master, fold as u64), repeat as u64)
}

/// What one pipeline run produced besides the final model.
#[derive(Debug, Clone, Default)]
pub struct PipelineTrace {
    pub pretrain: TrainingLog,
    pub gsae: TrainingLog,
    pub main: TrainingLog,
    pub generated: Vec<GeneratedGraph>,
    pub gsae_model: Option<GsaeModel>,
}

fn classifier_config(
    cfg: &ExperimentConfig,
    input_dim: usize,
    num_classes: usize,
) -> ClassifierConfig {
    ClassifierConfig {
        hidden_dim: cfg.hidden_dim,
        mp_layers: cfg.mp_layers,
        readout: cfg.readout,
        ..ClassifierConfig::new(input_dim, num_classes)
    }
}

fn check_train_set(train_graphs: &[Graph]) -> Result<(usize, usize)> {
    let first = train_graphs
        .first()
        .ok_or_else(|| Error::contract("training set is empty"))?;
    Ok((first.feature_dim(), first.num_classes()))
}

/// Pre-trains a classifier, fits the structural auto-encoder and produces
/// the generated set; no final training. `seeds` supplies every random
/// stream.
pub fn augment(
    cfg: &ExperimentConfig,
    train_graphs: &[Graph],
    seeds: &JobSeeds,
) -> Result<PipelineTrace> {
    let (d, c) = check_train_set(train_graphs)?;
    let mut trace = PipelineTrace::default();
    let n = train_graphs.len();
    let m = cfg.per_subset(n);
    let mixup = cfg.mixup(train_graphs.iter().all(Graph::is_binary));

    let max_nodes = train_graphs.iter().map(Graph::num_nodes).max().unwrap_or(1);
    let gsae_config = GsaeConfig {
        hidden_dim: cfg.gsae_hidden_dim,
        embed_dim: cfg.gsae_embed_dim,
        ..GsaeConfig::new(cfg.structural_input.resolve(max_nodes))
    };
    let mut gsae = GsaeModel::new(gsae_config, derive(seeds.gsae, 0))?;
    let schedule = GsaeTraining {
        epochs: cfg.gsae_epochs,
        learning_rate: cfg.learning_rate,
        ..GsaeTraining::default()
    };
    trace.gsae = train_gsae(&mut gsae, train_graphs, &schedule, derive(seeds.gsae, 1))?;

    trace.generated = match cfg.policy.difficulty() {
        Some(policy) => {
            let mut pre = ClassifierModel::new(classifier_config(cfg, d, c), seeds.pretrain)?;
            trace.pretrain = train(
                &mut pre,
                train_graphs,
                cfg.pretrain_epochs,
                cfg.learning_rate,
            )?;
            let tags = assess_difficulty(&pre, train_graphs, policy)?;
            generate_balanced(
                &gsae,
                train_graphs,
                &tags,
                &mixup,
                m,
                cfg.toggles,
                seeds.generate,
            )?
        }
        None => {
            let subsets = [cfg.toggles.low, cfg.toggles.medium, cfg.toggles.high]
                .iter()
                .filter(|&&on| on)
                .count();
            generate_random(&gsae, train_graphs, &mixup, m * subsets, seeds.generate)?
        }
    };
    trace.gsae_model = Some(gsae);
    Ok(trace)
}

/// The full augmented recipe on one labeled set: [`augment`], then a fresh
/// classifier trained on originals plus generated graphs.
pub fn run_gdm_pipeline(
    cfg: &ExperimentConfig,
    train_graphs: &[Graph],
    seeds: &JobSeeds,
) -> Result<(ClassifierModel, PipelineTrace)> {
    let (d, c) = check_train_set(train_graphs)?;
    let mut trace = if cfg.toggles.any() {
        augment(cfg, train_graphs, seeds)?
    } else {
        PipelineTrace::default()
    };
    let generated: Vec<Graph> = trace.generated.iter().map(|g| g.graph.clone()).collect();
    let mut model = ClassifierModel::new(classifier_config(cfg, d, c), seeds.fin)?;
    trace.main = train_augmented(
        &mut model,
        train_graphs,
        &generated,
        cfg.lambda_gdm,
        cfg.loss_reduction,
        cfg.main_epochs,
        cfg.learning_rate,
    )?;
    Ok((model, trace))
}

/// Plain training on the labeled originals, sharing the final-model seed
/// with [`run_gdm_pipeline`].
pub fn run_baseline(
    cfg: &ExperimentConfig,
    train_graphs: &[Graph],
    seeds: &JobSeeds,
) -> Result<(ClassifierModel, TrainingLog)> {
    let (d, c) = check_train_set(train_graphs)?;
    let mut model = ClassifierModel::new(classifier_config(cfg, d, c), seeds.fin)?;
    let log = train(&mut model, train_graphs, cfg.main_epochs, cfg.learning_rate)?;
    Ok((model, log))
}

/// Test-index sets of `k` stratified folds: each class is shuffled and
/// dealt round-robin, continuing where the previous class stopped.
pub fn stratified_folds(ds: &GraphDataset, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 || k > ds.len() {
        return Err(Error::Data(format!(
            "cannot split {} graphs into {k} folds",
            ds.len()
        )));
    }
    let mut rng = rng_from(seed);
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for mut members in ds.indices_by_class() {
        members.shuffle(&mut rng);
        for i in members {
            folds[next % k].push(i);
            next += 1;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// Draws `per_class` graphs of every class from `pool`, uniformly without
/// replacement. Output is sorted.
pub fn sample_labeled<R: Rng + ?Sized>(
    ds: &GraphDataset,
    pool: &[usize],
    per_class: usize,
    fold: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let mut by_class = vec![Vec::new(); ds.num_classes];
    for &i in pool {
        by_class[ds.graphs[i].class_index()].push(i);
    }
    let mut chosen = Vec::with_capacity(per_class * ds.num_classes);
    for (c, members) in by_class.iter().enumerate() {
        if members.len() < per_class {
            return Err(Error::Data(format!(
                "fold {fold}: class {} has {} training graphs, {per_class} labels per class requested",
                ds.class_values.get(c).copied().unwrap_or(c as i64),
                members.len()
            )));
        }
        chosen.extend(members.choose_multiple(rng, per_class).copied());
    }
    chosen.sort_unstable();
    Ok(chosen)
}

/// One fold-by-repeat run.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub fold: usize,
    pub repeat: usize,
    pub seed: u64,
    pub accuracy: f64,
    pub num_train: usize,
    pub num_generated: usize,
    pub num_test: usize,
    pub pretrain_losses: Vec<f64>,
    pub gsae_losses: Vec<f64>,
    pub main_losses: Vec<f64>,
    /// Generated-graph provenance with sources mapped to dataset indices.
    pub provenance: Vec<crate::sampling::Provenance>,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub arm: Arm,
    pub dataset: String,
    pub records: Vec<RunRecord>,
    pub mean: f64,
    pub std: f64,
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn run_job(
    cfg: &ExperimentConfig,
    ds: &GraphDataset,
    arm: Arm,
    folds: &[Vec<usize>],
    fold: usize,
    repeat: usize,
) -> Result<RunRecord> {
    let seed = job_seed(cfg.seed, fold, repeat);
    let seeds = JobSeeds::new(seed);
    let test = &folds[fold];
    let pool: Vec<usize> = folds
        .iter()
        .enumerate()
        .filter(|&(f, _)| f != fold)
        .flat_map(|(_, idx)| idx.iter().copied())
        .collect();
    let labeled = sample_labeled(
        ds,
        &pool,
        cfg.labels_per_class,
        fold,
        &mut rng_from(seeds.labels),
    )?;
    let train_graphs: Vec<Graph> = labeled.iter().map(|&i| ds.graphs[i].clone()).collect();
    let test_graphs: Vec<Graph> = test.iter().map(|&i| ds.graphs[i].clone()).collect();

    let (model, trace) = match arm {
        Arm::Gdm => run_gdm_pipeline(cfg, &train_graphs, &seeds)?,
        Arm::Baseline => {
            let (model, main) = run_baseline(cfg, &train_graphs, &seeds)?;
            (
                model,
                PipelineTrace {
                    main,
                    ..Default::default()
                },
            )
        }
    };
    let accuracy = evaluate(&model, &test_graphs)?;
    info!("{arm} fold {fold} repeat {repeat}: accuracy {accuracy:.4}");
    let provenance = trace
        .generated
        .iter()
        .map(|g| {
            let mut p = g.provenance;
            p.source_i = labeled[p.source_i];
            p.source_j = labeled[p.source_j];
            p
        })
        .collect();
    Ok(RunRecord {
        fold,
        repeat,
        seed,
        accuracy,
        num_train: train_graphs.len(),
        num_generated: trace.generated.len(),
        num_test: test_graphs.len(),
        pretrain_losses: trace.pretrain.losses,
        gsae_losses: trace.gsae.losses,
        main_losses: trace.main.losses,
        provenance,
    })
}

/// Runs every fold and repeat of `arm` on `ds`. Jobs run in parallel;
/// results are independent of the thread count.
pub fn run_experiment(cfg: &ExperimentConfig, ds: &GraphDataset, arm: Arm) -> Result<RunResult> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(Error::Data("dataset is empty".into()));
    }
    let folds = stratified_folds(ds, cfg.folds, derive_named(cfg.seed, "folds"))?;
    let jobs: Vec<(usize, usize)> = (0..cfg.folds)
        .flat_map(|f| (0..cfg.repeats).map(move |r| (f, r)))
        .collect();
    let work = || {
        jobs.par_iter()
            .map(|&(f, r)| run_job(cfg, ds, arm, &folds, f, r))
            .collect::<Result<Vec<_>>>()
    };
    let records = if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build()
            .map_err(|e| Error::Usage(format!("cannot start {} threads: {e}", cfg.threads)))?
            .install(work)?
    } else {
        work()?
    };
    let accuracies: Vec<f64> = records.iter().map(|r| r.accuracy).collect();
    let (mean, std) = mean_std(&accuracies);
    Ok(RunResult {
        arm,
        dataset: ds.name.clone(),
        records,
        mean,
        std,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::synthetic;
    use crate::sampling::SubsetToggles;

    fn small_cfg() -> ExperimentConfig {
        ExperimentConfig {
            labels_per_class: 3,
            folds: 3,
            repeats: 2,
            pretrain_epochs: 5,
            gsae_epochs: 5,
            main_epochs: 10,
            hidden_dim: 8,
            mp_layers: 2,
            gsae_hidden_dim: 8,
            gsae_embed_dim: 8,
            threads: 2,
            ..Default::default()
        }
    }

    fn dataset() -> GraphDataset {
        synthetic::rings_and_stars(8, 4..=7, &mut rng_from(1)).unwrap()
    }

    #[test]
    fn folds_partition_and_stratify() {
        let ds = dataset();
        let folds = stratified_folds(&ds, 4, 9).unwrap();
        let mut all: Vec<usize> = folds.iter().flatten().copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..ds.len()).collect::<Vec<_>>());
        for f in &folds {
            let ones = f
                .iter()
                .filter(|&&i| ds.graphs[i].class_index() == 1)
                .count();
            assert_eq!((f.len(), ones), (4, 2));
        }
        assert_eq!(folds, stratified_folds(&ds, 4, 9).unwrap());
        assert!(stratified_folds(&ds, 1, 0).is_err());
    }

    #[test]
    fn label_sampling_names_the_short_class() {
        let ds = dataset();
        let pool: Vec<usize> = (0..ds.len()).collect();
        let got = sample_labeled(&ds, &pool, 3, 0, &mut rng_from(0)).unwrap();
        assert_eq!(got.len(), 6);
        let e = sample_labeled(&ds, &pool, 9, 4, &mut rng_from(0)).unwrap_err();
        assert!(
            matches!(e, Error::Data(ref m) if m.contains("fold 4") && m.contains("class 0")),
            "{e}"
        );
    }

    #[test]
    fn pipeline_generates_three_m() {
        let ds = dataset();
        let cfg = small_cfg();
        let train_graphs = &ds.graphs[..10];
        let (_, trace) = run_gdm_pipeline(&cfg, train_graphs, &JobSeeds::new(1)).unwrap();
        assert_eq!(trace.generated.len(), 30);
        assert_eq!(trace.main.losses.len(), 10);
        assert_eq!(trace.gsae.losses.len(), 5);
    }

    #[test]
    fn disabled_augmentation_equals_baseline() {
        let ds = dataset();
        let cfg = ExperimentConfig {
            lambda_gdm: 0.0,
            toggles: SubsetToggles::none(),
            ..small_cfg()
        };
        let seeds = JobSeeds::new(3);
        let (gm, trace) = run_gdm_pipeline(&cfg, &ds.graphs[..6], &seeds).unwrap();
        let (bm, log) = run_baseline(&cfg, &ds.graphs[..6], &seeds).unwrap();
        assert_eq!(trace.main.losses, log.losses);
        assert_eq!(gm, bm);
    }

    #[test]
    fn experiment_is_deterministic_across_thread_counts() {
        let ds = dataset();
        let a = run_experiment(&small_cfg(), &ds, Arm::Gdm).unwrap();
        let b = run_experiment(
            &ExperimentConfig {
                threads: 1,
                ..small_cfg()
            },
            &ds,
            Arm::Gdm,
        )
        .unwrap();
        assert_eq!(a.records.len(), 6);
        let acc = |r: &RunResult| r.records.iter().map(|x| x.accuracy).collect::<Vec<_>>();
        assert_eq!(acc(&a), acc(&b));
        assert_eq!(a.records[0].main_losses, b.records[0].main_losses);
        let (mean, std) = mean_std(&acc(&a));
        assert_eq!((a.mean, a.std), (mean, std));
    }

    #[test]
    fn provenance_points_at_dataset_indices() {
        let ds = dataset();
        let r = run_experiment(
            &ExperimentConfig {
                repeats: 1,
                ..small_cfg()
            },
            &ds,
            Arm::Gdm,
        )
        .unwrap();
        for rec in &r.records {
            assert_eq!(rec.provenance.len(), rec.num_generated);
            assert_eq!(rec.num_generated, 3 * rec.num_train);
            assert!(rec
                .provenance
                .iter()
                .all(|p| p.source_i < ds.len() && p.source_j < ds.len()));
        }
    }

    #[test]
    fn mean_std_of_known_values() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - 1.25f64.sqrt()).abs() < 1e-15);
    }
}
