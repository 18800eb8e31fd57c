//! The `gdm` command-line tool.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::checkpoint::save_gsae;
use crate::error::{Error, Result};
use crate::gradcheck::{run_gradcheck, TOLERANCE};
use crate::graph::{load_tu_dataset, synthetic, write_tu_dataset, Graph, GraphDataset};
use crate::pipeline::{
    self, job_seed, write_outputs, write_provenance, Arm, ExperimentConfig, JobSeeds,
};
use crate::rng::rng_from;

#[derive(Debug, Parser)]
#[command(
    name = "gdm",
    version,
    about = "Graph dual mixup augmentation for low-label graph classification"
)]
struct Cli {
    /// Log progress (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the k-fold experiment with augmentation.
    Run(ExperimentArgs),
    /// Run the k-fold experiment without augmentation.
    Baseline(ExperimentArgs),
    /// Generate an augmented graph set from a whole dataset, without final
    /// training.
    Augment(ExperimentArgs),
    /// Check kernel gradients against finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 10)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Re-serialize a dataset.
    Export {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        name: String,
        #[arg(long)]
        out_dir: PathBuf,
        /// Name of the written dataset; defaults to the input name.
        #[arg(long = "as")]
        rename: Option<String>,
    },
    /// Write a synthetic two-class dataset.
    Synth {
        #[arg(long, value_enum)]
        kind: SynthKind,
        #[arg(long, default_value_t = 50)]
        per_class: usize,
        #[arg(long, default_value_t = 10)]
        min_nodes: usize,
        #[arg(long, default_value_t = 20)]
        max_nodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        name: Option<String>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SynthKind {
    /// Rings against stars.
    Ringstar,
    /// Erdos-Renyi graphs of density 0.2 against 0.5.
    Density,
}

/// Flags shared by the experiment commands; each overrides the config key
/// of the same name.
#[derive(Debug, Args)]
struct ExperimentArgs {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory holding the dataset files.
    #[arg(long)]
    dataset: Option<String>,
    /// Dataset name (file prefix).
    #[arg(long)]
    name: Option<String>,
    #[arg(long)]
    out_dir: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    labels_per_class: Option<String>,
    #[arg(long)]
    folds: Option<String>,
    #[arg(long)]
    repeats: Option<String>,
    /// acc, unc or rand.
    #[arg(long)]
    policy: Option<String>,
    /// mean, add or max.
    #[arg(long)]
    readout: Option<String>,
    #[arg(long)]
    no_low: bool,
    #[arg(long)]
    no_med: bool,
    #[arg(long)]
    no_high: bool,
    #[arg(long)]
    aug_multiplier: Option<String>,
    #[arg(long)]
    epsilon: Option<String>,
    #[arg(long)]
    lambda_gdm: Option<String>,
    /// mean or sum.
    #[arg(long)]
    loss_reduction: Option<String>,
    #[arg(long)]
    pretrain_epochs: Option<String>,
    #[arg(long)]
    main_epochs: Option<String>,
    #[arg(long)]
    gsae_epochs: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long)]
    beta: Option<String>,
    /// auto, true or false.
    #[arg(long)]
    binarize: Option<String>,
    #[arg(long)]
    keep_isolated: Option<String>,
    #[arg(long)]
    hidden_dim: Option<String>,
    #[arg(long)]
    mp_layers: Option<String>,
    #[arg(long)]
    gsae_hidden_dim: Option<String>,
    #[arg(long)]
    gsae_embed_dim: Option<String>,
    /// degree-diagonal or degree.
    #[arg(long)]
    structural_input: Option<String>,
    /// Worker threads, 0 for all cores.
    #[arg(long)]
    threads: Option<String>,
}

impl ExperimentArgs {
    fn overrides(&self) -> Vec<(&'static str, String)> {
        let opts = [
            ("dataset", &self.dataset),
            ("name", &self.name),
            ("out-dir", &self.out_dir),
            ("seed", &self.seed),
            ("labels-per-class", &self.labels_per_class),
            ("folds", &self.folds),
            ("repeats", &self.repeats),
            ("policy", &self.policy),
            ("readout", &self.readout),
            ("aug-multiplier", &self.aug_multiplier),
            ("epsilon", &self.epsilon),
            ("lambda-gdm", &self.lambda_gdm),
            ("loss-reduction", &self.loss_reduction),
            ("pretrain-epochs", &self.pretrain_epochs),
            ("main-epochs", &self.main_epochs),
            ("gsae-epochs", &self.gsae_epochs),
            ("lr", &self.lr),
            ("alpha", &self.alpha),
            ("beta", &self.beta),
            ("binarize", &self.binarize),
            ("keep-isolated", &self.keep_isolated),
            ("hidden-dim", &self.hidden_dim),
            ("mp-layers", &self.mp_layers),
            ("gsae-hidden-dim", &self.gsae_hidden_dim),
            ("gsae-embed-dim", &self.gsae_embed_dim),
            ("structural-input", &self.structural_input),
            ("threads", &self.threads),
        ];
        let mut out: Vec<(&'static str, String)> = opts
            .into_iter()
            .filter_map(|(k, v)| v.as_ref().map(|v| (k, v.clone())))
            .collect();
        for (k, on) in [
            ("no-low", self.no_low),
            ("no-med", self.no_med),
            ("no-high", self.no_high),
        ] {
            if on {
                out.push((k, "true".into()));
            }
        }
        out
    }

    /// Config file first, then flags.
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        for (k, v) in self.overrides() {
            cfg.set(k, &v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn load(cfg: &ExperimentConfig) -> Result<GraphDataset> {
    let (Some(dir), Some(name)) = (&cfg.dataset, &cfg.name) else {
        return Err(Error::Usage(
            "a dataset directory and name are required (--dataset, --name)".into(),
        ));
    };
    load_tu_dataset(dir, name)
}

fn experiment(args: &ExperimentArgs, arm: Arm) -> Result<()> {
    let cfg = args.resolve()?;
    let ds = load(&cfg)?;
    let result = pipeline::run_experiment(&cfg, &ds, arm)?;
    let files = write_outputs(&result, &cfg, &cfg.out_dir)?;
    println!(
        "{arm} on {}: {} runs, accuracy {:.2} ({:.2})",
        ds.name,
        result.records.len(),
        100.0 * result.mean,
        100.0 * result.std
    );
    println!("wrote {}", files.summary.display());
    Ok(())
}

fn augment(args: &ExperimentArgs) -> Result<()> {
    let cfg = args.resolve()?;
    let ds = load(&cfg)?;
    let seeds = JobSeeds::new(job_seed(cfg.seed, 0, 0));
    let trace = pipeline::augment(&cfg, &ds.graphs, &seeds)?;
    let out = &cfg.out_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;

    let name = format!("{}_GDM", ds.name);
    let graphs: Vec<Graph> = trace.generated.iter().map(|g| g.graph.clone()).collect();
    let mut generated = GraphDataset::new(name.clone(), graphs, ds.feature_dim, ds.num_classes)?;
    generated.class_values = ds.class_values.clone();
    write_tu_dataset(&generated, out, &name)?;
    let provenance: Vec<_> = trace.generated.iter().map(|g| g.provenance).collect();
    write_provenance(&out.join(format!("{name}_provenance.csv")), &provenance)?;
    if let Some(gsae) = &trace.gsae_model {
        save_gsae(gsae, &out.join("gsae_weights.txt"))?;
    }
    println!(
        "generated {} graphs from {} originals into {}",
        generated.len(),
        ds.len(),
        out.display()
    );
    Ok(())
}

fn gradcheck(instances: usize, seed: u64) -> Result<()> {
    let results = run_gradcheck(instances, seed)?;
    let mut failed = 0;
    for r in &results {
        let status = if r.passed() { "PASS" } else { "FAIL" };
        if !r.passed() {
            failed += 1;
        }
        println!(
            "{status} {} instance {} relative error {:.3e}",
            r.name, r.instance, r.relative_error
        );
    }
    let worst = results.iter().map(|r| r.relative_error).fold(0.0, f64::max);
    println!(
        "{} checks, {failed} failed, worst relative error {worst:.3e} (tolerance {TOLERANCE:e})",
        results.len()
    );
    if failed > 0 {
        return Err(Error::NonFinite(format!(
            "{failed} gradient checks exceeded tolerance"
        )));
    }
    Ok(())
}

fn export(dataset: &Path, name: &str, out_dir: &Path, rename: Option<&str>) -> Result<()> {
    let ds = load_tu_dataset(dataset, name)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let target = rename.unwrap_or(name);
    write_tu_dataset(&ds, out_dir, target)?;
    println!(
        "wrote {} graphs as {target} into {}",
        ds.len(),
        out_dir.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn synth(
    kind: SynthKind,
    per_class: usize,
    min_nodes: usize,
    max_nodes: usize,
    seed: u64,
    out_dir: &Path,
    name: Option<&str>,
) -> Result<()> {
    if min_nodes == 0 || min_nodes > max_nodes {
        return Err(Error::Usage(format!(
            "invalid node range {min_nodes}..={max_nodes}"
        )));
    }
    let mut rng = rng_from(seed);
    let ds = match kind {
        SynthKind::Ringstar => {
            synthetic::rings_and_stars(per_class, min_nodes..=max_nodes, &mut rng)?
        }
        SynthKind::Density => {
            synthetic::erdos_renyi_classes(per_class, [0.2, 0.5], min_nodes..=max_nodes, &mut rng)?
        }
    };
    let name = name.unwrap_or(&ds.name).to_string();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_tu_dataset(&ds, out_dir, &name)?;
    println!(
        "wrote {} graphs as {name} into {}",
        ds.len(),
        out_dir.display()
    );
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(args) => experiment(&args, Arm::Gdm),
        Command::Baseline(args) => experiment(&args, Arm::Baseline),
        Command::Augment(args) => augment(&args),
        Command::Gradcheck { instances, seed } => gradcheck(instances, seed),
        Command::Export {
            dataset,
            name,
            out_dir,
            rename,
        } => export(&dataset, &name, &out_dir, rename.as_deref()),
        Command::Synth {
            kind,
            per_class,
            min_nodes,
            max_nodes,
            seed,
            out_dir,
            name,
        } => synth(
            kind,
            per_class,
            min_nodes,
            max_nodes,
            seed,
            &out_dir,
            name.as_deref(),
        ),
    }
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code: 0 success, 1 usage, 2 data, 3 numeric failure.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .try_init();
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
