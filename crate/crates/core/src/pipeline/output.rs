//! Experiment outputs: `results.csv`, `loss_curves.csv`,
//! `provenance.csv` and `summary.json`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;
use sha2::{Digest, Sha256};

use super::{ExperimentConfig, RunResult};
use crate::error::{Error, Result};
use crate::fsio::write_atomic;
use crate::sampling::Provenance;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputFiles {
    pub results: PathBuf,
    pub loss_curves: PathBuf,
    pub provenance: PathBuf,
    pub summary: PathBuf,
}

fn results_csv(result: &RunResult) -> String {
    let mut out =
        String::from("fold,repeat,seed,accuracy,train_graphs,generated_graphs,test_graphs\n");
    for r in &result.records {
        writeln!(
            out,
            "{},{},{},{:?},{},{},{}",
            r.fold, r.repeat, r.seed, r.accuracy, r.num_train, r.num_generated, r.num_test
        )
        .expect("write to string");
    }
    out
}

fn loss_curves_csv(result: &RunResult) -> String {
    let mut out = String::from("fold,repeat,phase,epoch,loss\n");
    for r in &result.records {
        for (phase, losses) in [
            ("pretrain", &r.pretrain_losses),
            ("gsae", &r.gsae_losses),
            ("main", &r.main_losses),
        ] {
            for (epoch, loss) in losses.iter().enumerate() {
                writeln!(out, "{},{},{phase},{epoch},{loss:?}", r.fold, r.repeat)
                    .expect("write to string");
            }
        }
    }
    out
}

/// Provenance rows, each starting with `prefix`.
fn provenance_rows(out: &mut String, prefix: &str, records: &[Provenance]) {
    for (k, p) in records.iter().enumerate() {
        writeln!(
            out,
            "{prefix}{k},{},{},{},{:?},{}",
            p.subset, p.source_i, p.source_j, p.lambda, p.seed
        )
        .expect("write to string");
    }
}

/// One record per generated graph: subset, source graphs, mixing
/// coefficient and alignment seed.
pub fn provenance_csv(records: &[Provenance]) -> String {
    let mut out = String::from("index,subset,source_i,source_j,lambda,seed\n");
    provenance_rows(&mut out, "", records);
    out
}

pub fn write_provenance(path: &Path, records: &[Provenance]) -> Result<()> {
    write_atomic(path, &provenance_csv(records))
}

fn experiment_provenance_csv(result: &RunResult) -> String {
    let mut out = String::from("fold,repeat,index,subset,source_i,source_j,lambda,seed\n");
    for r in &result.records {
        provenance_rows(
            &mut out,
            &format!("{},{},", r.fold, r.repeat),
            &r.provenance,
        );
    }
    out
}

/// Writes every output file into `dir`, creating it if needed.
pub fn write_outputs(
    result: &RunResult,
    cfg: &ExperimentConfig,
    dir: &Path,
) -> Result<OutputFiles> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = OutputFiles {
        results: dir.join("results.csv"),
        loss_curves: dir.join("loss_curves.csv"),
        provenance: dir.join("provenance.csv"),
        summary: dir.join("summary.json"),
    };
    let contents = [
        ("results.csv", results_csv(result), &files.results),
        (
            "loss_curves.csv",
            loss_curves_csv(result),
            &files.loss_curves,
        ),
        (
            "provenance.csv",
            experiment_provenance_csv(result),
            &files.provenance,
        ),
    ];
    let mut hasher = Sha256::new();
    for (name, body, path) in &contents {
        hasher.update(format!("{name} {}\0", body.len()));
        hasher.update(body);
        write_atomic(path, body)?;
    }
    let digest = format!("sha256:{}", hex::encode(hasher.finalize()));

    let accuracies: Vec<f64> = result.records.iter().map(|r| r.accuracy).collect();
    let summary = json!({
        "arm": result.arm.to_string(),
        "dataset": result.dataset,
        "runs": result.records.len(),
        "mean_accuracy": result.mean,
        "std_accuracy": result.std,
        "accuracies": accuracies,
        "digest": digest,
        "config": cfg.to_pairs(),
    });
    let text = serde_json::to_string_pretty(&summary).map_err(|e| Error::Data(e.to_string()))?;
    write_atomic(&files.summary, &(text + "\n"))?;
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{Arm, RunRecord};
    use crate::sampling::Subset;

    fn result() -> RunResult {
        let rec = |fold, accuracy| RunRecord {
            fold,
            repeat: 0,
            seed: 7,
            accuracy,
            num_train: 4,
            num_generated: 1,
            num_test: 3,
            pretrain_losses: vec![1.0],
            gsae_losses: vec![],
            main_losses: vec![0.5, 0.25],
            provenance: vec![Provenance {
                subset: Subset::Medium,
                source_i: 2,
                source_j: 5,
                lambda: 0.1,
                seed: 99,
            }],
        };
        RunResult {
            arm: Arm::Gdm,
            dataset: "TOY".into(),
            records: vec![rec(0, 0.5), rec(1, 1.0 / 3.0)],
            mean: 5.0 / 12.0,
            std: 1.0 / 12.0,
        }
    }

    #[test]
    fn files_have_expected_rows() {
        let dir = tempfile::tempdir().unwrap();
        let files = write_outputs(&result(), &ExperimentConfig::default(), dir.path()).unwrap();
        let results = fs::read_to_string(&files.results).unwrap();
        assert_eq!(
            results.lines().nth(2).unwrap(),
            "1,0,7,0.3333333333333333,4,1,3"
        );
        let curves = fs::read_to_string(&files.loss_curves).unwrap();
        assert_eq!(curves.lines().count(), 1 + 2 * 3);
        assert!(curves.contains("0,0,main,1,0.25"));
        let prov = fs::read_to_string(&files.provenance).unwrap();
        assert_eq!(prov.lines().nth(1).unwrap(), "0,0,0,medium,2,5,0.1,99");
        let summary: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(&files.summary).unwrap()).unwrap();
        assert_eq!(summary["runs"], 2);
        assert_eq!(summary["config"]["policy"], "acc");
        assert!(summary["digest"].as_str().unwrap().starts_with("sha256:"));
    }

    #[test]
    fn digest_depends_on_content_only() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let cfg = ExperimentConfig::default();
        let read = |d: &Path| {
            let f = write_outputs(&result(), &cfg, d).unwrap();
            let v: serde_json::Value =
                serde_json::from_str(&fs::read_to_string(f.summary).unwrap()).unwrap();
            v["digest"].clone()
        };
        assert_eq!(read(a.path()), read(b.path()));
        let mut changed = result();
        changed.records[0].accuracy = 0.75;
        let f = write_outputs(&changed, &cfg, b.path()).unwrap();
        let v: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(f.summary).unwrap()).unwrap();
        assert_ne!(v["digest"], read(a.path()));
    }
}
