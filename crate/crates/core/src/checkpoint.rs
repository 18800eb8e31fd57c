//! Versioned text dump of model weights.
//!
//! ```text
//! gdm-weights 1
//! model classifier
//! input_dim 7
//! ...
//! tensor 7 64
//! <one comma-separated row per line>
//! ```
//!
//! Header keys come first, then every parameter tensor in
//! [`Parameterized::parameters`] order. Reals use the shortest
//! representation that parses back to the same bits.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::classifier::{ClassifierConfig, ClassifierModel};
use crate::error::{Error, Result};
use crate::fsio::{read_to_string, write_atomic};
use crate::gsae::{GsaeConfig, GsaeModel, StructuralInput, StructuralInputKind};
use crate::kernel::Tensor;
use crate::layers::{Dense, Parameterized};

const MAGIC: &str = "gdm-weights";
const VERSION: u32 = 1;

fn render(model_kind: &str, header: &[(&str, String)], tensors: &[&Tensor]) -> String {
    let mut out = format!("{MAGIC} {VERSION}\nmodel {model_kind}\n");
    for (k, v) in header {
        out.push_str(&format!("{k} {v}\n"));
    }
    for t in tensors {
        let (r, c) = t.shape();
        out.push_str(&format!("tensor {r} {c}\n"));
        for row in t.values.rows() {
            let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
    }
    out
}

struct Parsed {
    origin: PathBuf,
    header: BTreeMap<String, (usize, String)>,
    tensors: Vec<Array2<f64>>,
}

impl Parsed {
    fn err(&self, line: usize, msg: impl Into<String>) -> Error {
        Error::Format {
            file: self.origin.clone(),
            line,
            msg: msg.into(),
        }
    }

    fn get<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let (line, raw) = self
            .header
            .get(key)
            .ok_or_else(|| self.err(0, format!("missing header key '{key}'")))?;
        raw.parse()
            .map_err(|_| self.err(*line, format!("bad value for '{key}': {raw}")))
    }
}

fn parse(text: &str, origin: &Path, expected_kind: &str) -> Result<Parsed> {
    let err = |line: usize, msg: String| Error::Format {
        file: origin.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    match lines.next() {
        Some((_, l)) if l == format!("{MAGIC} {VERSION}") => {}
        Some((n, l)) => return Err(err(n, format!("expected '{MAGIC} {VERSION}', found '{l}'"))),
        None => return Err(err(1, "empty checkpoint".into())),
    }
    let mut header = BTreeMap::new();
    let mut tensors = Vec::new();
    let mut pending: Option<(usize, usize, usize, Vec<f64>)> = None;
    for (n, l) in lines {
        if let Some((_, rows, cols, values)) = pending.as_mut() {
            if values.len() < *rows * *cols {
                let row: Vec<f64> = l
                    .split(',')
                    .map(|v| v.trim().parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| err(n, format!("bad real: {e}")))?;
                if row.len() != *cols {
                    return Err(err(
                        n,
                        format!("expected {cols} values, found {}", row.len()),
                    ));
                }
                values.extend(row);
                continue;
            }
        }
        if let Some((_, rows, cols, values)) = pending.take() {
            tensors.push(Array2::from_shape_vec((rows, cols), values).expect("row count checked"));
        }
        let (key, value) = l
            .split_once(' ')
            .ok_or_else(|| err(n, format!("malformed line '{l}'")))?;
        if key == "tensor" {
            let dims: Vec<usize> = value
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| err(n, format!("bad tensor shape '{value}'")))?;
            let [rows, cols] = dims[..] else {
                return Err(err(n, format!("bad tensor shape '{value}'")));
            };
            pending = Some((n, rows, cols, Vec::with_capacity(rows * cols)));
        } else if tensors.is_empty() {
            if header
                .insert(key.to_string(), (n, value.trim().to_string()))
                .is_some()
            {
                return Err(err(n, format!("duplicate header key '{key}'")));
            }
        } else {
            return Err(err(n, format!("header key '{key}' after tensors")));
        }
    }
    if let Some((n, rows, cols, values)) = pending {
        if values.len() != rows * cols {
            return Err(err(
                n,
                format!(
                    "tensor truncated: {} of {} values",
                    values.len(),
                    rows * cols
                ),
            ));
        }
        tensors.push(Array2::from_shape_vec((rows, cols), values).expect("row count checked"));
    }
    let parsed = Parsed {
        origin: origin.to_path_buf(),
        header,
        tensors,
    };
    let kind: String = parsed.get("model")?;
    if kind != expected_kind {
        return Err(parsed.err(
            2,
            format!("expected a {expected_kind} checkpoint, found {kind}"),
        ));
    }
    Ok(parsed)
}

fn dense_layers(parsed: &Parsed, count: usize) -> Result<Vec<Dense>> {
    if parsed.tensors.len() != 2 * count {
        return Err(parsed.err(
            0,
            format!(
                "expected {} tensors, found {}",
                2 * count,
                parsed.tensors.len()
            ),
        ));
    }
    Ok(parsed
        .tensors
        .chunks(2)
        .map(|pair| Dense {
            weight: Tensor::parameter(pair[0].clone()),
            bias: Tensor::parameter(pair[1].clone()),
        })
        .collect())
}

pub fn classifier_to_string(model: &ClassifierModel) -> String {
    let c = model.config();
    let header = [
        ("input_dim", c.input_dim.to_string()),
        ("num_classes", c.num_classes.to_string()),
        ("hidden_dim", c.hidden_dim.to_string()),
        ("mp_layers", c.mp_layers.to_string()),
        ("readout", c.readout.to_string()),
    ];
    render("classifier", &header, &model.parameters())
}

pub fn classifier_from_str(text: &str, origin: &Path) -> Result<ClassifierModel> {
    let p = parse(text, origin, "classifier")?;
    let config = ClassifierConfig {
        input_dim: p.get("input_dim")?,
        num_classes: p.get("num_classes")?,
        hidden_dim: p.get("hidden_dim")?,
        mp_layers: p.get("mp_layers")?,
        readout: p.get("readout")?,
    };
    let mut layers = dense_layers(&p, config.mp_layers + 2)?;
    let fc2 = layers.pop().expect("length checked");
    let fc1 = layers.pop().expect("length checked");
    ClassifierModel::from_parts(config, layers, fc1, fc2)
}

pub fn gsae_to_string(model: &GsaeModel) -> String {
    let c = model.config();
    let header = [
        ("input", c.input.kind().to_string()),
        ("input_width", c.input.width().to_string()),
        ("hidden_dim", c.hidden_dim.to_string()),
        ("embed_dim", c.embed_dim.to_string()),
    ];
    render("gsae", &header, &model.parameters())
}

pub fn gsae_from_str(text: &str, origin: &Path) -> Result<GsaeModel> {
    let p = parse(text, origin, "gsae")?;
    let kind: StructuralInputKind = p.get("input")?;
    let width: usize = p.get("input_width")?;
    let input = match kind {
        StructuralInputKind::Degree => StructuralInput::Degree,
        StructuralInputKind::DegreeDiagonal => StructuralInput::DegreeDiagonal { width },
    };
    let config = GsaeConfig {
        input,
        hidden_dim: p.get("hidden_dim")?,
        embed_dim: p.get("embed_dim")?,
    };
    let mut layers = dense_layers(&p, 2)?;
    let layer2 = layers.pop().expect("length checked");
    let layer1 = layers.pop().expect("length checked");
    GsaeModel::from_parts(config, layer1, layer2)
}

pub fn save_classifier(model: &ClassifierModel, path: &Path) -> Result<()> {
    write_atomic(path, &classifier_to_string(model))
}

pub fn load_classifier(path: &Path) -> Result<ClassifierModel> {
    classifier_from_str(&read_to_string(path)?, path)
}

pub fn save_gsae(model: &GsaeModel, path: &Path) -> Result<()> {
    write_atomic(path, &gsae_to_string(model))
}

pub fn load_gsae(path: &Path) -> Result<GsaeModel> {
    gsae_from_str(&read_to_string(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::Readout;

    fn mem() -> &'static Path {
        Path::new("<memory>")
    }

    #[test]
    fn classifier_round_trips_bitwise() {
        let config = ClassifierConfig {
            readout: Readout::Max,
            mp_layers: 3,
            hidden_dim: 8,
            ..ClassifierConfig::new(5, 3)
        };
        let mut model = ClassifierModel::new(config, 4).unwrap();
        model.parameters_mut()[1].values.fill(0.1 + 0.2);
        let text = classifier_to_string(&model);
        assert!(text.starts_with("gdm-weights 1\nmodel classifier\n"));
        assert_eq!(classifier_from_str(&text, mem()).unwrap(), model);
    }

    #[test]
    fn gsae_round_trips_through_a_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gsae.txt");
        for input in [
            StructuralInput::Degree,
            StructuralInput::DegreeDiagonal { width: 9 },
        ] {
            let model = GsaeModel::new(GsaeConfig::new(input), 2).unwrap();
            save_gsae(&model, &path).unwrap();
            assert_eq!(load_gsae(&path).unwrap(), model);
        }
    }

    #[test]
    fn wrong_kind_and_bad_magic_are_rejected() {
        let model = GsaeModel::new(GsaeConfig::new(StructuralInput::Degree), 2).unwrap();
        let text = gsae_to_string(&model);
        assert!(matches!(
            classifier_from_str(&text, mem()),
            Err(Error::Format { .. })
        ));
        let bad = text.replacen("gdm-weights 1", "gdm-weights 9", 1);
        assert!(matches!(
            gsae_from_str(&bad, mem()),
            Err(Error::Format { line: 1, .. })
        ));
    }

    #[test]
    fn truncated_and_malformed_tensors_are_rejected() {
        let model = GsaeModel::new(GsaeConfig::new(StructuralInput::Degree), 2).unwrap();
        let text = gsae_to_string(&model);
        let truncated: String = text
            .lines()
            .take(text.lines().count() - 1)
            .collect::<Vec<_>>()
            .join("\n");
        assert!(gsae_from_str(&truncated, mem()).is_err());
        let bad = text.replacen("tensor 1 32", "tensor 1 31", 1);
        assert!(matches!(
            gsae_from_str(&bad, mem()),
            Err(Error::Format { .. })
        ));
        let garbage = text.replacen("model gsae\n", "model gsae\nhidden_dim x\n", 1);
        assert!(gsae_from_str(&garbage, mem()).is_err());
    }

    #[test]
    fn missing_checkpoint_file() {
        assert!(matches!(
            load_classifier(Path::new("/nonexistent/w.txt")),
            Err(Error::MissingFile(_))
        ));
    }
}
