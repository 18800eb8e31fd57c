//! Reader and writer for the TU benchmark text layout.
//!
//! Files live in one directory and share a `{name}_` prefix:
//!
//! * `_A.txt`: one `src, dst` pair per line, 1-based global node ids
//! * `_graph_indicator.txt`: 1-based graph id of every node
//! * `_graph_labels.txt`: one integer class per graph
//! * `_node_labels.txt` (optional): one integer per node, one-hot encoded
//! * `_node_attributes.txt` (optional): comma-separated reals per node
//!
//! Two extra optional files carry what generated graphs need and the plain
//! layout cannot express: `_edge_weights.txt` (one real per `_A.txt` line)
//! and `_graph_soft_labels.txt` (comma-separated class probabilities per
//! graph).

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use log::warn;
use ndarray::{Array1, Array2};

use super::{one_hot, Graph, GraphDataset};
use crate::error::{Error, Result};
use crate::fsio::write_atomic;

fn file_path(root: &Path, name: &str, suffix: &str) -> PathBuf {
    root.join(format!("{name}_{suffix}.txt"))
}

/// Non-empty lines of a file with their 1-based line numbers.
fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let file = fs::File::open(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path.to_path_buf())
        } else {
            Error::io(path, e)
        }
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim();
        if !trimmed.is_empty() {
            out.push((i + 1, trimmed.to_string()));
        }
    }
    Ok(out)
}

fn read_optional(path: &Path) -> Result<Option<Vec<(usize, String)>>> {
    if path.exists() {
        read_lines(path).map(Some)
    } else {
        Ok(None)
    }
}

fn format_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Format {
        file: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn parse_field<T: std::str::FromStr>(path: &Path, line: usize, field: &str) -> Result<T> {
    field
        .trim()
        .parse()
        .map_err(|_| format_err(path, line, format!("cannot parse {field:?}")))
}

fn parse_reals(path: &Path, line: usize, text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|f| parse_field(path, line, f))
        .collect()
}

fn expect_count(path: &Path, lines: &[(usize, String)], expected: usize, what: &str) -> Result<()> {
    if lines.len() != expected {
        let line = lines.last().map_or(0, |l| l.0);
        return Err(format_err(
            path,
            line,
            format!("expected {expected} {what} lines, found {}", lines.len()),
        ));
    }
    Ok(())
}

/// Loads `{root}/{name}_*.txt` into a dataset.
pub fn load_tu_dataset(root: impl AsRef<Path>, name: &str) -> Result<GraphDataset> {
    let root = root.as_ref();
    let a_path = file_path(root, name, "A");
    let ind_path = file_path(root, name, "graph_indicator");
    let lbl_path = file_path(root, name, "graph_labels");
    let edges = read_lines(&a_path)?;
    let indicator = read_lines(&ind_path)?;
    let graph_labels = read_lines(&lbl_path)?;

    let num_graphs = graph_labels.len();
    if num_graphs == 0 {
        return Err(Error::Data(format!(
            "{} lists no graphs",
            lbl_path.display()
        )));
    }

    // Global node -> (graph, local index).
    let mut node_graph = Vec::with_capacity(indicator.len());
    let mut sizes = vec![0usize; num_graphs];
    for (line, text) in &indicator {
        let gid: usize = parse_field(&ind_path, *line, text)?;
        if gid == 0 || gid > num_graphs {
            return Err(format_err(
                &ind_path,
                *line,
                format!("graph id {gid} outside 1..={num_graphs}"),
            ));
        }
        node_graph.push((gid - 1, sizes[gid - 1]));
        sizes[gid - 1] += 1;
    }
    if let Some(empty) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::Data(format!("graph {} has no nodes", empty + 1)));
    }
    let num_nodes = node_graph.len();

    let features = node_features(root, name, num_nodes)?;
    let feature_dim = features.ncols();

    let weight_path = file_path(root, name, "edge_weights");
    let weights = read_optional(&weight_path)?;
    if let Some(w) = &weights {
        expect_count(&weight_path, w, edges.len(), "edge weight")?;
    }

    let mut adjacency: Vec<Array2<f64>> = sizes.iter().map(|&n| Array2::zeros((n, n))).collect();
    let mut self_loops = 0usize;
    for (k, (line, text)) in edges.iter().enumerate() {
        let mut parts = text.split(',');
        let (src, dst) = match (parts.next(), parts.next(), parts.next()) {
            (Some(s), Some(d), None) => (
                parse_field::<usize>(&a_path, *line, s)?,
                parse_field::<usize>(&a_path, *line, d)?,
            ),
            _ => return Err(format_err(&a_path, *line, "expected `src, dst`")),
        };
        for node in [src, dst] {
            if node == 0 || node > num_nodes {
                return Err(format_err(
                    &a_path,
                    *line,
                    format!("node {node} outside 1..={num_nodes}"),
                ));
            }
        }
        let (gs, ls) = node_graph[src - 1];
        let (gd, ld) = node_graph[dst - 1];
        if gs != gd {
            return Err(format_err(
                &a_path,
                *line,
                format!("edge joins graph {} and graph {}", gs + 1, gd + 1),
            ));
        }
        if ls == ld {
            self_loops += 1;
            continue;
        }
        let weight = match &weights {
            Some(w) => {
                let (wl, wt) = &w[k];
                let v: f64 = parse_field(&weight_path, *wl, wt)?;
                if !(v.is_finite() && v >= 0.0) {
                    return Err(format_err(
                        &weight_path,
                        *wl,
                        "edge weight must be finite and >= 0",
                    ));
                }
                v
            }
            None => 1.0,
        };
        // Duplicates collapse onto the same cell.
        adjacency[gs][[ls, ld]] = weight;
    }
    if self_loops > 0 {
        warn!("{name}: dropped {self_loops} self-loop lines");
    }

    let undirected = adjacency.iter().all(|a| a == a.t());
    if !undirected {
        warn!("{name}: some edges appear in one direction only; adjacency kept asymmetric");
    }

    let raw_labels: Vec<i64> = graph_labels
        .iter()
        .map(|(line, text)| parse_field(&lbl_path, *line, text))
        .collect::<Result<_>>()?;
    let class_values: Vec<i64> = raw_labels
        .iter()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();

    let soft_path = file_path(root, name, "graph_soft_labels");
    let soft = match read_optional(&soft_path)? {
        Some(lines) => {
            expect_count(&soft_path, &lines, num_graphs, "soft label")?;
            let rows: Vec<Vec<f64>> = lines
                .iter()
                .map(|(line, text)| parse_reals(&soft_path, *line, text))
                .collect::<Result<_>>()?;
            Some(rows)
        }
        None => None,
    };
    let num_classes = match &soft {
        Some(rows) => rows[0].len(),
        None => class_values.len(),
    };
    let class_values = if class_values.len() == num_classes {
        class_values
    } else {
        (0..num_classes as i64).collect()
    };

    // Node rows are split by graph in indicator order.
    let mut rows_by_graph: Vec<Vec<usize>> = vec![Vec::new(); num_graphs];
    for (node, &(g, _)) in node_graph.iter().enumerate() {
        rows_by_graph[g].push(node);
    }

    let mut graphs = Vec::with_capacity(num_graphs);
    for (g, a) in adjacency.into_iter().enumerate() {
        let x = features.select(ndarray::Axis(0), &rows_by_graph[g]);
        let label = match &soft {
            Some(rows) => {
                if rows[g].len() != num_classes {
                    return Err(format_err(
                        &soft_path,
                        g + 1,
                        "inconsistent soft label width",
                    ));
                }
                Array1::from(rows[g].clone())
            }
            None => {
                let class = class_values
                    .binary_search(&raw_labels[g])
                    .expect("label collected above");
                one_hot(class, num_classes)
            }
        };
        graphs.push(
            Graph::new(x, a, label).map_err(|e| Error::Data(format!("graph {}: {e}", g + 1)))?,
        );
    }

    let mut ds = GraphDataset::new(name, graphs, feature_dim, num_classes)?;
    ds.undirected = undirected;
    ds.class_values = class_values;
    Ok(ds)
}

/// Node attributes, else one-hot node labels, else a constant 1.0.
fn node_features(root: &Path, name: &str, num_nodes: usize) -> Result<Array2<f64>> {
    let attr_path = file_path(root, name, "node_attributes");
    if let Some(lines) = read_optional(&attr_path)? {
        expect_count(&attr_path, &lines, num_nodes, "node attribute")?;
        let rows: Vec<Vec<f64>> = lines
            .iter()
            .map(|(line, text)| parse_reals(&attr_path, *line, text))
            .collect::<Result<_>>()?;
        let width = rows[0].len();
        let mut x = Array2::zeros((num_nodes, width));
        for (i, row) in rows.iter().enumerate() {
            if row.len() != width {
                return Err(format_err(
                    &attr_path,
                    lines[i].0,
                    "inconsistent attribute width",
                ));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(format_err(&attr_path, lines[i].0, "non-finite attribute"));
            }
            x.row_mut(i).assign(&Array1::from(row.clone()));
        }
        return Ok(x);
    }

    let lbl_path = file_path(root, name, "node_labels");
    if let Some(lines) = read_optional(&lbl_path)? {
        expect_count(&lbl_path, &lines, num_nodes, "node label")?;
        let raw: Vec<i64> = lines
            .iter()
            .map(|(line, text)| parse_field(&lbl_path, *line, text))
            .collect::<Result<_>>()?;
        let index: BTreeMap<i64, usize> = raw
            .iter()
            .copied()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .enumerate()
            .map(|(i, v)| (v, i))
            .collect();
        let mut x = Array2::zeros((num_nodes, index.len()));
        for (i, v) in raw.iter().enumerate() {
            x[[i, index[v]]] = 1.0;
        }
        return Ok(x);
    }

    Ok(Array2::ones((num_nodes, 1)))
}

fn join_reals<'a>(values: impl Iterator<Item = &'a f64>) -> String {
    values
        .map(|v| format!("{v:?}"))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Writes a dataset in the layout [`load_tu_dataset`] reads.
///
/// Node features always go to `_node_attributes.txt` and reals are written
/// in shortest round-trip form, so a reload reproduces every matrix
/// exactly. Weighted adjacencies and non one-hot labels get the optional
/// extension files.
pub fn write_tu_dataset(ds: &GraphDataset, root: impl AsRef<Path>, name: &str) -> Result<()> {
    let root = root.as_ref();
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;

    let mut a_txt = String::new();
    let mut w_txt = String::new();
    let mut ind_txt = String::new();
    let mut attr_txt = String::new();
    let mut lbl_txt = String::new();
    let mut soft_txt = String::new();
    let weighted = !ds.is_binary();
    let soft = ds
        .graphs
        .iter()
        .any(|g| g.label().iter().any(|&v| v != 0.0 && v != 1.0));

    let mut offset = 0usize;
    for (gi, g) in ds.graphs.iter().enumerate() {
        let n = g.num_nodes();
        let a = g.adjacency();
        for i in 0..n {
            for j in 0..n {
                if a[[i, j]] > 0.0 {
                    a_txt.push_str(&format!("{}, {}\n", offset + i + 1, offset + j + 1));
                    if weighted {
                        w_txt.push_str(&format!("{:?}\n", a[[i, j]]));
                    }
                }
            }
            ind_txt.push_str(&format!("{}\n", gi + 1));
            attr_txt.push_str(&join_reals(g.node_features().row(i).iter()));
            attr_txt.push('\n');
        }
        let class = g.class_index();
        let value = ds.class_values.get(class).copied().unwrap_or(class as i64);
        lbl_txt.push_str(&format!("{value}\n"));
        if soft {
            soft_txt.push_str(&join_reals(g.label().iter()));
            soft_txt.push('\n');
        }
        offset += n;
    }

    write_atomic(&file_path(root, name, "A"), &a_txt)?;
    write_atomic(&file_path(root, name, "graph_indicator"), &ind_txt)?;
    write_atomic(&file_path(root, name, "graph_labels"), &lbl_txt)?;
    write_atomic(&file_path(root, name, "node_attributes"), &attr_txt)?;
    if weighted {
        write_atomic(&file_path(root, name, "edge_weights"), &w_txt)?;
    }
    if soft {
        write_atomic(&file_path(root, name, "graph_soft_labels"), &soft_txt)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn write(dir: &Path, name: &str, suffix: &str, body: &str) {
        fs::write(file_path(dir, name, suffix), body).unwrap();
    }

    fn toy(dir: &Path) {
        write(dir, "TOY", "A", "1, 2\n2, 1\n");
        write(dir, "TOY", "graph_indicator", "1\n1\n2\n");
        write(dir, "TOY", "graph_labels", "1\n2\n");
    }

    #[test]
    fn parses_two_graph_toy() {
        let dir = tempfile::tempdir().unwrap();
        toy(dir.path());
        let ds = load_tu_dataset(dir.path(), "TOY").unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.num_classes, 2);
        assert_eq!(ds.feature_dim, 1);
        assert!(ds.undirected);
        assert_eq!(ds.class_values, vec![1, 2]);
        let g0 = &ds.graphs[0];
        assert_eq!(g0.num_nodes(), 2);
        assert_eq!(g0.adjacency(), &array![[0.0, 1.0], [1.0, 0.0]]);
        assert_eq!(g0.node_features(), &array![[1.0], [1.0]]);
        assert_eq!(g0.label(), &array![1.0, 0.0]);
        let g1 = &ds.graphs[1];
        assert_eq!(g1.num_nodes(), 1);
        assert_eq!(g1.adjacency(), &array![[0.0]]);
        assert_eq!(g1.label(), &array![0.0, 1.0]);
    }

    #[test]
    fn node_attributes_set_feature_width() {
        let dir = tempfile::tempdir().unwrap();
        toy(dir.path());
        write(
            dir.path(),
            "TOY",
            "node_attributes",
            "0.5, 1, 2\n1, 2, 3\n-1, 0, 4.25\n",
        );
        let ds = load_tu_dataset(dir.path(), "TOY").unwrap();
        assert_eq!(ds.feature_dim, 3);
        assert!(ds.graphs.iter().all(|g| g.feature_dim() == 3));
        assert_eq!(ds.graphs[1].node_features(), &array![[-1.0, 0.0, 4.25]]);
    }

    #[test]
    fn node_labels_become_one_hot() {
        let dir = tempfile::tempdir().unwrap();
        toy(dir.path());
        write(dir.path(), "TOY", "node_labels", "3\n7\n3\n");
        let ds = load_tu_dataset(dir.path(), "TOY").unwrap();
        assert_eq!(
            ds.graphs[0].node_features(),
            &array![[1.0, 0.0], [0.0, 1.0]]
        );
        assert_eq!(ds.graphs[1].node_features(), &array![[1.0, 0.0]]);
    }

    #[test]
    fn missing_edge_file_is_named() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "TOY", "graph_indicator", "1\n");
        write(dir.path(), "TOY", "graph_labels", "1\n");
        match load_tu_dataset(dir.path(), "TOY") {
            Err(Error::MissingFile(p)) => assert!(p.ends_with("TOY_A.txt")),
            other => panic!("expected missing file, got {other:?}"),
        }
    }

    #[test]
    fn out_of_range_node_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        toy(dir.path());
        write(dir.path(), "TOY", "A", "1, 2\n2, 9\n");
        match load_tu_dataset(dir.path(), "TOY") {
            Err(Error::Format { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected format error, got {other:?}"),
        }
        write(dir.path(), "TOY", "A", "1, 3\n");
        assert!(matches!(
            load_tu_dataset(dir.path(), "TOY"),
            Err(Error::Format { line: 1, .. })
        ));
    }

    #[test]
    fn duplicates_and_self_loops_are_dropped() {
        let dir = tempfile::tempdir().unwrap();
        toy(dir.path());
        write(dir.path(), "TOY", "A", "1, 2\n2, 1\n1, 2\n1, 1\n");
        let ds = load_tu_dataset(dir.path(), "TOY").unwrap();
        assert_eq!(ds.graphs[0].adjacency(), &array![[0.0, 1.0], [1.0, 0.0]]);
    }

    #[test]
    fn export_then_reload_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        toy(dir.path());
        write(
            dir.path(),
            "TOY",
            "node_attributes",
            "0.1, 2\n1e-7, 3\n-1, 0.3333333333333333\n",
        );
        let ds = load_tu_dataset(dir.path(), "TOY").unwrap();
        let out = tempfile::tempdir().unwrap();
        write_tu_dataset(&ds, out.path(), "TOY").unwrap();
        let back = load_tu_dataset(out.path(), "TOY").unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn weighted_soft_graphs_round_trip() {
        let g = Graph::new(
            array![[0.25, 1.0], [0.75, -2.0], [0.0, 0.0]],
            array![[0.0, 0.37, 0.0], [0.37, 0.0, 0.9], [0.0, 0.9, 0.0]],
            array![0.3, 0.7],
        )
        .unwrap();
        let ds = GraphDataset::new("GEN", vec![g], 2, 2).unwrap();
        let out = tempfile::tempdir().unwrap();
        write_tu_dataset(&ds, out.path(), "GEN").unwrap();
        let back = load_tu_dataset(out.path(), "GEN").unwrap();
        assert_eq!(back.graphs, ds.graphs);
    }
}
