//! One graph per line:
//! `{"num_nodes", "edges": [[u, v], ...], "node_feat": [[...], ...], "edge_feat"?, "y"}`.
//!
//! `y` is a float for regression, an integer for graph classes, or an array
//! of integers for node classes. Paths ending in `.gz` are gzip-compressed.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use sat_core::data::{Dataset, GraphSample, Target};
use sat_core::{Graph, Task, Tensor};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    num_nodes: usize,
    edges: Vec<[usize; 2]>,
    node_feat: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    edge_feat: Option<Vec<Vec<f64>>>,
    y: Value,
}

fn is_gz(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "gz")
}

fn matrix(rows: Vec<Vec<f64>>, expected_rows: usize, what: &str) -> std::result::Result<Tensor, String> {
    if rows.len() != expected_rows {
        return Err(format!("{what} has {} rows, expected {expected_rows}", rows.len()));
    }
    if rows.is_empty() {
        return Ok(Tensor::zeros(0, 0));
    }
    Tensor::from_rows(&rows).map_err(|e| format!("{what}: {e}"))
}

fn target(y: &Value, task: Option<Task>) -> std::result::Result<Target, String> {
    let class = |v: &Value| v.as_u64().map(|c| c as usize);
    match (y, task) {
        (Value::Number(n), Some(Task::Regression)) => n.as_f64().map(Target::Scalar).ok_or("bad number".into()),
        (Value::Number(n), Some(Task::GraphClass)) => {
            class(y).map(Target::Class).ok_or(format!("class label {n} is not a non-negative integer"))
        }
        (Value::Number(n), None) => {
            if n.is_f64() {
                Ok(Target::Scalar(n.as_f64().expect("f64")))
            } else {
                class(y).map(Target::Class).ok_or(format!("class label {n} is not a non-negative integer"))
            }
        }
        (Value::Array(items), None | Some(Task::NodeClass)) => items
            .iter()
            .map(|v| class(v).ok_or(format!("node label {v} is not a non-negative integer")))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(Target::NodeClasses),
        (other, task) => Err(format!("target {other} does not fit task {task:?}")),
    }
}

fn parse_line(line: &str, task: Option<Task>) -> std::result::Result<GraphSample, String> {
    let r: Record = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let edges: Vec<(usize, usize)> = r.edges.iter().map(|e| (e[0], e[1])).collect();
    let feats = matrix(r.node_feat, r.num_nodes, "node_feat")?;
    let edge_feats = r.edge_feat.map(|ef| matrix(ef, edges.len(), "edge_feat")).transpose()?;
    let graph = Graph::new(r.num_nodes, &edges, feats, edge_feats).map_err(|e| e.to_string())?;
    Ok(GraphSample { graph, target: target(&r.y, task)? })
}

/// Reads records, inferring the task from `y` unless `task` is given (which
/// lets integer-valued regression targets load as floats).
pub fn read_jsonl(reader: impl BufRead, task: Option<Task>) -> Result<Dataset> {
    let mut samples = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Record { line: i + 1, message: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let sample = parse_line(&line, task).map_err(|message| Error::Record { line: i + 1, message })?;
        samples.push(sample);
    }
    Ok(Dataset::new(samples)?)
}

pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Dataset> {
    load_jsonl_as(path, None)
}

pub fn load_jsonl_as(path: impl AsRef<Path>, task: Option<Task>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(Error::io(path))?;
    let reader: Box<dyn Read> = if is_gz(path) { Box::new(GzDecoder::new(file)) } else { Box::new(file) };
    read_jsonl(BufReader::new(reader), task)
}

fn record(s: &GraphSample) -> Record {
    let g = &s.graph;
    let rows = |t: &Tensor| (0..t.rows()).map(|r| t.row(r).to_vec()).collect::<Vec<_>>();
    let y = match &s.target {
        Target::Scalar(v) => serde_json::json!(v),
        Target::Class(c) => serde_json::json!(c),
        Target::NodeClasses(cs) => serde_json::json!(cs),
    };
    Record {
        num_nodes: g.num_nodes(),
        edges: g.edges().iter().map(|&(u, v)| [u, v]).collect(),
        node_feat: rows(g.node_feats()),
        edge_feat: g.edge_feats().map(rows),
        y,
    }
}

/// Writes one line per sample. Floats use the shortest representation that
/// parses back to the same value.
pub fn write_jsonl(dataset: &Dataset, mut writer: impl Write) -> Result<()> {
    for s in dataset.samples() {
        serde_json::to_writer(&mut writer, &record(s))?;
        writer.write_all(b"\n").map_err(Error::io("<output>"))?;
    }
    Ok(())
}

pub fn save_jsonl(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(Error::io(path))?;
    if is_gz(path) {
        let mut enc = GzEncoder::new(BufWriter::new(file), Compression::default());
        write_jsonl(dataset, &mut enc)?;
        enc.finish().and_then(|mut w| w.flush()).map_err(Error::io(path))?;
    } else {
        let mut w = BufWriter::new(file);
        write_jsonl(dataset, &mut w)?;
        w.flush().map_err(Error::io(path))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use sat_core::data::{gen_cycle_vs_triangles, gen_sbm_node_classification, gen_triangle_count_regression};

    fn round_trip(d: &Dataset) -> Dataset {
        let mut buf = Vec::new();
        write_jsonl(d, &mut buf).unwrap();
        read_jsonl(&buf[..], None).unwrap()
    }

    #[test]
    fn round_trips_every_target_kind() {
        for d in [
            gen_cycle_vs_triangles(6, 1).unwrap(),
            gen_triangle_count_regression(5, 7, 0.5, 1).unwrap(),
            gen_sbm_node_classification(3, &[3, 4], 0.8, 0.1, 1).unwrap(),
        ] {
            assert_eq!(round_trip(&d), d);
        }
    }

    #[test]
    fn awkward_floats_survive() {
        let feats = Tensor::from_rows(&[[0.1 + 0.2, f64::MIN_POSITIVE], [1e308, -1.0 / 3.0]]).unwrap();
        let ef = Tensor::row_vector(&[std::f64::consts::PI]);
        let g = Graph::new(2, &[(0, 1)], feats, Some(ef)).unwrap();
        let d = Dataset::new(vec![GraphSample { graph: g, target: Target::Scalar(5e-324) }]).unwrap();
        let back = round_trip(&d);
        assert_eq!(back, d);
        let a = back.samples()[0].graph.node_feats().data().to_vec();
        let b = d.samples()[0].graph.node_feats().data().to_vec();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn integral_float_target_stays_regression() {
        let d = gen_triangle_count_regression(3, 6, 0.9, 0).unwrap();
        assert_eq!(round_trip(&d).task(), Task::Regression);
        let line = r#"{"num_nodes":1,"edges":[],"node_feat":[[1.0]],"y":4}"#;
        assert_eq!(read_jsonl(line.as_bytes(), None).unwrap().task(), Task::GraphClass);
        let forced = read_jsonl(line.as_bytes(), Some(Task::Regression)).unwrap();
        assert_eq!(forced.samples()[0].target, Target::Scalar(4.0));
    }

    #[test]
    fn errors_name_the_line() {
        let text = "{\"num_nodes\":1,\"edges\":[],\"node_feat\":[[1.0]],\"y\":1.5}\n\n{\"num_nodes\":2,\"node_feat\":[[1.0],[1.0]],\"y\":1.0}\n";
        let err = read_jsonl(text.as_bytes(), None).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Record { line: 3, .. }), "{msg}");
        assert!(msg.contains("edges"), "{msg}");

        let bad_dim = r#"{"num_nodes":2,"edges":[[0,1]],"node_feat":[[1.0]],"y":1.0}"#;
        assert!(matches!(read_jsonl(bad_dim.as_bytes(), None), Err(Error::Record { line: 1, .. })));
        let bad_edge = r#"{"num_nodes":2,"edges":[[0,2]],"node_feat":[[1.0],[1.0]],"y":1.0}"#;
        assert!(matches!(read_jsonl(bad_edge.as_bytes(), None), Err(Error::Record { line: 1, .. })));
    }

    #[test]
    fn gzip_files() {
        let dir = tempfile::tempdir().unwrap();
        let d = gen_cycle_vs_triangles(4, 2).unwrap();
        for name in ["d.jsonl", "d.jsonl.gz"] {
            let p = dir.path().join(name);
            save_jsonl(&d, &p).unwrap();
            assert_eq!(load_jsonl(&p).unwrap(), d);
        }
        let raw = std::fs::read(dir.path().join("d.jsonl.gz")).unwrap();
        assert_eq!(&raw[..2], &[0x1f, 0x8b]);
    }
}
