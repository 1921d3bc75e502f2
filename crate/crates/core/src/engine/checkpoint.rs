//! Parameter checkpoints: a JSON index plus one MMTS payload per tensor.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::io::{encode_f32, read_f32, write_file};
use crate::engine::graph::Graph;
use crate::error::{Error, Result};

pub const INDEX_FILE: &str = "params.json";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    file: String,
}

pub fn save_params(graph: &Graph, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut index = Vec::with_capacity(graph.params().len());
    for (i, p) in graph.params().iter().enumerate() {
        let file = format!("param_{i:03}.bin");
        write_file(&dir.join(&file), &encode_f32(p.value.shape(), p.value.data()))?;
        index.push(Entry {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            file,
        });
    }
    let text = serde_json::to_string_pretty(&index).expect("index serializes");
    write_file(&dir.join(INDEX_FILE), text.as_bytes())
}

/// Loads tensors into a graph with the same parameter layout.
pub fn load_params(graph: &mut Graph, dir: &Path) -> Result<()> {
    let index_path = dir.join(INDEX_FILE);
    let text = fs::read_to_string(&index_path).map_err(|e| Error::io(&index_path, e))?;
    let index: Vec<Entry> = serde_json::from_str(&text).map_err(|e| Error::Manifest {
        path: index_path.clone(),
        reason: e.to_string(),
    })?;
    if index.len() != graph.params().len() {
        return Err(Error::Shape(format!(
            "checkpoint holds {} tensors, graph has {}",
            index.len(),
            graph.params().len()
        )));
    }
    for (entry, param) in index.iter().zip(graph.params_mut()) {
        if entry.name != param.name || entry.shape != param.value.shape() {
            return Err(Error::Shape(format!(
                "checkpoint tensor {} {:?} does not match {} {:?}",
                entry.name,
                entry.shape,
                param.name,
                param.value.shape()
            )));
        }
        let (dims, data) = read_f32(&dir.join(&entry.file), entry.shape.len())?;
        if dims != entry.shape {
            return Err(Error::Shape(format!("{}: payload dims {dims:?}", entry.name)));
        }
        param.value.data_mut().copy_from_slice(&data);
    }
    Ok(())
}
