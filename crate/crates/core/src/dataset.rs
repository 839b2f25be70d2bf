//! The odd-one-out sample type and JSON Lines dataset files.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::task::{Role, Rule, TaskSpec};

/// Four stimuli, exactly one of which breaks the governing rule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OddOneOutExample<S> {
    pub stimuli: Vec<S>,
    pub odd_index: usize,
    pub rule: Rule,
    pub role: Role,
    /// Shared `N` of number rules.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub number: Option<u32>,
}

/// Model-facing encoding of one stimulus.
#[derive(Clone, Debug, PartialEq)]
pub enum StimulusInput {
    Raster(Vec<f64>),
    Tokens(Vec<usize>),
}

pub trait Stimulus: Clone + Serialize + DeserializeOwned {
    fn model_input(&self) -> StimulusInput;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub task: TaskSpec,
    pub seed: u64,
    pub notes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<S> {
    pub meta: DatasetMeta,
    pub examples: Vec<OddOneOutExample<S>>,
}

impl<S: Stimulus> Dataset<S> {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Writes `path` (JSON Lines) and `path.meta.json`.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let tmp = path.with_extension("jsonl.tmp");
        {
            let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
            let mut out = BufWriter::new(file);
            for example in &self.examples {
                serde_json::to_writer(&mut out, example)?;
                out.write_all(b"\n").map_err(|e| Error::io(&tmp, e))?;
            }
            out.flush().map_err(|e| Error::io(&tmp, e))?;
        }
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
        let meta_path = meta_path(path);
        let meta = serde_json::to_vec_pretty(&self.meta)?;
        fs::write(&meta_path, meta).map_err(|e| Error::io(&meta_path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let meta_path = meta_path(path);
        let meta_bytes = fs::read(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: DatasetMeta = serde_json::from_slice(&meta_bytes)?;
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut examples = Vec::with_capacity(meta.task.size);
        for line in BufReader::new(file).lines() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let example: OddOneOutExample<S> = serde_json::from_str(&line)?;
            if example.stimuli.len() != 4 || example.odd_index > 3 {
                return Err(Error::Format {
                    what: "dataset line",
                    detail: format!("{} stimuli, odd index {}", example.stimuli.len(), example.odd_index),
                });
            }
            examples.push(example);
        }
        Ok(Self { meta, examples })
    }
}

fn meta_path(path: &Path) -> std::path::PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    path.with_file_name(name)
}
