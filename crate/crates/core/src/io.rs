//! JSONL datasets, model files and prediction dumps.
//!
//! Files carry 0-based ordinal labels; everything in memory is 1-based.
//! Conversion happens only here.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::data::{Bag, Dataset, Level, OrdinalScale};
use crate::error::{Error, Result};
use crate::learning::TrainTrace;
use crate::methods::{Method, MethodPrediction, TrainedModel};

pub const FORMAT_VERSION: u32 = 1;

/// One line of a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BagRecord {
    pub id: String,
    pub label: usize,
    pub instances: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance_labels: Option<Vec<usize>>,
}

impl From<&Bag> for BagRecord {
    fn from(b: &Bag) -> Self {
        BagRecord {
            id: b.id.clone(),
            label: b.label.index(),
            instances: b.instances.clone(),
            instance_labels: b
                .instance_labels
                .as_ref()
                .map(|ls| ls.iter().map(|l| l.index()).collect()),
        }
    }
}

impl From<BagRecord> for Bag {
    fn from(r: BagRecord) -> Self {
        Bag {
            id: r.id,
            label: Level::from_index(r.label),
            instances: r.instances,
            instance_labels: r
                .instance_labels
                .map(|ls| ls.into_iter().map(Level::from_index).collect()),
        }
    }
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record =
            serde_json::from_str(&line).map_err(|e| Error::json(format!("{}:{}", path.display(), n + 1), e))?;
        out.push(record);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: impl IntoIterator<Item = T>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, &r).map_err(|e| Error::json(path.display().to_string(), e))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path.display().to_string(), e))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Builds a dataset from records. With `num_levels = None` the scale is
/// the smallest one covering every label (at least 2). The result is
/// validated.
pub fn dataset_from_records(records: Vec<BagRecord>, num_levels: Option<usize>) -> Result<Dataset> {
    let top = records
        .iter()
        .flat_map(|r| std::iter::once(r.label).chain(r.instance_labels.iter().flatten().copied()))
        .max()
        .unwrap_or(0);
    let scale = OrdinalScale::new(num_levels.unwrap_or((top + 1).max(2)))?;
    let feature_dim = records
        .iter()
        .flat_map(|r| r.instances.first())
        .map(Vec::len)
        .next()
        .unwrap_or(0);
    let ds = Dataset::new(records.into_iter().map(Bag::from).collect(), scale, feature_dim);
    ds.ensure_valid()?;
    Ok(ds)
}

pub fn read_dataset(path: &Path, num_levels: Option<usize>) -> Result<Dataset> {
    dataset_from_records(read_jsonl(path)?, num_levels)
}

pub fn write_dataset(path: &Path, dataset: &Dataset) -> Result<()> {
    write_jsonl(path, dataset.bags.iter().map(BagRecord::from))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub seed: u64,
    pub alpha: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// On-disk model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub method: Method,
    pub scale: usize,
    pub feature_dim: usize,
    pub params: serde_json::Value,
    pub train_meta: TrainMeta,
}

impl ModelFile {
    pub fn new(model: &TrainedModel, feature_dim: usize, seed: u64, alpha: f64, trace: &TrainTrace) -> Self {
        ModelFile {
            format_version: FORMAT_VERSION,
            method: model.method(),
            scale: model.num_levels(),
            feature_dim,
            params: model.params_json(),
            train_meta: TrainMeta {
                seed,
                alpha,
                iterations: trace.iterations,
                converged: trace.converged,
            },
        }
    }

    pub fn model(&self) -> Result<TrainedModel> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::InvalidInput(format!(
                "unsupported model format version {}",
                self.format_version
            )));
        }
        let model = TrainedModel::from_params_json(self.method, self.params.clone())?;
        if model.num_levels() != self.scale {
            return Err(Error::InvalidInput(format!(
                "model parameters have {} levels but the file declares {}",
                model.num_levels(),
                self.scale
            )));
        }
        Ok(model)
    }
}

pub fn save_model(path: &Path, file: &ModelFile) -> Result<()> {
    write_json(path, file)
}

pub fn load_model(path: &Path) -> Result<ModelFile> {
    read_json(path)
}

/// One line of a predictions file (0-based labels).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bag_pred: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_preds: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bag_posterior: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum PredictionLevel {
    Frame,
    Sequence,
    Both,
}

impl PredictionRecord {
    pub fn new(id: &str, p: &MethodPrediction, level: PredictionLevel) -> Self {
        let seq = level != PredictionLevel::Frame;
        let frame = level != PredictionLevel::Sequence;
        PredictionRecord {
            id: id.to_string(),
            bag_pred: seq.then(|| p.bag.index()),
            frame_preds: frame.then(|| p.frames.iter().map(|l| l.index()).collect()),
            bag_posterior: if seq { p.posterior.clone() } else { None },
        }
    }
}
