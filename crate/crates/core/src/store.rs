//! On-disk model store: schema, architecture manifest, raw weights and the
//! training report, written atomically as one directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kernel::{Matrix, ParamStore};
use crate::model::{FlatArchitecture, FlatModel, SeqArchitecture, SeqModel};
use crate::schema::TableSchema;
use crate::trainer::{TrainConfig, TrainReport};

pub const FORMAT_VERSION: &str = "1.0";

const SCHEMA_FILE: &str = "schema.json";
const MODEL_FILE: &str = "model.json";
const WEIGHTS_FILE: &str = "weights.bin";
const REPORT_FILE: &str = "train_report.json";
const MANIFEST_FILE: &str = "manifest.json";
const CONTEXT_DIR: &str = "context";
const SEQUENTIAL_DIR: &str = "sequential";

#[derive(Debug, Clone)]
pub enum Model {
    Flat(FlatModel<f32>),
    Sequential(SeqModel<f32>),
}

impl Model {
    pub fn params(&self) -> &ParamStore<f32> {
        match self {
            Self::Flat(m) => m.params(),
            Self::Sequential(m) => m.params(),
        }
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<f32> {
        match self {
            Self::Flat(m) => m.params_mut(),
            Self::Sequential(m) => m.params_mut(),
        }
    }

    pub fn architecture(&self) -> Architecture {
        match self {
            Self::Flat(m) => Architecture::Flat(m.architecture().clone()),
            Self::Sequential(m) => Architecture::Sequential(m.architecture().clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "architecture", rename_all = "snake_case")]
pub enum Architecture {
    Flat(FlatArchitecture),
    Sequential(SeqArchitecture),
}

impl Architecture {
    fn build(&self) -> Result<Model> {
        Ok(match self {
            Self::Flat(a) => Model::Flat(FlatModel::new(a.clone(), 0)?),
            Self::Sequential(a) => Model::Sequential(SeqModel::new(a.clone(), 0)?),
        })
    }
}

/// Quantities the layer-size heuristics were computed from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HeuristicInputs {
    pub n_sub_columns: usize,
    pub n_training_units: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub median_length: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_embedding_width: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context_embedding_width: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
    /// Byte offset into `weights.bin`.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub format_version: String,
    #[serde(flatten)]
    pub architecture: Architecture,
    pub heuristic_inputs: HeuristicInputs,
    pub config_digest: String,
    pub config: TrainConfig,
    pub tensors: Vec<TensorEntry>,
}

/// A trained model of one table together with everything needed to reuse it.
#[derive(Debug, Clone)]
pub struct TableModel {
    pub schema: TableSchema,
    pub model: Model,
    pub config: TrainConfig,
    pub report: TrainReport,
    pub heuristics: HeuristicInputs,
}

/// A flat context model and a context-conditioned sequential model linked
/// by key columns.
#[derive(Debug, Clone)]
pub struct TwoTableModel {
    pub context: TableModel,
    pub sequential: TableModel,
    pub context_key: String,
    pub foreign_key: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TwoTableManifest {
    format_version: String,
    kind: String,
    context_key: String,
    foreign_key: String,
}

#[derive(Debug, Clone)]
pub enum ModelStore {
    Single(TableModel),
    TwoTable(TwoTableModel),
}

pub fn config_digest(cfg: &TrainConfig) -> Result<String> {
    let json = serde_json::to_string(cfg)?;
    Ok(hex::encode(Sha256::digest(json.as_bytes())))
}

/// Weights as concatenated little-endian `f32` blobs plus their manifest.
pub fn encode_weights(params: &ParamStore<f32>) -> (Vec<u8>, Vec<TensorEntry>) {
    let mut bytes = Vec::with_capacity(params.n_scalars() * 4);
    let mut entries = Vec::with_capacity(params.len());
    for (name, m) in params.names().iter().zip(params.values()) {
        entries.push(TensorEntry {
            name: name.clone(),
            shape: [m.rows, m.cols],
            offset: bytes.len(),
        });
        for v in &m.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    (bytes, entries)
}

/// Fills `params` from a weights blob; names and shapes must match exactly.
pub fn decode_weights(params: &mut ParamStore<f32>, bytes: &[u8], entries: &[TensorEntry]) -> Result<()> {
    if entries.len() != params.len() {
        return Err(Error::ShapeMismatch(format!(
            "store has {} tensors, model expects {}",
            entries.len(),
            params.len()
        )));
    }
    let mut loaded = params.clone();
    for (k, e) in entries.iter().enumerate() {
        let expected = &params.names()[k];
        let m = &params.values()[k];
        if &e.name != expected || e.shape != [m.rows, m.cols] {
            return Err(Error::ShapeMismatch(format!(
                "tensor {k}: store has `{}` {:?}, model expects `{expected}` [{}, {}]",
                e.name, e.shape, m.rows, m.cols
            )));
        }
        let len = m.rows * m.cols * 4;
        let blob = bytes
            .get(e.offset..e.offset + len)
            .ok_or_else(|| Error::ShapeMismatch(format!("weights file too short for `{}`", e.name)))?;
        let data = blob
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        loaded.values_mut()[k] = Matrix::from_vec(m.rows, m.cols, data)?;
    }
    params.load(&loaded)
}

fn check_version(found: &str) -> Result<()> {
    let major = |v: &str| v.split('.').next().unwrap_or_default().to_string();
    if major(found) != major(FORMAT_VERSION) {
        return Err(Error::VersionMismatch {
            found: found.to_string(),
            expected: FORMAT_VERSION.to_string(),
        });
    }
    Ok(())
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_slice(&read(path)?)?)
}

fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_vec_pretty(value)?;
    s.push(b'\n');
    Ok(s)
}

impl TableModel {
    pub fn manifest(&self) -> Result<(ModelManifest, Vec<u8>)> {
        let (weights, tensors) = encode_weights(self.model.params());
        let manifest = ModelManifest {
            format_version: FORMAT_VERSION.to_string(),
            architecture: self.model.architecture(),
            heuristic_inputs: self.heuristics.clone(),
            config_digest: config_digest(&self.config)?,
            config: self.config.clone(),
            tensors,
        };
        Ok((manifest, weights))
    }

    fn write_into(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let (manifest, weights) = self.manifest()?;
        write(&dir.join(SCHEMA_FILE), self.schema.to_json()?.as_bytes())?;
        write(&dir.join(MODEL_FILE), &to_json(&manifest)?)?;
        write(&dir.join(WEIGHTS_FILE), &weights)?;
        write(&dir.join(REPORT_FILE), &to_json(&self.report)?)
    }

    fn read_from(dir: &Path) -> Result<Self> {
        let manifest: ModelManifest = read_json(&dir.join(MODEL_FILE))?;
        check_version(&manifest.format_version)?;
        let schema_path = dir.join(SCHEMA_FILE);
        let schema = TableSchema::from_json(
            &String::from_utf8(read(&schema_path)?)
                .map_err(|e| Error::io(&schema_path, std::io::Error::new(std::io::ErrorKind::InvalidData, e)))?,
        )?;
        let mut model = manifest.architecture.build()?;
        decode_weights(model.params_mut(), &read(&dir.join(WEIGHTS_FILE))?, &manifest.tensors)?;
        if config_digest(&manifest.config)? != manifest.config_digest {
            log::warn!("{}: configuration digest does not match", dir.display());
        }
        Ok(Self {
            schema,
            model,
            config: manifest.config,
            report: read_json(&dir.join(REPORT_FILE))?,
            heuristics: manifest.heuristic_inputs,
        })
    }
}

impl ModelStore {
    /// Writes the store into a temporary sibling directory and renames it
    /// into place, replacing any previous store at `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let name = dir
            .file_name()
            .ok_or_else(|| Error::InvalidConfig(format!("`{}` is not a directory name", dir.display())))?
            .to_string_lossy()
            .into_owned();
        let parent = match dir.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        fs::create_dir_all(&parent).map_err(|e| Error::io(&parent, e))?;
        let tmp = parent.join(format!(".{name}.tmp-{}", std::process::id()));
        if tmp.exists() {
            fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
        }
        let written = self.write_into(&tmp);
        if let Err(e) = written {
            let _ = fs::remove_dir_all(&tmp);
            return Err(e);
        }
        let old = parent.join(format!(".{name}.old-{}", std::process::id()));
        let replaced = dir.exists();
        if replaced {
            fs::rename(dir, &old).map_err(|e| Error::io(dir, e))?;
        }
        fs::rename(&tmp, dir).map_err(|e| Error::io(dir, e))?;
        if replaced {
            fs::remove_dir_all(&old).map_err(|e| Error::io(&old, e))?;
        }
        Ok(())
    }

    fn write_into(&self, dir: &Path) -> Result<()> {
        match self {
            Self::Single(m) => m.write_into(dir),
            Self::TwoTable(t) => {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                let manifest = TwoTableManifest {
                    format_version: FORMAT_VERSION.to_string(),
                    kind: "two_table".to_string(),
                    context_key: t.context_key.clone(),
                    foreign_key: t.foreign_key.clone(),
                };
                write(&dir.join(MANIFEST_FILE), &to_json(&manifest)?)?;
                t.context.write_into(&dir.join(CONTEXT_DIR))?;
                t.sequential.write_into(&dir.join(SEQUENTIAL_DIR))
            }
        }
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest_path = dir.join(MANIFEST_FILE);
        if !manifest_path.exists() {
            return Ok(Self::Single(TableModel::read_from(dir)?));
        }
        let manifest: TwoTableManifest = read_json(&manifest_path)?;
        check_version(&manifest.format_version)?;
        let context = TableModel::read_from(&dir.join(CONTEXT_DIR))?;
        let sequential = TableModel::read_from(&dir.join(SEQUENTIAL_DIR))?;
        Ok(Self::TwoTable(TwoTableModel {
            context,
            sequential,
            context_key: manifest.context_key,
            foreign_key: manifest.foreign_key,
        }))
    }
}
