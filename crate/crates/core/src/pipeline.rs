//! End-to-end training and generation over raw tables.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::codec::{self, augment_sequences, decode, encode, encode_grouped, DecodeRng, EncodedTable, Groups};
use crate::error::{Error, Result};
use crate::model::{FlatArchitecture, FlatModel, SampleRequest, SeqArchitecture, SeqModel, SeqSampleRequest};
use crate::schema::TableSchema;
use crate::store::{HeuristicInputs, Model, ModelStore, TableModel, TwoTableModel};
use crate::table::{Cell, RawTable};
use crate::trainer::{fit, FlatTask, SeqTask, TrainConfig};

const DECODE_SALT: u64 = 0x6465_636f_6465_0001;
const SEQUENCE_SALT: u64 = 0x7365_7175_656e_0002;

/// Paths and key columns of a context table and its sequential child table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoTableManifest {
    pub context: PathBuf,
    pub sequential: PathBuf,
    /// Primary key of the context table.
    pub context_key: String,
    /// Column of the sequential table referencing `context_key`.
    pub foreign_key: String,
}

impl TwoTableManifest {
    /// Reads a manifest, resolving relative paths against its directory.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: Self = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut m.context, &mut m.sequential] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationRequest {
    /// Rows of a flat table, or sequences (subjects) otherwise.
    pub n: usize,
    pub temperature: f64,
    /// Raw column → raw value fixed in every generated row; `null` fixes
    /// the missing value.
    pub conditions: BTreeMap<String, Option<String>>,
    /// Columns that must never be generated as missing.
    pub impute: Vec<String>,
    /// Explicit sub-column order (flat) or within-step data order (sequential).
    pub order: Option<Vec<usize>>,
    pub seed: u64,
}

impl Default for GenerationRequest {
    fn default() -> Self {
        Self {
            n: 0,
            temperature: 1.0,
            conditions: BTreeMap::new(),
            impute: Vec::new(),
            order: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Generated {
    Single(RawTable),
    TwoTable { context: RawTable, sequential: RawTable },
}

fn median_length(groups: &Groups) -> usize {
    let mut lengths: Vec<usize> = (0..groups.len()).map(|g| groups.range(g).len()).collect();
    if lengths.is_empty() {
        return 1;
    }
    lengths.sort_unstable();
    lengths[(lengths.len() - 1) / 2].max(1)
}

/// Trains a flat model on `raw`.
pub fn train_flat(schema: &TableSchema, raw: &RawTable, cfg: &TrainConfig) -> Result<TableModel> {
    if schema.is_sequential() {
        return Err(Error::InvalidConfig("schema describes a sequential table".into()));
    }
    let enc = encode(raw, schema)?;
    let arch = FlatArchitecture::new(&enc.cardinalities());
    let mut model = FlatModel::<f32>::new(arch, cfg.seed)?;
    let report = fit(
        &mut FlatTask {
            model: &mut model,
            data: &enc,
        },
        cfg,
    )?;
    Ok(TableModel {
        schema: schema.clone(),
        heuristics: HeuristicInputs {
            n_sub_columns: enc.width(),
            n_training_units: enc.n_rows,
            ..HeuristicInputs::default()
        },
        model: Model::Flat(model),
        config: cfg.clone(),
        report,
    })
}

fn train_seq(
    schema: &TableSchema,
    enc: &EncodedTable,
    context: Option<&EncodedTable>,
    cfg: &TrainConfig,
) -> Result<TableModel> {
    let groups = enc.groups.as_ref().ok_or(Error::NotSequential)?;
    let median = median_length(groups);
    let aug = augment_sequences(enc)?;
    let ctx_cards = context.map(EncodedTable::cardinalities).unwrap_or_default();
    let arch = SeqArchitecture::new(&aug.cardinalities(), &ctx_cards, median);
    let heuristics = HeuristicInputs {
        n_sub_columns: enc.width(),
        n_training_units: groups.len(),
        median_length: Some(median),
        target_embedding_width: Some(arch.embedding_width()),
        context_embedding_width: context.map(|_| arch.context_embed_dims.iter().sum()),
    };
    let mut model = SeqModel::<f32>::new(arch, cfg.seed)?;
    let report = fit(
        &mut SeqTask {
            model: &mut model,
            data: &aug,
            context,
        },
        cfg,
    )?;
    Ok(TableModel {
        schema: schema.clone(),
        model: Model::Sequential(model),
        config: cfg.clone(),
        report,
        heuristics,
    })
}

/// Trains a sequential model without a context table.
pub fn train_sequential(schema: &TableSchema, raw: &RawTable, cfg: &TrainConfig) -> Result<TableModel> {
    if !schema.is_sequential() {
        return Err(Error::NotSequential);
    }
    train_seq(schema, &encode(raw, schema)?, None, cfg)
}

/// Trains whichever model the schema calls for.
pub fn train(schema: &TableSchema, raw: &RawTable, cfg: &TrainConfig) -> Result<TableModel> {
    if schema.is_sequential() {
        train_sequential(schema, raw, cfg)
    } else {
        train_flat(schema, raw, cfg)
    }
}

/// Context keys in row order; they must be present and unique.
fn context_keys(raw: &RawTable, key: &str) -> Result<Vec<String>> {
    let cells = raw
        .column(key)
        .ok_or_else(|| Error::UnknownGroupKey(key.to_string()))?;
    let mut seen = HashSet::new();
    cells
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let k = c
                .clone()
                .ok_or_else(|| Error::ContextSchemaMismatch(format!("row {i} has no `{key}`")))?;
            if !seen.insert(k.clone()) {
                return Err(Error::ContextSchemaMismatch(format!("duplicate key `{k}`")));
            }
            Ok(k)
        })
        .collect()
}

/// Trains the context model and the context-conditioned sequential model.
pub fn train_two_table(
    context_schema: &TableSchema,
    context: &RawTable,
    sequential_schema: &TableSchema,
    sequential: &RawTable,
    context_key: &str,
    foreign_key: &str,
    cfg: &TrainConfig,
) -> Result<TwoTableModel> {
    if sequential_schema.group_key.as_deref() != Some(foreign_key) || !sequential_schema.is_sequential() {
        return Err(Error::ContextSchemaMismatch(format!(
            "sequential schema must be grouped by `{foreign_key}`"
        )));
    }
    if context_schema.is_sequential() {
        return Err(Error::ContextSchemaMismatch("context schema must describe a flat table".into()));
    }
    let keys = context_keys(context, context_key)?;
    let ctx_enc = encode(context, context_schema)?;
    let seq_enc = encode_grouped(sequential, sequential_schema, Some(&keys))?;
    let context_model = train_flat(context_schema, context, cfg)?;
    let sequential_model = train_seq(sequential_schema, &seq_enc, Some(&ctx_enc), cfg)?;
    Ok(TwoTableModel {
        context: context_model,
        sequential: sequential_model,
        context_key: context_key.to_string(),
        foreign_key: foreign_key.to_string(),
    })
}

fn invalid(msg: String) -> Error {
    Error::ConditionIndexInvalid(msg)
}

/// Fixed sub-column codes of the conditions that belong to `schema`.
fn condition_codes(
    schema: &TableSchema,
    conditions: &BTreeMap<String, Option<String>>,
) -> Result<Vec<Option<u32>>> {
    let mut fixed = vec![None; schema.width()];
    for (column, value) in conditions {
        let (offset, spec) = schema
            .spec(column)
            .ok_or_else(|| invalid(format!("unknown column `{column}`")))?;
        let codes = codec::encode_value(spec, value.as_deref()).map_err(|e| invalid(e.to_string()))?;
        for (k, c) in codes.into_iter().enumerate() {
            fixed[offset + k] = Some(c);
        }
    }
    Ok(fixed)
}

fn exclusions(schema: &TableSchema, impute: &[&str]) -> Vec<(usize, u32)> {
    impute
        .iter()
        .filter_map(|c| schema.spec(c))
        .flat_map(|(offset, spec)| spec.missing_slots().into_iter().map(move |(k, v)| (offset + k, v)))
        .collect()
}

fn check_columns<'a>(names: impl Iterator<Item = &'a String>, schemas: &[&TableSchema]) -> Result<()> {
    for name in names {
        if !schemas.iter().any(|s| s.spec(name).is_some()) {
            return Err(invalid(format!("unknown column `{name}`")));
        }
    }
    Ok(())
}

fn sample_flat(
    model: &FlatModel<f32>,
    schema: &TableSchema,
    req: &GenerationRequest,
    impute: &[&str],
) -> Result<EncodedTable> {
    let pattern = condition_codes(schema, &req.conditions)?;
    let d = schema.width();
    let fixed = pattern
        .iter()
        .any(Option::is_some)
        .then(|| (0..req.n).flat_map(|_| pattern.iter().copied()).collect::<Vec<_>>());
    let rows = model.sample(&SampleRequest {
        n_rows: req.n,
        temperature: req.temperature,
        fixed,
        exclude: exclusions(schema, impute),
        order: req.order.clone(),
        seed: req.seed,
    })?;
    debug_assert_eq!(rows.len(), req.n * d);
    EncodedTable::new(schema.sub_columns(), rows, None)
}

fn sample_seq(
    model: &SeqModel<f32>,
    schema: &TableSchema,
    context: Option<&[u32]>,
    req: &GenerationRequest,
    impute: &[&str],
    keys: Vec<String>,
    seed: u64,
) -> Result<EncodedTable> {
    let (rows, lengths) = model.sample(
        context,
        &SeqSampleRequest {
            temperature: req.temperature,
            exclude: exclusions(schema, impute),
            order: req.order.clone(),
            ..SeqSampleRequest::new(req.n, seed)
        },
    )?;
    let mut sub_columns = schema.sub_columns();
    let card = model.architecture().max_length() as u32 + 1;
    for name in [codec::SEQ_LEN_COLUMN, codec::SEQ_INDEX_COLUMN] {
        sub_columns.push(crate::schema::SubColumn {
            name: name.to_string(),
            cardinality: card,
        });
    }
    EncodedTable::new(sub_columns, rows, Some(Groups::from_lengths(keys, &lengths)))
}

fn surrogate_keys(n: usize) -> Vec<String> {
    (0..n).map(|i| i.to_string()).collect()
}

fn validate_request(req: &GenerationRequest) -> Result<()> {
    if !(req.temperature >= 0.0 && req.temperature.is_finite()) {
        return Err(Error::InvalidConfig(format!("temperature {} must be ≥ 0", req.temperature)));
    }
    Ok(())
}

pub fn generate_table(model: &TableModel, req: &GenerationRequest) -> Result<RawTable> {
    validate_request(req)?;
    let impute: Vec<&str> = req.impute.iter().map(String::as_str).collect();
    check_columns(req.impute.iter(), &[&model.schema])?;
    let decode_rng = DecodeRng::new(req.seed ^ DECODE_SALT);
    match &model.model {
        Model::Flat(m) => {
            let enc = sample_flat(m, &model.schema, req, &impute)?;
            decode(&enc, &model.schema, &decode_rng)
        }
        Model::Sequential(m) => {
            if m.architecture().has_context() {
                return Err(Error::ContextSchemaMismatch(
                    "this sequential model needs context rows; generate from the two-table store".into(),
                ));
            }
            if !req.conditions.is_empty() {
                return Err(invalid("conditions are not supported for sequential tables".into()));
            }
            let enc = sample_seq(m, &model.schema, None, req, &impute, surrogate_keys(req.n), req.seed)?;
            decode(&enc, &model.schema, &decode_rng)
        }
    }
}

fn prepend_column(table: RawTable, name: &str, cells: Vec<Cell>) -> Result<RawTable> {
    let mut names = vec![name.to_string()];
    names.extend(table.names().iter().cloned());
    let mut columns = vec![cells];
    columns.extend(table.columns().iter().cloned());
    RawTable::new(names, columns)
}

/// Samples the context table first, then one sequence per context row.
pub fn generate_two_table(model: &TwoTableModel, req: &GenerationRequest) -> Result<(RawTable, RawTable)> {
    validate_request(req)?;
    let (ctx_schema, seq_schema) = (&model.context.schema, &model.sequential.schema);
    check_columns(req.impute.iter(), &[ctx_schema, seq_schema])?;
    if let Some(c) = req.conditions.keys().find(|c| ctx_schema.spec(c).is_none()) {
        return Err(invalid(format!("conditions must name context columns; `{c}` is not one")));
    }
    let (Model::Flat(ctx_model), Model::Sequential(seq_model)) = (&model.context.model, &model.sequential.model)
    else {
        return Err(Error::ContextSchemaMismatch("store holds unexpected model kinds".into()));
    };
    let impute: Vec<&str> = req.impute.iter().map(String::as_str).collect();
    let ctx_enc = sample_flat(ctx_model, ctx_schema, req, &impute)?;
    let seq_req = GenerationRequest {
        order: None,
        ..req.clone()
    };
    let keys = surrogate_keys(req.n);
    let seq_enc = sample_seq(
        seq_model,
        seq_schema,
        Some(&ctx_enc.data),
        &seq_req,
        &impute,
        keys.clone(),
        req.seed ^ SEQUENCE_SALT,
    )?;
    let context = decode(&ctx_enc, ctx_schema, &DecodeRng::new(req.seed ^ DECODE_SALT))?;
    let context = prepend_column(context, &model.context_key, keys.into_iter().map(Some).collect())?;
    let sequential = decode(&seq_enc, seq_schema, &DecodeRng::new(req.seed ^ DECODE_SALT ^ SEQUENCE_SALT))?;
    Ok((context, sequential))
}

pub fn generate(store: &ModelStore, req: &GenerationRequest) -> Result<Generated> {
    match store {
        ModelStore::Single(m) => generate_table(m, req).map(Generated::Single),
        ModelStore::TwoTable(t) => {
            generate_two_table(t, req).map(|(context, sequential)| Generated::TwoTable { context, sequential })
        }
    }
}
