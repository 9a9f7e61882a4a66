//! Column type inference and derivation of privacy-safe encoding specs.
//!
//! Every raw column is mapped onto one or more categorical sub-columns. The
//! analysis fixes the value domain up front: rare categories collapse into a
//! single `_RARE_` token, numeric and datetime ranges are clipped to empirical
//! quantiles, and the sub-column layout of every strategy is recorded so that
//! encoding and decoding are pure functions of the schema.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::codec::{categorical, character, datetime, numeric, quadtile};
use crate::error::{Error, Result};
use crate::table::{Cell, RawTable};

pub const RARE_TOKEN: &str = "_RARE_";
pub const MISSING_TOKEN: &str = "_MISSING_";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Categorical,
    Numeric,
    Datetime,
    DatetimeRelative,
    Character,
    /// A single column holding `"lat, lon"` pairs.
    Geospatial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Categorical,
    NumericDiscrete,
    NumericBinned,
    NumericDigit,
    DatetimeSplit,
    DatetimeRelative,
    CharacterSplit,
    Quadtile,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableRole {
    #[default]
    Flat,
    Sequential,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubColumn {
    pub name: String,
    pub cardinality: u32,
}

/// One category of a binned numeric column. `lo == hi` marks a point mass
/// that decodes to exactly that value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub lo: f64,
    pub hi: f64,
    pub lo_open: bool,
    pub hi_closed: bool,
}

impl Bin {
    pub fn is_point(&self) -> bool {
        self.lo == self.hi
    }

    pub fn contains(&self, v: f64) -> bool {
        if self.is_point() {
            return v == self.lo;
        }
        let above = if self.lo_open { v > self.lo } else { v >= self.lo };
        let below = if self.hi_closed { v <= self.hi } else { v < self.hi };
        above && below
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DigitLayout {
    pub missing: bool,
    pub sign: bool,
    pub int_digits: u32,
    pub frac_digits: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatetimeLayout {
    pub min_year: i32,
    pub max_year: i32,
    pub has_time: bool,
    pub has_ms: bool,
}

/// Per-column analysis result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodingSpec {
    pub column_name: String,
    pub kind: ColumnKind,
    pub strategy: Strategy,
    pub has_missing: bool,
    #[serde(default)]
    pub has_rare: bool,
    /// Labels in index order, reserved tokens first (categorical and
    /// numeric_discrete), or the character alphabet (character_split).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub categories: Vec<String>,
    /// Numeric values aligned with the non-reserved categories.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub bin_edges: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub bins: Vec<Bin>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip_low: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip_high: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decimals: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub digit_layout: Option<DigitLayout>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub datetime: Option<DatetimeLayout>,
    /// Encoding of the intra-sequence offsets (datetime_relative only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offsets: Option<Box<EncodingSpec>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_string_len: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quadtile_depth: Option<u32>,
    pub sub_columns: Vec<SubColumn>,
}

impl EncodingSpec {
    pub(crate) fn new(column_name: &str, kind: ColumnKind, strategy: Strategy) -> Self {
        Self {
            column_name: column_name.to_string(),
            kind,
            strategy,
            has_missing: false,
            has_rare: false,
            categories: Vec::new(),
            values: Vec::new(),
            bin_edges: Vec::new(),
            bins: Vec::new(),
            clip_low: None,
            clip_high: None,
            decimals: None,
            digit_layout: None,
            datetime: None,
            offsets: None,
            max_string_len: None,
            quadtile_depth: None,
            sub_columns: Vec::new(),
        }
    }

    pub fn width(&self) -> usize {
        self.sub_columns.len()
    }

    /// Index of the MISSING token for single sub-column strategies.
    pub fn missing_index(&self) -> Option<u32> {
        self.has_missing.then_some(0)
    }

    /// Index of the RARE token (categorical only).
    pub fn rare_index(&self) -> Option<u32> {
        self.has_rare.then_some(self.has_missing as u32)
    }

    /// Number of reserved leading indices (MISSING, RARE) of a single
    /// sub-column strategy.
    pub(crate) fn reserved(&self) -> u32 {
        self.has_missing as u32 + self.has_rare as u32
    }

    /// `(sub-column offset within this spec, index)` pairs whose sampling
    /// must be suppressed so that the column never decodes to missing.
    pub fn missing_slots(&self) -> Vec<(usize, u32)> {
        if !self.has_missing {
            return Vec::new();
        }
        match self.strategy {
            Strategy::Categorical
            | Strategy::NumericDiscrete
            | Strategy::NumericBinned
            | Strategy::DatetimeSplit => vec![(0, 0)],
            Strategy::NumericDigit => vec![(0, 1)],
            Strategy::CharacterSplit => vec![(0, character::MISSING)],
            Strategy::Quadtile => vec![(0, quadtile::MISSING)],
            Strategy::DatetimeRelative => {
                let start = self.width() - self.offsets.as_ref().map_or(0, |o| o.width());
                vec![(0, 0), (start, 0)]
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableSchema {
    pub specs: Vec<EncodingSpec>,
    pub table_role: TableRole,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_key: Option<String>,
    /// Primary key of a flat (context) table; excluded from modeling.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub primary_key: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context_link: Option<String>,
}

impl TableSchema {
    pub fn width(&self) -> usize {
        self.specs.iter().map(EncodingSpec::width).sum()
    }

    pub fn sub_columns(&self) -> Vec<SubColumn> {
        self.specs
            .iter()
            .flat_map(|s| s.sub_columns.iter().cloned())
            .collect()
    }

    /// Starting sub-column offset of every spec.
    pub fn offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.specs
            .iter()
            .map(|s| {
                let o = acc;
                acc += s.width();
                o
            })
            .collect()
    }

    pub fn spec(&self, column: &str) -> Option<(usize, &EncodingSpec)> {
        let offsets = self.offsets();
        self.specs
            .iter()
            .enumerate()
            .find(|(_, s)| s.column_name == column)
            .map(|(i, s)| (offsets[i], s))
    }

    pub fn is_sequential(&self) -> bool {
        self.table_role == TableRole::Sequential
    }

    pub(crate) fn key_columns(&self) -> BTreeSet<&str> {
        [&self.group_key, &self.primary_key, &self.context_link]
            .into_iter()
            .flatten()
            .map(String::as_str)
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisOptions {
    pub table_role: TableRole,
    pub group_key: Option<String>,
    pub primary_key: Option<String>,
    pub context_link: Option<String>,
    /// Categories seen fewer times than this collapse into `_RARE_`.
    pub rare_min_count: usize,
    pub clip_quantiles: (f64, f64),
    pub discrete_max: usize,
    pub max_bins: usize,
    pub max_string_len: usize,
    pub max_quadtile_depth: u32,
    pub quadtile_leaf_occupancy: usize,
    pub numeric_overrides: BTreeMap<String, Strategy>,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            table_role: TableRole::Flat,
            group_key: None,
            primary_key: None,
            context_link: None,
            rare_min_count: 5,
            clip_quantiles: (0.001, 0.999),
            discrete_max: 100,
            max_bins: 100,
            max_string_len: 50,
            max_quadtile_depth: 20,
            quadtile_leaf_occupancy: 100,
            numeric_overrides: BTreeMap::new(),
        }
    }
}

impl AnalysisOptions {
    pub fn sequential(group_key: &str) -> Self {
        Self {
            table_role: TableRole::Sequential,
            group_key: Some(group_key.to_string()),
            ..Self::default()
        }
    }
}

/// Discrete when the column has at most `discrete_max` distinct values,
/// binned otherwise; the digit split is only used when asked for.
pub fn select_numeric_strategy(
    distinct_count: usize,
    discrete_max: usize,
    user_override: Option<Strategy>,
) -> Strategy {
    match user_override {
        Some(s) => s,
        None if distinct_count <= discrete_max => Strategy::NumericDiscrete,
        None => Strategy::NumericBinned,
    }
}

/// Guesses a column kind: datetime if every present cell parses as one,
/// numeric if every present cell parses as a finite number, else categorical.
pub fn infer_kind(cells: &[Cell]) -> ColumnKind {
    let mut present = cells.iter().flatten().peekable();
    if present.peek().is_none() {
        return ColumnKind::Categorical;
    }
    if cells
        .iter()
        .flatten()
        .all(|c| datetime::parse_datetime(c).is_some())
    {
        ColumnKind::Datetime
    } else if cells
        .iter()
        .flatten()
        .all(|c| numeric::parse_number(c).is_some())
    {
        ColumnKind::Numeric
    } else {
        ColumnKind::Categorical
    }
}

pub fn analyze(
    raw: &RawTable,
    declared_kinds: Option<&BTreeMap<String, ColumnKind>>,
    opts: &AnalysisOptions,
) -> Result<TableSchema> {
    if raw.n_rows() == 0 {
        return Err(Error::EmptyTable);
    }
    if opts.rare_min_count == 0 {
        return Err(Error::InvalidConfig("rare_min_count must be >= 1".into()));
    }
    let (ql, qh) = opts.clip_quantiles;
    if !(0.0..=1.0).contains(&ql) || !(0.0..=1.0).contains(&qh) || ql > qh {
        return Err(Error::InvalidConfig(format!(
            "clip quantiles ({ql}, {qh}) must satisfy 0 <= low <= high <= 1"
        )));
    }
    for key in [&opts.group_key, &opts.primary_key, &opts.context_link]
        .into_iter()
        .flatten()
    {
        if raw.column_index(key).is_none() {
            return Err(Error::UnknownGroupKey(key.clone()));
        }
    }
    if opts.table_role == TableRole::Sequential && opts.group_key.is_none() {
        return Err(Error::InvalidConfig(
            "sequential tables need a group key".into(),
        ));
    }
    if let Some(kinds) = declared_kinds {
        if let Some(unknown) = kinds.keys().find(|k| raw.column_index(k).is_none()) {
            return Err(Error::SchemaMismatch(format!(
                "declared kind for unknown column `{unknown}`"
            )));
        }
    }

    let schema_keys = TableSchema {
        specs: Vec::new(),
        table_role: opts.table_role,
        group_key: opts.group_key.clone(),
        primary_key: opts.primary_key.clone(),
        context_link: opts.context_link.clone(),
    };
    let keys = schema_keys.key_columns();
    let groups = match &opts.group_key {
        Some(k) if opts.table_role == TableRole::Sequential => {
            Some(group_rows(raw.column(k).expect("checked above")))
        }
        _ => None,
    };

    let mut specs = Vec::new();
    for (name, cells) in raw.names().iter().zip(raw.columns()) {
        if keys.contains(name.as_str()) {
            continue;
        }
        let kind = declared_kinds
            .and_then(|k| k.get(name).copied())
            .unwrap_or_else(|| infer_kind(cells));
        let spec = match kind {
            ColumnKind::Categorical => categorical::fit(name, cells, opts),
            ColumnKind::Numeric => {
                numeric::fit(name, cells, opts, opts.numeric_overrides.get(name).copied())?
            }
            ColumnKind::Datetime => datetime::fit_split(name, cells, opts)?,
            ColumnKind::DatetimeRelative => {
                let groups = groups.as_ref().ok_or_else(|| {
                    Error::SchemaMismatch(format!(
                        "column `{name}`: relative datetimes need a sequential table"
                    ))
                })?;
                datetime::fit_relative(name, cells, groups, opts)?
            }
            ColumnKind::Character => character::fit(name, cells, opts),
            ColumnKind::Geospatial => quadtile::fit(name, cells, opts)?,
        };
        specs.push(spec);
    }
    Ok(TableSchema {
        specs,
        ..schema_keys
    })
}

/// Row indices grouped by key in order of first appearance.
pub(crate) fn group_rows(keys: &[Cell]) -> Vec<Vec<usize>> {
    let mut index: BTreeMap<&str, usize> = BTreeMap::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (row, key) in keys.iter().enumerate() {
        let k = key.as_deref().unwrap_or("");
        let g = *index.entry(k).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[g].push(row);
    }
    groups
}

/// Quantile of sorted data taking the nearest rank at or below `p·(n−1)`.
pub fn quantile_floor(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let pos = (p * (n - 1) as f64 + 1e-9).floor() as usize;
    sorted[pos.min(n - 1)]
}

/// Quantile of sorted data taking the nearest rank at or above `p·(n−1)`.
pub fn quantile_ceil(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let pos = (p * (n - 1) as f64 - 1e-9).ceil().max(0.0) as usize;
    sorted[pos.min(n - 1)]
}

/// Clip bounds for a sorted sample: the low quantile rounds its rank down and
/// the high quantile rounds up, so only values strictly outside the
/// configured tails are clipped.
pub fn clip_bounds(sorted: &[f64], quantiles: (f64, f64)) -> (f64, f64) {
    (
        quantile_floor(sorted, quantiles.0),
        quantile_ceil(sorted, quantiles.1),
    )
}
