//! Encoding of raw tables into category-index matrices and back.

pub mod categorical;
pub mod character;
pub mod datetime;
pub mod numeric;
pub mod quadtile;

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::{group_rows, EncodingSpec, Strategy, SubColumn, TableSchema};
use crate::table::{Cell, RawTable};

pub const SEQ_LEN_COLUMN: &str = "__seq_len";
pub const SEQ_INDEX_COLUMN: &str = "__seq_idx";

/// Contiguous row ranges of a sequential table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Groups {
    pub keys: Vec<String>,
    /// `offsets[g]..offsets[g + 1]` are the rows of group `g`.
    pub offsets: Vec<usize>,
}

impl Groups {
    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn range(&self, g: usize) -> std::ops::Range<usize> {
        self.offsets[g]..self.offsets[g + 1]
    }

    pub fn from_lengths(keys: Vec<String>, lengths: &[usize]) -> Self {
        let mut offsets = Vec::with_capacity(lengths.len() + 1);
        offsets.push(0);
        for &l in lengths {
            offsets.push(offsets.last().unwrap() + l);
        }
        Self { keys, offsets }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedTable {
    pub sub_columns: Vec<SubColumn>,
    pub n_rows: usize,
    /// Row-major indices, `n_rows × sub_columns.len()`.
    pub data: Vec<u32>,
    pub groups: Option<Groups>,
}

#[derive(Serialize, Deserialize)]
struct CacheHeader {
    sub_columns: Vec<SubColumn>,
    n_rows: usize,
    #[serde(default)]
    groups: Option<Groups>,
}

impl EncodedTable {
    pub fn new(sub_columns: Vec<SubColumn>, data: Vec<u32>, groups: Option<Groups>) -> Result<Self> {
        let width = sub_columns.len();
        if width == 0 {
            if !data.is_empty() {
                return Err(Error::ShapeMismatch("data without sub-columns".into()));
            }
        } else if data.len() % width != 0 {
            return Err(Error::ShapeMismatch(format!(
                "{} indices do not fill rows of width {width}",
                data.len()
            )));
        }
        let n_rows = data.len().checked_div(width).unwrap_or(0);
        if let Some(g) = &groups {
            if g.offsets.len() != g.keys.len() + 1
                || g.offsets.first() != Some(&0)
                || g.offsets.last() != Some(&n_rows)
                || g.offsets.windows(2).any(|w| w[0] > w[1])
            {
                return Err(Error::ShapeMismatch("group offsets do not cover the rows".into()));
            }
        }
        let table = Self {
            sub_columns,
            n_rows,
            data,
            groups,
        };
        table.validate()?;
        Ok(table)
    }

    pub fn width(&self) -> usize {
        self.sub_columns.len()
    }

    pub fn row(&self, i: usize) -> &[u32] {
        let w = self.width();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn cardinalities(&self) -> Vec<u32> {
        self.sub_columns.iter().map(|s| s.cardinality).collect()
    }

    /// Checks every index against its sub-column cardinality.
    pub fn validate(&self) -> Result<()> {
        let w = self.width();
        for (i, &v) in self.data.iter().enumerate() {
            let sc = &self.sub_columns[i % w];
            if v >= sc.cardinality {
                return Err(Error::IndexOutOfRange {
                    sub_column: sc.name.clone(),
                    index: v,
                    cardinality: sc.cardinality,
                });
            }
        }
        Ok(())
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut data = Vec::with_capacity(rows.len() * self.width());
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        Self {
            sub_columns: self.sub_columns.clone(),
            n_rows: rows.len(),
            data,
            groups: None,
        }
    }

    /// Subset of whole groups, in the given order.
    pub fn select_groups(&self, ids: &[usize]) -> Result<Self> {
        let groups = self.groups.as_ref().ok_or(Error::NotSequential)?;
        let mut data = Vec::new();
        let mut keys = Vec::with_capacity(ids.len());
        let mut lengths = Vec::with_capacity(ids.len());
        for &g in ids {
            let r = groups.range(g);
            lengths.push(r.len());
            keys.push(groups.keys[g].clone());
            data.extend_from_slice(&self.data[r.start * self.width()..r.end * self.width()]);
        }
        let n_rows = lengths.iter().sum();
        Ok(Self {
            sub_columns: self.sub_columns.clone(),
            n_rows,
            data,
            groups: Some(Groups::from_lengths(keys, &lengths)),
        })
    }

    /// Keeps the first `width` sub-columns.
    pub fn truncate_columns(&self, width: usize) -> Self {
        let w = self.width();
        let mut data = Vec::with_capacity(self.n_rows * width);
        for r in 0..self.n_rows {
            data.extend_from_slice(&self.data[r * w..r * w + width]);
        }
        Self {
            sub_columns: self.sub_columns[..width].to_vec(),
            n_rows: self.n_rows,
            data,
            groups: self.groups.clone(),
        }
    }

    /// Binary cache: little-endian u32 header length, JSON header, then the
    /// row-major indices as little-endian u32.
    pub fn write_cache(&self, path: &Path) -> Result<()> {
        let header = serde_json::to_vec(&CacheHeader {
            sub_columns: self.sub_columns.clone(),
            n_rows: self.n_rows,
            groups: self.groups.clone(),
        })?;
        let mut buf = Vec::with_capacity(4 + header.len() + 4 * self.data.len());
        buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
        buf.extend_from_slice(&header);
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(&buf))
            .map_err(|e| Error::io(path, e))
    }

    pub fn read_cache(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut buf))
            .map_err(|e| Error::io(path, e))?;
        let corrupt = || Error::ShapeMismatch(format!("{} is not an encoded table", path.display()));
        let len = u32::from_le_bytes(buf.get(..4).ok_or_else(corrupt)?.try_into().unwrap()) as usize;
        let header: CacheHeader = serde_json::from_slice(buf.get(4..4 + len).ok_or_else(corrupt)?)?;
        let body = &buf[4 + len..];
        if body.len() != 4 * header.n_rows * header.sub_columns.len() {
            return Err(corrupt());
        }
        let data = body
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(header.sub_columns, data, header.groups)
    }
}

/// Seed for decode-time sampling; row `i` draws from its own stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecodeRng {
    pub seed: u64,
}

impl DecodeRng {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn row(&self, row: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(row as u64);
        rng
    }
}

fn mismatch(spec: &EncodingSpec, what: impl std::fmt::Display) -> Error {
    Error::SchemaMismatch(format!("column `{}`: {what}", spec.column_name))
}

/// Writes the codes of one cell into `out`.
fn encode_cell(spec: &EncodingSpec, cat: Option<&categorical::Codec>, chars: Option<&character::Codec>, cell: Option<&str>, out: &mut [u32]) -> Result<()> {
    let missing_unknown = || mismatch(spec, "missing value but no MISSING token");
    match spec.strategy {
        Strategy::Categorical => {
            out[0] = cat
                .expect("categorical codec")
                .encode(cell)
                .ok_or_else(|| match cell {
                    Some(v) => mismatch(spec, format!("unseen label `{v}` and no RARE token")),
                    None => missing_unknown(),
                })?;
        }
        Strategy::NumericDiscrete | Strategy::NumericBinned | Strategy::NumericDigit => match cell {
            None if spec.has_missing => numeric::encode_missing(spec, out),
            None => return Err(missing_unknown()),
            Some(text) => {
                let v = numeric::parse_number(text)
                    .ok_or_else(|| mismatch(spec, format!("`{text}` is not a number")))?;
                numeric::encode_value(spec, v, out);
            }
        },
        Strategy::DatetimeSplit => match cell {
            None if spec.has_missing => out.iter_mut().for_each(|o| *o = 0),
            None => return Err(missing_unknown()),
            Some(text) => {
                let dt = datetime::parse_datetime(text)
                    .ok_or_else(|| mismatch(spec, format!("`{text}` is not a datetime")))?;
                datetime::encode_split(spec, dt, out);
            }
        },
        Strategy::CharacterSplit => {
            if cell.is_none() && !spec.has_missing {
                return Err(missing_unknown());
            }
            chars.expect("character codec").encode(cell, out);
        }
        Strategy::Quadtile => {
            let point = match cell {
                None if spec.has_missing => None,
                None => return Err(missing_unknown()),
                Some(text) => Some(
                    quadtile::parse_lat_lon(text)
                        .ok_or_else(|| mismatch(spec, format!("`{text}` is not a lat/lon pair")))?,
                ),
            };
            quadtile::encode(spec, point, out);
        }
        Strategy::DatetimeRelative => unreachable!("encoded per group"),
    }
    Ok(())
}

/// Codes of a single raw value under `spec`, as used for generation
/// conditions. Relative datetimes depend on their group and are rejected.
pub fn encode_value(spec: &EncodingSpec, cell: Option<&str>) -> Result<Vec<u32>> {
    if spec.strategy == Strategy::DatetimeRelative {
        return Err(mismatch(spec, "relative datetimes cannot be encoded outside their group"));
    }
    let cat = (spec.strategy == Strategy::Categorical).then(|| categorical::Codec::new(spec));
    let chars = (spec.strategy == Strategy::CharacterSplit).then(|| character::Codec::new(spec));
    let mut out = vec![0; spec.width()];
    encode_cell(spec, cat.as_ref(), chars.as_ref(), cell, &mut out)?;
    Ok(out)
}

/// Encodes a relative datetime column group by group into the `w`-wide rows
/// of `data` starting at column `offset`.
fn encode_relative(
    spec: &EncodingSpec,
    cells: &[Cell],
    ranges: &[std::ops::Range<usize>],
    order: &[usize],
    data: &mut [u32],
    w: usize,
    offset: usize,
) -> Result<()> {
    let layout = spec.datetime.expect("datetime layout");
    let anchor_w = datetime::split_width(&layout);
    let off_spec = spec.offsets.as_deref().expect("offset spec");
    for range in ranges {
        let rows = &order[range.clone()];
        let mut parsed = Vec::with_capacity(rows.len());
        for &r in rows {
            parsed.push(match &cells[r] {
                None if spec.has_missing => None,
                None => return Err(mismatch(spec, "missing value but no MISSING token")),
                Some(text) => Some(
                    datetime::parse_datetime(text)
                        .ok_or_else(|| mismatch(spec, format!("`{text}` is not a datetime")))?,
                ),
            });
        }
        let anchor = parsed.iter().flatten().next().copied();
        for (i, value) in range.clone().zip(&parsed) {
            let out = &mut data[i * w + offset..i * w + offset + spec.width()];
            let (anchor_out, off_out) = out.split_at_mut(anchor_w);
            match anchor {
                Some(a) => datetime::encode_split(spec, a, anchor_out),
                None => anchor_out.iter_mut().for_each(|o| *o = 0),
            }
            match (anchor, value) {
                (Some(a), Some(v)) => numeric::encode_value(
                    off_spec,
                    datetime::to_seconds(*v) - datetime::to_seconds(a),
                    off_out,
                ),
                _ => numeric::encode_missing(off_spec, off_out),
            }
        }
    }
    Ok(())
}

/// Encodes a table; sequential tables are grouped by key in order of first
/// appearance.
pub fn encode(raw: &RawTable, schema: &TableSchema) -> Result<EncodedTable> {
    encode_grouped(raw, schema, None)
}

/// Like [`encode`], but for sequential tables the groups follow `keys`
/// (typically the context table's primary keys): keys without rows become
/// empty groups and rows whose key is not listed are dropped.
pub fn encode_grouped(raw: &RawTable, schema: &TableSchema, keys: Option<&[String]>) -> Result<EncodedTable> {
    let columns: Vec<&[Cell]> = schema
        .specs
        .iter()
        .map(|s| {
            raw.column(&s.column_name)
                .ok_or_else(|| Error::SchemaMismatch(format!("column `{}` is absent", s.column_name)))
        })
        .collect::<Result<_>>()?;

    let (order, groups) = if schema.is_sequential() {
        let key_name = schema.group_key.as_deref().ok_or(Error::NotSequential)?;
        let key_cells = raw
            .column(key_name)
            .ok_or_else(|| Error::UnknownGroupKey(key_name.to_string()))?;
        let found = group_rows(key_cells);
        let key_of = |rows: &Vec<usize>| key_cells[rows[0]].clone().unwrap_or_default();
        let (group_keys, group_rows): (Vec<String>, Vec<Vec<usize>>) = match keys {
            None => found.into_iter().map(|rows| (key_of(&rows), rows)).unzip(),
            Some(keys) => {
                let mut by_key: HashMap<String, Vec<usize>> =
                    found.into_iter().map(|rows| (key_of(&rows), rows)).collect();
                let ordered: Vec<(String, Vec<usize>)> = keys
                    .iter()
                    .map(|k| (k.clone(), by_key.remove(k).unwrap_or_default()))
                    .collect();
                let orphans: usize = by_key.values().map(Vec::len).sum();
                if orphans > 0 {
                    log::warn!("dropping {orphans} rows whose key has no context row");
                }
                ordered.into_iter().unzip()
            }
        };
        let lengths: Vec<usize> = group_rows.iter().map(Vec::len).collect();
        (
            group_rows.into_iter().flatten().collect::<Vec<_>>(),
            Some(Groups::from_lengths(group_keys, &lengths)),
        )
    } else {
        ((0..raw.n_rows()).collect(), None)
    };

    let sub_columns = schema.sub_columns();
    let w = sub_columns.len();
    let n = order.len();
    let mut data = vec![0u32; n * w];
    let ranges: Vec<std::ops::Range<usize>> = match &groups {
        Some(g) => (0..g.len()).map(|i| g.range(i)).collect(),
        None => (0..n).map(|i| i..i + 1).collect(),
    };
    for ((spec, cells), offset) in schema.specs.iter().zip(&columns).zip(schema.offsets()) {
        if spec.strategy == Strategy::DatetimeRelative {
            encode_relative(spec, cells, &ranges, &order, &mut data, w, offset)?;
            continue;
        }
        let cat = (spec.strategy == Strategy::Categorical).then(|| categorical::Codec::new(spec));
        let chars = (spec.strategy == Strategy::CharacterSplit).then(|| character::Codec::new(spec));
        for (i, &r) in order.iter().enumerate() {
            let out = &mut data[i * w + offset..i * w + offset + spec.width()];
            encode_cell(spec, cat.as_ref(), chars.as_ref(), cells[r].as_deref(), out)?;
        }
    }
    Ok(EncodedTable {
        sub_columns,
        n_rows: n,
        data,
        groups,
    })
}

/// Decodes the first `schema.width()` sub-columns back into raw values.
/// Sequential tables get their group key as the first column.
pub fn decode(encoded: &EncodedTable, schema: &TableSchema, rng: &DecodeRng) -> Result<RawTable> {
    let w = encoded.width();
    if w < schema.width() {
        return Err(Error::ShapeMismatch(format!(
            "encoded width {w} is smaller than the schema width {}",
            schema.width()
        )));
    }
    for (sc, expected) in encoded.sub_columns.iter().zip(schema.sub_columns()) {
        if sc.cardinality != expected.cardinality {
            return Err(Error::SchemaMismatch(format!(
                "sub-column `{}` has cardinality {} but the schema says {}",
                sc.name, sc.cardinality, expected.cardinality
            )));
        }
    }
    encoded.validate()?;
    let n = encoded.n_rows;
    let mut rngs: Vec<ChaCha8Rng> = (0..n).map(|r| rng.row(r)).collect();
    let mut names = Vec::new();
    let mut columns = Vec::new();
    if let (Some(key), Some(groups)) = (&schema.group_key, &encoded.groups) {
        if schema.is_sequential() {
            let mut keys = Vec::with_capacity(n);
            for g in 0..groups.len() {
                keys.extend(groups.range(g).map(|_| Some(groups.keys[g].clone())));
            }
            names.push(key.clone());
            columns.push(keys);
        }
    }
    // Row whose anchor a relative datetime uses.
    let anchor_row: Vec<usize> = match &encoded.groups {
        Some(g) => (0..g.len()).flat_map(|i| g.range(i).map(move |_| g.offsets[i])).collect(),
        None => (0..n).collect(),
    };
    for (spec, offset) in schema.specs.iter().zip(schema.offsets()) {
        let codes = |r: usize| &encoded.data[r * w + offset..r * w + offset + spec.width()];
        let cat = (spec.strategy == Strategy::Categorical).then(|| categorical::Codec::new(spec));
        let chars = (spec.strategy == Strategy::CharacterSplit).then(|| character::Codec::new(spec));
        let mut out: Vec<Cell> = Vec::with_capacity(n);
        for r in 0..n {
            let c = codes(r);
            let cell = match spec.strategy {
                Strategy::Categorical => cat.as_ref().unwrap().decode(c[0]),
                Strategy::NumericDiscrete | Strategy::NumericBinned | Strategy::NumericDigit => {
                    numeric::decode_cell(spec, c, &mut rngs[r])
                }
                Strategy::DatetimeSplit => datetime::decode_split(spec, c)
                    .map(|dt| datetime::format_datetime(dt, spec.datetime.as_ref().unwrap())),
                Strategy::DatetimeRelative => {
                    let layout = spec.datetime.unwrap();
                    let anchor_w = datetime::split_width(&layout);
                    let off_spec = spec.offsets.as_deref().unwrap();
                    let anchor = datetime::decode_split(spec, &codes(anchor_row[r])[..anchor_w]);
                    let off = numeric::decode_value(off_spec, &c[anchor_w..], &mut rngs[r]);
                    match (anchor, off) {
                        (Some(a), Some(o)) => Some(datetime::format_datetime(
                            datetime::from_seconds(datetime::to_seconds(a) + o),
                            &layout,
                        )),
                        _ => None,
                    }
                }
                Strategy::CharacterSplit => chars.as_ref().unwrap().decode(c),
                Strategy::Quadtile => quadtile::decode(c),
            };
            out.push(cell);
        }
        names.push(spec.column_name.clone());
        columns.push(out);
    }
    RawTable::new(names, columns)
}

/// Appends the sequence-length and counting-index sub-columns, sized for
/// the longest sequence present. Empty groups become a single pseudo-row
/// with length 0 so the length distribution keeps its zero mass.
pub fn augment_sequences(encoded: &EncodedTable) -> Result<EncodedTable> {
    let groups = encoded.groups.as_ref().ok_or(Error::NotSequential)?;
    let max_len = (0..groups.len()).map(|g| groups.range(g).len()).max().unwrap_or(0);
    augment_sequences_with(encoded, max_len)
}

/// [`augment_sequences`] with a fixed maximum length; longer sequences are
/// truncated.
pub fn augment_sequences_with(encoded: &EncodedTable, max_len: usize) -> Result<EncodedTable> {
    let groups = encoded.groups.as_ref().ok_or(Error::NotSequential)?;
    let w = encoded.width();
    let card = (max_len + 1) as u32;
    let mut sub_columns = encoded.sub_columns.clone();
    sub_columns.push(SubColumn {
        name: SEQ_LEN_COLUMN.to_string(),
        cardinality: card,
    });
    sub_columns.push(SubColumn {
        name: SEQ_INDEX_COLUMN.to_string(),
        cardinality: card,
    });
    let mut data = Vec::with_capacity((encoded.n_rows + groups.len()) * (w + 2));
    let mut lengths = Vec::with_capacity(groups.len());
    for g in 0..groups.len() {
        let range = groups.range(g);
        let len = range.len().min(max_len);
        if len == 0 {
            data.extend(std::iter::repeat_n(0, w));
            data.extend([0, 1.min(card - 1)]);
            lengths.push(1);
            continue;
        }
        for (t, r) in range.take(len).enumerate() {
            data.extend_from_slice(encoded.row(r));
            data.extend([len as u32, t as u32 + 1]);
        }
        lengths.push(len);
    }
    let n_rows = lengths.iter().sum();
    Ok(EncodedTable {
        sub_columns,
        n_rows,
        data,
        groups: Some(Groups::from_lengths(groups.keys.clone(), &lengths)),
    })
}

/// Inverse of [`augment_sequences`]: drops the two positional sub-columns and
/// the pseudo-rows of zero-length sequences.
pub fn strip_sequence_columns(encoded: &EncodedTable) -> Result<EncodedTable> {
    let groups = encoded.groups.as_ref().ok_or(Error::NotSequential)?;
    let w = encoded.width();
    if w < 2 || encoded.sub_columns[w - 2].name != SEQ_LEN_COLUMN {
        return Err(Error::ShapeMismatch("table has no sequence columns".into()));
    }
    let mut data = Vec::with_capacity(encoded.n_rows * (w - 2));
    let mut lengths = Vec::with_capacity(groups.len());
    for g in 0..groups.len() {
        let mut len = 0;
        for r in groups.range(g) {
            let row = encoded.row(r);
            if row[w - 2] == 0 {
                continue;
            }
            data.extend_from_slice(&row[..w - 2]);
            len += 1;
        }
        lengths.push(len);
    }
    let n_rows = lengths.iter().sum();
    Ok(EncodedTable {
        sub_columns: encoded.sub_columns[..w - 2].to_vec(),
        n_rows,
        data,
        groups: Some(Groups::from_lengths(groups.keys.clone(), &lengths)),
    })
}
