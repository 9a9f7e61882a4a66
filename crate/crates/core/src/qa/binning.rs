//! Discretisation of raw columns into at most ten metric groups, fitted on
//! the training table only.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::codec::datetime::{parse_datetime, to_seconds};
use crate::codec::numeric::parse_number;
use crate::error::{Error, Result};
use crate::schema::{ColumnKind, TableSchema, MISSING_TOKEN};
use crate::table::{Cell, RawTable};

pub const MAX_GROUPS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ColumnBinning {
    /// Decile lower edges. Group `k` holds values in `[edges[k-1], edges[k])`
    /// with the outer groups unbounded; a trailing group holds missing cells.
    Deciles { datetime: bool, edges: Vec<f64> },
    /// The most frequent labels, missing cells counted as their own label.
    /// Anything else falls outside every group.
    TopCategories { categories: Vec<String> },
}

impl ColumnBinning {
    pub fn n_groups(&self) -> usize {
        match self {
            Self::Deciles { edges, .. } => edges.len() + 2,
            Self::TopCategories { categories } => categories.len(),
        }
    }

    fn fit(kind: ColumnKind, cells: &[Cell]) -> Self {
        match kind {
            ColumnKind::Numeric | ColumnKind::Datetime | ColumnKind::DatetimeRelative => {
                let datetime = kind != ColumnKind::Numeric;
                let mut values: Vec<f64> = cells
                    .iter()
                    .filter_map(|c| c.as_deref().and_then(|s| parse_value(s, datetime)))
                    .collect();
                values.sort_by(f64::total_cmp);
                Self::Deciles {
                    datetime,
                    edges: decile_edges(&values),
                }
            }
            _ => Self::TopCategories {
                categories: top_categories(cells, MAX_GROUPS),
            },
        }
    }
}

fn parse_value(s: &str, datetime: bool) -> Option<f64> {
    if datetime {
        parse_datetime(s).map(to_seconds)
    } else {
        parse_number(s)
    }
}

/// Values at ranks `⌊k·n/10⌋` for `k = 1..9`, deduplicated.
pub fn decile_edges(sorted: &[f64]) -> Vec<f64> {
    let n = sorted.len();
    if n == 0 {
        return Vec::new();
    }
    let mut edges: Vec<f64> = (1..MAX_GROUPS).map(|k| sorted[k * n / MAX_GROUPS]).collect();
    edges.dedup();
    // An edge equal to the minimum would leave group 0 empty by construction.
    if edges.first() == sorted.first() {
        edges.remove(0);
    }
    edges
}

/// Most frequent labels, ties broken by label.
pub fn top_categories(cells: &[Cell], k: usize) -> Vec<String> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for c in cells {
        *counts.entry(c.as_deref().unwrap_or(MISSING_TOKEN)).or_default() += 1;
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    ranked.into_iter().take(k).map(|(c, _)| c.to_string()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricBinning {
    pub columns: Vec<(String, ColumnBinning)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_key: Option<String>,
}

impl MetricBinning {
    /// Fits one binning per modelled column of `schema` on `trn`.
    pub fn fit(schema: &TableSchema, trn: &RawTable) -> Result<Self> {
        let mut columns = Vec::with_capacity(schema.specs.len());
        for spec in &schema.specs {
            let cells = trn
                .column(&spec.column_name)
                .ok_or_else(|| Error::SchemaMismatch(format!("training table lacks column `{}`", spec.column_name)))?;
            columns.push((spec.column_name.clone(), ColumnBinning::fit(spec.kind, cells)));
        }
        Ok(Self {
            columns,
            group_key: schema.is_sequential().then(|| schema.group_key.clone()).flatten(),
        })
    }

    pub fn names(&self) -> Vec<&str> {
        self.columns.iter().map(|(n, _)| n.as_str()).collect()
    }

    /// Checks that `table` carries every binned column and the group key.
    pub fn check(&self, table: &RawTable, role: &str) -> Result<()> {
        let missing = self
            .names()
            .into_iter()
            .chain(self.group_key.as_deref())
            .find(|c| table.column_index(c).is_none());
        match missing {
            Some(c) => Err(Error::SchemaMismatch(format!("{role} table lacks column `{c}`"))),
            None => Ok(()),
        }
    }

    /// Group of every cell, column-major; `None` for cells outside all groups.
    pub fn assign(&self, table: &RawTable) -> Result<Vec<Vec<Option<usize>>>> {
        self.check(table, "input")?;
        Ok(self
            .columns
            .iter()
            .map(|(name, b)| {
                let cells = table.column(name).expect("checked");
                cells.iter().map(|c| group_of(b, c.as_deref())).collect()
            })
            .collect())
    }
}

pub fn group_of(binning: &ColumnBinning, cell: Option<&str>) -> Option<usize> {
    match binning {
        ColumnBinning::Deciles { datetime, edges } => match cell {
            None => Some(edges.len() + 1),
            Some(s) => {
                let v = parse_value(s, *datetime)?;
                Some(edges.partition_point(|&e| e <= v))
            }
        },
        ColumnBinning::TopCategories { categories } => {
            let label = cell.unwrap_or(MISSING_TOKEN);
            categories.iter().position(|c| c == label)
        }
    }
}
