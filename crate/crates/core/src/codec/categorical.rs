use std::collections::{BTreeMap, HashMap};

use crate::schema::{
    AnalysisOptions, ColumnKind, EncodingSpec, Strategy, SubColumn, MISSING_TOKEN, RARE_TOKEN,
};
use crate::table::Cell;

pub(crate) fn fit(name: &str, cells: &[Cell], opts: &AnalysisOptions) -> EncodingSpec {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    let mut has_missing = false;
    for cell in cells {
        match cell {
            Some(v) => *counts.entry(v.as_str()).or_default() += 1,
            None => has_missing = true,
        }
    }
    let has_rare = counts.values().any(|&c| c < opts.rare_min_count);
    let mut spec = EncodingSpec::new(name, ColumnKind::Categorical, Strategy::Categorical);
    spec.has_missing = has_missing;
    spec.has_rare = has_rare;
    if has_missing {
        spec.categories.push(MISSING_TOKEN.to_string());
    }
    if has_rare {
        spec.categories.push(RARE_TOKEN.to_string());
    }
    spec.categories.extend(
        counts
            .iter()
            .filter(|(_, &c)| c >= opts.rare_min_count)
            .map(|(v, _)| v.to_string()),
    );
    spec.sub_columns.push(SubColumn {
        name: name.to_string(),
        cardinality: spec.categories.len().max(1) as u32,
    });
    spec
}

pub(crate) struct Codec<'a> {
    spec: &'a EncodingSpec,
    lookup: HashMap<&'a str, u32>,
}

impl<'a> Codec<'a> {
    pub fn new(spec: &'a EncodingSpec) -> Self {
        let reserved = spec.reserved() as usize;
        let lookup = spec.categories[reserved..]
            .iter()
            .enumerate()
            .map(|(i, c)| (c.as_str(), (i + reserved) as u32))
            .collect();
        Self { spec, lookup }
    }

    /// Unseen labels map to RARE; `None` when the spec has no RARE token.
    pub fn encode(&self, cell: Option<&str>) -> Option<u32> {
        match cell {
            None => self.spec.missing_index(),
            Some(v) => self
                .lookup
                .get(v)
                .copied()
                .or_else(|| self.spec.rare_index()),
        }
    }

    pub fn decode(&self, index: u32) -> Cell {
        if Some(index) == self.spec.missing_index() {
            None
        } else if Some(index) == self.spec.rare_index() {
            Some(RARE_TOKEN.to_string())
        } else {
            self.spec.categories.get(index as usize).cloned()
        }
    }
}
