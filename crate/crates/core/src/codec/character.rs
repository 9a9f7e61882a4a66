//! One sub-column per character position. Every position shares the
//! alphabet `[PAD, MISSING, chars...]`; MISSING is only written at position 0.

use std::collections::BTreeSet;

use crate::schema::{AnalysisOptions, ColumnKind, EncodingSpec, Strategy, SubColumn};
use crate::table::Cell;

pub const PAD: u32 = 0;
pub const MISSING: u32 = 1;
const RESERVED: u32 = 2;

pub(crate) fn fit(name: &str, cells: &[Cell], opts: &AnalysisOptions) -> EncodingSpec {
    let mut alphabet = BTreeSet::new();
    let mut longest = 0;
    let mut has_missing = false;
    for cell in cells {
        match cell {
            None => has_missing = true,
            Some(s) => {
                let chars: Vec<char> = s.chars().take(opts.max_string_len).collect();
                longest = longest.max(chars.len());
                alphabet.extend(chars);
            }
        }
    }
    let len = longest.clamp(1, opts.max_string_len.max(1));
    let mut spec = EncodingSpec::new(name, ColumnKind::Character, Strategy::CharacterSplit);
    spec.has_missing = has_missing;
    spec.categories = alphabet.into_iter().map(String::from).collect();
    spec.max_string_len = Some(len as u32);
    let cardinality = RESERVED + spec.categories.len() as u32;
    spec.sub_columns = (0..len)
        .map(|i| SubColumn {
            name: format!("{name}__c{i}"),
            cardinality,
        })
        .collect();
    spec
}

pub(crate) struct Codec {
    alphabet: Vec<char>,
}

impl Codec {
    pub fn new(spec: &EncodingSpec) -> Self {
        Self {
            alphabet: spec
                .categories
                .iter()
                .filter_map(|c| c.chars().next())
                .collect(),
        }
    }

    /// Characters outside the alphabet are dropped; text beyond the maximum
    /// length is truncated.
    pub fn encode(&self, cell: Option<&str>, out: &mut [u32]) {
        out.iter_mut().for_each(|o| *o = PAD);
        let Some(s) = cell else {
            out[0] = MISSING;
            return;
        };
        let codes = s
            .chars()
            .filter_map(|c| self.alphabet.binary_search(&c).ok())
            .map(|i| i as u32 + RESERVED);
        for (slot, code) in out.iter_mut().zip(codes) {
            *slot = code;
        }
    }

    /// Reads characters up to the first PAD.
    pub fn decode(&self, codes: &[u32]) -> Cell {
        if codes.first() == Some(&MISSING) {
            return None;
        }
        Some(
            codes
                .iter()
                .take_while(|&&c| c != PAD)
                .filter_map(|&c| c.checked_sub(RESERVED))
                .filter_map(|i| self.alphabet.get(i as usize))
                .collect(),
        )
    }
}
