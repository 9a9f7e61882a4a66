//! Direct re-computation of the fidelity and privacy metrics for small
//! tables, written without the library's binning or matrix code.

use std::collections::{BTreeMap, BTreeSet};

use synthtab::table::Cell;
use synthtab::{analyze, AnalysisOptions, ColumnKind, RawTable, TableSchema};

const MISSING: &str = "_MISSING_";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Numeric,
    Categorical,
}

/// Group label of every cell of `cells`, binned on `trn`.
pub fn labels(kind: Kind, trn: &[Cell], cells: &[Cell]) -> Vec<Option<String>> {
    match kind {
        Kind::Numeric => {
            let mut v: Vec<f64> = trn.iter().flatten().map(|s| s.parse().unwrap()).collect();
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let n = v.len();
            let mut edges: Vec<f64> = Vec::new();
            for k in 1..10 {
                let e = v[k * n / 10];
                if edges.last() != Some(&e) {
                    edges.push(e);
                }
            }
            if edges.first() == v.first() {
                edges.remove(0);
            }
            cells
                .iter()
                .map(|c| match c {
                    None => Some("missing".to_string()),
                    Some(s) => {
                        let x: f64 = s.parse().unwrap();
                        Some(format!("bin{}", edges.iter().filter(|&&e| e <= x).count()))
                    }
                })
                .collect()
        }
        Kind::Categorical => {
            let mut counts: BTreeMap<String, usize> = BTreeMap::new();
            for c in trn {
                *counts.entry(c.clone().unwrap_or_else(|| MISSING.into())).or_default() += 1;
            }
            let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
            ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            let top: BTreeSet<String> = ranked.into_iter().take(10).map(|(l, _)| l).collect();
            cells
                .iter()
                .map(|c| {
                    let l = c.clone().unwrap_or_else(|| MISSING.into());
                    top.contains(&l).then_some(l)
                })
                .collect()
        }
    }
}

fn normalised(weights: BTreeMap<String, f64>) -> BTreeMap<String, f64> {
    let total: f64 = weights.values().sum();
    weights.into_iter().map(|(k, v)| (k, v / total)).collect()
}

fn histogram(items: impl Iterator<Item = (Option<String>, f64)>) -> BTreeMap<String, f64> {
    let mut h = BTreeMap::new();
    for (label, w) in items {
        if let Some(l) = label {
            *h.entry(l).or_insert(0.0) += w;
        }
    }
    normalised(h)
}

/// One minus half the L1 distance, over the union of supports.
pub fn accuracy(p: &BTreeMap<String, f64>, q: &BTreeMap<String, f64>) -> f64 {
    let keys: BTreeSet<&String> = p.keys().chain(q.keys()).collect();
    let l1: f64 = keys
        .into_iter()
        .map(|k| (p.get(k).unwrap_or(&0.0) - q.get(k).unwrap_or(&0.0)).abs())
        .sum();
    1.0 - 0.5 * l1
}

fn joint(a: &Option<String>, b: &Option<String>) -> Option<String> {
    Some(format!("{}|{}", a.as_ref()?, b.as_ref()?))
}

pub struct Oracle<'a> {
    pub columns: &'a [(&'a str, Kind)],
    pub trn: &'a RawTable,
}

impl Oracle<'_> {
    fn labelled(&self, t: &RawTable) -> Vec<Vec<Option<String>>> {
        self.columns
            .iter()
            .map(|&(name, kind)| labels(kind, self.trn.column(name).unwrap(), t.column(name).unwrap()))
            .collect()
    }

    /// Some column, or some pair of columns, of `t` has no row inside the
    /// groups.
    pub fn has_empty_table(&self, t: &RawTable) -> bool {
        let l = self.labelled(t);
        let empty = |m: usize, n: usize| (0..t.n_rows()).all(|r| l[m][r].is_none() || l[n][r].is_none());
        (0..l.len()).any(|m| (m..l.len()).any(|n| empty(m, n)))
    }

    pub fn univariate(&self, syn: &RawTable) -> Vec<f64> {
        let (lt, ls) = (self.labelled(self.trn), self.labelled(syn));
        lt.iter()
            .zip(&ls)
            .map(|(a, b)| {
                accuracy(
                    &histogram(a.iter().map(|l| (l.clone(), 1.0))),
                    &histogram(b.iter().map(|l| (l.clone(), 1.0))),
                )
            })
            .collect()
    }

    pub fn bivariate(&self, syn: &RawTable) -> Vec<f64> {
        let (lt, ls) = (self.labelled(self.trn), self.labelled(syn));
        let mut out = Vec::new();
        for m in 0..lt.len() {
            for n in m + 1..lt.len() {
                let h = |l: &[Vec<Option<String>>]| histogram(l[m].iter().zip(&l[n]).map(|(a, b)| (joint(a, b), 1.0)));
                out.push(accuracy(&h(&lt), &h(&ls)));
            }
        }
        out
    }

    /// Coherence with every adjacent pair of a subject weighted `1/(L−1)`.
    pub fn coherence(&self, key: &str, syn: &RawTable) -> Vec<f64> {
        let pairs = |t: &RawTable| {
            let keys = t.column(key).unwrap();
            let mut subjects: Vec<(String, Vec<usize>)> = Vec::new();
            for (r, k) in keys.iter().enumerate() {
                let k = k.clone().unwrap_or_default();
                match subjects.iter_mut().find(|(s, _)| *s == k) {
                    Some((_, rows)) => rows.push(r),
                    None => subjects.push((k, vec![r])),
                }
            }
            let mut out = Vec::new();
            for (_, rows) in subjects.into_iter().filter(|(_, r)| r.len() > 1) {
                let w = 1.0 / (rows.len() - 1) as f64;
                for t in 1..rows.len() {
                    out.push((rows[t - 1], rows[t], w));
                }
            }
            out
        };
        let (lt, ls) = (self.labelled(self.trn), self.labelled(syn));
        let (pt, ps) = (pairs(self.trn), pairs(syn));
        (0..lt.len())
            .map(|m| {
                let h = |l: &[Option<String>], p: &[(usize, usize, f64)]| histogram(p.iter().map(|&(a, b, w)| (joint(&l[a], &l[b]), w)));
                accuracy(&h(&lt[m], &pt), &h(&ls[m], &ps))
            })
            .collect()
    }

    /// Per-record sets of `(column, label)` features.
    fn features(&self, t: &RawTable) -> Vec<BTreeSet<(usize, String)>> {
        let l = self.labelled(t);
        (0..t.n_rows())
            .map(|r| (0..l.len()).filter_map(|m| l[m][r].clone().map(|s| (m, s))).collect())
            .collect()
    }

    /// DCR share for flat tables. With one-hot features scaled to unit
    /// length, `d² = 2 − 2·o/√(a·b)` for overlap `o` and feature counts `a`,
    /// `b`, so for a fixed query the nearest record maximises `o²/b`; the
    /// comparison is done in integers.
    pub fn dcr_share(&self, hold: &RawTable, syn: &RawTable) -> f64 {
        let (ft, fh, fs) = (self.features(self.trn), self.features(hold), self.features(syn));
        let best = |q: &BTreeSet<(usize, String)>, refs: &[BTreeSet<(usize, String)>]| {
            refs.iter()
                .map(|r| {
                    assert!(!q.is_empty() && !r.is_empty(), "fixture records need at least one feature");
                    (q.intersection(r).count() as u64, r.len() as u64)
                })
                .max_by(|a, b| (a.0 * a.0 * b.1).cmp(&(b.0 * b.0 * a.1)))
                .unwrap()
        };
        let total: f64 = fs
            .iter()
            .map(|q| {
                let (ot, bt) = best(q, &ft);
                let (oh, bh) = best(q, &fh);
                match (ot * ot * bh).cmp(&(oh * oh * bt)) {
                    std::cmp::Ordering::Greater => 1.0,
                    std::cmp::Ordering::Less => 0.0,
                    std::cmp::Ordering::Equal => 0.5,
                }
            })
            .sum();
        total / fs.len() as f64
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn fixture(name: &str) -> RawTable {
    RawTable::read_csv(format!("{}/tests/fixtures/{name}.csv", env!("CARGO_MANIFEST_DIR"))).unwrap()
}

/// Schema with the oracle's column kinds, grouped by `key` when given.
pub fn schema(raw: &RawTable, columns: &[(&str, Kind)], key: Option<&str>) -> TableSchema {
    let kinds: BTreeMap<String, ColumnKind> = columns
        .iter()
        .map(|&(n, k)| {
            let kind = match k {
                Kind::Numeric => ColumnKind::Numeric,
                Kind::Categorical => ColumnKind::Categorical,
            };
            (n.to_string(), kind)
        })
        .collect();
    let opts = match key {
        Some(k) => AnalysisOptions::sequential(k),
        None => AnalysisOptions::default(),
    };
    analyze(raw, Some(&kinds), &opts).unwrap()
}
