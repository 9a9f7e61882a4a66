//! Univariate, bivariate and coherence accuracies over binned columns.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::binning::MetricBinning;
use crate::error::{Error, Result};
use crate::schema::group_rows;
use crate::table::RawTable;

/// `1 − ½‖p − q‖₁` for two distributions over the same groups.
pub fn tv_accuracy(p: &[f64], q: &[f64]) -> f64 {
    debug_assert_eq!(p.len(), q.len());
    let l1: f64 = p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum();
    (1.0 - 0.5 * l1).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnScore {
    pub column: String,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub columns: (String, String),
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnScores {
    pub overall: f64,
    pub columns: Vec<ColumnScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairScores {
    pub overall: f64,
    pub pairs: Vec<PairScore>,
}

/// How coherence picks adjacent step pairs from each subject.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum PairSampling {
    /// One uniformly drawn pair per subject.
    Random { seed: u64 },
    /// Every adjacent pair, each subject weighted equally.
    Exhaustive,
}

impl Default for PairSampling {
    fn default() -> Self {
        Self::Random { seed: 0 }
    }
}

fn normalise(mut counts: Vec<f64>, what: impl FnOnce() -> String) -> Result<Vec<f64>> {
    let total: f64 = counts.iter().sum();
    if total <= 0.0 {
        return Err(Error::EmptyColumn(what()));
    }
    counts.iter_mut().for_each(|c| *c /= total);
    Ok(counts)
}

fn frequencies(groups: &[Option<usize>], n: usize, name: &str) -> Result<Vec<f64>> {
    let mut counts = vec![0.0; n];
    for g in groups.iter().flatten() {
        counts[*g] += 1.0;
    }
    normalise(counts, || name.to_string())
}

/// Normalised contingency table of weighted `(a, b)` group pairs; pairs with
/// either side outside all groups are dropped.
fn contingency(
    pairs: impl Iterator<Item = (Option<usize>, Option<usize>, f64)>,
    na: usize,
    nb: usize,
    what: impl FnOnce() -> String,
) -> Result<Vec<f64>> {
    let mut counts = vec![0.0; na * nb];
    for (a, b, w) in pairs {
        if let (Some(a), Some(b)) = (a, b) {
            counts[a * nb + b] += w;
        }
    }
    normalise(counts, what)
}

fn mean(xs: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = xs.len();
    xs.sum::<f64>() / n as f64
}

pub fn univariate_accuracy(binning: &MetricBinning, trn: &RawTable, syn: &RawTable) -> Result<ColumnScores> {
    let (gt, gs) = (binning.assign(trn)?, binning.assign(syn)?);
    univariate_from_groups(binning, &gt, &gs)
}

pub(crate) fn univariate_from_groups(
    binning: &MetricBinning,
    gt: &[Vec<Option<usize>>],
    gs: &[Vec<Option<usize>>],
) -> Result<ColumnScores> {
    let mut columns = Vec::with_capacity(binning.columns.len());
    for (m, (name, b)) in binning.columns.iter().enumerate() {
        let n = b.n_groups();
        let p = frequencies(&gt[m], n, name)?;
        let q = frequencies(&gs[m], n, name)?;
        columns.push(ColumnScore {
            column: name.clone(),
            accuracy: tv_accuracy(&p, &q),
        });
    }
    if columns.is_empty() {
        return Err(Error::EmptySet("no columns to evaluate"));
    }
    Ok(ColumnScores {
        overall: mean(columns.iter().map(|c| c.accuracy)),
        columns,
    })
}

pub fn bivariate_accuracy(binning: &MetricBinning, trn: &RawTable, syn: &RawTable) -> Result<PairScores> {
    let (gt, gs) = (binning.assign(trn)?, binning.assign(syn)?);
    bivariate_from_groups(binning, &gt, &gs)
}

pub(crate) fn bivariate_from_groups(
    binning: &MetricBinning,
    gt: &[Vec<Option<usize>>],
    gs: &[Vec<Option<usize>>],
) -> Result<PairScores> {
    let d = binning.columns.len();
    if d < 2 {
        return Err(Error::InvalidConfig("bivariate accuracy needs at least two columns".into()));
    }
    let mut pairs = Vec::with_capacity(d * (d - 1) / 2);
    for m in 0..d {
        for n in m + 1..d {
            let (nm, bm) = &binning.columns[m];
            let (nn, bn) = &binning.columns[n];
            let what = || format!("{nm} × {nn}");
            let table = |g: &[Vec<Option<usize>>]| {
                contingency(
                    g[m].iter().zip(&g[n]).map(|(&a, &b)| (a, b, 1.0)),
                    bm.n_groups(),
                    bn.n_groups(),
                    what,
                )
            };
            pairs.push(PairScore {
                columns: (nm.clone(), nn.clone()),
                accuracy: tv_accuracy(&table(gt)?, &table(gs)?),
            });
        }
    }
    Ok(PairScores {
        overall: mean(pairs.iter().map(|p| p.accuracy)),
        pairs,
    })
}

/// Weighted adjacent row pairs `(t, t+1)` of every subject with at least two
/// steps, subjects in order of first appearance.
pub fn adjacent_pairs(table: &RawTable, group_key: &str, sampling: PairSampling) -> Result<Vec<(usize, usize, f64)>> {
    let keys = table
        .column(group_key)
        .ok_or_else(|| Error::UnknownGroupKey(group_key.to_string()))?;
    let mut rng = match sampling {
        PairSampling::Random { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
        PairSampling::Exhaustive => None,
    };
    let mut pairs = Vec::new();
    for rows in group_rows(keys) {
        if rows.len() < 2 {
            continue;
        }
        match rng.as_mut() {
            Some(rng) => {
                let t = rng.random_range(0..rows.len() - 1);
                pairs.push((rows[t], rows[t + 1], 1.0));
            }
            None => {
                let w = 1.0 / (rows.len() - 1) as f64;
                pairs.extend(rows.windows(2).map(|p| (p[0], p[1], w)));
            }
        }
    }
    if pairs.is_empty() {
        return Err(Error::NoSequencesOfLengthTwo);
    }
    Ok(pairs)
}

pub fn coherence(
    binning: &MetricBinning,
    trn: &RawTable,
    syn: &RawTable,
    sampling: PairSampling,
) -> Result<ColumnScores> {
    let (gt, gs) = (binning.assign(trn)?, binning.assign(syn)?);
    coherence_from_groups(binning, trn, syn, &gt, &gs, sampling)
}

pub(crate) fn coherence_from_groups(
    binning: &MetricBinning,
    trn: &RawTable,
    syn: &RawTable,
    gt: &[Vec<Option<usize>>],
    gs: &[Vec<Option<usize>>],
    sampling: PairSampling,
) -> Result<ColumnScores> {
    let key = binning.group_key.as_deref().ok_or(Error::NotSequential)?;
    let pt = adjacent_pairs(trn, key, sampling)?;
    let ps = adjacent_pairs(syn, key, sampling)?;
    let mut columns = Vec::with_capacity(binning.columns.len());
    for (m, (name, b)) in binning.columns.iter().enumerate() {
        let n = b.n_groups();
        let table = |g: &[Option<usize>], pairs: &[(usize, usize, f64)]| {
            contingency(pairs.iter().map(|&(a, c, w)| (g[a], g[c], w)), n, n, || format!("{name} × {name}'"))
        };
        columns.push(ColumnScore {
            column: name.clone(),
            accuracy: tv_accuracy(&table(&gt[m], &pt)?, &table(&gs[m], &ps)?),
        });
    }
    if columns.is_empty() {
        return Err(Error::EmptySet("no columns to evaluate"));
    }
    Ok(ColumnScores {
        overall: mean(columns.iter().map(|c| c.accuracy)),
        columns,
    })
}

/// Mean of the available accuracy families.
pub fn overall_accuracy(univariate: f64, bivariate: Option<f64>, coherence: Option<f64>) -> f64 {
    let parts: Vec<f64> = [Some(univariate), bivariate, coherence].into_iter().flatten().collect();
    mean(parts.into_iter())
}
