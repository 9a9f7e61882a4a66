//! Distance to closest record: share of synthetic records whose nearest
//! embedded neighbour lies in the training rather than the holdout table.

use serde::{Deserialize, Serialize};

use super::binning::{group_of, MetricBinning};
use crate::error::{Error, Result};
use crate::kernel::{gemm, Matrix};
use crate::schema::group_rows;
use crate::table::RawTable;

/// Maps each record (or each full sequence) of a table to a vector of fixed
/// length. Identical records must map to identical vectors.
pub trait RecordEmbedder {
    fn dim(&self) -> usize;
    /// One row per record of `table`; for sequential tables, per subject.
    fn embed(&self, table: &RawTable) -> Result<Matrix<f64>>;
}

pub const DEFAULT_MAX_STEPS: usize = 16;

/// One-hot over the metric groups of every column, sequences flattened over
/// their first `max_steps` steps and zero padded, L2-normalised.
#[derive(Debug, Clone)]
pub struct BinningEmbedder<'a> {
    pub binning: &'a MetricBinning,
    pub max_steps: usize,
}

impl<'a> BinningEmbedder<'a> {
    pub fn new(binning: &'a MetricBinning) -> Self {
        Self {
            binning,
            max_steps: DEFAULT_MAX_STEPS,
        }
    }

    fn step_width(&self) -> usize {
        self.binning.columns.iter().map(|(_, b)| b.n_groups()).sum()
    }
}

impl RecordEmbedder for BinningEmbedder<'_> {
    fn dim(&self) -> usize {
        let steps = if self.binning.group_key.is_some() { self.max_steps } else { 1 };
        self.step_width() * steps
    }

    fn embed(&self, table: &RawTable) -> Result<Matrix<f64>> {
        self.binning.check(table, "input")?;
        let records: Vec<Vec<usize>> = match &self.binning.group_key {
            Some(key) => group_rows(table.column(key).expect("checked"))
                .into_iter()
                .map(|mut rows| {
                    rows.truncate(self.max_steps);
                    rows
                })
                .collect(),
            None => (0..table.n_rows()).map(|r| vec![r]).collect(),
        };
        let columns: Vec<&[_]> = self
            .binning
            .columns
            .iter()
            .map(|(name, _)| table.column(name).expect("checked"))
            .collect();
        let step = self.step_width();
        let mut out = Matrix::zeros(records.len(), self.dim());
        for (i, rows) in records.iter().enumerate() {
            let v = out.row_mut(i);
            for (t, &r) in rows.iter().enumerate() {
                let mut off = t * step;
                for ((_, b), cells) in self.binning.columns.iter().zip(&columns) {
                    if let Some(g) = group_of(b, cells[r].as_deref()) {
                        v[off + g] = 1.0;
                    }
                    off += b.n_groups();
                }
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                v.iter_mut().for_each(|x| *x /= norm);
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcrResult {
    pub share: f64,
    /// 1 closer to training, 0 closer to holdout, 0.5 on a tie.
    #[serde(skip)]
    pub indicators: Vec<f64>,
}

/// Squared distance summed in a fixed order, so equal inputs tie exactly.
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn sq_norms(m: &Matrix<f64>) -> Vec<f64> {
    (0..m.rows).map(|r| m.row(r).iter().map(|x| x * x).sum()).collect()
}

const BLOCK: usize = 128;

/// Exact nearest squared distance from every row of `queries` to `refs`.
///
/// Candidates come from the expansion `‖a‖² + ‖b‖² − 2a·b` computed with a
/// matrix product; those within its rounding slack of the minimum are then
/// rescored exactly.
pub fn nearest_sq_distances(queries: &Matrix<f64>, refs: &Matrix<f64>) -> Vec<f64> {
    let qn = sq_norms(queries);
    let rn = sq_norms(refs);
    let r_max = rn.iter().copied().fold(0.0, f64::max);
    let mut out = Vec::with_capacity(queries.rows);
    let mut dots = Matrix::zeros(0, 0);
    for start in (0..queries.rows).step_by(BLOCK) {
        let end = (start + BLOCK).min(queries.rows);
        let block = Matrix::from_vec(end - start, queries.cols, queries.data[start * queries.cols..end * queries.cols].to_vec())
            .expect("block shape");
        if dots.rows != block.rows || dots.cols != refs.rows {
            dots = Matrix::zeros(block.rows, refs.rows);
        }
        gemm(1.0, &block, false, refs, true, 0.0, &mut dots);
        for i in 0..block.rows {
            let q = start + i;
            let row = dots.row(i);
            let approx = |j: usize| qn[q] + rn[j] - 2.0 * row[j];
            let best = (0..refs.rows).map(approx).fold(f64::INFINITY, f64::min);
            let slack = 1e-9 * (1.0 + qn[q] + r_max);
            let exact = (0..refs.rows)
                .filter(|&j| approx(j) <= best + slack)
                .map(|j| sq_dist(queries.row(q), refs.row(j)))
                .fold(f64::INFINITY, f64::min);
            out.push(exact);
        }
    }
    out
}

/// Relative gap below which two squared distances count as tied. Equal
/// distances summed over differently placed coordinates can differ by a few
/// ulps.
const TIE_TOLERANCE: f64 = 1e-12;

fn indicator(d_trn: f64, d_hold: f64) -> f64 {
    if (d_trn - d_hold).abs() <= TIE_TOLERANCE * d_trn.max(d_hold).max(1.0) {
        0.5
    } else if d_trn < d_hold {
        1.0
    } else {
        0.0
    }
}

pub fn dcr_share_embedded(trn: &Matrix<f64>, hold: &Matrix<f64>, syn: &Matrix<f64>) -> Result<DcrResult> {
    if trn.rows == 0 {
        return Err(Error::EmptySet("training records"));
    }
    if hold.rows == 0 {
        return Err(Error::EmptySet("holdout records"));
    }
    if syn.rows == 0 {
        return Err(Error::EmptySet("synthetic records"));
    }
    if trn.cols != syn.cols || hold.cols != syn.cols {
        return Err(Error::ShapeMismatch("embedding dimensions differ".into()));
    }
    if trn.rows != hold.rows {
        log::warn!("training ({}) and holdout ({}) sizes differ; DCR share is biased", trn.rows, hold.rows);
    }
    let d_trn = nearest_sq_distances(syn, trn);
    let d_hold = nearest_sq_distances(syn, hold);
    let indicators: Vec<f64> = d_trn.iter().zip(&d_hold).map(|(&t, &h)| indicator(t, h)).collect();
    Ok(DcrResult {
        share: indicators.iter().sum::<f64>() / indicators.len() as f64,
        indicators,
    })
}

pub fn dcr_share(
    trn: &RawTable,
    hold: &RawTable,
    syn: &RawTable,
    embedder: &dyn RecordEmbedder,
) -> Result<DcrResult> {
    dcr_share_embedded(&embedder.embed(trn)?, &embedder.embed(hold)?, &embedder.embed(syn)?)
}
