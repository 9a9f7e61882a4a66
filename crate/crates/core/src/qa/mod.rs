//! Fidelity and privacy metrics comparing synthetic data with its training
//! and holdout tables.

pub mod accuracy;
pub mod binning;
pub mod dcr;

use serde::{Deserialize, Serialize};

pub use accuracy::{
    adjacent_pairs, bivariate_accuracy, coherence, overall_accuracy, tv_accuracy, univariate_accuracy,
    ColumnScore, ColumnScores, PairSampling, PairScore, PairScores,
};
pub use binning::{ColumnBinning, MetricBinning};
pub use dcr::{dcr_share, dcr_share_embedded, BinningEmbedder, DcrResult, RecordEmbedder};

use crate::error::Result;
use crate::schema::TableSchema;
use crate::table::RawTable;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QaOptions {
    pub coherence_pairs: PairSampling,
    /// Sequence steps kept by the default record embedder.
    pub embed_max_steps: usize,
}

impl Default for QaOptions {
    fn default() -> Self {
        Self {
            coherence_pairs: PairSampling::default(),
            embed_max_steps: dcr::DEFAULT_MAX_STEPS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleSizes {
    pub trn: usize,
    pub hold: usize,
    pub syn: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QAReport {
    pub acc_univariate: ColumnScores,
    /// Absent for single-column tables.
    pub acc_bivariate: Option<PairScores>,
    /// Present for sequential tables only.
    pub acc_coherence: Option<ColumnScores>,
    pub acc_overall: f64,
    pub dcr_share: f64,
    pub sample_sizes: SampleSizes,
}

impl QAReport {
    pub fn summary(&self) -> String {
        let mut s = format!("univariate  {:.4}\n", self.acc_univariate.overall);
        if let Some(b) = &self.acc_bivariate {
            s += &format!("bivariate   {:.4}\n", b.overall);
        }
        if let Some(c) = &self.acc_coherence {
            s += &format!("coherence   {:.4}\n", c.overall);
        }
        s += &format!("overall     {:.4}\ndcr share   {:.4}\n", self.acc_overall, self.dcr_share);
        s
    }
}

/// Full report with the default record embedder.
pub fn evaluate(
    schema: &TableSchema,
    trn: &RawTable,
    hold: &RawTable,
    syn: &RawTable,
    opts: &QaOptions,
) -> Result<QAReport> {
    let binning = MetricBinning::fit(schema, trn)?;
    let embedder = BinningEmbedder {
        binning: &binning,
        max_steps: opts.embed_max_steps,
    };
    evaluate_with(&binning, trn, hold, syn, opts, &embedder)
}

pub fn evaluate_with(
    binning: &MetricBinning,
    trn: &RawTable,
    hold: &RawTable,
    syn: &RawTable,
    opts: &QaOptions,
    embedder: &dyn RecordEmbedder,
) -> Result<QAReport> {
    binning.check(trn, "training")?;
    binning.check(hold, "holdout")?;
    binning.check(syn, "synthetic")?;
    let gt = binning.assign(trn)?;
    let gs = binning.assign(syn)?;
    let uni = accuracy::univariate_from_groups(binning, &gt, &gs)?;
    let bi = (binning.columns.len() >= 2)
        .then(|| accuracy::bivariate_from_groups(binning, &gt, &gs))
        .transpose()?;
    let coh = binning
        .group_key
        .is_some()
        .then(|| accuracy::coherence_from_groups(binning, trn, syn, &gt, &gs, opts.coherence_pairs))
        .transpose()?;
    let dcr = dcr_share(trn, hold, syn, embedder)?;
    Ok(QAReport {
        acc_overall: overall_accuracy(
            uni.overall,
            bi.as_ref().map(|b| b.overall),
            coh.as_ref().map(|c| c.overall),
        ),
        acc_univariate: uni,
        acc_bivariate: bi,
        acc_coherence: coh,
        dcr_share: dcr.share,
        sample_sizes: SampleSizes {
            trn: trn.n_rows(),
            hold: hold.n_rows(),
            syn: syn.n_rows(),
        },
    })
}
