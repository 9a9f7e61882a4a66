//! Numeric strategies: discrete (one category per value), binned (quantile
//! intervals plus point masses) and digit (one sub-column per decimal digit).

use rand::Rng;

use crate::error::{Error, Result};
use crate::schema::{
    clip_bounds, quantile_floor, select_numeric_strategy, AnalysisOptions, Bin, ColumnKind,
    DigitLayout, EncodingSpec, Strategy, SubColumn, MISSING_TOKEN,
};
use crate::table::Cell;

pub const MAX_DECIMALS: u32 = 6;

pub fn parse_number(s: &str) -> Option<f64> {
    let v: f64 = s.trim().parse().ok()?;
    v.is_finite().then_some(v)
}

/// Digits after the decimal point as written, capped at [`MAX_DECIMALS`].
pub fn decimals_of(s: &str) -> u32 {
    let t = s.trim();
    if t.contains(['e', 'E']) {
        return MAX_DECIMALS;
    }
    match t.find('.') {
        Some(i) => (t.len() - i - 1).min(MAX_DECIMALS as usize) as u32,
        None => 0,
    }
}

pub fn format_number(v: f64, decimals: u32) -> String {
    let s = format!("{:.*}", decimals as usize, v);
    if s.starts_with('-') && s[1..].chars().all(|c| c == '0' || c == '.') {
        s[1..].to_string()
    } else {
        s
    }
}

/// Parsed, clipped sample of a numeric column.
pub(crate) struct NumericSample {
    pub sorted: Vec<f64>,
    pub has_missing: bool,
    pub decimals: u32,
    pub clip: (f64, f64),
}

pub(crate) fn sample(name: &str, cells: &[Cell], opts: &AnalysisOptions) -> Result<Option<NumericSample>> {
    let mut values = Vec::with_capacity(cells.len());
    let mut has_missing = false;
    let mut decimals = 0;
    for cell in cells {
        match cell {
            None => has_missing = true,
            Some(text) => {
                let v = parse_number(text).ok_or_else(|| Error::MixedTypeColumn {
                    column: name.to_string(),
                    value: text.clone(),
                    expected: "a number",
                })?;
                decimals = decimals.max(decimals_of(text));
                values.push(v);
            }
        }
    }
    Ok(from_values(values, has_missing, decimals, opts))
}

pub(crate) fn from_values(
    mut values: Vec<f64>,
    has_missing: bool,
    decimals: u32,
    opts: &AnalysisOptions,
) -> Option<NumericSample> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let clip = clip_bounds(&values, opts.clip_quantiles);
    for v in &mut values {
        *v = v.clamp(clip.0, clip.1);
    }
    Some(NumericSample {
        sorted: values,
        has_missing,
        decimals,
        clip,
    })
}

pub(crate) fn fit(
    name: &str,
    cells: &[Cell],
    opts: &AnalysisOptions,
    user_override: Option<Strategy>,
) -> Result<EncodingSpec> {
    let sample = sample(name, cells, opts)?;
    fit_sample(name, ColumnKind::Numeric, sample, opts, user_override)
}

pub(crate) fn fit_sample(
    name: &str,
    kind: ColumnKind,
    sample: Option<NumericSample>,
    opts: &AnalysisOptions,
    user_override: Option<Strategy>,
) -> Result<EncodingSpec> {
    if let Some(s) = user_override {
        if !matches!(
            s,
            Strategy::NumericDiscrete | Strategy::NumericBinned | Strategy::NumericDigit
        ) {
            return Err(Error::InvalidConfig(format!(
                "column `{name}`: {s:?} is not a numeric strategy"
            )));
        }
    }
    let Some(sample) = sample else {
        // Column without a single number: only the MISSING token.
        let mut spec = EncodingSpec::new(name, kind, Strategy::NumericDiscrete);
        spec.has_missing = true;
        spec.categories.push(MISSING_TOKEN.to_string());
        spec.sub_columns.push(SubColumn {
            name: name.to_string(),
            cardinality: 1,
        });
        return Ok(spec);
    };
    let mut distinct = sample.sorted.clone();
    distinct.dedup();
    let strategy = select_numeric_strategy(distinct.len(), opts.discrete_max, user_override);
    let mut spec = EncodingSpec::new(name, kind, strategy);
    spec.has_missing = sample.has_missing;
    spec.clip_low = Some(sample.clip.0);
    spec.clip_high = Some(sample.clip.1);
    spec.decimals = Some(sample.decimals);
    match strategy {
        Strategy::NumericDiscrete => {
            if spec.has_missing {
                spec.categories.push(MISSING_TOKEN.to_string());
            }
            spec.categories
                .extend(distinct.iter().map(|&v| format_number(v, sample.decimals)));
            spec.values = distinct;
            spec.sub_columns.push(SubColumn {
                name: name.to_string(),
                cardinality: spec.categories.len() as u32,
            });
        }
        Strategy::NumericBinned => {
            let (edges, bins) = quantile_bins(&sample.sorted, opts.max_bins.max(1));
            spec.bin_edges = edges;
            spec.bins = bins;
            spec.sub_columns.push(SubColumn {
                name: name.to_string(),
                cardinality: (spec.bins.len() + spec.has_missing as usize) as u32,
            });
        }
        Strategy::NumericDigit => {
            let max_abs = sample.clip.0.abs().max(sample.clip.1.abs());
            let int_digits = if max_abs < 1.0 {
                1
            } else {
                (max_abs.floor().log10().floor() as u32) + 1
            };
            let layout = DigitLayout {
                missing: sample.has_missing,
                sign: sample.clip.0 < 0.0,
                int_digits,
                frac_digits: sample.decimals,
            };
            if layout.missing {
                spec.sub_columns.push(SubColumn {
                    name: format!("{name}__missing"),
                    cardinality: 2,
                });
            }
            if layout.sign {
                spec.sub_columns.push(SubColumn {
                    name: format!("{name}__sign"),
                    cardinality: 2,
                });
            }
            for k in (0..layout.int_digits).rev() {
                spec.sub_columns.push(SubColumn {
                    name: format!("{name}__i{k}"),
                    cardinality: 10,
                });
            }
            for k in 1..=layout.frac_digits {
                spec.sub_columns.push(SubColumn {
                    name: format!("{name}__f{k}"),
                    cardinality: 10,
                });
            }
            spec.digit_layout = Some(layout);
        }
        _ => unreachable!("numeric strategy"),
    }
    Ok(spec)
}

/// Percentile edges (deduplicated) and the resulting categories. An edge hit
/// by two or more percentiles carries a point mass and becomes its own
/// category; intervals that hold no training value are dropped.
pub(crate) fn quantile_bins(sorted: &[f64], max_bins: usize) -> (Vec<f64>, Vec<Bin>) {
    let quantiles: Vec<f64> = (0..=max_bins)
        .map(|k| quantile_floor(sorted, k as f64 / max_bins as f64))
        .collect();
    let mut edges: Vec<f64> = Vec::new();
    let mut multiplicity: Vec<usize> = Vec::new();
    for q in quantiles {
        if edges.last() == Some(&q) {
            *multiplicity.last_mut().unwrap() += 1;
        } else {
            edges.push(q);
            multiplicity.push(1);
        }
    }
    let point = |i: usize| multiplicity[i] >= 2;
    let m = edges.len() - 1;
    let mut bins = Vec::new();
    for i in 0..=m {
        if point(i) || m == 0 {
            bins.push(Bin {
                lo: edges[i],
                hi: edges[i],
                lo_open: false,
                hi_closed: true,
            });
        }
        if i < m {
            bins.push(Bin {
                lo: edges[i],
                hi: edges[i + 1],
                lo_open: point(i),
                hi_closed: i + 1 == m && !point(m),
            });
        }
    }
    bins.retain(|b| b.is_point() || sorted.iter().any(|&v| b.contains(v)));
    (edges, bins)
}

pub(crate) fn clamp(spec: &EncodingSpec, v: f64) -> f64 {
    match (spec.clip_low, spec.clip_high) {
        (Some(lo), Some(hi)) => v.clamp(lo, hi),
        _ => v,
    }
}

pub(crate) fn bin_index(bins: &[Bin], v: f64) -> usize {
    if let Some(i) = bins.iter().position(|b| b.contains(v)) {
        return i;
    }
    let dist = |b: &Bin| {
        if v < b.lo {
            b.lo - v
        } else if v > b.hi {
            v - b.hi
        } else {
            0.0
        }
    };
    (0..bins.len())
        .min_by(|&a, &b| dist(&bins[a]).total_cmp(&dist(&bins[b])))
        .unwrap_or(0)
}

/// Uniform draw on the column's decimal grid inside the bin.
pub(crate) fn sample_bin<R: Rng + ?Sized>(bin: &Bin, decimals: u32, rng: &mut R) -> f64 {
    if bin.is_point() {
        return bin.lo;
    }
    let scale = 10f64.powi(decimals as i32);
    let lo = (bin.lo * scale).round() as i64 + bin.lo_open as i64;
    let hi = (bin.hi * scale).round() as i64 - (!bin.hi_closed) as i64;
    if lo > hi {
        return 0.5 * (bin.lo + bin.hi);
    }
    rng.random_range(lo..=hi) as f64 / scale
}

/// Encodes a present numeric value into `out` (one slot per sub-column).
pub(crate) fn encode_value(spec: &EncodingSpec, v: f64, out: &mut [u32]) {
    let v = clamp(spec, v);
    let reserved = spec.has_missing as u32;
    match spec.strategy {
        Strategy::NumericDiscrete => {
            let values = &spec.values;
            let i = match values.binary_search_by(|x| x.total_cmp(&v)) {
                Ok(i) => i,
                Err(0) => 0,
                Err(i) if i >= values.len() => values.len() - 1,
                Err(i) => {
                    if v - values[i - 1] <= values[i] - v {
                        i - 1
                    } else {
                        i
                    }
                }
            };
            out[0] = i as u32 + reserved;
        }
        Strategy::NumericBinned => out[0] = bin_index(&spec.bins, v) as u32 + reserved,
        Strategy::NumericDigit => {
            let layout = spec.digit_layout.expect("digit layout");
            let mut k = 0;
            if layout.missing {
                out[k] = 0;
                k += 1;
            }
            if layout.sign {
                out[k] = (v < 0.0) as u32;
                k += 1;
            }
            let n_digits = layout.int_digits + layout.frac_digits;
            let max = 10u64.pow(n_digits) - 1;
            let mut n = ((v.abs() * 10f64.powi(layout.frac_digits as i32)).round() as u64).min(max);
            for slot in out[k..k + n_digits as usize].iter_mut().rev() {
                *slot = (n % 10) as u32;
                n /= 10;
            }
        }
        _ => unreachable!("numeric strategy"),
    }
}

pub(crate) fn encode_missing(spec: &EncodingSpec, out: &mut [u32]) {
    out.iter_mut().for_each(|o| *o = 0);
    if spec.strategy == Strategy::NumericDigit {
        out[0] = 1;
    }
}

/// Decodes to a number, `None` for MISSING.
pub(crate) fn decode_value<R: Rng + ?Sized>(spec: &EncodingSpec, codes: &[u32], rng: &mut R) -> Option<f64> {
    let decimals = spec.decimals.unwrap_or(0);
    match spec.strategy {
        Strategy::NumericDiscrete | Strategy::NumericBinned => {
            if spec.has_missing && codes[0] == 0 {
                return None;
            }
            let i = (codes[0] - spec.has_missing as u32) as usize;
            if spec.strategy == Strategy::NumericDiscrete {
                spec.values.get(i).copied()
            } else {
                spec.bins.get(i).map(|b| sample_bin(b, decimals, rng))
            }
        }
        Strategy::NumericDigit => {
            let layout = spec.digit_layout.expect("digit layout");
            let mut k = 0;
            if layout.missing {
                if codes[0] == 1 {
                    return None;
                }
                k += 1;
            }
            let negative = if layout.sign {
                k += 1;
                codes[k - 1] == 1
            } else {
                false
            };
            let n = codes[k..]
                .iter()
                .fold(0u64, |acc, &d| acc * 10 + d.min(9) as u64);
            let a = n as f64 / 10f64.powi(layout.frac_digits as i32);
            Some(clamp(spec, if negative { -a } else { a }))
        }
        _ => unreachable!("numeric strategy"),
    }
}

pub(crate) fn decode_cell<R: Rng + ?Sized>(spec: &EncodingSpec, codes: &[u32], rng: &mut R) -> Cell {
    decode_value(spec, codes, rng).map(|v| format_number(v, spec.decimals.unwrap_or(0)))
}
