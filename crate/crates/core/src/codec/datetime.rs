//! Datetime split (year/month/day/hour/minute/second/ms sub-columns) and the
//! relative variant used inside sequences (anchor datetime + numeric offset).

use chrono::{Datelike, NaiveDate, NaiveDateTime, Timelike};

use super::numeric;
use crate::error::{Error, Result};
use crate::schema::{
    clip_bounds, AnalysisOptions, ColumnKind, DatetimeLayout, EncodingSpec, Strategy, SubColumn,
};
use crate::table::Cell;

const DATETIME_FORMATS: &[&str] = &[
    "%Y-%m-%d %H:%M:%S%.f",
    "%Y-%m-%dT%H:%M:%S%.f",
    "%Y-%m-%d %H:%M",
    "%Y-%m-%dT%H:%M",
    "%Y/%m/%d %H:%M:%S%.f",
    "%Y/%m/%d %H:%M",
];
const DATE_FORMATS: &[&str] = &["%Y-%m-%d", "%Y/%m/%d"];

pub fn parse_datetime(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    DATETIME_FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
        .or_else(|| {
            DATE_FORMATS
                .iter()
                .find_map(|f| NaiveDate::parse_from_str(s, f).ok())
                .map(|d| d.and_hms_opt(0, 0, 0).unwrap())
        })
}

pub fn format_datetime(dt: NaiveDateTime, layout: &DatetimeLayout) -> String {
    if layout.has_ms {
        dt.format("%Y-%m-%d %H:%M:%S%.3f").to_string()
    } else if layout.has_time {
        dt.format("%Y-%m-%d %H:%M:%S").to_string()
    } else {
        dt.format("%Y-%m-%d").to_string()
    }
}

/// Seconds since the Unix epoch, with millisecond resolution.
pub fn to_seconds(dt: NaiveDateTime) -> f64 {
    dt.and_utc().timestamp_millis() as f64 / 1000.0
}

pub fn from_seconds(s: f64) -> NaiveDateTime {
    chrono::DateTime::from_timestamp_millis((s * 1000.0).round() as i64)
        .map(|d| d.naive_utc())
        .unwrap_or_default()
}

fn parse_column(name: &str, cells: &[Cell]) -> Result<Vec<Option<NaiveDateTime>>> {
    cells
        .iter()
        .map(|c| match c {
            None => Ok(None),
            Some(text) => parse_datetime(text).map(Some).ok_or_else(|| Error::MixedTypeColumn {
                column: name.to_string(),
                value: text.clone(),
                expected: "a datetime",
            }),
        })
        .collect()
}

/// Fills the split layout and sub-columns of `spec` from present values.
/// The year range comes from `anchors`; time and millisecond resolution from
/// every value of the column.
fn fit_layout(
    spec: &mut EncodingSpec,
    name: &str,
    anchors: &[NaiveDateTime],
    values: &[NaiveDateTime],
    opts: &AnalysisOptions,
) {
    let mut secs: Vec<f64> = anchors.iter().map(|&d| to_seconds(d)).collect();
    secs.sort_by(f64::total_cmp);
    let (lo, hi) = if secs.is_empty() {
        (0.0, 0.0)
    } else {
        clip_bounds(&secs, opts.clip_quantiles)
    };
    let has_ms = values.iter().any(|d| d.nanosecond() != 0);
    let has_time = has_ms
        || values
            .iter()
            .any(|d| d.hour() != 0 || d.minute() != 0 || d.second() != 0);
    let layout = DatetimeLayout {
        min_year: from_seconds(lo).year(),
        max_year: from_seconds(hi).year(),
        has_time,
        has_ms,
    };
    spec.clip_low = Some(lo);
    spec.clip_high = Some(hi);
    spec.datetime = Some(layout);
    let years = (layout.max_year - layout.min_year + 1) as u32;
    let mut parts = vec![
        ("year", years + spec.has_missing as u32),
        ("month", 12),
        ("day", 31),
    ];
    if has_time {
        parts.extend([("hour", 24), ("minute", 60), ("second", 60)]);
    }
    if has_ms {
        parts.push(("ms", 1000));
    }
    spec.sub_columns.extend(parts.into_iter().map(|(p, c)| SubColumn {
        name: format!("{name}__{p}"),
        cardinality: c,
    }));
}

pub(crate) fn split_width(layout: &DatetimeLayout) -> usize {
    3 + 3 * layout.has_time as usize + layout.has_ms as usize
}

pub(crate) fn fit_split(name: &str, cells: &[Cell], opts: &AnalysisOptions) -> Result<EncodingSpec> {
    let parsed = parse_column(name, cells)?;
    let mut spec = EncodingSpec::new(name, ColumnKind::Datetime, Strategy::DatetimeSplit);
    spec.has_missing = parsed.iter().any(Option::is_none);
    let values: Vec<NaiveDateTime> = parsed.into_iter().flatten().collect();
    fit_layout(&mut spec, name, &values, &values, opts);
    Ok(spec)
}

/// Each row carries its group's anchor (first present value) as split
/// sub-columns, followed by its offset to the anchor in seconds.
pub(crate) fn fit_relative(
    name: &str,
    cells: &[Cell],
    groups: &[Vec<usize>],
    opts: &AnalysisOptions,
) -> Result<EncodingSpec> {
    let parsed = parse_column(name, cells)?;
    let mut spec = EncodingSpec::new(name, ColumnKind::DatetimeRelative, Strategy::DatetimeRelative);
    spec.has_missing = parsed.iter().any(Option::is_none);
    let mut anchors = Vec::new();
    let mut offsets = Vec::new();
    let mut decimals = 0;
    for rows in groups {
        let Some(anchor) = rows.iter().find_map(|&r| parsed[r]) else {
            continue;
        };
        anchors.push(anchor);
        for &r in rows {
            if let Some(v) = parsed[r] {
                let off = to_seconds(v) - to_seconds(anchor);
                if off.fract() != 0.0 {
                    decimals = 3;
                }
                offsets.push(off);
            }
        }
    }
    let values: Vec<NaiveDateTime> = parsed.iter().flatten().copied().collect();
    fit_layout(&mut spec, name, &anchors, &values, opts);
    let sample = numeric::from_values(offsets, spec.has_missing, decimals, opts);
    let offset_name = format!("{name}__offset");
    let offset_spec = numeric::fit_sample(&offset_name, ColumnKind::Numeric, sample, opts, None)?;
    spec.sub_columns.extend(offset_spec.sub_columns.iter().cloned());
    spec.offsets = Some(Box::new(offset_spec));
    Ok(spec)
}

/// Writes the split parts of a present value (clamped to the clip range).
pub(crate) fn encode_split(spec: &EncodingSpec, dt: NaiveDateTime, out: &mut [u32]) {
    let layout = spec.datetime.expect("datetime layout");
    let secs = to_seconds(dt).clamp(spec.clip_low.unwrap_or(f64::MIN), spec.clip_high.unwrap_or(f64::MAX));
    let dt = from_seconds(secs);
    let year = dt.year().clamp(layout.min_year, layout.max_year);
    out[0] = (year - layout.min_year) as u32 + spec.has_missing as u32;
    out[1] = dt.month0();
    out[2] = dt.day0();
    if layout.has_time {
        out[3] = dt.hour();
        out[4] = dt.minute();
        out[5] = dt.second();
    }
    if layout.has_ms {
        out[6] = dt.nanosecond() / 1_000_000 % 1000;
    }
}

pub(crate) fn decode_split(spec: &EncodingSpec, codes: &[u32]) -> Option<NaiveDateTime> {
    let layout = spec.datetime.expect("datetime layout");
    if spec.has_missing && codes[0] == 0 {
        return None;
    }
    let year = layout.min_year + (codes[0] - spec.has_missing as u32) as i32;
    let month = codes[1] + 1;
    let first = NaiveDate::from_ymd_opt(year, month, 1)?;
    let days_in_month = first
        .checked_add_months(chrono::Months::new(1))
        .map_or(31, |next| (next - first).num_days() as u32);
    let date = NaiveDate::from_ymd_opt(year, month, (codes[2] + 1).min(days_in_month))?;
    let (h, m, s) = if layout.has_time {
        (codes[3], codes[4], codes[5])
    } else {
        (0, 0, 0)
    };
    let ms = if layout.has_ms { codes[6] } else { 0 };
    date.and_hms_milli_opt(h, m, s, ms)
}
