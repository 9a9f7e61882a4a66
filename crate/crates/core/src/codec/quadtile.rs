//! Web-mercator quadkey encoding of `"lat, lon"` cells. Level `k` holds the
//! quadrant (NW=0, NE=1, SW=2, SE=3) of the tile at depth `k + 1`; a point on
//! a tile boundary goes to the lower-index quadrant.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::schema::{AnalysisOptions, ColumnKind, EncodingSpec, Strategy, SubColumn};
use crate::table::Cell;

/// MISSING at level 0 (only when the column has nulls).
pub const MISSING: u32 = 4;
pub const MAX_LATITUDE: f64 = 85.051_128_779_806_59;

pub fn parse_lat_lon(s: &str) -> Option<(f64, f64)> {
    let (lat, lon) = s.split_once(',')?;
    let lat: f64 = lat.trim().parse().ok()?;
    let lon: f64 = lon.trim().parse().ok()?;
    ((-90.0..=90.0).contains(&lat) && (-180.0..=180.0).contains(&lon)).then_some((lat, lon))
}

/// Unit-square mercator coordinates, y growing southward.
pub fn project(lat: f64, lon: f64) -> (f64, f64) {
    let lat = lat.clamp(-MAX_LATITUDE, MAX_LATITUDE).to_radians();
    let x = (lon + 180.0) / 360.0;
    let y = 0.5 - (lat.tan() + 1.0 / lat.cos()).ln() / (2.0 * std::f64::consts::PI);
    (x.clamp(0.0, 1.0), y.clamp(0.0, 1.0))
}

pub fn unproject(x: f64, y: f64) -> (f64, f64) {
    let lon = x * 360.0 - 180.0;
    let n = std::f64::consts::PI * (1.0 - 2.0 * y);
    let lat = n.sinh().atan().to_degrees();
    (lat, lon)
}

/// Quadrant digits of the point, most significant first.
pub fn quadkey(lat: f64, lon: f64, depth: u32) -> Vec<u32> {
    let (x, y) = project(lat, lon);
    let (mut x0, mut x1, mut y0, mut y1) = (0.0, 1.0, 0.0, 1.0);
    (0..depth)
        .map(|_| {
            let mx = 0.5 * (x0 + x1);
            let my = 0.5 * (y0 + y1);
            let east = x > mx;
            let south = y > my;
            if east { x0 = mx } else { x1 = mx }
            if south { y0 = my } else { y1 = my }
            2 * south as u32 + east as u32
        })
        .collect()
}

/// Centre of the tile addressed by `digits`.
pub fn tile_centre(digits: &[u32]) -> (f64, f64) {
    let (mut x0, mut x1, mut y0, mut y1) = (0.0, 1.0, 0.0, 1.0);
    for &d in digits {
        let mx = 0.5 * (x0 + x1);
        let my = 0.5 * (y0 + y1);
        if d & 1 == 1 { x0 = mx } else { x1 = mx }
        if d & 2 == 2 { y0 = my } else { y1 = my }
    }
    unproject(0.5 * (x0 + x1), 0.5 * (y0 + y1))
}

pub fn format_lat_lon(lat: f64, lon: f64) -> String {
    format!("{lat:.7}, {lon:.7}")
}

fn median(mut v: Vec<usize>) -> usize {
    v.sort_unstable();
    v[(v.len() - 1) / 2]
}

/// Smallest depth at which the median occupancy of non-empty tiles drops
/// below the configured leaf occupancy.
pub fn select_depth(points: &[(f64, f64)], max_depth: u32, leaf_occupancy: usize) -> u32 {
    let keys: Vec<Vec<u32>> = points
        .iter()
        .map(|&(lat, lon)| quadkey(lat, lon, max_depth.max(1)))
        .collect();
    for d in 1..=max_depth.max(1) {
        let mut counts: HashMap<&[u32], usize> = HashMap::new();
        for k in &keys {
            *counts.entry(&k[..d as usize]).or_default() += 1;
        }
        if counts.is_empty() || median(counts.into_values().collect()) < leaf_occupancy {
            return d;
        }
    }
    max_depth.max(1)
}

pub(crate) fn fit(name: &str, cells: &[Cell], opts: &AnalysisOptions) -> Result<EncodingSpec> {
    let mut points = Vec::new();
    let mut has_missing = false;
    for cell in cells {
        match cell {
            None => has_missing = true,
            Some(text) => points.push(parse_lat_lon(text).ok_or_else(|| Error::MixedTypeColumn {
                column: name.to_string(),
                value: text.clone(),
                expected: "a \"lat, lon\" pair",
            })?),
        }
    }
    let depth = select_depth(&points, opts.max_quadtile_depth, opts.quadtile_leaf_occupancy);
    let mut spec = EncodingSpec::new(name, ColumnKind::Geospatial, Strategy::Quadtile);
    spec.has_missing = has_missing;
    spec.quadtile_depth = Some(depth);
    spec.sub_columns = (0..depth)
        .map(|k| SubColumn {
            name: format!("{name}__q{k}"),
            cardinality: if k == 0 && has_missing { 5 } else { 4 },
        })
        .collect();
    Ok(spec)
}

pub(crate) fn encode(spec: &EncodingSpec, point: Option<(f64, f64)>, out: &mut [u32]) {
    match point {
        None => {
            out.iter_mut().for_each(|o| *o = 0);
            out[0] = MISSING;
        }
        Some((lat, lon)) => out.copy_from_slice(&quadkey(lat, lon, spec.width() as u32)),
    }
}

pub(crate) fn decode(codes: &[u32]) -> Cell {
    if codes[0] == MISSING {
        return None;
    }
    let (lat, lon) = tile_centre(codes);
    Some(format_lat_lon(lat, lon))
}
