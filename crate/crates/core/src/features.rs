//! The 61-column feature layout: 48 raw slots, six period peaks and seven
//! distribution statistics.

use std::io::{Read, Write};
use std::ops::Range;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::ingest::{slot_column_names, LoadProfile, SLOTS_PER_DAY};

pub const PEAK_COUNT: usize = 6;
pub const STAT_COUNT: usize = 7;
pub const FEATURE_COUNT: usize = SLOTS_PER_DAY + PEAK_COUNT + STAT_COUNT;

/// Day periods as half-open slot ranges, in feature order.
pub const PERIODS: [(&str, Range<usize>); PEAK_COUNT] = [
    ("early_morning", 10..20), // 05:00-10:00
    ("morning", 20..28),       // 10:00-14:00
    ("noon", 28..34),          // 14:00-17:00
    ("evening", 34..42),       // 17:00-21:00
    ("night", 42..48),         // 21:00-24:00
    ("late_night", 0..10),     // 00:00-05:00
];

pub const STAT_NAMES: [&str; STAT_COUNT] = ["mean", "std", "min", "max", "p25", "p50", "p75"];

/// Column index of a named peak feature.
pub fn peak_column(period: &str) -> Option<usize> {
    PERIODS
        .iter()
        .position(|(name, _)| *name == period)
        .map(|i| SLOTS_PER_DAY + i)
}

pub fn feature_names() -> Vec<String> {
    let mut names = slot_column_names();
    names.extend(PERIODS.iter().map(|(n, _)| format!("peak_{n}")));
    names.extend(STAT_NAMES.iter().map(|s| s.to_string()));
    names
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub household_id: String,
    pub slots: Vec<f64>,
    pub peaks: [f64; PEAK_COUNT],
    pub stats: [f64; STAT_COUNT],
}

impl FeatureVector {
    pub fn from_profile(profile: &LoadProfile) -> Self {
        FeatureVector {
            household_id: profile.household_id.clone(),
            slots: profile.slots.clone(),
            peaks: peak_features(&profile.slots),
            stats: stat_features(&profile.slots),
        }
    }

    pub fn to_row(&self) -> Vec<f64> {
        let mut row = Vec::with_capacity(FEATURE_COUNT);
        row.extend_from_slice(&self.slots);
        row.extend_from_slice(&self.peaks);
        row.extend_from_slice(&self.stats);
        row
    }
}

/// Maximum slot value within each period.
pub fn peak_features(slots: &[f64]) -> [f64; PEAK_COUNT] {
    debug_assert_eq!(slots.len(), SLOTS_PER_DAY);
    let mut out = [0.0; PEAK_COUNT];
    for (o, (_, range)) in out.iter_mut().zip(PERIODS.iter()) {
        *o = slots[range.clone()]
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
    }
    out
}

/// Percentile by linear interpolation between closest ranks on a sorted
/// slice (`q` in `[0, 1]`).
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Population mean/std, min, max and quartiles of the slot values.
pub fn stat_features(slots: &[f64]) -> [f64; STAT_COUNT] {
    let n = slots.len() as f64;
    let mean = slots.iter().sum::<f64>() / n;
    let var = slots.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let mut sorted = slots.to_vec();
    sorted.sort_by(f64::total_cmp);
    [
        mean,
        var.sqrt(),
        sorted[0],
        sorted[sorted.len() - 1],
        percentile_sorted(&sorted, 0.25),
        percentile_sorted(&sorted, 0.50),
        percentile_sorted(&sorted, 0.75),
    ]
}

/// Households × 61 matrix with rows in ascending household id order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub ids: Vec<String>,
    pub values: Array2<f64>,
}

impl FeatureMatrix {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn select(&self, rows: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            ids: rows.iter().map(|&i| self.ids[i].clone()).collect(),
            values: self.values.select(ndarray::Axis(0), rows),
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        write_matrix_csv(w, &self.ids, &self.values, &feature_names())
    }
}

pub fn assemble_matrix(profiles: &[LoadProfile]) -> FeatureMatrix {
    let mut order: Vec<&LoadProfile> = profiles.iter().collect();
    order.sort_by(|a, b| a.household_id.cmp(&b.household_id));
    let mut values = Array2::zeros((order.len(), FEATURE_COUNT));
    for (mut row, p) in values.rows_mut().into_iter().zip(&order) {
        let fv = FeatureVector::from_profile(p);
        row.iter_mut().zip(fv.to_row()).for_each(|(d, s)| *d = s);
    }
    FeatureMatrix {
        ids: order.iter().map(|p| p.household_id.clone()).collect(),
        values,
    }
}

pub fn write_matrix_csv<W: Write>(
    w: W,
    ids: &[String],
    values: &Array2<f64>,
    columns: &[String],
) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = vec!["household_id".to_string()];
    header.extend(columns.iter().cloned());
    wtr.write_record(&header)?;
    for (id, row) in ids.iter().zip(values.rows()) {
        let mut rec = vec![id.clone()];
        rec.extend(row.iter().map(|v| v.to_string()));
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Reads a `household_id,<column...>` matrix. Returns ids, column names and
/// values; every cell must be a finite number.
pub fn read_matrix_csv<R: Read>(r: R) -> Result<(Vec<String>, Vec<String>, Array2<f64>), csv::Error> {
    let mut rdr = csv::Reader::from_reader(r);
    let columns: Vec<String> = rdr.headers()?.iter().skip(1).map(|h| h.trim().to_string()).collect();
    let mut ids = Vec::new();
    let mut values = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        ids.push(rec.get(0).unwrap_or("").trim().to_string());
        for (c, name) in columns.iter().enumerate() {
            let v = rec
                .get(c + 1)
                .and_then(|v| v.trim().parse::<f64>().ok())
                .filter(|v| v.is_finite())
                .ok_or_else(|| {
                    csv::Error::from(std::io::Error::new(
                        std::io::ErrorKind::InvalidData,
                        format!("row {}: column `{name}` is not a finite number", line + 1),
                    ))
                })?;
            values.push(v);
        }
    }
    let values = Array2::from_shape_vec((ids.len(), columns.len()), values).expect("row width");
    Ok((ids, columns, values))
}
