//! Smart-meter reading ingestion: parsing, cleaning, daily profile
//! aggregation and column-wise min-max scaling.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use chrono::{NaiveDate, NaiveDateTime, Timelike};
use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Half-hour slots in one day.
pub const SLOTS_PER_DAY: usize = 48;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("schema error: column `{0}` not found in header")]
    MissingColumn(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeterReading {
    pub household_id: String,
    pub timestamp: NaiveDateTime,
    pub energy_kwh: f64,
}

/// A household's average day: mean kWh per half-hour slot.
///
/// Slot `i` covers local time `[i * 30 min, (i + 1) * 30 min)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadProfile {
    pub household_id: String,
    pub slots: Vec<f64>,
    pub day_count: usize,
}

/// Column mapping for delimited reading files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Schema {
    pub id_column: String,
    pub timestamp_column: String,
    pub value_column: String,
    pub delimiter: char,
    /// Keep only rows whose `column` equals `value` (e.g. a tariff column).
    pub row_filter: Option<RowFilter>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowFilter {
    pub column: String,
    pub value: String,
}

impl Default for Schema {
    fn default() -> Self {
        Schema {
            id_column: "household_id".into(),
            timestamp_column: "timestamp".into(),
            value_column: "energy_kwh".into(),
            delimiter: ',',
            row_filter: None,
        }
    }
}

impl Schema {
    /// Layout of the London low-carbon smart-meter release, restricted to
    /// standard-tariff households.
    pub fn london_standard_tariff() -> Self {
        Schema {
            id_column: "LCLid".into(),
            timestamp_column: "DateTime".into(),
            value_column: "KWH/hh (per half hour)".into(),
            delimiter: ',',
            row_filter: Some(RowFilter {
                column: "stdorToU".into(),
                value: "Std".into(),
            }),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ParseOutcome {
    pub readings: Vec<MeterReading>,
    pub rejected: usize,
    /// Rows skipped by the schema's row filter (not counted as rejects).
    pub filtered: usize,
}

/// Parses ISO-8601 (`2013-01-01T00:30:00`) and `YYYY-MM-DD HH:MM:SS` stamps,
/// with optional fractional seconds.
pub fn parse_timestamp(raw: &str) -> Option<NaiveDateTime> {
    let raw = raw.trim();
    const FORMATS: [&str; 4] = [
        "%Y-%m-%d %H:%M:%S%.f",
        "%Y-%m-%dT%H:%M:%S%.f",
        "%Y-%m-%d %H:%M",
        "%Y-%m-%dT%H:%M",
    ];
    FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(raw, f).ok())
}

pub fn parse_readings<R: Read>(source: R, schema: &Schema) -> Result<ParseOutcome, IngestError> {
    if !schema.delimiter.is_ascii() {
        return Err(IngestError::Schema(format!(
            "delimiter {:?} is not a single-byte character",
            schema.delimiter
        )));
    }
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter as u8)
        .has_headers(true)
        .flexible(true)
        .from_reader(source);
    let headers = reader.headers()?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].trim().is_empty()) {
        return Ok(ParseOutcome::default());
    }
    let find = |name: &str| -> Result<usize, IngestError> {
        headers
            .iter()
            .position(|h| h.trim() == name.trim())
            .ok_or_else(|| IngestError::MissingColumn(name.to_string()))
    };
    let id_idx = find(&schema.id_column)?;
    let ts_idx = find(&schema.timestamp_column)?;
    let val_idx = find(&schema.value_column)?;
    let filter = match &schema.row_filter {
        Some(f) => Some((find(&f.column)?, f.value.trim().to_string())),
        None => None,
    };

    let mut out = ParseOutcome::default();
    for record in reader.records() {
        let record = match record {
            Ok(r) => r,
            Err(_) => {
                out.rejected += 1;
                continue;
            }
        };
        if let Some((col, value)) = &filter {
            if record.get(*col).map(str::trim) != Some(value.as_str()) {
                out.filtered += 1;
                continue;
            }
        }
        let id = record.get(id_idx).map(str::trim).unwrap_or("");
        let ts = record.get(ts_idx).and_then(parse_timestamp);
        let kwh = record
            .get(val_idx)
            .and_then(|v| v.trim().parse::<f64>().ok());
        match (id.is_empty(), ts, kwh) {
            (false, Some(timestamp), Some(energy_kwh)) => out.readings.push(MeterReading {
                household_id: id.to_string(),
                timestamp,
                energy_kwh,
            }),
            _ => out.rejected += 1,
        }
    }
    Ok(out)
}

fn is_valid(r: &MeterReading) -> bool {
    let t = r.timestamp;
    r.energy_kwh.is_finite()
        && r.energy_kwh >= 0.0
        && (t.minute() == 0 || t.minute() == 30)
        && t.second() == 0
        && t.nanosecond() == 0
}

/// Drops non-finite, negative and off-grid readings, and collapses duplicate
/// `(household, timestamp)` pairs to their mean. Output is sorted by
/// household then timestamp.
pub fn clean(readings: &[MeterReading]) -> Vec<MeterReading> {
    let mut acc: BTreeMap<(&str, NaiveDateTime), (f64, usize)> = BTreeMap::new();
    for r in readings.iter().filter(|r| is_valid(r)) {
        let e = acc
            .entry((r.household_id.as_str(), r.timestamp))
            .or_insert((0.0, 0));
        e.0 += r.energy_kwh;
        e.1 += 1;
    }
    acc.into_iter()
        .map(|((id, timestamp), (sum, count))| MeterReading {
            household_id: id.to_string(),
            timestamp,
            energy_kwh: sum / count as f64,
        })
        .collect()
}

/// Inclusive calendar-date restriction applied before aggregation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DateFilter {
    pub from: Option<NaiveDate>,
    pub to: Option<NaiveDate>,
}

impl DateFilter {
    pub fn contains(&self, date: NaiveDate) -> bool {
        self.from.is_none_or(|f| date >= f) && self.to.is_none_or(|t| date <= t)
    }

    pub fn apply(&self, readings: &[MeterReading]) -> Vec<MeterReading> {
        readings
            .iter()
            .filter(|r| self.contains(r.timestamp.date()))
            .cloned()
            .collect()
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ProfileBuild {
    pub profiles: Vec<LoadProfile>,
    /// Households lacking at least one slot entirely.
    pub dropped: Vec<String>,
}

pub fn slot_of(t: &NaiveDateTime) -> usize {
    (t.hour() * 2 + t.minute() / 30) as usize
}

/// Averages each household's cleaned readings into a 48-slot day.
pub fn build_profiles(readings: &[MeterReading]) -> ProfileBuild {
    struct Acc {
        sums: [f64; SLOTS_PER_DAY],
        counts: [usize; SLOTS_PER_DAY],
        days: BTreeSet<NaiveDate>,
    }
    let mut per_house: BTreeMap<&str, Acc> = BTreeMap::new();
    for r in readings {
        let acc = per_house
            .entry(r.household_id.as_str())
            .or_insert_with(|| Acc {
                sums: [0.0; SLOTS_PER_DAY],
                counts: [0; SLOTS_PER_DAY],
                days: BTreeSet::new(),
            });
        let s = slot_of(&r.timestamp);
        acc.sums[s] += r.energy_kwh;
        acc.counts[s] += 1;
        acc.days.insert(r.timestamp.date());
    }
    let mut build = ProfileBuild::default();
    for (id, acc) in per_house {
        if acc.counts.contains(&0) {
            build.dropped.push(id.to_string());
            continue;
        }
        let slots = acc
            .sums
            .iter()
            .zip(acc.counts.iter())
            .map(|(s, &c)| s / c as f64)
            .collect();
        build.profiles.push(LoadProfile {
            household_id: id.to_string(),
            slots,
            day_count: acc.days.len(),
        });
    }
    build
}

/// Per-column min/max learned from a matrix; reusable on new rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMaxBounds {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMaxBounds {
    pub fn fit(matrix: ArrayView2<f64>) -> Self {
        let cols = matrix.ncols();
        let mut min = vec![f64::INFINITY; cols];
        let mut max = vec![f64::NEG_INFINITY; cols];
        for row in matrix.rows() {
            for (j, &v) in row.iter().enumerate() {
                min[j] = min[j].min(v);
                max[j] = max[j].max(v);
            }
        }
        if matrix.nrows() == 0 {
            min.iter_mut().for_each(|v| *v = 0.0);
            max.iter_mut().for_each(|v| *v = 0.0);
        }
        MinMaxBounds { min, max }
    }

    pub fn len(&self) -> usize {
        self.min.len()
    }

    pub fn is_empty(&self) -> bool {
        self.min.is_empty()
    }

    /// Maps `x` to `(x - min) / (max - min)`; constant columns map to 0.
    /// Rows outside the fitted range are not clamped.
    pub fn apply(&self, matrix: ArrayView2<f64>) -> Array2<f64> {
        let mut out = matrix.to_owned();
        for mut row in out.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                let range = self.max[j] - self.min[j];
                *v = if range > 0.0 {
                    (*v - self.min[j]) / range
                } else {
                    0.0
                };
            }
        }
        out
    }
}

/// Column-wise min-max scaling into `[0, 1]`.
pub fn normalize_columns(matrix: ArrayView2<f64>) -> (Array2<f64>, MinMaxBounds) {
    let bounds = MinMaxBounds::fit(matrix);
    (bounds.apply(matrix), bounds)
}

pub fn slot_column_names() -> Vec<String> {
    (0..SLOTS_PER_DAY).map(|i| format!("slot_{i:02}")).collect()
}

/// Writes profiles as `household_id,slot_00,...,slot_47`.
pub fn write_profiles_csv<W: Write>(w: W, profiles: &[LoadProfile]) -> Result<(), IngestError> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = vec!["household_id".to_string()];
    header.extend(slot_column_names());
    wtr.write_record(&header)?;
    for p in profiles {
        let mut rec = vec![p.household_id.clone()];
        rec.extend(p.slots.iter().map(|v| v.to_string()));
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Reads the 49-column profile layout. The header must match exactly; the
/// error names the first offending column.
pub fn read_profiles_csv<R: Read>(r: R) -> Result<Vec<LoadProfile>, IngestError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let headers = rdr.headers()?.clone();
    let mut expected = vec!["household_id".to_string()];
    expected.extend(slot_column_names());
    for (i, name) in expected.iter().enumerate() {
        match headers.get(i) {
            Some(h) if h.trim() == name => {}
            Some(h) => {
                return Err(IngestError::Schema(format!(
                    "column {i} is `{}`, expected `{name}`",
                    h.trim()
                )))
            }
            None => return Err(IngestError::MissingColumn(name.clone())),
        }
    }
    if let Some(extra) = headers.get(expected.len()) {
        return Err(IngestError::Schema(format!("unexpected column `{extra}`")));
    }
    let mut profiles = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let id = rec.get(0).unwrap_or("").trim().to_string();
        let slots = (1..=SLOTS_PER_DAY)
            .map(|i| {
                rec.get(i)
                    .and_then(|v| v.trim().parse::<f64>().ok())
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| {
                        IngestError::Schema(format!(
                            "row {}: column `{}` is not a finite number",
                            line + 1,
                            expected[i]
                        ))
                    })
            })
            .collect::<Result<Vec<_>, _>>()?;
        profiles.push(LoadProfile {
            household_id: id,
            slots,
            day_count: 1,
        });
    }
    Ok(profiles)
}
