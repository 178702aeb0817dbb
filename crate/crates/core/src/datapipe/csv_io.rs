use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::table::{Column, ColumnData, ColumnRole, SeriesTable};
use crate::error::{Error, Result};

pub const TIMESTAMP: &str = "timestamp";

/// Signal columns of the emission CSV, in file order, after `timestamp`.
pub const EMISSION_COLUMNS: [(&str, ColumnRole); 10] = [
    ("engine_rpm", ColumnRole::FeatureNumeric),
    ("fuel_lph", ColumnRole::FeatureNumeric),
    ("coolant_c", ColumnRole::FeatureNumeric),
    ("speed_kmh", ColumnRole::FeatureNumeric),
    ("fuel_econ_kmpl", ColumnRole::FeatureNumeric),
    ("no_ppm", ColumnRole::Target),
    ("no2_ppm", ColumnRole::Target),
    ("nox_ppm", ColumnRole::Target),
    ("co2_pct", ColumnRole::Target),
    ("co_ppm", ColumnRole::Target),
];

pub const TARGET_COLUMNS: [&str; 5] = ["no_ppm", "no2_ppm", "nox_ppm", "co2_pct", "co_ppm"];

pub const WEATHER_HEADER: [&str; 4] = ["timestamp_hour", "temp_c", "precip_mm", "conditions"];

/// Rows further apart than this start a new session when none is given.
pub const DEFAULT_SESSION_GAP_S: i64 = 1800;

/// Hourly weather observations, sorted by hour.
#[derive(Debug, Clone, PartialEq)]
pub struct WeatherTable {
    pub hours: Vec<i64>,
    pub temp_c: Vec<Option<f64>>,
    pub precip_mm: Vec<Option<f64>>,
    pub conditions: Vec<Option<String>>,
}

impl WeatherTable {
    pub fn len(&self) -> usize {
        self.hours.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hours.is_empty()
    }
}

fn schema_check(found: &[String], expected: &[&str]) -> Result<()> {
    let expected_set: BTreeSet<&str> = expected.iter().copied().collect();
    let found_set: BTreeSet<&str> = found.iter().map(|s| s.as_str()).collect();
    let unknown: Vec<&str> = found_set.difference(&expected_set).copied().collect();
    let missing: Vec<&str> = expected_set.difference(&found_set).copied().collect();
    let duplicated = found_set.len() != found.len();
    if unknown.is_empty() && missing.is_empty() && !duplicated {
        return Ok(());
    }
    let mut parts = Vec::new();
    if !unknown.is_empty() {
        parts.push(format!("unknown columns {unknown:?}"));
    }
    if !missing.is_empty() {
        parts.push(format!("missing columns {missing:?}"));
    }
    if duplicated {
        parts.push("duplicated column names".to_string());
    }
    Err(Error::Schema(parts.join("; ")))
}

fn parse_cell(raw: &str, line: u64, column: &str) -> Result<Option<f64>> {
    if raw.is_empty() {
        return Ok(None);
    }
    raw.parse::<f64>()
        .ok()
        .filter(|x| x.is_finite())
        .map(Some)
        .ok_or_else(|| {
            Error::Data(format!(
                "line {line}, column {column}: cannot parse {raw:?} as a number"
            ))
        })
}

fn parse_timestamp(raw: &str, line: u64, column: &str) -> Result<i64> {
    raw.parse::<i64>().map_err(|_| {
        Error::Data(format!(
            "line {line}, column {column}: cannot parse {raw:?} as integer seconds"
        ))
    })
}

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    Ok(csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(File::open(path).map_err(|e| Error::io_at(path, e))?))
}

/// Reads the emission CSV. Rows are sorted by time and split into sessions
/// wherever consecutive timestamps are more than `session_gap_s` apart.
/// Absent seconds stay absent; see [`super::resample_to_grid`].
pub fn load_emission_csv(path: &Path, session_gap_s: i64) -> Result<SeriesTable> {
    let mut rdr = reader(path)?;
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.to_string()).collect();
    let mut expected = vec![TIMESTAMP];
    expected.extend(EMISSION_COLUMNS.iter().map(|(n, _)| *n));
    schema_check(&headers, &expected)?;
    let position = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let ts_col = position(TIMESTAMP);
    let signal_cols: Vec<usize> = EMISSION_COLUMNS.iter().map(|(n, _)| position(n)).collect();

    // (timestamp, source line, values)
    let mut rows: Vec<(i64, u64, Vec<Option<f64>>)> = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let ts = parse_timestamp(&record[ts_col], line, TIMESTAMP)?;
        let values = signal_cols
            .iter()
            .zip(EMISSION_COLUMNS.iter())
            .map(|(&c, (name, _))| parse_cell(&record[c], line, name))
            .collect::<Result<Vec<_>>>()?;
        rows.push((ts, line, values));
    }
    rows.sort_by_key(|r| r.0);

    let mut sessions = Vec::with_capacity(rows.len());
    let mut session = 0u32;
    for (k, w) in rows.windows(2).enumerate() {
        if k == 0 {
            sessions.push(0);
        }
        let gap = w[1].0 - w[0].0;
        if gap == 0 {
            return Err(Error::Data(format!(
                "duplicate timestamp {} on lines {} and {}",
                w[0].0, w[0].1, w[1].1
            )));
        }
        if gap > session_gap_s {
            session += 1;
        }
        sessions.push(session);
    }
    if rows.len() == 1 {
        sessions.push(0);
    }

    let mut columns: Vec<Column> = EMISSION_COLUMNS
        .iter()
        .map(|(name, role)| Column::numeric(name, *role, Vec::with_capacity(rows.len())))
        .collect();
    let mut timestamps = Vec::with_capacity(rows.len());
    for (ts, _, values) in rows {
        timestamps.push(ts);
        for (col, v) in columns.iter_mut().zip(values) {
            col.as_numeric_mut().unwrap().push(v);
        }
    }
    let table = SeriesTable {
        timestamps,
        sessions,
        columns,
    };
    table.validate()?;
    Ok(table)
}

pub fn load_weather_csv(path: &Path) -> Result<WeatherTable> {
    let mut rdr = reader(path)?;
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.to_string()).collect();
    schema_check(&headers, &WEATHER_HEADER)?;
    let idx: Vec<usize> = WEATHER_HEADER
        .iter()
        .map(|n| headers.iter().position(|h| h == n).unwrap())
        .collect();
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let hour = parse_timestamp(&record[idx[0]], line, WEATHER_HEADER[0])?;
        let temp = parse_cell(&record[idx[1]], line, WEATHER_HEADER[1])?;
        let precip = parse_cell(&record[idx[2]], line, WEATHER_HEADER[2])?;
        let cond = &record[idx[3]];
        let cond = (!cond.is_empty()).then(|| cond.to_string());
        rows.push((hour, line, temp, precip, cond));
    }
    rows.sort_by_key(|r| r.0);
    if let Some(w) = rows.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::Data(format!(
            "duplicate weather hour {} on lines {} and {}",
            w[0].0, w[0].1, w[1].1
        )));
    }
    let mut weather = WeatherTable {
        hours: Vec::new(),
        temp_c: Vec::new(),
        precip_mm: Vec::new(),
        conditions: Vec::new(),
    };
    for (hour, _, temp, precip, cond) in rows {
        weather.hours.push(hour);
        weather.temp_c.push(temp);
        weather.precip_mm.push(precip);
        weather.conditions.push(cond);
    }
    Ok(weather)
}

fn fmt_cell(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// Writes the emission columns of `table` (other columns are ignored).
pub fn write_emission_csv(table: &SeriesTable, path: &Path) -> Result<()> {
    let cols = EMISSION_COLUMNS
        .iter()
        .map(|(name, _)| {
            table
                .numeric(name)
                .ok_or_else(|| Error::Schema(format!("table lacks numeric column {name}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = BufWriter::new(File::create(path)?);
    write!(out, "{TIMESTAMP}")?;
    for (name, _) in EMISSION_COLUMNS {
        write!(out, ",{name}")?;
    }
    writeln!(out)?;
    for (r, ts) in table.timestamps.iter().enumerate() {
        write!(out, "{ts}")?;
        for col in &cols {
            write!(out, ",{}", fmt_cell(col[r]))?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_weather_csv(weather: &WeatherTable, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(WEATHER_HEADER)?;
    for i in 0..weather.len() {
        w.write_record([
            weather.hours[i].to_string(),
            fmt_cell(weather.temp_c[i]),
            fmt_cell(weather.precip_mm[i]),
            weather.conditions[i].clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Positions of the numeric columns, which imputation works on.
pub(crate) fn numeric_column_indices(table: &SeriesTable) -> Vec<usize> {
    table
        .columns
        .iter()
        .enumerate()
        .filter(|(_, c)| matches!(c.data, ColumnData::Numeric(_)))
        .map(|(i, _)| i)
        .collect()
}
