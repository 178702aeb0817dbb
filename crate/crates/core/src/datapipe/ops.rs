use super::csv_io::WeatherTable;
use super::table::{Column, ColumnData, ColumnRole, SeriesTable};
use crate::error::{Error, Result};

const HOUR: i64 = 3600;

/// Attaches to every row the weather of the latest hour at or before its
/// timestamp. Adds numeric `temp_c`, `precip_mm` and categorical `conditions`.
pub fn join_weather(table: &SeriesTable, weather: &WeatherTable) -> Result<SeriesTable> {
    if weather.is_empty() {
        return Err(Error::Coverage("weather table is empty".into()));
    }
    let mut temp = Vec::with_capacity(table.len());
    let mut precip = Vec::with_capacity(table.len());
    let mut cond = Vec::with_capacity(table.len());
    for &ts in &table.timestamps {
        let idx = weather.hours.partition_point(|&h| h <= ts);
        if idx == 0 {
            return Err(Error::Coverage(format!(
                "timestamp {ts} precedes the first weather hour {}",
                weather.hours[0]
            )));
        }
        let i = idx - 1;
        if ts - weather.hours[i] >= HOUR {
            return Err(Error::Coverage(format!(
                "no weather row for the hour containing timestamp {ts} (latest is {})",
                weather.hours[i]
            )));
        }
        temp.push(weather.temp_c[i]);
        precip.push(weather.precip_mm[i]);
        cond.push(weather.conditions[i].clone());
    }
    let mut out = table.clone();
    for name in ["temp_c", "precip_mm", "conditions"] {
        if out.column(name).is_some() {
            return Err(Error::Schema(format!("table already has a {name} column")));
        }
    }
    out.columns
        .push(Column::numeric("temp_c", ColumnRole::FeatureNumeric, temp));
    out.columns
        .push(Column::numeric("precip_mm", ColumnRole::FeatureNumeric, precip));
    out.columns.push(Column::categorical("conditions", cond));
    Ok(out)
}

/// Expands every session to a regular grid from its first to its last
/// timestamp. Grid points with no source row become all-missing rows.
pub fn resample_to_grid(table: &SeriesTable, step: i64) -> Result<SeriesTable> {
    if step <= 0 {
        return Err(Error::Config(format!("grid step must be positive, got {step}")));
    }
    table.validate()?;
    // Source row for every grid point, or None.
    let mut timestamps = Vec::new();
    let mut sessions = Vec::new();
    let mut source: Vec<Option<usize>> = Vec::new();
    for span in table.session_spans() {
        let rows = span.start..span.start + span.len;
        let t0 = table.timestamps[span.start];
        let t1 = table.timestamps[span.start + span.len - 1];
        let mut next = rows.clone().peekable();
        let mut t = t0;
        while t <= t1 {
            // Off-grid rows are dropped; the grid is anchored at the session start.
            while next.peek().is_some_and(|&r| table.timestamps[r] < t) {
                next.next();
            }
            let hit = next.peek().copied().filter(|&r| table.timestamps[r] == t);
            timestamps.push(t);
            sessions.push(span.id);
            source.push(hit);
            t += step;
        }
    }
    let columns = table
        .columns
        .iter()
        .map(|c| Column {
            name: c.name.clone(),
            role: c.role,
            data: match &c.data {
                ColumnData::Numeric(v) => {
                    ColumnData::Numeric(source.iter().map(|s| s.and_then(|r| v[r])).collect())
                }
                ColumnData::Categorical(v) => ColumnData::Categorical(
                    source.iter().map(|s| s.and_then(|r| v[r].clone())).collect(),
                ),
            },
        })
        .collect();
    Ok(SeriesTable {
        timestamps,
        sessions,
        columns,
    })
}

/// Splits by whole sessions in time order: sessions go to the training part
/// until it holds at least `train_fraction` of the rows.
pub fn split_sessions(table: &SeriesTable, train_fraction: f64) -> Result<(SeriesTable, SeriesTable)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let mut spans = table.session_spans();
    if spans.len() < 2 {
        return Err(Error::Config(format!(
            "need at least 2 sessions to split, found {}",
            spans.len()
        )));
    }
    spans.sort_by_key(|s| table.timestamps[s.start]);
    let total = table.len() as f64;
    let goal = train_fraction * total;
    let mut taken = 0usize;
    let mut n_train = 0;
    for span in &spans {
        if n_train > 0 && taken as f64 >= goal * (1.0 - 1e-12) {
            break;
        }
        taken += span.len;
        n_train += 1;
    }
    n_train = n_train.min(spans.len() - 1);
    let train_ids: Vec<u32> = spans[..n_train].iter().map(|s| s.id).collect();
    let val_ids: Vec<u32> = spans[n_train..].iter().map(|s| s.id).collect();
    Ok((table.select_sessions(&train_ids), table.select_sessions(&val_ids)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(ts: Vec<i64>, sessions: Vec<u32>) -> SeriesTable {
        let n = ts.len();
        SeriesTable {
            timestamps: ts,
            sessions,
            columns: vec![Column::numeric(
                "x",
                ColumnRole::Target,
                (0..n).map(|i| Some(i as f64)).collect(),
            )],
        }
    }

    fn weather() -> WeatherTable {
        WeatherTable {
            hours: vec![36000, 39600],
            temp_c: vec![Some(10.0), Some(11.0)],
            precip_mm: vec![Some(0.0), Some(2.0)],
            conditions: vec![Some("clear".into()), Some("rain".into())],
        }
    }

    #[test]
    fn floor_join() {
        let t = table(vec![37800, 39600], vec![0, 0]);
        let joined = join_weather(&t, &weather()).unwrap();
        assert_eq!(joined.numeric("temp_c").unwrap(), &[Some(10.0), Some(11.0)]);
        match &joined.column("conditions").unwrap().data {
            ColumnData::Categorical(v) => {
                assert_eq!(v, &[Some("clear".to_string()), Some("rain".to_string())])
            }
            _ => panic!(),
        }
    }

    #[test]
    fn join_coverage_errors() {
        let early = table(vec![35999], vec![0]);
        assert!(matches!(join_weather(&early, &weather()), Err(Error::Coverage(_))));
        let late = table(vec![39600 + 3600], vec![0]);
        assert!(matches!(join_weather(&late, &weather()), Err(Error::Coverage(_))));
    }

    #[test]
    fn grid_fills_gaps() {
        let t = table(vec![0, 1, 2], vec![0, 0, 0]);
        assert_eq!(resample_to_grid(&t, 1).unwrap(), t);
        let t = table(vec![0, 2], vec![0, 0]);
        let g = resample_to_grid(&t, 1).unwrap();
        assert_eq!(g.timestamps, vec![0, 1, 2]);
        assert_eq!(g.numeric("x").unwrap(), &[Some(0.0), None, Some(1.0)]);
    }

    #[test]
    fn grid_row_count_is_span_plus_one() {
        let ts: Vec<i64> = (0..=3600).filter(|t| t % 5 != 3 || *t == 3600).collect();
        let n = ts.len();
        let g = resample_to_grid(&table(ts, vec![7; n]), 1).unwrap();
        assert_eq!(g.len(), 3601);
        assert!(g.sessions.iter().all(|&s| s == 7));
    }

    #[test]
    fn grid_keeps_sessions_apart() {
        let t = table(vec![0, 2, 100, 103], vec![0, 0, 1, 1]);
        let g = resample_to_grid(&t, 1).unwrap();
        assert_eq!(g.timestamps, vec![0, 1, 2, 100, 101, 102, 103]);
        assert_eq!(g.sessions, vec![0, 0, 0, 1, 1, 1, 1]);
    }

    fn sessions(count: u32, len: usize) -> SeriesTable {
        let mut ts = Vec::new();
        let mut ids = Vec::new();
        for s in 0..count {
            for t in 0..len {
                ts.push(s as i64 * 100_000 + t as i64);
                ids.push(s);
            }
        }
        table(ts, ids)
    }

    #[test]
    fn four_one_split() {
        let (train, val) = split_sessions(&sessions(5, 10), 0.8).unwrap();
        assert_eq!(train.session_spans().len(), 4);
        assert_eq!(val.session_spans().iter().map(|s| s.id).collect::<Vec<_>>(), vec![4]);
        let (train, val) = split_sessions(&sessions(2, 10), 0.5).unwrap();
        assert_eq!((train.len(), val.len()), (10, 10));
    }

    #[test]
    fn split_needs_two_sessions() {
        assert!(matches!(split_sessions(&sessions(1, 10), 0.8), Err(Error::Config(_))));
    }

    #[test]
    fn split_keeps_a_validation_session() {
        let (train, val) = split_sessions(&sessions(3, 10), 0.99).unwrap();
        assert_eq!((train.len(), val.len()), (20, 10));
    }
}
