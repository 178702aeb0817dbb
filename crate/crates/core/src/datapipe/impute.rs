use rayon::prelude::*;

use super::csv_io::numeric_column_indices;
use super::table::SeriesTable;
use crate::error::{Error, Result};

/// Median of a non-empty slice; sorts it in place.
fn median(values: &mut [f64]) -> f64 {
    values.sort_unstable_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Fills one session of one column. `None` only if every cell is missing.
fn rolling_median_fill(cells: &[Option<f64>], w: usize) -> Option<Vec<f64>> {
    let n = cells.len();
    let half = w / 2;
    let mut buf = Vec::with_capacity(w);
    let mut filled: Vec<Option<f64>> = Vec::with_capacity(n);
    for i in 0..n {
        if cells[i].is_some() {
            filled.push(cells[i]);
            continue;
        }
        buf.clear();
        buf.extend(cells[i.saturating_sub(half)..(i + half + 1).min(n)].iter().flatten());
        filled.push((!buf.is_empty()).then(|| median(&mut buf)));
    }
    // Backward fill, then forward fill whatever is left at the end.
    let mut next = None;
    for v in filled.iter_mut().rev() {
        match v {
            Some(x) => next = Some(*x),
            None => *v = next,
        }
    }
    let mut prev = None;
    for v in filled.iter_mut() {
        match v {
            Some(x) => prev = Some(*x),
            None => *v = prev,
        }
    }
    filled.into_iter().collect()
}

/// Rolling-window median imputation of every numeric column, session by
/// session. Missing cells take the median of the observed values in the
/// centred window of width `w`; cells still empty are back-filled, then
/// forward-filled.
pub fn impute_rolling_median(table: &SeriesTable, w: usize) -> Result<SeriesTable> {
    if w < 3 || w % 2 == 0 {
        return Err(Error::Config(format!(
            "rolling window must be odd and at least 3, got {w}"
        )));
    }
    let spans = table.session_spans();
    let cols = numeric_column_indices(table);
    let filled: Vec<Vec<Option<f64>>> = cols
        .par_iter()
        .map(|&c| {
            let column = &table.columns[c];
            let cells = column.as_numeric().expect("numeric column");
            let mut out = Vec::with_capacity(cells.len());
            for span in &spans {
                let part = &cells[span.start..span.start + span.len];
                let values = rolling_median_fill(part, w).ok_or_else(|| {
                    Error::Imputation(format!(
                        "column {} is entirely missing in session {}",
                        column.name, span.id
                    ))
                })?;
                out.extend(values.into_iter().map(Some));
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut result = table.clone();
    for (c, values) in cols.into_iter().zip(filled) {
        *result.columns[c].as_numeric_mut().unwrap() = values;
    }
    Ok(result)
}

/// Distance between two rows over their commonly observed coordinates,
/// rescaled by `sqrt(total / common)`. `None` if nothing is shared.
fn partial_distance(a: &[Option<f64>], b: &[Option<f64>]) -> Option<f64> {
    let mut sum = 0.0;
    let mut common = 0usize;
    for (x, y) in a.iter().zip(b) {
        if let (Some(x), Some(y)) = (x, y) {
            sum += (x - y) * (x - y);
            common += 1;
        }
    }
    (common > 0).then(|| (sum * a.len() as f64 / common as f64).sqrt())
}

/// K-nearest-neighbour imputation with uniform weights over all numeric
/// columns of the whole table. Each missing cell becomes the mean of that
/// column over the `k` closest rows observing it; ties go to the lower row
/// index. A row with no comparable donor gets the column mean.
pub fn impute_knn(table: &SeriesTable, k: usize) -> Result<SeriesTable> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let cols = numeric_column_indices(table);
    let n = table.len();
    let rows: Vec<Vec<Option<f64>>> = (0..n)
        .map(|r| {
            cols.iter()
                .map(|&c| table.columns[c].as_numeric().unwrap()[r])
                .collect()
        })
        .collect();
    let mut means = Vec::with_capacity(cols.len());
    for (j, &c) in cols.iter().enumerate() {
        let observed: Vec<f64> = rows.iter().filter_map(|row| row[j]).collect();
        if observed.is_empty() {
            return Err(Error::Imputation(format!(
                "column {} has no observed values",
                table.columns[c].name
            )));
        }
        means.push(observed.iter().sum::<f64>() / observed.len() as f64);
    }

    let filled: Vec<Vec<f64>> = rows
        .par_iter()
        .map(|row| {
            if row.iter().all(Option::is_some) {
                return row.iter().map(|v| v.unwrap()).collect();
            }
            let dist: Vec<Option<f64>> = rows.iter().map(|o| partial_distance(row, o)).collect();
            let mut donors: Vec<(f64, usize)> = Vec::with_capacity(n);
            row.iter()
                .enumerate()
                .map(|(j, v)| {
                    if let Some(v) = v {
                        return *v;
                    }
                    donors.clear();
                    donors.extend(
                        (0..n).filter_map(|r| Some((dist[r]?, r)).filter(|_| rows[r][j].is_some())),
                    );
                    if donors.is_empty() {
                        return means[j];
                    }
                    let order = |a: &(f64, usize), b: &(f64, usize)| {
                        a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
                    };
                    let take = k.min(donors.len());
                    if take < donors.len() {
                        donors.select_nth_unstable_by(take - 1, order);
                    }
                    let nearest = &mut donors[..take];
                    nearest.sort_unstable_by(order);
                    nearest.iter().map(|&(_, r)| rows[r][j].unwrap()).sum::<f64>() / take as f64
                })
                .collect()
        })
        .collect();

    let mut result = table.clone();
    for (j, &c) in cols.iter().enumerate() {
        *result.columns[c].as_numeric_mut().unwrap() = filled.iter().map(|r| Some(r[j])).collect();
    }
    Ok(result)
}
