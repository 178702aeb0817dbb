use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnRole {
    FeatureNumeric,
    FeatureCategorical,
    Target,
}

/// Cell values with an explicit missing marker (`None`).
#[derive(Debug, Clone, PartialEq)]
pub enum ColumnData {
    Numeric(Vec<Option<f64>>),
    Categorical(Vec<Option<String>>),
}

impl ColumnData {
    pub fn len(&self) -> usize {
        match self {
            ColumnData::Numeric(v) => v.len(),
            ColumnData::Categorical(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn missing_count(&self) -> usize {
        match self {
            ColumnData::Numeric(v) => v.iter().filter(|x| x.is_none()).count(),
            ColumnData::Categorical(v) => v.iter().filter(|x| x.is_none()).count(),
        }
    }

    fn select(&self, rows: &[usize]) -> ColumnData {
        match self {
            ColumnData::Numeric(v) => ColumnData::Numeric(rows.iter().map(|&r| v[r]).collect()),
            ColumnData::Categorical(v) => {
                ColumnData::Categorical(rows.iter().map(|&r| v[r].clone()).collect())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub role: ColumnRole,
    pub data: ColumnData,
}

impl Column {
    pub fn numeric(name: &str, role: ColumnRole, values: Vec<Option<f64>>) -> Self {
        Self {
            name: name.to_string(),
            role,
            data: ColumnData::Numeric(values),
        }
    }

    pub fn categorical(name: &str, values: Vec<Option<String>>) -> Self {
        Self {
            name: name.to_string(),
            role: ColumnRole::FeatureCategorical,
            data: ColumnData::Categorical(values),
        }
    }

    pub fn as_numeric(&self) -> Option<&[Option<f64>]> {
        match &self.data {
            ColumnData::Numeric(v) => Some(v),
            ColumnData::Categorical(_) => None,
        }
    }

    pub fn as_numeric_mut(&mut self) -> Option<&mut Vec<Option<f64>>> {
        match &mut self.data {
            ColumnData::Numeric(v) => Some(v),
            ColumnData::Categorical(_) => None,
        }
    }
}

/// Contiguous block of rows belonging to one recording session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionSpan {
    pub id: u32,
    pub start: usize,
    pub len: usize,
}

/// Timestamped multivariate frame. Rows of one session are contiguous and
/// strictly increasing in time.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesTable {
    /// Seconds since the Unix epoch.
    pub timestamps: Vec<i64>,
    pub sessions: Vec<u32>,
    pub columns: Vec<Column>,
}

impl SeriesTable {
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn column_mut(&mut self, name: &str) -> Option<&mut Column> {
        self.columns.iter_mut().find(|c| c.name == name)
    }

    pub fn numeric(&self, name: &str) -> Option<&[Option<f64>]> {
        self.column(name).and_then(|c| c.as_numeric())
    }

    pub fn columns_with_role(&self, role: ColumnRole) -> impl Iterator<Item = &Column> {
        self.columns.iter().filter(move |c| c.role == role)
    }

    pub fn session_spans(&self) -> Vec<SessionSpan> {
        let mut spans: Vec<SessionSpan> = Vec::new();
        for (row, &id) in self.sessions.iter().enumerate() {
            match spans.last_mut() {
                Some(span) if span.id == id => span.len += 1,
                _ => spans.push(SessionSpan { id, start: row, len: 1 }),
            }
        }
        spans
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.sessions.len() != n {
            return Err(Error::Data(format!(
                "{} session labels for {n} rows",
                self.sessions.len()
            )));
        }
        for c in &self.columns {
            if c.data.len() != n {
                return Err(Error::Data(format!(
                    "column {} has {} cells for {n} rows",
                    c.name,
                    c.data.len()
                )));
            }
        }
        let spans = self.session_spans();
        let mut ids: Vec<u32> = spans.iter().map(|s| s.id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != spans.len() {
            return Err(Error::Data("session rows are not contiguous".into()));
        }
        for span in &spans {
            let ts = &self.timestamps[span.start..span.start + span.len];
            if let Some(w) = ts.windows(2).position(|w| w[1] <= w[0]) {
                return Err(Error::Data(format!(
                    "timestamps not strictly increasing in session {} at rows {} and {}",
                    span.id,
                    span.start + w,
                    span.start + w + 1
                )));
            }
        }
        Ok(())
    }

    /// New table with the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> SeriesTable {
        SeriesTable {
            timestamps: rows.iter().map(|&r| self.timestamps[r]).collect(),
            sessions: rows.iter().map(|&r| self.sessions[r]).collect(),
            columns: self
                .columns
                .iter()
                .map(|c| Column {
                    name: c.name.clone(),
                    role: c.role,
                    data: c.data.select(rows),
                })
                .collect(),
        }
    }

    pub fn select_sessions(&self, ids: &[u32]) -> SeriesTable {
        let rows: Vec<usize> = (0..self.len())
            .filter(|&r| ids.contains(&self.sessions[r]))
            .collect();
        self.select_rows(&rows)
    }
}

/// Model-ready matrices produced by a fitted pipeline: no missing values,
/// numeric columns standardized, categoricals one-hot encoded.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceData {
    pub timestamps: Vec<i64>,
    pub sessions: Vec<SessionSpan>,
    /// `rows × features`
    pub features: Array2<f64>,
    /// `rows × targets`
    pub targets: Array2<f64>,
    pub feature_names: Vec<String>,
    pub target_names: Vec<String>,
}

impl SequenceData {
    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
