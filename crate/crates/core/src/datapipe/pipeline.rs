use std::collections::HashMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::csv_io::WeatherTable;
use super::impute::impute_rolling_median;
use super::ops::{join_weather, resample_to_grid, split_sessions};
use super::table::{ColumnData, ColumnRole, SequenceData, SeriesTable};
use crate::error::{Error, Result};
use crate::float17;

pub const DEFAULT_WINDOW: usize = 5;

/// Where categorical vocabularies are learned from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VocabMode {
    /// Training and validation rows together.
    #[default]
    Union,
    TrainOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Rolling-median window, odd and at least 3.
    pub window: usize,
    pub vocab: VocabMode,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            window: DEFAULT_WINDOW,
            vocab: VocabMode::Union,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumericStats {
    pub name: String,
    pub role: ColumnRole,
    #[serde(with = "float17::scalar")]
    pub mean: f64,
    #[serde(with = "float17::scalar")]
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub column: String,
    pub values: Vec<String>,
}

/// Frozen preprocessing state. Only [`fit_pipeline`] creates one, so a
/// transform can never run unfitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedPipeline {
    config: PipelineConfig,
    numeric: Vec<NumericStats>,
    vocabularies: Vec<Vocabulary>,
    feature_names: Vec<String>,
    target_names: Vec<String>,
}

impl FittedPipeline {
    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn numeric_stats(&self) -> &[NumericStats] {
        &self.numeric
    }

    pub fn vocabularies(&self) -> &[Vocabulary] {
        &self.vocabularies
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn target_names(&self) -> &[String] {
        &self.target_names
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_names.len()
    }

    pub fn target_dim(&self) -> usize {
        self.target_names.len()
    }

    pub fn stats(&self, name: &str) -> Option<&NumericStats> {
        self.numeric.iter().find(|s| s.name == name)
    }
}

fn mean_and_scale(name: &str, cells: &[Option<f64>]) -> Result<(f64, f64)> {
    let observed: Vec<f64> = cells.iter().flatten().copied().collect();
    if observed.is_empty() {
        return Err(Error::Data(format!("column {name} has no observed training values")));
    }
    let n = observed.len() as f64;
    let mean = observed.iter().sum::<f64>() / n;
    let var = observed.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let scale = var.sqrt();
    if !(scale > 1e-12 * mean.abs().max(1.0)) {
        return Err(Error::Data(format!(
            "column {name} is constant on the training set and cannot be standardized"
        )));
    }
    Ok((mean, scale))
}

/// Learns standardization statistics from `train` and vocabularies from
/// `train` (plus `extra` under [`VocabMode::Union`]).
pub fn fit_pipeline(
    train: &SeriesTable,
    extra: Option<&SeriesTable>,
    config: &PipelineConfig,
) -> Result<FittedPipeline> {
    if config.window < 3 || config.window % 2 == 0 {
        return Err(Error::Config(format!(
            "rolling window must be odd and at least 3, got {}",
            config.window
        )));
    }
    train.validate()?;
    let mut numeric = Vec::new();
    let mut vocabularies = Vec::new();
    for col in &train.columns {
        match &col.data {
            ColumnData::Numeric(cells) => {
                let (mean, scale) = mean_and_scale(&col.name, cells)?;
                numeric.push(NumericStats {
                    name: col.name.clone(),
                    role: col.role,
                    mean,
                    scale,
                });
            }
            ColumnData::Categorical(cells) => {
                let mut values: Vec<String> = Vec::new();
                let mut seen = |v: &Option<String>| {
                    if let Some(v) = v {
                        if !values.contains(v) {
                            values.push(v.clone());
                        }
                    }
                };
                cells.iter().for_each(&mut seen);
                if config.vocab == VocabMode::Union {
                    if let Some(ColumnData::Categorical(more)) =
                        extra.and_then(|t| t.column(&col.name)).map(|c| &c.data)
                    {
                        more.iter().for_each(&mut seen);
                    }
                }
                vocabularies.push(Vocabulary {
                    column: col.name.clone(),
                    values,
                });
            }
        }
    }
    let mut feature_names: Vec<String> = numeric
        .iter()
        .filter(|s| s.role != ColumnRole::Target)
        .map(|s| s.name.clone())
        .collect();
    for v in &vocabularies {
        feature_names.extend(v.values.iter().map(|x| format!("{}={x}", v.column)));
    }
    let target_names: Vec<String> = numeric
        .iter()
        .filter(|s| s.role == ColumnRole::Target)
        .map(|s| s.name.clone())
        .collect();
    if target_names.is_empty() {
        return Err(Error::Schema("table has no target columns".into()));
    }
    Ok(FittedPipeline {
        config: config.clone(),
        numeric,
        vocabularies,
        feature_names,
        target_names,
    })
}

/// Standardizes, imputes and one-hot encodes `table` with frozen statistics.
pub fn apply_pipeline(pipe: &FittedPipeline, table: &SeriesTable) -> Result<SequenceData> {
    table.validate()?;
    let mut standardized = table.clone();
    standardized.columns.retain(|c| matches!(c.data, ColumnData::Numeric(_)));
    if standardized.columns.len() != pipe.numeric.len() {
        return Err(Error::Compatibility(format!(
            "pipeline expects {} numeric columns, table has {}",
            pipe.numeric.len(),
            standardized.columns.len()
        )));
    }
    for stats in &pipe.numeric {
        let col = standardized
            .column_mut(&stats.name)
            .filter(|c| c.role == stats.role)
            .ok_or_else(|| {
                Error::Compatibility(format!("table lacks numeric column {}", stats.name))
            })?;
        for v in col.as_numeric_mut().unwrap().iter_mut().flatten() {
            *v = (*v - stats.mean) / stats.scale;
        }
    }
    let imputed = impute_rolling_median(&standardized, pipe.config.window)?;

    let rows = table.len();
    let mut features = Array2::<f64>::zeros((rows, pipe.feature_dim()));
    let mut targets = Array2::<f64>::zeros((rows, pipe.target_dim()));
    let mut f = 0;
    let mut t = 0;
    for stats in &pipe.numeric {
        let cells = imputed.numeric(&stats.name).unwrap();
        let dest = if stats.role == ColumnRole::Target {
            t += 1;
            targets.column_mut(t - 1)
        } else {
            f += 1;
            features.column_mut(f - 1)
        };
        for (d, v) in dest.into_iter().zip(cells) {
            *d = v.expect("imputation leaves no gaps");
        }
    }
    for vocab in &pipe.vocabularies {
        let cells = match table.column(&vocab.column).map(|c| &c.data) {
            Some(ColumnData::Categorical(cells)) => cells,
            _ => {
                return Err(Error::Compatibility(format!(
                    "table lacks categorical column {}",
                    vocab.column
                )))
            }
        };
        let index: HashMap<&str, usize> = vocab
            .values
            .iter()
            .enumerate()
            .map(|(i, v)| (v.as_str(), i))
            .collect();
        let mut unknown = 0usize;
        for (r, cell) in cells.iter().enumerate() {
            match cell.as_deref().and_then(|v| index.get(v)) {
                Some(&i) => features[[r, f + i]] = 1.0,
                None => unknown += 1,
            }
        }
        if unknown > 0 {
            log::warn!(
                "{unknown} rows of {} are missing or outside the vocabulary; encoded as all zeros",
                vocab.column
            );
        }
        f += vocab.values.len();
    }
    Ok(SequenceData {
        timestamps: table.timestamps.clone(),
        sessions: table.session_spans(),
        features,
        targets,
        feature_names: pipe.feature_names.clone(),
        target_names: pipe.target_names.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub pipeline: PipelineConfig,
    #[serde(with = "float17::scalar")]
    pub train_fraction: f64,
    /// Grid spacing in seconds.
    pub grid_step: i64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            pipeline: PipelineConfig::default(),
            train_fraction: 0.8,
            grid_step: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Prepared {
    pub pipeline: FittedPipeline,
    /// Gridded and weather-joined tables before standardization.
    pub train_table: SeriesTable,
    pub val_table: SeriesTable,
    pub train: SequenceData,
    pub val: SequenceData,
}

/// Grids the raw recordings, joins weather, splits by session and runs the
/// fitted pipeline on both parts.
pub fn preprocess(
    emissions: &SeriesTable,
    weather: &WeatherTable,
    config: &PreprocessConfig,
) -> Result<Prepared> {
    let gridded = resample_to_grid(emissions, config.grid_step)?;
    let joined = join_weather(&gridded, weather)?;
    let (train_table, val_table) = split_sessions(&joined, config.train_fraction)?;
    let pipeline = fit_pipeline(&train_table, Some(&val_table), &config.pipeline)?;
    let train = apply_pipeline(&pipeline, &train_table)?;
    let val = apply_pipeline(&pipeline, &val_table)?;
    Ok(Prepared {
        pipeline,
        train_table,
        val_table,
        train,
        val,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datapipe::table::Column;

    fn table(x: Vec<Option<f64>>, y: Vec<Option<f64>>, cond: Vec<Option<&str>>) -> SeriesTable {
        let n = x.len();
        SeriesTable {
            timestamps: (0..n as i64).collect(),
            sessions: vec![0; n],
            columns: vec![
                Column::numeric("x", ColumnRole::FeatureNumeric, x),
                Column::numeric("y", ColumnRole::Target, y),
                Column::categorical(
                    "conditions",
                    cond.into_iter().map(|c| c.map(String::from)).collect(),
                ),
            ],
        }
    }

    fn some(v: &[f64]) -> Vec<Option<f64>> {
        v.iter().copied().map(Some).collect()
    }

    #[test]
    fn one_hot_first_appearance_order() {
        let t = table(
            some(&[1.0, 2.0, 3.0]),
            some(&[0.0, 1.0, 5.0]),
            vec![Some("rain"), Some("clear"), Some("rain")],
        );
        let pipe = fit_pipeline(&t, None, &PipelineConfig::default()).unwrap();
        assert_eq!(pipe.feature_names(), &["x", "conditions=rain", "conditions=clear"]);
        let data = apply_pipeline(&pipe, &t).unwrap();
        assert_eq!(data.features.row(0).to_vec()[1..], [1.0, 0.0]);
        assert_eq!(data.features.row(1).to_vec()[1..], [0.0, 1.0]);
    }

    #[test]
    fn unseen_category_is_all_zero() {
        let train = table(some(&[1.0, 2.0]), some(&[0.0, 1.0]), vec![Some("rain"), Some("clear")]);
        let val = table(some(&[1.0, 2.0]), some(&[0.0, 1.0]), vec![Some("snow"), None]);
        let cfg = PipelineConfig {
            vocab: VocabMode::TrainOnly,
            ..PipelineConfig::default()
        };
        let pipe = fit_pipeline(&train, Some(&val), &cfg).unwrap();
        let data = apply_pipeline(&pipe, &val).unwrap();
        assert_eq!(data.features.row(0).to_vec()[1..], [0.0, 0.0]);
        assert_eq!(data.features.row(1).to_vec()[1..], [0.0, 0.0]);
        let pipe = fit_pipeline(&train, Some(&val), &PipelineConfig::default()).unwrap();
        assert_eq!(pipe.feature_dim(), 4);
    }

    #[test]
    fn training_column_standardizes_to_unit_variance() {
        let xs: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin() * 7.0 + 3.0).collect();
        let ys: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let t = table(some(&xs), some(&ys), vec![Some("a"); 50]);
        let pipe = fit_pipeline(&t, None, &PipelineConfig::default()).unwrap();
        let data = apply_pipeline(&pipe, &t).unwrap();
        for col in [data.features.column(0), data.targets.column(0)] {
            let mean = col.mean().unwrap();
            let var = col.mapv(|v| (v - mean).powi(2)).mean().unwrap();
            assert!(mean.abs() < 1e-10 && (var - 1.0).abs() < 1e-10);
        }
        let shifted: Vec<f64> = xs.iter().map(|x| x + 1.0).collect();
        let v = table(some(&shifted), some(&ys), vec![Some("a"); 50]);
        let data = apply_pipeline(&pipe, &v).unwrap();
        let scale = pipe.stats("x").unwrap().scale;
        assert!((data.features.column(0).mean().unwrap() - 1.0 / scale).abs() < 1e-10);
    }

    #[test]
    fn constant_column_rejected() {
        let t = table(some(&[2.0, 2.0, 2.0]), some(&[0.0, 1.0, 2.0]), vec![Some("a"); 3]);
        match fit_pipeline(&t, None, &PipelineConfig::default()) {
            Err(Error::Data(msg)) => assert!(msg.contains('x'), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn output_is_complete() {
        let t = table(
            vec![None, Some(1.0), None, Some(4.0), None],
            vec![Some(1.0), None, Some(2.0), None, Some(0.0)],
            vec![Some("a"), None, Some("b"), Some("a"), Some("c")],
        );
        let pipe = fit_pipeline(&t, None, &PipelineConfig::default()).unwrap();
        let data = apply_pipeline(&pipe, &t).unwrap();
        assert_eq!(data.features.ncols(), 1 + 3);
        assert!(data.features.iter().chain(data.targets.iter()).all(|v| v.is_finite()));
    }

    #[test]
    fn mismatched_table_rejected() {
        let t = table(some(&[1.0, 2.0]), some(&[0.0, 1.0]), vec![Some("a"); 2]);
        let pipe = fit_pipeline(&t, None, &PipelineConfig::default()).unwrap();
        let mut other = t.clone();
        other.columns[0].name = "z".into();
        assert!(matches!(apply_pipeline(&pipe, &other), Err(Error::Compatibility(_))));
    }

    #[test]
    fn pipeline_serializes() {
        let t = table(some(&[1.0, 2.5]), some(&[0.1, 1.0]), vec![Some("a"); 2]);
        let pipe = fit_pipeline(&t, None, &PipelineConfig::default()).unwrap();
        let text = serde_json::to_string(&pipe).unwrap();
        let back: FittedPipeline = serde_json::from_str(&text).unwrap();
        assert_eq!(back, pipe);
    }
}
