//! Data ingestion and preprocessing: CSV loading, gridding, weather join,
//! imputation, standardization, one-hot encoding, session splits and a
//! synthetic data generator.

mod csv_io;
mod generator;
mod impute;
mod ops;
mod pipeline;
mod table;

pub use csv_io::{
    load_emission_csv, load_weather_csv, write_emission_csv, write_weather_csv, WeatherTable,
    DEFAULT_SESSION_GAP_S, EMISSION_COLUMNS, TARGET_COLUMNS, TIMESTAMP, WEATHER_HEADER,
};
pub use generator::{
    generate_synthetic, write_synthetic, GeneratorConfig, Manifest, NoiseConfig, SessionManifest,
    ShiftSpec, SyntheticData, EMISSIONS_FILE, MANIFEST_FILE, WEATHER_FILE,
};
pub use impute::{impute_knn, impute_rolling_median};
pub use ops::{join_weather, resample_to_grid, split_sessions};
pub use pipeline::{
    apply_pipeline, fit_pipeline, preprocess, FittedPipeline, NumericStats, PipelineConfig,
    PreprocessConfig, Prepared, Vocabulary, VocabMode, DEFAULT_WINDOW,
};
pub use table::{Column, ColumnData, ColumnRole, SeriesTable, SequenceData, SessionSpan};
