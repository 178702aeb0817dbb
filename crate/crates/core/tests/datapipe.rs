use std::fs;
use std::path::Path;

use lru_rtrl::datapipe::{
    apply_pipeline, fit_pipeline, generate_synthetic, join_weather, load_emission_csv,
    load_weather_csv, preprocess, resample_to_grid, split_sessions, write_synthetic,
    FittedPipeline, GeneratorConfig, PipelineConfig, PreprocessConfig, VocabMode,
    DEFAULT_SESSION_GAP_S, EMISSIONS_FILE, TARGET_COLUMNS, WEATHER_FILE,
};
use lru_rtrl::Error;

const HEADER: &str = "timestamp,engine_rpm,fuel_lph,coolant_c,speed_kmh,fuel_econ_kmpl,no_ppm,no2_ppm,nox_ppm,co2_pct,co_ppm";

fn row(t: i64, x: f64) -> String {
    format!("{t},{},{},{},{},{},{},{},{},{},{}", 800.0 + x, 1.0 + x, 80.0 + x, 30.0 + x, 12.0 - x, 50.0 + x, 5.0 + x, 55.0 + 2.0 * x, 10.0 + x, 20.0 + x)
}

fn write(dir: &Path, name: &str, lines: &[String]) -> std::path::PathBuf {
    let path = dir.join(name);
    fs::write(&path, lines.join("\n") + "\n").unwrap();
    path
}

fn weather_lines(hours: &[i64], conditions: &[&str]) -> Vec<String> {
    let mut lines = vec!["timestamp_hour,temp_c,precip_mm,conditions".to_string()];
    for (i, h) in hours.iter().enumerate() {
        lines.push(format!("{h},{},{},{}", 10.0 + i as f64, 0.1 * i as f64, conditions[i % conditions.len()]));
    }
    lines
}

#[test]
fn unknown_and_missing_columns_are_named() {
    let dir = tempfile::tempdir().unwrap();
    let header = HEADER.replace("co_ppm", "co_mgm3");
    let path = write(dir.path(), "e.csv", &[header, row(0, 0.0).to_string()]);
    match load_emission_csv(&path, DEFAULT_SESSION_GAP_S) {
        Err(Error::Schema(msg)) => assert!(msg.contains("co_mgm3") && msg.contains("co_ppm"), "{msg}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn bad_cells_and_duplicates_cite_their_lines() {
    let dir = tempfile::tempdir().unwrap();
    let mut bad = row(1, 0.0);
    bad = bad.replacen("800", "eight", 1);
    let path = write(dir.path(), "e.csv", &[HEADER.into(), row(0, 0.0), bad.clone()]);
    let msg = load_emission_csv(&path, DEFAULT_SESSION_GAP_S).unwrap_err().to_string();
    assert!(msg.contains("line 3"), "{msg}");

    let path = write(dir.path(), "d.csv", &[HEADER.into(), row(5, 0.0), row(6, 1.0), row(5, 2.0)]);
    let msg = load_emission_csv(&path, DEFAULT_SESSION_GAP_S).unwrap_err().to_string();
    assert!(msg.contains("duplicate timestamp 5"), "{msg}");
}

#[test]
fn empty_cells_load_as_missing_and_gaps_split_sessions() {
    let dir = tempfile::tempdir().unwrap();
    let mut lines = vec![HEADER.to_string()];
    for t in 0..10 {
        lines.push(row(t, t as f64));
    }
    lines.push(format!("10,,,,,,{}", ",,,,"));
    for t in 5000..5010 {
        lines.push(row(t, (t - 5000) as f64));
    }
    let table = load_emission_csv(&write(dir.path(), "e.csv", &lines), DEFAULT_SESSION_GAP_S).unwrap();
    assert_eq!(table.len(), 21);
    let spans = table.session_spans();
    assert_eq!(spans.len(), 2);
    assert_eq!(spans[0].len, 11);
    let rpm = table.column("engine_rpm").unwrap().as_numeric().unwrap();
    assert_eq!(rpm[10], None);
}

#[test]
fn weather_must_cover_every_row() {
    let dir = tempfile::tempdir().unwrap();
    let lines: Vec<String> = std::iter::once(HEADER.to_string())
        .chain((0..5).map(|t| row(7200 + t, 0.0)))
        .collect();
    let table = load_emission_csv(&write(dir.path(), "e.csv", &lines), DEFAULT_SESSION_GAP_S).unwrap();
    let early = load_weather_csv(&write(dir.path(), "w.csv", &weather_lines(&[0, 3600], &["clear"]))).unwrap();
    assert!(matches!(join_weather(&table, &early), Err(Error::Coverage(_))));
    let covering = load_weather_csv(&write(dir.path(), "w2.csv", &weather_lines(&[3600, 7200], &["clear"]))).unwrap();
    let joined = join_weather(&table, &covering).unwrap();
    let temp = joined.column("temp_c").unwrap().as_numeric().unwrap();
    assert!(temp.iter().all(|&v| v == Some(11.0)));
}

#[test]
fn gridding_inserts_missing_rows_without_inventing_values() {
    let dir = tempfile::tempdir().unwrap();
    let lines = vec![HEADER.to_string(), row(100, 0.0), row(103, 1.0), row(104, 2.0)];
    let table = load_emission_csv(&write(dir.path(), "e.csv", &lines), DEFAULT_SESSION_GAP_S).unwrap();
    let grid = resample_to_grid(&table, 1).unwrap();
    assert_eq!(grid.timestamps, vec![100, 101, 102, 103, 104]);
    let rpm = grid.column("engine_rpm").unwrap().as_numeric().unwrap();
    assert_eq!(rpm, &[Some(800.0), None, None, Some(801.0), Some(802.0)]);
}

#[test]
fn generated_files_round_trip_through_preprocess() {
    let cfg = GeneratorConfig {
        sessions: 4,
        duration_s: 900,
        ..GeneratorConfig::default()
    };
    let data = generate_synthetic(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_synthetic(&data, dir.path()).unwrap();
    let emissions = load_emission_csv(&dir.path().join(EMISSIONS_FILE), DEFAULT_SESSION_GAP_S).unwrap();
    let weather = load_weather_csv(&dir.path().join(WEATHER_FILE)).unwrap();
    assert_eq!(emissions, data.emissions);
    assert_eq!(weather, data.weather);

    let pre = PreprocessConfig::default();
    let prepared = preprocess(&emissions, &weather, &pre).unwrap();
    assert_eq!(prepared.train.target_names, TARGET_COLUMNS);
    assert_eq!(prepared.train.sessions.len() + prepared.val.sessions.len(), 4);
    for set in [&prepared.train, &prepared.val] {
        assert!(set.features.iter().chain(set.targets.iter()).all(|v| v.is_finite()));
        assert_eq!(set.features.ncols(), prepared.pipeline.feature_dim());
    }
    // Train targets are standardized with their own statistics.
    for k in 0..5 {
        let col = prepared.train.targets.column(k);
        let mean = col.mean().unwrap();
        assert!(mean.abs() < 0.05, "target {k} mean {mean}");
    }

    let json = serde_json::to_string(&prepared.pipeline).unwrap();
    let back: FittedPipeline = serde_json::from_str(&json).unwrap();
    assert_eq!(back, prepared.pipeline);
    assert_eq!(apply_pipeline(&back, &prepared.val_table).unwrap(), prepared.val);
}

#[test]
fn train_only_vocabulary_zeroes_unseen_categories() {
    let data = generate_synthetic(&GeneratorConfig {
        sessions: 4,
        duration_s: 900,
        ..GeneratorConfig::default()
    })
    .unwrap();
    let grid = resample_to_grid(&data.emissions, 1).unwrap();
    let joined = join_weather(&grid, &data.weather).unwrap();
    let (train, val) = split_sessions(&joined, 0.5).unwrap();
    let cfg = PipelineConfig {
        vocab: VocabMode::TrainOnly,
        ..PipelineConfig::default()
    };
    let pipe = fit_pipeline(&train, Some(&val), &cfg).unwrap();
    let union = fit_pipeline(&train, Some(&val), &PipelineConfig::default()).unwrap();
    assert!(pipe.feature_dim() <= union.feature_dim());
    let seq = apply_pipeline(&pipe, &val).unwrap();
    let onehot_start = seq.feature_names.iter().position(|n| n.contains('=')).unwrap();
    for r in 0..seq.len() {
        let s: f64 = seq.features.row(r).iter().skip(onehot_start).sum();
        assert!(s == 0.0 || s == 1.0);
    }
}
