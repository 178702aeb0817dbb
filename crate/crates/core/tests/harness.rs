use std::sync::OnceLock;

use lru_rtrl::bptt::{TrainConfig, Trainer};
use lru_rtrl::datapipe::{
    generate_synthetic, preprocess, write_synthetic, GeneratorConfig, PreprocessConfig, Prepared,
};
use lru_rtrl::harness::{
    check_stream, cmd_ablate, cmd_evaluate, cmd_finetune, cmd_pretrain, cmd_sweep, create_run_dir,
    load_checkpoint, load_dataset, load_with_pipeline, save_checkpoint, write_ablation_csv,
    write_eval_csv, write_run_metrics_csv, AblationKind, Checkpoint, FinetuneConfig,
    PretrainConfig, Provenance, SweepGrid, FREEZE_GRID, LAMBDA_GRID,
};
use lru_rtrl::Error;

struct Fixture {
    prepared: Prepared,
    preprocess: PreprocessConfig,
    checkpoint: Checkpoint,
}

fn small_generator() -> GeneratorConfig {
    GeneratorConfig {
        sessions: 3,
        duration_s: 1500,
        ..GeneratorConfig::default()
    }
}

fn train_config(steps: usize) -> TrainConfig {
    TrainConfig {
        trainer: Trainer::Bptt,
        steps,
        batch: 8,
        window: 64,
        eval_every: 20,
        seed: 3,
        ..TrainConfig::default()
    }
}

fn fixture() -> &'static Fixture {
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let data = generate_synthetic(&small_generator()).unwrap();
        let pre = PreprocessConfig::default();
        let prepared = preprocess(&data.emissions, &data.weather, &pre).unwrap();
        let cfg = PretrainConfig {
            widths: vec![8],
            train: train_config(60),
            ..PretrainConfig::default()
        };
        let checkpoint = cmd_pretrain(&prepared, &pre, &cfg, Provenance::fixed("test"))
            .unwrap()
            .checkpoint;
        Fixture {
            prepared,
            preprocess: pre,
            checkpoint,
        }
    })
}

#[test]
fn zero_learning_rate_matches_frozen_run() {
    let f = fixture();
    let cfg = FinetuneConfig {
        lr: 0.0,
        lambda_reg: 0.0,
        ..FinetuneConfig::default()
    };
    let m = cmd_finetune(&f.checkpoint, &f.prepared.val, &cfg).unwrap();
    assert_eq!(m.tuned.predictions, m.frozen.predictions);
    assert_eq!(m.tuned.losses, m.frozen.losses);
    assert_eq!(m.final_distance(), 0.0);
}

#[test]
fn freezing_at_zero_never_updates() {
    let f = fixture();
    let cfg = FinetuneConfig {
        freeze_after: Some(0),
        ..FinetuneConfig::default()
    };
    let m = cmd_finetune(&f.checkpoint, &f.prepared.val, &cfg).unwrap();
    assert_eq!(m.updates, 0);
    assert_eq!(m.tuned.predictions, m.frozen.predictions);
    assert_eq!(m.final_network, f.checkpoint.network);
}

#[test]
fn predictions_never_see_their_own_label() {
    let f = fixture();
    let cfg = FinetuneConfig::default();
    let base = cmd_finetune(&f.checkpoint, &f.prepared.val, &cfg).unwrap();
    let t = f.prepared.val.sessions[0].len / 2;
    let mut perturbed = f.prepared.val.clone();
    perturbed.targets.row_mut(t).iter_mut().for_each(|y| *y += 5.0);
    let other = cmd_finetune(&f.checkpoint, &perturbed, &cfg).unwrap();
    for row in 0..=t {
        assert_eq!(base.tuned.predictions.row(row), other.tuned.predictions.row(row), "row {row}");
    }
    assert_ne!(base.tuned.predictions.row(t + 1), other.tuned.predictions.row(t + 1));
}

#[test]
fn frozen_learner_matches_a_run_stopped_at_the_same_step() {
    let f = fixture();
    let n = 150;
    let cfg = FinetuneConfig {
        freeze_after: Some(n),
        ..FinetuneConfig::default()
    };
    let m = cmd_finetune(&f.checkpoint, &f.prepared.val, &cfg).unwrap();
    assert_eq!(m.updates, n);
    let full = cmd_finetune(&f.checkpoint, &f.prepared.val, &FinetuneConfig::default()).unwrap();
    // Identical up to and including the step that made the last update.
    for row in 0..n {
        assert_eq!(m.tuned.predictions.row(row), full.tuned.predictions.row(row));
    }
    let d = m.distance[n - 1];
    assert!(m.distance[n..].iter().all(|&x| x == d));
}

#[test]
fn ablation_rows_cover_every_setting() {
    let f = fixture();
    let base = FinetuneConfig::default();
    let rows = cmd_ablate(&f.checkpoint, &f.prepared.val, &base).unwrap();
    assert_eq!(rows.len(), LAMBDA_GRID.len() + 2 * FREEZE_GRID.len() + 1);
    let lambdas: Vec<f64> = rows[..4].iter().map(|r| r.lambda_reg.unwrap()).collect();
    assert_eq!(lambdas, LAMBDA_GRID);
    assert!(rows[4..10].iter().all(|r| r.kind == AblationKind::Freeze));
    assert!(rows[7..10].iter().all(|r| r.lambda_reg == Some(0.0)));
    assert_eq!(rows[10].kind, AblationKind::Baseline);

    let plain = cmd_finetune(
        &f.checkpoint,
        &f.prepared.val,
        &FinetuneConfig {
            lambda_reg: 0.0,
            ..base
        },
    )
    .unwrap();
    assert_eq!(rows[0].total_loss, plain.tuned.total());
    assert_eq!(rows[0].final_distance, plain.final_distance());
    assert_eq!(rows[10].total_loss, plain.frozen.total());

    let dir = tempfile::tempdir().unwrap();
    write_ablation_csv(&dir.path().join("ablation.csv"), &rows).unwrap();
    let text = std::fs::read_to_string(dir.path().join("ablation.csv")).unwrap();
    assert_eq!(text.lines().count(), 12);
}

#[test]
fn evaluation_reproduces_best_validation_loss() {
    let f = fixture();
    let report = cmd_evaluate(&f.checkpoint, &f.prepared.val).unwrap();
    let best = f.checkpoint.best_val_loss.unwrap();
    assert!(
        (report.summary.huber_mean - best).abs() <= 1e-12 * best.abs().max(1.0),
        "{} vs {best}",
        report.summary.huber_mean
    );
    assert_eq!(report.summary.per_target.len(), 5);

    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    write_eval_csv(&a, &f.prepared.val, &report).unwrap();
    let again = cmd_evaluate(&f.checkpoint, &f.prepared.val).unwrap();
    write_eval_csv(&b, &f.prepared.val, &again).unwrap();
    let text = std::fs::read(&a).unwrap();
    assert_eq!(text, std::fs::read(&b).unwrap());
    let header = String::from_utf8(text).unwrap().lines().next().unwrap().to_string();
    assert_eq!(header.split(',').count(), 11);
}

#[test]
fn run_metrics_csv_has_one_row_per_step() {
    let f = fixture();
    let m = cmd_finetune(&f.checkpoint, &f.prepared.val, &FinetuneConfig::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("metrics.csv");
    write_run_metrics_csv(&path, &m).unwrap();
    let text = std::fs::read_to_string(path).unwrap();
    assert_eq!(text.lines().count(), f.prepared.val.len() + 1);
}

#[test]
fn single_cell_sweep_yields_one_row() {
    let f = fixture();
    let grid = SweepGrid {
        layers: vec![vec![4]],
        lrs: vec![1e-3],
        clips: vec![Some(0.5)],
        trainers: vec![Trainer::Rtrl],
        repeats: 1,
    };
    let rows = cmd_sweep(&f.prepared, &grid, &train_config(3));
    assert_eq!(rows.len(), 1);
    assert!(rows[0].error.is_none(), "{:?}", rows[0].error);
    assert!(rows[0].best_val_loss.is_some_and(f64::is_finite));
}

#[test]
fn mismatched_stream_is_rejected() {
    let f = fixture();
    let mut stream = f.prepared.val.clone();
    stream.feature_names.pop();
    stream.features = stream.features.slice(ndarray::s![.., ..stream.feature_names.len()]).to_owned();
    assert!(matches!(check_stream(&f.checkpoint, &stream), Err(Error::Compatibility(_))));
    assert!(matches!(
        cmd_finetune(&f.checkpoint, &stream, &FinetuneConfig::default()),
        Err(Error::Compatibility(_))
    ));
    assert!(matches!(cmd_evaluate(&f.checkpoint, &stream), Err(Error::Compatibility(_))));
}

#[test]
fn files_on_disk_give_the_same_streams() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    write_synthetic(&generate_synthetic(&small_generator()).unwrap(), dir.path()).unwrap();
    let loaded = load_dataset(dir.path(), &f.preprocess).unwrap();
    assert_eq!(loaded.train, f.prepared.train);
    assert_eq!(loaded.val, f.prepared.val);

    let ckpt_path = dir.path().join("model.json");
    save_checkpoint(&f.checkpoint, &ckpt_path).unwrap();
    let ckpt = load_checkpoint(&ckpt_path).unwrap();
    let (_, val) = load_with_pipeline(dir.path(), &ckpt.preprocess, &ckpt.pipeline).unwrap();
    assert_eq!(val, f.prepared.val);
}

#[test]
fn run_directories_are_named_by_command_and_config() {
    let dir = tempfile::tempdir().unwrap();
    let run = create_run_dir(dir.path(), "finetune", &FinetuneConfig::default()).unwrap();
    let name = run.file_name().unwrap().to_string_lossy().to_string();
    assert!(name.starts_with("finetune-"));
    assert!(run.is_dir());
    let other = create_run_dir(dir.path(), "finetune", &FinetuneConfig { lr: 0.5, ..Default::default() }).unwrap();
    assert_ne!(name[name.len() - 12..], other.to_string_lossy()[other.to_string_lossy().len() - 12..]);
}
