use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bptt::{train, TrainConfig, Trainer};
use crate::datapipe::Prepared;
use crate::error::{Error, Result};
use crate::lru::{LruNetwork, NetworkConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub layers: Vec<Vec<usize>>,
    pub lrs: Vec<f64>,
    pub clips: Vec<Option<f64>>,
    pub trainers: Vec<Trainer>,
    pub repeats: usize,
}

impl SweepGrid {
    /// Five architectures, three learning rates, three clip settings, both
    /// trainers, five repeats.
    pub fn full() -> Self {
        Self {
            layers: vec![vec![8], vec![16], vec![8, 8], vec![16, 16], vec![8, 8, 8]],
            lrs: vec![1e-2, 1e-3, 1e-4],
            clips: vec![Some(0.5), Some(1.0), None],
            trainers: vec![Trainer::Bptt, Trainer::Rtrl],
            repeats: 5,
        }
    }

    pub fn len(&self) -> usize {
        self.layers.len() * self.lrs.len() * self.clips.len() * self.trainers.len() * self.repeats
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every run of the grid, in output order.
    pub fn cells(&self) -> Vec<SweepCell> {
        let mut cells = Vec::with_capacity(self.len());
        for layers in &self.layers {
            for &trainer in &self.trainers {
                for &lr in &self.lrs {
                    for &clip in &self.clips {
                        for repeat in 0..self.repeats {
                            cells.push(SweepCell {
                                layers: layers.clone(),
                                trainer,
                                lr,
                                clip,
                                repeat,
                            });
                        }
                    }
                }
            }
        }
        cells
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub layers: Vec<usize>,
    pub trainer: Trainer,
    pub lr: f64,
    pub clip: Option<f64>,
    pub repeat: usize,
}

impl SweepCell {
    pub fn layers_label(&self) -> String {
        let inner: Vec<String> = self.layers.iter().map(|w| w.to_string()).collect();
        if inner.len() == 1 {
            format!("({},)", inner[0])
        } else {
            format!("({})", inner.join(", "))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub cell: SweepCell,
    pub seed: u64,
    pub best_val_loss: Option<f64>,
    pub best_step: Option<usize>,
    pub wall_time_s: f64,
    pub error: Option<String>,
}

fn run_cell(prepared: &Prepared, base: &TrainConfig, cell: &SweepCell) -> Result<(f64, usize)> {
    let cfg = TrainConfig {
        trainer: cell.trainer,
        lr: cell.lr,
        clip: cell.clip,
        seed: base.seed.wrapping_add(cell.repeat as u64),
        ..base.clone()
    };
    let net_cfg = NetworkConfig::new(
        prepared.train.features.ncols(),
        cell.layers.clone(),
        prepared.train.targets.ncols(),
    );
    let net = LruNetwork::init(&net_cfg, cfg.seed)?;
    let outcome = train(net, &prepared.train, &prepared.val, &cfg)?;
    if let Some(step) = outcome.diverged_at {
        log::warn!("{cell:?} diverged at step {step}");
    }
    Ok((outcome.best_val_loss, outcome.best_step))
}

/// Trains every grid cell (in parallel) and returns one row per run, in
/// grid order. A failing run is recorded with its error and does not stop
/// the sweep. Repeat `r` uses seed `base.seed + r`.
pub fn cmd_sweep(prepared: &Prepared, grid: &SweepGrid, base: &TrainConfig) -> Vec<SweepRow> {
    grid.cells()
        .into_par_iter()
        .map(|cell| {
            let started = Instant::now();
            let result = run_cell(prepared, base, &cell);
            let wall_time_s = started.elapsed().as_secs_f64();
            let seed = base.seed.wrapping_add(cell.repeat as u64);
            match result {
                Ok((loss, step)) => SweepRow {
                    cell,
                    seed,
                    best_val_loss: Some(loss),
                    best_step: Some(step),
                    wall_time_s,
                    error: None,
                },
                Err(e) => SweepRow {
                    cell,
                    seed,
                    best_val_loss: None,
                    best_step: None,
                    wall_time_s,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect()
}

/// One line per run, grouped by architecture and trainer for box plots.
pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "layers", "trainer", "lr", "clip", "repeat", "seed", "best_val_loss", "best_step",
        "wall_time_s", "error",
    ])?;
    for r in rows {
        w.write_record([
            r.cell.layers_label(),
            r.cell.trainer.to_string(),
            r.cell.lr.to_string(),
            r.cell.clip.map(|c| c.to_string()).unwrap_or_else(|| "none".into()),
            r.cell.repeat.to_string(),
            r.seed.to_string(),
            r.best_val_loss.map(|v| format!("{v:.16e}")).unwrap_or_default(),
            r.best_step.map(|v| v.to_string()).unwrap_or_default(),
            format!("{:.3}", r.wall_time_s),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(Error::from)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_grid_size() {
        let grid = SweepGrid::full();
        assert_eq!(grid.len(), 450);
        assert_eq!(grid.cells().len(), 450);
    }

    #[test]
    fn cells_are_ordered_by_config_then_repeat() {
        let cells = SweepGrid::full().cells();
        assert_eq!(cells[0].repeat, 0);
        assert_eq!(cells[4].repeat, 4);
        assert_eq!(cells[5].clip, Some(1.0));
        assert_eq!(cells[0].layers_label(), "(8,)");
        assert_eq!(cells[449].layers_label(), "(8, 8, 8)");
    }
}
