use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datapipe::{impute_knn, impute_rolling_median, FittedPipeline, SeriesTable};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputeBenchConfig {
    /// Fraction of observed numeric cells hidden before imputing.
    pub mask_fraction: f64,
    pub window: usize,
    pub k: usize,
    pub seed: u64,
}

impl Default for ImputeBenchConfig {
    fn default() -> Self {
        Self {
            mask_fraction: 0.2,
            window: 5,
            k: 20,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputeBenchReport {
    pub masked_cells: usize,
    pub rolling_mse: f64,
    pub knn_mse: f64,
}

/// Standardizes `table` with the pipeline's statistics, hides a random
/// share of the observed numeric cells and scores both imputers on them.
pub fn impute_bench(
    table: &SeriesTable,
    pipeline: &FittedPipeline,
    cfg: &ImputeBenchConfig,
) -> Result<ImputeBenchReport> {
    if !(cfg.mask_fraction > 0.0 && cfg.mask_fraction < 1.0) {
        return Err(Error::Config(format!(
            "mask fraction must lie in (0, 1), got {}",
            cfg.mask_fraction
        )));
    }
    let mut scaled = table.clone();
    scaled.columns.retain(|c| c.as_numeric().is_some());
    for col in &mut scaled.columns {
        let stats = pipeline.stats(&col.name).ok_or_else(|| {
            Error::Compatibility(format!("pipeline has no statistics for {}", col.name))
        })?;
        for v in col.as_numeric_mut().unwrap().iter_mut().flatten() {
            *v = (*v - stats.mean) / stats.scale;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut masked = scaled.clone();
    // (column, row, hidden value)
    let mut hidden = Vec::new();
    for (c, col) in masked.columns.iter_mut().enumerate() {
        for (r, cell) in col.as_numeric_mut().unwrap().iter_mut().enumerate() {
            if let Some(v) = *cell {
                if rng.random::<f64>() < cfg.mask_fraction {
                    hidden.push((c, r, v));
                    *cell = None;
                }
            }
        }
    }
    if hidden.is_empty() {
        return Err(Error::Data("no cells were masked".into()));
    }
    let score = |imputed: &SeriesTable| {
        hidden
            .iter()
            .map(|&(c, r, v)| {
                let got = imputed.columns[c].as_numeric().unwrap()[r].expect("imputed");
                (got - v) * (got - v)
            })
            .sum::<f64>()
            / hidden.len() as f64
    };
    let rolling = impute_rolling_median(&masked, cfg.window)?;
    let knn = impute_knn(&masked, cfg.k)?;
    Ok(ImputeBenchReport {
        masked_cells: hidden.len(),
        rolling_mse: score(&rolling),
        knn_mse: score(&knn),
    })
}
