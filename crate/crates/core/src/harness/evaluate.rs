use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::finetune::check_stream;
use crate::bptt::predict;
use crate::datapipe::SequenceData;
use crate::error::Result;
use crate::optim::Huber;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetError {
    pub target: String,
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub steps: usize,
    pub per_target: Vec<TargetError>,
    pub huber_total: f64,
    pub huber_mean: f64,
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub summary: EvalSummary,
    pub predictions: Array2<f64>,
}

/// Frozen prediction over every session of `data` from zero state.
pub fn cmd_evaluate(ckpt: &Checkpoint, data: &SequenceData) -> Result<EvalReport> {
    check_stream(ckpt, data)?;
    let huber = Huber::new(ckpt.train_config.huber_delta)?;
    let predictions = predict(&ckpt.network, data)?;
    let steps = data.len();
    let mut huber_total = 0.0;
    let mut sq = vec![0.0; data.targets.ncols()];
    for (p, y) in predictions.rows().into_iter().zip(data.targets.rows()) {
        let (p, y) = (p.to_vec(), y.to_vec());
        huber_total += huber.step_loss(&p, &y);
        for (k, (a, b)) in p.iter().zip(&y).enumerate() {
            sq[k] += (a - b) * (a - b);
        }
    }
    let per_target = data
        .target_names
        .iter()
        .zip(sq)
        .map(|(name, s)| TargetError {
            target: name.clone(),
            mse: s / steps.max(1) as f64,
        })
        .collect();
    Ok(EvalReport {
        summary: EvalSummary {
            steps,
            per_target,
            huber_total,
            huber_mean: huber_total / steps.max(1) as f64,
        },
        predictions,
    })
}

/// `timestamp` followed by `<target>_pred,<target>_true` for every target.
pub fn write_eval_csv(path: &Path, data: &SequenceData, report: &EvalReport) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(out, "timestamp")?;
    for name in &data.target_names {
        write!(out, ",{name}_pred,{name}_true")?;
    }
    writeln!(out)?;
    for (t, ts) in data.timestamps.iter().enumerate() {
        write!(out, "{ts}")?;
        for k in 0..data.target_names.len() {
            write!(
                out,
                ",{:.16e},{:.16e}",
                report.predictions[[t, k]],
                data.targets[[t, k]]
            )?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}
