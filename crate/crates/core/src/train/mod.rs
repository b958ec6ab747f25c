//! Training loops for both stages and their reports.

mod capture;
mod config;
mod prior;
mod report;

use std::path::Path;

pub use capture::{capture_mpjpe, reprojection_error, train_capture, CaptureData};
pub use config::{LrSchedule, Stage, TrainConfig};
pub use prior::{adam, eval_prior, reconstruction_mpjpe, train_prior, PriorData};
pub use report::{EpochRecord, RunReport};

use crate::checkpoint::{write_atomic, Checkpoint};
use crate::error::VmpError;
use crate::losses::LossValues;

/// Clip-weighted mean of per-batch loss values.
pub(crate) fn mean_values(vals: &[(LossValues, usize)]) -> LossValues {
    let n: usize = vals.iter().map(|(_, k)| k).sum();
    let mut acc = [0.0; 6];
    for (v, k) in vals {
        let w = *k as f64;
        for (a, x) in acc.iter_mut().zip([v.total, v.l3d, v.llb, v.lv, v.lkl, v.l2d]) {
            *a += w * x;
        }
    }
    let m = |i: usize| acc[i] / n.max(1) as f64;
    LossValues {
        total: m(0),
        l3d: m(1),
        llb: m(2),
        lv: m(3),
        lkl: m(4),
        l2d: m(5),
    }
}

/// Writes a diagnostic snapshot (when an output directory is set) and
/// builds the non-finite-loss error.
pub(crate) fn nan_abort(
    out_dir: Option<&Path>,
    epoch: usize,
    step: usize,
    values: &LossValues,
    weights: &Checkpoint,
) -> VmpError {
    let detail = format!("step {step}, losses {}", serde_json::to_string(values).unwrap_or_default());
    if let Some(dir) = out_dir {
        let snapshot = serde_json::json!({"epoch": epoch, "step": step, "losses": values});
        let _ = write_atomic(&dir.join("nan_snapshot.json"), snapshot.to_string().as_bytes());
        let _ = weights.save(dir.join("nan_snapshot.ckpt"));
    }
    VmpError::NonFiniteLoss { epoch, detail }
}
