use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::Stage;
use crate::checkpoint::write_atomic;
use crate::error::{Result, VmpError};
use crate::losses::LossValues;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train: LossValues,
    /// Auxiliary camera term, not part of `train.total`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub camera: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_total: Option<f64>,
    /// SHA-256 of the prior generator after this epoch (Stage II only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator_digest: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub stage: Stage,
    pub seed: u64,
    pub config_digest: String,
    pub steps: usize,
    pub epochs: Vec<EpochRecord>,
    pub final_metrics: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_epoch: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior_digest_before: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior_digest_after: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_clock_s: Option<f64>,
}

impl RunReport {
    pub fn validate(&self) -> Result<()> {
        if self.epochs.windows(2).any(|w| w[1].epoch <= w[0].epoch) {
            return Err(VmpError::Invalid("epoch indices must increase".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// `epoch,total,l3d,llb,lv,lkl,l2d` rows.
    pub fn curves_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| VmpError::Invalid(format!("csv: {e}"));
        w.write_record(["epoch", "total", "l3d", "llb", "lv", "lkl", "l2d"]).map_err(io)?;
        for r in &self.epochs {
            let v = &r.train;
            w.write_record([
                r.epoch.to_string(),
                v.total.to_string(),
                v.l3d.to_string(),
                v.llb.to_string(),
                v.lv.to_string(),
                v.lkl.to_string(),
                v.l2d.to_string(),
            ])
            .map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| VmpError::Invalid(format!("csv: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Writes `report.json` and `curves.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_atomic(&dir.join("report.json"), self.to_json()?.as_bytes())?;
        write_atomic(&dir.join("curves.csv"), self.curves_csv()?.as_bytes())
    }
}
