//! Per-dimension normalization statistics over flattened motion parameters.

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::body::{MotionClip, PARAM_DIM};
use crate::error::{Result, VmpError};

/// Standard deviations below this floor are clamped up to it.
pub const STD_FLOOR: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Default for Normalizer {
    fn default() -> Self {
        Normalizer::identity()
    }
}

impl Normalizer {
    pub fn identity() -> Self {
        Normalizer {
            mean: vec![0.0; PARAM_DIM],
            std: vec![1.0; PARAM_DIM],
        }
    }

    /// Population mean/std over every frame of every clip.
    pub fn fit(clips: &[MotionClip]) -> Result<Self> {
        let rows: Vec<Vec<f64>> = clips.iter().map(|c| c.to_params()).collect();
        let count = rows.iter().map(|r| r.len() / PARAM_DIM).sum::<usize>();
        if count == 0 {
            return Err(VmpError::Invalid("cannot fit statistics on zero frames".into()));
        }
        let mut mean = vec![0.0; PARAM_DIM];
        for r in &rows {
            for frame in r.chunks_exact(PARAM_DIM) {
                for (m, v) in mean.iter_mut().zip(frame) {
                    *m += v;
                }
            }
        }
        mean.iter_mut().for_each(|m| *m /= count as f64);
        let mut var = vec![0.0; PARAM_DIM];
        for r in &rows {
            for frame in r.chunks_exact(PARAM_DIM) {
                for ((s, v), m) in var.iter_mut().zip(frame).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
        }
        let std = var
            .iter()
            .map(|s| (s / count as f64).sqrt().max(STD_FLOOR))
            .collect();
        Ok(Normalizer { mean, std })
    }

    pub fn validate(&self) -> Result<()> {
        if self.mean.len() != PARAM_DIM || self.std.len() != PARAM_DIM {
            return Err(VmpError::Shape(format!(
                "normalizer must have {PARAM_DIM} entries, got {}/{}",
                self.mean.len(),
                self.std.len()
            )));
        }
        if self.std.iter().any(|s| !(*s > 0.0)) || self.mean.iter().any(|m| !m.is_finite()) {
            return Err(VmpError::Invalid("normalizer std must be positive and finite".into()));
        }
        Ok(())
    }

    pub fn tensors(&self, device: &Device, dtype: DType) -> Result<(Tensor, Tensor)> {
        Ok((
            Tensor::new(self.mean.as_slice(), device)?.to_dtype(dtype)?,
            Tensor::new(self.std.as_slice(), device)?.to_dtype(dtype)?,
        ))
    }

    pub fn normalize_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .enumerate()
            .map(|(i, v)| (v - self.mean[i % PARAM_DIM]) / self.std[i % PARAM_DIM])
            .collect()
    }

    pub fn denormalize_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .enumerate()
            .map(|(i, v)| v * self.std[i % PARAM_DIM] + self.mean[i % PARAM_DIM])
            .collect()
    }
}
