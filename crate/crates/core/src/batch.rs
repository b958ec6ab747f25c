//! Motion clips as batched tensors.

use candle_core::{DType, Device, Tensor, D};

use crate::body::{MotionClip, NUM_BETAS, NUM_JOINTS, PARAM_DIM};
use crate::error::{Result, VmpError};

/// `B` clips of `T` frames: root `(B,T,3)`, pose `(B,T,24,6)`, shape `(B,10)`
/// and the per-clip root mask `(B)` (1.0 when the clip carries translation).
#[derive(Clone, Debug)]
pub struct MotionBatch {
    pub root: Tensor,
    pub pose: Tensor,
    pub shape: Tensor,
    pub root_mask: Tensor,
}

impl MotionBatch {
    pub fn from_clips(clips: &[MotionClip], device: &Device, dtype: DType) -> Result<Self> {
        let b = clips.len();
        if b == 0 {
            return Err(VmpError::Shape("empty clip batch".into()));
        }
        let t = clips[0].len();
        if clips.iter().any(|c| c.len() != t) {
            return Err(VmpError::Shape("clips in a batch must share a length".into()));
        }
        let root: Vec<f64> = clips.iter().flat_map(|c| c.root_trans.iter().flatten().copied()).collect();
        let pose: Vec<f64> = clips
            .iter()
            .flat_map(|c| c.pose.iter().flatten().flatten().copied())
            .collect();
        let shape: Vec<f64> = clips.iter().flat_map(|c| c.shape).collect();
        let mask: Vec<f64> = clips.iter().map(|c| if c.has_root { 1.0 } else { 0.0 }).collect();
        let mk = |v: Vec<f64>, s: &[usize]| -> Result<Tensor> {
            Ok(Tensor::from_vec(v, s, device)?.to_dtype(dtype)?)
        };
        Ok(MotionBatch {
            root: mk(root, &[b, t, 3])?,
            pose: mk(pose, &[b, t, NUM_JOINTS, 6])?,
            shape: mk(shape, &[b, NUM_BETAS])?,
            root_mask: mk(mask, &[b])?,
        })
    }

    /// Splits `(B,T,157)` parameter rows; per-frame shape rows are averaged.
    pub fn from_params(params: &Tensor, root_mask: Tensor) -> Result<Self> {
        let (b, t, d) = params.dims3()?;
        if d != PARAM_DIM {
            return Err(VmpError::Shape(format!("expected {PARAM_DIM} params per frame, got {d}")));
        }
        Ok(MotionBatch {
            root: params.narrow(2, 0, 3)?,
            pose: params.narrow(2, 3, NUM_JOINTS * 6)?.reshape((b, t, NUM_JOINTS, 6))?,
            shape: params.narrow(2, 3 + NUM_JOINTS * 6, NUM_BETAS)?.mean(1)?,
            root_mask,
        })
    }

    /// `(B,T,157)` rows with the clip shape repeated on every frame.
    pub fn to_params(&self) -> Result<Tensor> {
        let (b, t) = (self.batch_size()?, self.clip_len()?);
        let shape = self.shape.unsqueeze(1)?.broadcast_as((b, t, NUM_BETAS))?;
        Ok(Tensor::cat(
            &[
                self.root.clone(),
                self.pose.reshape((b, t, NUM_JOINTS * 6))?,
                shape.contiguous()?,
            ],
            D::Minus1,
        )?)
    }

    pub fn batch_size(&self) -> Result<usize> {
        Ok(self.root.dim(0)?)
    }

    pub fn clip_len(&self) -> Result<usize> {
        Ok(self.root.dim(1)?)
    }

    /// Frame-flattened views for the body model: root `(B*T,3)`,
    /// pose `(B*T,24,6)`, shape `(B*T,10)`.
    pub fn frames(&self) -> Result<(Tensor, Tensor, Tensor)> {
        let (b, t) = (self.batch_size()?, self.clip_len()?);
        let n = b * t;
        let shape = self
            .shape
            .unsqueeze(1)?
            .broadcast_as((b, t, NUM_BETAS))?
            .contiguous()?
            .reshape((n, NUM_BETAS))?;
        Ok((
            self.root.reshape((n, 3))?,
            self.pose.reshape((n, NUM_JOINTS, 6))?,
            shape,
        ))
    }

    pub fn without_root(&self) -> Result<Self> {
        Ok(MotionBatch {
            root: self.root.zeros_like()?,
            ..self.clone()
        })
    }

    pub fn detach(&self) -> Self {
        MotionBatch {
            root: self.root.detach(),
            pose: self.pose.detach(),
            shape: self.shape.detach(),
            root_mask: self.root_mask.detach(),
        }
    }

    pub fn to_clips(&self, fps: f64) -> Result<Vec<MotionClip>> {
        let params: Vec<Vec<Vec<f64>>> = self.to_params()?.to_dtype(DType::F64)?.to_vec3()?;
        let mask: Vec<f64> = self.root_mask.to_dtype(DType::F64)?.to_vec1()?;
        params
            .iter()
            .zip(mask)
            .map(|(rows, m)| {
                let flat: Vec<f64> = rows.iter().flatten().copied().collect();
                MotionClip::from_params(&flat, fps, m > 0.5)
            })
            .collect()
    }
}
