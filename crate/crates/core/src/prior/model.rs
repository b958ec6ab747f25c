use std::path::Path;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use super::{GaussianParams, GaussianTensors, LatentCode, MotionEncoder, MotionGenerator, PriorConfig, StyleCode};
use crate::batch::MotionBatch;
use crate::body::{MotionClip, PARAM_DIM};
use crate::checkpoint::Checkpoint;
use crate::error::{Result, VmpError};
use crate::nn::ParamStore;
use crate::normalize::Normalizer;

pub const PRIOR_CHECKPOINT_KIND: &str = "vmp-prior";
pub const ENCODER_PREFIX: &str = "encoder.";
pub const GENERATOR_PREFIX: &str = "generator.";

#[derive(Serialize, Deserialize)]
struct PriorMeta {
    config: PriorConfig,
    normalizer: Normalizer,
}

/// Encoder + generator with their parameter store and the normalization
/// statistics that map raw parameters to network units.
pub struct MotionPrior {
    pub config: PriorConfig,
    store: ParamStore,
    encoder: MotionEncoder,
    generator: MotionGenerator,
    normalizer: Normalizer,
    norm_mean: Tensor,
    norm_std: Tensor,
}

impl MotionPrior {
    pub fn new(config: PriorConfig, normalizer: Normalizer, device: &Device, dtype: DType) -> Result<Self> {
        config.validate()?;
        normalizer.validate()?;
        let mut store = ParamStore::new(device.clone(), dtype);
        let (encoder, generator) = {
            let mut root = store.root(config.init_seed);
            let encoder = MotionEncoder::new(&mut root.pp("encoder"), &config)?;
            let generator = MotionGenerator::new(&mut root.pp("generator"), &config)?;
            (encoder, generator)
        };
        let (norm_mean, norm_std) = normalizer.tensors(device, dtype)?;
        Ok(MotionPrior {
            config,
            store,
            encoder,
            generator,
            normalizer,
            norm_mean,
            norm_std,
        })
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn normalizer(&self) -> &Normalizer {
        &self.normalizer
    }

    pub fn device(&self) -> &Device {
        self.store.device()
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    pub fn encoder_vars(&self) -> Vec<candle_core::Var> {
        self.store.vars_with_prefix(ENCODER_PREFIX)
    }

    pub fn generator_vars(&self) -> Vec<candle_core::Var> {
        self.store.vars_with_prefix(GENERATOR_PREFIX)
    }

    /// SHA-256 of the generator weights (the frozen part in Stage II).
    pub fn generator_digest(&self) -> String {
        self.store.digest(GENERATOR_PREFIX)
    }

    pub fn digest(&self) -> String {
        self.store.digest("")
    }

    pub fn normalize(&self, params: &Tensor) -> Result<Tensor> {
        Ok(params.broadcast_sub(&self.norm_mean)?.broadcast_div(&self.norm_std)?)
    }

    pub fn denormalize(&self, params: &Tensor) -> Result<Tensor> {
        Ok(params.broadcast_mul(&self.norm_std)?.broadcast_add(&self.norm_mean)?)
    }

    /// Posterior for already-normalized parameter rows `(B, T, 157)`.
    pub fn encode_normalized(&self, x: &Tensor) -> Result<GaussianTensors> {
        self.encoder.forward(x)
    }

    pub fn encode_batch(&self, batch: &MotionBatch) -> Result<GaussianTensors> {
        self.encode_normalized(&self.normalize(&batch.to_params()?)?)
    }

    pub fn encode(&self, clip: &MotionClip) -> Result<GaussianParams> {
        self.check_len(clip)?;
        let batch = MotionBatch::from_clips(std::slice::from_ref(clip), self.device(), self.dtype())?;
        Ok(self.encode_batch(&batch)?.to_params()?.remove(0))
    }

    pub fn map_latent_batch(&self, z: &Tensor) -> Result<Tensor> {
        self.generator.map_latent(z)
    }

    pub fn map_latent(&self, z: &LatentCode) -> Result<StyleCode> {
        let w = self.generator.map_latent(&self.latent_tensor(std::slice::from_ref(z))?)?;
        Ok(StyleCode {
            w: w.squeeze(0)?.to_dtype(DType::F64)?.to_vec1()?,
        })
    }

    /// Raw (de-normalized) parameter rows `(B, T, 157)` for latents `(B, L)`.
    pub fn decode_params(&self, z: &Tensor) -> Result<Tensor> {
        self.denormalize(&self.generator.forward(z)?)
    }

    /// Decoded clips as a batch; per-frame shape rows are averaged.
    pub fn decode_batch(&self, z: &Tensor) -> Result<MotionBatch> {
        let params = self.decode_params(z)?;
        let mask = Tensor::ones(z.dim(0)?, self.dtype(), self.device())?;
        MotionBatch::from_params(&params, mask)
    }

    pub fn decode(&self, z: &LatentCode) -> Result<MotionClip> {
        let out = self.decode_many(std::slice::from_ref(z))?;
        Ok(out.into_iter().next().expect("one clip"))
    }

    pub fn decode_many(&self, zs: &[LatentCode]) -> Result<Vec<MotionClip>> {
        self.decode_batch(&self.latent_tensor(zs)?)?.to_clips(self.config.fps)
    }

    pub fn latent_tensor(&self, zs: &[LatentCode]) -> Result<Tensor> {
        let l = self.config.latent_dim;
        if zs.iter().any(|z| z.z.len() != l) {
            return Err(VmpError::Shape(format!("latent codes must have {l} entries")));
        }
        let flat: Vec<f64> = zs.iter().flat_map(|z| z.z.iter().copied()).collect();
        Ok(Tensor::from_vec(flat, (zs.len(), l), self.device())?.to_dtype(self.dtype())?)
    }

    /// One deterministic encode/decode pass through the posterior mean.
    pub fn rectify(&self, clip: &MotionClip) -> Result<MotionClip> {
        let g = self.encode(clip)?;
        let mut out = self.decode(&g.mean())?;
        out.fps = clip.fps;
        out.has_root = clip.has_root;
        Ok(out)
    }

    fn check_len(&self, clip: &MotionClip) -> Result<()> {
        if clip.len() != self.config.clip_len {
            return Err(VmpError::Shape(format!(
                "prior expects {} frames, clip has {}",
                self.config.clip_len,
                clip.len()
            )));
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let meta = serde_json::to_value(PriorMeta {
            config: self.config.clone(),
            normalizer: self.normalizer.clone(),
        })?;
        Checkpoint::from_store(PRIOR_CHECKPOINT_KIND, meta, &self.store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    pub fn from_checkpoint(ck: &Checkpoint, device: &Device, dtype: DType) -> Result<Self> {
        if ck.kind != PRIOR_CHECKPOINT_KIND {
            return Err(VmpError::Invalid(format!(
                "expected a {PRIOR_CHECKPOINT_KIND} checkpoint, found {}",
                ck.kind
            )));
        }
        let meta: PriorMeta = serde_json::from_value(ck.meta.clone())?;
        let prior = MotionPrior::new(meta.config, meta.normalizer, device, dtype)?;
        ck.load_into(&prior.store, "")?;
        Ok(prior)
    }

    pub fn load(path: impl AsRef<Path>, device: &Device, dtype: DType) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?, device, dtype)
    }

    pub fn param_dim(&self) -> usize {
        PARAM_DIM
    }
}
