//! Stage-II video encoder: rendered frames to a posterior over prior latents.

mod clip;
mod encoder;

use std::path::Path;

use candle_core::{DType, Device, Tensor};
use rand::Rng;

pub use clip::{GrayFrame, VideoClip};
pub use encoder::{
    frames_tensor, Backbone, CameraHead, DistributionHead, FeaturePyramid, SteEncoder, VideoConfig, LEVEL_GRID,
    PYRAMID_LEVELS, TOKENS_PER_FRAME,
};

use crate::body::{CameraParams, MotionClip};
use crate::checkpoint::Checkpoint;
use crate::error::{Result, VmpError};
use crate::losses::CameraTensors;
use crate::nn::ParamStore;
use crate::prior::{GaussianParams, GaussianTensors, LatentCode, MotionPrior};

pub const CAPTURE_CHECKPOINT_KIND: &str = "vmp-capture";

/// Everything the encoder produces for a batch of clips.
pub struct EncoderOutput {
    pub features: Tensor,
    pub posterior: GaussianTensors,
    pub camera: CameraTensors,
}

#[derive(Debug, Clone)]
pub struct Capture {
    pub clip: MotionClip,
    pub camera: CameraParams,
    pub posterior: GaussianParams,
}

pub struct VideoEncoder {
    pub config: VideoConfig,
    store: ParamStore,
    backbone: Backbone,
    ste: SteEncoder,
    head: DistributionHead,
    camera: CameraHead,
}

impl VideoEncoder {
    pub fn new(config: VideoConfig, device: &Device, dtype: DType) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new(device.clone(), dtype);
        let (backbone, ste, head, camera) = {
            let mut root = store.root(config.init_seed);
            (
                Backbone::new(&mut root.pp("backbone"), &config)?,
                SteEncoder::new(&mut root.pp("ste"), &config)?,
                DistributionHead::new(&mut root.pp("head"), config.feature_dim, config.latent_dim)?,
                CameraHead::new(&mut root.pp("camera"), config.feature_dim)?,
            )
        };
        Ok(VideoEncoder {
            config,
            store,
            backbone,
            ste,
            head,
            camera,
        })
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn vars(&self) -> Vec<candle_core::Var> {
        self.store.vars_with_prefix("")
    }

    pub fn extract_features(&self, frames: &Tensor) -> Result<FeaturePyramid> {
        self.backbone.forward(frames)
    }

    pub fn ste_encode(&self, pyramid: &FeaturePyramid, b: usize, t: usize) -> Result<Tensor> {
        self.ste.forward(pyramid, b, t)
    }

    pub fn to_distribution(&self, features: &Tensor) -> Result<GaussianTensors> {
        self.head.forward(features)
    }

    pub fn estimate_camera(&self, features: &Tensor) -> Result<CameraTensors> {
        self.camera.forward(features)
    }

    pub fn forward(&self, videos: &[&VideoClip]) -> Result<EncoderOutput> {
        let t = videos.first().map_or(0, |v| v.len());
        if t != self.config.clip_len {
            return Err(VmpError::Shape(format!(
                "encoder expects {} frames, video has {t}",
                self.config.clip_len
            )));
        }
        let frames = frames_tensor(videos, self.store.device(), self.store.dtype())?;
        let pyramid = self.extract_features(&frames)?;
        let features = self.ste_encode(&pyramid, videos.len(), t)?;
        Ok(EncoderOutput {
            posterior: self.to_distribution(&features)?,
            camera: self.estimate_camera(&features)?,
            features,
        })
    }

    fn check_prior(&self, prior: &MotionPrior) -> Result<()> {
        if prior.config.latent_dim != self.config.latent_dim || prior.config.clip_len != self.config.clip_len {
            return Err(VmpError::Shape(format!(
                "encoder (latent {}, T {}) does not match prior (latent {}, T {})",
                self.config.latent_dim, self.config.clip_len, prior.config.latent_dim, prior.config.clip_len
            )));
        }
        Ok(())
    }

    /// Deterministic capture through the posterior mean.
    pub fn capture(&self, video: &VideoClip, prior: &MotionPrior) -> Result<Capture> {
        self.capture_inner(video, prior, None::<&mut rand_chacha::ChaCha8Rng>)
    }

    /// Capture with `z` drawn from the posterior.
    pub fn capture_sampled<R: Rng>(&self, video: &VideoClip, prior: &MotionPrior, rng: &mut R) -> Result<Capture> {
        self.capture_inner(video, prior, Some(rng))
    }

    fn capture_inner<R: Rng>(&self, video: &VideoClip, prior: &MotionPrior, rng: Option<&mut R>) -> Result<Capture> {
        self.check_prior(prior)?;
        video.validate()?;
        let out = self.forward(&[video])?;
        let z = match rng {
            Some(rng) => out.posterior.reparameterize(rng)?,
            None => out.posterior.mu.clone(),
        };
        let z = z.to_dtype(prior.dtype())?.to_device(prior.device())?;
        let mut clip = prior.decode_batch(&z)?.to_clips(prior.config.fps)?.remove(0);
        clip.has_root = true;
        let scale: Vec<f64> = out.camera.scale.to_dtype(DType::F64)?.to_vec1()?;
        let center: Vec<Vec<f64>> = out.camera.center.to_dtype(DType::F64)?.to_vec2()?;
        Ok(Capture {
            clip,
            camera: CameraParams::new(scale[0], [center[0][0], center[0][1]])?,
            posterior: out.posterior.to_params()?.remove(0),
        })
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        Checkpoint::from_store(CAPTURE_CHECKPOINT_KIND, serde_json::to_value(&self.config)?, &self.store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    pub fn from_checkpoint(ck: &Checkpoint, device: &Device, dtype: DType) -> Result<Self> {
        if ck.kind != CAPTURE_CHECKPOINT_KIND {
            return Err(VmpError::Invalid(format!(
                "expected a {CAPTURE_CHECKPOINT_KIND} checkpoint, found {}",
                ck.kind
            )));
        }
        let config: VideoConfig = serde_json::from_value(ck.meta.clone())?;
        let enc = VideoEncoder::new(config, device, dtype)?;
        ck.load_into(&enc.store, "")?;
        Ok(enc)
    }

    pub fn load(path: impl AsRef<Path>, device: &Device, dtype: DType) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?, device, dtype)
    }
}

/// Decodes `steps` evenly spaced blends of `za` and `zb`, endpoints included.
///
/// Each step is decoded on its own so the endpoints match single decodes
/// bit for bit.
pub fn interpolate_latent(
    prior: &MotionPrior,
    za: &LatentCode,
    zb: &LatentCode,
    steps: usize,
) -> Result<Vec<MotionClip>> {
    if steps < 2 {
        return Err(VmpError::Invalid(format!("interpolation needs steps >= 2, got {steps}")));
    }
    if za.z.len() != zb.z.len() {
        return Err(VmpError::Shape("latent codes differ in length".into()));
    }
    (0..steps)
        .map(|i| {
            let alpha = i as f64 / (steps - 1) as f64;
            let z = za
                .z
                .iter()
                .zip(&zb.z)
                .map(|(a, b)| (1.0 - alpha) * a + alpha * b)
                .collect();
            prior.decode(&LatentCode { z })
        })
        .collect()
}

/// One encode/decode pass through the posterior mean.
pub fn rectify(noisy: &MotionClip, prior: &MotionPrior) -> Result<MotionClip> {
    prior.rectify(noisy)
}

/// Camera parameters per clip from batched tensors.
pub fn cameras_from_tensors(cam: &CameraTensors) -> Result<Vec<CameraParams>> {
    let s: Vec<f64> = cam.scale.to_dtype(DType::F64)?.to_vec1()?;
    let c: Vec<Vec<f64>> = cam.center.to_dtype(DType::F64)?.to_vec2()?;
    s.into_iter()
        .zip(c)
        .map(|(s, c)| CameraParams::new(s, [c[0], c[1]]))
        .collect()
}
