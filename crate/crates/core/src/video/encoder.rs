use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use super::VideoClip;
use crate::error::{Result, VmpError};
use crate::losses::CameraTensors;
use crate::nn::{leaky_relu, sinusoidal_positions, softmax_last, Conv2d, EncoderLayer, Init, LayerNorm, Linear, VarBuilder};
use crate::prior::GaussianTensors;

pub const PYRAMID_LEVELS: usize = 3;
/// Token grid side per pyramid level after pooling.
pub const LEVEL_GRID: [usize; PYRAMID_LEVELS] = [4, 2, 1];
pub const TOKENS_PER_FRAME: usize = 16 + 4 + 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VideoConfig {
    pub image_size: usize,
    pub stem_width: usize,
    /// Channel widths of the three pyramid levels.
    pub widths: [usize; PYRAMID_LEVELS],
    pub ste_dim: usize,
    pub ste_heads: usize,
    /// Number of (spatial, temporal) block pairs.
    pub ste_pairs: usize,
    pub ste_ff: usize,
    pub feature_dim: usize,
    pub latent_dim: usize,
    pub clip_len: usize,
    pub positional_encoding: bool,
    pub init_seed: u64,
}

impl Default for VideoConfig {
    fn default() -> Self {
        VideoConfig {
            image_size: 64,
            stem_width: 16,
            widths: [32, 64, 128],
            ste_dim: 128,
            ste_heads: 4,
            ste_pairs: 2,
            ste_ff: 256,
            feature_dim: 256,
            latent_dim: 256,
            clip_len: 16,
            positional_encoding: true,
            init_seed: 1,
        }
    }
}

impl VideoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0 || self.image_size % 16 != 0 {
            return Err(VmpError::Invalid(format!(
                "image_size must be a positive multiple of 16, got {}",
                self.image_size
            )));
        }
        if self.ste_heads == 0 || self.ste_dim % self.ste_heads != 0 {
            return Err(VmpError::Invalid("ste_dim must be divisible by ste_heads".into()));
        }
        let dims = [self.stem_width, self.ste_dim, self.ste_ff, self.feature_dim, self.latent_dim, self.clip_len];
        if dims.iter().chain(&self.widths).any(|d| *d == 0) {
            return Err(VmpError::Invalid("video encoder dimensions must be positive".into()));
        }
        Ok(())
    }

    /// Spatial side of each pyramid level.
    pub fn level_sizes(&self) -> [usize; PYRAMID_LEVELS] {
        [self.image_size / 4, self.image_size / 8, self.image_size / 16]
    }
}

/// Per-frame feature maps `(N, C_l, H_l, W_l)` for `N` frames.
#[derive(Debug, Clone)]
pub struct FeaturePyramid {
    pub levels: [Tensor; PYRAMID_LEVELS],
}

/// High-to-low strided CNN standing in for a multi-resolution backbone.
pub struct Backbone {
    stem: Conv2d,
    stages: [Conv2d; PYRAMID_LEVELS],
    image_size: usize,
}

impl Backbone {
    pub fn new(vb: &mut VarBuilder, cfg: &VideoConfig) -> Result<Self> {
        let stem = Conv2d::new(&mut vb.pp("stem"), 1, cfg.stem_width, 3, 2, 1)?;
        let ins = [cfg.stem_width, cfg.widths[0], cfg.widths[1]];
        let mut stages = Vec::with_capacity(PYRAMID_LEVELS);
        for l in 0..PYRAMID_LEVELS {
            stages.push(Conv2d::new(&mut vb.pp(format!("stage{l}")), ins[l], cfg.widths[l], 3, 2, 1)?);
        }
        Ok(Backbone {
            stem,
            stages: stages.try_into().expect("three stages"),
            image_size: cfg.image_size,
        })
    }

    /// `frames`: `(N, 1, H, W)` with pixel values in `[0, 1]`.
    pub fn forward(&self, frames: &Tensor) -> Result<FeaturePyramid> {
        let (_, c, h, w) = frames.dims4()?;
        if c != 1 || h != self.image_size || w != self.image_size {
            return Err(VmpError::Shape(format!(
                "backbone expects (N, 1, {s}, {s}) frames, got (N, {c}, {h}, {w})",
                s = self.image_size
            )));
        }
        let mut x = leaky_relu(&self.stem.forward(frames)?, 0.1)?;
        let mut levels = Vec::with_capacity(PYRAMID_LEVELS);
        for stage in &self.stages {
            x = leaky_relu(&stage.forward(&x)?, 0.1)?;
            levels.push(x.clone());
        }
        Ok(FeaturePyramid {
            levels: levels.try_into().expect("three levels"),
        })
    }
}

/// Mean-pools `(N, C, H, W)` to `(N, g*g, C)` tokens.
fn pool_tokens(x: &Tensor, grid: usize) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let (kh, kw) = (h / grid, w / grid);
    let pooled = x
        .reshape((n, c, grid, kh, grid, kw))?
        .mean(5)?
        .mean(3)?
        .reshape((n, c, grid * grid))?;
    Ok(pooled.transpose(1, 2)?.contiguous()?)
}

/// Alternating spatial (within frame) and temporal (across frames) attention.
pub struct SteEncoder {
    level_proj: Vec<Linear>,
    token_norm: LayerNorm,
    token_embed: Tensor,
    blocks: Vec<(EncoderLayer, EncoderLayer)>,
    out: Linear,
    dim: usize,
    positional_encoding: bool,
}

impl SteEncoder {
    pub fn new(vb: &mut VarBuilder, cfg: &VideoConfig) -> Result<Self> {
        let mut level_proj = Vec::with_capacity(PYRAMID_LEVELS);
        for (l, w) in cfg.widths.iter().enumerate() {
            level_proj.push(Linear::new(&mut vb.pp(format!("proj{l}")), *w, cfg.ste_dim)?);
        }
        let token_norm = LayerNorm::new(&mut vb.pp("token_norm"), cfg.ste_dim)?;
        let token_embed = vb.var("token_embed", &[TOKENS_PER_FRAME, cfg.ste_dim], Init::Normal(0.02))?;
        let mut blocks = Vec::with_capacity(cfg.ste_pairs);
        for i in 0..cfg.ste_pairs {
            let s = EncoderLayer::new(&mut vb.pp(format!("spatial{i}")), cfg.ste_dim, cfg.ste_heads, cfg.ste_ff)?;
            let t = EncoderLayer::new(&mut vb.pp(format!("temporal{i}")), cfg.ste_dim, cfg.ste_heads, cfg.ste_ff)?;
            blocks.push((s, t));
        }
        Ok(SteEncoder {
            level_proj,
            token_norm,
            token_embed,
            blocks,
            out: Linear::new(&mut vb.pp("out"), cfg.ste_dim, cfg.feature_dim)?,
            dim: cfg.ste_dim,
            positional_encoding: cfg.positional_encoding,
        })
    }

    /// Pyramids of `B*T` frames to per-frame features `(B, T, feature_dim)`.
    pub fn forward(&self, pyramid: &FeaturePyramid, b: usize, t: usize) -> Result<Tensor> {
        let n = pyramid.levels[0].dim(0)?;
        if n != b * t {
            return Err(VmpError::Shape(format!("{n} frames do not form {b} clips of {t}")));
        }
        let mut tokens = Vec::with_capacity(PYRAMID_LEVELS);
        for (l, level) in pyramid.levels.iter().enumerate() {
            tokens.push(self.level_proj[l].forward(&pool_tokens(level, LEVEL_GRID[l])?)?);
        }
        let k = TOKENS_PER_FRAME;
        let d = self.dim;
        let mut x = self
            .token_norm
            .forward(&Tensor::cat(&tokens, 1)?)?
            .broadcast_add(&self.token_embed)?;
        if self.positional_encoding {
            let pe = sinusoidal_positions(t, d, x.device(), x.dtype())?;
            x = x
                .reshape((b, t, k, d))?
                .broadcast_add(&pe.reshape((1, t, 1, d))?)?
                .reshape((n, k, d))?;
        }
        for (spatial, temporal) in &self.blocks {
            x = spatial.forward(&x)?;
            let xt = x
                .reshape((b, t, k, d))?
                .transpose(1, 2)?
                .contiguous()?
                .reshape((b * k, t, d))?;
            let xt = temporal.forward(&xt)?;
            x = xt
                .reshape((b, k, t, d))?
                .transpose(1, 2)?
                .contiguous()?
                .reshape((n, k, d))?;
        }
        let per_frame = x.mean(1)?.reshape((b, t, d))?;
        self.out.forward(&per_frame)
    }
}

/// Attention pooling over time followed by the mean and log-variance heads.
pub struct DistributionHead {
    score: Linear,
    mu: Linear,
    log_var: Linear,
}

impl DistributionHead {
    pub fn new(vb: &mut VarBuilder, feature_dim: usize, latent_dim: usize) -> Result<Self> {
        Ok(DistributionHead {
            score: Linear::new(&mut vb.pp("score"), feature_dim, 1)?,
            mu: Linear::new(&mut vb.pp("mu"), feature_dim, latent_dim)?,
            log_var: Linear::new(&mut vb.pp("log_var"), feature_dim, latent_dim)?,
        })
    }

    /// Attention-pooled clip vector `(B, F)` from features `(B, T, F)`.
    pub fn pool(&self, features: &Tensor) -> Result<Tensor> {
        let (b, t, _) = features.dims3()?;
        let weights = softmax_last(&self.score.forward(features)?.reshape((b, t))?)?;
        Ok(weights.unsqueeze(2)?.broadcast_mul(features)?.sum(1)?)
    }

    pub fn forward(&self, features: &Tensor) -> Result<GaussianTensors> {
        let pooled = self.pool(features)?;
        Ok(GaussianTensors {
            mu: self.mu.forward(&pooled)?,
            log_var: self.log_var.forward(&pooled)?,
        })
    }
}

/// Linear head on time-averaged features emitting `(log s, c_x, c_y)`.
pub struct CameraHead {
    linear: Linear,
}

impl CameraHead {
    pub fn new(vb: &mut VarBuilder, feature_dim: usize) -> Result<Self> {
        let bound = 1.0 / (feature_dim as f64).sqrt();
        Ok(CameraHead {
            linear: Linear::with_init(vb, feature_dim, 3, Init::Uniform(0.1 * bound), Init::Const(0.0))?,
        })
    }

    pub fn forward(&self, features: &Tensor) -> Result<CameraTensors> {
        let out = self.linear.forward(&features.mean(1)?)?;
        Ok(CameraTensors {
            scale: out.narrow(1, 0, 1)?.squeeze(1)?.exp()?,
            center: out.narrow(1, 1, 2)?,
        })
    }
}

/// Stacks clip frames into `(B*T, 1, H, W)`.
pub fn frames_tensor(videos: &[&VideoClip], device: &Device, dtype: DType) -> Result<Tensor> {
    let first = videos
        .first()
        .and_then(|v| v.frames.first())
        .ok_or_else(|| VmpError::Invalid("no frames to encode".into()))?;
    let (h, w) = (first.height, first.width);
    let t = videos[0].len();
    let mut data = Vec::with_capacity(videos.len() * t * h * w);
    for v in videos {
        if v.len() != t {
            return Err(VmpError::Shape("videos in a batch must share T".into()));
        }
        for f in &v.frames {
            if f.height != h || f.width != w {
                return Err(VmpError::Shape("frames in a batch must share size".into()));
            }
            data.extend_from_slice(&f.data);
        }
    }
    Ok(Tensor::from_vec(data, (videos.len() * t, 1, h, w), device)?.to_dtype(dtype)?)
}
