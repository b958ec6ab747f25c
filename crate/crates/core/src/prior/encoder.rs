use candle_core::{Tensor, D};

use super::{GaussianTensors, PriorConfig};
use crate::error::{Result, VmpError};
use crate::nn::{sinusoidal_positions, EncoderLayer, Init, Linear, VarBuilder};

/// Embeds normalized per-frame parameters, prepends the learnable `mu_0` and
/// `sigma_0` tokens, adds sinusoidal positions (the two tokens take
/// positions 0 and 1) and reads the posterior off the token outputs.
#[derive(Clone, Debug)]
pub struct MotionEncoder {
    embed: Linear,
    mu_token: Tensor,
    sigma_token: Tensor,
    layers: Vec<EncoderLayer>,
    positions: Tensor,
    clip_len: usize,
    latent_dim: usize,
}

impl MotionEncoder {
    pub fn new(vb: &mut VarBuilder, cfg: &PriorConfig) -> Result<Self> {
        let l = cfg.latent_dim;
        let embed = Linear::new(&mut vb.pp("embed"), cfg.input_dim, l)?;
        let mu_token = vb.var("mu_token", &[l], Init::Normal(0.1))?;
        let sigma_token = vb.var("sigma_token", &[l], Init::Normal(0.1))?;
        let layers = (0..cfg.n_layers)
            .map(|i| EncoderLayer::new(&mut vb.pp(format!("layer{i}")), l, cfg.n_heads, cfg.ff_dim))
            .collect::<Result<Vec<_>>>()?;
        let positions = sinusoidal_positions(cfg.clip_len + 2, l, vb.device(), vb.dtype())?;
        Ok(MotionEncoder {
            embed,
            mu_token,
            sigma_token,
            layers,
            positions,
            clip_len: cfg.clip_len,
            latent_dim: l,
        })
    }

    /// `x`: normalized parameters `(B, T, 157)`.
    pub fn forward(&self, x: &Tensor) -> Result<GaussianTensors> {
        let (b, t, _) = x.dims3()?;
        if t != self.clip_len {
            return Err(VmpError::Shape(format!(
                "encoder expects clips of {} frames, got {t}",
                self.clip_len
            )));
        }
        let l = self.latent_dim;
        let emb = self.embed.forward(x)?;
        let tok = |p: &Tensor| -> Result<Tensor> { Ok(p.reshape((1, 1, l))?.broadcast_as((b, 1, l))?) };
        let seq = Tensor::cat(&[tok(&self.mu_token)?, tok(&self.sigma_token)?, emb], 1)?;
        let mut h = seq.broadcast_add(&self.positions.unsqueeze(0)?)?;
        for layer in &self.layers {
            h = layer.forward(&h)?;
        }
        Ok(GaussianTensors {
            mu: h.narrow(1, 0, 1)?.squeeze(1)?,
            log_var: h.narrow(1, 1, 1)?.squeeze(D::Minus2)?,
        })
    }
}
