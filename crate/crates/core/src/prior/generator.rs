use candle_core::Tensor;

use super::PriorConfig;
use crate::error::{Result, VmpError};
use crate::nn::{leaky_relu, sinusoidal_positions, FeedForward, Init, Linear, SelfAttention, VarBuilder};

pub const ADAIN_EPS: f64 = 1e-5;
const MAPPING_SLOPE: f64 = 0.2;

/// Adaptive instance normalization over the time axis.
///
/// `features (B,T,C)` are normalized per clip and channel to zero mean and
/// unit variance across time, then scaled by `gamma (B,C)` and shifted by
/// `delta (B,C)`.
pub fn adain(features: &Tensor, gamma: &Tensor, delta: &Tensor) -> Result<Tensor> {
    let t = features.dim(1)?;
    if t < 2 {
        return Err(VmpError::Shape(format!("adain needs at least 2 frames, got {t}")));
    }
    let mean = features.mean_keepdim(1)?;
    let centered = features.broadcast_sub(&mean)?;
    let var = centered.sqr()?.mean_keepdim(1)?;
    let normed = centered.broadcast_div(&(var + ADAIN_EPS)?.sqrt()?)?;
    Ok(normed
        .broadcast_mul(&gamma.unsqueeze(1)?)?
        .broadcast_add(&delta.unsqueeze(1)?)?)
}

/// Z -> W mapping: `depth` fully connected layers with leaky ReLU between them.
#[derive(Clone, Debug)]
pub struct MappingNetwork {
    layers: Vec<Linear>,
}

impl MappingNetwork {
    pub fn new(vb: &mut VarBuilder, dim: usize, depth: usize) -> Result<Self> {
        let layers = (0..depth)
            .map(|i| Linear::new(&mut vb.pp(format!("fc{i}")), dim, dim))
            .collect::<Result<Vec<_>>>()?;
        Ok(MappingNetwork { layers })
    }

    pub fn forward(&self, z: &Tensor) -> Result<Tensor> {
        let mut h = z.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            if i > 0 {
                h = leaky_relu(&h, MAPPING_SLOPE)?;
            }
            h = layer.forward(&h)?;
        }
        Ok(h)
    }
}

/// Style-conditioned normalization: two affine heads of `w` give
/// `(gamma, delta)`; the gamma head's bias starts at 1.
#[derive(Clone, Debug)]
pub struct AdaIn {
    gamma: Linear,
    delta: Linear,
}

impl AdaIn {
    pub fn new(vb: &mut VarBuilder, style_dim: usize, channels: usize) -> Result<Self> {
        let bound = 1.0 / (style_dim as f64).sqrt();
        Ok(AdaIn {
            gamma: Linear::with_init(&mut vb.pp("gamma"), style_dim, channels, Init::Uniform(bound), Init::Const(1.0))?,
            delta: Linear::with_init(&mut vb.pp("delta"), style_dim, channels, Init::Uniform(bound), Init::Const(0.0))?,
        })
    }

    pub fn modulation(&self, w: &Tensor) -> Result<(Tensor, Tensor)> {
        Ok((self.gamma.forward(w)?, self.delta.forward(w)?))
    }

    pub fn forward(&self, x: &Tensor, w: &Tensor) -> Result<Tensor> {
        let (g, d) = self.modulation(w)?;
        adain(x, &g, &d)
    }
}

/// Transformer block whose two normalizations are AdaIN layers.
#[derive(Clone, Debug)]
pub struct DecoderBlock {
    attn: SelfAttention,
    norm1: AdaIn,
    ff: FeedForward,
    norm2: AdaIn,
}

impl DecoderBlock {
    pub fn new(vb: &mut VarBuilder, dim: usize, heads: usize, ff_dim: usize) -> Result<Self> {
        Ok(DecoderBlock {
            attn: SelfAttention::new(&mut vb.pp("attn"), dim, heads)?,
            norm1: AdaIn::new(&mut vb.pp("adain1"), dim, dim)?,
            ff: FeedForward::new(&mut vb.pp("ff"), dim, ff_dim)?,
            norm2: AdaIn::new(&mut vb.pp("adain2"), dim, dim)?,
        })
    }

    pub fn forward(&self, x: &Tensor, w: &Tensor) -> Result<Tensor> {
        let x = self.norm1.forward(&(x + self.attn.forward(x)?)?, w)?;
        self.norm2.forward(&(&x + self.ff.forward(&x)?)?, w)
    }
}

/// The motion generator: mapping network, learned per-timestep queries
/// plus sinusoidal positions, AdaIN transformer blocks, linear output head.
#[derive(Clone, Debug)]
pub struct MotionGenerator {
    mapping: MappingNetwork,
    queries: Tensor,
    positions: Tensor,
    blocks: Vec<DecoderBlock>,
    head: Linear,
}

impl MotionGenerator {
    pub fn new(vb: &mut VarBuilder, cfg: &PriorConfig) -> Result<Self> {
        let l = cfg.latent_dim;
        let mapping = MappingNetwork::new(&mut vb.pp("mapping"), l, cfg.mapping_depth)?;
        let queries = vb.var("queries", &[cfg.clip_len, l], Init::Normal(1.0))?;
        let positions = sinusoidal_positions(cfg.clip_len, l, vb.device(), vb.dtype())?;
        let blocks = (0..cfg.n_layers)
            .map(|i| DecoderBlock::new(&mut vb.pp(format!("block{i}")), l, cfg.n_heads, cfg.ff_dim))
            .collect::<Result<Vec<_>>>()?;
        let head = Linear::new(&mut vb.pp("head"), l, cfg.input_dim)?;
        Ok(MotionGenerator {
            mapping,
            queries,
            positions,
            blocks,
            head,
        })
    }

    pub fn map_latent(&self, z: &Tensor) -> Result<Tensor> {
        self.mapping.forward(z)
    }

    /// `z (B, L)` to normalized parameter rows `(B, T, 157)`.
    pub fn forward(&self, z: &Tensor) -> Result<Tensor> {
        let w = self.map_latent(z)?;
        let b = z.dim(0)?;
        let (t, l) = self.queries.dims2()?;
        let q = (&self.queries + &self.positions)?;
        let mut h = q.unsqueeze(0)?.broadcast_as((b, t, l))?.contiguous()?;
        for block in &self.blocks {
            h = block.forward(&h, &w)?;
        }
        self.head.forward(&h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};

    #[test]
    fn adain_unit_gamma_is_instance_norm() {
        let x = Tensor::new(&[[[1.0f64, 10.0], [3.0, 10.0], [5.0, 13.0]]], &Device::Cpu).unwrap();
        let g = Tensor::ones((1, 2), DType::F64, &Device::Cpu).unwrap();
        let d = Tensor::zeros((1, 2), DType::F64, &Device::Cpu).unwrap();
        let y: Vec<Vec<f64>> = adain(&x, &g, &d).unwrap().squeeze(0).unwrap().to_vec2().unwrap();
        let var0: f64 = 8.0 / 3.0;
        assert!((y[0][0] + 2.0 / (var0 + ADAIN_EPS).sqrt()).abs() < 1e-12);
        assert!((y[1][0]).abs() < 1e-12);
        assert!((y[2][0] - 2.0 / (var0 + ADAIN_EPS).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn adain_zero_gamma_is_constant_delta() {
        let x = Tensor::new(&[[[1.0f64, -2.0], [4.0, 7.0], [0.5, 1.0]]], &Device::Cpu).unwrap();
        let g = Tensor::zeros((1, 2), DType::F64, &Device::Cpu).unwrap();
        let d = Tensor::new(&[[0.75f64, -3.0]], &Device::Cpu).unwrap();
        let y: Vec<Vec<f64>> = adain(&x, &g, &d).unwrap().squeeze(0).unwrap().to_vec2().unwrap();
        for row in y {
            assert_eq!(row, vec![0.75, -3.0]);
        }
    }

    #[test]
    fn adain_needs_two_frames() {
        let x = Tensor::ones((1, 1, 4), DType::F64, &Device::Cpu).unwrap();
        let g = Tensor::ones((1, 4), DType::F64, &Device::Cpu).unwrap();
        assert!(adain(&x, &g, &g).is_err());
    }

    #[test]
    fn adain_constant_channel_is_stable() {
        let x = Tensor::ones((1, 5, 3), DType::F64, &Device::Cpu).unwrap();
        let g = Tensor::ones((1, 3), DType::F64, &Device::Cpu).unwrap();
        let d = Tensor::new(&[[1.0f64, 2.0, 3.0]], &Device::Cpu).unwrap();
        let y: Vec<Vec<Vec<f64>>> = adain(&x, &g, &d).unwrap().to_vec3().unwrap();
        assert_eq!(y[0][4], vec![1.0, 2.0, 3.0]);
    }
}
