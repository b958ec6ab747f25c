//! Stage-I transformer VAE: motion encoder and style-based motion generator.

mod encoder;
mod generator;
mod model;

use candle_core::{Device, DType, Tensor};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::body::PARAM_DIM;
use crate::error::{Result, VmpError};

pub use encoder::MotionEncoder;
pub use generator::{adain, AdaIn, DecoderBlock, MappingNetwork, MotionGenerator, ADAIN_EPS};
pub use model::{MotionPrior, PRIOR_CHECKPOINT_KIND};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorConfig {
    pub latent_dim: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ff_dim: usize,
    pub mapping_depth: usize,
    pub clip_len: usize,
    pub input_dim: usize,
    pub fps: f64,
    pub init_seed: u64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            latent_dim: 256,
            n_layers: 4,
            n_heads: 4,
            ff_dim: 512,
            mapping_depth: 4,
            clip_len: 16,
            input_dim: PARAM_DIM,
            fps: 25.0,
            init_seed: 0,
        }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_heads == 0 || self.latent_dim % self.n_heads != 0 {
            return Err(VmpError::Invalid(format!(
                "latent_dim {} must be divisible by n_heads {}",
                self.latent_dim, self.n_heads
            )));
        }
        if self.clip_len < 2 {
            return Err(VmpError::Invalid("clip_len must be at least 2".into()));
        }
        if self.input_dim != PARAM_DIM {
            return Err(VmpError::Invalid(format!("input_dim must be {PARAM_DIM}")));
        }
        if self.n_layers == 0 || self.mapping_depth == 0 || self.ff_dim == 0 {
            return Err(VmpError::Invalid("layer counts and widths must be positive".into()));
        }
        if !(self.fps > 0.0) {
            return Err(VmpError::Invalid("fps must be positive".into()));
        }
        Ok(())
    }
}

/// Diagonal Gaussian posterior; `sigma = exp(log_var / 2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianParams {
    pub mu: Vec<f64>,
    pub log_var: Vec<f64>,
}

impl GaussianParams {
    pub fn new(mu: Vec<f64>, log_var: Vec<f64>) -> Result<Self> {
        if mu.len() != log_var.len() {
            return Err(VmpError::Shape("mu and log_var lengths differ".into()));
        }
        if mu.iter().chain(&log_var).any(|v| !v.is_finite()) {
            return Err(VmpError::Invalid("gaussian parameters must be finite".into()));
        }
        Ok(GaussianParams { mu, log_var })
    }

    pub fn standard(dim: usize) -> Self {
        GaussianParams {
            mu: vec![0.0; dim],
            log_var: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn sigma(&self) -> Vec<f64> {
        self.log_var.iter().map(|l| (0.5 * l).exp()).collect()
    }

    pub fn mean(&self) -> LatentCode {
        LatentCode { z: self.mu.clone() }
    }

    /// Closed-form `KL(q || N(0, I))`.
    pub fn kl(&self) -> f64 {
        0.5 * self
            .mu
            .iter()
            .zip(&self.log_var)
            .map(|(m, l)| m * m + l.exp() - 1.0 - l)
            .sum::<f64>()
    }
}

/// Batched posterior tensors `(B, L)`.
#[derive(Debug, Clone)]
pub struct GaussianTensors {
    pub mu: Tensor,
    pub log_var: Tensor,
}

impl GaussianTensors {
    pub fn from_params(params: &[GaussianParams], device: &Device, dtype: DType) -> Result<Self> {
        let b = params.len();
        let l = params.first().map_or(0, |p| p.dim());
        let mu: Vec<f64> = params.iter().flat_map(|p| p.mu.iter().copied()).collect();
        let lv: Vec<f64> = params.iter().flat_map(|p| p.log_var.iter().copied()).collect();
        Ok(GaussianTensors {
            mu: Tensor::from_vec(mu, (b, l), device)?.to_dtype(dtype)?,
            log_var: Tensor::from_vec(lv, (b, l), device)?.to_dtype(dtype)?,
        })
    }

    pub fn to_params(&self) -> Result<Vec<GaussianParams>> {
        let mu: Vec<Vec<f64>> = self.mu.to_dtype(DType::F64)?.to_vec2()?;
        let lv: Vec<Vec<f64>> = self.log_var.to_dtype(DType::F64)?.to_vec2()?;
        mu.into_iter()
            .zip(lv)
            .map(|(m, l)| GaussianParams::new(m, l))
            .collect()
    }

    /// `z = mu + sigma * eps` with `eps ~ N(0, I)` drawn from `rng`;
    /// differentiable in `mu` and `log_var`.
    pub fn reparameterize<R: Rng>(&self, rng: &mut R) -> Result<Tensor> {
        let eps = gaussian_tensor(self.mu.dims(), 1.0, rng, self.mu.device(), self.mu.dtype())?;
        let sigma = (&self.log_var * 0.5)?.exp()?;
        Ok((&self.mu + (sigma * eps)?)?)
    }
}

/// Point on the prior's latent space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentCode {
    pub z: Vec<f64>,
}

/// Output of the Z -> W mapping network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleCode {
    pub w: Vec<f64>,
}

pub fn reparameterize<R: Rng>(g: &GaussianParams, rng: &mut R) -> LatentCode {
    let z = g
        .mu
        .iter()
        .zip(&g.log_var)
        .map(|(m, l)| m + (0.5 * l).exp() * rng.sample::<f64, _>(StandardNormal))
        .collect();
    LatentCode { z }
}

/// `z ~ N(0, sigma_scale^2 I)`.
pub fn sample_prior<R: Rng>(rng: &mut R, dim: usize, sigma_scale: f64) -> Result<LatentCode> {
    if !(sigma_scale > 0.0) {
        return Err(VmpError::Invalid(format!("sigma_scale must be > 0, got {sigma_scale}")));
    }
    Ok(LatentCode {
        z: (0..dim)
            .map(|_| sigma_scale * rng.sample::<f64, _>(StandardNormal))
            .collect(),
    })
}

pub fn gaussian_tensor<R: Rng>(
    dims: &[usize],
    std: f64,
    rng: &mut R,
    device: &Device,
    dtype: DType,
) -> Result<Tensor> {
    let n: usize = dims.iter().product();
    let v: Vec<f64> = (0..n).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect();
    Ok(Tensor::from_vec(v, dims, device)?.to_dtype(dtype)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn kl_closed_form_values() {
        assert_eq!(GaussianParams::standard(256).kl(), 0.0);
        let g = GaussianParams::new(vec![1.0; 8], vec![0.0; 8]).unwrap();
        assert!((g.kl() - 4.0).abs() < 1e-15);
    }

    #[test]
    fn reparameterize_collapses_with_tiny_sigma() {
        let g = GaussianParams::new(vec![0.5, -1.25, 3.0], vec![-80.0; 3]).unwrap();
        let z = reparameterize(&g, &mut ChaCha8Rng::seed_from_u64(1));
        for (a, b) in z.z.iter().zip(&g.mu) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn reparameterize_seeded() {
        let g = GaussianParams::new(vec![0.0; 16], vec![0.3; 16]).unwrap();
        let a = reparameterize(&g, &mut ChaCha8Rng::seed_from_u64(9));
        let b = reparameterize(&g, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }

    #[test]
    fn tensor_reparameterize_matches_scalar_route() {
        let g = GaussianParams::new(vec![0.1, 0.2, -0.3], vec![0.0, -1.0, 0.5]).unwrap();
        let gt = GaussianTensors::from_params(&[g.clone()], &Device::Cpu, DType::F64).unwrap();
        let zt: Vec<Vec<f64>> = gt.reparameterize(&mut ChaCha8Rng::seed_from_u64(4)).unwrap().to_vec2().unwrap();
        let z = reparameterize(&g, &mut ChaCha8Rng::seed_from_u64(4));
        for (a, b) in zt[0].iter().zip(&z.z) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn sample_prior_rejects_nonpositive_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_prior(&mut rng, 4, 0.0).is_err());
        let a = sample_prior(&mut ChaCha8Rng::seed_from_u64(5), 8, 1.0).unwrap();
        let b = sample_prior(&mut ChaCha8Rng::seed_from_u64(5), 8, 1.0).unwrap();
        assert_eq!(a, b);
        let tiny = sample_prior(&mut rng, 8, 1e-300).unwrap();
        assert!(tiny.z.iter().all(|v| v.abs() < 1e-290));
    }

    #[test]
    fn config_validation() {
        PriorConfig::default().validate().unwrap();
        let bad = PriorConfig { n_heads: 3, ..Default::default() };
        assert!(bad.validate().is_err());
        let short = PriorConfig { clip_len: 1, ..Default::default() };
        assert!(short.validate().is_err());
    }
}
