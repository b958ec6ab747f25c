//! Small neural-network layer set over candle tensors.
//!
//! Parameters live in a [`ParamStore`] keyed by dotted names and are
//! initialized from a seeded generator, so two stores built with the same
//! seed hold bit-identical weights.

mod store;

use candle_core::{DType, Device, Tensor, D};

use crate::error::Result;

pub use store::{Init, ParamStore, VarBuilder};

pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    Ok((x.relu()? - (x.neg()?.relu()? * slope)?)?)
}

pub fn softmax_last(x: &Tensor) -> Result<Tensor> {
    Ok(candle_nn::ops::softmax(x, D::Minus1)?)
}

/// Sinusoidal positional table of shape `(len, dim)`.
pub fn sinusoidal_positions(len: usize, dim: usize, device: &Device, dtype: DType) -> Result<Tensor> {
    let mut table = vec![0.0f64; len * dim];
    for pos in 0..len {
        for i in 0..dim / 2 {
            let freq = (-(2.0 * i as f64) * (10000f64).ln() / dim as f64).exp();
            let angle = pos as f64 * freq;
            table[pos * dim + 2 * i] = angle.sin();
            table[pos * dim + 2 * i + 1] = angle.cos();
        }
    }
    Ok(Tensor::from_vec(table, (len, dim), device)?.to_dtype(dtype)?)
}

#[derive(Clone, Debug)]
pub struct Linear {
    weight: Tensor,
    bias: Tensor,
}

impl Linear {
    pub fn new(vb: &mut VarBuilder, in_dim: usize, out_dim: usize) -> Result<Self> {
        let bound = 1.0 / (in_dim as f64).sqrt();
        Self::with_init(vb, in_dim, out_dim, Init::Uniform(bound), Init::Uniform(bound))
    }

    pub fn with_init(vb: &mut VarBuilder, in_dim: usize, out_dim: usize, w: Init, b: Init) -> Result<Self> {
        Ok(Linear {
            weight: vb.var("weight", &[out_dim, in_dim], w)?,
            bias: vb.var("bias", &[out_dim], b)?,
        })
    }

    /// Applies to the last axis of an input of any rank.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let dims = x.dims().to_vec();
        let in_dim = *dims.last().unwrap_or(&0);
        let rows = x.elem_count() / in_dim.max(1);
        let y = x
            .reshape((rows, in_dim))?
            .matmul(&self.weight.t()?)?
            .broadcast_add(&self.bias)?;
        let mut out = dims;
        *out.last_mut().unwrap() = self.weight.dim(0)?;
        Ok(y.reshape(out)?)
    }
}

/// Layer normalization over the last axis.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    gamma: Tensor,
    beta: Tensor,
    eps: f64,
}

impl LayerNorm {
    pub fn new(vb: &mut VarBuilder, dim: usize) -> Result<Self> {
        Ok(LayerNorm {
            gamma: vb.var("gamma", &[dim], Init::Const(1.0))?,
            beta: vb.var("beta", &[dim], Init::Const(0.0))?,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        Ok(normed.broadcast_mul(&self.gamma)?.broadcast_add(&self.beta)?)
    }
}

#[derive(Clone, Debug)]
pub struct FeedForward {
    up: Linear,
    down: Linear,
}

impl FeedForward {
    pub fn new(vb: &mut VarBuilder, dim: usize, hidden: usize) -> Result<Self> {
        Ok(FeedForward {
            up: Linear::new(&mut vb.pp("up"), dim, hidden)?,
            down: Linear::new(&mut vb.pp("down"), hidden, dim)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.down.forward(&self.up.forward(x)?.gelu()?)
    }
}

/// Multi-head self-attention over the second-to-last axis of `(B, L, D)`.
#[derive(Clone, Debug)]
pub struct SelfAttention {
    q: Linear,
    k: Linear,
    v: Linear,
    out: Linear,
    heads: usize,
}

impl SelfAttention {
    pub fn new(vb: &mut VarBuilder, dim: usize, heads: usize) -> Result<Self> {
        assert!(heads > 0 && dim % heads == 0, "dim {dim} not divisible by {heads} heads");
        Ok(SelfAttention {
            q: Linear::new(&mut vb.pp("q"), dim, dim)?,
            k: Linear::new(&mut vb.pp("k"), dim, dim)?,
            v: Linear::new(&mut vb.pp("v"), dim, dim)?,
            out: Linear::new(&mut vb.pp("out"), dim, dim)?,
            heads,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, l, d) = x.dims3()?;
        let hd = d / self.heads;
        let split = |t: Tensor| -> Result<Tensor> {
            Ok(t.reshape((b, l, self.heads, hd))?.transpose(1, 2)?.contiguous()?)
        };
        let q = split(self.q.forward(x)?)?;
        let k = split(self.k.forward(x)?)?;
        let v = split(self.v.forward(x)?)?;
        let scores = (q.matmul(&k.transpose(2, 3)?.contiguous()?)? / (hd as f64).sqrt())?;
        let attn = softmax_last(&scores)?;
        let ctx = attn.matmul(&v)?.transpose(1, 2)?.contiguous()?.reshape((b, l, d))?;
        self.out.forward(&ctx)
    }
}

/// Post-norm transformer encoder layer.
#[derive(Clone, Debug)]
pub struct EncoderLayer {
    attn: SelfAttention,
    norm1: LayerNorm,
    ff: FeedForward,
    norm2: LayerNorm,
}

impl EncoderLayer {
    pub fn new(vb: &mut VarBuilder, dim: usize, heads: usize, ff_dim: usize) -> Result<Self> {
        Ok(EncoderLayer {
            attn: SelfAttention::new(&mut vb.pp("attn"), dim, heads)?,
            norm1: LayerNorm::new(&mut vb.pp("norm1"), dim)?,
            ff: FeedForward::new(&mut vb.pp("ff"), dim, ff_dim)?,
            norm2: LayerNorm::new(&mut vb.pp("norm2"), dim)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let x = self.norm1.forward(&(x + self.attn.forward(x)?)?)?;
        self.norm2.forward(&(&x + self.ff.forward(&x)?)?)
    }
}

/// 2D convolution with bias on `(N, C, H, W)`.
#[derive(Clone, Debug)]
pub struct Conv2d {
    weight: Tensor,
    bias: Tensor,
    stride: usize,
    padding: usize,
}

impl Conv2d {
    pub fn new(
        vb: &mut VarBuilder,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        // He init for the (leaky) ReLU stacks it feeds.
        let std = (2.0 / (in_ch * kernel * kernel) as f64).sqrt();
        Ok(Conv2d {
            weight: vb.var("weight", &[out_ch, in_ch, kernel, kernel], Init::Normal(std))?,
            bias: vb.var("bias", &[out_ch], Init::Const(0.0))?,
            stride,
            padding,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv2d(&self.weight, self.padding, self.stride, 1, 1)?;
        let out_ch = self.bias.dim(0)?;
        Ok(y.broadcast_add(&self.bias.reshape((1, out_ch, 1, 1))?)?)
    }
}
