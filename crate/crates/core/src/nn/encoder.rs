use crate::error::{EtherError, Result};
use candle_core::{ModuleT, Tensor};
use candle_nn::{BatchNorm, BatchNormConfig, Conv2d, Conv2dConfig, VarBuilder};

pub const ENCODER_WIDTHS: [usize; 3] = [32, 32, 64];
pub const INPUT_SIZE: usize = 64;
pub const OUTPUT_SIZE: usize = 8;
pub const FEATURE_DIM: usize = 64;

/// Shared observation encoder: three stride-2 3×3 convolutions without bias,
/// each followed by batch normalisation and ReLU. `(B, 4·C, 64, 64)` maps to
/// `(B, 64, 8, 8)`.
#[derive(Debug, Clone)]
pub struct VisualEncoder {
    in_channels: usize,
    blocks: Vec<(Conv2d, BatchNorm)>,
}

impl VisualEncoder {
    pub fn new(in_channels: usize, vb: VarBuilder) -> Result<Self> {
        let cfg = Conv2dConfig {
            padding: 1,
            stride: 2,
            ..Default::default()
        };
        let mut blocks = Vec::with_capacity(3);
        let mut c_in = in_channels;
        for (i, &c_out) in ENCODER_WIDTHS.iter().enumerate() {
            let conv = candle_nn::conv2d_no_bias(c_in, c_out, 3, cfg, vb.pp(format!("conv{i}")))?;
            let bn = candle_nn::batch_norm(c_out, BatchNormConfig::default(), vb.pp(format!("bn{i}")))?;
            blocks.push((conv, bn));
            c_in = c_out;
        }
        Ok(Self { in_channels, blocks })
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn forward_t(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let dims = x.dims();
        if dims.len() != 4 || dims[1] != self.in_channels || dims[2] != INPUT_SIZE || dims[3] != INPUT_SIZE {
            return Err(EtherError::shape(
                format!("(B, {}, {INPUT_SIZE}, {INPUT_SIZE})", self.in_channels),
                dims,
            ));
        }
        let mut h = x.clone();
        for (conv, bn) in &self.blocks {
            h = conv2d(&h, conv.weight(), 1, 2)?;
            h = bn.forward_t(&h, train)?.relu()?;
        }
        Ok(h)
    }

    /// Global average pooling of the feature maps to a `(B, 64)` vector.
    pub fn pooled(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        global_pool(&self.forward_t(x, train)?)
    }
}

/// Square-kernel convolution as patch extraction plus one matrix product over
/// the whole batch. Output side is `(H + 2·padding − k) / stride + 1`.
pub fn conv2d(x: &Tensor, weight: &Tensor, padding: usize, stride: usize) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    let (c_out, c_w, k, k2) = weight.dims4()?;
    if c_w != c || k != k2 || stride == 0 || h + 2 * padding < k || w + 2 * padding < k {
        return Err(EtherError::shape(format!("(O, {c}, k, k) kernel fitting ({h}, {w})"), weight.dims()));
    }
    let (ho, wo) = ((h + 2 * padding - k) / stride + 1, (w + 2 * padding - k) / stride + 1);
    let cols = super::im2col::im2col(x, k, stride, padding)?;
    let out = weight.reshape((c_out, c * k * k))?.matmul(&cols)?;
    Ok(out.reshape((c_out, b, ho * wo))?.transpose(0, 1)?.contiguous()?.reshape((b, c_out, ho, wo))?)
}

pub fn global_pool(maps: &Tensor) -> Result<Tensor> {
    Ok(maps.mean((2, 3))?)
}
