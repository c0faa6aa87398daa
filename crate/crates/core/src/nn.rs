//! Small neural-network building blocks on top of the tensor backend.
//!
//! Layers pull their parameters from a [`ParamStore`] at construction time,
//! so optimizer and checkpoint logic never need to know the network layout.
//! All activations run on `(1, C, H, W)` tensors.

use candle_core::Tensor;

use crate::error::{validation, Result};
use crate::param::ParamStore;

/// PyTorch-style fan-in bound for uniform conv initialization.
fn fan_in_bound(fan_in: usize) -> f64 {
    1.0 / (fan_in as f64).sqrt()
}

/// 2-D convolution with optional bias.
#[derive(Debug, Clone)]
pub struct Conv2d {
    weight: Tensor,
    bias: Option<Tensor>,
    stride: usize,
    padding: usize,
    groups: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        groups: usize,
        bias: bool,
    ) -> Result<Self> {
        if in_ch % groups != 0 || out_ch % groups != 0 {
            return Err(validation(format!(
                "conv {name:?}: channels ({in_ch} -> {out_ch}) not divisible by groups {groups}"
            )));
        }
        let per_group = in_ch / groups;
        let bound = fan_in_bound(per_group * kernel * kernel);
        let weight = store.uniform(
            &format!("{name}.weight"),
            &[out_ch, per_group, kernel, kernel],
            -bound,
            bound,
        )?;
        let bias = if bias {
            Some(store.uniform(&format!("{name}.bias"), &[out_ch], -bound, bound)?)
        } else {
            None
        };
        Ok(Conv2d { weight, bias, stride, padding, groups })
    }

    /// Build a conv whose weights/bias are fixed tensors rather than
    /// trainable parameters (used for the frozen upsampling kernel).
    pub fn fixed(weight: Tensor, bias: Option<Tensor>, stride: usize, padding: usize, groups: usize) -> Self {
        Conv2d { weight, bias, stride, padding, groups }
    }

    pub fn forward(&self, xs: &Tensor) -> Result<Tensor> {
        let ys = xs.conv2d(&self.weight, self.padding, self.stride, 1, self.groups)?;
        match &self.bias {
            Some(b) => {
                let b = b.reshape((1, b.elem_count(), 1, 1))?;
                Ok(ys.broadcast_add(&b)?)
            }
            None => Ok(ys),
        }
    }
}

/// 2-D transposed convolution (decoder upsampling).
#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    weight: Tensor,
    bias: Tensor,
    stride: usize,
}

impl ConvTranspose2d {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
    ) -> Result<Self> {
        let bound = fan_in_bound(out_ch * kernel * kernel);
        let weight = store.uniform(
            &format!("{name}.weight"),
            &[in_ch, out_ch, kernel, kernel],
            -bound,
            bound,
        )?;
        let bias = store.uniform(&format!("{name}.bias"), &[out_ch], -bound, bound)?;
        Ok(ConvTranspose2d { weight, bias, stride })
    }

    pub fn forward(&self, xs: &Tensor) -> Result<Tensor> {
        let ys = xs.conv_transpose2d(&self.weight, 0, 0, self.stride, 1)?;
        let b = self.bias.reshape((1, self.bias.elem_count(), 1, 1))?;
        Ok(ys.broadcast_add(&b)?)
    }
}

/// Layer normalization over the channel dimension at each spatial position.
#[derive(Debug, Clone)]
pub struct ChannelLayerNorm {
    gamma: Tensor,
    beta: Tensor,
    eps: f64,
}

impl ChannelLayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Result<Self> {
        let gamma = store.constant(&format!("{name}.gamma"), &[1, channels, 1, 1], 1.0)?;
        let beta = store.zeros(&format!("{name}.beta"), &[1, channels, 1, 1])?;
        Ok(ChannelLayerNorm { gamma, beta, eps: 1e-6 })
    }

    pub fn forward(&self, xs: &Tensor) -> Result<Tensor> {
        let mean = xs.mean_keepdim(1)?;
        let centered = xs.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(1)?;
        let normed = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        Ok(normed.broadcast_mul(&self.gamma)?.broadcast_add(&self.beta)?)
    }
}

/// Standard residual block: conv3x3 -> ReLU -> conv3x3, plus identity.
#[derive(Debug, Clone)]
pub struct ResBlock {
    conv1: Conv2d,
    conv2: Conv2d,
}

impl ResBlock {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Result<Self> {
        let conv1 = Conv2d::new(store, &format!("{name}.conv1"), channels, channels, 3, 1, 1, 1, true)?;
        let conv2 = Conv2d::new(store, &format!("{name}.conv2"), channels, channels, 3, 1, 1, 1, true)?;
        Ok(ResBlock { conv1, conv2 })
    }

    pub fn forward(&self, xs: &Tensor) -> Result<Tensor> {
        let ys = self.conv2.forward(&self.conv1.forward(xs)?.relu()?)?;
        Ok((xs + ys)?)
    }
}

/// Replicate-pad the two trailing (spatial) dimensions by `pad` on each side.
pub fn replicate_pad(xs: &Tensor, pad: usize) -> Result<Tensor> {
    if pad == 0 {
        return Ok(xs.clone());
    }
    let rank = xs.rank();
    let ys = xs.pad_with_same(rank - 2, pad, pad)?;
    Ok(ys.pad_with_same(rank - 1, pad, pad)?)
}

/// Rearrange `(1, C*s*s, H, W)` into `(1, C, H*s, W*s)`.
pub fn pixel_shuffle(xs: &Tensor, scale: usize) -> Result<Tensor> {
    Ok(candle_nn::ops::pixel_shuffle(xs, scale)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};

    fn store() -> ParamStore {
        ParamStore::new(DType::F32, 42)
    }

    #[test]
    fn conv_shapes_and_stride() -> Result<()> {
        let mut s = store();
        let conv = Conv2d::new(&mut s, "c", 3, 8, 3, 1, 1, 1, true)?;
        let x = Tensor::zeros((1, 3, 16, 12), DType::F32, &Device::Cpu)?;
        assert_eq!(conv.forward(&x)?.dims(), &[1, 8, 16, 12]);
        let down = Conv2d::new(&mut s, "d", 8, 8, 3, 2, 1, 1, true)?;
        let y = Tensor::zeros((1, 8, 16, 12), DType::F32, &Device::Cpu)?;
        assert_eq!(down.forward(&y)?.dims(), &[1, 8, 8, 6]);
        Ok(())
    }

    #[test]
    fn transposed_conv_doubles_even_sizes() -> Result<()> {
        let mut s = store();
        let up = ConvTranspose2d::new(&mut s, "u", 8, 4, 2, 2)?;
        let x = Tensor::zeros((1, 8, 8, 6), DType::F32, &Device::Cpu)?;
        assert_eq!(up.forward(&x)?.dims(), &[1, 4, 16, 12]);
        Ok(())
    }

    #[test]
    fn layer_norm_standardizes_each_position() -> Result<()> {
        let mut s = store();
        let ln = ChannelLayerNorm::new(&mut s, "ln", 8)?;
        let x = Tensor::rand(-2.0f32, 3.0, (1, 8, 5, 4), &Device::Cpu)?;
        let y = ln.forward(&x)?;
        let mean = y.mean_keepdim(1)?.abs()?.max_all()?.to_scalar::<f32>()?;
        let var = y.sqr()?.mean_keepdim(1)?;
        let var_dev = (var - 1.0)?.abs()?.max_all()?.to_scalar::<f32>()?;
        assert!(mean < 1e-5, "per-position mean {mean}");
        assert!(var_dev < 1e-3, "per-position variance deviation {var_dev}");
        Ok(())
    }

    #[test]
    fn replicate_pad_extends_edges() -> Result<()> {
        let x = Tensor::from_vec(vec![1.0f32, 2.0, 3.0, 4.0], (1, 1, 2, 2), &Device::Cpu)?;
        let y = replicate_pad(&x, 1)?;
        assert_eq!(y.dims(), &[1, 1, 4, 4]);
        let v = y.squeeze(0)?.to_vec3::<f32>()?;
        let v = &v[0];
        assert_eq!(v[0], vec![1.0, 1.0, 2.0, 2.0]);
        assert_eq!(v[3], vec![3.0, 3.0, 4.0, 4.0]);
        Ok(())
    }

    #[test]
    fn pixel_shuffle_rearranges_channels() -> Result<()> {
        let x = Tensor::from_vec(
            (0..16).map(|v| v as f32).collect::<Vec<_>>(),
            (1, 4, 2, 2),
            &Device::Cpu,
        )?;
        let y = pixel_shuffle(&x, 2)?;
        assert_eq!(y.dims(), &[1, 1, 4, 4]);
        let v = y.squeeze(0)?.to_vec3::<f32>()?;
        // Channel c holds value c*4 + spatial index; shuffled layout puts the
        // four channels into each 2x2 cell.
        assert_eq!(v[0][0], vec![0.0, 4.0, 1.0, 5.0]);
        assert_eq!(v[0][1], vec![8.0, 12.0, 9.0, 13.0]);
        Ok(())
    }
}
