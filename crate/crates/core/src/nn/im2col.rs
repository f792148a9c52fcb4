//! Patch extraction for convolutions, with its adjoint as the backward pass.

use candle_core::{CpuStorage, CustomOp1, Layout, Shape, Tensor, WithDType};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchGeometry {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl PatchGeometry {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.padding - self.kernel) / self.stride + 1
    }

    /// `(B, C, H, W)`.
    pub fn image_shape(&self) -> Shape {
        (self.batch, self.channels, self.height, self.width).into()
    }

    /// `(C·k·k, B·Ho·Wo)`; rows follow the `(C, k, k)` order of a kernel, so
    /// a whole batch convolves with one matrix product.
    pub fn patch_shape(&self) -> Shape {
        (self.channels * self.kernel * self.kernel, self.batch * self.out_height() * self.out_width()).into()
    }

    /// Visit every run of taps that reads inside the image as
    /// `(image offset, patch offset, count)`: patch `p + t` reads image
    /// `i + t·stride`. Runs are emitted in patch-memory order.
    fn for_each_run(&self, mut f: impl FnMut(usize, usize, usize)) {
        let (ho, wo, k, s, p) = (self.out_height(), self.out_width(), self.kernel, self.stride, self.padding);
        // output columns j with 0 ≤ j·s + kx − p < W
        let span = |kx: usize, limit: usize, out: usize| {
            let lo = p.saturating_sub(kx).div_ceil(s);
            let hi = ((limit + p).saturating_sub(kx)).div_ceil(s).min(out);
            (lo, hi.max(lo))
        };
        for c in 0..self.channels {
            for ky in 0..k {
                let (i0, i1) = span(ky, self.height, ho);
                for kx in 0..k {
                    let (j0, j1) = span(kx, self.width, wo);
                    let row = ((c * k + ky) * k + kx) * self.batch;
                    for b in 0..self.batch {
                        let image = (b * self.channels + c) * self.height * self.width;
                        let patch = (row + b) * ho * wo;
                        for i in i0..i1 {
                            let y = i * s + ky - p;
                            f(image + y * self.width + j0 * s + kx - p, patch + i * wo + j0, j1 - j0);
                        }
                    }
                }
            }
        }
    }

    fn gather<T: WithDType>(&self, src: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.patch_shape().elem_count()];
        let s = self.stride;
        self.for_each_run(|img, patch, n| {
            for (t, o) in out[patch..patch + n].iter_mut().enumerate() {
                *o = src[img + t * s];
            }
        });
        out
    }

    fn scatter<T: WithDType>(&self, src: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.image_shape().elem_count()];
        let s = self.stride;
        self.for_each_run(|img, patch, n| {
            for (t, v) in src[patch..patch + n].iter().enumerate() {
                out[img + t * s] += *v;
            }
        });
        out
    }
}

fn contiguous<'a, T>(data: &'a [T], layout: &Layout) -> candle_core::Result<&'a [T]> {
    match layout.contiguous_offsets() {
        Some((start, end)) => Ok(&data[start..end]),
        None => candle_core::bail!("patch ops need contiguous input"),
    }
}

macro_rules! dispatch {
    ($storage:expr, $layout:expr, $f:ident, $geom:expr) => {
        match $storage {
            CpuStorage::F32(d) => CpuStorage::F32($geom.$f(contiguous(d, $layout)?)),
            CpuStorage::F64(d) => CpuStorage::F64($geom.$f(contiguous(d, $layout)?)),
            _ => candle_core::bail!("patch ops support f32 and f64 only"),
        }
    };
}

/// `(B, C, H, W)` image to `(C·k·k, B·Ho·Wo)` patches, zero padded.
struct Im2Col(PatchGeometry);

/// Adjoint of [`Im2Col`]: patches summed back into image positions.
struct Col2Im(PatchGeometry);

impl CustomOp1 for Im2Col {
    fn name(&self) -> &'static str {
        "im2col"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        if layout.shape() != &self.0.image_shape() {
            candle_core::bail!("im2col: expected {:?}, got {:?}", self.0.image_shape(), layout.shape());
        }
        Ok((dispatch!(storage, layout, gather, self.0), self.0.patch_shape()))
    }

    fn bwd(&self, _arg: &Tensor, _res: &Tensor, grad: &Tensor) -> candle_core::Result<Option<Tensor>> {
        Ok(Some(grad.contiguous()?.apply_op1(Col2Im(self.0))?))
    }
}

impl CustomOp1 for Col2Im {
    fn name(&self) -> &'static str {
        "col2im"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        if layout.shape() != &self.0.patch_shape() {
            candle_core::bail!("col2im: expected {:?}, got {:?}", self.0.patch_shape(), layout.shape());
        }
        Ok((dispatch!(storage, layout, scatter, self.0), self.0.image_shape()))
    }

    fn bwd(&self, _arg: &Tensor, _res: &Tensor, grad: &Tensor) -> candle_core::Result<Option<Tensor>> {
        Ok(Some(grad.contiguous()?.apply_op1(Im2Col(self.0))?))
    }
}

/// Differentiable patch extraction of a `(B, C, H, W)` tensor.
pub fn im2col(x: &Tensor, kernel: usize, stride: usize, padding: usize) -> candle_core::Result<Tensor> {
    let (batch, channels, height, width) = x.dims4()?;
    let geom = PatchGeometry {
        batch,
        channels,
        height,
        width,
        kernel,
        stride,
        padding,
    };
    x.contiguous()?.apply_op1(Im2Col(geom))
}
