//! Forward and backward kernels for the fixed-shape CNN ops.
//!
//! Convolutions go through im2col and a single-precision GEMM. Every kernel
//! is sequential, so results are bitwise reproducible.

use crate::gemm::gemm;

/// 3×3 kernel, stride 1, zero padding 1.
pub(crate) const KSIZE: usize = 3;
const TAPS: usize = KSIZE * KSIZE;

/// Unfolds a C×H×W input into a (C·9)×(H·W) patch matrix.
fn im2col(input: &[f32], channels: usize, height: usize, width: usize) -> Vec<f32> {
    let plane = height * width;
    let mut cols = vec![0.0; channels * TAPS * plane];
    for c in 0..channels {
        let src = &input[c * plane..(c + 1) * plane];
        for dy in 0..KSIZE {
            for dx in 0..KSIZE {
                let row = (c * TAPS + dy * KSIZE + dx) * plane;
                let dst = &mut cols[row..row + plane];
                for y in 0..height {
                    let sy = y as isize + dy as isize - 1;
                    if sy < 0 || sy >= height as isize {
                        continue;
                    }
                    let sy = sy as usize;
                    let (x0, x1) = match dx {
                        0 => (1, width),
                        1 => (0, width),
                        _ => (0, width.saturating_sub(1)),
                    };
                    for x in x0..x1 {
                        dst[y * width + x] = src[sy * width + x + dx - 1];
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters patch-matrix gradients back onto the input.
fn col2im(cols: &[f32], channels: usize, height: usize, width: usize, out: &mut [f32]) {
    let plane = height * width;
    for c in 0..channels {
        let dst = &mut out[c * plane..(c + 1) * plane];
        for dy in 0..KSIZE {
            for dx in 0..KSIZE {
                let row = (c * TAPS + dy * KSIZE + dx) * plane;
                let src = &cols[row..row + plane];
                for y in 0..height {
                    let sy = y as isize + dy as isize - 1;
                    if sy < 0 || sy >= height as isize {
                        continue;
                    }
                    let sy = sy as usize;
                    let (x0, x1) = match dx {
                        0 => (1, width),
                        1 => (0, width),
                        _ => (0, width.saturating_sub(1)),
                    };
                    for x in x0..x1 {
                        dst[sy * width + x + dx - 1] += src[y * width + x];
                    }
                }
            }
        }
    }
}

pub(crate) struct ConvDims {
    pub in_channels: usize,
    pub out_channels: usize,
    pub height: usize,
    pub width: usize,
}

pub(crate) fn conv2d_forward(
    dims: &ConvDims,
    input: &[f32],
    weight: &[f32],
    bias: &[f32],
) -> Vec<f32> {
    let plane = dims.height * dims.width;
    let k = dims.in_channels * TAPS;
    let cols = im2col(input, dims.in_channels, dims.height, dims.width);
    let mut out = vec![0.0; dims.out_channels * plane];
    for (o, row) in out.chunks_exact_mut(plane).enumerate() {
        row.fill(bias[o]);
    }
    gemm(
        dims.out_channels,
        k,
        plane,
        weight,
        false,
        &cols,
        false,
        &mut out,
        true,
    );
    out
}

/// Accumulates the requested gradients of a convolution.
pub(crate) fn conv2d_backward(
    dims: &ConvDims,
    input: &[f32],
    weight: &[f32],
    out_grad: &[f32],
    input_grad: Option<&mut [f32]>,
    weight_grad: Option<&mut [f32]>,
    bias_grad: Option<&mut [f32]>,
) {
    let plane = dims.height * dims.width;
    let k = dims.in_channels * TAPS;
    if let Some(dinput) = input_grad {
        let mut dcols = vec![0.0; k * plane];
        gemm(
            k,
            dims.out_channels,
            plane,
            weight,
            true,
            out_grad,
            false,
            &mut dcols,
            false,
        );
        col2im(&dcols, dims.in_channels, dims.height, dims.width, dinput);
    }
    if let Some(dweight) = weight_grad {
        let cols = im2col(input, dims.in_channels, dims.height, dims.width);
        gemm(
            dims.out_channels,
            plane,
            k,
            out_grad,
            false,
            &cols,
            true,
            dweight,
            true,
        );
    }
    if let Some(dbias) = bias_grad {
        for (o, row) in out_grad.chunks_exact(plane).enumerate() {
            dbias[o] += row.iter().sum::<f32>();
        }
    }
}

/// 2×2 stride-2 max pooling. Returns the pooled values and, per output, the
/// flat input index of the first maximum in row-major window order.
pub(crate) fn maxpool2x2_forward(
    input: &[f32],
    channels: usize,
    height: usize,
    width: usize,
) -> (Vec<f32>, Vec<u32>) {
    let (oh, ow) = (height / 2, width / 2);
    let mut out = Vec::with_capacity(channels * oh * ow);
    let mut argmax = Vec::with_capacity(channels * oh * ow);
    for c in 0..channels {
        let base = c * height * width;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + 2 * oy * width + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * width + 2 * ox + dx;
                    if input[idx] > input[best] {
                        best = idx;
                    }
                }
                out.push(input[best]);
                argmax.push(best as u32);
            }
        }
    }
    (out, argmax)
}
