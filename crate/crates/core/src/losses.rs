//! Feature-space losses: nearest-neighbor feature matching (NNFM), the
//! content term, their weighted sum, and the Gram-matrix baseline.
//!
//! Feature maps are C×H×W tensors; a "pixel" is the C-vector at one
//! spatial location.

use std::sync::Arc;

use crate::autodiff::{CustomOp, GradSink, Graph, Var};
use crate::error::{Error, Result};
use crate::gemm::gemm;
use crate::tensor::Tensor;

/// Guard added under the square root of the cosine distance.
pub const COSINE_EPS: f64 = 1e-8;

/// Working-set bound (in dot products) for one block of the NN search.
const SEARCH_BLOCK: usize = 1 << 22;

/// `1 − v1ᵀv2 / √(|v1|²|v2|² + ε)`; exactly 1 when either vector is zero.
pub fn cosine_distance(v1: &[f32], v2: &[f32]) -> f32 {
    cosine_distance_with_grad(v1, v2).0 as f32
}

/// Cosine distance together with its gradients in both arguments.
/// Zero vectors get distance 1 and zero gradients.
pub fn cosine_distance_with_grad(v1: &[f32], v2: &[f32]) -> (f64, Vec<f32>, Vec<f32>) {
    assert_eq!(v1.len(), v2.len(), "vector length mismatch");
    let (mut d, mut a, mut b) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in v1.iter().zip(v2) {
        d += x as f64 * y as f64;
        a += x as f64 * x as f64;
        b += y as f64 * y as f64;
    }
    if a * b == 0.0 {
        return (1.0, vec![0.0; v1.len()], vec![0.0; v2.len()]);
    }
    let q = a * b + COSINE_EPS;
    let inv = q.sqrt().recip();
    let inv3 = inv * inv * inv;
    let g1 = v1
        .iter()
        .zip(v2)
        .map(|(&x, &y)| (-(y as f64) * inv + d * b * x as f64 * inv3) as f32)
        .collect();
    let g2 = v1
        .iter()
        .zip(v2)
        .map(|(&x, &y)| (-(x as f64) * inv + d * a * y as f64 * inv3) as f32)
        .collect();
    (1.0 - d * inv, g1, g2)
}

fn feature_dims(t: &Tensor, what: &str) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [c, h, w] => Ok((c, h, w)),
        ref s => Err(Error::invalid(format!("{what} must be C×H×W, got {s:?}"))),
    }
}

fn pixel(t: &Tensor, p: usize) -> Vec<f32> {
    let (c, plane) = (t.shape()[0], t.shape()[1] * t.shape()[2]);
    (0..c).map(|ch| t.data()[ch * plane + p]).collect()
}

fn squared_norms(t: &Tensor) -> Vec<f32> {
    let (c, plane) = (t.shape()[0], t.shape()[1] * t.shape()[2]);
    let mut out = vec![0.0f32; plane];
    for ch in 0..c {
        for (o, v) in out.iter_mut().zip(&t.data()[ch * plane..(ch + 1) * plane]) {
            *o += v * v;
        }
    }
    out
}

/// Nearest style pixel of every render pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct NnAssignment {
    /// Flat (row-major) style pixel index per render pixel.
    pub matches: Vec<usize>,
    /// Cosine distance to the matched style pixel.
    pub distances: Vec<f32>,
    pub style_width: usize,
}

impl NnAssignment {
    /// `(row, col)` of the style pixel matched to render pixel `p`.
    pub fn matched(&self, p: usize) -> (usize, usize) {
        let j = self.matches[p];
        (j / self.style_width, j % self.style_width)
    }
}

/// Exact brute-force nearest-neighbor search under cosine distance,
/// evaluated in blocks of style pixels. Ties keep the lowest style index.
pub fn nearest_neighbors(render: &Tensor, style: &Tensor) -> Result<NnAssignment> {
    let (c, _, _) = feature_dims(render, "render features")?;
    let (cs, _, sw) = feature_dims(style, "style features")?;
    if c != cs {
        return Err(Error::invalid(format!(
            "channel mismatch: render {c}, style {cs}"
        )));
    }
    let n = render.shape()[1] * render.shape()[2];
    let m = style.shape()[1] * style.shape()[2];
    let rn = squared_norms(render);
    let sn = squared_norms(style);

    // style pixels as rows: m×c, so a block of rows is contiguous
    let mut style_rows = vec![0.0f32; m * c];
    for ch in 0..c {
        for j in 0..m {
            style_rows[j * c + ch] = style.data()[ch * m + j];
        }
    }

    let mut best = vec![(f32::INFINITY, 0usize); n];
    let block = (SEARCH_BLOCK / n.max(1)).clamp(1, m);
    let mut dots = Vec::new();
    for start in (0..m).step_by(block) {
        let len = block.min(m - start);
        dots.resize(len * n, 0.0);
        // (len×c) · (c×n)
        gemm(
            len,
            c,
            n,
            &style_rows[start * c..(start + len) * c],
            false,
            render.data(),
            false,
            &mut dots,
            false,
        );
        for jj in 0..len {
            let j = start + jj;
            let row = &dots[jj * n..(jj + 1) * n];
            for (i, &d) in row.iter().enumerate() {
                let ab = rn[i] as f64 * sn[j] as f64;
                let dist = if ab == 0.0 {
                    1.0
                } else {
                    (1.0 - d as f64 / (ab + COSINE_EPS).sqrt()) as f32
                };
                if dist < best[i].0 {
                    best[i] = (dist, j);
                }
            }
        }
    }

    let mut matches = Vec::with_capacity(n);
    let mut distances = Vec::with_capacity(n);
    for (i, &(_, j)) in best.iter().enumerate() {
        // re-evaluate the winning pair in double precision
        distances.push(cosine_distance(&pixel(render, i), &pixel(style, j)));
        matches.push(j);
    }
    Ok(NnAssignment {
        matches,
        distances,
        style_width: sw,
    })
}

/// Style features prepared once for repeated NNFM evaluation.
#[derive(Debug, Clone)]
pub struct StyleTarget {
    features: Arc<Tensor>,
}

impl StyleTarget {
    pub fn new(features: Arc<Tensor>) -> Result<Self> {
        feature_dims(&features, "style features")?;
        Ok(StyleTarget { features })
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }
}

struct NnfmOp {
    render: Var,
    style: Arc<Tensor>,
    matches: Vec<usize>,
}

impl CustomOp for NnfmOp {
    fn name(&self) -> &'static str {
        "nnfm_loss"
    }

    fn parents(&self) -> Vec<Var> {
        vec![self.render]
    }

    fn backward(&self, out_grad: &[f32], sink: &mut GradSink<'_>) {
        let render = sink.value(self.render).clone();
        let Some(dr) = sink.grad_mut(self.render) else {
            return;
        };
        let (c, plane) = (render.shape()[0], render.shape()[1] * render.shape()[2]);
        let scale = out_grad[0] / plane as f32;
        for (i, &j) in self.matches.iter().enumerate() {
            let (_, g, _) = cosine_distance_with_grad(&pixel(&render, i), &pixel(&self.style, j));
            for ch in 0..c {
                dr[ch * plane + i] += scale * g[ch];
            }
        }
    }
}

/// Mean over render pixels of the cosine distance to the nearest style
/// pixel. Gradients reach `render` only; the matching is held fixed.
pub fn nnfm_loss(g: &mut Graph, render: Var, style: &StyleTarget) -> Result<(Var, NnAssignment)> {
    let assignment = nearest_neighbors(g.value(render), style.features())?;
    let mean = assignment.distances.iter().map(|&d| d as f64).sum::<f64>()
        / assignment.distances.len() as f64;
    let op = NnfmOp {
        render,
        style: style.features.clone(),
        matches: assignment.matches.clone(),
    };
    let var = g.custom(Box::new(op), Tensor::scalar(mean as f32));
    Ok((var, assignment))
}

/// Mean squared elementwise difference.
pub fn content_loss(g: &mut Graph, render: Var, content: Var) -> Result<Var> {
    let diff = g.sub(render, content)?;
    let sq = g.mul(diff, diff)?;
    Ok(g.mean(sq))
}

/// `nnfm(render, style) + λ · content(render, content)`, returned together
/// with the two unweighted terms.
pub fn total_loss(
    g: &mut Graph,
    render: Var,
    style: &StyleTarget,
    content: Var,
    lambda: f32,
) -> Result<LossTerms> {
    if !(lambda >= 0.0) {
        return Err(Error::invalid(format!("lambda must be ≥ 0, got {lambda}")));
    }
    let (nnfm, _) = nnfm_loss(g, render, style)?;
    let content_term = content_loss(g, render, content)?;
    let weighted = g.scale(content_term, lambda);
    let total = g.add(nnfm, weighted)?;
    Ok(LossTerms {
        total,
        nnfm,
        content: content_term,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub total: Var,
    pub nnfm: Var,
    pub content: Var,
}

/// `F Fᵀ / (H·W)` for a C×H×W map.
pub fn gram_matrix(features: &Tensor) -> Result<Tensor> {
    let (c, h, w) = feature_dims(features, "features")?;
    let p = h * w;
    let mut out = vec![0.0f32; c * c];
    gemm(c, p, c, features.data(), false, features.data(), true, &mut out, false);
    for v in &mut out {
        *v /= p as f32;
    }
    Tensor::new(&[c, c], out)
}

struct GramOp {
    render: Var,
    residual: Vec<f32>,
}

impl CustomOp for GramOp {
    fn name(&self) -> &'static str {
        "gram_loss"
    }

    fn parents(&self) -> Vec<Var> {
        vec![self.render]
    }

    fn backward(&self, out_grad: &[f32], sink: &mut GradSink<'_>) {
        let render = sink.value(self.render).clone();
        let Some(dr) = sink.grad_mut(self.render) else {
            return;
        };
        let c = render.shape()[0];
        let p = render.shape()[1] * render.shape()[2];
        // dL/dG = 2R/C², dL/dF = (dL/dG + dL/dGᵀ) F / P and R is symmetric
        let factor = out_grad[0] * 4.0 / ((c * c) as f32 * p as f32);
        let scaled: Vec<f32> = self.residual.iter().map(|r| r * factor).collect();
        gemm(c, c, p, &scaled, false, render.data(), false, dr, true);
    }
}

/// Mean squared difference between the Gram matrices of `render` and the
/// precomputed `style_gram`.
pub fn gram_loss(g: &mut Graph, render: Var, style_gram: &Tensor) -> Result<Var> {
    let gr = gram_matrix(g.value(render))?;
    if gr.shape() != style_gram.shape() {
        return Err(Error::invalid(format!(
            "channel mismatch: render Gram {:?}, style Gram {:?}",
            gr.shape(),
            style_gram.shape()
        )));
    }
    let residual: Vec<f32> = gr
        .data()
        .iter()
        .zip(style_gram.data())
        .map(|(a, b)| a - b)
        .collect();
    let loss = residual.iter().map(|r| (*r as f64).powi(2)).sum::<f64>() / residual.len() as f64;
    Ok(g.custom(Box::new(GramOp { render, residual }), Tensor::scalar(loss as f32)))
}
