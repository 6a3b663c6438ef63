//! Double-precision reference implementations written from the model
//! definitions, used as finite-difference targets.

use arf_core::field::{Camera, VoxelGrid};
use arf_core::vgg::{VggNetwork, IMAGENET_MEAN, IMAGENET_STD, LAYERS};
use arf_core::Tensor;

/// Dense C×H×W map in f64.
#[derive(Debug, Clone)]
pub struct Map {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Map {
    pub fn from_tensor(t: &Tensor) -> Self {
        let s = t.shape();
        Map {
            c: s[0],
            h: s[1],
            w: s[2],
            data: t.data().iter().map(|&v| v as f64).collect(),
        }
    }

    fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.h + y) * self.w + x]
    }

    fn pixel(&self, p: usize) -> Vec<f64> {
        let plane = self.h * self.w;
        (0..self.c).map(|c| self.data[c * plane + p]).collect()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Density and color parameters in f64.
pub struct GridParams<'a> {
    pub grid: &'a VoxelGrid,
    pub density: &'a [f64],
    pub logits: &'a [f64],
}

impl GridParams<'_> {
    fn lookup(&self, p: [f64; 3]) -> Option<(f64, [f64; 3])> {
        let aabb = self.grid.aabb();
        if (0..3).any(|a| p[a] < aabb.min[a] || p[a] > aabb.max[a]) {
            return None;
        }
        let dims = self.grid.dims();
        let mut base = [0usize; 3];
        let mut frac = [0f64; 3];
        let mut step = [0usize; 3];
        for a in 0..3 {
            let n = dims[a];
            if n == 1 {
                continue;
            }
            let u = ((p[a] - aabb.min[a]) / (aabb.max[a] - aabb.min[a]) * n as f64 - 0.5).clamp(0.0, (n - 1) as f64);
            let i0 = (u.floor() as usize).min(n - 2);
            base[a] = i0;
            frac[a] = u - i0 as f64;
            step[a] = 1;
        }
        let (mut sigma, mut logit) = (0.0, [0.0; 3]);
        for corner in 0..8 {
            let d = [corner & 1, (corner >> 1) & 1, corner >> 2];
            let mut w = 1.0;
            for a in 0..3 {
                w *= if d[a] == 1 { frac[a] } else { 1.0 - frac[a] };
            }
            let idx = self.grid.index(base[0] + d[0] * step[0], base[1] + d[1] * step[1], base[2] + d[2] * step[2]);
            sigma += w * self.density[idx];
            for c in 0..3 {
                logit[c] += w * self.logits[3 * idx + c];
            }
        }
        Some((sigma, logit))
    }

    /// Planar 3×H×W render with midpoint samples and a truncated last
    /// interval.
    pub fn render(&self, cam: &Camera, step: f32, bg: [f64; 3]) -> Map {
        let (w, h) = (cam.width, cam.height);
        let mut data = vec![0.0; 3 * w * h];
        for y in 0..h {
            for x in 0..w {
                let ray = cam.ray(x, y, self.grid.aabb());
                let mut color = [0.0; 3];
                let mut trans = 1.0;
                if let Some((t0, t1)) = ray.hit {
                    let length = t1 - t0;
                    let count = if length > 0.0 { (length / step).ceil() as usize } else { 0 };
                    let (t0, length, step) = (t0 as f64, length as f64, step as f64);
                    for k in 0..count {
                        let start = k as f64 * step;
                        let delta = if k + 1 == count { length - start } else { step };
                        let t = t0 + start + 0.5 * delta;
                        let p = [0, 1, 2].map(|a| ray.origin[a] as f64 + t * ray.dir[a] as f64);
                        let Some((sigma, logit)) = self.lookup(p) else { continue };
                        if sigma <= 0.0 {
                            continue;
                        }
                        let alpha = 1.0 - (-sigma * delta).exp();
                        for c in 0..3 {
                            color[c] += trans * alpha * sigmoid(logit[c]);
                        }
                        trans *= 1.0 - alpha;
                    }
                }
                for c in 0..3 {
                    data[(c * h + y) * w + x] = color[c] + trans * bg[c];
                }
            }
        }
        Map { c: 3, h, w, data }
    }
}

fn conv_relu(x: &Map, weight: &Tensor, bias: &Tensor) -> Map {
    let o = weight.shape()[0];
    let wt: Vec<f64> = weight.data().iter().map(|&v| v as f64).collect();
    let mut out = vec![0.0; o * x.h * x.w];
    for oc in 0..o {
        for y in 0..x.h {
            for xx in 0..x.w {
                let mut acc = bias.data()[oc] as f64;
                for ic in 0..x.c {
                    for ky in 0..3 {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= x.h as isize {
                            continue;
                        }
                        for kx in 0..3 {
                            let sx = xx as isize + kx as isize - 1;
                            if sx < 0 || sx >= x.w as isize {
                                continue;
                            }
                            acc += wt[((oc * x.c + ic) * 3 + ky) * 3 + kx] * x.at(ic, sy as usize, sx as usize);
                        }
                    }
                }
                out[(oc * x.h + y) * x.w + xx] = acc.max(0.0);
            }
        }
    }
    Map { c: o, h: x.h, w: x.w, data: out }
}

fn maxpool(x: &Map) -> Map {
    let (h, w) = (x.h / 2, x.w / 2);
    let mut out = Vec::with_capacity(x.c * h * w);
    for c in 0..x.c {
        for y in 0..h {
            for xx in 0..w {
                let m = [(0, 0), (0, 1), (1, 0), (1, 1)]
                    .iter()
                    .map(|&(dy, dx)| x.at(c, 2 * y + dy, 2 * xx + dx))
                    .fold(f64::NEG_INFINITY, f64::max);
                out.push(m);
            }
        }
    }
    Map { c: x.c, h, w, data: out }
}

/// Normalized image through the trunk; concatenated post-ReLU maps of
/// `block`.
pub fn vgg_block(net: &VggNetwork, image: &Map, block: usize) -> Map {
    let mut x = image.clone();
    let plane = x.h * x.w;
    for c in 0..3 {
        for v in &mut x.data[c * plane..(c + 1) * plane] {
            *v = (*v - IMAGENET_MEAN[c] as f64) / IMAGENET_STD[c] as f64;
        }
    }
    let mut current = 1;
    let mut outputs: Vec<Map> = Vec::new();
    for (layer, &(_, _, _, b)) in net.layers().iter().zip(&LAYERS) {
        if b > block {
            break;
        }
        if b != current {
            x = maxpool(&x);
            outputs.clear();
            current = b;
        }
        x = conv_relu(&x, &layer.weight, &layer.bias);
        outputs.push(x.clone());
    }
    let c = outputs.iter().map(|m| m.c).sum();
    let data = outputs.iter().flat_map(|m| m.data.iter().copied()).collect();
    Map { c, h: x.h, w: x.w, data }
}

/// Mean over render pixels of the smallest cosine distance to a style pixel.
pub fn nnfm(render: &Map, style: &Map) -> f64 {
    let pr = render.h * render.w;
    let ps = style.h * style.w;
    let styles: Vec<(Vec<f64>, f64)> = (0..ps)
        .map(|j| {
            let s = style.pixel(j);
            let n = s.iter().map(|v| v * v).sum();
            (s, n)
        })
        .collect();
    let mut total = 0.0;
    for i in 0..pr {
        let r = render.pixel(i);
        let nr: f64 = r.iter().map(|v| v * v).sum();
        let best = styles
            .iter()
            .map(|(s, ns)| {
                if nr * ns == 0.0 {
                    1.0
                } else {
                    1.0 - r.iter().zip(s).map(|(a, b)| a * b).sum::<f64>() / (nr * ns + 1e-8).sqrt()
                }
            })
            .fold(f64::INFINITY, f64::min);
        total += best;
    }
    total / pr as f64
}

pub fn mse(a: &Map, b: &Map) -> f64 {
    a.data.iter().zip(&b.data).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.data.len() as f64
}
