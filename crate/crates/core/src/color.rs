//! Linear color transfer that matches the mean and covariance of a pixel
//! set to those of a style image.
//!
//! `A = U_s Λ_s^½ U_sᵀ · U_c Λ_c^-½ U_cᵀ` whitens the content colors and
//! re-colors them with the style covariance; `b = E[s] − A·E[c]`.

use crate::error::{Error, Result};
use crate::raster::Image;

pub type Mat3 = [[f64; 3]; 3];

/// Eigenvalues of the content covariance are clamped to this before
/// inversion.
pub const EIGEN_CLAMP: f64 = 1e-8;

const JACOBI_TOL: f64 = 1e-14;
const JACOBI_MAX_SWEEPS: usize = 100;
const PAIRWISE_BLOCK: usize = 64;

pub const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

fn matmul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

fn transpose(a: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[j][i];
        }
    }
    out
}

fn matvec(a: &Mat3, v: [f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|i| a[i][0] * v[0] + a[i][1] * v[1] + a[i][2] * v[2])
}

/// Fixed-order pairwise sum of `f(i)` over `0..n`.
fn pairwise_sum<const K: usize>(lo: usize, hi: usize, f: &impl Fn(usize) -> [f64; K]) -> [f64; K] {
    if hi - lo <= PAIRWISE_BLOCK {
        let mut acc = [0.0; K];
        for i in lo..hi {
            let v = f(i);
            for k in 0..K {
                acc[k] += v[k];
            }
        }
        return acc;
    }
    let mid = lo + (hi - lo) / 2;
    let a = pairwise_sum(lo, mid, f);
    let b = pairwise_sum(mid, hi, f);
    std::array::from_fn(|k| a[k] + b[k])
}

/// Mean and population covariance of a pixel set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColorStats {
    pub mean: [f64; 3],
    pub cov: Mat3,
    pub count: usize,
}

impl ColorStats {
    /// Two-pass statistics in double precision.
    pub fn from_pixels(pixels: &[[f64; 3]]) -> Result<Self> {
        let n = pixels.len();
        if n < 2 {
            return Err(Error::invalid(format!(
                "color statistics need at least 2 pixels, got {n}"
            )));
        }
        let sum = pairwise_sum(0, n, &|i| pixels[i]);
        let mean = sum.map(|s| s / n as f64);
        let m = pairwise_sum(0, n, &|i| {
            let d = [0, 1, 2].map(|c| pixels[i][c] - mean[c]);
            [
                d[0] * d[0],
                d[0] * d[1],
                d[0] * d[2],
                d[1] * d[1],
                d[1] * d[2],
                d[2] * d[2],
            ]
        })
        .map(|s| s / n as f64);
        let cov = [[m[0], m[1], m[2]], [m[1], m[3], m[4]], [m[2], m[4], m[5]]];
        Ok(ColorStats {
            mean,
            cov,
            count: n,
        })
    }

    /// Statistics over the pooled pixels of every image.
    pub fn from_images(images: &[Image]) -> Result<Self> {
        ColorStats::from_pixels(&pooled_pixels(images))
    }
}

pub fn color_stats(pixels: &[[f64; 3]]) -> Result<ColorStats> {
    ColorStats::from_pixels(pixels)
}

fn pooled_pixels(images: &[Image]) -> Vec<[f64; 3]> {
    images
        .iter()
        .flat_map(|im| im.pixels().map(|p| p.map(f64::from)))
        .collect()
}

/// `M = U diag(values) Uᵀ` with eigenvalues in descending order and
/// eigenvectors in the matching columns of `vectors`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenDecomposition {
    pub vectors: Mat3,
    pub values: [f64; 3],
}

impl EigenDecomposition {
    /// `U f(Λ) Uᵀ`.
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> Mat3 {
        let u = &self.vectors;
        let mut out = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                out[i][j] = (0..3).map(|k| u[i][k] * f(self.values[k]) * u[j][k]).sum();
            }
        }
        out
    }

    pub fn reconstruct(&self) -> Mat3 {
        self.reconstruct_with(|v| v)
    }
}

/// Symmetric 3×3 eigendecomposition by cyclic Jacobi rotations.
pub fn eig3_sym(m: &Mat3) -> Result<EigenDecomposition> {
    let mut a = *m;
    for i in 0..3 {
        for j in 0..3 {
            if !a[i][j].is_finite() {
                return Err(Error::NonFinite("matrix entry in eig3_sym".into()));
            }
            if (a[i][j] - a[j][i]).abs() > 1e-9 {
                return Err(Error::invalid(format!(
                    "eig3_sym needs a symmetric matrix; |M[{i}][{j}] − M[{j}][{i}]| = {}",
                    (a[i][j] - a[j][i]).abs()
                )));
            }
        }
    }
    for i in 0..3 {
        for j in i + 1..3 {
            let s = 0.5 * (a[i][j] + a[j][i]);
            a[i][j] = s;
            a[j][i] = s;
        }
    }
    let mut v = IDENTITY;
    let off = |a: &Mat3| (2.0 * (a[0][1].powi(2) + a[0][2].powi(2) + a[1][2].powi(2))).sqrt();
    for _ in 0..JACOBI_MAX_SWEEPS {
        if off(&a) <= JACOBI_TOL {
            break;
        }
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            if a[p][q] == 0.0 {
                continue;
            }
            let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            let mut j = IDENTITY;
            j[p][p] = c;
            j[q][q] = c;
            j[p][q] = s;
            j[q][p] = -s;
            a = matmul(&transpose(&j), &matmul(&a, &j));
            a[p][q] = 0.0;
            a[q][p] = 0.0;
            v = matmul(&v, &j);
        }
    }
    let mut order = [0usize, 1, 2];
    order.sort_by(|&x, &y| a[y][y].total_cmp(&a[x][x]));
    let values = order.map(|k| a[k][k]);
    let mut vectors = [[0.0; 3]; 3];
    for (col, &k) in order.iter().enumerate() {
        for row in 0..3 {
            vectors[row][col] = v[row][k];
        }
    }
    Ok(EigenDecomposition { vectors, values })
}

/// Affine color map `c ↦ A·c + b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColorTransform {
    pub a: Mat3,
    pub b: [f64; 3],
}

impl ColorTransform {
    pub fn identity() -> Self {
        ColorTransform {
            a: IDENTITY,
            b: [0.0; 3],
        }
    }

    /// `A·c + b` without clipping.
    pub fn apply_unclipped(&self, c: [f64; 3]) -> [f64; 3] {
        let ac = matvec(&self.a, c);
        [0, 1, 2].map(|i| ac[i] + self.b[i])
    }

    /// `A·c + b` clipped to `[0, 1]`.
    pub fn apply_color(&self, c: [f32; 3]) -> [f32; 3] {
        self.apply_unclipped(c.map(f64::from))
            .map(|v| v.clamp(0.0, 1.0) as f32)
    }

    pub fn apply_image(&self, image: &Image) -> Image {
        let mut out = image.clone();
        for px in out.data_mut().chunks_exact_mut(3) {
            let c = self.apply_color([px[0], px[1], px[2]]);
            px.copy_from_slice(&c);
        }
        out
    }
}

/// Transform taking colors with statistics `content` to statistics `style`.
pub fn solve_color_transform(content: &ColorStats, style: &ColorStats) -> Result<ColorTransform> {
    let ec = eig3_sym(&content.cov)?;
    let es = eig3_sym(&style.cov)?;
    let whiten = ec.reconstruct_with(|l| 1.0 / l.max(EIGEN_CLAMP).sqrt());
    let color = es.reconstruct_with(|l| l.max(0.0).sqrt());
    let a = matmul(&color, &whiten);
    let ac = matvec(&a, content.mean);
    let b = [0, 1, 2].map(|i| style.mean[i] - ac[i]);
    Ok(ColorTransform { a, b })
}

/// Maps every pixel of every image, clipping to `[0, 1]`.
pub fn apply_transform(t: &ColorTransform, images: &[Image]) -> Vec<Image> {
    images.iter().map(|im| t.apply_image(im)).collect()
}

/// One transform solved on the pooled pixels of `images` and applied to
/// all of them.
pub fn match_colors(images: &[Image], style: &Image) -> Result<(Vec<Image>, ColorTransform)> {
    if images.is_empty() {
        return Err(Error::invalid("match_colors needs at least one image"));
    }
    let content = ColorStats::from_images(images)?;
    let style = ColorStats::from_images(std::slice::from_ref(style))?;
    let t = solve_color_transform(&content, &style)?;
    Ok((apply_transform(&t, images), t))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_pixel_stats() {
        let s = color_stats(&[[0.0; 3], [1.0; 3]]).unwrap();
        assert_eq!(s.mean, [0.5; 3]);
        assert!(s.cov.iter().flatten().all(|&v| v == 0.25));
    }

    #[test]
    fn too_few_pixels() {
        assert!(matches!(color_stats(&[[0.1; 3]]), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn diagonal_eigen_sorted() {
        let m = [[3.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 2.0]];
        let e = eig3_sym(&m).unwrap();
        assert_eq!(e.values, [3.0, 2.0, 1.0]);
        assert_eq!(e.vectors, [[1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, 1.0, 0.0]]);
    }

    #[test]
    fn asymmetric_rejected() {
        let mut m = IDENTITY;
        m[0][1] = 1e-6;
        assert!(matches!(eig3_sym(&m), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn whitening_to_diagonal() {
        let c = ColorStats {
            mean: [0.0; 3],
            cov: IDENTITY,
            count: 10,
        };
        let s = ColorStats {
            mean: [0.0; 3],
            cov: [[4.0, 0.0, 0.0], [0.0, 9.0, 0.0], [0.0, 0.0, 16.0]],
            count: 10,
        };
        let t = solve_color_transform(&c, &s).unwrap();
        let want = [[2.0, 0.0, 0.0], [0.0, 3.0, 0.0], [0.0, 0.0, 4.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((t.a[i][j] - want[i][j]).abs() < 1e-12);
            }
            assert!(t.b[i].abs() < 1e-12);
        }
    }

    #[test]
    fn zero_matrix_and_mid_gray() {
        let t = ColorTransform {
            a: [[0.0; 3]; 3],
            b: [0.5; 3],
        };
        let im = Image::filled(2, 2, [0.9, 0.1, 0.3]);
        assert!(t.apply_image(&im).pixels().all(|p| p == [0.5; 3]));
    }
}
