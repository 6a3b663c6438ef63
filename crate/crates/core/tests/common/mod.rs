#![allow(dead_code)]

pub mod oracle;

use arf_core::autodiff::{numeric_grad_at, relative_error};
use arf_core::field::{Aabb, VoxelGrid};
use arf_core::Tensor;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

pub fn random_tensor(shape: &[usize], lo: f32, hi: f32, seed: u64) -> Tensor {
    let mut r = rng(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| r.random_range(lo..hi)).collect()).unwrap()
}

/// Grid with random density in `[0, max_density)` and random colors.
pub fn random_grid(dims: [usize; 3], max_density: f32, seed: u64) -> VoxelGrid {
    let mut r = rng(seed);
    let n: usize = dims.iter().product();
    let density = (0..n).map(|_| r.random_range(0.0..max_density)).collect();
    let logits = (0..3 * n).map(|_| r.random_range(-2.0..2.0)).collect();
    VoxelGrid::from_parts(dims, Aabb::cube(1.0), density, logits, false).unwrap()
}

/// Outcome of comparing an analytic gradient with central differences on
/// a subset of coordinates.
#[derive(Debug)]
pub struct FdReport {
    pub checked: usize,
    pub passed: usize,
    pub worst: f32,
}

impl FdReport {
    pub fn fraction(&self) -> f64 {
        self.passed as f64 / self.checked.max(1) as f64
    }
}

/// Compares `analytic` against central differences of `f` at `coords`.
/// A coordinate passes when its relative error is at most `tol`, with
/// `floor` as the smallest denominator.
pub fn fd_compare(
    f: impl Fn(&Tensor) -> f64,
    x: &Tensor,
    analytic: &Tensor,
    coords: &[usize],
    eps: f32,
    tol: f32,
    floor: f32,
) -> FdReport {
    let numeric = numeric_grad_at(&f, x, eps, coords.iter().copied()).unwrap();
    let mut passed = 0;
    let mut worst = 0.0f32;
    for &i in coords {
        let e = relative_error(analytic.data()[i], numeric.data()[i], floor);
        worst = worst.max(e);
        if e <= tol {
            passed += 1;
        }
    }
    FdReport {
        checked: coords.len(),
        passed,
        worst,
    }
}

/// `count` distinct coordinates below `n`, or all of them when `n ≤ count`.
pub fn sample_coords(n: usize, count: usize, seed: u64) -> Vec<usize> {
    if n <= count {
        return (0..n).collect();
    }
    rand::seq::index::sample(&mut rng(seed), n, count).into_vec()
}

/// Coordinates with the largest `|g|`, which are the informative ones for
/// sparse gradients.
pub fn top_coords(g: &Tensor, count: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..g.numel()).collect();
    idx.sort_by(|&a, &b| g.data()[b].abs().total_cmp(&g.data()[a].abs()));
    idx.truncate(count);
    idx
}
