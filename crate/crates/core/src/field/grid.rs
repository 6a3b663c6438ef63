use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"ARFG";
const VERSION: u32 = 1;

pub fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f32) -> f32 {
    (p / (1.0 - p)).ln()
}

/// Axis-aligned bounding box in world space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Result<Self> {
        if (0..3).any(|a| !(max[a] > min[a]) || !min[a].is_finite() || !max[a].is_finite()) {
            return Err(Error::invalid(format!("degenerate AABB {min:?}..{max:?}")));
        }
        Ok(Aabb { min, max })
    }

    pub fn cube(half: f64) -> Self {
        Aabb {
            min: [-half; 3],
            max: [half; 3],
        }
    }

    pub fn extent(&self) -> [f64; 3] {
        [0, 1, 2].map(|a| self.max[a] - self.min[a])
    }

    pub fn contains(&self, p: [f32; 3]) -> bool {
        (0..3).all(|a| p[a] as f64 >= self.min[a] && p[a] as f64 <= self.max[a])
    }
}

/// Trilinear lookup: eight voxel indices and their weights.
#[derive(Debug, Clone, Copy)]
pub struct Corners {
    pub index: [usize; 8],
    pub weight: [f32; 8],
}

/// Dense voxel radiance field with non-negative density and diffuse color
/// stored as logits (rendered color is `sigmoid(logit)`).
///
/// Voxel `(x, y, z)` lives at flat index `(z·ny + y)·nx + x`; its center is
/// at `min + (i + ½)·voxel_size` along every axis.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    dims: [usize; 3],
    aabb: Aabb,
    density: Vec<f32>,
    color_logits: Vec<f32>,
    density_frozen: bool,
}

impl VoxelGrid {
    /// Uniform grid with the given density and color.
    pub fn new(dims: [usize; 3], aabb: Aabb, density: f32, rgb: [f32; 3]) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::invalid(format!("grid dims {dims:?} must be positive")));
        }
        if !(density >= 0.0) {
            return Err(Error::invalid(format!("density {density} must be non-negative")));
        }
        Aabb::new(aabb.min, aabb.max)?;
        let n = dims.iter().product::<usize>();
        let logits = rgb.map(|c| logit(c.clamp(1e-4, 1.0 - 1e-4)));
        Ok(VoxelGrid {
            dims,
            aabb,
            density: vec![density; n],
            color_logits: (0..n).flat_map(|_| logits).collect(),
            density_frozen: false,
        })
    }

    pub fn from_parts(
        dims: [usize; 3],
        aabb: Aabb,
        density: Vec<f32>,
        color_logits: Vec<f32>,
        density_frozen: bool,
    ) -> Result<Self> {
        let n = dims.iter().product::<usize>();
        if n == 0 || density.len() != n || color_logits.len() != 3 * n {
            return Err(Error::invalid(format!(
                "grid {dims:?} needs {n} densities and {} logits, got {} and {}",
                3 * n,
                density.len(),
                color_logits.len()
            )));
        }
        if density.iter().any(|&d| !(d >= 0.0)) {
            return Err(Error::invalid("densities must be non-negative"));
        }
        Aabb::new(aabb.min, aabb.max)?;
        Ok(VoxelGrid {
            dims,
            aabb,
            density,
            color_logits,
            density_frozen,
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn aabb(&self) -> &Aabb {
        &self.aabb
    }

    pub fn voxel_count(&self) -> usize {
        self.density.len()
    }

    pub fn density(&self) -> &[f32] {
        &self.density
    }

    pub fn color_logits(&self) -> &[f32] {
        &self.color_logits
    }

    pub fn color_logits_mut(&mut self) -> &mut [f32] {
        &mut self.color_logits
    }

    /// Mutable density, or an error while the density is frozen.
    pub fn density_mut(&mut self) -> Result<&mut [f32]> {
        if self.density_frozen {
            return Err(Error::InvalidState("density is frozen".into()));
        }
        Ok(&mut self.density)
    }

    pub fn is_density_frozen(&self) -> bool {
        self.density_frozen
    }

    pub fn freeze_density(&mut self) {
        self.density_frozen = true;
    }

    pub fn unfreeze_density(&mut self) {
        self.density_frozen = false;
    }

    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.dims[1] + y) * self.dims[0] + x
    }

    pub fn voxel_size(&self) -> [f64; 3] {
        let e = self.aabb.extent();
        [0, 1, 2].map(|a| e[a] / self.dims[a] as f64)
    }

    pub fn voxel_center(&self, x: usize, y: usize, z: usize) -> [f32; 3] {
        let vs = self.voxel_size();
        let i = [x, y, z];
        [0, 1, 2].map(|a| (self.aabb.min[a] + (i[a] as f64 + 0.5) * vs[a]) as f32)
    }

    /// Default marching step: a quarter of the voxel diagonal.
    pub fn default_step(&self) -> f32 {
        let vs = self.voxel_size();
        ((vs[0] * vs[0] + vs[1] * vs[1] + vs[2] * vs[2]).sqrt() / 4.0) as f32
    }

    pub fn set_voxel(&mut self, index: usize, density: f32, rgb: [f32; 3]) -> Result<()> {
        if !(density >= 0.0) {
            return Err(Error::invalid(format!("density {density} must be non-negative")));
        }
        if self.density_frozen && self.density[index] != density {
            return Err(Error::InvalidState("density is frozen".into()));
        }
        self.density[index] = density;
        for c in 0..3 {
            self.color_logits[3 * index + c] = logit(rgb[c].clamp(1e-4, 1.0 - 1e-4));
        }
        Ok(())
    }

    pub fn voxel_color(&self, index: usize) -> [f32; 3] {
        [0, 1, 2].map(|c| sigmoid(self.color_logits[3 * index + c]))
    }

    /// Trilinear corners of a world-space point; `None` outside the AABB.
    /// Lattice coordinates are clamped to the voxel-center lattice.
    pub fn corners(&self, p: [f32; 3]) -> Option<Corners> {
        if !self.aabb.contains(p) {
            return None;
        }
        let mut base = [0usize; 3];
        let mut step = [0usize; 3];
        let mut frac = [0f32; 3];
        for a in 0..3 {
            let n = self.dims[a];
            let extent = (self.aabb.max[a] - self.aabb.min[a]) as f32;
            let u = (p[a] - self.aabb.min[a] as f32) / extent * n as f32 - 0.5;
            if n == 1 {
                continue;
            }
            let u = u.clamp(0.0, (n - 1) as f32);
            let i0 = (u.floor() as usize).min(n - 2);
            base[a] = i0;
            step[a] = 1;
            frac[a] = u - i0 as f32;
        }
        let mut index = [0usize; 8];
        let mut weight = [0f32; 8];
        for c in 0..8 {
            let (dx, dy, dz) = (c & 1, (c >> 1) & 1, c >> 2);
            let pick = |a: usize, d: usize| if d == 1 { frac[a] } else { 1.0 - frac[a] };
            index[c] = self.index(
                base[0] + dx * step[0],
                base[1] + dy * step[1],
                base[2] + dz * step[2],
            );
            weight[c] = pick(0, dx) * pick(1, dy) * pick(2, dz);
        }
        Some(Corners { index, weight })
    }

    /// Interpolated density and color logits at given corners.
    pub fn interpolate(&self, corners: &Corners) -> (f32, [f32; 3]) {
        let mut sigma = 0.0;
        let mut logits = [0.0f32; 3];
        for (&i, &w) in corners.index.iter().zip(&corners.weight) {
            sigma += w * self.density[i];
            for c in 0..3 {
                logits[c] += w * self.color_logits[3 * i + c];
            }
        }
        (sigma, logits)
    }

    /// Density and color at a world-space point (σ = 0 outside the AABB).
    pub fn sample(&self, p: [f32; 3]) -> (f32, [f32; 3]) {
        match self.corners(p) {
            Some(c) => {
                let (sigma, logits) = self.interpolate(&c);
                (sigma, logits.map(sigmoid))
            }
            None => (0.0, [0.5; 3]),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        w.write_all(&self.to_bytes())
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut bytes = Vec::new();
        BufReader::new(file)
            .read_to_end(&mut bytes)
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Checkpoint encoding: magic, version, dims, AABB, density, logits, frozen flag.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 4 + 12 + 48 + 16 * self.density.len() + 1);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for d in self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in self.aabb.min.iter().chain(&self.aabb.max) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in self.density.iter().chain(&self.color_logits) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.push(self.density_frozen as u8);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |message: String| Error::Format {
            kind: "grid checkpoint",
            message,
        };
        let mut cursor = bytes;
        let mut take = |n: usize| -> Result<&[u8]> {
            if cursor.len() < n {
                return Err(bad("truncated".into()));
            }
            let (head, tail) = cursor.split_at(n);
            cursor = tail;
            Ok(head)
        };
        if take(4)? != MAGIC {
            return Err(bad("bad magic".into()));
        }
        let u32_at = |b: &[u8]| u32::from_le_bytes(b.try_into().expect("4 bytes"));
        let version = u32_at(take(4)?);
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let mut dims = [0usize; 3];
        for d in &mut dims {
            *d = u32_at(take(4)?) as usize;
        }
        let mut corners = [0f64; 6];
        for v in &mut corners {
            *v = f64::from_le_bytes(take(8)?.try_into().expect("8 bytes"));
        }
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n > 0 && n <= bytes.len())
            .ok_or_else(|| bad(format!("implausible dims {dims:?}")))?;
        let floats = |b: &[u8]| -> Vec<f32> {
            b.chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect()
        };
        let density = floats(take(4 * n)?);
        let logits = floats(take(12 * n)?);
        let frozen = match take(1)?[0] {
            0 => false,
            1 => true,
            other => return Err(bad(format!("frozen flag {other}"))),
        };
        if !cursor.is_empty() {
            return Err(bad(format!("{} trailing bytes", cursor.len())));
        }
        let aabb = Aabb::new(
            [corners[0], corners[1], corners[2]],
            [corners[3], corners[4], corners[5]],
        )?;
        VoxelGrid::from_parts(dims, aabb, density, logits, frozen)
    }
}
