use serde::{Deserialize, Serialize};

use super::grid::Aabb;
use crate::error::{Error, Result};

pub type Vec3 = [f32; 3];

pub(crate) fn dot(a: Vec3, b: Vec3) -> f32 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn normalize(a: Vec3) -> Vec3 {
    let n = dot(a, a).sqrt();
    a.map(|v| v / n)
}

/// Pinhole camera. Camera space is x right, y down, z forward;
/// `cam_to_world` is a row-major 3×4 rigid transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub width: usize,
    pub height: usize,
    pub fx: f32,
    pub fy: f32,
    pub cx: f32,
    pub cy: f32,
    pub cam_to_world: [f32; 12],
}

impl Camera {
    pub fn new(
        width: usize,
        height: usize,
        fx: f32,
        fy: f32,
        cx: f32,
        cy: f32,
        cam_to_world: [f32; 12],
    ) -> Result<Self> {
        let cam = Camera {
            width,
            height,
            fx,
            fy,
            cx,
            cy,
            cam_to_world,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("camera resolution must be positive"));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::invalid(format!(
                "focal lengths must be positive, got {} {}",
                self.fx, self.fy
            )));
        }
        if self.cam_to_world.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("camera transform is not finite"));
        }
        let cols = [0, 1, 2].map(|j| self.axis(j));
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                let got = dot(cols[i], cols[j]);
                if (got - want).abs() > 1e-5 {
                    return Err(Error::invalid(format!(
                        "camera rotation is not orthonormal (RᵀR[{i}][{j}] = {got})"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Column `j` of the rotation: camera axis `j` in world space.
    pub fn axis(&self, j: usize) -> Vec3 {
        let m = &self.cam_to_world;
        [m[j], m[4 + j], m[8 + j]]
    }

    pub fn position(&self) -> Vec3 {
        let m = &self.cam_to_world;
        [m[3], m[7], m[11]]
    }

    pub fn forward(&self) -> Vec3 {
        self.axis(2)
    }

    /// Camera at `eye` looking at `target`, world up `up`, with a vertical
    /// field of view in radians and the principal point at the image center.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3, width: usize, height: usize, fov_y: f32) -> Result<Self> {
        let z = normalize([0, 1, 2].map(|a| target[a] - eye[a]));
        let x = normalize(cross(z, up));
        let y = cross(z, x);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("look_at: up vector parallel to view direction"));
        }
        let f = 0.5 * height as f32 / (0.5 * fov_y).tan();
        Camera::new(
            width,
            height,
            f,
            f,
            0.5 * width as f32,
            0.5 * height as f32,
            [
                x[0], y[0], z[0], eye[0], //
                x[1], y[1], z[1], eye[1], //
                x[2], y[2], z[2], eye[2],
            ],
        )
    }

    /// Unit world-space direction through the center of pixel `(x, y)`.
    pub fn pixel_direction(&self, x: usize, y: usize) -> Vec3 {
        let d = [
            (x as f32 + 0.5 - self.cx) / self.fx,
            (y as f32 + 0.5 - self.cy) / self.fy,
            1.0,
        ];
        let m = &self.cam_to_world;
        normalize([
            m[0] * d[0] + m[1] * d[1] + m[2] * d[2],
            m[4] * d[0] + m[5] * d[1] + m[6] * d[2],
            m[8] * d[0] + m[9] * d[1] + m[10] * d[2],
        ])
    }

    pub fn ray(&self, x: usize, y: usize, aabb: &Aabb) -> Ray {
        Ray::new(self.position(), self.pixel_direction(x, y), aabb)
    }

    /// Rays for every pixel, row-major.
    pub fn generate_rays(&self, aabb: &Aabb) -> Vec<Ray> {
        let mut rays = Vec::with_capacity(self.width * self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                rays.push(self.ray(x, y, aabb));
            }
        }
        rays
    }

    /// `count` cameras on a horizontal circle of `radius` around the origin
    /// at height `elevation`, all looking at the origin (world up is +y).
    pub fn orbit(count: usize, radius: f32, elevation: f32, width: usize, height: usize, fov_y: f32, phase: f32) -> Result<Vec<Camera>> {
        (0..count)
            .map(|i| {
                let angle = phase + std::f32::consts::TAU * i as f32 / count as f32;
                let eye = [radius * angle.sin(), elevation, radius * angle.cos()];
                Camera::look_at(eye, [0.0; 3], [0.0, 1.0, 0.0], width, height, fov_y)
            })
            .collect()
    }
}

/// A ray clipped to the grid box; `hit` is `None` when it misses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub dir: Vec3,
    pub hit: Option<(f32, f32)>,
}

impl Ray {
    pub fn new(origin: Vec3, dir: Vec3, aabb: &Aabb) -> Self {
        Ray {
            origin,
            dir,
            hit: intersect_aabb(origin, dir, aabb),
        }
    }

    pub fn at(&self, t: f32) -> Vec3 {
        [0, 1, 2].map(|a| self.origin[a] + t * self.dir[a])
    }
}

/// Slab intersection of the half-line `t ≥ 0` with the box.
fn intersect_aabb(origin: Vec3, dir: Vec3, aabb: &Aabb) -> Option<(f32, f32)> {
    let mut t_near = 0.0f32;
    let mut t_far = f32::INFINITY;
    for a in 0..3 {
        let (lo, hi) = (aabb.min[a] as f32, aabb.max[a] as f32);
        if dir[a] == 0.0 {
            if origin[a] < lo || origin[a] > hi {
                return None;
            }
            continue;
        }
        let inv = 1.0 / dir[a];
        let (t0, t1) = ((lo - origin[a]) * inv, (hi - origin[a]) * inv);
        t_near = t_near.max(t0.min(t1));
        t_far = t_far.min(t0.max(t1));
    }
    (t_near <= t_far).then_some((t_near, t_far))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_cam(w: usize, h: usize, pos: Vec3) -> Camera {
        Camera::new(
            w,
            h,
            10.0,
            10.0,
            w as f32 / 2.0,
            h as f32 / 2.0,
            [1.0, 0.0, 0.0, pos[0], 0.0, 1.0, 0.0, pos[1], 0.0, 0.0, 1.0, pos[2]],
        )
        .unwrap()
    }

    #[test]
    fn principal_pixel_looks_forward() {
        let cam = identity_cam(3, 3, [0.0, 0.0, -5.0]);
        let d = cam.pixel_direction(1, 1);
        assert_eq!(d, [0.0, 0.0, 1.0]);
    }

    #[test]
    fn camera_looking_away_misses() {
        let cam = Camera::look_at([0.0, 0.0, 5.0], [0.0, 0.0, 10.0], [0.0, 1.0, 0.0], 8, 8, 0.8).unwrap();
        let rays = cam.generate_rays(&Aabb::cube(1.0));
        assert!(rays.iter().all(|r| r.hit.is_none()));
    }

    #[test]
    fn rejects_bad_intrinsics_and_rotation() {
        let m = [1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0];
        assert!(Camera::new(4, 4, 0.0, 1.0, 2.0, 2.0, m).is_err());
        let mut skew = m;
        skew[1] = 0.5;
        assert!(Camera::new(4, 4, 1.0, 1.0, 2.0, 2.0, skew).is_err());
    }

    #[test]
    fn look_at_points_at_target_and_is_orthonormal() {
        let cam = Camera::look_at([3.0, 1.0, 2.0], [0.0; 3], [0.0, 1.0, 0.0], 16, 16, 0.7).unwrap();
        let f = cam.forward();
        let want = normalize([-3.0, -1.0, -2.0]);
        for a in 0..3 {
            assert!((f[a] - want[a]).abs() < 1e-6);
        }
        // image-down should point roughly against world up
        assert!(cam.axis(1)[1] < 0.0);
    }

    #[test]
    fn inside_origin_starts_at_zero() {
        let r = Ray::new([0.0; 3], [1.0, 0.0, 0.0], &Aabb::cube(1.0));
        assert_eq!(r.hit, Some((0.0, 1.0)));
    }
}
